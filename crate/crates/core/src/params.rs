//! Named parameter storage and tape binding.

use std::ops::Index;

use rand::Rng;

use crate::config::{ConfigError, ProjectionNorm};
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable tensors in registration order, each under a canonical name
/// such as `enc.fw.mha.WQ`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, ConfigError> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(ConfigError(format!("parameter {name} registered twice")));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf; `trainable` decides whether the
    /// leaves collect gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars that line up one-to-one with a parameter set.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Glorot/Xavier uniform initialization for a `fan_in×fan_out` matrix.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn register(set: &mut ParamSet, prefix: &str, dim: usize) -> Result<Self, ConfigError> {
        Ok(Self {
            gain: set.register(format!("{prefix}.gain"), Tensor::full(&[dim], 1.0))?,
            bias: set.register(format!("{prefix}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias], eps)
    }
}

/// A linear map `x·W (+ b)` optionally wrapped by layer normalization,
/// placed according to a [`ProjectionNorm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub norm: Option<LayerNormParams>,
    pub placement: ProjectionNorm,
}

impl Projection {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng>(
        set: &mut ParamSet,
        rng: &mut R,
        prefix: &str,
        weight_name: &str,
        bias_name: Option<&str>,
        fan_in: usize,
        fan_out: usize,
        placement: ProjectionNorm,
        norm_name: &str,
    ) -> Result<Self, ConfigError> {
        let weight = set.register(format!("{prefix}.{weight_name}"), glorot(rng, fan_in, fan_out))?;
        let bias = bias_name
            .map(|b| set.register(format!("{prefix}.{b}"), Tensor::zeros(&[fan_out])))
            .transpose()?;
        let norm = match placement {
            ProjectionNorm::Off => None,
            ProjectionNorm::Output => Some(LayerNormParams::register(set, &format!("{prefix}.{norm_name}"), fan_out)?),
            ProjectionNorm::Input => Some(LayerNormParams::register(set, &format!("{prefix}.{norm_name}"), fan_in)?),
        };
        Ok(Self {
            weight,
            bias,
            norm,
            placement,
        })
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var, eps: f64) -> Result<Var> {
        let input = match (self.placement, &self.norm) {
            (ProjectionNorm::Input, Some(ln)) => ln.apply(tape, p, x, eps)?,
            _ => x,
        };
        let mut y = tape.matmul(input, p[self.weight])?;
        if let Some(b) = self.bias {
            y = tape.add(y, p[b])?;
        }
        match (self.placement, &self.norm) {
            (ProjectionNorm::Output, Some(ln)) => ln.apply(tape, p, y, eps),
            _ => Ok(y),
        }
    }
}
