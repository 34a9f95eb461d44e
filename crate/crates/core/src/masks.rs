//! Directional, distance and padding masks, combined into additive attention
//! logit offsets. Rows index the attending (query) position, columns the
//! attended (key) position.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::tensor::{Result, Tensor, TensorError, MASK_THRESHOLD, NEG_INF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Attend strictly to earlier positions.
    Forward,
    /// Attend strictly to later positions.
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// `n×n` mask with 0 where query `i` may see key `j` and [`NEG_INF`] elsewhere.
/// The diagonal is always masked.
pub fn build_directional(n: usize, direction: Direction) -> Result<Tensor> {
    if n == 0 {
        return Err(TensorError::EmptyDimension { op: "build_directional" });
    }
    let mut data = vec![NEG_INF; n * n];
    for i in 0..n {
        for j in 0..n {
            let open = match direction {
                Direction::Forward => j < i,
                Direction::Backward => j > i,
            };
            if open {
                data[i * n + j] = 0.0;
            }
        }
    }
    Tensor::new(vec![n, n], data)
}

/// `n×n` matrix with entry `-|i - j|`.
pub fn build_distance(n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(TensorError::EmptyDimension { op: "build_distance" });
    }
    let data = (0..n * n)
        .map(|k| -((k / n) as f64 - (k % n) as f64).abs())
        .collect();
    Tensor::new(vec![n, n], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub n: usize,
    pub alpha: f64,
    pub forward: Tensor,
    pub backward: Tensor,
    pub distance: Tensor,
}

impl MaskSet {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(TensorError::Contract(format!("distance alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(Self {
            n,
            alpha,
            forward: build_directional(n, Direction::Forward)?,
            backward: build_directional(n, Direction::Backward)?,
            distance: build_distance(n)?,
        })
    }

    pub fn directional(&self, direction: Direction) -> &Tensor {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// `M_dir + α·M_dis` with every column whose `pad_mask` entry is false
    /// forced to the sentinel. Masked entries are exactly [`NEG_INF`]; they do
    /// not pick up the distance term.
    pub fn combine(&self, direction: Direction, pad_mask: &[bool]) -> Result<Tensor> {
        let n = self.n;
        if pad_mask.len() != n {
            return Err(TensorError::Shape {
                op: "combine",
                lhs: vec![n, n],
                rhs: vec![pad_mask.len()],
            });
        }
        let dir = self.directional(direction).data();
        let dis = self.distance.data();
        let data = (0..n * n)
            .map(|k| {
                if dir[k] <= MASK_THRESHOLD || !pad_mask[k % n] {
                    NEG_INF
                } else {
                    dir[k] + self.alpha * dis[k]
                }
            })
            .collect();
        Tensor::new(vec![n, n], data)
    }
}

/// Mask sets keyed by sentence length, shared across readers.
#[derive(Debug)]
pub struct MaskCache {
    alpha: f64,
    sets: RwLock<HashMap<usize, Arc<MaskSet>>>,
}

impl MaskCache {
    pub fn new(alpha: f64) -> Result<Self> {
        MaskSet::new(1, alpha)?;
        Ok(Self {
            alpha,
            sets: RwLock::new(HashMap::new()),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn get(&self, n: usize) -> Result<Arc<MaskSet>> {
        if let Some(set) = self.sets.read().expect("mask cache poisoned").get(&n) {
            return Ok(Arc::clone(set));
        }
        let set = Arc::new(MaskSet::new(n, self.alpha)?);
        let mut sets = self.sets.write().expect("mask cache poisoned");
        Ok(Arc::clone(sets.entry(n).or_insert(set)))
    }

    pub fn cached_lengths(&self) -> usize {
        self.sets.read().expect("mask cache poisoned").len()
    }
}
