use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{DataError, Vocabulary, PAD};
use crate::tensor::Tensor;

/// Pre-trained word vectors indexed by vocabulary id. Never trained: it is
/// not part of the parameter set the optimizer sees.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
    found: usize,
}

impl EmbeddingTable {
    /// Wraps an `N×d_e` matrix; row [`PAD`] is forced to zero.
    pub fn new(mut matrix: Tensor) -> Result<Self, crate::tensor::TensorError> {
        matrix.dims2("embedding table")?;
        let d = matrix.cols();
        matrix.data_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
        let found = matrix.to_rows().iter().filter(|r| r.iter().any(|v| *v != 0.0)).count();
        Ok(Self { matrix, found })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn frozen(&self) -> bool {
        true
    }

    /// Vocabulary rows that received a vector from the source file.
    pub fn found(&self) -> usize {
        self.found
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// Stacks the rows for `ids` into a `len×d_e` matrix.
    pub fn lookup(&self, ids: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(self.row(id.min(self.vocab_size() - 1)));
        }
        Tensor::new(vec![ids.len(), d], data).expect("lookup shape")
    }

    /// Order-sensitive checksum over every entry.
    pub fn checksum(&self) -> u64 {
        self.matrix
            .data()
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3))
    }
}

/// Reads `token v1 … v_d` lines and keeps vectors for tokens in `vocab`.
/// Vocabulary tokens missing from the file (and UNK, PAD) keep zero rows.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_embeddings(BufReader::new(file), path, vocab)
}

pub fn read_embeddings<R: BufRead>(reader: R, path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable, DataError> {
    let mut dim = None;
    let mut data: Vec<f64> = Vec::new();
    let mut found = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        let d = *dim.get_or_insert_with(|| {
            data = vec![0.0; vocab.len() * values.len()];
            values.len()
        });
        if d == 0 || values.len() != d {
            return Err(DataError::Format {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected {d} vector components, found {}", values.len()),
            });
        }
        let Some(id) = vocab.get(token) else { continue };
        let row = &mut data[id * d..(id + 1) * d];
        for (slot, raw) in row.iter_mut().zip(&values) {
            *slot = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::Format {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("bad vector component {raw:?}"),
            })?;
        }
        found += 1;
    }
    let d = dim.ok_or_else(|| DataError::Format {
        path: path.to_path_buf(),
        line: 0,
        message: "embedding file holds no vectors".into(),
    })?;
    let matrix = Tensor::new(vec![vocab.len(), d], data).expect("embedding shape");
    Ok(EmbeddingTable { matrix, found })
}
