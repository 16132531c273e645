use crate::error::{Error, Result};

/// Square `f64` matrix used as an additive pre-softmax bias for one head.
/// Row `i` is the query, column `j` the key; entries with `j > i` are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatrix {
    size: usize,
    data: Vec<f64>,
}

impl BiasMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn from_rows(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::BiasShape(format!(
                "{} entries for a {size}x{size} matrix",
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.size + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-head additive biases for a single layer (`layer` is 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBias {
    pub layer: usize,
    pub heads: Vec<BiasMatrix>,
}

impl AttentionBias {
    pub fn zeros(layer: usize, n_heads: usize, size: usize) -> Self {
        Self {
            layer,
            heads: vec![BiasMatrix::zeros(size); n_heads],
        }
    }

    pub(crate) fn check(&self, n_layers: usize, n_heads: usize, seq_len: usize) -> Result<()> {
        if self.layer == 0 || self.layer > n_layers {
            return Err(Error::BiasLayerOutOfRange {
                layer: self.layer,
                n_layers,
            });
        }
        if self.heads.len() != n_heads {
            return Err(Error::BiasShape(format!(
                "{} head matrices for {n_heads} heads",
                self.heads.len()
            )));
        }
        for (h, m) in self.heads.iter().enumerate() {
            if m.size < seq_len {
                return Err(Error::BiasShape(format!(
                    "head {h} bias is {0}x{0}, sequence has {seq_len} tokens",
                    m.size
                )));
            }
            for i in 0..seq_len {
                if m.row(i)[..=i].iter().any(|v| !v.is_finite()) {
                    return Err(Error::BiasShape(format!(
                        "head {h} bias has a non-finite entry in row {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Attention probabilities captured during a forward pass, laid out as
/// `[layer][head][query][key]` with 0-based layer and head indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    n_layers: usize,
    n_heads: usize,
    seq_len: usize,
    data: Vec<f32>,
}

impl AttentionTrace {
    pub fn zeros(n_layers: usize, n_heads: usize, seq_len: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            seq_len,
            data: vec![0.0; n_layers * n_heads * seq_len * seq_len],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn offset(&self, layer: usize, head: usize) -> usize {
        assert!(layer < self.n_layers && head < self.n_heads);
        (layer * self.n_heads + head) * self.seq_len * self.seq_len
    }

    pub fn head(&self, layer: usize, head: usize) -> HeadMatrix<'_> {
        let start = self.offset(layer, head);
        HeadMatrix {
            size: self.seq_len,
            data: &self.data[start..start + self.seq_len * self.seq_len],
        }
    }

    pub(crate) fn head_mut(&mut self, layer: usize, head: usize) -> &mut [f32] {
        let start = self.offset(layer, head);
        let n = self.seq_len * self.seq_len;
        &mut self.data[start..start + n]
    }

    /// Raw data in `[layer][head][query][key]` order.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Build a trace from raw data, e.g. to analyse attention produced elsewhere.
    pub fn from_raw(
        n_layers: usize,
        n_heads: usize,
        seq_len: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = n_layers * n_heads * seq_len * seq_len;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            n_layers,
            n_heads,
            seq_len,
            data,
        })
    }
}

/// Borrowed `T x T` attention matrix of one head.
#[derive(Debug, Clone, Copy)]
pub struct HeadMatrix<'a> {
    size: usize,
    data: &'a [f32],
}

impl<'a> HeadMatrix<'a> {
    pub fn new(size: usize, data: &'a [f32]) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::LengthMismatch {
                expected: size * size,
                got: data.len(),
            });
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.size + j]
    }

    /// Full row `i`, including the zero entries for `j > i`.
    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.size..(i + 1) * self.size]
    }
}
