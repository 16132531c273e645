//! Six-way classification of attended positions and per-layer summaries of
//! where attention mass goes.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{AttentionTrace, HeadMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    FirstToken,
    Current,
    Recent5,
    Induction,
    PastInstance,
    Other,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::FirstToken,
        Category::Current,
        Category::Recent5,
        Category::Induction,
        Category::PastInstance,
        Category::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::FirstToken => "FIRST_TOKEN",
            Category::Current => "CURRENT",
            Category::Recent5 => "RECENT5",
            Category::Induction => "INDUCTION",
            Category::PastInstance => "PAST_INSTANCE",
            Category::Other => "OTHER",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mass per category, indexed by [`Category::index`].
pub type CategoryMass = [f64; 6];

/// Category of every key position `j <= i` for query `i`.
///
/// Overlapping memberships resolve as
/// CURRENT > FIRST_TOKEN > INDUCTION > PAST_INSTANCE > RECENT5 > OTHER.
pub fn classify_positions(tokens: &[u32], i: usize) -> Result<Vec<Category>> {
    if i >= tokens.len() {
        return Err(Error::QueryOutOfRange {
            query: i,
            len: tokens.len(),
        });
    }
    let current = tokens[i];
    Ok((0..=i)
        .map(|j| {
            if j == i {
                Category::Current
            } else if j == 0 {
                Category::FirstToken
            } else if tokens[j - 1] == current {
                Category::Induction
            } else if tokens[j] == current {
                Category::PastInstance
            } else if j + 5 >= i {
                Category::Recent5
            } else {
                Category::Other
            }
        })
        .collect())
}

/// Sum `row[j]` into the category of each `j`. `row` may be longer than
/// `classes` (trailing future entries are ignored).
pub fn row_mass(row: &[f32], classes: &[Category]) -> Result<CategoryMass> {
    if row.len() < classes.len() {
        return Err(Error::LengthMismatch {
            expected: classes.len(),
            got: row.len(),
        });
    }
    let sum: f64 = row[..classes.len()].iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(Error::UnnormalizedRow { sum });
    }
    let mut mass = [0.0; 6];
    for (&v, c) in row.iter().zip(classes) {
        mass[c.index()] += v as f64;
    }
    Ok(mass)
}

/// Mean category mass per layer (over heads and query positions) and per head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomySummary {
    /// Number of query positions the means are taken over.
    pub n_tokens: usize,
    pub per_layer: Vec<CategoryMass>,
    /// `per_head[layer][head]`.
    pub per_head: Vec<Vec<CategoryMass>>,
}

impl TaxonomySummary {
    pub fn n_layers(&self) -> usize {
        self.per_layer.len()
    }

    /// Combine summaries from several stimuli, weighting each by its token count.
    pub fn combine(parts: &[TaxonomySummary]) -> Result<TaxonomySummary> {
        let first = parts.first().ok_or(Error::Empty("summary list"))?;
        let shape: Vec<usize> = first.per_head.iter().map(Vec::len).collect();
        let total: usize = parts.iter().map(|p| p.n_tokens).sum();
        let mut out = TaxonomySummary {
            n_tokens: total,
            per_layer: vec![[0.0; 6]; first.n_layers()],
            per_head: shape.iter().map(|&h| vec![[0.0; 6]; h]).collect(),
        };
        for p in parts {
            let p_shape: Vec<usize> = p.per_head.iter().map(Vec::len).collect();
            if p_shape != shape {
                return Err(Error::LengthMismatch {
                    expected: shape.len(),
                    got: p_shape.len(),
                });
            }
            let w = p.n_tokens as f64 / total as f64;
            for (acc, m) in out.per_layer.iter_mut().zip(&p.per_layer) {
                acc.iter_mut().zip(m).for_each(|(a, v)| *a += w * v);
            }
            for (acc_l, m_l) in out.per_head.iter_mut().zip(&p.per_head) {
                for (acc, m) in acc_l.iter_mut().zip(m_l) {
                    acc.iter_mut().zip(m).for_each(|(a, v)| *a += w * v);
                }
            }
        }
        Ok(out)
    }

    /// CSV with columns `layer,head,category,mass`; layer rows leave `head` empty.
    /// Layers and heads are 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W, include_heads: bool) -> Result<()> {
        writeln!(out, "layer,head,category,mass")?;
        for (l, mass) in self.per_layer.iter().enumerate() {
            for c in Category::ALL {
                writeln!(out, "{},,{},{}", l + 1, c, mass[c.index()])?;
            }
            if include_heads {
                for (h, mass) in self.per_head[l].iter().enumerate() {
                    for c in Category::ALL {
                        writeln!(out, "{},{},{},{}", l + 1, h + 1, c, mass[c.index()])?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Average [`row_mass`] over every query position and head of each layer.
pub fn layer_summary(trace: &AttentionTrace, tokens: &[u32]) -> Result<TaxonomySummary> {
    let n = tokens.len();
    if trace.seq_len() != n {
        return Err(Error::LengthMismatch {
            expected: trace.seq_len(),
            got: n,
        });
    }
    if n == 0 {
        return Err(Error::Empty("token sequence"));
    }
    let classes: Vec<Vec<Category>> = (0..n)
        .map(|i| classify_positions(tokens, i))
        .collect::<Result<_>>()?;
    let mut per_layer = Vec::with_capacity(trace.n_layers());
    let mut per_head = Vec::with_capacity(trace.n_layers());
    for l in 0..trace.n_layers() {
        let mut heads = Vec::with_capacity(trace.n_heads());
        for h in 0..trace.n_heads() {
            let m = trace.head(l, h);
            let mut acc = [0.0; 6];
            for (i, cls) in classes.iter().enumerate() {
                let mass = row_mass(m.row(i), cls)?;
                acc.iter_mut().zip(mass).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= n as f64);
            heads.push(acc);
        }
        let mut layer = [0.0; 6];
        for hm in &heads {
            layer.iter_mut().zip(hm).for_each(|(a, v)| *a += v);
        }
        layer.iter_mut().for_each(|a| *a /= trace.n_heads() as f64);
        per_layer.push(layer);
        per_head.push(heads);
    }
    Ok(TaxonomySummary {
        n_tokens: n,
        per_layer,
        per_head,
    })
}

/// Mean attention mass a head puts on the tokens `k*S - 1` positions back
/// (`k = 1, 2, ...`), over queries from the second presentation on.
pub fn induction_score(head: HeadMatrix<'_>, span_len: usize) -> Result<f64> {
    let n = head.size();
    if span_len == 0 {
        return Err(Error::InvalidParameter(
            "span length must be at least 1".into(),
        ));
    }
    if n < 2 * span_len {
        return Err(Error::InvalidParameter(format!(
            "{n} tokens hold fewer than 2 presentations of a {span_len}-token span"
        )));
    }
    let mut total = 0.0;
    for i in span_len..n {
        let mut offset = span_len - 1;
        while offset <= i {
            total += head.get(i, i - offset) as f64;
            offset += span_len;
        }
    }
    Ok(total / (n - span_len) as f64)
}
