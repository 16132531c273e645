//! Repeated-span stimuli, frequency-weighted prompt sampling, and the
//! behavioral target files that pair prompt positions with human accuracy.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Vocab, UNK_ID};

/// An `S`-token span presented `R` times back to back (`T = S * R`).
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub id: String,
    span: Vec<u32>,
    repeats: usize,
    tokens: Vec<u32>,
}

impl Stimulus {
    /// Concatenate `repeats` copies of `span` with no separator tokens.
    pub fn build(
        id: impl Into<String>,
        span: Vec<u32>,
        repeats: usize,
        max_context: usize,
    ) -> Result<Self> {
        if span.is_empty() {
            return Err(Error::Empty("stimulus span"));
        }
        if repeats == 0 {
            return Err(Error::InvalidParameter("repeats must be at least 1".into()));
        }
        let len = span.len() * repeats;
        if len > max_context {
            return Err(Error::ContextOverflow {
                len,
                max: max_context,
            });
        }
        let tokens = span.iter().copied().cycle().take(len).collect();
        Ok(Self {
            id: id.into(),
            span,
            repeats,
            tokens,
        })
    }

    pub fn span(&self) -> &[u32] {
        &self.span
    }

    pub fn span_len(&self) -> usize {
        self.span.len()
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Start positions of presentations 2..=R.
    pub fn boundaries(&self) -> Vec<usize> {
        (1..self.repeats).map(|r| r * self.span.len()).collect()
    }

    /// 1-based presentation containing `position`.
    pub fn presentation_of(&self, position: usize) -> usize {
        position / self.span.len() + 1
    }
}

/// Per-position sampling weights: the average of `(1 - p)` and `1 / p`, each
/// normalized over the span first. `p` is the unigram probability.
pub fn prompt_weights(span: &[u32], vocab: &Vocab) -> Result<Vec<f64>> {
    if span.is_empty() {
        return Err(Error::Empty("stimulus span"));
    }
    let mut probs = Vec::with_capacity(span.len());
    for (offset, &id) in span.iter().enumerate() {
        if id == UNK_ID || vocab.count(id) == 0 {
            return Err(Error::UnknownInSpan { offset });
        }
        probs.push(vocab.unigram_probability(id));
    }
    weights_from_probabilities(&probs)
}

pub(crate) fn weights_from_probabilities(probs: &[f64]) -> Result<Vec<f64>> {
    let complement: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
    let reciprocal: Vec<f64> = probs.iter().map(|p| 1.0 / p).collect();
    let c_total: f64 = complement.iter().sum();
    let r_total: f64 = reciprocal.iter().sum();
    if !(c_total > 0.0) || !r_total.is_finite() {
        return Err(Error::DegenerateWeights(
            "every span word has unigram probability 1".into(),
        ));
    }
    Ok(complement
        .iter()
        .zip(&reciprocal)
        .map(|(c, r)| (c / c_total + r / r_total) / 2.0)
        .collect())
}

/// Draw `count` distinct items from `pool` by sequential weighted draws,
/// renormalizing after each removal. Falls back to uniform draws once the
/// remaining weight is zero.
fn draw_without_replacement(
    pool: &mut Vec<(usize, f64)>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = pool.len() - 1;
            for (k, (_, w)) in pool.iter().enumerate() {
                acc += w;
                if target < acc {
                    chosen = k;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..pool.len())
        };
        picked.push(pool.remove(idx).0);
    }
    picked
}

/// Choose prompt positions for every presentation of `stimulus`.
///
/// `floor(shared_fraction * per_presentation)` span offsets are prompted in
/// every presentation; the rest are drawn separately per presentation from
/// offsets not used anywhere else. Offset 0 is never prompted. Returns sorted
/// global positions.
pub fn sample_prompts(
    stimulus: &Stimulus,
    weights: &[f64],
    per_presentation: usize,
    shared_fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let s = stimulus.span_len();
    if weights.len() != s {
        return Err(Error::LengthMismatch {
            expected: s,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter(
            "weights must be finite and non-negative".into(),
        ));
    }
    if !(0.0..=1.0).contains(&shared_fraction) {
        return Err(Error::InvalidParameter(format!(
            "shared fraction {shared_fraction} outside [0, 1]"
        )));
    }
    let shared = (shared_fraction * per_presentation as f64).floor() as usize;
    let unique = per_presentation - shared;
    let needed = shared + unique * stimulus.repeats();
    let available = s - 1;
    if per_presentation > available || needed > available {
        return Err(Error::InsufficientPositions { needed, available });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<(usize, f64)> = (1..s).map(|o| (o, weights[o])).collect();
    let shared_offsets = draw_without_replacement(&mut pool, shared, &mut rng);
    let mut positions = Vec::with_capacity(per_presentation * stimulus.repeats());
    for r in 0..stimulus.repeats() {
        let base = r * s;
        positions.extend(shared_offsets.iter().map(|o| base + o));
        positions.extend(
            draw_without_replacement(&mut pool, unique, &mut rng)
                .into_iter()
                .map(|o| base + o),
        );
    }
    positions.sort_unstable();
    Ok(positions)
}

/// Aggregate human result at one prompted position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    /// 0-based global index of the predicted token.
    pub position: usize,
    /// Fraction of subjects whose prediction matched; absent when nobody responded.
    pub p_human: Option<f64>,
    pub n_subjects: u32,
}

/// One stimulus with its prompts, in the on-disk schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralRecord {
    pub stimulus_id: String,
    pub span: Vec<String>,
    pub repeats: usize,
    pub prompts: Vec<Prompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// A behavioral record resolved against a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub stimulus: Stimulus,
    pub prompts: Vec<Prompt>,
}

impl EncodedRecord {
    /// Prompts with at least one responding subject.
    pub fn answered(&self) -> impl Iterator<Item = &Prompt> {
        self.prompts
            .iter()
            .filter(|p| p.n_subjects > 0 && p.p_human.is_some())
    }
}

impl BehavioralRecord {
    pub fn total_len(&self) -> usize {
        self.span.len() * self.repeats
    }

    pub fn total_subjects(&self) -> u64 {
        self.prompts.iter().map(|p| p.n_subjects as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.span.is_empty() {
            return Err(Error::InvalidRecord("span is empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidRecord("repeats must be at least 1".into()));
        }
        validate_prompts(&self.prompts, self.total_len())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let record: Self = serde_json::from_slice(&fs::read(path)?)?;
        record.validate()?;
        Ok(record)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn encode(&self, vocab: &Vocab, max_context: usize) -> Result<EncodedRecord> {
        self.validate()?;
        let span = vocab.encode_words(&self.span);
        let stimulus = Stimulus::build(self.stimulus_id.clone(), span, self.repeats, max_context)?;
        Ok(EncodedRecord {
            stimulus,
            prompts: self.prompts.clone(),
        })
    }
}

pub(crate) fn validate_prompts(prompts: &[Prompt], len: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in prompts {
        if p.position == 0 || p.position >= len {
            return Err(Error::InvalidRecord(format!(
                "prompt position {} outside 1..{len}",
                p.position
            )));
        }
        if !seen.insert(p.position) {
            return Err(Error::InvalidRecord(format!(
                "duplicate prompt position {}",
                p.position
            )));
        }
        match (p.p_human, p.n_subjects) {
            (Some(v), n) if n > 0 => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidRecord(format!(
                        "p_human {v} at position {} outside [0, 1]",
                        p.position
                    )));
                }
            }
            (Some(_), _) => {
                return Err(Error::InvalidRecord(format!(
                    "p_human given at position {} with no subjects",
                    p.position
                )))
            }
            (None, 0) => {}
            (None, _) => {
                return Err(Error::InvalidRecord(format!(
                    "missing p_human at position {}",
                    p.position
                )))
            }
        }
    }
    Ok(())
}

/// Stand-in targets whose accuracy grows as a power of the presentation:
/// `min(1, base_accuracy * r^improvement_exponent)` for presentation `r`.
pub fn synthetic_targets(
    stimulus: &Stimulus,
    vocab: &Vocab,
    positions: &[usize],
    base_accuracy: f64,
    improvement_exponent: f64,
    n_subjects: u32,
) -> Result<BehavioralRecord> {
    if !(base_accuracy > 0.0 && base_accuracy < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "base accuracy {base_accuracy} outside (0, 1)"
        )));
    }
    if !(improvement_exponent >= 0.0 && improvement_exponent.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "improvement exponent {improvement_exponent} must be non-negative"
        )));
    }
    if n_subjects == 0 {
        return Err(Error::InvalidParameter(
            "n_subjects must be at least 1".into(),
        ));
    }
    let prompts: Vec<Prompt> = positions
        .iter()
        .map(|&position| {
            let r = stimulus.presentation_of(position) as f64;
            Prompt {
                position,
                p_human: Some((base_accuracy * r.powf(improvement_exponent)).min(1.0)),
                n_subjects,
            }
        })
        .collect();
    validate_prompts(&prompts, stimulus.len())?;
    let record = BehavioralRecord {
        stimulus_id: stimulus.id.clone(),
        span: vocab.decode_words(stimulus.span())?,
        repeats: stimulus.repeats(),
        prompts,
        source: Some("synthetic".into()),
    };
    Ok(record)
}
