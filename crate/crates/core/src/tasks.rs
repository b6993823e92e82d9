//! Deterministic generators and scorers for the synthetic recall tasks.
//!
//! Shared reserved ids across tasks: 0 = blank/pad, 1 = separator and answer
//! slot placeholder. MQAR splits the rest of its vocabulary into a key half
//! [2, 2 + V/2) and a value half [2 + V/2, V); selective copying draws
//! content tokens from [2, V).
//!
//! Generators are pure functions of (config, seed, sequence index): each
//! sequence gets its own ChaCha stream, so batches are reproducible and
//! sequences are independent.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const BLANK_TOKEN: usize = 0;
pub const SEP_TOKEN: usize = 1;

/// Token inputs, targets, and the mask selecting supervised positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.first().map(|s| s.len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MqarConfig {
    pub seq_len: usize,
    pub num_pairs: usize,
    #[serde(default = "default_mqar_vocab")]
    pub vocab_size: usize,
}

fn default_mqar_vocab() -> usize {
    128
}

impl MqarConfig {
    pub fn new(seq_len: usize, num_pairs: usize) -> Self {
        MqarConfig {
            seq_len,
            num_pairs,
            vocab_size: 128,
        }
    }

    /// Key ids occupy [2, 2 + V/2).
    pub fn key_range(&self) -> std::ops::Range<usize> {
        2..2 + self.vocab_size / 2
    }

    /// Value ids occupy [2 + V/2, V).
    pub fn value_range(&self) -> std::ops::Range<usize> {
        2 + self.vocab_size / 2..self.vocab_size
    }

    /// Query (key, slot) pairs filling the region after the kv pairs.
    pub fn num_queries(&self) -> usize {
        (self.seq_len - 2 * self.num_pairs) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if 4 * self.num_pairs > self.seq_len {
            return Err(Error::InvalidConfig(format!(
                "mqar: pairs and query regions do not fit: 4*{} > {}",
                self.num_pairs, self.seq_len
            )));
        }
        if self.num_pairs == 0 {
            return Err(Error::InvalidConfig("mqar: num_pairs must be >= 1".into()));
        }
        if self.num_pairs > self.key_range().len() {
            return Err(Error::InvalidConfig(format!(
                "mqar: {} distinct keys requested but alphabet holds {}",
                self.num_pairs,
                self.key_range().len()
            )));
        }
        if self.vocab_size < 6 || self.vocab_size % 2 != 0 {
            return Err(Error::InvalidConfig(
                "mqar: vocab_size must be even and >= 6".into(),
            ));
        }
        Ok(())
    }
}

/// Multi-query associative recall. Layout per sequence:
/// positions 0..2k-1 hold key_i, val_i pairs (keys distinct, values with
/// replacement); the remainder holds (query_key, slot) pairs where the slot
/// carries the placeholder token in the input and the bound value as target.
/// Only slot positions are supervised.
pub fn gen_mqar(cfg: &MqarConfig, seed: u64, batch: usize) -> Result<Batch> {
    cfg.validate()?;
    let t = cfg.seq_len;
    let k = cfg.num_pairs;
    let mut out = Batch {
        inputs: Vec::with_capacity(batch),
        targets: Vec::with_capacity(batch),
        mask: Vec::with_capacity(batch),
    };
    for index in 0..batch {
        let mut rng = stream_rng(seed, index as u64);
        let mut inputs = vec![BLANK_TOKEN; t];
        let mut targets = vec![BLANK_TOKEN; t];
        let mut mask = vec![false; t];

        // Distinct keys via partial Fisher-Yates over the key alphabet.
        let mut alphabet: Vec<usize> = cfg.key_range().collect();
        for i in 0..k {
            let j = rng.gen_range(i..alphabet.len());
            alphabet.swap(i, j);
        }
        let keys = &alphabet[..k];
        let values: Vec<usize> = (0..k)
            .map(|_| rng.gen_range(cfg.value_range()))
            .collect();

        for i in 0..k {
            inputs[2 * i] = keys[i];
            inputs[2 * i + 1] = values[i];
        }
        for q in 0..cfg.num_queries() {
            let pick = rng.gen_range(0..k);
            let pos = 2 * k + 2 * q;
            inputs[pos] = keys[pick];
            inputs[pos + 1] = SEP_TOKEN;
            targets[pos + 1] = values[pick];
            mask[pos + 1] = true;
        }
        out.inputs.push(inputs);
        out.targets.push(targets);
        out.mask.push(mask);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectiveCopyConfig {
    pub seq_len: usize,
    #[serde(default = "default_copy_targets")]
    pub num_targets: usize,
    #[serde(default = "default_copy_vocab")]
    pub vocab_size: usize,
}

fn default_copy_targets() -> usize {
    16
}

fn default_copy_vocab() -> usize {
    64
}

impl SelectiveCopyConfig {
    pub fn new(seq_len: usize) -> Self {
        SelectiveCopyConfig {
            seq_len,
            num_targets: 16,
            vocab_size: 64,
        }
    }

    /// Content ids occupy [2, V).
    pub fn content_range(&self) -> std::ops::Range<usize> {
        2..self.vocab_size
    }

    /// Content positions are drawn from [0, T - num_targets - 2).
    pub fn context_region(&self) -> usize {
        self.seq_len - self.num_targets - 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len <= 2 * self.num_targets + 1 {
            return Err(Error::InvalidConfig(format!(
                "selective copy: seq_len {} must exceed 2*{}+1",
                self.seq_len, self.num_targets
            )));
        }
        if self.context_region() < self.num_targets {
            return Err(Error::InvalidConfig(
                "selective copy: context region too small for the content tokens".into(),
            ));
        }
        if self.vocab_size < 3 {
            return Err(Error::InvalidConfig(
                "selective copy: vocab_size must be >= 3".into(),
            ));
        }
        Ok(())
    }
}

/// Selective copying. Content tokens at sorted random context positions,
/// blanks elsewhere; a separator; then one placeholder slot per content
/// token whose target is that token, in order of appearance.
pub fn gen_selective_copy(cfg: &SelectiveCopyConfig, seed: u64, batch: usize) -> Result<Batch> {
    cfg.validate()?;
    let t = cfg.seq_len;
    let n = cfg.num_targets;
    let mut out = Batch {
        inputs: Vec::with_capacity(batch),
        targets: Vec::with_capacity(batch),
        mask: Vec::with_capacity(batch),
    };
    for index in 0..batch {
        let mut rng = stream_rng(seed, index as u64);
        let mut inputs = vec![BLANK_TOKEN; t];
        let mut targets = vec![BLANK_TOKEN; t];
        let mut mask = vec![false; t];

        let region = cfg.context_region();
        let mut positions: Vec<usize> = (0..region).collect();
        for i in 0..n {
            let j = rng.gen_range(i..positions.len());
            positions.swap(i, j);
        }
        let mut chosen = positions[..n].to_vec();
        chosen.sort_unstable();

        let mut content = Vec::with_capacity(n);
        for &pos in &chosen {
            let tok = rng.gen_range(cfg.content_range());
            inputs[pos] = tok;
            content.push(tok);
        }
        inputs[t - n - 1] = SEP_TOKEN;
        for (j, &tok) in content.iter().enumerate() {
            let pos = t - n + j;
            inputs[pos] = SEP_TOKEN;
            targets[pos] = tok;
            mask[pos] = true;
        }
        out.inputs.push(inputs);
        out.targets.push(targets);
        out.mask.push(mask);
    }
    Ok(out)
}

/// Mean over masked positions of [argmax(logits) == target], with argmax
/// ties broken toward the lowest token id. `logits` holds one row-major
/// T x vocab buffer per sequence.
pub fn accuracy(logits: &[Vec<f64>], vocab: usize, batch: &Batch) -> Result<f64> {
    if logits.len() != batch.len() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            lhs: vec![logits.len()],
            rhs: vec![batch.len()],
        });
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (s, seq_logits) in logits.iter().enumerate() {
        let t = batch.inputs[s].len();
        if seq_logits.len() != t * vocab {
            return Err(Error::ShapeMismatch {
                op: "accuracy",
                lhs: vec![seq_logits.len()],
                rhs: vec![t, vocab],
            });
        }
        for pos in 0..t {
            if !batch.mask[s][pos] {
                continue;
            }
            let row = &seq_logits[pos * vocab..(pos + 1) * vocab];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == batch.targets[s][pos] {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(correct as f64 / total as f64)
}

/// Percent with one decimal, the logging convention for accuracy tables.
pub fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

/// Line-delimited dataset dump: a header object with the config echo, then
/// one record per sequence with fields `index`, `inputs`, `targets`, `mask`.
pub fn dump_batch_jsonl<W: Write>(
    out: &mut W,
    header: &serde_json::Value,
    batch: &Batch,
) -> Result<()> {
    serde_json::to_writer(&mut *out, header)?;
    out.write_all(b"\n")?;
    for i in 0..batch.len() {
        let record = serde_json::json!({
            "index": i,
            "inputs": batch.inputs[i],
            "targets": batch.targets[i],
            "mask": batch.mask[i].iter().map(|&m| m as u8).collect::<Vec<u8>>(),
        });
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
