//! The log-linear attention layer.
//!
//! Per head, a Fenwick memory absorbs k_t v_t^T outer products; the output at
//! token t contracts the query against every active level state and mixes the
//! level reads with per-token lambda weights:
//!
//!   o_t = sum over active levels l of lambda_t^(l) * (q_t^T S[l])
//!
//! Reading happens after token t is absorbed (prefix n = t+1), so forcing
//! lambda = 1 reduces exactly to causal unnormalized linear attention.
//! `forward_recurrent` is the incremental tape path used for training;
//! `forward_oracle` recomputes every bucket sum from scratch with no
//! incremental state and no tape, as an independent check.

use crate::error::{Error, Result};
use crate::fenwick::{self, HierarchicalMemory};
use crate::lambda::{self, LambdaMode, LambdaParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_head: usize,
    pub t_max: usize,
    pub lambda_mode: LambdaMode,
    pub d_h: usize,
}

impl AttentionConfig {
    /// Levels allocated: floor(log2(t_max)) + 1, so the prefix n = t_max has
    /// a slot for its top bit.
    pub fn levels(&self) -> usize {
        fenwick::max_levels(self.t_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads * self.d_head != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "heads * d_head must equal d_model: {} * {} != {}",
                self.heads, self.d_head, self.d_model
            )));
        }
        if !self.t_max.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "t_max must be a power of two, got {}",
                self.t_max
            )));
        }
        if self.d_h < 1 {
            return Err(Error::InvalidConfig("d_h must be >= 1".into()));
        }
        Ok(())
    }
}

/// q/k/v/o projections plus the lambda parameters.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub cfg: AttentionConfig,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub lambda: LambdaParams,
}

/// Tape handles for one layer's parameters, bound once per tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub w_d: Var,
    pub w_1: Var,
    pub w_2: Var,
    pub bias: Var,
}

/// Lambda values and structural counters collected during one forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub t: usize,
    pub heads: usize,
    pub levels: usize,
    /// T x H x L row-major; exactly the values the forward used.
    pub lambda: Vec<f64>,
    /// T x L; true where bit l of t+1 is set.
    pub active: Vec<bool>,
    /// Level reads performed for head 0 at each token.
    pub reads_per_token: Vec<usize>,
    /// Level reads across all heads and tokens.
    pub total_reads: usize,
    /// Fenwick carry merges across all heads.
    pub merge_ops: usize,
}

impl LayerTrace {
    pub fn new_for(t: usize, heads: usize, levels: usize) -> Self {
        LayerTrace {
            t,
            heads,
            levels,
            lambda: vec![0.0; t * heads * levels],
            active: vec![false; t * levels],
            reads_per_token: vec![0; t],
            total_reads: 0,
            merge_ops: 0,
        }
    }

    pub fn lambda_at(&self, t: usize, h: usize, l: usize) -> f64 {
        self.lambda[(t * self.heads + h) * self.levels + l]
    }

    pub fn is_active(&self, t: usize, l: usize) -> bool {
        self.active[t * self.levels + l]
    }
}

enum LambdaSource {
    Params,
    Unit,
}

impl AttentionLayer {
    pub fn init(cfg: AttentionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let w_q = Tensor::xavier(vec![d, d], d, d, 1.0, rng);
        let w_k = Tensor::xavier(vec![d, d], d, d, 1.0, rng);
        let w_v = Tensor::xavier(vec![d, d], d, d, 1.0, rng);
        let w_o = Tensor::xavier(vec![d, d], d, d, 1.0, rng);
        let lambda =
            LambdaParams::init(cfg.lambda_mode, d, cfg.heads, cfg.levels(), cfg.d_h, rng)?;
        Ok(AttentionLayer {
            cfg,
            w_q,
            w_k,
            w_v,
            w_o,
            lambda,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            w_q: tape.leaf(&self.w_q),
            w_k: tape.leaf(&self.w_k),
            w_v: tape.leaf(&self.w_v),
            w_o: tape.leaf(&self.w_o),
            w_d: tape.leaf(&self.lambda.w_d),
            w_1: tape.leaf(&self.lambda.w_1),
            w_2: tape.leaf(&self.lambda.w_2),
            bias: tape.leaf(&self.lambda.bias),
        }
    }

    /// Incremental forward over the Fenwick memory, differentiable end to end.
    pub fn forward_recurrent(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let vars = self.bind(tape);
        self.forward_with(tape, &vars, x, LambdaSource::Params, None)
    }

    /// Forward with every lambda pinned to 1: the linear-attention
    /// equivalence diagnostic.
    pub fn forward_unit_lambda(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let vars = self.bind(tape);
        self.forward_with(tape, &vars, x, LambdaSource::Unit, None)
    }

    /// Forward on pre-bound parameters, optionally collecting a trace.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        x: Var,
        trace: Option<&mut LayerTrace>,
    ) -> Result<Var> {
        self.forward_with(tape, vars, x, LambdaSource::Params, trace)
    }

    /// Lambda tensor (T x H x L) and active-level indicator for an input,
    /// numerically identical to what `forward_recurrent` uses.
    pub fn level_reads(&self, x: &[f64], t_len: usize) -> Result<LayerTrace> {
        let mut tape = Tape::new();
        let xv = tape.constant(vec![t_len, self.cfg.d_model], x.to_vec())?;
        let vars = self.bind(&mut tape);
        let mut trace = LayerTrace::new_for(t_len, self.cfg.heads, self.cfg.levels());
        self.forward_with(&mut tape, &vars, xv, LambdaSource::Params, Some(&mut trace))?;
        Ok(trace)
    }

    fn forward_with(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        x: Var,
        source: LambdaSource,
        mut trace: Option<&mut LayerTrace>,
    ) -> Result<Var> {
        let sx = tape.shape(x).to_vec();
        if sx.len() != 2 || sx[1] != self.cfg.d_model {
            return Err(Error::ShapeMismatch {
                op: "attention::forward",
                lhs: sx,
                rhs: vec![self.cfg.d_model],
            });
        }
        let t_len = sx[0];
        if t_len > self.cfg.t_max {
            return Err(Error::SequenceTooLong {
                t: t_len,
                t_max: self.cfg.t_max,
            });
        }
        let d = self.cfg.d_model;
        let dh = self.cfg.d_head;
        let heads = self.cfg.heads;
        let levels = self.cfg.levels();

        let q_all = tape.matmul(x, vars.w_q)?;
        let k_all = tape.matmul(x, vars.w_k)?;
        let v_all = tape.matmul(x, vars.w_v)?;
        let d_all = tape.matmul(x, vars.w_d)?;

        // Lambda per head, batched over tokens: T x L.
        let mut lam_heads = Vec::with_capacity(heads);
        for h in 0..heads {
            let d_cols = tape.slice_cols(d_all, h * levels, levels)?;
            let lam = match source {
                LambdaSource::Unit => {
                    tape.constant(vec![t_len, levels], vec![1.0; t_len * levels])?
                }
                LambdaSource::Params => match self.cfg.lambda_mode {
                    LambdaMode::Baseline => tape.softplus(d_cols)?,
                    LambdaMode::MlpSoftplus => {
                        let hidden = tape.matmul(d_cols, vars.w_1)?;
                        let act = tape.gelu(hidden)?;
                        let proj = tape.matmul(act, vars.w_2)?;
                        let logits = tape.add_scalar(proj, vars.bias)?;
                        tape.softplus(logits)?
                    }
                    LambdaMode::MlpSoftmax => {
                        let hidden = tape.matmul(d_cols, vars.w_1)?;
                        let act = tape.gelu(hidden)?;
                        let proj = tape.matmul(act, vars.w_2)?;
                        let logits = tape.add_scalar(proj, vars.bias)?;
                        tape.softmax(logits, 1)?
                    }
                },
            };
            if let Some(tr) = trace.as_deref_mut() {
                let lam_data = tape.data(lam);
                for t in 0..t_len {
                    for l in 0..levels {
                        tr.lambda[(t * heads + h) * levels + l] = lam_data[t * levels + l];
                    }
                }
            }
            lam_heads.push(lam);
        }

        // Recurrent memory per head; one output vector per (head, token).
        let mut head_outs: Vec<Vec<Var>> = Vec::with_capacity(heads);
        for h in 0..heads {
            let lam = lam_heads[h];
            let mut mem: HierarchicalMemory<Var> = HierarchicalMemory::new(self.cfg.t_max);
            let mut outs = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let k_t = tape.slice(k_all, t * d + h * dh, dh)?;
                let v_t = tape.slice(v_all, t * d + h * dh, dh)?;
                let leaf = tape.outer(k_t, v_t)?;
                mem.append_with(leaf, |a, b| tape.add(a, b))?;

                let q_t = tape.slice(q_all, t * d + h * dh, dh)?;
                let mut acc: Option<Var> = None;
                for l in mem.active_levels() {
                    let state = *mem.read_level(l)?;
                    let read = tape.vec_mat(q_t, state)?;
                    let lam_tl = tape.slice(lam, t * levels + l, 1)?;
                    let term = tape.mul_scalar(read, lam_tl)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term)?,
                    });
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.total_reads += 1;
                        if h == 0 {
                            tr.reads_per_token[t] += 1;
                            tr.active[t * levels + l] = true;
                        }
                    }
                }
                outs.push(acc.expect("n >= 1 has at least one active level"));
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.merge_ops += mem.merge_count();
            }
            head_outs.push(outs);
        }

        // Token-major assembly of the concatenated head outputs.
        let mut parts = Vec::with_capacity(t_len * heads);
        for t in 0..t_len {
            for row in head_outs.iter() {
                parts.push(row[t]);
            }
        }
        let flat = tape.concat(&parts)?;
        let o = tape.reshape(flat, vec![t_len, d])?;
        tape.matmul(o, vars.w_o)
    }

    /// From-scratch verification twin: for each token, recompute the prefix
    /// partition, sum each bucket's k_i v_i^T directly, apply the same lambda
    /// (via the plain per-token path), and mix. No incremental state, no tape.
    pub fn forward_oracle(&self, x: &[f64], t_len: usize) -> Result<Vec<f64>> {
        let d = self.cfg.d_model;
        if x.len() != t_len * d {
            return Err(Error::ShapeMismatch {
                op: "forward_oracle",
                lhs: vec![x.len()],
                rhs: vec![t_len, d],
            });
        }
        if t_len > self.cfg.t_max {
            return Err(Error::SequenceTooLong {
                t: t_len,
                t_max: self.cfg.t_max,
            });
        }
        let dh = self.cfg.d_head;
        let heads = self.cfg.heads;
        let levels = self.cfg.levels();

        // Local dense product, separate from the tape kernels.
        let mm = |a: &[f64], b: &[f64], m: usize, k: usize, n: usize| -> Vec<f64> {
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[i * k + p] * b[p * n + j];
                    }
                    out[i * n + j] = acc;
                }
            }
            out
        };

        let q = mm(x, self.w_q.data(), t_len, d, d);
        let k = mm(x, self.w_k.data(), t_len, d, d);
        let v = mm(x, self.w_v.data(), t_len, d, d);

        let mut mixed = vec![0.0; t_len * d];
        for t in 0..t_len {
            let part = fenwick::partition(t + 1)?;
            let x_row = &x[t * d..(t + 1) * d];
            let d_t = lambda::project_d(x_row, &self.lambda)?;
            let lam = lambda::compute_lambda(&self.lambda, &d_t)?;
            for h in 0..heads {
                let q_t = &q[t * d + h * dh..t * d + (h + 1) * dh];
                let out_row = &mut mixed[t * d + h * dh..t * d + (h + 1) * dh];
                for bucket in &part.buckets {
                    // Direct bucket sum of outer products.
                    let mut state = vec![0.0; dh * dh];
                    for i in bucket.start..bucket.end {
                        let k_i = &k[i * d + h * dh..i * d + (h + 1) * dh];
                        let v_i = &v[i * d + h * dh..i * d + (h + 1) * dh];
                        for a in 0..dh {
                            for b in 0..dh {
                                state[a * dh + b] += k_i[a] * v_i[b];
                            }
                        }
                    }
                    let w = lam[h * levels + bucket.level];
                    for b in 0..dh {
                        let mut acc = 0.0;
                        for a in 0..dh {
                            acc += q_t[a] * state[a * dh + b];
                        }
                        out_row[b] += w * acc;
                    }
                }
            }
        }
        Ok(mm(&mixed, self.w_o.data(), t_len, d, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn tiny_cfg(mode: LambdaMode) -> AttentionConfig {
        AttentionConfig {
            d_model: 8,
            heads: 2,
            d_head: 4,
            t_max: 16,
            lambda_mode: mode,
            d_h: 5,
        }
    }

    fn rand_input(rng: &mut rand_chacha::ChaCha8Rng, t: usize, d: usize) -> Vec<f64> {
        (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn run_recurrent(layer: &AttentionLayer, x: &[f64], t: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape
            .constant(vec![t, layer.cfg.d_model], x.to_vec())
            .unwrap();
        let out = layer.forward_recurrent(&mut tape, xv).unwrap();
        tape.data(out).to_vec()
    }

    #[test]
    fn single_token_is_scaled_outer_product_read() {
        let cfg = tiny_cfg(LambdaMode::Baseline);
        let mut rng = stream_rng(1, 0);
        let layer = AttentionLayer::init(cfg, &mut rng).unwrap();
        let x = rand_input(&mut rng, 1, 8);
        let got = run_recurrent(&layer, &x, 1);

        // By hand: o_0^h = lambda_0^(h,0) * (q_0 . k_0) v_0, then W_o.
        let proj = |w: &Tensor| -> Vec<f64> {
            let mut out = vec![0.0; 8];
            for i in 0..8 {
                for j in 0..8 {
                    out[j] += x[i] * w.data()[i * 8 + j];
                }
            }
            out
        };
        let (q, k, v) = (proj(&layer.w_q), proj(&layer.w_k), proj(&layer.w_v));
        let d_t = lambda::project_d(&x, &layer.lambda).unwrap();
        let lam = lambda::compute_lambda(&layer.lambda, &d_t).unwrap();
        let mut mixed = vec![0.0; 8];
        for h in 0..2 {
            let dot: f64 = (0..4).map(|i| q[h * 4 + i] * k[h * 4 + i]).sum();
            for j in 0..4 {
                mixed[h * 4 + j] = lam[h * layer.cfg.levels()] * dot * v[h * 4 + j];
            }
        }
        let mut expect = vec![0.0; 8];
        for i in 0..8 {
            for j in 0..8 {
                expect[j] += mixed[i] * layer.w_o.data()[i * 8 + j];
            }
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrent_matches_oracle_all_modes() {
        for mode in [
            LambdaMode::Baseline,
            LambdaMode::MlpSoftplus,
            LambdaMode::MlpSoftmax,
        ] {
            let cfg = tiny_cfg(mode);
            let mut rng = stream_rng(7, 0);
            let mut layer = AttentionLayer::init(cfg, &mut rng).unwrap();
            // Move lambda off its degenerate init so the check is generic.
            jitter(&mut layer, &mut rng);
            let t = 13;
            let x = rand_input(&mut rng, t, 8);
            let rec = run_recurrent(&layer, &x, t);
            let ora = layer.forward_oracle(&x, t).unwrap();
            let max = rec
                .iter()
                .zip(&ora)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-10, "mode {mode}: max abs diff {max}");
        }
    }

    fn jitter(layer: &mut AttentionLayer, rng: &mut rand_chacha::ChaCha8Rng) {
        for t in [&mut layer.lambda.w_2, &mut layer.lambda.w_d] {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }

    #[test]
    fn unit_lambda_equals_causal_linear_attention() {
        let cfg = tiny_cfg(LambdaMode::Baseline);
        let mut rng = stream_rng(3, 0);
        let layer = AttentionLayer::init(cfg, &mut rng).unwrap();
        let t = 11;
        let x = rand_input(&mut rng, t, 8);

        let mut tape = Tape::new();
        let xv = tape.constant(vec![t, 8], x.clone()).unwrap();
        let out = layer.forward_unit_lambda(&mut tape, xv).unwrap();
        let got = tape.data(out).to_vec();

        // Brute-force O(T^2) causal linear attention.
        let proj = |w: &Tensor, row: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 8];
            for i in 0..8 {
                for j in 0..8 {
                    out[j] += row[i] * w.data()[i * 8 + j];
                }
            }
            out
        };
        let mut mixed = vec![0.0; t * 8];
        for tt in 0..t {
            let q = proj(&layer.w_q, &x[tt * 8..(tt + 1) * 8]);
            for h in 0..2 {
                for i in 0..=tt {
                    let k = proj(&layer.w_k, &x[i * 8..(i + 1) * 8]);
                    let v = proj(&layer.w_v, &x[i * 8..(i + 1) * 8]);
                    let dot: f64 = (0..4).map(|a| q[h * 4 + a] * k[h * 4 + a]).sum();
                    for b in 0..4 {
                        mixed[tt * 8 + h * 4 + b] += dot * v[h * 4 + b];
                    }
                }
            }
        }
        for tt in 0..t {
            let o = proj(&layer.w_o, &mixed[tt * 8..(tt + 1) * 8]);
            for j in 0..8 {
                assert!(
                    (got[tt * 8 + j] - o[j]).abs() < 1e-10,
                    "t={tt} j={j}"
                );
            }
        }
    }

    #[test]
    fn causality_future_tokens_do_not_affect_past() {
        let cfg = tiny_cfg(LambdaMode::MlpSoftplus);
        let mut rng = stream_rng(5, 0);
        let mut layer = AttentionLayer::init(cfg, &mut rng).unwrap();
        jitter(&mut layer, &mut rng);
        let t = 10;
        let x = rand_input(&mut rng, t, 8);
        let base = run_recurrent(&layer, &x, t);

        // Swap tokens 7 and 9; outputs up to token 6 must be bit-identical
        // (the memory has absorbed nothing beyond t).
        let mut perturbed = x.clone();
        for j in 0..8 {
            perturbed.swap(7 * 8 + j, 9 * 8 + j);
        }
        let swapped = run_recurrent(&layer, &perturbed, t);
        for tt in 0..=6 {
            for j in 0..8 {
                assert_eq!(base[tt * 8 + j], swapped[tt * 8 + j], "t={tt}");
            }
        }
    }

    #[test]
    fn zero_values_give_zero_output() {
        let cfg = tiny_cfg(LambdaMode::Baseline);
        let mut rng = stream_rng(6, 0);
        let mut layer = AttentionLayer::init(cfg, &mut rng).unwrap();
        layer.w_v = Tensor::zeros(vec![8, 8]).with_grad();
        let x = rand_input(&mut rng, 5, 8);
        let out = layer.forward_oracle(&x, 5).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn level_reads_init_contracts_and_indicator() {
        let mut rng = stream_rng(9, 0);
        let baseline =
            AttentionLayer::init(tiny_cfg(LambdaMode::Baseline), &mut rng).unwrap();
        let x = rand_input(&mut rng, 13, 8);
        let trace = baseline.level_reads(&x, 13).unwrap();
        for &v in &trace.lambda {
            assert!((0.688..=0.698).contains(&v), "baseline init lambda {v}");
        }
        // t=12 reads the partition of n=13: levels {0, 2, 3}.
        for l in 0..trace.levels {
            assert_eq!(trace.is_active(12, l), [0, 2, 3].contains(&l));
        }

        let softplus =
            AttentionLayer::init(tiny_cfg(LambdaMode::MlpSoftplus), &mut rng).unwrap();
        let trace = softplus.level_reads(&x, 13).unwrap();
        for &v in &trace.lambda {
            assert!((v - 0.9991627362708936).abs() < 1e-9, "mlp init lambda {v}");
        }
    }

    #[test]
    fn read_counts_follow_popcount() {
        let cfg = AttentionConfig {
            d_model: 4,
            heads: 1,
            d_head: 4,
            t_max: 64,
            lambda_mode: LambdaMode::Baseline,
            d_h: 3,
        };
        let mut rng = stream_rng(10, 0);
        let layer = AttentionLayer::init(cfg, &mut rng).unwrap();
        let x = rand_input(&mut rng, 64, 4);
        let trace = layer.level_reads(&x, 64).unwrap();
        let mut total = 0;
        for t in 0..64 {
            let pc = (t + 1usize).count_ones() as usize;
            assert_eq!(trace.reads_per_token[t], pc);
            total += pc;
        }
        assert_eq!(trace.total_reads, total);
        assert!(trace.merge_ops <= 2 * 64);
    }

    #[test]
    fn rejects_sequences_beyond_t_max() {
        let cfg = tiny_cfg(LambdaMode::Baseline);
        let mut rng = stream_rng(2, 0);
        let layer = AttentionLayer::init(cfg, &mut rng).unwrap();
        let x = rand_input(&mut rng, 17, 8);
        let mut tape = Tape::new();
        let xv = tape.constant(vec![17, 8], x.clone()).unwrap();
        assert!(matches!(
            layer.forward_recurrent(&mut tape, xv),
            Err(Error::SequenceTooLong { t: 17, t_max: 16 })
        ));
        assert!(layer.forward_oracle(&x, 17).is_err());
    }

    #[test]
    fn layer_gradcheck_all_modes() {
        use crate::gradcheck::grad_check;
        for mode in [
            LambdaMode::Baseline,
            LambdaMode::MlpSoftplus,
            LambdaMode::MlpSoftmax,
        ] {
            let cfg = tiny_cfg(mode);
            let mut rng = stream_rng(20, 0);
            let mut layer = AttentionLayer::init(cfg, &mut rng).unwrap();
            jitter(&mut layer, &mut rng);
            let t = 8;
            let x = rand_input(&mut rng, t, 8);

            let names: Vec<String> = ["w_q", "w_k", "w_v", "w_o", "w_d", "w_1", "w_2", "bias"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let mut params = vec![
                layer.w_q.clone(),
                layer.w_k.clone(),
                layer.w_v.clone(),
                layer.w_o.clone(),
                layer.lambda.w_d.clone(),
                layer.lambda.w_1.clone(),
                layer.lambda.w_2.clone(),
                layer.lambda.bias.clone(),
            ];

            let run = |ps: &[Tensor], want_grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
                let mut l = layer.clone();
                l.w_q = ps[0].clone();
                l.w_k = ps[1].clone();
                l.w_v = ps[2].clone();
                l.w_o = ps[3].clone();
                l.lambda.w_d = ps[4].clone();
                l.lambda.w_1 = ps[5].clone();
                l.lambda.w_2 = ps[6].clone();
                l.lambda.bias = ps[7].clone();
                let mut tape = Tape::new();
                let xv = tape.constant(vec![t, 8], x.clone())?;
                let vars = l.bind(&mut tape);
                let out = l.forward_bound(&mut tape, &vars, xv, None)?;
                // Fixed-weight scalar readout.
                let n = tape.data(out).len();
                let w: Vec<f64> = (0..n).map(|i| ((i % 7) as f64 - 3.0) * 0.2).collect();
                let wv = tape.constant(vec![t, 8], w)?;
                let prod = tape.mul(out, wv)?;
                let loss = tape.sum_all(prod)?;
                let lv = tape.value(loss);
                if !want_grads {
                    return Ok((lv, vec![]));
                }
                tape.backward(loss)?;
                let order = [
                    vars.w_q, vars.w_k, vars.w_v, vars.w_o, vars.w_d, vars.w_1, vars.w_2,
                    vars.bias,
                ];
                let gs = order
                    .iter()
                    .map(|v| {
                        tape.grad(*v)
                            .map(|g| g.to_vec())
                            // Parameters unused by this mode get zero grads.
                            .unwrap_or_else(|| vec![0.0; tape.data(*v).len()])
                    })
                    .collect();
                Ok((lv, gs))
            };

            let report = grad_check(
                &mut params,
                &names,
                |ps| run(ps, false).map(|r| r.0),
                |ps| run(ps, true).map(|r| r.1),
                1e-4,
                1e-4,
            )
            .unwrap();
            assert!(
                report.passed(),
                "mode {mode}: max rel err {} at {:?}",
                report.max_rel_err,
                report
                    .params
                    .iter()
                    .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                    .map(|p| &p.name)
            );
        }
    }
}
