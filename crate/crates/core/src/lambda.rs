//! Memory-level weighting (lambda) parameterizations.
//!
//! Three modes share the projection d_t = x_t W_d reshaped to heads x levels:
//!   - Baseline: lambda = softplus(d_t), a fixed activation on a near-zero
//!     projection, so the weights are nearly input-independent (~ln 2).
//!   - MlpSoftplus: per head, lambda = softplus(gelu(d W_1) W_2 + b) over the
//!     level axis; each level scales independently.
//!   - MlpSoftmax: same trunk, softmax over the level axis; levels compete
//!     for a unit budget.
//!
//! Initialization: W_1 Xavier-uniform, W_2 zero, bias 0.54, so both MLP modes
//! start input-independent (softplus(0.54) ~= 1, softmax uniform at 1/L).

use crate::error::{Error, Result};
use crate::math;
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Baseline,
    MlpSoftplus,
    MlpSoftmax,
}

impl std::fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LambdaMode::Baseline => "baseline",
            LambdaMode::MlpSoftplus => "mlp_softplus",
            LambdaMode::MlpSoftmax => "mlp_softmax",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LambdaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(LambdaMode::Baseline),
            "mlp_softplus" | "softplus" => Ok(LambdaMode::MlpSoftplus),
            "mlp_softmax" | "softmax" => Ok(LambdaMode::MlpSoftmax),
            other => Err(Error::InvalidConfig(format!("unknown lambda mode `{other}`"))),
        }
    }
}

/// Bias init; softplus(0.54) = 0.99916, within 1e-3 of 1.
pub const MLP_BIAS_INIT: f64 = 0.54;

/// Gain on the Xavier-uniform draw for W_d. Keeps baseline pre-activations
/// within ~±0.01 at init, so softplus lands in the observed 0.688..0.698
/// band; full-scale Xavier would spread them over ~±1.
pub const BASELINE_PROJ_GAIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct LambdaParams {
    pub mode: LambdaMode,
    pub heads: usize,
    pub levels: usize,
    pub d_h: usize,
    /// d_model x (heads * levels); the baseline projection, present in all modes.
    pub w_d: Tensor,
    /// levels x d_h
    pub w_1: Tensor,
    /// d_h x levels
    pub w_2: Tensor,
    /// scalar
    pub bias: Tensor,
}

impl LambdaParams {
    pub fn init(
        mode: LambdaMode,
        d_model: usize,
        heads: usize,
        levels: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if d_h < 1 {
            return Err(Error::InvalidConfig("d_h must be >= 1".into()));
        }
        if d_model < 1 || heads < 1 || levels < 1 {
            return Err(Error::InvalidConfig(
                "d_model, heads and levels must be >= 1".into(),
            ));
        }
        let hl = heads * levels;
        let w_d = Tensor::xavier(vec![d_model, hl], d_model, hl, BASELINE_PROJ_GAIN, rng);
        let w_1 = Tensor::xavier(vec![levels, d_h], levels, d_h, 1.0, rng);
        let w_2 = Tensor::zeros(vec![d_h, levels]).with_grad();
        let bias = Tensor::scalar(MLP_BIAS_INIT)?.with_grad();
        Ok(LambdaParams {
            mode,
            heads,
            levels,
            d_h,
            w_d,
            w_1,
            w_2,
            bias,
        })
    }

    /// λ-MLP head parameter count: W_1 + W_2 + bias. Independent of T.
    pub fn mlp_param_count(&self) -> usize {
        self.levels * self.d_h + self.d_h * self.levels + 1
    }
}

/// Deterministic constructor from a bare seed.
pub fn init_lambda(
    mode: LambdaMode,
    d_model: usize,
    heads: usize,
    levels: usize,
    d_h: usize,
    seed: u64,
) -> Result<LambdaParams> {
    let mut rng = stream_rng(seed, 0x4C41_4D42);
    LambdaParams::init(mode, d_model, heads, levels, d_h, &mut rng)
}

/// d_t = x^T W_d reshaped to heads x levels (row-major, head-major).
pub fn project_d(x: &[f64], params: &LambdaParams) -> Result<Vec<f64>> {
    let d_model = params.w_d.shape()[0];
    let hl = params.heads * params.levels;
    if x.len() != d_model {
        return Err(Error::ShapeMismatch {
            op: "project_d",
            lhs: vec![x.len()],
            rhs: vec![d_model],
        });
    }
    let w = params.w_d.data();
    let mut out = vec![0.0; hl];
    for (i, &xi) in x.iter().enumerate() {
        let row = i * hl;
        for j in 0..hl {
            out[j] += xi * w[row + j];
        }
    }
    Ok(out)
}

/// Baseline: elementwise softplus of d_t.
pub fn lambda_baseline(d_t: &[f64]) -> Vec<f64> {
    d_t.iter().map(|&v| math::softplus(v)).collect()
}

/// Per head: h = gelu(d_row W_1), lambda_row = softplus(h W_2 + b).
/// Only the level axis is mixed; heads are independent.
pub fn lambda_mlp_softplus(d_t: &[f64], params: &LambdaParams) -> Result<Vec<f64>> {
    mlp_logits(d_t, params).map(|logits| logits.iter().map(|&v| math::softplus(v)).collect())
}

/// Same trunk, softmax over the level axis per head; rows sum to 1.
pub fn lambda_mlp_softmax(d_t: &[f64], params: &LambdaParams) -> Result<Vec<f64>> {
    let logits = mlp_logits(d_t, params)?;
    let l = params.levels;
    let mut out = vec![0.0; logits.len()];
    for h in 0..params.heads {
        let row = &logits[h * l..(h + 1) * l];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (i, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            out[h * l + i] = e;
            sum += e;
        }
        for i in 0..l {
            out[h * l + i] /= sum;
        }
    }
    Ok(out)
}

fn mlp_logits(d_t: &[f64], params: &LambdaParams) -> Result<Vec<f64>> {
    let (heads, l, d_h) = (params.heads, params.levels, params.d_h);
    if d_t.len() != heads * l {
        return Err(Error::ShapeMismatch {
            op: "lambda_mlp",
            lhs: vec![d_t.len()],
            rhs: vec![heads, l],
        });
    }
    let w1 = params.w_1.data();
    let w2 = params.w_2.data();
    let b = params.bias.data()[0];
    let mut out = vec![0.0; heads * l];
    let mut hidden = vec![0.0; d_h];
    for h in 0..heads {
        let d_row = &d_t[h * l..(h + 1) * l];
        for j in 0..d_h {
            let mut acc = 0.0;
            for i in 0..l {
                acc += d_row[i] * w1[i * d_h + j];
            }
            hidden[j] = math::gelu(acc);
        }
        for i in 0..l {
            let mut acc = b;
            for j in 0..d_h {
                acc += hidden[j] * w2[j * l + i];
            }
            out[h * l + i] = acc;
        }
    }
    Ok(out)
}

/// Mode dispatch over a single token's d_t (heads x levels, row-major).
pub fn compute_lambda(params: &LambdaParams, d_t: &[f64]) -> Result<Vec<f64>> {
    match params.mode {
        LambdaMode::Baseline => {
            if d_t.len() != params.heads * params.levels {
                return Err(Error::ShapeMismatch {
                    op: "lambda_baseline",
                    lhs: vec![d_t.len()],
                    rhs: vec![params.heads, params.levels],
                });
            }
            Ok(lambda_baseline(d_t))
        }
        LambdaMode::MlpSoftplus => lambda_mlp_softplus(d_t, params),
        LambdaMode::MlpSoftmax => lambda_mlp_softmax(d_t, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::xavier_bound;
    use rand::Rng;

    fn params(mode: LambdaMode, seed: u64) -> LambdaParams {
        init_lambda(mode, 16, 2, 4, 6, seed).unwrap()
    }

    #[test]
    fn project_d_zero_cases() {
        let p = params(LambdaMode::Baseline, 0);
        let d = project_d(&vec![0.0; 16], &p).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));

        let mut p2 = params(LambdaMode::Baseline, 0);
        p2.w_d = Tensor::zeros(vec![16, 8]).with_grad();
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let d = project_d(&x, &p2).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn project_d_matches_triple_loop() {
        let p = params(LambdaMode::Baseline, 3);
        let mut rng = stream_rng(9, 0);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = project_d(&x, &p).unwrap();
        let w = p.w_d.data();
        for j in 0..8 {
            let mut acc = 0.0;
            for i in 0..16 {
                acc += x[i] * w[i * 8 + j];
            }
            assert!((d[j] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_reference_points_and_monotonicity() {
        let zero = lambda_baseline(&[0.0; 8]);
        for v in &zero {
            assert!((v - 0.6931471805599453).abs() < 1e-12);
        }
        let near_one = lambda_baseline(&[0.54]);
        assert!((near_one[0] - 1.0).abs() < 2e-3);

        let mut rng = stream_rng(4, 0);
        for _ in 0..100 {
            let d: f64 = rng.gen_range(-3.0..3.0);
            let eps: f64 = rng.gen_range(0.01..0.5);
            let lo = lambda_baseline(&[d])[0];
            let hi = lambda_baseline(&[d + eps])[0];
            assert!(hi > lo);
        }
    }

    #[test]
    fn mlp_softplus_init_is_input_independent_near_one() {
        let p = params(LambdaMode::MlpSoftplus, 7);
        let mut rng = stream_rng(8, 0);
        for _ in 0..50 {
            let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let lam = lambda_mlp_softplus(&d, &p).unwrap();
            for v in &lam {
                assert!((v - 1.0).abs() < 2e-3, "lambda {v}");
            }
        }
    }

    #[test]
    fn mlp_softplus_with_zero_w1_is_constant() {
        let mut p = params(LambdaMode::MlpSoftplus, 7);
        p.w_1 = Tensor::zeros(vec![4, 6]).with_grad();
        // Make W_2 nonzero so constancy comes from W_1 = 0, not W_2 = 0.
        p.w_2 = Tensor::from_vec(vec![6, 4], (0..24).map(|i| 0.1 * i as f64).collect())
            .unwrap()
            .with_grad();
        let a = lambda_mlp_softplus(&[1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 1.0, -1.0], &p).unwrap();
        let b = lambda_mlp_softplus(&[-4.0, 0.1, 2.5, -3.0, 1.0, 2.0, -1.0, 0.7], &p).unwrap();
        let expect = math::softplus(p.bias.data()[0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
            assert!((x - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_softplus_matches_independent_two_loop_evaluation() {
        let mut p = params(LambdaMode::MlpSoftplus, 11);
        let mut rng = stream_rng(12, 0);
        // Randomize W_2 and bias away from the identity init.
        p.w_2 = Tensor::from_vec(
            vec![6, 4],
            (0..24).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        )
        .unwrap()
        .with_grad();
        p.bias = Tensor::scalar(rng.gen_range(-0.5..0.5)).unwrap().with_grad();
        let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = lambda_mlp_softplus(&d, &p).unwrap();

        // Independent evaluation with explicit formulas.
        let erf_gelu = |x: f64| x * 0.5 * (1.0 + libm::erf(x / 2.0_f64.sqrt()));
        for h in 0..2 {
            for i in 0..4 {
                let mut acc = p.bias.data()[0];
                for j in 0..6 {
                    let mut hj = 0.0;
                    for l in 0..4 {
                        hj += d[h * 4 + l] * p.w_1.data()[l * 6 + j];
                    }
                    acc += erf_gelu(hj) * p.w_2.data()[j * 4 + i];
                }
                let expect = (1.0 + acc.exp()).ln();
                assert!((got[h * 4 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_softmax_uniform_at_init_and_normalized() {
        let p = params(LambdaMode::MlpSoftmax, 5);
        let mut rng = stream_rng(6, 0);
        for _ in 0..20 {
            let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let lam = lambda_mlp_softmax(&d, &p).unwrap();
            for v in &lam {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
        // Random parameters still normalize per head.
        let mut p = params(LambdaMode::MlpSoftmax, 5);
        p.w_2 = Tensor::from_vec(
            vec![6, 4],
            (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
        .with_grad();
        let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lam = lambda_mlp_softmax(&d, &p).unwrap();
        for h in 0..2 {
            let s: f64 = lam[h * 4..(h + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_softmax_saturates_at_large_logit() {
        // Drive one level's logit to +50 via W_2 and a one-hot-ish hidden.
        let mut p = params(LambdaMode::MlpSoftmax, 2);
        p.w_1 = Tensor::full(vec![4, 6], 1.0).unwrap().with_grad();
        let mut w2 = vec![0.0; 24];
        for j in 0..6 {
            w2[j * 4 + 2] = 50.0;
        }
        p.w_2 = Tensor::from_vec(vec![6, 4], w2).unwrap().with_grad();
        let lam = lambda_mlp_softmax(&[1.0; 8], &p).unwrap();
        for h in 0..2 {
            assert!(lam[h * 4 + 2] > 1.0 - 1e-10);
            for i in [0, 1, 3] {
                assert!(lam[h * 4 + i] < 1e-10);
            }
        }
    }

    #[test]
    fn softplus_column_sensitivity_is_level_local() {
        // Perturbing column l of W_2 changes only level l's lambda.
        let mut rng = stream_rng(21, 0);
        let mut p = params(LambdaMode::MlpSoftplus, 13);
        p.w_2 = Tensor::from_vec(
            vec![6, 4],
            (0..24).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap()
        .with_grad();
        let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = lambda_mlp_softplus(&d, &p).unwrap();
        for target in 0..4 {
            let mut q = p.clone();
            let mut w2 = q.w_2.data().to_vec();
            for j in 0..6 {
                w2[j * 4 + target] += 0.3;
            }
            q.w_2 = Tensor::from_vec(vec![6, 4], w2).unwrap().with_grad();
            let bumped = lambda_mlp_softplus(&d, &q).unwrap();
            for h in 0..2 {
                for i in 0..4 {
                    let delta = (bumped[h * 4 + i] - base[h * 4 + i]).abs();
                    if i == target {
                        assert!(delta > 1e-6, "level {target} should move");
                    } else {
                        assert!(delta < 1e-15, "level {i} must not move");
                    }
                }
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_lambda(LambdaMode::MlpSoftplus, 16, 2, 4, 6, 99).unwrap();
        let b = init_lambda(LambdaMode::MlpSoftplus, 16, 2, 4, 6, 99).unwrap();
        assert_eq!(a.w_d.data(), b.w_d.data());
        assert_eq!(a.w_1.data(), b.w_1.data());
        assert!(a.w_2.data().iter().all(|&v| v == 0.0));
        assert_eq!(a.bias.data()[0], MLP_BIAS_INIT);

        // Xavier bound on W_1 over 10^4 draws.
        let big = init_lambda(LambdaMode::MlpSoftplus, 8, 1, 100, 100, 123).unwrap();
        let bound = xavier_bound(100, 100);
        assert_eq!(big.w_1.numel(), 10_000);
        assert!(big.w_1.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn mlp_param_count_formula() {
        let p = params(LambdaMode::MlpSoftplus, 0);
        assert_eq!(p.mlp_param_count(), 4 * 6 + 6 * 4 + 1);
        let p = init_lambda(LambdaMode::MlpSoftplus, 64, 2, 8, 64, 0).unwrap();
        assert_eq!(p.mlp_param_count(), 1025);
    }

    use crate::rng::stream_rng;
}
