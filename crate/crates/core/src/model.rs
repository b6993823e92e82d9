//! Full sequence model: embedding, pre-norm residual blocks (log-linear
//! attention + GELU feed-forward), final norm and an untied linear head.
//! Also the exact-integer parameter accounting used by the overhead audit.

use crate::attention::{AttentionConfig, AttentionLayer, LayerTrace, LayerVars};
use crate::error::{Error, Result};
use crate::fenwick;
use crate::lambda::LambdaMode;
use crate::rng::stream_rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const LN_EPS: f64 = 1e-12;

fn default_ffn_mult() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub d_head: usize,
    pub t_max: usize,
    pub lambda_mode: LambdaMode,
    pub d_h: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        fenwick::max_levels(self.t_max)
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            heads: self.heads,
            d_head: self.d_head,
            t_max: self.t_max,
            lambda_mode: self.lambda_mode,
            d_h: self.d_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.n_layers < 1 {
            return Err(Error::InvalidConfig("n_layers must be >= 1".into()));
        }
        if self.ffn_mult < 1 {
            return Err(Error::InvalidConfig("ffn_mult must be >= 1".into()));
        }
        self.attention().validate()
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: Tensor,
    pub attn: AttentionLayer,
    pub ln2: Tensor,
    pub w_ff1: Tensor,
    pub w_ff2: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub embed: Tensor,
    pub blocks: Vec<Block>,
    pub ln_f: Tensor,
    pub w_head: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1: Var,
    pub attn: LayerVars,
    pub ln2: Var,
    pub w_ff1: Var,
    pub w_ff2: Var,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embed: Var,
    pub blocks: Vec<BlockVars>,
    pub ln_f: Var,
    pub w_head: Var,
}

impl ModelVars {
    /// All parameter vars in the same order as `Model::named_params`.
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.embed];
        for b in &self.blocks {
            out.extend([
                b.ln1, b.attn.w_q, b.attn.w_k, b.attn.w_v, b.attn.w_o, b.attn.w_d, b.attn.w_1,
                b.attn.w_2, b.attn.bias, b.ln2, b.w_ff1, b.w_ff2,
            ]);
        }
        out.push(self.ln_f);
        out.push(self.w_head);
        out
    }
}

/// Per-layer lambda traces for one forward pass.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub layers: Vec<LayerTrace>,
}

impl Model {
    /// Deterministic build: every parameter is drawn from a single ChaCha
    /// stream keyed by cfg.seed, in the fixed `named_params` order.
    pub fn build(cfg: &ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, 0x4D4F_4445);
        let d = cfg.d_model;
        let v = cfg.vocab_size;
        let f = cfg.ffn_mult * d;
        let embed = Tensor::xavier(vec![v, d], v, d, 1.0, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            let attn = AttentionLayer::init(cfg.attention(), &mut rng)?;
            let w_ff1 = Tensor::xavier(vec![d, f], d, f, 1.0, &mut rng);
            let w_ff2 = Tensor::xavier(vec![f, d], f, d, 1.0, &mut rng);
            blocks.push(Block {
                ln1: Tensor::full(vec![d], 1.0)?.with_grad(),
                attn,
                ln2: Tensor::full(vec![d], 1.0)?.with_grad(),
                w_ff1,
                w_ff2,
            });
        }
        let ln_f = Tensor::full(vec![d], 1.0)?.with_grad();
        let w_head = Tensor::xavier(vec![d, v], d, v, 1.0, &mut rng);
        Ok(Model {
            cfg: cfg.clone(),
            embed,
            blocks,
            ln_f,
            w_head,
        })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embed".into(), &self.embed)];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("block{i}.{s}");
            out.extend([
                (p("ln1"), &b.ln1),
                (p("attn.w_q"), &b.attn.w_q),
                (p("attn.w_k"), &b.attn.w_k),
                (p("attn.w_v"), &b.attn.w_v),
                (p("attn.w_o"), &b.attn.w_o),
                (p("lambda.w_d"), &b.attn.lambda.w_d),
                (p("lambda.w_1"), &b.attn.lambda.w_1),
                (p("lambda.w_2"), &b.attn.lambda.w_2),
                (p("lambda.bias"), &b.attn.lambda.bias),
                (p("ln2"), &b.ln2),
                (p("ffn.w_1"), &b.w_ff1),
                (p("ffn.w_2"), &b.w_ff2),
            ]);
        }
        out.push(("final_norm".into(), &self.ln_f));
        out.push(("head".into(), &self.w_head));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![("embed".into(), &mut self.embed)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |s: &str| format!("block{i}.{s}");
            out.extend([
                (p("ln1"), &mut b.ln1),
                (p("attn.w_q"), &mut b.attn.w_q),
                (p("attn.w_k"), &mut b.attn.w_k),
                (p("attn.w_v"), &mut b.attn.w_v),
                (p("attn.w_o"), &mut b.attn.w_o),
                (p("lambda.w_d"), &mut b.attn.lambda.w_d),
                (p("lambda.w_1"), &mut b.attn.lambda.w_1),
                (p("lambda.w_2"), &mut b.attn.lambda.w_2),
                (p("lambda.bias"), &mut b.attn.lambda.bias),
                (p("ln2"), &mut b.ln2),
                (p("ffn.w_1"), &mut b.w_ff1),
                (p("ffn.w_2"), &mut b.w_ff2),
            ]);
        }
        out.push(("final_norm".into(), &mut self.ln_f));
        out.push(("head".into(), &mut self.w_head));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            embed: tape.leaf(&self.embed),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockVars {
                    ln1: tape.leaf(&b.ln1),
                    attn: b.attn.bind(tape),
                    ln2: tape.leaf(&b.ln2),
                    w_ff1: tape.leaf(&b.w_ff1),
                    w_ff2: tape.leaf(&b.w_ff2),
                })
                .collect(),
            ln_f: tape.leaf(&self.ln_f),
            w_head: tape.leaf(&self.w_head),
        }
    }

    /// Logits (T x vocab) for a token sequence. Fails on out-of-range ids
    /// (with the offending position) and on T > t_max.
    pub fn forward(&self, tape: &mut Tape, tokens: &[usize]) -> Result<Var> {
        let vars = self.bind(tape);
        self.forward_bound(tape, &vars, tokens, None)
    }

    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        tokens: &[usize],
        mut trace: Option<&mut ModelTrace>,
    ) -> Result<Var> {
        if tokens.len() > self.cfg.t_max {
            return Err(Error::SequenceTooLong {
                t: tokens.len(),
                t_max: self.cfg.t_max,
            });
        }
        let mut h = tape.embed(vars.embed, tokens)?;
        for (i, b) in self.blocks.iter().enumerate() {
            let n1 = tape.layer_norm(h, LN_EPS)?;
            let n1s = tape.mul_row_broadcast(n1, vars.blocks[i].ln1)?;
            let layer_trace = trace.as_deref_mut().map(|t| &mut t.layers[i]);
            let a = b
                .attn
                .forward_bound(tape, &vars.blocks[i].attn, n1s, layer_trace)?;
            h = tape.add(h, a)?;
            let n2 = tape.layer_norm(h, LN_EPS)?;
            let n2s = tape.mul_row_broadcast(n2, vars.blocks[i].ln2)?;
            let f1 = tape.matmul(n2s, vars.blocks[i].w_ff1)?;
            let f1a = tape.gelu(f1)?;
            let f2 = tape.matmul(f1a, vars.blocks[i].w_ff2)?;
            h = tape.add(h, f2)?;
        }
        let nf = tape.layer_norm(h, LN_EPS)?;
        let nfs = tape.mul_row_broadcast(nf, vars.ln_f)?;
        tape.matmul(nfs, vars.w_head)
    }

    /// Run a traced forward on a scratch tape and return the per-layer
    /// lambda values and active-level indicators.
    pub fn lambda_trace(&self, tokens: &[usize]) -> Result<ModelTrace> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let mut trace = self.new_trace(tokens.len());
        self.forward_bound(&mut tape, &vars, tokens, Some(&mut trace))?;
        Ok(trace)
    }

    pub fn new_trace(&self, t: usize) -> ModelTrace {
        ModelTrace {
            layers: (0..self.cfg.n_layers)
                .map(|_| LayerTrace::new_for(t, self.cfg.heads, self.cfg.levels()))
                .collect(),
        }
    }
}

// ── parameter accounting (exact integers) ───────────────────────────────

/// Shape description for the overhead audit. Unlike `ModelConfig` this does
/// not require heads * d_head == d_model, so configurations quoted with a
/// narrower attention width than the residual stream can still be audited.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub vocab_size: u64,
    pub d_model: u64,
    pub n_layers: u64,
    pub heads: u64,
    pub d_head: u64,
    pub t_max: u64,
    pub d_h: u64,
    #[serde(default = "default_ffn_mult_u64")]
    pub ffn_mult: u64,
}

fn default_ffn_mult_u64() -> u64 {
    4
}

impl AuditConfig {
    pub fn levels(&self) -> u64 {
        fenwick::max_levels(self.t_max as usize) as u64
    }

    pub fn from_model(cfg: &ModelConfig) -> Self {
        AuditConfig {
            vocab_size: cfg.vocab_size as u64,
            d_model: cfg.d_model as u64,
            n_layers: cfg.n_layers as u64,
            heads: cfg.heads as u64,
            d_head: cfg.d_head as u64,
            t_max: cfg.t_max as u64,
            d_h: cfg.d_h as u64,
            ffn_mult: cfg.ffn_mult as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub embed: u64,
    pub attn_proj: u64,
    pub lambda_proj: u64,
    pub lambda_mlp: u64,
    pub norms: u64,
    pub ffn: u64,
    pub head: u64,
    pub total: u64,
}

pub fn param_counts(a: &AuditConfig) -> ParamCounts {
    let l = a.levels();
    let attn_width = a.heads * a.d_head;
    let embed = a.vocab_size * a.d_model;
    let attn_proj = a.n_layers * (3 * a.d_model * attn_width + attn_width * a.d_model);
    let lambda_proj = a.n_layers * a.d_model * (a.heads * l);
    let lambda_mlp = a.n_layers * (2 * l * a.d_h + 1);
    let norms = a.n_layers * 2 * a.d_model + a.d_model;
    let ffn = a.n_layers * 2 * a.d_model * (a.ffn_mult * a.d_model);
    let head = a.d_model * a.vocab_size;
    let total = embed + attn_proj + lambda_proj + lambda_mlp + norms + ffn + head;
    ParamCounts {
        embed,
        attn_proj,
        lambda_proj,
        lambda_mlp,
        norms,
        ffn,
        head,
        total,
    }
}

/// Fraction of model parameters taken by the lambda MLP head (W_1, W_2, b
/// summed over layers), computed in exact integer arithmetic before the
/// single final division.
pub fn lambda_overhead(a: &AuditConfig) -> Result<f64> {
    if a.d_h == 0 {
        return Err(Error::InvalidConfig("d_h must be >= 1".into()));
    }
    let c = param_counts(a);
    Ok(c.lambda_mlp as f64 / c.total as f64)
}
