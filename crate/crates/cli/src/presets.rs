//! Named run/audit configurations mirroring the experimental setups.

use loglin_core::harness::{RunConfig, TaskConfig};
use loglin_core::lambda::LambdaMode;
use loglin_core::model::{AuditConfig, ModelConfig};
use loglin_core::optim::OptimConfig;
use loglin_core::tasks::{MqarConfig, SelectiveCopyConfig};

fn task_model(
    vocab: usize,
    d_model: usize,
    heads: usize,
    t_max: usize,
    mode: LambdaMode,
) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model,
        n_layers: 2,
        heads,
        d_head: d_model / heads,
        t_max,
        lambda_mode: mode,
        d_h: 64,
        ffn_mult: 4,
        seed: 0,
    }
}

pub fn run_preset(name: &str) -> Option<RunConfig> {
    let cfg = match name {
        // Seconds; used for determinism checks and artifact plumbing.
        "smoke" => RunConfig {
            task: TaskConfig::Mqar(MqarConfig::new(16, 2)),
            model: ModelConfig {
                vocab_size: 128,
                d_model: 16,
                n_layers: 1,
                heads: 2,
                d_head: 8,
                t_max: 16,
                lambda_mode: LambdaMode::MlpSoftplus,
                d_h: 4,
                ffn_mult: 2,
                seed: 0,
            },
            optim: OptimConfig::adam(1e-3),
            steps: 3,
            batch: 4,
            eval_every: 2,
            eval_batches: 2,
            eval_batch_size: 4,
            seeds: vec![0],
        },
        // Small run that reliably learns the task.
        "mqar-k2-t32" => RunConfig {
            task: TaskConfig::Mqar(MqarConfig::new(32, 2)),
            model: task_model(128, 64, 2, 32, LambdaMode::MlpSoftplus),
            optim: OptimConfig::adam(1e-3),
            steps: 500,
            batch: 64,
            eval_every: 100,
            eval_batches: 16,
            eval_batch_size: 64,
            seeds: vec![0, 1, 2],
        },
        // Desk-scale cell: train at T=64, t_max 128 so the same model can be
        // evaluated at T=128 for length generalization.
        "mqar-desk" => RunConfig {
            task: TaskConfig::Mqar(MqarConfig::new(64, 8)),
            model: task_model(128, 64, 2, 128, LambdaMode::MlpSoftplus),
            optim: OptimConfig::adam(1e-3),
            steps: 2000,
            batch: 64,
            eval_every: 250,
            eval_batches: 16,
            eval_batch_size: 64,
            seeds: vec![0, 1, 2],
        },
        // Full-size task settings.
        "mqar-paper" => RunConfig {
            task: TaskConfig::Mqar(MqarConfig::new(128, 8)),
            model: task_model(128, 64, 2, 256, LambdaMode::MlpSoftplus),
            optim: OptimConfig::adam(1e-3),
            steps: 5000,
            batch: 64,
            eval_every: 500,
            eval_batches: 16,
            eval_batch_size: 64,
            seeds: vec![0, 1, 2, 3, 4],
        },
        "selcopy-tiny" => RunConfig {
            task: TaskConfig::SelectiveCopy(SelectiveCopyConfig::new(40)),
            model: task_model(64, 32, 2, 64, LambdaMode::MlpSoftplus),
            optim: OptimConfig::adam(1e-3),
            steps: 200,
            batch: 16,
            eval_every: 50,
            eval_batches: 4,
            eval_batch_size: 16,
            seeds: vec![0],
        },
        "selcopy-256" => RunConfig {
            task: TaskConfig::SelectiveCopy(SelectiveCopyConfig::new(256)),
            model: task_model(64, 64, 2, 256, LambdaMode::MlpSoftplus),
            optim: OptimConfig::adam(1e-3),
            steps: 30_000,
            batch: 64,
            eval_every: 1000,
            eval_batches: 16,
            eval_batch_size: 64,
            seeds: vec![0, 1, 2, 3, 4],
        },
        _ => return None,
    };
    Some(cfg)
}

/// Tiny model shape for the gradient-check suite.
pub fn gradcheck_model(mode: LambdaMode) -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_layers: 2,
        heads: 2,
        d_head: 4,
        t_max: 8,
        lambda_mode: mode,
        d_h: 5,
        ffn_mult: 4,
        seed: 7,
    }
}

/// Audit shapes for the parameter-overhead report. d_h is filled in by the
/// audit command (it reports both d_h = 2L and d_h = 64).
pub fn audit_preset(name: &str) -> Option<AuditConfig> {
    let cfg = match name {
        "lm512" => AuditConfig {
            vocab_size: 50257,
            d_model: 512,
            n_layers: 6,
            heads: 4,
            d_head: 64,
            t_max: 512,
            d_h: 0,
            ffn_mult: 4,
        },
        "lm256" => AuditConfig {
            vocab_size: 50257,
            d_model: 256,
            n_layers: 6,
            heads: 4,
            d_head: 64,
            t_max: 512,
            d_h: 0,
            ffn_mult: 4,
        },
        _ => return None,
    };
    Some(cfg)
}

pub const RUN_PRESETS: &[&str] = &[
    "smoke",
    "mqar-k2-t32",
    "mqar-desk",
    "mqar-paper",
    "selcopy-tiny",
    "selcopy-256",
];

pub const AUDIT_PRESETS: &[&str] = &["lm512", "lm256"];
