//! Command-line dispatch. Exit codes: 0 success, 1 runtime failure, 2 usage
//! error.

use crate::presets;
use crate::viz::{self, HeadSel, HeatmapSpec, View};
use clap::{Args, Parser, Subcommand};
use loglin_core::error::{Error, Result};
use loglin_core::gradcheck::grad_check;
use loglin_core::harness::{
    self, evaluate, sweep, write_sweep_csv, RunConfig, RunResult, TaskConfig,
};
use loglin_core::lambda::LambdaMode;
use loglin_core::model::{lambda_overhead, param_counts, Model, ModelTrace};
use loglin_core::rng::mix_seed;
use loglin_core::tape::Tape;
use loglin_core::tasks::{dump_batch_jsonl, percent};
use loglin_core::tensor::Tensor;
use loglin_core::{checkpoint, Error as CoreError};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "loglin",
    version,
    about = "Log-linear attention lab: train, sweep, verify and visualize lambda weighting",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run config across its seeds and write metrics + checkpoints
    Train(TrainArgs),
    /// Run the {lambda mode} x {task setting} x {seed} cross product
    Sweep(SweepArgs),
    /// Evaluate a checkpoint on its task (optionally at a longer sequence)
    Eval(EvalArgs),
    /// Finite-difference gradient verification of the full model
    Gradcheck(GradcheckArgs),
    /// Exact-integer lambda parameter overhead report
    ParamAudit(ParamAuditArgs),
    /// Export lambda heatmaps (CSV + portable pixmap) from checkpoints
    VizLambda(VizLambdaArgs),
    /// Dump generated task batches as line-delimited JSON
    GenData(GenDataArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a JSON run config (strict: unknown keys are rejected)
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset; see `--preset list`
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            let cfg: RunConfig = serde_json::from_str(&text)?;
            cfg.validate()?;
            return Ok(cfg);
        }
        match self.preset.as_deref() {
            Some("list") | None => Err(Error::InvalidConfig(format!(
                "pass --config <path> or --preset <name>; presets: {}",
                presets::RUN_PRESETS.join(", ")
            ))),
            Some(name) => presets::run_preset(name).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown preset `{name}`; presets: {}",
                    presets::RUN_PRESETS.join(", ")
                ))
            }),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Train only this seed instead of the config's seed list
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "LOGLIN_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Lambda modes to sweep
    #[arg(long, value_delimiter = ',', default_values = ["baseline", "mlp_softplus", "mlp_softmax"])]
    modes: Vec<LambdaMode>,
    /// MQAR: sweep these kv-pair counts as task settings
    #[arg(long, value_delimiter = ',')]
    k_list: Vec<usize>,
    /// Sweep these sequence lengths as task settings
    #[arg(long, value_delimiter = ',')]
    t_list: Vec<usize>,
    #[arg(long, env = "LOGLIN_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate at this sequence length instead of the training length
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long, default_value_t = 0xE7A1)]
    eval_seed: u64,
    #[arg(long, default_value_t = 16)]
    batches: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model shape preset (currently: tiny)
    #[arg(long, default_value = "tiny")]
    preset: String,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct ParamAuditArgs {
    /// Audit shape preset: lm512 | lm256
    #[arg(long, default_value = "lm512")]
    preset: String,
}

#[derive(Args)]
struct VizLambdaArgs {
    /// One checkpoint (token_level / averaged) or several (seed_comparison)
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Head index or `avg`
    #[arg(long, default_value = "0")]
    head: HeadSel,
    /// token_level | averaged | seed_comparison
    #[arg(long, default_value = "token_level")]
    view: View,
    /// Batch sample index for the token-level view
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Seed for the probe batch
    #[arg(long, default_value_t = 0xB47C)]
    batch_seed: u64,
    /// Samples averaged by the averaged / seed_comparison views
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, env = "LOGLIN_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of sequences to emit
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Output file (JSONL)
    #[arg(long)]
    out: PathBuf,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::ParamAudit(args) => cmd_param_audit(args),
        Command::VizLambda(args) => cmd_viz(args),
        Command::GenData(args) => cmd_gen_data(args),
    }
}

fn run_dir(out_dir: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    out_dir.join(format!(
        "{}-{}-{}-seed{}",
        cfg.task.name(),
        cfg.task.label(),
        cfg.model.lambda_mode,
        seed
    ))
}

/// Write metrics.jsonl and checkpoint.bin for one finished run.
pub fn write_run_artifacts(out_dir: &Path, cfg: &RunConfig, result: &RunResult) -> Result<()> {
    let dir = run_dir(out_dir, cfg, result.seed);
    std::fs::create_dir_all(&dir)?;
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.jsonl"))?);
    result.metrics.write_jsonl(&mut metrics)?;
    std::io::Write::flush(&mut metrics)?;
    let extra = serde_json::json!({ "run": cfg, "seed": result.seed });
    checkpoint::save(&dir.join("checkpoint.bin"), &result.model, &extra)?;
    Ok(())
}

fn report_run(cfg: &RunConfig, result: &RunResult) {
    let status = if result.collapsed {
        format!(
            " COLLAPSED at step {}",
            result.metrics.collapsed.as_ref().map(|c| c.step).unwrap_or(0)
        )
    } else {
        String::new()
    };
    println!(
        "{} {} mode={} seed={}: final {}% best {}%{}",
        cfg.task.name(),
        cfg.task.label(),
        cfg.model.lambda_mode,
        result.seed,
        percent(result.final_accuracy),
        percent(result.best_accuracy),
        status
    );
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.source.load()?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    for &seed in &cfg.seeds.clone() {
        let result = harness::train(&cfg, seed)?;
        write_run_artifacts(&args.out_dir, &cfg, &result)?;
        report_run(&cfg, &result);
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = args.source.load()?;
    let mut settings: Vec<(String, TaskConfig)> = Vec::new();
    if !args.k_list.is_empty() {
        match base.task {
            TaskConfig::Mqar(c) => {
                for &k in &args.k_list {
                    let mut task = c;
                    task.num_pairs = k;
                    let t = TaskConfig::Mqar(task);
                    settings.push((t.label(), t));
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "--k-list applies to MQAR configs only".into(),
                ))
            }
        }
    }
    for &t in &args.t_list {
        let task = base.task.with_seq_len(t);
        settings.push((task.label(), task));
    }
    if settings.is_empty() {
        settings.push((base.task.label(), base.task));
    }
    let out_dir = args.out_dir.clone();
    let outcome = sweep(&base, &args.modes, &settings, |cfg, result| {
        write_run_artifacts(&out_dir, cfg, result)?;
        report_run(cfg, result);
        Ok(())
    })?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(args.out_dir.join("summary.csv"))?);
    write_sweep_csv(&mut csv, &outcome)?;
    std::io::Write::flush(&mut csv)?;
    for cell in &outcome.cells {
        println!(
            "cell {} {} {}: mean {}% std {:.1} peak {}%",
            cell.mode,
            cell.task,
            cell.setting,
            percent(cell.mean),
            cell.std * 100.0,
            percent(cell.peak)
        );
    }
    println!("summary written to {}", args.out_dir.join("summary.csv").display());
    Ok(())
}

/// Pull the run config back out of a checkpoint's metadata blob.
pub fn run_config_from_extra(extra: &serde_json::Value) -> Result<(RunConfig, u64)> {
    let run: RunConfig = serde_json::from_value(
        extra
            .get("run")
            .cloned()
            .ok_or_else(|| CoreError::Checkpoint("checkpoint lacks a run config echo".into()))?,
    )?;
    let seed = extra.get("seed").and_then(|s| s.as_u64()).unwrap_or(0);
    Ok((run, seed))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, extra) = checkpoint::load(&args.checkpoint)?;
    let (run, _) = run_config_from_extra(&extra)?;
    let task = match args.seq_len {
        Some(t) => run.task.with_seq_len(t),
        None => run.task,
    };
    let acc = evaluate(&model, &task, args.eval_seed, args.batches, args.batch_size)?;
    println!(
        "{} {}: accuracy {}% over {} sequences",
        task.name(),
        task.label(),
        percent(acc),
        args.batches * args.batch_size
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    if args.preset != "tiny" {
        return Err(Error::InvalidConfig(format!(
            "unknown gradcheck preset `{}` (have: tiny)",
            args.preset
        )));
    }
    let mut worst: f64 = 0.0;
    for mode in [
        LambdaMode::Baseline,
        LambdaMode::MlpSoftplus,
        LambdaMode::MlpSoftmax,
    ] {
        let report = model_gradcheck(mode, args.eps, args.tol)?;
        println!(
            "gradcheck mode={mode}: max rel err {:.3e} ({})",
            report.max_rel_err,
            if report.passed() { "pass" } else { "FAIL" }
        );
        worst = worst.max(report.max_rel_err);
        if !report.passed() {
            return Err(Error::InvalidConfig(format!(
                "gradient check failed for mode {mode}: {:.3e} >= {:.0e}",
                report.max_rel_err, args.tol
            )));
        }
    }
    println!("gradcheck: all modes pass (worst {:.3e})", worst);
    Ok(())
}

/// Full-model gradient check on the tiny preset shape: every parameter of a
/// jittered 2-layer model against central finite differences.
pub fn model_gradcheck(
    mode: LambdaMode,
    eps: f64,
    tol: f64,
) -> Result<loglin_core::gradcheck::GradCheckReport> {
    use rand::Rng;
    let cfg = presets::gradcheck_model(mode);
    let mut model = Model::build(&cfg)?;
    let mut rng = loglin_core::rng::stream_rng(0x6C5A, 0);
    for (_, t) in model.named_params_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let tokens: Vec<usize> = (0..8).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
    let targets: Vec<usize> = (0..8).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
    let mask = [true, false, true, true, true, false, true, true];

    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    let mut params: Vec<Tensor> = model
        .named_params()
        .iter()
        .map(|(_, t)| (*t).clone())
        .collect();
    let run = |ps: &[Tensor], want: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut m = model.clone();
        for ((_, slot), src) in m.named_params_mut().into_iter().zip(ps.iter()) {
            *slot = src.clone();
        }
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let logits = m.forward_bound(&mut tape, &vars, &tokens, None)?;
        let loss = tape.cross_entropy(logits, &targets, &mask)?;
        let value = tape.value(loss);
        if !want {
            return Ok((value, vec![]));
        }
        tape.backward(loss)?;
        let grads = vars
            .ordered()
            .iter()
            .map(|v| {
                tape.grad(*v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.data(*v).len()])
            })
            .collect();
        Ok((value, grads))
    };
    grad_check(
        &mut params,
        &names,
        |ps| run(ps, false).map(|r| r.0),
        |ps| run(ps, true).map(|r| r.1),
        eps,
        tol,
    )
}

fn cmd_param_audit(args: ParamAuditArgs) -> Result<()> {
    let base = presets::audit_preset(&args.preset).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown audit preset `{}`; presets: {}",
            args.preset,
            presets::AUDIT_PRESETS.join(", ")
        ))
    })?;
    let levels = base.levels();
    println!(
        "audit {}: vocab {} d_model {} layers {} heads {} d_head {} t_max {} (levels {})",
        args.preset,
        base.vocab_size,
        base.d_model,
        base.n_layers,
        base.heads,
        base.d_head,
        base.t_max,
        levels
    );
    let mut results = Vec::new();
    for (label, d_h) in [("2L", 2 * levels), ("64", 64)] {
        let mut cfg = base.clone();
        cfg.d_h = d_h;
        let counts = param_counts(&cfg);
        let frac = lambda_overhead(&cfg)?;
        println!(
            "  d_h={d_h} ({label}): lambda-MLP params {} / total {} = {:.6e} ({:.5}%)",
            counts.lambda_mlp,
            counts.total,
            frac,
            frac * 100.0
        );
        results.push((label, frac));
    }
    let bound = 7e-5;
    let frac_2l = results[0].1;
    if frac_2l >= bound {
        return Err(Error::InvalidConfig(format!(
            "overhead bound violated: {frac_2l:.3e} >= {bound:.0e} at d_h=2L"
        )));
    }
    println!("  bound check: {frac_2l:.3e} < {bound:.0e} at d_h=2L (pass)");
    Ok(())
}

/// Lambda traces for the first `samples` sequences of a probe batch.
pub fn probe_traces(
    model: &Model,
    task: &TaskConfig,
    batch_seed: u64,
    samples: usize,
) -> Result<Vec<ModelTrace>> {
    let batch = task.generate(mix_seed(batch_seed, 0xB00), samples)?;
    let mut traces = Vec::with_capacity(samples);
    for inputs in &batch.inputs {
        traces.push(model.lambda_trace(inputs)?);
    }
    Ok(traces)
}

fn cmd_viz(args: VizLambdaArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let spec = HeatmapSpec {
        layer: args.layer,
        head: args.head,
        view: args.view,
        sample: args.sample,
    };
    match args.view {
        View::TokenLevel | View::Averaged => {
            if args.checkpoint.len() != 1 {
                return Err(Error::InvalidConfig(
                    "token_level / averaged views take exactly one --checkpoint".into(),
                ));
            }
            let (model, extra) = checkpoint::load(&args.checkpoint[0])?;
            let (run, _) = run_config_from_extra(&extra)?;
            match args.view {
                View::TokenLevel => {
                    let traces =
                        probe_traces(&model, &run.task, args.batch_seed, args.sample + 1)?;
                    let trace = &traces[args.sample];
                    let rows = viz::lambda_rows(&model, trace, &spec)?;
                    let head_tag = match spec.head {
                        HeadSel::Index(h) => h.to_string(),
                        HeadSel::Averaged => "avg".into(),
                    };
                    let stem = format!("lambda_token_layer{}_head{}", spec.layer, head_tag);
                    let csv_path = args.out_dir.join(format!("{stem}.csv"));
                    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
                    viz::write_lambda_csv(&mut csv, &rows)?;
                    std::io::Write::flush(&mut csv)?;
                    let boundary = match run.task {
                        TaskConfig::SelectiveCopy(c) => Some(c.seq_len - c.num_targets),
                        TaskConfig::Mqar(_) => None,
                    };
                    let ppm_path = args.out_dir.join(format!("{stem}.ppm"));
                    let levels = model.cfg.levels();
                    let positions = trace.layers[spec.layer].t;
                    viz::render_heatmap(&rows, levels, positions, &ppm_path, boundary)?;
                    println!("wrote {} and {}", csv_path.display(), ppm_path.display());
                }
                View::Averaged => {
                    let traces = probe_traces(&model, &run.task, args.batch_seed, args.samples)?;
                    let profile = viz::mean_profile(&model, &traces);
                    let csv_path = args.out_dir.join("lambda_averaged.csv");
                    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
                    viz::write_profile_csv(&mut csv, &profile)?;
                    std::io::Write::flush(&mut csv)?;
                    println!("wrote {}", csv_path.display());
                }
                View::SeedComparison => unreachable!(),
            }
        }
        View::SeedComparison => {
            if args.checkpoint.len() < 2 {
                return Err(Error::InvalidConfig(
                    "seed_comparison needs at least two --checkpoint paths".into(),
                ));
            }
            let mut profiles = Vec::new();
            let mut reference: Option<RunConfig> = None;
            for path in &args.checkpoint {
                let (model, extra) = checkpoint::load(path)?;
                let (run, seed) = run_config_from_extra(&extra)?;
                match &reference {
                    None => reference = Some(run.clone()),
                    Some(r) if *r == run => {}
                    Some(_) => {
                        return Err(Error::InvalidConfig(format!(
                            "checkpoint {} has a different run config",
                            path.display()
                        )))
                    }
                }
                let traces = probe_traces(&model, &run.task, args.batch_seed, args.samples)?;
                profiles.push((seed, viz::mean_profile(&model, &traces)));
            }
            let csv_path = args.out_dir.join("lambda_seed_comparison.csv");
            let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
            viz::write_seed_comparison_csv(&mut csv, &profiles)?;
            std::io::Write::flush(&mut csv)?;
            println!("wrote {}", csv_path.display());
        }
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = args.source.load()?;
    let batch = cfg.task.generate(args.seed, args.n)?;
    let header = serde_json::json!({
        "task": cfg.task.name(),
        "config": cfg.task,
        "seed": args.seed,
        "sequences": args.n,
    });
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    dump_batch_jsonl(&mut out, &header, &batch)?;
    std::io::Write::flush(&mut out)?;
    println!("wrote {} sequences to {}", args.n, args.out.display());
    Ok(())
}
