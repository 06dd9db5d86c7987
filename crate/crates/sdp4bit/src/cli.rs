use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sdp4bit_core::collectives::{
    exact_reduce_scatter, reduce_scatter, unshard, ClusterTopology, ReduceConfig,
};
use sdp4bit_core::compressors::{
    estimate_delta, estimate_kappa, Compressor, EstimatorBudget, InputDistribution,
};
use sdp4bit_core::costmodel::{comm_bits_per_param, ByteLedger};
use sdp4bit_core::exec::Executor;
use sdp4bit_core::quant::{quantize, Bits};
use sdp4bit_core::rng::{fill_spiky, stream, SeededRng};
use sdp4bit_core::train::{
    run_counterexample, train_run, CounterexampleMode, Optimizer, Strategy, StrategyParams,
    TaskKind, TaskSpec, TrainConfig, TrainTrace,
};
use sdp4bit_core::FlatTensor;

use crate::config::{ConfigFile, Resolver};
use crate::dump::write_dump;
use crate::error::{CliError, Result};
use crate::executor::ThreadedExecutor;
use crate::trace::{fmt_num, write_table, write_trace};

#[derive(Debug, Parser)]
#[command(
    name = "sdp4bit",
    version,
    about = "Compressed sharded data-parallel training on a simulated cluster"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one strategy and write a per-iteration trace.
    Train(TrainArgs),
    /// Train several strategies over several seeds and report loss gaps.
    Ablate(AblateArgs),
    /// Run the ternary-quantization counterexample.
    Counterexample(CounterexampleArgs),
    /// Estimate kappa / delta constants of a compressor.
    Certify(CertifyArgs),
    /// Compare reduce-scatter error across collective modes.
    ReduceBench(ReduceBenchArgs),
    /// Communication bits per parameter.
    CommCost(CommCostArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Plain-text key = value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Changes scheduling only, never results.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// linear_regression or tiny_mlp.
    #[arg(long)]
    task: Option<String>,
    #[arg(long = "P")]
    p: Option<usize>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    eta: Option<f32>,
    /// Heavy-ball momentum; plain SGD when absent.
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    grad_group: Option<usize>,
    #[arg(long)]
    weight_group: Option<usize>,
    #[arg(long)]
    hadamard_block: Option<usize>,
    #[arg(long)]
    scale_bits: Option<u32>,
    #[arg(long)]
    eval_interval: Option<usize>,
}

const MODEL_KEYS: [&str; 13] = [
    "task",
    "p",
    "n",
    "t",
    "eta",
    "momentum",
    "batch-size",
    "grad-group",
    "weight-group",
    "hadamard-block",
    "scale-bits",
    "eval-interval",
    "seed",
];

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// baseline, qW, qWD, ULq, TLq, TLq-HS or SDP4Bit.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated strategies, or `all` (the default). The baseline always runs.
    #[arg(long)]
    strategies: Option<String>,
    /// Number of seeds, starting at --seed.
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Debug, Args)]
struct CounterexampleArgs {
    #[command(flatten)]
    common: Common,
    /// none, qW or qWD.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    eta: Option<f32>,
    #[arg(long = "T")]
    t: Option<usize>,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// identity, nearest, stochastic, ternary or hadamard.
    #[arg(long)]
    compressor: Option<String>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    /// gaussian or spiky.
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    spike_prob: Option<f64>,
    #[arg(long)]
    spike_scale: Option<f32>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
}

#[derive(Debug, Args)]
struct ReduceBenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "P")]
    p: Option<usize>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    spike_prob: Option<f64>,
    #[arg(long)]
    spike_scale: Option<f32>,
    /// Write the first trial's 4-bit encoded rank gradients here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CommCostArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    scale_bits: Option<u32>,
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Errors are reported on stderr as `error kind=<kind> message="<text>"`.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Counterexample(a) => counterexample(a),
        Command::Certify(a) => certify(a),
        Command::ReduceBench(a) => reduce_bench(a),
        Command::CommCost(a) => comm_cost(a),
    }
}

fn load(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Sends CSV to `--out` (summary on stdout) or to stdout (summary on stderr).
fn emit(
    out: &Option<PathBuf>,
    write: impl FnOnce(&mut dyn Write) -> Result<()>,
    summary: &str,
) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(CliError::io(path.display().to_string()))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush()
                .map_err(CliError::io(path.display().to_string()))?;
            println!("{summary}");
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn executor(threads: usize) -> Result<ThreadedExecutor> {
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    ThreadedExecutor::new(threads).map_err(|e| usage(format!("thread pool: {e}")))
}

struct ModelSetup {
    base: TaskSpec,
    per_node: usize,
    iters: usize,
    eval_interval: usize,
    params: StrategyParams,
}

fn resolve_model(r: &mut Resolver, m: ModelArgs, seed: u64) -> Result<ModelSetup> {
    let task = r.or("task", m.task, "tiny_mlp".to_string())?;
    let p = r.or("p", m.p, 16)?;
    let n = r.or("n", m.n, 4.min(p.max(1)))?;
    let iters = r.or("t", m.t, 2000)?;
    let eta = r.or("eta", m.eta, 0.02)?;
    let momentum = r.optional("momentum", m.momentum)?;
    let mut base = match task.as_str() {
        "tiny_mlp" => TaskSpec::tiny_mlp(p, seed),
        "linear_regression" => TaskSpec::linear_regression(p, seed),
        other => return Err(usage(format!("unknown task {other}"))),
    };
    base.batch_size = r.or("batch-size", m.batch_size, base.batch_size)?;
    let d = StrategyParams::default();
    let params = StrategyParams {
        eta,
        optimizer: momentum.map_or(Optimizer::Sgd, |beta| Optimizer::Momentum { beta }),
        grad_group: r.or("grad-group", m.grad_group, d.grad_group)?,
        weight_group: r.or("weight-group", m.weight_group, d.weight_group)?,
        hadamard_block: r.or("hadamard-block", m.hadamard_block, d.hadamard_block)?,
        scale_bits: r.or("scale-bits", m.scale_bits, d.scale_bits)?,
        ..d
    };
    let eval_interval = r.or("eval-interval", m.eval_interval, 100)?;
    Ok(ModelSetup {
        base,
        per_node: n,
        iters,
        eval_interval,
        params,
    })
}

impl ModelSetup {
    fn config(&self, strategy: Strategy, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            task: TaskSpec {
                seed,
                ..self.base.clone()
            },
            per_node: self.per_node,
            iters: self.iters,
            eval_interval: self.eval_interval,
            sharded: strategy.config(&self.params)?,
        })
    }
}

fn task_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::CounterexampleLs => "counterexample_ls",
        TaskKind::LinearRegression => "linear_regression",
        TaskKind::TinyMlp => "tiny_mlp",
    }
}

fn stanza(command: &str, r: Resolver) -> BTreeMap<String, String> {
    let mut s = r.resolved;
    s.insert("command".into(), command.into());
    s
}

fn train(a: TrainArgs) -> Result<()> {
    let file = load(&a.common.config)?;
    let mut r = Resolver::new(&file);
    let seed = r.required("seed", a.common.seed)?;
    let strategy: Strategy = r.or("strategy", a.strategy, "SDP4Bit".into())?.parse()?;
    r.resolved.insert("strategy".into(), strategy.name().into());
    let setup = resolve_model(&mut r, a.model, seed)?;
    let mut keys = MODEL_KEYS.to_vec();
    keys.push("strategy");
    r.finish(&keys)?;
    let exec = executor(a.common.threads)?;
    let trace = train_run(&setup.config(strategy, seed)?, &exec)?;
    let summary = format!(
        "strategy={} task={} final_val_loss={} final_train_loss={} intra_bytes={} inter_bytes={} diverged={}",
        strategy,
        task_name(setup.base.kind),
        fmt_num(trace.final_val_loss),
        fmt_num(trace.final_train_loss),
        trace.ledger.intra_bytes,
        trace.ledger.inter_bytes,
        trace.diverged_at.is_some(),
    );
    let st = stanza("train", r);
    emit(&a.common.out, |w| write_trace(w, &st, &trace), &summary)?;
    match trace.diverged_at {
        Some(iter) => Err(CliError::Diverged { iter }),
        None => Ok(()),
    }
}

fn gap(value: f64, base: f64) -> f64 {
    (value - base) / base
}

fn ablate(a: AblateArgs) -> Result<()> {
    let file = load(&a.common.config)?;
    let mut r = Resolver::new(&file);
    let seed = r.required("seed", a.common.seed)?;
    let seeds = r.or("seeds", a.seeds, 3)?;
    let list = r.or("strategies", a.strategies, "all".to_string())?;
    let mut strategies = vec![Strategy::Baseline];
    if list.eq_ignore_ascii_case("all") {
        strategies.extend(Strategy::ALL.into_iter().skip(1));
    } else {
        for name in list.split(',').map(str::trim) {
            let s: Strategy = name.parse()?;
            if !strategies.contains(&s) {
                strategies.push(s);
            }
        }
    }
    let setup = resolve_model(&mut r, a.model, seed)?;
    let mut keys = MODEL_KEYS.to_vec();
    keys.extend(["seeds", "strategies"]);
    r.finish(&keys)?;
    let exec = executor(a.common.threads)?;

    let mut rows = Vec::new();
    let mut means: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let mut diverged = None;
    for s in seed..seed + seeds {
        let mut base: Option<TrainTrace> = None;
        for &strategy in &strategies {
            let trace = train_run(&setup.config(strategy, s)?, &exec)?;
            let b = base.get_or_insert_with(|| trace.clone());
            let (gt, gv) = (
                gap(trace.final_train_loss, b.final_train_loss),
                gap(trace.final_val_loss, b.final_val_loss),
            );
            let e = means.entry(strategy.name()).or_insert((0.0, 0.0, 0));
            *e = (e.0 + gt, e.1 + gv, e.2 + 1);
            diverged = diverged.or(trace.diverged_at);
            rows.push(vec![
                strategy.name().to_string(),
                s.to_string(),
                fmt_num(trace.final_train_loss),
                fmt_num(trace.final_val_loss),
                fmt_num(gt),
                fmt_num(gv),
                trace.ledger.intra_bytes.to_string(),
                trace.ledger.inter_bytes.to_string(),
                trace.diverged_at.is_some().to_string(),
            ]);
        }
    }
    let summary = strategies
        .iter()
        .map(|s| {
            let (gt, gv, n) = means[s.name()];
            format!(
                "{}: train_gap={} val_gap={}",
                s,
                fmt_num(gt / n as f64),
                fmt_num(gv / n as f64)
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let header = [
        "strategy",
        "seed",
        "final_train_loss",
        "final_val_loss",
        "train_gap",
        "val_gap",
        "intra_bytes",
        "inter_bytes",
        "diverged",
    ];
    let st = stanza("ablate", r);
    emit(
        &a.common.out,
        |w| write_table(w, "sdp4bit-ablate v1", &st, &header, rows),
        &summary,
    )?;
    match diverged {
        Some(iter) => Err(CliError::Diverged { iter }),
        None => Ok(()),
    }
}

fn counterexample(a: CounterexampleArgs) -> Result<()> {
    let file = load(&a.common.config)?;
    let mut r = Resolver::new(&file);
    let seed = r.required("seed", a.common.seed)?;
    let mode_name = r.or("mode", a.mode, "qW".to_string())?;
    let mode = match mode_name.to_ascii_lowercase().as_str() {
        "none" => CounterexampleMode::None,
        "qw" => CounterexampleMode::QW,
        "qwd" => CounterexampleMode::QWD,
        _ => return Err(usage(format!("unknown counterexample mode {mode_name}"))),
    };
    let eta = r.or("eta", a.eta, 0.1)?;
    let iters = r.or("t", a.t, 1000)?;
    r.finish(&["seed", "mode", "eta", "t"])?;
    let run = run_counterexample(mode, eta, iters, seed)?;
    let summary = format!(
        "mode={} final_w=({}, {}) norm={} stuck={}",
        mode_name,
        run.w_model[0],
        run.w_model[1],
        fmt_num(f64::from(run.w_model[0]).hypot(f64::from(run.w_model[1]))),
        run.stuck
    );
    let rows = run.trajectory.iter().enumerate().map(|(i, w)| {
        vec![
            (i + 1).to_string(),
            fmt_num(f64::from(w[0])),
            fmt_num(f64::from(w[1])),
        ]
    });
    let st = stanza("counterexample", r);
    emit(
        &a.common.out,
        |w| {
            write_table(
                w,
                "sdp4bit-counterexample v1",
                &st,
                &["iter", "w1", "w2"],
                rows,
            )
        },
        &summary,
    )
}

fn certify(a: CertifyArgs) -> Result<()> {
    let file = load(&a.common.config)?;
    let mut r = Resolver::new(&file);
    let seed = r.required("seed", a.common.seed)?;
    let name = r.or("compressor", a.compressor, "stochastic".to_string())?;
    let k = r.or("k", a.k, 4)?;
    let group = r.or("group", a.group, 128)?;
    let block = r.or("block", a.block, 32)?;
    let dist_name = r.or("dist", a.dist, "gaussian".to_string())?;
    let dim = r.or("dim", a.dim, 1024)?;
    let spike_prob = r.or("spike-prob", a.spike_prob, 0.01)?;
    let spike_scale = r.or("spike-scale", a.spike_scale, 50.0)?;
    let samples = r.or("samples", a.samples, 100)?;
    let resamples = r.or("resamples", a.resamples, 100)?;
    r.finish(&[
        "seed",
        "compressor",
        "k",
        "group",
        "block",
        "dist",
        "dim",
        "spike-prob",
        "spike-scale",
        "samples",
        "resamples",
    ])?;
    let c = match name.as_str() {
        "identity" => Compressor::Identity,
        "nearest" => Compressor::nearest(k, group)?,
        "stochastic" => Compressor::stochastic(k, group, 0)?,
        "ternary" => Compressor::TernaryNearest,
        "hadamard" => Compressor::hadamard_nearest(k, group, block)?,
        other => return Err(usage(format!("unknown compressor {other}"))),
    };
    let dist = match dist_name.as_str() {
        "gaussian" => InputDistribution::Gaussian { dim },
        "spiky" => InputDistribution::Spiky {
            dim,
            spike_prob,
            spike_scale,
        },
        other => return Err(usage(format!("unknown distribution {other}"))),
    };
    let budget = EstimatorBudget { samples, resamples };
    let rng = SeededRng::new(seed);
    let stats = if c.is_unbiased() {
        estimate_kappa(&c, &dist, budget, &rng)?
    } else {
        estimate_delta(&c, &dist, budget, &rng)?
    };
    let kappa = if c.is_unbiased() {
        fmt_num(stats.kappa_hat)
    } else {
        String::new()
    };
    let summary = format!(
        "compressor={} kappa_hat={} delta_hat={} bias_norm={} bias_z={} max_ratio={} trials={}",
        name,
        if kappa.is_empty() { "n/a" } else { &kappa },
        fmt_num(stats.delta_hat),
        fmt_num(stats.bias_norm),
        fmt_num(stats.bias_z),
        fmt_num(stats.max_ratio),
        stats.trials
    );
    let row = vec![
        name.clone(),
        kappa,
        fmt_num(stats.delta_hat),
        fmt_num(stats.bias_norm),
        fmt_num(stats.bias_z),
        fmt_num(stats.max_ratio),
        stats.trials.to_string(),
    ];
    let header = [
        "compressor",
        "kappa_hat",
        "delta_hat",
        "bias_norm",
        "bias_z",
        "max_ratio",
        "trials",
    ];
    let st = stanza("certify", r);
    emit(
        &a.common.out,
        |w| write_table(w, "sdp4bit-certify v1", &st, &header, [row]),
        &summary,
    )
}

/// Per-rank spiky gradients for one benchmark trial.
pub fn bench_gradients(
    seed: u64,
    trial: usize,
    workers: usize,
    dim: usize,
    prob: f64,
    scale: f32,
) -> Vec<FlatTensor> {
    let root = SeededRng::new(seed)
        .derive(stream::DATA)
        .derive(trial as u64);
    (0..workers)
        .map(|p| fill_spiky(&mut root.derive(p as u64), dim, prob, scale))
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn reduce_bench(a: ReduceBenchArgs) -> Result<()> {
    let file = load(&a.common.config)?;
    let mut r = Resolver::new(&file);
    let seed = r.required("seed", a.common.seed)?;
    let p = r.or("p", a.p, 16)?;
    let n = r.or("n", a.n, 4.min(p.max(1)))?;
    let group = r.or("group", a.group, 128)?;
    let block = r.or("block", a.block, 32)?;
    let dim = r.or("dim", a.dim, 4096)?;
    let trials = r.or("trials", a.trials, 100)?;
    let prob = r.or("spike-prob", a.spike_prob, 0.01)?;
    let scale = r.or("spike-scale", a.spike_scale, 50.0)?;
    r.finish(&[
        "seed",
        "p",
        "n",
        "group",
        "block",
        "dim",
        "trials",
        "spike-prob",
        "spike-scale",
    ])?;
    let topo = ClusterTopology::new(p, n)?;
    let modes = [
        ("ring4", ReduceConfig::ring(Some(Bits::Four), group)),
        ("ULq", ReduceConfig::ulq(group)),
        ("TLq", ReduceConfig::tlq(group)),
        ("TLq-HS", ReduceConfig::tlq_hs(group, block)?),
    ];
    for (_, cfg) in &modes {
        if dim % cfg.alignment(&topo) != 0 {
            return Err(usage(format!(
                "--dim must be a multiple of {}",
                cfg.alignment(&topo)
            )));
        }
    }
    if let Some(path) = &a.dump {
        let grads = bench_gradients(seed, 0, p, dim, prob, scale);
        let chunks = grads
            .iter()
            .map(|g| quantize(g, Bits::Four, group))
            .collect::<Result<Vec<_>, _>>()?;
        write_dump(path, &chunks)?;
    }
    let exec = executor(a.common.threads)?;
    let per_trial: Vec<Result<Vec<f64>>> = exec.map_ranks(trials, |t| {
        let grads = bench_gradients(seed, t, p, dim, prob, scale);
        let exact = unshard(&exact_reduce_scatter(&topo, &grads)?, dim);
        modes
            .iter()
            .map(|(_, cfg)| {
                let out = unshard(
                    &reduce_scatter(&topo, &grads, cfg, &mut ByteLedger::new())?,
                    dim,
                );
                Ok(out.distance(&exact))
            })
            .collect()
    });
    let mut errors = vec![Vec::with_capacity(trials); modes.len()];
    let mut rows = Vec::new();
    for (t, res) in per_trial.into_iter().enumerate() {
        for (m, e) in res?.into_iter().enumerate() {
            rows.push(vec![t.to_string(), modes[m].0.to_string(), fmt_num(e)]);
            errors[m].push(e);
        }
    }
    let summary = modes
        .iter()
        .zip(errors.iter_mut())
        .map(|((name, _), e)| format!("{name}={}", fmt_num(median(e))))
        .collect::<Vec<_>>()
        .join(" ");
    let summary = format!("median_error {summary}");
    let st = stanza("reduce-bench", r);
    emit(
        &a.common.out,
        |w| {
            write_table(
                w,
                "sdp4bit-reduce-bench v1",
                &st,
                &["trial", "mode", "error"],
                rows,
            )
        },
        &summary,
    )
}

fn comm_cost(a: CommCostArgs) -> Result<()> {
    let file = load(&a.config)?;
    let mut r = Resolver::new(&file);
    let k = r.or("k", a.k, 4)?;
    let group = r.or("group", a.group, 128)?;
    let scale_bits = r.or("scale-bits", a.scale_bits, 32)?;
    r.finish(&["k", "group", "scale-bits"])?;
    let bits = comm_bits_per_param(Bits::from_u32(k)?, group, scale_bits)?;
    println!("{bits}");
    Ok(())
}
