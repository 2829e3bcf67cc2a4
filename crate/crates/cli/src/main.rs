//! `plda-adapt` command-line front end.
//!
//! Exit codes: 0 success, 1 benchmark direction check failed, 2 invalid
//! configuration or arguments, 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use plda_adapt::adapt::{self, AdaptPlan, Method};
use plda_adapt::bench::{self, BenchConfig, HeavyTailConfig};
use plda_adapt::dataset::EmbeddingSet;
use plda_adapt::eval::{self, TrialSet};
use plda_adapt::gplda;
use plda_adapt::htplda::{self, DEFAULT_NU};
use plda_adapt::io::{self, Model};
use plda_adapt::pipeline::{self, Backend, ExperimentConfig};
use plda_adapt::synth::{self, DomainSpec};
use plda_adapt::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "plda-adapt", version, about = "PLDA back-end training, domain adaptation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic embeddings (one domain from a spec, or the bench-small set).
    Synth(SynthArgs),
    /// Train a G-PLDA or HT-PLDA model on labeled embeddings.
    Train(TrainArgs),
    /// Adapt an out-of-domain model to in-domain data.
    Adapt(AdaptArgs),
    /// Score a trial list.
    Score(ScoreArgs),
    /// EER, minDCF and DET curve from a scores file.
    Eval(EvalArgs),
    /// Evaluate interpolation weights between two models.
    Sweep(SweepArgs),
    /// Run the seeded benchmarks and report the expected orderings.
    Bench(BenchArgs),
    /// Run the full pipeline described by an experiment config.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Gplda,
    Htplda,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Gplda => Backend::Gplda,
            BackendArg::Htplda => Backend::Htplda,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Domain spec JSON; without it the bench-small set is written.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Output CSV (with --config) or directory (bench-small).
    #[arg(long)]
    out: PathBuf,
    /// Also write a trial list for the generated set.
    #[arg(long, requires = "config")]
    trials: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_target: usize,
    #[arg(long, default_value_t = 10_000)]
    n_nontarget: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config supplying defaults for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled embeddings; defaults to `paths.ood` of the config.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    beta_b: Option<f64>,
    #[arg(long)]
    beta_w: Option<f64>,
    #[arg(long)]
    gamma_b: Option<f64>,
    #[arg(long)]
    gamma_w: Option<f64>,
    #[arg(long)]
    regularize: bool,
    /// Use the unregularized FDA transform.
    #[arg(long)]
    fda_exact: bool,
}

impl PlanArgs {
    fn plan(&self, base: Option<&AdaptPlan>) -> Result<AdaptPlan> {
        let mut plan = match (self.method, base) {
            (Some(m), Some(b)) if b.method == m => b.clone(),
            (Some(m), _) => AdaptPlan::new(m),
            (None, Some(b)) => b.clone(),
            (None, None) => return Err(Error::InvalidConfig("adapt: --method or adapt.method is required".into())),
        };
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut plan.alpha, self.alpha);
        set(&mut plan.beta, self.beta);
        set(&mut plan.beta_b, self.beta_b);
        set(&mut plan.beta_w, self.beta_w);
        set(&mut plan.gamma_b, self.gamma_b);
        set(&mut plan.gamma_w, self.gamma_w);
        plan.regularize |= self.regularize;
        if self.fda_exact {
            plan.fda_regularize = false;
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Out-of-domain model.
    #[arg(long)]
    model: PathBuf,
    /// In-domain model; trained from `--ind` when a supervised method needs it.
    #[arg(long)]
    ind_model: Option<PathBuf>,
    /// Out-of-domain embeddings (for C_O); defaults to `paths.ood`.
    #[arg(long)]
    ood: Option<PathBuf>,
    /// In-domain embeddings (for C_I); defaults to `paths.ind`.
    #[arg(long)]
    ind: Option<PathBuf>,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// Defaults to `paths.eval`.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Defaults to `paths.trials`.
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scores: PathBuf,
    /// Metrics JSON; printed to stdout regardless.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    det: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model weighted by α (usually in-domain).
    #[arg(long)]
    base: PathBuf,
    /// Model weighted by 1 − α.
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    trials: Option<PathBuf>,
    /// Comma-separated α values.
    #[arg(long, value_delimiter = ',', default_values_t = bench::SWEEP_GRID)]
    grid: Vec<f64>,
    #[arg(long)]
    regularize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench-small config JSON (any subset of fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write bench_small.json and heavy_tail.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[command(flatten)]
    plan: PlanArgs,
}

fn load_config(path: Option<&Path>) -> Result<Option<ExperimentConfig>> {
    path.map(ExperimentConfig::load).transpose()
}

/// Flag value, else the config path resolved against the config's directory.
fn pick(flag: &Option<PathBuf>, cfg: Option<&ExperimentConfig>, from_cfg: impl Fn(&ExperimentConfig) -> Option<PathBuf>, name: &str) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    cfg.and_then(|c| from_cfg(c).map(|p| c.resolve(&p)))
        .ok_or_else(|| Error::InvalidConfig(format!("--{name} is required (or set it in --config)")))
}

fn settings_hash(value: &serde_json::Value) -> String {
    pipeline::hex_digest(value.to_string().as_bytes())
}

fn write(path: &Path, text: &str) -> Result<()> {
    io::write_text(path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn read_gplda(path: &Path) -> Result<gplda::GPldaModel> {
    match io::read_model(path)? {
        Model::Gplda(m) => Ok(m),
        Model::Htplda(_) => Err(Error::InvalidConfig(format!("{}: expected a gplda model", path.display()))),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    match &args.config {
        Some(path) => {
            let mut spec: DomainSpec = serde_json::from_str(&io::read_text(path)?).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            spec.seed = args.seed;
            let h = settings_hash(&json!({"synth": spec, "n_target": args.n_target, "n_nontarget": args.n_nontarget}));
            let x = synth::generate(&spec)?;
            write(&args.out, &io::format_embeddings(&x, Some(&h))?)?;
            if let Some(t) = &args.trials {
                let trials = synth::make_trials(&x, args.n_target, args.n_nontarget, args.seed)?;
                write(t, &io::format_trials(&trials, Some(&h))?)?;
            }
        }
        None => {
            let cfg = BenchConfig {
                seed: args.seed,
                ..BenchConfig::default()
            };
            let h = settings_hash(&json!({"bench": cfg}));
            let data = bench::bench_small_data(&cfg)?;
            for (name, x) in [("ood.csv", &data.ood), ("ind.csv", &data.ind), ("eval.csv", &data.eval)] {
                write(&args.out.join(name), &io::format_embeddings(x, Some(&h))?)?;
            }
            write(&args.out.join("trials.csv"), &io::format_trials(&data.trials, Some(&h))?)?;
        }
    }
    Ok(())
}

fn train_model(x: &EmbeddingSet, backend: Backend, nu: f64, d_h: Option<usize>) -> Result<Model> {
    Ok(match backend {
        Backend::Gplda => Model::Gplda(gplda::train_gplda(x)?),
        Backend::Htplda => Model::Htplda(htplda::ht_init(x, nu, d_h.unwrap_or((x.dim() / 2).max(1)))?),
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let input = pick(&args.embeddings, cfg.as_ref(), |c| Some(c.paths.ood.clone()), "embeddings")?;
    let backend = args.backend.map(Backend::from).or(cfg.as_ref().map(|c| c.backend)).unwrap_or_default();
    let nu = args.nu.or(cfg.as_ref().map(|c| c.nu)).unwrap_or(DEFAULT_NU);
    let d_h = args.d_h.or(cfg.as_ref().and_then(|c| c.d_h));
    let x = io::read_embeddings(&input)?;
    let model = train_model(&x, backend, nu, d_h)?;
    let h = settings_hash(&json!({"train": input, "backend": backend, "nu": nu, "d_h": d_h}));
    write(&args.out, &io::format_model(&model, Some(&h))?)
}

fn adapt(args: AdaptArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let plan = args.plan.plan(cfg.as_ref().and_then(|c| c.adapt.as_ref()))?;
    let ood_path = pick(&args.ood, cfg.as_ref(), |c| Some(c.paths.ood.clone()), "ood")?;
    let ind_path = pick(&args.ind, cfg.as_ref(), |c| c.paths.ind.clone(), "ind")?;
    let ood = io::read_embeddings(&ood_path)?;
    let ind = io::read_embeddings(&ind_path)?;
    let c_o = pipeline::total_cov(&ood)?;
    let c_i = pipeline::total_cov(&ind)?;
    let base = io::read_model(&args.model)?;
    let ind_model = match &args.ind_model {
        Some(p) => Some(io::read_model(p)?),
        None if plan.method.is_supervised() => {
            let (nu, d_h) = match &base {
                Model::Htplda(m) => (m.nu(), Some(m.d_h())),
                Model::Gplda(_) => (DEFAULT_NU, None),
            };
            let backend = if matches!(base, Model::Gplda(_)) { Backend::Gplda } else { Backend::Htplda };
            Some(train_model(&ind, backend, nu, d_h)?)
        }
        None => None,
    };
    let adapted = match (base, ind_model) {
        (Model::Gplda(o), i) => {
            let i = match i {
                Some(Model::Gplda(m)) => Some(m),
                Some(_) => return Err(Error::InvalidConfig("--ind-model must match the back-end of --model".into())),
                None => None,
            };
            let mut m = adapt::apply_plan(&plan, &o, i.as_ref(), &c_o, &c_i)?;
            m.mu = ind.mean();
            Model::Gplda(m)
        }
        (Model::Htplda(o), i) => {
            let i = match i {
                Some(Model::Htplda(m)) => Some(m),
                Some(_) => return Err(Error::InvalidConfig("--ind-model must match the back-end of --model".into())),
                None => None,
            };
            Model::Htplda(adapt::apply_plan_ht(&plan, &o, i.as_ref(), &c_o, &c_i)?)
        }
    };
    let h = settings_hash(&json!({"adapt": plan, "model": args.model, "ind_model": args.ind_model, "ood": ood_path, "ind": ind_path}));
    write(&args.out, &io::format_model(&adapted, Some(&h))?)
}

fn score(args: ScoreArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let eval_path = pick(&args.eval, cfg.as_ref(), |c| Some(c.paths.eval.clone()), "eval")?;
    let trials_path = pick(&args.trials, cfg.as_ref(), |c| Some(c.paths.trials.clone()), "trials")?;
    let model = io::read_model(&args.model)?;
    let x = io::read_embeddings(&eval_path)?;
    let trials = io::read_trials(&trials_path)?;
    let scores = pipeline::score_with(&model, &x, &trials)?;
    let h = settings_hash(&json!({"score": args.model, "eval": eval_path, "trials": trials_path}));
    write(&args.out, &io::format_scores(&trials, &scores, Some(&h))?)
}

fn evaluate(args: EvalArgs) -> Result<()> {
    if let Some(p) = &args.config {
        ExperimentConfig::load(p)?;
    }
    let text = io::read_text(&args.scores)?;
    let (trials, scores) = io::parse_scores(&text)?;
    let labeled = trials.labeled_scores(&scores)?;
    let metrics = eval::compute_metrics(&labeled)?;
    let h = io::embedded_hash(&text)
        .map(str::to_string)
        .unwrap_or_else(|| settings_hash(&json!({"eval": args.scores})));
    let json = io::format_metrics(&metrics, Some(&h))?;
    print!("{json}");
    if let Some(out) = &args.out {
        write(out, &json)?;
    }
    if let Some(det) = &args.det {
        write(det, &io::format_det(&eval::det_points(&labeled)?, Some(&h))?)?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let eval_path = pick(&args.eval, cfg.as_ref(), |c| Some(c.paths.eval.clone()), "eval")?;
    let trials_path = pick(&args.trials, cfg.as_ref(), |c| Some(c.paths.trials.clone()), "trials")?;
    eval::validate_grid(&args.grid)?;
    let base = read_gplda(&args.base)?;
    let dev = read_gplda(&args.dev)?;
    let x = io::read_embeddings(&eval_path)?;
    let trials: TrialSet = io::read_trials(&trials_path)?;
    let rows = eval::weight_sweep(&base, &dev, &x, &trials, &args.grid, args.regularize)?;
    let h = settings_hash(&json!({"sweep": [args.base, args.dev], "eval": eval_path, "trials": trials_path, "grid": args.grid, "regularize": args.regularize}));
    write(&args.out, &io::format_sweep(&rows, Some(&h))?)
}

fn run_bench(args: BenchArgs) -> Result<bool> {
    let mut cfg: BenchConfig = match &args.config {
        Some(p) => serde_json::from_str(&io::read_text(p)?).map_err(|e| Error::InvalidConfig(e.to_string()))?,
        None => BenchConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let report = bench::run_bench(&cfg)?;
    let ht = bench::run_heavy_tail(&HeavyTailConfig::default())?;
    println!("{:<10} {:>8} {:>10}", "system", "EER", "minCprim");
    println!("{:<10} {:>8.4} {:>10.4}", "ood", report.ood.eer, report.ood.minc_primary);
    println!("{:<10} {:>8.4} {:>10.4}", "ind", report.ind.eer, report.ind.minc_primary);
    for r in &report.methods {
        println!("{:<10} {:>8.4} {:>10.4}", r.method.name(), r.metrics.eer, r.metrics.minc_primary);
    }
    let checks = bench::direction_checks(&report, &ht);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(dir) = &args.out_dir {
        let pretty = |v: serde_json::Result<String>| v.expect("report serializes") + "\n";
        write(&dir.join("bench_small.json"), &pretty(serde_json::to_string_pretty(&report)))?;
        write(&dir.join("heavy_tail.json"), &pretty(serde_json::to_string_pretty(&ht)))?;
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = args.output_dir {
        cfg.paths.output_dir = Some(dir);
    }
    if let Some(b) = args.backend {
        cfg.backend = b.into();
    }
    let overridden = args.plan.method.is_some()
        || [args.plan.alpha, args.plan.beta, args.plan.beta_b, args.plan.beta_w, args.plan.gamma_b, args.plan.gamma_w]
            .iter()
            .any(Option::is_some)
        || args.plan.regularize
        || args.plan.fda_exact;
    if overridden {
        cfg.adapt = Some(args.plan.plan(cfg.adapt.as_ref())?);
    }
    let out = pipeline::run_pipeline(&cfg)?;
    match &out.metrics {
        Some(m) => print!("{}", io::format_metrics(m, Some(&out.config_hash))?),
        None => println!("scored {} trials (unlabeled)", out.scores.len()),
    }
    for f in &out.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("PLDA_ADAPT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("PLDA_ADAPT_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a).map(|()| true),
        Command::Train(a) => train(a).map(|()| true),
        Command::Adapt(a) => adapt(a).map(|()| true),
        Command::Score(a) => score(a).map(|()| true),
        Command::Eval(a) => evaluate(a).map(|()| true),
        Command::Sweep(a) => sweep(a).map(|()| true),
        Command::Bench(a) => run_bench(a),
        Command::Run(a) => run(a).map(|()| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
