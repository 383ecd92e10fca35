//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 planner found no solution, 2 usage error,
//! 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use primdiff::bench::{self, BenchReport, SourceResources};
use primdiff::datagen::{self, DatagenConfig, Dataset};
use primdiff::diffusion::{self, ModelBank, PrimitiveDenoiser, TrainConfig, LAYOUT_VERSION};
use primdiff::dynamics::ModelId;
use primdiff::planner::{self, PlannerConfig, SourceSpec};
use primdiff::primitives::PrimitiveSet;
use primdiff::seeds;
use primdiff::world::{self, InstanceGenConfig, ProblemInstance};

#[derive(Parser, Debug)]
#[command(name = "primdiff", version, about = "Kinodynamic motion planning with learned motion primitives")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one instance with the anytime planner.
    Plan(PlanArgs),
    /// Solve random instances and cut the solutions into training data.
    BuildDataset(BuildDatasetArgs),
    /// Train the denoiser of one primitive length.
    TrainDiffusion(TrainArgs),
    /// Sample a primitive set for an instance.
    GenPrimitives(GenPrimitivesArgs),
    /// Compare a baseline and a model configuration over instances.
    Bench(BenchArgs),
    /// Write random problem instances.
    GenInstances(GenInstancesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SourceArg {
    Random,
    Diffusion,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Robot model; must match the instance when given.
    #[arg(long)]
    model: Option<ModelId>,
    #[arg(long, value_enum)]
    source: Option<SourceArg>,
    /// Directory of trained models for the diffusion source.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Pre-generated random primitive library for the random source.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Planner configuration JSON; flags override its values.
    #[arg(long)]
    cfg: Option<PathBuf>,
    #[arg(long)]
    timelimit: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildDatasetArgs {
    #[arg(long, default_value = "unicycle1")]
    model: ModelId,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    density: Option<f64>,
    /// Datagen configuration JSON; flags override its values.
    #[arg(long)]
    cfg: Option<PathBuf>,
    #[arg(long)]
    timelimit: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    bucket: usize,
    /// Training configuration JSON; flags override its values.
    #[arg(long)]
    cfg: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenPrimitivesArgs {
    /// Directory of trained models; omit with `--source random`.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "diffusion")]
    source: SourceArg,
    /// Robot model for random primitives without an instance.
    #[arg(long)]
    model: Option<ModelId>,
    #[arg(long)]
    count: usize,
    /// Primitive lengths to produce, split evenly.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory of instance JSON files.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    timelimit: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenInstancesArgs {
    #[arg(long, default_value = "unicycle1")]
    model: ModelId,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.25)]
    density: f64,
    /// Workspace width and height range, e.g. `4,12`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    size: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    NoSolution,
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::NoSolution => 1,
            Failure::Usage(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let s = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| internal(format!("{}: {e}", dir.display())))?;
    }
    let mut s = serde_json::to_string_pretty(value).map_err(internal)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| internal(format!("{}: {e}", path.display())))
}

/// `out.json` → `out.config.json`; directories get `config.json` inside.
fn snapshot_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return out.join("config.json");
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    out.with_file_name(format!("{stem}.config.json"))
}

fn load_planner_config(path: Option<&Path>) -> Result<PlannerConfig, Failure> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => PlannerConfig::default(),
    };
    Ok(cfg)
}

fn cmd_plan(a: PlanArgs) -> Result<(), Failure> {
    let inst = ProblemInstance::load(&a.instance).map_err(usage)?;
    if let Some(m) = a.model {
        if m != inst.model {
            return Err(usage(format!("--model {m} does not match instance model {}", inst.model)));
        }
    }
    let mut cfg = load_planner_config(a.cfg.as_deref())?;
    if let Some(t) = a.timelimit {
        cfg.time_limit = t;
    }
    if let Some(n) = a.max_iterations {
        cfg.max_iterations = Some(n);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    match a.source {
        Some(SourceArg::Random) => cfg.source = SourceSpec::RandomBaseline { library: a.library.clone() },
        Some(SourceArg::Diffusion) => {
            let models = a.models.clone().ok_or_else(|| usage("--source diffusion requires --models"))?;
            cfg.source = SourceSpec::DiffusionModel { models };
        }
        None => {
            if let (SourceSpec::RandomBaseline { library }, Some(l)) = (&mut cfg.source, &a.library) {
                *library = Some(l.clone());
            }
        }
    }
    cfg.check().map_err(usage)?;
    let robot = cfg.robot(inst.model).map_err(usage)?;
    inst.check(&robot).map_err(usage)?;

    let mut res = SourceResources::default();
    res.load_for(&cfg.source, &robot).map_err(internal)?;
    let mut source = bench::build_source(&cfg.source, &robot, &inst, cfg.seed, &res).map_err(internal)?;
    let outcome = planner::plan(&robot, &inst, &cfg, source.as_mut(), |r| {
        log::info!("iteration {}: cost {:.2} s at {:.3} s", r.iteration, r.cost, r.time);
    })
    .map_err(internal)?;

    write_json(
        &snapshot_path(&a.out, false),
        &json!({ "command": "plan", "instance": a.instance, "planner": cfg }),
    )?;
    write_json(&a.out, &json!({ "reports": outcome.reports, "iterations": outcome.iterations }))?;
    match outcome.best() {
        Some(b) => {
            println!("{} solutions, best cost {:.2} s", outcome.reports.len(), b.cost);
            Ok(())
        }
        None => {
            println!("no solution within {} s", cfg.time_limit);
            Err(Failure::NoSolution)
        }
    }
}

fn cmd_build_dataset(a: BuildDatasetArgs) -> Result<(), Failure> {
    let mut cfg: DatagenConfig = match &a.cfg {
        Some(p) => read_json(p)?,
        None => DatagenConfig::default(),
    };
    cfg.n_instances = a.n;
    cfg.repeats = a.repeats;
    cfg.seed = a.seed;
    cfg.instances.model = a.model;
    if let Some(d) = a.density {
        cfg.instances.density = d;
    }
    if let Some(t) = a.timelimit {
        cfg.planner.time_limit = t;
    }
    let ds = datagen::build_dataset(&cfg).map_err(|e| match e {
        datagen::DatagenError::Config(_) => usage(e),
        _ => internal(e),
    })?;
    ds.save(&a.out).map_err(internal)?;
    let robot = cfg.planner.robot(cfg.instances.model).map_err(usage)?;
    let coverage = datagen::coverage_report(&ds, &datagen::deployment_ranges(&robot.model, &cfg.instances), 10);
    write_json(&a.out.join("coverage.json"), &coverage)?;
    write_json(&snapshot_path(&a.out, true), &json!({ "command": "build-dataset", "datagen": cfg }))?;
    for (l, s) in &ds.buckets {
        println!("bucket {l}: {} samples", s.len());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&a.dataset).map_err(usage)?;
    let mut cfg: TrainConfig = match &a.cfg {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let scaling = ds
        .meta
        .scaling
        .get(&a.bucket)
        .ok_or_else(|| usage(format!("dataset has no bucket {}", a.bucket)))?;
    let (data, conds) = ds.training_rows(a.bucket);
    let (ddpm, curve) =
        diffusion::train(&data, &conds, scaling.data.clone(), scaling.condition.clone(), &cfg).map_err(internal)?;
    let model = PrimitiveDenoiser {
        layout_version: LAYOUT_VERSION,
        model: ds.meta.model,
        length: a.bucket,
        ddpm,
        loss_curve: curve.clone(),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(internal)?;
    }
    model.save(&a.out).map_err(internal)?;
    write_json(
        &snapshot_path(&a.out, false),
        &json!({ "command": "train-diffusion", "dataset": a.dataset, "bucket": a.bucket, "train": cfg }),
    )?;
    println!(
        "trained on {} samples, loss {:.4} -> {:.4}",
        data.len(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn split_evenly(count: usize, lengths: &[usize]) -> Vec<(usize, usize)> {
    let p = vec![1.0 / lengths.len() as f64; lengths.len()];
    let mut counts: Vec<usize> = p.iter().map(|x| (x * count as f64).floor() as usize).collect();
    let rest = count - counts.iter().sum::<usize>();
    for c in counts.iter_mut().take(rest) {
        *c += 1;
    }
    lengths.iter().copied().zip(counts).collect()
}

fn cmd_gen_primitives(a: GenPrimitivesArgs) -> Result<(), Failure> {
    let mut rng = seeds::rng(a.seed, "gen-primitives");
    let (set, info) = match a.source {
        SourceArg::Diffusion => {
            let dir = a.models.as_ref().ok_or_else(|| usage("--models is required for the diffusion source"))?;
            let ip = a.instance.as_ref().ok_or_else(|| usage("--instance is required for the diffusion source"))?;
            let inst = ProblemInstance::load(ip).map_err(usage)?;
            let bank = ModelBank::load_dir(dir).map_err(usage)?;
            if bank.models.is_empty() {
                return Err(usage(format!("no model_l*.json files in {}", dir.display())));
            }
            let lengths = a.lengths.clone().unwrap_or_else(|| bank.models.keys().copied().collect());
            let robot = PlannerConfig::default().robot(inst.model).map_err(usage)?;
            let (set, stats) = diffusion::generate_set(&robot.model, &bank, &inst, &split_evenly(a.count, &lengths), &mut rng)
                .map_err(internal)?;
            (set, json!({ "attempts": stats.attempts, "accepted": stats.accepted }))
        }
        SourceArg::Random => {
            let id = match (&a.instance, a.model) {
                (_, Some(m)) => m,
                (Some(ip), None) => ProblemInstance::load(ip).map_err(usage)?.model,
                (None, None) => return Err(usage("--model or --instance is required")),
            };
            let robot = PlannerConfig::default().robot(id).map_err(usage)?;
            let lengths = a.lengths.clone().unwrap_or_else(|| primdiff::primitives::DEFAULT_BUCKETS.to_vec());
            let mut set = PrimitiveSet::new(id);
            for (len, n) in split_evenly(a.count, &lengths) {
                for _ in 0..n {
                    set.push(primdiff::primitives::generate_random_primitive(&robot, len, &mut rng));
                }
            }
            (set, json!({}))
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(internal)?;
    }
    set.save(&a.out).map_err(internal)?;
    write_json(
        &snapshot_path(&a.out, false),
        &json!({ "command": "gen-primitives", "source": a.source, "models": a.models, "instance": a.instance,
                 "count": a.count, "lengths": a.lengths, "seed": a.seed, "stats": info }),
    )?;
    println!("{} primitives written to {}", set.len(), a.out.display());
    Ok(())
}

fn load_instances(dir: &Path) -> Result<Vec<(String, ProblemInstance)>, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        out.push((name, ProblemInstance::load(&p).map_err(usage)?));
    }
    if out.is_empty() {
        return Err(usage(format!("no instance files in {}", dir.display())));
    }
    Ok(out)
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let instances = load_instances(&a.instances)?;
    let mut base = load_planner_config(Some(&a.baseline))?;
    let mut model = load_planner_config(Some(&a.model))?;
    if let Some(t) = a.timelimit {
        base.time_limit = t;
        model.time_limit = t;
    }
    base.check().map_err(usage)?;
    model.check().map_err(usage)?;
    let id = instances[0].1.model;
    if instances.iter().any(|(_, i)| i.model != id) {
        return Err(usage("instances must share one robot model"));
    }
    let mut res = SourceResources::default();
    res.load_for(&base.source, &base.robot(id).map_err(usage)?).map_err(internal)?;
    res.load_for(&model.source, &model.robot(id).map_err(usage)?).map_err(internal)?;
    let records = bench::run_benchmark(&instances, a.trials, &base, &model, &res, a.seed).map_err(|e| match e {
        bench::BenchError::Mismatch(_) => usage(e),
        _ => internal(e),
    })?;
    let summary = bench::summarize(&records).map_err(internal)?;
    let report = BenchReport {
        summary,
        baseline_config: base,
        model_config: model,
        hardware: bench::hardware_info(),
    };
    bench::write_report(&a.out, &records, &report).map_err(internal)?;
    write_json(
        &snapshot_path(&a.out, true),
        &json!({ "command": "bench", "instances": a.instances, "trials": a.trials, "seed": a.seed,
                 "baseline": report.baseline_config, "model": report.model_config }),
    )?;
    let s = &report.summary;
    let fmt = |m| s.median(m).map_or("n/a".to_string(), |v: f64| format!("{v:.1}"));
    println!(
        "p_B {:.1}  p_M {:.1}  r_d {}  r_c_first {}  r_c_best {}",
        s.p_baseline,
        s.p_model,
        fmt(bench::Metric::D),
        fmt(bench::Metric::CFirst),
        fmt(bench::Metric::CBest)
    );
    Ok(())
}

fn cmd_gen_instances(a: GenInstancesArgs) -> Result<(), Failure> {
    let mut cfg = InstanceGenConfig { model: a.model, density: a.density, ..InstanceGenConfig::default() };
    if let Some(s) = &a.size {
        cfg.width_range = (s[0], s[1]);
        cfg.height_range = (s[0], s[1]);
    }
    let robot = PlannerConfig::default().robot(a.model).map_err(usage)?;
    std::fs::create_dir_all(&a.out).map_err(internal)?;
    let width = a.n.saturating_sub(1).to_string().len().max(2);
    for i in 0..a.n {
        let mut rng = seeds::rng(a.seed, &format!("instance/{i}"));
        let inst = world::sample_instance(&cfg, &robot, &mut rng).map_err(|e| match e {
            world::WorldError::Invalid(_) => usage(e),
            _ => internal(e),
        })?;
        inst.save(a.out.join(format!("instance_{i:0width$}.json"))).map_err(internal)?;
    }
    write_json(&snapshot_path(&a.out, true), &json!({ "command": "gen-instances", "seed": a.seed, "n": a.n, "generator": cfg }))?;
    println!("{} instances written to {}", a.n, a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::TrainDiffusion(a) => cmd_train(a),
        Command::GenPrimitives(a) => cmd_gen_primitives(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenInstances(a) => cmd_gen_instances(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Internal(m) => eprintln!("internal error: {m}"),
                Failure::NoSolution => {}
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split_sums_to_count() {
        assert_eq!(split_evenly(10, &[5, 10, 15]), vec![(5, 4), (10, 3), (15, 3)]);
        assert_eq!(split_evenly(100, &[5, 10, 15, 20]).iter().map(|c| c.1).sum::<usize>(), 100);
    }

    #[test]
    fn snapshot_names() {
        assert_eq!(snapshot_path(Path::new("a/sol.json"), false), PathBuf::from("a/sol.config.json"));
        assert_eq!(snapshot_path(Path::new("rep"), true), PathBuf::from("rep/config.json"));
    }
}
