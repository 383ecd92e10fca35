//! Baseline-versus-model benchmark harness.
//!
//! Every instance is solved several times with each primitive source.
//! Durations and costs of the model source are expressed as regret, the
//! percentage difference to the per-instance baseline median.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionSource, ModelBank};
use crate::planner::{self, PlannerConfig, PlannerError, PrimitiveSource, RandomSource, SourceSpec};
use crate::primitives::PrimitiveSet;
use crate::seeds;
use crate::world::{ProblemInstance, Robot};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("baseline median undefined: no successful baseline value")]
    UndefinedBaseline,
    #[error("no trial records")]
    Empty,
    #[error("configurations differ in {0}")]
    Mismatch(&'static str),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLabel {
    Baseline,
    Model,
}

impl SourceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceLabel::Baseline => "baseline",
            SourceLabel::Model => "model",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub instance: String,
    pub source: SourceLabel,
    pub seed: u64,
    pub success: bool,
    /// Time to the first solution (s).
    pub d: Option<f64>,
    pub c_first: Option<f64>,
    pub c_best: Option<f64>,
    pub reports: usize,
    pub config_hash: String,
}

impl TrialRecord {
    pub fn failed(instance: &str, source: SourceLabel, seed: u64, config_hash: &str) -> Self {
        Self {
            instance: instance.to_string(),
            source,
            seed,
            success: false,
            d: None,
            c_first: None,
            c_best: None,
            reports: 0,
            config_hash: config_hash.to_string(),
        }
    }
}

/// Median; an even count averages the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `r = 100 (x − x̃_B) / x̃_B` for every value.
pub fn regret(values: &[f64], baseline: &[f64]) -> Result<Vec<f64>, BenchError> {
    let m = median(baseline).ok_or(BenchError::UndefinedBaseline)?;
    Ok(values.iter().map(|x| 100.0 * (x - m) / m).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    D,
    CFirst,
    CBest,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::D, Metric::CFirst, Metric::CBest];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::D => "d",
            Metric::CFirst => "c_first",
            Metric::CBest => "c_best",
        }
    }

    pub fn of(self, r: &TrialRecord) -> Option<f64> {
        match self {
            Metric::D => r.d,
            Metric::CFirst => r.c_first,
            Metric::CBest => r.c_best,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRegret {
    pub baseline: Vec<f64>,
    pub model: Vec<f64>,
    pub median_model: Option<f64>,
    pub median_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub trials_baseline: usize,
    pub trials_model: usize,
    /// Success rates in percent.
    pub p_baseline: f64,
    pub p_model: f64,
    pub regrets: BTreeMap<Metric, MetricRegret>,
}

impl RegretSummary {
    pub fn median(&self, m: Metric) -> Option<f64> {
        self.regrets.get(&m).and_then(|r| r.median_model)
    }
}

/// Regret of every successful trial against the baseline median of its
/// instance, in record order; `None` when the baseline never solved it.
pub fn trial_regrets(records: &[TrialRecord], metric: Metric) -> Vec<Option<f64>> {
    let mut base: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.source == SourceLabel::Baseline && r.success) {
        if let Some(x) = metric.of(r) {
            base.entry(&r.instance).or_default().push(x);
        }
    }
    let med: BTreeMap<&str, f64> = base.iter().filter_map(|(k, v)| median(v).map(|m| (*k, m))).collect();
    records
        .iter()
        .map(|r| {
            let x = metric.of(r).filter(|_| r.success)?;
            let m = *med.get(r.instance.as_str())?;
            (m > 0.0).then(|| 100.0 * (x - m) / m)
        })
        .collect()
}

pub fn summarize(records: &[TrialRecord]) -> Result<RegretSummary, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    let count = |s: SourceLabel| records.iter().filter(|r| r.source == s).count();
    let rate = |s: SourceLabel| {
        let n = count(s);
        if n == 0 {
            0.0
        } else {
            100.0 * records.iter().filter(|r| r.source == s && r.success).count() as f64 / n as f64
        }
    };
    let mut regrets = BTreeMap::new();
    for m in Metric::ALL {
        let rs = trial_regrets(records, m);
        let mut mr = MetricRegret::default();
        for (rec, r) in records.iter().zip(rs) {
            if let Some(r) = r {
                match rec.source {
                    SourceLabel::Baseline => mr.baseline.push(r),
                    SourceLabel::Model => mr.model.push(r),
                }
            }
        }
        mr.median_model = median(&mr.model);
        mr.median_baseline = median(&mr.baseline);
        regrets.insert(m, mr);
    }
    Ok(RegretSummary {
        trials_baseline: count(SourceLabel::Baseline),
        trials_model: count(SourceLabel::Model),
        p_baseline: rate(SourceLabel::Baseline),
        p_model: rate(SourceLabel::Model),
        regrets,
    })
}

/// Preloaded shared inputs of the primitive sources.
#[derive(Clone, Default)]
pub struct SourceResources {
    pub library: Option<Arc<PrimitiveSet>>,
    pub bank: Option<Arc<ModelBank>>,
}

impl SourceResources {
    /// Loads whatever `spec` refers to and is not loaded yet.
    pub fn load_for(&mut self, spec: &SourceSpec, robot: &Robot) -> Result<(), PlannerError> {
        match spec {
            SourceSpec::RandomBaseline { library: Some(p) } if self.library.is_none() => {
                let set = PrimitiveSet::load(p, &robot.model).map_err(|e| PlannerError::Source(e.to_string()))?;
                self.library = Some(Arc::new(set));
            }
            SourceSpec::DiffusionModel { models } if self.bank.is_none() => {
                let bank = ModelBank::load_dir(models).map_err(|e| PlannerError::Source(e.to_string()))?;
                self.bank = Some(Arc::new(bank));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn build_source(
    spec: &SourceSpec,
    robot: &Robot,
    inst: &ProblemInstance,
    seed: u64,
    res: &SourceResources,
) -> Result<Box<dyn PrimitiveSource>, PlannerError> {
    let rng = seeds::rng(seed, "source");
    match spec {
        SourceSpec::RandomBaseline { .. } => Ok(Box::new(RandomSource::new(robot.clone(), res.library.clone(), rng))),
        SourceSpec::DiffusionModel { models } => {
            let bank = match &res.bank {
                Some(b) => b.clone(),
                None => Arc::new(ModelBank::load_dir(models).map_err(|e| PlannerError::Source(e.to_string()))?),
            };
            let src = DiffusionSource::new(bank, robot, inst, rng).map_err(|e| PlannerError::Source(e.to_string()))?;
            Ok(Box::new(src))
        }
    }
}

pub fn config_hash(cfg: &PlannerConfig) -> String {
    let s = serde_json::to_string(cfg).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// One planner run turned into a record; an invalid report fails the trial.
pub fn run_trial(
    robot: &Robot,
    name: &str,
    inst: &ProblemInstance,
    label: SourceLabel,
    cfg: &PlannerConfig,
    res: &SourceResources,
) -> TrialRecord {
    let hash = config_hash(cfg);
    let mut source = match build_source(&cfg.source, robot, inst, cfg.seed, res) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("{name} {} seed {}: {e}", label.as_str(), cfg.seed);
            return TrialRecord::failed(name, label, cfg.seed, &hash);
        }
    };
    let out = match planner::plan(robot, inst, cfg, source.as_mut(), |_| {}) {
        Ok(o) => o,
        Err(e) => {
            log::warn!("{name} {} seed {}: {e}", label.as_str(), cfg.seed);
            return TrialRecord::failed(name, label, cfg.seed, &hash);
        }
    };
    let valid = out.reports.iter().all(|r| {
        planner::verify_solution(robot, inst, &r.states, &r.actions, cfg.opt.goal_tol).is_ok()
            && (r.cost - r.actions.len() as f64 * robot.model.dt).abs() < 1e-9
    }) && out.reports.windows(2).all(|w| w[1].cost < w[0].cost);
    match (out.reports.first(), out.reports.last()) {
        (Some(first), Some(last)) if valid => TrialRecord {
            instance: name.to_string(),
            source: label,
            seed: cfg.seed,
            success: true,
            d: Some(first.time),
            c_first: Some(first.cost),
            c_best: Some(last.cost),
            reports: out.reports.len(),
            config_hash: hash,
        },
        _ => TrialRecord::failed(name, label, cfg.seed, &hash),
    }
}

/// Runs `trials` seeds per instance and source; records come back sorted by
/// instance, source and seed.
pub fn run_benchmark(
    instances: &[(String, ProblemInstance)],
    trials: usize,
    cfg_baseline: &PlannerConfig,
    cfg_model: &PlannerConfig,
    res: &SourceResources,
    seed: u64,
) -> Result<Vec<TrialRecord>, BenchError> {
    if cfg_baseline.time_limit != cfg_model.time_limit {
        return Err(BenchError::Mismatch("time_limit"));
    }
    let mut jobs = Vec::new();
    for (i, (name, inst)) in instances.iter().enumerate() {
        for k in 0..trials {
            for (label, cfg) in [(SourceLabel::Baseline, cfg_baseline), (SourceLabel::Model, cfg_model)] {
                let s = seeds::derive(seed, &format!("bench/{i}/{k}/{}", label.as_str()));
                jobs.push((name.as_str(), inst, label, PlannerConfig { seed: s, ..cfg.clone() }));
            }
        }
    }
    let mut records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|(name, inst, label, cfg)| {
            let r = match cfg.robot(inst.model) {
                Ok(robot) => run_trial(&robot, name, inst, *label, cfg, res),
                Err(e) => {
                    log::warn!("{name}: {e}");
                    TrialRecord::failed(name, *label, cfg.seed, &config_hash(cfg))
                }
            };
            log::info!("{name} {} seed {}: success {} d {:?} c_best {:?}", label.as_str(), cfg.seed, r.success, r.d, r.c_best);
            r
        })
        .collect();
    records.sort_by(|a, b| (&a.instance, a.source, a.seed).cmp(&(&b.instance, b.source, b.seed)));
    Ok(records)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Per-trial CSV with regrets against the per-instance baseline median.
pub fn trials_csv(records: &[TrialRecord]) -> String {
    let r: Vec<Vec<Option<f64>>> = Metric::ALL.iter().map(|&m| trial_regrets(records, m)).collect();
    let mut s = String::from("instance,source,seed,success,d,c_first,c_best,r_d,r_c_first,r_c_best\n");
    for (k, rec) in records.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            rec.instance,
            rec.source.as_str(),
            rec.seed,
            rec.success,
            opt(rec.d),
            opt(rec.c_first),
            opt(rec.c_best),
            opt(r[0][k]),
            opt(r[1][k]),
            opt(r[2][k]),
        );
    }
    s
}

/// Static chart: one strip of regrets per metric and source with the median
/// marked.
pub fn regret_svg(summary: &RegretSummary) -> String {
    let (w, h) = (720.0, 360.0);
    let all: Vec<f64> = summary.regrets.values().flat_map(|m| m.baseline.iter().chain(&m.model)).copied().collect();
    let lo = all.iter().copied().fold(-10.0f64, f64::min).max(-100.0);
    let hi = all.iter().copied().fold(10.0f64, f64::max).min(300.0);
    let y = |v: f64| 30.0 + (hi - v.clamp(lo, hi)) / (hi - lo) * (h - 70.0);
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(s, r#"<line x1="50" x2="{}" y1="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4"/>"#, w - 10.0, y(0.0), y(0.0));
    let _ = write!(s, r#"<text x="5" y="{:.1}">0%</text><text x="5" y="{:.1}">{hi:.0}%</text><text x="5" y="{:.1}">{lo:.0}%</text>"#, y(0.0) + 4.0, y(hi) + 4.0, y(lo));
    for (mi, m) in Metric::ALL.iter().enumerate() {
        let Some(mr) = summary.regrets.get(m) else { continue };
        for (si, (label, vals, med, color)) in [
            ("baseline", &mr.baseline, mr.median_baseline, "#888888"),
            ("model", &mr.model, mr.median_model, "#1f77b4"),
        ]
        .into_iter()
        .enumerate()
        {
            let x = 90.0 + mi as f64 * 220.0 + si as f64 * 90.0;
            for v in vals {
                let _ = write!(s, r#"<circle cx="{x:.1}" cy="{:.1}" r="2.5" fill="{color}" fill-opacity="0.5"/>"#, y(*v));
            }
            if let Some(md) = med {
                let _ = write!(s, r#"<line x1="{:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#, x - 20.0, x + 20.0, y(md), y(md));
            }
            let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, x, h - 25.0);
        }
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">r_{}</text>"#, 135.0 + mi as f64 * 220.0, h - 8.0, m.as_str());
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareInfo {
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub cpu: Option<String>,
}

pub fn hardware_info() -> HardwareInfo {
    let cpu = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("model name"))
            .and_then(|l| l.split(':').nth(1))
            .map(|v| v.trim().to_string())
    });
    HardwareInfo {
        os: std::env::consts::OS.to_string(),
        arch: std::env::consts::ARCH.to_string(),
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        cpu,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub summary: RegretSummary,
    pub baseline_config: PlannerConfig,
    pub model_config: PlannerConfig,
    pub hardware: HardwareInfo,
}

/// Writes `trials.csv`, `summary.json` and `regret.svg` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, records: &[TrialRecord], report: &BenchReport) -> Result<Vec<PathBuf>, BenchError> {
    let dir = dir.as_ref();
    let io = |p: &Path, source| BenchError::Io { path: p.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let files = [
        ("trials.csv", trials_csv(records)),
        ("summary.json", serde_json::to_string_pretty(report).expect("serializable report")),
        ("regret.svg", regret_svg(&report.summary)),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(inst: &str, source: SourceLabel, seed: u64, d: Option<f64>, c: Option<f64>) -> TrialRecord {
        TrialRecord {
            instance: inst.into(),
            source,
            seed,
            success: d.is_some(),
            d,
            c_first: c,
            c_best: c,
            reports: d.map_or(0, |_| 1),
            config_hash: String::new(),
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret(&[2.0], &[1.0, 2.0, 3.0]).unwrap(), vec![0.0]);
        let r = regret(&[0.831], &[1.0]).unwrap()[0];
        assert_eq!(format!("{r:.1}"), "-16.9");
        assert!(regret(&[0.5], &[1.0]).unwrap()[0] < 0.0);
        assert!(matches!(regret(&[1.0], &[]), Err(BenchError::UndefinedBaseline)));
    }

    #[test]
    fn success_rate_and_exclusion() {
        let mut v = Vec::new();
        for k in 0..200 {
            let ok = k >= 3;
            v.push(rec("a", SourceLabel::Model, k, ok.then_some(1.0), ok.then_some(5.0)));
            v.push(rec("a", SourceLabel::Baseline, k, Some(2.0), Some(10.0)));
        }
        let s = summarize(&v).unwrap();
        assert_eq!(s.p_model, 98.5);
        assert_eq!(s.p_baseline, 100.0);
        assert_eq!(s.regrets[&Metric::D].model.len(), 197);
        assert_eq!(s.median(Metric::D), Some(-50.0));
        assert!(Metric::ALL.iter().all(|&m| s.median(m).unwrap() < 0.0));
    }

    #[test]
    fn failing_source_has_empty_regrets() {
        let v = vec![
            rec("a", SourceLabel::Model, 0, None, None),
            rec("a", SourceLabel::Baseline, 0, Some(1.0), Some(3.0)),
        ];
        let s = summarize(&v).unwrap();
        assert_eq!(s.p_model, 0.0);
        assert!(s.regrets[&Metric::CBest].model.is_empty());
        assert_eq!(s.median(Metric::CBest), None);
        assert!(matches!(summarize(&[]), Err(BenchError::Empty)));
    }

    #[test]
    fn csv_schema() {
        let v = vec![
            rec("a", SourceLabel::Baseline, 1, Some(1.0), Some(2.0)),
            rec("a", SourceLabel::Model, 1, None, None),
        ];
        let csv = trials_csv(&v);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "instance,source,seed,success,d,c_first,c_best,r_d,r_c_first,r_c_best");
        assert_eq!(lines.next().unwrap(), "a,baseline,1,true,1,2,2,0,0,0");
        assert_eq!(lines.next().unwrap(), "a,model,1,false,,,,,,");
        assert!(regret_svg(&summarize(&v).unwrap()).starts_with("<svg"));
    }
}
