//! Training data from solved random instances.
//!
//! Random instances are solved repeatedly with the baseline planner, every
//! reported solution is cut into primitives of the configured lengths, and
//! each piece is stored with its condition vector in a per-length bucket.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{condition_names, condition_vector, encode_primitive, encoded_dim, Scaling, LAYOUT_VERSION};
use crate::dynamics::{ModelId, RobotModel};
use crate::planner::{self, PlannerConfig, RandomSource};
use crate::primitives::{self, MotionPrimitive};
use crate::seeds;
use crate::world::{self, InstanceGenConfig, ProblemInstance};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("no instance was solved; the dataset would be empty")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("instance {index}: {detail}")]
    Instance { index: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("bucket {length}, sample {index}: {detail}")]
    Invariant { length: usize, index: usize, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub n_instances: usize,
    pub repeats: usize,
    pub instances: InstanceGenConfig,
    pub planner: PlannerConfig,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            n_instances: 100,
            repeats: 5,
            instances: InstanceGenConfig::default(),
            planner: PlannerConfig { time_limit: 5.0, ..PlannerConfig::default() },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Unscaled encoded primitive.
    pub encoded: Vec<f64>,
    /// Unscaled condition vector; entries 0 and 1 are the relative cost and
    /// the relative location.
    pub condition: Vec<f64>,
    pub primitive: MotionPrimitive,
    pub instance: usize,
    pub repeat: usize,
    pub report: usize,
    pub start_index: usize,
    /// Duration of the primitive (s).
    pub duration: f64,
}

impl TrainingSample {
    pub fn relative_cost(&self) -> f64 {
        self.condition[0]
    }

    pub fn relative_location(&self) -> f64 {
        self.condition[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketScaling {
    pub data: Scaling,
    pub condition: Scaling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub instance: ProblemInstance,
    /// Planner seed of every repeat.
    pub seeds: Vec<u64>,
    pub solved_repeats: usize,
    pub best_cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub repeats: usize,
    /// FNV-1a hash of the serialized planner configuration.
    pub planner_config_hash: String,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub layout_version: u32,
    pub model: ModelId,
    pub condition_names: Vec<String>,
    pub scaling: BTreeMap<usize, BucketScaling>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BucketFile {
    length: usize,
    samples: Vec<TrainingSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub buckets: BTreeMap<usize, Vec<TrainingSample>>,
}

fn fnv_hex(s: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

struct RunResult {
    instance: usize,
    repeat: usize,
    reports: Vec<planner::SolutionReport>,
}

/// Solves `n_instances × repeats` planner runs and assembles the dataset.
pub fn build_dataset(cfg: &DatagenConfig) -> Result<Dataset, DatagenError> {
    if cfg.n_instances == 0 || cfg.repeats == 0 {
        return Err(DatagenError::Config("n_instances and repeats must be at least 1".into()));
    }
    cfg.planner.check().map_err(|e| DatagenError::Config(e.to_string()))?;
    let robot = cfg.planner.robot(cfg.instances.model).map_err(|e| DatagenError::Config(e.to_string()))?;
    let model = &robot.model;

    let instances: Vec<ProblemInstance> = (0..cfg.n_instances)
        .map(|i| {
            let mut rng = seeds::rng(cfg.seed, &format!("datagen/instance/{i}"));
            world::sample_instance(&cfg.instances, &robot, &mut rng)
                .map_err(|e| DatagenError::Instance { index: i, detail: e.to_string() })
        })
        .collect::<Result<_, _>>()?;
    let run_seed = |i: usize, r: usize| seeds::derive(cfg.seed, &format!("datagen/run/{i}/{r}"));

    let jobs: Vec<(usize, usize)> = (0..cfg.n_instances).flat_map(|i| (0..cfg.repeats).map(move |r| (i, r))).collect();
    let runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let seed = run_seed(i, r);
            let pcfg = PlannerConfig { seed, ..cfg.planner.clone() };
            let mut source = RandomSource::new(robot.clone(), None, seeds::rng(seed, "source"));
            let reports = planner::plan(&robot, &instances[i], &pcfg, &mut source, |_| {})
                .map(|o| o.reports)
                .unwrap_or_else(|e| {
                    log::warn!("instance {i} repeat {r}: {e}");
                    Vec::new()
                });
            log::info!("instance {i} repeat {r}: {} solutions", reports.len());
            RunResult { instance: i, repeat: r, reports }
        })
        .collect();

    let mut best: Vec<Option<f64>> = vec![None; cfg.n_instances];
    let mut solved = vec![0usize; cfg.n_instances];
    for run in &runs {
        if let Some(c) = run.reports.iter().map(|r| r.cost).min_by(f64::total_cmp) {
            solved[run.instance] += 1;
            best[run.instance] = Some(best[run.instance].map_or(c, |b: f64| b.min(c)));
        }
    }
    if best.iter().all(Option::is_none) {
        return Err(DatagenError::Empty);
    }

    let mut buckets: BTreeMap<usize, Vec<TrainingSample>> = cfg.planner.buckets.iter().map(|&l| (l, Vec::new())).collect();
    for run in &runs {
        let inst = &instances[run.instance];
        for (k, rep) in run.reports.iter().enumerate() {
            let best_cost = best[run.instance].expect("solved instance");
            let rel_cost = if best_cost > 0.0 { rep.cost / best_cost } else { 1.0 };
            let total = rep.actions.len();
            let mut rng = seeds::rng(cfg.seed, &format!("datagen/split/{}/{}/{k}", run.instance, run.repeat));
            for (prim, start) in primitives::split_trajectory(model, &rep.states, &rep.actions, &cfg.planner.buckets, &mut rng) {
                let rel_loc = start as f64 / total as f64;
                buckets.entry(prim.len()).or_default().push(TrainingSample {
                    encoded: encode_primitive(model, &prim),
                    condition: condition_vector(model, rel_cost, rel_loc, inst),
                    duration: prim.cost(model.dt),
                    primitive: prim,
                    instance: run.instance,
                    repeat: run.repeat,
                    report: k,
                    start_index: start,
                });
            }
        }
    }

    let scaling = buckets
        .iter()
        .map(|(&l, s)| (l, fit_scaling(model, l, s)))
        .collect();
    let hash = fnv_hex(&serde_json::to_string(&cfg.planner).unwrap_or_default());
    let records = instances
        .into_iter()
        .enumerate()
        .map(|(i, instance)| InstanceRecord {
            index: i,
            instance,
            seeds: (0..cfg.repeats).map(|r| run_seed(i, r)).collect(),
            solved_repeats: solved[i],
            best_cost: best[i],
        })
        .collect();
    Ok(Dataset {
        meta: DatasetMeta {
            schema_version: SCHEMA_VERSION,
            layout_version: LAYOUT_VERSION,
            model: model.id,
            condition_names: condition_names(model),
            scaling,
            provenance: Provenance { seed: cfg.seed, repeats: cfg.repeats, planner_config_hash: hash, instances: records },
        },
        buckets,
    })
}

fn fit_scaling(model: &RobotModel, length: usize, samples: &[TrainingSample]) -> BucketScaling {
    if samples.is_empty() {
        return BucketScaling {
            data: Scaling::identity(encoded_dim(model, length)),
            condition: Scaling::identity(crate::diffusion::condition_dim(model)),
        };
    }
    let data: Vec<Vec<f64>> = samples.iter().map(|s| s.encoded.clone()).collect();
    let cond: Vec<Vec<f64>> = samples.iter().map(|s| s.condition.clone()).collect();
    BucketScaling { data: Scaling::fit(&data), condition: Scaling::fit(&cond) }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw encodings and conditions of one bucket.
    pub fn training_rows(&self, length: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let samples = self.buckets.get(&length).map(Vec::as_slice).unwrap_or_default();
        (
            samples.iter().map(|s| s.encoded.clone()).collect(),
            samples.iter().map(|s| s.condition.clone()).collect(),
        )
    }

    pub fn check(&self) -> Result<(), DatagenError> {
        if self.meta.schema_version != SCHEMA_VERSION {
            return Err(DatagenError::Schema(format!("schema version {} (expected {SCHEMA_VERSION})", self.meta.schema_version)));
        }
        if self.meta.layout_version != LAYOUT_VERSION {
            return Err(DatagenError::Schema(format!("layout version {} (expected {LAYOUT_VERSION})", self.meta.layout_version)));
        }
        let model = RobotModel::new(self.meta.model);
        for (&length, samples) in &self.buckets {
            let sc = self
                .meta
                .scaling
                .get(&length)
                .ok_or_else(|| DatagenError::Schema(format!("no scaling statistics for bucket {length}")))?;
            if sc.data.dim() != encoded_dim(&model, length) || sc.condition.dim() != self.meta.condition_names.len() {
                return Err(DatagenError::Schema(format!("scaling statistics of bucket {length} have the wrong size")));
            }
            for (index, s) in samples.iter().enumerate() {
                let bad = |detail: String| DatagenError::Invariant { length, index, detail };
                if s.primitive.len() != length {
                    return Err(bad(format!("primitive length {}", s.primitive.len())));
                }
                s.primitive.check(&model, index).map_err(|e| bad(e.to_string()))?;
                if s.encoded != encode_primitive(&model, &s.primitive) {
                    return Err(bad("encoding does not match the primitive".into()));
                }
                if s.condition.len() != self.meta.condition_names.len() {
                    return Err(bad(format!("condition has {} entries", s.condition.len())));
                }
                if !(s.relative_cost() >= 1.0 - 1e-12) {
                    return Err(bad(format!("relative_cost {} < 1", s.relative_cost())));
                }
                if !(0.0..=1.0).contains(&s.relative_location()) {
                    return Err(bad(format!("relative_location {} outside [0, 1]", s.relative_location())));
                }
            }
        }
        Ok(())
    }

    /// Writes `bucket_{l}.json` per bucket and `meta.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatagenError> {
        let dir = dir.as_ref();
        let io = |p: &Path, source| DatagenError::Io { path: p.display().to_string(), source };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (&length, samples) in &self.buckets {
            let p = dir.join(format!("bucket_{length}.json"));
            let f = BucketFile { length, samples: samples.clone() };
            let s = serde_json::to_string(&f).map_err(|e| DatagenError::Parse { path: p.display().to_string(), detail: e.to_string() })?;
            std::fs::write(&p, s).map_err(|e| io(&p, e))?;
        }
        let p = dir.join("meta.json");
        let s = serde_json::to_string_pretty(&self.meta).map_err(|e| DatagenError::Parse { path: p.display().to_string(), detail: e.to_string() })?;
        std::fs::write(&p, s).map_err(|e| io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatagenError> {
        let dir = dir.as_ref();
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|source| DatagenError::Io { path: p.display().to_string(), source });
        let mp = dir.join("meta.json");
        let raw: serde_json::Value = serde_json::from_str(&read(&mp)?)
            .map_err(|e| DatagenError::Parse { path: mp.display().to_string(), detail: e.to_string() })?;
        if raw.get("schema_version").and_then(|v| v.as_u64()) != Some(SCHEMA_VERSION as u64) {
            return Err(DatagenError::Schema(format!("{}: missing or unsupported schema_version", mp.display())));
        }
        if raw.get("scaling").is_none() {
            return Err(DatagenError::Schema(format!("{}: missing scaling block", mp.display())));
        }
        let meta: DatasetMeta = serde_json::from_value(raw)
            .map_err(|e| DatagenError::Schema(format!("{}: {e}", mp.display())))?;
        let mut buckets = BTreeMap::new();
        for &length in meta.scaling.keys() {
            let p = dir.join(format!("bucket_{length}.json"));
            let f: BucketFile = serde_json::from_str(&read(&p)?)
                .map_err(|e| DatagenError::Parse { path: p.display().to_string(), detail: e.to_string() })?;
            if f.length != length {
                return Err(DatagenError::Schema(format!("{} declares length {}", p.display(), f.length)));
            }
            let mut samples = f.samples;
            for s in &mut samples {
                s.primitive.model = Some(meta.model);
            }
            buckets.insert(length, samples);
        }
        let ds = Self { meta, buckets };
        ds.check()?;
        Ok(ds)
    }
}

/// Training range of one condition feature against its deployment range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCoverage {
    pub name: String,
    pub train_min: f64,
    pub train_max: f64,
    pub query_min: f64,
    pub query_max: f64,
    pub histogram: Vec<usize>,
    pub covered: bool,
}

/// Ranges the condition features take at deployment: relative cost 1,
/// relative location in [0, 1], instance statistics from `gen`.
pub fn deployment_ranges(model: &RobotModel, gen: &InstanceGenConfig) -> Vec<(f64, f64)> {
    let mut r = vec![(1.0, 1.0), (0.0, 1.0), gen.width_range, gen.height_range, (gen.density, gen.density)];
    for _ in 0..2 {
        for i in model.non_translational_indices() {
            if model.is_angle(i) {
                r.push((-1.0, 1.0));
                r.push((-1.0, 1.0));
            } else {
                r.push((0.0, 0.0));
            }
        }
    }
    r
}

/// Histograms every condition feature and flags features whose training
/// range misses part of the deployment range (5% slack of the span).
pub fn coverage_report(ds: &Dataset, queries: &[(f64, f64)], bins: usize) -> Vec<FeatureCoverage> {
    let all: Vec<&TrainingSample> = ds.buckets.values().flatten().collect();
    ds.meta
        .condition_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let vals: Vec<f64> = all.iter().map(|s| s.condition[j]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut histogram = vec![0; bins.max(1)];
            for v in &vals {
                let k = if hi > lo { (((v - lo) / (hi - lo)) * bins as f64) as usize } else { 0 };
                histogram[k.min(bins.max(1) - 1)] += 1;
            }
            let (qlo, qhi) = queries.get(j).copied().unwrap_or((lo, hi));
            let slack = 0.05 * (qhi - qlo).abs();
            let covered = !vals.is_empty() && lo <= qlo + slack && hi >= qhi - slack;
            if !covered {
                log::warn!("condition feature {name}: training range [{lo:.3}, {hi:.3}] does not cover query range [{qlo:.3}, {qhi:.3}]");
            }
            FeatureCoverage { name: name.clone(), train_min: lo, train_max: hi, query_min: qlo, query_max: qhi, histogram, covered }
        })
        .collect()
}
