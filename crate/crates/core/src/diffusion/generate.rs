//! Trained per-length denoisers and primitive generation from them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{condition_dim, condition_vector, decode_primitive, encoded_dim, LAYOUT_VERSION};
use super::{Ddpm, DiffusionError};
use crate::dynamics::{ModelId, RobotModel};
use crate::planner::{PlannerError, PrimitiveSource};
use crate::primitives::{MotionPrimitive, PrimitiveSet};
use crate::world::{ProblemInstance, Robot};

/// A diffusion model that serves primitives of one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveDenoiser {
    pub layout_version: u32,
    pub model: ModelId,
    pub length: usize,
    pub ddpm: Ddpm,
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

impl PrimitiveDenoiser {
    pub fn check(&self) -> Result<(), DiffusionError> {
        let bad = |detail: String| DiffusionError::Model { path: String::from("<memory>"), detail };
        if self.layout_version != LAYOUT_VERSION {
            return Err(bad(format!("layout version {} (expected {LAYOUT_VERSION})", self.layout_version)));
        }
        let m = RobotModel::new(self.model);
        if self.ddpm.data_dim() != encoded_dim(&m, self.length) {
            return Err(bad(format!("data dimension {} does not fit length {}", self.ddpm.data_dim(), self.length)));
        }
        if self.ddpm.cond_dim() != condition_dim(&m) {
            return Err(bad(format!("condition dimension {}", self.ddpm.cond_dim())));
        }
        self.ddpm.check()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiffusionError> {
        let path = path.as_ref();
        let s = serde_json::to_string(self).map_err(|e| DiffusionError::Model { path: path.display().to_string(), detail: e.to_string() })?;
        std::fs::write(path, s).map_err(|source| DiffusionError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiffusionError> {
        let path = path.as_ref();
        let p = path.display().to_string();
        let s = std::fs::read_to_string(path).map_err(|source| DiffusionError::Io { path: p.clone(), source })?;
        let d: Self = serde_json::from_str(&s).map_err(|e| DiffusionError::Model { path: p.clone(), detail: e.to_string() })?;
        d.check().map_err(|e| DiffusionError::Model { path: p, detail: e.to_string() })?;
        Ok(d)
    }

    pub fn file_name(length: usize) -> String {
        format!("model_l{length}.json")
    }
}

/// Denoisers for one robot model, keyed by primitive length.
#[derive(Clone, Debug, Default)]
pub struct ModelBank {
    pub models: BTreeMap<usize, PrimitiveDenoiser>,
}

impl ModelBank {
    pub fn insert(&mut self, d: PrimitiveDenoiser) {
        self.models.insert(d.length, d);
    }

    /// Loads every `model_l*.json` file in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, DiffusionError> {
        let dir = dir.as_ref();
        let rd = std::fs::read_dir(dir).map_err(|source| DiffusionError::Io { path: dir.display().to_string(), source })?;
        let mut names: Vec<_> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("model_l") && n.ends_with(".json"))
            })
            .collect();
        names.sort();
        let mut bank = Self::default();
        for p in names {
            bank.insert(PrimitiveDenoiser::load(&p)?);
        }
        if let Some(first) = bank.models.values().next() {
            let id = first.model;
            if bank.models.values().any(|m| m.model != id) {
                return Err(DiffusionError::Model { path: dir.display().to_string(), detail: "models for different robots".into() });
            }
        }
        Ok(bank)
    }

    pub fn model_id(&self) -> Option<ModelId> {
        self.models.values().next().map(|m| m.model)
    }
}

/// Outcome counters of a generation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub attempts: usize,
    pub accepted: usize,
}

/// Samples `count` valid primitives of `length` for `inst`, drawing the
/// relative location uniformly and fixing the relative cost at 1.
pub fn generate_bucket<R: Rng + ?Sized>(
    model: &RobotModel,
    denoiser: &PrimitiveDenoiser,
    inst: &ProblemInstance,
    count: usize,
    rng: &mut R,
    stats: &mut GenerationStats,
) -> Result<Vec<MotionPrimitive>, DiffusionError> {
    let max_attempts = 100 * count;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts >= max_attempts {
            return Err(DiffusionError::LowAcceptance { length: denoiser.length, accepted: out.len(), attempts });
        }
        attempts += 1;
        let cond = condition_vector(model, 1.0, rng.random_range(0.0..=1.0), inst);
        let raw = denoiser.ddpm.sample(&cond, rng)?;
        match decode_primitive(model, &raw, denoiser.length) {
            Ok(p) => out.push(p),
            Err(e) => log::trace!("rejected sample: {e}"),
        }
    }
    stats.attempts += attempts;
    stats.accepted += out.len();
    Ok(out)
}

/// One bucket per `(length, count)` pair, in the given order.
pub fn generate_set<R: Rng + ?Sized>(
    model: &RobotModel,
    bank: &ModelBank,
    inst: &ProblemInstance,
    counts: &[(usize, usize)],
    rng: &mut R,
) -> Result<(PrimitiveSet, GenerationStats), DiffusionError> {
    let mut set = PrimitiveSet::new(model.id);
    let mut stats = GenerationStats::default();
    for &(len, n) in counts {
        let d = bank.models.get(&len).ok_or(DiffusionError::MissingModel(len))?;
        for p in generate_bucket(model, d, inst, n, rng, &mut stats)? {
            set.push(p);
        }
    }
    Ok((set, stats))
}

/// Planner source backed by a model bank and a fixed instance.
pub struct DiffusionSource {
    model: RobotModel,
    bank: Arc<ModelBank>,
    inst: ProblemInstance,
    rng: ChaCha8Rng,
    pub stats: GenerationStats,
}

impl DiffusionSource {
    pub fn new(bank: Arc<ModelBank>, robot: &Robot, inst: &ProblemInstance, rng: ChaCha8Rng) -> Result<Self, DiffusionError> {
        if let Some(id) = bank.model_id() {
            if id != robot.model.id {
                return Err(DiffusionError::Model { path: String::from("<bank>"), detail: format!("models target {id}, robot is {}", robot.model.id) });
            }
        }
        Ok(Self { model: robot.model.clone(), bank, inst: inst.clone(), rng, stats: GenerationStats::default() })
    }
}

impl PrimitiveSource for DiffusionSource {
    fn draw(&mut self, length: usize, count: usize) -> Result<Vec<MotionPrimitive>, PlannerError> {
        let d = self
            .bank
            .models
            .get(&length)
            .ok_or_else(|| PlannerError::Source(DiffusionError::MissingModel(length).to_string()))?;
        generate_bucket(&self.model, d, &self.inst, count, &mut self.rng, &mut self.stats).map_err(|e| PlannerError::Source(e.to_string()))
    }
}
