//! Planar robot models: continuous dynamics, explicit-Euler stepping,
//! analytic Jacobians and box bounds.
//!
//! States and actions are plain `Vec<f64>`; each [`RobotModel`] knows which
//! components are angles (kept wrapped to `(-π, π]`) and which two components
//! are the workspace position.

use std::f64::consts::{FRAC_PI_3, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

pub type State = Vec<f64>;
pub type Action = Vec<f64>;

/// Tolerance used by [`RobotModel::validate`].
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("{what} has dimension {got}, model {model} expects {expected}")]
    Dimension {
        model: ModelId,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("unknown robot model `{0}`")]
    UnknownModel(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    /// First-order unicycle, `q = (x, y, θ)`, `u = (v, ω)`.
    Unicycle1,
    /// Second-order unicycle, `q = (x, y, θ, v, ω)`, `u = (a, α)`.
    Unicycle2,
    /// Car pulling one trailer, `q = (x, y, θ₀, θ₁)`, `u = (v, φ)`.
    CarTrailer,
    /// Planar velocity-controlled point, `q = (x, y)`, `u = (vx, vy)`.
    /// Only used as a lattice sanity model for the search.
    Integrator2,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [
        ModelId::Unicycle1,
        ModelId::Unicycle2,
        ModelId::CarTrailer,
        ModelId::Integrator2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Unicycle1 => "unicycle1",
            ModelId::Unicycle2 => "unicycle2",
            ModelId::CarTrailer => "car_trailer",
            ModelId::Integrator2 => "integrator2",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = DynamicsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DynamicsError::UnknownModel(s.to_string()))
    }
}

/// Wraps an angle into `(-π, π]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Shortest signed angular difference `a - b`, in `(-π, π]`.
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

mod bounds_serde {
    //! JSON has no infinities; unbounded components travel as `null`.
    use serde::{Deserialize, Deserializer, Serializer};

    fn ser<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v
            .iter()
            .map(|x| if x.is_finite() { Some(*x) } else { None })
            .collect();
        serde::Serialize::serialize(&opt, s)
    }

    pub mod lo {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            ser(v, s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let v: Vec<Option<f64>> = Vec::deserialize(d)?;
            Ok(v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
        }
    }

    pub mod hi {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            ser(v, s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let v: Vec<Option<f64>> = Vec::deserialize(d)?;
            Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub id: ModelId,
    pub d_q: usize,
    pub d_u: usize,
    /// Step duration in seconds.
    pub dt: f64,
    #[serde(with = "bounds_serde::lo")]
    pub q_lo: Vec<f64>,
    #[serde(with = "bounds_serde::hi")]
    pub q_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    /// State components that are angles.
    pub angle_indices: Vec<usize>,
    /// Action components that are angles (steering), encoded as sin/cos.
    pub action_angle_indices: Vec<usize>,
    /// The planar position components.
    pub translation_indices: [usize; 2],
    /// Car wheelbase `L` (car_trailer only).
    pub wheelbase: f64,
    /// Hitch-to-trailer-axle distance `d₁` (car_trailer only).
    pub hitch_length: f64,
}

/// Optional per-field overrides of the registry defaults, as read from a
/// planner configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub dt: Option<f64>,
    pub u_lo: Option<Vec<f64>>,
    pub u_hi: Option<Vec<f64>>,
    /// `null` entries mean unbounded.
    pub q_lo: Option<Vec<Option<f64>>>,
    pub q_hi: Option<Vec<Option<f64>>>,
    pub wheelbase: Option<f64>,
    pub hitch_length: Option<f64>,
}

impl RobotModel {
    /// Registry defaults for `id`, `dt = 0.1 s`.
    pub fn new(id: ModelId) -> Self {
        let inf = f64::INFINITY;
        let (d_q, d_u, q_lo, q_hi, u_lo, u_hi, angles, action_angles) = match id {
            ModelId::Unicycle1 => (
                3,
                2,
                vec![-inf; 3],
                vec![inf; 3],
                vec![-0.5, -0.5],
                vec![0.5, 0.5],
                vec![2],
                vec![],
            ),
            ModelId::Unicycle2 => (
                5,
                2,
                vec![-inf, -inf, -inf, -0.5, -0.5],
                vec![inf, inf, inf, 0.5, 0.5],
                vec![-0.25, -0.25],
                vec![0.25, 0.25],
                vec![2],
                vec![],
            ),
            ModelId::CarTrailer => (
                4,
                2,
                vec![-inf; 4],
                vec![inf; 4],
                vec![-0.5, -FRAC_PI_3],
                vec![0.5, FRAC_PI_3],
                vec![2, 3],
                vec![1],
            ),
            ModelId::Integrator2 => (
                2,
                2,
                vec![-inf; 2],
                vec![inf; 2],
                vec![-1.0, -1.0],
                vec![1.0, 1.0],
                vec![],
                vec![],
            ),
        };
        Self {
            id,
            d_q,
            d_u,
            dt: 0.1,
            q_lo,
            q_hi,
            u_lo,
            u_hi,
            angle_indices: angles,
            action_angle_indices: action_angles,
            translation_indices: [0, 1],
            wheelbase: 0.25,
            hitch_length: 0.5,
        }
    }

    pub fn from_name(name: &str) -> Result<Self, DynamicsError> {
        Ok(Self::new(name.parse()?))
    }

    /// Registry defaults for `id` with `overrides` applied and re-validated.
    pub fn with_overrides(id: ModelId, overrides: &ModelOverrides) -> Result<Self, DynamicsError> {
        let mut m = Self::new(id);
        if let Some(dt) = overrides.dt {
            m.dt = dt;
        }
        if let Some(v) = &overrides.u_lo {
            m.u_lo = v.clone();
        }
        if let Some(v) = &overrides.u_hi {
            m.u_hi = v.clone();
        }
        if let Some(v) = &overrides.q_lo {
            m.q_lo = v.iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect();
        }
        if let Some(v) = &overrides.q_hi {
            m.q_hi = v.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
        }
        if let Some(v) = overrides.wheelbase {
            m.wheelbase = v;
        }
        if let Some(v) = overrides.hitch_length {
            m.hitch_length = v;
        }
        m.check()?;
        Ok(m)
    }

    /// Checks the structural invariants of the model description.
    pub fn check(&self) -> Result<(), DynamicsError> {
        let bad = |s: String| Err(DynamicsError::InvalidParams(s));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.q_lo.len() != self.d_q || self.q_hi.len() != self.d_q {
            return bad("state bound length".into());
        }
        if self.u_lo.len() != self.d_u || self.u_hi.len() != self.d_u {
            return bad("action bound length".into());
        }
        if self.u_lo.iter().zip(&self.u_hi).any(|(l, h)| !(l < h)) {
            return bad("u_lo < u_hi violated".into());
        }
        if self.q_lo.iter().zip(&self.q_hi).any(|(l, h)| !(l <= h)) {
            return bad("q_lo <= q_hi violated".into());
        }
        if self.translation_indices.iter().any(|&i| i >= self.d_q) {
            return bad("translation index out of range".into());
        }
        if self.id == ModelId::CarTrailer && (self.wheelbase <= 0.0 || self.hitch_length <= 0.0) {
            return bad("car_trailer lengths must be positive".into());
        }
        Ok(())
    }

    pub fn is_angle(&self, i: usize) -> bool {
        self.angle_indices.contains(&i)
    }

    pub fn is_translation(&self, i: usize) -> bool {
        self.translation_indices.contains(&i)
    }

    /// State components other than the planar position, in index order.
    pub fn non_translational_indices(&self) -> Vec<usize> {
        (0..self.d_q).filter(|&i| !self.is_translation(i)).collect()
    }

    /// Upper bound on planar speed, used by the time heuristic.
    pub fn max_speed(&self) -> f64 {
        match self.id {
            ModelId::Unicycle1 | ModelId::CarTrailer => {
                self.u_lo[0].abs().max(self.u_hi[0].abs())
            }
            ModelId::Unicycle2 => self.q_lo[3].abs().max(self.q_hi[3].abs()),
            ModelId::Integrator2 => {
                let vx = self.u_lo[0].abs().max(self.u_hi[0].abs());
                let vy = self.u_lo[1].abs().max(self.u_hi[1].abs());
                vx.hypot(vy)
            }
        }
    }

    fn check_dims(&self, q: &[f64], u: Option<&[f64]>) -> Result<(), DynamicsError> {
        if q.len() != self.d_q {
            return Err(DynamicsError::Dimension {
                model: self.id,
                what: "state",
                got: q.len(),
                expected: self.d_q,
            });
        }
        if let Some(u) = u {
            if u.len() != self.d_u {
                return Err(DynamicsError::Dimension {
                    model: self.id,
                    what: "action",
                    got: u.len(),
                    expected: self.d_u,
                });
            }
        }
        Ok(())
    }

    /// Continuous-time vector field `f(q, u)` written into `out`.
    pub fn derivative_into(&self, q: &[f64], u: &[f64], out: &mut [f64]) {
        match self.id {
            ModelId::Unicycle1 => {
                let (s, c) = q[2].sin_cos();
                out[0] = u[0] * c;
                out[1] = u[0] * s;
                out[2] = u[1];
            }
            ModelId::Unicycle2 => {
                let (s, c) = q[2].sin_cos();
                out[0] = q[3] * c;
                out[1] = q[3] * s;
                out[2] = q[4];
                out[3] = u[0];
                out[4] = u[1];
            }
            ModelId::CarTrailer => {
                let (s, c) = q[2].sin_cos();
                let v = u[0];
                out[0] = v * c;
                out[1] = v * s;
                out[2] = v / self.wheelbase * u[1].tan();
                out[3] = v / self.hitch_length * (q[2] - q[3]).sin();
            }
            ModelId::Integrator2 => {
                out[0] = u[0];
                out[1] = u[1];
            }
        }
    }

    pub fn derivative(&self, q: &[f64], u: &[f64]) -> Result<State, DynamicsError> {
        self.check_dims(q, Some(u))?;
        let mut out = vec![0.0; self.d_q];
        self.derivative_into(q, u, &mut out);
        Ok(out)
    }

    /// Euler step without dimension checks; angles are re-wrapped.
    pub fn step_into(&self, q: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), self.d_q);
        debug_assert_eq!(u.len(), self.d_u);
        self.derivative_into(q, u, out);
        for i in 0..self.d_q {
            out[i] = q[i] + out[i] * self.dt;
        }
        self.wrap_state(out);
    }

    /// `q + f(q, u)·dt` with angle components wrapped. Bounds are not checked.
    pub fn step(&self, q: &[f64], u: &[f64]) -> Result<State, DynamicsError> {
        self.check_dims(q, Some(u))?;
        let mut out = vec![0.0; self.d_q];
        self.step_into(q, u, &mut out);
        Ok(out)
    }

    /// Analytic `(∂step/∂q, ∂step/∂u)`, shapes `d_q×d_q` and `d_q×d_u`.
    pub fn jacobians(&self, q: &[f64], u: &[f64]) -> Result<(Mat, Mat), DynamicsError> {
        self.check_dims(q, Some(u))?;
        let mut jq = Mat::identity(self.d_q);
        let mut ju = Mat::zeros(self.d_q, self.d_u);
        self.jacobians_into(q, u, &mut jq, &mut ju);
        Ok((jq, ju))
    }

    /// Writes the Jacobians into preallocated matrices (`jq` must start as identity
    /// structure; every entry touched here is fully overwritten).
    pub fn jacobians_into(&self, q: &[f64], u: &[f64], jq: &mut Mat, ju: &mut Mat) {
        let dt = self.dt;
        jq.data.iter_mut().for_each(|x| *x = 0.0);
        ju.data.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..self.d_q {
            jq[(i, i)] = 1.0;
        }
        match self.id {
            ModelId::Unicycle1 => {
                let (s, c) = q[2].sin_cos();
                jq[(0, 2)] = -dt * u[0] * s;
                jq[(1, 2)] = dt * u[0] * c;
                ju[(0, 0)] = dt * c;
                ju[(1, 0)] = dt * s;
                ju[(2, 1)] = dt;
            }
            ModelId::Unicycle2 => {
                let (s, c) = q[2].sin_cos();
                jq[(0, 2)] = -dt * q[3] * s;
                jq[(0, 3)] = dt * c;
                jq[(1, 2)] = dt * q[3] * c;
                jq[(1, 3)] = dt * s;
                jq[(2, 4)] = dt;
                ju[(3, 0)] = dt;
                ju[(4, 1)] = dt;
            }
            ModelId::CarTrailer => {
                let (s, c) = q[2].sin_cos();
                let v = u[0];
                let l = self.wheelbase;
                let d = self.hitch_length;
                let (sd, cd) = (q[2] - q[3]).sin_cos();
                let tphi = u[1].tan();
                let cphi = u[1].cos();
                jq[(0, 2)] = -dt * v * s;
                jq[(1, 2)] = dt * v * c;
                jq[(3, 2)] = dt * v / d * cd;
                jq[(3, 3)] = 1.0 - dt * v / d * cd;
                ju[(0, 0)] = dt * c;
                ju[(1, 0)] = dt * s;
                ju[(2, 0)] = dt * tphi / l;
                ju[(2, 1)] = dt * v / (l * cphi * cphi);
                ju[(3, 0)] = dt * sd / d;
            }
            ModelId::Integrator2 => {
                ju[(0, 0)] = dt;
                ju[(1, 1)] = dt;
            }
        }
    }

    /// `⟨q0, step(q0, u0), …⟩`, length `us.len() + 1`.
    pub fn rollout(&self, q0: &[f64], us: &[Action]) -> Result<Vec<State>, DynamicsError> {
        self.check_dims(q0, None)?;
        for u in us {
            self.check_dims(q0, Some(u))?;
        }
        let mut out = Vec::with_capacity(us.len() + 1);
        let mut q = q0.to_vec();
        self.wrap_state(&mut q);
        out.push(q);
        for u in us {
            let mut next = vec![0.0; self.d_q];
            self.step_into(out.last().unwrap(), u, &mut next);
            out.push(next);
        }
        Ok(out)
    }

    /// True iff `q` (and `u`, when given) are within bounds up to [`BOUND_TOL`].
    /// Angles are compared after wrapping.
    pub fn validate(&self, q: &[f64], u: Option<&[f64]>) -> bool {
        if self.check_dims(q, u).is_err() {
            return false;
        }
        let q_ok = q.iter().enumerate().all(|(i, &x)| {
            let x = if self.is_angle(i) { wrap_angle(x) } else { x };
            x.is_finite() && x >= self.q_lo[i] - BOUND_TOL && x <= self.q_hi[i] + BOUND_TOL
        });
        let u_ok = u.is_none_or(|u| {
            u.iter().enumerate().all(|(i, &x)| {
                x.is_finite() && x >= self.u_lo[i] - BOUND_TOL && x <= self.u_hi[i] + BOUND_TOL
            })
        });
        q_ok && u_ok
    }

    pub fn wrap_state(&self, q: &mut [f64]) {
        for &i in &self.angle_indices {
            q[i] = wrap_angle(q[i]);
        }
    }

    /// Angle-aware difference `a ⊖ b`.
    pub fn difference_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for i in 0..self.d_q {
            out[i] = a[i] - b[i];
        }
        for &i in &self.angle_indices {
            out[i] = wrap_angle(out[i]);
        }
    }

    pub fn difference(&self, a: &[f64], b: &[f64]) -> State {
        let mut out = vec![0.0; self.d_q];
        self.difference_into(a, b, &mut out);
        out
    }

    pub fn clamp_action(&self, u: &mut [f64]) {
        for i in 0..self.d_u {
            u[i] = u[i].clamp(self.u_lo[i], self.u_hi[i]);
        }
    }

    pub fn clamp_state(&self, q: &mut [f64]) {
        for i in 0..self.d_q {
            if !self.is_angle(i) {
                q[i] = q[i].clamp(self.q_lo[i], self.q_hi[i]);
            }
        }
    }
}
