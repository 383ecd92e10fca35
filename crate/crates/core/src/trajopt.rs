//! Trajectory repair and two-point boundary value solves.
//!
//! Direct transcription over the stacked variables
//! `z = [u_0, q_1, u_1, q_2, …, u_{T-1}, q_T]` (the start state is fixed),
//! minimised with a penalty method: each round runs projected Gauss-Newton
//! with a halving line search on
//!
//! ```text
//! ρ·w_defect·Σ‖q_{t+1} ⊖ step(q_t,u_t)‖² + ρ·w_obs·Σ hinge²(clearance)
//!   + ρ·w_goal·‖q_T ⊖ q_g‖² + w_reg·Σ‖u_t‖²
//! ```
//!
//! and ρ grows tenfold between rounds. Every residual only touches one
//! `(q_t, u_t, q_{t+1})` window, so the normal equations are banded.
//!
//! A candidate is accepted as feasible only after replaying its actions from
//! the start state, so returned state sequences are exact rollouts.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, RobotModel, State};
use crate::linalg::{Mat, SymBand};
use crate::world::{ProblemInstance, Robot};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptError {
    #[error("objective became non-finite at round {round}, iteration {iteration}")]
    NonFinite { round: usize, iteration: usize },
    #[error("initial guess has {states} states for {actions} actions")]
    GuessShape { states: usize, actions: usize },
    #[error("empty horizon")]
    EmptyHorizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptSettings {
    pub w_defect: f64,
    pub w_obs: f64,
    pub w_goal: f64,
    pub w_reg: f64,
    /// Penalty multiplier of the first round.
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_rounds: usize,
    pub max_iters_per_round: usize,
    pub defect_tol: f64,
    pub goal_tol: f64,
    /// Extra clearance the obstacle penalty asks for (m).
    pub clearance_margin: f64,
    /// Upper bound on re-optimisations spent by [`shrink_horizon`].
    pub max_shrink_evals: usize,
    /// Horizon growth factor used by [`repair`] after a failed solve.
    pub stretch_factor: f64,
    /// Number of lengthened retries in [`repair`].
    pub max_stretches: usize,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            w_defect: 10.0,
            w_obs: 10.0,
            w_goal: 10.0,
            w_reg: 1e-2,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            max_rounds: 5,
            max_iters_per_round: 30,
            defect_tol: 1e-4,
            goal_tol: 1e-3,
            clearance_margin: 0.01,
            max_shrink_evals: 8,
            stretch_factor: 1.5,
            max_stretches: 2,
        }
    }
}

/// One optimisation query.
#[derive(Clone, Debug)]
pub struct OptProblem<'a> {
    pub robot: &'a Robot,
    /// Workspace and obstacles; `None` means unbounded free space.
    pub environment: Option<&'a ProblemInstance>,
    pub start: State,
    pub goal: State,
    pub guess_states: Vec<State>,
    pub guess_actions: Vec<Action>,
    pub settings: OptSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub feasible: bool,
    /// `T·dt` in seconds.
    pub cost: f64,
    pub max_defect: f64,
    pub goal_residual: f64,
    pub iterations: usize,
    /// Objective value after every accepted step, one vector per round.
    pub objective_trace: Vec<Vec<f64>>,
}

/// Stacked residuals `Q[t+1] ⊖ step(Q[t], U[t])`, length `T·d_q`.
pub fn defects(model: &RobotModel, states: &[State], actions: &[Action]) -> Vec<f64> {
    assert_eq!(states.len(), actions.len() + 1, "|Q| must equal |U|+1");
    let mut out = Vec::with_capacity(actions.len() * model.d_q);
    let mut next = vec![0.0; model.d_q];
    let mut d = vec![0.0; model.d_q];
    for t in 0..actions.len() {
        model.step_into(&states[t], &actions[t], &mut next);
        model.difference_into(&states[t + 1], &next, &mut d);
        out.extend_from_slice(&d);
    }
    out
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Objective of one penalty round over the stacked variable vector.
pub struct Transcription<'a> {
    robot: &'a Robot,
    env: Option<&'a ProblemInstance>,
    start: &'a [f64],
    goal: &'a [f64],
    horizon: usize,
    settings: &'a OptSettings,
}

struct Scratch {
    next: Vec<f64>,
    diff: Vec<f64>,
    jq: Mat,
    ju: Mat,
    row: Vec<(usize, f64)>,
}

impl<'a> Transcription<'a> {
    pub fn new(
        robot: &'a Robot,
        env: Option<&'a ProblemInstance>,
        start: &'a [f64],
        goal: &'a [f64],
        horizon: usize,
        settings: &'a OptSettings,
    ) -> Self {
        Self {
            robot,
            env,
            start,
            goal,
            horizon,
            settings,
        }
    }

    fn block(&self) -> usize {
        self.robot.model.d_q + self.robot.model.d_u
    }

    pub fn n_vars(&self) -> usize {
        self.horizon * self.block()
    }

    fn u_off(&self, t: usize) -> usize {
        t * self.block()
    }

    /// Offset of `q_t` for `t ≥ 1`.
    fn q_off(&self, t: usize) -> usize {
        (t - 1) * self.block() + self.robot.model.d_u
    }

    pub fn pack(&self, states: &[State], actions: &[Action]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.n_vars());
        for t in 0..self.horizon {
            z.extend_from_slice(&actions[t]);
            z.extend_from_slice(&states[t + 1]);
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> (Vec<State>, Vec<Action>) {
        let m = &self.robot.model;
        let mut states = vec![self.start.to_vec()];
        let mut actions = Vec::with_capacity(self.horizon);
        for t in 0..self.horizon {
            let u = self.u_off(t);
            actions.push(z[u..u + m.d_u].to_vec());
            let q = self.q_off(t + 1);
            states.push(z[q..q + m.d_q].to_vec());
        }
        (states, actions)
    }

    fn state<'z>(&'z self, z: &'z [f64], t: usize) -> &'z [f64] {
        if t == 0 {
            self.start
        } else {
            let o = self.q_off(t);
            &z[o..o + self.robot.model.d_q]
        }
    }

    /// Calls `f(residual, jacobian_row)` for every scalar residual, already
    /// scaled by the square root of its weight. The row is empty unless
    /// `with_jac` is set.
    fn residuals(&self, z: &[f64], rho: f64, with_jac: bool, mut f: impl FnMut(f64, &[(usize, f64)])) {
        let m = &self.robot.model;
        let s = self.settings;
        let (dq, du) = (m.d_q, m.d_u);
        let mut sc = Scratch {
            next: vec![0.0; dq],
            diff: vec![0.0; dq],
            jq: Mat::identity(dq),
            ju: Mat::zeros(dq, du),
            row: Vec::with_capacity(2 * dq + du),
        };

        let wd = (s.w_defect * rho).sqrt();
        for t in 0..self.horizon {
            let qt = self.state(z, t);
            let ut = &z[self.u_off(t)..self.u_off(t) + du];
            let qn = self.state(z, t + 1);
            m.step_into(qt, ut, &mut sc.next);
            m.difference_into(qn, &sc.next, &mut sc.diff);
            if with_jac {
                m.jacobians_into(qt, ut, &mut sc.jq, &mut sc.ju);
            }
            for i in 0..dq {
                sc.row.clear();
                if with_jac {
                    if t > 0 {
                        let o = self.q_off(t);
                        for j in 0..dq {
                            let v = sc.jq[(i, j)];
                            if v != 0.0 {
                                sc.row.push((o + j, -wd * v));
                            }
                        }
                    }
                    let o = self.u_off(t);
                    for j in 0..du {
                        let v = sc.ju[(i, j)];
                        if v != 0.0 {
                            sc.row.push((o + j, -wd * v));
                        }
                    }
                    sc.row.push((self.q_off(t + 1) + i, wd));
                }
                f(wd * sc.diff[i], &sc.row);
            }
        }

        let wg = (s.w_goal * rho).sqrt();
        m.difference_into(self.state(z, self.horizon), self.goal, &mut sc.diff);
        let qo = self.q_off(self.horizon);
        for i in 0..dq {
            sc.row.clear();
            if with_jac {
                sc.row.push((qo + i, wg));
            }
            f(wg * sc.diff[i], &sc.row);
        }

        let wr = s.w_reg.sqrt();
        for t in 0..self.horizon {
            let o = self.u_off(t);
            for j in 0..du {
                sc.row.clear();
                if with_jac {
                    sc.row.push((o + j, wr));
                }
                f(wr * z[o + j], &sc.row);
            }
        }

        if let Some(env) = self.env {
            let wo = (s.w_obs * rho).sqrt();
            let [ix, iy] = m.translation_indices;
            for t in 1..=self.horizon {
                let q = self.state(z, t);
                let qo = self.q_off(t);
                for c in self.robot.covering_circles(q) {
                    // ∂center/∂(x, y, φ)
                    let (dcx_dphi, dcy_dphi) = match c.angle_index {
                        Some(a) => {
                            let (sn, cs) = q[a].sin_cos();
                            (-c.lever * sn, c.lever * cs)
                        }
                        None => (0.0, 0.0),
                    };
                    let mut emit = |clear: f64, gx: f64, gy: f64| {
                        // residual = margin - clearance when positive
                        let r = s.clearance_margin - clear;
                        if r <= 0.0 {
                            return;
                        }
                        sc.row.clear();
                        if with_jac {
                            sc.row.push((qo + ix, -wo * gx));
                            sc.row.push((qo + iy, -wo * gy));
                            if let Some(a) = c.angle_index {
                                let g = gx * dcx_dphi + gy * dcy_dphi;
                                if g != 0.0 {
                                    sc.row.push((qo + a, -wo * g));
                                }
                            }
                        }
                        f(wo * r, &sc.row);
                    };
                    emit(c.cx - c.radius, 1.0, 0.0);
                    emit(env.width - c.cx - c.radius, -1.0, 0.0);
                    emit(c.cy - c.radius, 0.0, 1.0);
                    emit(env.height - c.cy - c.radius, 0.0, -1.0);
                    for o in &env.obstacles {
                        // cheap reject before the exact distance
                        if (c.cx - o.cx).abs() > o.hx + c.radius + s.clearance_margin
                            || (c.cy - o.cy).abs() > o.hy + c.radius + s.clearance_margin
                        {
                            continue;
                        }
                        let (d, g) = o.signed_distance(c.cx, c.cy);
                        emit(d - c.radius, g[0], g[1]);
                    }
                }
            }
        }
    }

    pub fn value(&self, z: &[f64], rho: f64) -> f64 {
        let mut v = 0.0;
        self.residuals(z, rho, false, |r, _| v += r * r);
        v
    }

    /// Analytic gradient `2 Jᵀ r`.
    pub fn gradient(&self, z: &[f64], rho: f64) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        self.residuals(z, rho, true, |r, row| {
            for &(j, v) in row {
                g[j] += 2.0 * r * v;
            }
        });
        g
    }

    /// Gauss-Newton system `(JᵀJ, Jᵀr)` and the objective value.
    fn normal_equations(&self, z: &[f64], rho: f64) -> (SymBand, Vec<f64>, f64) {
        let m = &self.robot.model;
        let bw = 2 * m.d_q + m.d_u;
        let mut h = SymBand::zeros(z.len(), bw);
        let mut g = vec![0.0; z.len()];
        let mut value = 0.0;
        self.residuals(z, rho, true, |r, row| {
            value += r * r;
            for (a, &(i, vi)) in row.iter().enumerate() {
                g[i] += vi * r;
                for &(j, vj) in &row[..=a] {
                    h.add(i, j, vi * vj);
                }
            }
        });
        (h, g, value)
    }

    /// Projects onto the box bounds and wraps angles.
    fn project(&self, z: &mut [f64]) {
        let m = &self.robot.model;
        for t in 0..self.horizon {
            let u = self.u_off(t);
            m.clamp_action(&mut z[u..u + m.d_u]);
            let q = self.q_off(t + 1);
            let qs = &mut z[q..q + m.d_q];
            m.clamp_state(qs);
            m.wrap_state(qs);
        }
    }
}

fn check_guess(p: &OptProblem<'_>) -> Result<usize, OptError> {
    let t = p.guess_actions.len();
    if p.guess_states.len() != t + 1 {
        return Err(OptError::GuessShape {
            states: p.guess_states.len(),
            actions: t,
        });
    }
    if t == 0 {
        return Err(OptError::EmptyHorizon);
    }
    Ok(t)
}

/// Replays `actions` from the start and checks every feasibility condition.
fn certify(p: &OptProblem<'_>, actions: &[Action], max_defect: f64) -> (Vec<State>, bool, f64) {
    let m = &p.robot.model;
    let states = m.rollout(&p.start, actions).expect("dimensions checked");
    let goal_res = norm(&m.difference(states.last().unwrap(), &p.goal));
    let bounds_ok = actions
        .iter()
        .zip(&states)
        .all(|(u, q)| m.validate(q, Some(u)))
        && m.validate(states.last().unwrap(), None);
    let free = p.environment.is_none_or(|env| !env.motion_collides(p.robot, &states));
    let ok = max_defect <= p.settings.defect_tol && goal_res <= p.settings.goal_tol && bounds_ok && free;
    (states, ok, goal_res)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Penalty-method Gauss-Newton repair of the guess. Returns the best iterate
/// with `feasible = false` when the budget runs out.
pub fn optimize(p: &OptProblem<'_>) -> Result<OptResult, OptError> {
    let horizon = check_guess(p)?;
    let m = &p.robot.model;
    let s = &p.settings;
    let dt = m.dt;

    // already feasible: keep it
    let d0 = max_abs(&defects(m, &p.guess_states, &p.guess_actions));
    if d0 <= s.defect_tol && p.guess_states[0] == p.start {
        let (states, ok, goal_res) = certify(p, &p.guess_actions, d0);
        if ok {
            return Ok(OptResult {
                states,
                actions: p.guess_actions.clone(),
                feasible: true,
                cost: horizon as f64 * dt,
                max_defect: d0,
                goal_residual: goal_res,
                iterations: 0,
                objective_trace: Vec::new(),
            });
        }
    }

    let tr = Transcription::new(p.robot, p.environment, &p.start, &p.goal, horizon, s);
    let mut z = tr.pack(&p.guess_states, &p.guess_actions);
    tr.project(&mut z);

    let mut rho = s.initial_penalty;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut last = None;
    for round in 0..s.max_rounds {
        let mut round_trace = Vec::new();
        // Levenberg damping: raised when the projected step fails to descend,
        // which bends the step towards the (projected) gradient.
        let mut damping = 1e-9;
        for it in 0..s.max_iters_per_round {
            let (h0, g, f0) = tr.normal_equations(&z, rho);
            if !f0.is_finite() {
                return Err(OptError::NonFinite { round, iteration: it });
            }
            if round_trace.is_empty() {
                round_trace.push(f0);
            }
            let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
            let diag_scale = h0.max_diagonal().max(1e-12);
            iterations += 1;
            let mut accepted = None;
            while accepted.is_none() && damping <= 1e3 {
                let mut h = h0.clone();
                h.add_diagonal(damping * diag_scale);
                let Ok(ch) = h.cholesky() else {
                    damping = (damping * 10.0).max(1e-9);
                    continue;
                };
                let step = ch.solve(&rhs);
                let mut alpha = 1.0;
                for _ in 0..12 {
                    let mut cand: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
                    tr.project(&mut cand);
                    let f1 = tr.value(&cand, rho);
                    if !f1.is_finite() {
                        return Err(OptError::NonFinite { round, iteration: it });
                    }
                    if f1 <= f0 {
                        accepted = Some((cand, f1));
                        break;
                    }
                    alpha *= 0.5;
                }
                if accepted.is_none() {
                    damping *= 10.0;
                }
            }
            let Some((cand, f1)) = accepted else { break };
            debug_assert!(f1 <= *round_trace.last().unwrap());
            let converged = f0 - f1 <= 1e-12 * f0.max(1.0);
            z = cand;
            round_trace.push(f1);
            damping = (damping * 0.1).max(1e-9);
            if converged {
                break;
            }
        }
        trace.push(round_trace);

        let (qz, uz) = tr.unpack(&z);
        let dmax = max_abs(&defects(m, &qz, &uz));
        let (states, ok, goal_res) = certify(p, &uz, dmax);
        let result = OptResult {
            states,
            actions: uz,
            feasible: ok,
            cost: horizon as f64 * dt,
            max_defect: dmax,
            goal_residual: goal_res,
            iterations,
            objective_trace: trace.clone(),
        };
        log::debug!(
            "round {round}: rho {rho:e} iters {iterations} defect {dmax:e} goal {goal_res:e} feasible {ok} f {:?}",
            trace.last().and_then(|t| t.last())
        );
        if ok {
            return Ok(result);
        }
        last = Some(result);
        rho *= s.penalty_growth;
    }
    Ok(last.expect("at least one round"))
}

/// Keeps the end state and `new_len` evenly spread steps of a trajectory,
/// repeating steps when `new_len` exceeds the original horizon.
fn resample(states: &[State], actions: &[Action], new_len: usize) -> (Vec<State>, Vec<Action>) {
    let t = actions.len();
    let mut qs = Vec::with_capacity(new_len + 1);
    let mut us = Vec::with_capacity(new_len);
    for j in 0..new_len {
        let src = (j * t) / new_len;
        qs.push(states[src].clone());
        us.push(actions[src].clone());
    }
    qs.push(states[t].clone());
    (qs, us)
}

/// Tries progressively shorter horizons (binary search over the number of
/// dropped steps) and returns the shortest feasible trajectory found.
pub fn shrink_horizon(p: &OptProblem<'_>, solution: &OptResult) -> OptResult {
    let t = solution.actions.len();
    let mut best = solution.clone();
    let (mut lo, mut hi) = (0usize, t.saturating_sub(1));
    let mut evals = 0;
    while lo < hi && evals < p.settings.max_shrink_evals {
        let mid = (lo + hi).div_ceil(2);
        let (gq, gu) = resample(&solution.states, &solution.actions, t - mid);
        let mut sub = p.clone();
        sub.guess_states = gq;
        sub.guess_actions = gu;
        evals += 1;
        match optimize(&sub) {
            Ok(r) if r.feasible => {
                lo = mid;
                best = r;
            }
            _ => hi = mid - 1,
        }
    }
    debug_assert!(best.cost <= solution.cost);
    best
}

/// Optimizes the guess and, if its horizon turns out too short, retries on
/// lengthened copies before shrinking the first feasible result.
pub fn repair(p: &OptProblem<'_>) -> Result<Option<OptResult>, OptError> {
    let t0 = check_guess(p)?;
    let mut sub = p.clone();
    for attempt in 0..=p.settings.max_stretches {
        if attempt > 0 {
            let len = (t0 as f64 * p.settings.stretch_factor.powi(attempt as i32)).ceil() as usize;
            let (gq, gu) = resample(&p.guess_states, &p.guess_actions, len.max(t0 + 1));
            sub.guess_states = gq;
            sub.guess_actions = gu;
        }
        let r = optimize(&sub)?;
        if r.feasible {
            return Ok(Some(shrink_horizon(&sub, &r)));
        }
    }
    Ok(None)
}
