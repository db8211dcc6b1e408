//! Classical dissipative dynamics:
//! `theta' = G I`, `I' = -V+ sin(theta - omega t) - V- sin(theta + omega t) - gamma I`.
//!
//! Integration is fixed-step RK4 with a whole number of steps per driving
//! period, so stroboscopic samples land exactly on `t = k T`.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{derive_geometry, ModelParams};

pub const DEFAULT_STEPS_PER_PERIOD: usize = 512;

/// Phase-space point. `theta` is reduced to `[0, 2 pi)` by every public
/// constructor and integrator output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint {
    pub theta: f64,
    pub action: f64,
}

impl PhasePoint {
    pub fn new(theta: f64, action: f64) -> Self {
        Self {
            theta: wrap_angle(theta),
            action,
        }
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Distance on the circle.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[inline]
fn vector_field(theta: f64, action: f64, t: f64, p: &ModelParams) -> (f64, f64) {
    let d_theta = p.g * action;
    let d_action = -p.v_plus * (theta - p.omega * t).sin()
        - p.v_minus * (theta + p.omega * t).sin()
        - p.gamma * action;
    (d_theta, d_action)
}

/// One RK4 step on raw (unwrapped) coordinates. `dt` may be negative.
pub fn rk4_raw(theta: f64, action: f64, t: f64, dt: f64, p: &ModelParams) -> (f64, f64) {
    let h2 = 0.5 * dt;
    let (a1, b1) = vector_field(theta, action, t, p);
    let (a2, b2) = vector_field(theta + h2 * a1, action + h2 * b1, t + h2, p);
    let (a3, b3) = vector_field(theta + h2 * a2, action + h2 * b2, t + h2, p);
    let (a4, b4) = vector_field(theta + dt * a3, action + dt * b3, t + dt, p);
    (
        theta + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
        action + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
    )
}

/// Advances `state` from `t` to `t + dt` with one RK4 step.
pub fn step(state: PhasePoint, t: f64, dt: f64, params: &ModelParams) -> PhasePoint {
    let (theta, action) = rk4_raw(state.theta, state.action, t, dt, params);
    PhasePoint::new(theta, action)
}

/// Integrates raw coordinates from `t0` to `t1` in `steps` equal steps.
pub fn integrate_raw(
    theta: f64,
    action: f64,
    t0: f64,
    t1: f64,
    steps: usize,
    p: &ModelParams,
) -> (f64, f64) {
    let dt = (t1 - t0) / steps as f64;
    let (mut th, mut ac) = (theta, action);
    for k in 0..steps {
        (th, ac) = rk4_raw(th, ac, t0 + k as f64 * dt, dt, p);
    }
    (th, ac)
}

/// Period propagator with the drive phases tabulated once, valid for
/// integration windows that start at multiples of `T`.
#[derive(Debug, Clone)]
pub struct PeriodFlow {
    params: ModelParams,
    steps: usize,
    dt: f64,
    /// `(cos, sin)` of `omega t` at the half-step grid `t = j dt / 2`, `j = 0..=2 steps`.
    drive: Vec<(f64, f64)>,
}

impl PeriodFlow {
    pub fn new(params: &ModelParams, steps_per_period: usize) -> Self {
        let steps = steps_per_period.max(1);
        let dt = params.period() / steps as f64;
        let drive = (0..=2 * steps)
            .map(|j| {
                let phase = TAU * j as f64 / (2 * steps) as f64;
                (phase.cos(), phase.sin())
            })
            .collect();
        Self {
            params: *params,
            steps,
            dt,
            drive,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps
    }

    #[inline]
    fn field(&self, theta: f64, action: f64, j: usize) -> (f64, f64) {
        let p = &self.params;
        let (c, s) = self.drive[j];
        let (st, ct) = theta.sin_cos();
        // sin(theta -+ wt) = sin(theta) cos(wt) -+ cos(theta) sin(wt)
        let d_action = -(p.v_plus + p.v_minus) * st * c + (p.v_plus - p.v_minus) * ct * s
            - p.gamma * action;
        (p.g * action, d_action)
    }

    /// One period on raw coordinates; also returns the mean action over the
    /// period (trapezoidal rule on the step grid).
    pub fn advance(&self, theta: f64, action: f64) -> (f64, f64, f64) {
        let dt = self.dt;
        let h2 = 0.5 * dt;
        let (mut th, mut ac) = (theta, action);
        let mut sum = 0.5 * ac;
        for k in 0..self.steps {
            let j = 2 * k;
            let (a1, b1) = self.field(th, ac, j);
            let (a2, b2) = self.field(th + h2 * a1, ac + h2 * b1, j + 1);
            let (a3, b3) = self.field(th + h2 * a2, ac + h2 * b2, j + 1);
            let (a4, b4) = self.field(th + dt * a3, ac + dt * b3, j + 2);
            th += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            ac += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            sum += ac;
        }
        sum -= 0.5 * ac;
        (th, ac, sum / self.steps as f64)
    }

    pub fn advance_point(&self, state: PhasePoint) -> PhasePoint {
        let (th, ac, _) = self.advance(state.theta, state.action);
        PhasePoint::new(th, ac)
    }
}

/// States at `t = 0, T, ..., periods T`.
pub fn stroboscopic_map(
    initial: PhasePoint,
    periods: usize,
    params: &ModelParams,
    steps_per_period: usize,
) -> Vec<PhasePoint> {
    let flow = PeriodFlow::new(params, steps_per_period);
    let mut out = Vec::with_capacity(periods + 1);
    let (mut th, mut ac) = (initial.theta, initial.action);
    out.push(PhasePoint::new(th, ac));
    for _ in 0..periods {
        (th, ac, _) = flow.advance(th, ac);
        out.push(PhasePoint::new(th, ac));
    }
    out
}

/// Finite-difference Jacobian determinant of the one-period map at `state`.
pub fn period_map_jacobian_det(
    state: PhasePoint,
    params: &ModelParams,
    steps_per_period: usize,
    eps: f64,
) -> f64 {
    let flow = PeriodFlow::new(params, steps_per_period);
    let map = |th: f64, ac: f64| {
        let (a, b, _) = flow.advance(th, ac);
        (a, b)
    };
    let (tp, ap) = map(state.theta + eps, state.action);
    let (tm, am) = map(state.theta - eps, state.action);
    let (tq, aq) = map(state.theta, state.action + eps);
    let (tr, ar) = map(state.theta, state.action - eps);
    let d_theta_d_theta = (tp - tm) / (2.0 * eps);
    let d_action_d_theta = (ap - am) / (2.0 * eps);
    let d_theta_d_action = (tq - tr) / (2.0 * eps);
    let d_action_d_action = (aq - ar) / (2.0 * eps);
    d_theta_d_theta * d_action_d_action - d_theta_d_action * d_action_d_theta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AttractorKind {
    UpperCycle,
    LowerCycle,
    FixedPoint0,
    FixedPointPi,
    Unresolved,
}

impl AttractorKind {
    pub const ALL: [AttractorKind; 5] = [
        AttractorKind::UpperCycle,
        AttractorKind::LowerCycle,
        AttractorKind::FixedPoint0,
        AttractorKind::FixedPointPi,
        AttractorKind::Unresolved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttractorKind::UpperCycle => "upper_cycle",
            AttractorKind::LowerCycle => "lower_cycle",
            AttractorKind::FixedPoint0 => "fixed_point_0",
            AttractorKind::FixedPointPi => "fixed_point_pi",
            AttractorKind::Unresolved => "unresolved",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttractorLabel {
    pub kind: AttractorKind,
    pub final_point: PhasePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinOptions {
    pub horizon_periods: usize,
    /// Absolute proximity tolerance, in action units and radians.
    pub tol: f64,
    pub steps_per_period: usize,
    /// Consecutive periods a label must persist before integration stops early.
    pub confirm_periods: usize,
}

impl BasinOptions {
    /// Horizon `400 T`, tolerance `0.1 deltaI`, 512 steps per period.
    pub fn for_params(params: &ModelParams) -> Self {
        Self {
            horizon_periods: 400,
            tol: 0.1 * derive_geometry(params).delta_i(),
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
            confirm_periods: 20,
        }
    }
}

fn label_once(
    theta: f64,
    action: f64,
    mean_action: f64,
    i_plus: f64,
    i_minus: f64,
    tol: f64,
) -> AttractorKind {
    if (mean_action - i_plus).abs() < tol {
        AttractorKind::UpperCycle
    } else if (mean_action - i_minus).abs() < tol {
        AttractorKind::LowerCycle
    } else if action.abs() < tol && angle_distance(theta, 0.0) < tol {
        AttractorKind::FixedPoint0
    } else if action.abs() < tol && angle_distance(theta, PI) < tol {
        AttractorKind::FixedPointPi
    } else {
        AttractorKind::Unresolved
    }
}

/// Labels the attractor reached from `initial`.
///
/// Cycles are identified by the period-averaged action, fixed points by the
/// stroboscopic state. A label must hold for `confirm_periods` consecutive
/// periods; if none does before the horizon the point stays `Unresolved`.
pub fn classify_basin(
    initial: PhasePoint,
    params: &ModelParams,
    opts: &BasinOptions,
) -> Result<AttractorLabel> {
    if !(params.gamma > 0.0) {
        return Err(Error::Precondition(
            "basin classification needs gamma > 0".into(),
        ));
    }
    let flow = PeriodFlow::new(params, opts.steps_per_period);
    Ok(classify_with_flow(initial, &flow, opts))
}

fn classify_with_flow(initial: PhasePoint, flow: &PeriodFlow, opts: &BasinOptions) -> AttractorLabel {
    let geo = derive_geometry(flow.params());
    let (mut th, mut ac) = (initial.theta, initial.action);
    let mut current = AttractorKind::Unresolved;
    let mut streak = 0;
    for _ in 0..opts.horizon_periods {
        let (t2, a2, mean) = flow.advance(th, ac);
        th = t2;
        ac = a2;
        let kind = label_once(th, ac, mean, geo.i_plus, geo.i_minus, opts.tol);
        if kind == current {
            streak += 1;
        } else {
            current = kind;
            streak = 1;
        }
        if current != AttractorKind::Unresolved && streak >= opts.confirm_periods {
            break;
        }
    }
    let kind = if streak >= opts.confirm_periods.min(opts.horizon_periods) {
        current
    } else {
        AttractorKind::Unresolved
    };
    AttractorLabel {
        kind,
        final_point: PhasePoint::new(th, ac),
    }
}

/// Rectangular grid of initial conditions: `theta` on `[0, 2 pi)`, action on
/// the closed interval `action_range`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinGrid {
    pub n_theta: usize,
    pub n_action: usize,
    pub action_range: (f64, f64),
}

impl BasinGrid {
    /// 200 x 200 over `I in [-2 omega/G, 2 omega/G]`.
    pub fn for_params(params: &ModelParams) -> Self {
        let span = 2.0 * params.omega / params.g;
        Self {
            n_theta: 200,
            n_action: 200,
            action_range: (-span, span),
        }
    }

    pub fn points(&self) -> Vec<PhasePoint> {
        let (lo, hi) = self.action_range;
        let denom = (self.n_action.max(2) - 1) as f64;
        let mut pts = Vec::with_capacity(self.n_theta * self.n_action);
        for j in 0..self.n_action {
            let action = if self.n_action == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * j as f64 / denom
            };
            for i in 0..self.n_theta {
                pts.push(PhasePoint::new(TAU * i as f64 / self.n_theta as f64, action));
            }
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasinCell {
    pub initial: PhasePoint,
    pub label: AttractorLabel,
}

/// Classifies every grid point; data-parallel, result order follows
/// [`BasinGrid::points`].
pub fn basin_census(
    grid: &BasinGrid,
    params: &ModelParams,
    opts: &BasinOptions,
) -> Result<Vec<BasinCell>> {
    if !(params.gamma > 0.0) {
        return Err(Error::Precondition(
            "basin classification needs gamma > 0".into(),
        ));
    }
    let flow = PeriodFlow::new(params, opts.steps_per_period);
    Ok(grid
        .points()
        .into_par_iter()
        .map(|initial| BasinCell {
            initial,
            label: classify_with_flow(initial, &flow, opts),
        })
        .collect())
}

/// Weighted collection of phase points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub points: Vec<PhasePoint>,
    pub weights: Vec<f64>,
}

impl Ensemble {
    pub fn new(points: Vec<PhasePoint>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if points.len() != weights.len() {
            return Err(Error::SizeMismatch {
                expected: points.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Precondition("ensemble weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Precondition("ensemble weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { points, weights })
    }

    pub fn equal_weights(points: Vec<PhasePoint>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n])
    }

    /// `count` particles at fixed action with phases evenly spread over the
    /// circle (midpoint rule).
    pub fn ring(action: f64, count: usize) -> Result<Self> {
        let pts = (0..count)
            .map(|k| PhasePoint::new(TAU * (k as f64 + 0.5) / count as f64, action))
            .collect();
        Self::equal_weights(pts)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Integrates every member from `t = 0` to `t_final`; weights are carried
/// over unchanged.
pub fn propagate_ensemble(
    ens: &Ensemble,
    t_final: f64,
    params: &ModelParams,
    steps_per_period: usize,
) -> Ensemble {
    let flow = PeriodFlow::new(params, steps_per_period);
    let period = params.period();
    let whole = (t_final / period + 1e-9).floor() as usize;
    let rest = t_final - whole as f64 * period;
    let rest_steps = ((rest / period) * steps_per_period as f64).ceil() as usize;
    let points = ens
        .points
        .par_iter()
        .map(|pt| {
            let (mut th, mut ac) = (pt.theta, pt.action);
            for _ in 0..whole {
                (th, ac, _) = flow.advance(th, ac);
            }
            if rest_steps > 0 {
                let t0 = whole as f64 * period;
                (th, ac) = integrate_raw(th, ac, t0, t_final, rest_steps, params);
            }
            PhasePoint::new(th, ac)
        })
        .collect();
    Ensemble {
        points,
        weights: ens.weights.clone(),
    }
}

/// Weighted action histogram; `weights[k]` is the mass in `[edges[k], edges[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub weights: Vec<f64>,
    /// Mass that fell outside the edges.
    pub outside: f64,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
        .collect()
}

pub fn action_histogram(ens: &Ensemble, edges: &[f64]) -> Result<Histogram> {
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::BadBins);
    }
    let total = ens.total_weight();
    let last = edges.len() - 1;
    let mut weights = vec![0.0; last];
    let mut outside = 0.0;
    for (pt, w) in ens.points.iter().zip(&ens.weights) {
        let x = pt.action;
        // right edge of the last bin is closed
        let idx = if x == edges[last] {
            Some(last - 1)
        } else if x < edges[0] || x > edges[last] || x.is_nan() {
            None
        } else {
            Some(edges.partition_point(|e| *e <= x) - 1)
        };
        match idx {
            Some(k) => weights[k] += w / total,
            None => outside += w / total,
        }
    }
    Ok(Histogram {
        edges: edges.to_vec(),
        weights,
        outside,
    })
}
