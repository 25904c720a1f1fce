//! Proximal point algorithm for the regularized equilibrium problem, finite
//! termination detection, the iteration bound and the Fejér inequality check.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, SolutionSet, MEMBERSHIP_TOL};
use crate::model::Game;
use crate::nikaido::{InnerProblem, RegularizedEvaluator};
use crate::vi::vi_residual;

pub const DEFAULT_TOL_SUB: f64 = 1e-9;
pub const DEFAULT_TOL_TERM: f64 = 1e-7;
pub const FEJER_SLACK: f64 = 1e-6;

/// Proximal parameters `r_k`. A listed sequence holds its last value once exhausted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RSchedule {
    Constant(f64),
    Sequence(Vec<f64>),
}

impl RSchedule {
    pub fn r(&self, k: usize) -> f64 {
        match self {
            RSchedule::Constant(r) => *r,
            RSchedule::Sequence(rs) => rs[k.min(rs.len() - 1)],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            RSchedule::Constant(r) => std::slice::from_ref(r),
            RSchedule::Sequence(rs) => rs,
        }
    }

    /// `sup_k 1/r_k`.
    pub fn sup_inverse(&self) -> f64 {
        self.values().iter().map(|r| 1.0 / r).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let values = self.values();
        if values.is_empty() {
            return Err(Error::InvalidParameter("r schedule is empty".into()));
        }
        if let Some(bad) = values.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(format!("every r_k must be positive and finite, got {bad}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PPAConfig {
    pub a: f64,
    pub r: RSchedule,
    /// Declared bound with `1/r_k < ε`; derived from the schedule when absent.
    pub epsilon: Option<f64>,
    pub tol_sub: f64,
    pub tol_term: f64,
    pub max_iters: usize,
    /// Cap on damped fixed-point iterations per subproblem.
    pub sub_max_iters: usize,
}

impl PPAConfig {
    pub fn new(a: f64, r: RSchedule) -> Self {
        Self {
            a,
            r,
            epsilon: None,
            tol_sub: DEFAULT_TOL_SUB,
            tol_term: DEFAULT_TOL_TERM,
            max_iters: 1000,
            sub_max_iters: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidParameter(format!("a must be positive, got {}", self.a)));
        }
        self.r.validate()?;
        for (name, v) in [("tol_sub", self.tol_sub), ("tol_term", self.tol_term)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(eps) = self.epsilon {
            let sup = self.r.sup_inverse();
            if !(eps > sup && eps.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "epsilon {eps} must exceed sup 1/r_k = {sup}"
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_epsilon(&self) -> f64 {
        self.epsilon.unwrap_or_else(|| self.r.sup_inverse() * (1.0 + 1e-12))
    }
}

/// An accepted subproblem solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemStep {
    pub u: DVector<f64>,
    /// `Φ_k(u)`.
    pub residual: f64,
    pub iterations: usize,
}

/// `Φ_k(u) = max_{z ∈ X} [ψ_a(u, z) − (1/r)⟨z − u, u − x_k⟩]`, never negative.
pub fn phi_residual(
    ev: &RegularizedEvaluator<'_>,
    set: &FeasibleSet,
    u: &DVector<f64>,
    x_k: &DVector<f64>,
    r: f64,
) -> Result<f64> {
    let shift = x_k - u;
    let tilt = &shift / r;
    let p = InnerProblem {
        anchor: u,
        tilt: Some(&tilt),
        prox: None,
        start: Some(u),
    };
    let z = ev.maximize(set, &p)?.y;
    // The objective carries ⟨c, z⟩; the constant (1/r)⟨u, u − x_k⟩ completes the integrand.
    let value = ev.inner_objective(&p, &z) - tilt.dot(u);
    Ok(value.max(0.0))
}

/// Solves the regularized subproblem at `x_k` by the damped fixed-point scheme
/// `u ← (1−τ)u + τ·argmax_z [ψ_a(u, z) − (1/(2r))‖z − x_k‖²]`.
///
/// Acceptance rests on the certificate `Φ_k(u) ≤ tol_sub`.
pub fn ppa_subproblem(
    ev: &RegularizedEvaluator<'_>,
    set: &FeasibleSet,
    x_k: &DVector<f64>,
    r: f64,
    tol_sub: f64,
) -> Result<SubproblemStep> {
    solve_subproblem(ev, set, x_k, r, tol_sub, 10_000)
}

fn solve_subproblem(
    ev: &RegularizedEvaluator<'_>,
    set: &FeasibleSet,
    x_k: &DVector<f64>,
    r: f64,
    tol_sub: f64,
    max_iters: usize,
) -> Result<SubproblemStep> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("r must be positive, got {r}")));
    }
    let violation = set.violation(x_k);
    if violation > MEMBERSHIP_TOL {
        return Err(Error::NotInSet { violation });
    }
    let mu = 1.0 / r;
    let map = |u: &DVector<f64>| -> Result<DVector<f64>> {
        let p = InnerProblem {
            anchor: u,
            tilt: None,
            prox: Some((mu, x_k)),
            start: Some(u),
        };
        Ok(ev.maximize(set, &p)?.y)
    };

    let mut u = set.project(x_k);
    let mut tau: f64 = 1.0;
    let mut last_diff = f64::INFINITY;
    let mut best = f64::INFINITY;
    for iter in 1..=max_iters {
        let t = map(&u)?;
        let diff = (&t - &u).norm();
        if diff > last_diff {
            tau = (tau * 0.5).max(1e-6);
        }
        last_diff = diff;
        u = &u * (1.0 - tau) + &t * tau;
        if diff <= 1e-9 * (1.0 + u.norm()) {
            let residual = phi_residual(ev, set, &u, x_k, r)?;
            best = best.min(residual);
            if residual <= tol_sub && diff <= 1e-12 * (1.0 + u.norm()) || residual <= tol_sub * 1e-3 {
                return Ok(SubproblemStep {
                    u,
                    residual,
                    iterations: iter,
                });
            }
            if diff == 0.0 {
                break;
            }
        }
    }
    if best.is_infinite() {
        best = phi_residual(ev, set, &u, x_k, r)?;
    }
    if best <= tol_sub {
        let residual = phi_residual(ev, set, &u, x_k, r)?;
        if residual <= tol_sub {
            return Ok(SubproblemStep {
                u,
                residual,
                iterations: max_iters,
            });
        }
    }
    Err(Error::IterationCap {
        what: "ppa subproblem",
        iterations: max_iters,
        residual: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PPATrace {
    pub iterates: Vec<Vec<f64>>,
    pub gap_va: Vec<f64>,
    pub vi_residual: Vec<f64>,
    /// `‖x_{k+1} − x_k‖`, one per accepted step.
    pub step_norms: Vec<f64>,
    pub sub_residuals: Vec<f64>,
    pub sub_iterations: Vec<usize>,
    pub r_values: Vec<f64>,
    /// First `k` with `V_a(x_k) ≤ tol_term`.
    pub termination_index: Option<usize>,
    /// Whether `ψ_a(·, y)` is convex; `None` when it cannot be decided.
    pub convexity_prerequisite: Option<bool>,
    pub epsilon: f64,
    pub tol_term: f64,
    /// `d(x_{k₀}, X*)` against a declared solution set.
    pub xstar_distance: Option<f64>,
    /// `d(x_{k₀}, X*) ≤ 10·tol_term`.
    pub xstar_consistent: Option<bool>,
}

impl PPATrace {
    pub fn hit_cap(&self) -> bool {
        self.termination_index.is_none()
    }

    pub fn last(&self) -> DVector<f64> {
        DVector::from_column_slice(self.iterates.last().expect("trace holds x_0"))
    }

    pub fn iterate(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.iterates[k])
    }

    /// Writes `k, x1..xn, gap_va, vi_residual, step_norm, sub_residual`;
    /// the step columns are empty at `k = 0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.iterates.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|j| format!("x{j}")));
        header.extend(["gap_va", "vi_residual", "step_norm", "sub_residual"].map(String::from));
        w.write_record(&header).map_err(csv_error)?;
        for (k, x) in self.iterates.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(f64::to_string));
            row.push(self.gap_va[k].to_string());
            row.push(self.vi_residual[k].to_string());
            if k == 0 {
                row.extend([String::new(), String::new()]);
            } else {
                row.push(self.step_norms[k - 1].to_string());
                row.push(self.sub_residuals[k - 1].to_string());
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

/// Runs the proximal point method from `x0` until `V_a(x_k) ≤ tol_term` or the cap.
///
/// Reaching the cap is not an error: the trace comes back with no termination index.
pub fn ppa_run(
    game: &dyn Game,
    set: &FeasibleSet,
    x0: &DVector<f64>,
    config: &PPAConfig,
    xstar: Option<&SolutionSet>,
) -> Result<PPATrace> {
    config.validate()?;
    game.layout().check_point(x0)?;
    let violation = set.violation(x0);
    if violation > MEMBERSHIP_TOL {
        return Err(Error::NotInSet { violation });
    }
    let ev = RegularizedEvaluator::new(game, config.a)?;
    let convexity_prerequisite = match ev.psi_convex_in_x() {
        Ok(b) => Some(b),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    if convexity_prerequisite == Some(false) {
        log::warn!("psi_a is not convex in x for a = {}; termination is not guaranteed", config.a);
    }

    let mut x = set.project(x0);
    let mut trace = PPATrace {
        iterates: Vec::new(),
        gap_va: Vec::new(),
        vi_residual: Vec::new(),
        step_norms: Vec::new(),
        sub_residuals: Vec::new(),
        sub_iterations: Vec::new(),
        r_values: Vec::new(),
        termination_index: None,
        convexity_prerequisite,
        epsilon: config.resolved_epsilon(),
        tol_term: config.tol_term,
        xstar_distance: None,
        xstar_consistent: None,
    };
    let record = |trace: &mut PPATrace, x: &DVector<f64>| -> Result<bool> {
        let gap = ev.gap(set, x)?;
        trace.iterates.push(x.as_slice().to_vec());
        trace.gap_va.push(gap);
        trace.vi_residual.push(vi_residual(game, set, x));
        Ok(gap <= config.tol_term)
    };

    let mut done = record(&mut trace, &x)?;
    let mut k = 0;
    while !done && k < config.max_iters {
        let r = config.r.r(k);
        let step = solve_subproblem(&ev, set, &x, r, config.tol_sub, config.sub_max_iters)?;
        trace.step_norms.push((&step.u - &x).norm());
        trace.sub_residuals.push(step.residual);
        trace.sub_iterations.push(step.iterations);
        trace.r_values.push(r);
        x = step.u;
        k += 1;
        done = record(&mut trace, &x)?;
    }
    if done {
        trace.termination_index = Some(k);
        if let Some(xs) = xstar {
            let d = xs.distance(&x);
            trace.xstar_distance = Some(d);
            trace.xstar_consistent = Some(d <= 10.0 * config.tol_term);
        }
    }
    Ok(trace)
}

/// `d0²·ε²/γ²`, the bound on the termination index under weak sharpness.
pub fn iteration_bound(d0: f64, epsilon: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma}: weak sharpness is absent and the bound is undefined"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(d0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("distance must be nonnegative, got {d0}")));
    }
    Ok(d0 * d0 * epsilon * epsilon / (gamma * gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FejerPair {
    pub k: usize,
    /// `‖x_{k+1} − x_k‖²`
    pub lhs: f64,
    /// `‖x* − x_k‖² − ‖x* − x_{k+1}‖²`
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FejerReport {
    pub pairs: Vec<FejerPair>,
    pub holds: bool,
    pub max_violation: f64,
    pub slack: f64,
    pub convexity_prerequisite: Option<bool>,
    /// Set when the prerequisite is broken, so a failure is expected rather than a bug.
    pub note: Option<String>,
}

/// Checks `‖x_{k+1}−x_k‖² ≤ ‖x*−x_k‖² − ‖x*−x_{k+1}‖² + 1e-6` along the trace.
pub fn fejer_check(trace: &PPATrace, x_star: &DVector<f64>) -> FejerReport {
    let pairs: Vec<FejerPair> = trace
        .iterates
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (a, b) = (DVector::from_column_slice(&w[0]), DVector::from_column_slice(&w[1]));
            let lhs = (&b - &a).norm_squared();
            let rhs = (x_star - &a).norm_squared() - (x_star - &b).norm_squared();
            FejerPair {
                k,
                lhs,
                rhs,
                holds: lhs <= rhs + FEJER_SLACK,
            }
        })
        .collect();
    let max_violation = pairs.iter().map(|p| p.lhs - p.rhs).fold(0.0, f64::max);
    let note = match trace.convexity_prerequisite {
        Some(false) => Some("psi_a is not convex in x (a > delta); the inequality is not guaranteed".into()),
        None => Some("convexity of psi_a in x was not decided for this game".into()),
        Some(true) => None,
    };
    FejerReport {
        holds: pairs.iter().all(|p| p.holds),
        pairs,
        max_violation,
        slack: FEJER_SLACK,
        convexity_prerequisite: trace.convexity_prerequisite,
        note,
    }
}

/// Whether step norms trend to zero: means over consecutive windows of 5
/// never increase by more than `slack`. Traces shorter than a window pass.
pub fn step_norms_trend_down(step_norms: &[f64], slack: f64) -> bool {
    let means: Vec<f64> = step_norms.chunks(5).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    means.windows(2).all(|w| w[1] <= w[0] + slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticGame;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use std::collections::BTreeMap;

    fn pt(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn scalar_game(a11: f64, a22: f64, a12: f64, a21: f64) -> QuadraticGame {
        let mut blocks = BTreeMap::new();
        for (k, v) in [((0, 0), a11), ((1, 1), a22), ((0, 1), a12), ((1, 0), a21)] {
            blocks.insert(k, DMatrix::from_element(1, 1, v));
        }
        QuadraticGame::new(vec![1, 1], blocks).unwrap()
    }

    fn sharp() -> (QuadraticGame, FeasibleSet) {
        (
            scalar_game(1.0, 1.0, 0.25, 0.25),
            FeasibleSet::new_box(pt(&[1.0, 1.0]), pt(&[2.0, 2.0])).unwrap(),
        )
    }

    #[test]
    fn subproblem_at_solution_is_accepted() {
        let (g, set) = sharp();
        let ev = RegularizedEvaluator::new(&g, 0.5).unwrap();
        let step = ppa_subproblem(&ev, &set, &pt(&[1.0, 1.0]), 1.0, 1e-9).unwrap();
        assert!((&step.u - pt(&[1.0, 1.0])).norm() <= 1e-12);
        assert!(step.residual <= 1e-9);
    }

    #[test]
    fn subproblem_from_far_corner() {
        let (g, set) = sharp();
        let ev = RegularizedEvaluator::new(&g, 0.5).unwrap();
        let xk = pt(&[2.0, 2.0]);
        let step = ppa_subproblem(&ev, &set, &xk, 1.0, 1e-9).unwrap();
        assert!(step.residual <= 1e-9);
        let star = pt(&[1.0, 1.0]);
        assert!((&step.u - &star).norm() < (&xk - &star).norm());
    }

    #[test]
    fn phi_is_nonnegative_and_flags_bad_points() {
        let (g, set) = sharp();
        let ev = RegularizedEvaluator::new(&g, 0.5).unwrap();
        let xk = pt(&[2.0, 2.0]);
        for u in [pt(&[1.0, 1.0]), pt(&[1.1, 1.0]), pt(&[2.0, 2.0]), pt(&[1.5, 1.2])] {
            assert!(phi_residual(&ev, &set, &u, &xk, 1.0).unwrap() >= 0.0);
        }
        assert!(phi_residual(&ev, &set, &pt(&[1.1, 1.1]), &xk, 1.0).unwrap() > 1e-3);
    }

    #[test]
    fn run_terminates_on_sharp_instance() {
        let (g, set) = sharp();
        let cfg = PPAConfig::new(0.5, RSchedule::Constant(1.0));
        let xs = SolutionSet::Singleton(pt(&[1.0, 1.0]));
        let trace = ppa_run(&g, &set, &pt(&[2.0, 2.0]), &cfg, Some(&xs)).unwrap();
        let k0 = trace.termination_index.unwrap();
        assert!(k0 <= 1);
        assert!(trace.gap_va[k0] <= 1e-7);
        assert_eq!(trace.xstar_consistent, Some(true));
        assert_eq!(trace.convexity_prerequisite, Some(true));
        assert!(trace.sub_residuals.iter().all(|r| *r <= 1e-9));
        let report = fejer_check(&trace, &pt(&[1.0, 1.0]));
        assert!(report.holds);
        assert!(report.note.is_none());
    }

    #[test]
    fn run_from_solution_stops_immediately() {
        let (g, set) = sharp();
        let cfg = PPAConfig::new(0.5, RSchedule::Constant(1.0));
        let trace = ppa_run(&g, &set, &pt(&[1.0, 1.0]), &cfg, None).unwrap();
        assert_eq!(trace.termination_index, Some(0));
        assert_eq!(trace.iterates.len(), 1);
        let report = fejer_check(&trace, &pt(&[1.0, 1.0]));
        assert!(report.holds && report.pairs.is_empty());
    }

    #[test]
    fn constant_trace_at_solution_has_zero_sides() {
        let (g, set) = sharp();
        let cfg = PPAConfig::new(0.5, RSchedule::Constant(1.0));
        let mut trace = ppa_run(&g, &set, &pt(&[1.0, 1.0]), &cfg, None).unwrap();
        trace.iterates = vec![vec![1.0, 1.0]; 4];
        let report = fejer_check(&trace, &pt(&[1.0, 1.0]));
        assert_eq!(report.pairs.len(), 3);
        for p in &report.pairs {
            assert_eq!((p.lhs, p.rhs), (0.0, 0.0));
        }
        assert!(report.holds);
    }

    #[test]
    fn degenerate_instance_converges_with_shrinking_steps() {
        let (g, _) = sharp();
        let set = FeasibleSet::new_box(pt(&[0.0, 0.0]), pt(&[1.0, 1.0])).unwrap();
        let cfg = PPAConfig::new(0.5, RSchedule::Constant(1.0));
        let trace = ppa_run(&g, &set, &pt(&[1.0, 1.0]), &cfg, None).unwrap();
        assert!(trace.termination_index.is_some());
        assert!(step_norms_trend_down(&trace.step_norms, 1e-12));
        assert!(fejer_check(&trace, &pt(&[0.0, 0.0])).holds);
    }

    #[test]
    fn broken_prerequisite_is_flagged() {
        let (g, set) = sharp();
        let mut cfg = PPAConfig::new(0.6, RSchedule::Constant(1.0));
        cfg.max_iters = 20;
        let trace = ppa_run(&g, &set, &pt(&[2.0, 2.0]), &cfg, None).unwrap();
        assert_eq!(trace.convexity_prerequisite, Some(false));
        assert!(fejer_check(&trace, &pt(&[1.0, 1.0])).note.is_some());
    }

    #[test]
    fn bound_examples() {
        assert_abs_diff_eq!(
            iteration_bound(2.0f64.sqrt(), 1.1, 1.25).unwrap(),
            2.0 * 1.21 / 1.5625,
            epsilon = 1e-12
        );
        assert_eq!(iteration_bound(0.0, 1.1, 1.25).unwrap(), 0.0);
        let b = iteration_bound(0.7, 1.3, 0.4).unwrap();
        assert_abs_diff_eq!(iteration_bound(1.4, 1.3, 0.4).unwrap(), 4.0 * b, epsilon = 1e-12);
        assert!(iteration_bound(1.0, 1.0, 0.0).is_err());
        assert!(iteration_bound(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn schedule_and_config_validation() {
        let s = RSchedule::Sequence(vec![1.0, 2.0, 0.5]);
        assert_eq!(s.r(0), 1.0);
        assert_eq!(s.r(10), 0.5);
        assert_eq!(s.sup_inverse(), 2.0);
        assert!(RSchedule::Sequence(vec![]).validate().is_err());
        assert!(RSchedule::Constant(0.0).validate().is_err());
        let mut cfg = PPAConfig::new(0.5, RSchedule::Constant(1.0));
        assert!(cfg.resolved_epsilon() > 1.0);
        cfg.epsilon = Some(0.9);
        assert!(cfg.validate().is_err());
        cfg.epsilon = Some(1.1);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn csv_layout() {
        let (g, set) = sharp();
        let cfg = PPAConfig::new(0.5, RSchedule::Constant(1.0));
        let trace = ppa_run(&g, &set, &pt(&[2.0, 2.0]), &cfg, None).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,x1,x2,gap_va,vi_residual,step_norm,sub_residual");
        assert!(lines.next().unwrap().starts_with("0,2,2,"));
        assert!(text.lines().nth(1).unwrap().ends_with(",,"));
    }
}
