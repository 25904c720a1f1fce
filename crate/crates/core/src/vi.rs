//! Variational inequality view of the game: the pseudo-gradient `F`, the
//! natural-map residual and an extragradient reference solver.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, SolutionSet, MEMBERSHIP_TOL};
use crate::model::Game;

/// `F(x) = (∇_{x_i} θ_i(x))_i`.
pub fn f_map(game: &dyn Game, x: &DVector<f64>) -> DVector<f64> {
    game.pseudo_gradient(x)
}

/// Natural-map residual `‖x − P_X(x − F(x))‖`; zero exactly at VI solutions.
pub fn vi_residual(game: &dyn Game, set: &FeasibleSet, x: &DVector<f64>) -> f64 {
    (x - set.project(&(x - f_map(game, x)))).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtragradientOptions {
    /// Fixed step; defaults to `0.9 / ‖J‖₂` for quadratic games and an
    /// adaptive `1e-2` (halved whenever the residual grows) otherwise.
    pub step: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ExtragradientOptions {
    fn default() -> Self {
        Self {
            step: None,
            tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VIResult {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Step in use when the run stopped.
    pub step: f64,
}

impl VIResult {
    pub fn point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

/// Extragradient iteration `x̄ = P(x − sF(x))`, `x⁺ = P(x − sF(x̄))`.
///
/// Hitting the iteration cap is not an error; the result carries
/// `converged = false` and the last residual.
pub fn solve_vi_extragradient(
    game: &dyn Game,
    set: &FeasibleSet,
    x0: &DVector<f64>,
    opts: &ExtragradientOptions,
) -> Result<VIResult> {
    game.layout().check_point(x0)?;
    let violation = set.violation(x0);
    if violation > MEMBERSHIP_TOL {
        return Err(Error::NotInSet { violation });
    }
    let (mut step, adaptive) = match (opts.step, game.as_quadratic()) {
        (Some(s), _) => (s, false),
        (None, Some(q)) => {
            let lip = q.f_lipschitz();
            (if lip > 0.0 { 0.9 / lip } else { 1.0 }, false)
        }
        (None, None) => (1e-2, true),
    };
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("extragradient step must be positive, got {step}")));
    }

    let mut x = set.project(x0);
    let mut residual = vi_residual(game, set, &x);
    for iter in 0..opts.max_iters {
        if residual <= opts.tol {
            return Ok(VIResult {
                x: x.as_slice().to_vec(),
                residual,
                iterations: iter,
                converged: true,
                step,
            });
        }
        let half = set.project(&(&x - f_map(game, &x) * step));
        x = set.project(&(&x - f_map(game, &half) * step));
        let next_residual = vi_residual(game, set, &x);
        if adaptive && next_residual > residual {
            step *= 0.5;
        }
        residual = next_residual;
    }
    Ok(VIResult {
        x: x.as_slice().to_vec(),
        converged: residual <= opts.tol,
        residual,
        iterations: opts.max_iters,
        step,
    })
}

/// Runs extragradient from the corners and center of the set's bounding box
/// and returns the common limit as a singleton solution set.
///
/// Fails when a run does not converge or two runs disagree by more than 1e-6.
pub fn singleton_solution(game: &dyn Game, set: &FeasibleSet, opts: &ExtragradientOptions) -> Result<SolutionSet> {
    let (lo, hi) = set.bounding_box()?;
    let n = lo.len();
    let mut starts = vec![set.project(&((&lo + &hi) * 0.5))];
    if n <= 3 {
        starts.extend(FeasibleSet::Box { lower: lo, upper: hi }.vertices()?.iter().map(|v| set.project(v)));
    } else {
        starts.push(set.project(&lo));
        starts.push(set.project(&hi));
    }
    let mut found: Option<DVector<f64>> = None;
    for s in &starts {
        let run = solve_vi_extragradient(game, set, s, opts)?;
        if !run.converged {
            return Err(Error::Uncertified(format!(
                "extragradient stalled at residual {:e}",
                run.residual
            )));
        }
        let p = run.point();
        match &found {
            None => found = Some(p),
            Some(q) if (q - &p).norm() > 1e-6 => {
                return Err(Error::Uncertified(format!(
                    "multi-start extragradient found distinct solutions {:?} and {:?}",
                    q.as_slice(),
                    p.as_slice()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(SolutionSet::Singleton(found.expect("at least one start")))
}

/// Checks every evaluation point of `xstar` lies in `X` and has VI residual ≤ `tol`.
pub fn certify_solution_set(game: &dyn Game, set: &FeasibleSet, xstar: &SolutionSet, tol: f64) -> Result<()> {
    if xstar.dim() != game.dim() {
        return Err(Error::Shape(format!(
            "solution set in R^{} for a game in R^{}",
            xstar.dim(),
            game.dim()
        )));
    }
    for p in xstar.evaluation_points()? {
        let violation = set.violation(&p);
        if violation > MEMBERSHIP_TOL {
            return Err(Error::Uncertified(format!(
                "point {:?} is outside the feasible set (violation {violation:e})",
                p.as_slice()
            )));
        }
        let r = vi_residual(game, set, &p);
        if r > tol {
            return Err(Error::Uncertified(format!(
                "point {:?} has VI residual {r:e} > {tol:e}",
                p.as_slice()
            )));
        }
    }
    Ok(())
}
