//! Nikaido-Isoda function, its regularization `ψ_a`, the regularized gap
//! `V_a` with its unique maximizer `y^a(x)`, and the gradient of `V_a`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::FeasibleSet;
use crate::model::{Game, QuadraticGame};

/// Stopping rules for the inner maximization over `y ∈ X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    /// Stop once an iteration moves less than this...
    pub movement_tol: f64,
    /// ...and the projected-gradient residual is below this.
    pub stationarity_tol: f64,
    pub max_iters: usize,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self {
            movement_tol: 1e-10,
            stationarity_tol: 1e-8,
            max_iters: 100_000,
        }
    }
}

/// The maximizer `y^a(x)` together with solver bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub y: DVector<f64>,
    pub iterations: usize,
    /// `‖y − P_X(y + ∇h(y))‖` for the inner objective `h`.
    pub residual: f64,
}

/// `ψ(x, y) = Σ_i [θ_i(x) − θ_i(x_{-i}, y_i)]`.
pub fn ni_psi(game: &dyn Game, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let layout = game.layout();
    (0..layout.players())
        .map(|i| game.loss(i, x) - game.loss(i, &layout.splice(x, y, i)))
        .sum()
}

/// Inner objective `h(y) = ψ_a(x, y) + ⟨c, y⟩ − (μ/2)‖y − w‖²`.
///
/// With no tilt and no proximal term this is the best-response problem; the
/// proximal point method uses the other two terms.
#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerProblem<'a> {
    pub anchor: &'a DVector<f64>,
    pub tilt: Option<&'a DVector<f64>>,
    pub prox: Option<(f64, &'a DVector<f64>)>,
    pub start: Option<&'a DVector<f64>>,
}

impl<'a> InnerProblem<'a> {
    pub fn best_response(anchor: &'a DVector<f64>) -> Self {
        Self {
            anchor,
            tilt: None,
            prox: None,
            start: None,
        }
    }

    fn prox_weight(&self) -> f64 {
        self.prox.map_or(0.0, |(mu, _)| mu)
    }
}

/// Evaluates `ψ_a`, `V_a`, `y^a` and `∇V_a` for a fixed regularization `a > 0`.
#[derive(Clone, Copy)]
pub struct RegularizedEvaluator<'g> {
    game: &'g dyn Game,
    a: f64,
    settings: InnerSettings,
}

impl<'g> RegularizedEvaluator<'g> {
    pub fn new(game: &'g dyn Game, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("regularization a must be positive, got {a}")));
        }
        Ok(Self {
            game,
            a,
            settings: InnerSettings::default(),
        })
    }

    pub fn with_settings(mut self, settings: InnerSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn game(&self) -> &'g dyn Game {
        self.game
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn settings(&self) -> &InnerSettings {
        &self.settings
    }

    pub fn psi(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        ni_psi(self.game, x, y)
    }

    /// `ψ_a(x, y) = ψ(x, y) − (a/2)‖x − y‖²`.
    pub fn psi_a(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.psi(x, y) - 0.5 * self.a * (x - y).norm_squared()
    }

    /// Whether `ψ_a(·, y)` is convex for every `y`; quadratic games only.
    ///
    /// The Hessian in `x` is `(C + Cᵀ) − aI`, so this is `a ≤ δ` up to 1e-10.
    pub fn psi_convex_in_x(&self) -> Result<bool> {
        let q = self.quadratic().ok_or_else(|| {
            Error::Unsupported("convexity of psi_a in x is only decided for quadratic games".into())
        })?;
        Ok(self.a <= q.delta() + 1e-10)
    }

    fn quadratic(&self) -> Option<&'g QuadraticGame> {
        self.game.as_quadratic()
    }

    /// `y^a(x)`, the unique maximizer of `ψ_a(x, ·)` over `X`.
    ///
    /// `x` itself may lie outside `X`; only `y` is constrained.
    pub fn best_response(&self, set: &FeasibleSet, x: &DVector<f64>) -> Result<BestResponse> {
        self.check_dims(set, x)?;
        self.maximize(set, &InnerProblem::best_response(x))
    }

    /// `V_a(x) = max_{y ∈ X} ψ_a(x, y)`.
    pub fn gap(&self, set: &FeasibleSet, x: &DVector<f64>) -> Result<f64> {
        Ok(self.gap_with_response(set, x)?.0)
    }

    pub fn gap_with_response(&self, set: &FeasibleSet, x: &DVector<f64>) -> Result<(f64, BestResponse)> {
        let br = self.best_response(set, x)?;
        Ok((self.psi_a(x, &br.y), br))
    }

    /// `∇V_a(x) = Σ_i [∇θ_i(x) − ∇θ_i(x_{-i}, y_i)] − a(x − y) + (∇_{x_i}θ_i(x_{-i}, y_i))_i`
    /// with `y = y^a(x)`.
    pub fn gap_gradient(&self, set: &FeasibleSet, x: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.best_response(set, x)?.y;
        let layout = self.game.layout();
        let mut grad = -(x - &y) * self.a;
        for i in 0..layout.players() {
            let spliced = layout.splice(x, &y, i);
            grad += self.game.full_grad(i, x) - self.game.full_grad(i, &spliced);
            let r = layout.range(i);
            let own = self.game.partial_grad(i, &spliced);
            let mut block = grad.rows_mut(r.start, r.len());
            block += own;
        }
        Ok(grad)
    }

    fn check_dims(&self, set: &FeasibleSet, x: &DVector<f64>) -> Result<()> {
        self.game.layout().check_point(x)?;
        if set.dim() != self.game.dim() {
            return Err(Error::Shape(format!(
                "feasible set lives in R^{} but the game in R^{}",
                set.dim(),
                self.game.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn inner_objective(&self, p: &InnerProblem<'_>, y: &DVector<f64>) -> f64 {
        let mut value = self.psi_a(p.anchor, y);
        if let Some(c) = p.tilt {
            value += c.dot(y);
        }
        if let Some((mu, w)) = p.prox {
            value -= 0.5 * mu * (y - w).norm_squared();
        }
        value
    }

    fn inner_gradient(&self, p: &InnerProblem<'_>, y: &DVector<f64>) -> DVector<f64> {
        let layout = self.game.layout();
        let x = p.anchor;
        let mut g = -(y - x) * self.a;
        for i in 0..layout.players() {
            let r = layout.range(i);
            let own = self.game.partial_grad(i, &layout.splice(x, y, i));
            let mut block = g.rows_mut(r.start, r.len());
            block -= own;
        }
        if let Some(c) = p.tilt {
            g += c;
        }
        if let Some((mu, w)) = p.prox {
            g -= (y - w) * mu;
        }
        g
    }

    fn stationarity(&self, set: &FeasibleSet, p: &InnerProblem<'_>, y: &DVector<f64>) -> f64 {
        (y - set.project(&(y + self.inner_gradient(p, y)))).norm()
    }

    /// Maximizes the strongly concave inner objective over `X`.
    pub(crate) fn maximize(&self, set: &FeasibleSet, p: &InnerProblem<'_>) -> Result<BestResponse> {
        match (self.quadratic(), set) {
            (Some(q), FeasibleSet::Box { lower, upper }) if q.layout().dims().iter().all(|&d| d == 1) => {
                self.maximize_scalar_blocks(q, lower, upper, set, p)
            }
            (Some(q), _) => {
                let (lo, hi) = q.own_curvature_range();
                let modulus = lo + self.a + p.prox_weight();
                if modulus <= 0.0 {
                    return Err(Error::Unsupported(format!(
                        "inner problem is not strongly concave (modulus {modulus})"
                    )));
                }
                let lipschitz = hi + self.a + p.prox_weight();
                self.projected_ascent(set, p, Some(1.0 / lipschitz))
            }
            (None, _) => self.projected_ascent(set, p, None),
        }
    }

    // Separable case: each scalar block is a clipped 1-D quadratic optimum.
    fn maximize_scalar_blocks(
        &self,
        q: &QuadraticGame,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        set: &FeasibleSet,
        p: &InnerProblem<'_>,
    ) -> Result<BestResponse> {
        let x = p.anchor;
        let mu = p.prox_weight();
        let mut y = DVector::zeros(x.len());
        for i in 0..x.len() {
            let curvature = q.block(i, i)[(0, 0)] + self.a + mu;
            if curvature <= 0.0 {
                return Err(Error::Unsupported(format!(
                    "inner problem is not strongly concave in coordinate {} (curvature {curvature})",
                    i + 1
                )));
            }
            let mut linear = self.a * x[i] - q.cross_term(i, x)[0];
            if let Some(c) = p.tilt {
                linear += c[i];
            }
            if let Some((mu, w)) = p.prox {
                linear += mu * w[i];
            }
            y[i] = (linear / curvature).clamp(lower[i], upper[i]);
        }
        let residual = self.stationarity(set, p, &y);
        Ok(BestResponse {
            y,
            iterations: 1,
            residual,
        })
    }

    // Projected gradient ascent: fixed step when given, otherwise backtracking.
    fn projected_ascent(
        &self,
        set: &FeasibleSet,
        p: &InnerProblem<'_>,
        fixed_step: Option<f64>,
    ) -> Result<BestResponse> {
        let s = self.settings;
        let mut y = set.project(p.start.unwrap_or(p.anchor));
        let mut step = fixed_step.unwrap_or(1.0);
        let mut residual = f64::INFINITY;
        for iter in 1..=s.max_iters {
            let g = self.inner_gradient(p, &y);
            let next = match fixed_step {
                Some(t) => set.project(&(&y + &g * t)),
                None => loop {
                    // Accept once the local Lipschitz estimate fits the step;
                    // comparing gradients avoids cancellation in function values.
                    let cand = set.project(&(&y + &g * step));
                    let d = &cand - &y;
                    let dn = d.norm();
                    if dn == 0.0
                        || (self.inner_gradient(p, &cand) - &g).norm() * step <= dn
                        || step < 1e-14
                    {
                        break cand;
                    }
                    step *= 0.5;
                },
            };
            let movement = (&next - &y).norm();
            y = next;
            if fixed_step.is_none() {
                step = (step * 2.0).min(1e6);
            }
            if movement <= s.movement_tol {
                residual = self.stationarity(set, p, &y);
                if residual <= s.stationarity_tol {
                    return Ok(BestResponse {
                        y,
                        iterations: iter,
                        residual,
                    });
                }
            }
        }
        if residual.is_infinite() {
            residual = self.stationarity(set, p, &y);
        }
        Err(Error::IterationCap {
            what: "inner maximization",
            iterations: s.max_iters,
            residual,
        })
    }
}
