//! Weak sharpness, error bound and linear conditioning diagnostics, and the
//! sign-agreement check between them.

use nalgebra::DVector;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{min_linear_over_unit_cone, FeasibleSet, SolutionSet};
use crate::model::Game;
use crate::nikaido::RegularizedEvaluator;
use crate::oracle::{scan_extreme, GridSpec};
use crate::vi::{certify_solution_set, f_map, singleton_solution, ExtragradientOptions};

/// Grid points closer than this to `X*` are left out of ratio minima.
pub const EXCLUSION_RADIUS: f64 = 1e-6;
/// Residual a declared solution point must meet.
pub const CERTIFY_TOL: f64 = 1e-6;
/// Positive values above this count as bounded away from zero.
pub const SHARP_FLOOR: f64 = 1e-8;
/// Values at or below this count as zero.
pub const ZERO_FLOOR: f64 = 1e-10;
/// Each grid count `n` refines to `REFINE_FACTOR·(n − 1) + 1`.
pub const REFINE_FACTOR: usize = 4;

const VACUOUS: &str = "vacuous (cone trivial)";

fn serialize_gamma<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str(VACUOUS)
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConePoint {
    pub point: Vec<f64>,
    #[serde(serialize_with = "serialize_gamma")]
    pub value: f64,
}

/// `min_{x*} min { ⟨F(x*), z⟩ : z ∈ T_X(x*) ∩ N_{X*}(x*), ‖z‖ = 1 }`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeGamma {
    /// `+∞` when every cone is `{0}`.
    #[serde(serialize_with = "serialize_gamma")]
    pub value: f64,
    /// False when some cone minimum came from sampling.
    pub exact: bool,
    pub points: Vec<ConePoint>,
}

pub fn gamma_from_cones(game: &dyn Game, set: &FeasibleSet, xstar: &SolutionSet) -> Result<ConeGamma> {
    certify_solution_set(game, set, xstar, CERTIFY_TOL)?;
    let mut out = ConeGamma {
        value: f64::INFINITY,
        exact: true,
        points: Vec::new(),
    };
    for p in xstar.evaluation_points()? {
        let cone = set.tangent_cone(&p)?.intersect(&xstar.normal_cone(&p)?);
        let m = min_linear_over_unit_cone(&f_map(game, &p), &cone);
        out.value = out.value.min(m.value);
        out.exact &= m.exact;
        out.points.push(ConePoint {
            point: p.as_slice().to_vec(),
            value: m.value,
        });
    }
    Ok(out)
}

/// Minimum of a ratio over grid points outside `X*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioMin {
    /// `None` when no grid point lies farther than the exclusion radius.
    pub value: Option<f64>,
    pub argmin: Option<Vec<f64>>,
    pub evaluated: usize,
    pub cell_diagonal: f64,
}

fn ratio_min<F>(set: &FeasibleSet, xstar: &SolutionSet, grid: &GridSpec, numerator: F) -> Result<RatioMin>
where
    F: Fn(&DVector<f64>) -> Result<f64> + Sync,
{
    let best = scan_extreme(grid, set, false, |x| {
        let d = xstar.distance(x);
        if d <= EXCLUSION_RADIUS {
            return Ok(None);
        }
        Ok(Some(numerator(x)? / d))
    })?;
    Ok(RatioMin {
        value: best.as_ref().map(|b| b.value),
        argmin: best.as_ref().map(|b| b.point.clone()),
        evaluated: best.map_or(0, |b| b.evaluated),
        cell_diagonal: grid.cell_diagonal(set)?,
    })
}

/// `min_x V_a(x) / d(x, X*)` over the grid.
pub fn check_error_bound(
    ev: &RegularizedEvaluator<'_>,
    set: &FeasibleSet,
    xstar: &SolutionSet,
    grid: &GridSpec,
) -> Result<RatioMin> {
    ratio_min(set, xstar, grid, |x| ev.gap(set, x))
}

/// `min_x ψ_a(x, P_{X*}(x)) / d(x, X*)` over the grid.
pub fn check_linear_conditioning(
    ev: &RegularizedEvaluator<'_>,
    set: &FeasibleSet,
    xstar: &SolutionSet,
    grid: &GridSpec,
) -> Result<RatioMin> {
    ratio_min(set, xstar, grid, |x| Ok(ev.psi_a(x, &xstar.project(x))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    /// Bounded away from zero.
    Sharp,
    /// Zero, or shrinking toward zero under refinement.
    Degenerate,
    /// No point outside `X*` to test; the condition holds trivially.
    Vacuous,
    Inconclusive,
}

impl Indicator {
    fn agrees_with_sharp(self) -> bool {
        matches!(self, Indicator::Sharp | Indicator::Vacuous)
    }

    pub fn from_cone(gamma: f64) -> Self {
        if gamma > SHARP_FLOOR {
            Indicator::Sharp
        } else {
            Indicator::Degenerate
        }
    }

    /// Degenerate when the fine minimum is at most half the coarse one or
    /// numerically zero; sharp when it stays above `SHARP_FLOOR` otherwise.
    pub fn from_refinement(coarse: Option<f64>, fine: Option<f64>) -> Self {
        match (coarse, fine) {
            (_, None) | (None, _) => Indicator::Vacuous,
            (Some(c), Some(f)) => {
                if f <= ZERO_FLOOR || f <= c / 2.0 {
                    Indicator::Degenerate
                } else if f > SHARP_FLOOR {
                    Indicator::Sharp
                } else {
                    Indicator::Inconclusive
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedRatio {
    pub coarse: RatioMin,
    pub fine: RatioMin,
    pub indicator: Indicator,
}

fn refine<F>(grid: &GridSpec, check: F) -> Result<RefinedRatio>
where
    F: Fn(&GridSpec) -> Result<RatioMin>,
{
    let coarse = check(grid)?;
    let fine = check(&grid.refined(REFINE_FACTOR))?;
    let indicator = Indicator::from_refinement(coarse.value, fine.value);
    Ok(RefinedRatio { coarse, fine, indicator })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Equivalence {
    /// All three indicators are positive.
    PassSharp,
    /// All three indicators degenerate.
    PassDegenerate,
    Fail,
    /// `ψ_a(·, y)` is not known to be convex.
    NotApplicable,
}

impl Equivalence {
    pub fn passed(self) -> bool {
        matches!(self, Equivalence::PassSharp | Equivalence::PassDegenerate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub weak_sharpness: Indicator,
    pub error_bound: Indicator,
    pub linear_conditioning: Indicator,
    pub equivalence: Equivalence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpnessReport {
    pub instance: String,
    pub a: f64,
    pub delta: Option<f64>,
    pub convexity_prerequisite: Option<bool>,
    pub solution_points: Vec<Vec<f64>>,
    #[serde(serialize_with = "serialize_gamma")]
    pub gamma_cone: f64,
    pub gamma_cone_exact: bool,
    pub gamma_grid_errorbound: Option<f64>,
    pub gamma_grid_lincond: Option<f64>,
    pub grid: GridSpec,
    pub refined_grid: GridSpec,
    pub error_bound: RefinedRatio,
    pub linear_conditioning: RefinedRatio,
    pub verdicts: Verdicts,
}

/// PASS when the cone, error-bound and conditioning indicators agree in sign;
/// NOT-APPLICABLE unless `ψ_a(·, y)` is convex.
pub fn check_equivalence(report: &SharpnessReport) -> Equivalence {
    if report.convexity_prerequisite != Some(true) {
        return Equivalence::NotApplicable;
    }
    let v = &report.verdicts;
    let all = [v.weak_sharpness, v.error_bound, v.linear_conditioning];
    if all.iter().all(|i| i.agrees_with_sharp()) {
        Equivalence::PassSharp
    } else if all.iter().all(|i| *i == Indicator::Degenerate) {
        Equivalence::PassDegenerate
    } else {
        Equivalence::Fail
    }
}

/// The declared solution set after certification, or a multi-start
/// extragradient singleton when none is declared.
pub fn resolve_solution_set(game: &dyn Game, set: &FeasibleSet, declared: Option<&SolutionSet>) -> Result<SolutionSet> {
    match declared {
        Some(xs) => {
            certify_solution_set(game, set, xs, CERTIFY_TOL)?;
            Ok(xs.clone())
        }
        None => singleton_solution(game, set, &ExtragradientOptions::default()),
    }
}

/// Runs every diagnostic on one instance and assembles the report.
pub fn diagnose(
    instance: &str,
    game: &dyn Game,
    set: &FeasibleSet,
    xstar: &SolutionSet,
    a: f64,
    grid: &GridSpec,
) -> Result<SharpnessReport> {
    let ev = RegularizedEvaluator::new(game, a)?;
    let convexity_prerequisite = match ev.psi_convex_in_x() {
        Ok(b) => Some(b),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    let cone = gamma_from_cones(game, set, xstar)?;
    let error_bound = refine(grid, |g| check_error_bound(&ev, set, xstar, g))?;
    let linear_conditioning = refine(grid, |g| check_linear_conditioning(&ev, set, xstar, g))?;
    let mut report = SharpnessReport {
        instance: instance.to_string(),
        a,
        delta: game.as_quadratic().map(|q| q.delta()),
        convexity_prerequisite,
        solution_points: xstar.evaluation_points()?.iter().map(|p| p.as_slice().to_vec()).collect(),
        gamma_cone: cone.value,
        gamma_cone_exact: cone.exact,
        gamma_grid_errorbound: error_bound.coarse.value,
        gamma_grid_lincond: linear_conditioning.coarse.value,
        grid: grid.clone(),
        refined_grid: grid.refined(REFINE_FACTOR),
        verdicts: Verdicts {
            weak_sharpness: Indicator::from_cone(cone.value),
            error_bound: error_bound.indicator,
            linear_conditioning: linear_conditioning.indicator,
            equivalence: Equivalence::NotApplicable,
        },
        error_bound,
        linear_conditioning,
    };
    report.verdicts.equivalence = check_equivalence(&report);
    Ok(report)
}
