//! Brute-force grid oracles. They evaluate closed-form `ψ`, `ψ_a` and `F`
//! only and never call the iterative solvers, so they can audit them.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FeasibleSet;
use crate::model::{central_difference, Game};
use crate::nikaido::{ni_psi, RegularizedEvaluator};
use crate::vi::{f_map, vi_residual};

pub const GRID_GUARD: u128 = 10_000_000;
const LIPSCHITZ_SAMPLES: usize = 64;
const LIPSCHITZ_SEED: u64 = 0x9e37_79b9;

/// A tensor grid over a box, enumerated row-major (last coordinate fastest).
///
/// Bounds default to the feasible set's bounding box. Points are projected
/// into the set before use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl GridSpec {
    pub fn new(counts: Vec<usize>) -> Self {
        Self { counts, bounds: None }
    }

    pub fn uniform(dim: usize, n: usize) -> Self {
        Self::new(vec![n; dim])
    }

    /// A one-point grid at `x`.
    pub fn at(x: &DVector<f64>) -> Self {
        Self {
            counts: vec![1; x.len()],
            bounds: Some((x.as_slice().to_vec(), x.as_slice().to_vec())),
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.bounds = Some((lower, upper));
        self
    }

    pub fn total(&self) -> u128 {
        self.counts.iter().map(|&c| c as u128).product()
    }

    /// Each count `n` becomes `factor·(n − 1) + 1`, nesting the old grid in the new one.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            counts: self.counts.iter().map(|&n| factor * (n.max(1) - 1) + 1).collect(),
            bounds: self.bounds.clone(),
        }
    }

    fn resolve(&self, set: &FeasibleSet) -> Result<ResolvedGrid> {
        if self.counts.len() != set.dim() {
            return Err(Error::Shape(format!(
                "grid has {} dimensions but the set lives in R^{}",
                self.counts.len(),
                set.dim()
            )));
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidParameter("grid counts must be at least 1".into()));
        }
        let total = self.total();
        if total > GRID_GUARD {
            return Err(Error::GridGuard {
                points: total,
                limit: GRID_GUARD,
            });
        }
        let (lower, upper) = match &self.bounds {
            Some((lo, hi)) => {
                if lo.len() != set.dim() || hi.len() != set.dim() {
                    return Err(Error::Shape("grid bounds do not match the set dimension".into()));
                }
                (DVector::from_column_slice(lo), DVector::from_column_slice(hi))
            }
            None => set.bounding_box()?,
        };
        Ok(ResolvedGrid {
            counts: self.counts.clone(),
            lower,
            upper,
            total: total as usize,
        })
    }

    /// Grid points in enumeration order, projected into `set`.
    pub fn points(&self, set: &FeasibleSet) -> Result<Vec<DVector<f64>>> {
        let g = self.resolve(set)?;
        Ok((0..g.total).map(|k| set.project(&g.point(k))).collect())
    }

    /// Diagonal of one grid cell.
    pub fn cell_diagonal(&self, set: &FeasibleSet) -> Result<f64> {
        Ok(self.resolve(set)?.cell_diagonal())
    }
}

struct ResolvedGrid {
    counts: Vec<usize>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    total: usize,
}

impl ResolvedGrid {
    fn spacing(&self, j: usize) -> f64 {
        match self.counts[j] {
            1 => 0.0,
            n => (self.upper[j] - self.lower[j]) / (n - 1) as f64,
        }
    }

    fn point(&self, mut k: usize) -> DVector<f64> {
        let n = self.counts.len();
        let mut p = DVector::zeros(n);
        for j in (0..n).rev() {
            let c = self.counts[j];
            let idx = k % c;
            k /= c;
            p[j] = if idx + 1 == c && c > 1 {
                self.upper[j]
            } else {
                self.lower[j] + idx as f64 * self.spacing(j)
            };
        }
        p
    }

    fn cell_diagonal(&self) -> f64 {
        (0..self.counts.len()).map(|j| self.spacing(j).powi(2)).sum::<f64>().sqrt()
    }
}

/// Best grid value of a function together with its location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridExtreme {
    pub value: f64,
    pub point: Vec<f64>,
    pub index: usize,
    /// Points where the function produced a value.
    pub evaluated: usize,
}

/// Scans the grid in parallel; `f` may decline a point by returning `None`.
/// Ties go to the lowest index, so the result does not depend on scheduling.
pub fn scan_extreme<F>(spec: &GridSpec, set: &FeasibleSet, maximize: bool, f: F) -> Result<Option<GridExtreme>>
where
    F: Fn(&DVector<f64>) -> Result<Option<f64>> + Sync,
{
    let g = spec.resolve(set)?;
    let sign = if maximize { 1.0 } else { -1.0 };
    let evaluated: Vec<(usize, f64)> = (0..g.total)
        .into_par_iter()
        .map(|k| f(&set.project(&g.point(k))).map(|v| v.map(|v| (k, v))))
        .filter_map(|r| r.transpose())
        .collect::<Result<_>>()?;
    let best = evaluated.iter().copied().reduce(|a, b| {
        let (sa, sb) = (sign * a.1, sign * b.1);
        if sb > sa || (sb == sa && b.0 < a.0) {
            b
        } else {
            a
        }
    });
    Ok(best.map(|(k, v)| GridExtreme {
        value: v,
        point: set.project(&g.point(k)).as_slice().to_vec(),
        index: k,
        evaluated: evaluated.len(),
    }))
}

/// A grid maximum with its discretization error `L·h/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridValue {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub grid_error: f64,
    pub lipschitz: f64,
    pub cell_diagonal: f64,
}

/// Crude Lipschitz constant of `f` on the set's bounding box: the largest
/// finite-difference gradient norm over the box corners and 64 seeded samples.
pub fn lipschitz_estimate(set: &FeasibleSet, f: &(dyn Fn(&DVector<f64>) -> f64 + Sync)) -> Result<f64> {
    let (lo, hi) = set.bounding_box()?;
    let n = lo.len();
    let mut probes = Vec::new();
    if n <= 10 {
        for mask in 0..(1usize << n) {
            probes.push(DVector::from_fn(n, |j, _| if mask >> j & 1 == 1 { hi[j] } else { lo[j] }));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(LIPSCHITZ_SEED);
    for _ in 0..LIPSCHITZ_SAMPLES {
        let raw = DVector::from_fn(n, |j, _| if hi[j] > lo[j] { rng.gen_range(lo[j]..=hi[j]) } else { lo[j] });
        probes.push(set.project(&raw));
    }
    Ok(probes
        .par_iter()
        .map(|p| DVector::from_fn(n, |j, _| central_difference(f, p, j)).norm())
        .reduce(|| 0.0, f64::max))
}

/// Maximum of `f` over the projected grid, with grid error.
pub fn grid_max<F>(spec: &GridSpec, set: &FeasibleSet, f: F) -> Result<GridValue>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let best = scan_extreme(spec, set, true, |y| Ok(Some(f(y))))?.expect("grid holds at least one point");
    let h = spec.cell_diagonal(set)?;
    let lipschitz = if h > 0.0 { lipschitz_estimate(set, &f)? } else { 0.0 };
    Ok(GridValue {
        value: best.value,
        argmax: best.point,
        grid_error: lipschitz * h / 2.0,
        lipschitz,
        cell_diagonal: h,
    })
}

/// Unregularized gap `V(x) = sup_{y ∈ X} ψ(x, y)` on a grid of `y`.
pub fn grid_v(game: &dyn Game, set: &FeasibleSet, x: &DVector<f64>, spec: &GridSpec) -> Result<GridValue> {
    game.layout().check_point(x)?;
    grid_max(spec, set, |y| ni_psi(game, x, y))
}

/// `V_a(x)` on a grid of `y`; closed-form `ψ_a` only.
pub fn grid_va(ev: &RegularizedEvaluator<'_>, set: &FeasibleSet, x: &DVector<f64>, spec: &GridSpec) -> Result<GridValue> {
    ev.game().layout().check_point(x)?;
    grid_max(spec, set, |y| ev.psi_a(x, y))
}

/// Dual gap `G(y) = sup_{w ∈ X} ⟨F(w), y − w⟩` on a grid of `w`.
pub fn grid_dual_gap(game: &dyn Game, set: &FeasibleSet, y: &DVector<f64>, spec: &GridSpec) -> Result<GridValue> {
    game.layout().check_point(y)?;
    grid_max(spec, set, |w| f_map(game, w).dot(&(y - w)))
}

/// `max_z [ψ_a(u, z) − (1/r)⟨z − u, u − x_k⟩]` on a grid of `z`.
pub fn grid_phi_residual(
    ev: &RegularizedEvaluator<'_>,
    set: &FeasibleSet,
    u: &DVector<f64>,
    x_k: &DVector<f64>,
    r: f64,
    spec: &GridSpec,
) -> Result<GridValue> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("r must be positive, got {r}")));
    }
    let shift = u - x_k;
    grid_max(spec, set, |z| ev.psi_a(u, z) - (z - u).dot(&shift) / r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NneScan {
    pub points: Vec<Vec<f64>>,
    pub indices: Vec<usize>,
    /// Smallest natural-map residual over the grid.
    pub floor: f64,
    /// Points with residual ≤ `threshold = 2·floor + 1e-12` are returned.
    pub threshold: f64,
    pub cell_diagonal: f64,
}

impl NneScan {
    /// Whether some returned point lies within one cell diagonal of `x`.
    pub fn covers(&self, x: &DVector<f64>) -> bool {
        self.points
            .iter()
            .any(|p| (DVector::from_column_slice(p) - x).norm() <= self.cell_diagonal + 1e-12)
    }
}

/// Grid points whose natural-map residual is within twice the grid minimum.
pub fn grid_scan_nne(game: &dyn Game, set: &FeasibleSet, spec: &GridSpec) -> Result<NneScan> {
    let g = spec.resolve(set)?;
    let residuals: Vec<f64> = (0..g.total)
        .into_par_iter()
        .map(|k| vi_residual(game, set, &set.project(&g.point(k))))
        .collect();
    let floor = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = 2.0 * floor + 1e-12;
    let indices: Vec<usize> = (0..g.total).filter(|&k| residuals[k] <= threshold).collect();
    Ok(NneScan {
        points: indices.iter().map(|&k| set.project(&g.point(k)).as_slice().to_vec()).collect(),
        indices,
        floor,
        threshold,
        cell_diagonal: g.cell_diagonal(),
    })
}
