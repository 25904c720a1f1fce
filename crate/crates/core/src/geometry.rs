//! Shared feasible set, projections and the polyhedral cone calculus used by
//! the sharpness criterion.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Constraint activity tolerance used when building cones.
pub const ACTIVE_TOL: f64 = 1e-8;
/// Membership tolerance for cone and set queries.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

const DYKSTRA_MOVEMENT_TOL: f64 = 1e-12;
const DYKSTRA_MAX_SWEEPS: usize = 100_000;
const RAY_FEASIBILITY_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;
/// Above this many row subsets, cone generators are not enumerated.
const SUBSET_CAP: u128 = 200_000;

/// Closed convex feasible set shared by all players.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// `{x : G x ≤ h}`.
    Polytope { g: DMatrix<f64>, h: DVector<f64> },
}

impl FeasibleSet {
    pub fn new_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] <= upper[k])) {
            return Err(Error::EmptySet(format!(
                "lower bound {} exceeds upper bound {} in coordinate {}",
                lower[k],
                upper[k],
                k + 1
            )));
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    /// Polytope `{x : G x ≤ h}`; fails if the system is infeasible.
    pub fn new_polytope(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if g.nrows() != h.len() {
            return Err(Error::Shape(format!("G has {} rows but h has {}", g.nrows(), h.len())));
        }
        if g.ncols() == 0 {
            return Err(Error::Shape("polytope in dimension 0".into()));
        }
        for (j, row) in g.row_iter().enumerate() {
            if row.norm() == 0.0 && h[j] < 0.0 {
                return Err(Error::EmptySet(format!("constraint {} reads 0 <= {}", j + 1, h[j])));
            }
        }
        let set = FeasibleSet::Polytope { g, h };
        let probe = set.project(&DVector::zeros(set.dim()));
        let violation = set.violation(&probe);
        if violation > 1e-9 {
            return Err(Error::EmptySet(format!(
                "no point satisfies G x <= h (best violation {violation:e})"
            )));
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Polytope { g, .. } => g.ncols(),
        }
    }

    /// Halfspace description `(G, h)`; boxes expand to `2n` rows.
    pub fn halfspaces(&self) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            FeasibleSet::Box { lower, upper } => {
                let n = lower.len();
                let mut g = DMatrix::zeros(2 * n, n);
                let mut h = DVector::zeros(2 * n);
                for k in 0..n {
                    g[(2 * k, k)] = -1.0;
                    h[2 * k] = -lower[k];
                    g[(2 * k + 1, k)] = 1.0;
                    h[2 * k + 1] = upper[k];
                }
                (g, h)
            }
            FeasibleSet::Polytope { g, h } => (g.clone(), h.clone()),
        }
    }

    /// Largest constraint violation at `x` (zero inside the set).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            FeasibleSet::Box { lower, upper } => (0..x.len())
                .map(|k| (lower[k] - x[k]).max(x[k] - upper[k]))
                .fold(0.0, f64::max),
            FeasibleSet::Polytope { g, h } => (g * x - h).iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && self.violation(x) <= tol
    }

    /// Euclidean projection; exact clamp for boxes, Dykstra for polytopes.
    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            FeasibleSet::Box { lower, upper } => {
                DVector::from_iterator(z.len(), (0..z.len()).map(|k| z[k].clamp(lower[k], upper[k])))
            }
            FeasibleSet::Polytope { g, h } => {
                let normals: Vec<DVector<f64>> = g.row_iter().map(|r| r.transpose()).collect();
                dykstra(&normals, h.as_slice(), z).point
            }
        }
    }

    pub fn distance(&self, z: &DVector<f64>) -> f64 {
        (z - self.project(z)).norm()
    }

    fn ensure_member(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("point of length {} for a set in R^{}", x.len(), self.dim())));
        }
        let violation = self.violation(x);
        if violation > MEMBERSHIP_TOL {
            return Err(Error::NotInSet { violation });
        }
        Ok(())
    }

    /// Outward normals of the constraints active at `x`.
    pub fn active_normals(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let (g, h) = self.halfspaces();
        g.row_iter()
            .zip(h.iter())
            .filter(|(row, &hj)| hj - row.dot(&x.transpose()) <= ACTIVE_TOL)
            .map(|(row, _)| row.transpose())
            .collect()
    }

    /// `T_X(x) = {z : g_j·z ≤ 0 for active j}`.
    pub fn tangent_cone(&self, x: &DVector<f64>) -> Result<PolyhedralCone> {
        self.ensure_member(x)?;
        Ok(PolyhedralCone::from_halfspaces(self.dim(), self.active_normals(x)))
    }

    /// `N_X(x)`, the polar of the tangent cone.
    pub fn normal_cone(&self, x: &DVector<f64>) -> Result<PolyhedralCone> {
        self.tangent_cone(x)?.polar()
    }

    /// Vertices of the set (corners for boxes).
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        match self {
            FeasibleSet::Box { lower, upper } => {
                let n = lower.len();
                if n > 20 {
                    return Err(Error::Unsupported(format!("corner enumeration of a box in R^{n}")));
                }
                Ok((0..1usize << n)
                    .map(|mask| {
                        DVector::from_iterator(
                            n,
                            (0..n).map(|k| if mask >> k & 1 == 1 { upper[k] } else { lower[k] }),
                        )
                    })
                    .collect())
            }
            FeasibleSet::Polytope { g, h } => polytope_vertices(g, h),
        }
    }

    /// Axis-aligned bounding box; fails for unbounded polytopes.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        match self {
            FeasibleSet::Box { lower, upper } => Ok((lower.clone(), upper.clone())),
            FeasibleSet::Polytope { g, .. } => {
                let rows: Vec<DVector<f64>> = g.row_iter().map(|r| r.transpose()).collect();
                let recession = PolyhedralCone::from_halfspaces(self.dim(), rows);
                match recession.is_trivial() {
                    Some(true) => {}
                    Some(false) => return Err(Error::Unsupported("polytope is unbounded".into())),
                    None => return Err(Error::Unsupported("boundedness check too large".into())),
                }
                let verts = self.vertices()?;
                let n = self.dim();
                let mut lo = DVector::from_element(n, f64::INFINITY);
                let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
                for v in &verts {
                    for k in 0..n {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                Ok((lo, hi))
            }
        }
    }
}

fn polytope_vertices(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let (m, n) = g.shape();
    if linalg::binomial(m, n) > SUBSET_CAP {
        return Err(Error::Unsupported(format!("vertex enumeration with {m} constraints in R^{n}")));
    }
    let mut verts: Vec<DVector<f64>> = Vec::new();
    linalg::for_each_subset(m, n, |rows| {
        let a = g.select_rows(rows);
        let b = DVector::from_iterator(n, rows.iter().map(|&j| h[j]));
        if linalg::rank(&a, RANK_TOL) < n {
            return;
        }
        if let Some(v) = a.lu().solve(&b) {
            let feasible = (g * &v - h).iter().all(|&r| r <= 1e-9);
            if feasible && !verts.iter().any(|w| (w - &v).norm() < 1e-9) {
                verts.push(v);
            }
        }
    });
    Ok(verts)
}

pub(crate) struct DykstraOutcome {
    pub point: DVector<f64>,
    #[allow(dead_code)]
    pub sweeps: usize,
}

/// Dykstra's alternating projections onto `{x : a_j·x ≤ b_j}`.
pub(crate) fn dykstra(normals: &[DVector<f64>], offsets: &[f64], z: &DVector<f64>) -> DykstraOutcome {
    let inside = normals.iter().zip(offsets).all(|(a, &b)| a.dot(z) <= b);
    if inside {
        return DykstraOutcome {
            point: z.clone(),
            sweeps: 0,
        };
    }
    let sq: Vec<f64> = normals.iter().map(|a| a.norm_squared()).collect();
    let mut x = z.clone();
    let mut increments = vec![DVector::zeros(z.len()); normals.len()];
    let mut sweeps = 0;
    while sweeps < DYKSTRA_MAX_SWEEPS {
        sweeps += 1;
        let before = x.clone();
        for (j, a) in normals.iter().enumerate() {
            let y = &x + &increments[j];
            let excess = a.dot(&y) - offsets[j];
            let next = if excess > 0.0 && sq[j] > 0.0 {
                &y - a * (excess / sq[j])
            } else {
                y.clone()
            };
            increments[j] = y - &next;
            x = next;
        }
        if (&x - before).norm() <= DYKSTRA_MOVEMENT_TOL {
            break;
        }
    }
    DykstraOutcome { point: x, sweeps }
}

/// Generators of a polyhedral cone: unit extreme rays plus an orthonormal
/// basis of its lineality space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeGenerators {
    pub rays: Vec<DVector<f64>>,
    pub lineality: Vec<DVector<f64>>,
}

/// `{z : M z ≤ 0}` with generators attached when they can be enumerated.
#[derive(Debug, Clone)]
pub struct PolyhedralCone {
    dim: usize,
    halfspaces: Vec<DVector<f64>>,
    generators: Option<ConeGenerators>,
}

impl PolyhedralCone {
    /// Rows are normalized; zero rows are dropped.
    pub fn from_halfspaces(dim: usize, rows: Vec<DVector<f64>>) -> Self {
        let halfspaces: Vec<DVector<f64>> = rows
            .into_iter()
            .filter(|r| r.norm() > 0.0)
            .map(|r| r.normalize())
            .collect();
        let generators = enumerate_generators(dim, &halfspaces);
        Self {
            dim,
            halfspaces,
            generators,
        }
    }

    pub fn whole_space(dim: usize) -> Self {
        Self::from_halfspaces(dim, Vec::new())
    }

    pub fn zero(dim: usize) -> Self {
        let rows = (0..dim)
            .flat_map(|k| [linalg::unit(dim, k), -linalg::unit(dim, k)])
            .collect();
        Self::from_halfspaces(dim, rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfspaces(&self) -> &[DVector<f64>] {
        &self.halfspaces
    }

    pub fn generators(&self) -> Option<&ConeGenerators> {
        self.generators.as_ref()
    }

    /// `Some(true)` for the cone `{0}`; `None` when generators are unknown.
    pub fn is_trivial(&self) -> Option<bool> {
        self.generators
            .as_ref()
            .map(|g| g.rays.is_empty() && g.lineality.is_empty())
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.halfspaces.iter().all(|r| r.dot(z) <= tol)
    }

    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        let zeros = vec![0.0; self.halfspaces.len()];
        dykstra(&self.halfspaces, &zeros, z).point
    }

    /// `K° = {w : ⟨w, z⟩ ≤ 0 ∀ z ∈ K}`; needs generators.
    pub fn polar(&self) -> Result<Self> {
        let gens = self.generators.as_ref().ok_or_else(|| {
            Error::Unsupported(format!("polar of a cone in R^{} without enumerated generators", self.dim))
        })?;
        let mut rows = gens.rays.clone();
        for l in &gens.lineality {
            rows.push(l.clone());
            rows.push(-l);
        }
        Ok(Self::from_halfspaces(self.dim, rows))
    }

    pub fn intersect(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "cone dimensions differ");
        let mut rows = self.halfspaces.clone();
        rows.extend(other.halfspaces.iter().cloned());
        Self::from_halfspaces(self.dim, rows)
    }
}

fn enumerate_generators(dim: usize, rows: &[DVector<f64>]) -> Option<ConeGenerators> {
    let m = linalg::stack_rows(rows, dim);
    let lineality = linalg::null_space(&m, RANK_TOL);
    if lineality.len() == dim {
        return Some(ConeGenerators {
            rays: Vec::new(),
            lineality,
        });
    }
    // Extreme rays of the pointed part live in the orthogonal complement of
    // the lineality space and have dim - 1 - dim(L) independent active rows.
    let k = dim - 1 - lineality.len();
    if linalg::binomial(rows.len(), k) > SUBSET_CAP {
        return None;
    }
    let mut rays: Vec<DVector<f64>> = Vec::new();
    linalg::for_each_subset(rows.len(), k, |subset| {
        let mut system: Vec<DVector<f64>> = subset.iter().map(|&j| rows[j].clone()).collect();
        system.extend(lineality.iter().cloned());
        let ns = linalg::null_space(&linalg::stack_rows(&system, dim), RANK_TOL);
        if ns.len() != 1 {
            return;
        }
        for candidate in [ns[0].clone(), -&ns[0]] {
            let feasible = rows.iter().all(|r| r.dot(&candidate) <= RAY_FEASIBILITY_TOL);
            if feasible && !rays.iter().any(|r| (r - &candidate).norm() < 1e-9) {
                rays.push(candidate);
            }
        }
    });
    Some(ConeGenerators { rays, lineality })
}

/// Result of minimizing a linear function over the unit sphere of a cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeMinimum {
    /// `+∞` when the cone is `{0}`.
    pub value: f64,
    /// `false` when the value comes from the sampling fallback.
    pub exact: bool,
}

const NEGATIVE_PART_TOL: f64 = 1e-10;
const FALLBACK_SAMPLES: usize = 64;

/// `inf{⟨c, z⟩ : z ∈ K, ‖z‖ = 1}`.
///
/// A negative infimum equals `−‖P_K(−c)‖` and is computed exactly in any
/// dimension. A nonnegative one is attained on an extreme ray (or is zero on
/// a lineality direction); without enumerated generators it is estimated by
/// projected descent from random cone samples and flagged as inexact.
pub fn min_linear_over_unit_cone(c: &DVector<f64>, cone: &PolyhedralCone) -> ConeMinimum {
    let negative_part = cone.project(&-c).norm();
    if negative_part > NEGATIVE_PART_TOL {
        return ConeMinimum {
            value: -negative_part,
            exact: true,
        };
    }
    match cone.generators() {
        Some(g) if g.rays.is_empty() && g.lineality.is_empty() => ConeMinimum {
            value: f64::INFINITY,
            exact: true,
        },
        Some(g) if !g.lineality.is_empty() => ConeMinimum { value: 0.0, exact: true },
        Some(g) => ConeMinimum {
            value: g.rays.iter().map(|r| c.dot(r)).fold(f64::INFINITY, f64::min),
            exact: true,
        },
        None => ConeMinimum {
            value: min_linear_by_sampling(c, cone, FALLBACK_SAMPLES, 0),
            exact: false,
        },
    }
}

/// Sampling estimate of [`min_linear_over_unit_cone`]: projected descent on
/// the unit sphere from `samples` random cone points. Returns `+∞` if no
/// sample has a nonzero projection onto the cone.
pub fn min_linear_by_sampling(c: &DVector<f64>, cone: &PolyhedralCone, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 0.1 / c.norm().max(1.0);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let raw = DVector::from_fn(cone.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let mut z = cone.project(&raw);
        // Tiny projections carry the projection error in their direction.
        if z.norm() < 1e-6 * raw.norm() {
            continue;
        }
        z.normalize_mut();
        best = best.min(c.dot(&z));
        for _ in 0..200 {
            let next = cone.project(&(&z - c * step));
            if next.norm() < 1e-6 {
                break;
            }
            z = next.normalize();
            best = best.min(c.dot(&z));
        }
    }
    best
}

/// Declared or computed set of normalized Nash equilibria.
#[derive(Debug, Clone, PartialEq)]
pub enum SolutionSet {
    Singleton(DVector<f64>),
    Polytope(FeasibleSet),
}

impl SolutionSet {
    pub fn dim(&self) -> usize {
        match self {
            SolutionSet::Singleton(p) => p.len(),
            SolutionSet::Polytope(s) => s.dim(),
        }
    }

    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            SolutionSet::Singleton(p) => p.clone(),
            SolutionSet::Polytope(s) => s.project(z),
        }
    }

    pub fn distance(&self, z: &DVector<f64>) -> f64 {
        (z - self.project(z)).norm()
    }

    /// `N_{X*}(x)`; all of `R^n` for a singleton.
    pub fn normal_cone(&self, x: &DVector<f64>) -> Result<PolyhedralCone> {
        match self {
            SolutionSet::Singleton(p) => {
                if (x - p).norm() > MEMBERSHIP_TOL {
                    return Err(Error::NotInSet {
                        violation: (x - p).norm(),
                    });
                }
                Ok(PolyhedralCone::whole_space(p.len()))
            }
            SolutionSet::Polytope(s) => s.normal_cone(x),
        }
    }

    /// Points where set-level criteria are evaluated: the point itself, or
    /// the vertices of a polytope.
    pub fn evaluation_points(&self) -> Result<Vec<DVector<f64>>> {
        match self {
            SolutionSet::Singleton(p) => Ok(vec![p.clone()]),
            SolutionSet::Polytope(s) => s.vertices(),
        }
    }
}
