//! Game data: player block layout, the quadratic game class and a
//! closure-backed interface for other smooth losses.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg;

/// Maximum deviation from symmetry accepted (and repaired) for `A_ii`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// How a flat strategy vector splits into per-player blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("a game needs at least one player".into()));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!("player {} has an empty strategy block", i + 1)));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for d in &dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Self { dims, offsets })
    }

    pub fn players(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total dimension `n = Σ n_i`.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block<'a>(&self, x: &'a DVector<f64>, i: usize) -> DVectorView<'a, f64> {
        x.rows(self.offsets[i], self.dims[i])
    }

    /// The profile `(x_{-i}, y_i)`: `x` with block `i` taken from `y`.
    pub fn splice(&self, x: &DVector<f64>, y: &DVector<f64>, i: usize) -> DVector<f64> {
        let mut z = x.clone();
        let r = self.range(i);
        z.rows_mut(r.start, r.len()).copy_from(&y.rows(r.start, r.len()));
        z
    }

    pub fn check_player(&self, i: usize) -> Result<()> {
        if i >= self.players() {
            return Err(Error::PlayerIndex {
                index: i,
                players: self.players(),
            });
        }
        Ok(())
    }

    pub fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.total() {
            return Err(Error::Shape(format!(
                "strategy profile has length {}, game expects {}",
                x.len(),
                self.total()
            )));
        }
        Ok(())
    }
}

/// A joint strategy `x = (x_1, …, x_N)` with both a flat and a block view.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    layout: BlockLayout,
    flat: DVector<f64>,
}

impl StrategyProfile {
    pub fn from_blocks(blocks: &[DVector<f64>]) -> Result<Self> {
        let layout = BlockLayout::new(blocks.iter().map(|b| b.len()).collect())?;
        let flat = DVector::from_iterator(
            layout.total(),
            blocks.iter().flat_map(|b| b.iter().copied()),
        );
        Ok(Self { layout, flat })
    }

    pub fn from_flat(layout: &BlockLayout, flat: DVector<f64>) -> Result<Self> {
        layout.check_point(&flat)?;
        Ok(Self {
            layout: layout.clone(),
            flat,
        })
    }

    pub fn block(&self, i: usize) -> DVectorView<'_, f64> {
        self.layout.block(&self.flat, i)
    }

    pub fn flat(&self) -> &DVector<f64> {
        &self.flat
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn into_flat(self) -> DVector<f64> {
        self.flat
    }
}

/// A game whose player losses are smooth and convex in the player's own block.
///
/// Trait methods assume dimensionally valid input; the free functions
/// [`loss`] and [`partial_grad`] validate before dispatching.
pub trait Game: Send + Sync {
    fn layout(&self) -> &BlockLayout;

    /// `θ_i(x)`.
    fn loss(&self, i: usize, x: &DVector<f64>) -> f64;

    /// `∇_{x_i} θ_i(x)`, length `n_i`.
    fn partial_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64>;

    /// `∇θ_i(x)` with respect to the whole profile, length `n`.
    fn full_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64>;

    fn as_quadratic(&self) -> Option<&QuadraticGame> {
        None
    }

    fn players(&self) -> usize {
        self.layout().players()
    }

    fn dim(&self) -> usize {
        self.layout().total()
    }

    /// Stacked partial gradients `F(x) = (∇_{x_i} θ_i(x))_i`.
    fn pseudo_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let layout = self.layout();
        let mut out = DVector::zeros(layout.total());
        for i in 0..layout.players() {
            let r = layout.range(i);
            out.rows_mut(r.start, r.len()).copy_from(&self.partial_grad(i, x));
        }
        out
    }
}

pub fn loss(game: &dyn Game, i: usize, x: &DVector<f64>) -> Result<f64> {
    game.layout().check_player(i)?;
    game.layout().check_point(x)?;
    Ok(game.loss(i, x))
}

pub fn partial_grad(game: &dyn Game, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    game.layout().check_player(i)?;
    game.layout().check_point(x)?;
    Ok(game.partial_grad(i, x))
}

/// `θ_i(x) = ½ x_iᵀ A_ii x_i + Σ_{l≠i} x_lᵀ A_li x_i`.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    layout: BlockLayout,
    // A_li stored at l * N + i.
    blocks: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
    jacobian: DMatrix<f64>,
    delta: f64,
    warnings: Vec<String>,
}

impl QuadraticGame {
    /// Builds the game from `A` blocks keyed by 0-based `(l, i)`.
    ///
    /// Missing off-diagonal blocks are zero; missing diagonal blocks are an
    /// error. Positive definiteness of `C` is recorded in `delta`, not required.
    pub fn new(dims: Vec<usize>, mut blocks: BTreeMap<(usize, usize), DMatrix<f64>>) -> Result<Self> {
        let layout = BlockLayout::new(dims)?;
        let n_players = layout.players();
        let mut warnings = Vec::new();

        if let Some(&(l, i)) = blocks.keys().find(|(l, i)| *l >= n_players || *i >= n_players) {
            return Err(Error::Shape(format!(
                "block A[{},{}] refers to a player beyond {}",
                l + 1,
                i + 1,
                n_players
            )));
        }

        let mut stored = Vec::with_capacity(n_players * n_players);
        for l in 0..n_players {
            for i in 0..n_players {
                let (rows, cols) = (layout.dims()[l], layout.dims()[i]);
                let block = match blocks.remove(&(l, i)) {
                    Some(b) => b,
                    None if l == i => {
                        return Err(Error::Shape(format!("diagonal block A[{},{}] is missing", l + 1, i + 1)))
                    }
                    None => {
                        warnings.push(format!("block A[{},{}] missing, treated as zero", l + 1, i + 1));
                        DMatrix::zeros(rows, cols)
                    }
                };
                if block.shape() != (rows, cols) {
                    return Err(Error::Shape(format!(
                        "block A[{},{}] is {}x{}, expected {}x{}",
                        l + 1,
                        i + 1,
                        block.nrows(),
                        block.ncols(),
                        rows,
                        cols
                    )));
                }
                let block = if l == i {
                    let deviation = (&block - block.transpose()).amax();
                    if deviation > SYMMETRY_TOL {
                        return Err(Error::Asymmetric {
                            l: l + 1,
                            i: i + 1,
                            deviation,
                        });
                    }
                    if deviation > 0.0 {
                        warnings.push(format!(
                            "block A[{},{}] symmetrized (deviation {:e})",
                            l + 1,
                            i + 1,
                            deviation
                        ));
                    }
                    (&block + block.transpose()) * 0.5
                } else {
                    block
                };
                stored.push(block);
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }

        let n = layout.total();
        let mut c = DMatrix::zeros(n, n);
        let mut jacobian = DMatrix::zeros(n, n);
        for l in 0..n_players {
            for i in 0..n_players {
                let a_li = &stored[l * n_players + i];
                let (rl, ri) = (layout.range(l), layout.range(i));
                let scale = if l == i { 0.5 } else { 1.0 };
                c.view_mut((rl.start, ri.start), (rl.len(), ri.len()))
                    .copy_from(&(a_li * scale));
                // ∂F_i/∂x_l = A_li^T off the diagonal, A_ii on it.
                let jac_block = if l == i { a_li.clone() } else { a_li.transpose() };
                jacobian
                    .view_mut((ri.start, rl.start), (ri.len(), rl.len()))
                    .copy_from(&jac_block);
            }
        }
        let delta = linalg::min_eigenvalue(&(&c + c.transpose()));

        Ok(Self {
            layout,
            blocks: stored,
            c,
            jacobian,
            delta,
            warnings,
        })
    }

    /// `A_li` with 0-based indices.
    pub fn block(&self, l: usize, i: usize) -> &DMatrix<f64> {
        &self.blocks[l * self.layout.players() + i]
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn c_plus_ct(&self) -> DMatrix<f64> {
        &self.c + self.c.transpose()
    }

    /// Smallest eigenvalue of `C + Cᵀ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Jacobian of the (linear) pseudo-gradient, `F(x) = J x`.
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    /// Lipschitz constant of `F`, `‖J‖₂`.
    pub fn f_lipschitz(&self) -> f64 {
        linalg::spectral_norm(&self.jacobian)
    }

    /// Smallest and largest eigenvalue over all own-cost blocks `A_ii`.
    pub fn own_curvature_range(&self) -> (f64, f64) {
        (0..self.layout.players())
            .map(|i| {
                let e = linalg::symmetric_eigenvalues(self.block(i, i));
                (e[0], *e.last().unwrap())
            })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a), hi.max(b))
            })
    }

    /// Construction notes (missing blocks, symmetrization).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `b_i = Σ_{l≠i} A_liᵀ x_l`, the linear coefficient of `x_i` in `θ_i`.
    pub(crate) fn cross_term(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut b = DVector::zeros(self.layout.dims()[i]);
        for l in (0..self.layout.players()).filter(|&l| l != i) {
            b += self.block(l, i).tr_mul(&self.layout.block(x, l));
        }
        b
    }
}

impl Game for QuadraticGame {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn loss(&self, i: usize, x: &DVector<f64>) -> f64 {
        let xi = self.layout.block(x, i);
        0.5 * xi.dot(&(self.block(i, i) * xi)) + self.cross_term(i, x).dot(&xi)
    }

    fn partial_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        self.block(i, i) * self.layout.block(x, i) + self.cross_term(i, x)
    }

    fn full_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.layout.total());
        let xi = self.layout.block(x, i);
        for l in 0..self.layout.players() {
            let r = self.layout.range(l);
            let part = if l == i {
                self.partial_grad(i, x)
            } else {
                self.block(l, i) * xi
            };
            g.rows_mut(r.start, r.len()).copy_from(&part);
        }
        g
    }

    fn as_quadratic(&self) -> Option<&QuadraticGame> {
        Some(self)
    }

    fn pseudo_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * x
    }
}

pub type LossFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Loss of one player in a [`SmoothGame`], with its block and full gradients.
pub struct SmoothPlayer {
    pub loss: LossFn,
    pub block_grad: GradFn,
    pub full_grad: GradFn,
}

/// A game given by user-supplied smooth losses.
pub struct SmoothGame {
    layout: BlockLayout,
    players: Vec<SmoothPlayer>,
}

impl SmoothGame {
    pub fn new(dims: Vec<usize>, players: Vec<SmoothPlayer>) -> Result<Self> {
        let layout = BlockLayout::new(dims)?;
        if players.len() != layout.players() {
            return Err(Error::Shape(format!(
                "{} loss functions for {} players",
                players.len(),
                layout.players()
            )));
        }
        Ok(Self { layout, players })
    }

    /// Largest relative deviation between supplied block gradients and
    /// central finite differences of the losses over `points`.
    pub fn gradient_error(&self, points: &[DVector<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for x in points {
            for i in 0..self.layout.players() {
                let r = self.layout.range(i);
                let supplied = self.partial_grad(i, x);
                let fd = DVector::from_iterator(
                    r.len(),
                    r.clone().map(|j| central_difference(|z| self.loss(i, z), x, j)),
                );
                worst = worst.max(relative_error(&supplied, &fd));
            }
        }
        worst
    }

    /// Fails when [`gradient_error`](Self::gradient_error) exceeds `tol`.
    pub fn validate_gradients(&self, points: &[DVector<f64>], tol: f64) -> Result<f64> {
        for x in points {
            self.layout.check_point(x)?;
        }
        let err = self.gradient_error(points);
        if err > tol {
            return Err(Error::InvalidParameter(format!(
                "supplied block gradients disagree with finite differences (relative error {err:e})"
            )));
        }
        Ok(err)
    }
}

impl Game for SmoothGame {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn loss(&self, i: usize, x: &DVector<f64>) -> f64 {
        (self.players[i].loss)(x)
    }

    fn partial_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.players[i].block_grad)(x)
    }

    fn full_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.players[i].full_grad)(x)
    }
}

pub(crate) fn central_difference(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, j: usize) -> f64 {
    let h = 1e-6 * x[j].abs().max(1.0);
    let mut plus = x.clone();
    plus[j] += h;
    let mut minus = x.clone();
    minus[j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `‖a − b‖ / max(‖b‖, 1)`.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}
