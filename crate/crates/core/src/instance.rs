//! JSON instance files: parsing, canonical writing, certification of a
//! declared solution set, and the seeded random generator.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, SolutionSet};
use crate::model::{Game, QuadraticGame};
use crate::vi::vi_residual;

/// Residual a declared solution point must meet for the file to load.
pub const SOLUTION_CERTIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDescription {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polytope { g: Vec<Vec<f64>>, h: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SolutionDescription {
    Singleton(Vec<f64>),
    Polytope { g: Vec<Vec<f64>>, h: Vec<f64> },
}

/// Optional run parameters stored with an instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_sub: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_term: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

/// On-disk form of a quadratic game instance. Block keys are `"l,i"`, 1-based,
/// and matrices are row-major arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_players: usize,
    pub dims: Vec<usize>,
    pub blocks: BTreeMap<String, Vec<Vec<f64>>>,
    pub feasible_set: SetDescription,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution_set: Option<SolutionDescription>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defaults: Option<Defaults>,
}

/// A validated instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub file: InstanceFile,
    pub game: QuadraticGame,
    pub set: FeasibleSet,
    pub solution_set: Option<SolutionSet>,
}

impl Instance {
    pub fn name(&self) -> &str {
        self.file.name.as_deref().unwrap_or("instance")
    }

    pub fn defaults(&self) -> Defaults {
        self.file.defaults.clone().unwrap_or_default()
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((r, _)) = rows.iter().enumerate().find(|(_, row)| row.len() != ncols) {
        return Err(Error::instance(
            format!("{field}[{r}]"),
            format!("row has {} entries, expected {ncols}", rows[r].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::instance(field, "entries must be finite"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn vector(field: &str, v: &[f64], n: usize) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::instance(field, format!("has length {}, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::instance(field, "entries must be finite"));
    }
    Ok(DVector::from_column_slice(v))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn polytope(field: &str, g: &[Vec<f64>], h: &[f64], n: usize) -> Result<FeasibleSet> {
    let gm = matrix(&format!("{field}.g"), g)?;
    if gm.nrows() > 0 && gm.ncols() != n {
        return Err(Error::instance(
            format!("{field}.g"),
            format!("rows have {} columns, expected {n}", gm.ncols()),
        ));
    }
    let gm = if gm.nrows() == 0 { DMatrix::zeros(0, n) } else { gm };
    let hv = vector(&format!("{field}.h"), h, gm.nrows())?;
    FeasibleSet::new_polytope(gm, hv).map_err(|e| Error::instance(field, e.to_string()))
}

impl InstanceFile {
    /// Parses JSON text; syntax errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text: pretty-printed JSON with a trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("instance files always serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Builds the game and sets, certifying a declared solution set.
    pub fn load(&self) -> Result<Instance> {
        if self.dims.len() != self.n_players {
            return Err(Error::instance(
                "dims",
                format!("lists {} players but n_players is {}", self.dims.len(), self.n_players),
            ));
        }
        if self.n_players == 0 {
            return Err(Error::instance("n_players", "must be at least 1"));
        }
        if let Some(p) = self.dims.iter().position(|&d| d == 0) {
            return Err(Error::instance(format!("dims[{p}]"), "dimensions must be positive"));
        }
        let mut blocks = BTreeMap::new();
        for (key, rows) in &self.blocks {
            let field = format!("blocks.\"{key}\"");
            let (l, i) = parse_key(key, self.n_players).map_err(|m| Error::instance(&field, m))?;
            let m = matrix(&field, rows)?;
            if m.nrows() != self.dims[l] || m.ncols() != self.dims[i] {
                return Err(Error::instance(
                    &field,
                    format!(
                        "shape {}x{}, expected {}x{}",
                        m.nrows(),
                        m.ncols(),
                        self.dims[l],
                        self.dims[i]
                    ),
                ));
            }
            blocks.insert((l, i), m);
        }
        let game = QuadraticGame::new(self.dims.clone(), blocks).map_err(|e| Error::instance("blocks", e.to_string()))?;
        let n = game.layout().total();

        let set = match &self.feasible_set {
            SetDescription::Box { lower, upper } => FeasibleSet::new_box(
                vector("feasible_set.box.lower", lower, n)?,
                vector("feasible_set.box.upper", upper, n)?,
            )
            .map_err(|e| Error::instance("feasible_set.box", e.to_string()))?,
            SetDescription::Polytope { g, h } => polytope("feasible_set.polytope", g, h, n)?,
        };

        let solution_set = match &self.solution_set {
            None => None,
            Some(desc) => {
                let xs = match desc {
                    SolutionDescription::Singleton(p) => SolutionSet::Singleton(vector("solution_set.singleton", p, n)?),
                    SolutionDescription::Polytope { g, h } => SolutionSet::Polytope(polytope("solution_set.polytope", g, h, n)?),
                };
                certify(&game, &set, &xs)?;
                Some(xs)
            }
        };
        if let Some(x0) = self.defaults.as_ref().and_then(|d| d.x0.as_ref()) {
            vector("defaults.x0", x0, n)?;
        }
        Ok(Instance {
            file: self.clone(),
            game,
            set,
            solution_set,
        })
    }

    /// The file form of a game, set and optional solution set.
    pub fn from_parts(game: &QuadraticGame, set: &FeasibleSet, xstar: Option<&SolutionSet>) -> Self {
        let players = game.layout().players();
        let mut blocks = BTreeMap::new();
        for l in 0..players {
            for i in 0..players {
                blocks.insert(format!("{},{}", l + 1, i + 1), rows_of(game.block(l, i)));
            }
        }
        let feasible_set = match set {
            FeasibleSet::Box { lower, upper } => SetDescription::Box {
                lower: lower.as_slice().to_vec(),
                upper: upper.as_slice().to_vec(),
            },
            FeasibleSet::Polytope { g, h } => SetDescription::Polytope {
                g: rows_of(g),
                h: h.as_slice().to_vec(),
            },
        };
        let solution_set = xstar.map(|xs| match xs {
            SolutionSet::Singleton(p) => SolutionDescription::Singleton(p.as_slice().to_vec()),
            SolutionSet::Polytope(FeasibleSet::Polytope { g, h }) => SolutionDescription::Polytope {
                g: rows_of(g),
                h: h.as_slice().to_vec(),
            },
            SolutionSet::Polytope(b) => {
                let (g, h) = b.halfspaces();
                SolutionDescription::Polytope {
                    g: rows_of(&g),
                    h: h.as_slice().to_vec(),
                }
            }
        });
        Self {
            name: None,
            n_players: players,
            dims: game.layout().dims().to_vec(),
            blocks,
            feasible_set,
            solution_set,
            defaults: None,
        }
    }
}

fn parse_key(key: &str, players: usize) -> std::result::Result<(usize, usize), String> {
    let parse = |s: &str| -> std::result::Result<usize, String> {
        let v: usize = s.trim().parse().map_err(|_| format!("key \"{key}\" is not of the form \"l,i\""))?;
        if v == 0 || v > players {
            return Err(format!("player index {v} in key \"{key}\" is outside 1..={players}"));
        }
        Ok(v - 1)
    };
    match key.split_once(',') {
        Some((l, i)) => Ok((parse(l)?, parse(i)?)),
        None => Err(format!("key \"{key}\" is not of the form \"l,i\"")),
    }
}

fn certify(game: &QuadraticGame, set: &FeasibleSet, xs: &SolutionSet) -> Result<()> {
    for p in xs.evaluation_points().map_err(|e| Error::instance("solution_set", e.to_string()))? {
        let violation = set.violation(&p);
        let residual = vi_residual(game, set, &p);
        if violation > 1e-8 || residual > SOLUTION_CERTIFY_TOL {
            return Err(Error::instance(
                "solution_set",
                format!(
                    "point {:?} does not certify: VI residual {residual:e}, set violation {violation:e}",
                    p.as_slice()
                ),
            ));
        }
    }
    Ok(())
}

/// Random quadratic game with `λ_min(C + Cᵀ) = delta_floor + slack`, slack in `[0.05, 0.5)`.
///
/// Entries of every block are uniform on `[-1, 1]`; diagonal blocks are
/// symmetrized and then shifted by a multiple of the identity.
pub fn random_game(rng: &mut ChaCha8Rng, players: usize, dim: usize, delta_floor: f64) -> Result<QuadraticGame> {
    if !(delta_floor >= 0.0 && delta_floor.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta floor must be nonnegative, got {delta_floor}")));
    }
    if players == 0 || dim == 0 {
        return Err(Error::InvalidParameter("need at least one player and one dimension".into()));
    }
    let mut blocks = BTreeMap::new();
    for l in 0..players {
        for i in 0..players {
            let mut m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            if l == i {
                m = (&m + m.transpose()) * 0.5;
            }
            blocks.insert((l, i), m);
        }
    }
    let slack: f64 = rng.gen_range(0.05..0.5);
    let current = QuadraticGame::new(vec![dim; players], blocks.clone())?.delta();
    // A_ii + sI moves every diagonal block of C + Cᵀ by sI.
    let shift = delta_floor + slack - current;
    for i in 0..players {
        let b = blocks.get_mut(&(i, i)).expect("diagonal block");
        *b += DMatrix::identity(dim, dim) * shift;
    }
    QuadraticGame::new(vec![dim; players], blocks)
}

/// Seeded random instance. The box excludes the origin when `delta_floor > 0`
/// and contains it otherwise.
pub fn generate(players: usize, dim: usize, seed: u64, delta_floor: f64) -> Result<InstanceFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let game = random_game(&mut rng, players, dim, delta_floor)?;
    let n = players * dim;
    let (lower, upper): (Vec<f64>, Vec<f64>) = if delta_floor > 0.0 {
        (0..n)
            .map(|_| {
                let lo = rng.gen_range(0.5..1.5);
                (lo, lo + rng.gen_range(0.5..1.5))
            })
            .unzip()
    } else {
        (0..n).map(|_| (rng.gen_range(-1.5..-0.5), rng.gen_range(0.5..1.5))).unzip()
    };
    let set = FeasibleSet::new_box(DVector::from_vec(lower), DVector::from_vec(upper))?;
    let mut file = InstanceFile::from_parts(&game, &set, None);
    file.name = Some(format!("generated-p{players}-d{dim}-s{seed}"));
    file.defaults = Some(Defaults {
        a: Some(game.delta() / 2.0),
        ..Defaults::default()
    });
    Ok(file)
}
