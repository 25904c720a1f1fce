//! Canonical fixtures `E1` (sharp) and `E0` (degenerate), stored as instance
//! files with a facts sidecar, plus the constructed random suites
//! `random-sharp-k` and `random-degenerate-k`. Every fact is re-checked
//! against the oracles when a fixture loads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::gamma_from_cones;
use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, SolutionSet};
use crate::instance::{random_game, Defaults, Instance, InstanceFile};
use crate::model::{Game, QuadraticGame};
use crate::nikaido::RegularizedEvaluator;
use crate::oracle::{grid_scan_nne, grid_va, GridSpec};
use crate::vi::vi_residual;

const E1_INSTANCE: &str = include_str!("../fixtures/e1.instance.json");
const E1_FACTS: &str = include_str!("../fixtures/e1.facts.json");
const E0_INSTANCE: &str = include_str!("../fixtures/e0.instance.json");
const E0_FACTS: &str = include_str!("../fixtures/e0.facts.json");

/// What a fact asserts and how it is re-checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum FactCheck {
    /// `λ_min(C + Cᵀ)`, recomputed with an independent eigensolver.
    Delta { value: f64, tolerance: f64 },
    /// A solution point: VI residual and coverage by the grid NNE scan.
    Solution { point: Vec<f64>, tolerance: f64, grid: usize },
    GammaCone { value: f64, tolerance: f64 },
    /// `ψ_a(x, y)` by closed form; `a = 0` gives `ψ`.
    Psi {
        a: f64,
        x: Vec<f64>,
        y: Vec<f64>,
        value: f64,
        tolerance: f64,
    },
    /// `V_a(x)`: the solver must match `value`, and the grid maximum must
    /// bracket it within its grid error.
    Gap {
        a: f64,
        x: Vec<f64>,
        value: f64,
        tolerance: f64,
        grid: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub name: String,
    /// How the value was obtained.
    pub source: String,
    #[serde(flatten)]
    pub check: FactCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactSheet {
    pub fixture: String,
    pub facts: Vec<Fact>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub file: InstanceFile,
    pub instance: Instance,
    pub facts: Vec<Fact>,
}

impl Fixture {
    pub fn game(&self) -> &QuadraticGame {
        &self.instance.game
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.instance.set
    }

    pub fn solution_set(&self) -> &SolutionSet {
        self.instance.solution_set.as_ref().expect("fixtures declare their solution set")
    }

    pub fn fact(&self, name: &str) -> Option<&Fact> {
        self.facts.iter().find(|f| f.name == name)
    }

    /// `a` from the fixture defaults, or `δ/2`.
    pub fn a(&self) -> f64 {
        self.instance.defaults().a.unwrap_or(self.game().delta() / 2.0)
    }
}

/// Loads `E1`, `E0`, `random-sharp-k` or `random-degenerate-k` and
/// re-validates every fact.
pub fn load_fixture(name: &str) -> Result<Fixture> {
    let fixture = build_fixture(name)?;
    for fact in &fixture.facts {
        validate_fact(&fixture, fact)?;
    }
    Ok(fixture)
}

/// Builds a fixture without checking its facts.
pub fn build_fixture(name: &str) -> Result<Fixture> {
    Ok(match name {
        "E1" | "e1" => stored("E1", E1_INSTANCE, E1_FACTS)?,
        "E0" | "e0" => stored("E0", E0_INSTANCE, E0_FACTS)?,
        _ => {
            if let Some(k) = name.strip_prefix("random-sharp-") {
                constructed(name, parse_index(name, k)?, true)?
            } else if let Some(k) = name.strip_prefix("random-degenerate-") {
                constructed(name, parse_index(name, k)?, false)?
            } else {
                return Err(fixture_error(name, "unknown fixture"));
            }
        }
    })
}

fn fixture_error(name: &str, message: impl Into<String>) -> Error {
    Error::Fixture {
        fixture: name.to_string(),
        message: message.into(),
    }
}

fn parse_index(name: &str, k: &str) -> Result<u64> {
    k.parse().map_err(|_| fixture_error(name, "suffix must be a nonnegative integer"))
}

fn stored(name: &str, instance: &str, facts: &str) -> Result<Fixture> {
    let file = InstanceFile::parse(instance)?;
    let sheet: FactSheet = serde_json::from_str(facts)?;
    if sheet.fixture != name {
        return Err(fixture_error(name, format!("fact sheet belongs to {}", sheet.fixture)));
    }
    let instance = file.load()?;
    if instance.solution_set.is_none() {
        return Err(fixture_error(name, "instance declares no solution set"));
    }
    Ok(Fixture {
        name: name.to_string(),
        file,
        instance,
        facts: sheet.facts,
    })
}

/// Players `2 + k mod 2`, scalar strategies, `δ ≥ 0.5`.
///
/// Sharp: `x* = J⁻¹g` with `g > 0` is the lower corner of the box, so
/// `F(x*) = g` and the cone value is `min g`. Degenerate: the box straddles
/// the origin and `x* = 0` with `F(x*) = 0`.
fn constructed(name: &str, k: u64, sharp: bool) -> Result<Fixture> {
    let players = 2 + (k % 2) as usize;
    let seed = if sharp { 1_000 + k } else { 2_000 + k };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let game = random_game(&mut rng, players, 1, 0.5)?;
    let n = players;
    let (set, star, gamma) = if sharp {
        let g = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
        let lower = game
            .jacobian()
            .clone()
            .lu()
            .solve(&g)
            .ok_or_else(|| fixture_error(name, "pseudo-gradient Jacobian is singular"))?;
        let upper = DVector::from_fn(n, |j, _| lower[j] + rng.gen_range(0.5..1.5));
        let gamma = g.min();
        (FeasibleSet::new_box(lower.clone(), upper)?, lower, gamma)
    } else {
        let lower = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..-0.5));
        let upper = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
        (FeasibleSet::new_box(lower, upper)?, DVector::zeros(n), 0.0)
    };
    let xstar = SolutionSet::Singleton(star.clone());
    let mut file = InstanceFile::from_parts(&game, &set, Some(&xstar));
    file.name = Some(name.to_string());
    file.defaults = Some(Defaults {
        a: Some(game.delta() / 2.0),
        ..Defaults::default()
    });
    let instance = file.load()?;
    let facts = vec![
        Fact {
            name: "delta".into(),
            source: "identity shift of the diagonal blocks in the generator".into(),
            check: FactCheck::Delta {
                value: game.delta(),
                tolerance: 1e-10,
            },
        },
        Fact {
            name: "x_star".into(),
            source: if sharp {
                "lower corner solves J x = g".into()
            } else {
                "origin is interior and F(0) = 0".into()
            },
            check: FactCheck::Solution {
                point: star.as_slice().to_vec(),
                tolerance: 1e-6,
                grid: if n == 2 { 41 } else { 15 },
            },
        },
        Fact {
            name: "gamma_cone".into(),
            source: if sharp {
                "tangent cone is the nonnegative orthant, so the minimum is min g".into()
            } else {
                "F(x*) is the zero vector".into()
            },
            check: FactCheck::GammaCone {
                value: gamma,
                tolerance: 1e-8,
            },
        },
    ];
    Ok(Fixture {
        name: name.to_string(),
        file,
        instance,
        facts,
    })
}

fn point(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Re-checks one fact against the oracles.
pub fn validate_fact(fx: &Fixture, fact: &Fact) -> Result<()> {
    let fail = |msg: String| Err(fixture_error(&fx.name, format!("fact {}: {msg}", fact.name)));
    let game = fx.game();
    let set = fx.set();
    match &fact.check {
        FactCheck::Delta { value, tolerance } => {
            let sym = game.c_plus_ct();
            let reference = DMatrix::from(sym).symmetric_eigen().eigenvalues.min();
            if (reference - value).abs() > *tolerance || (game.delta() - value).abs() > *tolerance {
                return fail(format!("delta {} / eigensolver {reference} vs {value}", game.delta()));
            }
        }
        FactCheck::Solution { point: p, tolerance, grid } => {
            let p = point(p);
            let r = vi_residual(game, set, &p);
            if r > *tolerance {
                return fail(format!("VI residual {r:e}"));
            }
            let scan = grid_scan_nne(game, set, &GridSpec::uniform(game.dim(), *grid))?;
            if !scan.covers(&p) {
                return fail("grid scan found no candidate within one cell".into());
            }
        }
        FactCheck::GammaCone { value, tolerance } => {
            let gamma = gamma_from_cones(game, set, fx.solution_set())?.value;
            if (gamma - value).abs() > *tolerance {
                return fail(format!("cone value {gamma} vs {value}"));
            }
        }
        FactCheck::Psi {
            a,
            x,
            y,
            value,
            tolerance,
        } => {
            let (x, y) = (point(x), point(y));
            let got = crate::nikaido::ni_psi(game, &x, &y) - 0.5 * a * (&x - &y).norm_squared();
            if (got - value).abs() > *tolerance {
                return fail(format!("psi value {got} vs {value}"));
            }
        }
        FactCheck::Gap {
            a,
            x,
            value,
            tolerance,
            grid,
        } => {
            let x = point(x);
            let ev = RegularizedEvaluator::new(game, *a)?;
            let solver = ev.gap(set, &x)?;
            if (solver - value).abs() > *tolerance {
                return fail(format!("solver value {solver} vs {value}"));
            }
            let g = grid_va(&ev, set, &x, &GridSpec::uniform(game.dim(), *grid))?;
            if g.value > value + tolerance || g.value < value - g.grid_error - tolerance {
                return fail(format!("grid value {} (error {}) vs {value}", g.value, g.grid_error));
            }
        }
    }
    Ok(())
}
