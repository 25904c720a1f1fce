use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gnep_core::diagnostics::{diagnose, gamma_from_cones, resolve_solution_set, SHARP_FLOOR};
use gnep_core::fixtures::{build_fixture, validate_fact, Fixture};
use gnep_core::instance::{generate, Instance, InstanceFile};
use gnep_core::model::Game;
use gnep_core::nikaido::RegularizedEvaluator;
use gnep_core::oracle::GridSpec;
use gnep_core::ppa::{iteration_bound, ppa_run, PPAConfig, RSchedule, DEFAULT_TOL_TERM};
use gnep_core::vi::{solve_vi_extragradient, vi_residual, ExtragradientOptions};
use gnep_core::Error as CoreError;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::report::*;
use crate::{BoundArgs, Cli, Command, DiagnoseArgs, GenerateArgs, InputArgs, Method, SolveArgs, VerifyArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_CAP: u8 = 2;
pub const EXIT_PRECONDITION: u8 = 3;

/// An error that carries its own exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl Failure {
    fn precondition(message: impl Into<String>) -> anyhow::Error {
        Failure {
            code: EXIT_PRECONDITION,
            message: message.into(),
        }
        .into()
    }

    pub fn exit_code(e: &anyhow::Error) -> u8 {
        for cause in e.chain() {
            if let Some(f) = cause.downcast_ref::<Failure>() {
                return f.code;
            }
            if let Some(c) = cause.downcast_ref::<CoreError>() {
                return match c {
                    CoreError::IterationCap { .. } => EXIT_CAP,
                    CoreError::Uncertified(_) | CoreError::Unsupported(_) => EXIT_PRECONDITION,
                    _ => EXIT_INPUT,
                };
            }
        }
        EXIT_INPUT
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Bound(args) => cmd_bound(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

struct Loaded {
    label: String,
    instance: Instance,
    fixture: Option<Fixture>,
}

fn load_inputs(input: &InputArgs) -> Result<Vec<Loaded>> {
    if input.instances.is_empty() && input.fixtures.is_empty() {
        bail!(Failure {
            code: EXIT_INPUT,
            message: "give at least one --instance or --fixture".into(),
        });
    }
    let mut out = Vec::new();
    for path in &input.instances {
        let file = InstanceFile::read(path).with_context(|| format!("reading {}", path.display()))?;
        let instance = file.load().with_context(|| format!("loading {}", path.display()))?;
        let label = file.name.clone().unwrap_or_else(|| path.display().to_string());
        out.push(Loaded {
            label,
            instance,
            fixture: None,
        });
    }
    for name in &input.fixtures {
        let fx = build_fixture(name).with_context(|| format!("loading fixture {name}"))?;
        out.push(Loaded {
            label: fx.name.clone(),
            instance: fx.instance.clone(),
            fixture: Some(fx),
        });
    }
    Ok(out)
}

/// Maps over inputs, in a dedicated pool when `--jobs` is given.
fn for_each_input<T, F>(inputs: &[Loaded], jobs: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Loaded) -> Result<T> + Sync + Send,
{
    match jobs {
        Some(n) if inputs.len() > 1 => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?;
            pool.install(|| inputs.par_iter().map(&f).collect())
        }
        _ => inputs.iter().map(f).collect(),
    }
}

fn emit<T: Serialize>(
    command: &str,
    config: serde_json::Value,
    outcomes: Vec<T>,
    started: Instant,
    out: Option<&Path>,
) -> Result<()> {
    let report = RunReport {
        command: command.to_string(),
        args: std::env::args().skip(1).collect(),
        config,
        outcomes,
        wall_time_s: started.elapsed().as_secs_f64(),
        version: VERSION,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn resolve_a(flag: Option<f64>, inst: &Instance) -> Result<f64> {
    if let Some(a) = flag.or(inst.defaults().a) {
        return Ok(a);
    }
    let delta = inst.game.delta();
    if delta > 0.0 {
        Ok(delta / 2.0)
    } else {
        bail!(Failure {
            code: EXIT_INPUT,
            message: format!("delta = {delta} is not positive; pass --a explicitly"),
        })
    }
}

fn resolve_x0(flag: &[f64], inst: &Instance) -> Result<DVector<f64>> {
    let x0 = if !flag.is_empty() {
        DVector::from_column_slice(flag)
    } else if let Some(x0) = inst.defaults().x0 {
        DVector::from_vec(x0)
    } else {
        let (_, hi) = inst.set.bounding_box()?;
        inst.set.project(&hi)
    };
    inst.game.layout().check_point(&x0).context("--x0")?;
    Ok(x0)
}

fn resolve_schedule(flag: &[f64], inst: &Instance) -> RSchedule {
    match flag {
        [] => RSchedule::Constant(inst.defaults().r.unwrap_or(1.0)),
        [r] => RSchedule::Constant(*r),
        rs => RSchedule::Sequence(rs.to_vec()),
    }
}

fn default_grid(dim: usize) -> usize {
    match dim {
        1 => 201,
        2 => 41,
        3 => 11,
        _ => 5,
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<u8> {
    let file = generate(args.players, args.dim, args.seed, args.delta_floor)?;
    let delta = file.load()?.game.delta();
    if delta < args.delta_floor {
        bail!("generated delta {delta} is below the floor {}", args.delta_floor);
    }
    match &args.out {
        Some(p) => {
            file.write(p).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("wrote {} (delta = {delta})", p.display());
        }
        None => print!("{}", file.to_json_string()),
    }
    Ok(EXIT_OK)
}

fn trace_path(base: &Path, label: &str, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    base.with_file_name(format!("{stem}.{safe}.csv"))
}

fn cmd_solve(args: &SolveArgs) -> Result<u8> {
    let started = Instant::now();
    let inputs = load_inputs(&args.input)?;
    let many = inputs.len() > 1;
    let outcomes = for_each_input(&inputs, args.input.jobs, |ld| solve_one(args, ld, many))?;
    let code = if outcomes.iter().any(|o| o.status == SolveStatus::Cap) {
        EXIT_CAP
    } else {
        EXIT_OK
    };
    for o in &outcomes {
        eprintln!(
            "{}: {} after {} iterations, x = {:?}, gap = {:e}",
            o.instance,
            if o.status == SolveStatus::Converged { "converged" } else { "hit the cap" },
            o.iterations,
            o.x,
            o.gap_va
        );
    }
    let config = json!({
        "method": match args.method { Method::Ppa => "ppa", Method::Extragradient => "extragradient" },
        "a": args.a, "r": args.r, "epsilon": args.epsilon, "x0": args.x0,
        "tol": args.tol, "max_iters": args.max_iters,
    });
    emit("solve", config, outcomes, started, args.input.out.as_deref())?;
    Ok(code)
}

fn solve_one(args: &SolveArgs, ld: &Loaded, many: bool) -> Result<SolveOutcome> {
    let inst = &ld.instance;
    let a = resolve_a(args.a, inst)?;
    let x0 = resolve_x0(&args.x0, inst)?;
    let ev = RegularizedEvaluator::new(&inst.game, a)?;
    let warnings = inst.game.warnings().to_vec();
    match args.method {
        Method::Ppa => {
            let mut cfg = PPAConfig::new(a, resolve_schedule(&args.r, inst));
            cfg.epsilon = args.epsilon.or(inst.defaults().epsilon);
            if let Some(t) = args.tol.or(inst.defaults().tol_term) {
                cfg.tol_term = t;
            }
            if let Some(t) = inst.defaults().tol_sub {
                cfg.tol_sub = t;
            }
            if let Some(m) = args.max_iters.or(inst.defaults().max_iters) {
                cfg.max_iters = m;
            }
            let trace = ppa_run(&inst.game, &inst.set, &x0, &cfg, inst.solution_set.as_ref())
                .with_context(|| format!("solving {}", ld.label))?;
            let trace_file = match &args.trace {
                Some(base) => {
                    let path = trace_path(base, &ld.label, many);
                    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    trace.write_csv(std::io::BufWriter::new(f))?;
                    Some(path.display().to_string())
                }
                None => None,
            };
            let k = trace.iterates.len() - 1;
            Ok(SolveOutcome {
                instance: ld.label.clone(),
                method: "ppa",
                status: if trace.hit_cap() { SolveStatus::Cap } else { SolveStatus::Converged },
                a,
                delta: inst.game.delta(),
                x0: x0.as_slice().to_vec(),
                x: trace.iterates[k].clone(),
                gap_va: trace.gap_va[k],
                vi_residual: trace.vi_residual[k],
                iterations: k,
                termination_index: trace.termination_index,
                convexity_prerequisite: trace.convexity_prerequisite,
                epsilon: Some(trace.epsilon),
                xstar_distance: trace.xstar_distance,
                xstar_consistent: trace.xstar_consistent,
                max_sub_residual: trace.sub_residuals.iter().copied().reduce(f64::max),
                trace_file,
                warnings,
            })
        }
        Method::Extragradient => {
            let mut opts = ExtragradientOptions::default();
            if let Some(t) = args.tol {
                opts.tol = t;
            }
            if let Some(m) = args.max_iters.or(inst.defaults().max_iters) {
                opts.max_iters = m;
            }
            let run = solve_vi_extragradient(&inst.game, &inst.set, &x0, &opts)
                .with_context(|| format!("solving {}", ld.label))?;
            let x = run.point();
            let xstar_distance = inst.solution_set.as_ref().map(|xs| xs.distance(&x));
            Ok(SolveOutcome {
                instance: ld.label.clone(),
                method: "extragradient",
                status: if run.converged { SolveStatus::Converged } else { SolveStatus::Cap },
                a,
                delta: inst.game.delta(),
                x0: x0.as_slice().to_vec(),
                gap_va: ev.gap(&inst.set, &x)?,
                vi_residual: run.residual,
                x: run.x,
                iterations: run.iterations,
                termination_index: None,
                convexity_prerequisite: ev.psi_convex_in_x().ok(),
                epsilon: None,
                xstar_distance,
                xstar_consistent: xstar_distance.map(|d| d <= 1e-6),
                max_sub_residual: None,
                trace_file: None,
                warnings,
            })
        }
    }
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<u8> {
    let started = Instant::now();
    let inputs = load_inputs(&args.input)?;
    let outcomes = for_each_input(&inputs, args.input.jobs, |ld| {
        let inst = &ld.instance;
        let a = resolve_a(args.a, inst)?;
        let xstar = resolve_solution_set(&inst.game, &inst.set, inst.solution_set.as_ref())
            .with_context(|| format!("solution set of {}", ld.label))?;
        let n = args.grid.or(inst.defaults().grid).unwrap_or_else(|| default_grid(inst.game.dim()));
        let grid = GridSpec::uniform(inst.game.dim(), n);
        let report = diagnose(&ld.label, &inst.game, &inst.set, &xstar, a, &grid)
            .with_context(|| format!("diagnosing {}", ld.label))?;
        Ok(DiagnoseOutcome {
            report,
            warnings: inst.game.warnings().to_vec(),
        })
    })?;
    for o in &outcomes {
        let r = &o.report;
        eprintln!(
            "{}: gamma_cone = {}, error bound min = {:?}, conditioning min = {:?}, verdict {:?}",
            r.instance, r.gamma_cone, r.gamma_grid_errorbound, r.gamma_grid_lincond, r.verdicts.equivalence
        );
    }
    let config = json!({ "a": args.a, "grid": args.grid });
    emit("diagnose", config, outcomes, started, args.input.out.as_deref())?;
    Ok(EXIT_OK)
}

/// First `k` whose `gap_va` column is at most `tol`.
fn k0_from_csv(path: &Path, tol: f64) -> Result<Option<usize>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no {name} column", path.display()))
    };
    let (k_col, gap_col) = (col("k")?, col("gap_va")?);
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec[c]
                .parse::<f64>()
                .with_context(|| format!("{} line {}: bad number", path.display(), line + 2))
        };
        if parse(gap_col)? <= tol {
            return Ok(Some(parse(k_col)? as usize));
        }
    }
    Ok(None)
}

fn cmd_bound(args: &BoundArgs) -> Result<u8> {
    let started = Instant::now();
    let inputs = load_inputs(&args.input)?;
    let outcomes = for_each_input(&inputs, args.input.jobs, |ld| {
        let inst = &ld.instance;
        let xstar = resolve_solution_set(&inst.game, &inst.set, inst.solution_set.as_ref())
            .with_context(|| format!("solution set of {}", ld.label))?;
        let gamma = gamma_from_cones(&inst.game, &inst.set, &xstar)?.value;
        if !(gamma > SHARP_FLOOR) {
            return Err(Failure::precondition(format!(
                "bound not applicable: X* not weakly sharp ({}: gamma = {gamma})",
                ld.label
            )));
        }
        let schedule = resolve_schedule(&args.r, inst);
        let mut cfg = PPAConfig::new(resolve_a(args.a, inst)?, schedule);
        cfg.epsilon = args.epsilon.or(inst.defaults().epsilon);
        cfg.validate()?;
        let epsilon = cfg.resolved_epsilon();
        let x0 = resolve_x0(&args.x0, inst)?;
        let d0 = xstar.distance(&x0);
        let bound = iteration_bound(d0, epsilon, gamma)?;
        let tol = args.tol.unwrap_or(DEFAULT_TOL_TERM);
        let measured = if let Some(path) = &args.trace {
            Some((k0_from_csv(path, tol)?, path.display().to_string()))
        } else if args.run {
            cfg.tol_term = tol;
            if let Some(m) = args.max_iters {
                cfg.max_iters = m;
            }
            let trace = ppa_run(&inst.game, &inst.set, &x0, &cfg, Some(&xstar))?;
            Some((trace.termination_index, "ppa run".to_string()))
        } else {
            None
        };
        Ok(BoundOutcome {
            instance: ld.label.clone(),
            x0: x0.as_slice().to_vec(),
            d0,
            epsilon,
            gamma,
            bound,
            k0_max: bound.floor() as u64,
            measured: measured.map(|(k0, source)| MeasuredIndex {
                within_bound: k0.map(|k| k as f64 <= bound),
                k0,
                source,
            }),
        })
    })?;
    for o in &outcomes {
        let check = match &o.measured {
            Some(MeasuredIndex {
                k0: Some(k),
                within_bound: Some(ok),
                ..
            }) => format!(", measured k0 = {k} ({})", if *ok { "PASS" } else { "FAIL" }),
            Some(_) => ", no termination index measured".to_string(),
            None => String::new(),
        };
        eprintln!(
            "{}: d0 = {}, eps = {}, gamma = {}, bound = {:.4}, k0 <= {}{check}",
            o.instance, o.d0, o.epsilon, o.gamma, o.bound, o.k0_max
        );
    }
    let config = json!({ "a": args.a, "r": args.r, "epsilon": args.epsilon, "x0": args.x0, "tol": args.tol });
    emit("bound", config, outcomes, started, args.input.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let started = Instant::now();
    let inputs = load_inputs(&args.input)?;
    let outcomes = for_each_input(&inputs, args.input.jobs, verify_one)?;
    for o in &outcomes {
        let failed: Vec<&str> = o.facts.iter().filter(|f| !f.passed).map(|f| f.fact.name.as_str()).collect();
        eprintln!(
            "{}: {} ({} facts checked{})",
            o.instance,
            if o.passed { "PASS" } else { "FAIL" },
            o.facts.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
        );
    }
    let code = if outcomes.iter().all(|o| o.passed) {
        EXIT_OK
    } else {
        EXIT_INPUT
    };
    emit("verify", json!({}), outcomes, started, args.input.out.as_deref())?;
    Ok(code)
}

fn verify_one(ld: &Loaded) -> Result<VerifyOutcome> {
    let inst = &ld.instance;
    let a = resolve_a(None, inst)?;
    let xstar = resolve_solution_set(&inst.game, &inst.set, inst.solution_set.as_ref())
        .with_context(|| format!("solution set of {}", ld.label))?;
    let ev = RegularizedEvaluator::new(&inst.game, a)?;
    let points = xstar.evaluation_points()?;
    let mut max_vi = 0.0f64;
    let mut max_gap = 0.0f64;
    for p in &points {
        max_vi = max_vi.max(vi_residual(&inst.game, &inst.set, p));
        max_gap = max_gap.max(ev.gap(&inst.set, p)?);
    }
    let facts: Vec<FactResult> = match &ld.fixture {
        Some(fx) => fx
            .facts
            .iter()
            .map(|f| FactResult {
                fact: f.clone(),
                passed: validate_fact(fx, f).is_ok(),
            })
            .collect(),
        None => Vec::new(),
    };
    let passed = max_vi <= 1e-6 && max_gap <= 1e-6 && facts.iter().all(|f| f.passed);
    Ok(VerifyOutcome {
        instance: ld.label.clone(),
        delta: inst.game.delta(),
        solution_points: points.iter().map(|p| p.as_slice().to_vec()).collect(),
        max_vi_residual: max_vi,
        max_gap_va: max_gap,
        a,
        facts,
        passed,
        warnings: inst.game.warnings().to_vec(),
    })
}
