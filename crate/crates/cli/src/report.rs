use gnep_core::diagnostics::SharpnessReport;
use gnep_core::fixtures::Fact;
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Envelope written by every command except `generate`.
#[derive(Debug, Serialize)]
pub struct RunReport<T: Serialize> {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub outcomes: Vec<T>,
    pub wall_time_s: f64,
    pub version: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Cap,
}

#[derive(Debug, Serialize)]
pub struct SolveOutcome {
    pub instance: String,
    pub method: &'static str,
    pub status: SolveStatus,
    pub a: f64,
    pub delta: f64,
    pub x0: Vec<f64>,
    pub x: Vec<f64>,
    pub gap_va: f64,
    pub vi_residual: f64,
    pub iterations: usize,
    pub termination_index: Option<usize>,
    pub convexity_prerequisite: Option<bool>,
    pub epsilon: Option<f64>,
    pub xstar_distance: Option<f64>,
    pub xstar_consistent: Option<bool>,
    pub max_sub_residual: Option<f64>,
    pub trace_file: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct DiagnoseOutcome {
    #[serde(flatten)]
    pub report: SharpnessReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct MeasuredIndex {
    pub k0: Option<usize>,
    pub source: String,
    pub within_bound: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct BoundOutcome {
    pub instance: String,
    pub x0: Vec<f64>,
    pub d0: f64,
    pub epsilon: f64,
    #[serde(serialize_with = "finite_or_vacuous")]
    pub gamma: f64,
    pub bound: f64,
    /// Largest integer the termination index may take.
    pub k0_max: u64,
    pub measured: Option<MeasuredIndex>,
}

fn finite_or_vacuous<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("vacuous (cone trivial)")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Serialize)]
pub struct FactResult {
    #[serde(flatten)]
    pub fact: Fact,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct VerifyOutcome {
    pub instance: String,
    pub delta: f64,
    pub solution_points: Vec<Vec<f64>>,
    pub max_vi_residual: f64,
    pub max_gap_va: f64,
    pub a: f64,
    pub facts: Vec<FactResult>,
    pub passed: bool,
    pub warnings: Vec<String>,
}
