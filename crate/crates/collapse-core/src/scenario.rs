//! Scenario-driven experiment sweeps: a declarative TOML config expands into
//! a parameter grid, every point is evaluated (theory and/or simulation) on a
//! worker pool, and the results land in a fixed-schema CSV plus a JSON
//! sidecar carrying the solved fixed points and convention flags.
//!
//! Output is byte-identical for a given (config, seed) across worker counts:
//! every trial derives its own counter-based RNG stream and rows are written
//! in grid order.

use crate::error::{Error, Result};
use crate::fixed_point::{solve_kappa, solve_rp_core, solve_u_omega};
use crate::risk::{
    classical_risk, iterative_mixing, rp_risk, weighted_mixing_risk, IterativeBaseline,
};
use crate::simulate::{
    iterative_mixing_sim, mean_and_se, ridge_fit, rp_fit, sample_dataset, trial_seed,
    weighted_ridge_fit,
};
use crate::spectra::{
    delta_spectrum, power_law_spectrum, DeltaKind, MixtureModel, ScalingRatios, Spectrum,
    SpectrumRole,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Schema version accepted by this build.
pub const CONFIG_VERSION: u64 = 1;

/// A one-dimensional parameter grid: a single value, an explicit list, or a
/// "start:step:stop" range (stop inclusive up to 1e-9 slack).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid(pub Vec<f64>);

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(f64),
            Many(Vec<f64>),
            Range(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::One(v) => Ok(Grid(vec![v])),
            Raw::Many(v) => Ok(Grid(v)),
            Raw::Range(s) => parse_range(&s).map_err(serde::de::Error::custom),
        }
    }
}

fn parse_range(s: &str) -> std::result::Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid range '{s}' must be start:step:stop"));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let (start, step, stop) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || stop < start {
        return Err(format!("grid range '{s}' must advance forward"));
    }
    let mut values = Vec::new();
    let mut k = 0u64;
    loop {
        let v = start + step * k as f64;
        if v > stop + 1e-9 * step.max(1.0) {
            break;
        }
        values.push(v);
        k += 1;
    }
    Ok(Grid(values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Asymptotic formulas only.
    Theory,
    /// Monte Carlo only.
    Simulate,
    /// Both, side by side.
    Compare,
    /// Multi-step bootstrapped mixing (theory recursion + simulator).
    Iterate,
    /// Model-size trade-off sweep: theory over a ψ-grid including the
    /// real-data-only baseline rows (p₂ = 0).
    Pareto,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Theory => "theory",
            Mode::Simulate => "simulate",
            Mode::Compare => "compare",
            Mode::Iterate => "iterate",
            Mode::Pareto => "pareto",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    PowerLaw,
    Identity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub spectrum: SpectrumKind,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    pub d: usize,
    /// Γ = (r²/d) I.
    #[serde(default = "default_r2")]
    pub r2: f64,
    pub delta_kind: DeltaKind,
    pub noise1_sq: f64,
    pub noise2_sq: f64,
}

fn default_exponent() -> f64 {
    1.0
}
fn default_r2() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    /// Total sample count; exactly one of `n`, `phi`.
    pub n: Option<usize>,
    pub phi: Option<f64>,
    /// Synthetic fraction grid; exactly one of `p2`, `n2`.
    pub p2: Option<Grid>,
    /// Synthetic count grid (converted to p₂ = n₂/n).
    pub n2: Option<Grid>,
    /// Projection-width grids; at most one of `psi`, `m`. Absent = classical.
    pub psi: Option<Grid>,
    pub m: Option<Grid>,
    pub c2: Grid,
    pub lambda: f64,
    /// Weighted-ERM mixing weights; empty = pooled fits.
    pub alpha: Option<Grid>,
    /// Iterate mode: number of generations.
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub emit_plot: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u64,
    pub name: String,
    pub mode: Mode,
    pub model: ModelConfig,
    pub regime: RegimeConfig,
    pub run: RunConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::Validation(vec![e.to_string()]))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Collects every offending field instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.version != CONFIG_VERSION {
            problems.push(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            ));
        }
        if self.name.is_empty() {
            problems.push("name: must be non-empty".into());
        }
        if self.model.d == 0 {
            problems.push("model.d: must be >= 1".into());
        }
        if self.model.exponent < 0.0 {
            problems.push("model.exponent: must be >= 0".into());
        }
        if self.model.r2 < 0.0 {
            problems.push("model.r2: must be >= 0".into());
        }
        if self.model.delta_kind == DeltaKind::Explicit {
            problems
                .push("model.delta_kind: explicit spectra are not expressible in configs".into());
        }
        if self.model.noise1_sq < 0.0 || self.model.noise2_sq < 0.0 {
            problems.push("model.noise*_sq: must be >= 0".into());
        }
        match (self.regime.n, self.regime.phi) {
            (Some(_), Some(_)) | (None, None) => {
                problems.push("regime: exactly one of n, phi is required".into())
            }
            (Some(0), None) => problems.push("regime.n: must be >= 1".into()),
            (None, Some(phi)) if !(phi > 0.0) => {
                problems.push("regime.phi: must be > 0".into())
            }
            _ => {}
        }
        match (&self.regime.p2, &self.regime.n2) {
            (Some(_), Some(_)) | (None, None) => {
                problems.push("regime: exactly one of p2, n2 is required".into())
            }
            (Some(g), None) => {
                if g.0.is_empty() {
                    problems.push("regime.p2: grid is empty".into());
                }
                for &v in &g.0 {
                    if !(0.0..=1.0).contains(&v) {
                        problems.push(format!("regime.p2: {v} outside [0, 1]"));
                    }
                }
            }
            (None, Some(g)) => {
                if g.0.is_empty() {
                    problems.push("regime.n2: grid is empty".into());
                }
                for &v in &g.0 {
                    if v < 0.0 || v.fract() != 0.0 {
                        problems.push(format!("regime.n2: {v} is not a count"));
                    }
                }
            }
        }
        if self.regime.psi.is_some() && self.regime.m.is_some() {
            problems.push("regime: give at most one of psi, m".into());
        }
        if let Some(g) = &self.regime.psi {
            for &v in &g.0 {
                if !(v > 0.0) {
                    problems.push(format!("regime.psi: {v} must be > 0"));
                }
            }
        }
        if let Some(g) = &self.regime.m {
            for &v in &g.0 {
                if v < 1.0 || v.fract() != 0.0 {
                    problems.push(format!("regime.m: {v} is not a width"));
                }
            }
        }
        if self.regime.c2.0.is_empty() {
            problems.push("regime.c2: grid is empty".into());
        }
        for &v in &self.regime.c2.0 {
            if v < 0.0 {
                problems.push(format!("regime.c2: {v} must be >= 0"));
            }
        }
        if self.regime.lambda < 0.0 {
            problems.push("regime.lambda: must be >= 0 (0 maps to the ridgeless floor)".into());
        }
        if let Some(g) = &self.regime.alpha {
            for &v in &g.0 {
                if !(0.0..=1.0).contains(&v) {
                    problems.push(format!("regime.alpha: {v} outside [0, 1]"));
                }
            }
            if self.regime.psi.is_some() || self.regime.m.is_some() {
                problems.push("regime.alpha: weighted fits are classical-only".into());
            }
        }
        if self.mode == Mode::Iterate {
            match self.regime.steps {
                None | Some(0) => {
                    problems.push("regime.steps: iterate mode needs steps >= 1".into())
                }
                _ => {}
            }
            if self.regime.psi.is_some() || self.regime.m.is_some() {
                problems.push("regime: iterate mode is classical-only".into());
            }
        }
        if matches!(self.mode, Mode::Simulate | Mode::Compare | Mode::Iterate)
            && self.run.trials == 0
        {
            problems.push("run.trials: must be >= 1 for simulation modes".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    fn n_total(&self) -> usize {
        match (self.regime.n, self.regime.phi) {
            (Some(n), _) => n,
            (None, Some(phi)) => (self.model.d as f64 / phi).round().max(1.0) as usize,
            _ => unreachable!("validated"),
        }
    }

    fn sigma(&self) -> Result<Spectrum> {
        match self.model.spectrum {
            SpectrumKind::PowerLaw => power_law_spectrum(self.model.d, self.model.exponent),
            SpectrumKind::Identity => {
                Spectrum::scaled_identity(self.model.d, 1.0, SpectrumRole::Covariance)
            }
        }
    }

    fn mixture(&self, sigma: &Spectrum, c2: f64) -> Result<MixtureModel> {
        let d = self.model.d;
        let gamma_prior =
            Spectrum::scaled_identity(d, self.model.r2 / d as f64, SpectrumRole::SignalPrior)?;
        let delta = delta_spectrum(sigma, c2, self.model.delta_kind)?;
        MixtureModel::new(
            sigma.clone(),
            gamma_prior,
            delta,
            self.model.noise1_sq,
            self.model.noise2_sq,
        )
    }
}

/// One grid point of a sweep; `step` distinguishes iterate-mode rows.
#[derive(Clone, Debug, Serialize)]
pub struct GridPoint {
    pub index: usize,
    pub m: Option<usize>,
    pub p2: f64,
    pub c2: f64,
    pub alpha: Option<f64>,
}

/// One output row in the pinned CSV schema.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub scenario: String,
    pub mode: &'static str,
    pub d: usize,
    pub n: usize,
    pub m: Option<usize>,
    pub phi: f64,
    pub gamma: Option<f64>,
    pub psi: Option<f64>,
    pub p2: f64,
    pub c2: f64,
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub step: Option<usize>,
    pub bias: Option<f64>,
    pub variance: Option<f64>,
    pub zeta: Option<f64>,
    pub e_theory: Option<f64>,
    pub e_emp_mean: Option<f64>,
    pub e_emp_se: Option<f64>,
    pub trials: usize,
    pub near_threshold: bool,
    pub seed: u64,
    /// Sidecar-only: the solved fixed-point scalars.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_point: Option<serde_json::Value>,
    /// Sidecar-only: per-row solver/threshold failures.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const CSV_HEADER: &str = "scenario,mode,d,n,m,phi,gamma,psi,p2,c2,lambda,alpha,step,B,V,zeta,E_theory,E_emp_mean,E_emp_se,trials,near_threshold,seed";

fn fmt_f64(v: f64) -> String {
    // 17 significant digits, '.' decimal separator.
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.mode,
            self.d,
            self.n,
            self.m.map(|m| m.to_string()).unwrap_or_default(),
            fmt_f64(self.phi),
            fmt_opt(self.gamma),
            fmt_opt(self.psi),
            fmt_f64(self.p2),
            fmt_f64(self.c2),
            fmt_f64(self.lambda),
            fmt_opt(self.alpha),
            self.step.map(|t| t.to_string()).unwrap_or_default(),
            fmt_opt(self.bias),
            fmt_opt(self.variance),
            fmt_opt(self.zeta),
            fmt_opt(self.e_theory),
            fmt_opt(self.e_emp_mean),
            fmt_opt(self.e_emp_se),
            self.trials,
            self.near_threshold,
            self.seed,
        );
        s
    }
}

/// Everything a finished sweep produced.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub csv: String,
    pub sidecar: serde_json::Value,
}

/// Expands the scenario into its grid points, in row order.
fn expand_grid(scenario: &Scenario) -> Vec<GridPoint> {
    let n = scenario.n_total() as f64;
    let ms: Vec<Option<usize>> = if let Some(g) = &scenario.regime.m {
        g.0.iter().map(|&v| Some(v.round() as usize)).collect()
    } else if let Some(g) = &scenario.regime.psi {
        g.0.iter()
            .map(|&psi| Some((psi * n).round().max(1.0) as usize))
            .collect()
    } else {
        vec![None]
    };
    let mut p2s: Vec<f64> = if let Some(g) = &scenario.regime.p2 {
        g.0.clone()
    } else {
        scenario
            .regime
            .n2
            .as_ref()
            .unwrap()
            .0
            .iter()
            .map(|&n2| n2 / n)
            .collect()
    };
    if scenario.mode == Mode::Pareto && !p2s.contains(&0.0) {
        // The frontier is drawn against the real-data-only baseline.
        p2s.insert(0, 0.0);
    }
    let alphas: Vec<Option<f64>> = match &scenario.regime.alpha {
        Some(g) => g.0.iter().map(|&a| Some(a)).collect(),
        None => vec![None],
    };
    let mut points = Vec::new();
    let mut index = 0;
    for &m in &ms {
        for &p2 in &p2s {
            for &c2 in &scenario.regime.c2.0 {
                for &alpha in &alphas {
                    points.push(GridPoint {
                        index,
                        m,
                        p2,
                        c2,
                        alpha,
                    });
                    index += 1;
                }
            }
        }
    }
    points
}

fn ratios_for(scenario: &Scenario, point: &GridPoint) -> Result<ScalingRatios> {
    let d = scenario.model.d;
    let n = scenario.n_total();
    let phi = d as f64 / n as f64;
    match point.m {
        Some(m) => ScalingRatios::projections(phi, point.p2, m as f64 / d as f64),
        None => ScalingRatios::classical(phi, point.p2),
    }
}

type TheoryOutcome = (
    Option<f64>,
    Option<f64>,
    Option<f64>,
    f64,
    bool,
    Option<serde_json::Value>,
);

fn theory_for(
    scenario: &Scenario,
    model: &MixtureModel,
    ratios: &ScalingRatios,
    point: &GridPoint,
) -> Result<TheoryOutcome> {
    let n = scenario.n_total() as f64;
    let lambda = scenario.regime.lambda;
    if let Some(alpha) = point.alpha {
        // Leading-order weighted-mixing closed form; no B/V/zeta split.
        let e = weighted_mixing_risk(
            alpha,
            ratios.phi,
            point.p2,
            scenario.model.noise1_sq,
            scenario.model.noise2_sq,
            point.c2,
        )?;
        return Ok((None, None, None, e, false, None));
    }
    match point.m {
        None => {
            let r = classical_risk(model, ratios, lambda, n)?;
            let (eff, _) = crate::risk::effective_lambda(lambda);
            let fp = solve_kappa(&model.sigma, n, eff)?;
            Ok((
                Some(r.bias),
                Some(r.variance),
                Some(r.collapse),
                r.total,
                r.flags.near_threshold,
                Some(serde_json::json!({
                    "kappa": fp.kappa, "u": fp.u, "df1": fp.df1, "df2": fp.df2,
                })),
            ))
        }
        Some(_) => {
            let r = rp_risk(model, ratios, lambda, n)?;
            let (eff, _) = crate::risk::effective_lambda(lambda);
            let core = solve_rp_core(&model.sigma, ratios, eff)?;
            let fp = solve_u_omega(&model.sigma, ratios, eff, &core)?;
            Ok((
                Some(r.bias),
                Some(r.variance),
                Some(r.collapse),
                r.total,
                r.flags.near_threshold,
                Some(serde_json::json!({
                    "e": fp.e, "tau": fp.tau, "theta": fp.theta,
                    "u": fp.u, "omega": fp.omega, "omega_prime": fp.omega_prime,
                })),
            ))
        }
    }
}

fn simulate_point(
    scenario: &Scenario,
    model: &MixtureModel,
    point: &GridPoint,
    trial: u64,
) -> Result<f64> {
    let n = scenario.n_total();
    let n2 = (point.p2 * n as f64).round() as usize;
    let n1 = n - n2;
    let (lambda, _) = crate::risk::effective_lambda(scenario.regime.lambda);
    let point_tag = format!("{}/{}", scenario.name, point.index);
    let seed = trial_seed(scenario.run.seed, &point_tag, trial);
    let dataset = sample_dataset(model, n1, n2, seed)?;
    let run = match (point.m, point.alpha) {
        (Some(m), None) => rp_fit(model, &dataset, m, lambda, seed)?,
        (None, Some(alpha)) => weighted_ridge_fit(model, &dataset, alpha, lambda)?,
        (None, None) => ridge_fit(model, &dataset, lambda)?,
        (Some(_), Some(_)) => {
            return Err(Error::Domain("weighted fits are classical-only".into()))
        }
    };
    Ok(run.test_error)
}

/// Runs a sweep on `threads` workers (0 = all cores).
pub fn run_scenario(scenario: &Scenario, threads: usize) -> Result<SweepResult> {
    scenario.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| match scenario.mode {
        Mode::Iterate => run_iterate(scenario),
        _ => run_grid(scenario),
    })
}

fn run_grid(scenario: &Scenario) -> Result<SweepResult> {
    let sigma = scenario.sigma()?;
    let points = expand_grid(scenario);
    let want_theory = matches!(scenario.mode, Mode::Theory | Mode::Compare | Mode::Pareto);
    let want_sim = matches!(scenario.mode, Mode::Simulate | Mode::Compare);
    let trials = if want_sim { scenario.run.trials } else { 0 };

    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|point| -> SweepRow {
            let mut row = blank_row(scenario, point);
            let model = match scenario.mixture(&sigma, point.c2) {
                Ok(m) => m,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            let ratios = match ratios_for(scenario, point) {
                Ok(r) => r,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            if want_theory {
                match theory_for(scenario, &model, &ratios, point) {
                    Ok((b, v, z, e, near, fp)) => {
                        row.bias = b;
                        row.variance = v;
                        row.zeta = z;
                        row.e_theory = Some(e);
                        row.near_threshold = near;
                        row.fixed_point = fp;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
            }
            if want_sim {
                let results: Vec<Result<f64>> = (0..trials as u64)
                    .into_par_iter()
                    .map(|t| simulate_point(scenario, &model, point, t))
                    .collect();
                let mut errs = Vec::with_capacity(results.len());
                for r in results {
                    match r {
                        Ok(v) => errs.push(v),
                        Err(e) => {
                            let msg = e.to_string();
                            row.error = Some(match row.error.take() {
                                Some(prev) => format!("{prev}; {msg}"),
                                None => msg,
                            });
                        }
                    }
                }
                if !errs.is_empty() {
                    let (mean, se) = mean_and_se(&errs);
                    row.e_emp_mean = Some(mean);
                    row.e_emp_se = Some(se);
                }
            }
            row
        })
        .collect();

    assemble_result(scenario, rows)
}

fn run_iterate(scenario: &Scenario) -> Result<SweepResult> {
    let sigma = scenario.sigma()?;
    let steps = scenario.regime.steps.unwrap_or(1);
    let points = expand_grid(scenario);
    let phi = scenario.model.d as f64 / scenario.n_total() as f64;

    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|point| -> Vec<SweepRow> {
            let mut base = blank_row(scenario, point);
            let model = match scenario.mixture(&sigma, point.c2) {
                Ok(m) => m,
                Err(e) => {
                    base.error = Some(e.to_string());
                    return vec![base];
                }
            };
            let sigma_sq = (1.0 - point.p2) * scenario.model.noise1_sq
                + point.p2 * scenario.model.noise2_sq;
            let trace = iterative_mixing(
                point.c2,
                point.p2,
                sigma_sq,
                phi,
                steps,
                IterativeBaseline::Exact,
            );
            // Per-trial simulated chains, aggregated per step.
            let n = scenario.n_total();
            let n2 = (point.p2 * n as f64).round() as usize;
            let n1 = n - n2;
            let (lambda, _) = crate::risk::effective_lambda(scenario.regime.lambda);
            let point_tag = format!("{}/{}", scenario.name, point.index);
            let chains: Vec<Result<Vec<f64>>> = (0..scenario.run.trials as u64)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(scenario.run.seed, &point_tag, t);
                    iterative_mixing_sim(&model, n1, n2, lambda, steps, seed).map(|tr| tr.risk)
                })
                .collect();
            (1..=steps)
                .map(|step| {
                    let mut row = base.clone();
                    row.step = Some(step);
                    match &trace {
                        Ok(tr) => row.e_theory = Some(tr.quality_sq[step]),
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    let per_step: Vec<f64> = chains
                        .iter()
                        .filter_map(|c| c.as_ref().ok().map(|risk| risk[step - 1]))
                        .collect();
                    if !per_step.is_empty() {
                        let (mean, se) = mean_and_se(&per_step);
                        row.e_emp_mean = Some(mean);
                        row.e_emp_se = Some(se);
                    }
                    if let Some(err) = chains.iter().find_map(|c| c.as_ref().err()) {
                        row.error = Some(err.to_string());
                    }
                    row
                })
                .collect()
        })
        .collect();

    assemble_result(scenario, rows.into_iter().flatten().collect())
}

fn blank_row(scenario: &Scenario, point: &GridPoint) -> SweepRow {
    let d = scenario.model.d;
    let n = scenario.n_total();
    SweepRow {
        scenario: scenario.name.clone(),
        mode: scenario.mode.as_str(),
        d,
        n,
        m: point.m,
        phi: d as f64 / n as f64,
        gamma: point.m.map(|m| m as f64 / d as f64),
        psi: point.m.map(|m| m as f64 / n as f64),
        p2: point.p2,
        c2: point.c2,
        lambda: scenario.regime.lambda,
        alpha: point.alpha,
        step: None,
        bias: None,
        variance: None,
        zeta: None,
        e_theory: None,
        e_emp_mean: None,
        e_emp_se: None,
        trials: if matches!(scenario.mode, Mode::Theory | Mode::Pareto) {
            0
        } else {
            scenario.run.trials
        },
        near_threshold: false,
        seed: scenario.run.seed,
        fixed_point: None,
        error: None,
    }
}

/// Convention flags recorded with every result file; these are the resolved
/// ambiguities the numbers depend on.
pub fn convention_flags() -> serde_json::Value {
    serde_json::json!({
        "quality_c2": "tr(Sigma Delta)",
        "lambda_floor": crate::fixed_point::LAMBDA_FLOOR,
        "near_threshold_window": {
            "psi": crate::risk::NEAR_THRESHOLD_PSI,
            "lambda": crate::risk::NEAR_THRESHOLD_LAMBDA,
        },
        "rp_variance_normalization": "sigma^2/(e*n) * (tr Sigma^2 T^-2 + (omega' - theta u) tr Sigma T^-2)",
        "zeta_omega_weight": "p2^2 omega' (arbitrated by Monte Carlo)",
        "omega_prime_numerator": "theta^2 I_{1,2}(theta) (linear-system elimination)",
        "projection_shape": "S in R^{d x m}, Phi(x) = S^T x, entries N(0, 1/d)",
        "weighted_lambda": "unchanged at alpha in {0, 1}",
        "iterative_baseline": "sigma^2 phi / (1 - phi)",
        "alpha_star_binding": "grid argmin, step 1e-3",
        "csv_significant_digits": 17,
    })
}

fn assemble_result(scenario: &Scenario, rows: Vec<SweepRow>) -> Result<SweepResult> {
    let mut csv = String::with_capacity(rows.len() * 200 + 256);
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv_line());
        csv.push('\n');
    }
    let sidecar = serde_json::json!({
        "tool": "collapse-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "conventions": convention_flags(),
        "scenario": scenario,
        "rows": rows,
    });
    Ok(SweepResult {
        rows,
        csv,
        sidecar,
    })
}

impl SweepResult {
    /// Writes `<name>.csv`, `<name>.json` and optionally `<name>_plot.py`
    /// under `out_dir`; returns the CSV path.
    pub fn write(&self, scenario: &Scenario, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let base = out_dir.join(&scenario.name);
        let csv_path = base.with_extension("csv");
        std::fs::write(&csv_path, self.csv.as_bytes())?;
        let json_path = base.with_extension("json");
        let pretty =
            serde_json::to_string_pretty(&self.sidecar).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&json_path, pretty.as_bytes())?;
        if scenario.run.emit_plot {
            let plot_path = out_dir.join(format!("{}_plot.py", scenario.name));
            std::fs::write(&plot_path, plot_script(&scenario.name))?;
        }
        Ok(csv_path)
    }
}

/// A matplotlib script over the CSV; rendering is decoupled from the run.
fn plot_script(name: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
"""Renders {name}.csv: test error against the sweep axis, one line per
(p2, c2) group, theory dashed, empirical points with error bars."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt


def column(rows, key):
    return [float(r[key]) if r[key] else None for r in rows]


with open("{name}.csv", newline="") as fh:
    rows = list(csv.DictReader(fh))
if not rows:
    sys.exit("no rows")

axis = "phi"
for candidate in ("psi", "step", "p2", "c2", "alpha", "phi"):
    values = {{r[candidate] for r in rows if r[candidate]}}
    if len(values) > 1:
        axis = candidate
        break

groups = defaultdict(list)
for r in rows:
    groups[(r["p2"], r["c2"])].append(r)

fig, ax = plt.subplots(figsize=(7, 4.5))
for (p2, c2), g in sorted(groups.items()):
    g = sorted(g, key=lambda r: float(r[axis]))
    xs = [float(r[axis]) for r in g]
    label = f"p2={{float(p2):g}} c2={{float(c2):g}}"
    th = column(g, "E_theory")
    if any(v is not None for v in th):
        ax.plot(xs, th, "--", label=label)
    em = column(g, "E_emp_mean")
    if any(v is not None for v in em):
        se = [v if v is not None else 0.0 for v in column(g, "E_emp_se")]
        ax.errorbar(xs, em, yerr=se, fmt="o", ms=3, capsize=2)
ax.set_xlabel(axis)
ax.set_ylabel("test error")
ax.set_yscale("log")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("{name}.png", dpi=150)
print("wrote {name}.png")
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
version = 1
name = "unit"
mode = "theory"

[model]
spectrum = "power_law"
d = 60
delta_kind = "inverse_covariance"
noise1_sq = 0.01
noise2_sq = 0.01

[regime]
n = 50
p2 = [0.0, 0.4]
psi = "0.5:0.5:1.5"
c2 = [0.0, 1.0]
lambda = 1e-8

[run]
trials = 2
seed = 7
"#;

    #[test]
    fn parse_expand_and_run_theory() {
        let scenario = Scenario::from_toml(BASE).unwrap();
        let points = expand_grid(&scenario);
        // 3 psi x 2 p2 x 2 c2.
        assert_eq!(points.len(), 12);
        let result = run_scenario(&scenario, 1).unwrap();
        assert_eq!(result.rows.len(), 12);
        assert!(result.csv.starts_with(CSV_HEADER));
        // p2 = 0 or c2 = 0 rows have zero collapse.
        for row in &result.rows {
            if row.p2 == 0.0 || row.c2 == 0.0 {
                assert_eq!(row.zeta, Some(0.0), "row {row:?}");
            }
            assert!(row.error.is_none(), "{:?}", row.error);
        }
        // psi = 1 rows are tagged.
        assert!(result
            .rows
            .iter()
            .any(|r| r.near_threshold && (r.psi.unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn grid_range_parsing() {
        assert_eq!(parse_range("0.5:0.5:1.5").unwrap().0, vec![0.5, 1.0, 1.5]);
        assert_eq!(parse_range("1:1:1").unwrap().0, vec![1.0]);
        assert!(parse_range("2:1").is_err());
        assert!(parse_range("1:0:4").is_err());
    }

    #[test]
    fn validation_collects_all_fields() {
        let bad = BASE
            .replace("version = 1", "version = 3")
            .replace("p2 = [0.0, 0.4]", "p2 = [1.4]")
            .replace("lambda = 1e-8", "lambda = -2.0");
        let err = Scenario::from_toml(&bad).unwrap_err();
        match err {
            Error::Validation(fields) => {
                assert!(fields.len() >= 3, "{fields:?}");
                assert!(fields.iter().any(|f| f.contains("version")));
                assert!(fields.iter().any(|f| f.contains("p2")));
                assert!(fields.iter().any(|f| f.contains("lambda")));
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn compare_mode_is_deterministic_across_worker_counts() {
        let text = BASE
            .replace("mode = \"theory\"", "mode = \"compare\"")
            .replace("psi = \"0.5:0.5:1.5\"", "psi = [0.5]");
        let scenario = Scenario::from_toml(&text).unwrap();
        let one = run_scenario(&scenario, 1).unwrap();
        let eight = run_scenario(&scenario, 8).unwrap();
        assert_eq!(one.csv, eight.csv);
        let again = run_scenario(&scenario, 8).unwrap();
        assert_eq!(one.csv, again.csv);
        // Empirical columns are filled.
        assert!(one.rows.iter().all(|r| r.e_emp_mean.is_some()));
    }

    #[test]
    fn pareto_mode_adds_baseline_rows() {
        let text = BASE
            .replace("mode = \"theory\"", "mode = \"pareto\"")
            .replace("p2 = [0.0, 0.4]", "n2 = [20]");
        let scenario = Scenario::from_toml(&text).unwrap();
        let result = run_scenario(&scenario, 1).unwrap();
        assert!(result.rows.iter().any(|r| r.p2 == 0.0));
        assert!(result.rows.iter().any(|r| (r.p2 - 0.4).abs() < 1e-12));
    }

    #[test]
    fn iterate_mode_rows_per_step() {
        let text = BASE
            .replace("mode = \"theory\"", "mode = \"iterate\"")
            .replace("n = 50", "n = 200")
            .replace("psi = \"0.5:0.5:1.5\"", "steps = 3")
            .replace("p2 = [0.0, 0.4]", "p2 = [0.5]")
            .replace("c2 = [0.0, 1.0]", "c2 = [1.0]");
        let scenario = Scenario::from_toml(&text).unwrap();
        let result = run_scenario(&scenario, 2).unwrap();
        assert_eq!(result.rows.len(), 3);
        for (i, row) in result.rows.iter().enumerate() {
            assert_eq!(row.step, Some(i + 1));
            assert!(row.e_theory.is_some());
            assert!(row.e_emp_mean.is_some());
        }
    }

    #[test]
    fn csv_roundtrip_significant_digits() {
        assert_eq!(fmt_f64(1.5), "1.5000000000000000e0");
        let v = 0.123_456_789_012_345_68_f64;
        let parsed: f64 = fmt_f64(v).parse().unwrap();
        assert_eq!(parsed, v);
    }
}
