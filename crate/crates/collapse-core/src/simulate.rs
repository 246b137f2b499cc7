//! Finite-size Monte Carlo ground truth: Gaussian data generation, ridge /
//! random-projection / weighted fits with exact conditional test error,
//! bootstrapped iterative mixing, and the r-functional estimators that
//! arbitrate the deterministic equivalents.
//!
//! Reproducibility contract: every random draw comes from a counter-based
//! stream keyed by (seed, stream role), and trial seeds are derived with
//! SplitMix64 from (base seed, scenario id, trial index). Results are
//! bit-identical for a given seed regardless of worker count or execution
//! order.

use crate::detequiv::{FunctionalKind, FunctionalRequest, ModelClass, SourceIndex};
use crate::error::{Error, Result};
use crate::spectra::{MixtureModel, Spectrum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent substreams of one trial.
#[derive(Clone, Copy, Debug)]
pub enum StreamRole {
    /// Feature matrices X₁, X₂.
    Data,
    /// Label noise.
    Noise,
    /// The projection matrix S.
    Projection,
    /// The ground-truth weights w₁* and the shift δ.
    Prior,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Data => 0x646174,
            StreamRole::Noise => 0x6e6f69,
            StreamRole::Projection => 0x70726f,
            StreamRole::Prior => 0x777374,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives the seed of one trial from the sweep-level base seed.
pub fn trial_seed(base: u64, scenario: &str, trial: u64) -> u64 {
    let mut h = base;
    for b in scenario.bytes() {
        h = splitmix(h ^ b as u64);
    }
    splitmix(h ^ trial.wrapping_mul(0x2545f4914f6cdd1d))
}

/// One substream of a trial.
pub fn stream(seed: u64, role: StreamRole) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ role.tag()))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Rows ~ N(0, Σ) for a diagonal Σ.
fn covariance_matrix(rng: &mut ChaCha8Rng, rows: usize, sigma: &Spectrum) -> DMatrix<f64> {
    let sd: Vec<f64> = sigma.eigenvalues().iter().map(|&v| v.sqrt()).collect();
    DMatrix::from_fn(rows, sd.len(), |_, j| {
        sd[j] * rng.sample::<f64, _>(StandardNormal)
    })
}

fn prior_vector(rng: &mut ChaCha8Rng, prior: &Spectrum) -> DVector<f64> {
    DVector::from_iterator(
        prior.dim(),
        prior
            .eigenvalues()
            .iter()
            .map(|&v| v.sqrt() * rng.sample::<f64, _>(StandardNormal)),
    )
}

/// One draw of the two-source training set.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x_real: DMatrix<f64>,
    pub y_real: DVector<f64>,
    pub x_syn: DMatrix<f64>,
    pub y_syn: DVector<f64>,
    pub w1_star: DVector<f64>,
    pub w2_star: DVector<f64>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.w1_star.len()
    }

    pub fn n_total(&self) -> usize {
        self.x_real.nrows() + self.x_syn.nrows()
    }

    /// Stacks the two sources in (real, synthetic) order.
    pub fn pooled(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_total();
        let d = self.dim();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        x.view_mut((0, 0), (self.x_real.nrows(), d))
            .copy_from(&self.x_real);
        x.view_mut((self.x_real.nrows(), 0), (self.x_syn.nrows(), d))
            .copy_from(&self.x_syn);
        y.rows_mut(0, self.y_real.len()).copy_from(&self.y_real);
        y.rows_mut(self.y_real.len(), self.y_syn.len())
            .copy_from(&self.y_syn);
        (x, y)
    }
}

/// Draws n₁ real and n₂ synthetic samples; identical (model, sizes, seed)
/// give a bit-identical dataset.
pub fn sample_dataset(model: &MixtureModel, n1: usize, n2: usize, seed: u64) -> Result<Dataset> {
    if n1 + n2 == 0 {
        return Err(Error::Domain("need n1 + n2 >= 1 samples".into()));
    }
    let mut prior_rng = stream(seed, StreamRole::Prior);
    let w1_star = prior_vector(&mut prior_rng, &model.gamma_prior);
    let delta = prior_vector(&mut prior_rng, &model.delta);
    let w2_star = &w1_star + delta;

    let mut data_rng = stream(seed, StreamRole::Data);
    let x_real = covariance_matrix(&mut data_rng, n1, &model.sigma);
    let x_syn = covariance_matrix(&mut data_rng, n2, &model.sigma);

    let mut noise_rng = stream(seed, StreamRole::Noise);
    let s1 = model.noise1_sq.sqrt();
    let s2 = model.noise2_sq.sqrt();
    let y_real = &x_real * &w1_star
        + DVector::from_fn(n1, |_, _| s1 * noise_rng.sample::<f64, _>(StandardNormal));
    let y_syn = &x_syn * &w2_star
        + DVector::from_fn(n2, |_, _| s2 * noise_rng.sample::<f64, _>(StandardNormal));

    Ok(Dataset {
        x_real,
        y_real,
        x_syn,
        y_syn,
        w1_star,
        w2_star,
    })
}

/// A fitted predictor and its exact conditional test error
/// ‖ŵ − w₁*‖²_Σ = Σ_j λ_j (ŵ_j − w₁*_j)² (no test-sampling noise).
#[derive(Clone, Debug)]
pub struct SimRun {
    /// d-dimensional predictor weights (S·v̂ for the projections model).
    pub fitted: DVector<f64>,
    pub test_error: f64,
    pub seed: u64,
    pub trial_index: u64,
}

pub fn exact_test_error(sigma: &Spectrum, fitted: &DVector<f64>, w1_star: &DVector<f64>) -> f64 {
    sigma
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(j, &lam)| {
            let diff = fitted[j] - w1_star[j];
            lam * diff * diff
        })
        .sum()
}

/// Which normal-equation route the ridge solvers take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverPath {
    /// d×d (or m×m) Gram system when the parameter side is smaller.
    Primal,
    /// n×n kernel system when the sample side is smaller.
    Dual,
    /// Pick the smaller side.
    Auto,
}

fn spd_solve(a: DMatrix<f64>, rhs: DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..a.nrows() {
        lo = lo.min(a[(i, i)]);
        hi = hi.max(a[(i, i)]);
    }
    match nalgebra::Cholesky::new(a) {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => Err(Error::Numeric {
            what,
            condition: hi / lo.max(f64::MIN_POSITIVE),
        }),
    }
}

/// Ridge on the pooled data: solves (XᵀX/n + λI)w = XᵀY/n, switching to the
/// n×n dual system when n < d.
pub fn ridge_fit(model: &MixtureModel, dataset: &Dataset, lambda: f64) -> Result<SimRun> {
    ridge_fit_with(model, dataset, lambda, SolverPath::Auto)
}

pub fn ridge_fit_with(
    model: &MixtureModel,
    dataset: &Dataset,
    lambda: f64,
    path: SolverPath,
) -> Result<SimRun> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    let (x, y) = dataset.pooled();
    let fitted = linear_ridge(&x, &y, lambda, path)?;
    Ok(SimRun {
        test_error: exact_test_error(&model.sigma, &fitted, &dataset.w1_star),
        fitted,
        seed: 0,
        trial_index: 0,
    })
}

/// Ridge in weight space for an explicit design matrix.
fn linear_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    path: SolverPath,
) -> Result<DVector<f64>> {
    let (n, d) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let primal = match path {
        SolverPath::Primal => true,
        SolverPath::Dual => false,
        SolverPath::Auto => d <= n,
    };
    if primal {
        let mut a = x.transpose() * x / nf;
        for i in 0..d {
            a[(i, i)] += lambda;
        }
        spd_solve(a, x.transpose() * y / nf, "primal ridge factorization")
    } else {
        let mut g = x * x.transpose() / nf;
        for i in 0..n {
            g[(i, i)] += lambda;
        }
        let alpha = spd_solve(g, y.clone(), "dual ridge factorization")?;
        Ok(x.transpose() * alpha / nf)
    }
}

/// Random projections fit: features Φ(x) = Sᵀx with S ∈ ℝ^{d×m}, entries
/// N(0, 1/d); the read-out v̂ is ridge-fitted and reported as the effective
/// predictor S·v̂ so the exact-error formula applies unchanged.
pub fn rp_fit(
    model: &MixtureModel,
    dataset: &Dataset,
    m: usize,
    lambda: f64,
    seed: u64,
) -> Result<SimRun> {
    if m == 0 {
        return Err(Error::Domain("projection width m must be >= 1".into()));
    }
    let d = dataset.dim();
    let mut rng = stream(seed, StreamRole::Projection);
    let s = gaussian_matrix(&mut rng, d, m, (1.0 / d as f64).sqrt());
    rp_fit_with_projection(model, dataset, &s, lambda)
}

/// Test hook: the same fit with an explicit projection matrix (m = d with
/// S = I reduces to `ridge_fit`).
pub fn rp_fit_with_projection(
    model: &MixtureModel,
    dataset: &Dataset,
    s: &DMatrix<f64>,
    lambda: f64,
) -> Result<SimRun> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    let (x, y) = dataset.pooled();
    let features = &x * s;
    let v = linear_ridge(&features, &y, lambda, SolverPath::Auto)?;
    let fitted = s * v;
    Ok(SimRun {
        test_error: exact_test_error(&model.sigma, &fitted, &dataset.w1_star),
        fitted,
        seed: 0,
        trial_index: 0,
    })
}

/// Weighted ERM fit: minimizes
/// (1−α)/n₁ ‖X₁w − Y₁‖² + α/n₂ ‖X₂w − Y₂‖² + λ‖w‖².
/// α = 0 (resp. 1) drops the synthetic (resp. real) source with λ unchanged.
pub fn weighted_ridge_fit(
    model: &MixtureModel,
    dataset: &Dataset,
    alpha: f64,
    lambda: f64,
) -> Result<SimRun> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha = {alpha} must be in [0, 1]")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    let d = dataset.dim();
    let (n1, n2) = (dataset.x_real.nrows(), dataset.x_syn.nrows());
    if (alpha < 1.0 && n1 == 0) || (alpha > 0.0 && n2 == 0) {
        return Err(Error::Domain(
            "a source with nonzero weight has no samples".into(),
        ));
    }
    let mut a = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    if alpha < 1.0 {
        let w = (1.0 - alpha) / n1 as f64;
        a += w * (dataset.x_real.transpose() * &dataset.x_real);
        rhs += w * (dataset.x_real.transpose() * &dataset.y_real);
    }
    if alpha > 0.0 {
        let w = alpha / n2 as f64;
        a += w * (dataset.x_syn.transpose() * &dataset.x_syn);
        rhs += w * (dataset.x_syn.transpose() * &dataset.y_syn);
    }
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let fitted = spd_solve(a, rhs, "weighted ridge factorization")?;
    Ok(SimRun {
        test_error: exact_test_error(&model.sigma, &fitted, &dataset.w1_star),
        fitted,
        seed: 0,
        trial_index: 0,
    })
}

/// Evaluates the weighted fit over a whole α-grid, factoring the per-source
/// Gram matrices out of the loop (one pass over the data, one SPD solve per
/// α).
pub fn weighted_ridge_sweep(
    model: &MixtureModel,
    dataset: &Dataset,
    alphas: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    let d = dataset.dim();
    let (n1, n2) = (dataset.x_real.nrows(), dataset.x_syn.nrows());
    let g1 = dataset.x_real.transpose() * &dataset.x_real / n1.max(1) as f64;
    let b1 = dataset.x_real.transpose() * &dataset.y_real / n1.max(1) as f64;
    let g2 = dataset.x_syn.transpose() * &dataset.x_syn / n2.max(1) as f64;
    let b2 = dataset.x_syn.transpose() * &dataset.y_syn / n2.max(1) as f64;
    alphas
        .iter()
        .map(|&alpha| {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Domain(format!("alpha = {alpha} must be in [0, 1]")));
            }
            if (alpha < 1.0 && n1 == 0) || (alpha > 0.0 && n2 == 0) {
                return Err(Error::Domain(
                    "a source with nonzero weight has no samples".into(),
                ));
            }
            let mut a = (1.0 - alpha) * &g1 + alpha * &g2;
            for i in 0..d {
                a[(i, i)] += lambda;
            }
            let rhs = (1.0 - alpha) * &b1 + alpha * &b2;
            let fitted = spd_solve(a, rhs, "weighted ridge factorization")?;
            Ok(exact_test_error(&model.sigma, &fitted, &dataset.w1_star))
        })
        .collect()
}

/// Empirical record of one bootstrapped mixing chain.
#[derive(Clone, Debug)]
pub struct IterativeSimTrace {
    /// Exact conditional test error after each refit, length `steps`.
    pub risk: Vec<f64>,
}

/// Runs the multi-step mixing protocol: at every step, n₂ synthetic samples
/// are labelled by the previous fit (plus σ₂ noise) on fresh N(0, Σ) inputs
/// and mixed with n₁ fresh real samples; the pooled ridge is refit.
pub fn iterative_mixing_sim(
    model: &MixtureModel,
    n1: usize,
    n2: usize,
    lambda: f64,
    steps: usize,
    seed: u64,
) -> Result<IterativeSimTrace> {
    if steps == 0 {
        return Err(Error::Domain("need steps >= 1".into()));
    }
    let mut risk = Vec::with_capacity(steps);
    // Generation 0 synthetic labeller is w2* itself (quality c0^2).
    let base = sample_dataset(model, n1, n2, seed)?;
    let w1_star = base.w1_star.clone();
    let mut generator = base.w2_star.clone();
    let s1 = model.noise1_sq.sqrt();
    let s2 = model.noise2_sq.sqrt();

    for t in 0..steps {
        let step_seed = splitmix(seed ^ (t as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15));
        let mut data_rng = stream(step_seed, StreamRole::Data);
        let mut noise_rng = stream(step_seed, StreamRole::Noise);

        let x_real = covariance_matrix(&mut data_rng, n1, &model.sigma);
        let y_real = &x_real * &w1_star
            + DVector::from_fn(n1, |_, _| s1 * noise_rng.sample::<f64, _>(StandardNormal));
        let x_syn = covariance_matrix(&mut data_rng, n2, &model.sigma);
        let y_syn = &x_syn * &generator
            + DVector::from_fn(n2, |_, _| s2 * noise_rng.sample::<f64, _>(StandardNormal));

        let dataset = Dataset {
            x_real,
            y_real,
            x_syn,
            y_syn,
            w1_star: w1_star.clone(),
            w2_star: generator.clone(),
        };
        let run = ridge_fit(model, &dataset, lambda)?;
        risk.push(run.test_error);
        generator = run.fitted;
    }
    Ok(IterativeSimTrace { risk })
}

/// Monte Carlo estimate of a resolvent trace functional: samples the designs
/// (and S for the projections class), evaluates the defining trace exactly
/// per trial and returns (mean, standard error).
#[allow(clippy::too_many_arguments)]
pub fn mc_functional(
    req: &FunctionalRequest,
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    n1: usize,
    n2: usize,
    m: Option<usize>,
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials < 2 {
        return Err(Error::Domain("need trials >= 2 for a standard error".into()));
    }
    if req.model_class == ModelClass::Projections && m.is_none() {
        return Err(Error::Domain("projections functionals need m".into()));
    }
    let d = sigma1.dim();
    let n = (n1 + n2) as f64;
    let a = DVector::from_column_slice(req.a.eigenvalues());
    let b = req
        .b
        .as_ref()
        .map(|s| DVector::from_column_slice(s.eigenvalues()));
    if req.kind != FunctionalKind::R1 && b.is_none() {
        return Err(Error::Domain(format!("kind {:?} needs a B matrix", req.kind)));
    }

    let mut values = Vec::with_capacity(trials);
    for trial in 0..trials {
        let tseed = splitmix(seed ^ (trial as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let mut data_rng = stream(tseed, StreamRole::Data);
        let x1 = covariance_matrix(&mut data_rng, n1, sigma1);
        let x2 = covariance_matrix(&mut data_rng, n2, sigma2);
        let m1 = x1.transpose() * &x1 / n;
        let m2 = x2.transpose() * &x2 / n;

        // P is the effective resolvent: (M + λI)⁻¹ classically, SRSᵀ with
        // R = (SᵀMS + λI_m)⁻¹ under projections.
        let p = match req.model_class {
            ModelClass::Classical => {
                let mut mm = &m1 + &m2;
                for i in 0..d {
                    mm[(i, i)] += lambda;
                }
                match nalgebra::Cholesky::new(mm) {
                    Some(c) => c.inverse(),
                    None => {
                        return Err(Error::Numeric {
                            what: "resolvent factorization",
                            condition: f64::NAN,
                        })
                    }
                }
            }
            ModelClass::Projections => {
                let mw = m.unwrap();
                let mut proj_rng = stream(tseed, StreamRole::Projection);
                let s = gaussian_matrix(&mut proj_rng, d, mw, (1.0 / d as f64).sqrt());
                let mm = &m1 + &m2;
                let mut core = s.transpose() * &mm * &s;
                for i in 0..mw {
                    core[(i, i)] += lambda;
                }
                let r = match nalgebra::Cholesky::new(core) {
                    Some(c) => c.inverse(),
                    None => {
                        return Err(Error::Numeric {
                            what: "projected resolvent factorization",
                            condition: f64::NAN,
                        })
                    }
                };
                &s * r * s.transpose()
            }
        };

        let (mj, mo) = match req.source {
            SourceIndex::First => (&m1, &m2),
            SourceIndex::Second => (&m2, &m1),
        };
        let value = match req.kind {
            // tr A P M_j (= tr A M_j (M+λ)⁻¹ classically by symmetry).
            FunctionalKind::R1 => {
                let pm = &p * mj;
                (0..d).map(|i| a[i] * pm[(i, i)]).sum::<f64>()
            }
            FunctionalKind::R2 => {
                if req.model_class != ModelClass::Classical {
                    return Err(Error::Domain("r2 is classical-only".into()));
                }
                let bv = b.as_ref().unwrap();
                let pbp = scale_cols(&p, bv) * &p;
                (0..d).map(|i| a[i] * pbp[(i, i)]).sum::<f64>()
            }
            FunctionalKind::R3 => {
                let bv = b.as_ref().unwrap();
                let q = mj * &p;
                // tr A Q B Qᵀ with diagonal A, B.
                (0..d)
                    .map(|i| a[i] * (0..d).map(|k| q[(i, k)] * q[(i, k)] * bv[k]).sum::<f64>())
                    .sum::<f64>()
            }
            FunctionalKind::R4 => {
                let bv = b.as_ref().unwrap();
                let q = mj * &p;
                let qbp = scale_cols(&q, bv) * &p;
                (0..d).map(|i| a[i] * qbp[(i, i)]).sum::<f64>()
            }
            FunctionalKind::R5 => {
                let bv = b.as_ref().unwrap();
                let q1 = mj * &p;
                let q2 = mo * &p;
                (0..d)
                    .map(|i| {
                        a[i] * (0..d).map(|k| q1[(i, k)] * bv[k] * q2[(i, k)]).sum::<f64>()
                    })
                    .sum::<f64>()
            }
        };
        values.push(value);
    }
    Ok(mean_and_se(&values))
}

fn scale_cols(m: &DMatrix<f64>, diag: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for k in 0..out.ncols() {
        let mut col = out.column_mut(k);
        col *= diag[k];
    }
    out
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
