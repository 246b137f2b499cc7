//! Diagonal spectra, mixture models and scaling regimes.
//!
//! Every covariance and prior in this crate is a commuting diagonal matrix,
//! so a matrix is just its eigenvalue array. All trace functionals reduce to
//! finite sums over eigenvalues.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// What a spectrum stands for. Covariances must be strictly positive;
/// priors only need to be nonnegative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumRole {
    /// Feature covariance (Σ, Σ₁, Σ₂): positive definite.
    Covariance,
    /// Signal prior (Γ): positive semidefinite.
    SignalPrior,
    /// Real/synthetic shift prior (Δ): positive semidefinite.
    ShiftPrior,
}

/// A diagonal positive-semidefinite matrix stored as its eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    role: SpectrumRole,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<f64>, role: SpectrumRole) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Domain("spectrum must have dimension d >= 1".into()));
        }
        for (j, &v) in eigenvalues.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "eigenvalue {j} is {v}; must be finite and >= 0"
                )));
            }
            if v == 0.0 && role == SpectrumRole::Covariance {
                return Err(Error::Domain(format!(
                    "covariance eigenvalue {j} is zero; covariances must be positive definite"
                )));
            }
        }
        Ok(Self { eigenvalues, role })
    }

    /// Identity covariance of dimension `d`, scaled by `scale`.
    pub fn scaled_identity(d: usize, scale: f64, role: SpectrumRole) -> Result<Self> {
        Self::new(vec![scale; d], role)
    }

    /// All-zero prior (Δ = 0 means the two data sources share a labelling
    /// function).
    pub fn zero(d: usize, role: SpectrumRole) -> Result<Self> {
        if role == SpectrumRole::Covariance {
            return Err(Error::Domain("a covariance cannot be the zero matrix".into()));
        }
        Self::new(vec![0.0; d], role)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn role(&self) -> SpectrumRole {
        self.role
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// The spectral functional Σ_j λ_j^k / (λ_j + t)^l.
    ///
    /// `df_k(t) = spectral_moment(k, k, t)` and the normalized variant gives
    /// the I_{k,l}(t) family. Fails when `t = 0` meets a zero eigenvalue with
    /// `l > 0` (singular evaluation).
    pub fn spectral_moment(&self, k: u32, l: u32, t: f64) -> Result<f64> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("shift t = {t} must be finite and >= 0")));
        }
        if t == 0.0 && l > 0 && self.eigenvalues.iter().any(|&v| v == 0.0) {
            return Err(Error::Domain(
                "t = 0 with a zero eigenvalue and l > 0 is a singular evaluation".into(),
            ));
        }
        let mut sum = 0.0;
        for &lam in &self.eigenvalues {
            // 0^0 = 1 by the empty-product convention.
            sum += lam.powi(k as i32) / (lam + t).powi(l as i32);
        }
        Ok(sum)
    }

    /// Normalized variant: `spectral_moment / d`.
    pub fn spectral_moment_normalized(&self, k: u32, l: u32, t: f64) -> Result<f64> {
        Ok(self.spectral_moment(k, l, t)? / self.dim() as f64)
    }

    /// Degrees of freedom df_k(t) = tr Σ^k (Σ + t I)^{-k}.
    pub fn df(&self, k: u32, t: f64) -> Result<f64> {
        self.spectral_moment(k, k, t)
    }
}

/// Power-law covariance λ_j = C / j^exponent with C fixed by tr Σ = 1.
pub fn power_law_spectrum(d: usize, exponent: f64) -> Result<Spectrum> {
    if d == 0 {
        return Err(Error::Domain("power-law spectrum needs d >= 1".into()));
    }
    let raw: Vec<f64> = (1..=d).map(|j| (j as f64).powf(-exponent)).collect();
    let norm: f64 = raw.iter().sum();
    Spectrum::new(
        raw.into_iter().map(|v| v / norm).collect(),
        SpectrumRole::Covariance,
    )
}

/// One stage of a self-consuming generation loop: label noise σ_ℓ² and
/// sampling ratio φ_ℓ = d/n_ℓ at that stage.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GenerationLoop {
    pub noise_sq: f64,
    pub phi: f64,
}

/// Shift prior accumulated over iterated synthetic generations:
/// Δ = (Σ_ℓ σ_ℓ² φ_ℓ / (1 − φ_ℓ)) · Σ^{-1} / d, valid while every stage
/// interpolates (φ_ℓ < 1).
pub fn classical_collapse_delta(loops: &[GenerationLoop], sigma: &Spectrum) -> Result<Spectrum> {
    let d = sigma.dim();
    let mut scale = 0.0;
    for (i, stage) in loops.iter().enumerate() {
        if stage.noise_sq < 0.0 || !stage.noise_sq.is_finite() {
            return Err(Error::Domain(format!("loop {i}: noise_sq must be >= 0")));
        }
        if !(stage.phi > 0.0 && stage.phi < 1.0) {
            return Err(Error::Domain(format!(
                "loop {i}: phi = {} is outside (0, 1); that stage cannot interpolate",
                stage.phi
            )));
        }
        scale += stage.noise_sq * stage.phi / (1.0 - stage.phi);
    }
    let eigenvalues = sigma
        .eigenvalues()
        .iter()
        .map(|&lam| scale / (d as f64 * lam))
        .collect();
    Spectrum::new(eigenvalues, SpectrumRole::ShiftPrior)
}

/// The asymptotic-regime ratios: φ = d/n, synthetic fraction p₂ and, for the
/// random projections model, γ = m/d and ψ = m/n.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRatios {
    pub phi: f64,
    pub p2: f64,
    pub gamma: Option<f64>,
    pub psi: Option<f64>,
}

impl ScalingRatios {
    pub fn classical(phi: f64, p2: f64) -> Result<Self> {
        let r = Self {
            phi,
            p2,
            gamma: None,
            psi: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn projections(phi: f64, p2: f64, gamma: f64) -> Result<Self> {
        let r = Self {
            phi,
            p2,
            gamma: Some(gamma),
            psi: Some(phi * gamma),
        };
        r.validate()?;
        Ok(r)
    }

    /// Build ratios from finite sample counts.
    pub fn from_counts(d: usize, n1: usize, n2: usize, m: Option<usize>) -> Result<Self> {
        let n = (n1 + n2) as f64;
        if n == 0.0 || d == 0 {
            return Err(Error::Domain("need d >= 1 and n1 + n2 >= 1".into()));
        }
        let phi = d as f64 / n;
        let p2 = n2 as f64 / n;
        match m {
            Some(m) => Self::projections(phi, p2, m as f64 / d as f64),
            None => Self::classical(phi, p2),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::Domain(format!("phi = {} must be > 0", self.phi)));
        }
        if !(0.0..=1.0).contains(&self.p2) {
            return Err(Error::Domain(format!("p2 = {} must be in [0, 1]", self.p2)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Domain(format!("gamma = {g} must be > 0")));
            }
            let psi = self.psi.unwrap_or(self.phi * g);
            if (psi - self.phi * g).abs() > 1e-12 * psi.abs().max(1.0) {
                return Err(Error::Domain(format!(
                    "psi = {psi} is inconsistent with phi * gamma = {}",
                    self.phi * g
                )));
            }
        }
        Ok(())
    }

    pub fn p1(&self) -> f64 {
        1.0 - self.p2
    }

    /// ψ = φγ; errors when the projections ratios are absent.
    pub fn psi(&self) -> Result<f64> {
        self.psi
            .or_else(|| self.gamma.map(|g| g * self.phi))
            .ok_or_else(|| Error::Domain("ratios carry no projection dimensions (gamma/psi)".into()))
    }

    pub fn gamma(&self) -> Result<f64> {
        self.gamma
            .ok_or_else(|| Error::Domain("ratios carry no projection dimensions (gamma/psi)".into()))
    }
}

/// The two data sources: common covariance Σ, signal prior Γ, shift prior Δ
/// and per-source label noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureModel {
    pub sigma: Spectrum,
    pub gamma_prior: Spectrum,
    pub delta: Spectrum,
    pub noise1_sq: f64,
    pub noise2_sq: f64,
}

impl MixtureModel {
    pub fn new(
        sigma: Spectrum,
        gamma_prior: Spectrum,
        delta: Spectrum,
        noise1_sq: f64,
        noise2_sq: f64,
    ) -> Result<Self> {
        if sigma.role() != SpectrumRole::Covariance {
            return Err(Error::Domain("sigma must be a covariance spectrum".into()));
        }
        let d = sigma.dim();
        if gamma_prior.dim() != d || delta.dim() != d {
            return Err(Error::Domain(format!(
                "dimension mismatch: sigma {}, gamma {}, delta {}",
                d,
                gamma_prior.dim(),
                delta.dim()
            )));
        }
        if noise1_sq < 0.0 || noise2_sq < 0.0 {
            return Err(Error::Domain("noise variances must be >= 0".into()));
        }
        Ok(Self {
            sigma,
            gamma_prior,
            delta,
            noise1_sq,
            noise2_sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// Synthetic-data quality c² = tr ΣΔ.
    ///
    /// With the scaled priors used throughout (Δ = (c²/d)·Σ⁻¹ or (c²/d)·I on
    /// Σ = I) this returns the bare quality scalar c², the same number that
    /// multiplies the collapse terms of the closed forms.
    pub fn quality_c2(&self) -> f64 {
        self.sigma
            .eigenvalues()
            .iter()
            .zip(self.delta.eigenvalues())
            .map(|(&s, &dl)| s * dl)
            .sum()
    }

    /// Pooled label noise σ² = p₁σ₁² + p₂σ₂².
    pub fn pooled_noise_sq(&self, ratios: &ScalingRatios) -> f64 {
        ratios.p1() * self.noise1_sq + ratios.p2 * self.noise2_sq
    }
}

/// How the shift prior Δ is generated in a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    /// Δ = (c²/d) I.
    Isotropic,
    /// Δ = (c²/d) Σ⁻¹, the self-consuming-loop shape.
    InverseCovariance,
    /// Eigenvalues supplied explicitly.
    Explicit,
}

/// Isotropic closed-form parameters: Γ = (r²/d) I and Δ carrying quality c².
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IsotropicParams {
    pub r2: f64,
    pub c2: f64,
}

impl IsotropicParams {
    pub fn new(r2: f64, c2: f64) -> Result<Self> {
        if r2 < 0.0 || c2 < 0.0 {
            return Err(Error::Domain("r2 and c2 must be >= 0".into()));
        }
        Ok(Self { r2, c2 })
    }

    /// Materializes the isotropic model at dimension `d`.
    pub fn model(
        &self,
        d: usize,
        delta_kind: DeltaKind,
        noise1_sq: f64,
        noise2_sq: f64,
    ) -> Result<MixtureModel> {
        let sigma = Spectrum::scaled_identity(d, 1.0, SpectrumRole::Covariance)?;
        self.model_on(&sigma, delta_kind, noise1_sq, noise2_sq)
    }

    /// Same, but on an arbitrary covariance spectrum.
    pub fn model_on(
        &self,
        sigma: &Spectrum,
        delta_kind: DeltaKind,
        noise1_sq: f64,
        noise2_sq: f64,
    ) -> Result<MixtureModel> {
        let d = sigma.dim();
        let gamma = Spectrum::scaled_identity(d, self.r2 / d as f64, SpectrumRole::SignalPrior)?;
        let delta = delta_spectrum(sigma, self.c2, delta_kind)?;
        MixtureModel::new(sigma.clone(), gamma, delta, noise1_sq, noise2_sq)
    }
}

/// Builds Δ of the requested kind with quality tr ΣΔ = c².
pub fn delta_spectrum(sigma: &Spectrum, c2: f64, kind: DeltaKind) -> Result<Spectrum> {
    let d = sigma.dim();
    if c2 < 0.0 {
        return Err(Error::Domain("c2 must be >= 0".into()));
    }
    let eigenvalues: Vec<f64> = match kind {
        // tr ΣΔ = (c²/d) tr Σ; rescale so the quality is exactly c².
        DeltaKind::Isotropic => {
            let tr = sigma.trace();
            vec![c2 / tr; d]
        }
        DeltaKind::InverseCovariance => sigma
            .eigenvalues()
            .iter()
            .map(|&lam| c2 / (d as f64 * lam))
            .collect(),
        DeltaKind::Explicit => {
            return Err(Error::Domain(
                "explicit delta kind needs eigenvalues; construct the Spectrum directly".into(),
            ))
        }
    };
    Spectrum::new(eigenvalues, SpectrumRole::ShiftPrior)
}
