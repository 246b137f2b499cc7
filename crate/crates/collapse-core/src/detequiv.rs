//! Deterministic equivalents of the resolvent trace functionals r⁽¹⁾–r⁽⁵⁾
//! for general (possibly unequal) diagonal covariances, in both the
//! classical and the random projections model. These are the quantities the
//! bias-variance decompositions are assembled from; the Monte Carlo
//! estimators in [`crate::simulate`] are their finite-size counterparts.

use crate::error::{Error, Result};
use crate::fixed_point::{
    solve_general_classical, solve_general_projections, GeneralClassicalState,
    GeneralProjectionsState,
};
use crate::risk::{RiskDecomposition, RiskFlags};
use crate::spectra::{MixtureModel, ScalingRatios, Spectrum};
use serde::{Deserialize, Serialize};

/// Which trace functional is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FunctionalKind {
    /// r_j⁽¹⁾(A) = E tr A M_j (M + λI)⁻¹ (projections: E tr A SRSᵀM_j).
    R1,
    /// r⁽²⁾(A, B) = E tr A (M + λI)⁻¹ B (M + λI)⁻¹ (classical only).
    R2,
    /// r_j⁽³⁾(A, B) = E tr A M_j R̃ B R̃ M_j with R̃ the (projected) resolvent.
    R3,
    /// r_j⁽⁴⁾(A, B) = E tr A M_j R̃ B R̃.
    R4,
    /// r⁽⁵⁾(A, B) = E tr A M₁ R̃ B R̃ M₂, the cross term.
    R5,
}

/// Which data source plays the role of j in r_j.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceIndex {
    First,
    Second,
}

/// The model class whose resolvent is being traced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelClass {
    Classical,
    Projections,
}

/// A fully specified functional evaluation request.
#[derive(Clone, Debug)]
pub struct FunctionalRequest {
    pub kind: FunctionalKind,
    pub source: SourceIndex,
    pub a: Spectrum,
    /// Required for kinds R2–R5.
    pub b: Option<Spectrum>,
    pub model_class: ModelClass,
}

impl FunctionalRequest {
    fn b_required(&self) -> Result<&Spectrum> {
        self.b
            .as_ref()
            .ok_or_else(|| Error::Domain(format!("kind {:?} needs a B matrix", self.kind)))
    }
}

fn source_tuple<'a>(
    source: SourceIndex,
    s1: &'a [f64],
    s2: &'a [f64],
    p1: f64,
    p2: f64,
) -> (&'a [f64], &'a [f64], f64, f64) {
    match source {
        SourceIndex::First => (s1, s2, p1, p2),
        SourceIndex::Second => (s2, s1, p2, p1),
    }
}

// ---------------------------------------------------------------------------
// Classical model
// ---------------------------------------------------------------------------

/// Evaluates a classical-model functional at its deterministic equivalent.
pub fn classical_functional(
    req: &FunctionalRequest,
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
) -> Result<f64> {
    if req.model_class != ModelClass::Classical {
        return Err(Error::Domain("request is not a classical functional".into()));
    }
    // R1 does not involve B; the u-pair is solved against B otherwise.
    let b_default = Spectrum::zero(sigma1.dim(), crate::spectra::SpectrumRole::ShiftPrior)?;
    let b = match req.kind {
        FunctionalKind::R1 => &b_default,
        _ => req.b_required()?,
    };
    let st = solve_general_classical(sigma1, sigma2, ratios, lambda, b)?;
    classical_functional_at(req, sigma1, sigma2, ratios, lambda, b, &st)
}

/// Same, for an already-solved state (the state must have been solved with
/// the same B).
pub fn classical_functional_at(
    req: &FunctionalRequest,
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    b: &Spectrum,
    st: &GeneralClassicalState,
) -> Result<f64> {
    let (p1, p2) = (ratios.p1(), ratios.p2);
    let a = req.a.eigenvalues();
    let s1 = sigma1.eigenvalues();
    let s2 = sigma2.eigenvalues();
    let bs = b.eigenvalues();
    let kk = |j: usize| p1 * st.e1 * s1[j] + p2 * st.e2 * s2[j] + lambda;

    let value = match req.kind {
        FunctionalKind::R1 => {
            let (sj, _, pj, _) = source_tuple(req.source, s1, s2, p1, p2);
            let ej = match req.source {
                SourceIndex::First => st.e1,
                SourceIndex::Second => st.e2,
            };
            (0..a.len()).map(|j| pj * ej * a[j] * sj[j] / kk(j)).sum()
        }
        FunctionalKind::R2 => (0..a.len())
            .map(|j| {
                let l = p1 * st.u1 * s1[j] + p2 * st.u2 * s2[j] + bs[j];
                a[j] * l / (kk(j) * kk(j))
            })
            .sum(),
        FunctionalKind::R3 => {
            let (sj, so, pj, po) = source_tuple(req.source, s1, s2, p1, p2);
            let (ej, eo, uj, uo) = match req.source {
                SourceIndex::First => (st.e1, st.e2, st.u1, st.u2),
                SourceIndex::Second => (st.e2, st.e1, st.u2, st.u1),
            };
            (0..a.len())
                .map(|j| {
                    let guard = po * eo * so[j] + lambda;
                    let c = pj * ej * ej * (bs[j] + po * uo * so[j]) * sj[j] + uj * guard * guard;
                    pj * a[j] * sj[j] * c / (kk(j) * kk(j))
                })
                .sum()
        }
        FunctionalKind::R4 => {
            let (sj, so, pj, po) = source_tuple(req.source, s1, s2, p1, p2);
            let (ej, eo, uj, uo) = match req.source {
                SourceIndex::First => (st.e1, st.e2, st.u1, st.u2),
                SourceIndex::Second => (st.e2, st.e1, st.u2, st.u1),
            };
            (0..a.len())
                .map(|j| {
                    let dmat = ej * bs[j] - lambda * uj + po * (ej * uo - eo * uj) * so[j];
                    pj * a[j] * sj[j] * dmat / (kk(j) * kk(j))
                })
                .sum()
        }
        // Cross term from the expansion identity:
        // 2 r⁽⁵⁾ = tr AB K₀²K⁻² + λ² tr A(p₁u₁Σ₁ + p₂u₂Σ₂)K⁻² − r₁⁽³⁾ − r₂⁽³⁾.
        FunctionalKind::R5 => {
            let mut full = 0.0;
            for j in 0..a.len() {
                let k0 = p1 * st.e1 * s1[j] + p2 * st.e2 * s2[j];
                let k2 = kk(j) * kk(j);
                full += a[j] * bs[j] * k0 * k0 / k2;
                full += lambda * lambda * a[j] * (p1 * st.u1 * s1[j] + p2 * st.u2 * s2[j]) / k2;
            }
            let mut r3 = FunctionalRequest {
                kind: FunctionalKind::R3,
                source: SourceIndex::First,
                a: req.a.clone(),
                b: Some(b.clone()),
                model_class: ModelClass::Classical,
            };
            let r31 = classical_functional_at(&r3, sigma1, sigma2, ratios, lambda, b, st)?;
            r3.source = SourceIndex::Second;
            let r32 = classical_functional_at(&r3, sigma1, sigma2, ratios, lambda, b, st)?;
            0.5 * (full - r31 - r32)
        }
    };
    Ok(value)
}

/// Direct closed form of the classical cross term,
/// r⁽⁵⁾ = p₁p₂ tr AΣ₁Σ₂ (e₁e₂B − p₁e₁²u₂Σ₁ − p₂e₂²u₁Σ₂ − λ(e₂u₁ + e₁u₂)I) K⁻²,
/// kept as an internal consistency route for the expansion form.
pub fn classical_r5_closed_form(
    a: &Spectrum,
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    b: &Spectrum,
    st: &GeneralClassicalState,
) -> f64 {
    let (p1, p2) = (ratios.p1(), ratios.p2);
    let s1 = sigma1.eigenvalues();
    let s2 = sigma2.eigenvalues();
    let bs = b.eigenvalues();
    let mut sum = 0.0;
    for j in 0..a.eigenvalues().len() {
        let k = p1 * st.e1 * s1[j] + p2 * st.e2 * s2[j] + lambda;
        let core = st.e1 * st.e2 * bs[j]
            - p1 * st.e1 * st.e1 * st.u2 * s1[j]
            - p2 * st.e2 * st.e2 * st.u1 * s2[j]
            - lambda * (st.e2 * st.u1 + st.e1 * st.u2);
        sum += p1 * p2 * a.eigenvalues()[j] * s1[j] * s2[j] * core / (k * k);
    }
    sum
}

// ---------------------------------------------------------------------------
// Random projections model
// ---------------------------------------------------------------------------

/// Evaluates a projections-model functional at its deterministic equivalent.
pub fn projections_functional(
    req: &FunctionalRequest,
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
) -> Result<f64> {
    if req.model_class != ModelClass::Projections {
        return Err(Error::Domain("request is not a projections functional".into()));
    }
    if req.kind == FunctionalKind::R2 {
        return Err(Error::Domain(
            "r2 has no projections form; it only arises in the classical decomposition".into(),
        ));
    }
    let b_default = Spectrum::zero(sigma1.dim(), crate::spectra::SpectrumRole::ShiftPrior)?;
    let b = match req.kind {
        FunctionalKind::R1 => &b_default,
        _ => req.b_required()?,
    };
    let st = solve_general_projections(sigma1, sigma2, ratios, lambda, b)?;
    projections_functional_at(req, sigma1, sigma2, ratios, lambda, b, &st)
}

/// Same, for an already-solved state (solved with the same B).
pub fn projections_functional_at(
    req: &FunctionalRequest,
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    b: &Spectrum,
    st: &GeneralProjectionsState,
) -> Result<f64> {
    let (p1, p2) = (ratios.p1(), ratios.p2);
    let gamma = ratios.gamma()?;
    let a = req.a.eigenvalues();
    let s1 = sigma1.eigenvalues();
    let s2 = sigma2.eigenvalues();
    let bs = b.eigenvalues();
    let tau = st.tau;
    let kk = |j: usize| gamma * tau * (p1 * st.e1 * s1[j] + p2 * st.e2 * s2[j]) + lambda;
    let gt2 = gamma * tau * tau;

    let value = match req.kind {
        FunctionalKind::R1 => {
            let (sj, _, pj, _) = source_tuple(req.source, s1, s2, p1, p2);
            let ej = match req.source {
                SourceIndex::First => st.e1,
                SourceIndex::Second => st.e2,
            };
            (0..a.len())
                .map(|j| gamma * tau * pj * ej * a[j] * sj[j] / kk(j))
                .sum()
        }
        FunctionalKind::R2 => unreachable!("rejected in projections_functional"),
        FunctionalKind::R3 => {
            let (sj, so, pj, po) = source_tuple(req.source, s1, s2, p1, p2);
            let (ej, eo, uj, uo) = match req.source {
                SourceIndex::First => (st.e1, st.e2, st.u1, st.u2),
                SourceIndex::Second => (st.e2, st.e1, st.u2, st.u1),
            };
            (0..a.len())
                .map(|j| {
                    let guard = gamma * tau * po * eo * so[j] + lambda;
                    let c = gamma * ej * ej * pj * (gt2 * (bs[j] + po * uo * so[j]) + st.omega)
                        * sj[j]
                        + uj * guard * guard;
                    pj * a[j] * sj[j] * c / (kk(j) * kk(j))
                })
                .sum()
        }
        FunctionalKind::R4 => {
            let (sj, so, pj, po) = source_tuple(req.source, s1, s2, p1, p2);
            let (ej, eo, uj, uo) = match req.source {
                SourceIndex::First => (st.e1, st.e2, st.u1, st.u2),
                SourceIndex::Second => (st.e2, st.e1, st.u2, st.u1),
            };
            (0..a.len())
                .map(|j| {
                    let dmat = gt2 * ej * bs[j] + (ej * st.omega - lambda * tau * uj)
                        + gt2 * po * (ej * uo - eo * uj) * so[j];
                    gamma * pj * a[j] * sj[j] * dmat / (kk(j) * kk(j))
                })
                .sum()
        }
        FunctionalKind::R5 => (0..a.len())
            .map(|j| {
                let core = gamma
                    * gamma
                    * tau
                    * tau
                    * (st.e1 * st.e2 * bs[j]
                        - p1 * st.e1 * st.e1 * st.u2 * s1[j]
                        - p2 * st.e2 * st.e2 * st.u1 * s2[j])
                    + gamma * st.e1 * st.e2 * st.omega
                    - gamma * tau * lambda * (st.e2 * st.u1 + st.e1 * st.u2);
                p1 * p2 * a[j] * s1[j] * s2[j] * core / (kk(j) * kk(j))
            })
            .sum(),
    };
    Ok(value)
}

// ---------------------------------------------------------------------------
// Risk assembly through the functionals
// ---------------------------------------------------------------------------

fn gamma_sigma(model: &MixtureModel) -> Result<Spectrum> {
    Spectrum::new(
        model
            .gamma_prior
            .eigenvalues()
            .iter()
            .zip(model.sigma.eigenvalues())
            .map(|(&g, &s)| g * s)
            .collect(),
        crate::spectra::SpectrumRole::SignalPrior,
    )
}

/// Reassembles the classical decomposition from the raw functionals:
/// V = Σ_j (σ_j²/n) r_j⁽⁴⁾(I, Σ), B = λ² r⁽²⁾(Γ, Σ), ζ = r₂⁽³⁾(Δ, Σ).
/// Must agree with [`crate::risk::classical_risk`] to 1e−10.
pub fn classical_risk_via_functionals(
    model: &MixtureModel,
    ratios: &ScalingRatios,
    lambda: f64,
    n: f64,
) -> Result<RiskDecomposition> {
    let sigma = &model.sigma;
    let st = solve_general_classical(sigma, sigma, ratios, lambda, sigma)?;
    let identity =
        Spectrum::scaled_identity(sigma.dim(), 1.0, crate::spectra::SpectrumRole::Covariance)?;
    let mk = |kind, source, a: &Spectrum| FunctionalRequest {
        kind,
        source,
        a: a.clone(),
        b: Some(sigma.clone()),
        model_class: ModelClass::Classical,
    };
    let f = |req: &FunctionalRequest| {
        classical_functional_at(req, sigma, sigma, ratios, lambda, sigma, &st)
    };
    let variance = (model.noise1_sq * f(&mk(FunctionalKind::R4, SourceIndex::First, &identity))?
        + model.noise2_sq * f(&mk(FunctionalKind::R4, SourceIndex::Second, &identity))?)
        / n;
    let bias =
        lambda * lambda * f(&mk(FunctionalKind::R2, SourceIndex::First, &model.gamma_prior))?;
    let zeta = f(&mk(FunctionalKind::R3, SourceIndex::Second, &model.delta))?;
    Ok(RiskDecomposition {
        bias,
        variance,
        collapse: zeta,
        total: bias + variance + zeta,
        flags: RiskFlags::default(),
    })
}

/// Reassembles the projections decomposition:
/// V = Σ_j (σ_j²/n) r_j⁽⁴⁾(I, Σ), ζ = r₂⁽³⁾(Δ, Σ) and
/// B = tr ΓΣ − 2Σ_j r_j⁽¹⁾(ΓΣ) + Σ_j r_j⁽³⁾(Γ, Σ) + 2r⁽⁵⁾(Γ, Σ).
/// Must agree with [`crate::risk::rp_risk`] to 1e−10.
pub fn rp_risk_via_functionals(
    model: &MixtureModel,
    ratios: &ScalingRatios,
    lambda: f64,
    n: f64,
) -> Result<RiskDecomposition> {
    let sigma = &model.sigma;
    let st = solve_general_projections(sigma, sigma, ratios, lambda, sigma)?;
    let identity =
        Spectrum::scaled_identity(sigma.dim(), 1.0, crate::spectra::SpectrumRole::Covariance)?;
    let gs = gamma_sigma(model)?;
    let mk = |kind, source, a: &Spectrum| FunctionalRequest {
        kind,
        source,
        a: a.clone(),
        b: Some(sigma.clone()),
        model_class: ModelClass::Projections,
    };
    let f = |req: &FunctionalRequest| {
        projections_functional_at(req, sigma, sigma, ratios, lambda, sigma, &st)
    };

    let variance = (model.noise1_sq * f(&mk(FunctionalKind::R4, SourceIndex::First, &identity))?
        + model.noise2_sq * f(&mk(FunctionalKind::R4, SourceIndex::Second, &identity))?)
        / n;

    let bias = gs.trace()
        - 2.0 * f(&mk(FunctionalKind::R1, SourceIndex::First, &gs))?
        - 2.0 * f(&mk(FunctionalKind::R1, SourceIndex::Second, &gs))?
        + f(&mk(FunctionalKind::R3, SourceIndex::First, &model.gamma_prior))?
        + f(&mk(FunctionalKind::R3, SourceIndex::Second, &model.gamma_prior))?
        + 2.0 * f(&mk(FunctionalKind::R5, SourceIndex::First, &model.gamma_prior))?;

    let zeta = f(&mk(FunctionalKind::R3, SourceIndex::Second, &model.delta))?;
    Ok(RiskDecomposition {
        bias,
        variance,
        collapse: zeta,
        total: bias + variance + zeta,
        flags: RiskFlags::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::solve_kappa;
    use crate::risk::{classical_risk, rp_risk};
    use crate::spectra::{power_law_spectrum, DeltaKind, IsotropicParams, SpectrumRole};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scaled(base: &Spectrum, factor: f64) -> Spectrum {
        Spectrum::new(
            base.eigenvalues().iter().map(|&v| factor * v).collect(),
            SpectrumRole::Covariance,
        )
        .unwrap()
    }

    fn random_prior(d: usize, rng: &mut StdRng) -> Spectrum {
        Spectrum::new(
            (0..d).map(|_| rng.random_range(0.0..2.0)).collect(),
            SpectrumRole::SignalPrior,
        )
        .unwrap()
    }

    #[test]
    fn r1_single_source_is_df1() {
        // Sigma1 = Sigma2, p2 -> 0, A = I: r1 -> df1(kappa).
        let d = 120;
        let sigma = power_law_spectrum(d, 1.0).unwrap();
        let identity = Spectrum::scaled_identity(d, 1.0, SpectrumRole::Covariance).unwrap();
        let ratios = ScalingRatios::classical(0.5, 0.0).unwrap();
        let req = FunctionalRequest {
            kind: FunctionalKind::R1,
            source: SourceIndex::First,
            a: identity,
            b: None,
            model_class: ModelClass::Classical,
        };
        let lambda = 0.3;
        let r1 = classical_functional(&req, &sigma, &sigma, &ratios, lambda).unwrap();
        let fp = solve_kappa(&sigma, d as f64 / 0.5, lambda).unwrap();
        assert_relative_eq!(r1, fp.df1, max_relative = 1e-9);
    }

    #[test]
    fn functionals_vanish_for_zero_a() {
        let d = 40;
        let sigma1 = power_law_spectrum(d, 1.0).unwrap();
        let sigma2 = scaled(&sigma1, 1.5);
        let zero = Spectrum::zero(d, SpectrumRole::SignalPrior).unwrap();
        let ratios = ScalingRatios::classical(0.4, 0.35).unwrap();
        let ratios_p = ScalingRatios::projections(0.5, 0.35, 1.5).unwrap();
        for kind in [
            FunctionalKind::R1,
            FunctionalKind::R2,
            FunctionalKind::R3,
            FunctionalKind::R4,
            FunctionalKind::R5,
        ] {
            let req = FunctionalRequest {
                kind,
                source: SourceIndex::First,
                a: zero.clone(),
                b: Some(sigma1.clone()),
                model_class: ModelClass::Classical,
            };
            assert_eq!(
                classical_functional(&req, &sigma1, &sigma2, &ratios, 0.5).unwrap(),
                0.0
            );
            if kind != FunctionalKind::R2 {
                let req = FunctionalRequest {
                    model_class: ModelClass::Projections,
                    ..req
                };
                assert_eq!(
                    projections_functional(&req, &sigma1, &sigma2, &ratios_p, 0.5).unwrap(),
                    0.0
                );
            }
        }
    }

    #[test]
    fn functionals_linear_in_a() {
        let d = 60;
        let mut rng = StdRng::seed_from_u64(7);
        let sigma1 = power_law_spectrum(d, 1.0).unwrap();
        let sigma2 = scaled(&sigma1, 1.3);
        let b = random_prior(d, &mut rng);
        let a1 = random_prior(d, &mut rng);
        let a2 = random_prior(d, &mut rng);
        let combo = Spectrum::new(
            a1.eigenvalues()
                .iter()
                .zip(a2.eigenvalues())
                .map(|(&x, &y)| 0.7 * x + 1.9 * y)
                .collect(),
            SpectrumRole::SignalPrior,
        )
        .unwrap();
        let ratios = ScalingRatios::projections(0.8, 0.4, 1.2).unwrap();
        for kind in [
            FunctionalKind::R1,
            FunctionalKind::R3,
            FunctionalKind::R4,
            FunctionalKind::R5,
        ] {
            let mk = |a: &Spectrum| FunctionalRequest {
                kind,
                source: SourceIndex::Second,
                a: a.clone(),
                b: Some(b.clone()),
                model_class: ModelClass::Projections,
            };
            let v1 = projections_functional(&mk(&a1), &sigma1, &sigma2, &ratios, 0.4).unwrap();
            let v2 = projections_functional(&mk(&a2), &sigma1, &sigma2, &ratios, 0.4).unwrap();
            let vc = projections_functional(&mk(&combo), &sigma1, &sigma2, &ratios, 0.4).unwrap();
            assert_relative_eq!(vc, 0.7 * v1 + 1.9 * v2, max_relative = 1e-10);
        }
    }

    #[test]
    fn exchange_symmetry() {
        let d = 50;
        let mut rng = StdRng::seed_from_u64(11);
        let sigma1 = power_law_spectrum(d, 1.0).unwrap();
        let sigma2 = scaled(&sigma1, 2.0);
        let a = random_prior(d, &mut rng);
        let b = random_prior(d, &mut rng);
        let p2 = 0.3;
        let fwd = ScalingRatios::classical(0.6, p2).unwrap();
        let swp = ScalingRatios::classical(0.6, 1.0 - p2).unwrap();
        for kind in [FunctionalKind::R1, FunctionalKind::R3, FunctionalKind::R4] {
            let req_fwd = FunctionalRequest {
                kind,
                source: SourceIndex::First,
                a: a.clone(),
                b: Some(b.clone()),
                model_class: ModelClass::Classical,
            };
            let req_swp = FunctionalRequest {
                source: SourceIndex::Second,
                ..req_fwd.clone()
            };
            let v_fwd = classical_functional(&req_fwd, &sigma1, &sigma2, &fwd, 0.5).unwrap();
            let v_swp = classical_functional(&req_swp, &sigma2, &sigma1, &swp, 0.5).unwrap();
            assert_relative_eq!(v_fwd, v_swp, max_relative = 1e-10);
        }
        // r5 is symmetric under the exchange.
        let req = FunctionalRequest {
            kind: FunctionalKind::R5,
            source: SourceIndex::First,
            a,
            b: Some(b),
            model_class: ModelClass::Classical,
        };
        let v_fwd = classical_functional(&req, &sigma1, &sigma2, &fwd, 0.5).unwrap();
        let v_swp = classical_functional(&req, &sigma2, &sigma1, &swp, 0.5).unwrap();
        assert_relative_eq!(v_fwd, v_swp, max_relative = 1e-10);
    }

    #[test]
    fn classical_r5_expansion_equals_closed_form() {
        let d = 70;
        let mut rng = StdRng::seed_from_u64(3);
        let sigma1 = power_law_spectrum(d, 1.0).unwrap();
        let sigma2 = scaled(&sigma1, 1.5);
        let a = random_prior(d, &mut rng);
        let b = random_prior(d, &mut rng);
        let ratios = ScalingRatios::classical(0.7, 0.45).unwrap();
        let lambda = 0.25;
        let st = solve_general_classical(&sigma1, &sigma2, &ratios, lambda, &b).unwrap();
        let req = FunctionalRequest {
            kind: FunctionalKind::R5,
            source: SourceIndex::First,
            a: a.clone(),
            b: Some(b.clone()),
            model_class: ModelClass::Classical,
        };
        let via_expansion =
            classical_functional_at(&req, &sigma1, &sigma2, &ratios, lambda, &b, &st).unwrap();
        let direct = classical_r5_closed_form(&a, &sigma1, &sigma2, &ratios, lambda, &b, &st);
        assert_relative_eq!(via_expansion, direct, max_relative = 1e-9);
    }

    #[test]
    fn projections_reduce_to_classical_when_unprojected() {
        // Forcing tau = gamma = 1, omega = 0 in the projections formulas
        // recovers the classical ones, with the (u1, u2) of the classical
        // system.
        let d = 50;
        let mut rng = StdRng::seed_from_u64(5);
        let sigma1 = power_law_spectrum(d, 1.0).unwrap();
        let sigma2 = scaled(&sigma1, 1.4);
        let a = random_prior(d, &mut rng);
        let b = random_prior(d, &mut rng);
        let lambda = 0.3;
        let ratios_cl = ScalingRatios::classical(0.6, 0.4).unwrap();
        let ratios_pr = ScalingRatios::projections(0.6, 0.4, 1.0).unwrap();
        let st_cl = solve_general_classical(&sigma1, &sigma2, &ratios_cl, lambda, &b).unwrap();
        let forced = GeneralProjectionsState {
            e1: st_cl.e1,
            e2: st_cl.e2,
            tau: 1.0,
            u1: st_cl.u1,
            u2: st_cl.u2,
            omega: 0.0,
        };
        for kind in [
            FunctionalKind::R1,
            FunctionalKind::R3,
            FunctionalKind::R4,
            FunctionalKind::R5,
        ] {
            let req_p = FunctionalRequest {
                kind,
                source: SourceIndex::Second,
                a: a.clone(),
                b: Some(b.clone()),
                model_class: ModelClass::Projections,
            };
            let req_c = FunctionalRequest {
                model_class: ModelClass::Classical,
                ..req_p.clone()
            };
            let vp =
                projections_functional_at(&req_p, &sigma1, &sigma2, &ratios_pr, lambda, &b, &forced)
                    .unwrap();
            let vc =
                classical_functional_at(&req_c, &sigma1, &sigma2, &ratios_cl, lambda, &b, &st_cl)
                    .unwrap();
            assert_relative_eq!(vp, vc, max_relative = 1e-10);
        }
    }

    #[test]
    fn positivity_on_psd_inputs() {
        // Moderate-lambda grid where u < 1; r5 changes sign only past the
        // threshold region.
        let d = 40;
        let mut rng = StdRng::seed_from_u64(13);
        let sigma1 = power_law_spectrum(d, 1.0).unwrap();
        let sigma2 = scaled(&sigma1, 1.2);
        for _ in 0..10 {
            let a = random_prior(d, &mut rng);
            let b = random_prior(d, &mut rng);
            let phi = rng.random_range(0.1..0.8);
            let p2 = rng.random_range(0.05..0.95);
            let lambda = rng.random_range(0.3..2.0);
            let ratios = ScalingRatios::classical(phi, p2).unwrap();
            for kind in [
                FunctionalKind::R1,
                FunctionalKind::R2,
                FunctionalKind::R3,
                FunctionalKind::R4,
                FunctionalKind::R5,
            ] {
                let req = FunctionalRequest {
                    kind,
                    source: SourceIndex::First,
                    a: a.clone(),
                    b: Some(b.clone()),
                    model_class: ModelClass::Classical,
                };
                let v = classical_functional(&req, &sigma1, &sigma2, &ratios, lambda).unwrap();
                assert!(v >= -1e-12, "{kind:?} negative: {v} at phi={phi} p2={p2}");
            }
            let gamma = rng.random_range(0.5..3.0);
            let ratios_p = ScalingRatios::projections(phi, p2, gamma).unwrap();
            for kind in [
                FunctionalKind::R1,
                FunctionalKind::R3,
                FunctionalKind::R4,
                FunctionalKind::R5,
            ] {
                let req = FunctionalRequest {
                    kind,
                    source: SourceIndex::Second,
                    a: a.clone(),
                    b: Some(b.clone()),
                    model_class: ModelClass::Projections,
                };
                let v = projections_functional(&req, &sigma1, &sigma2, &ratios_p, lambda).unwrap();
                assert!(v >= -1e-12, "{kind:?} negative: {v} at phi={phi} p2={p2}");
            }
        }
    }

    #[test]
    fn theorem_consistency_classical() {
        let d = 90;
        let sigma = power_law_spectrum(d, 1.0).unwrap();
        let model = IsotropicParams::new(1.0, 0.6)
            .unwrap()
            .model_on(&sigma, DeltaKind::InverseCovariance, 0.3, 0.8)
            .unwrap();
        for (phi, p2, lambda) in [(0.5, 0.4, 0.2), (1.4, 0.7, 0.05), (0.9, 0.1, 1.0)] {
            let ratios = ScalingRatios::classical(phi, p2).unwrap();
            let n = d as f64 / phi;
            let direct = classical_risk(&model, &ratios, lambda, n).unwrap();
            let via = classical_risk_via_functionals(&model, &ratios, lambda, n).unwrap();
            assert_relative_eq!(via.bias, direct.bias, max_relative = 1e-10);
            assert_relative_eq!(via.variance, direct.variance, max_relative = 1e-10);
            assert_relative_eq!(via.collapse, direct.collapse, max_relative = 1e-10);
        }
    }

    #[test]
    fn theorem_consistency_projections() {
        let d = 90;
        let sigma = power_law_spectrum(d, 1.0).unwrap();
        let model = IsotropicParams::new(1.0, 0.6)
            .unwrap()
            .model_on(&sigma, DeltaKind::InverseCovariance, 0.3, 0.8)
            .unwrap();
        for (phi, p2, gamma, lambda) in [
            (0.5, 0.4, 1.5, 0.2),
            (1.4, 0.7, 0.6, 0.05),
            (1.2, 0.4, 2.0, 1e-4),
        ] {
            let ratios = ScalingRatios::projections(phi, p2, gamma).unwrap();
            let n = d as f64 / phi;
            let direct = rp_risk(&model, &ratios, lambda, n).unwrap();
            let via = rp_risk_via_functionals(&model, &ratios, lambda, n).unwrap();
            assert_relative_eq!(via.bias, direct.bias, max_relative = 1e-9);
            assert_relative_eq!(via.variance, direct.variance, max_relative = 1e-9);
            assert_relative_eq!(via.collapse, direct.collapse, max_relative = 1e-9);
        }
    }
}
