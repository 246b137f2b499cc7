//! Self-consistency equations behind the asymptotic risk formulas.
//!
//! Four solvers live here: the classical κ fixed point, the random
//! projections core (e, τ, θ) plus its (u, ω′) linear system, the general
//! two-covariance systems used by the deterministic equivalents, and the
//! ridgeless λ → 0⁺ limits obtained by continuation.

use crate::error::{Error, Result};
use crate::spectra::{ScalingRatios, Spectrum};
use serde::Serialize;

/// Damping for Picard iterations.
pub const DAMPING: f64 = 0.5;
/// Relative residual target for every solved state.
pub const RESIDUAL_TOL: f64 = 1e-13;
/// Residual bound that every solved state must re-substitute to.
pub const RESIDUAL_GATE: f64 = 1e-10;
/// Iteration budget for Picard loops.
pub const MAX_ITERS: usize = 100_000;
/// Ridgeless requests (λ = 0) are evaluated at this floor.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Classical resolvent fixed point at regularization λ and sample count n.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ClassicalFixedPoint {
    /// Unique positive root of κ − λ = κ df₁(κ)/n.
    pub kappa: f64,
    /// u = (df₂(κ)/n) / (1 − df₂(κ)/n).
    pub u: f64,
    pub df1: f64,
    pub df2: f64,
}

/// Solves κ − λ = κ df₁(κ; Σ)/n by damped Picard iteration with a bisection
/// fallback for the nearly-critical region where the Picard map loses its
/// contraction margin.
pub fn solve_kappa(sigma: &Spectrum, n: f64, lambda: f64) -> Result<ClassicalFixedPoint> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    if !(n > 0.0) {
        return Err(Error::Domain(format!("n = {n} must be > 0")));
    }
    let step = |kappa: f64| -> Result<f64> { Ok(lambda + kappa * sigma.df(1, kappa)? / n) };

    let mut kappa = lambda + sigma.trace() / n;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let next = step(kappa)?;
        residual = (next - kappa).abs();
        if residual <= RESIDUAL_TOL * kappa {
            kappa = next;
            break;
        }
        kappa = (1.0 - DAMPING) * kappa + DAMPING * next;
    }

    if residual > RESIDUAL_TOL * kappa {
        // g(κ) = κ − λ − κ df₁(κ)/n brackets its unique root in
        // [λ, λ + tr Σ/n].
        let g = |k: f64| -> Result<f64> { Ok(k - lambda - k * sigma.df(1, k)? / n) };
        let mut lo = lambda;
        let mut hi = lambda + sigma.trace() / n + 1e-12;
        for _ in 0..500 {
            let mid = 0.5 * (lo + hi);
            if g(mid)? <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        kappa = 0.5 * (lo + hi);
        let res = g(kappa)?.abs();
        if res > RESIDUAL_GATE * kappa {
            return Err(Error::Convergence {
                what: "solve_kappa",
                iterations: MAX_ITERS,
                residual: res,
            });
        }
    }

    let df1 = sigma.df(1, kappa)?;
    let df2 = sigma.df(2, kappa)?;
    if df2 / n >= 1.0 {
        return Err(Error::Domain(format!(
            "df2(kappa)/n = {} >= 1: degenerate variance",
            df2 / n
        )));
    }
    Ok(ClassicalFixedPoint {
        kappa,
        u: (df2 / n) / (1.0 - df2 / n),
        df1,
        df2,
    })
}

/// Relative residual of the κ defining equation; every solved state is
/// checked against this by the integrity suite.
pub fn kappa_residual(sigma: &Spectrum, n: f64, lambda: f64, kappa: f64) -> Result<f64> {
    Ok((kappa - lambda - kappa * sigma.df(1, kappa)? / n).abs() / kappa)
}

/// The (e, τ, θ) core of the random projections fixed point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RpCore {
    pub e: f64,
    pub tau: f64,
    /// θ = λ/(γτe), the effective regularization seen through the projection.
    pub theta: f64,
}

/// Solves the coupled (e, τ) equations of the projected resolvent.
///
/// Because Σ is diagonal, K = γτe(Σ + θI) exactly, which collapses the pair
/// to a single scalar root: with η(θ) = I₁,₁(θ),
///   e = 1 − φη(θ),  τ = 1 − η(θ)/γ,  θ(γ − η(θ))(1 − φη(θ)) = λ.
/// The physical branch is the one with η < min(γ, 1/φ); the root is bracketed
/// there and bisected, which converges for every λ > 0 including ψ ≈ 1.
pub fn solve_rp_core(sigma: &Spectrum, ratios: &ScalingRatios, lambda: f64) -> Result<RpCore> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    let phi = ratios.phi;
    let gamma = ratios.gamma()?;
    let eta = |theta: f64| -> Result<f64> { sigma.spectral_moment_normalized(1, 1, theta) };
    let g = |theta: f64| -> Result<f64> {
        let h = eta(theta)?;
        Ok(theta * (gamma - h) * (1.0 - phi * h) - lambda)
    };

    // Lower end of the physical branch: η(θ_min) = min(γ, 1/φ) when that
    // level is attainable (η ≤ 1 always), else θ_min = 0.
    let eta_cap = gamma.min(1.0 / phi);
    let mut theta_lo = 0.0;
    if eta_cap < 1.0 {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while eta(hi)? > eta_cap {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Domain("spectrum too singular for rp core".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if eta(mid)? > eta_cap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        theta_lo = hi;
    }

    let mut hi = (theta_lo + lambda / gamma).max(1.0);
    let mut guard = 0;
    while g(hi)? <= 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::Convergence {
                what: "solve_rp_core bracket",
                iterations: guard,
                residual: f64::NAN,
            });
        }
    }
    let mut lo = theta_lo;
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs() {
            break;
        }
    }
    let theta = 0.5 * (lo + hi);
    let h = eta(theta)?;
    // e = 1 − φη and τ = 1 − η/γ cancel catastrophically next to the
    // ridgeless points (η → 1/φ resp. η → γ); the smaller factor is
    // recovered from the exact identity γθτe = λ instead.
    let mut e = 1.0 - phi * h;
    let mut tau = 1.0 - h / gamma;
    if e <= tau {
        e = lambda / (gamma * theta * tau);
    } else {
        tau = lambda / (gamma * theta * e);
    }
    let core = RpCore { e, tau, theta };
    let (re, rt) = rp_core_residual(sigma, ratios, lambda, &core)?;
    if re > RESIDUAL_GATE || rt > RESIDUAL_GATE {
        return Err(Error::Convergence {
            what: "solve_rp_core",
            iterations: 500,
            residual: re.max(rt),
        });
    }
    Ok(core)
}

/// Relative residuals of the two defining equations
/// 1/e = 1 + ψτ t̄r ΣK⁻¹ and 1/τ = 1 + t̄r K₀K⁻¹.
pub fn rp_core_residual(
    sigma: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    core: &RpCore,
) -> Result<(f64, f64)> {
    let gamma = ratios.gamma()?;
    let psi = ratios.psi()?;
    let d = sigma.dim() as f64;
    let (mut tr_sigma_kinv, mut tr_k0_kinv) = (0.0, 0.0);
    for &lam in sigma.eigenvalues() {
        let k = gamma * core.tau * core.e * lam + lambda;
        tr_sigma_kinv += lam / k;
        tr_k0_kinv += core.e * lam / k;
    }
    tr_sigma_kinv /= d;
    tr_k0_kinv /= d;
    let re = (1.0 / core.e - (1.0 + psi * core.tau * tr_sigma_kinv)).abs() * core.e;
    let rt = (1.0 / core.tau - (1.0 + tr_k0_kinv)).abs() * core.tau;
    Ok((re, rt))
}

/// Full random projections fixed point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RpFixedPoint {
    pub e: f64,
    pub tau: f64,
    pub u: f64,
    pub omega: f64,
    pub theta: f64,
    /// ω′ = ω/(γτ²).
    pub omega_prime: f64,
}

/// Completes the fixed point with (u, ω′), solved exactly from the 2×2
/// linear system
///   u = φ I₂,₂(θ)(1 + u) + φ I₁,₂(θ) ω′,
///   γω′ = I₂,₂(θ) ω′ + θ² I₁,₂(θ)(1 + u).
pub fn solve_u_omega(
    sigma: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    core: &RpCore,
) -> Result<RpFixedPoint> {
    let phi = ratios.phi;
    let gamma = ratios.gamma()?;
    let theta = core.theta;
    let i22 = sigma.spectral_moment_normalized(2, 2, theta)?;
    let i12 = sigma.spectral_moment_normalized(1, 2, theta)?;

    let z = i22 * (gamma - i22) + theta * theta * i12 * i12;
    let det = gamma - phi * z - i22;
    if det.abs() < 1e-14 * gamma.max(1.0) {
        return Err(Error::Threshold {
            psi: ratios.psi()?,
            detail: format!("(u, omega') system is singular (det = {det:.3e})"),
        });
    }
    let u = phi * z / det;
    let omega_prime = theta * theta * i12 / det;
    let _ = lambda;
    Ok(RpFixedPoint {
        e: core.e,
        tau: core.tau,
        u,
        omega: gamma * core.tau * core.tau * omega_prime,
        theta,
        omega_prime,
    })
}

/// Residuals of the (u, ω′) linear system, relative to max(1, |u|).
pub fn u_omega_residual(
    sigma: &Spectrum,
    ratios: &ScalingRatios,
    fp: &RpFixedPoint,
) -> Result<(f64, f64)> {
    let phi = ratios.phi;
    let gamma = ratios.gamma()?;
    let i22 = sigma.spectral_moment_normalized(2, 2, fp.theta)?;
    let i12 = sigma.spectral_moment_normalized(1, 2, fp.theta)?;
    let scale_u = fp.u.abs().max(1.0);
    let r1 = (fp.u - phi * i22 * (1.0 + fp.u) - phi * i12 * fp.omega_prime).abs() / scale_u;
    let scale_w = (gamma * fp.omega_prime).abs().max(1.0);
    let r2 = (gamma * fp.omega_prime
        - i22 * fp.omega_prime
        - fp.theta * fp.theta * i12 * (1.0 + fp.u))
        .abs()
        / scale_w;
    Ok((r1, r2))
}

/// Damped Picard iteration on the raw defining equations of (u, ω):
///   u = ψe² t̄r Σ(γτ²(1+u)Σ + ωI)K⁻²,
///   ω = τ² t̄r (γω K₀² + λ²(1+u)Σ) K⁻².
/// Kept as an independent arbitration path for the linear-system solution.
pub fn picard_u_omega(
    sigma: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    core: &RpCore,
) -> Result<(f64, f64)> {
    let psi = ratios.psi()?;
    let gamma = ratios.gamma()?;
    let d = sigma.dim() as f64;
    let (e, tau) = (core.e, core.tau);
    let step = |u: f64, omega: f64| {
        let (mut su, mut sw) = (0.0, 0.0);
        for &lam in sigma.eigenvalues() {
            let k = gamma * tau * e * lam + lambda;
            let k2 = k * k;
            su += lam * (gamma * tau * tau * (1.0 + u) * lam + omega) / k2;
            sw += (gamma * omega * e * e * lam * lam + lambda * lambda * (1.0 + u) * lam) / k2;
        }
        (psi * e * e * su / d, tau * tau * sw / d)
    };
    let (mut u, mut omega) = (0.0, 0.0);
    for _ in 0..MAX_ITERS {
        let (nu, nw) = step(u, omega);
        let res = (nu - u).abs() / nu.abs().max(1.0) + (nw - omega).abs() / nw.abs().max(1.0);
        u = (1.0 - DAMPING) * u + DAMPING * nu;
        omega = (1.0 - DAMPING) * omega + DAMPING * nw;
        if res <= RESIDUAL_TOL {
            return Ok((u, omega));
        }
    }
    Err(Error::Convergence {
        what: "picard_u_omega",
        iterations: MAX_ITERS,
        residual: f64::NAN,
    })
}

/// Which closed-form numerator for ω′ agrees with the raw Picard solution.
///
/// Eliminating the linear system gives ω′ = θ²I₁,₂/(γ − φz − I₂,₂); an
/// alternative quotient replaces I₁,₂ by I₂,₂ in the numerator. On any
/// spectrum where the two moments differ, exactly one variant can match.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OmegaArbitration {
    pub u_linear: f64,
    pub omega_prime_linear: f64,
    pub u_picard: f64,
    pub omega_prime_picard: f64,
    /// ω′ = θ²I₁,₂(θ)/(γ − φz − I₂,₂), the eliminated form.
    pub variant_i12: f64,
    /// ω′ = θ²I₂,₂(θ)/(γ − φz − I₂,₂), the alternative quotient.
    pub variant_i22: f64,
    pub i12_matches: bool,
    pub i22_matches: bool,
}

/// Runs both solution paths and reports which ω′ quotient they support.
pub fn arbitrate_omega_prime(
    sigma: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
) -> Result<OmegaArbitration> {
    let core = solve_rp_core(sigma, ratios, lambda)?;
    let fp = solve_u_omega(sigma, ratios, lambda, &core)?;
    let (u_p, omega_p) = picard_u_omega(sigma, ratios, lambda, &core)?;
    let gamma = ratios.gamma()?;
    let omega_prime_picard = omega_p / (gamma * core.tau * core.tau);

    let theta = core.theta;
    let i22 = sigma.spectral_moment_normalized(2, 2, theta)?;
    let i12 = sigma.spectral_moment_normalized(1, 2, theta)?;
    let z = i22 * (gamma - i22) + theta * theta * i12 * i12;
    let det = gamma - ratios.phi * z - i22;
    let variant_i12 = theta * theta * i12 / det;
    let variant_i22 = theta * theta * i22 / det;

    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    Ok(OmegaArbitration {
        u_linear: fp.u,
        omega_prime_linear: fp.omega_prime,
        u_picard: u_p,
        omega_prime_picard,
        variant_i12,
        variant_i22,
        i12_matches: rel(variant_i12, omega_prime_picard) < 1e-6,
        i22_matches: rel(variant_i22, omega_prime_picard) < 1e-6,
    })
}

/// Two-covariance classical state: (e₁, e₂) plus the (u₁, u₂) pair induced
/// by a right-hand-side matrix B.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeneralClassicalState {
    pub e1: f64,
    pub e2: f64,
    pub u1: f64,
    pub u2: f64,
}

fn check_dims(sigma1: &Spectrum, sigma2: &Spectrum, b: &Spectrum) -> Result<usize> {
    let d = sigma1.dim();
    if sigma2.dim() != d || b.dim() != d {
        return Err(Error::Domain(format!(
            "dimension mismatch: sigma1 {}, sigma2 {}, b {}",
            d,
            sigma2.dim(),
            b.dim()
        )));
    }
    Ok(d)
}

/// Solves the coupled pair
///   e_j = 1 / (1 + φ t̄r Σ_j K⁻¹),  K = p₁e₁Σ₁ + p₂e₂Σ₂ + λI,
/// by damped Picard iteration, then the linear 2×2 system
///   u_j = φ e_j² t̄r Σ_j (p₁u₁Σ₁ + p₂u₂Σ₂ + B) K⁻².
pub fn solve_general_classical(
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    b: &Spectrum,
) -> Result<GeneralClassicalState> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    let d = check_dims(sigma1, sigma2, b)? as f64;
    let (phi, p1, p2) = (ratios.phi, ratios.p1(), ratios.p2);
    let s1 = sigma1.eigenvalues();
    let s2 = sigma2.eigenvalues();

    let step = |e1: f64, e2: f64| {
        let (mut t1, mut t2) = (0.0, 0.0);
        for j in 0..s1.len() {
            let k = p1 * e1 * s1[j] + p2 * e2 * s2[j] + lambda;
            t1 += s1[j] / k;
            t2 += s2[j] / k;
        }
        (1.0 / (1.0 + phi * t1 / d), 1.0 / (1.0 + phi * t2 / d))
    };

    let (mut e1, mut e2) = (1.0, 1.0);
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let (n1, n2) = step(e1, e2);
        let res = (n1 - e1).abs() / n1 + (n2 - e2).abs() / n2;
        e1 = (1.0 - DAMPING) * e1 + DAMPING * n1;
        e2 = (1.0 - DAMPING) * e2 + DAMPING * n2;
        if res <= RESIDUAL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            what: "solve_general_classical (e1, e2)",
            iterations: MAX_ITERS,
            residual: f64::NAN,
        });
    }

    // Normalized traces t̄r Σ_a X K⁻² feeding the linear system in (u₁, u₂).
    let (mut a11, mut a12, mut b1) = (0.0, 0.0, 0.0);
    let (mut a21, mut a22, mut b2) = (0.0, 0.0, 0.0);
    for j in 0..s1.len() {
        let k = p1 * e1 * s1[j] + p2 * e2 * s2[j] + lambda;
        let k2 = k * k;
        a11 += s1[j] * s1[j] / k2;
        a12 += s1[j] * s2[j] / k2;
        a22 += s2[j] * s2[j] / k2;
        a21 += s2[j] * s1[j] / k2;
        b1 += s1[j] * b.eigenvalues()[j] / k2;
        b2 += s2[j] * b.eigenvalues()[j] / k2;
    }
    let c1 = phi * e1 * e1 / d;
    let c2 = phi * e2 * e2 / d;
    // (I - A) u = rhs with A_jk = c_j p_k tr(Σ_jΣ_k K⁻²).
    let m11 = 1.0 - c1 * p1 * a11;
    let m12 = -c1 * p2 * a12;
    let m21 = -c2 * p1 * a21;
    let m22 = 1.0 - c2 * p2 * a22;
    let det = m11 * m22 - m12 * m21;
    if det.abs() < 1e-14 {
        return Err(Error::Threshold {
            psi: ratios.phi,
            detail: format!("(u1, u2) system is singular (det = {det:.3e})"),
        });
    }
    let r1 = c1 * b1;
    let r2 = c2 * b2;
    let u1 = (r1 * m22 - m12 * r2) / det;
    let u2 = (m11 * r2 - m21 * r1) / det;
    Ok(GeneralClassicalState { e1, e2, u1, u2 })
}

/// Relative residuals of all four defining equations of the general
/// classical state.
pub fn general_classical_residual(
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    b: &Spectrum,
    st: &GeneralClassicalState,
) -> Result<f64> {
    let d = sigma1.dim() as f64;
    let (phi, p1, p2) = (ratios.phi, ratios.p1(), ratios.p2);
    let s1 = sigma1.eigenvalues();
    let s2 = sigma2.eigenvalues();
    let (mut t1, mut t2, mut q1, mut q2) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..s1.len() {
        let k = p1 * st.e1 * s1[j] + p2 * st.e2 * s2[j] + lambda;
        t1 += s1[j] / k;
        t2 += s2[j] / k;
        let lp = (p1 * st.u1 * s1[j] + p2 * st.u2 * s2[j] + b.eigenvalues()[j]) / (k * k);
        q1 += s1[j] * lp;
        q2 += s2[j] * lp;
    }
    let r1 = (st.e1 - 1.0 / (1.0 + phi * t1 / d)).abs() / st.e1;
    let r2 = (st.e2 - 1.0 / (1.0 + phi * t2 / d)).abs() / st.e2;
    let r3 = (st.u1 - phi * st.e1 * st.e1 * q1 / d).abs() / st.u1.abs().max(1.0);
    let r4 = (st.u2 - phi * st.e2 * st.e2 * q2 / d).abs() / st.u2.abs().max(1.0);
    Ok(r1.max(r2).max(r3).max(r4))
}

/// Two-covariance projections state.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeneralProjectionsState {
    pub e1: f64,
    pub e2: f64,
    pub tau: f64,
    pub u1: f64,
    pub u2: f64,
    pub omega: f64,
}

/// Solves the projected two-covariance system: (e₁, e₂, τ) by damped Picard
/// on
///   e_j = 1/(1 + ψτ t̄r Σ_j K⁻¹),  τ = 1/(1 + t̄r K₀K⁻¹),
///   K₀ = p₁e₁Σ₁ + p₂e₂Σ₂,  K = γτK₀ + λI,
/// then (u₁, u₂, ω) from the linear system
///   u_j = ψ e_j² t̄r Σ_j (γτ²(p₁u₁Σ₁ + p₂u₂Σ₂ + B) + ωI) K⁻²,
///   ω  = τ² t̄r (γω K₀² + λ²(p₁u₁Σ₁ + p₂u₂Σ₂ + B)) K⁻².
pub fn solve_general_projections(
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    b: &Spectrum,
) -> Result<GeneralProjectionsState> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be > 0")));
    }
    let d = check_dims(sigma1, sigma2, b)? as f64;
    let (p1, p2) = (ratios.p1(), ratios.p2);
    let gamma = ratios.gamma()?;
    let psi = ratios.psi()?;
    let s1 = sigma1.eigenvalues();
    let s2 = sigma2.eigenvalues();

    let step = |e1: f64, e2: f64, tau: f64| {
        let (mut t1, mut t2, mut t0) = (0.0, 0.0, 0.0);
        for j in 0..s1.len() {
            let k0 = p1 * e1 * s1[j] + p2 * e2 * s2[j];
            let k = gamma * tau * k0 + lambda;
            t1 += s1[j] / k;
            t2 += s2[j] / k;
            t0 += k0 / k;
        }
        (
            1.0 / (1.0 + psi * tau * t1 / d),
            1.0 / (1.0 + psi * tau * t2 / d),
            1.0 / (1.0 + t0 / d),
        )
    };

    let (mut e1, mut e2, mut tau) = (1.0, 1.0, 1.0);
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let (n1, n2, nt) = step(e1, e2, tau);
        let res = (n1 - e1).abs() / n1 + (n2 - e2).abs() / n2 + (nt - tau).abs() / nt;
        e1 = (1.0 - DAMPING) * e1 + DAMPING * n1;
        e2 = (1.0 - DAMPING) * e2 + DAMPING * n2;
        tau = (1.0 - DAMPING) * tau + DAMPING * nt;
        if res <= RESIDUAL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            what: "solve_general_projections (e1, e2, tau)",
            iterations: MAX_ITERS,
            residual: f64::NAN,
        });
    }

    // Traces for the 3×3 linear system in (u₁, u₂, ω).
    let bs = b.eigenvalues();
    let (mut a11, mut a12, mut a1b, mut a1i) = (0.0, 0.0, 0.0, 0.0);
    let (mut a21, mut a22, mut a2b, mut a2i) = (0.0, 0.0, 0.0, 0.0);
    let (mut k0k0, mut w1, mut w2, mut wb) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..s1.len() {
        let k0 = p1 * e1 * s1[j] + p2 * e2 * s2[j];
        let k = gamma * tau * k0 + lambda;
        let k2 = k * k;
        a11 += s1[j] * s1[j] / k2;
        a12 += s1[j] * s2[j] / k2;
        a1b += s1[j] * bs[j] / k2;
        a1i += s1[j] / k2;
        a21 += s2[j] * s1[j] / k2;
        a22 += s2[j] * s2[j] / k2;
        a2b += s2[j] * bs[j] / k2;
        a2i += s2[j] / k2;
        k0k0 += k0 * k0 / k2;
        w1 += s1[j] / k2;
        w2 += s2[j] / k2;
        wb += bs[j] / k2;
    }
    let gt2 = gamma * tau * tau;
    let c1 = psi * e1 * e1 / d;
    let c2 = psi * e2 * e2 / d;
    let cw = tau * tau / d;
    let l2 = lambda * lambda;
    // Rows: u1, u2, omega; unknown order (u1, u2, omega).
    let m = [
        [1.0 - c1 * gt2 * p1 * a11, -c1 * gt2 * p2 * a12, -c1 * a1i],
        [-c2 * gt2 * p1 * a21, 1.0 - c2 * gt2 * p2 * a22, -c2 * a2i],
        [-cw * l2 * p1 * w1, -cw * l2 * p2 * w2, 1.0 - cw * gamma * k0k0],
    ];
    let rhs = [c1 * gt2 * a1b, c2 * gt2 * a2b, cw * l2 * wb];
    let sol = solve3(&m, &rhs).ok_or_else(|| Error::Threshold {
        psi,
        detail: "(u1, u2, omega) system is singular".into(),
    })?;
    Ok(GeneralProjectionsState {
        e1,
        e2,
        tau,
        u1: sol[0],
        u2: sol[1],
        omega: sol[2],
    })
}

/// Relative residuals of all six defining equations of the projections
/// state.
pub fn general_projections_residual(
    sigma1: &Spectrum,
    sigma2: &Spectrum,
    ratios: &ScalingRatios,
    lambda: f64,
    b: &Spectrum,
    st: &GeneralProjectionsState,
) -> Result<f64> {
    let d = sigma1.dim() as f64;
    let (p1, p2) = (ratios.p1(), ratios.p2);
    let gamma = ratios.gamma()?;
    let psi = ratios.psi()?;
    let s1 = sigma1.eigenvalues();
    let s2 = sigma2.eigenvalues();
    let bs = b.eigenvalues();
    let gt2 = gamma * st.tau * st.tau;
    let (mut t1, mut t2, mut t0) = (0.0, 0.0, 0.0);
    let (mut q1, mut q2, mut qw) = (0.0, 0.0, 0.0);
    for j in 0..s1.len() {
        let k0 = p1 * st.e1 * s1[j] + p2 * st.e2 * s2[j];
        let k = gamma * st.tau * k0 + lambda;
        t1 += s1[j] / k;
        t2 += s2[j] / k;
        t0 += k0 / k;
        let l = p1 * st.u1 * s1[j] + p2 * st.u2 * s2[j] + bs[j];
        let k2 = k * k;
        q1 += s1[j] * (gt2 * l + st.omega) / k2;
        q2 += s2[j] * (gt2 * l + st.omega) / k2;
        qw += (gamma * st.omega * k0 * k0 + lambda * lambda * l) / k2;
    }
    let r1 = (st.e1 - 1.0 / (1.0 + psi * st.tau * t1 / d)).abs() / st.e1;
    let r2 = (st.e2 - 1.0 / (1.0 + psi * st.tau * t2 / d)).abs() / st.e2;
    let rt = (st.tau - 1.0 / (1.0 + t0 / d)).abs() / st.tau;
    let ru1 = (st.u1 - psi * st.e1 * st.e1 * q1 / d).abs() / st.u1.abs().max(1.0);
    let ru2 = (st.u2 - psi * st.e2 * st.e2 * q2 / d).abs() / st.u2.abs().max(1.0);
    let rw = (st.omega - st.tau * st.tau * qw / d).abs() / st.omega.abs().max(1.0);
    Ok(r1.max(r2).max(rt).max(ru1).max(ru2).max(rw))
}

fn solve3(m: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let mut a = *m;
    let mut b = *rhs;
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        if a[row][row].abs() < 1e-300 {
            return None;
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Ridgeless (λ → 0⁺) limits of the projections fixed point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RidgelessLimits {
    pub theta0: f64,
    pub kappa0: f64,
    pub chi0: f64,
    pub tau0: f64,
    pub e0: f64,
    pub eta0: f64,
}

/// λ-continuation of the rp core over λ ∈ {1e−4, 1e−6, 1e−8} with polynomial
/// extrapolation to zero; the remaining fields follow from
///   η₀ ≤ min(γ, 1/φ), τ₀ = 1 − η₀/γ, e₀ = 1 − φη₀,
///   χ₀ = (1 − ψ)₊ γθ₀, κ₀ = (ψ − 1)₊ θ₀/φ.
pub fn ridgeless_limits(sigma: &Spectrum, ratios: &ScalingRatios) -> Result<RidgelessLimits> {
    let gamma = ratios.gamma()?;
    let psi = ratios.psi()?;
    let phi = ratios.phi;
    if (psi - 1.0).abs() < 1e-3 {
        return Err(Error::Threshold {
            psi,
            detail: "ridgeless limits diverge at the interpolation threshold".into(),
        });
    }
    let lambdas = [1e-4, 1e-6, 1e-8];
    let mut pts = [(0.0f64, 0.0f64); 3];
    for (i, &lam) in lambdas.iter().enumerate() {
        pts[i] = (lam, solve_rp_core(sigma, ratios, lam)?.theta);
    }
    // Neville extrapolation to λ = 0.
    let mut p = [pts[0].1, pts[1].1, pts[2].1];
    for level in 1..3 {
        for i in 0..3 - level {
            let (xi, xj) = (pts[i].0, pts[i + level].0);
            p[i] = (xi * p[i + 1] - xj * p[i]) / (xi - xj);
        }
    }
    let theta0 = p[0].max(0.0);
    let eta0 = sigma
        .spectral_moment_normalized(1, 1, theta0)?
        .min(gamma)
        .min(1.0 / phi);
    Ok(RidgelessLimits {
        theta0,
        kappa0: (psi - 1.0).max(0.0) * theta0 / phi,
        chi0: (1.0 - psi).max(0.0) * gamma * theta0,
        tau0: 1.0 - eta0 / gamma,
        e0: 1.0 - phi * eta0,
        eta0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{power_law_spectrum, SpectrumRole};
    use approx::assert_relative_eq;

    fn identity(d: usize) -> Spectrum {
        Spectrum::scaled_identity(d, 1.0, SpectrumRole::Covariance).unwrap()
    }

    #[test]
    fn kappa_tends_to_lambda_for_tiny_phi() {
        // n huge, d fixed: df1/n -> 0 forces kappa -> lambda.
        let sigma = identity(4);
        let fp = solve_kappa(&sigma, 1e9, 0.3).unwrap();
        assert_relative_eq!(fp.kappa, 0.3, max_relative = 1e-8);
        assert!(fp.u < 1e-8);
    }

    #[test]
    fn kappa_golden_ratio_at_phi_one() {
        // Sigma = I, phi = 1, lambda = 1: kappa solves kappa^2 - kappa - 1 = 0.
        let d = 400;
        let sigma = identity(d);
        let fp = solve_kappa(&sigma, d as f64, 1.0).unwrap();
        assert_relative_eq!(fp.kappa, (1.0 + 5.0f64.sqrt()) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn kappa_ridgeless_overparametrized() {
        // Sigma = I, phi = 2: kappa -> phi - 1 = 1 as lambda -> 0+.
        let d = 500;
        let sigma = identity(d);
        let fp = solve_kappa(&sigma, d as f64 / 2.0, LAMBDA_FLOOR).unwrap();
        assert_relative_eq!(fp.kappa, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn kappa_residual_and_monotonicity() {
        let sigma = power_law_spectrum(300, 1.0).unwrap();
        let n = 250.0;
        let mut last = 0.0;
        for i in 0..30 {
            let lambda = 1e-6 * 2.0f64.powi(i);
            let fp = solve_kappa(&sigma, n, lambda).unwrap();
            assert!(fp.kappa > last, "kappa must increase with lambda");
            assert!(fp.kappa >= lambda);
            assert!(kappa_residual(&sigma, n, lambda, fp.kappa).unwrap() <= 1e-10);
            last = fp.kappa;
        }
    }

    #[test]
    fn rp_core_matches_kappa_at_huge_gamma() {
        // The reduction to the classical model holds where tiny λ has
        // stopped regularizing (here φ > 1, λ = 1e-8): the projection
        // rescales the effective regularization by 1/γ, so at moderate λ
        // the two models deliberately differ.
        let sigma = power_law_spectrum(200, 1.0).unwrap();
        let ratios = ScalingRatios::projections(2.0, 0.3, 1e6).unwrap();
        let core = solve_rp_core(&sigma, &ratios, 1e-8).unwrap();
        let fp = solve_kappa(&sigma, 200.0 / 2.0, 1e-8).unwrap();
        assert_relative_eq!(core.theta, fp.kappa, max_relative = 1e-3);
    }

    #[test]
    fn rp_core_ridgeless_endpoints() {
        // psi = 2 (gamma = 2, phi = 1): e -> 0, tau -> 1 - 1/psi = 0.5.
        let sigma = identity(300);
        let ratios = ScalingRatios::projections(1.0, 0.3, 2.0).unwrap();
        let core = solve_rp_core(&sigma, &ratios, 1e-10).unwrap();
        assert!(core.e < 1e-3, "e = {} should vanish", core.e);
        assert_relative_eq!(core.tau, 0.5, max_relative = 1e-3);
        let (re, rt) = rp_core_residual(&sigma, &ratios, 1e-10, &core).unwrap();
        assert!(re <= 1e-10 && rt <= 1e-10);
    }

    #[test]
    fn rp_core_agrees_with_scalar_bisection_oracle() {
        // d = 1: both defining equations become scalar rational equations.
        // Oracle: damped Picard directly on (e, tau).
        let sigma = Spectrum::new(vec![1.0], SpectrumRole::Covariance).unwrap();
        for (phi, gamma, lambda) in [(0.7, 1.5, 0.2), (1.3, 0.4, 0.05), (2.0, 1.0, 1.0)] {
            let ratios = ScalingRatios::projections(phi, 0.5, gamma).unwrap();
            let psi = ratios.psi().unwrap();
            let (mut e, mut tau) = (1.0f64, 1.0f64);
            for _ in 0..200_000 {
                let k = gamma * tau * e + lambda;
                let ne = 1.0 / (1.0 + psi * tau / k);
                let nt = 1.0 / (1.0 + e / k);
                let res = (ne - e).abs() + (nt - tau).abs();
                e = 0.5 * e + 0.5 * ne;
                tau = 0.5 * tau + 0.5 * nt;
                if res < 1e-15 {
                    break;
                }
            }
            let core = solve_rp_core(&sigma, &ratios, lambda).unwrap();
            assert_relative_eq!(core.e, e, max_relative = 1e-10);
            assert_relative_eq!(core.tau, tau, max_relative = 1e-10);
        }
    }

    #[test]
    fn theta_increases_with_lambda() {
        let sigma = power_law_spectrum(150, 1.0).unwrap();
        let ratios = ScalingRatios::projections(1.2, 0.4, 1.0).unwrap();
        let mut last = 0.0;
        for i in 0..25 {
            let lambda = 1e-6 * 3.0f64.powi(i);
            let core = solve_rp_core(&sigma, &ratios, lambda).unwrap();
            assert!(core.theta > last);
            last = core.theta;
        }
    }

    #[test]
    fn u_omega_linear_vs_picard() {
        let sigma = power_law_spectrum(120, 1.0).unwrap();
        let ratios = ScalingRatios::projections(1.2, 0.4, 1.0).unwrap();
        let core = solve_rp_core(&sigma, &ratios, 0.1).unwrap();
        let fp = solve_u_omega(&sigma, &ratios, 0.1, &core).unwrap();
        let (u_p, omega_p) = picard_u_omega(&sigma, &ratios, 0.1, &core).unwrap();
        assert_relative_eq!(fp.u, u_p, max_relative = 1e-8);
        assert_relative_eq!(fp.omega, omega_p, max_relative = 1e-8);
        let (r1, r2) = u_omega_residual(&sigma, &ratios, &fp).unwrap();
        assert!(r1 <= 1e-10 && r2 <= 1e-10);
    }

    #[test]
    fn u_omega_gamma_infinity_reduction() {
        let sigma = power_law_spectrum(200, 1.0).unwrap();
        let lambda = 1e-8;
        for phi in [0.5, 2.0] {
            let ratios = ScalingRatios::projections(phi, 0.3, 1e6).unwrap();
            let core = solve_rp_core(&sigma, &ratios, lambda).unwrap();
            let fp = solve_u_omega(&sigma, &ratios, lambda, &core).unwrap();
            let cl = solve_kappa(&sigma, 200.0 / phi, lambda).unwrap();
            assert!(fp.omega_prime < 1e-5);
            assert_relative_eq!(fp.u, cl.u, max_relative = 1e-3);
        }
    }

    #[test]
    fn u_omega_vanish_for_huge_lambda() {
        let sigma = power_law_spectrum(80, 1.0).unwrap();
        let ratios = ScalingRatios::projections(1.0, 0.5, 2.0).unwrap();
        let core = solve_rp_core(&sigma, &ratios, 1e6).unwrap();
        let fp = solve_u_omega(&sigma, &ratios, 1e6, &core).unwrap();
        assert!(fp.u < 1e-4);
        // omega' stays bounded by theta^2-scale effects; u must die.
        assert!(fp.u >= 0.0);
    }

    #[test]
    fn omega_prime_arbitration_supports_i12_numerator() {
        // Non-isotropic spectrum so I_{1,2} and I_{2,2} differ.
        let sigma = power_law_spectrum(100, 1.0).unwrap();
        let ratios = ScalingRatios::projections(1.2, 0.4, 1.5).unwrap();
        let rep = arbitrate_omega_prime(&sigma, &ratios, 0.3).unwrap();
        assert!(rep.i12_matches, "eliminated I_{{1,2}} form must match Picard");
        assert!(!rep.i22_matches, "displayed I_{{2,2}} quotient should not match");
    }

    #[test]
    fn general_classical_symmetric_reduction() {
        let sigma = power_law_spectrum(150, 1.0).unwrap();
        let ratios = ScalingRatios::classical(0.6, 0.3).unwrap();
        let lambda = 0.15;
        let st = solve_general_classical(&sigma, &sigma, &ratios, lambda, &sigma).unwrap();
        assert_relative_eq!(st.e1, st.e2, max_relative = 1e-12);
        let fp = solve_kappa(&sigma, 150.0 / 0.6, lambda).unwrap();
        // kappa = lambda / e.
        assert_relative_eq!(lambda / st.e1, fp.kappa, max_relative = 1e-10);
        assert_relative_eq!(st.u1, fp.u, max_relative = 1e-10);
        let res =
            general_classical_residual(&sigma, &sigma, &ratios, lambda, &sigma, &st).unwrap();
        assert!(res <= 1e-10);
    }

    #[test]
    fn general_classical_surrogate_instance_phi_to_zero() {
        // Cor. surrogate instance at phi -> 0: e1 = e2 = 1, u1 = u2 = 0.
        let d = 60;
        let alpha = 0.3;
        let (p1, p2) = (0.6, 0.4);
        let base = power_law_spectrum(d, 1.0).unwrap();
        let s1 = Spectrum::new(
            base.eigenvalues().iter().map(|&v| (1.0 - alpha) * v / p1).collect(),
            SpectrumRole::Covariance,
        )
        .unwrap();
        let s2 = Spectrum::new(
            base.eigenvalues().iter().map(|&v| alpha * v / p2).collect(),
            SpectrumRole::Covariance,
        )
        .unwrap();
        let ratios = ScalingRatios::classical(1e-7, p2).unwrap();
        let st = solve_general_classical(&s1, &s2, &ratios, 1e-4, &base).unwrap();
        assert_relative_eq!(st.e1, 1.0, max_relative = 1e-5);
        assert_relative_eq!(st.e2, 1.0, max_relative = 1e-5);
        assert!(st.u1.abs() < 1e-5 && st.u2.abs() < 1e-5);
    }

    #[test]
    fn general_classical_scalar_bisection_oracle() {
        // d = 1, sigma1 = [s1], sigma2 = [s2]: e1 solves a scalar equation
        // found by bisection after eliminating e2.
        let (s1v, s2v, phi, p2, lambda) = (1.0, 1.5, 0.8, 0.4, 0.3);
        let p1 = 1.0 - p2;
        let s1 = Spectrum::new(vec![s1v], SpectrumRole::Covariance).unwrap();
        let s2 = Spectrum::new(vec![s2v], SpectrumRole::Covariance).unwrap();
        let ratios = ScalingRatios::classical(phi, p2).unwrap();
        let b = Spectrum::new(vec![1.0], SpectrumRole::Covariance).unwrap();
        let st = solve_general_classical(&s1, &s2, &ratios, lambda, &b).unwrap();

        // Oracle: for fixed e1, e2(e1) solves its own scalar equation by
        // bisection; outer bisection on f(e1) = e1(1 + phi s1/K) - 1.
        let e2_of = |e1: f64| {
            let (mut lo, mut hi) = (1e-12, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let k = p1 * e1 * s1v + p2 * mid * s2v + lambda;
                if mid * (1.0 + phi * s2v / k) > 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let (mut lo, mut hi) = (1e-12, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let k = p1 * mid * s1v + p2 * e2_of(mid) * s2v + lambda;
            if mid * (1.0 + phi * s1v / k) > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let e1_oracle = 0.5 * (lo + hi);
        assert_relative_eq!(st.e1, e1_oracle, max_relative = 1e-10);
    }

    #[test]
    fn general_projections_symmetric_matches_rp_solver() {
        let sigma = power_law_spectrum(100, 1.0).unwrap();
        let ratios = ScalingRatios::projections(1.2, 0.4, 1.0).unwrap();
        let lambda = 0.1;
        let st = solve_general_projections(&sigma, &sigma, &ratios, lambda, &sigma).unwrap();
        let core = solve_rp_core(&sigma, &ratios, lambda).unwrap();
        let fp = solve_u_omega(&sigma, &ratios, lambda, &core).unwrap();
        assert_relative_eq!(st.e1, core.e, max_relative = 1e-10);
        assert_relative_eq!(st.tau, core.tau, max_relative = 1e-10);
        assert_relative_eq!(st.u1, fp.u, max_relative = 1e-9);
        assert_relative_eq!(st.omega, fp.omega, max_relative = 1e-9);
        let res =
            general_projections_residual(&sigma, &sigma, &ratios, lambda, &sigma, &st).unwrap();
        assert!(res <= 1e-10);
    }

    #[test]
    fn ridgeless_limit_values() {
        // psi = 2, gamma = 2, phi = 1: eta0 = 1, e0 = 0, tau0 = 0.5.
        let sigma = identity(200);
        let ratios = ScalingRatios::projections(1.0, 0.3, 2.0).unwrap();
        let lim = ridgeless_limits(&sigma, &ratios).unwrap();
        assert!((lim.eta0 - 1.0).abs() < 1e-3);
        assert!(lim.e0.abs() < 1e-3);
        assert!((lim.tau0 - 0.5).abs() < 1e-3);

        // psi = 0.5 via gamma = 0.5, phi = 1: e0 = 1 - psi = 0.5.
        let ratios = ScalingRatios::projections(1.0, 0.3, 0.5).unwrap();
        let lim = ridgeless_limits(&sigma, &ratios).unwrap();
        assert!((lim.e0 - 0.5).abs() < 1e-3);
        // Continuation theta0 close to the lambda = 1e-8 evaluation.
        let core = solve_rp_core(&sigma, &ratios, 1e-8).unwrap();
        assert_relative_eq!(lim.theta0, core.theta, max_relative = 1e-4);

        let near = ScalingRatios::projections(1.0, 0.3, 1.0).unwrap();
        assert!(matches!(
            ridgeless_limits(&sigma, &near),
            Err(Error::Threshold { .. })
        ));
    }
}
