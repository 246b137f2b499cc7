use collapse_core::fixed_point::*;
use collapse_core::spectra::*;

fn main() {
    let sigma = power_law_spectrum(200, 1.0).unwrap();
    // phi > 1, tiny lambda: both should sit at the ridgeless point.
    for (phi, lam, gamma) in [(2.0, 1e-8, 1e4), (1.2, 1e-8, 1e4), (2.0, 1e-8, 1e6), (0.5, 1e-8, 1e4), (2.0, 0.1, 1e6)] {
        let ratios = ScalingRatios::projections(phi, 0.3, gamma).unwrap();
        let core = solve_rp_core(&sigma, &ratios, lam).unwrap();
        let cl = solve_kappa(&sigma, 200.0 / phi, lam).unwrap();
        let fp = solve_u_omega(&sigma, &ratios, lam, &core).unwrap();
        println!("phi={phi} lam={lam:.0e} gamma={gamma:.0e}: theta={:.8e} kappa={:.8e} rel={:.2e} | u_rp={:.6e} u_cl={:.6e} rel={:.2e} | omega'={:.3e}",
            core.theta, cl.kappa, (core.theta - cl.kappa).abs() / cl.kappa,
            fp.u, cl.u, (fp.u - cl.u).abs() / cl.u.max(1e-300), fp.omega_prime);
    }
    // ridgeless check gamma=0.5 phi=1
    let sigma_i = Spectrum::scaled_identity(200, 1.0, SpectrumRole::Covariance).unwrap();
    let ratios = ScalingRatios::projections(1.0, 0.3, 0.5).unwrap();
    let lim = ridgeless_limits(&sigma_i, &ratios).unwrap();
    let core8 = solve_rp_core(&sigma_i, &ratios, 1e-8).unwrap();
    println!("gamma=0.5 phi=1: theta0={:.10e} theta(1e-8)={:.10e} e0={:.6} tau0={:.6} eta0={:.6}", lim.theta0, core8.theta, lim.e0, lim.tau0, lim.eta0);
    let ratios2 = ScalingRatios::projections(1.0, 0.3, 2.0).unwrap();
    let lim2 = ridgeless_limits(&sigma_i, &ratios2).unwrap();
    println!("gamma=2 phi=1: theta0={:.6e} eta0={:.8} e0={:.6e} tau0={:.8}", lim2.theta0, lim2.eta0, lim2.e0, lim2.tau0);
}
