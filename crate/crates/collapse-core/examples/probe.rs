use collapse_core::risk::*;
use collapse_core::spectra::*;

fn main() {
    let d = 600;
    let sigma = power_law_spectrum(d, 1.0).unwrap();
    for c2 in [0.0, 0.5] {
        let model = IsotropicParams::new(1.0, c2).unwrap()
            .model_on(&sigma, DeltaKind::InverseCovariance, 0.01, 0.01).unwrap();
        let e = |psi: f64, lam: f64| {
            let ratios = ScalingRatios::projections(1.2, 0.4, psi / 1.2).unwrap();
            rp_risk(&model, &ratios, lam, 500.0).unwrap().total
        };
        let denom = e(0.5, 1e-8).max(e(2.0, 1e-8));
        for lam in [1e-8, 1e-9, 1e-10, 1e-11, 1e-12] {
            println!("c2={c2} lambda={lam:.0e}: E(1)={:.4e} ratio={:.1}", e(1.0, lam), e(1.0, lam) / denom);
        }
    }
}
