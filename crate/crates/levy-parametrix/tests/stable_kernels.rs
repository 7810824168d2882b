use std::f64::consts::PI;
use std::sync::Mutex;

use levy_parametrix::stable_kernels::{build_profile, default_radius_max, KernelKind, StableProfile};
use proptest::prelude::*;

// g, ∇g, Lg, ∇Lg, ∇²g from a 30-digit Fourier quadrature.
const REFERENCE: &[(f64, f64, [f64; 5])] = &[
    (0.5, 0.1, [0.47643560578945243, -1.7331966767577585, -0.60623187622735317, 5.3104695513962676, 8.1115857781738315]),
    (0.5, 0.7, [0.12432225141116772, -0.17534057836984206, -0.003167693104556559, 0.093283304756136193, 0.43434214908802289]),
    (0.8, 0.1, [0.35214082192550225, -0.16446351209489079, -0.41961808839501647, 0.58966434850551741, -1.4280445461463235]),
    (0.8, 0.7, [0.18576351902279307, -0.22343150714050979, -0.036701830030545271, 0.27141604482329711, 0.32818596917483127]),
    (0.8, 2.5, [0.03965754298764353, -0.023749111832889049, 0.024644045743223867, -0.0087088721128669838, 0.021786128542428674]),
    (0.8, 9.0, [0.0049166800520953799, -0.00093717031860417308, 0.0043973160191777222, -0.00078267531427052473, 0.00027783120984719622]),
    (1.5, 0.1, [0.28629417060002951, -0.021122661472577298, -0.18945460296851452, 0.042115004998859251, -0.20927184553134281]),
    (1.5, 0.7, [0.24078419849245477, -0.11882870754268811, -0.10506940214171539, 0.20287405697140878, -0.095219529102481344]),
    (1.5, 2.5, [0.051148894530671766, -0.051073627001119344, 0.051023448648084395, -0.02365330576417814, 0.055050885059402359]),
    (1.5, 9.0, [0.0013876787424352115, -0.00041323930480899251, 0.0015543166672304808, -0.00049040890831370417, 0.00017356577467650459]),
    (1.9, 0.1, [0.28171091801023618, -0.014891556862936897, -0.14748513806523289, 0.023470067422067469, -0.14810014376054396]),
    (1.9, 0.7, [0.24821801937009735, -0.091420753151645699, -0.096959732717865979, 0.13147515521120182, -0.095658983711417224]),
    (1.9, 2.5, [0.057441103666277819, -0.069910830325715512, 0.061755774814742612, -0.009820553478060729, 0.063392284903898564]),
    (1.9, 9.0, [0.00018369441492240566, -6.6556136873481528e-5, 0.00021858464049417268, -8.8893539932959183e-5, 3.3556666624398389e-5]),
];

const ORDER: [KernelKind; 5] =
    [KernelKind::G, KernelKind::GradG, KernelKind::FracLapG, KernelKind::GradFracLapG, KernelKind::HessG];

fn profile(alpha: f64) -> &'static StableProfile {
    static CACHE: Mutex<Vec<(u64, &'static StableProfile)>> = Mutex::new(Vec::new());
    let mut cache = CACHE.lock().unwrap();
    if let Some((_, p)) = cache.iter().find(|(a, _)| *a == alpha.to_bits()) {
        return p;
    }
    let p = Box::leak(Box::new(build_profile(alpha, 1, 4096, default_radius_max(alpha)).unwrap()));
    cache.push((alpha.to_bits(), p));
    p
}

#[test]
fn matches_reference_quadrature() {
    for &(alpha, x, want) in REFERENCE {
        let p = profile(alpha);
        for (kind, w) in ORDER.iter().zip(want) {
            let got = p.eval(*kind, x);
            let rel = if alpha < 0.8 { 1e-6 } else { 1e-8 };
            let tol = rel * w.abs().max(1e-3);
            assert!((got - w).abs() < tol, "alpha={alpha} x={x} {kind:?}: {got} vs {w}");
            let mirrored = p.eval(*kind, -x);
            let sign = if kind.is_odd() { -1.0 } else { 1.0 };
            assert_eq!(mirrored, sign * got);
        }
    }
}

#[test]
fn cauchy_profile_is_exact() {
    let p = profile(1.0);
    let mut x = -20.0;
    while x <= 20.0 {
        let g = 1.0 / (PI * (1.0 + x * x));
        let dg = -2.0 * x / (PI * (1.0 + x * x).powi(2));
        assert!((p.eval(KernelKind::G, x) - g).abs() < 1e-9, "x={x}");
        assert!((p.eval(KernelKind::GradG, x) - dg).abs() < 1e-9, "x={x}");
        x += 0.0137;
    }
    for x in [60.0, 300.0, 5000.0] {
        let g = 1.0 / (PI * (1.0 + x * x));
        assert!((p.eval(KernelKind::G, x) / g - 1.0).abs() < 1e-10);
    }
}

#[test]
fn half_stable_density_at_origin() {
    let p = profile(0.5);
    assert!((p.eval(KernelKind::G, 0.0) - 2.0 / PI).abs() < 1e-12);
}

#[test]
fn total_mass_is_one() {
    for alpha in [0.5, 0.8, 1.0, 1.5, 1.9] {
        let p = profile(alpha);
        assert!((p.mass() - 1.0).abs() < 1e-8, "alpha={alpha}: {}", p.mass());
        assert!((p.cdf(0.0) - 0.5).abs() < 1e-15);
        assert!(p.cdf(1e40) > 1.0 - 1e-8, "alpha={alpha}: {}", p.cdf(1e40));
        assert!((p.cdf(-3.0) + p.cdf(3.0) - 1.0).abs() < 1e-14);
    }
}

#[test]
fn characteristic_function_is_recovered() {
    for alpha in [1.0, 1.5] {
        let p = profile(alpha);
        for xi in [0.5f64, 1.0, 2.0] {
            let rule = levy_parametrix::quadrature::gl16();
            let mut s = 0.0;
            let span = 4000.0;
            let panels = 40000;
            let h = span / panels as f64;
            for k in 0..panels {
                let a = k as f64 * h;
                s += rule.integrate(a, a + h, |x| (xi * x).cos() * p.eval(KernelKind::G, x));
            }
            let want = (-xi.powf(alpha)).exp();
            assert!((2.0 * s - want).abs() < 1e-6, "alpha={alpha} xi={xi}: {}", 2.0 * s);
        }
    }
}

proptest! {
    #[test]
    fn kernels_have_definite_parity(x in -40.0f64..40.0) {
        let p = profile(1.3);
        for kind in ORDER {
            let sign = if kind.is_odd() { -1.0 } else { 1.0 };
            prop_assert_eq!(p.eval(kind, -x), sign * p.eval(kind, x));
        }
    }

    #[test]
    fn density_is_positive_and_decays(x in 0.0f64..400.0) {
        let p = profile(0.8);
        let g = p.eval(KernelKind::G, x);
        prop_assert!(g > 0.0);
        prop_assert!(p.eval(KernelKind::G, x + 0.5) < g);
    }

    #[test]
    fn tail_follows_power_law(x in 200.0f64..2000.0) {
        let p = profile(1.5);
        let ex = p.tail_exponents();
        for (i, kind) in KernelKind::ALL.iter().enumerate() {
            let a = p.eval(*kind, x).abs();
            let b = p.eval(*kind, 2.0 * x).abs();
            let slope = (a / b).log2();
            prop_assert!((slope - ex[i]).abs() < 0.05, "{:?}: {}", kind, slope);
        }
    }
}
