//! Acceptance suite. Prints one line per criterion and exits nonzero when any
//! criterion fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 2 13`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use levy_parametrix::coefficient_model::{CoefficientModel, ModelConfig, Regime};
use levy_parametrix::parametrix::{Parametrix, ParametrixConfig, TruncationCertificate};
use levy_parametrix::stable_kernels::{build_profile, default_radius_max, KernelKind, StableProfile};
use levy_parametrix::stable_sim::{self, Bandwidth, SimSpec};
use levy_parametrix::verification::{write_json_lines, CheckReport, ExprFunction, Suite, Verifier, VerifyConfig};

const BENCH_A: &str = "1 + 0.3*sin(x)";
const BENCH_B: &str = "0.5*cos(x)";
const REGIMES: [(f64, Regime); 5] =
    [(0.8, Regime::B), (0.8, Regime::C), (1.5, Regime::A), (1.5, Regime::B), (1.5, Regime::C)];
const MC_REGIMES: [(f64, Regime); 2] = [(0.8, Regime::B), (1.5, Regime::A)];

const FLAT_REL_TOL: f64 = 1e-6;
const FLAT_FLOOR: f64 = 1e-8;
const FLAT_RUNTIME: Duration = Duration::from_secs(10);
const CAUCHY_TOL: f64 = 1e-6;
const CAUCHY_RUNTIME: Duration = Duration::from_secs(5);
const MASS_TOL: f64 = 5e-3;
const MASS_RUNTIME: Duration = Duration::from_secs(300);
const POSITIVITY_TOL: f64 = 1e-6;
const CK_TOL: f64 = 2e-2;
const CK_FLOOR: f64 = 1e-4;
const TAIL_TOL: f64 = 1e-6;
const K_MAX: usize = 15;
const RESIDUE_DRIFT: f64 = 0.25;
const HULL_DRIFT: f64 = 2.0;
const HULL_INTEGRAL_TOL: f64 = 1e-6;
const PDE_TOL: f64 = 5e-2;
const DUHAMEL_TOL: f64 = 1e-2;
const MC_Z: f64 = 4.0;
const MC_RUNTIME: Duration = Duration::from_secs(600);
const MARTINGALE_SE: f64 = 4.0;
const MARTINGALE_ALLOWANCE: f64 = 0.02;

fn pinned_config() -> VerifyConfig {
    VerifyConfig {
        mass_times: vec![0.1, 0.5, 1.0],
        mass_points: vec![-2.0, 0.0, 2.0],
        mass_tol: MASS_TOL,
        positivity_tol: POSITIVITY_TOL,
        ck_pairs: vec![(1.0, 0.25), (1.0, 0.5), (0.5, 0.25)],
        ck_tol: CK_TOL,
        ck_floor: CK_FLOOR,
        duhamel_time: 0.5,
        duhamel_tol: DUHAMEL_TOL,
        pde_times: vec![0.25, 0.5, 1.0],
        eps_ladder: vec![0.2, 0.1, 0.05],
        pde_tol: PDE_TOL,
        residue_tol: RESIDUE_DRIFT,
        simulation: SimSpec {
            n_paths: 200_000,
            n_steps: 400,
            seed: 20240501,
            bandwidth: Bandwidth::Auto,
            x0: 0.0,
            horizon: 0.5,
        },
        mc_threshold: MC_Z,
        martingale_allowance: MARTINGALE_ALLOWANCE,
        ..VerifyConfig::default()
    }
}

fn profile(alpha: f64) -> StableProfile {
    build_profile(alpha, 1, 4096, default_radius_max(alpha)).unwrap()
}

fn benchmark(alpha: f64, regime: Regime) -> CoefficientModel {
    CoefficientModel::from_config(&ModelConfig::new(BENCH_A, BENCH_B, alpha, 1.0, regime)).unwrap()
}

fn label(alpha: f64, regime: Regime) -> String {
    format!("{regime} α={alpha}")
}

/// Everything the benchmark criteria need from one regime.
struct RegimeRun {
    alpha: f64,
    regime: Regime,
    build: Duration,
    mass_time: Duration,
    mc_time: Option<Duration>,
    certificate: TruncationCertificate,
    reports: Vec<CheckReport>,
}

impl RegimeRun {
    fn label(&self) -> String {
        label(self.alpha, self.regime)
    }

    fn checks(&self, suite: Suite, prefix: &str) -> Vec<&CheckReport> {
        self.reports.iter().filter(|r| r.suite == suite && r.check.starts_with(prefix)).collect()
    }
}

fn run_regime(alpha: f64, regime: Regime, suites: &[Suite]) -> RegimeRun {
    eprintln!("[acceptance] building {}", label(alpha, regime));
    let model = benchmark(alpha, regime);
    let prof = profile(alpha);
    let t0 = Instant::now();
    let px = Parametrix::new(&model, &prof, regime, &ParametrixConfig::default()).unwrap();
    let build = t0.elapsed();
    let verifier = Verifier::new(&px, &pinned_config()).unwrap();
    let mut reports = Vec::new();
    let (mut mass_time, mut mc_time) = (Duration::ZERO, None);
    for &s in suites {
        let wants_mc = MC_REGIMES.contains(&(alpha, regime));
        if matches!(s, Suite::McAgreement | Suite::Martingale) && !wants_mc {
            continue;
        }
        eprintln!("[acceptance]   {s}");
        let t = Instant::now();
        reports.extend(verifier.run(s).unwrap());
        match s {
            Suite::Mass => mass_time = t.elapsed(),
            Suite::McAgreement => mc_time = Some(t.elapsed()),
            _ => {}
        }
    }
    RegimeRun { alpha, regime, build, mass_time, mc_time, certificate: px.certificate().clone(), reports }
}

struct Outcome {
    pass: bool,
    summary: String,
}

fn criterion_flat() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (alpha, regime) in [(0.8, Regime::B), (1.5, Regime::A)] {
        let t0 = Instant::now();
        let model = CoefficientModel::from_config(&ModelConfig::new("1", "0", alpha, 1.0, regime)).unwrap();
        let prof = profile(alpha);
        let px = Parametrix::new(&model, &prof, regime, &ParametrixConfig::default()).unwrap();
        let nodes = px.lattice().interior_nodes().to_vec();
        let mut worst: f64 = 0.0;
        for t in [0.1, 0.5, 1.0] {
            let grid = px.density_grid(t, &nodes, &nodes).unwrap();
            let scale = t.powf(-1.0 / alpha);
            for (ix, &x) in nodes.iter().enumerate() {
                for (iy, &y) in nodes.iter().enumerate() {
                    let p = grid.value(0, ix, iy);
                    if p > FLAT_FLOOR {
                        let exact = scale * prof.eval(KernelKind::G, (y - x) * scale);
                        worst = worst.max((p / exact - 1.0).abs());
                    }
                }
            }
        }
        let elapsed = t0.elapsed();
        pass &= worst < FLAT_REL_TOL && elapsed < FLAT_RUNTIME;
        parts.push(format!("{}: rel {worst:.2e} in {:.1}s", label(alpha, regime), elapsed.as_secs_f64()));
    }
    Outcome { pass, summary: parts.join("; ") }
}

fn criterion_cauchy() -> Outcome {
    let t0 = Instant::now();
    let prof = build_profile(1.0, 1, 4096, default_radius_max(1.0)).unwrap();
    let elapsed = t0.elapsed();
    let worst = (0..=40_000)
        .map(|i| -20.0 + i as f64 * 1e-3)
        .map(|x| (prof.eval(KernelKind::G, x) - 1.0 / (PI * (1.0 + x * x))).abs())
        .fold(0.0, f64::max);
    Outcome {
        pass: worst < CAUCHY_TOL && elapsed < CAUCHY_RUNTIME,
        summary: format!("max abs {worst:.2e} on |x| <= 20, build {:.2}s", elapsed.as_secs_f64()),
    }
}

/// Passes when every listed check passes and its measured value clears `bound`.
fn all_below(runs: &[RegimeRun], suite: Suite, prefix: &str, bound: f64, what: &str) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let checks = run.checks(suite, prefix);
        if checks.is_empty() {
            continue;
        }
        let worst = checks.iter().map(|r| r.measured).fold(0.0, f64::max);
        let ok = checks.iter().all(|r| r.pass && r.measured < bound);
        pass &= ok;
        parts.push(format!("{}: {what} {worst:.2e}{}", run.label(), if ok { "" } else { " FAIL" }));
    }
    pass &= !parts.is_empty();
    Outcome { pass, summary: parts.join("; ") }
}

fn criterion_mass(runs: &[RegimeRun]) -> Outcome {
    let mut out = all_below(runs, Suite::Mass, "mass_t", MASS_TOL, "max |mass-1|");
    for run in runs {
        let elapsed = run.build + run.mass_time;
        if elapsed >= MASS_RUNTIME {
            out.pass = false;
        }
        out.summary.push_str(&format!("; {} {:.0}s", run.label(), elapsed.as_secs_f64()));
    }
    out
}

fn criterion_positivity(runs: &[RegimeRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let r = run.checks(Suite::Positivity, "min_relative_density");
        let ok = r.len() == 1 && r[0].pass && r[0].measured >= -POSITIVITY_TOL;
        pass &= ok;
        parts.push(format!("{}: min p/p0 {:.2e}", run.label(), r.first().map_or(f64::NAN, |r| r.measured)));
    }
    Outcome { pass, summary: parts.join("; ") }
}

fn criterion_series(runs: &[RegimeRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let c = &run.certificate;
        let ratios = c.ratios_hold();
        let tail = c.tail_bound.is_some_and(|t| t < TAIL_TOL) && c.k_max <= K_MAX;
        pass &= ratios && tail;
        parts.push(format!(
            "{}: ratios {} ({} checked), k_max {}, log10 tail {:.1} (C_phi {:.3}, C_H {:.3}, delta {:.3}, bound needs k = {})",
            run.label(),
            if ratios { "ok" } else { "VIOLATED" },
            c.ratio_checks.len(),
            c.k_max,
            c.log10_tail_bound,
            c.c_phi,
            c.c_hull,
            c.delta,
            c.terms_needed(100_000).map_or("> 100000".to_string(), |k| k.to_string())
        ));
    }
    Outcome { pass, summary: parts.join("; ") }
}

fn criterion_residue(runs: &[RegimeRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let r = run.checks(Suite::ResidueBound, "residue_over_hull");
        let ok = r.len() == 1 && r[0].pass && r[0].measured < RESIDUE_DRIFT;
        pass &= ok;
        if let Some(r) = r.first() {
            parts.push(format!(
                "{}: sup {:.3} -> {:.3} (change {:.1}%)",
                run.label(),
                r.details["coarse"].as_f64().unwrap_or(f64::NAN),
                r.details["fine"].as_f64().unwrap_or(f64::NAN),
                100.0 * r.measured
            ));
        }
    }
    Outcome { pass, summary: parts.join("; ") }
}

fn criterion_hull(runs: &[RegimeRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let mut ok = true;
        for name in ["subconvolution", "mass_bounds"] {
            let r = run.checks(Suite::HullChecks, name);
            ok &= r.len() == 1 && r[0].pass && {
                let ratio = r[0].measured;
                ratio.is_finite() && ratio < HULL_DRIFT && ratio > 1.0 / HULL_DRIFT
            };
        }
        let closed = run.checks(Suite::HullChecks, "hull_integral");
        ok &= closed.len() == 1 && closed[0].measured < HULL_INTEGRAL_TOL;
        pass &= ok;
        let drift = run
            .checks(Suite::HullChecks, "")
            .iter()
            .filter(|r| r.check == "subconvolution" || r.check == "mass_bounds")
            .map(|r| r.measured)
            .collect::<Vec<_>>();
        parts.push(format!(
            "{}: drift {:?}, closed form err {:.1e}",
            run.label(),
            drift.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>(),
            closed.first().map_or(f64::NAN, |r| r.measured)
        ));
    }
    Outcome { pass, summary: parts.join("; ") }
}

fn criterion_mc(runs: &[RegimeRun]) -> Outcome {
    let mut out = all_below(runs, Suite::McAgreement, "standardized_deviation", MC_Z + f64::EPSILON, "max z");
    for run in runs {
        if let Some(mc) = run.mc_time {
            let elapsed = run.build + mc;
            if elapsed >= MC_RUNTIME {
                out.pass = false;
            }
            out.summary.push_str(&format!("; {} {:.0}s", run.label(), elapsed.as_secs_f64()));
        }
    }
    out
}

fn criterion_martingale(runs: &[RegimeRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut any = false;
    for run in runs {
        let checks = run.checks(Suite::Martingale, "martingale_f");
        if checks.is_empty() {
            continue;
        }
        any = true;
        let mut worst: f64 = 0.0;
        for r in &checks {
            let se = r.details["std_error"].as_f64().unwrap();
            let f = ExprFunction::parse(r.details["f"].as_str().unwrap()).unwrap();
            let bound = MARTINGALE_SE * se + MARTINGALE_ALLOWANCE * f.sup_norm();
            pass &= r.measured <= bound;
            worst = worst.max(r.measured / bound);
        }
        parts.push(format!("{}: max |residual|/bound {worst:.3}", run.label()));
    }
    Outcome { pass: pass && any, summary: parts.join("; ") }
}

fn criterion_determinism() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut same = |what: &str, a: Vec<u8>, b: Vec<u8>| {
        let ok = a == b && !a.is_empty();
        pass &= ok;
        parts.push(format!("{what} {}", if ok { "identical" } else { "DIFFER" }));
    };
    let csv = |p: &StableProfile| {
        let mut v = Vec::new();
        p.write_csv(&mut v).unwrap();
        v
    };
    same("profile", csv(&profile(0.8)), csv(&profile(0.8)));

    let flat = CoefficientModel::from_config(&ModelConfig::new("1", "0", 1.5, 1.0, Regime::A)).unwrap();
    let prof = profile(1.5);
    let density = || {
        let px = Parametrix::new(&flat, &prof, Regime::A, &ParametrixConfig::default()).unwrap();
        let mut v = Vec::new();
        px.density_grid(0.5, &[-1.0, 0.0, 2.0], px.lattice().interior_nodes()).unwrap().write_csv(&mut v).unwrap();
        serde_json::to_writer(&mut v, px.certificate()).unwrap();
        v
    };
    same("density+certificate", density(), density());

    let model = benchmark(0.8, Regime::B);
    let ensemble = || {
        let ens = stable_sim::simulate(&model, 0.0, 0.5, 100, 5000, 7).unwrap();
        let mut v = Vec::new();
        ens.write_csv(&mut v).unwrap();
        let nodes: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
        let emp = stable_sim::empirical_density(&ens, &nodes, Bandwidth::Auto, 7).unwrap();
        serde_json::to_writer(&mut v, &emp).unwrap();
        v
    };
    same("ensemble", ensemble(), ensemble());

    let report = || {
        let px = Parametrix::new(&flat, &prof, Regime::A, &ParametrixConfig::default()).unwrap();
        let cfg = VerifyConfig {
            suites: vec![Suite::Mass, Suite::Martingale],
            martingale_paths: 2000,
            martingale_steps: 50,
            ..pinned_config()
        };
        let reports = Verifier::new(&px, &cfg).unwrap().run_all().unwrap();
        let mut v = Vec::new();
        write_json_lines(&reports, &mut v).unwrap();
        v
    };
    same("verify report", report(), report());
    Outcome { pass, summary: parts.join(", ") }
}

const NAMES: [&str; 13] = [
    "flat case matches stable kernel",
    "Cauchy profile",
    "mass conservation",
    "positivity",
    "Chapman-Kolmogorov",
    "series decay and certificate",
    "residue bound refinement",
    "hull constants",
    "PDE residual ladder",
    "Duhamel identity",
    "Monte Carlo agreement",
    "martingale residual",
    "determinism",
];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut suites = Vec::new();
    for (k, s) in [
        (3, Suite::Mass),
        (4, Suite::Positivity),
        (5, Suite::ChapmanKolmogorov),
        (10, Suite::Duhamel),
        (9, Suite::PdeResidual),
        (7, Suite::ResidueBound),
        (8, Suite::HullChecks),
        (11, Suite::McAgreement),
        (12, Suite::Martingale),
    ] {
        if wanted(k) {
            suites.push(s);
        }
    }
    // criterion 6 reads the certificate, which every build produces
    let runs: Vec<RegimeRun> = if suites.is_empty() && !wanted(6) {
        Vec::new()
    } else {
        REGIMES.iter().map(|&(a, r)| run_regime(a, r, &suites)).collect()
    };

    let mut failed = 0;
    println!();
    for k in 1..=13 {
        if !wanted(k) {
            continue;
        }
        let t0 = Instant::now();
        let o = match k {
            1 => criterion_flat(),
            2 => criterion_cauchy(),
            3 => criterion_mass(&runs),
            4 => criterion_positivity(&runs),
            5 => all_below(&runs, Suite::ChapmanKolmogorov, "ck_", CK_TOL, "max rel"),
            6 => criterion_series(&runs),
            7 => criterion_residue(&runs),
            8 => criterion_hull(&runs),
            9 => all_below(&runs, Suite::PdeResidual, "pde_t", PDE_TOL, "residual at eps=0.05"),
            10 => all_below(&runs, Suite::Duhamel, "duhamel_f", DUHAMEL_TOL, "max residual"),
            11 => criterion_mc(&runs),
            12 => criterion_martingale(&runs),
            _ => criterion_determinism(),
        };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {k:>2} {:<32} {}  {} [{:.1}s]",
            NAMES[k - 1],
            if o.pass { "PASS" } else { "FAIL" },
            o.summary,
            t0.elapsed().as_secs_f64()
        );
    }
    for run in &runs {
        println!("  build {}: {:.0}s", run.label(), run.build.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
