//! Acceptance criteria, each at its stated tolerance. Prints one PASS/FAIL
//! line per criterion and fails if any criterion fails.

use std::time::Instant;

use decoupling_lab::decoupling::{
    l2_decoupling_check, scale_sweep, NormDomain, SearchMode, SweepSpec, TrialKind,
};
use decoupling_lab::fields::{
    evaluate_extension, evaluate_extension_direct, make_test_function, rescaling_covariance_check, SamplingModel,
    SpatialPointSet, TestFunction,
};
use decoupling_lab::geometry::{DyadicLength, FrequencyCube, SpatialCube};
use decoupling_lab::multilinear::bootstrap::bootstrap_holds_exact;
use decoupling_lab::multilinear::iteration::multiscale_inequality_check;
use decoupling_lab::multilinear::kakeya::{axis_dominant_families, kakeya_check, Tile};
use decoupling_lab::multilinear::{kappa, MultiParams, TransverseConfig};
use decoupling_lab::parallel::with_workers;
use decoupling_lab::report::sweep_csv;
use decoupling_lab::weights::{reverse_holder_check, weight_cover_bounds};
use num::{BigInt, BigRational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn run(id: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let o = Outcome { id, pass, detail, secs };
    println!(
        "{} criterion {:>3}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.detail,
        o.secs
    );
    o
}

fn within(secs: f64, limit: f64) -> bool {
    secs < limit
}

fn parseval() -> Outcome {
    run("1", || {
        let start = Instant::now();
        let g = make_test_function(&TestFunction::RandomGaussian { seed: 1 }, &FrequencyCube::unit(1), 16)
            .unwrap()
            .with_model(SamplingModel::Lattice);
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let r = l2_decoupling_check(&g, &b, NormDomain::PeriodBox { spacing: 0.5, slice: 0.0 }).unwrap();
        let t = start.elapsed().as_secs_f64();
        let err = (r - 1.0).abs();
        (err < 1e-9 && within(t, 5.0), format!("|ratio - 1| = {err:.3e} (< 1e-9), {t:.3} s (< 5 s)"))
    })
}

fn extension_oracle() -> Outcome {
    run("2", || {
        let start = Instant::now();
        let g = make_test_function(&TestFunction::RandomGaussian { seed: 2 }, &FrequencyCube::unit(1), 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = SpatialPointSet::explicit(
            (0..10)
                .map(|_| vec![rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)])
                .collect(),
        )
        .unwrap();
        let fast = evaluate_extension(&g, &pts).unwrap();
        let slow = evaluate_extension_direct(&g, &pts);
        let t = start.elapsed().as_secs_f64();
        let err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).norm() / b.norm())
            .fold(0.0, f64::max);
        (err < 1e-10 && within(t, 1.0), format!("max relative error {err:.3e} (< 1e-10), {t:.3} s (< 1 s)"))
    })
}

fn covariance() -> Outcome {
    run("3", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for i in 0..50 {
            let n = 2 + i % 2;
            let level = rng.gen_range(1..=3u32);
            let corner: Vec<u64> = (0..n - 1).map(|_| rng.gen_range(0..1u64 << level)).collect();
            let q = FrequencyCube::new(corner, level).unwrap();
            let g = make_test_function(&TestFunction::RandomGaussian { seed: i as u64 }, &q, 8).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
            worst = worst.max(rescaling_covariance_check(&g, &q, &x).unwrap().relerr);
        }
        (worst < 1e-9, format!("max relative error over 50 draws {worst:.3e} (< 1e-9)"))
    })
}

fn weight_calculus() -> Outcome {
    run("4", || {
        let start = Instant::now();
        let mut ok = true;
        let mut detail = Vec::new();
        for sub in [8.0, 16.0] {
            let bounds: Vec<_> = [64.0, 128.0]
                .iter()
                .map(|&r| weight_cover_bounds(&SpatialCube::centered(2, r).unwrap(), sub, 8.0).unwrap())
                .collect();
            let vary = |a: f64, b: f64| a.max(b) / a.min(b);
            let low = vary(bounds[0].c_low, bounds[1].c_low);
            let high = vary(bounds[0].c_high, bounds[1].c_high);
            ok &= bounds.iter().all(|b| b.c_low > 0.0 && b.c_high.is_finite()) && low < 2.0 && high < 2.0;
            detail.push(format!(
                "R'={sub}: c_low {:.4}/{:.4}, c_high {:.4}/{:.4}",
                bounds[0].c_low, bounds[1].c_low, bounds[0].c_high, bounds[1].c_high
            ));
        }
        let t = start.elapsed().as_secs_f64();
        (ok && within(t, 10.0), format!("{}; {t:.1} s (< 10 s)", detail.join("; ")))
    })
}

fn reverse_holder() -> Outcome {
    run("5", || {
        let mut maxima = Vec::new();
        for r in [8.0f64, 16.0, 32.0] {
            let q = FrequencyCube::from_f64(&[0.25], 1.0 / r).unwrap();
            let b = SpatialCube::centered(2, r).unwrap();
            let worst = (0..10)
                .map(|s| {
                    let g = make_test_function(&TestFunction::RandomGaussian { seed: 50 + s }, &q, 8).unwrap();
                    reverse_holder_check(&g, &b, 2.0, 4.0, 8.0, 4.0, 0.5).unwrap()
                })
                .fold(0.0, f64::max);
            maxima.push(worst);
        }
        let spread = maxima.iter().cloned().fold(0.0, f64::max) / maxima.iter().cloned().fold(f64::INFINITY, f64::min);
        (spread < 2.0, format!("max ratios {maxima:.4?} across R = 8, 16, 32; spread {spread:.3} (< 2)"))
    })
}

fn kappa_table() -> Outcome {
    run("6", || {
        let mut ok = true;
        for n in 2..=4usize {
            let nf = n as f64;
            let low = 2.0 * nf / (nf - 1.0);
            let crit = 2.0 * (nf + 1.0) / (nf - 1.0);
            ok &= kappa(low, n).unwrap().abs() <= 1e-12;
            ok &= (kappa(crit, n).unwrap() - 0.5).abs() <= 1e-12;
            for k in 0..100 {
                let p = 2.0 + 18.0 * k as f64 / 99.0;
                if (p - crit).abs() > 1e-12 {
                    ok &= (kappa(p, n).unwrap() < 0.5) == (p < crit);
                }
            }
        }
        (ok, "endpoint values exact to 1e-12 and subcritical test on a 100-point grid for n = 2, 3, 4".into())
    })
}

fn kakeya() -> Outcome {
    run("7", || {
        let start = Instant::now();
        let r = 256.0;
        let perpendicular = vec![
            vec![Tile::new(vec![0.0, 0.0], vec![1.0, 0.0], r, 1.0).unwrap()],
            vec![Tile::new(vec![0.0, 0.0], vec![0.0, 1.0], r, 1.0).unwrap()],
        ];
        let two = kakeya_check(&perpendicular, r, 0.5).unwrap();
        let fam = axis_dominant_families(3, r, 16, 0.1, r / 2.0, 7).unwrap();
        let three = kakeya_check(&fam, r, 0.5).unwrap();
        let t = start.elapsed().as_secs_f64();
        (
            two.ratio <= 2.0 && three.ratio <= 10.0 && within(t, 30.0),
            format!(
                "n=2 perpendicular ratio {:.4} (<= 2); n=3 axis-dominant ratio {:.4} (<= 10, lhs {:.3e}, min det {:.3}); {t:.1} s (< 30 s)",
                two.ratio, three.ratio, three.lhs, three.min_det
            ),
        )
    })
}

fn sweep_spec(p: f64, trials: usize, mode: SearchMode) -> SweepSpec {
    let mut spec = SweepSpec::new(2, p, 8.0, vec![1, 2, 3, 4], trials, 2024);
    spec.mode = mode;
    spec
}

fn main_sweeps() -> (Outcome, Outcome, Outcome) {
    let mut sub_slope = f64::NAN;
    let mut csv_one = String::new();
    let eight = run("8", || {
        let start = Instant::now();
        let report = with_workers(Some(1), || scale_sweep(&sweep_spec(4.0, 200, SearchMode::Full)))
            .unwrap()
            .unwrap();
        let t = start.elapsed().as_secs_f64();
        csv_one = sweep_csv(&report);
        let fit = report.fit.unwrap();
        sub_slope = fit.eta_hat;
        let ratios: Vec<f64> = report.rows.iter().map(|r| r.best_ratio).collect();
        (
            fit.eta_hat <= 0.15 && within(t, 300.0),
            format!("best ratios {ratios:.4?}, fitted eta {:.4} (<= 0.15), {t:.1} s (< 300 s)", fit.eta_hat),
        )
    });
    let nine = run("9", || {
        let start = Instant::now();
        let report = scale_sweep(&sweep_spec(10.0, 1, SearchMode::Forced(TrialKind::Constant))).unwrap();
        let t = start.elapsed().as_secs_f64();
        let slope = report.fit.unwrap().eta_hat;
        (
            slope >= 0.05 && slope > sub_slope && within(t, 120.0),
            format!("constant g slope {slope:.4} (>= 0.05 and > {sub_slope:.4}), {t:.1} s (< 120 s)"),
        )
    });
    let twelve = run("12", || {
        let report = with_workers(Some(8), || scale_sweep(&sweep_spec(4.0, 200, SearchMode::Full)))
            .unwrap()
            .unwrap();
        let csv_eight = sweep_csv(&report);
        (
            !csv_one.is_empty() && csv_eight == csv_one,
            format!("CSV with 1 and 8 workers identical: {}", csv_eight == csv_one),
        )
    });
    (eight, nine, twelve)
}

fn multiscale() -> Outcome {
    run("10", || {
        let cubes = vec![
            FrequencyCube::from_f64(&[0.0], 0.25).unwrap(),
            FrequencyCube::from_f64(&[0.75], 0.25).unwrap(),
        ];
        let params = MultiParams::default();
        let mut maxima = Vec::new();
        let mut simple_ok = true;
        for level in [3u32, 4] {
            let cfg = TransverseConfig::new(cubes.clone(), 1, DyadicLength::new(level).unwrap()).unwrap();
            let m = 2 << (2 * level);
            let mut worst: f64 = 0.0;
            for s in 0..20 {
                let g = make_test_function(&TestFunction::RandomGaussian { seed: 100 + s }, &FrequencyCube::unit(1), m)
                    .unwrap();
                let ledger = multiscale_inequality_check(&g, 6.0, &cfg, &params).unwrap();
                worst = worst.max(ledger.implied_constant);
                if s == 0 {
                    let simple = multiscale_inequality_check(&g, 4.0, &cfg, &params).unwrap();
                    simple_ok &= simple.kappa == 0.0
                        && simple.rhs == simple.a_final
                        && simple.levels.len() == 1
                        && simple.implied_constant == simple.lhs / simple.a_final;
                }
            }
            maxima.push(worst);
        }
        let spread = maxima[0].max(maxima[1]) / maxima[0].min(maxima[1]);
        (
            spread < 4.0 && simple_ok,
            format!(
                "max implied constants {maxima:.4?} at delta = 1/8, 1/16; spread {spread:.3} (< 4); p = 4 two-term form with kappa = 0: {simple_ok}"
            ),
        )
    })
}

fn bootstrap() -> Outcome {
    run("11", || {
        let rat = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
        let (rhs, holds) = bootstrap_holds_exact(&rat(1, 10), 4, &rat(4, 1), 2).unwrap();
        let exceeds = !holds && rhs > rat(1, 2);
        let zero_ok = (0..=20).all(|m| bootstrap_holds_exact(&rat(0, 1), m, &rat(4, 1), 2).unwrap().1);
        (exceeds && zero_ok, format!("eta = 1/10, m = 4: rhs = {rhs} > 1/2; eta = 0 holds for m <= 20: {zero_ok}"))
    })
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = vec![
        parseval(),
        extension_oracle(),
        covariance(),
        weight_calculus(),
        reverse_holder(),
        kappa_table(),
        kakeya(),
    ];
    let (eight, nine, twelve) = main_sweeps();
    outcomes.push(eight);
    outcomes.push(nine);
    outcomes.push(multiscale());
    outcomes.push(bootstrap());
    outcomes.push(twelve);
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {} of {} criteria pass",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
