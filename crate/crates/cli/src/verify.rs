//! The invariant table printed by `decoupling-lab verify`.

use decoupling_lab::decoupling::{decoupling_ratio, fit_eta, DecouplingInstance};
use decoupling_lab::fields::{e, make_test_function, TestFunction};
use decoupling_lab::geometry::{dyadic_partition, DyadicLength, FrequencyCube, SpatialCube};
use decoupling_lab::multilinear::bootstrap::bootstrap_bound;
use decoupling_lab::multilinear::broad_narrow::{broad_narrow_classify, Scenario};
use decoupling_lab::multilinear::kakeya::{kakeya_check, Tile};
use decoupling_lab::multilinear::{kappa, multilinear_a, multilinear_d, MultiParams, TransverseConfig};
use decoupling_lab::report::SCHEMA_VERSION;
use decoupling_lab::{LabError, Result};
use serde::Serialize;

use crate::config::parse_config;
use crate::run::default_cubes;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check {
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random(n: usize, m: usize, seed: u64) -> Result<decoupling_lab::fields::GridFunction> {
    make_test_function(&TestFunction::RandomGaussian { seed }, &FrequencyCube::unit(n - 1), m)
}

/// Runs every check; cheap enough for a smoke test (a few seconds).
pub fn run_checks() -> Vec<Check> {
    vec![
        check("kappa_table", || {
            let got = [kappa(4.0, 2)?, kappa(6.0, 2)?, kappa(3.0, 3)?, kappa(4.0, 3)?, kappa(f64::INFINITY, 3)?];
            let want = [0.0, 0.5, 0.0, 0.5, 0.5];
            let ok = got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15);
            Ok((ok, format!("{got:?}")))
        }),
        check("partition_count", || {
            let parts = dyadic_partition(&FrequencyCube::unit(2), DyadicLength::new(3)?)?;
            Ok((parts.len() == 64, format!("{} cubes of side 1/8 in [0,1]^2", parts.len())))
        }),
        check("single_cap_ratio_is_one", || {
            let inst = DecouplingInstance::new(2, 4.0, 8.0, 1)?.with_samples_per_cap(4);
            let caps = inst.caps()?;
            let g = random(2, inst.caps_per_axis() * 4, 3)?.masked_to(&caps[1])?;
            let r = decoupling_ratio(&g, &inst)?;
            Ok(((r - 1.0).abs() < 1e-12, format!("ratio {r}")))
        }),
        check("triangle_bound", || {
            let inst = DecouplingInstance::new(2, 6.0, 8.0, 1)?.with_samples_per_cap(4);
            let g = random(2, inst.caps_per_axis() * 4, 5)?;
            let r = decoupling_ratio(&g, &inst)?;
            let bound = (inst.cap_count() as f64).sqrt();
            Ok((r <= bound * (1.0 + 1e-12), format!("ratio {r} <= {bound}")))
        }),
        check("zero_function_degenerate", || {
            let inst = DecouplingInstance::new(2, 4.0, 8.0, 1)?.with_samples_per_cap(2);
            let g = inst.template();
            match decoupling_ratio(&g, &inst) {
                Err(LabError::Degenerate(_)) => Ok((true, "Degenerate".into())),
                other => Ok((false, format!("{other:?}"))),
            }
        }),
        check("global_phase_invariance", || {
            let inst = DecouplingInstance::new(2, 4.0, 8.0, 1)?.with_samples_per_cap(4);
            let g = random(2, 8, 7)?;
            let a = decoupling_ratio(&g, &inst)?;
            let b = decoupling_ratio(&g.scaled(e(0.3) * 2.5), &inst)?;
            Ok(((a - b).abs() < 1e-12 * a, format!("{a} vs {b}")))
        }),
        check("a_equals_d2_at_top_level", || {
            let cfg = TransverseConfig::new(default_cubes(2), 1, DyadicLength::new(2)?)?;
            let params = MultiParams::default();
            let g = random(2, 16, 11)?;
            let b = SpatialCube::centered(2, cfg.box_side(1))?;
            let a = multilinear_a(6.0, 1, &b, 1, &g, &cfg, &params)?;
            let d = multilinear_d(2.0, 1, &b, &g, &cfg, &params)?;
            Ok(((a - d).abs() <= 1e-12 * d, format!("A {a}, D_2 {d}")))
        }),
        check("d_vanishes_with_a_cube", || {
            let cubes = default_cubes(2);
            let cfg = TransverseConfig::new(cubes.clone(), 1, DyadicLength::new(2)?)?;
            let g = random(2, 16, 13)?.masked_to(&cubes[0])?;
            let b = SpatialCube::centered(2, cfg.box_side(1))?;
            let d = multilinear_d(2.0, 1, &b, &g, &cfg, &MultiParams::default())?;
            Ok((d == 0.0, format!("D {d}")))
        }),
        check("kakeya_perpendicular_n2", || {
            let a = Tile::new(vec![0.0, 0.0], vec![1.0, 0.0], 16.0, 1.0)?;
            let b = Tile::new(vec![0.0, 0.0], vec![0.0, 1.0], 16.0, 1.0)?;
            let r = kakeya_check(&[vec![a], vec![b]], 16.0, 0.5)?;
            Ok(((r.ratio - 16.0).abs() < 1e-9, format!("ratio {}", r.ratio)))
        }),
        check("broad_narrow_single_dominant", || {
            let caps = dyadic_partition(&FrequencyCube::unit(2), DyadicLength::new(3)?)?;
            let weighted: Vec<(FrequencyCube, f64)> =
                caps.into_iter().enumerate().map(|(i, q)| (q, if i == 9 { 1.0 } else { 0.0 })).collect();
            let c = broad_narrow_classify(&weighted, 1.0)?;
            Ok((matches!(c.scenario, Scenario::SingleDominant), format!("{:?}", c.scenario)))
        }),
        check("bootstrap_arithmetic", || {
            let zero = bootstrap_bound(0.0, 7, 4.0, 2)?;
            let sub = bootstrap_bound(0.1, 4, 4.0, 2)?;
            let ok = zero.rhs == 0.0 && zero.holds && (sub.rhs - 1.6).abs() < 1e-12 && !sub.holds;
            Ok((ok, format!("eta 0: {}, eta 0.1 m 4: {}", zero.rhs, sub.rhs)))
        }),
        check("fit_needs_three_scales", || {
            let r = fit_eta(&[(0.25, 1.0), (0.0625, 1.2)]);
            Ok((matches!(r, Err(LabError::InsufficientData(_))), format!("{r:?}")))
        }),
        check("config_defaults", || {
            let c = parse_config("command=verify").map_err(|e| LabError::Precondition(e.join("; ")))?;
            let ok = c.n == 2 && c.p == 4.0 && c.exponent == 8.0 && c.samples_per_cap == 8;
            Ok((ok, format!("n {} p {} E {} M {}", c.n, c.p, c.exponent, c.samples_per_cap)))
        }),
    ]
}

pub fn render_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        out.push_str(&format!("{verdict}  {:width$}  {}\n", c.name, c.detail));
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    out.push_str(&format!("{passed}/{} checks passed\n", checks.len()));
    out
}

pub fn verify_csv(checks: &[Check]) -> String {
    let mut out = String::from("check,pass,schema_version\n");
    for c in checks {
        out.push_str(&format!("{},{},{SCHEMA_VERSION}\n", c.name, c.pass));
    }
    out
}
