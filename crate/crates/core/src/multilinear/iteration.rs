//! The multiscale inequality: every `A_p` and `D_p` factor on one cube `B`
//! of side `delta^{-2^m}`, computed from a single pass over the finest caps.

use serde::{Deserialize, Serialize};

use super::{geometric_mean_of_l2, kappa, padded_grid, poly, sum_output, CapLayout, MultiParams, TransverseConfig};
use crate::engine::{CapField, NormRequest, OutputSpec, SliceEvaluator, Window};
use crate::error::{LabError, Result};
use crate::fields::GridFunction;
use crate::geometry::SpatialCube;

/// The factors attached to scale `delta^{2^l}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub l: u32,
    /// `A_p(2^l, B, 2^l, g)`.
    #[serde(rename = "A")]
    pub a: f64,
    /// `D_p(2^l, B, g)`.
    #[serde(rename = "D")]
    pub d: f64,
    /// `A / D`.
    pub holder_ratio: f64,
    /// `A_l / (A_{l+1}^{1-kappa} D_l^kappa)`.
    pub step_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLedger {
    pub n: usize,
    pub p: f64,
    pub kappa: f64,
    pub m: u32,
    pub delta: f64,
    pub box_side: f64,
    pub levels: Vec<LevelEntry>,
    /// `A_p(2^m, B, 2^m, g) = D_2(2^m, B, g)`.
    pub a_final: f64,
    /// `A_p(1, B, 1, g)`.
    pub lhs: f64,
    /// `A_final^{(1-kappa)^m} prod_l D_l^{kappa (1-kappa)^l}`.
    pub rhs: f64,
    pub implied_constant: f64,
    /// `prod_l step_constant_l^{(1-kappa)^l}`; equals `implied_constant`.
    pub chained_constant: f64,
}

/// Computes the ledger `A_p(1, B, 1, g) <= C A_p(2^m, B, 2^m, g)^{(1-kappa)^m}
/// prod_{l<m} D_p(2^l, B, g)^{kappa (1-kappa)^l}` with `B` centered at the origin.
pub fn multiscale_inequality_check(
    g: &GridFunction,
    p: f64,
    cfg: &TransverseConfig,
    params: &MultiParams,
) -> Result<IterationLedger> {
    let n = cfg.n();
    let kp = kappa(p, n)?;
    let m = cfg.m;
    let top = 1u32 << m;
    cfg.check_resolution(g, top)?;
    let b = SpatialCube::centered(n, cfg.box_side(top))?;
    let finest = CapLayout::new(cfg.caps_at(top)?);
    let coarse: Vec<CapLayout> = (0..m)
        .map(|l| Ok(CapLayout::new(cfg.caps_at(1 << l)?)))
        .collect::<Result<_>>()?;
    let mut ev = SliceEvaluator::new(&padded_grid(&b, params)?, &[poly(&b, params.exponent)?], g)?;
    let mut partitions = Vec::with_capacity(m as usize);
    let mut window_tables = Vec::with_capacity(m as usize);
    for l in 0..m {
        let subs = b.partition(cfg.box_side(1 << l))?;
        let windows = subs
            .iter()
            .map(|c| {
                Ok(Window {
                    cube: c.clone(),
                    padding: params.grid.padding,
                    weight: poly(c, params.exponent)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        window_tables.push(ev.add_windows(&windows)?);
        partitions.push(subs);
    }

    let mut specs: Vec<OutputSpec> = Vec::new();
    for (l, layout) in coarse.iter().enumerate() {
        for cap in &layout.caps {
            let members: Vec<usize> = finest
                .caps
                .iter()
                .enumerate()
                .filter(|(_, f)| cap.contains_cube(f))
                .map(|(i, _)| i)
                .collect();
            let mut requests = vec![NormRequest { weight: 0, exponent: p }];
            requests.extend(window_tables[l].iter().map(|&w| NormRequest { weight: w, exponent: 2.0 }));
            specs.push(sum_output(&members, requests));
        }
    }
    for i in 0..finest.caps.len() {
        specs.push(sum_output(&[i], vec![NormRequest { weight: 0, exponent: 2.0 }]));
    }
    let field = CapField::caps(g, &finest.caps)?;
    let sums = ev.evaluate_outputs(&field, &specs)?;

    let vol_b = b.volume();
    let mut at = 0;
    let mut a_vals = Vec::with_capacity(m as usize);
    let mut d_vals = Vec::with_capacity(m as usize);
    for (l, layout) in coarse.iter().enumerate() {
        let rows = &sums[at..at + layout.caps.len()];
        at += layout.caps.len();
        let d = geometric_mean_of_l2(&layout.by_cube(n, rows.iter().map(|r| (r[0] / vol_b).powf(2.0 / p))));
        let subs = &partitions[l];
        let vol_d = subs[0].volume();
        let mean = (0..subs.len())
            .map(|k| geometric_mean_of_l2(&layout.by_cube(n, rows.iter().map(|r| r[k + 1] / vol_d))).powf(p))
            .sum::<f64>()
            / subs.len() as f64;
        a_vals.push(mean.powf(1.0 / p));
        d_vals.push(d);
    }
    let a_final = geometric_mean_of_l2(&finest.by_cube(n, sums[at..].iter().map(|r| r[0] / vol_b)));

    let weight = |l: u32| (1.0 - kp).powi(l as i32);
    let mut rhs = a_final.powf(weight(m));
    for (l, d) in d_vals.iter().enumerate() {
        rhs *= d.powf(kp * weight(l as u32));
    }
    let lhs = a_vals[0];
    if rhs == 0.0 {
        return Err(LabError::Degenerate("g vanishes on some transverse cube".into()));
    }
    let mut levels = Vec::with_capacity(m as usize);
    let mut chained = 1.0;
    for l in 0..m as usize {
        let next = if l + 1 < m as usize { a_vals[l + 1] } else { a_final };
        let step = a_vals[l] / (next.powf(1.0 - kp) * d_vals[l].powf(kp));
        chained *= step.powf(weight(l as u32));
        levels.push(LevelEntry {
            l: l as u32,
            a: a_vals[l],
            d: d_vals[l],
            holder_ratio: a_vals[l] / d_vals[l],
            step_constant: step,
        });
    }
    Ok(IterationLedger {
        n,
        p,
        kappa: kp,
        m,
        delta: cfg.delta_value(),
        box_side: b.side,
        levels,
        a_final,
        lhs,
        rhs,
        implied_constant: lhs / rhs,
        chained_constant: chained,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{multilinear_a, multilinear_d};
    use super::*;
    use crate::fields::{make_test_function, TestFunction};
    use crate::geometry::{DyadicLength, FrequencyCube};
    use crate::weights::weight_cover_bounds;

    fn config(delta_level: u32, m: u32) -> TransverseConfig {
        let caps = vec![
            FrequencyCube::from_f64(&[0.0], 0.25).unwrap(),
            FrequencyCube::from_f64(&[0.75], 0.25).unwrap(),
        ];
        TransverseConfig::new(caps, m, DyadicLength::new(delta_level).unwrap()).unwrap()
    }

    fn random(m: usize, seed: u64) -> GridFunction {
        make_test_function(&TestFunction::RandomGaussian { seed }, &FrequencyCube::unit(1), m).unwrap()
    }

    #[test]
    fn ledger_matches_standalone_functionals() {
        let cfg = config(2, 1);
        let params = MultiParams::default();
        let g = random(32, 11);
        let ledger = multiscale_inequality_check(&g, 6.0, &cfg, &params).unwrap();
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let a0 = multilinear_a(6.0, 1, &b, 1, &g, &cfg, &params).unwrap();
        let d0 = multilinear_d(6.0, 1, &b, &g, &cfg, &params).unwrap();
        let a1 = multilinear_a(6.0, 2, &b, 2, &g, &cfg, &params).unwrap();
        assert!((ledger.levels[0].a - a0).abs() < 1e-10 * a0);
        assert!((ledger.levels[0].d - d0).abs() < 1e-10 * d0);
        assert!((ledger.a_final - a1).abs() < 1e-10 * a1);
        assert_eq!(ledger.kappa, 0.5);
        let rhs = a1.sqrt() * d0.sqrt();
        assert!((ledger.rhs - rhs).abs() < 1e-10 * rhs);
    }

    #[test]
    fn chained_steps_give_implied_constant() {
        let cfg = config(1, 2);
        let params = MultiParams::default();
        let g = random(32, 12);
        let ledger = multiscale_inequality_check(&g, 6.0, &cfg, &params).unwrap();
        assert_eq!(ledger.levels.len(), 2);
        let c = ledger.implied_constant;
        assert!((ledger.chained_constant - c).abs() < 1e-12 * c);
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let a1 = multilinear_a(6.0, 2, &b, 2, &g, &cfg, &params).unwrap();
        assert!((ledger.levels[1].a - a1).abs() < 1e-10 * a1);
    }

    #[test]
    fn subcritical_ledger_is_two_term() {
        let cfg = config(2, 1);
        let g = random(32, 13);
        let ledger = multiscale_inequality_check(&g, 4.0, &cfg, &MultiParams::default()).unwrap();
        assert_eq!(ledger.kappa, 0.0);
        assert_eq!(ledger.rhs, ledger.a_final);
        assert_eq!(ledger.implied_constant, ledger.lhs / ledger.a_final);
    }

    #[test]
    fn holder_direction_bounded_by_weight_constant() {
        let cfg = config(2, 1);
        let params = MultiParams::default();
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let bounds = weight_cover_bounds(&b, 4.0, params.exponent).unwrap();
        for seed in 0..5 {
            let g = random(32, seed);
            let ledger = multiscale_inequality_check(&g, 6.0, &cfg, &params).unwrap();
            let ratio = ledger.levels[0].holder_ratio;
            assert!(ratio <= bounds.c_high.powf(1.0 / 6.0) * 1.05, "seed {seed}: {ratio}");
        }
    }

    #[test]
    fn resolution_error() {
        let cfg = config(2, 1);
        let g = random(8, 1);
        match multiscale_inequality_check(&g, 6.0, &cfg, &MultiParams::default()) {
            Err(LabError::Resolution(msg)) => assert!(msg.contains("multiple of 16"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
