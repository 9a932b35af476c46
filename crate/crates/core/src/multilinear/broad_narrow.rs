//! Cap constants `c_alpha(B_K)` and the three-way broad–narrow
//! classification for `n = 3` (caps in `[0,1]^2`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compare::WINDOW_EXPONENT_FACTOR;
use super::{padded_grid, poly, MultiParams};
use crate::engine::{CapField, NormRequest, SliceEvaluator};
use crate::error::{LabError, Result};
use crate::fields::GridFunction;
use crate::geometry::{dyadic_partition, paraboloid_normal, transversality, DyadicLength, FrequencyCube, SpatialCube};

/// Scenario 1 holds when every large cap is within this many `1/K` of `alpha*`.
pub const DOMINANT_RADIUS: f64 = 10.0;
/// Declared lower bound for the witness triangle area, in units of `K^-2`.
pub const AREA_THRESHOLD: f64 = 1.0;

/// `c_alpha(B_K)` with weight exponents `E` and `10E`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapConstant {
    pub cap: FrequencyCube,
    /// With `w_{B_K, 10E}`; the value used by the classification.
    pub c: f64,
    /// With `w_{B_K, E}`.
    pub c_base: f64,
}

/// `c_alpha(B_K) = (|B_K|^{-1} int |E_alpha g|^p w_{B_K,10E})^{1/p}` for every
/// cap `alpha` of side `1/K`, `K = side(B_K)`.
pub fn cap_constants(g: &GridFunction, b_k: &SpatialCube, p: f64, params: &MultiParams) -> Result<Vec<CapConstant>> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidExponent(format!("p = {p} must be >= 1")));
    }
    let side = DyadicLength::from_f64(1.0 / b_k.side)?;
    let caps = dyadic_partition(g.cube(), side)?;
    let weights = [
        poly(b_k, WINDOW_EXPONENT_FACTOR * params.exponent)?,
        poly(b_k, params.exponent)?,
    ];
    let ev = SliceEvaluator::new(&padded_grid(b_k, params)?, &weights, g)?;
    let field = CapField::caps(g, &caps)?;
    let requests = [
        NormRequest { weight: 0, exponent: p },
        NormRequest { weight: 1, exponent: p },
    ];
    let sums = ev.evaluate(&field, &requests, false)?;
    let vol = b_k.volume();
    Ok(caps
        .into_iter()
        .zip(sums.cap)
        .map(|(cap, r)| CapConstant {
            cap,
            c: (r[0] / vol).powf(1.0 / p),
            c_base: (r[1] / vol).powf(1.0 / p),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum Scenario {
    /// Every large cap lies within `10/K` of `alpha*`.
    SingleDominant,
    /// A transverse triple of large caps.
    Transverse {
        triple: [usize; 3],
        /// Area of the triangle of centers.
        area: f64,
        /// Normal determinant at the centers.
        center_det: f64,
        /// Sampled lower bound of the normal determinant over the three caps.
        nu: f64,
    },
    /// Every large cap lies in the strip of half-width `width` around the
    /// line through `point` with unit `direction`.
    Line {
        endpoints: [usize; 2],
        point: [f64; 2],
        direction: [f64; 2],
        width: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub k: f64,
    pub c_threshold: f64,
    /// Index of the largest constant (first on ties).
    pub alpha_star: usize,
    /// Indices of the caps with `c >= K^-C c*`.
    pub s_big: Vec<usize>,
    pub scenario: Scenario,
    /// `8 AREA_THRESHOLD / (27 K^2)`: the transversality declared for scenario 2.
    pub nu_threshold: f64,
}

fn set_distance(a: &FrequencyCube, b: &FrequencyCube) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    let half = (a.side() + b.side()) / 2.0;
    ca.iter()
        .zip(&cb)
        .map(|(x, y)| ((x - y).abs() - half).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn triangle_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
}

fn line_distance(point: &[f64; 2], dir: &[f64; 2], x: &[f64]) -> f64 {
    ((x[0] - point[0]) * dir[1] - (x[1] - point[1]) * dir[0]).abs()
}

fn corners(q: &FrequencyCube) -> [[f64; 2]; 4] {
    let c = q.corner();
    let s = q.side();
    [
        [c[0], c[1]],
        [c[0] + s, c[1]],
        [c[0], c[1] + s],
        [c[0] + s, c[1] + s],
    ]
}

/// `|det(N(a), N(b), N(c))|` for unit paraboloid normals at three points of
/// the plane: `8 area / prod sqrt(1 + 4|xi|^2)`.
pub fn center_determinant(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let scale: f64 = [a, b, c]
        .iter()
        .map(|x| (1.0 + 4.0 * (x[0] * x[0] + x[1] * x[1])).sqrt())
        .product();
    8.0 * triangle_area(a, b, c) / scale
}

/// Tests the three scenarios in order: one dominant cap, a transverse triple,
/// all large caps near a line.
pub fn broad_narrow_classify(constants: &[(FrequencyCube, f64)], c_threshold: f64) -> Result<Classification> {
    let first = constants
        .first()
        .ok_or_else(|| LabError::Degenerate("no cap constants given".into()))?;
    if !(c_threshold > 0.0) {
        return Err(LabError::Domain(format!("C = {c_threshold} must be positive")));
    }
    if constants
        .iter()
        .any(|(q, c)| q.dim() != 2 || q.level() != first.0.level() || !(*c >= 0.0))
    {
        return Err(LabError::Domain(
            "cap constants must be nonnegative and on caps of one side in [0,1]^2".into(),
        ));
    }
    let k = 1.0 / first.0.side();
    let mut alpha_star = 0;
    for (i, (_, c)) in constants.iter().enumerate() {
        if *c > constants[alpha_star].1 {
            alpha_star = i;
        }
    }
    let c_star = constants[alpha_star].1;
    if c_star == 0.0 {
        return Err(LabError::Degenerate("every cap constant vanishes".into()));
    }
    let cut = k.powf(-c_threshold) * c_star;
    let s_big: Vec<usize> = (0..constants.len()).filter(|&i| constants[i].1 >= cut).collect();
    let nu_threshold = 8.0 * AREA_THRESHOLD / (27.0 * k * k);
    let done = |scenario| Classification {
        k,
        c_threshold,
        alpha_star,
        s_big: s_big.clone(),
        scenario,
        nu_threshold,
    };
    let star = &constants[alpha_star].0;
    let far = s_big
        .iter()
        .any(|&i| set_distance(star, &constants[i].0) >= DOMINANT_RADIUS / k);
    if !far {
        return Ok(done(Scenario::SingleDominant));
    }
    let centers: Vec<Vec<f64>> = constants.iter().map(|(q, _)| q.center()).collect();
    let dist2 = |i: usize, j: usize| {
        (centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2)
    };
    let mut pair = (s_big[0], s_big[1]);
    for (a, &i) in s_big.iter().enumerate() {
        for &j in &s_big[a + 1..] {
            if dist2(i, j) > dist2(pair.0, pair.1) {
                pair = (i, j);
            }
        }
    }
    let (i1, i2) = pair;
    let point = [centers[i1][0], centers[i1][1]];
    let len = dist2(i1, i2).sqrt();
    let direction = [(centers[i2][0] - point[0]) / len, (centers[i2][1] - point[1]) / len];
    let width = c_threshold / k;
    let outside: Vec<usize> = s_big
        .iter()
        .copied()
        .filter(|&i| {
            corners(&constants[i].0)
                .iter()
                .any(|x| line_distance(&point, &direction, x) > width)
        })
        .collect();
    if outside.is_empty() {
        return Ok(done(Scenario::Line {
            endpoints: [i1, i2],
            point,
            direction,
            width,
        }));
    }
    let mut i3 = outside[0];
    for &i in &outside {
        if triangle_area(&centers[i1], &centers[i2], &centers[i])
            > triangle_area(&centers[i1], &centers[i2], &centers[i3])
        {
            i3 = i;
        }
    }
    let triple = [i1, i2, i3];
    let cert = transversality(
        &triple.iter().map(|&i| constants[i].0.clone()).collect::<Vec<_>>(),
        super::TRANSVERSALITY_DENSITY,
    )?;
    Ok(done(Scenario::Transverse {
        triple,
        area: triangle_area(&centers[i1], &centers[i2], &centers[i3]),
        center_det: center_determinant(&centers[i1], &centers[i2], &centers[i3]),
        nu: cert.nu_lower,
    }))
}

/// Classifies several cubes `B_K` independently; results keep input order.
pub fn classify_many(all: &[Vec<(FrequencyCube, f64)>], c_threshold: f64) -> Vec<Result<Classification>> {
    all.par_iter().map(|c| broad_narrow_classify(c, c_threshold)).collect()
}

/// Cross-check of the center determinant against the explicit normals.
pub fn normal_determinant(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let na = paraboloid_normal(a);
    let nb = paraboloid_normal(b);
    let nc = paraboloid_normal(c);
    crate::geometry::abs_det(&[&na, &nb, &nc])
}
