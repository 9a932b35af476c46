//! Transverse (multilinear) quantities: the interpolation weight `kappa_p`,
//! the iteration functionals `D_t` and `A_p`, ball inflation, and the
//! supporting Kakeya, broad–narrow and bootstrap tools.

pub mod bootstrap;
pub mod broad_narrow;
pub mod compare;
pub mod iteration;
pub mod kakeya;

use serde::{Deserialize, Serialize};

use crate::decoupling::GridParams;
use crate::engine::{CapField, NormRequest, Output, OutputSpec, SliceEvaluator, Window};
use crate::error::{LabError, Result};
use crate::fields::GridFunction;
use crate::geometry::{
    dyadic_partition, power_of_two_exponent, transversality, DyadicLength, FrequencyCube, SpatialCube,
    TransversalityCertificate,
};
use crate::weights::{SpatialGrid, Weight, WeightSpec};

/// Sample density used when certifying transversality of a configuration.
pub const TRANSVERSALITY_DENSITY: usize = 5;

/// `n` transverse cubes of equal side together with the scale parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransverseConfig {
    pub cubes: Vec<FrequencyCube>,
    pub nu: f64,
    pub certificate: TransversalityCertificate,
    pub m: u32,
    /// `delta = 2^-level`.
    pub delta: DyadicLength,
}

impl TransverseConfig {
    pub fn new(cubes: Vec<FrequencyCube>, m: u32, delta: DyadicLength) -> Result<Self> {
        if m == 0 {
            return Err(LabError::Domain("m must be >= 1".into()));
        }
        let first = cubes
            .first()
            .ok_or_else(|| LabError::Domain("no cubes given".into()))?;
        if cubes.iter().any(|c| c.level() != first.level()) {
            return Err(LabError::Domain("transverse cubes must share one side length".into()));
        }
        if delta.level() == 0 {
            return Err(LabError::InvalidScale("delta must be < 1".into()));
        }
        let certificate = transversality(&cubes, TRANSVERSALITY_DENSITY)?;
        if certificate.nu_lower <= 1e-12 {
            return Err(LabError::Precondition(format!(
                "cubes {:?} are not transverse (sampled determinant {})",
                certificate.cubes, certificate.nu_lower
            )));
        }
        Ok(Self {
            nu: certificate.nu_lower,
            certificate,
            cubes,
            m,
            delta,
        })
    }

    pub fn n(&self) -> usize {
        self.cubes.len()
    }

    pub fn mu(&self) -> f64 {
        self.cubes[0].side()
    }

    pub fn delta_value(&self) -> f64 {
        self.delta.value()
    }

    /// `mu >= delta^{2^-m}`, the side constraint of the multilinear constant.
    pub fn scale_constraint_holds(&self) -> bool {
        self.mu() >= self.delta_value().powf(0.5f64.powi(self.m as i32)) * (1.0 - 1e-12)
    }

    /// Side `delta^q` of the level-`q` caps.
    pub fn cap_side(&self, q: u32) -> Result<DyadicLength> {
        DyadicLength::new(self.delta.level() * q)
    }

    /// `D_{delta^q}(Q_i)` for every cube; a cube smaller than `delta^q` is
    /// its own single cap.
    pub fn caps_at(&self, q: u32) -> Result<Vec<Vec<FrequencyCube>>> {
        let side = self.cap_side(q)?;
        self.cubes
            .iter()
            .map(|c| {
                if side.level() <= c.level() {
                    Ok(vec![c.clone()])
                } else {
                    dyadic_partition(c, side)
                }
            })
            .collect()
    }

    /// Side `delta^{-r}` of a cube `B^r`.
    pub fn box_side(&self, r: u32) -> f64 {
        2f64.powi((self.delta.level() * r) as i32)
    }

    /// The index `r` with `side(B) = delta^{-r}`.
    pub fn box_level(&self, b: &SpatialCube) -> Result<u32> {
        let k = power_of_two_exponent(b.side).ok_or_else(|| {
            LabError::InvalidScale(format!("cube side {} is not a power of 2", b.side))
        })?;
        if k % self.delta.level() != 0 {
            return Err(LabError::InvalidScale(format!(
                "cube side {} is not a power of 1/delta = {}",
                b.side,
                1.0 / self.delta_value()
            )));
        }
        Ok(k / self.delta.level())
    }

    /// Checks that `g` resolves caps of side `delta^q`.
    pub fn check_resolution(&self, g: &GridFunction, q: u32) -> Result<()> {
        let per_axis = 1usize << (self.delta.level() * q);
        if g.cube() != &FrequencyCube::unit(self.n() - 1) {
            return Err(LabError::Domain("g must be defined on the full unit cube".into()));
        }
        if g.samples_per_axis() % per_axis != 0 {
            return Err(LabError::Resolution(format!(
                "caps of side delta^{q} = 2^-{} need M to be a multiple of {per_axis} samples per axis; got M = {}",
                self.delta.level() * q,
                g.samples_per_axis()
            )));
        }
        Ok(())
    }
}

/// Weight exponent and sampling grid for the multilinear functionals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiParams {
    pub exponent: f64,
    pub grid: GridParams,
}

impl Default for MultiParams {
    fn default() -> Self {
        Self {
            exponent: 8.0,
            grid: GridParams::default(),
        }
    }
}

/// `kappa_p = (pn - p - 2n) / ((p - 2)(n - 1))`, set to 0 for `p <= 2n/(n-1)`.
pub fn kappa(p: f64, n: usize) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(LabError::InvalidExponent(format!("p = {p} must be >= 2")));
    }
    if n < 2 {
        return Err(LabError::Domain(format!("n = {n} must be >= 2")));
    }
    let nf = n as f64;
    if p <= 2.0 * nf / (nf - 1.0) {
        return Ok(0.0);
    }
    if p.is_infinite() {
        return Ok(1.0 / (nf - 1.0));
    }
    Ok((p * nf - p - 2.0 * nf) / ((p - 2.0) * (nf - 1.0)))
}

/// `[prod_i (sum_{caps of Q_i} norm^2)^{1/2}]^{1/n}` from per-cap squared norms.
pub(crate) fn geometric_mean_of_l2(per_cube: &[Vec<f64>]) -> f64 {
    let n = per_cube.len() as f64;
    let mut log = 0.0;
    for sums in per_cube {
        let s: f64 = sums.iter().sum();
        if s == 0.0 {
            return 0.0;
        }
        log += 0.5 * s.ln();
    }
    (log / n).exp()
}

/// Flattened caps with the owning cube of each.
#[derive(Clone, Debug)]
pub(crate) struct CapLayout {
    pub caps: Vec<FrequencyCube>,
    pub owner: Vec<usize>,
}

impl CapLayout {
    pub fn new(per_cube: Vec<Vec<FrequencyCube>>) -> Self {
        let mut caps = Vec::new();
        let mut owner = Vec::new();
        for (i, list) in per_cube.into_iter().enumerate() {
            owner.extend(std::iter::repeat(i).take(list.len()));
            caps.extend(list);
        }
        Self { caps, owner }
    }

    /// Split per-cap values into per-cube lists.
    pub fn by_cube(&self, n: usize, values: impl IntoIterator<Item = f64>) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); n];
        for (v, &o) in values.into_iter().zip(&self.owner) {
            out[o].push(v);
        }
        out
    }
}

pub(crate) fn padded_grid(b: &SpatialCube, params: &MultiParams) -> Result<SpatialGrid> {
    SpatialGrid::new(b.clone(), params.grid.padding, params.grid.spacing)
}

pub(crate) fn poly(b: &SpatialCube, exponent: f64) -> Result<Weight> {
    Ok(Weight::Poly(WeightSpec::new(b.clone(), exponent)?))
}

/// `D_t(q, B, g) = [prod_i (sum_{Q in D_{delta^q}(Q_i)} ||E_Q g||^2_{L^t_#(w_B)})^{1/2}]^{1/n}`.
pub fn multilinear_d(
    t: f64,
    q: u32,
    b: &SpatialCube,
    g: &GridFunction,
    cfg: &TransverseConfig,
    params: &MultiParams,
) -> Result<f64> {
    if !(t >= 1.0) {
        return Err(LabError::InvalidExponent(format!("t = {t} must be >= 1")));
    }
    cfg.check_resolution(g, q)?;
    let layout = CapLayout::new(cfg.caps_at(q)?);
    let ev = SliceEvaluator::new(&padded_grid(b, params)?, &[poly(b, params.exponent)?], g)?;
    let field = CapField::caps(g, &layout.caps)?;
    let sums = ev.evaluate(&field, &[NormRequest { weight: 0, exponent: t }], false)?;
    let vol = b.volume();
    let norms2 = sums.cap.iter().map(|r| (r[0] / vol).powf(2.0 / t));
    Ok(geometric_mean_of_l2(&layout.by_cube(cfg.n(), norms2)))
}

/// `A_p(q, B^r, s, g)`: the `p`-power mean of `D_2(q, B^s, g)` over the
/// partition of `B^r` into cubes of side `delta^{-s}`.
pub fn multilinear_a(
    p: f64,
    q: u32,
    b: &SpatialCube,
    s: u32,
    g: &GridFunction,
    cfg: &TransverseConfig,
    params: &MultiParams,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidExponent(format!("p = {p} must be >= 1")));
    }
    let r = cfg.box_level(b)?;
    if !(q <= s && s <= r) {
        return Err(LabError::InvalidNesting(format!(
            "need q <= s <= r, got q = {q}, s = {s}, r = {r}"
        )));
    }
    if s == r {
        return multilinear_d(2.0, q, b, g, cfg, params);
    }
    cfg.check_resolution(g, q)?;
    let layout = CapLayout::new(cfg.caps_at(q)?);
    let mut ev = SliceEvaluator::new(&padded_grid(b, params)?, &[], g)?;
    let subs = b.partition(cfg.box_side(s))?;
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
    let idx = ev.add_windows(&windows)?;
    let requests: Vec<NormRequest> = idx
        .iter()
        .map(|&w| NormRequest { weight: w, exponent: 2.0 })
        .collect();
    let field = CapField::caps(g, &layout.caps)?;
    let sums = ev.evaluate(&field, &requests, false)?;
    let vol = subs[0].volume();
    let mean = (0..subs.len())
        .map(|k| {
            let norms2 = sums.cap.iter().map(|row| row[k] / vol);
            geometric_mean_of_l2(&layout.by_cube(cfg.n(), norms2)).powf(p)
        })
        .sum::<f64>()
        / subs.len() as f64;
    Ok(mean.powf(1.0 / p))
}

/// Both sides of the ball-inflation inequality and their ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Average over `Delta` (side `1/delta`) in `B` (side `delta^-2`, centered at
/// the origin) of `[prod_i (sum_{Q_{i,1}} ||E g||^2_{L^t_#(w_Delta)})^{1/2}]^{p/n}`,
/// against the same expression with `w_B`; `t = p(n-1)/n`.
pub fn ball_inflation_check(g: &GridFunction, p: f64, cfg: &TransverseConfig, params: &MultiParams) -> Result<InflationCheck> {
    let n = cfg.n();
    let nf = n as f64;
    let p_min = 2.0 * nf / (nf - 1.0);
    if !(p >= p_min) {
        return Err(LabError::InvalidExponent(format!(
            "ball inflation needs p >= 2n/(n-1) = {p_min}, got p = {p}"
        )));
    }
    let t = p * (nf - 1.0) / nf;
    cfg.check_resolution(g, 1)?;
    let b = SpatialCube::centered(n, cfg.box_side(2))?;
    let layout = CapLayout::new(cfg.caps_at(1)?);
    let mut ev = SliceEvaluator::new(&padded_grid(&b, params)?, &[poly(&b, params.exponent)?], g)?;
    let subs = b.partition(cfg.box_side(1))?;
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
    let idx = ev.add_windows(&windows)?;
    let mut requests = vec![NormRequest { weight: 0, exponent: t }];
    requests.extend(idx.iter().map(|&w| NormRequest { weight: w, exponent: t }));
    let field = CapField::caps(g, &layout.caps)?;
    let sums = ev.evaluate(&field, &requests, false)?;
    let vol_b = b.volume();
    let vol_d = subs[0].volume();
    let rhs = geometric_mean_of_l2(
        &layout.by_cube(n, sums.cap.iter().map(|r| (r[0] / vol_b).powf(2.0 / t))),
    )
    .powf(p / nf);
    let lhs = (0..subs.len())
        .map(|k| {
            geometric_mean_of_l2(
                &layout.by_cube(n, sums.cap.iter().map(|r| (r[k + 1] / vol_d).powf(2.0 / t))),
            )
            .powf(p / nf)
        })
        .sum::<f64>()
        / subs.len() as f64;
    if rhs == 0.0 {
        return Err(LabError::Degenerate("g vanishes on some transverse cube".into()));
    }
    Ok(InflationCheck {
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

/// Output spec for the sum of the given groups (or the group itself).
pub(crate) fn sum_output(members: &[usize], requests: Vec<NormRequest>) -> OutputSpec {
    let output = if members.len() == 1 {
        Output::Group(members[0])
    } else {
        Output::Sum(members.to_vec())
    };
    OutputSpec { output, requests }
}
