//! Polynomial weights `w_{B,E}`, sampling grids over padded cubes, and the
//! weighted `L^p` norms built from them.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{CapField, NormRequest, SliceEvaluator};
use crate::error::{LabError, Result};
use crate::fields::GridFunction;
use crate::geometry::SpatialCube;

/// The pair `(B, E)` defining `w_{B,E}(x) = (1 + |x - c_B| / R)^{-E}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub cube: SpatialCube,
    pub exponent: f64,
}

impl WeightSpec {
    pub fn new(cube: SpatialCube, exponent: f64) -> Result<Self> {
        if !(exponent >= 1.0 && exponent.is_finite()) {
            return Err(LabError::InvalidExponent(format!(
                "weight exponent E = {exponent} must be >= 1"
            )));
        }
        Ok(Self { cube, exponent })
    }
}

pub fn weight_value(w: &WeightSpec, x: &[f64]) -> f64 {
    poly_weight(&w.cube.center, w.cube.side, w.exponent, x)
}

#[inline]
fn poly_weight(center: &[f64], radius: f64, exponent: f64, x: &[f64]) -> f64 {
    let d2: f64 = center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum();
    (1.0 + d2.sqrt() / radius).powf(-exponent)
}

/// A weight against which norms are taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Weight {
    Unit,
    /// `1_B`, the `E -> infinity` surrogate.
    Indicator(SpatialCube),
    Poly(WeightSpec),
}

impl Weight {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Weight::Unit => 1.0,
            Weight::Indicator(b) => {
                if b.contains(x) {
                    1.0
                } else {
                    0.0
                }
            }
            Weight::Poly(w) => weight_value(w, x),
        }
    }
}

/// Sampling lattice over the padded cube `rho B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub cube: SpatialCube,
    pub padding: f64,
    pub spacing: f64,
}

impl SpatialGrid {
    pub fn new(cube: SpatialCube, padding: f64, spacing: f64) -> Result<Self> {
        if !(padding >= 1.0 && padding.is_finite()) {
            return Err(LabError::Domain(format!("padding {padding} must be >= 1")));
        }
        if !(spacing > 0.0 && spacing <= 0.5) {
            return Err(LabError::Domain(format!(
                "grid spacing {spacing} must lie in (0, 1/2]"
            )));
        }
        let g = Self {
            cube,
            padding,
            spacing,
        };
        let exact = padding * g.cube.side / spacing;
        if exact < 0.5 || (exact - exact.round()).abs() > 1e-9 * exact.max(1.0) {
            return Err(LabError::Domain(format!(
                "padded side {} is not a whole number of spacings {spacing}",
                padding * g.cube.side
            )));
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    /// Points per axis.
    pub fn per_axis(&self) -> usize {
        (self.padding * self.cube.side / self.spacing).round() as usize
    }

    pub fn len(&self) -> usize {
        self.per_axis().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis_coord(&self, axis: usize, j: usize) -> f64 {
        let n = self.per_axis() as f64;
        self.cube.center[axis] + (j as f64 + 0.5 - n / 2.0) * self.spacing
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.per_axis()).map(|j| self.axis_coord(axis, j)).collect()
    }

    /// Volume element `dx^n` of one sample.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    /// Point with flat index `k` (row-major, axis 0 slowest).
    pub fn point(&self, mut k: usize) -> Vec<f64> {
        let n = self.per_axis();
        let mut x = vec![0.0; self.dim()];
        for axis in (0..self.dim()).rev() {
            x[axis] = self.axis_coord(axis, k % n);
            k /= n;
        }
        x
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }
}

/// Riemann sum `(sum |f|^p w dx^n)^{1/p}`, divided by `|B|` inside the root
/// when `normalized`.
pub fn weighted_norm(
    values: &[Complex64],
    grid: &SpatialGrid,
    p: f64,
    weight: &Weight,
    normalized: bool,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidExponent(format!("p = {p} must be >= 1")));
    }
    if values.len() != grid.len() {
        return Err(LabError::Domain(format!(
            "{} samples for a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    let sum: f64 = values
        .iter()
        .enumerate()
        .map(|(k, v)| v.norm().powf(p) * weight.value(&grid.point(k)))
        .sum();
    let mut s = sum * grid.cell_volume();
    if normalized {
        s /= grid.cube.volume();
    }
    Ok(s.powf(1.0 / p))
}

/// Fraction of the total mass of `w_{B,E}` on `R^n` lying outside the ball of
/// radius `a` about the center; the cube `rho B` contains the ball of radius
/// `rho R / 2`, so this bounds the truncation loss of a padded grid.
pub fn weight_tail_fraction(n: usize, radius: f64, exponent: f64, a: f64) -> f64 {
    let nf = n as f64;
    if exponent <= nf {
        return f64::INFINITY;
    }
    // u = 1/(1 + r/R) turns the radial integral into a finite one
    let integrand = |u: f64| (1.0 - u).powi(n as i32 - 1) * u.powf(exponent - nf - 1.0);
    let simpson = |hi: f64| {
        let steps = 4000;
        let h = hi / steps as f64;
        let mut s = integrand(0.0) + integrand(hi);
        for i in 1..steps {
            let c = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += c * integrand(i as f64 * h);
        }
        s * h / 3.0
    };
    let ua = 1.0 / (1.0 + a / radius);
    simpson(ua) / simpson(1.0)
}

/// The cover constants in `1_B <~ sum_Delta w_Delta <~ w_B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverBounds {
    pub c_low: f64,
    pub c_high: f64,
}

fn lattice(center: &[f64], half: f64, step: f64) -> Vec<Vec<f64>> {
    let per_axis = (2.0 * half / step).round() as usize + 1;
    let dim = center.len();
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            let mut x = vec![0.0; dim];
            for axis in (0..dim).rev() {
                x[axis] = center[axis] - half + (k % per_axis) as f64 * step;
                k /= per_axis;
            }
            x
        })
        .collect()
}

/// Measures `c_low = min_{x in B} sum_Delta w_Delta(x)` and
/// `c_high = max_x sum_Delta w_Delta(x) / w_B(x)` over test lattices of step
/// `R'/4` (endpoints included), the second lattice covering `4B`.
pub fn weight_cover_bounds(b: &SpatialCube, sub_side: f64, exponent: f64) -> Result<CoverBounds> {
    if sub_side > b.side {
        return Err(LabError::InvalidScale(format!(
            "sub-cube side {sub_side} exceeds side {}",
            b.side
        )));
    }
    let cover = b.partition(sub_side)?;
    let wb = WeightSpec::new(b.clone(), exponent)?;
    let sum_at = |x: &[f64]| -> f64 {
        cover
            .iter()
            .map(|d| poly_weight(&d.center, d.side, exponent, x))
            .sum()
    };
    let step = sub_side / 4.0;
    let inner = lattice(&b.center, b.side / 2.0, step);
    let c_low = inner
        .par_iter()
        .map(|x| sum_at(x))
        .reduce(|| f64::INFINITY, f64::min);
    let outer = lattice(&b.center, 2.0 * b.side, step);
    let c_high = outer
        .par_iter()
        .map(|x| sum_at(x) / weight_value(&wb, x))
        .reduce(|| 0.0, f64::max);
    Ok(CoverBounds { c_low, c_high })
}

/// `||E_Q g||_{L^q_#(w_{B,E})} / ||E_Q g||_{L^p_#(w_{B,Ep/q})}` on a padded grid
/// over `B`. Requires `side(Q) * side(B) = 1`.
pub fn reverse_holder_check(
    g: &GridFunction,
    b: &SpatialCube,
    p: f64,
    q: f64,
    exponent: f64,
    padding: f64,
    spacing: f64,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidExponent(format!("p = {p} must be >= 1")));
    }
    if q < p {
        return Err(LabError::InvalidExponent(format!(
            "reverse Hoelder needs q >= p, got p = {p}, q = {q}"
        )));
    }
    if (g.cube().side() * b.side - 1.0).abs() > 1e-12 {
        return Err(LabError::InvalidScale(format!(
            "cap side {} and cube side {} are not dual",
            g.cube().side(),
            b.side
        )));
    }
    if b.dim() != g.dim() + 1 {
        return Err(LabError::Domain("spatial cube has the wrong dimension".into()));
    }
    if g.is_zero() {
        return Err(LabError::Degenerate("g vanishes identically".into()));
    }
    if p == q {
        return Ok(1.0);
    }
    let grid = SpatialGrid::new(b.clone(), padding, spacing)?;
    let w_q = Weight::Poly(WeightSpec::new(b.clone(), exponent)?);
    let w_p = Weight::Poly(WeightSpec::new(b.clone(), exponent * p / q)?);
    let field = CapField::whole(g);
    let eval = SliceEvaluator::new(&grid, &[w_q, w_p], g)?;
    let sums = eval.evaluate(
        &field,
        &[
            NormRequest { weight: 0, exponent: q },
            NormRequest { weight: 1, exponent: p },
        ],
        false,
    )?;
    let vol = b.volume();
    let lhs = (sums.cap[0][0] / vol).powf(1.0 / q);
    let rhs = (sums.cap[0][1] / vol).powf(1.0 / p);
    if rhs == 0.0 {
        return Err(LabError::Degenerate("right-hand norm vanished".into()));
    }
    Ok(lhs / rhs)
}
