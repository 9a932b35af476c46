//! Frequency-side and spatial-side cube geometry.
//!
//! Frequency cubes live in `[0,1]^d` and always have dyadic side `2^-level`
//! with corners on the lattice `2^-level Z^d`, so partitions and the
//! rescaling of corners are exact. Spatial cubes are ordinary float boxes.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A dyadic length `2^-level` with `level >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DyadicLength {
    level: u32,
}

impl DyadicLength {
    pub const MAX_LEVEL: u32 = 52;

    pub fn new(level: u32) -> Result<Self> {
        if level > Self::MAX_LEVEL {
            return Err(LabError::InvalidScale(format!(
                "dyadic level {level} exceeds {}",
                Self::MAX_LEVEL
            )));
        }
        Ok(Self { level })
    }

    /// Parses a float that must be exactly `2^-k` for some `k >= 0`.
    pub fn from_f64(x: f64) -> Result<Self> {
        match dyadic_level_of(x) {
            Some(level) if level <= Self::MAX_LEVEL => Ok(Self { level }),
            _ => Err(LabError::InvalidScale(format!(
                "{x} is not a dyadic length 2^-k in (0, 1]"
            ))),
        }
    }

    pub fn level(self) -> u32 {
        self.level
    }

    pub fn value(self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// Number of cells of this length per unit.
    pub fn per_unit(self) -> u64 {
        1u64 << self.level
    }
}

/// Returns `k` when `x == 2^-k` exactly with `k >= 0`.
pub fn dyadic_level_of(x: f64) -> Option<u32> {
    if !(x > 0.0 && x <= 1.0 && x.is_normal()) {
        return None;
    }
    let bits = x.to_bits();
    if bits & ((1u64 << 52) - 1) != 0 {
        return None;
    }
    let exp = ((bits >> 52) & 0x7ff) as i64 - 1023;
    Some((-exp) as u32)
}

/// Returns `k` when `x == 2^k` exactly with `k >= 0`.
pub fn power_of_two_exponent(x: f64) -> Option<u32> {
    if !(x >= 1.0 && x.is_finite()) {
        return None;
    }
    let bits = x.to_bits();
    if bits & ((1u64 << 52) - 1) != 0 {
        return None;
    }
    Some((((bits >> 52) & 0x7ff) as i64 - 1023) as u32)
}

/// A dyadic rational `numer / 2^level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    pub numer: i64,
    pub level: u32,
}

impl Dyadic {
    pub fn new(numer: i64, level: u32) -> Self {
        Self { numer, level }.reduced()
    }

    pub fn reduced(mut self) -> Self {
        while self.level > 0 && self.numer % 2 == 0 {
            self.numer /= 2;
            self.level -= 1;
        }
        if self.numer == 0 {
            self.level = 0;
        }
        self
    }

    pub fn to_f64(self) -> f64 {
        self.numer as f64 * (-(self.level as f64)).exp2()
    }

    fn at_level(self, level: u32) -> i64 {
        debug_assert!(level >= self.level);
        self.numer << (level - self.level)
    }

    pub fn sub(self, other: Dyadic) -> Dyadic {
        let level = self.level.max(other.level);
        Dyadic::new(self.at_level(level) - other.at_level(level), level)
    }

    /// Multiplies by `2^k`.
    pub fn scale_pow2(self, k: u32) -> Dyadic {
        if k <= self.level {
            Dyadic::new(self.numer, self.level - k)
        } else {
            Dyadic::new(self.numer << (k - self.level), 0)
        }
    }
}

/// An axis-parallel dyadic cube in `[0,1]^d`.
///
/// The corner is stored as integer multiples of the side `2^-level`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCube")]
pub struct FrequencyCube {
    corner: Vec<u64>,
    level: u32,
}

#[derive(Deserialize)]
struct RawCube {
    corner: Vec<u64>,
    level: u32,
}

impl TryFrom<RawCube> for FrequencyCube {
    type Error = LabError;

    fn try_from(raw: RawCube) -> Result<Self> {
        FrequencyCube::new(raw.corner, raw.level)
    }
}

impl FrequencyCube {
    pub fn new(corner: Vec<u64>, level: u32) -> Result<Self> {
        if corner.is_empty() {
            return Err(LabError::Domain("frequency cube needs dimension >= 1".into()));
        }
        DyadicLength::new(level)?;
        let per_unit = 1u64 << level;
        if let Some(c) = corner.iter().find(|&&c| c >= per_unit) {
            return Err(LabError::Domain(format!(
                "corner index {c} at level {level} leaves [0,1]"
            )));
        }
        Ok(Self { corner, level })
    }

    /// The unit cube `[0,1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            corner: vec![0; dim.max(1)],
            level: 0,
        }
    }

    /// Builds a cube from float corner and side; both must be exactly dyadic.
    pub fn from_f64(corner: &[f64], side: f64) -> Result<Self> {
        let len = DyadicLength::from_f64(side)?;
        let scale = len.per_unit() as f64;
        let mut idx = Vec::with_capacity(corner.len());
        for &c in corner {
            let k = c * scale;
            if !(k >= 0.0 && k.fract() == 0.0) {
                return Err(LabError::InvalidScale(format!(
                    "corner coordinate {c} is not a multiple of side {side}"
                )));
            }
            idx.push(k as u64);
        }
        Self::new(idx, len.level())
    }

    pub fn dim(&self) -> usize {
        self.corner.len()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn side_length(&self) -> DyadicLength {
        DyadicLength { level: self.level }
    }

    pub fn side(&self) -> f64 {
        self.side_length().value()
    }

    pub fn corner_index(&self) -> &[u64] {
        &self.corner
    }

    pub fn corner(&self) -> Vec<f64> {
        let s = self.side();
        self.corner.iter().map(|&c| c as f64 * s).collect()
    }

    pub fn corner_dyadic(&self) -> Vec<Dyadic> {
        self.corner
            .iter()
            .map(|&c| Dyadic::new(c as i64, self.level))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.corner.iter().map(|&c| (c as f64 + 0.5) * s).collect()
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim() as i32)
    }

    /// True when `other` is contained in `self` (closed cubes).
    pub fn contains_cube(&self, other: &FrequencyCube) -> bool {
        if other.dim() != self.dim() || other.level < self.level {
            return false;
        }
        let shift = other.level - self.level;
        self.corner
            .iter()
            .zip(&other.corner)
            .all(|(&a, &b)| (b >> shift) == a)
    }

    pub fn contains_point(&self, xi: &[f64]) -> bool {
        let s = self.side();
        xi.len() == self.dim()
            && self
                .corner
                .iter()
                .zip(xi)
                .all(|(&c, &x)| x >= c as f64 * s && x <= (c + 1) as f64 * s)
    }
}

impl fmt::Display for FrequencyCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.side();
        let parts: Vec<String> = self
            .corner
            .iter()
            .map(|&c| format!("[{}, {}]", c as f64 * s, (c + 1) as f64 * s))
            .collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// The unique partition of `q` into cubes of side `alpha`, in lexicographic
/// corner order (axis 0 slowest).
pub fn dyadic_partition(q: &FrequencyCube, alpha: DyadicLength) -> Result<Vec<FrequencyCube>> {
    if alpha.level() < q.level() {
        return Err(LabError::InvalidScale(format!(
            "partition scale {} exceeds cube side {}",
            alpha.value(),
            q.side()
        )));
    }
    let shift = alpha.level() - q.level();
    if shift > 30 {
        return Err(LabError::InvalidScale(format!(
            "partition of side {} into side {} is too fine",
            q.side(),
            alpha.value()
        )));
    }
    let per_axis = 1u64 << shift;
    let dim = q.dim();
    let total = per_axis.pow(dim as u32) as usize;
    let base: Vec<u64> = q.corner.iter().map(|&c| c << shift).collect();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0u64; dim];
    for _ in 0..total {
        let corner = base.iter().zip(&idx).map(|(b, k)| b + k).collect();
        out.push(FrequencyCube {
            corner,
            level: alpha.level(),
        });
        for axis in (0..dim).rev() {
            idx[axis] += 1;
            if idx[axis] < per_axis {
                break;
            }
            idx[axis] = 0;
        }
    }
    Ok(out)
}

/// Downward unit normal `(2xi, -1)/sqrt(1 + 4|xi|^2)` to the graph of `|xi|^2`.
pub fn paraboloid_normal(xi: &[f64]) -> Vec<f64> {
    let norm = (1.0 + 4.0 * xi.iter().map(|x| x * x).sum::<f64>()).sqrt();
    xi.iter()
        .map(|x| 2.0 * x / norm)
        .chain(std::iter::once(-1.0 / norm))
        .collect()
}

/// Sampled lower bound on the normal-determinant over `n` caps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransversalityCertificate {
    pub cubes: Vec<String>,
    pub nu_lower: f64,
    pub sample_density: usize,
    /// Indices of the sample points (per cube) attaining the minimum.
    pub argmin: Vec<usize>,
}

/// Lattice of `density` points per axis (endpoints included) in `q`.
pub fn cube_sample_points(q: &FrequencyCube, density: usize) -> Vec<Vec<f64>> {
    let dim = q.dim();
    let corner = q.corner();
    let side = q.side();
    let density = density.max(2);
    let total = density.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        out.push(
            corner
                .iter()
                .zip(&idx)
                .map(|(c, &k)| c + side * k as f64 / (density - 1) as f64)
                .collect(),
        );
        for axis in (0..dim).rev() {
            idx[axis] += 1;
            if idx[axis] < density {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

/// Absolute determinant of the square matrix whose rows are `rows`.
pub fn abs_det(rows: &[&[f64]]) -> f64 {
    let n = rows.len();
    match n {
        1 => rows[0][0].abs(),
        2 => (rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]).abs(),
        3 => {
            let (a, b, c) = (rows[0], rows[1], rows[2]);
            (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]))
                .abs()
        }
        _ => DMatrix::from_fn(n, n, |i, j| rows[i][j]).determinant().abs(),
    }
}

/// Certifies transversality of `n` cubes in `[0,1]^{n-1}` by exhaustive
/// sampling of normals at `density` points per axis per cube.
pub fn transversality(cubes: &[FrequencyCube], density: usize) -> Result<TransversalityCertificate> {
    let n = cubes.len();
    if n < 2 || cubes.iter().any(|q| q.dim() != n - 1) {
        return Err(LabError::Domain(format!(
            "transversality needs n cubes in [0,1]^(n-1); got {n} cubes"
        )));
    }
    if density < 2 {
        return Err(LabError::Precondition("sample density must be >= 2".into()));
    }
    let normals: Vec<Vec<Vec<f64>>> = cubes
        .iter()
        .map(|q| {
            cube_sample_points(q, density)
                .iter()
                .map(|p| paraboloid_normal(p))
                .collect()
        })
        .collect();
    let counts: Vec<usize> = normals.iter().map(Vec::len).collect();
    let mut idx = vec![0usize; n];
    let mut best = f64::INFINITY;
    let mut argmin = idx.clone();
    loop {
        let rows: Vec<&[f64]> = (0..n).map(|i| normals[i][idx[i]].as_slice()).collect();
        let d = abs_det(&rows);
        if d < best {
            best = d;
            argmin.clone_from(&idx);
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                return Ok(TransversalityCertificate {
                    cubes: cubes.iter().map(ToString::to_string).collect(),
                    nu_lower: best,
                    sample_density: density,
                    argmin,
                });
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// An axis-parallel cube `B(c, R)` in `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialCube {
    pub center: Vec<f64>,
    pub side: f64,
}

impl SpatialCube {
    pub fn new(center: Vec<f64>, side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(LabError::Domain(format!("spatial cube side {side} must be > 0")));
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(LabError::Domain("spatial cube center must be finite".into()));
        }
        Ok(Self { center, side })
    }

    pub fn centered(dim: usize, side: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], side)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let h = self.side / 2.0;
        self.center.iter().zip(x).all(|(c, v)| (v - c).abs() <= h)
    }

    /// The partition of this cube into cubes of side `sub_side`, where the
    /// ratio of sides is a power of two. Lexicographic order, axis 0 slowest.
    pub fn partition(&self, sub_side: f64) -> Result<Vec<SpatialCube>> {
        let ratio = self.side / sub_side;
        let k = power_of_two_exponent(ratio).ok_or_else(|| {
            LabError::InvalidScale(format!(
                "sub-cube side {sub_side} does not divide side {} dyadically",
                self.side
            ))
        })?;
        let per_axis = 1usize << k;
        let dim = self.dim();
        let total = per_axis.pow(dim as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let center = self
                .center
                .iter()
                .zip(&idx)
                .map(|(c, &j)| c - self.side / 2.0 + (j as f64 + 0.5) * sub_side)
                .collect();
            out.push(SpatialCube { center, side: sub_side });
            for axis in (0..dim).rev() {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(out)
    }
}

/// The affine pair stretching a cap `Q = a + [0, sigma^{1/2}]^{n-1}` onto
/// the unit cube and transporting space accordingly.
#[derive(Clone, Debug, PartialEq)]
pub struct RescaleMaps {
    cube: FrequencyCube,
    a: Vec<f64>,
    sqrt_sigma: f64,
    sigma: f64,
}

/// Builds the frequency map `xi -> (xi - a)/sigma^{1/2}` and the spatial map
/// `(x, x_n) -> ((x + 2a x_n) sigma^{1/2}, x_n sigma)` for the cube `q`.
///
/// Validated frequency cubes always lie inside `[0,1]^{n-1}`, so this cannot
/// fail once `q` exists.
pub fn parabolic_rescale_maps(q: &FrequencyCube) -> RescaleMaps {
    let sqrt_sigma = q.side();
    RescaleMaps {
        cube: q.clone(),
        a: q.corner(),
        sqrt_sigma,
        sigma: sqrt_sigma * sqrt_sigma,
    }
}

impl RescaleMaps {
    pub fn cube(&self) -> &FrequencyCube {
        &self.cube
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shift(&self) -> &[f64] {
        &self.a
    }

    pub fn freq_map(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .zip(&self.a)
            .map(|(x, a)| (x - a) / self.sqrt_sigma)
            .collect()
    }

    pub fn freq_map_inverse(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter()
            .zip(&self.a)
            .map(|(e, a)| a + e * self.sqrt_sigma)
            .collect()
    }

    /// The frequency map on dyadic rationals, computed exactly.
    pub fn freq_map_exact(&self, xi: &[Dyadic]) -> Vec<Dyadic> {
        xi.iter()
            .zip(self.cube.corner_dyadic())
            .map(|(&x, a)| x.sub(a).scale_pow2(self.cube.level()))
            .collect()
    }

    /// Image of a sub-cube of `Q` under the frequency map.
    pub fn freq_map_cube(&self, sub: &FrequencyCube) -> Result<FrequencyCube> {
        if !self.cube.contains_cube(sub) {
            return Err(LabError::Domain(format!(
                "cube {sub} is not contained in {}",
                self.cube
            )));
        }
        let shift = sub.level() - self.cube.level();
        let corner = sub
            .corner_index()
            .iter()
            .zip(self.cube.corner_index())
            .map(|(&s, &c)| s - (c << shift))
            .collect();
        FrequencyCube::new(corner, shift)
    }

    pub fn space_map(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let xn = x[n - 1];
        let mut out: Vec<f64> = x[..n - 1]
            .iter()
            .zip(&self.a)
            .map(|(xi, a)| (xi + 2.0 * a * xn) * self.sqrt_sigma)
            .collect();
        out.push(xn * self.sigma);
        out
    }

    pub fn space_map_inverse(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let xn = y[n - 1] / self.sigma;
        let mut out: Vec<f64> = y[..n - 1]
            .iter()
            .zip(&self.a)
            .map(|(yi, a)| yi / self.sqrt_sigma - 2.0 * a * xn)
            .collect();
        out.push(xn);
        out
    }

    /// Determinant of the spatial map, `sigma^{(n+1)/2}`.
    pub fn space_map_det(&self) -> f64 {
        let n = self.a.len() + 1;
        self.sigma.powf((n as f64 + 1.0) / 2.0)
    }
}
