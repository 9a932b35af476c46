//! Test functions on frequency grids and the extension operator `E_Q g`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{parabolic_rescale_maps, FrequencyCube};

/// `e(z) = exp(2 pi i z)`, with the argument reduced mod 1 first.
#[inline]
pub fn e(z: f64) -> Complex64 {
    let r = z - z.round();
    let (s, c) = (TAU * r).sin_cos();
    Complex64::new(c, s)
}

/// How grid samples are turned into an oscillatory sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingModel {
    /// Midpoint quadrature: nodes at cell centers, weight `(side/M)^{n-1}`.
    Continuum,
    /// Exponential sum: nodes on the lattice `corner + (side/M) Z`, unit weight.
    Lattice,
}

/// Complex samples of `g` on a uniform `M^{d}` grid over a frequency cube.
///
/// Values are stored row-major over the cell multi-index, axis 0 slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    cube: FrequencyCube,
    samples_per_axis: usize,
    values: Vec<Complex64>,
    model: SamplingModel,
}

/// A box of cells `start[i] .. start[i] + count[i]` in a grid function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellBox {
    pub start: Vec<usize>,
    pub count: Vec<usize>,
}

impl CellBox {
    pub fn len(&self) -> usize {
        self.count.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl GridFunction {
    pub fn new(
        cube: FrequencyCube,
        samples_per_axis: usize,
        values: Vec<Complex64>,
        model: SamplingModel,
    ) -> Result<Self> {
        if samples_per_axis == 0 {
            return Err(LabError::Domain("samples per axis must be >= 1".into()));
        }
        let expected = samples_per_axis.pow(cube.dim() as u32);
        if values.len() != expected {
            return Err(LabError::Domain(format!(
                "expected {expected} samples, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(LabError::Domain("grid function values must be finite".into()));
        }
        Ok(Self {
            cube,
            samples_per_axis,
            values,
            model,
        })
    }

    pub fn zeros(cube: FrequencyCube, samples_per_axis: usize, model: SamplingModel) -> Self {
        let len = samples_per_axis.max(1).pow(cube.dim() as u32);
        Self {
            cube,
            samples_per_axis: samples_per_axis.max(1),
            values: vec![Complex64::new(0.0, 0.0); len],
            model,
        }
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(
        cube: FrequencyCube,
        samples_per_axis: usize,
        model: SamplingModel,
        mut f: impl FnMut(&[f64]) -> Complex64,
    ) -> Self {
        let mut g = Self::zeros(cube, samples_per_axis, model);
        let mut node = vec![0.0; g.dim()];
        for flat in 0..g.values.len() {
            g.node_into(flat, &mut node);
            g.values[flat] = f(&node);
        }
        g
    }

    pub fn cube(&self) -> &FrequencyCube {
        &self.cube
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    pub fn samples_per_axis(&self) -> usize {
        self.samples_per_axis
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn model(&self) -> SamplingModel {
        self.model
    }

    pub fn with_model(mut self, model: SamplingModel) -> Self {
        self.model = model;
        self
    }

    /// Spacing between adjacent nodes along an axis.
    pub fn cell_width(&self) -> f64 {
        self.cube.side() / self.samples_per_axis as f64
    }

    /// Quadrature weight attached to each node.
    pub fn cell_weight(&self) -> f64 {
        match self.model {
            SamplingModel::Continuum => self.cell_width().powi(self.dim() as i32),
            SamplingModel::Lattice => 1.0,
        }
    }

    /// Offset of node `k` from the cube corner, in units of the cell width.
    pub fn node_offset(&self) -> f64 {
        match self.model {
            SamplingModel::Continuum => 0.5,
            SamplingModel::Lattice => 0.0,
        }
    }

    /// Coordinates of the nodes along one axis.
    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        let c = self.cube.corner()[axis];
        let h = self.cell_width();
        let o = self.node_offset();
        (0..self.samples_per_axis)
            .map(|k| c + (k as f64 + o) * h)
            .collect()
    }

    fn node_into(&self, mut flat: usize, out: &mut [f64]) {
        let corner = self.cube.corner();
        let h = self.cell_width();
        let o = self.node_offset();
        let m = self.samples_per_axis;
        for axis in (0..self.dim()).rev() {
            let k = flat % m;
            flat /= m;
            out[axis] = corner[axis] + (k as f64 + o) * h;
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_into(flat, &mut out);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut g = self.clone();
        g.values.iter_mut().for_each(|v| *v *= c);
        g
    }

    /// The box of cells lying in `sub`, which must align with the grid.
    pub fn cell_box(&self, sub: &FrequencyCube) -> Result<CellBox> {
        if !self.cube.contains_cube(sub) {
            return Err(LabError::Domain(format!(
                "cap {sub} is not inside the grid cube {}",
                self.cube
            )));
        }
        let shift = sub.level() - self.cube.level();
        let caps_per_axis = 1usize << shift;
        if self.samples_per_axis % caps_per_axis != 0 {
            return Err(LabError::Resolution(format!(
                "cap side {} is finer than or misaligned with the grid ({} samples per axis over side {}); need a multiple of {caps_per_axis} samples per axis",
                sub.side(),
                self.samples_per_axis,
                self.cube.side()
            )));
        }
        let per_cap = self.samples_per_axis / caps_per_axis;
        let start = sub
            .corner_index()
            .iter()
            .zip(self.cube.corner_index())
            .map(|(&s, &c)| ((s - (c << shift)) as usize) * per_cap)
            .collect();
        Ok(CellBox {
            start,
            count: vec![per_cap; self.dim()],
        })
    }

    /// Flat indices of the cells in a box, in row-major order.
    pub fn box_indices(&self, b: &CellBox) -> Vec<usize> {
        let m = self.samples_per_axis;
        let dim = self.dim();
        let mut out = Vec::with_capacity(b.len());
        let mut idx = vec![0usize; dim];
        for _ in 0..b.len() {
            let mut flat = 0;
            for axis in 0..dim {
                flat = flat * m + b.start[axis] + idx[axis];
            }
            out.push(flat);
            for axis in (0..dim).rev() {
                idx[axis] += 1;
                if idx[axis] < b.count[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        out
    }

    /// The same function with every cell outside `sub` set to zero.
    pub fn masked_to(&self, sub: &FrequencyCube) -> Result<Self> {
        let b = self.cell_box(sub)?;
        let keep = self.box_indices(&b);
        let mut g = Self::zeros(self.cube.clone(), self.samples_per_axis, self.model);
        for k in keep {
            g.values[k] = self.values[k];
        }
        Ok(g)
    }

    /// The restriction of `g` to the cells inside `sub`, as a grid function on `sub`.
    pub fn restrict(&self, sub: &FrequencyCube) -> Result<Self> {
        let b = self.cell_box(sub)?;
        let values = self.box_indices(&b).into_iter().map(|k| self.values[k]).collect();
        Self::new(sub.clone(), b.count[0], values, self.model)
    }
}

/// JSON fixture layout: `{cube: {corner, side}, M, model, values: [[re, im], ...]}`.
#[derive(Serialize, Deserialize)]
struct GridFunctionRepr {
    cube: CubeRepr,
    #[serde(rename = "M")]
    m: usize,
    model: SamplingModel,
    values: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct CubeRepr {
    corner: Vec<f64>,
    side: f64,
}

impl Serialize for GridFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GridFunctionRepr {
            cube: CubeRepr {
                corner: self.cube.corner(),
                side: self.cube.side(),
            },
            m: self.samples_per_axis,
            model: self.model,
            values: self.values.iter().map(|v| [v.re, v.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = GridFunctionRepr::deserialize(d)?;
        let cube = FrequencyCube::from_f64(&repr.cube.corner, repr.cube.side)
            .map_err(serde::de::Error::custom)?;
        let values = repr
            .values
            .into_iter()
            .map(|[re, im]| Complex64::new(re, im))
            .collect();
        GridFunction::new(cube, repr.m, values, repr.model).map_err(serde::de::Error::custom)
    }
}

/// The named families of test functions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TestFunction {
    Constant,
    /// Indicator of a cap inside the grid cube.
    CapIndicator { cap: String },
    RandomGaussian { seed: u64 },
    /// A single lattice node carrying a standard complex Gaussian amplitude.
    PointMassLattice { seed: u64 },
}

/// Standard complex Gaussian (E|z|^2 = 1).
pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Builds a test function on `q` with `m` samples per axis.
///
/// `CapIndicator` is given the cap directly through [`cap_indicator`]; the
/// enum variant carries only a display label for reports.
pub fn make_test_function(spec: &TestFunction, q: &FrequencyCube, m: usize) -> Result<GridFunction> {
    let m = m.max(1);
    match spec {
        TestFunction::Constant => Ok(GridFunction::from_fn(
            q.clone(),
            m,
            SamplingModel::Continuum,
            |_| Complex64::new(1.0, 0.0),
        )),
        TestFunction::CapIndicator { cap } => Err(LabError::Precondition(format!(
            "cap indicator '{cap}' must be built with cap_indicator()"
        ))),
        TestFunction::RandomGaussian { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut g = GridFunction::zeros(q.clone(), m, SamplingModel::Continuum);
            g.values.iter_mut().for_each(|v| *v = complex_gaussian(&mut rng));
            Ok(g)
        }
        TestFunction::PointMassLattice { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut g = GridFunction::zeros(q.clone(), m, SamplingModel::Lattice);
            let k = rng.gen_range(0..g.values.len());
            g.values[k] = complex_gaussian(&mut rng);
            Ok(g)
        }
    }
}

/// Indicator of `cap`: value 1 on nodes whose center lies in the cap.
pub fn cap_indicator(q: &FrequencyCube, cap: &FrequencyCube, m: usize) -> Result<GridFunction> {
    if !q.contains_cube(cap) {
        return Err(LabError::Domain(format!("cap {cap} is not inside {q}")));
    }
    Ok(GridFunction::from_fn(q.clone(), m, SamplingModel::Continuum, |xi| {
        if cap.contains_point(xi) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }))
}

/// Where a set of spatial points came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointProvenance {
    LatticeOfCube,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialPointSet {
    pub points: Vec<Vec<f64>>,
    pub provenance: PointProvenance,
}

impl SpatialPointSet {
    pub fn explicit(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(LabError::Domain("spatial points must be finite".into()));
        }
        Ok(Self {
            points,
            provenance: PointProvenance::Explicit,
        })
    }
}

/// Reference evaluation: one full phase per node and point.
pub fn evaluate_extension_direct(g: &GridFunction, points: &SpatialPointSet) -> Vec<Complex64> {
    let d = g.dim();
    let w = g.cell_weight();
    let nodes: Vec<Vec<f64>> = (0..g.values.len()).map(|k| g.node(k)).collect();
    points
        .points
        .iter()
        .map(|x| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (node, v) in nodes.iter().zip(&g.values) {
                let mut phase = 0.0;
                let mut sq = 0.0;
                for i in 0..d {
                    phase += node[i] * x[i];
                    sq += node[i] * node[i];
                }
                phase += sq * x[d];
                acc += v * e(phase);
            }
            acc * w
        })
        .collect()
}

fn contract_point(g: &GridFunction, x: &[f64], axis_nodes: &[Vec<f64>]) -> Complex64 {
    let d = g.dim();
    let m = g.samples_per_axis;
    let xn = x[d];
    // per-axis factors e(xi_k x_i + xi_k^2 x_n)
    let tables: Vec<Vec<Complex64>> = (0..d)
        .map(|i| {
            axis_nodes[i]
                .iter()
                .map(|&xi| e(xi * x[i] + xi * xi * xn))
                .collect()
        })
        .collect();
    // contract the last axis repeatedly
    let mut cur: Vec<Complex64> = g.values.clone();
    for axis in (0..d).rev() {
        let t = &tables[axis];
        cur = cur
            .chunks_exact(m)
            .map(|row| row.iter().zip(t).map(|(a, b)| a * b).sum())
            .collect();
    }
    cur[0] * g.cell_weight()
}

/// `E_Q g(x)` at every point, via the separable factorisation of the phase.
/// Output order matches the input point order.
pub fn evaluate_extension(g: &GridFunction, points: &SpatialPointSet) -> Result<Vec<Complex64>> {
    let n = g.dim() + 1;
    if let Some(bad) = points.points.iter().find(|p| p.len() != n) {
        return Err(LabError::Domain(format!(
            "point {bad:?} is not in R^{n}"
        )));
    }
    let axis_nodes: Vec<Vec<f64>> = (0..g.dim()).map(|i| g.axis_nodes(i)).collect();
    Ok(points
        .points
        .par_iter()
        .map(|x| contract_point(g, x, &axis_nodes))
        .collect())
}

/// `g_L = g o L^{-1}` on `L(Q~)`: the same samples, re-indexed through the
/// frequency map of `q`.
pub fn pullback(g: &GridFunction, q: &FrequencyCube) -> Result<GridFunction> {
    let maps = parabolic_rescale_maps(q);
    let cube = maps.freq_map_cube(g.cube())?;
    GridFunction::new(cube, g.samples_per_axis, g.values.clone(), g.model)
}

/// Both sides of `|E_{Q~} g(x)| = sigma^{(n-1)/2} |E_{L(Q~)} g_L(T x)|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub relerr: f64,
}

pub fn rescaling_covariance_check(g: &GridFunction, q: &FrequencyCube, x: &[f64]) -> Result<CovarianceCheck> {
    if !q.contains_cube(g.cube()) {
        return Err(LabError::Domain(format!(
            "grid cube {} is not inside {q}",
            g.cube()
        )));
    }
    let maps = parabolic_rescale_maps(q);
    let g_l = pullback(g, q)?;
    let pts = SpatialPointSet::explicit(vec![x.to_vec()])?;
    let lhs = evaluate_extension(g, &pts)?[0].norm();
    let tx = SpatialPointSet::explicit(vec![maps.space_map(x)])?;
    let n = x.len();
    // lattice sums carry unit weights, so no Jacobian factor appears
    let jac = match g.model() {
        SamplingModel::Continuum => maps.sigma().powf((n as f64 - 1.0) / 2.0),
        SamplingModel::Lattice => 1.0,
    };
    let rhs = jac * evaluate_extension(&g_l, &tx)?[0].norm();
    let scale = lhs.abs().max(rhs.abs());
    let relerr = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(CovarianceCheck { lhs, rhs, relerr })
}
