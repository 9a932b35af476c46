//! Weighted `L^t` sums of extension fields over spatial grids.
//!
//! A grid function is split into groups of cells (usually caps). For every
//! `x_n` slice the group fields are formed by contracting the cell
//! coefficients one frequency axis at a time against precomputed tables
//! `e(xi_k x_i)`, and `sum |F|^t W` is accumulated for each requested weight.
//!
//! Along each `x_bar` axis the modulus of every group field is periodic with
//! period `1/h` (`h` the cell width), so grid points congruent modulo that
//! period share one evaluation and their weights are summed ahead of time.
//!
//! Slices are evaluated in parallel and their partial sums are reduced in
//! slice order, so results do not depend on the number of workers.

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::fields::{e, CellBox, GridFunction};
use crate::geometry::{FrequencyCube, SpatialCube};
use crate::weights::{SpatialGrid, Weight};

/// One `sum |F|^t W` request against weight table `weight`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormRequest {
    pub weight: usize,
    pub exponent: f64,
}

/// Fields to integrate, built from the groups of a [`CapField`].
#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Group(usize),
    /// Field of the sum of the listed groups.
    Sum(Vec<usize>),
    /// `(prod_i |F_i|)^{1/k}` over the listed groups.
    GeometricMean(Vec<usize>),
}

/// A grid function together with a list of cell boxes.
#[derive(Clone, Debug)]
pub struct CapField<'a> {
    g: &'a GridFunction,
    boxes: Vec<CellBox>,
}

impl<'a> CapField<'a> {
    /// The whole grid as a single group.
    pub fn whole(g: &'a GridFunction) -> Self {
        let d = g.dim();
        Self {
            g,
            boxes: vec![CellBox {
                start: vec![0; d],
                count: vec![g.samples_per_axis(); d],
            }],
        }
    }

    /// One group per cap; each cap must align with the grid.
    pub fn caps(g: &'a GridFunction, caps: &[FrequencyCube]) -> Result<Self> {
        let boxes = caps.iter().map(|c| g.cell_box(c)).collect::<Result<_>>()?;
        Ok(Self { g, boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn grid_function(&self) -> &GridFunction {
        self.g
    }
}

/// An output field with the sums requested of it.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpec {
    pub output: Output,
    pub requests: Vec<NormRequest>,
}

/// A sub-cube integrated on its own: the points of the base grid inside
/// `padding * cube`, weighted by `weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub cube: SpatialCube,
    pub padding: f64,
    pub weight: Weight,
}

#[derive(Clone, Debug)]
enum Table {
    /// `values[slice * residues + r]`: weights summed over congruent points.
    Folded(Vec<f64>),
    Window {
        slice_start: usize,
        slice_count: usize,
        /// Residue of every `x_bar` point of the window.
        residue: Vec<u32>,
        /// `values[slice_offset * residue.len() + i]`.
        values: Vec<f64>,
    },
}

/// Reusable evaluation context: folded coordinates, weight tables, and phase
/// tables for a fixed grid layout and frequency template.
#[derive(Clone, Debug)]
pub struct SliceEvaluator {
    /// Coordinates of the evaluated points along each `x_bar` axis.
    coords: Vec<Vec<f64>>,
    slices: Vec<f64>,
    residues: usize,
    tables: Vec<Table>,
    cell_volume: f64,
    base: Option<SpatialGrid>,
    // template of the frequency grid
    template_cube: FrequencyCube,
    template_m: usize,
    template_nodes: Vec<Vec<f64>>,
    cell_weight: f64,
    /// `phase[axis]`: re and im of `e(xi_k x_r)`, row `k`, column `r`.
    phase: Vec<(Vec<f64>, Vec<f64>)>,
    folded: bool,
}

fn fold_length(period: f64, spacing: f64, n: usize) -> Option<usize> {
    let l = period / spacing;
    let lr = l.round();
    if lr >= 1.0 && (l - lr).abs() < 1e-9 * l && (lr as usize) < n {
        Some(lr as usize)
    } else {
        None
    }
}

impl SliceEvaluator {
    /// Evaluation over a padded spatial grid with the given weights, for grid
    /// functions laid out like `template`.
    pub fn new(grid: &SpatialGrid, weights: &[Weight], template: &GridFunction) -> Result<Self> {
        let d = template.dim();
        if grid.dim() != d + 1 {
            return Err(LabError::Domain(format!(
                "spatial grid is {}-dimensional, frequencies need {}",
                grid.dim(),
                d + 1
            )));
        }
        let n_axis = grid.per_axis();
        let period = 1.0 / template.cell_width();
        let fold = fold_length(period, grid.spacing, n_axis);
        let lx = fold.unwrap_or(n_axis);
        let axis_coords: Vec<Vec<f64>> = (0..d).map(|i| grid.axis_coords(i)).collect();
        let coords: Vec<Vec<f64>> = axis_coords.iter().map(|c| c[..lx].to_vec()).collect();
        let slices = grid.axis_coords(d);
        let residues = lx.pow(d as u32);
        let full_bar = n_axis.pow(d as u32);

        let tables = weights
            .iter()
            .map(|w| {
                let per_slice: Vec<Vec<f64>> = slices
                    .par_iter()
                    .map(|&xn| {
                        let mut row = vec![0.0; residues];
                        let mut x = vec![0.0; d + 1];
                        x[d] = xn;
                        for flat in 0..full_bar {
                            let mut rem = flat;
                            let mut r = 0;
                            let mut stride = 1;
                            for axis in (0..d).rev() {
                                let j = rem % n_axis;
                                rem /= n_axis;
                                x[axis] = axis_coords[axis][j];
                                r += (j % lx) * stride;
                                stride *= lx;
                            }
                            row[r] += w.value(&x);
                        }
                        row
                    })
                    .collect();
                Table::Folded(per_slice.concat())
            })
            .collect();

        let mut ev = Self::assemble(coords, slices, tables, grid.cell_volume(), template, fold.is_some());
        ev.base = Some(grid.clone());
        Ok(ev)
    }

    /// One full period of the lattice `spacing Z^{n-1}` starting at the
    /// origin, on the single slice `x_n = slice`, unweighted. Requires the
    /// period `1/h` to be a whole number of spacings.
    pub fn period_box(template: &GridFunction, spacing: f64, slice: f64) -> Result<Self> {
        let d = template.dim();
        let period = 1.0 / template.cell_width();
        let l = fold_length(period, spacing, usize::MAX).ok_or_else(|| {
            LabError::Domain(format!(
                "period {period} is not a whole number of spacings {spacing}"
            ))
        })?;
        let coords = vec![(0..l).map(|j| j as f64 * spacing).collect::<Vec<_>>(); d];
        let residues = l.pow(d as u32);
        Ok(Self::assemble(
            coords,
            vec![slice],
            vec![Table::Folded(vec![1.0; residues])],
            spacing.powi(d as i32),
            template,
            false,
        ))
    }

    fn assemble(
        coords: Vec<Vec<f64>>,
        slices: Vec<f64>,
        tables: Vec<Table>,
        cell_volume: f64,
        template: &GridFunction,
        folded: bool,
    ) -> Self {
        let d = template.dim();
        let template_nodes: Vec<Vec<f64>> = (0..d).map(|i| template.axis_nodes(i)).collect();
        let phase = (0..d)
            .map(|i| {
                let l = coords[i].len();
                let mut re = Vec::with_capacity(template_nodes[i].len() * l);
                let mut im = Vec::with_capacity(template_nodes[i].len() * l);
                for &xi in &template_nodes[i] {
                    for &x in &coords[i] {
                        let z = e(xi * x);
                        re.push(z.re);
                        im.push(z.im);
                    }
                }
                (re, im)
            })
            .collect();
        let residues = coords.iter().map(|c| c.len()).product();
        Self {
            coords,
            slices,
            residues,
            tables,
            cell_volume,
            base: None,
            template_cube: template.cube().clone(),
            template_m: template.samples_per_axis(),
            template_nodes,
            cell_weight: template.cell_weight(),
            phase,
            folded,
        }
    }

    /// Registers sub-cube windows of the base grid and returns their weight
    /// indices. Each window must be a whole block of base grid points.
    pub fn add_windows(&mut self, windows: &[Window]) -> Result<Vec<usize>> {
        let base = self
            .base
            .clone()
            .ok_or_else(|| LabError::Precondition("windows need a spatial base grid".into()))?;
        let d = base.dim() - 1;
        let n_axis = base.per_axis();
        let lx = self.coords[0].len();
        let new_tables: Vec<Table> = windows
            .par_iter()
            .map(|w| -> Result<Table> {
                let sub = SpatialGrid::new(w.cube.clone(), w.padding, base.spacing)?;
                let count = sub.per_axis();
                let mut start = Vec::with_capacity(d + 1);
                for axis in 0..=d {
                    let s = (w.cube.center[axis] - base.cube.center[axis]) / base.spacing
                        + (n_axis as f64 - count as f64) / 2.0;
                    let sr = s.round();
                    if (s - sr).abs() > 1e-6 || sr < 0.0 || sr as usize + count > n_axis {
                        return Err(LabError::Domain(format!(
                            "window around {:?} is not a block of the base grid",
                            w.cube.center
                        )));
                    }
                    start.push(sr as usize);
                }
                let bar = count.pow(d as u32);
                let mut residue = Vec::with_capacity(bar);
                for flat in 0..bar {
                    let mut rem = flat;
                    let mut r = 0;
                    let mut stride = 1;
                    for axis in (0..d).rev() {
                        let j = start[axis] + rem % count;
                        rem /= count;
                        r += (j % lx) * stride;
                        stride *= lx;
                    }
                    residue.push(r as u32);
                }
                let mut values = Vec::with_capacity(bar * count);
                let mut x = vec![0.0; d + 1];
                for s in 0..count {
                    x[d] = base.axis_coord(d, start[d] + s);
                    for flat in 0..bar {
                        let mut rem = flat;
                        for axis in (0..d).rev() {
                            x[axis] = base.axis_coord(axis, start[axis] + rem % count);
                            rem /= count;
                        }
                        values.push(w.weight.value(&x));
                    }
                }
                Ok(Table::Window {
                    slice_start: start[d],
                    slice_count: count,
                    residue,
                    values,
                })
            })
            .collect::<Result<_>>()?;
        let first = self.tables.len();
        self.tables.extend(new_tables);
        Ok((first..self.tables.len()).collect())
    }

    /// Whether congruent grid points were merged.
    pub fn is_folded(&self) -> bool {
        self.folded
    }

    /// Number of distinct field evaluations per slice.
    pub fn residues(&self) -> usize {
        self.residues
    }

    pub fn slice_count(&self) -> usize {
        self.slices.len()
    }

    fn check_template(&self, g: &GridFunction) -> Result<()> {
        if g.cube() != &self.template_cube
            || g.samples_per_axis() != self.template_m
            || g.cell_weight() != self.cell_weight
        {
            return Err(LabError::Precondition(
                "grid function layout differs from the evaluator template".into(),
            ));
        }
        Ok(())
    }

    /// Sums `sum |F|^t W dx^n`, indexed `[output][request]`.
    pub fn evaluate_outputs(&self, field: &CapField, specs: &[OutputSpec]) -> Result<Vec<Vec<f64>>> {
        let g = field.g;
        self.check_template(g)?;
        for spec in specs {
            let ok = match &spec.output {
                Output::Group(i) => *i < field.len(),
                Output::Sum(v) | Output::GeometricMean(v) => {
                    !v.is_empty() && v.iter().all(|i| *i < field.len())
                }
            };
            if !ok {
                return Err(LabError::Precondition(format!(
                    "output {:?} names a missing group",
                    spec.output
                )));
            }
            if let Some(r) = spec.requests.iter().find(|r| r.weight >= self.tables.len()) {
                return Err(LabError::Precondition(format!("no weight table {}", r.weight)));
            }
        }
        let mut needed = vec![false; field.len()];
        for spec in specs {
            match &spec.output {
                Output::Group(i) => needed[*i] = true,
                Output::Sum(v) | Output::GeometricMean(v) => v.iter().for_each(|i| needed[*i] = true),
            }
        }
        let per_slice: Vec<Vec<f64>> = (0..self.slices.len())
            .into_par_iter()
            .map(|s| self.slice_sums(field, specs, &needed, s))
            .collect();
        let width: usize = specs.iter().map(|s| s.requests.len()).sum();
        let mut total = vec![0.0; width];
        for row in &per_slice {
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
            }
        }
        let mut out = Vec::with_capacity(specs.len());
        let mut at = 0;
        for spec in specs {
            let k = spec.requests.len();
            out.push(total[at..at + k].iter().map(|v| v * self.cell_volume).collect());
            at += k;
        }
        Ok(out)
    }

    /// Sums for each group, plus (when `with_total`) the sum of all groups.
    pub fn evaluate(
        &self,
        field: &CapField,
        requests: &[NormRequest],
        with_total: bool,
    ) -> Result<CapSums> {
        let mut specs: Vec<OutputSpec> = (0..field.len())
            .map(|i| OutputSpec {
                output: Output::Group(i),
                requests: requests.to_vec(),
            })
            .collect();
        if with_total {
            specs.push(OutputSpec {
                output: Output::Sum((0..field.len()).collect()),
                requests: requests.to_vec(),
            });
        }
        let mut sums = self.evaluate_outputs(field, &specs)?;
        let total = if with_total { sums.pop() } else { None };
        Ok(CapSums { cap: sums, total })
    }

    fn group_field(&self, g: &GridFunction, b: &CellBox, quad: &[Vec<(f64, f64)>]) -> (Vec<f64>, Vec<f64>) {
        let d = g.dim();
        let m = g.samples_per_axis();
        let values = g.values();
        // coefficients over the box, row-major
        let len = b.len();
        let mut cre = Vec::with_capacity(len);
        let mut cim = Vec::with_capacity(len);
        let mut idx = vec![0usize; d];
        for _ in 0..len {
            let mut flat = 0;
            let (mut pr, mut pi) = (self.cell_weight, 0.0);
            for axis in 0..d {
                let k = b.start[axis] + idx[axis];
                flat = flat * m + k;
                let (qr, qi) = quad[axis][k];
                let nr = pr * qr - pi * qi;
                pi = pr * qi + pi * qr;
                pr = nr;
            }
            let v = values[flat];
            cre.push(v.re * pr - v.im * pi);
            cim.push(v.re * pi + v.im * pr);
            for axis in (0..d).rev() {
                idx[axis] += 1;
                if idx[axis] < b.count[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        // contract the last axis first
        let mut shape: Vec<usize> = b.count.clone();
        let (mut re, mut im) = (cre, cim);
        for axis in (0..d).rev() {
            let before: usize = shape[..axis].iter().product();
            let after: usize = shape[axis + 1..].iter().product();
            let l = self.coords[axis].len();
            let (tre, tim) = &self.phase[axis];
            let (nre, nim) = contract_axis(
                &re,
                &im,
                before,
                shape[axis],
                after,
                &tre[b.start[axis] * l..],
                &tim[b.start[axis] * l..],
                l,
            );
            re = nre;
            im = nim;
            shape[axis] = l;
        }
        (re, im)
    }

    fn slice_sums(&self, field: &CapField, specs: &[OutputSpec], needed: &[bool], s: usize) -> Vec<f64> {
        let xn = self.slices[s];
        let g = field.g;
        // e(xi_k^2 x_n) per axis
        let quad: Vec<Vec<(f64, f64)>> = self
            .template_nodes
            .iter()
            .map(|nodes| {
                nodes
                    .iter()
                    .map(|&xi| {
                        let z = e(xi * xi * xn);
                        (z.re, z.im)
                    })
                    .collect()
            })
            .collect();
        let fields: Vec<Option<(Vec<f64>, Vec<f64>)>> = field
            .boxes
            .iter()
            .zip(needed)
            .map(|(b, &need)| need.then(|| self.group_field(g, b, &quad)))
            .collect();

        let r = self.residues;
        let mut out = Vec::new();
        let mut m2 = vec![0.0; r];
        for spec in specs {
            let mut scale = 1.0;
            match &spec.output {
                Output::Group(i) => {
                    let (re, im) = fields[*i].as_ref().unwrap();
                    for k in 0..r {
                        m2[k] = re[k] * re[k] + im[k] * im[k];
                    }
                }
                Output::Sum(list) => {
                    let mut sre = vec![0.0; r];
                    let mut sim = vec![0.0; r];
                    for i in list {
                        let (re, im) = fields[*i].as_ref().unwrap();
                        for k in 0..r {
                            sre[k] += re[k];
                            sim[k] += im[k];
                        }
                    }
                    for k in 0..r {
                        m2[k] = sre[k] * sre[k] + sim[k] * sim[k];
                    }
                }
                Output::GeometricMean(list) => {
                    // product of |F_i|^2, later raised to t/(2k)
                    m2.iter_mut().for_each(|v| *v = 1.0);
                    for i in list {
                        let (re, im) = fields[*i].as_ref().unwrap();
                        for k in 0..r {
                            m2[k] *= re[k] * re[k] + im[k] * im[k];
                        }
                    }
                    scale = 1.0 / list.len() as f64;
                }
            }
            let mut powers: Vec<(f64, Vec<f64>)> = Vec::new();
            for req in &spec.requests {
                let h = req.exponent * scale / 2.0;
                let v = match &self.tables[req.weight] {
                    Table::Folded(w) => power_sum(&m2, h, &w[s * r..(s + 1) * r]),
                    Table::Window {
                        slice_start,
                        slice_count,
                        residue,
                        values,
                    } => {
                        if s < *slice_start || s >= slice_start + slice_count {
                            0.0
                        } else {
                            let pw = match powers.iter().position(|(e, _)| *e == h) {
                                Some(i) => &powers[i].1,
                                None => {
                                    powers.push((h, power_array(&m2, h)));
                                    &powers.last().unwrap().1
                                }
                            };
                            let bar = residue.len();
                            let off = (s - slice_start) * bar;
                            residue
                                .iter()
                                .zip(&values[off..off + bar])
                                .map(|(&ri, w)| pw[ri as usize] * w)
                                .sum()
                        }
                    }
                };
                out.push(v);
            }
        }
        out
    }
}

fn power_array(m2: &[f64], h: f64) -> Vec<f64> {
    if h == 1.0 {
        return m2.to_vec();
    }
    if h.fract() == 0.0 && h.abs() < 64.0 {
        let k = h as i32;
        return m2.iter().map(|a| a.powi(k)).collect();
    }
    if (2.0 * h).fract() == 0.0 && h > 0.0 && h < 64.0 {
        let k = h.floor() as i32;
        return m2.iter().map(|a| a.powi(k) * a.sqrt()).collect();
    }
    m2.iter().map(|a| a.powf(h)).collect()
}

/// `sum_k m2_k^h w_k`, with fast paths for integer and half-integer `h`.
fn power_sum(m2: &[f64], h: f64, w: &[f64]) -> f64 {
    if h == 1.0 {
        return m2.iter().zip(w).map(|(a, b)| a * b).sum();
    }
    if h.fract() == 0.0 && h.abs() < 64.0 {
        let k = h as i32;
        return m2.iter().zip(w).map(|(a, b)| a.powi(k) * b).sum();
    }
    if (2.0 * h).fract() == 0.0 && h > 0.0 && h < 64.0 {
        let k = h.floor() as i32;
        return m2.iter().zip(w).map(|(a, b)| a.powi(k) * a.sqrt() * b).sum();
    }
    m2.iter().zip(w).map(|(a, b)| a.powf(h) * b).sum()
}

/// `out[a][r][b] = sum_k in[a][k][b] * tab[k][r]` for complex arrays in
/// split re/im storage.
#[allow(clippy::too_many_arguments)]
fn contract_axis(
    re: &[f64],
    im: &[f64],
    before: usize,
    m: usize,
    after: usize,
    tre: &[f64],
    tim: &[f64],
    l: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut ore = vec![0.0; before * l * after];
    let mut oim = vec![0.0; before * l * after];
    for a in 0..before {
        if after == 1 {
            let ore = &mut ore[a * l..(a + 1) * l];
            let oim = &mut oim[a * l..(a + 1) * l];
            for k in 0..m {
                let cr = re[a * m + k];
                let ci = im[a * m + k];
                if cr == 0.0 && ci == 0.0 {
                    continue;
                }
                let tr = &tre[k * l..(k + 1) * l];
                let ti = &tim[k * l..(k + 1) * l];
                for r in 0..l {
                    ore[r] += cr * tr[r] - ci * ti[r];
                    oim[r] += cr * ti[r] + ci * tr[r];
                }
            }
        } else {
            for r in 0..l {
                let base = (a * l + r) * after;
                for k in 0..m {
                    let tr = tre[k * l + r];
                    let ti = tim[k * l + r];
                    let src = (a * m + k) * after;
                    for b in 0..after {
                        let cr = re[src + b];
                        let ci = im[src + b];
                        ore[base + b] += cr * tr - ci * ti;
                        oim[base + b] += cr * ti + ci * tr;
                    }
                }
            }
        }
    }
    (ore, oim)
}

/// Per-cap sums and the optional sum-of-caps row.
#[derive(Clone, Debug, PartialEq)]
pub struct CapSums {
    /// `cap[i][j]`: group `i`, request `j`.
    pub cap: Vec<Vec<f64>>,
    pub total: Option<Vec<f64>>,
}
