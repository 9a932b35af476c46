//! The linear decoupling functional and its empirical constant.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{CapField, NormRequest, SliceEvaluator};
use crate::error::{LabError, Result};
use crate::fields::{complex_gaussian, e, GridFunction, SamplingModel};
use crate::geometry::{dyadic_partition, DyadicLength, FrequencyCube, SpatialCube};
use crate::weights::{SpatialGrid, Weight, WeightSpec};

/// Sampling parameters of the spatial integrals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub padding: f64,
    pub spacing: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            padding: 4.0,
            spacing: 0.5,
        }
    }
}

/// Where the spatial norms of an `L^2` check are taken.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormDomain {
    /// `L^2(w_{B,E})` on a padded grid over `B`.
    Weighted { exponent: f64, grid: GridParams },
    /// One full period of the frequency lattice in `x_bar`, on one `x_n`
    /// slice, unweighted.
    PeriodBox { spacing: f64, slice: f64 },
}

/// One decoupling configuration: dimension, exponent, weight and scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingInstance {
    pub n: usize,
    pub p: f64,
    pub exponent: f64,
    /// `k` with `delta = 4^-k`.
    pub delta_exponent: u32,
    /// Level of the cap side `2^-level`; `delta^{1/2}` corresponds to `k`.
    pub cap_level: u32,
    /// Frequency samples per cap and axis.
    pub samples_per_cap: usize,
    pub grid: GridParams,
}

impl DecouplingInstance {
    pub fn new(n: usize, p: f64, exponent: f64, delta_exponent: u32) -> Result<Self> {
        let inst = Self {
            n,
            p,
            exponent,
            delta_exponent,
            cap_level: delta_exponent,
            samples_per_cap: 8,
            grid: GridParams::default(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_samples_per_cap(mut self, m: usize) -> Self {
        self.samples_per_cap = m;
        self
    }

    pub fn with_grid(mut self, grid: GridParams) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(LabError::Domain(format!("n = {} must be >= 2", self.n)));
        }
        if !(self.p >= 2.0) {
            return Err(LabError::InvalidExponent(format!("p = {} must be >= 2", self.p)));
        }
        if !(self.exponent >= 1.0) {
            return Err(LabError::InvalidExponent(format!("E = {} must be >= 1", self.exponent)));
        }
        if self.samples_per_cap == 0 {
            return Err(LabError::Resolution("need at least one sample per cap".into()));
        }
        if 2 * self.delta_exponent > DyadicLength::MAX_LEVEL || self.cap_level > DyadicLength::MAX_LEVEL {
            return Err(LabError::InvalidScale(format!(
                "delta = 4^-{} is too small",
                self.delta_exponent
            )));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        0.25f64.powi(self.delta_exponent as i32)
    }

    /// Side `1/delta` of the spatial cube.
    pub fn box_side(&self) -> f64 {
        4f64.powi(self.delta_exponent as i32)
    }

    pub fn caps_per_axis(&self) -> usize {
        1usize << self.cap_level
    }

    pub fn cap_count(&self) -> usize {
        self.caps_per_axis().pow(self.n as u32 - 1)
    }

    pub fn caps(&self) -> Result<Vec<FrequencyCube>> {
        dyadic_partition(&FrequencyCube::unit(self.n - 1), DyadicLength::new(self.cap_level)?)
    }

    /// A zero grid function with the instance's frequency layout.
    pub fn template(&self) -> GridFunction {
        GridFunction::zeros(
            FrequencyCube::unit(self.n - 1),
            self.caps_per_axis() * self.samples_per_cap,
            SamplingModel::Continuum,
        )
    }

    pub fn spatial_cube(&self) -> Result<SpatialCube> {
        SpatialCube::centered(self.n, self.box_side())
    }
}

/// `||sum_Q E_Q g|| / (sum_Q ||E_Q g||^2)^{1/2}` from the raw sums
/// `sum |F|^p W`.
fn ratio_from_sums(total: f64, caps: &[f64], p: f64) -> Result<f64> {
    let rhs2: f64 = caps.iter().map(|s| s.powf(2.0 / p)).sum();
    if rhs2 == 0.0 {
        return Err(LabError::Degenerate("every cap norm vanishes".into()));
    }
    Ok(total.powf(1.0 / p) / rhs2.sqrt())
}

/// Decoupling ratios for many grid functions sharing one layout.
#[derive(Clone, Debug)]
pub struct RatioEvaluator {
    inst: DecouplingInstance,
    caps: Vec<FrequencyCube>,
    evaluator: SliceEvaluator,
}

impl RatioEvaluator {
    pub fn new(inst: &DecouplingInstance, template: &GridFunction) -> Result<Self> {
        inst.validate()?;
        if template.cube() != &FrequencyCube::unit(inst.n - 1) {
            return Err(LabError::Domain("g must be defined on the full unit cube".into()));
        }
        let caps = inst.caps()?;
        template.cell_box(&caps[0])?;
        let b = inst.spatial_cube()?;
        let grid = SpatialGrid::new(b.clone(), inst.grid.padding, inst.grid.spacing)?;
        let weight = Weight::Poly(WeightSpec::new(b, inst.exponent)?);
        let evaluator = SliceEvaluator::new(&grid, &[weight], template)?;
        Ok(Self {
            inst: inst.clone(),
            caps,
            evaluator,
        })
    }

    pub fn instance(&self) -> &DecouplingInstance {
        &self.inst
    }

    pub fn caps(&self) -> &[FrequencyCube] {
        &self.caps
    }

    pub fn ratio(&self, g: &GridFunction) -> Result<f64> {
        if g.is_zero() {
            return Err(LabError::Degenerate("g vanishes identically".into()));
        }
        let field = CapField::caps(g, &self.caps)?;
        let sums = self.evaluator.evaluate(
            &field,
            &[NormRequest {
                weight: 0,
                exponent: self.inst.p,
            }],
            true,
        )?;
        let caps: Vec<f64> = sums.cap.iter().map(|r| r[0]).collect();
        ratio_from_sums(sums.total.unwrap()[0], &caps, self.inst.p)
    }
}

/// `||E g||_{L^p(w_B)} / (sum_Q ||E_Q g||^2_{L^p(w_B)})^{1/2}` with caps at the
/// instance's cap scale and `B` of side `1/delta` centered at the origin.
pub fn decoupling_ratio(g: &GridFunction, inst: &DecouplingInstance) -> Result<f64> {
    RatioEvaluator::new(inst, g)?.ratio(g)
}

/// `||E_Q g||_{L^2} / (sum_q ||E_q g||^2_{L^2})^{1/2}` with caps `q` of side
/// `1/R`, `R = side(B)`.
pub fn l2_decoupling_check(g: &GridFunction, b: &SpatialCube, domain: NormDomain) -> Result<f64> {
    let q = g.cube();
    let r = b.side;
    let cap_side = DyadicLength::from_f64(1.0 / r)
        .map_err(|_| LabError::InvalidScale(format!("1/R = {} is not dyadic", 1.0 / r)))?;
    if cap_side.level() < q.level() {
        return Err(LabError::InvalidScale(format!(
            "cap side 1/R = {} exceeds the side {} of Q",
            1.0 / r,
            q.side()
        )));
    }
    if b.dim() != g.dim() + 1 {
        return Err(LabError::Domain("spatial cube has the wrong dimension".into()));
    }
    if g.is_zero() {
        return Err(LabError::Degenerate("g vanishes identically".into()));
    }
    let caps = dyadic_partition(q, cap_side)?;
    let field = CapField::caps(g, &caps)?;
    let evaluator = match domain {
        NormDomain::Weighted { exponent, grid } => {
            let sg = SpatialGrid::new(b.clone(), grid.padding, grid.spacing)?;
            SliceEvaluator::new(&sg, &[Weight::Poly(WeightSpec::new(b.clone(), exponent)?)], g)?
        }
        NormDomain::PeriodBox { spacing, slice } => SliceEvaluator::period_box(g, spacing, slice)?,
    };
    let sums = evaluator.evaluate(&field, &[NormRequest { weight: 0, exponent: 2.0 }], true)?;
    let caps: Vec<f64> = sums.cap.iter().map(|r| r[0]).collect();
    ratio_from_sums(sums.total.unwrap()[0], &caps, 2.0)
}

/// A frequency point `(xi, |xi|^2 + t)` carrying amplitude `amp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPoint {
    pub xi: Vec<f64>,
    pub t: f64,
    pub amp: Complex64,
}

/// Decoupling ratio of the exponential sum `f = sum amp e(xi.x_bar + (|xi|^2+t) x_n)`
/// whose frequencies lie in the `1/R`-neighborhood of the paraboloid, with the
/// points binned into caps of side `R^{-1/2}` by `xi`.
pub fn neighborhood_ratio(
    freqs: &[FrequencyPoint],
    r: f64,
    p: f64,
    exponent: f64,
    b: &SpatialCube,
    grid: GridParams,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidExponent(format!("p = {p} must be >= 1")));
    }
    let level = match crate::geometry::power_of_two_exponent(r) {
        Some(k) if k % 2 == 0 => k / 2,
        _ => return Err(LabError::InvalidScale(format!("R = {r} is not a power of 4"))),
    };
    if freqs.is_empty() {
        return Err(LabError::Degenerate("no frequency points".into()));
    }
    let d = b.dim() - 1;
    let per_axis = 1usize << level;
    let mut bins: Vec<usize> = Vec::with_capacity(freqs.len());
    for f in freqs {
        if f.xi.len() != d || f.xi.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LabError::Domain(format!("frequency {:?} is not above [0,1]^{d}", f.xi)));
        }
        if !(f.t >= 0.0 && f.t <= 1.0 / r) {
            return Err(LabError::Domain(format!(
                "height offset t = {} lies outside [0, 1/R] = [0, {}]",
                f.t,
                1.0 / r
            )));
        }
        let mut bin = 0;
        for v in &f.xi {
            let j = ((v * per_axis as f64).floor() as usize).min(per_axis - 1);
            bin = bin * per_axis + j;
        }
        bins.push(bin);
    }
    let mut used: Vec<usize> = bins.clone();
    used.sort_unstable();
    used.dedup();
    let group: Vec<usize> = bins
        .iter()
        .map(|bn| used.binary_search(bn).unwrap())
        .collect();

    let sg = SpatialGrid::new(b.clone(), grid.padding, grid.spacing)?;
    let w = WeightSpec::new(b.clone(), exponent)?;
    let n_axis = sg.per_axis();
    let coords: Vec<Vec<f64>> = (0..d).map(|i| sg.axis_coords(i)).collect();
    // tables[i][j * n_axis + r] = e(xi_{j,i} x_{i,r})
    let tables: Vec<Vec<Complex64>> = (0..d)
        .map(|i| {
            freqs
                .iter()
                .flat_map(|f| coords[i].iter().map(move |&x| e(f.xi[i] * x)))
                .collect()
        })
        .collect();
    let slices = sg.axis_coords(d);
    let bar = n_axis.pow(d as u32);
    let groups = used.len();
    let per_slice: Vec<Vec<f64>> = slices
        .par_iter()
        .map(|&xn| {
            let coef: Vec<Complex64> = freqs
                .iter()
                .map(|f| {
                    let h: f64 = f.xi.iter().map(|v| v * v).sum::<f64>() + f.t;
                    f.amp * e(h * xn)
                })
                .collect();
            let mut acc = vec![0.0; groups + 1];
            let mut x = vec![0.0; d + 1];
            x[d] = xn;
            let mut vals = vec![Complex64::new(0.0, 0.0); groups];
            for flat in 0..bar {
                let mut rem = flat;
                let mut idx = vec![0usize; d];
                for axis in (0..d).rev() {
                    idx[axis] = rem % n_axis;
                    rem /= n_axis;
                    x[axis] = coords[axis][idx[axis]];
                }
                vals.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for (j, c) in coef.iter().enumerate() {
                    let mut z = *c;
                    for axis in 0..d {
                        z *= tables[axis][j * n_axis + idx[axis]];
                    }
                    vals[group[j]] += z;
                }
                let wx = weight_at(&w, &x);
                let mut total = Complex64::new(0.0, 0.0);
                for (gi, v) in vals.iter().enumerate() {
                    acc[gi] += v.norm_sqr().powf(p / 2.0) * wx;
                    total += v;
                }
                acc[groups] += total.norm_sqr().powf(p / 2.0) * wx;
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; groups + 1];
    for row in per_slice {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    ratio_from_sums(acc[groups], &acc[..groups], p)
}

fn weight_at(w: &WeightSpec, x: &[f64]) -> f64 {
    crate::weights::weight_value(w, x)
}

/// The families of test functions tried when estimating the constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialKind {
    SingleCap,
    Constant,
    CapPhases,
    RandomGaussian,
}

impl TrialKind {
    pub fn name(self) -> &'static str {
        match self {
            TrialKind::SingleCap => "single-cap",
            TrialKind::Constant => "constant",
            TrialKind::CapPhases => "cap-phases",
            TrialKind::RandomGaussian => "random-gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TrialKind::SingleCap,
            TrialKind::Constant,
            TrialKind::CapPhases,
            TrialKind::RandomGaussian,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// Which trials `estimate_constant` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    /// Single cap, constant, then alternating cap phases and Gaussian draws,
    /// followed by one greedy re-phasing sweep.
    Full,
    /// Every trial uses the given family; no refinement.
    Forced(TrialKind),
}

/// Result of a search: an empirical lower bound for the decoupling constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub best_ratio: f64,
    pub argmax_kind: String,
    pub argmax_trial: usize,
    pub trials: usize,
}

fn trial_kind(mode: SearchMode, t: usize) -> TrialKind {
    match mode {
        SearchMode::Forced(k) => k,
        SearchMode::Full => match t {
            0 => TrialKind::SingleCap,
            1 => TrialKind::Constant,
            t if t % 2 == 0 => TrialKind::CapPhases,
            _ => TrialKind::RandomGaussian,
        },
    }
}

fn trial_function(
    kind: TrialKind,
    template: &GridFunction,
    caps: &[FrequencyCube],
    rng: &mut ChaCha8Rng,
) -> Result<GridFunction> {
    let one = Complex64::new(1.0, 0.0);
    let mut g = template.clone();
    match kind {
        TrialKind::SingleCap => {
            for k in g.box_indices(&g.cell_box(&caps[0])?) {
                g.values_mut()[k] = one;
            }
        }
        TrialKind::Constant => g.values_mut().iter_mut().for_each(|v| *v = one),
        TrialKind::CapPhases => {
            for cap in caps {
                let phase = e(rng.gen::<f64>());
                for k in g.box_indices(&g.cell_box(cap)?) {
                    g.values_mut()[k] = phase;
                }
            }
        }
        TrialKind::RandomGaussian => {
            g.values_mut().iter_mut().for_each(|v| *v = complex_gaussian(rng));
        }
    }
    Ok(g)
}

pub(crate) fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Maximum of the decoupling ratio over a deterministic trial family.
pub fn estimate_constant(
    inst: &DecouplingInstance,
    trials: usize,
    seed: u64,
    mode: SearchMode,
) -> Result<ConstantEstimate> {
    let template = inst.template();
    let ev = RatioEvaluator::new(inst, &template)?;
    estimate_with(&ev, &template, trials, seed, mode)
}

fn estimate_with(
    ev: &RatioEvaluator,
    template: &GridFunction,
    trials: usize,
    seed: u64,
    mode: SearchMode,
) -> Result<ConstantEstimate> {
    let trials = trials.max(1);
    let caps = ev.caps();
    let mut best: Option<(f64, usize, GridFunction)> = None;
    for t in 0..trials {
        let kind = trial_kind(mode, t);
        let mut rng = trial_rng(seed, t as u64);
        let g = trial_function(kind, template, caps, &mut rng)?;
        let r = ev.ratio(&g)?;
        if best.as_ref().map_or(true, |(b, _, _)| r > *b) {
            best = Some((r, t, g));
        }
    }
    let (mut best_ratio, argmax_trial, mut g) = best.unwrap();
    let mut argmax_kind = trial_kind(mode, argmax_trial).name().to_string();
    if mode == SearchMode::Full {
        let mut rng = trial_rng(seed, u64::MAX);
        let mut improved = false;
        for cap in caps {
            let phase = e(rng.gen::<f64>());
            let idx = g.box_indices(&g.cell_box(cap)?);
            if idx.iter().all(|&k| g.values()[k] == Complex64::new(0.0, 0.0)) {
                continue;
            }
            let mut h = g.clone();
            for &k in &idx {
                h.values_mut()[k] *= phase;
            }
            let r = ev.ratio(&h)?;
            if r > best_ratio {
                best_ratio = r;
                g = h;
                improved = true;
            }
        }
        if improved {
            argmax_kind.push_str("+greedy");
        }
    }
    Ok(ConstantEstimate {
        best_ratio,
        argmax_kind,
        argmax_trial,
        trials,
    })
}

/// One row of a scale sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub exponent: f64,
    pub delta_exponent: u32,
    pub trials: usize,
    pub seed: u64,
    pub best_ratio: f64,
    pub argmax_kind: String,
    /// Filled only when timings are requested, so data files stay reproducible.
    pub wall_ms: Option<f64>,
}

/// Least-squares growth exponent of the ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaFit {
    pub eta_hat: f64,
    pub intercept: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    pub n: usize,
    pub p: f64,
    pub exponent: f64,
    pub samples_per_cap: usize,
    pub grid: GridParams,
    pub rows: Vec<SweepRow>,
    pub fit: Option<EtaFit>,
    pub fit_error: Option<String>,
    /// The ratios are maxima over a finite trial family, i.e. lower bounds.
    pub lower_bound: bool,
}

/// Sweep settings shared by every scale.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub n: usize,
    pub p: f64,
    pub exponent: f64,
    pub delta_exponents: Vec<u32>,
    pub trials: usize,
    pub seed: u64,
    pub mode: SearchMode,
    pub samples_per_cap: usize,
    pub grid: GridParams,
    pub record_time: bool,
}

impl SweepSpec {
    pub fn new(n: usize, p: f64, exponent: f64, delta_exponents: Vec<u32>, trials: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            exponent,
            delta_exponents,
            trials,
            seed,
            mode: SearchMode::Full,
            samples_per_cap: 8,
            grid: GridParams::default(),
            record_time: false,
        }
    }
}

/// Runs [`estimate_constant`] at every scale, then fits the growth exponent.
pub fn scale_sweep(spec: &SweepSpec) -> Result<DecouplingReport> {
    let mut rows = Vec::with_capacity(spec.delta_exponents.len());
    for &k in &spec.delta_exponents {
        let start = Instant::now();
        let inst = DecouplingInstance::new(spec.n, spec.p, spec.exponent, k)?
            .with_samples_per_cap(spec.samples_per_cap)
            .with_grid(spec.grid);
        let est = estimate_constant(&inst, spec.trials, spec.seed, spec.mode)?;
        rows.push(SweepRow {
            n: spec.n,
            p: spec.p,
            exponent: spec.exponent,
            delta_exponent: k,
            trials: est.trials,
            seed: spec.seed,
            best_ratio: est.best_ratio,
            argmax_kind: est.argmax_kind,
            wall_ms: spec
                .record_time
                .then(|| start.elapsed().as_secs_f64() * 1e3),
        });
    }
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (0.25f64.powi(r.delta_exponent as i32), r.best_ratio))
        .collect();
    let (fit, fit_error) = match fit_eta(&pairs) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DecouplingReport {
        n: spec.n,
        p: spec.p,
        exponent: spec.exponent,
        samples_per_cap: spec.samples_per_cap,
        grid: spec.grid,
        rows,
        fit,
        fit_error,
        lower_bound: true,
    })
}

/// Least-squares slope of `ln ratio` against `ln(1/delta)` and the RMS residual.
pub fn fit_eta(rows: &[(f64, f64)]) -> Result<EtaFit> {
    if rows.len() < 3 {
        return Err(LabError::InsufficientData(format!(
            "fitting needs at least 3 scales, got {}",
            rows.len()
        )));
    }
    for &(delta, ratio) in rows {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(LabError::Degenerate(format!("ratio {ratio} at delta {delta} is not positive")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(LabError::Domain(format!("delta {delta} must be positive")));
        }
    }
    let xs: Vec<f64> = rows.iter().map(|(d, _)| -d.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, r)| r.ln()).collect();
    let nf = rows.len() as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(LabError::Degenerate("all rows share one scale".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let eta_hat = sxy / sxx;
    let intercept = my - eta_hat * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - eta_hat * x).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();
    Ok(EtaFit {
        eta_hat,
        intercept,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_test_function, TestFunction};

    fn random_g(inst: &DecouplingInstance, seed: u64) -> GridFunction {
        make_test_function(
            &TestFunction::RandomGaussian { seed },
            &FrequencyCube::unit(inst.n - 1),
            inst.caps_per_axis() * inst.samples_per_cap,
        )
        .unwrap()
    }

    #[test]
    fn single_cap_ratio_is_one() {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 2).unwrap();
        let template = inst.template();
        let caps = inst.caps().unwrap();
        let mut rng = trial_rng(0, 0);
        let g = trial_function(TrialKind::SingleCap, &template, &caps, &mut rng).unwrap();
        assert_eq!(decoupling_ratio(&g, &inst).unwrap(), 1.0);
        let g = random_g(&inst, 3).masked_to(&caps[2]).unwrap();
        assert_eq!(decoupling_ratio(&g, &inst).unwrap(), 1.0);
    }

    #[test]
    fn zero_function_is_degenerate() {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 1).unwrap();
        assert!(matches!(
            decoupling_ratio(&inst.template(), &inst),
            Err(LabError::Degenerate(_))
        ));
    }

    #[test]
    fn grid_refinement_moves_ratio_little() {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 2).unwrap();
        let g = random_g(&inst, 11);
        let coarse = decoupling_ratio(&g, &inst).unwrap();
        let fine_inst = inst.clone().with_grid(GridParams { padding: 4.0, spacing: 0.25 });
        let fine = decoupling_ratio(&g, &fine_inst).unwrap();
        assert!((coarse - fine).abs() < 0.01 * coarse, "{coarse} vs {fine}");
    }

    #[test]
    fn global_phase_leaves_ratio_unchanged() {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 2).unwrap();
        let g = random_g(&inst, 5);
        let a = decoupling_ratio(&g, &inst).unwrap();
        let b = decoupling_ratio(&g.scaled(e(0.3)), &inst).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn lattice_parseval_on_period_box() {
        // one lattice frequency per cap of side 1/16
        let g = make_test_function(
            &TestFunction::RandomGaussian { seed: 2 },
            &FrequencyCube::unit(1),
            16,
        )
        .unwrap()
        .with_model(SamplingModel::Lattice);
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let r = l2_decoupling_check(&g, &b, NormDomain::PeriodBox { spacing: 0.5, slice: 0.7 }).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn two_cap_parseval_ratio() {
        let inst = DecouplingInstance::new(2, 2.0, 8.0, 1).unwrap();
        let caps = inst.caps().unwrap();
        let mut g = GridFunction::zeros(FrequencyCube::unit(1), 4, SamplingModel::Lattice);
        g.values_mut()[0] = Complex64::new(1.0, 0.0);
        g.values_mut()[3] = Complex64::new(0.0, 2.0);
        assert_eq!(caps.len(), 2);
        let b = SpatialCube::centered(2, 4.0).unwrap();
        let r = l2_decoupling_check(&g, &b, NormDomain::PeriodBox { spacing: 0.5, slice: 0.0 }).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn l2_rejects_caps_coarser_than_q() {
        let q = FrequencyCube::from_f64(&[0.0], 0.25).unwrap();
        let g = make_test_function(&TestFunction::Constant, &q, 8).unwrap();
        let b = SpatialCube::centered(2, 2.0).unwrap();
        let dom = NormDomain::Weighted {
            exponent: 8.0,
            grid: GridParams::default(),
        };
        assert!(matches!(l2_decoupling_check(&g, &b, dom), Err(LabError::InvalidScale(_))));
        let b = SpatialCube::centered(2, 3.0).unwrap();
        assert!(matches!(l2_decoupling_check(&g, &b, dom), Err(LabError::InvalidScale(_))));
    }

    #[test]
    fn l2_single_cap_is_one() {
        let g = make_test_function(&TestFunction::RandomGaussian { seed: 1 }, &FrequencyCube::unit(1), 32).unwrap();
        let q = FrequencyCube::from_f64(&[0.25], 0.0625).unwrap();
        let g = g.masked_to(&q).unwrap();
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let dom = NormDomain::Weighted {
            exponent: 8.0,
            grid: GridParams::default(),
        };
        assert_eq!(l2_decoupling_check(&g, &b, dom).unwrap(), 1.0);
    }

    fn neighborhood_points(count: usize, seed: u64, r: f64, lift: bool) -> Vec<FrequencyPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let xi = vec![rng.gen::<f64>()];
                let t = rng.gen::<f64>() / r;
                let amp = complex_gaussian(&mut rng);
                FrequencyPoint {
                    xi,
                    t: if lift { t } else { 0.0 },
                    amp,
                }
            })
            .collect()
    }

    #[test]
    fn neighborhood_single_point_is_one() {
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let pts = vec![FrequencyPoint {
            xi: vec![0.3],
            t: 0.01,
            amp: Complex64::new(2.0, 1.0),
        }];
        let r = neighborhood_ratio(&pts, 16.0, 4.0, 8.0, &b, GridParams::default()).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neighborhood_rejects_points_off_the_shell() {
        let b = SpatialCube::centered(2, 16.0).unwrap();
        let pts = vec![FrequencyPoint {
            xi: vec![0.3],
            t: 0.1,
            amp: Complex64::new(1.0, 0.0),
        }];
        assert!(matches!(
            neighborhood_ratio(&pts, 16.0, 4.0, 8.0, &b, GridParams::default()),
            Err(LabError::Domain(_))
        ));
    }

    #[test]
    fn neighborhood_on_paraboloid_matches_lattice_ratio() {
        // one lattice point per cap, t = 0
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 2)
            .unwrap()
            .with_samples_per_cap(1);
        let mut g = GridFunction::zeros(FrequencyCube::unit(1), 4, SamplingModel::Lattice);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        for k in 0..4 {
            let a = complex_gaussian(&mut rng);
            g.values_mut()[k] = a;
            pts.push(FrequencyPoint {
                xi: vec![k as f64 / 4.0],
                t: 0.0,
                amp: a,
            });
        }
        let direct = decoupling_ratio(&g, &inst).unwrap();
        let b = inst.spatial_cube().unwrap();
        let via = neighborhood_ratio(&pts, 16.0, 4.0, 8.0, &b, GridParams::default()).unwrap();
        assert!((direct - via).abs() < 1e-10 * direct, "{direct} vs {via}");
    }

    #[test]
    fn neighborhood_lift_changes_ratio_little() {
        let b = SpatialCube::centered(2, 64.0).unwrap();
        let lifted = neighborhood_points(32, 4, 64.0, true);
        let flat = neighborhood_points(32, 4, 64.0, false);
        let a = neighborhood_ratio(&lifted, 64.0, 4.0, 8.0, &b, GridParams::default()).unwrap();
        let c = neighborhood_ratio(&flat, 64.0, 4.0, 8.0, &b, GridParams::default()).unwrap();
        assert!(a / c < 2.0 && c / a < 2.0, "{a} vs {c}");
    }

    #[test]
    fn forced_constant_is_singleton_max() {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 2).unwrap();
        let est = estimate_constant(&inst, 1, 0, SearchMode::Forced(TrialKind::Constant)).unwrap();
        let mut g = inst.template();
        g.values_mut().iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        assert_eq!(est.best_ratio, decoupling_ratio(&g, &inst).unwrap());
        assert_eq!(est.argmax_kind, "constant");
    }

    #[test]
    fn search_is_at_least_one_and_reproducible() {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 2).unwrap();
        let a = estimate_constant(&inst, 12, 1, SearchMode::Full).unwrap();
        let b = estimate_constant(&inst, 12, 1, SearchMode::Full).unwrap();
        assert!(a.best_ratio >= 1.0);
        assert!(a.best_ratio <= (inst.cap_count() as f64).sqrt());
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_with_two_scales_keeps_rows() {
        let spec = SweepSpec::new(2, 4.0, 8.0, vec![1, 2], 3, 0);
        let rep = scale_sweep(&spec).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.fit.is_none() && rep.fit_error.unwrap().contains("insufficient data"));
        assert!(rep.rows.iter().all(|r| r.wall_ms.is_none()));
    }

    #[test]
    fn l2_sweep_stays_below_l2_constant() {
        let spec = SweepSpec::new(2, 2.0, 8.0, vec![1, 2, 3], 6, 4);
        let rep = scale_sweep(&spec).unwrap();
        let fit = rep.fit.unwrap();
        assert!(fit.eta_hat.abs() < 0.05, "{fit:?}");
        for row in &rep.rows {
            // measured L^2 constant at the same scale: caps at 1/R bound the search
            assert!(row.best_ratio < 1.5, "{row:?}");
        }
    }

    #[test]
    fn fit_recovers_exact_power() {
        let rows: Vec<(f64, f64)> = (1..=4).map(|k| {
            let d = 0.25f64.powi(k);
            (d, d.powf(-0.5))
        }).collect();
        let f = fit_eta(&rows).unwrap();
        assert!((f.eta_hat - 0.5).abs() < 1e-12 && f.residual < 1e-12);
        let flat: Vec<(f64, f64)> = rows.iter().map(|(d, _)| (*d, 3.0)).collect();
        assert_eq!(fit_eta(&flat).unwrap().eta_hat, 0.0);
    }

    #[test]
    fn fit_on_noisy_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<(f64, f64)> = (1..=6)
            .map(|k| {
                let d = 0.25f64.powi(k);
                (d, d.powf(-0.3) * (1.0 + 0.05 * rng.gen_range(-1.0..1.0)))
            })
            .collect();
        let f = fit_eta(&rows).unwrap();
        assert!((0.25..=0.35).contains(&f.eta_hat));
    }

    #[test]
    fn fit_rejects_bad_rows() {
        assert!(matches!(fit_eta(&[(0.5, 1.0), (0.25, 1.0)]), Err(LabError::InsufficientData(_))));
        assert!(matches!(
            fit_eta(&[(0.5, 1.0), (0.25, 0.0), (0.125, 1.0)]),
            Err(LabError::Degenerate(_))
        ));
    }
}
