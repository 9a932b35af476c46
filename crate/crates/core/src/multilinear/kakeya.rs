//! Multilinear Kakeya on explicit tiles: rasterized averages of
//! `prod_j (sum_P c_P 1_P)^{1/(n-1)}` over `B_{4R}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::abs_det;

/// A rectangular box with `n-1` sides `R^{1/2}` and one side `R` along
/// `direction`, carrying the amplitude `c_P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub center: Vec<f64>,
    pub direction: Vec<f64>,
    pub short_side: f64,
    pub long_side: f64,
    pub amplitude: f64,
}

impl Tile {
    /// Tile of scale `r` (sides `r^{1/2}` and `r`); `direction` is normalized.
    pub fn new(center: Vec<f64>, direction: Vec<f64>, r: f64, amplitude: f64) -> Result<Self> {
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if center.len() != direction.len() || !(norm > 0.0) {
            return Err(LabError::Domain("tile direction must be a nonzero vector of the center's dimension".into()));
        }
        Ok(Self {
            center,
            direction: direction.iter().map(|x| x / norm).collect(),
            short_side: r.sqrt(),
            long_side: r,
            amplitude,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `direction` followed by an orthonormal basis of its complement.
    pub fn frame(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut basis = vec![self.direction.clone()];
        for k in 0..n {
            if basis.len() == n {
                break;
            }
            let mut u = vec![0.0; n];
            u[k] = 1.0;
            for b in &basis {
                let dot: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
                u.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                basis.push(u.iter().map(|x| x / norm).collect());
            }
        }
        basis
    }

    /// Half-extent of the tile's bounding box along each axis.
    pub fn half_extent(&self) -> Vec<f64> {
        let frame = self.frame();
        (0..self.dim())
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(j, f)| f[k].abs() * if j == 0 { self.long_side } else { self.short_side } / 2.0)
                    .sum()
            })
            .collect()
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let frame = self.frame();
        (0..1usize << n)
            .map(|mask| {
                let mut x = self.center.clone();
                for (j, f) in frame.iter().enumerate() {
                    let half = if j == 0 { self.long_side } else { self.short_side } / 2.0;
                    let sign = if mask >> j & 1 == 1 { 1.0 } else { -1.0 };
                    x.iter_mut().zip(f).for_each(|(v, d)| *v += sign * half * d);
                }
                x
            })
            .collect()
    }
}

struct Raster {
    frame: Vec<Vec<f64>>,
    center: Vec<f64>,
    halves: Vec<f64>,
    amplitude: f64,
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Raster {
    fn contains(&self, x: &[f64]) -> bool {
        self.frame.iter().zip(&self.halves).all(|(f, h)| {
            let t: f64 = f.iter().zip(x).zip(&self.center).map(|((d, y), c)| d * (y - c)).sum();
            t.abs() <= *h
        })
    }
}

/// Both sides of the multilinear Kakeya inequality on a raster of `B_{4R}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KakeyaReport {
    pub r: f64,
    pub nu: f64,
    pub tiles_per_family: Vec<usize>,
    /// Average over `B_{4R}` of `prod_j F_j^{1/(n-1)}`.
    pub lhs: f64,
    /// `prod_j (average of F_j)^{1/(n-1)}`.
    pub rhs: f64,
    pub ratio: f64,
    pub grid_spacing: f64,
    /// Smallest `|det(v_{P_1}, ..., v_{P_n})|` over all tuples.
    pub min_det: f64,
}

/// Checks the tile preconditions and the `nu`-transversality of every tuple.
pub fn validate_families(families: &[Vec<Tile>], r: f64, nu: f64) -> Result<f64> {
    let n = families.len();
    if n < 2 {
        return Err(LabError::Domain(format!("need n >= 2 families, got {n}")));
    }
    if !(r > 0.0) {
        return Err(LabError::Domain(format!("R = {r} must be positive")));
    }
    let half = 2.0 * r;
    let tol = 1e-9 * r;
    for (j, fam) in families.iter().enumerate() {
        for (i, t) in fam.iter().enumerate() {
            if t.dim() != n || t.direction.len() != n {
                return Err(LabError::Precondition(format!("tile {i} of family {j} is not in R^{n}")));
            }
            if (t.long_side - r).abs() > tol || (t.short_side - r.sqrt()).abs() > tol {
                return Err(LabError::Precondition(format!(
                    "tile {i} of family {j} has sides {} x {}, expected R^(1/2) = {} and R = {r}",
                    t.short_side,
                    t.long_side,
                    r.sqrt()
                )));
            }
            if !(t.amplitude >= 0.0) {
                return Err(LabError::Precondition(format!("tile {i} of family {j} has negative amplitude")));
            }
            if t.vertices().iter().flatten().any(|x| x.abs() > half + tol) {
                return Err(LabError::Precondition(format!(
                    "tile {i} of family {j} leaves the cube of side 4R = {}",
                    4.0 * r
                )));
            }
        }
    }
    if families.iter().any(Vec::is_empty) {
        return Ok(f64::INFINITY);
    }
    let mut idx = vec![0usize; n];
    let mut min_det = f64::INFINITY;
    loop {
        let rows: Vec<&[f64]> = (0..n).map(|j| families[j][idx[j]].direction.as_slice()).collect();
        let d = abs_det(&rows);
        if d < nu {
            return Err(LabError::TransversalityViolation { tuple: idx, det: d, nu });
        }
        min_det = min_det.min(d);
        let mut axis = n;
        loop {
            if axis == 0 {
                return Ok(min_det);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < families[axis].len() {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Rasterizes `F_j = sum_P c_P 1_P` at spacing `R^{1/2}/4` over `B_{4R}`
/// (center-in-box membership) and compares both sides.
pub fn kakeya_check(families: &[Vec<Tile>], r: f64, nu: f64) -> Result<KakeyaReport> {
    let min_det = validate_families(families, r, nu)?;
    let n = families.len();
    let h = r.sqrt() / 4.0;
    let per_axis = (4.0 * r / h).round() as usize;
    let coord = |j: usize| -2.0 * r + (j as f64 + 0.5) * h;
    let index_range = |c: f64, half: f64| {
        let lo = ((c - half + 2.0 * r) / h - 0.5).floor().max(0.0) as usize;
        let hi = (((c + half + 2.0 * r) / h - 0.5).ceil() as usize + 1).min(per_axis);
        (lo, hi)
    };
    let rasters: Vec<Vec<Raster>> = families
        .iter()
        .map(|fam| {
            fam.iter()
                .map(|t| {
                    let ext = t.half_extent();
                    let (lo, hi): (Vec<usize>, Vec<usize>) =
                        t.center.iter().zip(&ext).map(|(c, e)| index_range(*c, *e)).unzip();
                    let mut halves = vec![t.short_side / 2.0; n];
                    halves[0] = t.long_side / 2.0;
                    Raster {
                        frame: t.frame(),
                        center: t.center.clone(),
                        halves,
                        amplitude: t.amplitude,
                        lo,
                        hi,
                    }
                })
                .collect()
        })
        .collect();
    let slab_len = per_axis.pow(n as u32 - 1);
    let power = 1.0 / (n as f64 - 1.0);
    // per slab: (sum of prod F^{1/(n-1)}, sum of F_j for each j)
    let per_slab: Vec<(f64, Vec<f64>)> = (0..per_axis)
        .into_par_iter()
        .map(|s| {
            let mut fields = vec![vec![0.0; slab_len]; n];
            let mut x = vec![0.0; n];
            x[0] = coord(s);
            for (field, fam) in fields.iter_mut().zip(&rasters) {
                for t in fam.iter().filter(|t| t.lo[0] <= s && s < t.hi[0]) {
                    let mut idx: Vec<usize> = t.lo[1..].to_vec();
                    if idx.iter().zip(&t.hi[1..]).any(|(a, b)| a >= b) {
                        continue;
                    }
                    'cells: loop {
                        for (k, &i) in idx.iter().enumerate() {
                            x[k + 1] = coord(i);
                        }
                        if t.contains(&x) {
                            let flat = idx.iter().fold(0, |acc, &i| acc * per_axis + i);
                            field[flat] += t.amplitude;
                        }
                        let mut axis = idx.len();
                        loop {
                            if axis == 0 {
                                break 'cells;
                            }
                            axis -= 1;
                            idx[axis] += 1;
                            if idx[axis] < t.hi[axis + 1] {
                                break;
                            }
                            idx[axis] = t.lo[axis + 1];
                        }
                    }
                }
            }
            let prod: f64 = (0..slab_len)
                .map(|k| fields.iter().map(|f| f[k].powf(power)).product::<f64>())
                .sum();
            (prod, fields.iter().map(|f| f.iter().sum()).collect())
        })
        .collect();
    let mut prod = 0.0;
    let mut totals = vec![0.0; n];
    for (p, t) in &per_slab {
        prod += p;
        totals.iter_mut().zip(t).for_each(|(a, b)| *a += b);
    }
    let count = (per_axis as f64).powi(n as i32);
    let lhs = prod / count;
    let rhs: f64 = totals.iter().map(|t| (t / count).powf(power)).product();
    let ratio = if rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(KakeyaReport {
        r,
        nu,
        tiles_per_family: families.iter().map(Vec::len).collect(),
        lhs,
        rhs,
        ratio,
        grid_spacing: h,
        min_det,
    })
}

/// `n` families of tiles whose directions are `e_j` tilted by at most `tilt`
/// per coordinate, with amplitudes in `[1/2, 3/2]` and random centers whose
/// coordinates lie within `spread` of the origin (clamped so the tiles stay
/// inside `B_{4R}`).
pub fn axis_dominant_families(
    n: usize,
    r: f64,
    per_family: usize,
    tilt: f64,
    spread: f64,
    seed: u64,
) -> Result<Vec<Vec<Tile>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|j| {
            (0..per_family)
                .map(|_| {
                    let dir: Vec<f64> = (0..n)
                        .map(|k| if k == j { 1.0 } else { rng.gen_range(-tilt..=tilt) })
                        .collect();
                    let probe = Tile::new(vec![0.0; n], dir.clone(), r, 1.0)?;
                    let ext = probe.half_extent();
                    let center = ext
                        .iter()
                        .map(|e| {
                            let room = (2.0 * r - e).max(0.0).min(spread);
                            rng.gen_range(-room..=room)
                        })
                        .collect();
                    Tile::new(center, dir, r, rng.gen_range(0.5..=1.5))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perpendicular(r: f64) -> Vec<Vec<Tile>> {
        vec![
            vec![Tile::new(vec![0.0, 0.0], vec![1.0, 0.0], r, 1.0).unwrap()],
            vec![Tile::new(vec![0.0, 0.0], vec![0.0, 1.0], r, 1.0).unwrap()],
        ]
    }

    #[test]
    fn frame_is_orthonormal() {
        let t = Tile::new(vec![0.0; 3], vec![0.3, -0.2, 1.0], 16.0, 1.0).unwrap();
        let f = t.frame();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = f[a].iter().zip(&f[b]).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn perpendicular_tiles_match_overlap_area() {
        for r in [16.0, 64.0, 256.0] {
            let rep = kakeya_check(&perpendicular(r), r, 0.5).unwrap();
            // area R^{3/2} each, overlap R, box (4R)^2
            let box_area = 16.0 * r * r;
            let lhs = r / box_area;
            let rhs = (r.powf(1.5) / box_area).powi(2);
            assert!((rep.lhs - lhs).abs() < 1e-12 * lhs, "R={r}");
            assert!((rep.rhs - rhs).abs() < 1e-12 * rhs, "R={r}");
            assert!((rep.ratio - 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn amplitudes_scale_homogeneously() {
        let mut fam = axis_dominant_families(3, 64.0, 4, 0.1, 128.0, 3).unwrap();
        for (j, f) in fam.iter_mut().enumerate() {
            let mut dir = vec![0.0; 3];
            dir[j] = 1.0;
            f.push(Tile::new(vec![1.0, -2.0, 0.5], dir, 64.0, 0.7).unwrap());
        }
        let base = kakeya_check(&fam, 64.0, 0.5).unwrap();
        let mut scaled = fam.clone();
        scaled[1].iter_mut().for_each(|t| t.amplitude *= 9.0);
        let rep = kakeya_check(&scaled, 64.0, 0.5).unwrap();
        assert!(base.lhs > 0.0);
        assert!((rep.lhs - 3.0 * base.lhs).abs() < 1e-12 * rep.lhs);
        assert!((rep.rhs - 3.0 * base.rhs).abs() < 1e-12 * rep.rhs);
        assert!((rep.ratio - base.ratio).abs() < 1e-12 * base.ratio);
    }

    #[test]
    fn violating_pair_is_named() {
        let fam = vec![
            vec![Tile::new(vec![0.0, 0.0], vec![1.0, 0.0], 16.0, 1.0).unwrap()],
            vec![
                Tile::new(vec![0.0, 0.0], vec![0.0, 1.0], 16.0, 1.0).unwrap(),
                Tile::new(vec![0.0, 0.0], vec![1.0, 0.1], 16.0, 1.0).unwrap(),
            ],
        ];
        match kakeya_check(&fam, 16.0, 0.5) {
            Err(LabError::TransversalityViolation { tuple, .. }) => assert_eq!(tuple, vec![0, 1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tiles_must_fit_and_have_the_right_sides() {
        let t = Tile::new(vec![31.0, 0.0], vec![1.0, 0.0], 16.0, 1.0).unwrap();
        let fam = vec![vec![t], vec![Tile::new(vec![0.0, 0.0], vec![0.0, 1.0], 16.0, 1.0).unwrap()]];
        assert!(matches!(kakeya_check(&fam, 16.0, 0.5), Err(LabError::Precondition(_))));
        let mut fam = perpendicular(16.0);
        fam[0][0].short_side = 5.0;
        assert!(matches!(kakeya_check(&fam, 16.0, 0.5), Err(LabError::Precondition(_))));
    }

    #[test]
    fn empty_family_gives_zero_ratio() {
        let fam = vec![perpendicular(16.0).remove(0), Vec::new()];
        assert_eq!(kakeya_check(&fam, 16.0, 0.5).unwrap().ratio, 0.0);
    }

    #[test]
    fn random_families_fit_in_the_box() {
        let fam = axis_dominant_families(3, 256.0, 16, 0.1, 1024.0, 7).unwrap();
        let min_det = validate_families(&fam, 256.0, 0.5).unwrap();
        assert!(min_det >= 0.5);
    }
}
