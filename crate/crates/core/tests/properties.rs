use decoupling_lab::decoupling::{decoupling_ratio, fit_eta, DecouplingInstance};
use decoupling_lab::fields::{e, evaluate_extension, make_test_function, GridFunction, SpatialPointSet, TestFunction};
use decoupling_lab::geometry::FrequencyCube;
use decoupling_lab::multilinear::kakeya::{axis_dominant_families, kakeya_check, Tile};
use decoupling_lab::multilinear::kappa;
use num_complex::Complex64;
use proptest::prelude::*;

fn random(n: usize, m: usize, seed: u64) -> GridFunction {
    make_test_function(&TestFunction::RandomGaussian { seed }, &FrequencyCube::unit(n - 1), m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ratio_obeys_triangle_bound(seed in 0u64..1000, k in 1u32..=2, p in 2.0f64..8.0, sparse in 0usize..4) {
        let inst = DecouplingInstance::new(2, p, 8.0, k).unwrap().with_samples_per_cap(4);
        let mut g = random(2, inst.caps_per_axis() * 4, seed);
        if sparse > 0 {
            let caps = inst.caps().unwrap();
            g = g.masked_to(&caps[sparse % caps.len()]).unwrap();
        }
        let r = decoupling_ratio(&g, &inst).unwrap();
        prop_assert!(r <= (inst.cap_count() as f64).sqrt() * (1.0 + 1e-12));
        prop_assert!(r > 0.0);
    }

    #[test]
    fn ratio_ignores_global_phase(seed in 0u64..1000, theta in 0.0f64..1.0) {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 1).unwrap().with_samples_per_cap(4);
        let g = random(2, 8, seed);
        let a = decoupling_ratio(&g, &inst).unwrap();
        let b = decoupling_ratio(&g.scaled(e(theta) * 3.0), &inst).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn extension_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0, x in prop::collection::vec(-50.0f64..50.0, 3)) {
        let g = random(3, 6, s1);
        let h = random(3, 6, s2);
        let ca = Complex64::new(a, 0.5);
        let cb = Complex64::new(0.25, b);
        let mut sum = g.scaled(ca);
        sum.values_mut().iter_mut().zip(h.values()).for_each(|(v, w)| *v += cb * w);
        let pts = SpatialPointSet::explicit(vec![x]).unwrap();
        let lhs = evaluate_extension(&sum, &pts).unwrap()[0];
        let rhs = ca * evaluate_extension(&g, &pts).unwrap()[0] + cb * evaluate_extension(&h, &pts).unwrap()[0];
        prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn fit_is_equivariant(ys in prop::collection::vec(0.5f64..5.0, 3..6), c in 0.1f64..10.0, a in 0.2f64..3.0) {
        let rows: Vec<(f64, f64)> = ys.iter().enumerate().map(|(k, y)| (0.25f64.powi(k as i32 + 1), *y)).collect();
        let base = fit_eta(&rows).unwrap();
        let scaled: Vec<(f64, f64)> = rows.iter().map(|(d, r)| (*d, c * r)).collect();
        let s = fit_eta(&scaled).unwrap();
        prop_assert!((s.eta_hat - base.eta_hat).abs() < 1e-9);
        prop_assert!((s.intercept - base.intercept - c.ln()).abs() < 1e-9);
        let powered: Vec<(f64, f64)> = rows.iter().map(|(d, r)| (*d, r.powf(a))).collect();
        let q = fit_eta(&powered).unwrap();
        prop_assert!((q.eta_hat - a * base.eta_hat).abs() < 1e-9);
        prop_assert!((q.residual - a * base.residual).abs() < 1e-9);
    }

    #[test]
    fn kappa_is_monotone_and_bounded(n in 2usize..6, p1 in 2.0f64..40.0, dp in 0.0f64..10.0) {
        let k1 = kappa(p1, n).unwrap();
        let k2 = kappa(p1 + dp, n).unwrap();
        prop_assert!(k1 <= k2 + 1e-15);
        prop_assert!((0.0..=1.0).contains(&k1));
        let crit = 2.0 * (n as f64 + 1.0) / (n as f64 - 1.0);
        if (p1 - crit).abs() > 1e-9 {
            prop_assert_eq!(k1 < 0.5, p1 < crit);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn kakeya_sides_are_homogeneous(seed in 0u64..1000, lambda in 0.1f64..10.0, family in 0usize..3) {
        let mut fam = axis_dominant_families(3, 16.0, 3, 0.1, 16.0, seed).unwrap();
        for (j, f) in fam.iter_mut().enumerate() {
            let mut dir = vec![0.0; 3];
            dir[j] = 1.0;
            f.push(Tile::new(vec![0.5, -0.5, 0.25], dir, 16.0, 1.0).unwrap());
        }
        let base = kakeya_check(&fam, 16.0, 0.5).unwrap();
        fam[family].iter_mut().for_each(|t| t.amplitude *= lambda);
        let rep = kakeya_check(&fam, 16.0, 0.5).unwrap();
        let f = lambda.sqrt();
        prop_assert!((rep.lhs - f * base.lhs).abs() < 1e-10 * rep.lhs);
        prop_assert!((rep.rhs - f * base.rhs).abs() < 1e-10 * rep.rhs);
        prop_assert!((rep.ratio - base.ratio).abs() < 1e-10 * base.ratio);
    }
}
