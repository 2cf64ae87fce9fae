use cpm_core::covariates::{CovariateBox, CovariateSampler};
use cpm_core::linear_ode::{eval_map, expm, CoefficientRepr, OdeModel, TimeDesign};
use cpm_core::pk::{eigenstructure, PkConfig, TwoCompartment};
use cpm_core::prior::{field_norms, rates, sample_base_prior, BasisMatrix, SeriesPriorSpec};
use cpm_core::rng::substream;
use cpm_core::stats::{effective_sample_size, ks_test};
use nalgebra::DVector;
use proptest::prelude::*;

fn ball_point(radius: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 4).prop_filter_map("inside ball", move |v| {
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (r <= 1.0).then(|| v.iter().map(|x| x * radius).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn eigenpairs_satisfy_the_characteristic_relations(p in ball_point(3.0)) {
        let cfg = PkConfig::default();
        let e = eigenstructure(&p, &cfg).unwrap();
        let a = TwoCompartment::new(cfg).unwrap().matrix(&p).unwrap();
        let scale = e.sigma;
        prop_assert!((e.lambda_plus + e.lambda_minus + e.sigma).abs() <= 1e-12 * scale);
        prop_assert!((e.lambda_plus * e.lambda_minus - a.determinant()).abs() <= 1e-12 * scale * scale);
        for (lam, v) in [(e.lambda_plus, e.v_plus), (e.lambda_minus, e.v_minus)] {
            let x = DVector::from_vec(vec![v, 1.0]);
            let r = &a * &x - &x * lam;
            prop_assert!(r.norm() <= 1e-10 * scale * x.norm(), "residual {}", r.norm());
        }
        prop_assert!(e.delta > 0.0 && e.lambda_minus < e.lambda_plus && e.lambda_plus < 0.0);
        prop_assert!(e.v_minus < 0.0 && 0.0 < e.v_plus);
    }

    #[test]
    fn closed_form_matches_matrix_exponential(p in ball_point(2.0), t in 0.0f64..5.0) {
        let m = TwoCompartment::new(PkConfig::default()).unwrap();
        let design = TimeDesign::new(vec![t], 5.0).unwrap();
        let closed = eval_map(&m, &p, &design).unwrap()[0];
        let direct = (expm(&(m.matrix(&p).unwrap() * t)).unwrap() * m.initial_state(&p).unwrap())[0];
        prop_assert!((closed - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn norms_are_homogeneous(seed in 0u64..1000, c in -5.0f64..5.0) {
        let spec = SeriesPriorSpec::new(8.0, 6, 4, PkConfig::default().covariate_box).unwrap();
        let f = sample_base_prior(&spec, seed);
        let xs = CovariateSampler::UniformBox.sample_points(&spec.domain, 50, &mut substream(seed, &[1]));
        let (xb, gb) = (BasisMatrix::new(&spec, &xs), BasisMatrix::new(&spec, &spec.domain.grid(8)));
        let a = field_norms(&f, &xb, &gb, None);
        let b = field_norms(&f.scaled(c), &xb, &gb, None);
        let tol = 1e-12 * (1.0 + a.rkhs * c.abs());
        prop_assert!((b.l2_empirical - c.abs() * a.l2_empirical).abs() <= tol);
        prop_assert!((b.sup_grid - c.abs() * a.sup_grid).abs() <= tol);
        prop_assert!((b.rkhs - c.abs() * a.rkhs).abs() <= tol);
    }

    #[test]
    fn rates_decrease_in_n(n in 1usize..1_000_000, alpha in 1.0f64..10.0) {
        let r = rates(alpha, alpha, 0.5 * alpha + 0.51, 1).unwrap();
        prop_assert!(r.delta_n(n + 1) < r.delta_n(n));
        prop_assert!(r.rescale_n(n + 1) < r.rescale_n(n));
        prop_assert!(r.delta_bar_n(n + 1) <= r.delta_bar_n(n));
    }

    #[test]
    fn substreams_are_reproducible(seed: u64, key: u64) {
        use rand::Rng;
        let a: Vec<u64> = (0..4).map({ let mut r = substream(seed, &[key]); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..4).map({ let mut r = substream(seed, &[key]); move |_| r.random() }).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn increasing_times_form_a_design(mut ts in prop::collection::vec(0.0f64..10.0, 1..8)) {
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        prop_assert!(TimeDesign::new(ts.clone(), 10.0).is_ok());
        let mut dup = ts.clone();
        dup.insert(0, ts[0]);
        prop_assert!(TimeDesign::new(dup, 10.0).is_err());
    }

    #[test]
    fn coefficient_sum_is_linear_in_prefactors(a in -3.0f64..3.0, b in -3.0f64..3.0, t in 0.0f64..4.0) {
        let c = CoefficientRepr::new(&[a, b], &[-0.5, -2.0]).unwrap();
        let expect = a * (-0.5 * t).exp() + b * (-2.0 * t).exp();
        prop_assert!((c.eval(t) - expect).abs() <= 1e-14 * (1.0 + expect.abs()));
    }

    #[test]
    fn uniform_sampler_stays_in_box(seed: u64) {
        let domain = CovariateBox::new(vec![0.5, 1.0], vec![2.0, 80.0]).unwrap();
        let xs = CovariateSampler::UniformBox.sample_points(&domain, 64, &mut substream(seed, &[]));
        prop_assert!(xs.iter().all(|x| domain.contains(x)));
    }
}

#[test]
fn ks_on_iid_uniform_draws_is_calibrated() {
    use rand::Rng;
    // Fraction of rejections at 5% across independent uniform samples.
    let mut rejections = 0;
    for r in 0..400u64 {
        let mut rng = substream(r, &[]);
        let xs: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        if ks_test(&xs, |x| x.clamp(0.0, 1.0)).p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 400.0;
    assert!((0.02..0.09).contains(&rate), "rejection rate {rate}");
}

#[test]
fn ess_of_iid_sequence_is_near_length() {
    let mut rng = substream(3, &[]);
    let xs: Vec<f64> = (0..20_000)
        .map(|_| cpm_core::rng::standard_normal(&mut rng))
        .collect();
    let ess = effective_sample_size(&xs);
    assert!(ess > 15_000.0, "{ess}");
}
