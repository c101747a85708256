use approx::assert_relative_eq;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mhekit::cost::{ArrivalCostSpec, ArrivalDecay, CostSpec, StageCostSpec, StageLoss, StateBound};
use mhekit::funcalc::{DecayL, KlSum, PowerK, PowerSum, ProductKL};
use mhekit::solver::{solve_window, SolverOptions, WindowProblem};
use mhekit::stability::{
    admissible_b2_range, check_arrival_admissible, contraction_holds_on_grid, min_horizon, Horizon,
    RgasBounds,
};
use mhekit::stochastics::{generate_instances, sample_noise, InitialPrior, InstanceSet, NoiseSpec};
use mhekit::systems::{linear_example_prior, make_linear_example, IossCertificate};

fn pure(c: f64, a: f64, l: DecayL) -> RgasBounds {
    RgasBounds {
        beta_x: KlSum {
            terms: vec![ProductKL::new(PowerK::new(c, a).unwrap(), l)],
        },
        alpha_w: PowerSum::zero(),
        alpha_v: PowerSum::zero(),
    }
}

fn finite(h: Horizon) -> usize {
    h.finite().expect("exponential decay reaches any eta")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_inverse_round_trips(c in 0.01f64..100.0, a in 0.2f64..4.0, s in 0.0f64..50.0) {
        let k = PowerK::new(c, a).unwrap();
        assert_relative_eq!(k.invert(k.eval(s)), s, epsilon = 1e-9, max_relative = 1e-9);
        assert_relative_eq!(k.inverse().eval(k.eval(s)), s, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn composition_matches_nesting(
        c1 in 0.1f64..10.0, a1 in 0.5f64..3.0,
        c2 in 0.1f64..10.0, a2 in 0.5f64..3.0,
        s in 0.0f64..5.0,
    ) {
        let f = PowerK::new(c1, a1).unwrap();
        let g = PowerK::new(c2, a2).unwrap();
        assert_relative_eq!(f.compose(&g).eval(s), f.eval(g.eval(s)), epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn power_sum_composition_dominates(
        c in 0.1f64..5.0, a in 1.0f64..3.0,
        inner in prop::collection::vec((0.1f64..5.0, 0.5f64..2.0), 1..4),
        s in 0.0f64..3.0,
    ) {
        let outer = PowerK::new(c, a).unwrap();
        let mut sum = PowerSum::zero();
        for (ci, ai) in &inner {
            sum.push(PowerK::new(*ci, *ai).unwrap());
        }
        let composed = PowerSum::compose_into(&outer, &sum);
        let direct = outer.eval(sum.eval(s));
        prop_assert!(composed.eval(s) >= direct * (1.0 - 1e-12) - 1e-12);
    }

    #[test]
    fn rational_loosening_dominates(c in 0.5f64..10.0, b in 0.3f64..0.99, rate in 0.01f64..1.0) {
        let exp = ProductKL::new(PowerK::linear(c).unwrap(), DecayL::exponential(b).unwrap());
        let rat = exp.exp_to_rational(rate).unwrap();
        for t in 0..300 {
            prop_assert!(rat.eval(1.0, t) >= exp.eval(1.0, t) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn admissibility_agrees_with_range(b1 in 0.3f64..0.99, a1 in 0.5f64..2.0, b2 in 0.01f64..0.999) {
        let cert = IossCertificate {
            beta: ProductKL::new(PowerK::new(3.0, a1).unwrap(), DecayL::exponential(b1).unwrap()),
            alpha1: None,
            alpha2: None,
        };
        let arrival = ArrivalCostSpec::new(1.0, 2.0, ArrivalDecay::Exponential(b2)).unwrap();
        let check = check_arrival_admissible(&cert, &arrival).unwrap();
        let range = admissible_b2_range(&cert, 2.0);
        // stay clear of the boundary, where the checker's slack decides
        let edge = b1.powf(2.0 / a1);
        prop_assume!((b2 - edge).abs() > 1e-9);
        prop_assert_eq!(check.admissible, range.contains(b2));
        prop_assert_eq!(check.admissible, b2 >= edge);
    }

    #[test]
    fn horizon_is_minimal(c in 1.0f64..20.0, b in 0.5f64..0.97, s_bar in 0.01f64..100.0, eta in 0.05f64..0.95) {
        let bounds = pure(c, 1.0, DecayL::exponential(b).unwrap());
        let t = finite(min_horizon(&bounds, s_bar, eta).unwrap().t_min);
        prop_assert!(contraction_holds_on_grid(&bounds, s_bar, eta, t));
        if t > 0 {
            prop_assert!(!contraction_holds_on_grid(&bounds, s_bar, eta, t - 1));
        }
        // linear beta: c b^T ≤ η
        let oracle = ((eta / c).ln() / b.ln()).ceil().max(0.0) as usize;
        prop_assert!(t.abs_diff(oracle) <= 1, "{} vs {}", t, oracle);
    }

    #[test]
    fn horizon_monotone_in_eta_and_s_bar(
        c in 1.0f64..5.0, a in 1.0f64..2.5, b in 0.6f64..0.95,
        s_bar in 0.1f64..20.0, eta in 0.1f64..0.8,
    ) {
        let bounds = pure(c, a, DecayL::exponential(b).unwrap());
        let t = |s, e| finite(min_horizon(&bounds, s, e).unwrap().t_min);
        prop_assert!(t(s_bar, eta) >= t(s_bar, eta + 0.1));
        prop_assert!(t(s_bar, eta) <= t(2.0 * s_bar, eta));
    }

    #[test]
    fn weighted_stage_cost_sits_between_mean_and_max(
        lambda in 0.0f64..=1.0,
        w in prop::collection::vec(-1.0f64..1.0, 3..12),
        v in prop::collection::vec(-1.0f64..1.0, 2..8),
    ) {
        let omega: Vec<DVector<f64>> = w.chunks(3).filter(|c| c.len() == 3).map(DVector::from_column_slice).collect();
        let nu: Vec<DVector<f64>> = v.iter().map(|x| DVector::from_element(1, *x)).collect();
        let stage = |l: f64| {
            StageCostSpec::weighted(l, l, StageLoss::Quadratic(2.0), StageLoss::OneNorm(3.0))
                .unwrap()
                .eval(&omega, &nu)
        };
        let (mean, max, mid) = (stage(1.0), stage(0.0), stage(lambda));
        prop_assert!(mean <= mid + 1e-12 && mid <= max + 1e-12);
    }

    #[test]
    fn truncated_noise_stays_in_band(sigma in 0.001f64..5.0, seed in any::<u64>()) {
        let spec = NoiseSpec::trunc_gauss(2, sigma).unwrap();
        for draw in sample_noise(&spec, 200, seed) {
            prop_assert!(draw.amax() <= spec.max_abs());
        }
    }
}

/// A small random window on the three-state linear model.
fn random_window(seed: u64) -> (CostSpec, DVector<f64>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = make_linear_example();
    let lambda = rng.random_range(0.0..1.0);
    let lv = if rng.random_bool(0.5) {
        StageLoss::Quadratic(100.0)
    } else {
        StageLoss::OneNorm(10.0)
    };
    let cost = CostSpec {
        arrival: ArrivalCostSpec::new(1.0, 2.0, ArrivalDecay::Exponential(0.81)).unwrap(),
        stage: StageCostSpec::weighted(lambda, lambda, StageLoss::Quadratic(25.0), lv).unwrap(),
        x_bound: Some(StateBound::Box(3.0)),
        w_bound: Some(0.6),
        v_bound: Some(0.3),
    };
    let horizon = rng.random_range(1..=5);
    let x0 = linear_example_prior().map(|v| v + rng.random_range(-1.0..1.0));
    let w: Vec<DVector<f64>> = (0..horizon)
        .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-0.4..0.4)))
        .collect();
    let ys = model
        .simulate(&x0, &w)
        .iter()
        .map(|x| model.h(x).map(|v| v + rng.random_range(-0.2..0.2)))
        .collect();
    (cost, linear_example_prior(), ys)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_the_cost_keeps_the_estimate(seed in any::<u64>(), factor in 0.1f64..10.0) {
        let model = make_linear_example();
        let (cost, prior, ys) = random_window(seed);
        let scaled = cost.scaled(factor);
        let solve = |c: &CostSpec| {
            let p = WindowProblem {
                model: &model,
                cost: c,
                prior: prior.clone(),
                measurements: &ys,
                identical_disturbances: false,
            };
            solve_window(&p, None, &SolverOptions::default()).unwrap()
        };
        let (a, b) = (solve(&cost), solve(&scaled));
        prop_assert!(a.report.converged && b.report.converged);
        assert_relative_eq!(b.report.objective, factor * a.report.objective, epsilon = 1e-7, max_relative = 1e-6);
        // a one-norm or max term can make the minimizer non-unique; compare objectives there
        let p = WindowProblem {
            model: &model,
            cost: &cost,
            prior: prior.clone(),
            measurements: &ys,
            identical_disturbances: false,
        };
        let cross = p.objective_at(&b.report.decision);
        assert_relative_eq!(cross, a.report.objective, epsilon = 1e-7, max_relative = 1e-6);
    }

    #[test]
    fn instances_are_reproducible(seed in any::<u64>()) {
        let model = make_linear_example();
        let gen = || generate_instances(
            &model,
            &NoiseSpec::trunc_gauss(3, 0.2).unwrap(),
            &NoiseSpec::trunc_gauss(1, 0.1).unwrap(),
            &InitialPrior { mean: linear_example_prior(), sigma0: 1.0 },
            &InstanceSet { n: 3, t_f: 10, master_seed: seed },
            false,
        ).unwrap();
        let (a, b) = (gen(), gen());
        prop_assert_eq!(&a, &b);
        for inst in &a {
            prop_assert!(inst.replay_error(&model) <= 1e-12);
        }
    }
}
