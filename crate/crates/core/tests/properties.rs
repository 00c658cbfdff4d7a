use mrisk_core::{adapted, wasserstein, Constraint, Criterion, DiscountConvention, Expr, HedgeFunction, Problem, Settings, TwoPeriodModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::OnceLock;

fn put() -> Criterion {
    Criterion::american_put(0.8, 0.05, DiscountConvention::T12).unwrap()
}

fn fs_problem() -> &'static Problem {
    static PB: OnceLock<Problem> = OnceLock::new();
    PB.get_or_init(|| {
        let m = TwoPeriodModel::black_scholes(0.4).unwrap().with_grid_size(64).unwrap();
        Problem::with_settings(&Criterion::forward_start(), &m, 2.0, Settings { mc_samples: 2000, seed: 1 }).unwrap()
    })
}

fn p3_problem() -> &'static Problem {
    static PB: OnceLock<Problem> = OnceLock::new();
    PB.get_or_init(|| {
        let m = TwoPeriodModel::bachelier(0.7).unwrap().with_spot(1.0).unwrap().with_grid_size(64).unwrap();
        Problem::with_settings(&put(), &m, 3.0, Settings { mc_samples: 2000, seed: 1 }).unwrap()
    })
}

fn cubic(c: [f64; 4]) -> impl Fn(f64) -> f64 + Sync {
    move |x| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn adapted_u_is_convex(h1 in coeffs(), f1 in coeffs(), h2 in coeffs(), f2 in coeffs()) {
        for pb in [fs_problem(), p3_problem()] {
            let mid = |a: [f64; 4], b: [f64; 4]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2]), 0.5 * (a[3] + b[3])];
            let u1 = adapted::evaluate_u(pb, &cubic(h1), &cubic(f1));
            let u2 = adapted::evaluate_u(pb, &cubic(h2), &cubic(f2));
            let um = adapted::evaluate_u(pb, &cubic(mid(h1, h2)), &cubic(mid(f1, f2)));
            prop_assert!(um <= 0.5 * (u1 + u2) + 1e-9, "{um} > ({u1} + {u2})/2");
        }
    }

    #[test]
    fn standard_u_m_is_convex(h1 in coeffs(), h2 in coeffs()) {
        let pb = fs_problem();
        let grid = pb.grid();
        let a = HedgeFunction::from_fn(grid.clone(), cubic(h1)).unwrap();
        let b = HedgeFunction::from_fn(grid.clone(), cubic(h2)).unwrap();
        let m = HedgeFunction::from_fn(grid, |x| 0.5 * (cubic(h1)(x) + cubic(h2)(x))).unwrap();
        let (ua, ub, um) = (wasserstein::evaluate_u_m(pb, &a), wasserstein::evaluate_u_m(pb, &b), wasserstein::evaluate_u_m(pb, &m));
        prop_assert!(um <= 0.5 * (ua + ub) + 1e-9);
    }

    #[test]
    fn optimal_hedges_beat_random_ones(h in coeffs(), f in coeffs()) {
        for pb in [fs_problem(), p3_problem()] {
            let best = adapted::sensitivity(pb, Constraint::MartingaleMarginal).unwrap().value;
            prop_assert!(best <= adapted::evaluate_u(pb, &cubic(h), &cubic(f)) + 1e-9);
            let m = adapted::sensitivity(pb, Constraint::Martingale).unwrap().value;
            prop_assert!(m <= adapted::evaluate_u(pb, &cubic(h), &|_| 0.0) + 1e-9);
        }
    }

    #[test]
    fn gradient_scales_linearly(lambda in -3.0f64..3.0, x1 in 0.2f64..2.0, x2 in 0.2f64..2.0) {
        let m = TwoPeriodModel::black_scholes(0.4).unwrap();
        for c in [Criterion::forward_start(), Criterion::linear(Expr::parse("x1 * max(x2 - 1, 0)").unwrap())] {
            let (a1, a2) = c.gradient(&m, x1, x2).unwrap();
            let (b1, b2) = c.scaled(lambda).gradient(&m, x1, x2).unwrap();
            prop_assert!((b1 - lambda * a1).abs() < 1e-12 && (b2 - lambda * a2).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn sensitivities_are_absolutely_homogeneous(lambda in prop_oneof![-2.5f64..-0.2, 0.2f64..2.5]) {
        let m = TwoPeriodModel::black_scholes(0.4).unwrap().with_grid_size(64).unwrap();
        let c = Criterion::linear(Expr::parse("max(x2 - x1, 0) + 0.3 * x1 * x2").unwrap());
        let s = Settings { mc_samples: 2000, seed: 3 };
        let base = Problem::with_settings(&c, &m, 2.0, s).unwrap();
        let scaled = Problem::with_settings(&c.scaled(lambda), &m, 2.0, s).unwrap();
        for k in Constraint::ALL {
            let a = adapted::sensitivity(&base, k).unwrap();
            let b = adapted::sensitivity(&scaled, k).unwrap();
            prop_assert!((b.value - lambda.abs() * a.value).abs() < 1e-9 * (1.0 + a.value));
            if let (Some(ha), Some(hb)) = (&a.hedge, &b.hedge) {
                for (x, y) in ha.values().iter().zip(hb.values()) {
                    prop_assert!((y - lambda * x).abs() < 1e-9);
                }
            }
        }
        for k in [Constraint::None, Constraint::Martingale] {
            let a = wasserstein::sensitivity(&base, k).unwrap().value;
            let b = wasserstein::sensitivity(&scaled, k).unwrap().value;
            prop_assert!((b - lambda.abs() * a).abs() < 1e-7 * (1.0 + a));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5))]

    // Quadrature against nested Monte Carlo with 10⁵ conditional draws.
    #[test]
    fn quadrature_agrees_with_nested_monte_carlo(
        c in prop::array::uniform5(-1.0f64..1.0),
        u in 0.1f64..0.9,
        bs in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let sigma = 0.5;
        let model = if bs { TwoPeriodModel::black_scholes(sigma).unwrap() } else { TwoPeriodModel::bachelier(sigma).unwrap() };
        let x1 = model.marginal_quantile(u);
        let poly = |x2: f64| c.iter().rev().fold(0.0, |acc, k| acc * x2 + k);
        let q = model.conditional_expectation(x1, |_, x2| poly(x2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x2 = if bs { x1 * (sigma * z - 0.5 * sigma * sigma).exp() } else { x1 + sigma * z };
            let v = poly(x2);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        prop_assert!((q - mean).abs() <= 3.0 * se + 1e-12, "{q} vs {mean} ± {se}");
    }
}

proptest! {
    #[test]
    fn hedge_functions_clamp_outside_the_grid(vals in prop::collection::vec(-5.0f64..5.0, 3..20), x in -10.0f64..10.0) {
        let n = vals.len();
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let h = HedgeFunction::new(grid, vals.clone()).unwrap();
        let v = h.eval(x);
        if x <= 0.0 {
            prop_assert_eq!(v, vals[0]);
        } else if x >= 1.0 {
            prop_assert_eq!(v, vals[n - 1]);
        } else {
            let lo = vals.iter().copied().fold(f64::MAX, f64::min);
            let hi = vals.iter().copied().fold(f64::MIN, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
