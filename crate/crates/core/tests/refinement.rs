use mrisk_core::wasserstein::{self, assemble_normal_equations, build_fredholm_system, direct_minimize, fredholm_residual};
use mrisk_core::{Criterion, HedgeFunction, Problem, Settings, TwoPeriodModel};

fn problem(model: TwoPeriodModel, n: usize) -> Problem {
    let m = model.with_grid_size(n).unwrap();
    Problem::with_settings(&Criterion::forward_start(), &m, 2.0, Settings { mc_samples: 2000, seed: 2 }).unwrap()
}

fn models() -> Vec<TwoPeriodModel> {
    vec![TwoPeriodModel::black_scholes(0.4).unwrap(), TwoPeriodModel::bachelier(0.6).unwrap()]
}

#[test]
fn direct_minimum_does_not_increase_on_nested_grids() {
    for m in models() {
        let values: Vec<f64> = [65, 129, 257, 513].iter().map(|&n| direct_minimize(&problem(m.clone(), n)).unwrap().1.value).collect();
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{values:?}");
        }
    }
}

#[test]
fn direct_minimum_at_512_is_not_above_128() {
    for m in models() {
        let a = direct_minimize(&problem(m.clone(), 128)).unwrap().1.value;
        let b = direct_minimize(&problem(m, 512)).unwrap().1.value;
        assert!(b <= a + 1e-6, "{a} {b}");
    }
}

#[test]
fn normal_matrix_is_symmetric_positive_semidefinite() {
    let pb = problem(TwoPeriodModel::black_scholes(0.4).unwrap(), 96);
    let eq = assemble_normal_equations(&pb).unwrap();
    let q = &eq.q;
    let scale = q.amax();
    for i in 0..q.nrows() {
        for j in 0..q.ncols() {
            assert!((q[(i, j)] - q[(j, i)]).abs() <= 1e-12 * scale);
        }
    }
    let eig = q.clone().symmetric_eigenvalues();
    assert!(eig.min() >= -1e-10 * scale, "min eigenvalue {}", eig.min());
}

#[test]
fn residual_shrinks_with_the_grid_and_flags_perturbations() {
    for m in models() {
        let mut res = Vec::new();
        for n in [128, 512] {
            let pb = problem(m.clone(), n);
            let sys = build_fredholm_system(&pb).unwrap();
            let (hd, _) = direct_minimize(&pb).unwrap();
            let (hf, _) = wasserstein::solve_fredholm_hedge(&sys, &pb).unwrap();
            let base = fredholm_residual(&hd, &sys);
            let fred = fredholm_residual(&hf, &sys);
            let grid = hd.grid().to_vec();
            let last = grid.len() - 1;
            let bumped: Vec<f64> = hd
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 || i == last { *v } else { v + 0.1 * grid[i].sin() })
                .collect();
            let bumped = HedgeFunction::new(grid, bumped).unwrap();
            assert!(fredholm_residual(&bumped, &sys) > base);
            res.push((base, fred));
        }
        assert!(res[0].0 / res[1].0 >= 3.0, "{res:?}");
        assert!(res[1].1 < res[0].1, "{res:?}");
    }
}
