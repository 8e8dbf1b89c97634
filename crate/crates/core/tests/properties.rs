mod common;

use ironkit::access::{access_objective, no_access_baseline, solve_access};
use ironkit::continuum::{coarsen, dyadic_discretize, solve_level, ContinuousProblem, Polynomial};
use ironkit::grid::{enumerate_lower_sets, expectation, is_nondecreasing, partial_delta};
use ironkit::iron::{optimal_q, verify_ironing};
use ironkit::majorize::decompose_t_transforms;
use ironkit::mech::{contracting_solution, goods_mechanism, marginal_revenue, verify_ic_ir, GoodsSpec};
use ironkit::sosd::{dominates, ds_factorization, survival_complement, univariate_majorizes, utility_battery, Factorization, JointDistribution, Order};
use ironkit::{iron, majorizes, CostModel, GridFunction, IronOptions, Method, Side, TypeGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts() -> IronOptions {
    IronOptions::default()
}

/// Grids with at most a few dozen lower sets.
fn small_grid(rng: &mut ChaCha8Rng) -> TypeGrid {
    loop {
        let g = common::grid(rng);
        if g.len() <= 12 {
            return g;
        }
    }
}

fn lower_sums(grid: &TypeGrid, g: &GridFunction) -> Vec<f64> {
    enumerate_lower_sets(grid, 1_000_000)
        .unwrap()
        .iter()
        .map(|l| l.members().iter().map(|&x| grid.prob(x) * g[x]).sum())
        .collect()
}

fn random_pmf(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lower_deltas_sum_back_to_the_function(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::grid(&mut rng);
        let g = common::function(&mut rng, &grid);
        for i in 0..grid.dims() {
            let d = partial_delta(&grid, &g, i, Side::Lower).unwrap();
            for start in grid.line_starts(i) {
                let mut acc = 0.0;
                for x in grid.line(start, i) {
                    acc += d[x];
                    prop_assert!((acc - g[x]).abs() <= 1e-12 * (1.0 + g[x].abs()));
                }
            }
        }
    }

    #[test]
    fn lower_sets_form_a_lattice(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = small_grid(&mut rng);
        let sets: Vec<Vec<bool>> = enumerate_lower_sets(&grid, 1_000_000)
            .unwrap()
            .iter()
            .map(|l| l.membership().to_vec())
            .collect();
        for a in &sets {
            for b in &sets {
                let meet: Vec<bool> = a.iter().zip(b).map(|(x, y)| *x && *y).collect();
                let join: Vec<bool> = a.iter().zip(b).map(|(x, y)| *x || *y).collect();
                prop_assert!(sets.contains(&meet));
                prop_assert!(sets.contains(&join));
            }
        }
    }

    #[test]
    fn majorization_is_a_preorder(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = small_grid(&mut rng);
        let g = common::monotone(&mut rng, &grid);
        let h1 = common::spread(&mut rng, &grid, &g);
        let h2 = common::spread(&mut rng, &grid, &h1);
        for m in [Method::Oracle, Method::Flow] {
            prop_assert!(majorizes(&g, &g, &grid, 1e-9, m).unwrap().verdict);
            prop_assert!(majorizes(&h1, &g, &grid, 1e-9, m).unwrap().verdict);
            prop_assert!(majorizes(&h2, &h1, &grid, 1e-9, m).unwrap().verdict);
            prop_assert!(majorizes(&h2, &g, &grid, 1e-9, m).unwrap().verdict);
        }
    }

    #[test]
    fn t_transforms_rebuild_the_minor(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::grid(&mut rng);
        let g = common::strictly_monotone(&mut rng, &grid);
        let h = common::spread(&mut rng, &grid, &g);
        let mut cur = h.clone();
        for s in decompose_t_transforms(&h, &g, &grid).unwrap() {
            prop_assert!((0.0..=1.0).contains(&s.weight));
            s.apply(&grid, &mut cur);
        }
        prop_assert!(cur.sup_distance(&g) <= 1e-8);
    }

    #[test]
    fn ironing_lowers_every_lower_set_mean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = small_grid(&mut rng);
        let alpha = common::function(&mut rng, &grid);
        let res = iron(&alpha, &grid, &opts()).unwrap();
        let a = lower_sums(&grid, &alpha);
        let b = lower_sums(&grid, &res.alpha_bar);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*y <= *x + 1e-9);
        }
        let full = (expectation(&grid, &res.alpha_bar, None).unwrap() - expectation(&grid, &alpha, None).unwrap()).abs();
        prop_assert!(full <= 1e-9);
        let report = verify_ironing(&alpha, &res, &grid, Method::Flow, &CostModel::Quadratic { c: 1.0 }, 1e-8).unwrap();
        prop_assert!(report.all_passed(), "{report:?}");
        let again = iron(&res.alpha_bar, &grid, &opts()).unwrap();
        prop_assert!(again.lambda.max_abs() <= 1e-8);
    }

    #[test]
    fn optimal_q_beats_feasible_decisions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::grid(&mut rng);
        let alpha = common::function(&mut rng, &grid);
        let cost = common::cost(&mut rng);
        let abar = iron(&alpha, &grid, &opts()).unwrap().alpha_bar;
        let value = |q: &GridFunction| -> f64 {
            (0..grid.len()).map(|x| grid.prob(x) * (alpha[x] * q[x] - cost.cost(q[x]))).sum()
        };
        let q_star = optimal_q(&abar, &cost);
        prop_assert!(is_nondecreasing(&grid, &q_star, 1e-9));
        let best = value(&q_star);
        for _ in 0..50 {
            let q = common::feasible_q(&mut rng, &grid);
            prop_assert!(value(&q) <= best + 1e-8);
        }
    }

    #[test]
    fn access_solution_is_monotone_and_gapless(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::grid(&mut rng);
        let alphas: Vec<GridFunction> = (0..grid.dims()).map(|_| common::function(&mut rng, &grid)).collect();
        let cost = common::cost(&mut rng);
        let acc = solve_access(&alphas, &grid, &cost, &opts()).unwrap();
        for (i, eta) in acc.eta.iter().enumerate() {
            prop_assert!(eta.values().iter().all(|e| (0.0..=1.0).contains(e)));
            let level = GridFunction::from_fn(&grid, |x| acc.q_star[x] * eta[x]);
            for x in 0..grid.len() {
                if let Some(u) = grid.up(x, i) {
                    prop_assert!(level[u] - level[x] >= -1e-9 * (1.0 + level[x].abs()));
                }
            }
        }
        let with_tilde = access_objective(&acc.alphas_tilde, &acc.q_star, &acc.eta, &grid, &cost);
        let with_alpha = access_objective(&alphas, &acc.q_star, &acc.eta, &grid, &cost);
        prop_assert!((with_tilde - with_alpha).abs() <= 1e-8 * (1.0 + with_alpha.abs()));

        let total = no_access_baseline(&alphas, &grid, &opts()).unwrap();
        let q0 = optimal_q(&total, &cost);
        let ones = vec![GridFunction::constant(grid.shape(), 1.0); grid.dims()];
        prop_assert!(with_alpha >= access_objective(&alphas, &q0, &ones, &grid, &cost) - 1e-9);
    }

    #[test]
    fn goods_mechanisms_are_consistent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::grid(&mut rng);
        let spec = common::goods(&mut rng, &grid);
        for with_access in [false, true] {
            let out = goods_mechanism(&spec, with_access, &opts()).unwrap();
            let scale = 1.0 + out.profit.abs();
            prop_assert!((out.profit - out.profit_virtual).abs() <= 1e-8 * scale);
            let rep = verify_ic_ir(&spec, &out, 1e-8);
            prop_assert!(rep.ic && rep.ir, "{rep:?}");
        }
    }

    #[test]
    fn scaling_values_scales_revenue_and_keeps_bunches(seed in any::<u64>(), k in 0.2f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::grid(&mut rng);
        let spec = common::goods(&mut rng, &grid);
        let scaled = GoodsSpec::new(grid.clone(), spec.values.iter().map(|v| v.map(|t| k * t)).collect(), spec.cost).unwrap();
        for (a, b) in marginal_revenue(&spec).iter().zip(&marginal_revenue(&scaled)) {
            prop_assert!(a.map(|t| k * t).sup_distance(b) <= 1e-12 * (1.0 + b.max_abs()));
        }
        let p = goods_mechanism(&spec, false, &opts()).unwrap().partition;
        let q = goods_mechanism(&scaled, false, &opts()).unwrap().partition;
        prop_assert_eq!(p.cells(), q.cells());
    }

    #[test]
    fn contract_durations_are_monotone_and_incentive_compatible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::grid(&mut rng);
        let spec = common::contract(&mut rng, &grid);
        let out = contracting_solution(&spec, &opts()).unwrap();
        prop_assert!(is_nondecreasing(&grid, &out.q, 1e-12 * (1.0 + out.q.max_abs())));
        prop_assert!((out.profit - out.profit_virtual).abs() <= 1e-8 * (1.0 + out.profit.abs()));
        let rep = verify_ic_ir(&spec, &out, 1e-8);
        prop_assert!(rep.ic && rep.ir, "{rep:?}");
    }

    #[test]
    fn dyadic_levels_are_martingales(seed in any::<u64>(), level in 1u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = rng.gen_range(1..=2);
        let terms = (0..4)
            .map(|_| (rng.gen_range(-3.0..3.0), (0..dims).map(|_| rng.gen_range(0..4)).collect()))
            .collect();
        let f = Polynomial { terms }.into_fn();
        let coarse = ContinuousProblem::new(dims, f.clone(), level).unwrap();
        let fine = ContinuousProblem::new(dims, f, level + 1).unwrap();
        let (cg, ca) = dyadic_discretize(&coarse).unwrap();
        let (fg, fa) = dyadic_discretize(&fine).unwrap();
        prop_assert!(coarsen(&fg, &fa, &cg).unwrap().sup_distance(&ca) <= 1e-8);

        let sol = solve_level(&fine, &opts()).unwrap();
        let gap = expectation(&sol.grid, &sol.alpha_bar, None).unwrap() - expectation(&sol.grid, &sol.alpha, None).unwrap();
        prop_assert!(gap.abs() <= 1e-9);
        prop_assert!(is_nondecreasing(&sol.grid, &sol.alpha_bar, 1e-9));
    }

    #[test]
    fn survival_complement_of_independent_marginals_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=4)).collect();
        let marginals: Vec<Vec<f64>> = shape.iter().map(|&n| random_pmf(&mut rng, n)).collect();
        let grid = JointDistribution::on_lattice(&shape, vec![1.0 / shape.iter().product::<usize>() as f64; shape.iter().product()]).unwrap().grid().clone();
        let pmf = (0..grid.len()).map(|x| grid.coords(x).iter().zip(&marginals).map(|(&k, m)| m[k]).product()).collect();
        let dist = JointDistribution::on_lattice(&shape, pmf).unwrap();
        let fb = survival_complement(&dist).values;
        prop_assert!(is_nondecreasing(&grid, &fb, 1e-12));
    }

    #[test]
    fn second_order_dominance_matches_majorization(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=4)).collect();
        let n: usize = shape.iter().product();
        let f = JointDistribution::on_lattice(&shape, random_pmf(&mut rng, n)).unwrap();
        // A mean-preserving contraction along one axis gives a second-order dominating pair.
        let grid = f.grid().clone();
        let mut pmf = f.pmf().values().to_vec();
        let i = rng.gen_range(0..grid.dims());
        let mids: Vec<usize> = (0..n).filter(|&x| grid.up(x, i).is_some() && grid.down(x, i).is_some()).collect();
        if let Some(&x) = mids.first() {
            let (lo, hi) = (grid.down(x, i).unwrap(), grid.up(x, i).unwrap());
            let m = pmf[lo].min(pmf[hi]) * rng.gen_range(0.0..1.0);
            pmf[lo] -= m;
            pmf[hi] -= m;
            pmf[x] += 2.0 * m;
        }
        let g = JointDistribution::on_lattice(&shape, pmf).unwrap();
        let other = JointDistribution::on_lattice(&shape, random_pmf(&mut rng, n)).unwrap();
        for (a, b) in [(&g, &f), (&f, &g), (&other, &f), (&f, &other)] {
            let verdict = dominates(a, b, Order::Second, 1e-9).unwrap().verdict;
            let gb = survival_complement(a).values;
            let fb = survival_complement(b).values;
            prop_assert_eq!(verdict, majorizes(&gb, &fb, &grid, 1e-9, Method::Oracle).unwrap().verdict);
            let battery = utility_battery(a, b, 50, seed, 1e-9).unwrap();
            prop_assert!(!battery.fault, "{:?}", battery.min_gap);
        }
        if grid.dims() == 1 {
            prop_assert!(dominates(&g, &f, Order::Second, 1e-9).unwrap().verdict);
        }
    }

    #[test]
    fn first_order_dominance_orders_survival_complements(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=3)).collect();
        let n: usize = shape.iter().product();
        let f = JointDistribution::on_lattice(&shape, random_pmf(&mut rng, n)).unwrap();
        let grid = f.grid().clone();
        // push mass upward along random edges
        let mut pmf = f.pmf().values().to_vec();
        for _ in 0..n {
            let x = rng.gen_range(0..n);
            let i = rng.gen_range(0..grid.dims());
            if let Some(u) = grid.up(x, i) {
                let m = pmf[x] * rng.gen_range(0.0..1.0);
                pmf[x] -= m;
                pmf[u] += m;
            }
        }
        let g = JointDistribution::on_lattice(&shape, pmf).unwrap();
        prop_assert!(dominates(&g, &f, Order::First, 1e-12).unwrap().verdict);
        let gb = survival_complement(&g).values;
        let fb = survival_complement(&f).values;
        prop_assert!((0..n).all(|x| gb[x] <= fb[x] + 1e-12));
        let battery = utility_battery(&g, &f, 50, seed, 1e-9).unwrap();
        prop_assert!(battery.min_gap >= -1e-12);
    }

    #[test]
    fn doubly_stochastic_factorization_matches_prefix_test(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f: Vec<f64> = if rng.gen_bool(0.5) {
            // a random average of permutations of g is majorized by g
            let mut f = vec![0.0; n];
            for _ in 0..3 {
                let w = 1.0 / 3.0;
                let mut p = g.clone();
                for k in (1..n).rev() {
                    p.swap(k, rng.gen_range(0..=k));
                }
                for (a, b) in f.iter_mut().zip(&p) {
                    *a += w * b;
                }
            }
            f
        } else {
            let mut f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let shift = (g.iter().sum::<f64>() - f.iter().sum::<f64>()) / n as f64;
            f.iter_mut().for_each(|v| *v += shift);
            f
        };
        let (maj, _, _) = univariate_majorizes(&g, &f, 1e-9);
        match ds_factorization(&f, &g, 1e-9).unwrap() {
            Factorization::Feasible(t) => {
                prop_assert!(maj);
                for (r, row) in t.iter().enumerate() {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-7);
                    prop_assert!((t.iter().map(|row| row[r]).sum::<f64>() - 1.0).abs() <= 1e-7);
                    let tg: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
                    prop_assert!((tg - f[r]).abs() <= 1e-7);
                }
            }
            Factorization::Infeasible { .. } => prop_assert!(!maj),
        }
    }
}
