use approx::assert_relative_eq;
use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
use stablab::bounds::{convex_bound, evaluate, growth_recursion_unroll};
use stablab::lab::{estimate_generalization_gap, estimate_stability, run_paired};
use stablab::problems::{certify_constants, LabelModel, LeastSquaresLoss, LogisticLoss, SigmoidLoss, Synthetic};
use stablab::rules::StepSizeSchedule;
use stablab::sgm::{average_iterates, index_sequence, run_sgm, RunConfig, SamplingScheme};
use stablab::{
    empirical_risk, make_neighbor, DataDistribution, Dataset, Example, ExampleSet, FiniteSupport, Loss, ParamVector,
};

fn ex(x: &[f64], y: f64) -> Example {
    Example::new(x.to_vec(), y).unwrap()
}

fn logistic_problem(n_atoms: usize, noise: f64) -> (LogisticLoss, DataDistribution) {
    let gen = Synthetic::new(4, 1.0, LabelModel::Classification { flip_prob: noise }, 3).unwrap();
    let dist = DataDistribution::finite(gen.finite_support(n_atoms, 5).unwrap());
    (LogisticLoss::new(1.0, 0.0, None), dist)
}

#[test]
fn csv_round_trip_feeds_training() {
    let dir = tempfile::tempdir().unwrap();
    let gen = Synthetic::new(3, 1.0, LabelModel::Classification { flip_prob: 0.1 }, 1).unwrap();
    let data = gen.dataset(20, 2).unwrap();
    let path = dir.path().join("data.csv");
    data.to_csv_path(&path).unwrap();
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("f0,f1,f2,label\n"));
    let back = Dataset::from_csv_path(&path, Some(1.0)).unwrap();
    assert_eq!(back.examples(), data.examples());

    let loss = LogisticLoss::new(1.0, 0.0, None);
    let cfg = RunConfig::new(40, StepSizeSchedule::Constant { alpha: 0.1 }, SamplingScheme::Uniform, 9);
    let a = run_sgm(&loss, &data, &cfg, &ParamVector::zeros(3)).unwrap();
    let b = run_sgm(&loss, &back, &cfg, &ParamVector::zeros(3)).unwrap();
    assert_eq!(a.final_w, b.final_w);
    assert!(empirical_risk(&loss, &a.final_w, &data).unwrap() < std::f64::consts::LN_2);
}

#[test]
fn certified_constants_match_closed_forms() {
    let ls = certify_constants(&LeastSquaresLoss::new(1.0, 1.0, 0.0, 1.0), Some(1.0), false).unwrap();
    assert_eq!((ls.smoothness, ls.strong_convexity, ls.lipschitz), (1.0, 0.0, 2.0));
    let lg = certify_constants(&LogisticLoss::new(2.0, 0.0, None), None, false).unwrap();
    assert_eq!((lg.lipschitz, lg.smoothness), (2.0, 1.0));
    let sg = certify_constants(&SigmoidLoss::new(4.0), None, false).unwrap();
    assert_eq!((sg.lipschitz, sg.range_bound), (1.0, 1.0));
}

#[test]
fn one_dimensional_least_squares_by_hand() {
    // f = ½(w − 1)² on a single example: w_{t+1} = w_t + α(1 − w_t).
    let loss = LeastSquaresLoss::new(1.0, 1.0, 0.0, 10.0);
    let data = Dataset::new(vec![ex(&[1.0], 1.0), ex(&[1.0], 1.0)], 1.0).unwrap();
    let mut cfg = RunConfig::new(2, StepSizeSchedule::Constant { alpha: 0.5 }, SamplingScheme::Uniform, 0);
    cfg.average = true;
    let traj = run_sgm(&loss, &data, &cfg, &ParamVector::zeros(1)).unwrap();
    assert_eq!(traj.final_w.as_slice(), &[0.75]);
    assert_eq!(average_iterates(&traj).unwrap().as_slice(), &[0.625]);
}

#[test]
fn paired_run_matches_hand_recursion() {
    // n = 2, z = (1, 0) at position 0 is replaced by z' = (1, 2); α = 0.5.
    let loss = LeastSquaresLoss::new(1.0, 2.0, 0.0, 10.0);
    let base = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[1.0], 1.0)], 1.0).unwrap();
    let pair = make_neighbor(&base, 0, ex(&[1.0], 2.0)).unwrap();
    let cfg = RunConfig::new(2, StepSizeSchedule::Constant { alpha: 0.5 }, SamplingScheme::Uniform, 4);
    let idx = index_sequence(4, SamplingScheme::Uniform, 2, 2, false).unwrap();
    let trace = run_paired(&loss, &pair, &cfg, &ParamVector::zeros(1), None).unwrap();
    let (mut w, mut v) = (0.0_f64, 0.0_f64);
    let targets = |i: usize| if i == 0 { (0.0, 2.0) } else { (1.0, 1.0) };
    for &i in &idx {
        let (y, y2) = targets(i);
        w += 0.5 * (y - w);
        v += 0.5 * (y2 - v);
    }
    assert_relative_eq!(trace.final_delta, (w - v).abs(), max_relative = 1e-15);
    assert_eq!(trace.hit_time, idx.iter().position(|&i| i == 0).map(|p| p + 1));
}

#[test]
fn stability_and_calculator_agree_on_convex_bound() {
    let (loss, dist) = logistic_problem(300, 0.1);
    let cfg = RunConfig::new(100, StepSizeSchedule::Constant { alpha: 0.01 }, SamplingScheme::Uniform, 3);
    let est = estimate_stability(&loss, &dist, 100, &cfg, 40, 64, 11, None).unwrap();
    let l = loss.constants().lipschitz;
    let bound = convex_bound(l, 100, &cfg.schedule, 100);
    assert_relative_eq!(bound, 0.02, max_relative = 1e-12);
    let inputs = [("L", l), ("n", 100.0), ("T", 100.0), ("alpha", 0.01)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    assert_relative_eq!(evaluate("convex", &inputs).unwrap().value, bound, max_relative = 1e-15);
    let unrolled = growth_recursion_unroll(100, &[1.0; 100], &[0.01 * l; 100]).unwrap();
    assert_relative_eq!(l * unrolled[100], bound, max_relative = 1e-12);
    assert!(est.mean <= bound, "{} > {bound}", est.mean);
}

#[test]
fn stability_shrinks_with_sample_size() {
    let (loss, dist) = logistic_problem(400, 0.1);
    let cfg = RunConfig::new(100, StepSizeSchedule::Constant { alpha: 0.05 }, SamplingScheme::Uniform, 3);
    let means: Vec<f64> = [50, 100, 200]
        .into_iter()
        .map(|n| estimate_stability(&loss, &dist, n, &cfg, 100, 64, 17, None).unwrap().mean)
        .collect();
    assert!(means[0] >= means[1] && means[1] >= means[2], "{means:?}");
}

#[test]
fn noisy_labels_give_a_detectable_gap() {
    let (loss, dist) = logistic_problem(500, 0.3);
    let cfg = RunConfig::new(200, StepSizeSchedule::Constant { alpha: 0.5 }, SamplingScheme::Uniform, 3);
    let gap = estimate_generalization_gap(&loss, &dist, 20, &cfg, 100, 5, 1, None).unwrap();
    assert!(gap.exact_population);
    assert!(gap.mean.abs() > 3.0 * gap.stderr, "{} ± {}", gap.mean, gap.stderr);
}

#[test]
fn two_atom_population_risk_is_exact() {
    let loss = LeastSquaresLoss::new(1.0, 3.0, 0.0, 5.0);
    let (z1, z2) = (ex(&[1.0], 0.0), ex(&[1.0], 3.0));
    let s = FiniteSupport::new(vec![z1.clone(), z2.clone()], vec![0.25, 0.75]).unwrap();
    let w = ParamVector::new(vec![1.0]).unwrap();
    let want = 0.25 * loss.value(&w, &z1) + 0.75 * loss.value(&w, &z2);
    assert_eq!(s.expectation(|z| loss.value(&w, z)), want);
}

proptest! {
    #[test]
    fn neighbors_differ_only_at_the_substituted_position(
        n in 2usize..40,
        seed in 0u64..1000,
        pick in 0usize..1000,
    ) {
        let gen = Synthetic::new(3, 1.0, LabelModel::Classification { flip_prob: 0.2 }, seed).unwrap();
        let base = gen.dataset(n, seed + 1).unwrap();
        let i = pick % n;
        let fresh = gen.dataset(2, seed + 2).unwrap().examples()[0].clone();
        let pair = make_neighbor(&base, i, fresh.clone()).unwrap();
        let nb = pair.neighbor();
        prop_assert_eq!(nb.len(), n);
        for k in 0..n {
            if k == i {
                prop_assert_eq!(nb.example(k), &fresh);
            } else {
                prop_assert!(nb.example(k) == base.example(k));
            }
        }
    }

    #[test]
    fn delta_is_zero_until_the_hit_step(seed in 0u64..500, alpha in prop::sample::select(vec![0.01, 0.1, 1.0])) {
        let (loss, dist) = logistic_problem(50, 0.1);
        let gen_pair = stablab::lab::random_neighbor(&dist, 10, seed).unwrap();
        let cfg = RunConfig::new(30, StepSizeSchedule::Constant { alpha }, SamplingScheme::Uniform, seed);
        let trace = run_paired(&loss, &gen_pair, &cfg, &ParamVector::zeros(4), None).unwrap();
        let hit = trace.hit_time.unwrap_or(usize::MAX);
        for r in &trace.records {
            if r.t < hit {
                prop_assert_eq!(r.delta, 0.0);
            }
        }
    }
}
