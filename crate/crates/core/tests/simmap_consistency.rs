mod common;

use common::*;
use phylomoments::ctmc::{branch_moments, jukes_cantor, SummaryLabel};
use phylomoments::moments::{build_cache, posterior_covariance, posterior_moments, TipData};
use phylomoments::newick::{parse_newick, BranchSet};
use phylomoments::rng::seeded;
use phylomoments::simmap::{
    expected_conditional_moments, mc_covariance, mc_moments, sample_branch_path, sample_branch_path_rejection,
    sample_internal_states, ConditionalStateSampler,
};
use phylomoments::stats::sample_moments;

fn within(x: f64, target: f64, se: f64, k: f64) -> bool {
    (x - target).abs() <= k * se
}

#[test]
fn conditional_root_states_match_enumeration() {
    let mut rng = seeded(31);
    let model = random_gtr(&mut rng);
    let tree = random_instance_tree(4, &mut rng);
    let tips = random_tips(4, 4, &mut rng);
    let label = SummaryLabel::all_substitutions(4);
    let cache = build_cache(&model, &tree, &label).unwrap();
    let ks = kernels(&model, &label, &tree);
    let none = BranchSet::empty(tree.n_branches());
    let pd = enumerate(&tree, &ks, model.pi().as_slice(), &tips, &none, &none).pd;

    let reps = 20_000;
    let sampler = ConditionalStateSampler::new(&tree, &cache, &tips).unwrap();
    let mut states = vec![0; tree.n_nodes()];
    let mut counts = [0usize; 4];
    for _ in 0..reps {
        sampler.sample(&tree, &cache, &mut rng, &mut states);
        counts[states[tree.root()]] += 1;
        for t in 0..4 {
            assert!(tips.allows(t, states[tree.tip_node(t)]));
        }
    }
    for r in 0..4 {
        let mut pi_r = vec![0.0; 4];
        pi_r[r] = model.pi()[r];
        let p = enumerate(&tree, &ks, &pi_r, &tips, &none, &none).pd / pd;
        let freq = counts[r] as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt().max(1e-4);
        assert!(within(freq, p, se, 4.5), "root state {r}: {freq} vs {p}");
    }
}

#[test]
fn missing_data_gives_stationary_root() {
    let tree = parse_newick("((A:0.2,B:0.3):0.1,C:0.4);").unwrap();
    let model = random_gtr(&mut seeded(32));
    let cache = build_cache(&model, &tree, &SummaryLabel::all_substitutions(4)).unwrap();
    let tips = TipData::missing(3, 4);
    let mut rng = seeded(33);
    let reps = 20_000;
    let mut counts = [0usize; 4];
    for _ in 0..reps {
        counts[sample_internal_states(&tree, &cache, &tips, &mut rng).unwrap()[tree.root()]] += 1;
    }
    for r in 0..4 {
        let p = model.pi()[r];
        let freq = counts[r] as f64 / reps as f64;
        assert!(within(freq, p, (p * (1.0 - p) / reps as f64).sqrt(), 4.5));
    }
}

#[test]
fn bridge_samplers_agree_with_restricted_moments() {
    let model = random_gtr(&mut seeded(34));
    let label = SummaryLabel::all_substitutions(4);
    let t = 0.8;
    let bm = branch_moments(&model, &label, t).unwrap();
    let mut rng = seeded(35);
    for (i, j) in [(0, 0), (0, 3), (2, 1)] {
        let expected = bm.e1[(i, j)] / bm.p[(i, j)];
        let uni: Vec<f64> =
            (0..20_000).map(|_| sample_branch_path(i, j, t, &model, &mut rng).unwrap().n_jumps() as f64).collect();
        let rej: Vec<f64> = (0..20_000)
            .map(|_| sample_branch_path_rejection(i, j, t, &model, 100_000, &mut rng).unwrap().n_jumps() as f64)
            .collect();
        let (su, sr) = (sample_moments(&uni), sample_moments(&rej));
        assert!(within(su.mean, expected, su.mean_se, 4.5), "uniformization {i}->{j}");
        assert!(within(sr.mean, expected, sr.mean_se, 4.5), "rejection {i}->{j}");
        let path = sample_branch_path(i, j, t, &model, &mut rng).unwrap();
        assert_eq!(path.start, i);
        assert_eq!(path.end(), j);
        assert!(path.events.windows(2).all(|w| w[0].0 < w[1].0));
    }
}

#[test]
fn mapping_moments_match_exact_values() {
    let mut rng = seeded(36);
    for _ in 0..3 {
        let model = random_gtr(&mut rng);
        let tree = random_instance_tree(5, &mut rng);
        let label = random_label(4, &mut rng);
        let cache = build_cache(&model, &tree, &label).unwrap();
        let o1 = random_omega(tree.n_branches(), &mut rng);
        let o2 = random_omega(tree.n_branches(), &mut rng);
        let tips = random_tips(5, 4, &mut rng);
        let exact = posterior_covariance(&tree, &cache, &o1, &o2, &tips).unwrap();
        let mc = mc_covariance(&tree, &cache, &model, &o1, &o2, &tips, &label, 20_000, &mut rng).unwrap();
        assert!(within(mc.first.mean, exact.mean[0], mc.first.mean_se, 4.5));
        assert!(within(mc.second.variance, exact.variance[1], mc.second.variance_se, 4.5));
        assert!(within(mc.covariance, exact.covariance, mc.covariance_se, 4.5));
        let single = mc_moments(&tree, &cache, &model, &o1, &tips, &label, 20_000, &mut rng).unwrap();
        assert!(within(single.variance, exact.variance[0], single.variance_se, 4.5));
    }
}

#[test]
fn expected_conditional_variance_matches_enumeration() {
    let tree = parse_newick("((A:0.3,B:0.5):0.2,C:0.6);").unwrap();
    let jc = jukes_cantor();
    let cache = build_cache(&jc, &tree, &SummaryLabel::all_substitutions(4)).unwrap();
    let all = BranchSet::all(tree.n_branches());
    let sub = tree.subtree_branches(0).unwrap();
    let (mut ev, mut ec) = (0.0, 0.0);
    for d in all_datasets(3, 4) {
        let r = posterior_covariance(&tree, &cache, &sub, &all, &d).unwrap();
        ev += r.likelihood * r.variance[1];
        ec += r.likelihood * r.covariance;
    }
    let est = expected_conditional_moments(&tree, &cache, &sub, Some(&all), 5000, &mut seeded(37)).unwrap();
    assert!(within(est.expected_variance[1], ev, est.expected_variance_se[1], 4.5));
    assert!(within(est.expected_covariance, ec, est.expected_covariance_se, 4.5));
    let one = posterior_moments(&tree, &cache, &all, &TipData::from_states(&[0, 0, 0], 4).unwrap()).unwrap();
    assert!(one.variance < ev);
}
