use phylomoments::newick::{parse_newick, random_tree, write_newick, Phylogeny};
use phylomoments::rng::seeded;
use proptest::prelude::*;

fn ancestors_of(phylo: &Phylogeny, mut b: usize) -> Vec<usize> {
    let mut out = vec![b];
    while let Some(up) = phylo.parent_branch(phylo.parent_node(b)) {
        out.push(up);
        b = up;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_exact(n in 2usize..40, seed in any::<u64>()) {
        let tree = random_tree(n, 0.2, &mut seeded(seed)).unwrap();
        let text = write_newick(&tree);
        let back = parse_newick(&text).unwrap();
        prop_assert_eq!(back.n_tips(), n);
        prop_assert_eq!(back.tip_names(), tree.tip_names());
        prop_assert_eq!(back.lengths(), tree.lengths());
        prop_assert_eq!(write_newick(&back), text);
    }

    #[test]
    fn subtree_sets_match_ancestor_walk(n in 2usize..30, seed in any::<u64>()) {
        let tree = random_tree(n, 0.2, &mut seeded(seed)).unwrap();
        for b in 0..tree.n_branches() {
            let set = tree.subtree_branches(b).unwrap();
            for x in 0..tree.n_branches() {
                prop_assert_eq!(set.contains(x), ancestors_of(&tree, x).contains(&b));
            }
            prop_assert!(set.is_downward_closed(&tree));
        }
    }

    #[test]
    fn postorder_visits_children_first(n in 2usize..60, seed in any::<u64>()) {
        let tree = random_tree(n, 0.2, &mut seeded(seed)).unwrap();
        let order = tree.postorder();
        prop_assert_eq!(order.len(), tree.n_branches());
        let mut pos = vec![usize::MAX; tree.n_branches()];
        for (k, &b) in order.iter().enumerate() {
            pos[b] = k;
        }
        for b in 0..tree.n_branches() {
            if let Some([c1, c2]) = tree.child_branches(tree.child_node(b)) {
                prop_assert!(pos[c1] < pos[b] && pos[c2] < pos[b]);
            }
        }
    }

    #[test]
    fn reroot_preserves_tips_and_total_length(n in 3usize..25, seed in any::<u64>(), frac in 0.0f64..1.0) {
        let tree = random_tree(n, 0.2, &mut seeded(seed)).unwrap();
        for b in 0..tree.n_branches() {
            let (r, origins) = tree.reroot(b, frac).unwrap();
            prop_assert_eq!(r.n_tips(), n);
            prop_assert_eq!(origins.len(), r.n_branches());
            prop_assert!((r.tree_length() - tree.tree_length()).abs() <= 1e-12 * tree.tree_length().max(1.0));
            let mut names = r.tip_names().to_vec();
            let mut orig = tree.tip_names().to_vec();
            names.sort();
            orig.sort();
            prop_assert_eq!(names, orig);
        }
    }
}

#[test]
fn five_tip_tree_structure() {
    let tree = parse_newick("(((A:0.7,B:0.8):0.3,C:0.4):0.1,(D:0.5,E:0.6):0.2);").unwrap();
    assert_eq!((tree.n_tips(), tree.n_branches(), tree.n_nodes()), (5, 8, 9));
    assert_eq!(tree.internal_branches().len(), 3);
    assert_eq!(tree.terminal_branches().len(), 5);
    let a = tree.parent_branch(tree.tip_node(tree.find_tip("A").unwrap())).unwrap();
    assert_eq!(tree.subtree_branches(a).unwrap().iter().collect::<Vec<_>>(), vec![a]);
    assert!((tree.tree_length() - 3.6).abs() < 1e-12);
}

#[test]
fn malformed_inputs_are_rejected() {
    for bad in ["", "(A,B", "(A:0.1,B:x);", "((A,B,C));", "(A:0.1,A:0.2);", "(A:-1,B:1);"] {
        assert!(parse_newick(bad).is_err(), "accepted `{bad}`");
    }
}
