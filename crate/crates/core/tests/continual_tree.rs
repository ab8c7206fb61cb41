use std::collections::BTreeMap;

use dpmat::continual::{dyadic_cover, DyadicTree, NodeId, TreeParams};
use dpmat::linalg::SymMatrix;
use dpmat::mechanisms::{wishart_dof, PrivacyBudget};
use dpmat::oracle::WindowBuffer;
use dpmat::rng::Rng;
use dpmat::synth::random_norm_row;
use proptest::prelude::*;

fn budget() -> PrivacyBudget {
    PrivacyBudget::new(1.0, 1e-4).unwrap()
}

#[test]
fn noisy_payloads_are_symmetric_psd_perturbations() {
    let params = TreeParams::new(16, 3, budget(), 8).with_exact_shadow(true);
    let mut t = DyadicTree::new(params).unwrap();
    assert_eq!(t.tau(), wishart_dof(3, &budget().split(5)));
    let mut rng = Rng::labeled(8, "stream");
    for _ in 0..50 {
        t.ingest(&random_norm_row(&mut rng, 3)).unwrap();
        for n in t.nodes() {
            let noise = n.payload().sub(n.exact().unwrap());
            assert!(noise.min_eigenvalue() >= -1e-9 * noise.spectral_norm());
        }
    }
}

#[test]
fn noisy_tree_is_deterministic() {
    let p = TreeParams::new(10, 2, budget(), 1);
    let (mut a, mut b) = (DyadicTree::new(p).unwrap(), DyadicTree::new(p).unwrap());
    let mut rng = Rng::new(5, 5);
    for t in 1..=40 {
        let row = random_norm_row(&mut rng, 2);
        a.ingest(&row).unwrap();
        b.ingest(&row).unwrap();
        assert_eq!(a.query(t).unwrap(), b.query(t).unwrap());
    }
}

#[test]
fn unit_window_releases_single_leaf() {
    let mut t = DyadicTree::new(TreeParams::new(1, 2, budget(), 0).with_noise(false)).unwrap();
    assert_eq!(t.levels(), 1);
    for k in 1..=5u64 {
        let row = [0.1 * k as f64, 0.0];
        assert_eq!(t.ingest(&row).unwrap(), vec![NodeId { level: 0, index: k - 1 }]);
        assert_eq!(t.query(k).unwrap(), SymMatrix::outer(&row));
        assert_eq!(t.cover().len(), 1);
    }
}

#[test]
fn noise_adds_about_one_wishart_per_cover_node() {
    let (d, w) = (2, 8u64);
    let mut trace_excess = 0.0;
    let mut expected = 0.0;
    for seed in 0..200 {
        let mut t = DyadicTree::new(TreeParams::new(w, d, budget(), seed)).unwrap();
        let mut buf = WindowBuffer::new(w as usize, d);
        let mut rng = Rng::new(seed, 9);
        for _ in 0..13 {
            let row = random_norm_row(&mut rng, d);
            t.ingest(&row).unwrap();
            buf.push(&row).unwrap();
        }
        trace_excess += t.query(13).unwrap().sub(&buf.recompute_covariance()).trace();
        expected += (t.cover().len() as u64 * t.tau() * d as u64) as f64;
    }
    assert!((trace_excess / expected - 1.0).abs() < 0.05);
}

fn brute_cover_ok(start: u64, end: u64, cover: &[NodeId]) -> bool {
    let mut seen = BTreeMap::new();
    for id in cover {
        for s in id.start()..=id.end() {
            *seen.entry(s).or_insert(0) += 1;
        }
    }
    seen.len() as u64 == end - start + 1 && seen.iter().all(|(&s, &c)| c == 1 && s >= start && s <= end)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn covers_partition_the_interval(start in 1u64..500, len in 1u64..200, max_level in 0u32..9) {
        let end = start + len - 1;
        let cover = dyadic_cover(start, end, max_level);
        prop_assert!(brute_cover_ok(start, end, &cover));
        prop_assert!(cover.iter().all(|id| id.level <= max_level && id.start() % id.span() == 1 % id.span()));
    }

    #[test]
    fn noise_free_tree_matches_oracle(window in 1u64..40, steps in 1usize..120, seed in any::<u64>()) {
        let mut t = DyadicTree::new(TreeParams::new(window, 2, budget(), seed).with_noise(false)).unwrap();
        let mut buf = WindowBuffer::new(window as usize, 2);
        let mut rng = Rng::new(seed, 0);
        for k in 1..=steps as u64 {
            let row = random_norm_row(&mut rng, 2);
            t.ingest(&row).unwrap();
            buf.push(&row).unwrap();
            let want = buf.recompute_covariance();
            prop_assert!(t.query(k).unwrap().sub(&want).frobenius() <= 1e-12 * want.frobenius().max(1.0));
            let bound = 2 * ((window as f64).log2().ceil() as usize).max(1);
            prop_assert!(t.cover().len() <= bound);
        }
    }
}
