use dpmat::continual::{DyadicTree, TreeParams};
use dpmat::histogram::{Histogram, Mode, Params};
use dpmat::mechanisms::PrivacyBudget;
use dpmat::rng::Rng;
use dpmat::snapshot::{self, Snapshot, SnapshotDoc, MAGIC, VERSION};
use dpmat::synth::random_norm_row;
use dpmat::Error;
use proptest::prelude::*;

fn hist(mode: Mode, n: usize, eps: f64) -> Histogram {
    let b = PrivacyBudget::new(eps, 1e-3).unwrap();
    let mut h = Histogram::new(Params::new(mode, 12, 0.3, 2, 3, b, 17)).unwrap();
    let mut rng = Rng::labeled(2, "stream");
    for _ in 0..n {
        h.ingest(&random_norm_row(&mut rng, 3)).unwrap();
    }
    h
}

fn tree(n: usize) -> DyadicTree {
    let mut t = DyadicTree::new(TreeParams::new(6, 2, PrivacyBudget::new(1.0, 1e-3).unwrap(), 4)).unwrap();
    let mut rng = Rng::labeled(3, "stream");
    for _ in 0..n {
        t.ingest(&random_norm_row(&mut rng, 2)).unwrap();
    }
    t
}

fn all_snapshots() -> Vec<Snapshot> {
    let mut out = Vec::new();
    for mode in [Mode::Jl, Mode::Wishart, Mode::Exact] {
        out.push(Snapshot::Histogram(hist(mode, 0, 1.0)));
        out.push(Snapshot::Histogram(hist(mode, 30, 1.0)));
    }
    out.push(Snapshot::Histogram(hist(Mode::Jl, 5, f64::INFINITY)));
    out.push(Snapshot::Tree(tree(0)));
    out.push(Snapshot::Tree(tree(23)));
    out
}

#[test]
fn header_layout() {
    let h = hist(Mode::Wishart, 5, 1.0);
    let bytes = snapshot::to_bytes(&Snapshot::Histogram(h.clone()));
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
    assert_eq!(bytes[6], 1);
    assert_eq!(u64::from_le_bytes(bytes[7..15].try_into().unwrap()), 12);
    assert_eq!(u32::from_le_bytes(bytes[15..19].try_into().unwrap()), 3);
    // now and ell sit after r, five f64 fields and tau.
    let now_at = 19 + 4 + 5 * 8 + 8;
    assert_eq!(u64::from_le_bytes(bytes[now_at..now_at + 8].try_into().unwrap()), 5);
    let ell = u32::from_le_bytes(bytes[now_at + 8..now_at + 12].try_into().unwrap());
    assert_eq!(ell as usize, h.checkpoint_count());
}

#[test]
fn binary_and_json_round_trip_every_kind() {
    for s in all_snapshots() {
        let bytes = snapshot::to_bytes(&s);
        assert_eq!(snapshot::to_bytes(&snapshot::from_bytes(&bytes).unwrap()), bytes, "{}", s.mode_name());
        let json = snapshot::to_json(&s);
        assert_eq!(snapshot::to_bytes(&snapshot::from_json(&json).unwrap()), bytes, "{}", s.mode_name());
        let doc = SnapshotDoc::from_bytes(&bytes).unwrap();
        assert_eq!(doc, SnapshotDoc::from_snapshot(&s));
    }
}

#[test]
fn infinite_epsilon_is_spelled_out_in_json() {
    let json = snapshot::to_json(&Snapshot::Histogram(hist(Mode::Jl, 1, f64::INFINITY)));
    assert!(json.contains("\"inf\""));
}

#[test]
fn truncation_is_reported_as_corruption() {
    for s in all_snapshots() {
        let bytes = snapshot::to_bytes(&s);
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(snapshot::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(snapshot::from_bytes(&long), Err(Error::Corrupt(_))));
    }
}

#[test]
fn version_and_magic_are_checked() {
    let mut bytes = snapshot::to_bytes(&Snapshot::Histogram(hist(Mode::Exact, 3, 1.0)));
    bytes[4] = 9;
    assert!(matches!(
        snapshot::from_bytes(&bytes),
        Err(Error::VersionMismatch { found: 9, expected: VERSION })
    ));
    bytes[0] = b'X';
    assert!(matches!(snapshot::from_bytes(&bytes), Err(Error::Corrupt(_))));
    assert!(snapshot::from_json("{}").is_err());
}

#[test]
fn restored_tree_answers_identically() {
    let mut a = tree(40);
    let Snapshot::Tree(mut b) = snapshot::from_bytes(&snapshot::to_bytes(&Snapshot::Tree(a.clone()))).unwrap() else {
        panic!("expected a tree");
    };
    assert_eq!(a.query(40).unwrap(), b.query(40).unwrap());
    let mut rng = Rng::new(0, 0);
    for _ in 0..30 {
        let row = random_norm_row(&mut rng, 2);
        assert_eq!(a.ingest(&row).unwrap(), b.ingest(&row).unwrap());
        assert_eq!(a.query(a.now()).unwrap(), b.query(b.now()).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_corruption_never_panics(pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let mut bytes = snapshot::to_bytes(&Snapshot::Histogram(hist(Mode::Jl, 8, 1.0)));
        let i = pos.index(bytes.len());
        bytes[i] = byte;
        let _ = snapshot::from_bytes(&bytes);
    }
}
