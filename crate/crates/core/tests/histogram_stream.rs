use dpmat::histogram::{checkpoint_bound, Histogram, Mode, Params};
use dpmat::linalg::SymMatrix;
use dpmat::mechanisms::{NormPolicy, PrivacyBudget};
use dpmat::oracle::{sandwich_check_with_tol, WindowBuffer};
use dpmat::par::Exec;
use dpmat::rng::Rng;
use dpmat::snapshot::{self, Snapshot};
use dpmat::synth::{random_norm_row, unit_row};
use dpmat::Error;
use proptest::prelude::*;

fn budget() -> PrivacyBudget {
    PrivacyBudget::new(1.0, 1e-4).unwrap()
}

fn bits(h: &Histogram) -> Vec<u8> {
    snapshot::to_bytes(&Snapshot::Histogram(h.clone()))
}

fn rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = Rng::labeled(seed, "stream");
    (0..n).map(|_| random_norm_row(&mut rng, d)).collect()
}

#[test]
fn equal_seeds_give_identical_histograms() {
    for mode in [Mode::Jl, Mode::Wishart, Mode::Exact] {
        let p = Params::new(mode, 20, 0.25, 2, 3, budget(), 42);
        let (mut a, mut b) = (Histogram::new(p).unwrap(), Histogram::new(p).unwrap());
        for r in rows(1, 80, 3) {
            a.ingest(&r).unwrap();
            b.ingest(&r).unwrap();
            assert_eq!(bits(&a), bits(&b), "{mode:?}");
        }
    }
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    for mode in [Mode::Jl, Mode::Wishart, Mode::Exact] {
        let p = Params::new(mode, 40, 0.25, 2, 4, budget(), 7);
        let (mut a, mut b) = (Histogram::new(p).unwrap(), Histogram::new(p).unwrap());
        a.set_exec(Exec::Sequential);
        b.set_exec(Exec::Parallel);
        for r in rows(2, 200, 4) {
            a.ingest(&r).unwrap();
            b.ingest(&r).unwrap();
        }
        assert_eq!(bits(&a), bits(&b), "{mode:?}");
    }
}

#[test]
fn scalar_unit_stream_respects_count_bound() {
    assert_eq!(checkpoint_bound(1, 0.5, 256), 47);
    // η = 0.5 is outside the accepted range; 0.375 is the largest allowed.
    let p = Params::new(Mode::Exact, 256, 0.375, 1, 1, budget(), 0);
    let mut h = Histogram::new(p).unwrap();
    let bound = checkpoint_bound(1, 0.375, 256);
    for _ in 0..1024 {
        h.ingest(&[1.0]).unwrap();
        assert!(h.checkpoint_count() <= bound);
    }
}

#[test]
fn first_ingests_keep_every_checkpoint() {
    let mut h = Histogram::new(Params::new(Mode::Jl, 10, 0.25, 2, 2, budget(), 1)).unwrap();
    assert_eq!(h.checkpoint_count(), 0);
    h.ingest(&[1.0, 0.0]).unwrap();
    assert_eq!(h.timestamps(), vec![1]);
    h.ingest(&[0.0, 1.0]).unwrap();
    assert_eq!(h.checkpoint_count(), 2);
    assert_eq!(h.current_summary().unwrap().covariance(), h.summary_covariance().unwrap());
}

#[test]
fn exact_shadow_tracks_suffix_sums() {
    let d = 3;
    let p = Params::new(Mode::Wishart, 30, 0.25, 2, d, budget(), 3).with_exact_shadow(true);
    let mut h = Histogram::new(p).unwrap();
    let stream = rows(3, 120, d);
    for (i, r) in stream.iter().enumerate() {
        h.ingest(r).unwrap();
        let now = i + 1;
        for c in h.checkpoints() {
            let mut want = SymMatrix::zeros(d);
            for row in &stream[c.t() as usize - 1..now] {
                want.add_assign(&SymMatrix::outer(row));
            }
            let got = c.exact().expect("shadow enabled");
            assert!(got.sub(&want).frobenius() <= 1e-12 * want.frobenius().max(1.0));
        }
    }
}

#[test]
fn norm_policies() {
    let p = Params::new(Mode::Exact, 4, 0.25, 1, 2, budget(), 0);
    let mut h = Histogram::new(p).unwrap();
    assert!(matches!(h.ingest(&[1.0, 1.0]), Err(Error::NormViolation { .. })));
    assert!(matches!(h.ingest(&[1.0]), Err(Error::DimensionMismatch { .. })));
    assert!(h.ingest(&[f64::NAN, 0.0]).is_err());
    assert_eq!(h.now(), 0);
    let mut c = Histogram::new(p.with_norm_policy(NormPolicy::Clip)).unwrap();
    c.ingest(&[3.0, 4.0]).unwrap();
    let s = c.summary_covariance().unwrap();
    assert!((s.trace() - 1.0).abs() < 1e-12);
}

#[test]
fn empty_histogram_has_no_summary() {
    let h = Histogram::new(Params::new(Mode::Exact, 4, 0.25, 1, 2, budget(), 0)).unwrap();
    assert!(matches!(h.current_summary(), Err(Error::Empty)));
}

#[test]
fn invalid_parameters_are_rejected() {
    for p in [
        Params::new(Mode::Exact, 0, 0.25, 1, 2, budget(), 0),
        Params::new(Mode::Exact, 4, 0.0, 1, 2, budget(), 0),
        Params::new(Mode::Exact, 4, 0.5, 1, 2, budget(), 0),
        Params::new(Mode::Exact, 4, 0.25, 0, 2, budget(), 0),
        Params::new(Mode::Exact, 4, 0.25, 1, 0, budget(), 0),
        Params::new(Mode::Exact, 4, 0.25, 1, 2, budget(), 0).with_beta(1.5),
    ] {
        assert!(Histogram::new(p).is_err(), "{p:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_sandwich_on_every_prefix(
        seed in any::<u64>(),
        d in 1usize..5,
        window in 1u64..24,
        eta in 0.05f64..0.375,
        len in 1usize..80,
    ) {
        let mut h = Histogram::new(Params::new(Mode::Exact, window, eta, d, d, budget(), seed)).unwrap();
        let mut buf = WindowBuffer::new(window as usize, d);
        let mut rng = Rng::new(seed, 0);
        for _ in 0..len {
            let row = if rng.uniform() < 0.5 { unit_row(&mut rng, d) } else { random_norm_row(&mut rng, d) };
            h.ingest(&row).unwrap();
            buf.push(&row).unwrap();
            prop_assert!(h.check_invariants().is_ok(), "{:?}", h.check_invariants());
            let a = buf.recompute_covariance();
            let s = h.summary_covariance().unwrap();
            let tol = 1e-8 * a.spectral_norm().max(1.0);
            prop_assert!(sandwich_check_with_tol(&s, &a, 1.0, 1.0 / (1.0 - eta), 0.0, 0.0, tol).unwrap());
        }
    }

    #[test]
    fn noisy_modes_keep_ordering_invariants(seed in any::<u64>(), window in 1u64..40, len in 1usize..120) {
        for mode in [Mode::Jl, Mode::Wishart] {
            let mut h = Histogram::new(Params::new(mode, window, 0.25, 2, 3, budget(), seed)).unwrap();
            let mut rng = Rng::new(seed, 1);
            for _ in 0..len {
                h.ingest(&random_norm_row(&mut rng, 3)).unwrap();
                let ts = h.timestamps();
                prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(*ts.last().unwrap() == h.now());
            }
        }
    }
}
