use std::sync::Arc;

use knn_ner::datastore::{Datastore, DatastoreMeta};
use knn_ner::labels::LabelVocab;
use knn_ner::search::{
    brute_force_oracle, l2_distance, measure_recall, search_exact, search_exact_batch, ApproxIndex,
    ApproxIndexParams, NeighborSearch,
};
use knn_ner::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store_from(keys: Vec<f32>, dim: usize) -> Datastore {
    let n = keys.len() / dim;
    Datastore::from_parts(
        LabelVocab::new(["O", "B-X", "I-X"]).unwrap(),
        dim,
        keys,
        (0..n as u32).map(|i| i % 3).collect(),
        DatastoreMeta {
            source_hash: [0; 32],
            timestamp: 0,
        },
    )
    .unwrap()
}

fn seeded_store(n: usize, dim: usize, seed: u64) -> Datastore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store_from(
        (0..n * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect(),
        dim,
    )
}

/// Keys on a coarse grid so that ties are common.
fn grid_store() -> impl Strategy<Value = (Datastore, Vec<f32>, usize)> {
    (1usize..6, 1usize..200).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec((-3i8..=3).prop_map(|v| f32::from(v) * 0.5), n * dim),
            prop::collection::vec((-3i8..=3).prop_map(|v| f32::from(v) * 0.5), dim),
            1usize..40,
        )
            .prop_map(move |(keys, query, k)| (store_from(keys, dim), query, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_search_equals_oracle((store, query, k) in grid_store()) {
        let got = search_exact(&store, &query, k).unwrap();
        let truth = brute_force_oracle(&store, &query, k).unwrap();
        prop_assert_eq!(got.indices(), truth.indices());
        for (a, b) in got.entries().iter().zip(truth.entries()) {
            prop_assert!((a.distance - b.distance).abs() <= 1e-9);
        }
        prop_assert_eq!(got.len(), k.min(store.len()));
    }

    #[test]
    fn nothing_outside_the_result_is_closer((store, query, k) in grid_store()) {
        let got = search_exact(&store, &query, k).unwrap();
        let d = got.distances();
        prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        let last = *d.last().unwrap();
        let kept = got.indices();
        for i in (0..store.len()).filter(|i| !kept.contains(i)) {
            prop_assert!(l2_distance(&query, store.key(i)).unwrap() >= last);
        }
    }

    #[test]
    fn squared_and_plain_distance_rank_alike(
        pairs in prop::collection::vec((prop::collection::vec(-5.0f32..5.0, 4), prop::collection::vec(-5.0f32..5.0, 4)), 2..30)
    ) {
        let d: Vec<f64> = pairs.iter().map(|(a, b)| l2_distance(a, b).unwrap()).collect();
        let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
        let mut by_d: Vec<usize> = (0..d.len()).collect();
        let mut by_sq = by_d.clone();
        by_d.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        by_sq.sort_by(|&a, &b| sq[a].total_cmp(&sq[b]).then(a.cmp(&b)));
        prop_assert_eq!(by_d, by_sq);
    }
}

#[test]
fn seeded_thousand_entry_store_matches_oracle() {
    let store = seeded_store(1000, 24, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let q: Vec<f32> = (0..24).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        assert_eq!(
            search_exact(&store, &q, 16).unwrap(),
            brute_force_oracle(&store, &q, 16).unwrap()
        );
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let store = seeded_store(3000, 16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let queries: Vec<Vec<f32>> = (0..64)
        .map(|_| (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let refs: Vec<&[f32]> = queries.iter().map(Vec::as_slice).collect();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| search_exact_batch(&store, &refs, 10).unwrap())
    };
    let single = run(1);
    assert_eq!(single, run(4));
    for (q, got) in refs.iter().zip(&single) {
        assert_eq!(got, &search_exact(&store, q, 10).unwrap());
    }
}

#[test]
fn dimension_mismatch_is_invalid_input() {
    let store = seeded_store(10, 4, 5);
    assert!(matches!(
        search_exact(&store, &[0.0; 3], 1),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        l2_distance(&[0.0; 3], &[0.0; 4]),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn approx_equals_exact_when_k_covers_the_store() {
    let store = Arc::new(seeded_store(40, 8, 6));
    let index = ApproxIndex::build(store.clone(), ApproxIndexParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        assert_eq!(
            index.search(&q, 40).unwrap(),
            search_exact(&store, &q, 40).unwrap()
        );
        assert_eq!(
            index.search(&q, 100).unwrap(),
            search_exact(&store, &q, 100).unwrap()
        );
    }
}

#[test]
fn stored_keys_are_found_by_the_approx_index() {
    let store = Arc::new(seeded_store(4000, 16, 8));
    let index = ApproxIndex::build(store.clone(), ApproxIndexParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let i = rng.random_range(0..store.len());
        let got = index.search(store.key(i), 8).unwrap();
        assert!(got.indices().contains(&i), "entry {i} missing");
        assert_eq!(got.entries()[0].distance, 0.0);
    }
}

#[test]
fn approx_distances_are_exact() {
    let store = Arc::new(seeded_store(2000, 12, 10));
    let index = ApproxIndex::build(store.clone(), ApproxIndexParams::default()).unwrap();
    let q = vec![0.1f32; 12];
    let exact = search_exact(&store, &q, store.len()).unwrap();
    for e in index.search(&q, 32).unwrap().entries() {
        let same = exact.entries().iter().find(|x| x.index == e.index).unwrap();
        assert_eq!(e.distance.to_bits(), same.distance.to_bits());
        assert!((e.distance - l2_distance(&q, store.key(e.index)).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn degraded_index_recalls_less_than_tuned() {
    let store = Arc::new(seeded_store(3000, 16, 11));
    let tuned = ApproxIndex::build(store.clone(), ApproxIndexParams::default()).unwrap();
    let mut degraded = ApproxIndex::build(
        store.clone(),
        ApproxIndexParams {
            degree: 2,
            construction_beam: 2,
            search_beam: 1,
            target_recall: 1e-3,
            ..Default::default()
        },
    )
    .unwrap();
    degraded.set_search_beam(1);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let queries: Vec<Vec<f32>> = (0..100)
        .map(|_| (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let good = measure_recall(&tuned, &store, &queries, 10).unwrap();
    let bad = measure_recall(&degraded, &store, &queries, 10).unwrap();
    assert!(good >= 0.99, "tuned recall {good}");
    assert!(bad < good, "degraded {bad} vs tuned {good}");
    assert_eq!(measure_recall(&*store, &store, &queries, 10).unwrap(), 1.0);
    assert_eq!(
        measure_recall(&degraded, &store, &queries, 3000).unwrap(),
        1.0
    );
}

#[test]
fn unreachable_recall_target_is_reported() {
    // Two tight, far-apart clusters joined by a sparse graph: the search
    // cannot cross between them, so escalation never reaches the target.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut keys = Vec::new();
    for c in 0..2 {
        for _ in 0..300 {
            keys.push(c as f32 * 1e4 + rng.random_range(-1.0f32..1.0));
            keys.push(rng.random_range(-1.0f32..1.0));
        }
    }
    let store = Arc::new(store_from(keys, 2));
    let result = ApproxIndex::build(
        store,
        ApproxIndexParams {
            degree: 2,
            construction_beam: 2,
            search_beam: 1,
            target_recall: 1.0,
            calibration_queries: 50,
            calibration_k: 300,
            seed: 1,
        },
    );
    match result {
        Err(Error::RecallFailure { measured, target }) => {
            assert!(measured < target);
        }
        Ok(index) => panic!(
            "expected a recall failure, calibrated at {}",
            index.calibrated_recall()
        ),
        Err(e) => panic!("unexpected error {e}"),
    }
}
