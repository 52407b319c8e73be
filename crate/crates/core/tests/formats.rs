use std::sync::Arc;

use knn_ner::datastore::{
    build_datastore_at, datastore_stats, load_datastore, save_datastore, Datastore, DatastoreMeta,
    STORE_FIXED_LEN,
};
use knn_ner::dump::{
    read_dump, subsample_dump, write_dump, DumpSentence, EmbeddingDump, Token, DUMP_VERSION,
};
use knn_ner::labels::{LabelVocab, TaggingScheme};
use knn_ner::prob::log_softmax;
use knn_ner::search::{load_index, save_index, ApproxIndex, ApproxIndexParams, NeighborSearch};
use knn_ner::Error;
use proptest::prelude::*;

fn vocab_strategy() -> impl Strategy<Value = LabelVocab> {
    (
        prop_oneof![
            Just(TaggingScheme::Bio),
            Just(TaggingScheme::Bmes),
            Just(TaggingScheme::Io)
        ],
        prop::collection::btree_set("[A-Z]{1,4}|[ä北]{1,2}", 1..4),
    )
        .prop_map(|(scheme, types)| {
            let types: Vec<String> = types.into_iter().collect();
            LabelVocab::for_scheme(scheme, &types).unwrap()
        })
}

fn token_strategy(dim: usize, labels: usize) -> impl Strategy<Value = Token> {
    (
        ".{0,6}",
        prop::option::weighted(0.8, 0..labels as u32),
        prop::collection::vec(
            prop_oneof![
                4 => -1e3f32..1e3,
                1 => Just(-0.0f32),
                1 => prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO,
            ],
            dim,
        ),
        prop::collection::vec(-30.0f64..30.0, labels),
    )
        .prop_map(|(word, gold, embedding, logits)| Token {
            word,
            gold,
            embedding,
            base_log_probs: log_softmax(&logits)
                .unwrap()
                .into_iter()
                .map(|l| l as f32)
                .collect(),
        })
}

fn dump_strategy() -> impl Strategy<Value = EmbeddingDump> {
    (1usize..20, vocab_strategy()).prop_flat_map(|(dim, vocab)| {
        let labels = vocab.len();
        prop::collection::vec(
            prop::collection::vec(token_strategy(dim, labels), 1..7).prop_map(DumpSentence::new),
            0..8,
        )
        .prop_map(move |sentences| EmbeddingDump::new(dim, vocab.clone(), sentences).unwrap())
    })
}

fn labeled(mut dump: EmbeddingDump) -> EmbeddingDump {
    for (i, t) in dump
        .sentences
        .iter_mut()
        .flat_map(|s| s.tokens.iter_mut())
        .enumerate()
    {
        t.gold.get_or_insert(i as u32 % 2);
    }
    dump
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dump_round_trip_is_bit_exact(dump in dump_strategy()) {
        let mut bytes = Vec::new();
        let written = write_dump(&dump, &mut bytes).unwrap();
        prop_assert_eq!(written as usize, bytes.len());
        let back = read_dump(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &dump);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.content_hash().unwrap(), dump.content_hash().unwrap());
    }

    #[test]
    fn datastore_round_trip_is_bit_exact(dump in dump_strategy(), ts in any::<u64>()) {
        prop_assume!(dump.token_count() > 0);
        let dump = labeled(dump);
        let store = build_datastore_at(&dump, ts).unwrap();
        let mut bytes = Vec::new();
        let written = save_datastore(&store, &mut bytes).unwrap();
        prop_assert_eq!(written as usize, bytes.len());
        let back = load_datastore(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);

        // row i is the i-th token, bit for bit
        prop_assert_eq!(store.len(), dump.token_count());
        for (i, t) in dump.tokens().enumerate() {
            let same = store.key(i).iter().zip(&t.embedding).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(Some(store.value(i)), t.gold);
        }
        prop_assert_eq!(store.meta().source_hash, dump.content_hash().unwrap());
    }

    #[test]
    fn subsampling_is_byte_deterministic(dump in dump_strategy(), fraction in 0.01f64..=1.0, seed in any::<u64>()) {
        prop_assume!(!dump.sentences.is_empty());
        let a = subsample_dump(&dump, fraction, seed).unwrap();
        let b = subsample_dump(&dump, fraction, seed).unwrap();
        prop_assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let expected = (fraction * dump.sentences.len() as f64 - 1e-9).ceil().max(1.0) as usize;
        prop_assert_eq!(a.sentences.len(), expected);
    }
}

fn tiny_dump() -> EmbeddingDump {
    let vocab = LabelVocab::new(["O", "B-PER", "I-PER"]).unwrap();
    let lp = log_softmax(&[0.0, 1.0, -1.0])
        .unwrap()
        .into_iter()
        .map(|v| v as f32)
        .collect::<Vec<_>>();
    let token = |g: u32, x: f32| Token {
        word: format!("w{g}"),
        gold: Some(g),
        embedding: vec![x, -x, 0.5],
        base_log_probs: lp.clone(),
    };
    EmbeddingDump::new(
        3,
        vocab,
        vec![
            DumpSentence::new(vec![token(0, 1.0), token(1, 2.0), token(0, 3.0)]),
            DumpSentence::new(vec![token(1, 4.0), token(2, 5.0)]),
        ],
    )
    .unwrap()
}

#[test]
fn version_mismatch_is_reported() {
    let mut bytes = tiny_dump().to_bytes().unwrap();
    bytes[4..8].copy_from_slice(&(DUMP_VERSION + 1).to_le_bytes());
    match read_dump(bytes.as_slice()) {
        Err(Error::VersionMismatch { offset, found, .. }) => {
            assert_eq!(offset, 4);
            assert_eq!(found, DUMP_VERSION + 1);
        }
        other => panic!("expected a version mismatch, got {other:?}"),
    }
}

#[test]
fn five_token_store_file_size() {
    let store = build_datastore_at(&tiny_dump(), 0).unwrap();
    let vocab_bytes: usize = ["O", "B-PER", "I-PER"].iter().map(|l| 4 + l.len()).sum();
    let expected = STORE_FIXED_LEN + vocab_bytes + 5 * 4 + 5 * 3 * 4;
    assert_eq!(store.to_bytes().unwrap().len(), expected);
}

#[test]
fn truncated_keys_block_names_its_offset() {
    let store = build_datastore_at(&tiny_dump(), 0).unwrap();
    let bytes = store.to_bytes().unwrap();
    let keys_at = bytes.len() - 40 - 5 * 3 * 4;
    let cut = keys_at + 7;
    match load_datastore(&bytes[..cut]) {
        Err(Error::Truncated { offset, .. }) => {
            assert!(
                offset as usize >= keys_at && offset as usize <= cut,
                "offset {offset}"
            );
        }
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn stats_match_an_independent_count() {
    let vocab = LabelVocab::new(["O", "B-A", "I-A", "B-B", "I-B"]).unwrap();
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let values: Vec<u32> = (0..1000)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 5) as u32
        })
        .collect();
    let store = Datastore::from_parts(
        vocab.clone(),
        1,
        vec![0.0; 1000],
        values.clone(),
        DatastoreMeta {
            source_hash: [0; 32],
            timestamp: 0,
        },
    )
    .unwrap();
    let stats = datastore_stats(&store);
    assert_eq!(stats.n, 1000);
    for (id, label) in vocab.labels().iter().enumerate() {
        let count = values.iter().filter(|&&v| v == id as u32).count();
        assert_eq!(stats.count(label), count);
    }
    let total: usize = stats.histogram.iter().map(|c| c.count).sum();
    assert_eq!(total, 1000);
}

#[test]
fn index_file_round_trip() {
    let dump = tiny_dump();
    let store = Arc::new(build_datastore_at(&dump, 0).unwrap());
    let index = ApproxIndex::build(store.clone(), ApproxIndexParams::default()).unwrap();
    let mut bytes = Vec::new();
    save_index(&index, &mut bytes).unwrap();
    let back = load_index(bytes.as_slice(), store.clone()).unwrap();
    let mut again = Vec::new();
    save_index(&back, &mut again).unwrap();
    assert_eq!(bytes, again);
    for t in dump.tokens() {
        assert_eq!(
            back.search(&t.embedding, 2).unwrap(),
            index.search(&t.embedding, 2).unwrap()
        );
    }

    let mut bad = bytes.clone();
    bad[0] = b'Z';
    assert!(matches!(
        load_index(bad.as_slice(), store.clone()),
        Err(Error::BadMagic { .. })
    ));
    assert!(matches!(
        load_index(&bytes[..bytes.len() - 2], store),
        Err(Error::Truncated { .. })
    ));
}
