mod common;

use std::sync::{Arc, LazyLock};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlvae::chem::{free_valence, kekulize, perceive_aromaticity, write_canonical_smiles, MolGraph};
use rlvae::data::{ingest_reader, IngestOptions};
use rlvae::editdist::mdp_edit_distance_capped;
use rlvae::experiments::cosine_distance;
use rlvae::fingerprints::{similarities, tanimoto, tversky, morgan_fingerprint, SimilarityConfig};
use rlvae::mdp::{apply, legal_actions, Action, MdpConfig, Transition};
use rlvae::model::{kl_divergence, Model, ModelConfig, NodeOrder};
use rlvae::nn::{huber, ExpSchedule};
use rlvae::training::{balance_weights, ReplayBuffer, ReplayEntry};

static CORPUS: LazyLock<Vec<MolGraph>> =
    LazyLock::new(|| common::load_molecules("corpus.csv").into_iter().map(|(_, g)| g).collect());

static SMALL: LazyLock<Vec<MolGraph>> = LazyLock::new(|| {
    common::load_molecules("small_molecules.csv")
        .into_iter()
        .map(|(_, g)| g)
        .filter(|g| g.heavy_atom_count() <= 4)
        .collect()
});

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn corpus_index() -> impl Strategy<Value = usize> {
    0..CORPUS.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn canonical_form_ignores_atom_order(k in corpus_index(), seed in any::<u64>()) {
        let g = &CORPUS[k];
        let p = g.permuted(&permutation(g.atom_count(), seed));
        prop_assert_eq!(write_canonical_smiles(&p), write_canonical_smiles(g));
    }

    #[test]
    fn kekulize_then_perceive_restores(k in corpus_index()) {
        let g = &CORPUS[k];
        let back = perceive_aromaticity(&kekulize(g).unwrap());
        prop_assert_eq!(write_canonical_smiles(&back), write_canonical_smiles(g));
    }

    #[test]
    fn free_valence_is_never_negative(k in corpus_index()) {
        let g = &CORPUS[k];
        for a in 0..g.atom_count() {
            prop_assert!(free_valence(g, a).is_ok());
        }
    }

    #[test]
    fn similarities_ignore_atom_order(a in corpus_index(), b in corpus_index(), seed in any::<u64>()) {
        let cfg = SimilarityConfig::default();
        let (x, y) = (&CORPUS[a], &CORPUS[b]);
        let px = x.permuted(&permutation(x.atom_count(), seed));
        let py = y.permuted(&permutation(y.atom_count(), seed ^ 1));
        prop_assert_eq!(similarities(x, y, &cfg), similarities(&px, &py, &cfg));
    }

    #[test]
    fn tversky_swaps_with_its_weights(a in corpus_index(), b in corpus_index(), al in 0.0f64..1.0, be in 0.0f64..1.0) {
        let (x, y) = (morgan_fingerprint(&CORPUS[a], 3), morgan_fingerprint(&CORPUS[b], 3));
        prop_assert_eq!(tversky(&x, &y, al, be), tversky(&y, &x, be, al));
        prop_assert!(tanimoto(&x, &y) <= tversky(&x, &y, 0.5, 0.5) + 1e-15);
    }

    #[test]
    fn full_reward_iff_every_component_is_one(a in corpus_index(), b in corpus_index()) {
        let cfg = SimilarityConfig::default();
        for (x, y) in [(&CORPUS[a], &CORPUS[b]), (&CORPUS[a], &CORPUS[a])] {
            let s = similarities(x, y, &cfg);
            let all = s.morgan == 1.0 && s.path == 1.0 && s.pair == 1.0 && s.atom_count == 1.0;
            prop_assert_eq!(s.reward() == 1.0, all);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn decoder_rollouts_stay_valid_and_grow(seed in any::<u64>()) {
        let cfg = MdpConfig::decoder();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = MolGraph::new();
        for _ in 0..cfg.max_steps {
            let acts = legal_actions(&s, &cfg);
            prop_assert!(!acts.is_empty());
            let next = apply(&s, acts[rng.random_range(0..acts.len())], &cfg).unwrap();
            prop_assert!(next.validate().is_ok() && next.is_connected());
            prop_assert!(next.heavy_atom_count() >= s.heavy_atom_count());
            s = next;
        }
    }

    #[test]
    fn decoder_actions_are_search_actions(seed in any::<u64>(), steps in 0usize..12) {
        let (dec, search) = (MdpConfig::decoder(), MdpConfig::search());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = MolGraph::new();
        for _ in 0..steps {
            let acts = legal_actions(&s, &dec);
            s = apply(&s, acts[rng.random_range(0..acts.len())], &dec).unwrap();
        }
        let d = legal_actions(&s, &dec);
        prop_assert_eq!(&d, &legal_actions(&s, &dec));
        let wide = legal_actions(&s, &search);
        for a in d.into_iter().filter(|&a| a != Action::NoOp) {
            prop_assert!(wide.contains(&a), "{a} missing from the search actions");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edit_distance_triangle_inequality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = SMALL[rng.random_range(0..SMALL.len())].clone();
        let c = common::random_search_walk(&a, 1, &mut rng);
        let b = common::random_search_walk(&c, 1, &mut rng);
        let d = |x: &MolGraph, y: &MolGraph| mdp_edit_distance_capped(x, y, 3, 200_000).distance;
        if let (Some(ab), Some(ac), Some(cb)) = (d(&a, &b), d(&a, &c), d(&c, &b)) {
            prop_assert!(ab <= ac + cb);
        }
    }
}

proptest! {
    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-5.0f32..5.0, 1..16), ls in prop::collection::vec(-3.0f32..3.0, 16)) {
        let ls = &ls[..mu.len()];
        prop_assert!(kl_divergence(&mu, ls) >= -1e-9);
        let zero = vec![0.0f32; mu.len()];
        prop_assert_eq!(kl_divergence(&zero, &zero), 0.0);
    }

    #[test]
    fn huber_is_even_and_bounded_by_square(x in -10.0f32..10.0, delta in 0.1f32..3.0) {
        prop_assert_eq!(huber(x, delta), huber(-x, delta));
        prop_assert!(huber(x, delta) <= 0.5 * x * x + 1e-6);
        prop_assert!(huber(x, delta) >= 0.0);
    }

    #[test]
    fn schedules_never_increase(a in 0u64..1_000_000, b in 0u64..1_000_000) {
        let lr = ExpSchedule { initial: 1e-5, rate: 0.99, interval: 100_000.0 };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr.value(hi) <= lr.value(lo));
    }

    #[test]
    fn balanced_weights_sum_to_batch(mask in prop::collection::vec(any::<bool>(), 1..300)) {
        let w = balance_weights(&mask);
        let sum: f64 = w.iter().map(|&x| x as f64).sum();
        let both = mask.iter().any(|&t| t) && mask.iter().any(|&t| !t);
        if both {
            prop_assert!((sum - mask.len() as f64).abs() < 1e-3 * mask.len() as f64 / 128.0);
            let t: f64 = mask.iter().zip(&w).filter(|(m, _)| **m).map(|(_, &x)| x as f64).sum();
            prop_assert!((t - sum / 2.0).abs() < 1e-3);
        } else {
            prop_assert!(w.iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn buffer_is_bounded_fifo(cap in 1usize..64, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap);
        let eta: Arc<[f32]> = vec![0.0].into();
        for k in 0..pushes {
            buf.push(ReplayEntry {
                transition: Transition { state: MolGraph::new(), action: Action::NoOp, reward: 0.0, t: 0, terminal: false },
                target: k,
                eta: eta.clone(),
            });
            prop_assert!(buf.len() <= cap);
        }
        let kept: Vec<usize> = buf.iter().map(|e| e.target).collect();
        let want: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
        prop_assert_eq!(kept, want);
    }

    #[test]
    fn cosine_distance_is_bounded(a in prop::collection::vec(-3.0f32..3.0, 8), b in prop::collection::vec(-3.0f32..3.0, 8)) {
        let d = cosine_distance(&a, &b);
        prop_assert!((-1e-9..=2.0 + 1e-9).contains(&d));
        if a.iter().any(|&x| x != 0.0) {
            prop_assert!(cosine_distance(&a, &a).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ingestion_is_seeded_and_fold_disjoint(seed in any::<u64>(), other in any::<u64>(), start in 0usize..1500) {
        let text: String = common::load_csv("small_molecules.csv")
            .iter()
            .skip(start)
            .take(120)
            .map(|r| format!("{}\n", r[1]))
            .collect();
        let opts = |s| IngestOptions { seed: s, ..IngestOptions::default() };
        let a = ingest_reader(text.as_bytes(), &opts(seed)).unwrap();
        prop_assert_eq!(&a, &ingest_reader(text.as_bytes(), &opts(seed)).unwrap());
        let mut seen = std::collections::HashMap::new();
        for r in &a.records {
            prop_assert!(seen.insert(r.canonical.clone(), r.fold).is_none());
        }
        let b = ingest_reader(text.as_bytes(), &opts(other)).unwrap();
        let mut x: Vec<_> = a.records.iter().map(|r| (r.id.clone(), r.canonical.clone())).collect();
        let mut y: Vec<_> = b.records.iter().map(|r| (r.id.clone(), r.canonical.clone())).collect();
        x.sort();
        y.sort();
        prop_assert_eq!(x, y);
        let sizes = |d: &rlvae::data::Dataset| (0..10u8).map(|f| d.records.iter().filter(|r| r.fold == f).count()).collect::<Vec<_>>();
        prop_assert_eq!(sizes(&a), sizes(&b));
    }

    #[test]
    fn readout_is_permutation_invariant(k in corpus_index(), seed in any::<u64>()) {
        let cfg = ModelConfig { hidden_dim: 8, latent_dim: 4, state_dim: 4, value_hidden: 4, ..ModelConfig::default() };
        let model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let g = &CORPUS[k];
        let p = g.permuted(&permutation(g.atom_count(), seed));
        prop_assert_eq!(model.encode_target(g), model.encode_target(&p));
        prop_assert_eq!(model.encode_states(&[g], NodeOrder::Canonical), model.encode_states(&[&p], NodeOrder::Canonical));
    }
}

/// Pearson chi-square over 50 entries and 100 000 draws; the 0.999
/// quantile with 49 degrees of freedom is about 85.4.
#[test]
fn replay_sampling_is_uniform() {
    let n = 50;
    let mut buf = ReplayBuffer::new(n);
    let eta: Arc<[f32]> = vec![0.0].into();
    for k in 0..n {
        buf.push(ReplayEntry {
            transition: Transition { state: MolGraph::new(), action: Action::NoOp, reward: 0.0, t: 0, terminal: false },
            target: k,
            eta: eta.clone(),
        });
    }
    let draws = 100_000;
    let mut counts = vec![0usize; n];
    for i in buf.sample_indices(draws, &mut ChaCha8Rng::seed_from_u64(17)) {
        counts[i] += 1;
    }
    let expected = draws as f64 / n as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 85.4, "chi-square {chi2}");
}
