mod common;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlvae::chem::{parse_smiles, write_canonical_smiles};

use common::load_csv as load;

#[test]
fn every_corpus_molecule_round_trips() {
    for row in load("corpus.csv") {
        let g = parse_smiles(&row[1]).unwrap_or_else(|e| panic!("{}: {e}", row[1]));
        let s = write_canonical_smiles(&g);
        let again = write_canonical_smiles(&parse_smiles(&s).unwrap_or_else(|e| panic!("{} -> {s}: {e}", row[1])));
        assert_eq!(s, again, "input {}", row[1]);
    }
}

#[test]
fn canonical_form_separates_distinct_molecules() {
    let rows = load("corpus.csv");
    let set: HashSet<String> = rows
        .iter()
        .map(|r| write_canonical_smiles(&parse_smiles(&r[1]).unwrap()))
        .collect();
    assert_eq!(set.len(), rows.len());
}

#[test]
fn random_spellings_agree() {
    for row in load("corpus_random_smiles.csv") {
        let a = write_canonical_smiles(&parse_smiles(&row[1]).unwrap());
        let b = write_canonical_smiles(&parse_smiles(&row[2]).unwrap());
        assert_eq!(a, b, "{} vs {}", row[1], row[2]);
    }
}

#[test]
fn atom_relabeling_does_not_change_canonical_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for row in load("corpus.csv") {
        let g = parse_smiles(&row[1]).unwrap();
        let base = write_canonical_smiles(&g);
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..g.atom_count()).collect();
            perm.shuffle(&mut rng);
            assert_eq!(write_canonical_smiles(&g.permuted(&perm)), base, "{}", row[1]);
        }
    }
}
