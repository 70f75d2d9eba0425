#![allow(dead_code)]

use rand::Rng;
use rlvae::chem::{kekulize, parse_smiles, write_canonical_smiles, MolGraph};
use rlvae::mdp::{apply, enumerate_actions, legal_actions, MdpConfig};

pub fn load_csv(name: &str) -> Vec<Vec<String>> {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

pub fn load_molecules(name: &str) -> Vec<(String, MolGraph)> {
    load_csv(name)
        .into_iter()
        .map(|r| {
            let g = parse_smiles(&r[1]).unwrap();
            (r[1].clone(), g)
        })
        .collect()
}

/// Iterative-deepening depth-first search with no state deduplication.
pub fn iddfs_distance(a: &MolGraph, b: &MolGraph, max_depth: usize) -> Option<usize> {
    let goal = write_canonical_smiles(b);
    let counts = b.atom_type_counts();
    let cfg = MdpConfig::search();
    let start = kekulize(a).unwrap();
    let is_goal = |g: &MolGraph| g.atom_type_counts() == counts && write_canonical_smiles(g) == goal;
    fn dfs(s: &MolGraph, depth: usize, cfg: &MdpConfig, is_goal: &dyn Fn(&MolGraph) -> bool) -> bool {
        if is_goal(s) {
            return true;
        }
        if depth == 0 {
            return false;
        }
        enumerate_actions(s, cfg)
            .iter()
            .any(|(_, g)| dfs(g, depth - 1, cfg, is_goal))
    }
    (0..=max_depth).find(|&d| dfs(&start, d, &cfg, &is_goal))
}

/// Target reached from `a` by a random walk of `steps` search-MDP actions,
/// written back out so that it is an ordinary parsed molecule.
pub fn random_search_walk<R: Rng>(a: &MolGraph, steps: usize, rng: &mut R) -> MolGraph {
    let cfg = MdpConfig::search();
    let mut s = kekulize(a).unwrap();
    for _ in 0..steps {
        let acts = legal_actions(&s, &cfg);
        let act = acts[rng.random_range(0..acts.len())];
        s = apply(&s, act, &cfg).unwrap();
    }
    parse_smiles(&write_canonical_smiles(&s)).unwrap()
}
pub mod grad_suite;
pub mod reference;
