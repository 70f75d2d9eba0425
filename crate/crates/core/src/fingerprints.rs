//! Sparse count fingerprints, Tversky similarity and the composite reward.
//!
//! Feature identifiers come from [`hash_words`], a splitmix64 chain started
//! at [`HASH_SEED`]. Both are part of the on-disk contract: changing either
//! changes every fingerprint.
//!
//! All structural fingerprints are computed on the normalized graph (aromatic
//! form, hydrogens implicit) over heavy atoms only.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chem::{normalized, BondOrder, Element, ElementCounts, MolGraph};

pub const HASH_SEED: u64 = 0x243F_6A88_85A3_08D3;

const TAG_MORGAN_ATOM: u64 = 1;
const TAG_MORGAN_ENV: u64 = 2;
const TAG_PATH: u64 = 3;
const TAG_PAIR: u64 = 4;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Platform-independent 64-bit hash of a word sequence.
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = splitmix(HASH_SEED ^ words.len() as u64);
    for &w in words {
        h = splitmix(h ^ w);
    }
    h
}

/// Multiset of feature identifiers, stored sorted by identifier.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseFingerprint {
    entries: Vec<(u64, u32)>,
}

impl SparseFingerprint {
    pub fn from_features(features: impl IntoIterator<Item = u64>) -> Self {
        let mut ids: Vec<u64> = features.into_iter().collect();
        ids.sort_unstable();
        let mut entries: Vec<(u64, u32)> = Vec::new();
        for id in ids {
            match entries.last_mut() {
                Some((last, c)) if *last == id => *c += 1,
                _ => entries.push((id, 1)),
            }
        }
        SparseFingerprint { entries }
    }

    pub fn entries(&self) -> &[(u64, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of feature instances, counting multiplicity.
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn count(&self, id: u64) -> u32 {
        self.entries
            .binary_search_by_key(&id, |&(k, _)| k)
            .map_or(0, |p| self.entries[p].1)
    }
}

/// Size of the multiset intersection (sum of per-key minima).
fn intersection(a: &SparseFingerprint, b: &SparseFingerprint) -> u64 {
    let (mut i, mut j, mut acc) = (0, 0, 0u64);
    let (x, y) = (&a.entries, &b.entries);
    while i < x.len() && j < y.len() {
        match x[i].0.cmp(&y[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += x[i].1.min(y[j].1) as u64;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// |A∩B| / (|A∩B| + α|A\B| + β|B\A|) with multiset semantics.
///
/// Two empty fingerprints are identical (1.0); a zero denominator otherwise
/// gives 0.0.
pub fn tversky(a: &SparseFingerprint, b: &SparseFingerprint, alpha: f64, beta: f64) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let common = intersection(a, b);
    let only_a = (a.total() - common) as f64;
    let only_b = (b.total() - common) as f64;
    let common = common as f64;
    // Grouped so that swapping (a, α) with (b, β) gives the same bits.
    let denom = common + (alpha * only_a + beta * only_b);
    if denom == 0.0 {
        0.0
    } else {
        common / denom
    }
}

pub fn tanimoto(a: &SparseFingerprint, b: &SparseFingerprint) -> f64 {
    tversky(a, b, 1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub tversky_pairs: Vec<(f64, f64)>,
    pub morgan_radius: u32,
    pub path_max_len: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            tversky_pairs: vec![(0.5, 0.5), (0.95, 0.05), (0.05, 0.95)],
            morgan_radius: 3,
            path_max_len: 7,
        }
    }
}

fn bond_code(order: BondOrder) -> u64 {
    order.index() as u64 + 1
}

fn heavy_atoms(g: &MolGraph) -> Vec<usize> {
    (0..g.atom_count()).filter(|&a| g.element(a) != Element::H).collect()
}

/// Circular (ECFP-style) count fingerprint up to radius `radius`.
///
/// Environments at radius k that cover the same bond set as an environment
/// already emitted (at this or a smaller radius) are dropped.
pub fn morgan_fingerprint(g: &MolGraph, radius: u32) -> SparseFingerprint {
    morgan_of_normalized(&normalized(g), radius)
}

fn morgan_of_normalized(g: &MolGraph, radius: u32) -> SparseFingerprint {
    let atoms = heavy_atoms(g);
    if atoms.is_empty() {
        return SparseFingerprint::default();
    }
    let adj = g.adjacency();
    let ring = g.ring_atoms();
    let nb = g.bonds().len();
    let bond_of = |a: usize, b: usize| g.bond_between(a, b).expect("neighbours share a bond");

    let mut ids: Vec<u64> = (0..g.atom_count())
        .map(|a| {
            hash_words(&[
                TAG_MORGAN_ATOM,
                g.element(a).index() as u64,
                adj[a].len() as u64,
                g.hydrogens(a) as u64,
                ring[a] as u64,
                g.is_aromatic_atom(a) as u64,
            ])
        })
        .collect();
    let mut features: Vec<u64> = atoms.iter().map(|&a| ids[a]).collect();
    let mut envs: Vec<Vec<bool>> = vec![vec![false; nb]; g.atom_count()];
    let mut seen: HashSet<Vec<bool>> = HashSet::new();

    for r in 1..=radius {
        let mut next_ids = ids.clone();
        let mut next_envs = envs.clone();
        for &a in &atoms {
            let mut nbrs: Vec<(u64, u64)> = adj[a].iter().map(|&(b, o)| (bond_code(o), ids[b])).collect();
            nbrs.sort_unstable();
            let mut words = vec![TAG_MORGAN_ENV, r as u64, ids[a]];
            for (o, id) in nbrs {
                words.push(o);
                words.push(id);
            }
            next_ids[a] = hash_words(&words);
            for &(b, _) in &adj[a] {
                next_envs[a][bond_of(a, b)] = true;
                for k in 0..nb {
                    next_envs[a][k] |= envs[b][k];
                }
            }
        }
        let mut layer: Vec<(&Vec<bool>, u64)> = atoms.iter().map(|&a| (&next_envs[a], next_ids[a])).collect();
        layer.sort();
        let mut fresh = Vec::new();
        for (k, &(env, id)) in layer.iter().enumerate() {
            if k > 0 && layer[k - 1].0 == env {
                continue;
            }
            if env.iter().any(|&x| x) && !seen.contains(env) {
                features.push(id);
                fresh.push(env.clone());
            }
        }
        seen.extend(fresh);
        ids = next_ids;
        envs = next_envs;
    }
    SparseFingerprint::from_features(features)
}

/// Linear-path fingerprint: every simple path of 0..=max_len bonds.
///
/// A path is identified by its (element, aromatic flag, bond order) label
/// sequence read in the lexicographically smaller direction.
pub fn path_fingerprint(g: &MolGraph, max_len: usize) -> SparseFingerprint {
    path_of_normalized(&normalized(g), max_len)
}

fn path_of_normalized(g: &MolGraph, max_len: usize) -> SparseFingerprint {
    let adj = g.adjacency();
    let label = |a: usize| (g.element(a).index() as u64) << 1 | g.is_aromatic_atom(a) as u64;
    let mut features = Vec::new();
    let mut path = Vec::new();
    let mut on_path = vec![false; g.atom_count()];
    for start in heavy_atoms(g) {
        path.clear();
        path.push(start);
        on_path[start] = true;
        extend_path(g, &adj, &label, max_len, &mut path, &mut on_path, &mut features);
        on_path[start] = false;
    }
    SparseFingerprint::from_features(features)
}

fn extend_path(
    g: &MolGraph,
    adj: &[Vec<(usize, BondOrder)>],
    label: &dyn Fn(usize) -> u64,
    max_len: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<u64>,
) {
    let first = path[0];
    let last = *path.last().unwrap();
    // Each undirected path is emitted once, from its smaller endpoint.
    if path.len() == 1 || first < last {
        let seq = |atoms: &mut dyn Iterator<Item = usize>| {
            let atoms: Vec<usize> = atoms.collect();
            let mut words = vec![label(atoms[0])];
            for w in atoms.windows(2) {
                let order = g.bonds()[g.bond_between(w[0], w[1]).unwrap()].order;
                words.push(bond_code(order) << 8);
                words.push(label(w[1]));
            }
            words
        };
        let fwd = seq(&mut path.iter().copied());
        let rev = seq(&mut path.iter().rev().copied());
        let mut words = vec![TAG_PATH];
        words.extend(fwd.min(rev));
        out.push(hash_words(&words));
    }
    if path.len() > max_len {
        return;
    }
    for &(b, _) in &adj[last] {
        if on_path[b] || g.element(b) == Element::H {
            continue;
        }
        on_path[b] = true;
        path.push(b);
        extend_path(g, adj, label, max_len, path, on_path, out);
        path.pop();
        on_path[b] = false;
    }
}

/// Atom-pair fingerprint over unordered heavy-atom pairs.
///
/// Atom type is (element, heavy degree, pi-bond count); the pair feature adds
/// the topological distance.
pub fn atom_pair_fingerprint(g: &MolGraph) -> SparseFingerprint {
    pair_of_normalized(&normalized(g))
}

fn pair_of_normalized(g: &MolGraph) -> SparseFingerprint {
    let atoms = heavy_atoms(g);
    let adj = g.adjacency();
    let typecode = |a: usize| {
        let heavy_degree = adj[a].iter().filter(|&&(b, _)| g.element(b) != Element::H).count() as u64;
        let extra: u32 = adj[a].iter().map(|&(_, o)| o.doubled() as u32 - 2).sum();
        let pi = extra.div_ceil(2) as u64;
        (g.element(a).index() as u64) << 16 | heavy_degree << 8 | pi
    };
    let types: HashMap<usize, u64> = atoms.iter().map(|&a| (a, typecode(a))).collect();
    let mut features = Vec::new();
    for (k, &a) in atoms.iter().enumerate() {
        let dist = g.distances_from(a);
        for &b in &atoms[k + 1..] {
            let Some(d) = dist[b] else { continue };
            let (ta, tb) = (types[&a], types[&b]);
            features.push(hash_words(&[TAG_PAIR, ta.min(tb), ta.max(tb), d as u64]));
        }
    }
    SparseFingerprint::from_features(features)
}

/// Atom-count Tanimoto over the five element types, implicit H included.
pub fn atom_count_similarity(a: &MolGraph, b: &MolGraph) -> f64 {
    counts_similarity(&a.atom_type_counts(), &b.atom_type_counts())
}

fn counts_similarity(a: &ElementCounts, b: &ElementCounts) -> f64 {
    let lo: u32 = a.iter().zip(b).map(|(x, y)| *x.min(y)).sum();
    let hi: u32 = a.iter().zip(b).map(|(x, y)| *x.max(y)).sum();
    if hi == 0 {
        1.0
    } else {
        lo as f64 / hi as f64
    }
}

/// The four reward components for one (state, target) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarities {
    pub morgan: f64,
    pub path: f64,
    pub pair: f64,
    pub atom_count: f64,
}

impl Similarities {
    pub fn reward(&self) -> f64 {
        (self.morgan + self.path + self.pair + self.atom_count) / 4.0
    }
}

/// Precomputed fingerprints of one molecule, reusable across many comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct MolFingerprints {
    pub morgan: SparseFingerprint,
    pub path: SparseFingerprint,
    pub pair: SparseFingerprint,
    pub counts: ElementCounts,
}

impl MolFingerprints {
    pub fn new(g: &MolGraph, cfg: &SimilarityConfig) -> Self {
        let norm = normalized(g);
        MolFingerprints {
            morgan: morgan_of_normalized(&norm, cfg.morgan_radius),
            path: path_of_normalized(&norm, cfg.path_max_len),
            pair: pair_of_normalized(&norm),
            counts: g.atom_type_counts(),
        }
    }

    pub fn compare(&self, other: &MolFingerprints, cfg: &SimilarityConfig) -> Similarities {
        let mean = |a: &SparseFingerprint, b: &SparseFingerprint| {
            if cfg.tversky_pairs.is_empty() {
                return 0.0;
            }
            cfg.tversky_pairs.iter().map(|&(al, be)| tversky(a, b, al, be)).sum::<f64>()
                / cfg.tversky_pairs.len() as f64
        };
        Similarities {
            morgan: mean(&self.morgan, &other.morgan),
            path: mean(&self.path, &other.path),
            pair: mean(&self.pair, &other.pair),
            atom_count: counts_similarity(&self.counts, &other.counts),
        }
    }
}

pub fn similarities(s: &MolGraph, y: &MolGraph, cfg: &SimilarityConfig) -> Similarities {
    MolFingerprints::new(s, cfg).compare(&MolFingerprints::new(y, cfg), cfg)
}

/// R(s, y): mean of the Morgan, path and atom-pair Tversky averages and the
/// atom-count Tanimoto.
pub fn reward(s: &MolGraph, y: &MolGraph, cfg: &SimilarityConfig) -> f64 {
    similarities(s, y, cfg).reward()
}
