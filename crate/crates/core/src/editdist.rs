//! MDP edit distance: fewest search-MDP actions turning A into B.
//!
//! Breadth-first, one layer at a time. States are deduplicated by
//! [`exact_key`], i.e. up to isomorphism of the stored Kekulé graph; the goal
//! test is canonical-SMILES equality with B. Successor generation may run
//! on the rayon pool, but each layer is merged in frontier order so the
//! result does not depend on the thread count.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::chem::{exact_key, kekulize, write_canonical_smiles, ElementCounts, MolGraph};
use crate::mdp::{enumerate_actions, MdpConfig};

pub const DEFAULT_MAX_STEPS: usize = 5;
pub const DEFAULT_MAX_STATES: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SearchResult {
    pub distance: Option<usize>,
    pub expanded_states: usize,
    pub hit_limit: bool,
}

impl SearchResult {
    fn found(distance: usize, expanded_states: usize) -> Self {
        SearchResult {
            distance: Some(distance),
            expanded_states,
            hit_limit: false,
        }
    }

    fn limit(expanded_states: usize) -> Self {
        SearchResult {
            distance: None,
            expanded_states,
            hit_limit: true,
        }
    }
}

impl std::fmt::Display for SearchResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.distance {
            Some(d) => write!(f, "{d}"),
            None => write!(f, "unreached(limit)"),
        }
    }
}

struct Goal {
    smiles: String,
    counts: ElementCounts,
    heavy: usize,
}

impl Goal {
    fn matches(&self, g: &MolGraph) -> bool {
        g.atom_type_counts() == self.counts && write_canonical_smiles(g) == self.smiles
    }
}

/// Edit distance with the default state cap.
pub fn mdp_edit_distance(a: &MolGraph, b: &MolGraph, max_steps: usize) -> SearchResult {
    mdp_edit_distance_capped(a, b, max_steps, DEFAULT_MAX_STATES)
}

/// Edit distance that gives up (`hit_limit`) after `max_states` distinct
/// states or `max_steps` layers.
pub fn mdp_edit_distance_capped(a: &MolGraph, b: &MolGraph, max_steps: usize, max_states: usize) -> SearchResult {
    let cfg = MdpConfig::search();
    let goal = Goal {
        smiles: write_canonical_smiles(b),
        counts: b.atom_type_counts(),
        heavy: b.heavy_atom_count(),
    };
    let start = kekulize(a).unwrap_or_else(|_| a.clone());
    if goal.matches(&start) {
        return SearchResult::found(0, 0);
    }
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(exact_key(&start));
    let mut frontier = vec![start];
    let mut expanded = 0usize;
    for depth in 1..=max_steps {
        // Each action adds at most one heavy atom.
        let remaining = max_steps - depth + 1;
        let layer: Vec<Vec<(String, MolGraph)>> = frontier
            .par_iter()
            .map(|s| {
                if s.heavy_atom_count() + remaining < goal.heavy {
                    return Vec::new();
                }
                enumerate_actions(s, &cfg)
                    .into_iter()
                    .map(|(_, g)| (exact_key(&g), g))
                    .collect()
            })
            .collect();
        expanded += frontier.len();
        let mut next = Vec::new();
        for (key, g) in layer.into_iter().flatten() {
            if !seen.insert(key) {
                continue;
            }
            if goal.matches(&g) {
                return SearchResult::found(depth, expanded);
            }
            if seen.len() >= max_states {
                return SearchResult::limit(expanded);
            }
            next.push(g);
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    SearchResult::limit(expanded)
}
