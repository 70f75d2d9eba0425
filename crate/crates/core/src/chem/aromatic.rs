//! Kekulization and aromaticity perception.
//!
//! A ring is aromatic when it is a simple 5- or 6-membered cycle, every atom
//! is sp2-consistent, and some Kekulé structure of the molecule gives it a
//! pi-electron count of 4n+2. Contributions: a ring atom whose double bond
//! lies in the ring (or in an already aromatic ring) gives 1, an exocyclic
//! double bond gives 0, and a saturated N or O lone pair gives 2. Rings are
//! re-examined until no new ring turns aromatic, so fused systems are
//! handled round by round. Quantifying over all Kekulé structures makes the
//! result independent of which structure the input happened to be drawn in.

use super::{canonical_ranks, BondOrder, ChemError, Element, MolGraph};

/// Cap on the number of Kekulé structures examined per molecule.
const MAX_STRUCTURES: usize = 256;

/// Replaces aromatic bonds with an alternating single/double assignment.
///
/// Among valid assignments the one found first when atoms and neighbours are
/// visited in canonical-rank order is returned, so the result is independent
/// of the input atom numbering.
pub fn kekulize(g: &MolGraph) -> Result<MolGraph, ChemError> {
    if !g.has_aromatic_bonds() {
        return Ok(g.clone());
    }
    let ranks = canonical_ranks(g);
    kekulize_with_priority(g, &ranks)
}

/// Kekulizes visiting atoms in increasing `priority`.
pub(crate) fn kekulize_with_priority(g: &MolGraph, priority: &[usize]) -> Result<MolGraph, ChemError> {
    let n = g.atom_count();
    let needs: Vec<bool> = (0..n).map(|a| g.is_aromatic_atom(a) && g.needs_pi(a)).collect();
    // Candidate pi bonds: aromatic bonds between two atoms that need one.
    let mut cand: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, b) in g.bonds().iter().enumerate() {
        if b.order == BondOrder::Aromatic && needs[b.i] && needs[b.j] {
            cand[b.i].push((b.j, k));
            cand[b.j].push((b.i, k));
        }
    }
    for list in &mut cand {
        list.sort_by_key(|&(other, _)| (priority[other], other));
    }
    let mut order: Vec<usize> = (0..n).filter(|&a| needs[a]).collect();
    order.sort_by_key(|&a| (priority[a], a));

    let mut mate: Vec<Option<usize>> = vec![None; n];
    let mut budget = 1_000_000usize;
    if !match_from(&order, 0, &cand, &mut mate, &mut budget) {
        return Err(ChemError::NotKekulizable);
    }
    let mut out = g.clone();
    let saved: Vec<u8> = (0..n).map(|a| g.hydrogens(a)).collect();
    for k in 0..g.bonds().len() {
        let b = g.bonds()[k];
        if b.order != BondOrder::Aromatic {
            continue;
        }
        let order = if mate[b.i] == Some(k) {
            BondOrder::Double
        } else {
            BondOrder::Single
        };
        out.set_bond_order(k, order);
    }
    out.refresh_hydrogens();
    debug_assert!((0..n).all(|a| out.hydrogens(a) == saved[a]));
    Ok(out)
}

fn match_from(
    order: &[usize],
    start: usize,
    cand: &[Vec<(usize, usize)>],
    mate: &mut [Option<usize>],
    budget: &mut usize,
) -> bool {
    let Some(pos) = (start..order.len()).find(|&p| mate[order[p]].is_none()) else {
        return true;
    };
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    let a = order[pos];
    for &(b, k) in &cand[a] {
        if mate[b].is_some() {
            continue;
        }
        mate[a] = Some(k);
        mate[b] = Some(k);
        if match_from(order, pos + 1, cand, mate, budget) {
            return true;
        }
        mate[a] = None;
        mate[b] = None;
    }
    false
}

/// Marks 5- and 6-membered rings satisfying the 4n+2 rule as aromatic.
///
/// Accepts Kekulé, aromatic or mixed input; idempotent. Inputs whose aromatic
/// bonds cannot be kekulized are returned unchanged.
pub fn perceive_aromaticity(g: &MolGraph) -> MolGraph {
    let kek = if g.has_aromatic_bonds() {
        let identity: Vec<usize> = (0..g.atom_count()).collect();
        match kekulize_with_priority(g, &identity) {
            Ok(k) => k,
            Err(_) => return g.clone(),
        }
    } else {
        g.clone()
    };
    let n = kek.atom_count();
    let adj = kek.adjacency();
    let bond_index = |a: usize, b: usize| kek.bond_between(a, b).expect("adjacent atoms share a bond");

    let mut double_count = vec![0u8; n];
    let mut has_triple = vec![false; n];
    for b in kek.bonds() {
        match b.order {
            BondOrder::Double => {
                double_count[b.i] += 1;
                double_count[b.j] += 1;
            }
            BondOrder::Triple => {
                has_triple[b.i] = true;
                has_triple[b.j] = true;
            }
            _ => {}
        }
    }
    let pi_atom: Vec<bool> = (0..n).map(|a| double_count[a] == 1 && !has_triple[a]).collect();
    let donor: Vec<bool> = (0..n)
        .map(|a| {
            double_count[a] == 0
                && !has_triple[a]
                && matches!(kek.element(a), Element::N | Element::O)
        })
        .collect();

    let rings: Vec<Vec<usize>> = simple_cycles(&adj, 6)
        .into_iter()
        .filter(|c| c.len() >= 5 && c.iter().all(|&a| pi_atom[a] || donor[a]))
        .collect();
    if rings.is_empty() {
        return kek;
    }
    let ring_bond_sets: Vec<Vec<usize>> = rings
        .iter()
        .map(|c| (0..c.len()).map(|k| bond_index(c[k], c[(k + 1) % c.len()])).collect())
        .collect();

    let structures = kekule_structures(&kek, &pi_atom);
    let mut aromatic_bond = vec![false; kek.bonds().len()];
    let mut aromatic_ring = vec![false; rings.len()];
    // Rounds are synchronous so the outcome does not depend on ring order.
    loop {
        let newly: Vec<usize> = (0..rings.len())
            .filter(|&r| !aromatic_ring[r])
            .filter(|&r| {
                let ring_bonds = &ring_bond_sets[r];
                structures.iter().any(|mate| {
                    let mut electrons = 0u32;
                    for &a in &rings[r] {
                        if donor[a] {
                            electrons += 2;
                        } else {
                            let k = mate[a].expect("pi atoms are matched in every structure");
                            if ring_bonds.contains(&k) || aromatic_bond[k] {
                                electrons += 1;
                            }
                        }
                    }
                    electrons % 4 == 2
                })
            })
            .collect();
        if newly.is_empty() {
            break;
        }
        for r in newly {
            aromatic_ring[r] = true;
            for &k in &ring_bond_sets[r] {
                aromatic_bond[k] = true;
            }
        }
    }
    if !aromatic_bond.iter().any(|&x| x) {
        return kek;
    }

    // Non-aromatic bonds take their orders from the structure that keeps the
    // most pi bonds inside aromatic rings, closest to the input.
    let current = &structures[0];
    let best = structures
        .iter()
        .rev()
        .max_by_key(|mate| {
            let inside = (0..n)
                .filter(|&a| pi_atom[a] && aromatic_bond[mate[a].unwrap()])
                .count();
            let same = (0..n).filter(|&a| mate[a] == current[a]).count();
            (inside, same)
        })
        .unwrap();
    let mut out = kek.clone();
    for k in 0..kek.bonds().len() {
        let b = kek.bonds()[k];
        let order = if aromatic_bond[k] {
            BondOrder::Aromatic
        } else if pi_atom[b.i] && pi_atom[b.j] {
            if best[b.i] == Some(k) {
                BondOrder::Double
            } else {
                BondOrder::Single
            }
        } else {
            b.order
        };
        if order != b.order {
            out.set_bond_order(k, order);
        }
    }
    // Hydrogen counts are those of the Kekulé form.
    for a in 0..n {
        debug_assert!(out.is_aromatic_atom(a) || out.hydrogens(a) == kek.hydrogens(a));
    }
    let mut atoms = out.atoms().to_vec();
    for (a, atom) in atoms.iter_mut().enumerate() {
        atom.hydrogens = kek.hydrogens(a);
    }
    MolGraph::from_parts(atoms, out.bonds().to_vec())
}

/// All perfect matchings of the movable-pi graph, the input's first.
///
/// Vertices are atoms with exactly one double bond; edges are their double
/// bonds and ring single bonds between two such atoms. Each entry maps a
/// pi atom to the index of its double bond.
fn kekule_structures(kek: &MolGraph, pi_atom: &[bool]) -> Vec<Vec<Option<usize>>> {
    let n = kek.atom_count();
    let ring_bond = kek.ring_bonds();
    let mut cand: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut current = vec![None; n];
    for (k, b) in kek.bonds().iter().enumerate() {
        if !(pi_atom[b.i] && pi_atom[b.j]) {
            if b.order == BondOrder::Double {
                // Double bond to an atom that is not a pi atom: fixed.
                if pi_atom[b.i] {
                    current[b.i] = Some(k);
                }
                if pi_atom[b.j] {
                    current[b.j] = Some(k);
                }
            }
            continue;
        }
        if b.order == BondOrder::Double {
            current[b.i] = Some(k);
            current[b.j] = Some(k);
            cand[b.i].push((b.j, k));
            cand[b.j].push((b.i, k));
        } else if ring_bond[k] {
            cand[b.i].push((b.j, k));
            cand[b.j].push((b.i, k));
        }
    }
    let mut out = vec![current.clone()];
    // Atoms whose double bond partner is not a pi atom never move.
    let free: Vec<usize> = (0..n)
        .filter(|&a| pi_atom[a] && current[a].is_some_and(|k| {
            let b = kek.bonds()[k];
            pi_atom[b.i] && pi_atom[b.j]
        }))
        .collect();
    let mut mate = current.clone();
    for &a in &free {
        mate[a] = None;
    }
    enumerate_matchings(&free, &cand, &mut mate, &mut out, &current);
    out
}

fn enumerate_matchings(
    free: &[usize],
    cand: &[Vec<(usize, usize)>],
    mate: &mut Vec<Option<usize>>,
    out: &mut Vec<Vec<Option<usize>>>,
    current: &[Option<usize>],
) {
    if out.len() >= MAX_STRUCTURES {
        return;
    }
    let Some(&a) = free.iter().find(|&&a| mate[a].is_none()) else {
        if mate.as_slice() != current {
            out.push(mate.clone());
        }
        return;
    };
    for &(b, k) in &cand[a] {
        if mate[b].is_some() || !free.contains(&b) {
            continue;
        }
        mate[a] = Some(k);
        mate[b] = Some(k);
        enumerate_matchings(free, cand, mate, out, current);
        mate[a] = None;
        mate[b] = None;
    }
}

/// Simple cycles of length 3..=max_len as atom sequences.
pub(crate) fn simple_cycles(adj: &[Vec<(usize, BondOrder)>], max_len: usize) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut cycles = Vec::new();
    let mut path = Vec::with_capacity(max_len);
    let mut on_path = vec![false; n];
    for start in 0..n {
        path.clear();
        path.push(start);
        on_path[start] = true;
        extend_cycle(adj, start, max_len, &mut path, &mut on_path, &mut cycles);
        on_path[start] = false;
    }
    cycles
}

fn extend_cycle(
    adj: &[Vec<(usize, BondOrder)>],
    start: usize,
    max_len: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    cycles: &mut Vec<Vec<usize>>,
) {
    let last = *path.last().unwrap();
    for &(next, _) in &adj[last] {
        if next == start && path.len() >= 3 && path[1] < last {
            cycles.push(path.clone());
        }
        if next > start && !on_path[next] && path.len() < max_len {
            on_path[next] = true;
            path.push(next);
            extend_cycle(adj, start, max_len, path, on_path, cycles);
            path.pop();
            on_path[next] = false;
        }
    }
}
