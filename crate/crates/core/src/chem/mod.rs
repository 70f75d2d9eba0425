//! Molecular graphs over the element set {H, C, N, O, F}.
//!
//! Hydrogens are implicit: every atom carries a hydrogen count which, for
//! atoms without aromatic bonds, always equals the atom's free valence. For
//! atoms in aromatic bonds the count is the free valence of the Kekulé form
//! and is what lets [`kekulize`] recover an alternating assignment.

mod aromatic;
mod canon;
mod smiles;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aromatic::{kekulize, perceive_aromaticity};
pub use canon::{canonical_ranks, exact_key, write_canonical_smiles};
pub use smiles::{parse_smiles, strip_stereo};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported element `{symbol}` at position {pos}")]
    UnsupportedElement { pos: usize, symbol: String },
    #[error("stereochemistry token `{token}` at position {pos}")]
    Stereo { pos: usize, token: char },
    #[error("formal charge at position {pos}")]
    Charge { pos: usize },
    #[error("isotope label at position {pos}")]
    Isotope { pos: usize },
    #[error("valence exceeded on atom {atom} ({element})")]
    Valence { atom: usize, element: Element },
    #[error("unmatched ring-closure label {label}")]
    UnmatchedRing { label: u32 },
    #[error("disconnected input (dot bond) at position {pos}")]
    Disconnected { pos: usize },
    #[error("aromatic system cannot be kekulized")]
    NotKekulizable,
    #[error("atom index {0} out of range")]
    AtomIndex(usize),
    #[error("invalid bond between atoms {0} and {1}")]
    InvalidBond(usize, usize),
    #[error("graph is not connected")]
    NotConnected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
}

impl Element {
    pub const ALL: [Element; 5] = [Element::H, Element::C, Element::N, Element::O, Element::F];

    pub fn max_valence(self) -> u8 {
        match self {
            Element::H => 1,
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::F => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    /// Position in [`Element::ALL`]; used for one-hot features and counts.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Some(match s {
            "H" => Element::H,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "F" => Element::F,
            _ => return None,
        })
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    /// Twice the bond order, so that aromatic bonds (1.5) stay integral.
    pub fn doubled(self) -> u8 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }

    /// Integer order of a Kekulé bond; `None` for aromatic bonds.
    pub fn integer(self) -> Option<u8> {
        match self {
            BondOrder::Single => Some(1),
            BondOrder::Double => Some(2),
            BondOrder::Triple => Some(3),
            BondOrder::Aromatic => None,
        }
    }

    pub fn from_integer(order: u8) -> Option<BondOrder> {
        match order {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub hydrogens: u8,
}

/// Undirected bond; `i < j` always holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, a: usize) -> usize {
        if self.i == a {
            self.j
        } else {
            self.i
        }
    }

    pub fn touches(&self, a: usize) -> bool {
        self.i == a || self.j == a
    }
}

/// Per-element atom counts in [`Element::ALL`] order, hydrogens included.
pub type ElementCounts = [u32; 5];

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
}

impl MolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Self {
        MolGraph { atoms, bonds }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn element(&self, a: usize) -> Element {
        self.atoms[a].element
    }

    pub fn hydrogens(&self, a: usize) -> u8 {
        self.atoms[a].hydrogens
    }

    /// Appends an unbonded atom saturated with implicit hydrogens.
    pub fn add_atom(&mut self, element: Element) -> usize {
        self.atoms.push(Atom {
            element,
            hydrogens: element.max_valence(),
        });
        self.atoms.len() - 1
    }

    /// Adds a Kekulé bond, consuming implicit hydrogens on both ends.
    pub fn add_bond(&mut self, i: usize, j: usize, order: BondOrder) -> Result<usize, ChemError> {
        let n = self.atoms.len();
        if i >= n {
            return Err(ChemError::AtomIndex(i));
        }
        if j >= n {
            return Err(ChemError::AtomIndex(j));
        }
        if i == j || self.bond_between(i, j).is_some() {
            return Err(ChemError::InvalidBond(i, j));
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.bonds.push(Bond { i, j, order });
        self.refresh_atom(i);
        self.refresh_atom(j);
        Ok(self.bonds.len() - 1)
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.bonds.iter().position(|b| b.i == i && b.j == j)
    }

    pub fn set_bond_order(&mut self, bond: usize, order: BondOrder) {
        self.bonds[bond].order = order;
        let Bond { i, j, .. } = self.bonds[bond];
        self.refresh_atom(i);
        self.refresh_atom(j);
    }

    pub fn remove_bond(&mut self, bond: usize) {
        let b = self.bonds.remove(bond);
        self.refresh_atom(b.i);
        self.refresh_atom(b.j);
    }

    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.bonds
            .iter()
            .filter(move |b| b.touches(a))
            .map(move |b| (b.other(a), b.order))
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.order));
            adj[b.j].push((b.i, b.order));
        }
        adj
    }

    pub fn degree(&self, a: usize) -> usize {
        self.bonds.iter().filter(|b| b.touches(a)).count()
    }

    pub fn has_aromatic_bonds(&self) -> bool {
        self.bonds.iter().any(|b| b.order == BondOrder::Aromatic)
    }

    pub fn is_aromatic_atom(&self, a: usize) -> bool {
        self.bonds
            .iter()
            .any(|b| b.touches(a) && b.order == BondOrder::Aromatic)
    }

    /// Sum of doubled bond orders at `a` (aromatic bonds contribute 3).
    pub fn doubled_valence(&self, a: usize) -> u32 {
        self.bonds
            .iter()
            .filter(|b| b.touches(a))
            .map(|b| b.order.doubled() as u32)
            .sum()
    }

    /// Remaining bonding capacity of `a`: max valence minus the bond-order sum.
    ///
    /// Meaningful on Kekulé graphs; for aromatic atoms the stored hydrogen
    /// count (the free valence of the Kekulé form) is returned.
    pub fn free_valence(&self, a: usize) -> Result<u8, ChemError> {
        if a >= self.atoms.len() {
            return Err(ChemError::AtomIndex(a));
        }
        if self.is_aromatic_atom(a) {
            return Ok(self.atoms[a].hydrogens);
        }
        let used = self.doubled_valence(a) / 2;
        Ok((self.atoms[a].element.max_valence() as u32).saturating_sub(used) as u8)
    }

    /// Bond-order sum with every aromatic bond counted as a single bond.
    pub(crate) fn kekule_base(&self, a: usize) -> u32 {
        self.bonds
            .iter()
            .filter(|b| b.touches(a))
            .map(|b| b.order.integer().unwrap_or(1) as u32)
            .sum()
    }

    /// Whether an aromatic atom still needs a double bond from its aromatic
    /// neighbours to reach full valence.
    pub(crate) fn needs_pi(&self, a: usize) -> bool {
        let max = self.atoms[a].element.max_valence() as u32;
        max > self.atoms[a].hydrogens as u32 + self.kekule_base(a)
    }

    fn refresh_atom(&mut self, a: usize) {
        if self.is_aromatic_atom(a) {
            return;
        }
        let used = self.doubled_valence(a) / 2;
        self.atoms[a].hydrogens = (self.atoms[a].element.max_valence() as u32).saturating_sub(used) as u8;
    }

    /// Recomputes implicit hydrogens on every atom without aromatic bonds.
    pub fn refresh_hydrogens(&mut self) {
        for a in 0..self.atoms.len() {
            self.refresh_atom(a);
        }
    }

    /// Element counts with implicit and explicit hydrogens both counted under H.
    pub fn atom_type_counts(&self) -> ElementCounts {
        let mut counts = [0u32; 5];
        for atom in &self.atoms {
            counts[atom.element.index()] += 1;
            counts[Element::H.index()] += atom.hydrogens as u32;
        }
        counts
    }

    /// Checks the structural invariants: index ranges, no self-loops or
    /// duplicate bonds, valence limits and connectivity.
    pub fn validate(&self) -> Result<(), ChemError> {
        let n = self.atoms.len();
        for (k, b) in self.bonds.iter().enumerate() {
            if b.i >= n || b.j >= n {
                return Err(ChemError::AtomIndex(b.i.max(b.j)));
            }
            if b.i >= b.j {
                return Err(ChemError::InvalidBond(b.i, b.j));
            }
            if self.bonds[..k].iter().any(|c| c.i == b.i && c.j == b.j) {
                return Err(ChemError::InvalidBond(b.i, b.j));
            }
        }
        for (a, atom) in self.atoms.iter().enumerate() {
            let max = atom.element.max_valence() as u32;
            let ok = if self.is_aromatic_atom(a) {
                // Kekulé-consistent: at most one pi bond still to be placed.
                let base = atom.hydrogens as u32 + self.kekule_base(a);
                base <= max && max - base <= 1
            } else {
                self.doubled_valence(a) + 2 * atom.hydrogens as u32 == 2 * max
            };
            if !ok {
                return Err(ChemError::Valence {
                    atom: a,
                    element: atom.element,
                });
            }
        }
        if !self.is_connected() {
            return Err(ChemError::NotConnected);
        }
        Ok(())
    }

    /// True for the empty graph and for any single connected component.
    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let a = comp[k];
                k += 1;
                for &(b, _) in &adj[a] {
                    if !seen[b] {
                        seen[b] = true;
                        comp.push(b);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Subgraph induced by `keep` (ascending), re-indexed in that order.
    pub fn induced_subgraph(&self, keep: &[usize]) -> MolGraph {
        let mut map = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let atoms = keep.iter().map(|&a| self.atoms[a]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| map[b.i] != usize::MAX && map[b.j] != usize::MAX)
            .map(|b| {
                let (i, j) = (map[b.i], map[b.j]);
                Bond {
                    i: i.min(j),
                    j: i.max(j),
                    order: b.order,
                }
            })
            .collect();
        let mut g = MolGraph { atoms, bonds };
        g.refresh_hydrogens();
        g
    }

    /// Relabels atoms so that old atom `a` becomes `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| {
                let (i, j) = (perm[b.i], perm[b.j]);
                Bond {
                    i: i.min(j),
                    j: i.max(j),
                    order: b.order,
                }
            })
            .collect();
        bonds.sort_by_key(|b| (b.i, b.j));
        MolGraph { atoms, bonds }
    }

    /// Folds explicit hydrogen atoms into their neighbours' implicit counts.
    ///
    /// Graphs made only of hydrogens are returned unchanged.
    pub fn without_explicit_hydrogens(&self) -> MolGraph {
        if self.atoms.iter().all(|a| a.element == Element::H)
            || self.atoms.iter().all(|a| a.element != Element::H)
        {
            return self.clone();
        }
        let mut g = self.clone();
        for b in &self.bonds {
            let (ei, ej) = (self.atoms[b.i].element, self.atoms[b.j].element);
            if ei == Element::H && ej != Element::H {
                g.atoms[b.j].hydrogens += 1;
            } else if ej == Element::H && ei != Element::H {
                g.atoms[b.i].hydrogens += 1;
            }
        }
        let keep: Vec<usize> = (0..self.atoms.len())
            .filter(|&a| self.atoms[a].element != Element::H)
            .collect();
        let mut map = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let atoms = keep.iter().map(|&a| g.atoms[a]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| map[b.i] != usize::MAX && map[b.j] != usize::MAX)
            .map(|b| Bond {
                i: map[b.i],
                j: map[b.j],
                order: b.order,
            })
            .collect();
        MolGraph { atoms, bonds }
    }

    /// Per-bond flag: true when the bond lies on at least one cycle.
    pub fn ring_bonds(&self) -> Vec<bool> {
        // A bond is a ring bond iff it is not a bridge.
        let n = self.atoms.len();
        let adj: Vec<Vec<(usize, usize)>> = {
            let mut adj = vec![Vec::new(); n];
            for (k, b) in self.bonds.iter().enumerate() {
                adj[b.i].push((b.j, k));
                adj[b.j].push((b.i, k));
            }
            adj
        };
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut in_ring = vec![true; self.bonds.len()];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // Iterative DFS: (node, parent bond, next neighbour index).
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (v, pb, ref mut next)) = stack.last_mut() {
                if *next < adj[v].len() {
                    let (w, bk) = adj[v][*next];
                    *next += 1;
                    if bk == pb {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, bk, 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(u, _, _)) = stack.last() {
                        low[u] = low[u].min(low[v]);
                        if low[v] > disc[u] {
                            in_ring[pb] = false;
                        }
                    }
                }
            }
        }
        in_ring
    }

    pub fn ring_atoms(&self) -> Vec<bool> {
        let rb = self.ring_bonds();
        let mut out = vec![false; self.atoms.len()];
        for (b, &r) in self.bonds.iter().zip(&rb) {
            if r {
                out[b.i] = true;
                out[b.j] = true;
            }
        }
        out
    }

    /// Number of bonds on a shortest path between `i` and `j`.
    pub fn shortest_path_len(&self, i: usize, j: usize) -> Option<usize> {
        self.distances_from(i)[j]
    }

    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        bfs_distances(&adj, source)
    }
}

pub(crate) fn bfs_distances(adj: &[Vec<(usize, BondOrder)>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(a) = queue.pop_front() {
        let d = dist[a].unwrap();
        for &(b, _) in &adj[a] {
            if dist[b].is_none() {
                dist[b] = Some(d + 1);
                queue.push_back(b);
            }
        }
    }
    dist
}

/// Element counts of a molecule (heavy atoms by element, hydrogens under H).
pub fn atom_type_counts(g: &MolGraph) -> ElementCounts {
    g.without_explicit_hydrogens().atom_type_counts()
}

/// Free valence of atom `a`; see [`MolGraph::free_valence`].
pub fn free_valence(g: &MolGraph, a: usize) -> Result<u8, ChemError> {
    g.free_valence(a)
}

/// Aromatic, hydrogen-suppressed form used for canonical output and fingerprints.
pub fn normalized(g: &MolGraph) -> MolGraph {
    let g = if g.has_aromatic_bonds() {
        // Perception does not depend on the Kekulé structure, so any will do.
        let identity: Vec<usize> = (0..g.atom_count()).collect();
        aromatic::kekulize_with_priority(g, &identity).unwrap_or_else(|_| g.clone())
    } else {
        g.clone()
    };
    perceive_aromaticity(&g.without_explicit_hydrogens())
}

/// Canonical-SMILES equality.
pub fn same_molecule(a: &MolGraph, b: &MolGraph) -> bool {
    write_canonical_smiles(a) == write_canonical_smiles(b)
}
