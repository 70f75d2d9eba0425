//! Canonical atom ranking and canonical SMILES output.
//!
//! Ranks start from the invariant (element, degree, hydrogen count, ring
//! membership) and are refined by the sorted (neighbour rank, bond order)
//! multiset until stable. Remaining ties are broken by individualizing each
//! member of the lowest tied class in turn; the labelling whose bond table
//! is lexicographically smallest wins.

use super::{normalized, BondOrder, Element, MolGraph};

/// Hard cap on explored tie-break leaves; beyond it only the first member
/// of each tied class is tried.
const LEAF_CAP: usize = 4096;

fn bond_code(order: BondOrder) -> u32 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

struct Ranker {
    adj: Vec<Vec<(usize, u32)>>,
    labels: Vec<u32>,
}

impl Ranker {
    fn new(g: &MolGraph) -> Self {
        let n = g.atom_count();
        let mut adj = vec![Vec::new(); n];
        for b in g.bonds() {
            let code = bond_code(b.order);
            adj[b.i].push((b.j, code));
            adj[b.j].push((b.i, code));
        }
        let labels = (0..n)
            .map(|a| (g.element(a).index() as u32) << 4 | g.hydrogens(a) as u32)
            .collect();
        Ranker { adj, labels }
    }

    fn initial(&self, g: &MolGraph) -> Vec<u32> {
        let ring = g.ring_atoms();
        let keys: Vec<[u32; 4]> = (0..g.atom_count())
            .map(|a| {
                [
                    g.element(a).index() as u32,
                    self.adj[a].len() as u32,
                    g.hydrogens(a) as u32,
                    ring[a] as u32,
                ]
            })
            .collect();
        dense_ranks(&keys)
    }

    /// Splits classes by neighbourhood until the partition is stable.
    fn refine(&self, ranks: &mut Vec<u32>) -> usize {
        let n = ranks.len();
        let mut classes = count_classes(ranks);
        loop {
            if classes == n {
                return classes;
            }
            let keys: Vec<(u32, Vec<u32>)> = (0..n)
                .map(|a| {
                    let mut nb: Vec<u32> = self.adj[a]
                        .iter()
                        .map(|&(b, code)| ranks[b] << 3 | code)
                        .collect();
                    nb.sort_unstable();
                    (ranks[a], nb)
                })
                .collect();
            let next = dense_ranks(&keys);
            let next_classes = count_classes(&next);
            *ranks = next;
            if next_classes == classes {
                return classes;
            }
            classes = next_classes;
        }
    }

    fn twins(&self, u: usize, v: usize) -> bool {
        let strip = |a: usize, other: usize| {
            let mut s: Vec<(usize, u32)> = self.adj[a].iter().copied().filter(|&(b, _)| b != other).collect();
            s.sort_unstable();
            s
        };
        strip(u, v) == strip(v, u)
    }

    fn certificate(&self, ranks: &[u32]) -> Vec<u32> {
        let n = ranks.len();
        let mut by_rank = vec![0usize; n];
        for (a, &r) in ranks.iter().enumerate() {
            by_rank[r as usize] = a;
        }
        let mut cert: Vec<u32> = by_rank.iter().map(|&a| self.labels[a]).collect();
        let mut edges: Vec<(u32, u32, u32)> = Vec::new();
        for (a, list) in self.adj.iter().enumerate() {
            for &(b, code) in list {
                if a < b {
                    let (x, y) = (ranks[a].min(ranks[b]), ranks[a].max(ranks[b]));
                    edges.push((x, y, code));
                }
            }
        }
        edges.sort_unstable();
        for (x, y, c) in edges {
            cert.extend([x, y, c]);
        }
        cert
    }

    fn search(&self, mut ranks: Vec<u32>, best: &mut Option<(Vec<u32>, Vec<u32>)>, leaves: &mut usize) {
        let n = ranks.len();
        if self.refine(&mut ranks) == n {
            *leaves += 1;
            let cert = self.certificate(&ranks);
            if best.as_ref().is_none_or(|(c, _)| cert < *c) {
                *best = Some((cert, ranks));
            }
            return;
        }
        let mut counts = vec![0usize; n];
        for &r in &ranks {
            counts[r as usize] += 1;
        }
        let cell = counts.iter().position(|&c| c > 1).unwrap() as u32;
        let members: Vec<usize> = (0..n).filter(|&a| ranks[a] == cell).collect();
        let mut explored: Vec<usize> = Vec::new();
        for &v in &members {
            if !explored.is_empty() && *leaves >= LEAF_CAP {
                break;
            }
            if explored.iter().any(|&u| self.twins(u, v)) {
                continue;
            }
            explored.push(v);
            let split: Vec<u32> = ranks
                .iter()
                .enumerate()
                .map(|(a, &r)| {
                    if r > cell || (r == cell && a != v) {
                        r + 1
                    } else {
                        r
                    }
                })
                .collect();
            self.search(split, best, leaves);
        }
    }
}

fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0u32; keys.len()];
    let mut r = 0u32;
    for k in 0..idx.len() {
        if k > 0 && keys[idx[k]] != keys[idx[k - 1]] {
            r += 1;
        }
        ranks[idx[k]] = r;
    }
    ranks
}

fn count_classes(ranks: &[u32]) -> usize {
    ranks.iter().copied().max().map_or(0, |m| m as usize + 1)
}

/// A canonical numbering: atom `a` gets position `ranks[a]` in `0..n`.
///
/// Isomorphic graphs receive ranks that map onto each other.
pub fn canonical_ranks(g: &MolGraph) -> Vec<usize> {
    if g.is_empty() {
        return Vec::new();
    }
    let ranker = Ranker::new(g);
    let initial = ranker.initial(g);
    let mut best = None;
    let mut leaves = 0;
    ranker.search(initial, &mut best, &mut leaves);
    best.expect("search always reaches a leaf")
        .1
        .into_iter()
        .map(|r| r as usize)
        .collect()
}

/// Canonical SMILES: aromatic form, hydrogens implicit, independent of atom
/// numbering and of the Kekulé structure the graph was drawn in.
pub fn write_canonical_smiles(g: &MolGraph) -> String {
    let norm = normalized(g);
    if norm.is_empty() {
        return String::new();
    }
    if norm.atoms().iter().all(|a| a.element == Element::H) {
        // Lone H and H–H both describe dihydrogen.
        return "[H][H]".to_string();
    }
    let ranks = canonical_ranks(&norm);
    write_smiles_in_order(&norm, &ranks)
}

/// Canonical string of the graph exactly as stored: Kekulé bonds, explicit
/// hydrogen atoms and per-atom hydrogen counts are kept, so two graphs share
/// a key only if they are isomorphic.
pub fn exact_key(g: &MolGraph) -> String {
    if g.is_empty() {
        return String::new();
    }
    let ranks = canonical_ranks(g);
    let mut s = write_smiles_in_order(g, &ranks);
    // Aromatic atoms carry hydrogen counts the string alone may not pin.
    if g.has_aromatic_bonds() {
        let mut by_rank: Vec<usize> = (0..g.atom_count()).collect();
        by_rank.sort_by_key(|&a| ranks[a]);
        s.push('|');
        for a in by_rank {
            s.push(char::from(b'0' + g.hydrogens(a).min(9)));
        }
    }
    s
}

struct RingBond {
    opener: usize,
    closer: usize,
    order: BondOrder,
}

/// Writes a SMILES string visiting atoms by increasing `ranks`.
pub(crate) fn write_smiles_in_order(g: &MolGraph, ranks: &[usize]) -> String {
    let n = g.atom_count();
    let mut adj = g.adjacency();
    for list in &mut adj {
        list.sort_by_key(|&(b, _)| ranks[b]);
    }
    let aromatic: Vec<bool> = (0..n).map(|a| g.is_aromatic_atom(a)).collect();
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut rings: Vec<RingBond> = Vec::new();

    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&a| ranks[a]);
    let mut roots = Vec::new();
    for &s in &starts {
        if visited[s] {
            continue;
        }
        roots.push(s);
        discover(s, usize::MAX, &adj, &mut visited, &mut children, &mut rings);
    }

    let mut out = String::new();
    let mut digits_in_use: Vec<bool> = vec![false; 100];
    let mut open_digit: Vec<Option<usize>> = vec![None; rings.len()];
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        emit(
            root,
            g,
            ranks,
            &aromatic,
            &children,
            &rings,
            &mut open_digit,
            &mut digits_in_use,
            &mut out,
        );
    }
    out
}

fn discover(
    a: usize,
    parent: usize,
    adj: &[Vec<(usize, BondOrder)>],
    visited: &mut [bool],
    children: &mut [Vec<(usize, BondOrder)>],
    rings: &mut Vec<RingBond>,
) {
    visited[a] = true;
    for &(b, order) in &adj[a] {
        if b == parent {
            continue;
        }
        if visited[b] {
            let known = rings
                .iter()
                .any(|r| (r.opener == b && r.closer == a) || (r.opener == a && r.closer == b));
            if !known {
                rings.push(RingBond {
                    opener: b,
                    closer: a,
                    order,
                });
            }
        } else {
            children[a].push((b, order));
            discover(b, a, adj, visited, children, rings);
        }
    }
}

fn bond_symbol(order: BondOrder, a_arom: bool, b_arom: bool) -> &'static str {
    match order {
        BondOrder::Single if a_arom && b_arom => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn atom_symbol(g: &MolGraph, a: usize, aromatic: bool) -> String {
    let element = g.element(a);
    if element == Element::H {
        return "[H]".to_string();
    }
    if !aromatic {
        return element.symbol().to_string();
    }
    let lower = element.symbol().to_ascii_lowercase();
    // Hydrogen count the parser would infer for an unbracketed aromatic atom.
    let max = element.max_valence() as i32;
    let rem = max - g.kekule_base(a) as i32;
    let default_h = if rem >= 1 { rem - 1 } else { 0 };
    let h = g.hydrogens(a) as i32;
    if h == default_h {
        lower
    } else if h == 1 {
        format!("[{lower}H]")
    } else {
        format!("[{lower}H{h}]")
    }
}

fn push_ring_label(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

#[allow(clippy::too_many_arguments)]
fn emit(
    a: usize,
    g: &MolGraph,
    ranks: &[usize],
    aromatic: &[bool],
    children: &[Vec<(usize, BondOrder)>],
    rings: &[RingBond],
    open_digit: &mut [Option<usize>],
    digits_in_use: &mut [bool],
    out: &mut String,
) {
    out.push_str(&atom_symbol(g, a, aromatic[a]));

    let mut freed = Vec::new();
    let mut closing: Vec<usize> = (0..rings.len()).filter(|&k| rings[k].closer == a).collect();
    closing.sort_by_key(|&k| ranks[rings[k].opener]);
    for k in closing {
        let d = open_digit[k].take().expect("ring opened before it closes");
        push_ring_label(out, d);
        freed.push(d);
    }
    let mut opening: Vec<usize> = (0..rings.len()).filter(|&k| rings[k].opener == a).collect();
    opening.sort_by_key(|&k| ranks[rings[k].closer]);
    for k in opening {
        let d = (1..100)
            .find(|&d| !digits_in_use[d] && !freed.contains(&d))
            .expect("fewer than 99 open rings");
        digits_in_use[d] = true;
        open_digit[k] = Some(d);
        let r = &rings[k];
        out.push_str(bond_symbol(r.order, aromatic[r.opener], aromatic[r.closer]));
        push_ring_label(out, d);
    }
    for d in freed {
        digits_in_use[d] = false;
    }

    let kids = &children[a];
    for (k, &(b, order)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_symbol(order, aromatic[a], aromatic[b]));
        emit(b, g, ranks, aromatic, children, rings, open_digit, digits_in_use, out);
        if !last {
            out.push(')');
        }
    }
}
