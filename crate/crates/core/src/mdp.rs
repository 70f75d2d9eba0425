//! Molecule-editing MDPs.
//!
//! The decoder variant only grows a molecule: it adds an atom bonded to an
//! existing one, or closes a ring with a single or double bond. The search
//! variant used for edit distances also demotes, removes and promotes bonds,
//! drops the ring restrictions and has no no-op.
//!
//! States are Kekulé graphs. A transition stores the state reached *after*
//! its action; that is the state the value function scores.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{kekulize, BondOrder, ChemError, Element, MolGraph};

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: Action, reason: String },
    #[error("target needs {needed} steps but episodes have {limit}")]
    TooManySteps { needed: usize, limit: usize },
    #[error("target unreachable under decoder rules: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Chem(#[from] ChemError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpVariant {
    Decoder,
    Search,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpConfig {
    pub variant: MdpVariant,
    pub max_steps: usize,
    /// Inclusive bounds on the size of a ring closed by `add_bond`.
    pub ring_size_range: Option<(usize, usize)>,
    pub allow_no_op: bool,
    /// Optional cap on heavy atoms; `add_atom` of a heavy element is
    /// withheld once the state holds this many.
    #[serde(default)]
    pub max_heavy_atoms: Option<usize>,
}

impl MdpConfig {
    pub fn decoder() -> Self {
        MdpConfig {
            variant: MdpVariant::Decoder,
            max_steps: 20,
            ring_size_range: Some((3, 6)),
            allow_no_op: true,
            max_heavy_atoms: None,
        }
    }

    pub fn search() -> Self {
        MdpConfig {
            variant: MdpVariant::Search,
            max_steps: 20,
            ring_size_range: None,
            allow_no_op: false,
            max_heavy_atoms: None,
        }
    }
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self::decoder()
    }
}

/// One graph edit. The derived ordering is the canonical action order used
/// for tie-breaking: kind, then indices, then element, then order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    NoOp,
    AddAtom {
        attach_to: Option<usize>,
        element: Element,
        order: u8,
    },
    AddBond {
        i: usize,
        j: usize,
        order: u8,
    },
    /// Lowers a bond order by one, deleting single bonds. When a deletion
    /// splits the molecule, `keep` names an endpoint whose fragment survives.
    RemoveOrDemoteBond {
        i: usize,
        j: usize,
        keep: Option<usize>,
    },
    PromoteBond {
        i: usize,
        j: usize,
    },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Action::NoOp => write!(f, "no_op"),
            Action::AddAtom {
                attach_to: None,
                element,
                ..
            } => write!(f, "add_atom({element})"),
            Action::AddAtom {
                attach_to: Some(a),
                element,
                order,
            } => write!(f, "add_atom({element};{a};{order})"),
            Action::AddBond { i, j, order } => write!(f, "add_bond({i};{j};{order})"),
            Action::RemoveOrDemoteBond { i, j, keep: None } => write!(f, "remove_or_demote({i};{j})"),
            Action::RemoveOrDemoteBond { i, j, keep: Some(k) } => {
                write!(f, "remove_or_demote({i};{j};keep={k})")
            }
            Action::PromoteBond { i, j } => write!(f, "promote({i};{j})"),
        }
    }
}

/// Per-state facts shared by every candidate action.
struct StateInfo {
    free: Vec<u8>,
    in_ring: Vec<bool>,
    heavy: usize,
}

impl StateInfo {
    fn new(s: &MolGraph) -> Self {
        StateInfo {
            free: (0..s.atom_count()).map(|a| s.free_valence(a).unwrap_or(0)).collect(),
            in_ring: s.ring_atoms(),
            heavy: s.heavy_atom_count(),
        }
    }
}

fn illegal(action: Action, reason: impl Into<String>) -> MdpError {
    MdpError::IllegalAction {
        action,
        reason: reason.into(),
    }
}

fn successor(s: &MolGraph, info: &StateInfo, action: Action, cfg: &MdpConfig) -> Result<MolGraph, MdpError> {
    let n = s.atom_count();
    let search = cfg.variant == MdpVariant::Search;
    let check_index = |a: usize| {
        if a < n {
            Ok(())
        } else {
            Err(illegal(action, format!("atom {a} does not exist")))
        }
    };
    match action {
        Action::NoOp => {
            if !cfg.allow_no_op {
                return Err(illegal(action, "no_op is disabled"));
            }
            Ok(s.clone())
        }
        Action::AddAtom {
            attach_to,
            element,
            order,
        } => {
            if element != Element::H && cfg.max_heavy_atoms.is_some_and(|cap| info.heavy >= cap) {
                return Err(illegal(action, "heavy-atom cap reached"));
            }
            match attach_to {
                None => {
                    if n != 0 {
                        return Err(illegal(action, "unattached atoms only start an empty graph"));
                    }
                    let mut g = s.clone();
                    g.add_atom(element);
                    Ok(g)
                }
                Some(a) => {
                    check_index(a)?;
                    if order == 0 || order > 3 {
                        return Err(illegal(action, "bond order must be 1, 2 or 3"));
                    }
                    if order > info.free[a] || order > element.max_valence() {
                        return Err(illegal(action, "insufficient free valence"));
                    }
                    let mut g = s.clone();
                    let new = g.add_atom(element);
                    g.add_bond(a, new, BondOrder::from_integer(order).unwrap())?;
                    Ok(g)
                }
            }
        }
        Action::AddBond { i, j, order } => {
            check_index(i)?;
            check_index(j)?;
            if i >= j {
                return Err(illegal(action, "bond endpoints must satisfy i < j"));
            }
            if order == 0 || order > 2 {
                return Err(illegal(action, "new bonds between existing atoms are single or double"));
            }
            if s.bond_between(i, j).is_some() {
                return Err(illegal(action, "atoms already bonded"));
            }
            if order > info.free[i] || order > info.free[j] {
                return Err(illegal(action, "insufficient free valence"));
            }
            if !search {
                if info.in_ring[i] && info.in_ring[j] {
                    return Err(illegal(action, "both atoms already in rings"));
                }
                if let Some((lo, hi)) = cfg.ring_size_range {
                    let size = s.shortest_path_len(i, j).map(|d| d + 1);
                    if !size.is_some_and(|sz| (lo..=hi).contains(&sz)) {
                        return Err(illegal(action, "ring size out of range"));
                    }
                }
            }
            let mut g = s.clone();
            g.add_bond(i, j, BondOrder::from_integer(order).unwrap())?;
            Ok(g)
        }
        Action::RemoveOrDemoteBond { i, j, keep } => {
            if !search {
                return Err(illegal(action, "bonds cannot be removed or demoted"));
            }
            check_index(i)?;
            check_index(j)?;
            let Some(k) = s.bond_between(i, j) else {
                return Err(illegal(action, "no such bond"));
            };
            let order = s.bonds()[k].order;
            let mut g = s.clone();
            match order {
                BondOrder::Double => g.set_bond_order(k, BondOrder::Single),
                BondOrder::Triple => g.set_bond_order(k, BondOrder::Double),
                BondOrder::Aromatic => return Err(illegal(action, "state is not kekulized")),
                BondOrder::Single => g.remove_bond(k),
            }
            let parts = g.components();
            match (parts.len(), keep) {
                (1, None) => Ok(g),
                (1, Some(_)) => Err(illegal(action, "bond removal does not split the molecule")),
                (_, None) => Err(illegal(action, "split molecule needs a fragment choice")),
                (_, Some(a)) => {
                    if a != i && a != j {
                        return Err(illegal(action, "kept fragment must contain an endpoint"));
                    }
                    let part = parts.iter().find(|p| p.contains(&a)).unwrap();
                    Ok(g.induced_subgraph(part))
                }
            }
        }
        Action::PromoteBond { i, j } => {
            if !search {
                return Err(illegal(action, "bonds cannot be promoted"));
            }
            check_index(i)?;
            check_index(j)?;
            let Some(k) = s.bond_between(i, j) else {
                return Err(illegal(action, "no such bond"));
            };
            let next = match s.bonds()[k].order {
                BondOrder::Single => BondOrder::Double,
                BondOrder::Double => BondOrder::Triple,
                _ => return Err(illegal(action, "bond cannot be promoted")),
            };
            if info.free[i] == 0 || info.free[j] == 0 {
                return Err(illegal(action, "insufficient free valence"));
            }
            let mut g = s.clone();
            g.set_bond_order(k, next);
            Ok(g)
        }
    }
}

fn candidates(s: &MolGraph, info: &StateInfo, cfg: &MdpConfig) -> Vec<Action> {
    let n = s.atom_count();
    let mut out = Vec::new();
    if cfg.allow_no_op {
        out.push(Action::NoOp);
    }
    if n == 0 {
        for element in Element::ALL {
            out.push(Action::AddAtom {
                attach_to: None,
                element,
                order: 0,
            });
        }
    }
    for a in 0..n {
        for element in Element::ALL {
            for order in 1..=3u8 {
                if order <= info.free[a] && order <= element.max_valence() {
                    out.push(Action::AddAtom {
                        attach_to: Some(a),
                        element,
                        order,
                    });
                }
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if s.bond_between(i, j).is_some() {
                continue;
            }
            for order in 1..=2u8 {
                if order <= info.free[i] && order <= info.free[j] {
                    out.push(Action::AddBond { i, j, order });
                }
            }
        }
    }
    if cfg.variant == MdpVariant::Search {
        let splits = {
            let mut v = vec![false; s.bonds().len()];
            let ring = s.ring_bonds();
            for (k, b) in s.bonds().iter().enumerate() {
                v[k] = b.order == BondOrder::Single && !ring[k];
            }
            v
        };
        for (k, b) in s.bonds().iter().enumerate() {
            if splits[k] {
                out.push(Action::RemoveOrDemoteBond {
                    i: b.i,
                    j: b.j,
                    keep: Some(b.i),
                });
                out.push(Action::RemoveOrDemoteBond {
                    i: b.i,
                    j: b.j,
                    keep: Some(b.j),
                });
            } else {
                out.push(Action::RemoveOrDemoteBond { i: b.i, j: b.j, keep: None });
            }
            out.push(Action::PromoteBond { i: b.i, j: b.j });
        }
    }
    out.sort();
    out
}

fn prepare(s: &MolGraph, cfg: &MdpConfig) -> MolGraph {
    if cfg.variant == MdpVariant::Search && s.has_aromatic_bonds() {
        kekulize(s).unwrap_or_else(|_| s.clone())
    } else {
        s.clone()
    }
}

/// Legal actions of `s` in canonical order, without building successors.
pub fn legal_actions(s: &MolGraph, cfg: &MdpConfig) -> Vec<Action> {
    let s = prepare(s, cfg);
    let info = StateInfo::new(&s);
    candidates(&s, &info, cfg)
        .into_iter()
        .filter(|&a| successor(&s, &info, a, cfg).is_ok())
        .collect()
}

/// Every legal action paired with its successor, in canonical action order.
pub fn enumerate_actions(s: &MolGraph, cfg: &MdpConfig) -> Vec<(Action, MolGraph)> {
    let s = prepare(s, cfg);
    let info = StateInfo::new(&s);
    candidates(&s, &info, cfg)
        .into_iter()
        .filter_map(|a| successor(&s, &info, a, cfg).ok().map(|g| (a, g)))
        .collect()
}

/// Applies one action, rejecting it with a reason if it is not legal.
pub fn apply(s: &MolGraph, action: Action, cfg: &MdpConfig) -> Result<MolGraph, MdpError> {
    let s = prepare(s, cfg);
    let info = StateInfo::new(&s);
    successor(&s, &info, action, cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// State reached by `action`.
    pub state: MolGraph,
    pub action: Action,
    pub reward: f64,
    pub t: usize,
    pub terminal: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Episode {
    pub steps: Vec<Transition>,
}

impl Episode {
    pub fn final_state(&self) -> MolGraph {
        self.steps.last().map(|s| s.state.clone()).unwrap_or_default()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Constructive actions that rebuild `y` atom by atom.
///
/// Atoms are placed in stored order, each one as soon as it is bonded to the
/// placed set; its first bond to a placed atom comes with the atom and every
/// further bond to placed atoms follows as a separate step.
pub fn idealized_actions(y: &MolGraph, cfg: &MdpConfig) -> Result<Vec<Action>, MdpError> {
    let y = kekulize(y)?.without_explicit_hydrogens();
    let n = y.atom_count();
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(cap) = cfg.max_heavy_atoms {
        if y.heavy_atom_count() > cap {
            return Err(MdpError::Unreachable(format!("more than {cap} heavy atoms")));
        }
    }
    let order_of = |b: &crate::chem::Bond| b.order.integer().expect("kekulized");
    let mut map: Vec<Option<usize>> = vec![None; n];
    let mut state = MolGraph::new();
    let mut actions = Vec::new();
    let step = |state: &mut MolGraph, action: Action, actions: &mut Vec<Action>| -> Result<(), MdpError> {
        *state = apply(state, action, cfg).map_err(|e| MdpError::Unreachable(e.to_string()))?;
        actions.push(action);
        Ok(())
    };
    step(
        &mut state,
        Action::AddAtom {
            attach_to: None,
            element: y.element(0),
            order: 0,
        },
        &mut actions,
    )?;
    map[0] = Some(0);
    for _ in 1..n {
        let next = (0..n).find(|&a| map[a].is_none() && y.neighbors(a).any(|(b, _)| map[b].is_some()));
        let Some(a) = next else {
            return Err(MdpError::Unreachable("disconnected target".into()));
        };
        let placed: Vec<&crate::chem::Bond> = y
            .bonds()
            .iter()
            .filter(|b| b.touches(a) && map[b.other(a)].is_some())
            .collect();
        let first = placed[0];
        step(
            &mut state,
            Action::AddAtom {
                attach_to: map[first.other(a)],
                element: y.element(a),
                order: order_of(first),
            },
            &mut actions,
        )?;
        let new = state.atom_count() - 1;
        map[a] = Some(new);
        for b in &placed[1..] {
            let other = map[b.other(a)].unwrap();
            step(
                &mut state,
                Action::AddBond {
                    i: other.min(new),
                    j: other.max(new),
                    order: order_of(b),
                },
                &mut actions,
            )?;
        }
    }
    if actions.len() > cfg.max_steps {
        return Err(MdpError::TooManySteps {
            needed: actions.len(),
            limit: cfg.max_steps,
        });
    }
    Ok(actions)
}

/// Replays `actions` from the empty graph, padding with no-ops to exactly
/// `cfg.max_steps` steps and scoring each reached state with `reward`.
pub fn replay(
    actions: &[Action],
    cfg: &MdpConfig,
    reward: &mut dyn FnMut(&MolGraph) -> f64,
) -> Result<Episode, MdpError> {
    if actions.len() > cfg.max_steps {
        return Err(MdpError::TooManySteps {
            needed: actions.len(),
            limit: cfg.max_steps,
        });
    }
    let mut state = MolGraph::new();
    let mut steps = Vec::with_capacity(cfg.max_steps);
    for t in 0..cfg.max_steps {
        let action = actions.get(t).copied().unwrap_or(Action::NoOp);
        state = apply(&state, action, cfg)?;
        steps.push(Transition {
            reward: reward(&state),
            state: state.clone(),
            action,
            t,
            terminal: t + 1 == cfg.max_steps,
        });
    }
    Ok(Episode { steps })
}

/// Idealized episode for target `y`, padded with no-ops to `cfg.max_steps`.
pub fn idealized_episode(
    y: &MolGraph,
    cfg: &MdpConfig,
    reward: &mut dyn FnMut(&MolGraph) -> f64,
) -> Result<Episode, MdpError> {
    let actions = idealized_actions(y, cfg)?;
    replay(&actions, cfg, reward)
}

/// Scores candidate successor states reached at step `t`.
pub trait ValueFunction {
    fn values(&mut self, successors: &[MolGraph], t: usize) -> Vec<f32>;
}

impl<F: FnMut(&[MolGraph], usize) -> Vec<f32>> ValueFunction for F {
    fn values(&mut self, successors: &[MolGraph], t: usize) -> Vec<f32> {
        self(successors, t)
    }
}

/// Index of the first maximum; NaN never wins.
pub fn argmax_first(values: &[f32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(k);
        }
    }
    best
}

/// ε-greedy episode from the empty graph.
///
/// Each step draws one uniform number; below `epsilon` a uniformly random
/// legal action is taken, otherwise the successor with the highest value
/// (first in canonical action order on ties).
pub fn rollout<R: Rng + ?Sized>(
    policy: &mut dyn ValueFunction,
    reward: &mut dyn FnMut(&MolGraph) -> f64,
    epsilon: f64,
    rng: &mut R,
    cfg: &MdpConfig,
) -> Episode {
    let mut state = MolGraph::new();
    let mut steps = Vec::with_capacity(cfg.max_steps);
    for t in 0..cfg.max_steps {
        let explore = rng.random::<f64>() < epsilon;
        let (action, next) = if explore {
            let actions = legal_actions(&state, cfg);
            let action = actions[rng.random_range(0..actions.len())];
            let next = apply(&state, action, cfg).expect("enumerated actions are legal");
            (action, next)
        } else {
            let mut succ = enumerate_actions(&state, cfg);
            let graphs: Vec<MolGraph> = succ.iter().map(|(_, g)| g.clone()).collect();
            let values = policy.values(&graphs, t);
            let k = argmax_first(&values).unwrap_or(0);
            succ.swap_remove(k)
        };
        state = next;
        steps.push(Transition {
            reward: reward(&state),
            state: state.clone(),
            action,
            t,
            terminal: t + 1 == cfg.max_steps,
        });
    }
    Episode { steps }
}
