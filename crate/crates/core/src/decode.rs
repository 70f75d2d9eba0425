//! Batched ε-greedy decoding over an interned state space.
//!
//! Decoder states recur constantly (every episode starts from the empty
//! graph and small molecules share prefixes), so states are interned once
//! with their successor lists and fingerprints. Value evaluation is split
//! the same way as the value head: a per-state projection, cached for one
//! parameter snapshot, plus a per-(latent, step) bias.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};

use crate::chem::MolGraph;
use crate::fingerprints::{MolFingerprints, SimilarityConfig};
use crate::mdp::{argmax_first, enumerate_actions, Action, MdpConfig};
use crate::model::{Model, ModelError, NodeOrder};

pub type StateId = u32;

pub const EMPTY_STATE: StateId = 0;

/// Legal actions of a state paired with the states they lead to.
pub type Successors = Arc<[(Action, StateId)]>;

/// Interned decoder states with lazily computed successors and fingerprints.
#[derive(Debug)]
pub struct StateSpace {
    mdp: MdpConfig,
    similarity: SimilarityConfig,
    graphs: Vec<MolGraph>,
    ids: HashMap<MolGraph, StateId>,
    successors: Vec<Option<Successors>>,
    fingerprints: Vec<Option<Arc<MolFingerprints>>>,
}

impl StateSpace {
    pub fn new(mdp: MdpConfig, similarity: SimilarityConfig) -> Self {
        let mut s = StateSpace {
            mdp,
            similarity,
            graphs: Vec::new(),
            ids: HashMap::new(),
            successors: Vec::new(),
            fingerprints: Vec::new(),
        };
        s.intern(MolGraph::new());
        s
    }

    pub fn mdp(&self) -> &MdpConfig {
        &self.mdp
    }

    pub fn similarity(&self) -> &SimilarityConfig {
        &self.similarity
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Drops every interned state except the empty graph. Ids handed out
    /// before are invalid afterwards.
    pub fn clear(&mut self) {
        *self = StateSpace::new(self.mdp.clone(), self.similarity.clone());
    }

    pub fn intern(&mut self, g: MolGraph) -> StateId {
        if let Some(&id) = self.ids.get(&g) {
            return id;
        }
        let id = self.graphs.len() as StateId;
        self.ids.insert(g.clone(), id);
        self.graphs.push(g);
        self.successors.push(None);
        self.fingerprints.push(None);
        id
    }

    pub fn graph(&self, id: StateId) -> &MolGraph {
        &self.graphs[id as usize]
    }

    /// Legal actions and successor ids in canonical action order.
    pub fn successors(&mut self, id: StateId) -> Successors {
        if let Some(s) = &self.successors[id as usize] {
            return s.clone();
        }
        let list: Vec<(Action, StateId)> = enumerate_actions(&self.graphs[id as usize], &self.mdp)
            .into_iter()
            .map(|(a, g)| (a, self.intern(g)))
            .collect();
        let list: Successors = list.into();
        self.successors[id as usize] = Some(list.clone());
        list
    }

    pub fn fingerprints(&mut self, id: StateId) -> Arc<MolFingerprints> {
        if let Some(f) = &self.fingerprints[id as usize] {
            return f.clone();
        }
        let f = Arc::new(MolFingerprints::new(&self.graphs[id as usize], &self.similarity));
        self.fingerprints[id as usize] = Some(f.clone());
        f
    }

    pub fn reward(&mut self, id: StateId, target: &MolFingerprints) -> f64 {
        self.fingerprints(id).compare(target, &self.similarity).reward()
    }
}

/// State projections for one parameter snapshot, filled in batches.
#[derive(Debug, Default)]
pub struct ProjectionCache {
    slot: Vec<u32>,
    data: Vec<f32>,
    width: usize,
}

const MISSING: u32 = u32::MAX;

impl ProjectionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.slot.clear();
        self.data.clear();
    }

    pub fn contains(&self, id: StateId) -> bool {
        self.slot.get(id as usize).is_some_and(|&s| s != MISSING)
    }

    /// Computes projections for every id in `ids` not yet cached, in one
    /// encoder pass, in first-occurrence order.
    pub fn ensure(&mut self, model: &Model, space: &StateSpace, ids: &[StateId]) {
        let mut missing: Vec<StateId> = Vec::new();
        for &id in ids {
            if (id as usize) >= self.slot.len() {
                self.slot.resize(id as usize + 1, MISSING);
            }
            if self.slot[id as usize] == MISSING {
                // Mark as pending so duplicates are not queued twice.
                self.slot[id as usize] = MISSING - 1;
                missing.push(id);
            }
        }
        if missing.is_empty() {
            return;
        }
        let graphs: Vec<&MolGraph> = missing.iter().map(|&id| space.graph(id)).collect();
        let proj = model.project_states(&model.encode_states(&graphs, NodeOrder::Stored));
        self.width = proj.cols();
        let base = self.data.len() / self.width.max(1);
        self.data.extend_from_slice(proj.data());
        for (k, &id) in missing.iter().enumerate() {
            self.slot[id as usize] = (base + k) as u32;
        }
    }

    pub fn row(&self, id: StateId) -> &[f32] {
        let s = self.slot[id as usize] as usize;
        &self.data[s * self.width..(s + 1) * self.width]
    }
}

/// One decoded step: the action taken and the state it reached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedStep {
    pub action: Action,
    pub state: StateId,
}

/// Runs one ε-greedy episode per latent vector, all in lockstep.
///
/// At every step each episode draws one uniform number (in episode order);
/// below `epsilon` it also draws a uniformly random legal action. The other
/// episodes pick the successor of highest value, first in canonical action
/// order on ties. With a single episode this is the draw sequence of
/// [`crate::mdp::rollout`].
pub fn decode_batch<R: Rng + ?Sized>(
    model: &Model,
    space: &mut StateSpace,
    cache: &mut ProjectionCache,
    latents: &[Vec<f32>],
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<Vec<DecodedStep>>, ModelError> {
    let n = latents.len();
    let steps = space.mdp().max_steps;
    let mut current = vec![EMPTY_STATE; n];
    let mut out: Vec<Vec<DecodedStep>> = (0..n).map(|_| Vec::with_capacity(steps)).collect();
    for t in 0..steps {
        let mut choice: Vec<Option<DecodedStep>> = vec![None; n];
        let mut greedy = Vec::new();
        for i in 0..n {
            let succ = space.successors(current[i]);
            if rng.random::<f64>() < epsilon {
                let (action, state) = succ[rng.random_range(0..succ.len())];
                choice[i] = Some(DecodedStep { action, state });
            } else {
                greedy.push((i, succ));
            }
        }
        if !greedy.is_empty() {
            let ids: Vec<StateId> = greedy.iter().flat_map(|(_, s)| s.iter().map(|&(_, id)| id)).collect();
            cache.ensure(model, space, &ids);
            for (i, succ) in greedy {
                let bias = model.latent_bias(&latents[i], t)?;
                let values: Vec<f32> = succ.iter().map(|&(_, id)| model.head(cache.row(id), &bias)).collect();
                let (action, state) = succ[argmax_first(&values).unwrap_or(0)];
                choice[i] = Some(DecodedStep { action, state });
            }
        }
        for (i, c) in choice.into_iter().enumerate() {
            let step = c.expect("every episode chose");
            current[i] = step.state;
            out[i].push(step);
        }
    }
    Ok(out)
}

/// Greedy (ε = 0) decode of each latent vector; returns final state ids.
pub fn greedy_decode(
    model: &Model,
    space: &mut StateSpace,
    cache: &mut ProjectionCache,
    latents: &[Vec<f32>],
) -> Result<Vec<StateId>, ModelError> {
    // No draw can fall below ε = 0, so the generator never matters.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let eps = decode_batch(model, space, cache, latents, 0.0, &mut rng)?;
    Ok(eps.iter().map(|e| e.last().map_or(EMPTY_STATE, |s| s.state)).collect())
}
