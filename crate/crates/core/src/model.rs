//! Message-passing encoders, latent sampling and the value head.
//!
//! Two encoders with identical architecture and separate weights: the target
//! encoder maps a molecule to a diagonal Gaussian (μ, log σ) and the state
//! encoder maps a partial molecule to a deterministic vector. The value head
//! scores a state against a latent vector and the step index.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{canonical_ranks, normalized, MolGraph};
use crate::nn::{Checkpoint, GatedReadout, GruCell, Linear, NnError, ParamId, ParamStore, Tape, Tensor, Var};

pub const NODE_FEATURES: usize = 5;
pub const EDGE_FEATURES: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("step {t} outside 0..{max_steps}")]
    StepOutOfRange { t: usize, max_steps: usize },
    #[error("latent vector has {found} values, expected {expected}")]
    LatentDim { expected: usize, found: usize },
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Node state width inside the message-passing rounds.
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Width of the state encoder readout.
    pub state_dim: usize,
    /// ReLU units in the value head.
    pub value_hidden: usize,
    pub rounds: usize,
    /// Episode length T.
    pub max_steps: usize,
    pub log_sigma_clamp: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            latent_dim: 256,
            state_dim: 256,
            value_hidden: 256,
            rounds: 2,
            max_steps: 20,
            log_sigma_clamp: 10.0,
        }
    }
}

impl ModelConfig {
    /// Narrow widths for single-core training runs.
    pub fn desk() -> Self {
        ModelConfig {
            hidden_dim: 32,
            latent_dim: 32,
            state_dim: 32,
            value_hidden: 64,
            ..Self::default()
        }
    }

    pub fn value_input_dim(&self) -> usize {
        self.state_dim + self.latent_dim + 2
    }
}

/// (t1, t2): remaining-steps feature in [−1, 1] and the last-step indicator.
pub fn time_features(t: usize, max_steps: usize) -> [f32; 2] {
    let big_t = max_steps as f64;
    let t1 = 2.0 * (big_t - t as f64) / big_t - 1.0;
    let t2 = if t + 1 == max_steps { 1.0 } else { 0.0 };
    [t1 as f32, t2]
}

/// Order in which a graph's atoms enter the node matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeOrder {
    /// As stored; fastest.
    Stored,
    /// By canonical rank, which makes readouts bit-identical across atom
    /// relabelings.
    Canonical,
}

/// Several graphs packed into one disjoint union.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    nodes: Tensor,
    edges: Tensor,
    src: Vec<usize>,
    dst: Vec<usize>,
    graph_of_node: Vec<usize>,
    graphs: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&MolGraph], order: NodeOrder) -> Self {
        let total: usize = graphs.iter().map(|g| g.atom_count()).sum();
        let mut nodes = vec![0.0f32; total * NODE_FEATURES];
        let mut graph_of_node = Vec::with_capacity(total);
        let mut directed: Vec<(usize, usize, usize)> = Vec::new();
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            let pos: Vec<usize> = match order {
                NodeOrder::Stored => (0..g.atom_count()).collect(),
                NodeOrder::Canonical => canonical_ranks(g),
            };
            for (a, atom) in g.atoms().iter().enumerate() {
                nodes[(offset + pos[a]) * NODE_FEATURES + atom.element.index()] = 1.0;
            }
            graph_of_node.extend(std::iter::repeat_n(gi, g.atom_count()));
            let mut local: Vec<(usize, usize, usize)> = Vec::with_capacity(2 * g.bonds().len());
            for b in g.bonds() {
                let (i, j) = (offset + pos[b.i], offset + pos[b.j]);
                local.push((j, i, b.order.index()));
                local.push((i, j, b.order.index()));
            }
            // Fixed (destination, source) order pins every summation order.
            local.sort_unstable();
            directed.extend(local);
            offset += g.atom_count();
        }
        let mut edges = vec![0.0f32; directed.len() * EDGE_FEATURES];
        let mut src = Vec::with_capacity(directed.len());
        let mut dst = Vec::with_capacity(directed.len());
        for (k, &(d, s, code)) in directed.iter().enumerate() {
            edges[k * EDGE_FEATURES + code] = 1.0;
            src.push(s);
            dst.push(d);
        }
        GraphBatch {
            nodes: Tensor::matrix(total, NODE_FEATURES, nodes),
            edges: Tensor::matrix(directed.len(), EDGE_FEATURES, edges),
            src,
            dst,
            graph_of_node,
            graphs: graphs.len(),
        }
    }

    pub fn graphs(&self) -> usize {
        self.graphs
    }

    pub fn node_count(&self) -> usize {
        self.graph_of_node.len()
    }
}

/// Message-passing network with one gated readout per output head.
#[derive(Clone, Debug)]
pub struct Encoder {
    node_in: Linear,
    edge_in: Linear,
    rounds: Vec<GruCell>,
    readouts: Vec<GatedReadout>,
}

impl Encoder {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        heads: &[(&str, usize)],
        rng: &mut R,
    ) -> Self {
        let d = cfg.hidden_dim;
        Encoder {
            node_in: Linear::new(store, &format!("{name}.node_in"), NODE_FEATURES, d, false, rng),
            edge_in: Linear::new(store, &format!("{name}.edge_in"), EDGE_FEATURES, d, false, rng),
            rounds: (0..cfg.rounds)
                .map(|r| GruCell::new(store, &format!("{name}.round{r}"), d, d, rng))
                .collect(),
            readouts: heads
                .iter()
                .map(|(head, width)| GatedReadout::new(store, &format!("{name}.{head}"), d, *width, rng))
                .collect(),
        }
    }

    /// One `[graphs, width]` readout per head.
    ///
    /// The message into node v is Σ over edges u→v of (h_u + edge embedding);
    /// the GRU of each round consumes it as input.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Vec<Var> {
        let n = batch.node_count();
        let x = tape.constant(batch.nodes.clone());
        let mut h = self.node_in.forward(tape, store, x);
        let ef = tape.constant(batch.edges.clone());
        let e = self.edge_in.forward(tape, store, ef);
        for gru in &self.rounds {
            let from = tape.gather_rows(h, batch.src.clone());
            let msg = tape.add(from, e);
            let m = tape.scatter_add_rows(msg, batch.dst.clone(), n);
            h = gru.forward(tape, store, h, m);
        }
        self.readouts
            .iter()
            .map(|r| r.forward(tape, store, h, batch.graph_of_node.clone(), batch.graphs))
            .collect()
    }
}

/// g([f_state, z, t1, t2]) = w₂·relu(W₁x + b₁) + b₂ with W₁ stored as
/// three column blocks, so state and latent parts can be projected apart.
#[derive(Clone, Debug)]
pub struct ValueHead {
    state: ParamId,
    latent: ParamId,
    time: ParamId,
    bias: ParamId,
    out: Linear,
}

impl ValueHead {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.value_hidden;
        // Same scale as one Glorot draw over the full concatenated input.
        let a = (6.0 / (cfg.value_input_dim() + h) as f64).sqrt() as f32;
        ValueHead {
            state: store.uniform("value.state.weight", &[cfg.state_dim, h], a, rng),
            latent: store.uniform("value.latent.weight", &[cfg.latent_dim, h], a, rng),
            time: store.uniform("value.time.weight", &[2, h], a, rng),
            bias: store.zeros("value.hidden.bias", &[h]),
            out: Linear::new(store, "value.out", h, 1, true, rng),
        }
    }

    /// `[rows, 1]` values from per-row state embeddings, latents and time
    /// features.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, state: Var, latent: Var, time: Var) -> Var {
        let ws = tape.param(store, self.state);
        let wz = tape.param(store, self.latent);
        let wt = tape.param(store, self.time);
        let b = tape.param(store, self.bias);
        let a = tape.matmul(state, ws);
        let c = tape.matmul(latent, wz);
        let d = tape.matmul(time, wt);
        let pre = tape.add(a, c);
        let pre = tape.add(pre, d);
        let pre = tape.add_row(pre, b);
        let hidden = tape.relu(pre);
        self.out.forward(tape, store, hidden)
    }
}

/// Diagonal Gaussian over the latent space; `log_sigma` is the element-wise
/// log standard deviation (already clamped).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDistribution {
    pub mu: Vec<f32>,
    pub log_sigma: Vec<f32>,
}

impl EmbeddingDistribution {
    /// μ + exp(log σ) ⊙ η.
    pub fn reparameterize(&self, eta: &[f32]) -> Vec<f32> {
        assert_eq!(eta.len(), self.mu.len());
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .zip(eta)
            .map(|((&m, &s), &e)| m + s.exp() * e)
            .collect()
    }

    pub fn kl_divergence(&self) -> f64 {
        kl_divergence(&self.mu, &self.log_sigma)
    }
}

/// ½ Σ (μ² + σ² − 1 − log σ²) against the unit Gaussian.
pub fn kl_divergence(mu: &[f32], log_sigma: &[f32]) -> f64 {
    mu.iter()
        .zip(log_sigma)
        .map(|(&m, &s)| {
            let (m, s) = (m as f64, s as f64);
            0.5 * (m * m + (2.0 * s).exp() - 1.0 - 2.0 * s)
        })
        .sum()
}

pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Draws η and returns the reparameterized sample.
pub fn sample_embedding<R: Rng + ?Sized>(d: &EmbeddingDistribution, rng: &mut R) -> Vec<f32> {
    d.reparameterize(&standard_normal(d.mu.len(), rng))
}

/// Encoders and value head over one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    target_encoder: Encoder,
    state_encoder: Encoder,
    value_head: ValueHead,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let heads = [("mu", config.latent_dim), ("log_sigma", config.latent_dim)];
        let target_encoder = Encoder::new(&mut store, "target", &config, &heads, rng);
        let state_encoder = Encoder::new(&mut store, "state", &config, &[("readout", config.state_dim)], rng);
        let value_head = ValueHead::new(&mut store, &config, rng);
        Model {
            config,
            store,
            target_encoder,
            state_encoder,
            value_head,
        }
    }

    /// Model described by a checkpoint whose metadata holds a `"model"`
    /// config, with parameters read from entries named `{prefix}{param}`.
    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self, ModelError> {
        let meta: serde_json::Value =
            serde_json::from_str(&ck.metadata).map_err(|e| ModelError::Metadata(e.to_string()))?;
        let cfg = meta
            .get("model")
            .ok_or_else(|| ModelError::Metadata("no `model` entry".into()))?;
        let config: ModelConfig =
            serde_json::from_value(cfg.clone()).map_err(|e| ModelError::Metadata(e.to_string()))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(config, &mut rng);
        model.load_params(ck, prefix)?;
        Ok(model)
    }

    pub fn load_params(&mut self, ck: &Checkpoint, prefix: &str) -> Result<(), ModelError> {
        for k in 0..self.store.len() {
            let name = self.store.name(ParamId(k)).to_string();
            let full = format!("{prefix}{name}");
            let t = ck.get(&full).ok_or(NnError::MissingParam(full.clone()))?;
            let dst = self.store.get_mut(ParamId(k));
            if t.shape() != dst.shape() {
                return Err(NnError::ShapeMismatch {
                    name: full,
                    expected: dst.shape().to_vec(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn param_entries(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.store
            .iter()
            .map(|(n, t)| (format!("{prefix}{n}"), t.clone()))
            .collect()
    }

    /// Same architecture over another store with the identical layout.
    pub fn with_store(&self, store: ParamStore) -> Model {
        assert_eq!(store.len(), self.store.len(), "parameter layout differs");
        Model {
            store,
            ..self.clone()
        }
    }

    pub fn value_head(&self) -> &ValueHead {
        &self.value_head
    }

    /// (μ, log σ) rows for a batch of targets, on the tape. Targets are
    /// normalized and read in canonical atom order.
    pub fn target_forward(&self, tape: &mut Tape, targets: &[&MolGraph]) -> (Var, Var) {
        let norm: Vec<MolGraph> = targets.iter().map(|g| normalized(g)).collect();
        let refs: Vec<&MolGraph> = norm.iter().collect();
        let batch = GraphBatch::new(&refs, NodeOrder::Canonical);
        let out = self.target_encoder.forward(tape, &self.store, &batch);
        let c = self.config.log_sigma_clamp;
        let log_sigma = tape.clamp(out[1], -c, c);
        (out[0], log_sigma)
    }

    /// State embeddings `[graphs, state_dim]` on the tape.
    pub fn state_forward(&self, tape: &mut Tape, states: &[&MolGraph], order: NodeOrder) -> Var {
        let batch = GraphBatch::new(states, order);
        self.state_encoder.forward(tape, &self.store, &batch)[0]
    }

    pub fn value_forward(&self, tape: &mut Tape, state: Var, latent: Var, time: Var) -> Var {
        self.value_head.forward(tape, &self.store, state, latent, time)
    }

    pub fn encode_targets(&self, targets: &[&MolGraph]) -> Vec<EmbeddingDistribution> {
        let mut tape = Tape::new();
        let (mu, ls) = self.target_forward(&mut tape, targets);
        let (mu, ls) = (tape.value(mu), tape.value(ls));
        (0..targets.len())
            .map(|r| EmbeddingDistribution {
                mu: mu.row(r).to_vec(),
                log_sigma: ls.row(r).to_vec(),
            })
            .collect()
    }

    pub fn encode_target(&self, target: &MolGraph) -> EmbeddingDistribution {
        self.encode_targets(&[target]).pop().expect("one row")
    }

    /// `[states, state_dim]`; the empty graph maps to zeros.
    pub fn encode_states(&self, states: &[&MolGraph], order: NodeOrder) -> Tensor {
        let mut tape = Tape::new();
        let v = self.state_forward(&mut tape, states, order);
        tape.value(v).clone()
    }

    pub fn encode_state(&self, state: &MolGraph) -> Vec<f32> {
        self.encode_states(&[state], NodeOrder::Canonical).into_data()
    }

    /// State embeddings pushed through the state block of the first value
    /// layer: `[states, value_hidden]`.
    pub fn project_states(&self, embeddings: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let e = tape.constant(embeddings.clone());
        let w = tape.param(&self.store, self.value_head.state);
        let p = tape.matmul(e, w);
        tape.value(p).clone()
    }

    /// Latent and time contribution to the first value layer, bias included.
    pub fn latent_bias(&self, z: &[f32], t: usize) -> Result<Vec<f32>, ModelError> {
        let cfg = &self.config;
        if t >= cfg.max_steps {
            return Err(ModelError::StepOutOfRange {
                t,
                max_steps: cfg.max_steps,
            });
        }
        if z.len() != cfg.latent_dim {
            return Err(ModelError::LatentDim {
                expected: cfg.latent_dim,
                found: z.len(),
            });
        }
        let h = cfg.value_hidden;
        let wz = self.store.get(self.value_head.latent).data();
        let wt = self.store.get(self.value_head.time).data();
        let mut out: Vec<f32> = self.store.get(self.value_head.bias).data().to_vec();
        for (k, &x) in z.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&wz[k * h..(k + 1) * h]) {
                *o += x * w;
            }
        }
        for (k, &x) in time_features(t, cfg.max_steps).iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&wt[k * h..(k + 1) * h]) {
                *o += x * w;
            }
        }
        Ok(out)
    }

    /// Value from one projected state row and a latent bias.
    pub fn head(&self, projected: &[f32], latent_bias: &[f32]) -> f32 {
        let w = self.store.get(self.value_head.out.weight).data();
        let b = self.value_head.out.bias.map_or(0.0, |b| self.store.get(b).item());
        let s: f32 = projected
            .iter()
            .zip(latent_bias)
            .zip(w)
            .map(|((&p, &l), &w)| (p + l).max(0.0) * w)
            .sum();
        s + b
    }

    /// V(s, z, t) for each state.
    pub fn values(&self, states: &[MolGraph], z: &[f32], t: usize) -> Result<Vec<f32>, ModelError> {
        let bias = self.latent_bias(z, t)?;
        let refs: Vec<&MolGraph> = states.iter().collect();
        let proj = self.project_states(&self.encode_states(&refs, NodeOrder::Stored));
        Ok((0..states.len()).map(|r| self.head(proj.row(r), &bias)).collect())
    }

    pub fn value(&self, state: &MolGraph, z: &[f32], t: usize) -> Result<f32, ModelError> {
        Ok(self.values(std::slice::from_ref(state), z, t)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model {
        Model::new(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn time_feature_endpoints() {
        assert_eq!(time_features(0, 20), [1.0, 0.0]);
        assert_eq!(time_features(19, 20), [-0.9, 1.0]);
        assert_eq!(time_features(10, 20), [0.0, 0.0]);
    }

    #[test]
    fn kl_reference_points() {
        assert_eq!(kl_divergence(&[0.0; 256], &[0.0; 256]), 0.0);
        assert_eq!(kl_divergence(&[1.0; 256], &[0.0; 256]), 128.0);
        assert!(kl_divergence(&[0.0; 4], &[0.3, -0.2, 0.0, 1.0]) > 0.0);
    }

    #[test]
    fn empty_state_reads_out_zero() {
        let m = model(1);
        assert!(m.encode_state(&MolGraph::new()).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn readout_ignores_atom_numbering() {
        let m = model(2);
        let g = parse_smiles("OCC(=O)NC1CC1").unwrap();
        let perm: Vec<usize> = (0..g.atom_count()).rev().collect();
        let p = g.permuted(&perm);
        assert_eq!(m.encode_state(&g), m.encode_state(&p));
        assert_eq!(m.encode_target(&g), m.encode_target(&p));
    }

    #[test]
    fn single_atoms_embed_differently() {
        let m = model(3);
        let embs: Vec<Vec<f32>> = ["C", "N", "O", "F"]
            .iter()
            .map(|s| m.encode_target(&parse_smiles(s).unwrap()).mu)
            .collect();
        for i in 0..embs.len() {
            for j in 0..i {
                assert_ne!(embs[i], embs[j]);
            }
        }
    }

    #[test]
    fn zeroed_value_head_outputs_zero() {
        let mut m = model(4);
        for k in 0..m.store.len() {
            if m.store.name(ParamId(k)).starts_with("value.") {
                m.store.get_mut(ParamId(k)).data_mut().fill(0.0);
            }
        }
        let z = vec![0.7; m.config.latent_dim];
        let s = parse_smiles("CC=O").unwrap();
        for t in [0, 5, 19] {
            assert_eq!(m.value(&s, &z, t).unwrap(), 0.0);
        }
        assert!(matches!(m.value(&s, &z, 20), Err(ModelError::StepOutOfRange { .. })));
    }

    #[test]
    fn fast_path_matches_tape() {
        let m = model(5);
        let states: Vec<MolGraph> = ["C", "CC", "C=CO", "C1CC1"].iter().map(|s| parse_smiles(s).unwrap()).collect();
        let z: Vec<f32> = (0..m.config.latent_dim).map(|k| (k as f32 * 0.37).sin()).collect();
        let fast = m.values(&states, &z, 7).unwrap();
        let mut tape = Tape::new();
        let refs: Vec<&MolGraph> = states.iter().collect();
        let fs = m.state_forward(&mut tape, &refs, NodeOrder::Stored);
        let zs: Vec<f32> = z.iter().copied().cycle().take(4 * z.len()).collect();
        let zv = tape.constant(Tensor::matrix(4, z.len(), zs));
        let tf = time_features(7, 20);
        let tv = tape.constant(Tensor::matrix(4, 2, tf.repeat(4)));
        let v = m.value_forward(&mut tape, fs, zv, tv);
        for (a, b) in fast.iter().zip(tape.value(v).data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn sample_mean_tracks_mu() {
        let d = EmbeddingDistribution {
            mu: vec![0.5, -1.0, 2.0],
            log_sigma: vec![0.0, -1.0, 0.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut sum = [0.0f64; 3];
        for _ in 0..n {
            for (s, x) in sum.iter_mut().zip(sample_embedding(&d, &mut rng)) {
                *s += x as f64;
            }
        }
        for k in 0..3 {
            let se = (d.log_sigma[k] as f64).exp() / (n as f64).sqrt();
            assert!((sum[k] / n as f64 - d.mu[k] as f64).abs() < 4.0 * se);
        }
        let tight = EmbeddingDistribution {
            mu: vec![1.0],
            log_sigma: vec![-10.0],
        };
        assert!((sample_embedding(&tight, &mut rng)[0] - 1.0).abs() < 1e-3);
    }
}
