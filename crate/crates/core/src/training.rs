//! Experience replay, Double-Q TD targets, the TD + KL loss and the
//! training loop.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::MolGraph;
use crate::decode::{decode_batch, ProjectionCache, StateId, StateSpace, Successors};
use crate::fingerprints::{MolFingerprints, SimilarityConfig};
use crate::mdp::{argmax_first, idealized_actions, replay, MdpConfig, Transition};
use crate::model::{standard_normal, time_features, Model, ModelConfig, ModelError, NodeOrder};
use crate::nn::{AdamState, Checkpoint, ExpSchedule, NnError, RngState, Tape, Tensor, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training molecules")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// λ, the weight of the KL term.
    pub kl_weight: f64,
    pub huber_delta: f32,
    /// Targets per fill step; each yields one ε-greedy and one idealized episode.
    pub episode_batch: usize,
    pub loss_batch: usize,
    pub buffer_capacity: usize,
    /// Entries required before the first gradient step.
    pub warmup: usize,
    /// Optimizer steps between hard copies into the target network.
    pub target_sync: u64,
    pub lr: ExpSchedule,
    pub epsilon: ExpSchedule,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Checkpoint cadence in steps; 0 writes only the initial and final one.
    pub checkpoint_every: u64,
    /// Heavy-atom cap for decoder states.
    pub max_heavy_atoms: Option<usize>,
    /// Interned decoder states kept before the state cache is reset.
    pub max_cached_states: usize,
    pub model: ModelConfig,
    pub similarity: SimilarityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            kl_weight: 1e-5,
            huber_delta: 1.0,
            episode_batch: 8,
            loss_batch: 128,
            buffer_capacity: 10_000,
            warmup: 1_000,
            target_sync: 1_000,
            lr: ExpSchedule {
                initial: 1e-5,
                rate: 0.99,
                interval: 100_000.0,
            },
            epsilon: ExpSchedule {
                initial: 1.0,
                rate: 0.95,
                interval: 10_000.0,
            },
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 10_000,
            max_heavy_atoms: None,
            max_cached_states: 1_000_000,
            model: ModelConfig::default(),
            similarity: SimilarityConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Narrow model, faster schedules and a five-heavy-atom cap, sized for
    /// tens of thousands of steps on one core.
    pub fn desk() -> Self {
        TrainConfig {
            lr: ExpSchedule {
                initial: 1e-3,
                rate: 0.5,
                interval: 20_000.0,
            },
            epsilon: ExpSchedule {
                initial: 1.0,
                rate: 0.1,
                interval: 4_000.0,
            },
            checkpoint_every: 0,
            max_heavy_atoms: Some(5),
            model: ModelConfig::desk(),
            ..Self::default()
        }
    }

    pub fn mdp(&self) -> MdpConfig {
        MdpConfig {
            max_steps: self.model.max_steps,
            max_heavy_atoms: self.max_heavy_atoms,
            ..MdpConfig::decoder()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.kl_weight < 0.0 || self.huber_delta.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("kl_weight must be ≥ 0 and huber_delta > 0");
        }
        if self.episode_batch == 0 || self.loss_batch == 0 || self.target_sync == 0 {
            return bad("batch sizes and target_sync must be positive");
        }
        if self.warmup > self.buffer_capacity || self.buffer_capacity == 0 {
            return bad("warmup must not exceed a positive buffer_capacity");
        }
        for (name, s) in [("lr", &self.lr), ("epsilon", &self.epsilon)] {
            if !(s.initial > 0.0 && s.rate > 0.0 && s.rate <= 1.0 && s.interval > 0.0) {
                return Err(TrainError::Config(format!("{name} schedule must be positive and non-increasing")));
            }
        }
        if self.epsilon.initial > 1.0 {
            return bad("epsilon must start at or below 1");
        }
        let m = &self.model;
        if m.max_steps == 0 || m.hidden_dim == 0 || m.latent_dim == 0 || m.state_dim == 0 || m.value_hidden == 0 {
            return bad("model sizes must be positive");
        }
        Ok(())
    }
}

/// A transition tagged with its target and the episode's latent noise η.
#[derive(Clone, Debug)]
pub struct ReplayEntry {
    pub transition: Transition,
    pub target: usize,
    pub eta: Arc<[f32]>,
}

/// Bounded FIFO with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    entries: VecDeque<ReplayEntry>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, e: ReplayEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &ReplayEntry {
        &self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.entries.iter()
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.entries.is_empty(), "sampling an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.entries.len())).collect()
    }
}

/// Per-example weights: terminal and non-terminal examples each carry half
/// of the batch mass. All ones when either class is absent.
pub fn balance_weights(terminal: &[bool]) -> Vec<f32> {
    let b = terminal.len() as f64;
    let n_t = terminal.iter().filter(|&&x| x).count() as f64;
    let n_n = b - n_t;
    if n_t == 0.0 || n_n == 0.0 {
        return vec![1.0; terminal.len()];
    }
    let (w_t, w_n) = ((b / (2.0 * n_t)) as f32, (b / (2.0 * n_n)) as f32);
    terminal.iter().map(|&t| if t { w_t } else { w_n }).collect()
}

/// Double-Q targets for a batch of transitions.
///
/// Terminal transitions and γ = 0 give the reward alone and never touch
/// `target`. Otherwise the successor s* of the stored state with the highest
/// online value at step t + 1 is scored by the target network:
/// R + γ · V_target(s*, z, t + 1).
#[allow(clippy::too_many_arguments)]
pub fn td_targets(
    transitions: &[&Transition],
    latents: &[Vec<f32>],
    gamma: f64,
    online: &Model,
    target: Option<&Model>,
    space: &mut StateSpace,
    online_cache: &mut ProjectionCache,
    target_cache: &mut ProjectionCache,
) -> Result<Vec<f32>, ModelError> {
    let mut out: Vec<f32> = transitions.iter().map(|tr| tr.reward as f32).collect();
    if gamma == 0.0 {
        return Ok(out);
    }
    let open: Vec<usize> = (0..transitions.len()).filter(|&k| !transitions[k].terminal).collect();
    if open.is_empty() {
        return Ok(out);
    }
    let target = target.expect("a target network is needed when γ > 0");
    let succ: Vec<Successors> = open
        .iter()
        .map(|&k| {
            let id = space.intern(transitions[k].state.clone());
            space.successors(id)
        })
        .collect();
    let ids: Vec<StateId> = succ.iter().flat_map(|s| s.iter().map(|&(_, id)| id)).collect();
    online_cache.ensure(online, space, &ids);
    let mut best = Vec::with_capacity(open.len());
    for (n, &k) in open.iter().enumerate() {
        let t = transitions[k].t + 1;
        let bias = online.latent_bias(&latents[k], t)?;
        let values: Vec<f32> = succ[n].iter().map(|&(_, id)| online.head(online_cache.row(id), &bias)).collect();
        best.push(succ[n][argmax_first(&values).unwrap_or(0)].1);
    }
    target_cache.ensure(target, space, &best);
    for (n, &k) in open.iter().enumerate() {
        let t = transitions[k].t + 1;
        let bias = target.latent_bias(&latents[k], t)?;
        let v = target.head(target_cache.row(best[n]), &bias) as f64;
        out[k] = (transitions[k].reward + gamma * v) as f32;
    }
    Ok(out)
}

/// Loss terms of one gradient step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    /// Weighted Huber TD loss averaged over the batch.
    pub td_loss: f64,
    /// KL averaged over the distinct targets of the batch (before λ).
    pub kl: f64,
    pub total: f64,
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub epsilon: f64,
    pub td_loss: f64,
    pub kl: f64,
    pub buffer_size: usize,
    pub idealized_failures: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
    adam_step: u64,
    idealized_failures: u64,
}

/// Complete training state: online and target networks, Adam moments, the
/// replay buffer and the generator.
pub struct Trainer {
    pub config: TrainConfig,
    pub online: Model,
    pub target: Model,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub step: u64,
    pub idealized_failures: u64,
    rng: ChaCha8Rng,
    seed: u64,
    targets: Vec<MolGraph>,
    target_fps: Vec<Arc<MolFingerprints>>,
    idealized: HashMap<usize, Option<Arc<Vec<Transition>>>>,
    space: StateSpace,
    online_cache: ProjectionCache,
    target_cache: ProjectionCache,
}

impl Trainer {
    pub fn new(config: TrainConfig, targets: Vec<MolGraph>, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        if targets.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Model::new(config.model, &mut rng);
        let target = online.clone();
        let adam = AdamState::new(&online.store, config.adam_beta1, config.adam_beta2, config.adam_eps);
        let target_fps = targets
            .iter()
            .map(|g| Arc::new(MolFingerprints::new(g, &config.similarity)))
            .collect();
        let space = StateSpace::new(config.mdp(), config.similarity.clone());
        Ok(Trainer {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            online,
            target,
            adam,
            step: 0,
            idealized_failures: 0,
            rng,
            seed,
            targets,
            target_fps,
            idealized: HashMap::new(),
            space,
            online_cache: ProjectionCache::new(),
            target_cache: ProjectionCache::new(),
        })
    }

    pub fn targets(&self) -> &[MolGraph] {
        &self.targets
    }

    pub fn state_space(&mut self) -> &mut StateSpace {
        &mut self.space
    }

    fn idealized_for(&mut self, k: usize) -> Option<Arc<Vec<Transition>>> {
        if let Some(e) = self.idealized.get(&k) {
            return e.clone();
        }
        let cfg = self.config.mdp();
        let fps = self.target_fps[k].clone();
        let sim = self.config.similarity.clone();
        let ep = idealized_actions(&self.targets[k], &cfg).and_then(|actions| {
            replay(&actions, &cfg, &mut |s| MolFingerprints::new(s, &sim).compare(&fps, &sim).reward())
        });
        let e = ep.ok().map(|ep| Arc::new(ep.steps));
        self.idealized.insert(k, e.clone());
        e
    }

    /// Adds one ε-greedy and one idealized episode per target in `batch`;
    /// returns the number of entries added.
    pub fn fill_step(&mut self, batch: &[usize], epsilon: f64) -> Result<usize, TrainError> {
        let graphs: Vec<&MolGraph> = batch.iter().map(|&k| &self.targets[k]).collect();
        let dists = self.online.encode_targets(&graphs);
        let dim = self.config.model.latent_dim;
        let etas: Vec<Arc<[f32]>> = batch.iter().map(|_| standard_normal(dim, &mut self.rng).into()).collect();
        let latents: Vec<Vec<f32>> = dists.iter().zip(&etas).map(|(d, e)| d.reparameterize(e)).collect();
        let episodes = decode_batch(
            &self.online,
            &mut self.space,
            &mut self.online_cache,
            &latents,
            epsilon,
            &mut self.rng,
        )?;
        let big_t = self.config.model.max_steps;
        let mut added = 0;
        for (n, steps) in episodes.into_iter().enumerate() {
            let k = batch[n];
            for (t, s) in steps.into_iter().enumerate() {
                let reward = self.space.reward(s.state, &self.target_fps[k]);
                self.buffer.push(ReplayEntry {
                    transition: Transition {
                        state: self.space.graph(s.state).clone(),
                        action: s.action,
                        reward,
                        t,
                        terminal: t + 1 == big_t,
                    },
                    target: k,
                    eta: etas[n].clone(),
                });
                added += 1;
            }
        }
        for &k in batch {
            match self.idealized_for(k) {
                Some(steps) => {
                    let eta: Arc<[f32]> = standard_normal(dim, &mut self.rng).into();
                    for tr in steps.iter() {
                        self.buffer.push(ReplayEntry {
                            transition: tr.clone(),
                            target: k,
                            eta: eta.clone(),
                        });
                        added += 1;
                    }
                }
                None => self.idealized_failures += 1,
            }
        }
        Ok(added)
    }

    fn pick_targets(&mut self) -> Vec<usize> {
        let n = self.targets.len();
        let b = self.config.episode_batch;
        if n >= b {
            sample(&mut self.rng, n, b).into_vec()
        } else {
            (0..b).map(|_| self.rng.random_range(0..n)).collect()
        }
    }

    /// Loss and gradients for the buffer entries at `indices`, followed by
    /// one Adam step at learning rate `lr`.
    pub fn gradient_step(&mut self, indices: &[usize], lr: f64) -> Result<LossParts, TrainError> {
        let cfg = &self.config;
        let b = indices.len();
        let entries: Vec<ReplayEntry> = indices.iter().map(|&i| self.buffer.get(i).clone()).collect();

        let mut distinct_targets: Vec<usize> = Vec::new();
        let mut target_pos: HashMap<usize, usize> = HashMap::new();
        let mut target_row = Vec::with_capacity(b);
        let mut distinct_states: Vec<StateId> = Vec::new();
        let mut state_pos: HashMap<StateId, usize> = HashMap::new();
        let mut state_row = Vec::with_capacity(b);
        for e in &entries {
            let p = *target_pos.entry(e.target).or_insert_with(|| {
                distinct_targets.push(e.target);
                distinct_targets.len() - 1
            });
            target_row.push(p);
            let id = self.space.intern(e.transition.state.clone());
            let q = *state_pos.entry(id).or_insert_with(|| {
                distinct_states.push(id);
                distinct_states.len() - 1
            });
            state_row.push(q);
        }

        let mut tape = Tape::new();
        let tgraphs: Vec<&MolGraph> = distinct_targets.iter().map(|&k| &self.targets[k]).collect();
        let (mu, ls) = self.online.target_forward(&mut tape, &tgraphs);
        let dim = cfg.model.latent_dim;
        let eta_data: Vec<f32> = entries.iter().flat_map(|e| e.eta.iter().copied()).collect();
        let latents: Vec<Vec<f32>> = entries
            .iter()
            .zip(&target_row)
            .map(|(e, &r)| {
                let (m, s) = (tape.value(mu).row(r), tape.value(ls).row(r));
                (0..dim).map(|k| m[k] + s[k].exp() * e.eta[k]).collect()
            })
            .collect();

        let transitions: Vec<&Transition> = entries.iter().map(|e| &e.transition).collect();
        self.target_cache.clear();
        let targets_td = td_targets(
            &transitions,
            &latents,
            cfg.gamma,
            &self.online,
            Some(&self.target),
            &mut self.space,
            &mut self.online_cache,
            &mut self.target_cache,
        )?;

        let mu_rows = tape.gather_rows(mu, target_row.clone());
        let ls_rows = tape.gather_rows(ls, target_row);
        let sigma = tape.exp(ls_rows);
        let eta = tape.constant(Tensor::matrix(b, dim, eta_data));
        let noise = tape.mul(sigma, eta);
        let z = tape.add(mu_rows, noise);
        let sgraphs: Vec<&MolGraph> = distinct_states.iter().map(|&id| self.space.graph(id)).collect();
        let fs = self.online.state_forward(&mut tape, &sgraphs, NodeOrder::Stored);
        let fs = tape.gather_rows(fs, state_row);
        let tf: Vec<f32> = transitions
            .iter()
            .flat_map(|tr| time_features(tr.t, cfg.model.max_steps))
            .collect();
        let time = tape.constant(Tensor::matrix(b, 2, tf));
        let v = self.online.value_forward(&mut tape, fs, z, time);
        let terminal: Vec<bool> = transitions.iter().map(|tr| tr.terminal).collect();
        let weights = balance_weights(&terminal);
        let td = tape.weighted_huber(v, &targets_td, &weights, cfg.huber_delta);
        let td = tape.scale(td, 1.0 / b as f32);
        let kl_rows = tape.kl_rows(mu, ls);
        let kl_sum = tape.sum_all(kl_rows);
        let n_targets = distinct_targets.len() as f32;
        let kl_term = tape.scale(kl_sum, cfg.kl_weight as f32 / n_targets);
        let loss = tape.add(td, kl_term);

        let parts = LossParts {
            td_loss: tape.value(td).item() as f64,
            kl: tape.value(kl_sum).item() as f64 / n_targets as f64,
            total: tape.value(loss).item() as f64,
        };
        if !parts.total.is_finite() {
            return Err(TrainError::NonFinite {
                step: self.step,
                detail: format!("td_loss {} kl {} lr {lr}", parts.td_loss, parts.kl),
            });
        }
        let grads = tape.backward(loss);
        let grads = tape.param_grads(&grads, &self.online.store);
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite {
                step: self.step,
                detail: format!("gradient of {}", self.online.store.name(crate::nn::ParamId(k))),
            });
        }
        self.adam.step(&mut self.online.store, &grads, lr);
        Ok(parts)
    }

    /// One training step: fill (repeated until the warm-up size is reached),
    /// sample a batch, one Adam update, target sync on schedule.
    pub fn train_step(&mut self) -> Result<MetricsRow, TrainError> {
        if self.space.len() > self.config.max_cached_states {
            self.space.clear();
        }
        self.online_cache.clear();
        let epsilon = self.config.epsilon.value(self.step);
        let lr = self.config.lr.value(self.step);
        loop {
            let batch = self.pick_targets();
            self.fill_step(&batch, epsilon)?;
            if self.buffer.len() >= self.config.warmup {
                break;
            }
        }
        let indices = self.buffer.sample_indices(self.config.loss_batch, &mut self.rng);
        let parts = self.gradient_step(&indices, lr)?;
        self.step += 1;
        if self.step.is_multiple_of(self.config.target_sync) {
            self.target.store.copy_from(&self.online.store)?;
        }
        Ok(MetricsRow {
            step: self.step,
            lr,
            epsilon,
            td_loss: parts.td_loss,
            kl: parts.kl,
            buffer_size: self.buffer.len(),
            idealized_failures: self.idealized_failures,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            model: self.config.model,
            train: self.config.clone(),
            seed: self.seed,
            adam_step: self.adam.step,
            idealized_failures: self.idealized_failures,
        };
        let mut entries = self.online.param_entries("online/");
        entries.extend(self.target.param_entries("target/"));
        for (prefix, moments) in [("adam.m/", &self.adam.m), ("adam.v/", &self.adam.v)] {
            for (k, t) in moments.iter().enumerate() {
                let name = self.online.store.name(crate::nn::ParamId(k));
                entries.push((format!("{prefix}{name}"), t.clone()));
            }
        }
        Checkpoint {
            version: FORMAT_VERSION,
            step: self.step,
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
            metadata: serde_json::to_string(&meta).expect("metadata serializes"),
            entries,
        }
    }
}

/// Training config stored in a checkpoint's metadata.
pub fn checkpoint_train_config(ck: &Checkpoint) -> Result<TrainConfig, ModelError> {
    let meta: CheckpointMeta =
        serde_json::from_str(&ck.metadata).map_err(|e| ModelError::Metadata(e.to_string()))?;
    Ok(meta.train)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:08}.bin"))
}

pub const METRICS_FILE: &str = "metrics.csv";

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<MetricsRow>,
    /// Checkpoints written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// Runs `steps` training steps. With an output directory the metrics CSV and
/// checkpoints (initial, every `checkpoint_every` steps, final) go there.
pub fn train(
    config: TrainConfig,
    targets: Vec<MolGraph>,
    steps: u64,
    seed: u64,
    out: Option<&Path>,
    mut progress: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config, targets, seed)?;
    let mut checkpoints = Vec::new();
    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let p = checkpoint_path(dir, 0);
            trainer.checkpoint().save(&p)?;
            checkpoints.push(p);
            Some(csv::Writer::from_path(dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    if let Some(w) = writer.as_mut() {
        w.write_record(["step", "lr", "epsilon", "td_loss", "kl", "buffer_size", "idealized_failures"])?;
        w.flush()?;
    }
    let mut metrics = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let row = match trainer.train_step() {
            Ok(r) => r,
            Err(e) => {
                if let (Some(dir), TrainError::NonFinite { .. }) = (out, &e) {
                    // Last good parameters for post-mortem inspection.
                    trainer.checkpoint().save(&dir.join("nonfinite_dump.bin"))?;
                }
                return Err(e);
            }
        };
        if let Some(w) = writer.as_mut() {
            w.serialize(&row)?;
        }
        progress(&row);
        let every = trainer.config.checkpoint_every;
        let last = row.step == steps;
        if let Some(dir) = out {
            if last || (every > 0 && row.step % every == 0) {
                if let Some(w) = writer.as_mut() {
                    w.flush()?;
                }
                let p = checkpoint_path(dir, row.step);
                trainer.checkpoint().save(&p)?;
                checkpoints.push(p);
            }
        }
        metrics.push(row);
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    Ok(TrainOutcome {
        trainer,
        metrics,
        checkpoints,
    })
}
