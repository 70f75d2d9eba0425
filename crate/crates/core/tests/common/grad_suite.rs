//! Gradient checks shared by the unit-style tests and the acceptance run.
//! Each function returns the worst relative error for one seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlvae::chem::{parse_smiles, MolGraph};
use rlvae::model::{time_features, Model, ModelConfig, NodeOrder};
use rlvae::nn::{grad_check, GatedReadout, GradCheckReport, GruCell, Linear, ParamStore, Tape, Tensor, Var};

use super::reference::{self, RefParams};

pub const TOL: f64 = 1e-3;
const H: f32 = 2e-2;
const FLOOR: f64 = 1e-2;
const ORACLE_FLOOR: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Σ c ⊙ y with a fixed random `c`, so every output coordinate matters.
fn project(tape: &mut Tape, y: Var, c: &Tensor) -> Var {
    let c = tape.constant(c.clone());
    let p = tape.mul(y, c);
    tape.sum_all(p)
}

fn check(store: &ParamStore, f: &dyn Fn(&mut Tape, &ParamStore) -> Var, seed: u64) -> GradCheckReport {
    let r = grad_check(store, f, 24, H, FLOOR, &mut ChaCha8Rng::seed_from_u64(seed));
    assert!(r.checked > 0);
    r
}

pub fn linear_layer(seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 6, 4, true, &mut rng);
    let x = random(&mut rng, 3, 6);
    let c = random(&mut rng, 3, 4);
    let r = check(
        &store,
        &|t, s| {
            let x = t.constant(x.clone());
            let y = lin.forward(t, s, x);
            project(t, y, &c)
        },
        seed,
    );
    (r.max_rel_error, format!("{r:?}"))
}

pub fn gru_cell(seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let gru = GruCell::new(&mut store, "gru", 5, 5, &mut rng);
    let (h, x, c) = (random(&mut rng, 4, 5), random(&mut rng, 4, 5), random(&mut rng, 4, 5));
    let r = check(
        &store,
        &|t, s| {
            let h = t.constant(h.clone());
            let x = t.constant(x.clone());
            let y = gru.forward(t, s, h, x);
            project(t, y, &c)
        },
        seed,
    );
    (r.max_rel_error, format!("{r:?}"))
}

pub fn gated_readout(seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ro = GatedReadout::new(&mut store, "ro", 5, 3, &mut rng);
    let h = random(&mut rng, 6, 5);
    let c = random(&mut rng, 2, 3);
    let r = check(
        &store,
        &|t, s| {
            let h = t.constant(h.clone());
            let y = ro.forward(t, s, h, vec![0, 0, 1, 1, 1, 0], 2);
            project(t, y, &c)
        },
        seed,
    );
    (r.max_rel_error, format!("{r:?}"))
}

fn small_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        hidden_dim: 8,
        latent_dim: 6,
        state_dim: 6,
        value_hidden: 10,
        ..ModelConfig::default()
    };
    Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn mols(smiles: &[&str]) -> Vec<MolGraph> {
    smiles.iter().map(|s| parse_smiles(s).unwrap()).collect()
}

fn analytic(store: &ParamStore, f: &dyn Fn(&mut Tape) -> Var) -> (f32, Vec<Tensor>) {
    let mut tape = Tape::new();
    let loss = f(&mut tape);
    let g = tape.backward(loss);
    (tape.value(loss).item(), tape.param_grads(&g, store))
}

/// Value head on top of the state encoder, against the f64 reference.
pub fn value_head_through_state_encoder(seed: u64) -> (f64, String) {
    let states = mols(&["CC=O", "C1CC1N", "C#N"]);
    let times = [0usize, 7, 19];
    let m = small_model(seed);
    let cfg = m.config;
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let z = random(&mut rng, 3, cfg.latent_dim);
    let c = random(&mut rng, 3, 1);
    let (loss, grads) = analytic(&m.store, &|t| {
        let refs: Vec<&MolGraph> = states.iter().collect();
        let fs = m.state_forward(t, &refs, NodeOrder::Stored);
        let zv = t.constant(z.clone());
        let tf: Vec<f32> = times.iter().flat_map(|&t| time_features(t, cfg.max_steps)).collect();
        let tv = t.constant(Tensor::matrix(3, 2, tf));
        let v = m.value_forward(t, fs, zv, tv);
        project(t, v, &c)
    });
    let p = RefParams::from_store(&m.store);
    let cf: Vec<f64> = c.data().iter().map(|&x| x as f64).collect();
    let objective = |q: &RefParams| reference::value_objective(q, &cfg, &states, &z, &times, &cf);
    assert!((objective(&p) - loss as f64).abs() < 1e-4, "forward passes disagree");
    reference::compare_gradients(&p, &grads, &objective, 1, ORACLE_FLOOR)
}

/// KL term plus the reparameterized latent through the target encoder.
pub fn kl_and_reparameterized_latent(seed: u64) -> (f64, String) {
    let targets = mols(&["OCC=O", "c1ccoc1"]);
    let m = small_model(seed);
    let cfg = m.config;
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let eta = random(&mut rng, 2, cfg.latent_dim);
    let c = random(&mut rng, 2, cfg.latent_dim);
    let (loss, grads) = analytic(&m.store, &|t| {
        let refs: Vec<&MolGraph> = targets.iter().collect();
        let (mu, ls) = m.target_forward(t, &refs);
        let kl = t.kl_rows(mu, ls);
        let kl = t.sum_all(kl);
        let sigma = t.exp(ls);
        let e = t.constant(eta.clone());
        let noise = t.mul(sigma, e);
        let z = t.add(mu, noise);
        let pz = project(t, z, &c);
        t.add(kl, pz)
    });
    let p = RefParams::from_store(&m.store);
    let objective = |q: &RefParams| reference::kl_objective(q, &cfg, &targets, &eta, &c);
    assert!((objective(&p) - loss as f64).abs() < 1e-3 * (loss.abs() as f64).max(1.0), "forward passes disagree");
    reference::compare_gradients(&p, &grads, &objective, 1, ORACLE_FLOOR)
}
