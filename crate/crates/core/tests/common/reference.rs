//! Independent f64 forward pass of the model, written from the layer
//! equations and read off named parameters. Central differences of these
//! objectives are the oracle for the f32 reverse-mode gradients.

use std::collections::BTreeMap;

use rlvae::chem::{normalized, MolGraph};
use rlvae::model::{time_features, ModelConfig};
use rlvae::nn::{ParamStore, Tensor};

#[derive(Clone)]
pub struct RefParams {
    pub order: Vec<String>,
    pub map: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl RefParams {
    pub fn from_store(store: &ParamStore) -> Self {
        let mut order = Vec::new();
        let mut map = BTreeMap::new();
        for (n, t) in store.iter() {
            order.push(n.to_string());
            map.insert(n.to_string(), (t.shape().to_vec(), t.data().iter().map(|&x| x as f64).collect()));
        }
        RefParams { order, map }
    }

    fn w(&self, name: &str) -> &[f64] {
        &self.map.get(name).unwrap_or_else(|| panic!("no parameter {name}")).1
    }

    fn has(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn set(&mut self, name: &str, i: usize, v: f64) {
        self.map.get_mut(name).unwrap().1[i] = v;
    }

    pub fn at(&self, name: &str, i: usize) -> f64 {
        self.w(name)[i]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// x (len n) · W (n×m) + b.
fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, m: usize) -> Vec<f64> {
    let mut out = b.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
    for (k, &xk) in x.iter().enumerate() {
        for j in 0..m {
            out[j] += xk * w[k * m + j];
        }
    }
    out
}

fn linear(p: &RefParams, name: &str, x: &[f64], m: usize) -> Vec<f64> {
    let bias = format!("{name}.bias");
    let b = if p.has(&bias) { Some(p.w(&bias)) } else { None };
    affine(x, p.w(&format!("{name}.weight")), b, m)
}

/// Readouts of one graph, one vector per head.
pub fn encoder(p: &RefParams, prefix: &str, g: &MolGraph, cfg: &ModelConfig, heads: &[(&str, usize)]) -> Vec<Vec<f64>> {
    let d = cfg.hidden_dim;
    let n = g.atom_count();
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let mut x = vec![0.0; 5];
            x[g.element(a).index()] = 1.0;
            linear(p, &format!("{prefix}.node_in"), &x, d)
        })
        .collect();
    let edge = |order: usize| {
        let mut x = vec![0.0; 4];
        x[order] = 1.0;
        linear(p, &format!("{prefix}.edge_in"), &x, d)
    };
    for r in 0..cfg.rounds {
        let mut msg = vec![vec![0.0; d]; n];
        for b in g.bonds() {
            let e = edge(b.order.index());
            for k in 0..d {
                msg[b.j][k] += h[b.i][k] + e[k];
                msg[b.i][k] += h[b.j][k] + e[k];
            }
        }
        let name = format!("{prefix}.round{r}");
        h = (0..n)
            .map(|v| {
                let gx = linear(p, &format!("{name}.input"), &msg[v], 3 * d);
                let gh = linear(p, &format!("{name}.hidden"), &h[v], 3 * d);
                (0..d)
                    .map(|k| {
                        let r = sigmoid(gx[k] + gh[k]);
                        let u = sigmoid(gx[d + k] + gh[d + k]);
                        let c = (gx[2 * d + k] + r * gh[2 * d + k]).tanh();
                        u * h[v][k] + (1.0 - u) * c
                    })
                    .collect()
            })
            .collect();
    }
    heads
        .iter()
        .map(|(head, width)| {
            let mut out = vec![0.0; *width];
            for hv in &h {
                let gate = linear(p, &format!("{prefix}.{head}.gate"), hv, *width);
                let val = linear(p, &format!("{prefix}.{head}.value"), hv, *width);
                for k in 0..*width {
                    out[k] += sigmoid(gate[k]) * val[k];
                }
            }
            out
        })
        .collect()
}

/// (μ, clamped log σ) of a target.
pub fn target_distribution(p: &RefParams, g: &MolGraph, cfg: &ModelConfig) -> (Vec<f64>, Vec<f64>) {
    let heads = [("mu", cfg.latent_dim), ("log_sigma", cfg.latent_dim)];
    let mut out = encoder(p, "target", &normalized(g), cfg, &heads);
    let c = cfg.log_sigma_clamp as f64;
    let ls = out.pop().unwrap().into_iter().map(|x| x.clamp(-c, c)).collect();
    (out.pop().unwrap(), ls)
}

pub fn state_embedding(p: &RefParams, g: &MolGraph, cfg: &ModelConfig) -> Vec<f64> {
    encoder(p, "state", g, cfg, &[("readout", cfg.state_dim)]).pop().unwrap()
}

pub fn value(p: &RefParams, fs: &[f64], z: &[f64], t: usize, cfg: &ModelConfig) -> f64 {
    let hd = cfg.value_hidden;
    let tf: Vec<f64> = time_features(t, cfg.max_steps).iter().map(|&x| x as f64).collect();
    let a = affine(fs, p.w("value.state.weight"), None, hd);
    let b = affine(z, p.w("value.latent.weight"), None, hd);
    let c = affine(&tf, p.w("value.time.weight"), Some(p.w("value.hidden.bias")), hd);
    let hidden: Vec<f64> = (0..hd).map(|k| (a[k] + b[k] + c[k]).max(0.0)).collect();
    linear(p, "value.out", &hidden, 1)[0]
}

/// Σ_targets [KL(μ, σ) + c · (μ + σ ⊙ η)].
pub fn kl_objective(p: &RefParams, cfg: &ModelConfig, targets: &[MolGraph], eta: &Tensor, c: &Tensor) -> f64 {
    let mut total = 0.0;
    for (r, g) in targets.iter().enumerate() {
        let (mu, ls) = target_distribution(p, g, cfg);
        for k in 0..mu.len() {
            total += 0.5 * (mu[k] * mu[k] + (2.0 * ls[k]).exp() - 1.0 - 2.0 * ls[k]);
            let z = mu[k] + ls[k].exp() * eta.row(r)[k] as f64;
            total += c.row(r)[k] as f64 * z;
        }
    }
    total
}

/// Σᵢ cᵢ · V(statesᵢ, zᵢ, tᵢ).
pub fn value_objective(
    p: &RefParams,
    cfg: &ModelConfig,
    states: &[MolGraph],
    z: &Tensor,
    times: &[usize],
    c: &[f64],
) -> f64 {
    states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let fs = state_embedding(p, s, cfg);
            let zi: Vec<f64> = z.row(i).iter().map(|&x| x as f64).collect();
            c[i] * value(p, &fs, &zi, times[i], cfg)
        })
        .sum()
}

/// Max relative error |a − n| / max(|a|, |n|, floor) between f32 analytic
/// gradients and f64 central differences of `objective`, over every
/// coordinate (or `probe_every`-th coordinate) of every parameter.
pub fn compare_gradients(
    p: &RefParams,
    analytic: &[Tensor],
    objective: &dyn Fn(&RefParams) -> f64,
    probe_every: usize,
    floor: f64,
) -> (f64, String) {
    let h = 1e-6;
    let mut probe = p.clone();
    let mut worst = (0.0, String::new());
    for (k, name) in p.order.iter().enumerate() {
        let n = p.map[name].1.len();
        for i in (0..n).step_by(probe_every) {
            let orig = p.at(name, i);
            probe.set(name, i, orig + h);
            let plus = objective(&probe);
            probe.set(name, i, orig - h);
            let minus = objective(&probe);
            probe.set(name, i, orig);
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k].data()[i] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]: analytic {a} numeric {numeric}"));
            }
        }
    }
    worst
}
