//! Reconstruction evaluation, the latent perturbation sweep and the
//! two-direction latent grid.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StandardUniform};
use serde::Serialize;
use thiserror::Error;

use crate::chem::{normalized, write_canonical_smiles, ChemError, MolGraph};
use crate::decode::{decode_batch, greedy_decode, ProjectionCache, StateId, StateSpace};
use crate::editdist::mdp_edit_distance_capped;
use crate::fingerprints::{morgan_fingerprint, tanimoto, SimilarityConfig, SparseFingerprint};
use crate::mdp::MdpConfig;
use crate::model::{standard_normal, EmbeddingDistribution, Model, ModelError};

/// Radius of the Morgan fingerprint used for output similarity.
pub const TANIMOTO_RADIUS: u32 = 3;

const DECODE_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("decoded an invalid molecule {smiles}: {source}")]
    InvalidOutput { smiles: String, source: ChemError },
    #[error("need at least {needed} molecules, have {have}")]
    TooFew { needed: usize, have: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse Morgan fingerprint (radius 3) of the normalized graph.
pub fn morgan_r3(g: &MolGraph) -> SparseFingerprint {
    morgan_fingerprint(&normalized(g), TANIMOTO_RADIUS)
}

pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

pub fn euclidean_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Shared decoding context: one interned state space and one projection
/// cache, valid for the lifetime of a fixed model.
pub struct Decoder<'m> {
    pub model: &'m Model,
    pub space: StateSpace,
    cache: ProjectionCache,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m Model, mdp: MdpConfig) -> Self {
        Decoder {
            model,
            space: StateSpace::new(mdp, SimilarityConfig::default()),
            cache: ProjectionCache::new(),
        }
    }

    pub fn encode(&self, graphs: &[&MolGraph]) -> Vec<EmbeddingDistribution> {
        graphs.chunks(DECODE_CHUNK).flat_map(|c| self.model.encode_targets(c)).collect()
    }

    /// Greedy decode of each latent; outputs are validated.
    pub fn greedy(&mut self, latents: &[Vec<f32>]) -> Result<Vec<MolGraph>, ExperimentError> {
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(DECODE_CHUNK) {
            let ids = greedy_decode(self.model, &mut self.space, &mut self.cache, chunk)?;
            for id in ids {
                out.push(self.checked(id)?);
            }
        }
        Ok(out)
    }

    /// ε = 1 episodes: uniformly random legal actions.
    pub fn random_walk(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<MolGraph>, ExperimentError> {
        let dummy = vec![vec![0.0; self.model.config.latent_dim]; n];
        let mut out = Vec::with_capacity(n);
        for chunk in dummy.chunks(DECODE_CHUNK) {
            let eps = decode_batch(self.model, &mut self.space, &mut self.cache, chunk, 1.0, rng)?;
            for e in eps {
                out.push(self.checked(e.last().map_or(0, |s| s.state))?);
            }
        }
        Ok(out)
    }

    fn checked(&self, id: StateId) -> Result<MolGraph, ExperimentError> {
        let g = self.space.graph(id).clone();
        if let Err(source) = g.validate().and_then(|_| if g.is_connected() { Ok(()) } else { Err(ChemError::NotConnected) }) {
            return Err(ExperimentError::InvalidOutput {
                smiles: write_canonical_smiles(&g),
                source,
            });
        }
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    GreedyDecode,
    RandomWalk,
}

impl Policy {
    pub fn parse(s: &str) -> Option<Policy> {
        match s {
            "greedy-decode" | "greedy" => Some(Policy::GreedyDecode),
            "random-walk" | "random" => Some(Policy::RandomWalk),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::GreedyDecode => "greedy-decode",
            Policy::RandomWalk => "random-walk",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub policy: Policy,
    pub seed: u64,
    /// Layer limit of the edit-distance search; 0 skips the search.
    pub edit_max_steps: usize,
    pub edit_max_states: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            policy: Policy::GreedyDecode,
            seed: 0,
            edit_max_steps: 3,
            edit_max_states: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionRow {
    pub id: String,
    pub input_smiles: String,
    pub output_smiles: String,
    pub exact_match: u8,
    pub tanimoto: f64,
    /// Empty when the search hit its limit or was skipped.
    pub edit_distance: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionSummary {
    pub policy: &'static str,
    pub molecules: usize,
    pub exact: usize,
    pub accuracy: f64,
    pub mean_tanimoto: f64,
    pub edit_unreached: usize,
}

/// Encodes each molecule, samples z once from its embedding distribution and
/// decodes greedily (or takes a random walk); scores the output against the
/// input.
pub fn evaluate_reconstruction(
    decoder: &mut Decoder,
    molecules: &[(String, MolGraph)],
    opts: &EvalOptions,
) -> Result<(Vec<ReconstructionRow>, ReconstructionSummary), ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let outputs = match opts.policy {
        Policy::GreedyDecode => {
            let graphs: Vec<&MolGraph> = molecules.iter().map(|(_, g)| g).collect();
            let dists = decoder.encode(&graphs);
            let dim = decoder.model.config.latent_dim;
            let latents: Vec<Vec<f32>> = dists
                .iter()
                .map(|d| d.reparameterize(&standard_normal(dim, &mut rng)))
                .collect();
            decoder.greedy(&latents)?
        }
        Policy::RandomWalk => decoder.random_walk(molecules.len(), &mut rng)?,
    };
    let mut rows = Vec::with_capacity(molecules.len());
    for ((id, input), output) in molecules.iter().zip(&outputs) {
        let (a, b) = (write_canonical_smiles(input), write_canonical_smiles(output));
        let exact = a == b;
        let edit_distance = if exact {
            Some(0)
        } else if opts.edit_max_steps == 0 {
            None
        } else {
            mdp_edit_distance_capped(output, input, opts.edit_max_steps, opts.edit_max_states).distance
        };
        rows.push(ReconstructionRow {
            id: id.clone(),
            input_smiles: a,
            output_smiles: b,
            exact_match: exact as u8,
            tanimoto: if exact { 1.0 } else { tanimoto(&morgan_r3(input), &morgan_r3(output)) },
            edit_distance,
        });
    }
    let exact = rows.iter().filter(|r| r.exact_match == 1).count();
    let n = rows.len().max(1) as f64;
    let summary = ReconstructionSummary {
        policy: opts.policy.as_str(),
        molecules: rows.len(),
        exact,
        accuracy: exact as f64 / n,
        mean_tanimoto: rows.iter().map(|r| r.tanimoto).sum::<f64>() / n,
        edit_unreached: rows.iter().filter(|r| r.edit_distance.is_none()).count(),
    };
    Ok((rows, summary))
}

/// `n` molecules drawn without replacement at a fixed seed, in draw order.
pub fn choose_starts<T: Clone>(pool: &[T], n: usize, seed: u64) -> Result<Vec<T>, ExperimentError> {
    if pool.len() < n {
        return Err(ExperimentError::TooFew {
            needed: n,
            have: pool.len(),
        });
    }
    Ok(sample(&mut ChaCha8Rng::seed_from_u64(seed), pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// −5.0 … 5.0 in steps of 0.1 without 0.0: 100 values.
pub fn sweep_factors() -> Vec<f64> {
    (-50i32..=50).filter(|&k| k != 0).map(|k| k as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub seed: u64,
    pub factors: Vec<f64>,
    pub repeats: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            seed: 0,
            factors: sweep_factors(),
            repeats: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub start_id: String,
    pub factor: f64,
    pub repeat: usize,
    pub cosine_distance: f64,
    pub euclidean_distance: f64,
    pub tanimoto_morgan_r3: f64,
    pub output_smiles: String,
}

/// Decodes z0 + factor · u for every start, factor and repeat, where z0 is
/// the start's mean embedding and u ∈ [0, 1)^L is drawn once per
/// (start, repeat). Rows are ordered by start, factor, repeat.
pub fn perturb_sweep(
    decoder: &mut Decoder,
    starts: &[(String, MolGraph)],
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>, ExperimentError> {
    let dim = decoder.model.config.latent_dim;
    let graphs: Vec<&MolGraph> = starts.iter().map(|(_, g)| g).collect();
    let z0: Vec<Vec<f32>> = decoder.encode(&graphs).into_iter().map(|d| d.mu).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let u: Vec<Vec<Vec<f32>>> = starts
        .iter()
        .map(|_| {
            (0..opts.repeats)
                .map(|_| (0..dim).map(|_| StandardUniform.sample(&mut rng)).collect())
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(starts.len() * opts.factors.len() * opts.repeats);
    for (s, (id, start)) in starts.iter().enumerate() {
        let fp = morgan_r3(start);
        let mut latents = Vec::with_capacity(opts.factors.len() * opts.repeats);
        let mut keys = Vec::with_capacity(latents.capacity());
        for &f in &opts.factors {
            for (r, ur) in u[s].iter().enumerate() {
                latents.push(z0[s].iter().zip(ur).map(|(&a, &b)| a + f as f32 * b).collect::<Vec<f32>>());
                keys.push((f, r));
            }
        }
        let outputs = decoder.greedy(&latents)?;
        let mut fps = std::collections::HashMap::new();
        for ((z, (f, r)), out) in latents.iter().zip(keys).zip(outputs) {
            let smiles = write_canonical_smiles(&out);
            let sim = *fps.entry(smiles.clone()).or_insert_with(|| tanimoto(&fp, &morgan_r3(&out)));
            rows.push(SweepRow {
                start_id: id.clone(),
                factor: f,
                repeat: r,
                cosine_distance: cosine_distance(&z0[s], z),
                euclidean_distance: euclidean_distance(&z0[s], z),
                tanimoto_morgan_r3: sim,
                output_smiles: smiles,
            });
        }
    }
    Ok(rows)
}

/// Median Tanimoto in each of `bins` equal-count bins of rows sorted by
/// cosine distance.
pub fn binned_median_tanimoto(rows: &[SweepRow], bins: usize) -> Vec<f64> {
    let mut pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.cosine_distance, r.tanimoto_morgan_r3)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len();
    (0..bins)
        .map(|b| {
            let mut v: Vec<f64> = pairs[b * n / bins..(b + 1) * n / bins].iter().map(|p| p.1).collect();
            v.sort_by(f64::total_cmp);
            match v.len() {
                0 => f64::NAN,
                m if m % 2 == 1 => v[m / 2],
                m => (v[m / 2 - 1] + v[m / 2]) / 2.0,
            }
        })
        .collect()
}

/// Adjacent pairs where the sequence increases.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

pub const GRID_COEFFS: [f64; 11] = [-20.0, -16.0, -12.0, -8.0, -4.0, 0.0, 4.0, 8.0, 12.0, 16.0, 20.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub i: usize,
    pub j: usize,
    pub coeff_a: f64,
    pub coeff_b: f64,
    pub smiles: String,
}

/// Two orthonormal directions from Gram–Schmidt on two Gaussian draws.
pub fn orthonormal_pair(dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a = draw();
    let na = norm(&a);
    let a: Vec<f64> = a.iter().map(|x| x / na).collect();
    let b = draw();
    let d: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let b: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y - d * x).collect();
    let nb = norm(&b);
    (a, b.iter().map(|x| x / nb).collect())
}

/// Greedy decodes over the 11 × 11 grid z0 + a · d1 + b · d2 with z0 the
/// start's mean embedding. Rows are ordered by i, then j.
pub fn explore_grid(decoder: &mut Decoder, start: &MolGraph, seed: u64) -> Result<Vec<GridRow>, ExperimentError> {
    let dim = decoder.model.config.latent_dim;
    let z0 = decoder.encode(&[start]).pop().expect("one embedding").mu;
    let (da, db) = orthonormal_pair(dim, seed);
    let mut latents = Vec::with_capacity(121);
    let mut keys = Vec::with_capacity(121);
    for (i, &a) in GRID_COEFFS.iter().enumerate() {
        for (j, &b) in GRID_COEFFS.iter().enumerate() {
            latents.push((0..dim).map(|k| (z0[k] as f64 + a * da[k] + b * db[k]) as f32).collect());
            keys.push((i, j, a, b));
        }
    }
    let outputs = decoder.greedy(&latents)?;
    Ok(keys
        .into_iter()
        .zip(outputs)
        .map(|((i, j, a, b), g)| GridRow {
            i,
            j,
            coeff_a: a,
            coeff_b: b,
            smiles: write_canonical_smiles(&g),
        })
        .collect())
}

/// Writes serializable rows with a header.
pub fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::model::ModelConfig;

    fn setup() -> Model {
        Model::new(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(4))
    }

    fn mdp() -> MdpConfig {
        MdpConfig {
            max_heavy_atoms: Some(5),
            ..MdpConfig::decoder()
        }
    }

    fn mols(s: &[&str]) -> Vec<(String, MolGraph)> {
        s.iter().enumerate().map(|(k, x)| (format!("m{k}"), parse_smiles(x).unwrap())).collect()
    }

    #[test]
    fn factors_and_distances() {
        let f = sweep_factors();
        assert_eq!(f.len(), 100);
        assert!(!f.contains(&0.0));
        assert_eq!((f[0], f[99]), (-5.0, 5.0));
        let z = [0.5f32, -1.0, 2.0];
        assert!(cosine_distance(&z, &z).abs() < 1e-12);
        assert_eq!(euclidean_distance(&z, &z), 0.0);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn directions_are_orthonormal() {
        let (a, b) = orthonormal_pair(32, 9);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot.abs() < 1e-6);
        assert!((n(&a) - 1.0).abs() < 1e-9 && (n(&b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_center_is_the_mean_decode() {
        let model = setup();
        let mut dec = Decoder::new(&model, mdp());
        let start = parse_smiles("CCO").unwrap();
        let rows = explore_grid(&mut dec, &start, 1).unwrap();
        assert_eq!(rows.len(), 121);
        let mu = dec.encode(&[&start]).pop().unwrap().mu;
        let center = dec.greedy(&[mu]).unwrap().pop().unwrap();
        let c = rows.iter().find(|r| r.coeff_a == 0.0 && r.coeff_b == 0.0).unwrap();
        assert_eq!(c.smiles, write_canonical_smiles(&center));
    }

    #[test]
    fn exact_match_rows_are_consistent() {
        let model = setup();
        let mut dec = Decoder::new(&model, mdp());
        let ms = mols(&["C", "CC", "CO", "C=O", "N", "CCO"]);
        for policy in [Policy::GreedyDecode, Policy::RandomWalk] {
            let opts = EvalOptions {
                policy,
                ..EvalOptions::default()
            };
            let (rows, summary) = evaluate_reconstruction(&mut dec, &ms, &opts).unwrap();
            assert_eq!(rows.len(), 6);
            for r in &rows {
                if r.exact_match == 1 {
                    assert_eq!((r.tanimoto, r.edit_distance), (1.0, Some(0)));
                } else {
                    assert_ne!(r.edit_distance, Some(0));
                }
            }
            assert_eq!(summary.exact, rows.iter().filter(|r| r.exact_match == 1).count());
        }
    }

    #[test]
    fn small_sweep_is_ordered_and_repeatable() {
        let model = setup();
        let starts = mols(&["CCO", "C1CC1"]);
        let opts = SweepOptions {
            seed: 5,
            factors: vec![-1.0, 0.5, 2.0],
            repeats: 4,
        };
        let a = perturb_sweep(&mut Decoder::new(&model, mdp()), &starts, &opts).unwrap();
        let b = perturb_sweep(&mut Decoder::new(&model, mdp()), &starts, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
        let keys: Vec<(String, i64, usize)> = a.iter().map(|r| (r.start_id.clone(), (r.factor * 10.0) as i64, r.repeat)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn binning_and_inversions() {
        let rows: Vec<SweepRow> = (0..100)
            .map(|k| SweepRow {
                start_id: "s".into(),
                factor: 1.0,
                repeat: k,
                cosine_distance: k as f64,
                euclidean_distance: 0.0,
                tanimoto_morgan_r3: 1.0 - k as f64 / 100.0,
                output_smiles: String::new(),
            })
            .collect();
        let m = binned_median_tanimoto(&rows, 10);
        assert_eq!(m.len(), 10);
        assert_eq!(inversions(&m), 0);
        assert!((m[0] - 0.955).abs() < 1e-12);
        assert_eq!(inversions(&[3.0, 2.0, 2.5, 1.0, 1.5]), 2);
    }
}
