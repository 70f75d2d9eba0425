//! RL-VAE: a graph-to-graph molecular autoencoder whose decoder is a learned
//! value function over a molecule-editing Markov decision process.

pub mod chem;
pub mod data;
pub mod fingerprints;
pub mod mdp;
pub mod decode;
pub mod editdist;
pub mod experiments;
pub mod nn;
pub mod training;
pub mod model;
