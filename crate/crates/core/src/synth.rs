//! Synthetic stochastic block model with latent geometry and informative features.
//!
//! Each node gets a community and a latent point on the unit sphere. An edge
//! `{u, v}` appears with probability `p_block · exp(−‖z_u − z_v‖² / (2τ²))`,
//! where `p_block` is `p_in` within a community and `p_out` across. Features
//! are `[one_hot(community), z, nuisance]` plus Gaussian noise, where the
//! nuisance block is pure unit-variance noise. Train and test edge sets are
//! independent draws over the same nodes and features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Features, Graph};
use crate::kv::KvDoc;

pub const LATENT_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SbmConfig {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_noise: f64,
    /// Uninformative standard-normal feature columns appended to each row.
    pub nuisance_dims: usize,
    /// Length scale of the latent kernel.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes: 200,
            communities: 2,
            p_in: 1.0,
            p_out: 0.05,
            feature_noise: 0.1,
            nuisance_dims: 4,
            tau: 0.3,
            seed: 7,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::arg("SBM needs at least 2 nodes"));
        }
        if self.communities == 0 || self.communities > self.nodes {
            return Err(Error::arg(format!(
                "communities must lie in 1..={}, got {}",
                self.nodes, self.communities
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::arg(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::arg("feature noise must be finite and >= 0"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::arg("tau must be positive"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.communities + LATENT_DIM + self.nuisance_dims
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut kv = KvDoc::new();
        kv.push("nodes", self.nodes)
            .push("communities", self.communities)
            .push("p_in", self.p_in)
            .push("p_out", self.p_out)
            .push("feature_noise", self.feature_noise)
            .push("nuisance_dims", self.nuisance_dims)
            .push("tau", self.tau)
            .push("seed", self.seed);
        kv
    }
}

#[derive(Clone, Debug)]
pub struct SbmDataset {
    pub train: Graph,
    pub test: Graph,
    pub community: Vec<usize>,
    pub latent: Vec<[f64; LATENT_DIM]>,
}

fn unit_sphere<R: Rng>(rng: &mut R) -> [f64; LATENT_DIM] {
    loop {
        let mut z = [0.0; LATENT_DIM];
        for c in &mut z {
            *c = rng.sample(StandardNormal);
        }
        let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r > 1e-12 {
            return z.map(|x| x / r);
        }
    }
}

fn draw_edges<R: Rng>(
    cfg: &SbmConfig,
    community: &[usize],
    latent: &[[f64; LATENT_DIM]],
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for u in 0..cfg.nodes {
        for v in u + 1..cfg.nodes {
            let p = if community[u] == community[v] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            let d2: f64 = latent[u].iter().zip(&latent[v]).map(|(a, b)| (a - b) * (a - b)).sum();
            let prob = p * (-d2 / (2.0 * cfg.tau * cfg.tau)).exp();
            if rng.random::<f64>() < prob {
                pairs.push((u, v));
            }
        }
    }
    pairs
}

pub fn generate(cfg: &SbmConfig) -> Result<SbmDataset> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    // balanced communities, assigned round-robin
    let community: Vec<usize> = (0..cfg.nodes).map(|i| i % cfg.communities).collect();
    let latent: Vec<[f64; LATENT_DIM]> = (0..cfg.nodes).map(|_| unit_sphere(&mut rng)).collect();

    let dim = cfg.feature_dim();
    let noise = cfg.feature_noise;
    let mut data = Vec::with_capacity(cfg.nodes * dim);
    for (c, z) in community.iter().zip(&latent) {
        let mut row = vec![0.0; dim];
        row[*c] = 1.0;
        row[cfg.communities..cfg.communities + LATENT_DIM].copy_from_slice(z);
        for (j, x) in row.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *x += if j < cfg.communities + LATENT_DIM { noise * e } else { e };
        }
        data.extend(row);
    }
    let features = Features::new(cfg.nodes, dim, data)?;

    let train_pairs = draw_edges(cfg, &community, &latent, &mut rng);
    let test_pairs = draw_edges(cfg, &community, &latent, &mut rng);
    let train = Graph::from_pairs(cfg.nodes, &train_pairs)?.with_features(features.clone())?;
    let test = Graph::from_pairs(cfg.nodes, &test_pairs)?.with_features(features)?;
    Ok(SbmDataset {
        train,
        test,
        community,
        latent,
    })
}
