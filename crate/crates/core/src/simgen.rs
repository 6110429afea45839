//! Simulation design: block-correlated Gaussian covariates and a Gamma
//! mixture response.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{sample_gamma, Dataset, GammaParams, ParameterSet};

/// A partition of covariate indices (0-based) into disjoint blocks.
pub type Partition = Vec<Vec<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub block_sizes: Vec<usize>,
    /// Within-block correlation.
    pub varrho: f64,
    /// Diagonal covariance entry.
    pub var: f64,
    pub truth: ParameterSet,
    pub seed: u64,
}

impl SimConfig {
    /// Two-component design with ten covariates in two blocks of five.
    pub fn reference(n: usize, varrho: f64, seed: u64) -> Self {
        Self {
            n,
            p: 10,
            block_sizes: vec![5, 5],
            varrho,
            var: 0.04,
            truth: reference_truth(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n: must be at least 1".into()));
        }
        if self.p == 0 {
            return Err(Error::Config("p: must be at least 1".into()));
        }
        if self.block_sizes.contains(&0) {
            return Err(Error::Config("block_sizes: blocks must be nonempty".into()));
        }
        if self.block_sizes.iter().sum::<usize>() != self.p {
            return Err(Error::Config(format!(
                "block_sizes: sizes sum to {} but p = {}",
                self.block_sizes.iter().sum::<usize>(),
                self.p
            )));
        }
        if !(0.0..1.0).contains(&self.varrho) {
            return Err(Error::Config(format!("varrho: must lie in [0, 1), got {}", self.varrho)));
        }
        if !(self.var > 0.0 && self.var.is_finite()) {
            return Err(Error::Config(format!("var: must be positive, got {}", self.var)));
        }
        self.truth.validate()?;
        if self.truth.n_covariates() != self.p {
            return Err(Error::Config(format!(
                "truth: has {} covariates but p = {}",
                self.truth.n_covariates(),
                self.p
            )));
        }
        Ok(())
    }

    /// Block-diagonal covariance: `var` on the diagonal, `var * varrho`
    /// within blocks, zero across blocks.
    pub fn covariance(&self) -> DMatrix<f64> {
        let block = self.block_of();
        DMatrix::from_fn(self.p, self.p, |j, k| {
            if j == k {
                self.var
            } else if block[j] == block[k] {
                self.var * self.varrho
            } else {
                0.0
            }
        })
    }

    fn block_of(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
            .collect()
    }

    pub fn partition(&self) -> Partition {
        let mut start = 0;
        self.block_sizes
            .iter()
            .map(|&size| {
                let block = (start..start + size).collect();
                start += size;
                block
            })
            .collect()
    }
}

/// Weights (0.7, 0.3), intercepts (1, 2), coefficient blocks
/// (-0.1 x5, -0.2 x5) and (0.1 x5, 0.2 x5), dispersions (0.2, 0.1).
pub fn reference_truth() -> ParameterSet {
    let mut coefficients = DMatrix::zeros(10, 2);
    for j in 0..10 {
        let magnitude = if j < 5 { 0.1 } else { 0.2 };
        coefficients[(j, 0)] = -magnitude;
        coefficients[(j, 1)] = magnitude;
    }
    ParameterSet::new(
        DVector::from_vec(vec![0.7, 0.3]),
        DVector::from_vec(vec![1.0, 2.0]),
        coefficients,
        DVector::from_vec(vec![0.2, 0.1]),
    )
    .expect("reference truth is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    /// Generating component of each observation (0-based).
    pub labels: Vec<usize>,
    pub truth_partition: Partition,
}

/// Draws one dataset. Each observation draws its covariate row, then a
/// uniform `u` that selects the first component whose cumulative weight
/// exceeds it, then the response from that component.
pub fn generate(cfg: &SimConfig) -> Result<Simulated> {
    cfg.validate()?;
    let chol = cfg
        .covariance()
        .cholesky()
        .ok_or_else(|| Error::Domain("covariance matrix is not positive definite".into()))?;
    let lower = chol.l();
    let truth = &cfg.truth;
    let h = truth.n_components();
    let cumulative: Vec<f64> = truth
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut design = DMatrix::zeros(cfg.n, cfg.p);
    let mut responses = DVector::zeros(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    let mut std_normal = DVector::zeros(cfg.p);
    for i in 0..cfg.n {
        for v in std_normal.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = &lower * &std_normal;
        design.row_mut(i).copy_from(&x.transpose());
        let u: f64 = rng.random();
        let c = cumulative.iter().position(|&cw| u < cw).unwrap_or(h - 1);
        let mu = truth.component_mean(c, x.as_slice())?;
        let y = sample_gamma(&mut rng, &GammaParams::new(mu, truth.dispersions[c])?);
        responses[i] = y.max(f64::MIN_POSITIVE);
        labels.push(c);
    }
    Ok(Simulated {
        data: Dataset::unnamed(responses, design)?,
        labels,
        truth_partition: cfg.partition(),
    })
}

/// Independent seed for replication `index` of a run seeded by `base`
/// (SplitMix64 over the pair).
pub fn replication_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
