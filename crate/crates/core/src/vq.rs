//! Vector quantization: codebooks, nearest-neighbour lookup, EMA codebook
//! updates, dead-code resets and the VQ-VAE loss terms.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

/// Default usage threshold below which a code is considered dead.
pub const DEFAULT_RESET_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Array2<f64>,
    usage: Vec<f64>,
    decay: f64,
    reset_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    pub index: usize,
    pub vector: Array1<f64>,
    /// Euclidean (not squared) distance to the selected code.
    pub distance: f64,
}

/// Outcome of [`Codebook::reset_dead_codes`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResetReport {
    pub reset: Vec<usize>,
    /// Dead codes that could not be reset because the batch was empty.
    pub deferred: Vec<usize>,
}

impl Codebook {
    /// Builds a codebook with every usage count set to 1.
    pub fn new(vectors: Array2<f64>, decay: f64, reset_threshold: f64) -> Result<Self> {
        let k = vectors.nrows();
        Self::with_usage(vectors, vec![1.0; k], decay, reset_threshold)
    }

    pub fn with_usage(
        vectors: Array2<f64>,
        usage: Vec<f64>,
        decay: f64,
        reset_threshold: f64,
    ) -> Result<Self> {
        let (k, d) = vectors.dim();
        if k < 2 || d < 1 {
            return Err(Error::InvalidArgument(format!(
                "codebook needs K ≥ 2 and D ≥ 1, got K={k}, D={d}"
            )));
        }
        if usage.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: usage.len(),
            });
        }
        if !vectors.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("codebook vectors must be finite".into()));
        }
        if !usage.iter().all(|c| c.is_finite() && *c >= 0.0) {
            return Err(Error::InvalidArgument(
                "usage counts must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("EMA decay {decay} outside [0, 1]")));
        }
        if !(reset_threshold > 0.0) {
            return Err(Error::InvalidArgument("reset threshold must be positive".into()));
        }
        Ok(Self {
            vectors,
            usage,
            decay,
            reset_threshold,
        })
    }

    pub fn size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(k)
    }

    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn reset_threshold(&self) -> f64 {
        self.reset_threshold
    }

    /// Nearest code by Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, latent: ArrayView1<'_, f64>) -> Result<QuantizationResult> {
        let index = self.nearest(latent)?;
        let row = self.vectors.row(index);
        let sq: f64 = row.iter().zip(latent).map(|(z, e)| (e - z) * (e - z)).sum();
        Ok(QuantizationResult {
            index,
            vector: row.to_owned(),
            distance: sq.sqrt(),
        })
    }

    pub fn nearest(&self, latent: ArrayView1<'_, f64>) -> Result<usize> {
        if latent.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: latent.len(),
            });
        }
        let mut best = 0;
        let mut best_sq = f64::INFINITY;
        for (k, row) in self.vectors.outer_iter().enumerate() {
            let sq: f64 = row.iter().zip(latent).map(|(z, e)| (e - z) * (e - z)).sum();
            if sq < best_sq {
                best_sq = sq;
                best = k;
            }
        }
        Ok(best)
    }

    /// EMA update of counts and vectors from one batch.
    ///
    /// `c_k ← λc_k + (1−λ)n_k`, then, dividing by the refreshed count,
    /// `z_k ← (λ·c_k_old·z_k + (1−λ)·Σ e_i) / c_k` over the latents assigned
    /// to `k`. The new vector is a convex combination of the old one and
    /// the assigned latents.
    pub fn ema_update(&mut self, latents: ArrayView2<'_, f64>, assignments: &[usize]) -> Result<()> {
        if latents.nrows() != assignments.len() {
            return Err(Error::DimensionMismatch {
                expected: latents.nrows(),
                found: assignments.len(),
            });
        }
        if assignments.is_empty() {
            return Ok(());
        }
        if latents.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: latents.ncols(),
            });
        }
        let k = self.size();
        let mut counts = vec![0u64; k];
        let mut sums = Array2::<f64>::zeros((k, self.dim()));
        for (row, &a) in latents.outer_iter().zip(assignments) {
            if a >= k {
                return Err(Error::InvalidArgument(format!("assignment {a} outside codebook")));
            }
            counts[a] += 1;
            sums.row_mut(a).scaled_add(1.0, &row);
        }
        let lambda = self.decay;
        for code in 0..k {
            let old = self.usage[code];
            self.usage[code] = lambda * old + (1.0 - lambda) * counts[code] as f64;
            if counts[code] == 0 {
                continue;
            }
            let keep = lambda * old / self.usage[code];
            let scale = (1.0 - lambda) / self.usage[code];
            let sum = sums.row(code);
            let mut z = self.vectors.row_mut(code);
            z.mapv_inplace(|v| keep * v);
            z.scaled_add(scale, &sum);
        }
        Ok(())
    }

    /// Re-seeds every code with `c_k < c_min` from a uniformly chosen batch
    /// latent and resets its count to 1. Codes are visited in index order.
    pub fn reset_dead_codes<R: Rng + ?Sized>(
        &mut self,
        latents: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<ResetReport> {
        let dead: Vec<usize> = (0..self.size())
            .filter(|&k| self.usage[k] < self.reset_threshold)
            .collect();
        let mut report = ResetReport::default();
        if dead.is_empty() {
            return Ok(report);
        }
        if latents.nrows() == 0 {
            report.deferred = dead;
            return Ok(report);
        }
        if latents.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: latents.ncols(),
            });
        }
        for k in dead {
            let j = rng.random_range(0..latents.nrows());
            self.vectors.row_mut(k).assign(&latents.row(j));
            self.usage[k] = 1.0;
            report.reset.push(k);
        }
        Ok(report)
    }

    /// Shannon entropy (nats) of the normalized usage counts.
    pub fn usage_entropy(&self) -> f64 {
        entropy(&self.usage)
    }

    pub(crate) fn parts(&self) -> (&Array2<f64>, &[f64], f64, f64) {
        (&self.vectors, &self.usage, self.decay, self.reset_threshold)
    }
}

/// Entropy in nats of a non-negative weight vector (normalized internally).
pub fn entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum()
}

/// The individual VQ-VAE loss terms of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLossTerms {
    pub reconstruction: f64,
    /// Only used when the codebook is trained by gradient instead of EMA.
    pub codebook: Option<f64>,
    pub commitment: f64,
    pub beta: f64,
}

impl VqLossTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.codebook.unwrap_or(0.0) + self.beta * self.commitment
    }
}

/// Total loss in EMA mode, where the codebook term is dropped.
pub fn combine_losses(reconstruction: f64, commitment: f64, beta: f64) -> f64 {
    debug_assert!(commitment >= 0.0);
    reconstruction + beta * commitment
}

/// Commitment loss `‖e − sg(z)‖²` and its gradient with respect to `e`.
pub fn commitment_loss(latent: ArrayView1<'_, f64>, quantized: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
    let diff = &latent - &quantized;
    (diff.dot(&diff), diff * 2.0)
}

/// Codebook loss `‖sg(e) − z‖²` and its gradient with respect to `z`.
pub fn codebook_loss(latent: ArrayView1<'_, f64>, quantized: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
    let diff = &quantized - &latent;
    (diff.dot(&diff), diff * 2.0)
}

/// Straight-through estimator: the forward pass emits the quantized vector,
/// the backward pass hands the upstream gradient to the latent unchanged.
#[derive(Debug, Clone)]
pub struct StraightThrough {
    forward: Array1<f64>,
}

impl StraightThrough {
    pub fn new(latent: ArrayView1<'_, f64>, quantized: ArrayView1<'_, f64>) -> Result<Self> {
        if latent.len() != quantized.len() {
            return Err(Error::DimensionMismatch {
                expected: latent.len(),
                found: quantized.len(),
            });
        }
        Ok(Self {
            forward: quantized.to_owned(),
        })
    }

    pub fn forward(&self) -> ArrayView1<'_, f64> {
        self.forward.view()
    }

    /// Gradient with respect to the latent. The codebook receives nothing.
    pub fn backward(&self, upstream: ArrayView1<'_, f64>) -> Array1<f64> {
        upstream.to_owned()
    }
}
