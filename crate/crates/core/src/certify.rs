//! Certificates over a [`GradientBox`]: witness constructions, similarity
//! bounds and per-input verdicts, plus top-k and bias-score primitives for
//! tabular attribution checks.
//!
//! A `false` verdict means "unknown", never "attack exists".

use alloc::format;

use crate::error::{Error, Result};
use crate::interval::GradientBox;
use crate::math;
use crate::tensor::Tensor;

/// Dissimilarity `h` used to compare explanations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Similarity {
    /// Mean squared error.
    #[default]
    Mse,
    /// `1 - cos(v, v')`.
    Cosine,
}

impl Similarity {
    pub fn name(self) -> &'static str {
        match self {
            Similarity::Mse => "mse",
            Similarity::Cosine => "cosine",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mse" => Some(Similarity::Mse),
            "cosine" => Some(Similarity::Cosine),
            _ => None,
        }
    }

    /// `h(a, b)`.
    pub fn distance(self, a: &Tensor, b: &Tensor) -> Result<f64> {
        match self {
            Similarity::Mse => mse(a, b),
            Similarity::Cosine => Ok(1.0 - cosine(a, b)?),
        }
    }
}

/// Adversary goal for a targeted attack.
///
/// `scale` multiplies every explanation (and box) before comparison with
/// `v_targ`; it lets targets of fixed magnitude be compared against
/// explanations of arbitrary magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub v_targ: Tensor,
    pub tau: f64,
    pub similarity: Similarity,
    pub scale: f64,
}

impl TargetSpec {
    pub fn new(v_targ: Tensor, tau: f64, similarity: Similarity) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::contract(format!("threshold must be non-negative, got {tau}")));
        }
        if similarity == Similarity::Cosine && v_targ.l2_norm() == 0.0 {
            return Err(Error::contract("cosine target must be non-zero"));
        }
        Ok(TargetSpec { v_targ, tau, similarity, scale: 1.0 })
    }

    pub fn mse(v_targ: Tensor, tau: f64) -> Result<Self> {
        Self::new(v_targ, tau, Similarity::Mse)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::contract(format!("explanation scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    /// Targeted success test for a (raw, unscaled) explanation.
    pub fn is_met_by(&self, v: &Tensor) -> Result<bool> {
        Ok(self.similarity.distance(&v.scale(self.scale), &self.v_targ)? <= self.tau)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Targeted,
    Untargeted,
    TopK,
    Prediction,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Targeted => "targeted",
            Mode::Untargeted => "untargeted",
            Mode::TopK => "top-k",
            Mode::Prediction => "prediction",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificationOutcome {
    pub certified: bool,
    /// Extremal box point; empty for top-k and prediction verdicts.
    pub witness: Tensor,
    /// Extremal dissimilarity value used for the verdict.
    pub score: f64,
    pub mode: Mode,
}

fn check_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `(1/n) Σ (v_i - v'_i)^2`.
pub fn mse(v: &Tensor, w: &Tensor) -> Result<f64> {
    check_shapes("mse", v, w)?;
    if v.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = v.data().iter().zip(w.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / v.len() as f64)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(v: &Tensor, w: &Tensor) -> Result<f64> {
    check_shapes("cosine", v, w)?;
    let dot: f64 = v.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    let denom = v.l2_norm() * w.l2_norm();
    Ok(if denom == 0.0 { 0.0 } else { dot / denom })
}

/// Box point closest to `v_targ`: elementwise clamp.
pub fn targeted_witness(b: &GradientBox, v_targ: &Tensor) -> Result<Tensor> {
    check_shapes("targeted_witness", &b.lower, v_targ)?;
    let data = v_targ
        .data()
        .iter()
        .zip(b.lower.data().iter().zip(b.upper.data()))
        .map(|(&t, (&lo, &hi))| t.max(lo).min(hi))
        .collect();
    Tensor::new(v_targ.shape().to_vec(), data)
}

/// Box point farthest from `v` in every coordinate (ties go to the upper end).
pub fn untargeted_witness(b: &GradientBox, v: &Tensor) -> Result<Tensor> {
    check_shapes("untargeted_witness", &b.lower, v)?;
    let data = v
        .data()
        .iter()
        .zip(b.lower.data().iter().zip(b.upper.data()))
        .map(|(&c, (&lo, &hi))| if (hi - c).abs() >= (c - lo).abs() { hi } else { lo })
        .collect();
    Tensor::new(v.shape().to_vec(), data)
}

/// Targeted certificate: no box point is within `tau` of the target.
pub fn certify_targeted(b: &GradientBox, spec: &TargetSpec) -> Result<CertificationOutcome> {
    let scaled;
    let b = if spec.scale == 1.0 {
        b
    } else {
        scaled = b.scaled(spec.scale);
        &scaled
    };
    let witness = targeted_witness(b, &spec.v_targ)?;
    let score = match spec.similarity {
        Similarity::Mse => mse(&witness, &spec.v_targ)?,
        // max cos(v', t) = -min cos(v', -t)
        Similarity::Cosine => 1.0 + cosine_similarity_min_bound(b, &spec.v_targ.neg())?,
    };
    Ok(CertificationOutcome { certified: score > spec.tau, witness, score, mode: Mode::Targeted })
}

/// Untargeted MSE certificate: every box point is within `tau` of `v`.
pub fn certify_untargeted(b: &GradientBox, v: &Tensor, tau: f64) -> Result<CertificationOutcome> {
    certify_untargeted_with(b, v, tau, Similarity::Mse)
}

pub fn certify_untargeted_with(b: &GradientBox, v: &Tensor, tau: f64, similarity: Similarity) -> Result<CertificationOutcome> {
    let witness = untargeted_witness(b, v)?;
    let score = match similarity {
        Similarity::Mse => mse(&witness, v)?,
        Similarity::Cosine => 1.0 - cosine_similarity_min_bound(b, v)?,
    };
    Ok(CertificationOutcome { certified: score <= tau, witness, score, mode: Mode::Untargeted })
}

/// `‖v_cert‖₂ / ‖v‖₂` for the untargeted witness; infinite when `v = 0` and the
/// witness is not.
pub fn untargeted_norm_ratio(b: &GradientBox, v: &Tensor) -> Result<f64> {
    let w = untargeted_witness(b, v)?;
    let (num, den) = (w.l2_norm(), v.l2_norm());
    Ok(if den > 0.0 {
        num / den
    } else if num == 0.0 {
        1.0
    } else {
        f64::INFINITY
    })
}

/// Sound lower bound on `min_{v' in box} cos(v', v_targ)`.
pub fn cosine_similarity_min_bound(b: &GradientBox, v_targ: &Tensor) -> Result<f64> {
    check_shapes("cosine_similarity_min_bound", &b.lower, v_targ)?;
    let t_norm = v_targ.l2_norm();
    if t_norm == 0.0 {
        return Err(Error::contract("cosine bound needs a non-zero target"));
    }
    let mut n_min = 0.0;
    let mut max_sq = 0.0;
    let mut min_sq = 0.0;
    for ((&t, &lo), &hi) in v_targ.data().iter().zip(b.lower.data()).zip(b.upper.data()) {
        n_min += (lo * t).min(hi * t);
        let (a, c) = (lo.abs(), hi.abs());
        max_sq += a.max(c) * a.max(c);
        if !(lo <= 0.0 && hi >= 0.0) {
            min_sq += a.min(c) * a.min(c);
        }
    }
    let bound = if n_min >= 0.0 {
        if max_sq == 0.0 {
            // only the zero vector: cosine taken as 0
            0.0
        } else {
            n_min / (math::sqrt(max_sq) * t_norm)
        }
    } else if min_sq == 0.0 {
        -1.0
    } else {
        n_min / (math::sqrt(min_sq) * t_norm)
    };
    Ok(bound.clamp(-1.0, 1.0))
}

/// True iff at least `k` features other than `j` are certainly larger in
/// magnitude than feature `j` everywhere in the box.
pub fn certified_top_k_exclusion(b: &GradientBox, j: usize, k: usize) -> Result<bool> {
    let n = b.len();
    if j >= n || k >= n {
        return Err(Error::contract(format!("index {j} or k = {k} out of range for {n} features")));
    }
    let (lo, hi) = (b.lower.data(), b.upper.data());
    let max_j = lo[j].abs().max(hi[j].abs());
    let dominating = (0..n)
        .filter(|&i| i != j)
        .filter(|&i| {
            let min_i = if lo[i] <= 0.0 && hi[i] >= 0.0 { 0.0 } else { lo[i].abs().min(hi[i].abs()) };
            min_i > max_j
        })
        .count();
    Ok(dominating >= k)
}

/// True iff feature `j` is among the `k` largest magnitudes of `v` (ties
/// resolved against `j`).
pub fn in_top_k(v: &Tensor, j: usize, k: usize) -> Result<bool> {
    if j >= v.len() {
        return Err(Error::contract(format!("index {j} out of range for {} features", v.len())));
    }
    let mj = v.data()[j].abs();
    let larger = v.data().iter().enumerate().filter(|&(i, x)| i != j && x.abs() >= mj).count();
    Ok(larger < k)
}

/// `|v_j| / Σ|v_i|`, defined as 0 for an all-zero gradient.
pub fn bias_score(v: &Tensor, j: usize) -> Result<f64> {
    if j >= v.len() {
        return Err(Error::contract(format!("index {j} out of range for {} features", v.len())));
    }
    let total: f64 = v.data().iter().map(|x| x.abs()).sum();
    Ok(if total == 0.0 { 0.0 } else { v.data()[j].abs() / total })
}

/// Certified-robustness rate of a list of outcomes.
pub fn certified_rate(outcomes: &[CertificationOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.certified).count() as f64 / outcomes.len() as f64
}
