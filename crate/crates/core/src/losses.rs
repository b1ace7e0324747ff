//! Symmetric contrastive loss plus the two similarity-entropy penalties.
//!
//! For one pair, `S = token_e · patch_eᵀ` is the `T x P` matrix of cosine
//! similarities. The patch penalty is the mean entropy of the row-wise
//! softmaxes of `S` (each token's distribution over patches); the token
//! penalty is the mean entropy of the column-wise softmaxes (each patch's
//! distribution over tokens). Neither softmax is temperature-scaled.

use serde::{Deserialize, Serialize};

use crate::encoders::{encode_pair, BoundParams, EncodedPair, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{functional, Gradients, Scalar, Tape, Tensor, Var};

/// How per-row/per-column entropies are pooled over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyAveraging {
    /// Mean within each sample first, then across samples, so captions of
    /// different length weigh equally.
    #[default]
    PerSample,
    /// One mean over every row (or column) of every sample.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    pub lambda_p: f64,
    pub lambda_t: f64,
    #[serde(default)]
    pub averaging: PenaltyAveraging,
    /// Whether the `[CLS]` row takes part in `S` for the penalties.
    #[serde(default = "default_true")]
    pub cls_in_penalty: bool,
}

fn default_true() -> bool {
    true
}

impl TierConfig {
    pub fn new(lambda_p: f64, lambda_t: f64) -> Self {
        Self {
            lambda_p,
            lambda_t,
            averaging: PenaltyAveraging::PerSample,
            cls_in_penalty: true,
        }
    }

    pub fn unregularized() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p >= 0.0 && self.lambda_t >= 0.0) {
            return Err(Error::Config(format!(
                "penalty weights must be non-negative, got ({}, {})",
                self.lambda_p, self.lambda_t
            )));
        }
        Ok(())
    }
}

impl Default for TierConfig {
    /// The regularized setting, `(λp, λt) = (0.2, 0.1)`.
    fn default() -> Self {
        Self::new(0.2, 0.1)
    }
}

/// Which terms enter the optimized sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// `clip + λp·patch + λt·token`.
    Tier(TierConfig),
    /// Contrastive loss alone; penalties are still measured for reporting.
    ClipOnly(TierConfig),
}

impl Objective {
    pub fn config(&self) -> &TierConfig {
        match self {
            Objective::Tier(c) | Objective::ClipOnly(c) => c,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clip_loss: f64,
    /// Unweighted mean row entropy.
    pub patch_penalty: f64,
    /// Unweighted mean column entropy.
    pub token_penalty: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub clip: Var,
    pub patch: Var,
    pub token: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<F: Scalar>(&self, tape: &Tape<F>) -> LossBreakdown {
        let read = |v: Var| tape.value(v).data()[0].as_f64();
        LossBreakdown {
            clip_loss: read(self.clip),
            patch_penalty: read(self.patch),
            token_penalty: read(self.token),
            total: read(self.total),
        }
    }
}

/// Cosine similarities between token rows and patch rows of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<F>(Tensor<F>);

/// Unit-norm tolerance for rows entering [`SimilarityMatrix::new`] and
/// [`clip_loss`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

fn check_unit_rows<F: Scalar>(what: &str, t: &Tensor<F>) -> Result<(usize, usize)> {
    let (r, c) = t.dims2()?;
    for i in 0..r {
        let n = functional::norm(t.row(i)).as_f64();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Contract(format!(
                "{what} row {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok((r, c))
}

impl<F: Scalar> SimilarityMatrix<F> {
    /// `S[i][j] = token_e[i] · patch_e[j]` for unit-norm rows.
    pub fn new(token_e: &Tensor<F>, patch_e: &Tensor<F>) -> Result<Self> {
        let (t, d) = check_unit_rows("token", token_e)?;
        let (p, d2) = check_unit_rows("patch", patch_e)?;
        if d != d2 {
            return Err(Error::shape(
                "similarity_matrix",
                format!("token width {d} vs patch width {d2}"),
            ));
        }
        let mut data = Vec::with_capacity(t * p);
        for i in 0..t {
            for j in 0..p {
                data.push(functional::dot(token_e.row(i), patch_e.row(j)));
            }
        }
        Ok(Self(Tensor::new([t, p], data)?))
    }

    pub fn as_tensor(&self) -> &Tensor<F> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.0
    }
}

/// Records `S = token_e · patch_eᵀ`.
pub fn record_similarity<F: Scalar>(tape: &mut Tape<F>, token_e: Var, patch_e: Var) -> Result<Var> {
    let pt = tape.transpose(patch_e)?;
    tape.matmul(token_e, pt)
}

fn check_nonempty<F: Scalar>(tape: &Tape<F>, s: Var) -> Result<()> {
    if tape.value(s).numel() == 0 || tape.value(s).rank() != 2 {
        return Err(Error::Contract(format!(
            "penalty needs a non-empty T x P matrix, got {:?}",
            tape.shape(s)
        )));
    }
    Ok(())
}

/// Per-row entropies of the row-wise softmax, shape `T x 1`.
pub fn record_row_entropies<F: Scalar>(tape: &mut Tape<F>, s: Var) -> Result<Var> {
    check_nonempty(tape, s)?;
    let p = tape.softmax(s, 1)?;
    tape.entropy(p, 1)
}

/// Per-column entropies of the column-wise softmax, shape `1 x P`.
pub fn record_column_entropies<F: Scalar>(tape: &mut Tape<F>, s: Var) -> Result<Var> {
    check_nonempty(tape, s)?;
    let p = tape.softmax(s, 0)?;
    tape.entropy(p, 0)
}

pub fn record_patch_penalty<F: Scalar>(tape: &mut Tape<F>, s: Var) -> Result<Var> {
    let h = record_row_entropies(tape, s)?;
    tape.mean(h)
}

pub fn record_token_penalty<F: Scalar>(tape: &mut Tape<F>, s: Var) -> Result<Var> {
    let h = record_column_entropies(tape, s)?;
    tape.mean(h)
}

fn penalty_value<F: Scalar>(
    s: &Tensor<F>,
    record: fn(&mut Tape<F>, Var) -> Result<Var>,
) -> Result<F> {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let out = record(&mut tape, v)?;
    tape.value(out).item()
}

/// Mean entropy of the row-wise softmaxes of `s`; lies in `[0, ln P]`.
pub fn patch_entropy_penalty<F: Scalar>(s: &Tensor<F>) -> Result<F> {
    penalty_value(s, record_patch_penalty)
}

/// Mean entropy of the column-wise softmaxes of `s`; lies in `[0, ln T]`.
pub fn token_entropy_penalty<F: Scalar>(s: &Tensor<F>) -> Result<F> {
    penalty_value(s, record_token_penalty)
}

/// Records the symmetric cross-entropy over `exp(t) · image_e · text_eᵀ`
/// with matched pairs on the diagonal.
pub fn record_clip_loss<F: Scalar>(
    tape: &mut Tape<F>,
    image_e: Var,
    text_e: Var,
    log_temperature: Var,
) -> Result<Var> {
    let n = tape.shape(image_e)[0];
    if n < 2 {
        return Err(Error::Contract(format!(
            "contrastive loss needs at least 2 pairs, got {n}"
        )));
    }
    let tt = tape.transpose(text_e)?;
    let cos = tape.matmul(image_e, tt)?;
    let scale = tape.exp(log_temperature)?;
    let logits = tape.mul_scalar(cos, scale)?;
    let per_image = tape.diagonal_cross_entropy(logits, 1)?;
    let per_text = tape.diagonal_cross_entropy(logits, 0)?;
    let both = tape.add(per_image, per_text)?;
    tape.scale(both, F::lit(0.5))
}

/// Value-level contrastive loss for `n x d` unit-row embeddings.
pub fn clip_loss<F: Scalar>(
    image_e: &Tensor<F>,
    text_e: &Tensor<F>,
    log_temperature: F,
) -> Result<F> {
    let (n, d) = check_unit_rows("image", image_e)?;
    let (m, d2) = check_unit_rows("text", text_e)?;
    if n != m || d != d2 {
        return Err(Error::shape(
            "clip_loss",
            format!("{:?} vs {:?}", image_e.shape(), text_e.shape()),
        ));
    }
    let mut tape = Tape::new();
    let i = tape.constant(image_e.clone());
    let t = tape.constant(text_e.clone());
    let lt = tape.constant(Tensor::scalar(log_temperature));
    let loss = record_clip_loss(&mut tape, i, t, lt)?;
    tape.value(loss).item()
}

fn pool<F: Scalar>(
    tape: &mut Tape<F>,
    per_sample: Vec<Var>,
    averaging: PenaltyAveraging,
) -> Result<Var> {
    match averaging {
        PenaltyAveraging::PerSample => {
            let means = per_sample
                .into_iter()
                .map(|v| {
                    let m = tape.mean(v)?;
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            let all = tape.concat(&means)?;
            tape.mean(all)
        }
        PenaltyAveraging::Flat => {
            let all = tape.concat(&per_sample)?;
            tape.mean(all)
        }
    }
}

/// Records contrastive loss and both penalties for already-encoded pairs.
pub fn record_objective<F: Scalar>(
    tape: &mut Tape<F>,
    pairs: &[EncodedPair],
    objective: Objective,
    log_temperature: Var,
) -> Result<LossVars> {
    let config = *objective.config();
    config.validate()?;
    if pairs.len() < 2 {
        return Err(Error::Contract(format!(
            "batch needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let images: Vec<Var> = pairs.iter().map(|p| p.image_e).collect();
    let texts: Vec<Var> = pairs.iter().map(|p| p.text_e).collect();
    let image_e = tape.concat(&images)?;
    let text_e = tape.concat(&texts)?;
    let clip = record_clip_loss(tape, image_e, text_e, log_temperature)?;

    let mut rows = Vec::with_capacity(pairs.len());
    let mut cols = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let tokens = if config.cls_in_penalty {
            pair.token_e
        } else {
            let t = tape.shape(pair.token_e)[0];
            let rest: Vec<usize> = (1..t).collect();
            tape.select_rows(pair.token_e, &rest)?
        };
        let s = record_similarity(tape, tokens, pair.patch_e)?;
        rows.push(record_row_entropies(tape, s)?);
        cols.push(record_column_entropies(tape, s)?);
    }
    let patch = pool(tape, rows, config.averaging)?;
    let token = pool(tape, cols, config.averaging)?;

    let total = match objective {
        Objective::ClipOnly(_) => clip,
        Objective::Tier(c) => {
            let wp = tape.scale(patch, F::lit(c.lambda_p))?;
            let wt = tape.scale(token, F::lit(c.lambda_t))?;
            let sum = tape.add(clip, wp)?;
            tape.add(sum, wt)?
        }
    };
    Ok(LossVars {
        clip,
        patch,
        token,
        total,
    })
}

/// One image-caption pair as stored in a dataset.
pub type PairRef<'a> = (&'a [f32], &'a [u16]);

/// Encodes a batch and records its objective on `tape`.
pub fn record_batch<F: Scalar>(
    tape: &mut Tape<F>,
    params: &BoundParams,
    batch: &[PairRef<'_>],
    objective: Objective,
) -> Result<LossVars> {
    let pairs = batch
        .iter()
        .map(|(pixels, tokens)| encode_pair(tape, params, pixels, tokens))
        .collect::<Result<Vec<_>>>()?;
    record_objective(tape, &pairs, objective, params.log_temperature())
}

/// Loss breakdown of `batch` under `params`.
pub fn tier_loss<F: Scalar>(
    params: &ModelParams<F>,
    batch: &[PairRef<'_>],
    objective: Objective,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let vars = record_batch(&mut tape, &bound, batch, objective)?;
    Ok(vars.breakdown(&tape))
}

/// Loss breakdown and per-parameter gradients (in parameter order).
pub fn tier_loss_and_gradients<F: Scalar>(
    params: &ModelParams<F>,
    batch: &[PairRef<'_>],
    objective: Objective,
) -> Result<(LossBreakdown, Vec<Tensor<F>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let vars = record_batch(&mut tape, &bound, batch, objective)?;
    let mut grads: Gradients<F> = tape.backward(vars.total)?;
    let per_param = bound
        .vars
        .iter()
        .map(|&v| grads.take(v).expect("parameters require gradients"))
        .collect();
    Ok((vars.breakdown(&tape), per_param))
}
