//! Toy dual encoders.
//!
//! The image side cuts a `K x K` grid of `s x s` patches, projects each patch
//! linearly and passes it through a one-hidden-layer head into the joint
//! space. A patch embedding depends only on its own pixels. The text side
//! sums token and position embeddings, applies one mixing layer that feeds
//! the caption mean back into every token, and projects each token through
//! its own head. Row 0 (`[CLS]`) is the global text embedding; the global
//! image embedding is the renormalized mean of the normalized patch rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{functional, Scalar, Tape, Tensor, Var};

pub const CLS_TOKEN: u16 = 0;
pub const PAD_TOKEN: u16 = 1;

/// `exp` of the initial log-temperature.
pub const INITIAL_LOGIT_SCALE: f64 = 1.0 / 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Patches per side (`K`).
    pub grid: usize,
    /// Pixels per patch side (`s`).
    pub patch_size: usize,
    pub channels: usize,
    pub image_features: usize,
    pub text_features: usize,
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            grid: 7,
            patch_size: 8,
            channels: 1,
            image_features: 32,
            text_features: 32,
            hidden: 64,
            embed: 16,
            vocab: 64,
            max_len: 16,
        }
    }
}

impl ModelDims {
    pub fn num_patches(&self) -> usize {
        self.grid * self.grid
    }

    pub fn image_side(&self) -> usize {
        self.grid * self.patch_size
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_side() * self.image_side() * self.channels
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.grid,
            self.patch_size,
            self.channels,
            self.image_features,
            self.text_features,
            self.hidden,
            self.embed,
            self.max_len,
        ];
        if fields.contains(&0) {
            return Err(Error::Config(format!("zero dimension in {self:?}")));
        }
        if self.vocab <= usize::from(PAD_TOKEN) {
            return Err(Error::Config("vocabulary must hold [CLS] and [PAD]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead<F> {
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoderParams<F> {
    pub patch_weight: Tensor<F>,
    pub patch_bias: Tensor<F>,
    pub head: ProjectionHead<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams<F> {
    pub token_table: Tensor<F>,
    pub positions: Tensor<F>,
    pub mix_weight: Tensor<F>,
    pub mix_bias: Tensor<F>,
    pub head: ProjectionHead<F>,
}

/// Every learnable tensor of the dual encoder plus the log-temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub dims: ModelDims,
    pub image: ImageEncoderParams<F>,
    pub text: TextEncoderParams<F>,
    /// Shape `[1]`; logits are scaled by `exp` of this value.
    pub log_temperature: Tensor<F>,
}

/// Canonical parameter order used by the optimizer and the checkpoint table.
pub const PARAM_NAMES: [&str; 15] = [
    "image.patch_weight",
    "image.patch_bias",
    "image.head.w1",
    "image.head.b1",
    "image.head.w2",
    "image.head.b2",
    "text.token_table",
    "text.positions",
    "text.mix_weight",
    "text.mix_bias",
    "text.head.w1",
    "text.head.b1",
    "text.head.w2",
    "text.head.b2",
    "log_temperature",
];

fn uniform<F: Scalar>(rng: &mut ChaCha8Rng, shape: [usize; 2], bound: f64) -> Tensor<F> {
    let n = shape[0] * shape[1];
    let data = (0..n)
        .map(|_| F::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn linear<F: Scalar>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
) -> (Tensor<F>, Tensor<F>) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = uniform(rng, [fan_in, fan_out], bound);
    let b = uniform::<F>(rng, [1, fan_out], bound);
    (w, b.reshape([fan_out]).expect("same size"))
}

impl<F: Scalar> ProjectionHead<F> {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize) -> Self {
        let (w1, b1) = linear(rng, input, hidden);
        let (w2, b2) = linear(rng, hidden, output);
        Self { w1, b1, w2, b2 }
    }
}

impl<F: Scalar> ModelParams<F> {
    /// Seed-deterministic initialization: weights and biases uniform on
    /// `±1/sqrt(fan_in)`, lookup tables on `±1` (one-hot fan-in).
    pub fn init(seed: u64, dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (patch_weight, patch_bias) = linear(&mut rng, dims.patch_len(), dims.image_features);
        let image = ImageEncoderParams {
            patch_weight,
            patch_bias,
            head: ProjectionHead::init(&mut rng, dims.image_features, dims.hidden, dims.embed),
        };
        let token_table = uniform(&mut rng, [dims.vocab, dims.text_features], 1.0);
        let positions = uniform(&mut rng, [dims.max_len, dims.text_features], 1.0);
        let (mix_weight, mix_bias) = linear(&mut rng, dims.text_features, dims.text_features);
        let text = TextEncoderParams {
            token_table,
            positions,
            mix_weight,
            mix_bias,
            head: ProjectionHead::init(&mut rng, dims.text_features, dims.hidden, dims.embed),
        };
        Ok(Self {
            dims,
            image,
            text,
            log_temperature: Tensor::scalar(F::lit(INITIAL_LOGIT_SCALE.ln())),
        })
    }

    /// Tensors in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor<F>; 15] {
        let (i, t) = (&self.image, &self.text);
        [
            &i.patch_weight,
            &i.patch_bias,
            &i.head.w1,
            &i.head.b1,
            &i.head.w2,
            &i.head.b2,
            &t.token_table,
            &t.positions,
            &t.mix_weight,
            &t.mix_bias,
            &t.head.w1,
            &t.head.b1,
            &t.head.w2,
            &t.head.b2,
            &self.log_temperature,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<F>; 15] {
        let (i, t) = (&mut self.image, &mut self.text);
        [
            &mut i.patch_weight,
            &mut i.patch_bias,
            &mut i.head.w1,
            &mut i.head.b1,
            &mut i.head.w2,
            &mut i.head.b2,
            &mut t.token_table,
            &mut t.positions,
            &mut t.mix_weight,
            &mut t.mix_bias,
            &mut t.head.w1,
            &mut t.head.b1,
            &mut t.head.w2,
            &mut t.head.b2,
            &mut self.log_temperature,
        ]
    }

    pub fn named_tensors(&self) -> impl Iterator<Item = (&'static str, &Tensor<F>)> {
        PARAM_NAMES.into_iter().zip(self.tensors())
    }

    /// Replaces every tensor from `(name, tensor)` pairs, checking names and
    /// shapes against `dims`.
    pub fn from_named(dims: ModelDims, tensors: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let mut params = Self::init(0, dims)?;
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        for ((slot, expected), (name, tensor)) in params
            .tensors_mut()
            .into_iter()
            .zip(PARAM_NAMES)
            .zip(tensors)
        {
            if name != expected {
                return Err(Error::Config(format!(
                    "parameter `{name}` found where `{expected}` was expected"
                )));
            }
            if tensor.shape() != slot.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, model needs {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(params)
    }

    pub fn logit_scale(&self) -> F {
        self.log_temperature.data()[0].exp()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<F>) -> BoundParams {
        let vars: Vec<Var> = self
            .named_tensors()
            .map(|(name, t)| {
                let v = tape.param(t.clone());
                tape.set_name(v, name);
                v
            })
            .collect();
        BoundParams {
            dims: self.dims,
            vars: vars.try_into().expect("fixed parameter count"),
        }
    }
}

/// Tape handles for every parameter, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub dims: ModelDims,
    pub vars: [Var; 15],
}

impl BoundParams {
    fn image_head(&self) -> [Var; 4] {
        [self.vars[2], self.vars[3], self.vars[4], self.vars[5]]
    }

    fn text_head(&self) -> [Var; 4] {
        [self.vars[10], self.vars[11], self.vars[12], self.vars[13]]
    }

    pub fn log_temperature(&self) -> Var {
        self.vars[14]
    }
}

fn affine<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_broadcast(xw, b)
}

fn project<F: Scalar>(tape: &mut Tape<F>, x: Var, head: [Var; 4]) -> Result<Var> {
    let h = affine(tape, x, head[0], head[1])?;
    let h = tape.tanh(h)?;
    let out = affine(tape, h, head[2], head[3])?;
    tape.l2_normalize(out, 1)
}

/// Rearranges a row-major `(K s) x (K s) x c` image into a `P x (s s c)`
/// matrix with one patch per row, patches numbered row-major over the grid.
pub fn extract_patches<F: Scalar>(dims: &ModelDims, pixels: &[f32]) -> Result<Tensor<F>> {
    if pixels.len() != dims.pixels_per_image() {
        return Err(Error::shape(
            "encode_image",
            format!(
                "expected {side}x{side}x{c} = {} pixels, got {}",
                dims.pixels_per_image(),
                pixels.len(),
                side = dims.image_side(),
                c = dims.channels
            ),
        ));
    }
    let (k, s, c, side) = (dims.grid, dims.patch_size, dims.channels, dims.image_side());
    let mut out = Vec::with_capacity(pixels.len());
    for gr in 0..k {
        for gc in 0..k {
            for y in 0..s {
                let start = ((gr * s + y) * side + gc * s) * c;
                out.extend(
                    pixels[start..start + s * c]
                        .iter()
                        .map(|&v| F::lit(f64::from(v))),
                );
            }
        }
    }
    Tensor::new([k * k, s * s * c], out)
}

#[derive(Clone, Copy, Debug)]
pub struct ImageEmbedding {
    /// `P x d_e`, unit rows.
    pub patch_e: Var,
    /// `1 x d_e`.
    pub image_e: Var,
}

#[derive(Clone, Debug)]
pub struct TextEmbedding {
    /// `T x d_e`, unit rows, `[CLS]` first.
    pub token_e: Var,
    /// `1 x d_e`.
    pub text_e: Var,
    /// Original sequence positions of the kept (non-pad) tokens.
    pub kept: Vec<usize>,
}

/// Patch and global embeddings of one image.
pub fn encode_image<F: Scalar>(
    tape: &mut Tape<F>,
    params: &BoundParams,
    pixels: &[f32],
) -> Result<ImageEmbedding> {
    let patches = extract_patches(&params.dims, pixels)?;
    let patches = tape.constant(patches);
    let features = affine(tape, patches, params.vars[0], params.vars[1])?;
    let patch_e = project(tape, features, params.image_head())?;
    let mean = tape.mean_axis(patch_e, 0)?;
    let image_e = tape.l2_normalize(mean, 1)?;
    Ok(ImageEmbedding { patch_e, image_e })
}

/// Checks `tokens` against the text encoder's contract and returns the
/// positions of non-pad tokens.
pub fn validate_tokens(dims: &ModelDims, tokens: &[u16]) -> Result<Vec<usize>> {
    if tokens.first() != Some(&CLS_TOKEN) {
        return Err(Error::Contract(
            "token sequence must start with [CLS]".into(),
        ));
    }
    if tokens.len() > dims.max_len {
        return Err(Error::Contract(format!(
            "sequence of {} tokens exceeds maximum length {}",
            tokens.len(),
            dims.max_len
        )));
    }
    if let Some(bad) = tokens.iter().find(|&&t| usize::from(t) >= dims.vocab) {
        return Err(Error::Domain(format!(
            "token {bad} outside vocabulary of {}",
            dims.vocab
        )));
    }
    Ok(tokens
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t != PAD_TOKEN)
        .map(|(i, _)| i)
        .collect())
}

/// Token embeddings (pads dropped) and the `[CLS]` embedding of one caption.
pub fn encode_text<F: Scalar>(
    tape: &mut Tape<F>,
    params: &BoundParams,
    tokens: &[u16],
) -> Result<TextEmbedding> {
    let kept = validate_tokens(&params.dims, tokens)?;
    let ids: Vec<usize> = kept.iter().map(|&i| usize::from(tokens[i])).collect();
    let embedded = tape.select_rows(params.vars[6], &ids)?;
    let positions = tape.select_rows(params.vars[7], &kept)?;
    let x = tape.add(embedded, positions)?;
    let context = tape.mean_axis(x, 0)?;
    let mixed = tape.add_broadcast(x, context)?;
    let mixed = affine(tape, mixed, params.vars[8], params.vars[9])?;
    let mixed = tape.tanh(mixed)?;
    let token_e = project(tape, mixed, params.text_head())?;
    let text_e = tape.select_rows(token_e, &[0])?;
    Ok(TextEmbedding {
        token_e,
        text_e,
        kept,
    })
}

/// Both sides of one image-caption pair.
#[derive(Clone, Debug)]
pub struct EncodedPair {
    pub patch_e: Var,
    pub token_e: Var,
    pub image_e: Var,
    pub text_e: Var,
    /// Original positions of the non-pad tokens, one per `token_e` row.
    pub kept: Vec<usize>,
}

pub fn encode_pair<F: Scalar>(
    tape: &mut Tape<F>,
    params: &BoundParams,
    pixels: &[f32],
    tokens: &[u16],
) -> Result<EncodedPair> {
    let image = encode_image(tape, params, pixels)?;
    let text = encode_text(tape, params, tokens)?;
    Ok(EncodedPair {
        patch_e: image.patch_e,
        token_e: text.token_e,
        image_e: image.image_e,
        text_e: text.text_e,
        kept: text.kept,
    })
}

/// Concrete embeddings read back from a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PairValues<F> {
    pub patch_e: Tensor<F>,
    pub token_e: Tensor<F>,
    pub image_e: Vec<F>,
    pub text_e: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    /// Forward pass without keeping the tape.
    pub fn embed_pair(&self, pixels: &[f32], tokens: &[u16]) -> Result<PairValues<F>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let pair = encode_pair(&mut tape, &bound, pixels, tokens)?;
        Ok(PairValues {
            patch_e: tape.value(pair.patch_e).clone(),
            token_e: tape.value(pair.token_e).clone(),
            image_e: tape.value(pair.image_e).data().to_vec(),
            text_e: tape.value(pair.text_e).data().to_vec(),
        })
    }

    /// Patch embeddings and global embedding of one image.
    pub fn embed_image(&self, pixels: &[f32]) -> Result<(Tensor<F>, Vec<F>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let img = encode_image(&mut tape, &bound, pixels)?;
        Ok((
            tape.value(img.patch_e).clone(),
            tape.value(img.image_e).data().to_vec(),
        ))
    }

    /// Token embeddings of one caption; row 0 is `[CLS]`.
    pub fn embed_text(&self, tokens: &[u16]) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let text = encode_text(&mut tape, &bound, tokens)?;
        Ok(tape.value(text.token_e).clone())
    }
}

/// Renormalized mean of unit rows, the global-embedding rule.
pub fn pooled_embedding<F: Scalar>(rows: &Tensor<F>) -> Result<Vec<F>> {
    let (r, c) = rows.dims2()?;
    let mut acc = vec![F::zero(); c];
    for i in 0..r {
        for (a, &v) in acc.iter_mut().zip(rows.row(i)) {
            *a += v;
        }
    }
    let n = F::from_usize_lossy(r);
    acc.iter_mut().for_each(|v| *v /= n);
    functional::l2_normalize(&acc)
}
