use rand::Rng as _;

use super::config::{EncoderConfig, ModelConfig, Pooling};
use super::posembed::{gather_positions, sincos_2d};
use super::ModelError;
use crate::imagepipe::PatchSet;
use crate::numerics::ops::{self, AttentionShape};
use crate::numerics::rng::normal;
use crate::numerics::{ParamId, ParamStore, Scalar, SeedStream, Tape, Tensor, Var};
use crate::textpipe::TokenizedText;

#[derive(Clone, Copy, Debug)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct BlockIds {
    ln1: Affine,
    qkv: Affine,
    out: Affine,
    ln2: Affine,
    fc1: Affine,
    fc2: Affine,
}

#[derive(Clone, Debug)]
struct VisionIds {
    patch: Affine,
    cls: ParamId,
    blocks: Vec<BlockIds>,
    ln_post: Affine,
    proj: ParamId,
}

#[derive(Clone, Debug)]
struct TextIds {
    token: ParamId,
    pos: ParamId,
    blocks: Vec<BlockIds>,
    ln_final: Affine,
    proj: ParamId,
}

enum Init {
    Zeros,
    Ones,
    Normal(f64),
    Xavier,
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    seeds: &'a SeedStream,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let n: usize = shape.iter().product();
        let mut rng = self.seeds.named(name).rng();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => (0..n).map(|_| std * normal(&mut rng)).collect(),
            Init::Xavier => {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            }
        };
        self.store.add(name, Tensor::from_f64(shape, &values).expect("init shape"))
    }

    fn affine(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Affine {
        Affine {
            w: self.add(&format!("{prefix}.w"), &[fan_in, fan_out], Init::Xavier),
            b: self.add(&format!("{prefix}.b"), &[fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, width: usize) -> Affine {
        Affine {
            w: self.add(&format!("{prefix}.g"), &[width], Init::Ones),
            b: self.add(&format!("{prefix}.b"), &[width], Init::Zeros),
        }
    }

    fn blocks(&mut self, prefix: &str, c: &EncoderConfig) -> Vec<BlockIds> {
        let (d, h) = (c.width, c.width * c.mlp_ratio);
        (0..c.layers)
            .map(|i| BlockIds {
                ln1: self.norm(&format!("{prefix}.blocks.{i}.ln1"), d),
                qkv: self.affine(&format!("{prefix}.blocks.{i}.attn.qkv"), d, 3 * d),
                out: self.affine(&format!("{prefix}.blocks.{i}.attn.out"), d, d),
                ln2: self.norm(&format!("{prefix}.blocks.{i}.ln2"), d),
                fc1: self.affine(&format!("{prefix}.blocks.{i}.mlp.fc1"), d, h),
                fc2: self.affine(&format!("{prefix}.blocks.{i}.mlp.fc2"), h, d),
            })
            .collect()
    }
}

/// Image and text transformers joined by a learnable temperature.
#[derive(Clone, Debug)]
pub struct DualEncoder<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    vision: VisionIds,
    text: TextIds,
    logit_scale: ParamId,
}

impl<T: Scalar> DualEncoder<T> {
    /// Fresh model; every tensor draws from its own stream keyed by name.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let seeds = SeedStream::new(seed).named("init");
        let mut b = Builder { store: ParamStore::new(), seeds: &seeds };
        let (v, t, e) = (&config.vision, &config.text, config.embed_dim);

        let vision = VisionIds {
            patch: b.affine("visual.patch_embed", v.patch_size * v.patch_size * 3, v.width),
            cls: b.add("visual.cls", &[v.width], Init::Normal(0.02)),
            blocks: b.blocks("visual", v),
            ln_post: b.norm("visual.ln_post", v.width),
            proj: b.add("visual.proj", &[v.width, e], Init::Normal((v.width as f64).powf(-0.5))),
        };
        let text = TextIds {
            token: b.add("text.token_embed", &[t.vocab_size, t.width], Init::Normal(0.02)),
            pos: b.add("text.pos_embed", &[t.max_seq_len, t.width], Init::Normal(0.01)),
            blocks: b.blocks("text", t),
            ln_final: b.norm("text.ln_final", t.width),
            proj: b.add("text.proj", &[t.width, e], Init::Normal((t.width as f64).powf(-0.5))),
        };
        let logit_scale = b.store.add("logit_scale", Tensor::full(&[1], T::lit(config.init_inv_temperature.ln())));
        Ok(Self { config, params: b.store, vision, text, logit_scale })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((_, want, t), (_, got, u)) in model.params.iter().zip(params.iter()) {
            if want != got || t.shape() != u.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {:?} {:?} does not match expected {:?} {:?}",
                    got,
                    u.shape(),
                    want,
                    t.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn logit_scale_id(&self) -> ParamId {
        self.logit_scale
    }

    pub fn inv_temperature(&self) -> f64 {
        self.params.get(self.logit_scale).item().as_f64().exp()
    }

    /// Caps `1/tau` at the configured ceiling.
    pub fn clamp_temperature(&mut self) {
        let cap = T::lit(self.config.max_inv_temperature.ln());
        let s = self.params.get_mut(self.logit_scale);
        if s.data()[0] > cap {
            s.data_mut()[0] = cap;
        }
    }

    fn block(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        b: &BlockIds,
        shape: AttentionShape,
        mask: Option<Vec<bool>>,
    ) -> Result<Var, ModelError> {
        let p = |tape: &mut Tape<T>, id| tape.param(&self.params, id);
        let (g1, b1) = (p(tape, b.ln1.w), p(tape, b.ln1.b));
        let h = tape.layer_norm(x, g1, b1)?;
        let (wq, bq) = (p(tape, b.qkv.w), p(tape, b.qkv.b));
        let qkv = tape.linear(h, wq, Some(bq))?;
        let att = tape.attention(qkv, shape, mask)?;
        let (wo, bo) = (p(tape, b.out.w), p(tape, b.out.b));
        let att = tape.linear(att, wo, Some(bo))?;
        let x = tape.add(x, att)?;

        let (g2, b2) = (p(tape, b.ln2.w), p(tape, b.ln2.b));
        let h = tape.layer_norm(x, g2, b2)?;
        let (w1, c1) = (p(tape, b.fc1.w), p(tape, b.fc1.b));
        let h = tape.linear(h, w1, Some(c1))?;
        let h = tape.gelu(h);
        let (w2, c2) = (p(tape, b.fc2.w), p(tape, b.fc2.b));
        let h = tape.linear(h, w2, Some(c2))?;
        Ok(tape.add(x, h)?)
    }

    /// Normalized image features `[batch, embed_dim]` recorded on `tape`.
    /// Every patch set in the batch must share its grid and patch count.
    pub fn image_features(&self, tape: &mut Tape<T>, batch: &[PatchSet]) -> Result<Var, ModelError> {
        let c = &self.config.vision;
        let first = batch.first().ok_or_else(|| ModelError::Input("empty image batch".into()))?;
        let (k, dim) = (first.len(), c.patch_size * c.patch_size * 3);
        if k + 1 > c.max_seq_len {
            return Err(ModelError::SequenceOverflow { tokens: k + 1, max: c.max_seq_len });
        }
        if k == 0 {
            return Err(ModelError::Input("image with no patches".into()));
        }
        let mut data = Vec::with_capacity(batch.len() * k * dim);
        for ps in batch {
            if ps.patch_dim != dim || ps.len() != k || (ps.grid_h, ps.grid_w) != (first.grid_h, first.grid_w) {
                return Err(ModelError::Input(format!(
                    "patch sets must share shape: {}x{} of dim {}, got {}x{} of dim {}",
                    k, first.grid_h * first.grid_w, dim, ps.len(), ps.grid_h * ps.grid_w, ps.patch_dim
                )));
            }
            data.extend(ps.data.iter().map(|&v| T::lit(v as f64)));
        }
        let n = batch.len();
        let x = tape.constant(Tensor::new(&[n * k, dim], data)?);
        let (w, b) = (tape.param(&self.params, self.vision.patch.w), tape.param(&self.params, self.vision.patch.b));
        let x = tape.linear(x, w, Some(b))?;

        // positions are gathered per sequence, since masking may differ
        let table: Tensor<T> = sincos_2d(c.width, first.grid_h, first.grid_w);
        let mut pos = Vec::with_capacity(n * k * c.width);
        for ps in batch {
            pos.extend_from_slice(gather_positions(&table, &ps.indices, 1).data());
        }
        let x = tape.add_const(x, &Tensor::new(&[n * k, c.width], pos)?)?;
        let cls = tape.param(&self.params, self.vision.cls);
        let mut x = tape.prepend_token(x, cls, k)?;

        let shape = AttentionShape { batch: n, seq: k + 1, width: c.width, heads: c.heads };
        for blk in &self.vision.blocks {
            x = self.block(tape, x, blk, shape, None)?;
        }
        let (g, b) = (tape.param(&self.params, self.vision.ln_post.w), tape.param(&self.params, self.vision.ln_post.b));
        let x = tape.layer_norm(x, g, b)?;
        let pooled = match c.pooling {
            Pooling::Gap => tape.group_mean(x, k + 1, 1)?,
            _ => tape.gather_rows(x, (0..n).map(|i| i * (k + 1)).collect())?,
        };
        let proj = tape.param(&self.params, self.vision.proj);
        let z = tape.matmul(pooled, proj)?;
        Ok(tape.l2_normalize(z))
    }

    /// Normalized text features `[batch, embed_dim]`. All sequences in the
    /// batch must share their capacity; PAD keys are masked in attention.
    pub fn text_features(&self, tape: &mut Tape<T>, batch: &[TokenizedText]) -> Result<Var, ModelError> {
        let c = &self.config.text;
        let first = batch.first().ok_or_else(|| ModelError::Input("empty text batch".into()))?;
        let len = first.capacity();
        if len > c.max_seq_len {
            return Err(ModelError::SequenceOverflow { tokens: len, max: c.max_seq_len });
        }
        let mut ids = Vec::with_capacity(batch.len() * len);
        let mut mask = Vec::with_capacity(batch.len() * len);
        for t in batch {
            if t.capacity() != len || t.true_length == 0 {
                return Err(ModelError::Input(format!(
                    "text batch needs capacity {} and a CLS token, got capacity {} with {} tokens",
                    len,
                    t.capacity(),
                    t.true_length
                )));
            }
            if let Some(&bad) = t.ids.iter().find(|&&i| i as usize >= c.vocab_size) {
                return Err(ModelError::Input(format!("token id {} outside vocabulary of {}", bad, c.vocab_size)));
            }
            ids.extend(t.ids.iter().map(|&i| i as usize));
            mask.extend(t.mask());
        }
        let n = batch.len();
        let table = tape.param(&self.params, self.text.token);
        let x = tape.gather_rows(table, ids)?;
        let pos_table = tape.param(&self.params, self.text.pos);
        let pos = tape.gather_rows(pos_table, (0..n).flat_map(|_| 0..len).collect())?;
        let mut x = tape.add(x, pos)?;

        let shape = AttentionShape { batch: n, seq: len, width: c.width, heads: c.heads };
        for blk in &self.text.blocks {
            x = self.block(tape, x, blk, shape, Some(mask.clone()))?;
        }
        let (g, b) = (tape.param(&self.params, self.text.ln_final.w), tape.param(&self.params, self.text.ln_final.b));
        let x = tape.layer_norm(x, g, b)?;
        let rows = match c.pooling {
            Pooling::Eot => batch.iter().enumerate().map(|(i, t)| i * len + t.true_length - 1).collect(),
            _ => (0..n).map(|i| i * len).collect(),
        };
        let pooled = tape.gather_rows(x, rows)?;
        let proj = tape.param(&self.params, self.text.proj);
        let z = tape.matmul(pooled, proj)?;
        Ok(tape.l2_normalize(z))
    }

    /// `(1/tau) * img @ txt^T`. With `fixed_inv_temperature` the learned
    /// temperature is bypassed (and receives no gradient).
    pub fn logits(
        &self,
        tape: &mut Tape<T>,
        img: Var,
        txt: Var,
        fixed_inv_temperature: Option<f64>,
    ) -> Result<Var, ModelError> {
        let sims = tape.matmul_nt(img, txt)?;
        let scale = match fixed_inv_temperature {
            Some(s) => tape.constant(Tensor::scalar(T::lit(s))),
            None => {
                let log_scale = tape.param(&self.params, self.logit_scale);
                tape.exp(log_scale)
            }
        };
        Ok(tape.scale(sims, scale)?)
    }

    pub fn encode_image(&self, batch: &[PatchSet]) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let v = self.image_features(&mut tape, batch)?;
        Ok(tape.value(v).clone())
    }

    pub fn encode_text(&self, batch: &[TokenizedText]) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let v = self.text_features(&mut tape, batch)?;
        Ok(tape.value(v).clone())
    }
}

/// `inv_temperature * img @ txt^T` for unit-norm rows.
pub fn similarity_logits<T: Scalar>(
    img: &Tensor<T>,
    txt: &Tensor<T>,
    inv_temperature: f64,
) -> Result<Tensor<T>, ModelError> {
    let s = T::lit(inv_temperature);
    Ok(ops::matmul_nt(img, txt)?.map(|v| v * s))
}
