#![allow(dead_code)]

use clipa_core::imagepipe::{apply_mask, patchify, Image, ImageReduction, PatchSet};
use clipa_core::model::{DualEncoder, ModelConfig};
use clipa_core::numerics::{ParamId, SeedStream, Tape};
use clipa_core::textpipe::{PosTag, TokenizedText};
use rand::Rng as _;

/// Two-layer towers, width 8, on 16x16 images with 4-px patches.
pub fn toy_config() -> ModelConfig {
    let mut cfg = ModelConfig::preset("tiny").unwrap();
    cfg.embed_dim = 6;
    cfg.image_size = 16;
    for tower in [&mut cfg.vision, &mut cfg.text] {
        tower.layers = 2;
        tower.width = 8;
        tower.heads = 2;
        tower.mlp_ratio = 2;
    }
    cfg.vision.patch_size = 4;
    cfg.vision.max_seq_len = 17;
    cfg.text.vocab_size = 11;
    cfg.text.max_seq_len = 6;
    cfg.validate().unwrap();
    cfg
}

/// Four pairs of half-masked images and captions of uneven length, so
/// both the kept-index gather and padding are exercised.
pub fn toy_batch(seed: u64) -> (Vec<PatchSet>, Vec<TokenizedText>) {
    let mut rng = SeedStream::new(seed).rng();
    let images = (0..4)
        .map(|i| {
            let img = Image::new(16, 16, (0..16 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let full = patchify(&img, 4).unwrap();
            apply_mask(&full, &ImageReduction::Random(0.5), &mut SeedStream::new(seed ^ (i + 1)).rng()).unwrap()
        })
        .collect();
    let texts = [3usize, 6, 4, 5]
        .iter()
        .map(|&len| {
            let mut ids = vec![1u32];
            ids.extend((1..len).map(|_| rng.random_range(2..11)));
            TokenizedText::from_parts(&ids, &vec![PosTag::Other; len], 6, 0)
        })
        .collect();
    (images, texts)
}

fn loss(model: &DualEncoder<f64>, images: &[PatchSet], texts: &[TokenizedText], tape: &mut Tape<f64>) -> clipa_core::numerics::Var {
    let img = model.image_features(tape, images).unwrap();
    let txt = model.text_features(tape, texts).unwrap();
    let logits = model.logits(tape, img, txt, None).unwrap();
    tape.clip_loss(logits).unwrap()
}

/// Largest relative error between tape gradients of the contrastive loss
/// and fourth-order central differences with step `eps`, over every
/// parameter element. The two-point form leaves an O(eps^2) truncation
/// term near 1e-5 on the embeddings feeding LayerNorm.
/// Entries where both are below `floor` are compared against `floor`:
/// a central difference of an O(1) loss at eps 1e-5 carries up to ~1e-10
/// of rounding noise, so exactly-zero gradients (key biases, under
/// softmax shift invariance) need a floor well above that.
pub fn dual_encoder_gradient_error(seed: u64, eps: f64, floor: f64) -> (f64, usize) {
    let mut model = DualEncoder::<f64>::new(toy_config(), seed).unwrap();
    let (images, texts) = toy_batch(seed);
    let mut tape = Tape::new();
    let l = loss(&model, &images, &texts, &mut tape);
    let grads = tape.backward(l).unwrap();
    let eval = |m: &DualEncoder<f64>| {
        let mut t = Tape::new();
        let v = loss(m, &images, &texts, &mut t);
        t.value(v).item()
    };
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut worst = 0f64;
    let mut checked = 0;
    for id in ids {
        let g = grads.get_or_zeros(id, model.params.get(id).shape());
        for i in 0..model.params.get(id).len() {
            let x0 = model.params.get(id).data()[i];
            let mut at = |dx: f64| {
                model.params.get_mut(id).data_mut()[i] = x0 + dx;
                let v = eval(&model);
                model.params.get_mut(id).data_mut()[i] = x0;
                v
            };
            let num = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
            let ana = g.data()[i];
            worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(floor));
            checked += 1;
        }
    }
    (worst, checked)
}
