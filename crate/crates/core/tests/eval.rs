use clipa_core::eval::{
    build_classifier, classify, eval_preprocess, predict, retrieval_recall, PreprocessMode, PromptSet,
    ZeroShotClassifier,
};
use clipa_core::imagepipe::Image;
use clipa_core::ingest::RgbImage;
use clipa_core::model::{DualEncoder, ModelConfig};
use clipa_core::numerics::{ops, SeedStream, Tensor};
use clipa_core::textpipe::Tokenizer;
use proptest::prelude::*;
use rand::Rng as _;

fn unit_rows(n: usize, d: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SeedStream::new(seed).rng();
    let t = Tensor::new(&[n, d], (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    ops::l2_normalize(&t).0
}

fn basis(c: usize, d: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[c, d]);
    for i in 0..c {
        t.row_mut(i)[i] = 1.0;
    }
    t
}

#[test]
fn orthonormal_classifier_is_perfect() {
    let labels: Vec<usize> = (0..60).map(|i| (i * 7) % 12).collect();
    let mut imgs = Tensor::zeros(&[60, 16]);
    for (r, &l) in labels.iter().enumerate() {
        imgs.row_mut(r)[l] = 1.0;
    }
    let clf = ZeroShotClassifier { weights: basis(12, 16) };
    assert_eq!(classify(&imgs, &labels, &clf).unwrap(), 1.0);
}

#[test]
fn identical_class_rows_fall_back_to_lowest_id() {
    let mut w = Tensor::zeros(&[4, 8]);
    for r in 0..4 {
        w.row_mut(r)[0] = 1.0;
    }
    let clf = ZeroShotClassifier { weights: w };
    let imgs = unit_rows(40, 8, 3);
    assert!(predict(&imgs, &clf).unwrap().iter().all(|&p| p == 0));
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    assert_eq!(classify(&imgs, &labels, &clf).unwrap(), 0.25);
}

#[test]
fn identity_retrieval_is_perfect() {
    let e = unit_rows(50, 64, 5);
    assert_eq!(retrieval_recall(&e, &e, 1).unwrap(), (1.0, 1.0));
}

#[test]
fn stolen_mate_misses_at_rank_one() {
    // text 0 equals image 1 exactly, and image 0 is orthogonal to text 0
    let imgs = basis(3, 3);
    let mut txts = basis(3, 3);
    txts.row_mut(0).copy_from_slice(&[0.0, 1.0, 0.0]);
    let (i2t, t2i) = retrieval_recall(&imgs, &txts, 1).unwrap();
    // text 0 ranks image 1 above its own image
    assert!((t2i - 2.0 / 3.0).abs() < 1e-12, "{t2i}");
    // image 1 scores texts 0 and 1 equally; the tie goes to text 0
    assert!((i2t - 2.0 / 3.0).abs() < 1e-12, "{i2t}");
    assert_eq!(retrieval_recall(&imgs, &txts, 3).unwrap(), (1.0, 1.0));
}

#[test]
fn random_embeddings_follow_the_null() {
    // each direction's R@1 is a sum of n near-independent Bernoulli(1/n)
    let n = 1000;
    let seeds = 8;
    let mut total = 0.0;
    for s in 0..seeds {
        let (a, b) = retrieval_recall(&unit_rows(n, 256, 100 + s), &unit_rows(n, 256, 200 + s), 1).unwrap();
        total += a + b;
    }
    let mean = total / (2 * seeds) as f64;
    let sigma = ((1.0 / n as f64) * (1.0 - 1.0 / n as f64) / (n * 2 * seeds as usize) as f64).sqrt();
    assert!((mean - 1.0 / n as f64).abs() <= 3.0 * sigma, "mean {mean}, sigma {sigma}");
}

fn tiny() -> (DualEncoder<f32>, Tokenizer) {
    (DualEncoder::new(ModelConfig::preset("tiny").unwrap(), 3).unwrap(), Tokenizer::bundled())
}

#[test]
fn single_template_row_is_the_text_embedding() {
    let (m, tk) = tiny();
    let p = PromptSet::new(vec!["a {} here".into()], vec!["red circle".into(), "blue square".into()]).unwrap();
    let clf = build_classifier(&p, &m, &tk).unwrap();
    let direct = m.encode_text(&[tk.tokenize("a red circle here", 12), tk.tokenize("a blue square here", 12)]).unwrap();
    for (a, b) in clf.weights.data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn classifier_ignores_template_order_and_duplicates() {
    let (m, tk) = tiny();
    let names: Vec<String> = vec!["green triangle".into(), "yellow circle".into(), "red square".into()];
    let t = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let a = build_classifier(&PromptSet::new(t(&["a {}", "the {}"]), names.clone()).unwrap(), &m, &tk).unwrap();
    let b = build_classifier(&PromptSet::new(t(&["the {}", "a {}", "the {}", "a {}"]), names).unwrap(), &m, &tk).unwrap();
    for r in 0..3 {
        let norm: f32 = a.weights.row(r).iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        for (x, y) in a.weights.row(r).iter().zip(b.weights.row(r)) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn crop_offsets_follow_the_geometry() {
    // 256 rows, 512 columns: shorter side is already 256, so only the crop
    // applies, at offsets ((256-224)/2, (512-224)/2) = (16, 144)
    let mut img = RgbImage::filled(256, 512, [0, 0, 0]);
    for y in 0..256 {
        for x in 0..512 {
            img.set_pixel(y, x, [(y % 256) as u8, (x % 256) as u8, (x / 256) as u8]);
        }
    }
    let out = eval_preprocess(&img, 224, PreprocessMode::CenterCrop).unwrap();
    let full = Image::from_rgb8(&img);
    assert_eq!(out, full.crop(16, 144, 224, 224).unwrap());
    assert_eq!(eval_preprocess(&img, 224, PreprocessMode::Direct).unwrap().width, 224);
    let sq = RgbImage::filled(64, 64, [10, 20, 30]);
    assert_eq!(eval_preprocess(&sq, 64, PreprocessMode::Direct).unwrap(), Image::from_rgb8(&sq));
}

proptest! {
    #[test]
    fn recall_at_n_is_one(n in 1usize..20, seed in any::<u64>()) {
        let (a, b) = retrieval_recall(&unit_rows(n, 8, seed), &unit_rows(n, 8, seed ^ 9), n).unwrap();
        prop_assert_eq!((a, b), (1.0, 1.0));
    }

    #[test]
    fn recall_is_monotone_in_k(n in 2usize..20, seed in any::<u64>()) {
        let (i, t) = (unit_rows(n, 8, seed), unit_rows(n, 8, seed ^ 3));
        let mut prev = (0.0, 0.0);
        for k in 1..=n {
            let r = retrieval_recall(&i, &t, k).unwrap();
            prop_assert!(r.0 >= prev.0 && r.1 >= prev.1);
            prev = r;
        }
    }

    #[test]
    fn predictions_survive_positive_rescaling(k in -6i32..7, seed in any::<u64>()) {
        // powers of two keep every product exact
        let scale = 2f32.powi(k);
        let imgs = unit_rows(30, 8, seed);
        let w = unit_rows(5, 8, seed ^ 5);
        let scaled = w.map(|v| v * scale);
        let a = predict(&imgs, &ZeroShotClassifier { weights: w }).unwrap();
        let b = predict(&imgs, &ZeroShotClassifier { weights: scaled }).unwrap();
        prop_assert_eq!(a, b);
    }
}
