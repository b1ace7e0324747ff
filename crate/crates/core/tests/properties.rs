//! Invariants of the numerics, losses, zero-shot scoring and generator.

use proptest::prelude::*;
use tier::encoders::{ModelDims, ModelParams};
use tier::losses::{
    clip_loss, patch_entropy_penalty, record_patch_penalty, tier_loss, token_entropy_penalty,
    Objective, TierConfig,
};
use tier::metrics::auc;
use tier::numerics::functional::{entropy, l2_normalize, softmax};
use tier::numerics::{Tape, Tensor};
use tier::synth_data::{Dataset, Split, SplitCounts, SynthConfig};
use tier::zeroshot::{zero_shot_probability, zero_shot_score, QuerySet, QuerySpec};

fn matrix() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..6, 1usize..10).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c)
            .prop_map(move |data| Tensor::new(vec![r, c], data).unwrap())
    })
}

fn unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| l2_normalize(&v).unwrap())
}

fn transpose(s: &Tensor<f64>) -> Tensor<f64> {
    let (r, c) = s.dims2().unwrap();
    let data = (0..c)
        .flat_map(|j| (0..r).map(move |i| (i, j)))
        .map(|(i, j)| s.data()[i * c + j])
        .collect();
    Tensor::new(vec![c, r], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shift(
        x in prop::collection::vec(-30.0f64..30.0, 1..40),
        shift in -50.0f64..50.0,
    ) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let h = entropy(&p).unwrap();
        prop_assert!(h >= 0.0 && h <= (x.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn penalties_are_bounded(s in matrix()) {
        let (t, p) = s.dims2().unwrap();
        let hp = patch_entropy_penalty(&s).unwrap();
        let ht = token_entropy_penalty(&s).unwrap();
        prop_assert!((0.0..=(p as f64).ln() + 1e-12).contains(&hp));
        prop_assert!((0.0..=(t as f64).ln() + 1e-12).contains(&ht));
    }

    #[test]
    fn penalties_ignore_constant_shift(s in matrix(), shift in -3.0f64..3.0) {
        let moved = Tensor::new(
            s.shape().to_vec(),
            s.data().iter().map(|v| v + shift).collect(),
        ).unwrap();
        prop_assert!((patch_entropy_penalty(&s).unwrap() - patch_entropy_penalty(&moved).unwrap()).abs() < 1e-12);
        prop_assert!((token_entropy_penalty(&s).unwrap() - token_entropy_penalty(&moved).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn token_penalty_is_patch_penalty_of_transpose(s in matrix()) {
        prop_assert_eq!(
            token_entropy_penalty(&s).unwrap(),
            patch_entropy_penalty(&transpose(&s)).unwrap()
        );
    }

    #[test]
    fn gradient_step_shrinks_patch_penalty(s in matrix()) {
        let mut tape = Tape::new();
        let v = tape.param(s.clone());
        let h = record_patch_penalty(&mut tape, v).unwrap();
        let before = tape.value(h).item().unwrap();
        let g = tape.backward(h).unwrap().get(v).unwrap().clone();
        let g2: f64 = g.data().iter().map(|x| x * x).sum();
        prop_assume!(g2 > 1e-10);
        let step = 1e-3;
        let moved = Tensor::new(
            s.shape().to_vec(),
            s.data().iter().zip(g.data()).map(|(x, d)| x - step * d).collect(),
        ).unwrap();
        prop_assert!(patch_entropy_penalty(&moved).unwrap() < before);
    }

    #[test]
    fn clip_loss_is_non_negative(
        n in 2usize..6,
        seed in prop::collection::vec(-1.0f64..1.0, 48),
        log_t in -1.0f64..4.0,
    ) {
        let rows = |offset: usize| {
            let data: Vec<f64> = (0..n)
                .flat_map(|i| {
                    let raw: Vec<f64> = (0..4).map(|k| seed[(offset + 4 * i + k) % 48] + 1e-3).collect();
                    l2_normalize(&raw).unwrap()
                })
                .collect();
            Tensor::new(vec![n, 4], data).unwrap()
        };
        prop_assert!(clip_loss(&rows(0), &rows(24), log_t).unwrap() >= 0.0);
    }

    #[test]
    fn zero_shot_score_is_bounded_and_probability_monotone(
        img in unit(8),
        other in unit(8),
        pos in unit(8),
        neg in unit(8),
    ) {
        let q = QuerySet::from_embeddings("x", &[pos], &[neg]).unwrap();
        let z = zero_shot_score(&img, &q).unwrap();
        prop_assert!((-2.0..=2.0).contains(&z));
        let z2 = zero_shot_score(&other, &q).unwrap();
        let (p, p2) = (
            zero_shot_probability(&img, &q).unwrap(),
            zero_shot_probability(&other, &q).unwrap(),
        );
        if z > z2 + 1e-12 {
            prop_assert!(p > p2);
        } else if z2 > z + 1e-12 {
            prop_assert!(p2 > p);
        }
    }
}

#[test]
fn unregularized_objective_is_the_contrastive_loss() {
    let counts = SplitCounts {
        train: 6,
        val: 0,
        test: 0,
    };
    let d = Dataset::generate(11, counts, SynthConfig::default()).unwrap();
    let params = ModelParams::<f64>::init(3, ModelDims::default()).unwrap();
    let batch: Vec<_> = d.split(Split::Train).iter().map(|s| s.pair()).collect();
    let l = tier_loss(
        &params,
        &batch,
        Objective::Tier(TierConfig::unregularized()),
    )
    .unwrap();

    let embedded: Vec<_> = batch
        .iter()
        .map(|(px, tk)| params.embed_pair(px, tk).unwrap())
        .collect();
    let stack = |f: &dyn Fn(&tier::encoders::PairValues<f64>) -> Vec<f64>| {
        let data: Vec<f64> = embedded.iter().flat_map(f).collect();
        Tensor::new(vec![embedded.len(), data.len() / embedded.len()], data).unwrap()
    };
    let image = stack(&|p| p.image_e.clone());
    let text = stack(&|p| p.text_e.clone());
    let direct = clip_loss(&image, &text, params.log_temperature.data()[0]).unwrap();
    assert!((l.total - direct).abs() <= 1e-15, "{} vs {direct}", l.total);
    assert_eq!(l.total, l.clip_loss);
}

#[test]
fn probability_and_score_give_the_same_auc() {
    let counts = SplitCounts {
        train: 0,
        val: 0,
        test: 200,
    };
    let d = Dataset::generate(5, counts, SynthConfig::default()).unwrap();
    let params = ModelParams::<f64>::init(9, ModelDims::default()).unwrap();
    let spec = QuerySpec {
        positive: vec![vec![0, d.catalog().classes[0].token]],
        negative: vec![vec![0, d.catalog().filler_tokens[0]]],
    };
    let q = QuerySet::build(&params, "c0", &spec).unwrap();
    let mut scores = Vec::new();
    let mut probs = Vec::new();
    let mut truth = Vec::new();
    for s in d.split(Split::Test) {
        let (_, img) = params.embed_image(&s.pixels).unwrap();
        scores.push(zero_shot_score(&img, &q).unwrap());
        probs.push(zero_shot_probability(&img, &q).unwrap());
        truth.push(s.labels[0]);
    }
    assert_eq!(auc(&scores, &truth).unwrap(), auc(&probs, &truth).unwrap());
}

fn large_sample() -> Dataset {
    let counts = SplitCounts {
        train: 10_000,
        val: 0,
        test: 0,
    };
    Dataset::generate(31, counts, SynthConfig::default()).unwrap()
}

#[test]
fn patch_occupancy_is_uniform() {
    let d = large_sample();
    let cells = 49;
    let mut counts = vec![0u64; cells];
    for s in d.split(Split::Train) {
        for (p, count) in counts.iter_mut().enumerate() {
            if (0..s.alignment.rows()).any(|r| s.alignment.get(r, p)) {
                *count += 1;
            }
        }
    }
    let n = d.split(Split::Train).len() as f64;
    let objects: u64 = counts.iter().sum();
    let expected = objects as f64 / cells as f64;
    let q = expected / n;
    let sigma = (n * q * (1.0 - q)).sqrt();
    for &c in &counts {
        assert!((c as f64 - expected).abs() < 3.5 * sigma, "{counts:?}");
    }
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // Upper 0.1% point of chi-square with 48 degrees of freedom.
    assert!(chi2 < 84.04, "chi-square {chi2}");
}

#[test]
fn mask_rows_follow_token_roles() {
    let d = large_sample();
    let catalog = d.catalog();
    for s in d.split(Split::Train).iter().take(2000) {
        for r in 0..s.alignment.rows() {
            let is_object = catalog.class_of_token(s.tokens[r]).is_some();
            let sum = s.alignment.row_sum(r);
            if is_object {
                assert_eq!(sum, 1);
            } else {
                assert_eq!(sum, 0);
            }
        }
    }
}

#[test]
fn labels_are_linear_in_patch_occupancy() {
    let d = large_sample();
    let catalog = d.catalog();
    let classes = catalog.classes.len();
    let side = 56;
    // Zero-mean tile templates used as matched filters on each patch.
    let templates: Vec<Vec<f64>> = catalog
        .classes
        .iter()
        .map(|c| {
            let bits: Vec<f64> = c.tile_bits().map(|b| f64::from(u8::from(b))).collect();
            let mean = bits.iter().sum::<f64>() / bits.len() as f64;
            let centred: Vec<f64> = bits.iter().map(|b| b - mean).collect();
            let energy: f64 = centred.iter().map(|v| v * v).sum();
            centred.iter().map(|v| v / energy).collect()
        })
        .collect();
    for s in d.split(Split::Train).iter().take(2000) {
        // Occupancy from the mask, and occupancy decoded from pixels.
        let mut truth = vec![vec![0.0; classes]; 49];
        for r in 0..s.alignment.rows() {
            if let Some(c) = catalog.class_of_token(s.tokens[r]) {
                for p in s.alignment.targets(r) {
                    truth[p][c] = 1.0;
                }
            }
        }
        let mut decoded = vec![vec![0.0; classes]; 49];
        for (p, row) in decoded.iter_mut().enumerate() {
            let (gr, gc) = (p / 7, p % 7);
            let patch: Vec<f64> = (0..64)
                .map(|i| f64::from(s.pixels[(gr * 8 + i / 8) * side + gc * 8 + i % 8]))
                .collect();
            let responses: Vec<f64> = templates
                .iter()
                .map(|t| t.iter().zip(&patch).map(|(a, b)| a * b).sum())
                .collect();
            let (best, &score) = responses
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            if score > 0.5 {
                row[best] = 1.0;
            }
        }
        assert_eq!(decoded, truth, "sample {}", s.id);
        // Probe: per-class sum over patches, thresholded at one half.
        let probe: Vec<bool> = (0..classes)
            .map(|c| truth.iter().map(|row| row[c]).sum::<f64>() > 0.5)
            .collect();
        assert_eq!(probe, s.labels);
    }
}
