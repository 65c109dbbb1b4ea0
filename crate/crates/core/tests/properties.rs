//! Property checks over tokenizers, compression, augmentation and the model.

mod common;

use pdploc::augment::{circular_shift, random_drop, AugmentConfig};
use pdploc::dataio::{compress_pdp, generate_dataset, read_dataset, to_db, write_dataset, CompressionParams, GeneratorConfig, PdpMatrix, SensorLayout};
use pdploc::model::{Family, ModelConfig, ModelSize};
use pdploc::tokenizer::{detokenize, tokenize, TokenizerSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(sensors: usize, time_samples: usize, seed: u64) -> PdpMatrix {
    common::random_pdps(&mut common::rng(seed), 1, sensors, time_samples).remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tokenizers_are_lossless(ph in 1usize..4, pw in 1usize..5, mh in 1usize..4, mw in 1usize..5, seed in any::<u64>()) {
        let (s, t) = (ph * mh, pw * mw);
        let x = matrix(s, t, seed);
        for spec in [TokenizerSpec::Sst, TokenizerSpec::Tst, TokenizerSpec::Pbt { patch_h: ph, patch_w: pw }] {
            let tokens = tokenize(&x, &spec).unwrap();
            prop_assert_eq!(tokens.count() * tokens.width(), s * t);
            prop_assert_eq!(detokenize(&tokens, &spec, (s, t)).unwrap(), x.powers().to_vec());
        }
    }

    #[test]
    fn compression_is_monotone_in_total_power(db_a in -120.0f64..-20.0, step in 0.01f64..30.0, ratio in 1.0f64..10.0) {
        let params = CompressionParams { ratio, scale: 10.0, use_sqrt: false };
        let row = |db: f64| vec![10f64.powf(db / 10.0) / 4.0; 4];
        let a: f64 = compress_pdp(&row(db_a), &params).unwrap().iter().sum();
        let b: f64 = compress_pdp(&row(db_a + step), &params).unwrap().iter().sum();
        prop_assert!(b > a);
    }

    #[test]
    fn compression_db_identity(db in -100.0f64..-50.0, ratio in 1.0f64..10.0, scale in 0.5f64..20.0, seed in any::<u64>()) {
        let params = CompressionParams { ratio, scale, use_sqrt: false };
        let mut row = matrix(1, 16, seed).powers().to_vec();
        let total: f64 = row.iter().sum();
        let target = 10f64.powf(db / 10.0);
        row.iter_mut().for_each(|v| *v *= target / total);
        let out: f64 = compress_pdp(&row, &params).unwrap().iter().sum();
        let expected = 20.0 * scale.log10() + to_db(row.iter().sum()) / ratio;
        prop_assert!(((to_db(out) - expected) / expected.abs().max(1.0)).abs() < 1e-9);
    }

    #[test]
    fn shift_preserves_row_power(k in -300i64..300, seed in any::<u64>()) {
        let x = matrix(1, 64, seed);
        let mut row = x.powers().to_vec();
        circular_shift(&mut row, k);
        let mut a = row.clone();
        let mut b = x.powers().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn drop_zeroes_exact_row_count(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let orig = matrix(18, 8, seed);
        let mut m = orig.clone();
        let d = random_drop(&mut m, &AugmentConfig::default(), &mut rng).unwrap();
        prop_assert!(d <= 7);
        let zeroed = (0..18).filter(|&s| m.row(s).iter().all(|v| *v == 0.0)).count();
        prop_assert_eq!(zeroed, d);
        for s in 0..18 {
            prop_assert!(m.row(s).iter().all(|v| *v == 0.0) || m.row(s) == orig.row(s));
        }
    }

    #[test]
    fn rmsnorm_ignores_positive_scale(factor in 1e-3f64..1e3, seed in any::<u64>()) {
        let x = common::random_away_from_zero(&mut common::rng(seed), &[3, 8], 0.05);
        prop_assert!(common::rmsnorm_scale_change(&x, factor) < 1e-12);
    }
}

#[test]
fn lswiglu_sst_is_permutation_invariant() {
    let change = common::permutation_max_change(Family::LSwiGlu, 100, 11);
    assert!(change < 1e-9, "prediction moved by {change:e}");
}

#[test]
fn vanilla_sst_depends_on_sensor_order() {
    let change = common::permutation_max_change(Family::Vanilla, 5, 11);
    assert!(change > 1e-6, "prediction moved by only {change:e}");
}

#[test]
fn attention_rows_are_stochastic() {
    for family in [Family::Vanilla, Family::LSwiGlu] {
        let err = common::attention_row_sum_error(family, 3);
        assert!(err < 1e-6, "{family}: row sums off by {err:e}");
    }
}

#[test]
fn generation_is_deterministic_and_round_trips() {
    let gen = GeneratorConfig { rng_seed: 42, ..GeneratorConfig::default() };
    let layout = SensorLayout::default();
    let a = generate_dataset(&layout, &gen, 12).unwrap();
    let b = generate_dataset(&layout, &gen, 12).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.pdpd"), dir.path().join("b.pdpd"));
    write_dataset(&pa, &a).unwrap();
    write_dataset(&pb, &b).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    let back = read_dataset(&pa).unwrap();
    write_dataset(&pb, &back).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    let other = generate_dataset(&layout, &GeneratorConfig { rng_seed: 43, ..gen }, 12).unwrap();
    assert_ne!(a, other);
}

#[test]
fn eight_sensor_dataset_gives_eight_sst_tokens() {
    let layout = SensorLayout::default_subset(8).unwrap();
    let data = generate_dataset(&layout, &GeneratorConfig::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n8.pdpd");
    write_dataset(&path, &data).unwrap();
    let back = read_dataset(&path).unwrap();
    let tokens = tokenize(&back[0], &TokenizerSpec::Sst).unwrap();
    assert_eq!(tokens.count(), 8);
    let cfg = ModelConfig::preset(Family::LSwiGlu, TokenizerSpec::Sst, ModelSize::Small, 8, back[0].time_samples()).unwrap();
    assert_eq!(cfg.token_shape().0, 8);
}
