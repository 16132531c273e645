use memlab_core::bias::{materialize_bias, BiasParams};
use memlab_core::evaluation::{pearson, per_presentation_mean};
use memlab_core::model::{AttentionBias, BiasMatrix};
use memlab_core::optim::weighted_squared_error;
use memlab_core::stimuli::{prompt_weights, Prompt, Stimulus};
use memlab_core::taxonomy::{classify_positions, row_mass};
use memlab_core::tokenizer::{normalize, Vocab};
use memlab_core::{Model, ModelConfig, WeightSet};
use proptest::prelude::*;

fn model() -> Model {
    let config = ModelConfig::tiny(2, 2, 16, 10, 32);
    Model::new(config.clone(), WeightSet::random(&config, 11, 0.4).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_are_causal_and_normalized(tokens in prop::collection::vec(0u32..10, 1..32)) {
        let m = model();
        let trace = m.forward(&tokens, None, true).unwrap().trace.unwrap();
        for l in 0..2 {
            for h in 0..2 {
                let head = trace.head(l, h);
                for i in 0..tokens.len() {
                    let row = head.row(i);
                    prop_assert!(row[i + 1..].iter().all(|&v| v == 0.0));
                    let sum: f64 = row.iter().map(|&v| v as f64).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn constant_row_shift_leaves_attention_unchanged(
        tokens in prop::collection::vec(0u32..10, 2..20),
        row in 0usize..20,
        shift in -5.0f64..5.0,
    ) {
        let m = model();
        let n = tokens.len();
        let row = row % n;
        let mut mat = BiasMatrix::zeros(n);
        for j in 0..=row {
            mat.set(row, j, shift);
        }
        let bias = AttentionBias { layer: 1, heads: vec![mat, BiasMatrix::zeros(n)] };
        let a = m.forward(&tokens, None, true).unwrap().trace.unwrap();
        let b = m.forward(&tokens, Some(&bias), true).unwrap().trace.unwrap();
        for (x, y) in a.head(0, 0).row(row).iter().zip(b.head(0, 0).row(row)) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn bias_is_monotone_and_sign_symmetric(alpha in 0.01f64..10.0, beta in -2.0f64..2.0, size in 2usize..40) {
        let m = materialize_bias(alpha, beta, size);
        let neg = materialize_bias(-alpha, beta, size);
        for k in 2..size {
            prop_assert!(m.get(k, 0) <= m.get(k - 1, 0));
        }
        for (x, y) in m.as_slice().iter().zip(neg.as_slice()) {
            prop_assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn objective_is_non_negative_and_order_free(
        entries in prop::collection::vec((0.0f64..=1.0, 1u32..50, 0.0f64..=1.0), 1..12),
        rotate in 0usize..12,
    ) {
        let prompts: Vec<Prompt> = entries
            .iter()
            .enumerate()
            .map(|(k, &(p, n, _))| Prompt { position: k + 1, p_human: Some(p), n_subjects: n })
            .collect();
        let model_p = |pos: usize| Ok(entries[pos - 1].2);
        let v = weighted_squared_error(&prompts, model_p).unwrap();
        prop_assert!(v >= 0.0);
        let mut rotated = prompts.clone();
        let len = rotated.len();
        rotated.rotate_left(rotate % len);
        let w = weighted_squared_error(&rotated, model_p).unwrap();
        prop_assert!((v - w).abs() <= 1e-12 * v.max(1.0));
    }

    #[test]
    fn vocab_round_trip_and_probabilities(words in prop::collection::vec("[a-z]{1,6}", 1..40)) {
        let text = words.join(" ");
        let vocab = Vocab::build(&[text.as_str()]).unwrap();
        let ids = vocab.encode(&text);
        prop_assert!(ids.iter().all(|&i| i != 0));
        prop_assert_eq!(vocab.decode(&ids).unwrap(), normalize(&text).join(" "));
        let total: f64 = (1..vocab.len() as u32).map(|i| vocab.unigram_probability(i)).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert_eq!(Vocab::build(&[text.as_str()]).unwrap(), vocab);
    }

    #[test]
    fn prompt_weights_are_a_distribution(words in prop::collection::vec("[a-e]{1,2}", 2..30)) {
        let text = words.join(" ");
        let vocab = Vocab::build(&[text.as_str(), "zz zz"]).unwrap();
        let span = vocab.encode(&text);
        let w = prompt_weights(&span, &vocab).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn stimulus_is_periodic(span in prop::collection::vec(1u32..50, 1..20), repeats in 1usize..5) {
        let s = Stimulus::build("p", span.clone(), repeats, 1024).unwrap();
        for (i, &t) in s.tokens().iter().enumerate() {
            prop_assert_eq!(t, span[i % span.len()]);
        }
        let b = s.boundaries();
        prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn presentation_means_ignore_order(values in prop::collection::vec(0.0f64..1.0, 2..20), rotate in 0usize..20) {
        let positions: Vec<usize> = (1..=values.len()).collect();
        let bounds = [values.len() / 2 + 1];
        let a = per_presentation_mean(&positions, &values, &bounds);
        let mut pairs: Vec<(usize, f64)> = positions.iter().copied().zip(values.iter().copied()).collect();
        let len = pairs.len();
        pairs.rotate_left(rotate % len);
        let (p2, v2): (Vec<usize>, Vec<f64>) = pairs.into_iter().unzip();
        let b = per_presentation_mean(&p2, &v2, &bounds);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
        scale in 0.1f64..10.0,
        offset in -5.0f64..5.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            let x2: Vec<f64> = x.iter().map(|v| scale * v + offset).collect();
            let r2 = pearson(&x2, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
        }
    }

    #[test]
    fn taxonomy_partitions_every_row(tokens in prop::collection::vec(0u32..4, 1..24), raw in prop::collection::vec(0.01f32..1.0, 24)) {
        let i = tokens.len() - 1;
        let classes = classify_positions(&tokens, i).unwrap();
        prop_assert_eq!(classes.len(), i + 1);
        let total: f32 = raw[..=i].iter().sum();
        let row: Vec<f32> = raw[..=i].iter().map(|v| v / total).collect();
        let mass = row_mass(&row, &classes).unwrap();
        let row_sum: f64 = row.iter().map(|&v| v as f64).sum();
        prop_assert!((mass.iter().sum::<f64>() - row_sum).abs() < 1e-9);
        prop_assert!(mass.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn params_round_trip_through_flat_vector(theta in prop::collection::vec(-5.0f64..5.0, 1..6)) {
        let mut theta = theta;
        if theta.len() % 2 == 1 {
            theta.push(0.0);
        }
        let p = BiasParams::from_slice(1, &theta).unwrap();
        prop_assert_eq!(p.to_vec(), theta);
    }
}
