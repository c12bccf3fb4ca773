use cora_core::tasks::generate;
use cora_core::train::evaluate;
use cora_core::{ModelConfig, TaskKind, TaskSpec, ToyTransformer};
use proptest::prelude::*;

#[test]
fn ten_thousand_modular_sums() {
    let spec = TaskSpec {
        kind: TaskKind::ModularAdd,
        vocab_size: 102,
        modulus: Some(101),
        train_size: 9000,
        eval_size: 1000,
        seed: 3,
        ..TaskSpec::default()
    };
    let data = generate(&spec).unwrap();
    let all: Vec<_> = data.train.iter().chain(&data.eval).collect();
    assert_eq!(all.len(), 10_000);
    for s in all {
        let (a, b) = (s.input[0], s.input[1]);
        assert!(a < 101 && b < 101);
        assert_eq!(s.target, vec![(a + b) % 101]);
    }
}

#[test]
fn untrained_copy_accuracy_is_chance() {
    let vocab = 9;
    let spec = TaskSpec {
        kind: TaskKind::Copy,
        vocab_size: vocab,
        eval_size: 2048,
        train_size: 1024,
        ..TaskSpec::default()
    };
    let data = generate(&spec).unwrap();
    let model = ToyTransformer::init(ModelConfig::default(), 12).unwrap();
    let (_, acc) = evaluate(&model, &data.eval, spec.separator()).unwrap();
    let p = 1.0 / vocab as f64;
    let n = (data.eval.len() * spec.target_len()) as f64;
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma, "accuracy {acc}, chance {p} ± {}", 3.0 * sigma);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn targets_are_pure_functions_of_inputs(seed in any::<u64>(), k in 0usize..5) {
        let kind = TaskKind::ALL[k];
        let (train_size, eval_size) = if kind == TaskKind::ModularAdd { (40, 20) } else { (64, 32) };
        let spec = TaskSpec { kind, seed, train_size, eval_size, ..TaskSpec::default() };
        let a = generate(&spec).unwrap();
        prop_assert_eq!(&a, &generate(&spec).unwrap());
        for s in a.train.iter().chain(&a.eval) {
            prop_assert_eq!(&s.target, &spec.target_for(&s.input));
            let mut sorted = s.input.clone();
            sorted.sort();
            let expected = match kind {
                TaskKind::Copy => s.input.clone(),
                TaskKind::Reverse => s.input.iter().rev().cloned().collect(),
                TaskKind::SortTokens => sorted,
                TaskKind::CopyOffset => s.input.iter().map(|x| (x + 1) % 8).collect(),
                TaskKind::ModularAdd => vec![(s.input[0] + s.input[1]) % 8],
            };
            prop_assert_eq!(&s.target, &expected);
        }
        for e in &a.eval {
            prop_assert!(!a.train.iter().any(|t| t.input == e.input));
        }
    }
}
