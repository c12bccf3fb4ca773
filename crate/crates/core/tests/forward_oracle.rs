//! Straight-line re-implementation of the forward pass on plain vectors.

use cora_core::{Adapter, AdapterShape, InitMode, ModelConfig, ParamBlock, ToyTransformer};
use proptest::prelude::*;

type Mat = Vec<Vec<f64>>;

fn to_vecs(m: &cora_core::Matrix) -> Mat {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Logits for one sequence.
fn oracle_logits(model: &ToyTransformer, tokens: &[usize]) -> Mat {
    let cfg = model.config();
    let (dm, dk) = (cfg.d_model, cfg.d_k);
    let embed = to_vecs(model.param(ParamBlock::Embed).unwrap());
    let pos = to_vecs(model.param(ParamBlock::PosEmbed).unwrap());
    let mut w = to_vecs(model.param(ParamBlock::AttnBase).unwrap());
    if let Some(ad) = &model.attention.adapter {
        let ab = mul(&to_vecs(ad.a()), &to_vecs(ad.b()));
        for i in 0..w.len() {
            for j in 0..dk {
                w[i][j] += ad.scale() * ab[i][j];
            }
        }
    }
    let wq: Mat = w[0..dm].to_vec();
    let wk: Mat = w[dm..2 * dm].to_vec();
    let wv: Mat = w[2 * dm..3 * dm].to_vec();

    let x: Mat = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| (0..dm).map(|j| embed[tok][j] + pos[t][j]).collect())
        .collect();
    let (q, k, v) = (mul(&x, &wq), mul(&x, &wk), mul(&x, &wv));
    let len = tokens.len();
    let mut h = vec![vec![0.0; dk]; len];
    for t in 0..len {
        let scores: Vec<f64> = (0..=t)
            .map(|u| (0..dk).map(|j| q[t][j] * k[u][j]).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let a = softmax(&scores);
        for (u, au) in a.iter().enumerate() {
            for j in 0..dk {
                h[t][j] += au * v[u][j];
            }
        }
    }
    let act: Mat = mul(&h, &to_vecs(model.param(ParamBlock::FfnW1).unwrap()))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let ff = mul(&act, &to_vecs(model.param(ParamBlock::FfnW2).unwrap()));
    let y: Mat = (0..len).map(|t| (0..dm).map(|j| x[t][j] + ff[t][j]).collect()).collect();
    mul(&y, &to_vecs(model.param(ParamBlock::OutProj).unwrap()))
}

fn tiny() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        d_k: 8,
        d_ff: 12,
        seq_len: 6,
    }
}

fn with_random_adapter(seed: u64) -> ToyTransformer {
    let mut m = ToyTransformer::init(tiny(), seed).unwrap();
    let a = Adapter::init(InitMode::AblateRandom, AdapterShape::of(&m.attention.base), 3, seed, None)
        .unwrap()
        .with_scale(0.7)
        .unwrap();
    m.attention.adapter = Some(a);
    m
}

#[test]
fn logits_and_probabilities_match_oracle() {
    let m = with_random_adapter(21);
    let tokens = [3, 10, 0, 7, 7, 2];
    let f = m.forward(&tokens).unwrap();
    let want = oracle_logits(&m, &tokens);
    for t in 0..tokens.len() {
        let p = softmax(&want[t]);
        for j in 0..11 {
            assert!((f.logits().get(t, j) - want[t][j]).abs() <= 1e-10);
            assert!((f.probs().get(t, j) - p[j]).abs() <= 1e-10);
        }
    }
}

#[test]
fn merged_adapter_forward_is_equivalent() {
    for seed in 0..4 {
        let m = with_random_adapter(seed);
        let merged = m.merged();
        assert!(merged.attention.adapter.is_none());
        let tokens = [1, 4, 9, 0, 5];
        let a = m.forward(&tokens).unwrap();
        let b = merged.forward(&tokens).unwrap();
        assert!(a.probs().max_abs_diff(b.probs()).unwrap() <= 1e-10);
    }
}

#[test]
fn batched_rows_equal_single_sequences() {
    let m = with_random_adapter(8);
    let s1 = [1, 2, 3, 4];
    let s2 = [10, 0, 0, 5];
    let both = m.forward_batch(&[&s1, &s2]).unwrap();
    let one = m.forward(&s2).unwrap();
    for t in 0..4 {
        assert_eq!(both.probs().row(4 + t), one.probs().row(t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rows_are_distributions_and_deterministic(
        seed in any::<u64>(),
        tokens in proptest::collection::vec(0usize..11, 1..=6),
    ) {
        let m = with_random_adapter(seed);
        let a = m.forward(&tokens).unwrap();
        let b = m.forward(&tokens).unwrap();
        prop_assert_eq!(a.probs(), b.probs());
        for t in 0..tokens.len() {
            let row = a.probs().row(t);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn future_tokens_do_not_affect_the_past(
        seed in any::<u64>(),
        tokens in proptest::collection::vec(0usize..11, 2..=6),
        cut in 0usize..5,
        replacement in 0usize..11,
    ) {
        let cut = cut % (tokens.len() - 1);
        let m = with_random_adapter(seed);
        let mut other = tokens.clone();
        let last = other.len() - 1;
        other[last] = replacement;
        for t in other.iter_mut().skip(cut + 1) {
            *t = replacement;
        }
        let a = m.forward(&tokens).unwrap();
        let b = m.forward(&other).unwrap();
        for t in 0..=cut {
            prop_assert_eq!(a.probs().row(t), b.probs().row(t));
        }
    }
}
