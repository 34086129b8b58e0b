use dynrag::controller::{attend, fuse, AblationVariant};
use dynrag::corpus::{generate_synthetic, generate_synthetic_raw, parse_jsonl, split, write_jsonl, SyntheticSpec};
use dynrag::generator::GenerateOptions;
use dynrag::harness::RunConfig;
use dynrag::index::{build_index, score_all, top_k};
use dynrag::metrics::{bleu, robustness, rouge_l, RobustnessOptions};
use dynrag::params::{ModelConfig, ModelParams};
use dynrag::tensor::{grad_check, Graph, Tensor};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new([rows, cols], d).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c))
}

/// Fixed seed so every run explores the same cases.
fn fixed(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(fixed(256))]

    #[test]
    fn softmax_rows_are_distributions(x in sized_matrix(5, 9), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let s = g.softmax(a).unwrap();
        let shifted = Tensor::new(x.shape(), x.data().iter().map(|v| v + shift).collect()).unwrap();
        let b = g.constant(shifted);
        let t = g.softmax(b).unwrap();
        let (p, q) = (g.value(s).clone(), g.value(t).clone());
        for r in 0..p.rows() {
            let row = p.row_slice(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && (v < 1.0 || row.len() == 1)));
            for (u, v) in row.iter().zip(q.row_slice(r)) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative(x in matrix(1, 7), target in 0usize..7) {
        let mut g = Graph::new();
        let l = g.constant(x);
        let ce = g.cross_entropy(l, target).unwrap();
        prop_assert!(g.scalar(ce) >= 0.0);
    }

    #[test]
    fn random_composite_passes_gradcheck(w in matrix(3, 4), v in matrix(4, 3), gain in matrix(1, 4), target in 0usize..3) {
        let f = |g: &mut Graph, p: &[dynrag::tensor::Var]| {
            let h = g.tanh(p[0])?;
            let offset = g.constant(Tensor::zeros(1, 4));
            let n = g.layer_norm(h, p[2], offset)?;
            let m = g.mean_rows(n)?;
            let logits = g.matmul(m, p[1])?;
            let ce = g.cross_entropy(logits, target)?;
            let sq = g.mul(logits, logits)?;
            let reg = g.sum(sq)?;
            g.add(ce, reg)
        };
        let report = grad_check(f, &[w, v, gain], 1e-5).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn scores_are_linear_in_the_query(q1 in matrix(1, 4), q2 in matrix(1, 4), docs in matrix(6, 4), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut g = Graph::new();
        let m = g.constant(docs);
        let combo = Tensor::new([1, 4], q1.data().iter().zip(q2.data()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let (v1, v2, vc) = (g.constant(q1), g.constant(q2), g.constant(combo));
        let s1 = score_all(&mut g, v1, m).unwrap();
        let s2 = score_all(&mut g, v2, m).unwrap();
        let sc = score_all(&mut g, vc, m).unwrap();
        for i in 0..6 {
            let expect = a * g.value(s1).data()[i] + b * g.value(s2).data()[i];
            prop_assert!(close(g.value(sc).data()[i], expect, 1e-12));
        }
    }

    #[test]
    fn top_k_ignores_positive_scaling(scores in prop::collection::vec(-5.0f64..5.0, 1..12), scale in 0.01f64..100.0, k_frac in 0.0f64..1.0) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("d{i:02}")).collect();
        let k = 1 + ((scores.len() - 1) as f64 * k_frac) as usize;
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        let a: Vec<usize> = top_k(&scores, &ids, k).unwrap().into_iter().map(|(i, _)| i).collect();
        let b: Vec<usize> = top_k(&scaled, &ids, k).unwrap().into_iter().map(|(i, _)| i).collect();
        prop_assert_eq!(a.len(), k);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fused_context_lies_in_the_candidate_hull(q in matrix(1, 5), cands in sized_matrix(6, 5).prop_filter("width", |c| c.cols() == 5)) {
        let mut g = Graph::new();
        let (qv, cv) = (g.constant(q), g.constant(cands.clone()));
        let att = attend(&mut g, qv, cv).unwrap();
        let alpha = g.value(att.alpha).clone();
        prop_assert!((alpha.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = fuse(&mut g, att.alpha, cv).unwrap();
        for j in 0..5 {
            let col: Vec<f64> = (0..cands.rows()).map(|i| cands.get(i, j)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let x = g.value(c).get(0, j);
            prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
        }
    }

    #[test]
    fn text_metrics_are_bounded(a in prop::collection::vec(0u8..6, 0..12), b in prop::collection::vec(0u8..6, 1..12)) {
        let bl = bleu(&a, &b, 4).unwrap();
        let r = rouge_l(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&bl));
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((bleu(&b, &b, 4).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(rouge_l(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn truncating_a_perfect_candidate_lowers_bleu(reference in prop::collection::vec(0u8..6, 2..12)) {
        let scores: Vec<f64> = (1..=reference.len()).map(|m| bleu(&reference[..m], &reference, 4).unwrap()).collect();
        prop_assert_eq!(*scores.last().unwrap(), 1.0);
        for w in scores.windows(2) {
            prop_assert!(w[0] < w[1], "{:?}", scores);
        }
    }

    #[test]
    fn score_gradients_pass_gradcheck(q in matrix(1, 4), docs in matrix(5, 4), weights in matrix(1, 5)) {
        let f = |g: &mut Graph, p: &[dynrag::tensor::Var]| {
            let s = score_all(g, p[0], p[1])?;
            let w = g.constant(weights.clone());
            let ws = g.mul(s, w)?;
            let linear = g.sum(ws)?;
            let ce = g.cross_entropy(s, 0)?;
            g.add(ce, linear)
        };
        let report = grad_check(f, &[q, docs], 1e-5).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn split_is_a_deterministic_partition(n in 3usize..200, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let s = split(&items, (0.6, 0.2, 0.2), seed).unwrap();
        let again = split(&items, (0.6, 0.2, 0.2), seed).unwrap();
        prop_assert_eq!(&s.train, &again.train);
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn config_render_round_trips(steps in 1usize..5000, lambda in 0.0f64..4.0, lr in 1e-6f64..1.0, k in prop::option::of(1usize..10), seed in any::<u64>()) {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.train.steps = steps;
        cfg.train.lambda = lambda;
        cfg.train.lr = lr;
        cfg.train.k = k;
        prop_assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(fixed(12))]

    #[test]
    fn synthetic_corpus_round_trips_through_jsonl(seed in any::<u64>()) {
        let raw = generate_synthetic_raw(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&raw, &mut buf).unwrap();
        prop_assert_eq!(parse_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap(), raw);
    }
}

proptest! {
    #![proptest_config(fixed(4))]

    #[test]
    fn robustness_ignores_example_order(seed in any::<u64>(), rot in 1usize..11) {
        let corpus = generate_synthetic(&SyntheticSpec { n_examples: 40, ..SyntheticSpec::default() }).unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            layers: 1,
            ff: 16,
            t_max: 8,
            ctrl_hidden: 8,
            ..ModelConfig::for_vocab(corpus.vocab.len())
        };
        let params = ModelParams::init(&cfg, seed).unwrap();
        let index = build_index(&corpus.docs, &params.encoder).unwrap();
        let gen = GenerateOptions { max_len: 3, k: Some(4), variant: AblationVariant::AttentionFusion, heads: 2, keep_logits: false };
        let opts = RobustnessOptions { seed, n_variants: 2, ..RobustnessOptions::default() };
        let examples = &corpus.examples[..12];
        let mut rotated = examples.to_vec();
        rotated.rotate_left(rot);
        let p = corpus.perturber();
        let a = robustness(examples, &params, &index, &gen, &p, &opts).unwrap();
        let b = robustness(&rotated, &params, &index, &gen, &p, &opts).unwrap();
        prop_assert_eq!(a.pct.to_bits(), b.pct.to_bits());
        prop_assert_eq!(a.pairs, 24);
    }
}
