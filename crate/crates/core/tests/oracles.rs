mod common;

use common::*;
use convseq::bench::{breakdown, count_flops, decoder_len};
use convseq::conv::{depthwise_conv, dynamic_conv, lightweight_conv, Padding};
use convseq::model::attention::{causal_mask, multi_head_attention, AttentionVars};
use convseq::model::{enable_encoder_cross_attention, ConvVariant, Model, ModelConfig};
use convseq::tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn padding(p: Pad) -> Padding {
    match p {
        Pad::Same => Padding::Same,
        Pad::Causal => Padding::Causal,
    }
}

struct Instance {
    x: Mat,
    heads: usize,
    k: usize,
    dilation: usize,
    pad: Pad,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=8);
    let d = rng.gen_range(1..=4);
    let divisors: Vec<usize> = (1..=d).filter(|h| d % h == 0).collect();
    Instance {
        x: random_mat(rng, n, d, 2.0),
        heads: divisors[rng.gen_range(0..divisors.len())],
        k: rng.gen_range(1..=5),
        dilation: rng.gen_range(1..=2),
        pad: if rng.gen() { Pad::Same } else { Pad::Causal },
    }
}

#[test]
fn depthwise_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let c = instance(&mut rng);
        let w = random_mat(&mut rng, c.x[0].len(), c.k, 1.5);
        let want = Oracle::default().depthwise(&c.x, &w, c.dilation, c.pad);
        let g = Graph::new();
        let got = depthwise_conv(
            g.constant(to_tensor(&c.x)),
            g.constant(to_tensor(&w)),
            padding(c.pad),
            c.dilation,
        )
        .unwrap();
        assert!(max_abs_diff(&to_mat(&got.to_tensor()), &want) < TOL);
    }
}

#[test]
fn lightweight_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let c = instance(&mut rng);
        let w = random_mat(&mut rng, c.heads, c.k, 3.0);
        let want = Oracle::default().lightweight(&c.x, &w, c.dilation, c.pad);
        let g = Graph::new();
        let got = lightweight_conv(
            g.constant(to_tensor(&c.x)),
            g.constant(to_tensor(&w)),
            padding(c.pad),
            c.dilation,
        )
        .unwrap();
        assert!(max_abs_diff(&to_mat(&got.to_tensor()), &want) < TOL);
    }
}

#[test]
fn dynamic_matches_materialized_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let c = instance(&mut rng);
        let wq = random_mat(&mut rng, c.x[0].len(), c.heads * c.k, 1.5);
        let want = Oracle::default().dynamic(&c.x, &wq, c.heads, c.k, c.dilation, c.pad);
        let g = Graph::new();
        let got = dynamic_conv(
            g.constant(to_tensor(&c.x)),
            g.constant(to_tensor(&wq)),
            c.heads,
            c.k,
            padding(c.pad),
            c.dilation,
        )
        .unwrap();
        assert!(max_abs_diff(&to_mat(&got.to_tensor()), &want) < TOL);
    }
}

#[test]
fn dynamic_four_positions_single_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_mat(&mut rng, 4, 2, 1.0);
    let wq = random_mat(&mut rng, 2, 3, 1.0);
    let want = Oracle::default().dynamic(&x, &wq, 1, 3, 1, Pad::Same);
    let g = Graph::new();
    let got = dynamic_conv(
        g.constant(to_tensor(&x)),
        g.constant(to_tensor(&wq)),
        1,
        3,
        Padding::Same,
        1,
    )
    .unwrap();
    assert!(max_abs_diff(&to_mat(&got.to_tensor()), &want) < TOL);
}

#[test]
fn attention_matches_per_head_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for causal in [false, true] {
        let (m, n) = if causal { (3, 3) } else { (2, 3) };
        let xq = random_mat(&mut rng, m, 4, 1.0);
        let xkv = random_mat(&mut rng, n, 4, 1.0);
        let [wq, wk, wv, wo] = [(); 4].map(|_| random_mat(&mut rng, 4, 4, 1.0));
        let want = Oracle::default().attention(&xq, &xkv, &wq, &wk, &wv, &wo, 2, causal);
        let g = Graph::new();
        let p = AttentionVars {
            q: g.constant(to_tensor(&wq)),
            k: g.constant(to_tensor(&wk)),
            v: g.constant(to_tensor(&wv)),
            o: g.constant(to_tensor(&wo)),
        };
        let mask = causal.then(|| causal_mask(&g, m));
        let got = multi_head_attention(g.constant(to_tensor(&xq)), g.constant(to_tensor(&xkv)), &p, 2, mask).unwrap();
        assert!(max_abs_diff(&to_mat(&got.to_tensor()), &want) < TOL);
    }
}

fn reference_configs() -> Vec<ModelConfig> {
    let mut out: Vec<ModelConfig> = ConvVariant::ALL.iter().map(|&v| ModelConfig::mini(v)).collect();
    out.push(enable_encoder_cross_attention(ModelConfig::mini(ConvVariant::Light)));
    out.push(ModelConfig {
        dilation: 2,
        window: 4,
        ..ModelConfig::mini(ConvVariant::Dynamic)
    });
    out
}

#[test]
fn whole_model_matches_reference_and_cost_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for cfg in reference_configs() {
        let model = randomize(&Model::new(cfg.clone()).unwrap(), &mut rng);
        for (n, m) in [(9, 4), (5, 7)] {
            let src = random_tokens(&mut rng, n, cfg.vocab_size);
            let tgt = random_tokens(&mut rng, m, cfg.vocab_size);
            let mut reference = ReferenceModel::new(&model);
            let want = reference.logits(&src, &tgt);
            let got = to_mat(&model.logits(&src, &tgt).unwrap());
            let err = max_abs_diff(&got, &want);
            assert!(err < 1e-9, "{} logits differ by {err}", cfg.variant);
            assert_eq!(
                2 * reference.oracle.macs,
                breakdown(&cfg, n, m).unwrap().total(),
                "{} n={n} m={m}",
                cfg.variant
            );
        }
    }
}

#[test]
fn count_flops_equals_instrumented_multiplications() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for cfg in reference_configs() {
        let model = Model::new(cfg.clone()).unwrap();
        for n in [4, 20, 33] {
            let m = decoder_len(n);
            let mut reference = ReferenceModel::new(&model);
            reference.logits(
                &random_tokens(&mut rng, n, cfg.vocab_size),
                &random_tokens(&mut rng, m, cfg.vocab_size),
            );
            assert_eq!(2 * reference.oracle.macs, count_flops(&cfg, n).unwrap());
        }
    }
}

#[test]
fn single_depthwise_layer_flops() {
    let mut o = Oracle::default();
    let x = vec![vec![1.0; 4]; 10];
    o.depthwise(&x, &vec![vec![0.5; 3]; 4], 1, Pad::Same);
    assert_eq!(2 * o.macs, 240);
    assert_eq!(convseq::bench::flops::conv(10, 4, 3), 240);
}
