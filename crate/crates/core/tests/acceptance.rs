//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail. Run alone with
//! `cargo test -p convseq-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use convseq::bench::{count_flops, scaling_report, TimingOptions, DEFAULT_GRID, LONG_SEQUENCE};
use convseq::conv::{depthwise_conv, dynamic_conv, lightweight_conv, Padding, TiedKernel};
use convseq::gradcheck::{full_suite, random_tensor, TOLERANCE};
use convseq::model::{census, enable_encoder_cross_attention, ConvVariant, Model, ModelConfig};
use convseq::objectives::vocab::{EOS_ID, PAD_ID, SENTINEL_BASE};
use convseq::objectives::{reconstruct, span_corrupt, SENTIMENT};
use convseq::tensor::{Graph, Tensor};
use convseq::train::{finetune, load_classification, pretrain, LrMode, MetricsLog, PretrainOutcome, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn corpus() -> Vec<String> {
    std::fs::read_to_string(data("corpus.txt"))
        .expect("data/corpus.txt")
        .lines()
        .map(String::from)
        .collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let results = full_suite(17).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let models = results.iter().filter(|r| r.name.starts_with("model")).count();
    let every_variant = ConvVariant::ALL
        .iter()
        .all(|v| results.iter().any(|r| r.name == format!("model_{v}")));
    check(
        failed.is_empty() && every_variant && elapsed < Duration::from_secs(120),
        format!(
            "{} checks ({models} models), worst {} at {:.2e} (limit {TOLERANCE:.0e}), failed {failed:?}, {:.1}s",
            results.len(),
            worst.name,
            worst.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn oracles() -> Outcome {
    const INSTANCES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 3];
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=4);
        let divisors: Vec<usize> = (1..=d).filter(|h| d % h == 0).collect();
        let heads = divisors[rng.gen_range(0..divisors.len())];
        let k = rng.gen_range(1..=5);
        let dil = rng.gen_range(1..=2);
        let (pad, padding) = if rng.gen() {
            (Pad::Same, Padding::Same)
        } else {
            (Pad::Causal, Padding::Causal)
        };
        let x = random_mat(&mut rng, n, d, 2.0);
        let g = Graph::new();
        let xv = g.constant(to_tensor(&x));

        let w = random_mat(&mut rng, d, k, 1.5);
        let got = depthwise_conv(xv, g.constant(to_tensor(&w)), padding, dil).map_err(|e| e.to_string())?;
        let want = Oracle::default().depthwise(&x, &w, dil, pad);
        worst[0] = worst[0].max(max_abs_diff(&to_mat(&got.to_tensor()), &want));

        let w = random_mat(&mut rng, heads, k, 3.0);
        let got = lightweight_conv(xv, g.constant(to_tensor(&w)), padding, dil).map_err(|e| e.to_string())?;
        let want = Oracle::default().lightweight(&x, &w, dil, pad);
        worst[1] = worst[1].max(max_abs_diff(&to_mat(&got.to_tensor()), &want));

        let wq = random_mat(&mut rng, d, heads * k, 1.5);
        let got = dynamic_conv(xv, g.constant(to_tensor(&wq)), heads, k, padding, dil).map_err(|e| e.to_string())?;
        let want = Oracle::default().dynamic(&x, &wq, heads, k, dil, pad);
        worst[2] = worst[2].max(max_abs_diff(&to_mat(&got.to_tensor()), &want));
    }
    check(
        worst.iter().all(|&w| w < 1e-10),
        format!(
            "{INSTANCES} instances each; max error depthwise {:.1e}, lightweight {:.1e}, dynamic {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn tied_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_sum = 0.0f64;
    let mut cases = 0;
    for heads in 1..=4 {
        for group in 1..=3 {
            for k in 2..=7 {
                let d = heads * group;
                let kernel = TiedKernel::new(random_tensor(&mut rng, &[heads, k])).map_err(|e| e.to_string())?;
                let eff = kernel.effective(d).map_err(|e| e.to_string())?;
                for r in 0..d {
                    worst_sum = worst_sum.max((eff.row(r).iter().sum::<f64>() - 1.0).abs());
                }
                let mut rows: Vec<Vec<u64>> = (0..d)
                    .map(|c| eff.row(c).iter().map(|v| v.to_bits()).collect())
                    .collect();
                rows.sort();
                rows.dedup();
                if rows.len() != heads {
                    return Err(format!("H={heads} d={d} k={k}: {} distinct kernels", rows.len()));
                }
                cases += 1;
            }
        }
    }
    // One head: every channel convolves with the same kernel, so the output
    // equals a depthwise convolution whose rows are all that kernel.
    let x = random_tensor(&mut rng, &[9, 6]);
    let w = random_tensor(&mut rng, &[1, 5]);
    let shared = TiedKernel::new(w.clone()).unwrap().normalized();
    let rows = Tensor::new([6, 5], shared.row(0).repeat(6)).unwrap();
    let g = Graph::new();
    let light = lightweight_conv(g.constant(x.clone()), g.constant(w), Padding::Same, 1)
        .unwrap()
        .to_tensor();
    let depth = depthwise_conv(g.constant(x), g.constant(rows), Padding::Same, 1)
        .unwrap()
        .to_tensor();
    let collapse = max_abs_diff(&to_mat(&light), &to_mat(&depth));
    check(
        worst_sum <= 1e-9 && collapse < 1e-12,
        format!("{cases} shapes with H distinct kernels; row sums within {worst_sum:.1e}; H=1 matches shared depthwise to {collapse:.1e}"),
    )
}

fn causality() -> Outcome {
    const PER_VARIANT: usize = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut trials = 0;
    for variant in ConvVariant::ALL {
        let base = Model::new(ModelConfig::mini(variant)).unwrap();
        for _ in 0..PER_VARIANT {
            let model = randomize(&base, &mut rng);
            let n = rng.gen_range(1..12);
            let src = random_tokens(&mut rng, n, 358);
            let m = rng.gen_range(2..10);
            let tgt = random_tokens(&mut rng, m, 358);
            let t = rng.gen_range(0..m - 1);
            let mut other = tgt.clone();
            for tok in &mut other[t..] {
                *tok = (*tok + rng.gen_range(1..358)) % 358;
            }
            let a = model.logits(&src, &tgt).map_err(|e| e.to_string())?;
            let b = model.logits(&src, &other).map_err(|e| e.to_string())?;
            for row in 0..=t {
                if a.row(row)
                    .iter()
                    .zip(b.row(row))
                    .any(|(p, q)| p.to_bits() != q.to_bits())
                {
                    return Err(format!(
                        "{variant}: logits at {row} changed when tokens from {t} on were perturbed"
                    ));
                }
            }
            trials += 1;
        }
    }
    Ok(format!(
        "{trials} trials across 4 variants, earlier logits bit-identical"
    ))
}

fn corruption() -> Outcome {
    const SEQUENCES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst_dev = 0.0f64;
    for i in 0..SEQUENCES {
        let n = rng.gen_range(3..=600);
        let tokens: Vec<u32> = (0..n).map(|_| rng.gen_range(2..SENTINEL_BASE)).collect();
        let ex = span_corrupt(&tokens, 3, 0.15, &mut rng).map_err(|e| e.to_string())?;
        if reconstruct(&ex.input_ids, &ex.target_ids).map_err(|e| e.to_string())? != tokens {
            return Err(format!("sequence {i} (length {n}) did not round-trip"));
        }
        if n >= 50 {
            worst_dev = worst_dev.max((ex.masked_count() as f64 - 0.15 * n as f64).abs());
        }
    }
    check(
        worst_dev <= 3.0,
        format!("{SEQUENCES} round trips; worst budget deviation {worst_dev:.2} tokens (limit one span, 3)"),
    )
}

fn pretrain_light(corpus: &[String]) -> Result<(PretrainOutcome, Duration), String> {
    let start = Instant::now();
    let out = pretrain(
        Model::new(ModelConfig::mini(ConvVariant::Light)).unwrap(),
        corpus,
        &RunConfig::default(),
        &mut MetricsLog::in_memory(),
        None,
    )
    .map_err(|e| e.to_string())?;
    Ok((out, start.elapsed()))
}

fn pretraining(first: &PretrainOutcome, took: Duration, corpus: &[String]) -> Outcome {
    let run = RunConfig::default();
    let (second, _) = pretrain_light(corpus)?;
    let same = first.train_curve == second.train_curve && first.checkpoint == second.checkpoint;
    let ratio = first.final_loss() / first.initial_loss();
    check(
        run.steps == 2000 && run.batch_size == 8 && ratio < 0.35 && same && took < Duration::from_secs(900),
        format!(
            "{} steps, batch {}: loss {:.3} -> {:.3} (ratio {ratio:.3}, limit 0.35); identical reruns: {same}; {:.1}s",
            run.steps,
            run.batch_size,
            first.initial_loss(),
            first.final_loss(),
            took.as_secs_f64()
        ),
    )
}

fn finetuning(light: &PretrainOutcome, corpus: &[String]) -> Outcome {
    let data = load_classification(&data("sentiment_toy.tsv"), &SENTIMENT).map_err(|e| e.to_string())?;
    let run = RunConfig {
        steps: 1000,
        batch_size: 32,
        lr_mode: LrMode::Constant,
        lr: 0.005,
        eval_every: 100,
        ..RunConfig::default()
    };
    let transformer = pretrain(
        Model::new(ModelConfig::mini(ConvVariant::Transformer)).unwrap(),
        corpus,
        &RunConfig::default(),
        &mut MetricsLog::in_memory(),
        None,
    )
    .map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = data.len() == 200;
    for (variant, pre) in [(ConvVariant::Light, light), (ConvVariant::Transformer, &transformer)] {
        let model = pre.checkpoint.clone().into_model().map_err(|e| e.to_string())?;
        let out =
            finetune(model, &data, &data, &SENTIMENT, &run, &mut MetricsLog::in_memory()).map_err(|e| e.to_string())?;
        ok &= out.peak.accuracy >= 0.95;
        parts.push(format!(
            "{variant} peak {:.3} at step {}",
            out.peak.accuracy, out.peak_step
        ));
    }
    check(
        ok,
        format!(
            "{} examples, {} steps, limit 0.95: {}",
            data.len(),
            run.steps,
            parts.join("; ")
        ),
    )
}

fn flops_scaling() -> Outcome {
    let start = Instant::now();
    let series = |variant| -> Vec<(f64, f64)> {
        DEFAULT_GRID
            .iter()
            .map(|&n| (n as f64, count_flops(&ModelConfig::base(variant), n).unwrap() as f64))
            .collect()
    };
    let slope = |pts: &[(f64, f64)], long: bool| {
        let pts: Vec<(f64, f64)> = pts
            .iter()
            .copied()
            .filter(|p| !long || p.0 >= LONG_SEQUENCE as f64)
            .collect();
        convseq::bench::log_log_slope(&pts).unwrap()
    };
    let t = series(ConvVariant::Transformer);
    let t_long = slope(&t, true);
    let mut ok = t_long > 1.3;
    let mut parts = Vec::new();
    for v in [ConvVariant::Light, ConvVariant::Dynamic, ConvVariant::Dilated] {
        let c = series(v);
        let s = slope(&c, false);
        let cheaper = c.iter().zip(&t).all(|(a, b)| a.1 < b.1);
        ok &= (0.95..=1.05).contains(&s) && cheaper;
        parts.push(format!("{v} {s:.3}{}", if cheaper { "" } else { " (not cheaper)" }));
    }
    let again = series(ConvVariant::Transformer) == t;
    let elapsed = start.elapsed();
    ok &= again && elapsed < Duration::from_secs(1);
    check(
        ok,
        format!(
            "conv slopes {} (limit [0.95, 1.05]); transformer slope at n>={LONG_SEQUENCE} {t_long:.3} (limit > 1.3); deterministic {again}; {:.3}s",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

/// Width 192 keeps the linear terms dominant over the grid while the largest
/// feasible points still fit in a few gigabytes.
fn benchmark_config() -> ModelConfig {
    ModelConfig {
        d_model: 192,
        d_ff: 768,
        num_heads: 4,
        tying_heads: 4,
        max_target_len: 4096,
        ..ModelConfig::mini(ConvVariant::Light)
    }
}

fn wall_clock() -> Outcome {
    let timing = TimingOptions {
        batch: 1,
        reps: 5,
        memory_budget: 3_500_000_000,
    };
    let report = scaling_report(&ConvVariant::ALL, &DEFAULT_GRID, &benchmark_config(), Some(&timing))
        .map_err(|e| e.to_string())?;
    let slopes = |v| report.slopes[&v];
    let t_long = slopes(ConvVariant::Transformer).time_long;
    let mut ok = t_long.is_some();
    let mut parts = Vec::new();
    for v in [ConvVariant::Light, ConvVariant::Dynamic, ConvVariant::Dilated] {
        let s = slopes(v);
        let feasible = report.records.iter().filter(|r| r.variant == v && r.feasible).count();
        ok &= matches!((s.time, s.time_long, t_long), (Some(a), Some(b), Some(t)) if a <= 1.2 && b < t);
        parts.push(format!(
            "{v} {:.3} (long {:.3}, {feasible} points)",
            s.time.unwrap_or(f64::NAN),
            s.time_long.unwrap_or(f64::NAN)
        ));
    }
    let t_points = report
        .records
        .iter()
        .filter(|r| r.variant == ConvVariant::Transformer && r.feasible)
        .count();
    check(
        ok,
        format!(
            "time slopes {} (limit 1.2); transformer long {:.3} ({t_points} points)",
            parts.join(", "),
            t_long.unwrap_or(f64::NAN)
        ),
    )
}

fn cross_attention_knob() -> Outcome {
    for variant in [ConvVariant::Light, ConvVariant::Dynamic, ConvVariant::Dilated] {
        let off = census(&ModelConfig::mini(variant)).map_err(|e| e.to_string())?;
        let on = census(&enable_encoder_cross_attention(ModelConfig::mini(variant))).map_err(|e| e.to_string())?;
        if off.encoder_attention_sublayers != 0 || on.encoder_attention_sublayers != 1 {
            return Err(format!(
                "{variant}: {} attention sublayers without the knob, {} with it",
                off.encoder_attention_sublayers, on.encoder_attention_sublayers
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let a = random_tokens(&mut rng, 20, 358);
    let b = random_tokens(&mut rng, 10, 358);
    let join = |seg_b: &[u32]| -> Vec<u32> { a.iter().copied().chain([EOS_ID]).chain(seg_b.iter().copied()).collect() };
    let (src, blanked) = (join(&b), join(&[PAD_ID; 10]));
    // Two width-7 layers reach six positions each way.
    let far = 0..15;

    let on = randomize(
        &Model::new(enable_encoder_cross_attention(ModelConfig::mini(ConvVariant::Light))).unwrap(),
        &mut rng,
    );
    let mut params = on.params().clone();
    params.retain(|name, _| !name.starts_with("encoder.segment_attn"));
    let off = Model::from_params(ModelConfig::mini(ConvVariant::Light), params).unwrap();

    // Per far position, the largest change over channels.
    let changes = |m: &Model| -> Vec<f64> {
        let (x, y) = (m.encode(&src).unwrap(), m.encode(&blanked).unwrap());
        far.clone()
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(y.row(i))
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let leak_off = changes(&off).into_iter().fold(0.0, f64::max);
    let flow_on = changes(&on).into_iter().fold(f64::INFINITY, f64::min);
    check(
        leak_off == 0.0 && flow_on > 1e-9,
        format!(
            "one attention sublayer only with the knob; far-segment change without it {leak_off:.1e}, smallest with it {flow_on:.1e}"
        ),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let corpus = corpus();
    let mut results = vec![
        run("gradient-suite", gradients),
        run("oracle-equivalence", oracles),
        run("tied-kernel-structure", tied_structure),
        run("causality", causality),
        run("span-corruption", corruption),
    ];
    let light = pretrain_light(&corpus);
    results.push(run("desk-pretraining", || {
        let (out, took) = light.clone()?;
        pretraining(&out, took, &corpus)
    }));
    results.push(run("desk-finetuning", || finetuning(&light.clone()?.0, &corpus)));
    results.push(run("flops-scaling", flops_scaling));
    results.push(run("wall-clock-scaling", wall_clock));
    results.push(run("encoder-cross-attention", cross_attention_knob));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
