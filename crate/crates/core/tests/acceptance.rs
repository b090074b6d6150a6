//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The extended deraining-efficacy run (criterion 7, 3 x 2000 training
//! steps) is skipped unless `--include-ignored` is passed or
//! `DERAIN_NIGHTLY` is set. `--ignored` runs it alone, and bare numbers
//! select individual criteria:
//!
//! ```text
//! cargo test --test acceptance -- --include-ignored
//! cargo test --test acceptance -- --ignored
//! cargo test --test acceptance -- 1 5 10
//! ```

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use derain_cyclegan::autograd::{Graph, NodeId};
use derain_cyclegan::data::{
    load_paired, write_synth_dataset, DatasetLayout, SynthDataSpec, UnpairedSet, PAIRED_TEST_DIR,
};
use derain_cyclegan::engine::{evaluate, evaluate_identity, rainmake, Checkpoint, StepLog, Trainer, TrainingConfig};
use derain_cyclegan::gradcheck::{check_input, check_params, sample_param_elements, GradCheck, DEFAULT_STEP};
use derain_cyclegan::imaging::{dequantize, quantize, AttentionMask, Image};
use derain_cyclegan::losses::{
    adversarial_losses, attention_loss_node, attention_loss_parts, cycle_loss_node, discriminator_loss_node,
    generator_adv_loss_node, gmm_em_fit, gmm_nll, gmm_nll_node, perceptual_loss_node, reconstructive_loss_node,
    FeatureExtractor, GmmModel, LossTerm, ABLATION_PRESETS,
};
use derain_cyclegan::metrics::{psnr, ssim, ColorMode, PEAK_8BIT};
use derain_cyclegan::model::{CandidateActivation, ConvLstm, HybridBlock, LstmState, ModelBundle, ModelConfig};
use derain_cyclegan::params::{Group, ParamStore};
use derain_cyclegan::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------- 1

fn loss_golden_values() -> Outcome {
    let half = AttentionMask::from_tensor(Tensor::full(&[1, 16, 16], 0.5)).map_err(e)?;
    let zero_mask = AttentionMask::from_tensor(Tensor::zeros(&[1, 16, 16])).map_err(e)?;
    let (att, att_n) = attention_loss_parts(&half, &zero_mask, &Tensor::zeros(&[1, 16, 16])).map_err(e)?;
    ensure(rel_close(att, 0.25, 1e-6) && att_n == 0.0, || format!("attention {att}, {att_n}"))?;

    let scores = vec![Tensor::full(&[1, 8, 8], 0.5), Tensor::full(&[1, 4, 4], 0.5), Tensor::full(&[1, 2, 2], 0.5)];
    let (d, g) = adversarial_losses(&scores, &scores).map_err(e)?;
    let ln2 = -(0.5f64.ln());
    ensure(rel_close(d, 2.0 * ln2, 1e-6) && rel_close(g, ln2, 1e-6), || format!("adversarial ({d}, {g})"))?;

    let model = GmmModel::new(vec![1.0], vec![1.0]).map_err(e)?;
    let nll = gmm_nll(&Tensor::zeros(&[3, 8, 8]), &model).map_err(e)?;
    let oracle = 0.5 * (2.0 * std::f64::consts::PI).ln();
    ensure(rel_close(nll, oracle, 1e-6) && rel_close(nll, 0.918939, 1e-6), || format!("gmm nll {nll}"))?;
    Ok(format!("att {att}, adv ({d:.6}, {g:.6}), gmm {nll:.6}"))
}

// ---------------------------------------------------------------- 2

fn wavy(c: usize, h: usize, w: usize, phase: f64, amp: f64) -> Tensor {
    let data = (0..c * h * w).map(|i| amp * ((i as f64) * 0.61 + phase).sin()).collect();
    Tensor::new(vec![c, h, w], data).unwrap()
}

/// Gaussian weights plus small non-zero biases so no path is dead.
fn randomize(store: &mut ParamStore, seed: u64) {
    store.init_gaussian(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.entry(id).decay {
            for (j, v) in store.get_mut(id).data_mut().iter_mut().enumerate() {
                *v = 0.05 * ((j as f64) * 1.7 + id.index() as f64).sin();
            }
        }
    }
}

fn small_model(seed: u64) -> ModelBundle {
    let cfg = ModelConfig { uarse_width: 4, generator_width: 4, discriminator_width: 4, ..ModelConfig::default() };
    let mut b = ModelBundle::zeroed(cfg).unwrap();
    randomize(&mut b.store, seed);
    b
}

fn gradient_suite() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, c: derain_cyclegan::Result<GradCheck>| -> Result<(), String> {
        let err = c.map_err(|x| format!("{name}: {x}"))?.relative_error();
        worst.push((name, err));
        Ok(())
    };
    let slice = |g: &mut Graph, x: NodeId, a: usize, n: usize| g.slice_channels(x, a, n);

    // Losses.
    let target = wavy(1, 8, 8, 0.0, 0.4).map(|v| v + 0.5);
    record(
        "attention",
        check_input(&wavy(2, 8, 8, 1.0, 0.4).map(|v| v + 0.5), DEFAULT_STEP, |g, x| {
            let (a, b) = (slice(g, x, 0, 1)?, slice(g, x, 1, 1)?);
            attention_loss_node(g, a, b, &target)
        }),
    )?;
    let scores = wavy(2, 8, 8, 0.5, 0.45).map(|v| v + 0.5);
    record(
        "adversarial (D)",
        check_input(&scores, DEFAULT_STEP, |g, x| {
            let (a, b) = (slice(g, x, 0, 1)?, slice(g, x, 1, 1)?);
            discriminator_loss_node(g, &[a], &[b])
        }),
    )?;
    record(
        "adversarial (G)",
        check_input(&scores, DEFAULT_STEP, |g, x| {
            let (a, b) = (slice(g, x, 0, 1)?, slice(g, x, 1, 1)?);
            generator_adv_loss_node(g, &[a, b])
        }),
    )?;
    let other = wavy(6, 8, 8, 2.0, 0.9);
    record(
        "cycle",
        check_input(&wavy(6, 8, 8, 0.2, 0.9), DEFAULT_STEP, |g, x| {
            let o = g.constant(other.clone());
            let (r, n) = (slice(g, x, 0, 3)?, slice(g, x, 3, 3)?);
            let (rr, nn) = (slice(g, o, 0, 3)?, slice(g, o, 3, 3)?);
            cycle_loss_node(g, r, rr, n, nn)
        }),
    )?;
    let extractor = FeatureExtractor::default();
    let rainy = wavy(3, 8, 8, 1.9, 0.8);
    record(
        "perceptual",
        check_input(&wavy(3, 8, 8, 0.7, 0.8), DEFAULT_STEP, |g, x| {
            let r = g.constant(rainy.clone());
            perceptual_loss_node(g, &extractor, x, r)
        }),
    )?;
    let mixture = GmmModel::new(vec![0.2, 0.5, 0.3], vec![0.01, 0.1, 1.0]).map_err(e)?;
    record("gmm", check_input(&wavy(3, 8, 8, 0.1, 0.6), DEFAULT_STEP, |g, x| gmm_nll_node(g, x, &mixture)))?;
    record(
        "reconstructive",
        check_input(&wavy(4, 8, 8, 0.4, 0.5).map(|v| v + 0.2), DEFAULT_STEP, |g, x| {
            let (m, n_r) = (slice(g, x, 0, 1)?, slice(g, x, 1, 3)?);
            let r = g.constant(rainy.clone());
            reconstructive_loss_node(g, m, n_r, r)
        }),
    )?;

    // ConvLSTM step, input and parameters.
    let mut store = ParamStore::new();
    let lstm = ConvLstm::new(&mut store, "lstm", Group::Uarse, 2, CandidateActivation::Sigmoid);
    randomize(&mut store, 3);
    record(
        "convlstm (input)",
        check_input(&wavy(6, 8, 8, 0.3, 1.0), DEFAULT_STEP, |g, x| {
            let inp = slice(g, x, 0, 2)?;
            let state = LstmState { hidden: slice(g, x, 2, 2)?, cell: slice(g, x, 4, 2)? };
            let (h, next) = lstm.step(g, &store, inp, state)?;
            let s = g.square(h);
            let a = g.mean(s);
            let c = g.mean(next.cell);
            g.add(a, c)
        }),
    )?;
    record(
        "convlstm (params)",
        check_params(&store, &sample_param_elements(&store, 16), DEFAULT_STEP, |g, store| {
            let x = g.constant(wavy(2, 8, 8, 0.9, 1.0));
            let s = lstm.zero_state(g, 8, 8);
            let (h1, s1) = lstm.step(g, store, x, s)?;
            let (h2, _) = lstm.step(g, store, h1, s1)?;
            let sq = g.square(h2);
            Ok(g.mean(sq))
        }),
    )?;

    // Hybrid block.
    let mut store = ParamStore::new();
    let block = HybridBlock::new(&mut store, "hybrid", Group::Uarse, 3, 2, 2);
    randomize(&mut store, 4);
    let hybrid = |g: &mut Graph, store: &ParamStore, x: NodeId| {
        let y = block.forward(g, store, x)?;
        let s = g.square(y);
        Ok(g.mean(s))
    };
    let x8 = wavy(3, 8, 8, 0.5, 0.9);
    record("hybrid (input)", check_input(&x8, DEFAULT_STEP, |g, x| hybrid(g, &store, x)))?;
    record(
        "hybrid (params)",
        check_params(&store, &sample_param_elements(&store, 10), DEFAULT_STEP, |g, store| {
            let x = g.constant(x8.clone());
            hybrid(g, store, x)
        }),
    )?;

    let group_probes = |b: &ModelBundle, group: Group, per: usize| -> Vec<_> {
        sample_param_elements(&b.store, per).into_iter().filter(|(id, _)| b.store.entry(*id).group == group).collect()
    };

    // U-ARSE, all six stages.
    let b = small_model(6);
    let uarse = |g: &mut Graph, store: &ParamStore, x: NodeId| {
        let out = b.uarse.forward(g, store, x)?;
        let s = g.square(out.final_mask);
        let a = g.mean(s);
        let m = g.mean(out.stage_masks[2]);
        g.add(a, m)
    };
    record("u-arse (input)", check_input(&x8, DEFAULT_STEP, |g, x| uarse(g, &b.store, x)))?;
    record(
        "u-arse (params)",
        check_params(&b.store, &group_probes(&b, Group::Uarse, 2), DEFAULT_STEP, |g, store| {
            let x = g.constant(x8.clone());
            uarse(g, store, x)
        }),
    )?;

    // Generator on (image, mask).
    let b = small_model(8);
    let gen_in = wavy(4, 8, 8, 0.6, 0.9).map(|v| v.abs().min(0.99));
    let generator = |g: &mut Graph, store: &ParamStore, x: NodeId| {
        let (img, mask) = (slice(g, x, 0, 3)?, slice(g, x, 3, 1)?);
        let y = b.g_n.forward(g, store, mask, img)?;
        let s = g.square(y);
        Ok(g.mean(s))
    };
    record("generator (input)", check_input(&gen_in, DEFAULT_STEP, |g, x| generator(g, &b.store, x)))?;
    record(
        "generator (params)",
        check_params(&b.store, &group_probes(&b, Group::GenN, 4), DEFAULT_STEP, |g, store| {
            let x = g.constant(gen_in.clone());
            generator(g, store, x)
        }),
    )?;

    // Discriminator: three scales need 16x16 (the smallest accepted image).
    let b = small_model(10);
    let x16 = wavy(3, 16, 16, 0.8, 0.9);
    let disc = |g: &mut Graph, store: &ParamStore, x: NodeId| {
        let scores = b.d_r.forward(g, store, x)?;
        let terms: Vec<(NodeId, f64)> = scores.iter().map(|&s| (g.mean(s), 1.0)).collect();
        g.combine(&terms)
    };
    record("discriminator (input)", check_input(&x16, DEFAULT_STEP, |g, x| disc(g, &b.store, x)))?;
    record(
        "discriminator (params)",
        check_params(&b.store, &group_probes(&b, Group::DiscR, 5), DEFAULT_STEP, |g, store| {
            let x = g.constant(x16.clone());
            disc(g, store, x)
        }),
    )?;

    let (name, max) = worst.iter().copied().fold(("", 0.0), |acc, w| if w.1 > acc.1 { w } else { acc });
    let failing: Vec<String> =
        worst.iter().filter(|(_, err)| err.is_nan() || *err > 1e-3).map(|(n, err)| format!("{n} {err:.2e}")).collect();
    ensure(failing.is_empty(), || format!("rel. err > 1e-3: {}", failing.join(", ")))?;
    Ok(format!("{} checks, max rel. err {max:.2e} ({name}); discriminator at 16x16", worst.len()))
}

// ---------------------------------------------------------------- 3

fn zero_weight_cases() -> Outcome {
    let mut store = ParamStore::new();
    let lstm = ConvLstm::new(&mut store, "lstm", Group::Uarse, 3, CandidateActivation::Sigmoid);
    let mut g = Graph::frozen();
    let x = g.constant(wavy(3, 6, 6, 0.0, 2.0));
    let state = lstm.zero_state(&mut g, 6, 6);
    let (h, _) = lstm.step(&mut g, &store, x, state).map_err(e)?;
    // Zero pre-activations: i = f = o = g = 1/2, C = 1/4, H = tanh(1/4) / 2.
    let expected = 0.5 * 0.25f64.tanh();
    let h_dev = g.value(h).data().iter().map(|v| (v - expected).abs()).fold(0.0, f64::max);
    ensure(h_dev <= 1e-6 && (expected - 0.12245).abs() < 1e-5, || format!("H_t deviates by {h_dev}"))?;

    let bundle = ModelBundle::zeroed(ModelConfig::toy()).map_err(e)?;
    let img = derain_cyclegan::data::procedural_scene(3, 48, 40, 1);
    let (mask, stages) = bundle.uarse_forward(&img).map_err(e)?;
    let mask_dev = stages.iter().chain([&mask]).flat_map(|m| m.data()).map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
    let (n_r, _) = bundle.derain(&img).map_err(e)?;
    let (r_n, _) = bundle.add_rain(&img).map_err(e)?;
    let gen_dev = n_r.data().iter().chain(r_n.data()).map(|v| v.abs()).fold(0.0, f64::max);
    let mut score_dev = 0.0f64;
    for rainy in [false, true] {
        for s in bundle.discriminate(rainy, &img).map_err(e)? {
            score_dev = s.data().iter().map(|v| (v - 0.5).abs()).fold(score_dev, f64::max);
        }
    }
    ensure(mask_dev <= 1e-6, || format!("mask deviates from 0.5 by {mask_dev}"))?;
    ensure(gen_dev <= 1e-6, || format!("generator output deviates from 0 by {gen_dev}"))?;
    ensure(score_dev <= 1e-6, || format!("scores deviate from 0.5 by {score_dev}"))?;
    Ok(format!("H_t {:.8}, max dev: mask {mask_dev:.1e}, G {gen_dev:.1e}, D {score_dev:.1e}", expected))
}

// ---------------------------------------------------------------- 4

fn mixture_samples(weights: &[f64], variances: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<Normal<f64>> = variances.iter().map(|v| Normal::new(0.0, v.sqrt()).unwrap()).collect();
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let k = weights.iter().position(|w| {
                acc += w;
                u < acc
            });
            normals[k.unwrap_or(weights.len() - 1)].sample(&mut rng)
        })
        .collect()
}

fn em_oracle() -> Outcome {
    let mut notes = Vec::new();
    let cases: [(&[f64], &[f64], usize, f64); 2] =
        [(&[1.0], &[0.04], 50, 0.10), (&[0.7, 0.3], &[0.01, 0.25], 200, 0.15)];
    for (weights, variances, iters, tol) in cases {
        let samples = mixture_samples(weights, variances, 10_000, 17);
        let fit = gmm_em_fit(&samples, weights.len(), iters, 3).map_err(e)?;
        let mut got = fit.model.variances().to_vec();
        got.sort_by(f64::total_cmp);
        for (g, t) in got.iter().zip(variances) {
            ensure((g - t).abs() <= tol * t, || format!("K={}: variance {g} vs {t}", weights.len()))?;
        }
        let rises: Vec<usize> =
            fit.trajectory.windows(2).enumerate().filter(|(_, w)| w[1] > w[0] + 1e-9).map(|(i, _)| i).collect();
        ensure(rises.is_empty(), || format!("K={}: NLL increased at iterations {rises:?}", weights.len()))?;
        notes.push(format!("K={} variances {:.4?}", weights.len(), got));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- 5

/// Direct-formula PSNR over 8-bit planes.
fn oracle_psnr(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut sum, mut n) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.iter().zip(y) {
            sum += (u - v) * (u - v);
            n += 1.0;
        }
    }
    if sum == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / (sum / n)).log10()
    }
}

#[allow(clippy::needless_range_loop)]
/// Direct-formula SSIM: explicit 2-D 11x11 Gaussian window (σ = 1.5) at every
/// valid position, two-pass moments.
fn oracle_ssim(a: &[Vec<f64>], b: &[Vec<f64>], h: usize, w: usize) -> f64 {
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01 * 255.0f64).powi(2), (0.03 * 255.0f64).powi(2));
    let mut planes = 0.0;
    for (x, y) in a.iter().zip(b) {
        let mut acc = 0.0;
        let mut count = 0.0;
        for top in 0..=h - 11 {
            for left in 0..=w - 11 {
                let at = |p: &Vec<f64>, i: usize, j: usize| p[(top + i) * w + left + j];
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        mx += win[i][j] / total * at(x, i, j);
                        my += win[i][j] / total * at(y, i, j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / total;
                        let (dx, dy) = (at(x, i, j) - mx, at(y, i, j) - my);
                        vx += k * dx * dx;
                        vy += k * dy * dy;
                        cxy += k * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        planes += acc / count;
    }
    planes / a.len() as f64
}

fn pixel_planes(px: &[u8], h: usize, w: usize, luma: bool) -> Vec<Vec<f64>> {
    let chans: Vec<Vec<f64>> = px.chunks(h * w).map(|c| c.iter().map(|&p| p as f64).collect()).collect();
    if luma {
        vec![(0..h * w).map(|i| 0.299 * chans[0][i] + 0.587 * chans[1][i] + 0.114 * chans[2][i]).collect()]
    } else {
        chans
    }
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut max_psnr, mut max_ssim) = (0.0f64, 0.0f64);
    for k in 0..20 {
        let (h, w) = (rng.gen_range(16..40), rng.gen_range(16..40));
        let a: Vec<u8> = (0..3 * h * w).map(|_| rng.gen()).collect();
        let noise = [2, 10, 40, 120][k % 4];
        let b: Vec<u8> = a.iter().map(|&p| (p as i32 + rng.gen_range(-noise..=noise)).clamp(0, 255) as u8).collect();
        let to_img = |px: &[u8]| Image::new(3, h, w, px.iter().map(|&p| dequantize(p)).collect()).unwrap();
        let (ia, ib) = (to_img(&a), to_img(&b));
        ensure(ia.data().iter().zip(&a).all(|(&v, &p)| quantize(v) == p), || {
            "8-bit fixture does not round-trip".into()
        })?;
        let luma = k % 2 == 1;
        let mode = if luma { ColorMode::Luma } else { ColorMode::Rgb };
        let (pa, pb) = (pixel_planes(&a, h, w, luma), pixel_planes(&b, h, w, luma));
        let (p, s) = (psnr(&ia, &ib, PEAK_8BIT, mode).map_err(e)?, ssim(&ia, &ib, mode).map_err(e)?);
        let (po, so) = (oracle_psnr(&pa, &pb), oracle_ssim(&pa, &pb, h, w));
        max_psnr = max_psnr.max((p - po).abs());
        max_ssim = max_ssim.max((s - so).abs());
        ensure((p - po).abs() <= 1e-6, || format!("pair {k}: psnr {p} vs oracle {po}"))?;
        ensure((s - so).abs() <= 1e-4, || format!("pair {k}: ssim {s} vs oracle {so}"))?;
        let (pi, si) = (psnr(&ia, &ia, PEAK_8BIT, mode).map_err(e)?, ssim(&ia, &ia, mode).map_err(e)?);
        ensure(pi == f64::INFINITY && (si - 1.0).abs() < 1e-12, || format!("pair {k}: identical gives {pi}, {si}"))?;
    }
    Ok(format!("20 pairs, max |Δpsnr| {max_psnr:.1e} dB, max |Δssim| {max_ssim:.1e}; identical → +inf / 1"))
}

// ---------------------------------------------------------------- 6

struct ToyRun {
    history: Vec<StepLog>,
    state: Checkpoint,
}

fn toy_data(root: &Path) -> UnpairedSet {
    if !root.join("manifest.json").exists() {
        write_synth_dataset(root, &SynthDataSpec::default()).unwrap();
    }
    UnpairedSet::load(&DatasetLayout::new(root)).unwrap()
}

fn toy_run(data: &UnpairedSet, config: TrainingConfig) -> ToyRun {
    let mut t = Trainer::new(config, None).unwrap();
    t.run(data, |_| {}).unwrap();
    ToyRun { history: t.history, state: t.state }
}

fn window_mean(logs: &[StepLog], f: impl Fn(&StepLog) -> f64) -> f64 {
    logs.iter().map(f).sum::<f64>() / logs.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Per-step losses are noisy (batch of one, freshly sampled prior target),
/// so "initial" and "final" are means over the first and last ten steps.
const SMOOTH: usize = 10;

fn training_smoke(data: &UnpairedSet, trained: &mut Option<Checkpoint>) -> Outcome {
    // The time budget applies to a single toy run.
    let mut slowest = Duration::ZERO;
    let mut timed = |seed| {
        let start = Instant::now();
        let run = toy_run(data, TrainingConfig { seed, ..TrainingConfig::toy() });
        slowest = slowest.max(start.elapsed());
        run
    };
    let mut runs: Vec<ToyRun> = (0..3).map(&mut timed).collect();
    let repeat = timed(0);

    let steps = runs[0].history.len();
    let mut total_ratio = Vec::new();
    let mut cc_drop = Vec::new();
    for r in &runs {
        let (head, tail) = (&r.history[..SMOOTH], &r.history[steps - SMOOTH..]);
        total_ratio.push(window_mean(tail, |l| l.total) / window_mean(head, |l| l.total));
        cc_drop.push(1.0 - window_mean(tail, |l| l.components.cc) / window_mean(head, |l| l.components.cc));
    }
    let same = repeat.history == runs[0].history
        && repeat
            .state
            .bundle
            .store
            .entries()
            .iter()
            .zip(runs[0].state.bundle.store.entries())
            .all(|(a, b)| a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    *trained = Some(runs.swap_remove(0).state);

    let (med_total, med_cc) = (median(total_ratio.clone()), median(cc_drop.clone()));
    let detail = format!(
        "{steps} steps x 3 seeds + repeat, slowest run {:.0}s; final/initial total {:.3?} (median {med_total:.3}); cc drop {:.3?} (median {med_cc:.3}); repeat bitwise {same}",
        slowest.as_secs_f64(),
        total_ratio,
        cc_drop
    );
    ensure(steps == 200, || format!("expected 200 steps, got {steps}; {detail}"))?;
    ensure(med_total < 1.0, || detail.clone())?;
    ensure(med_cc >= 0.5, || detail.clone())?;
    ensure(same, || detail.clone())?;
    ensure(slowest < Duration::from_secs(15 * 60), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn deraining_efficacy(data: &UnpairedSet, test: &DatasetLayout) -> Outcome {
    let start = Instant::now();
    let baseline = evaluate_identity(test, ColorMode::Rgb).map_err(e)?.mean_psnr();
    let mut results = Vec::new();
    for seed in 0..3 {
        // 2000 steps = 100 epochs of 20 pairs, decay over the second half as in the toy preset.
        let config = TrainingConfig { seed, epochs: 100, decay_start_epoch: 50, ..TrainingConfig::toy() };
        let run = toy_run(data, config);
        results.push(evaluate(&run.state.bundle, test, ColorMode::Rgb).map_err(e)?.mean_psnr());
    }
    let wins = results.iter().filter(|&&p| p > baseline).count();
    let detail = format!(
        "rainy {baseline:.3} dB, derained {:.3?} dB, {wins}/3 seeds better, {:.0}s",
        results,
        start.elapsed().as_secs_f64()
    );
    ensure(wins >= 2, || detail.clone())?;
    ensure(start.elapsed() <= Duration::from_secs(60 * 60), || format!("over the 60 min budget: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn rainmake_closure(trained: &Checkpoint, clean_dir: &Path, out: &Path) -> Outcome {
    let manifest = rainmake(&trained.bundle, &trained.config.hash(), clean_dir, out).map_err(e)?;
    let n = derain_cyclegan::data::list_images(clean_dir).map_err(e)?.len();
    let pairs = load_paired(&DatasetLayout::new(out)).map_err(e)?;
    ensure(pairs.len() == n && manifest.files.len() == n, || format!("{} pairs for {n} inputs", pairs.len()))?;
    for p in &pairs {
        let copied = std::fs::read(out.join("norain").join(&p.name)).map_err(e)?;
        ensure(copied == std::fs::read(clean_dir.join(&p.name)).map_err(e)?, || {
            format!("{} not copied verbatim", p.name)
        })?;
    }
    let diff: f64 = pairs
        .iter()
        .map(|p| {
            p.rainy.data().iter().zip(p.clean.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
                / p.clean.data().len() as f64
        })
        .sum::<f64>()
        / pairs.len() as f64;
    ensure(diff > 0.0, || "rain-adding generator left images unchanged".into())?;
    Ok(format!("{n} clean images -> {} pairs, mean |r_n - n| = {diff:.4}", pairs.len()))
}

// ---------------------------------------------------------------- 9

fn checkpoint_roundtrip(trained: &Checkpoint, test: &DatasetLayout, dir: &Path) -> Outcome {
    let path = dir.join("trained.ckpt");
    trained.save(&path).map_err(e)?;
    let loaded = Checkpoint::load(&path).map_err(e)?;
    let samples = load_paired(test).map_err(e)?;
    for s in &samples {
        let (a, ma) = trained.bundle.derain(&s.rainy).map_err(e)?;
        let (b, mb) = loaded.bundle.derain(&s.rainy).map_err(e)?;
        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(a.data()) == bits(b.data()) && bits(ma.data()) == bits(mb.data()), || {
            format!("{}: derain differs after reload", s.name)
        })?;
    }

    // Interrupted after epoch 2 of 4, resumed from the file on disk.
    let spec = SynthDataSpec { train_per_domain: 4, test_pairs: 0, seed: 5, ..SynthDataSpec::default() };
    let root = dir.join("small");
    write_synth_dataset(&root, &spec).map_err(e)?;
    let data = UnpairedSet::load(&DatasetLayout::new(&root)).map_err(e)?;
    let config = TrainingConfig { epochs: 4, decay_start_epoch: 2, checkpoint_interval: 2, ..TrainingConfig::toy() };
    let mut full = Trainer::new(config.clone(), Some(&dir.join("full"))).map_err(e)?;
    full.run(&data, |_| {}).map_err(e)?;
    let part_dir = dir.join("part");
    let mut first = Trainer::new(config, Some(&part_dir)).map_err(e)?;
    first.train_epoch(&data, &mut |_| {}).map_err(e)?;
    first.train_epoch(&data, &mut |_| {}).map_err(e)?;
    let ckpt = first.last_checkpoint().ok_or("no checkpoint after epoch 2")?.to_path_buf();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&ckpt).map_err(e)?, Some(&part_dir)).map_err(e)?;
    resumed.run(&data, |_| {}).map_err(e)?;
    let tail = &full.history[full.history.len() - resumed.history.len()..];
    ensure(tail == resumed.history.as_slice(), || "resumed loss trajectory differs".into())?;
    for f in ["train_log.csv", "final.ckpt"] {
        let same = std::fs::read(dir.join("full").join(f)).map_err(e)? == std::fs::read(part_dir.join(f)).map_err(e)?;
        ensure(same, || format!("{f} differs between resumed and uninterrupted runs"))?;
    }
    Ok(format!(
        "{} test images bitwise equal after reload; resumed {} of {} steps identical",
        samples.len(),
        resumed.history.len(),
        full.history.len()
    ))
}

// ---------------------------------------------------------------- 10

fn ablation_mechanics(dir: &Path) -> Outcome {
    let spec = SynthDataSpec { train_per_domain: 3, test_pairs: 0, seed: 9, ..SynthDataSpec::default() };
    let root = dir.join("data");
    write_synth_dataset(&root, &spec).map_err(e)?;
    let data = UnpairedSet::load(&DatasetLayout::new(&root)).map_err(e)?;
    let columns = ["l_adv", "l_att", "l_cc", "l_p", "l_gmm", "l_r"];
    let terms = [LossTerm::Adv, LossTerm::Att, LossTerm::Cc, LossTerm::P, LossTerm::Gmm, LossTerm::R];
    let mut worst = 0.0f64;
    for preset in ABLATION_PRESETS {
        let mut config = TrainingConfig { epochs: 1, ..TrainingConfig::toy() };
        config.losses = config.losses.with_preset(preset).map_err(e)?;
        let out = dir.join(preset.replace('+', "_"));
        let mut t = Trainer::new(config.clone(), Some(&out)).map_err(e)?;
        t.run(&data, |_| {}).map_err(e)?;
        let log = std::fs::read_to_string(out.join("train_log.csv")).map_err(e)?;
        let mut lines = log.lines();
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("missing column {name}"));
        let total_col = col("total")?;
        let mut rows = 0;
        for line in lines {
            let v: Vec<f64> = line.split(',').map(|x| x.parse::<f64>().map_err(e)).collect::<Result<_, _>>()?;
            let mut sum = 0.0;
            for (name, term) in columns.iter().zip(terms) {
                let value = v[col(name)?];
                if config.losses.is_enabled(term) {
                    ensure(value != 0.0, || format!("{preset}: enabled {name} is 0"))?;
                    sum += config.losses.weight(term) * value;
                } else {
                    ensure(value == 0.0, || format!("{preset}: disabled {name} = {value}"))?;
                }
            }
            let rel = (v[total_col] - sum).abs() / sum.abs().max(1e-300);
            worst = worst.max(rel);
            ensure(rel <= 1e-6, || format!("{preset}: total {} vs weighted sum {sum}", v[total_col]))?;
            rows += 1;
        }
        ensure(rows == 3, || format!("{preset}: {rows} logged steps"))?;
    }
    Ok(format!("{} presets {:?}, max rel. deviation {worst:.1e}", ABLATION_PRESETS.len(), ABLATION_PRESETS))
}

// ----------------------------------------------------------------

fn report(id: u8, title: &str, f: &mut dyn FnMut() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] criterion {id:>2} {title}: {detail} ({secs:.1}s)");
    let _ = out.flush();
    outcome.is_ok()
}

fn skip(id: u8, title: &str, why: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[SKIP] criterion {id:>2} {title}: {why}");
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    // libtest-style switches: `--ignored` runs only the nightly criterion,
    // `--include-ignored` runs everything. Bare numbers pick criteria.
    let only_nightly = args.iter().any(|a| a == "--ignored");
    let nightly =
        only_nightly || args.iter().any(|a| a == "--include-ignored") || std::env::var_os("DERAIN_NIGHTLY").is_some();
    let picked: Vec<u8> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u8| {
        if only_nightly {
            id == 7
        } else {
            picked.is_empty() || picked.contains(&id)
        }
    };

    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path().join("toy");
    let data = toy_data(&root);
    let test = DatasetLayout::new(root.join(PAIRED_TEST_DIR));

    let mut ok = true;
    let mut run = |id: u8, title: &str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(id) {
            ok &= report(id, title, f);
        }
    };
    run(1, "loss golden values", &mut loss_golden_values);
    run(2, "gradient suite", &mut gradient_suite);
    run(3, "zero-weight analytic cases", &mut zero_weight_cases);
    run(4, "EM oracle", &mut em_oracle);
    run(5, "metric oracle", &mut metric_oracle);
    let mut trained = None;
    run(6, "training smoke", &mut || training_smoke(&data, &mut trained));
    if nightly {
        run(7, "deraining efficacy", &mut || deraining_efficacy(&data, &test));
    } else if wanted(7) {
        skip(7, "deraining efficacy", "nightly run, pass --include-ignored or set DERAIN_NIGHTLY");
    }
    if wanted(8) || wanted(9) {
        let trained = trained.take().unwrap_or_else(|| {
            // Criterion 6 was not run (or failed early); train a short substitute.
            toy_run(&data, TrainingConfig { epochs: 1, ..TrainingConfig::toy() }).state
        });
        run(8, "rainmake closure", &mut || {
            rainmake_closure(&trained, &test.norain_dir(), &tmp.path().join("rainmade"))
        });
        run(9, "checkpoint round-trip", &mut || checkpoint_roundtrip(&trained, &test, &tmp.path().join("ckpt")));
    }
    run(10, "ablation mechanics", &mut || ablation_mechanics(&tmp.path().join("ablation")));

    if !ok {
        std::process::exit(1);
    }
}
