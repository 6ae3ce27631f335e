//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass substrings as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- smoke`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use brand_attention::brand_score::{
    brand_attention_score, condition_stats, format_score, hypothesis_report, run_hypothesis, BoxSource,
    ConditionStats, ScoreConfig,
};
use brand_attention::datamodel::{
    ingest_hypothesis_dataset, save_boxes, BoundingBox, BoundingBoxSet, FixationMap, Grid, LoadedImage, SaliencyMap,
};
use brand_attention::net::{efficient_attention, DType, ModelConfig, SaliencyModel};
use brand_attention::objectives::{auc_judd, composite_loss, correlation_coefficient, kl_divergence, nss, similarity};
use brand_attention::objectives::{LossWeights, EPSILON};
use brand_attention::pipeline::SaliencyPredictor;
use brand_attention::trainer::{batch_loss, overfit_smoke, synthetic_samples, train, TrainConfig, TrainOptions};
use candle_core::{Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: f64) -> Outcome {
    let s = elapsed.as_secs_f64();
    if s > limit_s {
        Err(format!("took {s:.1} s, limit {limit_s} s"))
    } else {
        Ok(format!("{s:.1} s"))
    }
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid {
    Grid::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

// ---- metric oracles: plain double loops over rows and columns ----

fn oracle_cc(g: &Grid, s: &Grid) -> f64 {
    let (h, w) = g.shape();
    let n = (h * w) as f64;
    let (mut mg, mut ms) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            mg += g.get(r, c);
            ms += s.get(r, c);
        }
    }
    mg /= n;
    ms /= n;
    let (mut cov, mut vg, mut vs) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let (a, b) = (g.get(r, c) - mg, s.get(r, c) - ms);
            cov += a * b;
            vg += a * a;
            vs += b * b;
        }
    }
    cov / (vg.sqrt() * vs.sqrt())
}

fn oracle_sum(g: &Grid) -> f64 {
    let (h, w) = g.shape();
    let mut t = 0.0;
    for r in 0..h {
        for c in 0..w {
            t += g.get(r, c);
        }
    }
    t
}

fn oracle_kl(g: &Grid, s: &Grid) -> f64 {
    let (h, w) = g.shape();
    let (tg, ts) = (oracle_sum(g), oracle_sum(s));
    let mut kl = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (p, q) = (g.get(r, c) / tg, s.get(r, c) / ts);
            kl += p * (EPSILON + p / (q + EPSILON)).ln();
        }
    }
    kl
}

fn oracle_sim(g: &Grid, s: &Grid) -> f64 {
    let (h, w) = g.shape();
    let (tg, ts) = (oracle_sum(g), oracle_sum(s));
    let mut sim = 0.0;
    for r in 0..h {
        for c in 0..w {
            sim += f64::min(g.get(r, c) / tg, s.get(r, c) / ts);
        }
    }
    sim
}

fn oracle_nss(f: &FixationMap, s: &Grid) -> f64 {
    let (h, w) = s.shape();
    let n = (h * w) as f64;
    let mean = oracle_sum(s) / n;
    let mut var = 0.0;
    for r in 0..h {
        for c in 0..w {
            var += (s.get(r, c) - mean).powi(2);
        }
    }
    let std = (var / n).sqrt();
    let (mut total, mut count) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if f.is_fixated(r, c) {
                total += (s.get(r, c) - mean) / std;
                count += 1.0;
            }
        }
    }
    total / count
}

/// ROC points at each distinct fixated value, counted by brute force, then
/// the trapezoid rule from (0, 0) to (1, 1).
fn oracle_auc(f: &FixationMap, s: &Grid) -> f64 {
    let (h, w) = s.shape();
    let mut thresholds = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if f.is_fixated(r, c) && !thresholds.contains(&s.get(r, c)) {
                thresholds.push(s.get(r, c));
            }
        }
    }
    thresholds.sort_by(|a, b| b.total_cmp(a));
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let (mut tp, mut fp, mut nf, mut no) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let above = s.get(r, c) >= t;
                if f.is_fixated(r, c) {
                    nf += 1.0;
                    tp += above as u8 as f64;
                } else {
                    no += 1.0;
                    fp += above as u8 as f64;
                }
            }
        }
        points.push((fp / no, tp / nf));
    }
    points.push((1.0, 1.0));
    points.windows(2).map(|p| (p[1].0 - p[0].0) * (p[1].1 + p[0].1) / 2.0).sum()
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let g = random_grid(&mut rng, 8, 8);
        // Quantized so some saliency values tie.
        let s = Grid::new(8, 8, random_grid(&mut rng, 8, 8).data.iter().map(|v| (v * 16.0).ceil() / 16.0).collect()).unwrap();
        let mut points: Vec<(usize, usize)> = (0..rng.random_range(1..12)).map(|_| (rng.random_range(0..8), rng.random_range(0..8))).collect();
        points.dedup();
        let f = FixationMap::from_points(8, 8, &points).unwrap();
        let pairs = [
            ("CC", correlation_coefficient(&g, &s).unwrap(), oracle_cc(&g, &s)),
            ("KL", kl_divergence(&g, &s).unwrap(), oracle_kl(&g, &s)),
            ("SIM", similarity(&g, &s).unwrap(), oracle_sim(&g, &s)),
            ("NSS", nss(&f, &s).unwrap(), oracle_nss(&f, &s)),
            ("AUC", auc_judd(&f, &s).unwrap(), oracle_auc(&f, &s)),
        ];
        for (name, got, want) in pairs {
            let d = (got - want).abs();
            worst = worst.max(d);
            ensure!(d <= 1e-6, "{name} on pair {i}: {got} vs oracle {want}");
        }
    }
    Ok(format!("100 pairs, max |Δ| {worst:.1e}, {}", within(start.elapsed(), 10.0)?))
}

fn attention_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, dk, dv) = (rng.random_range(1..=16), rng.random_range(1..=8), rng.random_range(1..=8));
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-3.0..3.0)).collect() };
        let (q, k, v) = (draw(n * dk), draw(n * dk), draw(n * dv));
        let t = |data: &[f64], d: usize| Tensor::from_vec(data.to_vec(), (1, n, d), &Device::Cpu).unwrap();
        let got = efficient_attention(&t(&q, dk), &t(&k, dk), &t(&v, dv))
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        // Queries softmaxed over features, keys over tokens.
        let mut qn = q.clone();
        for i in 0..n {
            let row = &mut qn[i * dk..(i + 1) * dk];
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            row.iter_mut().for_each(|x| *x = x.exp() / z);
        }
        let mut kn = k.clone();
        for d in 0..dk {
            let z: f64 = (0..n).map(|j| k[j * dk + d].exp()).sum();
            for j in 0..n {
                kn[j * dk + d] = k[j * dk + d].exp() / z;
            }
        }
        for i in 0..n {
            for e in 0..dv {
                let mut want = 0.0;
                for j in 0..n {
                    for d in 0..dk {
                        want += qn[i * dk + d] * kn[j * dk + d] * v[j * dv + e];
                    }
                }
                let d = (got[i * dv + e] - want).abs();
                worst = worst.max(d);
                ensure!(d <= 1e-6, "n={n} dk={dk} dv={dv}: output ({i},{e}) {} vs {want}", got[i * dv + e]);
            }
        }
    }
    Ok(format!("50 instances, max |Δ| {worst:.1e}, {}", within(start.elapsed(), 5.0)?))
}

fn loss_identity() -> Outcome {
    let g = Grid::from_fn(12, 16, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0 + 0.05).unwrap();
    let w = LossWeights::default();
    ensure!((w.kl, w.cc, w.mse) == (10.0, -3.0, 5.0), "weights are {w:?}");
    let loss = composite_loss(&g, &g, &w).map_err(|e| e.to_string())?;
    ensure!((loss + 3.0).abs() <= 1e-6, "loss {loss}");
    Ok(format!("loss {loss:.6}"))
}

fn tiny_config(h: usize, w: usize) -> ModelConfig {
    ModelConfig {
        encoder_blocks: [1, 1, 1, 1],
        transformer_depth: 1,
        mlp_ratio: 1,
        ..ModelConfig::default()
    }
    .with_resolution(h, w)
}

fn set_element(var: &Var, idx: usize, value: f64) {
    let t = var.as_tensor();
    let mut v = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    v[idx] = value;
    var.set(&Tensor::from_vec(v, t.shape(), t.device()).unwrap()).unwrap();
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let model = SaliencyModel::new(tiny_config(32, 32), 5, DType::F64).unwrap();
    let mut samples = synthetic_samples(2, (32, 32), 3).unwrap();
    // A nonempty text map so the text stream matters.
    samples[1].text_map = samples[1].image.clone();
    let batch: Vec<_> = samples.iter().collect();
    let w = LossWeights::default();
    let loss_value = || batch_loss(&model, &batch, &w).unwrap().to_scalar::<f64>().unwrap();
    let grads = batch_loss(&model, &batch, &w).unwrap().backward().unwrap();

    let names: Vec<&String> = model.store().params.keys().collect();
    let mut chosen: Vec<String> = ["fusion.alpha.0", "image_branches.0.embed.position", "decoder.stages.4.conv.weight"]
        .map(String::from)
        .to_vec();
    let stride = names.len() / 20;
    chosen.extend(names.iter().step_by(stride.max(1)).map(|n| n.to_string()));
    chosen.dedup();
    // Small enough that no ReLU in the network changes side between the
    // two evaluations; larger steps bias the difference at kinks.
    let h = 1e-7;
    let mut worst = 0.0f64;
    for name in &chosen {
        let var = &model.store().params[name].var;
        let g = grads
            .get(var.as_tensor())
            .ok_or_else(|| format!("{name} has no gradient"))?
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let (idx, analytic) = g
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let x0 = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()[idx];
        set_element(var, idx, x0 + h);
        let up = loss_value();
        set_element(var, idx, x0 - h);
        let down = loss_value();
        set_element(var, idx, x0);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
        worst = worst.max(rel);
        ensure!(rel <= 1e-3, "{name}[{idx}]: analytic {analytic:e} vs numeric {numeric:e} (rel {rel:.2e})");
    }
    ensure!(chosen.len() >= 20, "only {} parameters sampled", chosen.len());
    Ok(format!(
        "{} parameters, worst relative error {worst:.1e}, {}",
        chosen.len(),
        within(start.elapsed(), 120.0)?
    ))
}

fn shape_contract() -> Outcome {
    let start = Instant::now();
    let (h, w) = (288, 384);
    let model = SaliencyModel::new(ModelConfig::default(), 0, DType::F32).map_err(|e| e.to_string())?;
    ensure!(model.working_size() == (h, w), "default working size {:?}", model.working_size());
    let samples = synthetic_samples(1, (h, w), 0).unwrap();
    let x = model.batch_tensor(&[&samples[0].image]).unwrap();
    let t = model.batch_tensor(&[&samples[0].text_map]).unwrap();
    let mut dims = BTreeMap::new();
    let out = model
        .forward_traced(&x, &t, false, &mut |name, t| {
            dims.insert(name, t.dims().to_vec());
        })
        .map_err(|e| e.to_string())?;
    let expect: &[(&str, &[usize])] = &[
        ("image.f32", &[1, 2048, 9, 12]),
        ("image.f16", &[1, 1024, 18, 24]),
        ("image.f8", &[1, 512, 36, 48]),
        ("text.f32", &[1, 2048, 9, 12]),
        ("image.branch1.tokens", &[1, 108, 768]),
        ("image.branch2.tokens", &[1, 432, 768]),
        ("image.branch3.tokens", &[1, 1728, 512]),
        ("fused1", &[1, 768, 9, 12]),
        ("fused2", &[1, 768, 18, 24]),
        ("fused3", &[1, 512, 36, 48]),
        ("decoder.O2", &[1, 768, 18, 24]),
        ("decoder.O3", &[1, 512, 36, 48]),
        ("decoder.O6", &[1, 64, 288, 384]),
        ("saliency", &[1, 1, 288, 384]),
    ];
    for (name, want) in expect {
        ensure!(dims.get(*name).map(Vec::as_slice) == Some(*want), "{name}: {:?} vs {want:?}", dims.get(*name));
    }
    let v = out.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    ensure!(v.iter().all(|p| (0.0..=1.0).contains(p)), "output leaves [0, 1]");
    Ok(format!("{} traced tensors, {}", expect.len(), within(start.elapsed(), 30.0)?))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        zero_init_residual: true,
        ..ModelConfig::reference()
    }
    .with_resolution(32, 32);
    let model = SaliencyModel::new(config, 7, DType::F32).unwrap();
    let samples = synthetic_samples(8, (32, 32), 11).unwrap();
    let train_config = TrainConfig {
        batch_size: 8,
        epochs: 9,
        steps_per_epoch: Some(12),
        max_steps: Some(100),
        ..TrainConfig::default()
    };
    ensure!(
        (train_config.initial_lr, train_config.lr_step_size, train_config.lr_gamma, train_config.weight_decay)
            == (5e-4, 4, 0.1, 1e-4),
        "default schedule changed: {train_config:?}"
    );
    let report = overfit_smoke(&model, &samples, &train_config).map_err(|e| e.to_string())?;
    for e in &report.record.epochs {
        let want = 5e-4 * 0.1f64.powi((e.epoch / 4) as i32);
        ensure!((e.lr - want).abs() <= 1e-12 * want, "epoch {} ran at lr {}", e.epoch, e.lr);
    }
    let summary = format!(
        "loss {:.3} -> {:.3}, train CC {:.3}, {} steps",
        report.initial_loss, report.final_loss, report.train_cc, report.steps
    );
    ensure!(report.passed, "{summary}: {}", report.reason.unwrap_or_default());
    Ok(format!("{summary}, {}", within(start.elapsed(), 900.0)?))
}

// ---- brand attention score ----

fn oracle_score(s: &Grid, boxes: &[BoundingBox]) -> f64 {
    let (h, w) = s.shape();
    let (mut inside, mut total) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            total += s.get(r, c);
            let x = c as u32;
            let y = r as u32;
            if boxes.iter().any(|b| b.x_min <= x && x <= b.x_max && b.y_min <= y && y <= b.y_max) {
                inside += s.get(r, c);
            }
        }
    }
    100.0 * inside / total
}

fn random_box(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BoundingBox {
    let (x0, x1) = (rng.random_range(0..w as u32), rng.random_range(0..w as u32));
    let (y0, y1) = (rng.random_range(0..h as u32), rng.random_range(0..h as u32));
    BoundingBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
}

fn score_properties() -> Outcome {
    let start = Instant::now();
    let cfg = ScoreConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut overlapping = 0;
    for i in 0..500 {
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let s = Grid::new(h, w, (0..h * w).map(|_| rng.random_range(0.001..1.0)).collect()).unwrap();
        let empty = brand_attention_score(&s, &BoundingBoxSet::empty(), &cfg).unwrap();
        ensure!(empty == 0.0, "instance {i}: empty set scored {empty}");
        let full = brand_attention_score(&s, &BoundingBoxSet::new(vec![BoundingBox::full_frame(h, w)]), &cfg).unwrap();
        ensure!((full - 100.0).abs() < 1e-9, "instance {i}: full frame scored {full}");

        let boxes: Vec<BoundingBox> = (0..rng.random_range(2..5)).map(|_| random_box(&mut rng, h, w)).collect();
        let overlaps = boxes.iter().enumerate().any(|(a, p)| {
            boxes[a + 1..]
                .iter()
                .any(|q| p.x_min <= q.x_max && q.x_min <= p.x_max && p.y_min <= q.y_max && q.y_min <= p.y_max)
        });
        overlapping += overlaps as usize;
        let got = brand_attention_score(&s, &BoundingBoxSet::new(boxes.clone()), &cfg).unwrap();
        let want = oracle_score(&s, &boxes);
        ensure!((got - want).abs() < 1e-9, "instance {i}: {got} vs oracle {want}");

        let mut bigger = boxes.clone();
        let b = &mut bigger[0];
        b.x_min = b.x_min.saturating_sub(rng.random_range(0..3));
        b.y_min = b.y_min.saturating_sub(rng.random_range(0..3));
        b.x_max = (b.x_max + rng.random_range(0..3)).min(w as u32 - 1);
        b.y_max = (b.y_max + rng.random_range(0..3)).min(h as u32 - 1);
        let grown = brand_attention_score(&s, &BoundingBoxSet::new(bigger), &cfg).unwrap();
        ensure!(grown >= got - 1e-12, "instance {i}: enlarging a box lowered {got} to {grown}");
    }
    ensure!(overlapping >= 100, "only {overlapping} instances had overlapping boxes");
    Ok(format!("500 instances ({overlapping} with overlaps), {}", within(start.elapsed(), 30.0)?))
}

// ---- hypothesis harness ----

/// Rows as printed: hypothesis, condition, mean, SE, bold winner.
const PRINTED: &[(&str, &str, &str, &str, &str, bool)] = &[
    ("prior", "Top-to-Bottom Logo positioning", "Down", "28.89", "5.19", false),
    ("prior", "Top-to-Bottom Logo positioning", "UP", "34.05", "5.64", true),
    ("prior", "Text vs Image", "Image", "31.71", "4.61", false),
    ("prior", "Text vs Image", "Text", "37.23", "4.62", true),
    ("prior", "Square-Round Packaging Orientation", "Round", "25.82", "4.86", false),
    ("prior", "Square-Round Packaging Orientation", "Square", "27.02", "4.01", true),
    ("proposed", "Top-to-Bottom Logo positioning", "Down", "28.89", "5.19", false),
    ("proposed", "Top-to-Bottom Logo positioning", "UP", "34.05", "5.64", false),
    ("proposed", "Top-to-Bottom Logo positioning", "Center", "40.02", "7.06", true),
    ("proposed", "All-Around Logo Positioning", "Down-Right", "15.05", "3.05", false),
    ("proposed", "All-Around Logo Positioning", "Down-Left", "18.8", "3.41", false),
    ("proposed", "All-Around Logo Positioning", "UP-Right", "16.51", "3.05", false),
    ("proposed", "All-Around Logo Positioning", "UP-Left", "20.24", "3.34", false),
    ("proposed", "All-Around Logo Positioning", "Center", "24.92", "4.12", true),
    ("proposed", "Bold Distinction", "Boldness", "19.98", "2.27", false),
    ("proposed", "Bold Distinction", "Not Bold", "21.1", "2.35", true),
    ("proposed", "Horizontal-Vertical Brand logo Orientation", "Horizontal", "29.91", "4.05", false),
    ("proposed", "Horizontal-Vertical Brand logo Orientation", "Vertical", "34.54", "4.8", true),
    ("proposed", "Horizontal-Vertical Packaging Orientation", "Vertical", "27.92", "4.92", false),
    ("proposed", "Horizontal-Vertical Packaging Orientation", "Horizontal", "36.92", "5.59", true),
    ("proposed", "Person in Packaging", "With Person", "32.26", "5.76", false),
    ("proposed", "Person in Packaging", "No Person", "36", "6.16", true),
    ("proposed", "Multi Object in Packaging", "Multi", "32.5", "5", false),
    ("proposed", "Multi Object in Packaging", "One", "40.95", "5.29", true),
    ("proposed", "Multi Packaging", "Single", "31.64", "4.16", false),
    ("proposed", "Multi Packaging", "Multi", "39.52", "4.73", true),
    ("color", "Packaging Color", "black", "36.82", "5.65", false),
    ("color", "Packaging Color", "Brown", "37.85", "5.62", false),
    ("color", "Packaging Color", "Orange", "37.46", "5.46", false),
    ("color", "Packaging Color", "Yellow", "37.45", "5.61", false),
    ("color", "Packaging Color", "Green", "36.38", "5.55", false),
    ("color", "Packaging Color", "Blue", "37.51", "5.66", false),
    ("color", "Packaging Color", "Red", "38.23", "5.73", false),
    ("color", "Packaging Color", "White", "40.84", "5.89", true),
    ("color", "Brand Logo Color", "White", "31.08", "4.33", false),
    ("color", "Brand Logo Color", "Brown", "34.54", "4.4", false),
    ("color", "Brand Logo Color", "Orange", "33.2", "4.63", false),
    ("color", "Brand Logo Color", "Yellow", "32.93", "4.66", false),
    ("color", "Brand Logo Color", "Green", "32.16", "4.93", false),
    ("color", "Brand Logo Color", "Blue", "33.13", "4.87", false),
    ("color", "Brand Logo Color", "Black", "36.56", "4.7", false),
    ("color", "Brand Logo Color", "Red", "37.44", "4.79", true),
];

#[derive(serde::Deserialize)]
struct FixtureRow {
    hypothesis: String,
    condition: String,
    scores: Vec<f64>,
}

/// Always predicts an isotropic bump at the image centre.
struct CenterBias;

impl SaliencyPredictor for CenterBias {
    fn predict(&self, image: &LoadedImage) -> brand_attention::Result<SaliencyMap> {
        let (h, w) = image.original_size();
        let sigma = 0.2 * h.min(w) as f64;
        SaliencyMap::from_unnormalized(Grid::from_fn(h, w, |r, c| {
            let d2 = (r as f64 - h as f64 / 2.0).powi(2) + (c as f64 - w as f64 / 2.0).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })?)
    }

    fn working_size(&self) -> (usize, usize) {
        (32, 32)
    }
}

fn planted_center_bias(root: &Path) -> Result<Vec<ConditionStats>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, w) = (60, 80);
    for (cond, cy) in [("Center", 0.5), ("UP", 0.15), ("Down", 0.85)] {
        let dir = root.join("position").join(cond);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..12 {
            let name = format!("ad{i}.png");
            image::RgbImage::from_pixel(w, h, image::Rgb([200, 180, 160])).save(dir.join(&name)).unwrap();
            let bw = rng.random_range(10..20) as f64;
            let bh = rng.random_range(6..12) as f64;
            let x = rng.random_range(0.3..0.7) * w as f64;
            let y = cy * h as f64 + rng.random_range(-3.0..3.0);
            let b = BoundingBox::new(
                (x - bw / 2.0).max(0.0) as u32,
                (y - bh / 2.0).max(0.0) as u32,
                ((x + bw / 2.0) as u32).min(w - 1),
                ((y + bh / 2.0) as u32).min(h - 1),
            );
            save_boxes(dir.join(format!("ad{i}.boxes.json")), &BoundingBoxSet::new(vec![b])).unwrap();
        }
    }
    let ds = ingest_hypothesis_dataset(root).map_err(|e| e.to_string())?;
    run_hypothesis(&ds, &CenterBias, BoxSource::Annotations, &ScoreConfig::default()).map_err(|e| e.to_string())
}

fn hypothesis_fidelity() -> Outcome {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/published_scores.json"))
        .map_err(|e| e.to_string())?;
    let tables: BTreeMap<String, Vec<FixtureRow>> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (table, rows) in &tables {
        let stats: Vec<ConditionStats> = rows
            .iter()
            .map(|r| condition_stats(&r.hypothesis, &r.condition, r.scores.clone()).unwrap())
            .collect();
        let csv = hypothesis_report(&stats).map_err(|e| e.to_string())?;
        for &(t, hyp, cond, mean, se, winner) in PRINTED.iter().filter(|p| p.0 == table) {
            let row = stats
                .iter()
                .find(|s| s.hypothesis == hyp && s.condition == cond)
                .ok_or_else(|| format!("{table}: no row for {hyp}/{cond}"))?;
            let line = format!("{},{},{},{mean},{se},{winner}", csv_field(hyp), csv_field(cond), row.n);
            ensure!(csv.lines().any(|l| l == line), "{t}: expected `{line}` in\n{csv}");
            ensure!(format_score(row.mean) == mean, "{t}: {hyp}/{cond} mean {}", row.mean);
            checked += 1;
        }
    }
    ensure!(checked == PRINTED.len(), "checked {checked} of {} printed rows", PRINTED.len());

    let dir = tempfile::tempdir().unwrap();
    let stats = planted_center_bias(dir.path())?;
    let center = stats.iter().find(|s| s.condition == "Center").unwrap();
    let best_other = stats
        .iter()
        .filter(|s| s.condition != "Center")
        .max_by(|a, b| a.mean.total_cmp(&b.mean))
        .unwrap();
    let se = center.se.unwrap().max(best_other.se.unwrap());
    let margin = center.mean - best_other.mean;
    ensure!(margin > 2.0 * se, "center {:.2} vs {} {:.2}, SE {se:.2}", center.mean, best_other.condition, best_other.mean);
    Ok(format!(
        "{checked} printed rows reproduced; planted center wins by {margin:.2} (2×SE = {:.2})",
        2.0 * se
    ))
}

fn csv_field(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

fn determinism() -> Outcome {
    let samples = synthetic_samples(3, (32, 32), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        steps_per_epoch: Some(1),
        ..TrainConfig::default()
    };
    let run = || {
        let m = SaliencyModel::new(tiny_config(32, 32), 21, DType::F32).unwrap();
        train(&m, &samples, &cfg, &TrainOptions::default()).unwrap();
        m
    };
    let (a, b) = (run(), run());
    let (ca, cb) = (a.to_checkpoint_bytes(Some(2)).unwrap(), b.to_checkpoint_bytes(Some(2)).unwrap());
    ensure!(ca == cb, "checkpoints differ");
    let s = &samples[0];
    let p1 = a.predict_grid(&s.image, &s.text_map).unwrap();
    let p2 = a.predict_grid(&s.image, &s.text_map).unwrap();
    let p3 = b.predict_grid(&s.image, &s.text_map).unwrap();
    let bits = |g: &Grid| g.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&p1) == bits(&p2) && bits(&p1) == bits(&p3), "repeated inference differs");
    Ok(format!("{} checkpoint bytes identical; inference repeatable", ca.len()))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metric-oracles", metric_oracles),
        ("efficient-attention", attention_equivalence),
        ("loss-identity", loss_identity),
        ("gradient-check", gradient_check),
        ("shape-contract", shape_contract),
        ("overfit-smoke", overfit),
        ("score-properties", score_properties),
        ("hypothesis-fidelity", hypothesis_fidelity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
