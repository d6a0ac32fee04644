//! Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
//! as constants next to each check. Criteria listed in `KNOWN_FAILURES` are
//! still executed and reported; they only stop affecting the exit status.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use candle_core::Device;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonoclass::dataset::{split_dataset, ClassLabel, DatasetManifest, ImageRecord, SplitRounding, SplitSpec};
use sonoclass::evaluation::{confusion_matrix, f1_from_pr, metrics_from_confusion, roc_auc};
use sonoclass::interpretability::segmentation::grid_segments;
use sonoclass::interpretability::{explain_with_masks, sample_masks, Baseline, LimeConfig, LogitGradient, SegmentMap};
use sonoclass::model::{BackboneName, BackboneSpec, Classifier, ModelConfig, Precision, Scorer, TrainablePolicy, WeightsSource};
use sonoclass::preprocess::{normalize, ImageTensor, Normalization, PreprocessConfig};
use sonoclass::synthetic::{make_synthetic, SyntheticConfig};
use sonoclass::training::{binary_cross_entropy, train, LabeledSet, TrainConfig, Trainer};
use sonoclass::Result;

/// Criteria whose failure is understood and documented; they still print FAIL.
const KNOWN_FAILURES: &[usize] = &[2];

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lib<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn tiny_config(precision: Precision, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(BackboneSpec::new(BackboneName::TinyTestCnn, WeightsSource::Random));
    c.preprocess = PreprocessConfig { target_height: 64, target_width: 64, ..PreprocessConfig::default() };
    c.precision = precision;
    c.init_seed = seed;
    c
}

// ---------------------------------------------------------------- 1

fn oracle_metrics(y: &[u8], s: &[f64], t: f64) -> [f64; 5] {
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let pred = s[i] >= t;
        if y[i] == 1 && pred {
            tp += 1.0;
        } else if y[i] == 1 {
            fn_ += 1.0;
        } else if pred {
            fp += 1.0;
        } else {
            tn += 1.0;
        }
    }
    let acc = (tp + tn) / y.len() as f64;
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    // pairwise Mann–Whitney count
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    [acc, p, r, f1, num / den]
}

fn criterion_1() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.gen_range(3..=50);
        let mut y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        // both classes present so AUC is defined
        y[0] = 0;
        y[1] = 1;
        let coarse = case % 2 == 0;
        let s: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(rng.gen_range(0..10u8)) / 10.0 + 0.05 } else { rng.gen::<f64>() })
            .collect();
        let cm = lib(confusion_matrix(&y, &s, 0.5))?;
        let m = lib(metrics_from_confusion(&cm))?;
        let auc = lib(roc_auc(&y, &s))?;
        let o = oracle_metrics(&y, &s, 0.5);
        for (got, want) in [m.accuracy, m.precision, m.recall, m.f1, auc].iter().zip(o) {
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= TOL, format!("max deviation {worst:e} > {TOL:e}"))?;
    Ok(format!("200 cases, max deviation {worst:e} (tol {TOL:e})"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    const TOL: f64 = 1e-4;
    let cases = [
        ("InceptionV3", 0.9052, 0.9001, 0.9716, 0.9345),
        ("ResNet101", 0.8146, 0.9024, 0.9492, 0.9252),
        ("EfficientNetB7", 0.7146, 0.7648, 0.8518, 0.8059),
        ("RadImagenet-DenseNet", 0.7746, 0.8424, 0.8892, 0.8650),
    ];
    let mut bad = Vec::new();
    let mut detail = Vec::new();
    for (name, _, p, r, f) in cases {
        let (got, _) = f1_from_pr(p, r);
        detail.push(format!("{name} {got:.5}"));
        if (got - f).abs() > TOL {
            bad.push(format!("{name}: F1({p}, {r}) = {got:.6}, reported {f} (|diff| {:.2e} > {TOL:e})", (got - f).abs()));
        }
    }
    let inputs: Vec<_> = cases
        .iter()
        .map(|&(n, a, p, r, f)| sonoclass::reporting::ComparisonInput {
            model_name: Some(n.into()),
            accuracy: a,
            precision: p,
            recall: r,
            f1: Some(f),
        })
        .collect();
    let rows = lib(sonoclass::reporting::comparison_rows(&inputs))?;
    if rows[0].model_name != "InceptionV3" {
        bad.push(format!("first row is {}", rows[0].model_name));
    }
    if bad.is_empty() {
        Ok(format!("{}; InceptionV3 ranks first", detail.join(", ")))
    } else {
        Err(bad.join("; "))
    }
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut records = Vec::new();
    for (label, n) in [(ClassLabel::Healthy, 903), (ClassLabel::Unhealthy, 2297)] {
        for i in 0..n {
            records.push(ImageRecord { path: PathBuf::from(format!("{}/{i:05}.png", label.as_str())), label, split: None });
        }
    }
    let manifest = DatasetManifest::new(records);
    let spec = SplitSpec { fractions: [0.7, 0.2, 0.1], seed: 42, rounding: SplitRounding::LargestRemainder };
    let (a, b, c) = lib(split_dataset(&manifest, &spec))?;
    let totals = [a.len(), b.len(), c.len()];
    check(totals == [2240, 640, 320], format!("totals {totals:?}"))?;

    let sets: Vec<BTreeSet<PathBuf>> = [&a, &b, &c].iter().map(|m| m.paths().into_iter().collect()).collect();
    check(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]), "splits overlap")?;
    let union: BTreeSet<_> = sets.iter().flatten().cloned().collect();
    check(union == manifest.paths().into_iter().collect::<BTreeSet<_>>(), "splits are not exhaustive")?;

    for label in ClassLabel::ALL {
        let n = manifest.count(label);
        let sizes = spec.class_sizes(n);
        let got = [a.count(label), b.count(label), c.count(label)];
        check(got == sizes, format!("{label}: {got:?} vs {sizes:?}"))?;
        for (i, f) in spec.fractions.iter().enumerate() {
            check((got[i] as f64 - f * n as f64).abs() < 1.0, format!("{label} split {i} not stratified"))?;
        }
    }
    let again = lib(split_dataset(&manifest, &spec))?;
    check(again == (a.clone(), b.clone(), c.clone()), "rerun differs")?;
    let other = lib(split_dataset(&manifest, &SplitSpec { seed: 43, ..spec.clone() }))?;
    check(other.0 != a, "seed has no effect")?;

    let floor = SplitSpec { rounding: SplitRounding::Floor, ..spec };
    let (fa, fb, fc) = lib(split_dataset(&manifest, &floor))?;
    Ok(format!(
        "totals 2240/640/320 (largest remainder), disjoint, exhaustive, bit-identical; truncating rule gives {}/{}/{}",
        fa.len(),
        fb.len(),
        fc.len()
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let device = Device::Cpu;
    let cfg = tiny_config(Precision::F32, 3);
    let mut model = lib(Classifier::build(&cfg, &device))?;
    let tc = TrainConfig { policy: TrainablePolicy::FreezeBackbone, ..TrainConfig::default() };
    let mut trainer = lib(Trainer::new(&mut model, &tc))?;
    let before_b = lib(model.backbone_values())?;
    let before_h = lib(model.head_values())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let images: Vec<ImageTensor> = (0..4)
        .map(|_| ImageTensor::new((0..64 * 64 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(), 64, 64, (-1.0, 1.0)))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let labels = [0u8, 1, 0, 1];
    for _ in 0..3 {
        lib(trainer.train_step(&model, &images, &labels))?;
    }
    let after_b = lib(model.backbone_values())?;
    let after_h = lib(model.head_values())?;
    let diff = before_b.iter().zip(&after_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let changed = before_h.iter().zip(&after_h).filter(|(a, b)| a != b).count();
    check(diff == 0.0, format!("backbone moved by {diff:e}"))?;
    check(changed > 0, "no head parameter changed")?;
    Ok(format!("backbone max |diff| = 0 over {} values; {changed} head values changed", before_b.len()))
}

// ---------------------------------------------------------------- 5

fn synthetic_tensors(dir: &Path, cfg: &PreprocessConfig) -> std::result::Result<(Vec<ImageTensor>, Vec<u8>), String> {
    let manifest = lib(make_synthetic(dir, &SyntheticConfig::default()))?;
    let set = LabeledSet::from_manifest(&manifest, cfg);
    Ok((lib(set.all_images())?, set.labels().to_vec()))
}

fn criterion_5() -> Outcome {
    const MIN_ACC: f64 = 0.95;
    const MAX_EPOCHS: usize = 20;
    const MAX_SECONDS: f64 = 60.0;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tiny_config(Precision::F32, 5);
    let (images, labels) = synthetic_tensors(dir.path(), &cfg.preprocess)?;
    check(images.len() == 32, format!("{} images", images.len()))?;
    let set = lib(LabeledSet::from_images(images, labels))?;
    let start = Instant::now();
    let mut model = lib(Classifier::build(&cfg, &Device::Cpu))?;
    let tc = TrainConfig { epochs: MAX_EPOCHS, batch_size: 8, seed: 5, ..TrainConfig::default() };
    let history = lib(train(&mut model, &set, &set, &tc))?;
    let secs = start.elapsed().as_secs_f64();
    let n = history.train_accuracy.len();
    check(
        [history.train_loss.len(), history.val_loss.len(), history.val_accuracy.len(), n].iter().all(|&l| l == MAX_EPOCHS),
        "history length differs from epochs run",
    )?;
    let acc = history.train_accuracy[n - 1];
    check(acc >= MIN_ACC, format!("final train accuracy {acc:.4} < {MIN_ACC}"))?;
    check(secs <= MAX_SECONDS, format!("took {secs:.1} s > {MAX_SECONDS} s"))?;
    Ok(format!("train accuracy {acc:.4} after {n} epochs in {secs:.1} s"))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    const TOL: f64 = 1e-9;
    let l = lib(binary_cross_entropy(&[1, 0], &[0.5, 0.5], None))?;
    check((l - std::f64::consts::LN_2).abs() <= TOL, format!("BCE(.5,.5) = {l}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..0.999)).collect();
        let mut sum = 0.0;
        for i in 0..n {
            let yi = f64::from(y[i]);
            sum -= yi * p[i].ln() + (1.0 - yi) * (1.0 - p[i]).ln();
        }
        let got = lib(binary_cross_entropy(&y, &p, None))?;
        worst = worst.max((got - sum / n as f64).abs());
    }
    check(worst <= TOL, format!("oracle deviation {worst:e}"))?;
    Ok(format!("ln 2 within {TOL:e}; 100 random cases, max deviation {worst:e}"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    const H: f64 = 1e-3;
    const REL_TOL: f64 = 1e-3;
    const PIXELS: usize = 20;
    // relative error is measured against this floor for vanishing gradients
    const ABS_FLOOR: f64 = 1e-8;
    let cfg = tiny_config(Precision::F64, 7);
    let model = lib(Classifier::build(&cfg, &Device::Cpu))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = lib(ImageTensor::new((0..64 * 64 * 3).map(|_| rng.gen_range(-0.9..0.9)).collect(), 64, 64, (-1.0, 1.0)))?;
    let (_, grad) = lib(model.logit_gradient(&img))?;
    let logit = |im: &ImageTensor| -> Result<f64> {
        let t = model.logits(&model.input_tensor(std::slice::from_ref(im))?)?;
        Ok(t.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?[0])
    };
    let fd = |y: usize, x: usize, c: usize, h: f64| -> Result<f64> {
        let v = img.get(y, x, c);
        Ok((logit(&img.with_element(y, x, c, v + h))? - logit(&img.with_element(y, x, c, v - h))?) / (2.0 * h))
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR);
    let (mut worst, mut checked, mut kinked) = (0.0f64, 0, 0);
    while checked < PIXELS {
        check(checked + kinked < 10 * PIXELS, "too many non-smooth pixels")?;
        let (y, x, c) = (rng.gen_range(0..64), rng.gen_range(0..64), rng.gen_range(0..3));
        let coarse = lib(fd(y, x, c, H))?;
        // a ReLU or max-pool switch inside ±H makes the difference quotient
        // meaningless; such pixels are detected by refining the step
        if rel(coarse, lib(fd(y, x, c, H / 100.0))?) > REL_TOL {
            kinked += 1;
            continue;
        }
        worst = worst.max(rel(grad[(y * 64 + x) * 3 + c], coarse));
        checked += 1;
    }
    check(worst <= REL_TOL, format!("max relative error {worst:e}"))?;
    Ok(format!(
        "{PIXELS} smooth pixels, max relative error {worst:.2e} (h = {H}, tol {REL_TOL:e}); {kinked} pixel(s) with a kink inside ±h excluded"
    ))
}

// ---------------------------------------------------------------- 8

/// Additive model over segment presence; a segment counts as present when
/// its pixels keep the original value 0.8 (the gray baseline is 0).
struct Additive {
    segments: SegmentMap,
    a: f64,
    b: Vec<f64>,
}

impl Scorer for Additive {
    fn score(&self, images: &[ImageTensor]) -> Result<Vec<f64>> {
        Ok(images
            .iter()
            .map(|img| {
                let mut on = vec![false; self.b.len()];
                for y in 0..img.height() {
                    for x in 0..img.width() {
                        if img.get(y, x, 0) > 0.4 {
                            on[self.segments.label(y, x)] = true;
                        }
                    }
                }
                self.a + on.iter().zip(&self.b).filter(|(o, _)| **o).map(|(_, b)| b).sum::<f64>()
            })
            .collect())
    }
}

fn criterion_8() -> Outcome {
    const TOL: f64 = 0.05;
    let img = lib(ImageTensor::filled(32, 32, 0.8, (-1.0, 1.0)))?;
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let k = [4usize, 9, 16][seed as usize % 3];
        let seg = lib(grid_segments(32, 32, k))?;
        check(seg.k() == k, format!("grid gave {} segments for {k}", seg.k()))?;
        // dyadic coefficients keep every partial sum exact, whatever the order
        let b: Vec<f64> = (0..k).map(|_| f64::from(rng.gen_range(-19i32..=19)) / 64.0).collect();
        let model = Additive { segments: seg.clone(), a: f64::from(rng.gen_range(0i32..32)) / 64.0, b: b.clone() };
        let cfg = LimeConfig { n_samples: 1000, baseline: Baseline::Gray, top_k: 1, seed, ..LimeConfig::default() };
        let masks = sample_masks(k, cfg.n_samples, seed);
        let e = lib(explain_with_masks(&model, &img, &seg, &masks, &cfg))?;
        for (w, t) in e.weights.iter().zip(&b) {
            worst = worst.max((w - t).abs());
        }
        // permutation equivariance: relabel segments and permute mask columns
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let seg_p = lib(seg.relabel(&perm))?;
        let mut b_p = vec![0.0; k];
        for (old, &new) in perm.iter().enumerate() {
            b_p[new] = b[old];
        }
        let masks_p: Vec<Vec<bool>> = masks
            .iter()
            .map(|m| {
                let mut out = vec![false; k];
                for (old, &new) in perm.iter().enumerate() {
                    out[new] = m[old];
                }
                out
            })
            .collect();
        let model_p = Additive { segments: seg_p.clone(), a: model.a, b: b_p };
        let e_p = lib(explain_with_masks(&model_p, &img, &seg_p, &masks_p, &cfg))?;
        for (old, &new) in perm.iter().enumerate() {
            check(
                e_p.weights[new].to_bits() == e.weights[old].to_bits(),
                format!("seed {seed}: weight of segment {old} changed under relabelling"),
            )?;
        }
        check(e_p.intercept.to_bits() == e.intercept.to_bits(), "intercept changed under relabelling")?;
    }
    check(worst <= TOL, format!("max coefficient error {worst:.4} > {TOL}"))?;
    Ok(format!("10 seeds, K in {{4, 9, 16}}, max coefficient error {worst:.2e}; relabelling is bit-exact"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    const RT_TOL: f64 = 1e-6;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = PreprocessConfig::default();
    let (images, _) = synthetic_tensors(dir.path(), &cfg)?;
    for img in &images {
        check(img.shape() == (256, 256, 3), format!("shape {:?}", img.shape()))?;
        check(img.data().iter().all(|v| (-1.0..=1.0).contains(v)), "value outside [-1, 1]")?;
    }
    let m = Normalization::InceptionMinus1To1;
    check(m.apply(0.0) == -1.0 && m.apply(255.0) == 1.0, "endpoints are not exact")?;
    let raw: Vec<f64> = (0..=255).flat_map(|v| [f64::from(v); 3]).collect();
    let t = lib(ImageTensor::new(raw.clone(), 16, 16, (0.0, 255.0)))?;
    let n = lib(normalize(&t, m))?;
    check(n.data()[0] == -1.0 && n.data()[raw.len() - 1] == 1.0, "normalize endpoints are not exact")?;
    let back = n.denormalize(m);
    let err = back.data().iter().zip(&raw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(err <= RT_TOL, format!("round-trip error {err:e}"))?;
    Ok(format!("{} images 256x256x3 in [-1, 1]; 0 -> -1, 255 -> 1 exact; round-trip error {err:e}", images.len()))
}

// ---------------------------------------------------------------- 10

const E2E_CONFIG: &str = r#"{
  "preprocess": {"target_height": 64, "target_width": 64},
  "backbone": {"name": "tiny_test_cnn", "weights_source": "random"},
  "train": {"epochs": 3, "batch_size": 8},
  "lime": {"n_samples": 200, "n_segments_target": 16}
}"#;

fn cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sonoclass"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.code() == Some(0),
        format!("`{}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim()),
    )
}

fn pipeline(root: &Path) -> std::result::Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    std::fs::write(root.join("config.json"), E2E_CONFIG).map_err(|e| e.to_string())?;
    let config = p("config.json");
    let (data, out) = (p("data"), p("out"));
    cli(&["make-synthetic", "--out-dir", &data, "--seed", "7"])?;
    cli(&["analyze", "--config", &config, "--data-dir", &data, "--out-dir", &out, "--seed", "7"])?;
    cli(&["train", "--config", &config, "--data-dir", &data, "--out-dir", &out, "--seed", "7"])?;
    cli(&["evaluate", "--config", &config, "--data-dir", &data, "--out-dir", &out, "--seed", "7"])?;
    let image = root.join("data/Unhealthy/unhealthy_0000.png").to_string_lossy().into_owned();
    cli(&["explain", "--config", &config, "--out-dir", &out, "--image", &image, "--method", "lime", "--seed", "7"])?;
    cli(&["explain", "--config", &config, "--out-dir", &out, "--image", &image, "--method", "saliency"])?;
    let metrics = p("out/metrics.json");
    cli(&["compare", "--out-dir", &out, &metrics])?;
    Ok(())
}

const E2E_ARTIFACTS: &[&str] = &[
    "manifest.csv",
    "stats.json",
    "histogram_healthy.csv",
    "histogram_unhealthy.csv",
    "class_distribution.png",
    "intensity_histograms.png",
    "history.csv",
    "training_curves.png",
    "checkpoint/weights.safetensors",
    "checkpoint/model.json",
    "checkpoint/history.csv",
    "metrics.json",
    "lime_explanation.json",
    "lime_overlay.png",
    "saliency.json",
    "saliency_overlay.png",
    "comparison.csv",
    "comparison.txt",
    "effective_config.json",
];

fn criterion_10() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    for r in &runs {
        pipeline(r.path())?;
    }
    for a in E2E_ARTIFACTS {
        check(runs[0].path().join("out").join(a).is_file(), format!("missing artifact {a}"))?;
    }
    let mut compared = 0;
    for a in E2E_ARTIFACTS.iter().filter(|a| a.ends_with(".csv") || a.ends_with(".json")) {
        let read = |r: &tempfile::TempDir| std::fs::read(r.path().join("out").join(a)).map_err(|e| e.to_string());
        let (x, y) = (read(&runs[0])?, read(&runs[1])?);
        // paths differ between the two temp roots; compare after normalizing them
        let norm = |bytes: Vec<u8>, r: &tempfile::TempDir| String::from_utf8_lossy(&bytes).replace(&*r.path().to_string_lossy(), "<root>");
        check(norm(x, &runs[0]) == norm(y, &runs[1]), format!("{a} differs between reruns"))?;
        compared += 1;
    }
    // the same root must reproduce byte-for-byte without any normalization
    let first = std::fs::read(runs[0].path().join("out/history.csv")).map_err(|e| e.to_string())?;
    pipeline(runs[0].path())?;
    let second = std::fs::read(runs[0].path().join("out/history.csv")).map_err(|e| e.to_string())?;
    check(first == second, "history.csv differs on rerun in place")?;
    Ok(format!("7 commands exit 0, {} artifacts present, {compared} CSV/JSON files identical across reruns", E2E_ARTIFACTS.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracle equivalence", criterion_1),
        ("published table consistency", criterion_2),
        ("split correctness", criterion_3),
        ("frozen-transfer invariant", criterion_4),
        ("overfit smoke test", criterion_5),
        ("loss correctness", criterion_6),
        ("saliency gradient check", criterion_7),
        ("LIME oracle recovery", criterion_8),
        ("preprocessing contract", criterion_9),
        ("end-to-end CLI", criterion_10),
    ];
    let mut unexpected = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                let known = KNOWN_FAILURES.contains(&id);
                if !known {
                    unexpected += 1;
                }
                println!("FAIL [{id}] {name} ({secs:.1}s){}: {detail}", if known { " [known deviation]" } else { "" });
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
}
