//! Acceptance run: one line per criterion, nonzero exit if any fails.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use regionsep::acoustics::{
    distance, reflection_coefficient, schroeder_t60, simulate_rir, simulate_rir_with_beta, ArraySpec, ImageOrder,
    Point3, RoomSpec, KERNEL_TAPS,
};
use regionsep::dataset::{
    build_dataset, car_cabin_regions, measured_snr, render_example, used_positions, Dataset, DatasetConfig, RirBank,
    SpeechConfig, Split, SplitCounts, Variant,
};
use regionsep::objectives::{
    best_permutation, fixed_mapping_loss, max_score_assignment, pit_loss, si_sdr, PermutationReport, Regime,
};
use regionsep::rng::seeded;
use regionsep::separator::{count_params, forward, BoundParams, ModelConfig, ModelParams};
use regionsep::tensor::gradcheck;
use regionsep::training::{evaluate, train, Example, TrainConfig};
use regionsep::Tensor;

type Outcome = Result<String, String>;

fn require(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noise(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn uniform(rows: usize, t: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    Tensor::new([rows, t], (0..rows * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// 1. Gradients

fn end_to_end_gradient(seed: u64, regime: Regime) -> f64 {
    let config = ModelConfig::tiny();
    let params = ModelParams::init(&config, seed).unwrap();
    let y = uniform(2, 128, seed + 100);
    let targets = uniform(2, 128, seed + 200);
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| params.tensors[n].clone()).collect();
    let mut rng = seeded(seed + 300);
    let selection = inputs
        .iter()
        .map(|t| {
            let mut idx: Vec<usize> = (0..t.numel()).filter(|_| rng.random::<f64>() < 0.1).collect();
            if idx.is_empty() {
                idx.push(rng.random_range(0..t.numel()));
            }
            idx
        })
        .collect();
    let reports = gradcheck::check(
        &inputs,
        |tape, vars| {
            let bound = BoundParams {
                vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
            };
            let yv = tape.constant(y.clone());
            let out = forward(tape, &bound, &config, yv)?;
            Ok(tape.separation_loss(out.estimates, &targets, regime)?.0)
        },
        1e-5,
        Some(selection),
    )
    .unwrap();
    gradcheck::joint(&reports)
}

fn gradients() -> Outcome {
    let mut failed = Vec::new();
    let mut worst = 0.0f64;
    let cases = common::op_cases();
    for case in &cases {
        let out = common::run_case(case);
        worst = worst.max(out.worst_relative);
        if !out.passed(case.tol.min(1e-4)) {
            failed.push(case.name);
        }
    }
    let e2e = [(1, Regime::Fixed), (2, Regime::Pit)]
        .map(|(seed, regime)| end_to_end_gradient(seed, regime))
        .into_iter()
        .fold(0.0, f64::max);
    require(
        failed.is_empty() && e2e < 1e-4,
        format!(
            "{} ops worst rel {worst:.1e}, tiny end-to-end rel {e2e:.1e} (< 1e-4), failing {failed:?}",
            cases.len()
        ),
    )
}

// 2. Parameter count

fn parameter_count() -> Outcome {
    let full = ModelConfig::full();
    let n = count_params(&full);
    let dev = (n as f64 - 4.2e6) / 4.2e6;
    let n3 = count_params(&ModelConfig { num_mics: 3, ..full.clone() });
    let n8 = count_params(&ModelConfig { num_mics: 8, ..full });
    require(
        dev.abs() <= 0.05 && n3 == n8,
        format!("{n} parameters ({:+.2}% vs 4.2M, band 5%), M=3 {n3} vs M=8 {n8}", dev * 100.0),
    )
}

// 3. Acoustics

fn first_order_oracle(room: &RoomSpec, beta: f64, src: Point3, mic: Point3, len: usize) -> Vec<f64> {
    let half = (KERNEL_TAPS as i64 - 1) / 2;
    let mut images = vec![(src, 1.0)];
    for axis in 0..3 {
        for wall in [0.0, room.dimensions[axis]] {
            let mut img = src;
            img[axis] = 2.0 * wall - src[axis];
            images.push((img, beta));
        }
    }
    let mut out = vec![0.0; len];
    for (img, gain) in images {
        let d = distance(img, mic);
        let delay = d * room.sample_rate / room.speed_of_sound;
        let center = delay.floor() as i64;
        for n in (center - half).max(0)..=(center + half).min(len as i64 - 1) {
            let x = n as f64 - delay;
            let window = 0.5 * (1.0 + (PI * x / (half as f64 + 1.0)).cos());
            let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            out[n as usize] += gain / (4.0 * PI * d) * window * sinc;
        }
    }
    out
}

fn random_point(rng: &mut impl Rng, lo: Point3, hi: Point3) -> Point3 {
    [0, 1, 2].map(|i| rng.random_range(lo[i]..hi[i]))
}

fn acoustics() -> Outcome {
    let beta = reflection_coefficient(&RoomSpec::car_cabin(0.1).unwrap()).unwrap();
    let mut rng = seeded(11);
    let mut oracle_dev = 0.0f64;
    let room = RoomSpec::car_cabin(0.1).unwrap();
    for _ in 0..20 {
        let src = random_point(&mut rng, [0.3, 0.3, 0.3], [2.7, 1.7, 1.2]);
        let mic = random_point(&mut rng, [0.3, 0.3, 0.3], [2.7, 1.7, 1.2]);
        let b = rng.random_range(0.1..0.95);
        let rir = simulate_rir_with_beta(&room, b, src, mic, ImageOrder::Limited(1)).unwrap();
        let oracle = first_order_oracle(&room, b, src, mic, rir.samples.len());
        for (a, o) in rir.samples.iter().zip(&oracle) {
            oracle_dev = oracle_dev.max((a - o).abs());
        }
    }
    let array = ArraySpec::car_cabin();
    let mut worst_t60 = 0.0f64;
    for t60 in [0.05, 0.1] {
        let room = RoomSpec::car_cabin(t60).unwrap();
        for region in car_cabin_regions() {
            for _ in 0..3 {
                let src = random_point(&mut rng, region.min_corner(), region.max_corner());
                for &mic in &array.mic_positions {
                    let rir = simulate_rir(&room, src, mic, ImageOrder::Auto).unwrap();
                    let est = schroeder_t60(&rir.samples, room.sample_rate).unwrap_or(f64::INFINITY);
                    worst_t60 = worst_t60.max((est - t60).abs() / t60);
                }
            }
        }
    }
    require(
        (beta - 0.680).abs() < 1e-3 && worst_t60 <= 0.2 && oracle_dev < 1e-10,
        format!(
            "beta {beta:.4} (0.680 +- 1e-3), worst T60 deviation {:.1}% (band 20%), first-order oracle {oracle_dev:.1e} (< 1e-10)",
            worst_t60 * 100.0
        ),
    )
}

// 4. Dataset

fn dataset() -> Outcome {
    let config = DatasetConfig::default();
    let ds = Dataset::generate(&config).unwrap();
    let counts = config.split_counts();
    let rirs = RirBank::prepare(&config, &ds.records).unwrap();
    let (mut residual, mut snr_lo, mut snr_hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    let mut onsets_ok = true;
    for rec in &ds.records {
        let ex = render_example(&config, &rirs, rec).unwrap();
        match rec.variant {
            Variant::Fc => residual = residual.max(ex.mixing_residual()),
            Variant::Wn => {
                let snr = measured_snr(&ex.clean(), ex.noise.as_ref().unwrap());
                snr_lo = snr_lo.min(snr);
                snr_hi = snr_hi.max(snr);
            }
            Variant::Po => {
                let mut onsets = rec.onsets.clone();
                onsets.sort_unstable();
                let spacing = 2 * config.sample_rate as usize;
                onsets_ok &= onsets.iter().enumerate().all(|(k, &o)| o == k * spacing);
                // Each target is silent until its onset.
                onsets_ok &= ex
                    .targets
                    .iter()
                    .zip(&rec.onsets)
                    .all(|(t, &o)| t[..o].iter().all(|&v| v == 0.0) && t[o..].iter().any(|&v| v != 0.0));
            }
        }
    }
    let used: Vec<_> = Split::ALL.iter().map(|&s| used_positions(&ds.records, s)).collect();
    let mut disjoint = true;
    for r in 0..config.regions.len() {
        for (k, split) in Split::ALL.into_iter().enumerate() {
            let allowed: BTreeSet<usize> = ds.bank.indices(r, split).into_iter().collect();
            disjoint &= used[k][r].is_subset(&allowed);
            for other in &used[k + 1..] {
                disjoint &= used[k][r].is_disjoint(&other[r]);
            }
        }
    }
    let utterances: Vec<BTreeSet<&String>> = Split::ALL
        .iter()
        .map(|&s| ds.records.iter().filter(|x| x.split == s).flat_map(|x| &x.utterances).collect())
        .collect();
    disjoint &= utterances[0].is_disjoint(&utterances[1])
        && utterances[0].is_disjoint(&utterances[2])
        && utterances[1].is_disjoint(&utterances[2]);
    require(
        residual < 1e-6 && snr_lo >= 20.0 && snr_hi <= 30.0 && onsets_ok && disjoint,
        format!(
            "{}/{}/{} build ({} records): FC residual {residual:.1e} (< 1e-6), WN SNR [{snr_lo:.2}, {snr_hi:.2}] dB, PO 2 s onsets {onsets_ok}, splits disjoint {disjoint}",
            counts.train,
            counts.val,
            counts.test,
            ds.records.len()
        ),
    )
}

// 5. Objectives

fn objectives() -> Outcome {
    let mut rng = seeded(3);
    let mut ortho = 0.0f64;
    let mut scale = 0.0f64;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _ in 0..20 {
        let s = noise(&mut rng, 2000);
        let mut n = noise(&mut rng, 2000);
        let k = dot(&n, &s) / dot(&s, &s);
        n.iter_mut().zip(&s).for_each(|(v, x)| *v -= k * x);
        let g = (0.1 * dot(&s, &s) / dot(&n, &n)).sqrt();
        let est: Vec<f64> = s.iter().zip(&n).map(|(x, v)| x + g * v).collect();
        let base = si_sdr(&est, &s).unwrap();
        ortho = ortho.max((base - 10.0).abs());
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled: Vec<f64> = est.iter().map(|v| v * c).collect();
            scale = scale.max((si_sdr(&scaled, &s).unwrap() - base).abs());
        }
    }
    let mut mismatches = 0;
    for (r, trials) in [(3, 1000), (5, 100)] {
        for _ in 0..trials {
            let scores: Vec<Vec<f64>> = (0..r)
                .map(|_| (0..r).map(|_| rng.random_range(-30.0..30.0)).collect())
                .collect();
            let (_, exhaustive, _) = best_permutation(&scores).unwrap();
            let (_, hungarian) = max_score_assignment(&scores).unwrap();
            if (exhaustive - hungarian).abs() > 1e-9 {
                mismatches += 1;
            }
        }
    }
    let mut violations = 0;
    for _ in 0..1000 {
        let est = Tensor::new([3, 64], noise(&mut rng, 192)).unwrap();
        let tgt = Tensor::new([3, 64], noise(&mut rng, 192)).unwrap();
        if fixed_mapping_loss(&est, &tgt).unwrap().loss < pit_loss(&est, &tgt).unwrap().loss {
            violations += 1;
        }
    }
    require(
        ortho < 1e-6 && scale < 1e-9 && mismatches == 0 && violations == 0,
        format!(
            "orthogonal case err {ortho:.1e} (< 1e-6), scale err {scale:.1e} (< 1e-9), PIT vs Hungarian mismatches {mismatches}/1100, fixed < pit violations {violations}/1000"
        ),
    )
}

// 6. Training

fn two_region_config(train: usize, val: usize) -> DatasetConfig {
    let mut cfg = DatasetConfig {
        counts: Some(SplitCounts { train, val, test: 0 }),
        clip_seconds: 0.032,
        t60_grid: vec![0.05],
        ..DatasetConfig::default()
    };
    cfg.regions.truncate(2);
    cfg.positions_per_region = vec![20, 20];
    cfg
}

fn examples(ds: &Dataset, split: Split, mics: usize) -> Vec<Example> {
    let recs = ds.select(split, Variant::Fc);
    let mut mixes = ds.render(&recs).unwrap();
    for m in &mut mixes {
        m.mics.truncate(mics);
    }
    recs.iter()
        .zip(&mixes)
        .map(|(r, m)| Example::from_mixture(r, m, ds.config.array.reference_index).unwrap())
        .collect()
}

fn overfit(seed: u64) -> (f64, f64) {
    let cfg = DatasetConfig {
        seed,
        ..two_region_config(1, 0)
    };
    let ds = Dataset::generate(&cfg).unwrap();
    // The tiny model has two microphones; its reference (index 1) is the
    // array reference, so targets stay valid.
    let ex = examples(&ds, Split::Train, 2);
    let model = ModelConfig::tiny();
    assert_eq!(model.reference(), ds.config.array.reference_index);
    let init = ModelParams::init(&model, seed).unwrap();
    let mut tc = TrainConfig::new(500, Regime::Fixed);
    tc.learning_rate = 3e-3;
    let labels = cfg.labels();
    let before = evaluate(&init, &ex, &labels, "train", "init").unwrap();
    let (trained, _) = train(init, &ex, &[], &labels, &tc, None).unwrap();
    let after = evaluate(&trained, &ex, &labels, "train", "final").unwrap();
    (before.report.avg_sisdr, after.report.avg_sisdr)
}

fn separability(regime: Regime) -> (String, f64, bool) {
    let mut cfg = two_region_config(40, 40);
    cfg.speech = SpeechConfig::Synthetic {
        bands: vec![Some([200.0, 1000.0]), Some([1500.0, 4000.0])],
    };
    let ds = Dataset::generate(&cfg).unwrap();
    let (tr, va) = (examples(&ds, Split::Train, 3), examples(&ds, Split::Val, 3));
    let model = ModelConfig {
        num_regions: 2,
        ..ModelConfig::desk()
    };
    let mut tc = TrainConfig::new(10, regime);
    tc.learning_rate = 1e-3;
    let labels = cfg.labels();
    let (params, _) = train(ModelParams::init(&model, 1).unwrap(), &tr, &va, &labels, &tc, None).unwrap();
    let census = evaluate(&params, &va, &labels, "val", "final").unwrap().census;
    (census.majority_label(), census.consistency(), census.is_identity_majority())
}

fn training() -> Outcome {
    let gains: Vec<(f64, f64)> = (1..=3).map(overfit).collect();
    let worst_gain = gains.iter().map(|(b, a)| a - b).fold(f64::INFINITY, f64::min);
    let (fixed_major, fixed_cons, fixed_identity) = separability(Regime::Fixed);
    let (pit_major, pit_cons, _) = separability(Regime::Pit);
    require(
        worst_gain >= 20.0 && fixed_identity && fixed_cons >= 0.95 && pit_cons >= 0.95,
        format!(
            "overfit gain min {worst_gain:.1} dB over 3 seeds (>= 20), fixed majority {fixed_major} {:.0}% correct, pit majority {pit_major} {:.0}% consistent (>= 95%)",
            fixed_cons * 100.0,
            pit_cons * 100.0
        ),
    )
}

// 7. Census

fn census() -> Outcome {
    let labels: Vec<String> = ["D", "C", "B"].map(String::from).to_vec();
    let mut rng = seeded(7);
    let planted_set = |rng: &mut rand_chacha::ChaCha8Rng, planted: &[(Vec<usize>, usize)]| {
        let mut examples = Vec::new();
        for (perm, n) in planted {
            for _ in 0..*n {
                let tgt = Tensor::new([3, 256], noise(rng, 768)).unwrap();
                let mut est = Vec::new();
                for &t in perm {
                    est.extend(tgt.row(t).iter().map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal)));
                }
                examples.push((Tensor::new([3, 256], est).unwrap(), tgt));
            }
        }
        PermutationReport::from_examples(&examples, &labels).unwrap()
    };
    // Majority C-D-B; the others are single swaps of it, keyed by the swapped targets.
    let a = planted_set(
        &mut rng,
        &[(vec![1, 0, 2], 60), (vec![0, 1, 2], 15), (vec![1, 2, 0], 10), (vec![2, 0, 1], 5)],
    );
    let ok_a = a.majority == [1, 0, 2]
        && a.correct == 60
        && a.confusions["D<->C"] == 15
        && a.confusions["D<->B"] == 10
        && a.confusions["C<->B"] == 5
        && a.other == 0
        && a.all_have_one_correct;
    // A 3-cycle of the majority leaves no slot correct.
    let b = planted_set(&mut rng, &[(vec![0, 1, 2], 8), (vec![1, 2, 0], 2)]);
    let ok_b = b.majority == [0, 1, 2] && b.correct == 8 && b.other == 2 && !b.all_have_one_correct;
    require(
        ok_a && ok_b,
        format!(
            "planted 60/15/10/5 -> majority {} correct {} confusions {:?} other {} one-correct {}; cyclic set flag {}",
            a.majority_label(),
            a.correct,
            a.confusions,
            a.other,
            a.all_have_one_correct,
            b.all_have_one_correct
        ),
    )
}

// 8. Reproducibility

fn run_once(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut cfg = DatasetConfig {
        counts: Some(SplitCounts { train: 6, val: 3, test: 3 }),
        clip_seconds: 0.032,
        t60_grid: vec![0.05, 0.1],
        ..DatasetConfig::default()
    };
    cfg.positions_per_region = vec![5, 5, 5];
    let ds = build_dataset(&cfg, &dir.join("ds")).unwrap();
    let labels = cfg.labels();
    let (tr, va, te) = (
        examples(&ds, Split::Train, 3),
        examples(&ds, Split::Val, 3),
        examples(&ds, Split::Test, 3),
    );
    let mut tc = TrainConfig::new(2, Regime::Pit);
    tc.learning_rate = 1e-3;
    tc.checkpoint_interval = 4;
    let (params, log) = train(
        ModelParams::init(&ModelConfig::desk(), 5).unwrap(),
        &tr,
        &va,
        &labels,
        &tc,
        Some(&dir.join("run")),
    )
    .unwrap();
    log.write(&dir.join("run/train_log.jsonl")).unwrap();
    let ev = evaluate(&params, &te, &labels, "FC", "final").unwrap();
    let metrics = format!("{}\n{}\n", regionsep::training::MetricsReport::csv_header(&labels), ev.report.csv_row());
    std::fs::write(dir.join("metrics.csv"), metrics).unwrap();
    std::fs::write(dir.join("per_example.csv"), ev.per_example_csv()).unwrap();
    [
        "ds/manifest.jsonl",
        "ds/positions.json",
        "run/train_log.jsonl",
        "run/final.ckpt",
        "metrics.csv",
        "per_example.csv",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
    .collect()
}

fn reproducibility() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (run_once(a.path()), run_once(b.path()));
    let differing: Vec<&String> = ra.iter().zip(&rb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| &x.0).collect();
    require(
        differing.is_empty(),
        format!("{} artifacts compared byte for byte, differing {differing:?}", ra.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 8] = [
        ("gradients", gradients, minutes(5)),
        ("parameter count", parameter_count, minutes(1)),
        ("acoustics", acoustics, minutes(2)),
        ("dataset", dataset, minutes(10)),
        ("objectives", objectives, minutes(1)),
        ("training", training, minutes(60)),
        ("census", census, minutes(1)),
        ("reproducibility", reproducibility, minutes(5)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= *budget;
        let (pass, detail) = match outcome {
            Ok(d) => (in_budget, d),
            Err(d) => (false, d),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {} {name}: {} | {detail} | {:.1}s of {}s budget",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
