use std::collections::BTreeSet;

use regionsep::dataset::{
    build_dataset, measured_snr, rir_requests, used_positions, Dataset, DatasetConfig, Split, SplitCounts, Variant,
};

fn small(clip_seconds: f64) -> DatasetConfig {
    DatasetConfig {
        counts: Some(SplitCounts { train: 6, val: 3, test: 3 }),
        clip_seconds,
        t60_grid: vec![0.05, 0.1],
        ..DatasetConfig::default()
    }
}

#[test]
fn mixtures_are_sums_of_images() {
    let ds = Dataset::generate(&small(0.1)).unwrap();
    let fc: Vec<_> = ds.records.iter().filter(|r| r.variant == Variant::Fc).collect();
    for ex in ds.render(&fc).unwrap() {
        assert!(ex.mixing_residual() < 1e-6);
        assert!(ex.noise.is_none());
        // Targets are the images at the reference microphone.
        for (t, img) in ex.targets.iter().zip(&ex.images) {
            assert_eq!(t, &img[ds.config.array.reference_index]);
        }
    }
}

#[test]
fn noisy_variant_snr_in_range() {
    let ds = Dataset::generate(&small(0.1)).unwrap();
    let wn = ds.select(Split::Test, Variant::Wn);
    assert_eq!(wn.len(), 3);
    for (rec, ex) in wn.iter().zip(ds.render(&wn).unwrap()) {
        let noise = ex.noise.as_ref().unwrap();
        let snr = measured_snr(&ex.clean(), noise);
        assert!((20.0..=30.0).contains(&snr), "{snr}");
        assert!((snr - rec.snr_db.unwrap()).abs() < 1e-9);
        assert!(ex.mixing_residual() < 1e-6);
    }
}

#[test]
fn partial_overlap_onsets_two_seconds_apart() {
    let cfg = small(0.05);
    assert_eq!(cfg.onset_spacing(), 32_000);
    let ds = Dataset::generate(&cfg).unwrap();
    let po = ds.select(Split::Test, Variant::Po);
    for (rec, ex) in po.iter().zip(ds.render(&po).unwrap()) {
        let mut onsets = rec.onsets.clone();
        onsets.sort_unstable();
        assert_eq!(onsets, [0, 32_000, 64_000]);
        assert_eq!(ex.len(), cfg.clip_len() + 64_000);
        for (t, &onset) in ex.targets.iter().zip(&rec.onsets) {
            assert!(t[..onset].iter().all(|&v| v == 0.0));
            assert!(t[onset..].iter().any(|&v| v != 0.0));
        }
    }
}

#[test]
fn splits_use_disjoint_positions_and_utterances() {
    let cfg = DatasetConfig {
        counts: Some(SplitCounts { train: 60, val: 10, test: 10 }),
        ..DatasetConfig::default()
    };
    let ds = Dataset::generate(&cfg).unwrap();
    let used: Vec<_> = Split::ALL.iter().map(|&s| used_positions(&ds.records, s)).collect();
    for r in 0..cfg.regions.len() {
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(used[a][r].is_disjoint(&used[b][r]));
            }
        }
        for (k, split) in Split::ALL.into_iter().enumerate() {
            let allowed: BTreeSet<usize> = ds.bank.indices(r, split).into_iter().collect();
            assert!(used[k][r].is_subset(&allowed));
        }
    }
    let utterances = |split| -> BTreeSet<String> {
        ds.records
            .iter()
            .filter(|x| x.split == split)
            .flat_map(|x| x.utterances.clone())
            .collect()
    };
    let (tr, va, te) = (utterances(Split::Train), utterances(Split::Val), utterances(Split::Test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
}

#[test]
fn default_config_needs_every_bank_response() {
    let cfg = DatasetConfig::default();
    let ds = Dataset::generate(&DatasetConfig {
        counts: Some(SplitCounts { train: 1, val: 1, test: 1 }),
        ..cfg.clone()
    })
    .unwrap();
    let requests = rir_requests(&cfg, &ds.bank);
    assert_eq!(requests.len(), 250 * 6);
    assert_eq!(requests.len() * cfg.array.mic_positions.len(), 4500);
}

#[test]
fn manifest_is_deterministic() {
    let cfg = small(0.05);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&cfg, a.path()).unwrap();
    build_dataset(&cfg, b.path()).unwrap();
    for f in ["manifest.jsonl", "positions.json", "dataset_config.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let reopened = Dataset::open(a.path()).unwrap();
    assert_eq!(reopened.records.len(), 6 + 3 + 9);
    assert!(reopened.records.iter().all(|r| r.samples > 0));
}
