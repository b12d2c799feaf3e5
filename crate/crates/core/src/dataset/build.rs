use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mixing::{fft_convolve_many, normalize_dbfs, white_noise_at_snr, MixtureExample, Variant};
use super::regions::{car_cabin_regions, sample_positions, PositionBank, RegionSpec, Split, CAR_CABIN_COUNTS};
use super::speech::{
    generate_speechlike, ingest_speech, parse_synthetic_id, scan_wavs, synthetic_id, SpeechConfig, Utterance,
};
use crate::acoustics::{simulate_rir_with_beta, ArraySpec, ImageOrder, Point3, Rir, RirCache, RoomSpec, WallModel};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl, write_wav_f32};
use crate::rng::{derive_seed, seeded};

const STREAM_UTTERANCE: u64 = 0x7574;
const STREAM_EXAMPLE: u64 = 0x6578;
const STREAM_NOISE: u64 = 0x6e6f;
const STREAM_WAV_ORDER: u64 = 0x776f;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "dataset_config.json";
pub const POSITIONS_FILE: &str = "positions.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

impl Profile {
    pub fn counts(self) -> SplitCounts {
        match self {
            Profile::Desk => SplitCounts {
                train: 600,
                val: 100,
                test: 100,
            },
            Profile::Full => SplitCounts {
                train: 9300,
                val: 3000,
                test: 3000,
            },
        }
    }
}

fn default_seed() -> u64 {
    0
}
fn cabin_dims() -> Point3 {
    [3.0, 2.0, 1.5]
}
fn cabin_counts() -> Vec<usize> {
    CAR_CABIN_COUNTS.to_vec()
}
fn t60_grid() -> Vec<f64> {
    vec![0.05, 0.06, 0.07, 0.08, 0.09, 0.10]
}
fn sixteen_k() -> u32 {
    16_000
}
fn four() -> f64 {
    4.0
}
fn two() -> f64 {
    2.0
}
fn levels() -> [f64; 2] {
    [-25.0, -20.0]
}
fn snrs() -> [f64; 2] {
    [20.0, 30.0]
}
fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

/// Generator settings, read from TOML. Every field has a default that
/// reproduces the car-cabin scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub profile: Profile,
    /// Overrides the profile's example counts.
    #[serde(default)]
    pub counts: Option<SplitCounts>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "cabin_dims")]
    pub room_dimensions: Point3,
    #[serde(default)]
    pub wall_model: WallModel,
    #[serde(default = "ArraySpec::car_cabin")]
    pub array: ArraySpec,
    /// In canonical output order.
    #[serde(default = "car_cabin_regions")]
    pub regions: Vec<RegionSpec>,
    #[serde(default = "cabin_counts")]
    pub positions_per_region: Vec<usize>,
    #[serde(default = "t60_grid")]
    pub t60_grid: Vec<f64>,
    #[serde(default = "sixteen_k")]
    pub sample_rate: u32,
    #[serde(default = "four")]
    pub clip_seconds: f64,
    #[serde(default = "two")]
    pub onset_spacing_seconds: f64,
    #[serde(default = "levels")]
    pub level_dbfs: [f64; 2],
    #[serde(default = "snrs")]
    pub snr_db: [f64; 2],
    #[serde(default)]
    pub speech: SpeechConfig,
    #[serde(default = "all_variants")]
    pub test_variants: Vec<Variant>,
    /// Labels of the regions that hold a talker; all of them when absent.
    #[serde(default)]
    pub active_regions: Option<Vec<String>>,
    #[serde(default)]
    pub write_audio: bool,
    #[serde(default)]
    pub rir_cache: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl DatasetConfig {
    pub fn desk() -> Self {
        Self::default()
    }

    pub fn full() -> Self {
        DatasetConfig {
            profile: Profile::Full,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn split_counts(&self) -> SplitCounts {
        self.counts.unwrap_or_else(|| self.profile.counts())
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn onset_spacing(&self) -> usize {
        (self.onset_spacing_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn room(&self, t60: f64) -> Result<RoomSpec> {
        let mut room = RoomSpec::new(self.room_dimensions, t60)?.with_wall_model(self.wall_model);
        room.sample_rate = self.sample_rate as f64;
        Ok(room)
    }

    pub fn labels(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.label.clone()).collect()
    }

    pub fn active_mask(&self) -> Vec<bool> {
        match &self.active_regions {
            None => vec![true; self.regions.len()],
            Some(active) => self.regions.iter().map(|r| active.contains(&r.label)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::Config("at least one region is required".into()));
        }
        if self.positions_per_region.len() != self.regions.len() {
            return Err(Error::Config(format!(
                "positions_per_region has {} entries for {} regions",
                self.positions_per_region.len(),
                self.regions.len()
            )));
        }
        if self.t60_grid.is_empty() || self.t60_grid.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("t60_grid must hold positive values".into()));
        }
        let room = self.room(self.t60_grid[0])?;
        self.array.validate(&room)?;
        for r in &self.regions {
            r.validate(&room)?;
        }
        if !(self.clip_seconds > 0.0) || self.clip_len() == 0 {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        if self.level_dbfs[0] > self.level_dbfs[1] || self.snr_db[0] > self.snr_db[1] {
            return Err(Error::Config("level and SNR ranges must be [low, high]".into()));
        }
        if let Some(active) = &self.active_regions {
            let labels = self.labels();
            if let Some(bad) = active.iter().find(|a| !labels.contains(a)) {
                return Err(Error::Config(format!("active region {bad:?} is not one of {labels:?}")));
            }
            if active.is_empty() {
                return Err(Error::Config("active_regions must not be empty".into()));
            }
        }
        if let SpeechConfig::Synthetic { bands } = &self.speech {
            if bands.len() > self.regions.len() {
                return Err(Error::Config("more speech bands than regions".into()));
            }
        }
        if let SpeechConfig::WavDir { max_uses: 0, .. } = self.speech {
            return Err(Error::Config("max_uses must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the manifest: everything needed to re-render the example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub split: Split,
    pub index: usize,
    pub variant: Variant,
    pub seed: u64,
    pub t60: f64,
    pub regions: Vec<String>,
    /// Index into the position bank, per region.
    pub position_indices: Vec<usize>,
    pub positions: Vec<Point3>,
    pub active: Vec<bool>,
    /// Empty for inactive regions.
    pub utterances: Vec<String>,
    pub levels_dbfs: Vec<f64>,
    pub snr_db: Option<f64>,
    /// Start sample of each region's source.
    pub onsets: Vec<usize>,
    pub samples: usize,
    pub mixture: Option<String>,
    pub targets: Option<String>,
}

impl ManifestRecord {
    pub fn id(&self) -> String {
        format!("{}-{:05}-{}", self.split, self.index, self.variant)
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Allocates utterance ids to `(split, example, region)` slots.
fn allocate_utterances(config: &DatasetConfig) -> Result<HashMap<Split, Vec<Vec<String>>>> {
    let counts = config.split_counts();
    let active = config.active_mask();
    let per_example = active.iter().filter(|&&a| a).count();
    let mut out = HashMap::new();
    match &config.speech {
        SpeechConfig::Synthetic { .. } => {
            for split in Split::ALL {
                let ids = (0..counts.get(split))
                    .map(|i| {
                        (0..config.regions.len())
                            .map(|r| {
                                if active[r] {
                                    synthetic_id(derive_seed(
                                        config.seed,
                                        &[STREAM_UTTERANCE, split.tag(), i as u64, r as u64],
                                    ))
                                } else {
                                    String::new()
                                }
                            })
                            .collect()
                    })
                    .collect();
                out.insert(split, ids);
            }
        }
        SpeechConfig::WavDir { path, max_uses } => {
            let files = scan_wavs(path)?;
            let needed: Vec<usize> = Split::ALL.iter().map(|&s| counts.get(s) * per_example).collect();
            let total_needed: usize = needed.iter().sum();
            // Contiguous slices proportional to demand keep the splits' talkers disjoint.
            let mut start = 0;
            for (k, split) in Split::ALL.into_iter().enumerate() {
                let size = if k == 2 {
                    files.len() - start
                } else if total_needed == 0 {
                    0
                } else {
                    files.len() * needed[k] / total_needed
                };
                let slice = &files[start..start + size];
                start += size;
                let need_files = needed[k].div_ceil(*max_uses).max(if needed[k] > 0 { per_example } else { 0 });
                if slice.len() < need_files {
                    return Err(Error::InsufficientUtterances {
                        split: split.to_string(),
                        needed: need_files,
                        available: slice.len(),
                    });
                }
                let mut order: Vec<&PathBuf> = slice.iter().collect();
                order.shuffle(&mut seeded(derive_seed(config.seed, &[STREAM_WAV_ORDER, split.tag()])));
                let mut cursor = 0;
                let ids = (0..counts.get(split))
                    .map(|_| {
                        (0..config.regions.len())
                            .map(|r| {
                                if !active[r] {
                                    return String::new();
                                }
                                let p = order[cursor % order.len()];
                                cursor += 1;
                                p.strip_prefix(path).unwrap_or(p).to_string_lossy().into_owned()
                            })
                            .collect()
                    })
                    .collect();
                out.insert(split, ids);
            }
        }
    }
    Ok(out)
}

/// Draws every example's parameters; no audio is produced.
pub fn draw_records(config: &DatasetConfig, bank: &PositionBank) -> Result<Vec<ManifestRecord>> {
    config.validate()?;
    let counts = config.split_counts();
    let utterances = allocate_utterances(config)?;
    let active = config.active_mask();
    let labels = config.labels();
    let r_count = config.regions.len();
    let spacing = config.onset_spacing();
    let mut records = Vec::new();
    for split in Split::ALL {
        let candidates: Vec<Vec<usize>> = (0..r_count).map(|r| bank.indices(r, split)).collect();
        if let Some(r) = (0..r_count).find(|&r| candidates[r].is_empty() && counts.get(split) > 0) {
            return Err(Error::Config(format!("region {} has no {split} positions", labels[r])));
        }
        let variants: Vec<Variant> = match split {
            Split::Test => config.test_variants.clone(),
            _ => vec![Variant::Fc],
        };
        for i in 0..counts.get(split) {
            let seed = derive_seed(config.seed, &[STREAM_EXAMPLE, split.tag(), i as u64]);
            let mut rng = seeded(seed);
            let t60 = config.t60_grid[rng.random_range(0..config.t60_grid.len())];
            let position_indices: Vec<usize> = candidates
                .iter()
                .map(|c| c[rng.random_range(0..c.len())])
                .collect();
            let levels_dbfs: Vec<f64> = (0..r_count)
                .map(|_| rng.random_range(config.level_dbfs[0]..=config.level_dbfs[1]))
                .collect();
            let snr = rng.random_range(config.snr_db[0]..=config.snr_db[1]);
            let mut order: Vec<usize> = (0..r_count).collect();
            order.shuffle(&mut rng);
            let mut staggered = vec![0; r_count];
            for (rank, &r) in order.iter().enumerate() {
                staggered[r] = rank * spacing;
            }
            for &variant in &variants {
                records.push(ManifestRecord {
                    split,
                    index: i,
                    variant,
                    seed,
                    t60,
                    regions: labels.clone(),
                    positions: position_indices
                        .iter()
                        .enumerate()
                        .map(|(r, &p)| bank.point(r, p))
                        .collect(),
                    position_indices: position_indices.clone(),
                    active: active.clone(),
                    utterances: utterances[&split][i].clone(),
                    levels_dbfs: levels_dbfs.clone(),
                    snr_db: (variant == Variant::Wn).then_some(snr),
                    onsets: if variant == Variant::Po {
                        staggered.clone()
                    } else {
                        vec![0; r_count]
                    },
                    samples: 0,
                    mixture: None,
                    targets: None,
                });
            }
        }
    }
    Ok(records)
}

type RirKey = [u64; 4];

fn rir_key(position: Point3, t60: f64) -> RirKey {
    [position[0].to_bits(), position[1].to_bits(), position[2].to_bits(), t60.to_bits()]
}

/// Array responses for every (position, T60) pair a set of records uses.
///
/// Samples are rounded through `f32`, so results are identical with or
/// without an on-disk cache.
#[derive(Debug, Default)]
pub struct RirBank {
    table: HashMap<RirKey, Arc<Vec<Rir>>>,
    /// Responses simulated rather than loaded from the cache.
    pub simulated: usize,
}

impl RirBank {
    pub fn prepare(config: &DatasetConfig, records: &[ManifestRecord]) -> Result<Self> {
        let mut wanted: Vec<(Point3, f64)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rec in records {
            for (r, &p) in rec.positions.iter().enumerate() {
                if rec.active[r] && seen.insert(rir_key(p, rec.t60)) {
                    wanted.push((p, rec.t60));
                }
            }
        }
        Self::simulate(config, &wanted)
    }

    pub fn simulate(config: &DatasetConfig, wanted: &[(Point3, f64)]) -> Result<Self> {
        let mut t60s: Vec<f64> = wanted.iter().map(|w| w.1).collect();
        t60s.sort_by(f64::total_cmp);
        t60s.dedup();
        let betas: HashMap<u64, f64> = t60s
            .par_iter()
            .map(|&t| Ok((t.to_bits(), config.room(t)?.wall_beta()?)))
            .collect::<Result<_>>()?;
        let cache = config.rir_cache.as_ref().map(RirCache::open).transpose()?;
        let results: Vec<(RirKey, Vec<Rir>, usize)> = wanted
            .par_iter()
            .map(|&(p, t60)| {
                let room = config.room(t60)?;
                let mut fresh = 0;
                let rirs = config
                    .array
                    .mic_positions
                    .iter()
                    .map(|&mic| {
                        if let Some(c) = &cache {
                            let (rir, simulated) = c.get_or_simulate(&room, p, mic)?;
                            fresh += simulated as usize;
                            return Ok(rir);
                        }
                        fresh += 1;
                        let mut rir = simulate_rir_with_beta(&room, betas[&t60.to_bits()], p, mic, ImageOrder::Auto)?;
                        rir.samples.iter_mut().for_each(|v| *v = *v as f32 as f64);
                        Ok(rir)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((rir_key(p, t60), rirs, fresh))
            })
            .collect::<Result<_>>()?;
        let mut bank = RirBank::default();
        for (k, rirs, fresh) in results {
            bank.simulated += fresh;
            bank.table.insert(k, Arc::new(rirs));
        }
        Ok(bank)
    }

    pub fn get(&self, position: Point3, t60: f64) -> Result<Arc<Vec<Rir>>> {
        self.table
            .get(&rir_key(position, t60))
            .cloned()
            .ok_or_else(|| Error::Missing(format!("impulse responses for {position:?} at T60 {t60}")))
    }

    pub fn len(&self) -> usize {
        self.table.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

fn load_utterance(config: &DatasetConfig, id: &str, region: usize) -> Result<Utterance> {
    match &config.speech {
        SpeechConfig::Synthetic { bands } => {
            let seed = parse_synthetic_id(id).ok_or_else(|| Error::Missing(format!("synthetic utterance {id:?}")))?;
            let band = bands.get(region).copied().flatten().map(|[lo, hi]| (lo, hi));
            Ok(Utterance {
                id: id.to_string(),
                samples: generate_speechlike(seed, config.clip_len(), config.sample_rate as f64, band),
            })
        }
        SpeechConfig::WavDir { path, .. } => {
            let mut u = ingest_speech(&path.join(id), config.sample_rate)?;
            u.id = id.to_string();
            Ok(u)
        }
    }
}

/// Renders one example from its record.
pub fn render_example(config: &DatasetConfig, rirs: &RirBank, record: &ManifestRecord) -> Result<MixtureExample> {
    let r_count = record.regions.len();
    let m_count = config.array.len();
    let reference = config.array.reference_index;
    let mut sources: Vec<Option<Vec<f64>>> = Vec::with_capacity(r_count);
    for r in 0..r_count {
        if !record.active[r] {
            sources.push(None);
            continue;
        }
        let utt = load_utterance(config, &record.utterances[r], r)?;
        sources.push(Some(normalize_dbfs(&utt.samples, record.levels_dbfs[r])?));
    }
    let shortest = sources
        .iter()
        .flatten()
        .map(Vec::len)
        .min()
        .ok_or_else(|| Error::Config("example has no active region".into()))?;

    let mut images: Vec<Option<Vec<Vec<f64>>>> = Vec::with_capacity(r_count);
    let mut full_len = usize::MAX;
    for (r, src) in sources.iter().enumerate() {
        let Some(src) = src else {
            images.push(None);
            continue;
        };
        let responses = rirs.get(record.positions[r], record.t60)?;
        let filters: Vec<&[f64]> = responses.iter().map(|h| h.samples.as_slice()).collect();
        let per_mic = fft_convolve_many(&src[..shortest], &filters);
        full_len = full_len.min(per_mic.iter().map(Vec::len).min().unwrap_or(0));
        images.push(Some(per_mic));
    }
    let base = full_len.min(config.clip_len());
    let extra = record.onsets.iter().copied().max().unwrap_or(0);
    let t = base + extra;

    let mut placed = vec![vec![vec![0.0; t]; m_count]; r_count];
    for (r, img) in images.iter().enumerate() {
        if let Some(img) = img {
            let start = record.onsets[r];
            for (dst, src) in placed[r].iter_mut().zip(img) {
                dst[start..start + base].copy_from_slice(&src[..base]);
            }
        }
    }
    let mut example = MixtureExample {
        mics: vec![vec![0.0; t]; m_count],
        targets: placed.iter().map(|per_mic| per_mic[reference].clone()).collect(),
        images: placed,
        noise: None,
    };
    example.mics = example.clean();
    if let Some(snr) = record.snr_db {
        let mut rng = seeded(derive_seed(record.seed, &[STREAM_NOISE]));
        let noise = white_noise_at_snr(&example.mics, snr, &mut rng);
        for (y, n) in example.mics.iter_mut().zip(&noise) {
            for (a, b) in y.iter_mut().zip(n) {
                *a += b;
            }
        }
        example.noise = Some(noise);
    }
    Ok(example)
}

/// Position bank, generator settings and example records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub bank: PositionBank,
    pub records: Vec<ManifestRecord>,
    pub root: Option<PathBuf>,
}

impl Dataset {
    /// Samples positions and draws records without rendering audio.
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let room = config.room(config.t60_grid[0])?;
        let bank = sample_positions(&room, &config.regions, &config.positions_per_region, config.seed)?;
        let records = draw_records(config, &bank)?;
        Ok(Dataset {
            config: config.clone(),
            bank,
            records,
            root: None,
        })
    }

    /// Reads a dataset directory written by [`build_dataset`].
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST_FILE);
        if !manifest.exists() {
            return Err(Error::Missing(format!("manifest {}", manifest.display())));
        }
        Ok(Dataset {
            config: read_json(&dir.join(CONFIG_FILE))?,
            bank: read_json(&dir.join(POSITIONS_FILE))?,
            records: read_jsonl(&manifest)?,
            root: Some(dir.to_path_buf()),
        })
    }

    pub fn select(&self, split: Split, variant: Variant) -> Vec<&ManifestRecord> {
        self.records
            .iter()
            .filter(|r| r.split == split && r.variant == variant)
            .collect()
    }

    pub fn rir_bank(&self, records: &[&ManifestRecord]) -> Result<RirBank> {
        let owned: Vec<ManifestRecord> = records.iter().map(|r| (*r).clone()).collect();
        RirBank::prepare(&self.config, &owned)
    }

    /// Renders the given records in order.
    pub fn render(&self, records: &[&ManifestRecord]) -> Result<Vec<MixtureExample>> {
        let rirs = self.rir_bank(records)?;
        records
            .par_iter()
            .map(|r| render_example(&self.config, &rirs, r))
            .collect()
    }
}

/// Generates, renders and writes a dataset to `out`: the manifest, the
/// position bank, the generator config and (optionally) WAV files.
pub fn build_dataset(config: &DatasetConfig, out: &Path) -> Result<Dataset> {
    let mut ds = Dataset::generate(config)?;
    let rirs = RirBank::prepare(config, &ds.records)?;
    let rendered: Vec<(usize, Option<String>, Option<String>)> = ds
        .records
        .par_iter()
        .map(|rec| {
            let ex = render_example(config, &rirs, rec)?;
            if !config.write_audio {
                return Ok((ex.len(), None, None));
            }
            let rel = format!("audio/{}/{}/{:05}", rec.split, rec.variant, rec.index);
            let (mix, tgt) = (format!("{rel}_mix.wav"), format!("{rel}_targets.wav"));
            write_wav_f32(&out.join(&mix), &ex.mics, config.sample_rate)?;
            write_wav_f32(&out.join(&tgt), &ex.targets, config.sample_rate)?;
            Ok((ex.len(), Some(mix), Some(tgt)))
        })
        .collect::<Result<_>>()?;
    for (rec, (len, mix, tgt)) in ds.records.iter_mut().zip(rendered) {
        rec.samples = len;
        rec.mixture = mix;
        rec.targets = tgt;
    }
    write_json(&out.join(CONFIG_FILE), config)?;
    write_json(&out.join(POSITIONS_FILE), &ds.bank)?;
    write_jsonl(&out.join(MANIFEST_FILE), &ds.records)?;
    ds.root = Some(out.to_path_buf());
    Ok(ds)
}

/// Every (position, T60) pair of the bank: the full set of array responses
/// a dataset built from `config` can draw on.
pub fn rir_requests(config: &DatasetConfig, bank: &PositionBank) -> Vec<(Point3, f64)> {
    config
        .t60_grid
        .iter()
        .flat_map(|&t| bank.points.iter().flatten().map(move |p| (p.point, t)))
        .collect()
}

/// Position indices of `split` used anywhere in `records`, per region.
pub fn used_positions(records: &[ManifestRecord], split: Split) -> Vec<std::collections::BTreeSet<usize>> {
    let r = records.first().map_or(0, |x| x.regions.len());
    let mut out = vec![std::collections::BTreeSet::new(); r];
    for rec in records.iter().filter(|x| x.split == split) {
        for (k, &p) in rec.position_indices.iter().enumerate() {
            out[k].insert(p);
        }
    }
    out
}
