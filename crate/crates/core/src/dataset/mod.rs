//! Region-constrained mixtures: positions, source signals, mixing and the
//! manifest of a generated dataset.

mod build;
mod mixing;
mod regions;
mod speech;

pub use build::{
    build_dataset, draw_records, render_example, rir_requests, used_positions, Dataset, DatasetConfig, ManifestRecord, Profile,
    RirBank, SplitCounts, CONFIG_FILE, MANIFEST_FILE, POSITIONS_FILE,
};
pub use mixing::{
    fft_convolve, fft_convolve_many, measured_snr, normalize_dbfs, white_noise_at_snr, MixtureExample, Variant,
};
pub use regions::{
    car_cabin_regions, sample_positions, split_sizes, PositionBank, RegionSpec, Split, TaggedPoint,
    CAR_CABIN_COUNTS,
};
pub use speech::{
    bandpass, generate_speechlike, ingest_speech, parse_synthetic_id, rms, scan_wavs, spectral_flatness,
    synthetic_id, SpeechConfig, Utterance,
};
