use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use regionsep::acoustics::Point3;
use regionsep::analysis::{
    aggregate_positions, grid_csv, grid_svg, inspect_attention, scatter_csv, scatter_svg, similarity_score,
};
use regionsep::dataset::{
    build_dataset, rir_requests, sample_positions, Dataset, ManifestRecord, RirBank, MANIFEST_FILE,
};
use regionsep::io::{read_jsonl, read_wav, write_atomic, write_json, write_jsonl, write_wav_f32};
use regionsep::separator::{load_checkpoint, separate, ModelParams};
use regionsep::training::{score_estimates, train, Example, MetricsReport};
use regionsep::{Error, Tensor};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{AttentionArgs, Cli, Command, DataSel, EvalArgs, PermArgs, ScatterArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_seed(cli.seed);
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::SimulateRirs => {
            let dir = cli
                .out
                .clone()
                .or_else(|| cfg.dataset.rir_cache.clone())
                .unwrap_or_else(|| PathBuf::from("rir_cache"));
            simulate_rirs(cli, &cfg, &dir)
        }
        Command::SynthDataset => synth_dataset(cli, &cfg, &out("dataset")),
        Command::Train(a) => train_cmd(cli, &cfg, a, &out("run")),
        Command::Evaluate(a) => evaluate_cmd(cli, &cfg, a, &out("eval")),
        Command::AnalyzePermutations(a) => permutations_cmd(cli, &cfg, a, &out("permutations")),
        Command::ScatterSisdri(a) => scatter_cmd(cli, &cfg, a, &out("scatter")),
        Command::InspectAttention(a) => attention_cmd(cli, &cfg, a, &out("attention")),
    }
}

fn simulate_rirs(cli: &Cli, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("simulate-rirs", cfg, cli.seed, cli.deterministic)?;
    let mut data_cfg = cfg.dataset.clone();
    data_cfg.rir_cache = Some(dir.to_path_buf());
    let room = data_cfg.room(data_cfg.t60_grid[0])?;
    let bank = sample_positions(&room, &data_cfg.regions, &data_cfg.positions_per_region, data_cfg.seed)?;
    let wanted = rir_requests(&data_cfg, &bank);
    let per_t60 = wanted.len() / data_cfg.t60_grid.len();
    let (mut total, mut fresh) = (0, 0);
    for (i, chunk) in wanted.chunks(per_t60.max(1)).enumerate() {
        let rirs = RirBank::simulate(&data_cfg, chunk)?;
        total += rirs.len();
        fresh += rirs.simulated;
        eprintln!(
            "T60 {:.3} s: {} responses, {} simulated ({}/{})",
            chunk[0].1,
            rirs.len(),
            rirs.simulated,
            i + 1,
            data_cfg.t60_grid.len()
        );
    }
    println!("{total} responses ({} positions x {} mics x {} T60), {fresh} simulated, {} from cache",
        wanted.len() / data_cfg.t60_grid.len(),
        data_cfg.array.len(),
        data_cfg.t60_grid.len(),
        total - fresh
    );
    manifest.output(dir);
    manifest.finish(dir)
}

fn synth_dataset(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("synth-dataset", cfg, cli.seed, cli.deterministic)?;
    let ds = build_dataset(&cfg.dataset, out)?;
    let audio = ds.records.iter().filter(|r| r.mixture.is_some()).count();
    println!("{} records written to {} ({audio} with audio)", ds.records.len(), out.display());
    for f in [MANIFEST_FILE, regionsep::dataset::CONFIG_FILE, regionsep::dataset::POSITIONS_FILE] {
        manifest.output(out.join(f));
    }
    manifest.finish(out)
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    Dataset::open(path).with_context(|| format!("opening dataset {}", path.display()))
}

fn selected<'a>(ds: &'a Dataset, sel: &DataSel) -> Result<Vec<&'a ManifestRecord>> {
    let mut recs = ds.select(sel.split, sel.variant);
    if let Some(n) = sel.limit {
        recs.truncate(n);
    }
    if recs.is_empty() {
        bail!(Error::Config(format!(
            "dataset {} has no {} {} examples",
            sel.data.display(),
            sel.split,
            sel.variant
        )));
    }
    Ok(recs)
}

fn examples(ds: &Dataset, recs: &[&ManifestRecord]) -> Result<Vec<Example>> {
    let mixes = ds.render(recs)?;
    let reference = ds.config.array.reference_index;
    recs.iter()
        .zip(&mixes)
        .map(|(r, m)| Ok(Example::from_mixture(r, m, reference)?))
        .collect()
}

fn load_model(path: &Path, ds: &Dataset) -> Result<ModelParams> {
    let (params, _) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let (m, r) = (ds.config.array.len(), ds.config.regions.len());
    if params.config.num_mics != m || params.config.num_regions != r {
        bail!(Error::Config(format!(
            "checkpoint expects {} mics and {} regions, data has {m} and {r}",
            params.config.num_mics, params.config.num_regions
        )));
    }
    Ok(params)
}

fn train_cmd(cli: &Cli, cfg: &RunConfig, args: &TrainArgs, out: &Path) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(r) = args.regime {
        cfg.train.regime = r;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.deterministic |= cli.deterministic;
    let ds = open_dataset(&args.data)?;
    let model_cfg = cfg.model_for(&ds.config)?;
    cfg.model = Some(model_cfg.clone());
    let mut manifest = RunManifest::begin("train", &cfg, cli.seed, cli.deterministic)?;
    manifest.input("data", &args.data);

    let params = match &args.init {
        Some(p) => {
            manifest.input("init", p);
            load_model(p, &ds)?
        }
        None => ModelParams::init(&model_cfg, cfg.train.seed)?,
    };
    let mut train_recs = ds.select(regionsep::dataset::Split::Train, regionsep::dataset::Variant::Fc);
    if let Some(n) = args.limit {
        train_recs.truncate(n);
    }
    let val_recs = ds.select(regionsep::dataset::Split::Val, regionsep::dataset::Variant::Fc);
    let train_set = examples(&ds, &train_recs)?;
    let val_set = if val_recs.is_empty() { Vec::new() } else { examples(&ds, &val_recs)? };
    eprintln!(
        "training {} parameters on {} examples ({} validation), regime {}",
        params.count(),
        train_set.len(),
        val_set.len(),
        cfg.train.regime
    );
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    let (_, log) = train(params, &train_set, &val_set, &ds.config.labels(), &cfg.train, Some(out))?;
    for e in &log.epochs {
        eprintln!(
            "epoch {}: train loss {:.3}, val SI-SDRi {}",
            e.epoch,
            e.train_loss,
            e.val_mean_sisdri.map_or("n/a".into(), |v| format!("{v:.3} dB"))
        );
    }
    let log_path = out.join("train_log.jsonl");
    log.write(&log_path)?;
    write_json(&out.join("model_config.json"), &model_cfg)?;
    manifest.output(&log_path);
    manifest.output(out.join("model_config.json"));
    manifest.output(out.join("final.ckpt"));
    if cfg.train.checkpoint_interval > 0 {
        for s in (cfg.train.checkpoint_interval..=log.steps.len()).step_by(cfg.train.checkpoint_interval) {
            manifest.output(out.join(format!("step_{s:07}.ckpt")));
        }
    }
    println!("wrote {}", out.join("final.ckpt").display());
    manifest.finish(out)
}

fn evaluate_cmd(cli: &Cli, cfg: &RunConfig, args: &EvalArgs, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("evaluate", cfg, cli.seed, cli.deterministic)?;
    manifest.input("data", &args.sel.data);
    manifest.input("checkpoint", &args.checkpoint);
    let ds = open_dataset(&args.sel.data)?;
    let params = load_model(&args.checkpoint, &ds)?;
    let recs = selected(&ds, &args.sel)?;
    let exs = examples(&ds, &recs)?;
    let estimates = exs
        .iter()
        .map(|ex| Ok(separate(&params, &ex.mixture)?.estimates))
        .collect::<Result<Vec<_>>>()?;
    let name = args.name.clone().unwrap_or_else(|| {
        args.checkpoint
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned())
    });
    let labels = ds.config.labels();
    let ev = score_estimates(&estimates, &exs, &labels, args.sel.variant.as_str(), &name)?;

    let table = format!("{}\n{}\n", MetricsReport::csv_header(&labels), ev.report.csv_row());
    let files = [
        ("metrics.csv", table),
        ("per_example.csv", ev.per_example_csv()),
        ("census.csv", ev.census.to_table_csv()),
    ];
    for (f, text) in &files {
        write_atomic(&out.join(f), text.as_bytes())?;
        manifest.output(out.join(f));
    }
    write_jsonl(&out.join("eval_log.jsonl"), &ev.per_example)?;
    write_json(&out.join("report.json"), &ev.report)?;
    manifest.output(out.join("eval_log.jsonl"));
    manifest.output(out.join("report.json"));
    if args.save_estimates {
        let dir = out.join("estimates");
        for (ex, est) in exs.iter().zip(&estimates) {
            let rows: Vec<Vec<f64>> = est.rows().map(<[f64]>::to_vec).collect();
            write_wav_f32(&dir.join(format!("{}.wav", ex.id)), &rows, ds.config.sample_rate)?;
        }
        manifest.output(&dir);
    }
    print!("{}", files[0].1);
    println!(
        "majority {} ({} of {} examples)",
        ev.census.majority_label(),
        ev.census.correct,
        ev.census.total
    );
    manifest.finish(out)
}

fn permutations_cmd(cli: &Cli, cfg: &RunConfig, args: &PermArgs, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("analyze-permutations", cfg, cli.seed, cli.deterministic)?;
    manifest.input("data", &args.sel.data);
    manifest.input("estimates", &args.estimates);
    let ds = open_dataset(&args.sel.data)?;
    let recs = selected(&ds, &args.sel)?;
    let exs = examples(&ds, &recs)?;

    let on_disk = std::fs::read_dir(&args.estimates)
        .map_err(|e| Error::Io { path: args.estimates.clone(), source: e })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "wav"))
        .count();
    if on_disk != exs.len() {
        bail!(
            "misaligned sets: {} holds {on_disk} estimates but the selection has {} examples",
            args.estimates.display(),
            exs.len()
        );
    }
    let mut estimates = Vec::with_capacity(exs.len());
    for ex in &exs {
        let path = args.estimates.join(format!("{}.wav", ex.id));
        if !path.exists() {
            bail!("misaligned sets: no estimate {} for example {}", path.display(), ex.id);
        }
        let wav = read_wav(&path)?;
        let est = Tensor::from_rows(&wav.channels)?;
        if est.shape() != ex.targets.shape() {
            bail!(
                "misaligned sets: estimate {} has shape {:?}, targets have {:?}",
                path.display(),
                est.shape(),
                ex.targets.shape()
            );
        }
        estimates.push(est);
    }
    let ev = score_estimates(&estimates, &exs, &ds.config.labels(), args.sel.variant.as_str(), "")?;
    let csv = ev.census.to_table_csv();
    write_atomic(&out.join("permutations.csv"), csv.as_bytes())?;
    write_json(&out.join("census.json"), &ev.census)?;
    manifest.output(out.join("permutations.csv"));
    manifest.output(out.join("census.json"));
    print!("{csv}");
    manifest.finish(out)
}

fn scatter_cmd(cli: &Cli, cfg: &RunConfig, args: &ScatterArgs, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("scatter-sisdri", cfg, cli.seed, cli.deterministic)?;
    manifest.input("eval_log", &args.eval_log);
    if !args.eval_log.exists() {
        bail!(Error::Missing(format!("evaluation log {}", args.eval_log.display())));
    }
    let log = read_jsonl(&args.eval_log)?;
    let points = aggregate_positions(&log)?;
    write_atomic(&out.join("scatter.csv"), scatter_csv(&points).as_bytes())?;
    manifest.output(out.join("scatter.csv"));
    if args.svg {
        let dims: Point3 = cfg.dataset.room_dimensions;
        write_atomic(&out.join("scatter.svg"), scatter_svg(&points, [dims[0], dims[1]]).as_bytes())?;
        manifest.output(out.join("scatter.svg"));
    }
    let lo = points.iter().map(|p| p.mean_sisdri).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.mean_sisdri).fold(f64::NEG_INFINITY, f64::max);
    println!("{} positions, mean SI-SDRi {lo:.2} to {hi:.2} dB", points.len());
    manifest.finish(out)
}

fn attention_cmd(cli: &Cli, cfg: &RunConfig, args: &AttentionArgs, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("inspect-attention", cfg, cli.seed, cli.deterministic)?;
    manifest.input("data", &args.sel.data);
    manifest.input("checkpoint", &args.checkpoint);
    let ds = open_dataset(&args.sel.data)?;
    let params = load_model(&args.checkpoint, &ds)?;
    let recs = selected(&ds, &args.sel)?;
    let labels = ds.config.labels();

    let probe: Vec<Example> = if args.isolate {
        let mixes = ds.render(&recs)?;
        let reference = ds.config.array.reference_index;
        let mut out = Vec::new();
        for (rec, mix) in recs.iter().zip(&mixes) {
            for r in (0..labels.len()).filter(|&r| rec.active[r]) {
                let mut targets = vec![vec![0.0; mix.len()]; labels.len()];
                targets[r] = mix.targets[r].clone();
                out.push(Example {
                    id: format!("{}-{}", rec.id(), labels[r]),
                    mixture: Tensor::from_rows(&mix.images[r])?,
                    targets: Tensor::from_rows(&targets)?,
                    reference,
                    active: (0..labels.len()).map(|k| k == r).collect(),
                    positions: rec.positions.clone(),
                });
            }
        }
        out
    } else {
        if let Some(rec) = recs.iter().find(|r| r.active_count() != 1) {
            bail!(Error::Config(format!(
                "example {} has {} active regions; attention probes need single-talker examples \
                 (generate them with dataset.active_regions, or pass --isolate)",
                rec.id(),
                rec.active_count()
            )));
        }
        examples(&ds, &recs)?
    };
    let grids = inspect_attention(&params, &probe, &labels, args.block, args.examples)?;
    for g in &grids {
        for (h, grid) in g.heads.iter().enumerate() {
            let stem = format!("attention_{}_block{}_head{h}", g.region, g.block);
            write_atomic(&out.join(format!("{stem}.csv")), grid_csv(grid).as_bytes())?;
            let title = format!("region {} block {} head {h} ({} examples)", g.region, g.block, g.examples);
            write_atomic(&out.join(format!("{stem}.svg")), grid_svg(grid, &title).as_bytes())?;
            manifest.output(out.join(format!("{stem}.csv")));
            manifest.output(out.join(format!("{stem}.svg")));
        }
    }
    let similarity = similarity_score(&grids);
    write_json(
        &out.join("attention.json"),
        &serde_json::json!({ "similarity": similarity, "regions": grids }),
    )?;
    manifest.output(out.join("attention.json"));
    println!(
        "{} regions, {} heads each, cross-region similarity {similarity:.4}",
        grids.len(),
        grids.first().map_or(0, |g| g.heads.len())
    );
    manifest.finish(out)
}
