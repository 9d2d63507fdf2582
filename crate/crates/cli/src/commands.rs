use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitfield::cv::metrics::TABLE3_HEADER;
use vitfield::cv::run::{fig10_row, report_json, FIG10_HEADER, N_FOLDS};
use vitfield::cv::{evaluate, run_cross_validation, train_model, CvRequest, Epoch, TrainConfig};
use vitfield::data::imageops::resize;
use vitfield::data::synth::{generate_synthetic, write_dataset};
use vitfield::data::voc::crop_annotations;
use vitfield::data::{
    balance_minority, load_folder_dataset, read_image, write_image, AugmentPolicy, DatasetIndex, Label, LabeledPatch,
};
use vitfield::model::{predict, Architecture, CnnConfig, Model, ModelKind, ViTConfig};
use vitfield::viz::{
    capture_attention, heatmap_file_name, layer_attention_map, render_heatmap, rollout, write_heatmap, Layout, Upsample,
};

use crate::config::{fraction, Settings, DEFAULT_SEED};
use crate::{AttentionArgs, CliError, CrossvalArgs, EvaluateArgs, GenDataArgs, Hyper, IngestArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

/// Creates `dir`, refusing a non-empty one unless `force` is set.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = std::fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --force to write into it)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(io(dir))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(io(path))
}

fn seed_default() -> String {
    DEFAULT_SEED.to_string()
}

fn epoch_line(tag: &str, e: &Epoch) {
    eprintln!(
        "[{tag}] epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_f1 {:.4}  lr {:.2e}",
        e.epoch, e.train_loss, e.val_loss, e.val_f1, e.lr
    );
}

/// Resizes any patch whose shape differs from the model input.
fn fit_patches(index: DatasetIndex, shape: [usize; 3]) -> DatasetIndex {
    let mut out = DatasetIndex::new();
    out.skipped = index.skipped.clone();
    for mut p in index.iter().cloned() {
        if p.pixels.shape() != shape {
            p.pixels = resize(&p.pixels, shape[0], shape[1]);
        }
        out.push(p);
    }
    out
}

fn load_dataset(root: &Path, shape: [usize; 3]) -> Result<DatasetIndex> {
    let index = load_folder_dataset(root)?;
    for s in &index.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    if index.is_empty() {
        return Err(CliError::Usage(format!("no images found under {}", root.display())));
    }
    Ok(fit_patches(index, shape))
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut s = Settings::new(
        "gen-data",
        &[
            ("per_class", "200".into()),
            ("seed", seed_default()),
            ("out", String::new()),
        ],
    )
    .seed_from_env()?
    .file(a.config.as_deref())?;
    s.flag("per_class", a.per_class);
    s.flag("seed", a.seed);
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    let per_class: usize = s.get("per_class")?;
    let seed: u64 = s.get("seed")?;
    let out = s.path("out")?;
    if per_class == 0 {
        return Err(CliError::Usage("--per-class must be at least 1".into()));
    }
    prepare_out(&out, a.force)?;
    let index = generate_synthetic(per_class, seed);
    write_dataset(&index, &out, seed)?;
    write(&out.join("run_config.txt"), &s.render())?;
    println!(
        "wrote {} images ({per_class} per class) to {}",
        index.len(),
        out.display()
    );
    Ok(())
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let mut s = Settings::new(
        "ingest",
        &[
            ("images", String::new()),
            ("annotations", String::new()),
            ("out", String::new()),
            ("balance", "0".into()),
        ],
    )
    .file(a.config.as_deref())?;
    s.flag("images", a.images.as_ref().map(|p| p.display()));
    s.flag("annotations", a.annotations.as_ref().map(|p| p.display()));
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    s.flag("balance", a.balance);
    let images = s.path("images")?;
    let annotations = match s.raw("annotations") {
        "" => images.clone(),
        p => PathBuf::from(p),
    };
    let out = s.path("out")?;
    let balance: usize = s.get("balance")?;

    let mut files: Vec<PathBuf> = std::fs::read_dir(&images)
        .map_err(io(&images))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            matches!(ext.as_deref(), Some("png" | "ppm"))
        })
        .collect();
    files.sort();
    let mut index = DatasetIndex::new();
    let (mut clamped, mut rejected, mut unannotated) = (0, 0, 0);
    for image in &files {
        let stem = image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let xml = annotations.join(format!("{stem}.xml"));
        if !xml.is_file() {
            unannotated += 1;
            continue;
        }
        let crops = crop_annotations(image, &xml)?;
        clamped += crops.clamped.len();
        for r in &crops.rejected {
            eprintln!("{}: object {} rejected: {}", xml.display(), r.object, r.reason);
        }
        rejected += crops.rejected.len();
        for p in crops.patches {
            index.push(p);
        }
    }
    if index.is_empty() {
        return Err(CliError::Usage(format!(
            "no annotated objects found under {}",
            images.display()
        )));
    }
    if balance > 0 {
        index = balance_minority(&index, balance)?;
    }
    prepare_out(&out, a.force)?;
    for label in Label::ALL {
        let dir = out.join(label.name());
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        for p in index.class(label) {
            let mut name = p.source_id.replace('#', "_");
            if let Some(d) = p.derivation {
                name = format!("{name}_{}", d.name());
            }
            write_image(&dir.join(format!("{name}.png")), &p.pixels)?;
        }
    }
    write(&out.join("run_config.txt"), &s.render())?;
    for (label, n) in Label::ALL.iter().zip(index.counts()) {
        println!("{:<14} {n}", label.name());
    }
    println!(
        "images {}  unannotated {unannotated}  clamped {clamped}  rejected {rejected}",
        files.len()
    );
    Ok(())
}

fn hyper_defaults() -> Vec<(&'static str, String)> {
    let t = TrainConfig::default();
    let v = ViTConfig::default();
    vec![
        ("lr", t.initial_lr.to_string()),
        ("factor", t.lr_reduce_factor.to_string()),
        ("lr_patience", t.lr_patience.to_string()),
        ("batch", t.batch_size.to_string()),
        ("epochs", t.max_epochs.to_string()),
        ("patience", t.early_stop_patience.to_string()),
        ("augment", "on".into()),
        ("seed", seed_default()),
        ("patch_size", "auto".into()),
        ("d_model", v.d_model.to_string()),
        ("depth", v.depth.to_string()),
        ("heads", v.heads.to_string()),
        ("mlp_dim", v.mlp_dim.to_string()),
        ("dropout", v.dropout.to_string()),
        ("cnn_widths", "8,16,32".into()),
    ]
}

fn apply_hyper(s: &mut Settings, h: &Hyper) {
    s.flag("lr", h.lr);
    s.flag("factor", h.factor);
    s.flag("lr_patience", h.lr_patience);
    s.flag("batch", h.batch);
    s.flag("epochs", h.epochs);
    s.flag("patience", h.patience);
    s.flag("augment", h.augment.as_ref());
    s.flag("seed", h.seed);
    s.flag("patch_size", h.patch_size);
    s.flag("d_model", h.d_model);
    s.flag("depth", h.depth);
    s.flag("heads", h.heads);
    s.flag("mlp_dim", h.mlp_dim);
    s.flag("dropout", h.dropout);
    s.flag("cnn_widths", h.cnn_widths.as_ref());
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let augment = match s.raw("augment") {
        "on" => AugmentPolicy::default(),
        "off" => AugmentPolicy::identity(),
        other => {
            return Err(CliError::Usage(format!(
                "--augment must be `on` or `off`, not `{other}`"
            )))
        }
    };
    let cfg = TrainConfig {
        initial_lr: s.get("lr")?,
        lr_reduce_factor: s.get("factor")?,
        lr_patience: s.get("lr_patience")?,
        batch_size: s.get("batch")?,
        max_epochs: s.get("epochs")?,
        early_stop_patience: s.get("patience")?,
        seed: s.get("seed")?,
        augment,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn architecture(s: &Settings, kind: ModelKind) -> Result<Architecture> {
    let arch = match kind.default_vit() {
        Some(base) => Architecture::Vit(ViTConfig {
            patch_size: match s.raw("patch_size") {
                "auto" => base.patch_size,
                _ => s.get("patch_size")?,
            },
            d_model: s.get("d_model")?,
            depth: s.get("depth")?,
            heads: s.get("heads")?,
            mlp_dim: s.get("mlp_dim")?,
            dropout: s.get("dropout")?,
            ..base
        }),
        None => {
            let widths: Vec<usize> = s.list("cnn_widths")?;
            Architecture::Cnn(CnnConfig {
                pool: vec![true; widths.len()],
                widths,
                ..CnnConfig::default()
            })
        }
    };
    arch.validate()?;
    Ok(arch)
}

fn model_kinds(s: &Settings) -> Result<Vec<ModelKind>> {
    s.raw("model")
        .split(',')
        .map(|m| m.trim().parse::<ModelKind>().map_err(CliError::Usage))
        .collect()
}

/// Stratified hold-out: the first `round(fraction·n)` of each shuffled class
/// (at least one, at most n − 1) go to validation.
fn holdout(index: &DatasetIndex, fraction: f64, seed: u64) -> Result<(Vec<&LabeledPatch>, Vec<&LabeledPatch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for label in Label::ALL {
        let members = index.class(label);
        if members.len() < 2 {
            return Err(CliError::Usage(format!(
                "class {label} has {} images; at least 2 are needed for a hold-out split",
                members.len()
            )));
        }
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.shuffle(&mut rng);
        let n_val = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        for (i, &j) in order.iter().enumerate() {
            if i < n_val { &mut val } else { &mut train }.push(&members[j]);
        }
    }
    Ok((train, val))
}

fn history_csv(history: &[Epoch]) -> String {
    std::iter::once(Epoch::CSV_HEADER.to_string())
        .chain(history.iter().map(Epoch::csv_row))
        .collect()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut defaults = vec![
        ("data", String::new()),
        ("model", "vit16".to_string()),
        ("test_fraction", "1/6".into()),
        ("out", String::new()),
    ];
    defaults.extend(hyper_defaults());
    let mut s = Settings::new("train", &defaults)
        .seed_from_env()?
        .file(a.hyper.config.as_deref())?;
    s.flag("data", a.data.as_ref().map(|p| p.display()));
    s.flag("model", a.model.as_ref());
    s.flag("test_fraction", a.test_fraction.as_ref());
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    apply_hyper(&mut s, &a.hyper);
    if a.print_config {
        print!("{}", s.render());
        return Ok(());
    }
    let kind: ModelKind = s.raw("model").parse().map_err(CliError::Usage)?;
    let arch = architecture(&s, kind)?;
    let cfg = train_config(&s)?;
    let frac = fraction(s.raw("test_fraction"))?;
    let data = s.path("data")?;
    let out = s.path("out")?;

    let index = load_dataset(&data, arch.image_shape())?;
    let (train_set, val_set) = holdout(&index, frac, cfg.seed)?;
    prepare_out(&out, a.force)?;
    write(&out.join("run_config.txt"), &s.render())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let model = Model::init(kind, &arch, &mut rng)?;
    let quiet = a.hyper.quiet;
    let progress = move |tag: &str, e: &Epoch| {
        if !quiet {
            epoch_line(tag, e)
        }
    };
    let trained = train_model(model, &train_set, &val_set, &cfg, kind.as_str(), Some(&progress))?;
    let mut report = evaluate(&trained.model, &val_set, 32)?;
    report.train_size = train_set.len();
    trained.model.save(&out.join("checkpoint.bin"))?;
    write(&out.join("history.csv"), &history_csv(&trained.history))?;
    write(&out.join("report.json"), &report_json(&report))?;
    println!(
        "{kind}: {} training / {} validation images, best epoch {}",
        train_set.len(),
        val_set.len(),
        trained.best_epoch
    );
    print!("{}", report.pretty());
    Ok(())
}

pub fn crossval(a: CrossvalArgs) -> Result<()> {
    let mut defaults = vec![
        ("data", String::new()),
        ("model", "vit16".to_string()),
        ("k", "1".into()),
        ("jobs", "1".into()),
        ("out", String::new()),
    ];
    defaults.extend(hyper_defaults());
    let mut s = Settings::new("crossval", &defaults)
        .seed_from_env()?
        .file(a.hyper.config.as_deref())?;
    s.flag("data", a.data.as_ref().map(|p| p.display()));
    s.flag("model", a.model.as_ref());
    s.flag("k", a.k.as_ref());
    s.flag("jobs", a.jobs);
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    apply_hyper(&mut s, &a.hyper);
    if a.print_config {
        print!("{}", s.render());
        return Ok(());
    }
    let kinds = model_kinds(&s)?;
    let ks: Vec<usize> = s.list("k")?;
    if let Some(&bad) = ks.iter().find(|&&k| !(1..N_FOLDS).contains(&k)) {
        return Err(CliError::Usage(format!("k = {bad} must lie in 1..={}", N_FOLDS - 1)));
    }
    let jobs: usize = s.get("jobs")?;
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let cfg = train_config(&s)?;
    let archs: Vec<Architecture> = kinds.iter().map(|&k| architecture(&s, k)).collect::<Result<_>>()?;
    let data = s.path("data")?;
    let out = s.path("out")?;
    let shape = archs[0].image_shape();
    let index = load_dataset(&data, shape)?;
    prepare_out(&out, a.force)?;
    write(&out.join("run_config.txt"), &s.render())?;

    let quiet = a.hyper.quiet;
    let progress = move |tag: &str, e: &Epoch| {
        if !quiet {
            epoch_line(tag, e)
        }
    };
    let mut table3 = format!("model,{TABLE3_HEADER}");
    let mut fig10 = FIG10_HEADER.to_string();
    let mut timings = String::from("model,k,splits,seconds\n");
    for (&kind, arch) in kinds.iter().zip(&archs) {
        for &k in &ks {
            let req = CvRequest {
                kind,
                architecture: arch.clone(),
                k,
                train: cfg.clone(),
                seed: cfg.seed,
                jobs,
                run_dir: Some(out.join(format!("{kind}-k{k}"))),
            };
            let started = Instant::now();
            let outcome = run_cross_validation(&index, &req, Some(&progress))?;
            let seconds = started.elapsed().as_secs_f64();
            let agg = &outcome.aggregate;
            for row in agg.table3_rows(k).lines() {
                let _ = writeln!(table3, "{kind},{row}");
            }
            fig10.push_str(&fig10_row(kind, k, agg));
            let _ = writeln!(timings, "{kind},{k},{},{seconds:.1}", outcome.splits.len());
            println!(
                "== {kind}, k = {k}: {} splits, {} training images each",
                outcome.splits.len(),
                agg.train_size
            );
            print!("{}", agg.pretty());
            println!("F1 = {:.4} ± {:.4}\n", agg.f1_mean, agg.f1_std);
        }
    }
    write(&out.join("table3.csv"), &table3)?;
    write(&out.join("fig10.csv"), &fig10)?;
    write(&out.join("timings.csv"), &timings)?;
    Ok(())
}

pub fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let mut s = Settings::new(
        "evaluate",
        &[
            ("checkpoint", String::new()),
            ("data", String::new()),
            ("out", String::new()),
        ],
    )
    .file(a.config.as_deref())?;
    s.flag("checkpoint", a.checkpoint.as_ref().map(|p| p.display()));
    s.flag("data", a.data.as_ref().map(|p| p.display()));
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    let checkpoint = s.path("checkpoint")?;
    let data = s.path("data")?;
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found",
            checkpoint.display()
        )));
    }
    let model = Model::load(&checkpoint)?;
    let index = load_dataset(&data, model.architecture().image_shape())?;
    let patches: Vec<&LabeledPatch> = index.iter().collect();
    let report = evaluate(&model, &patches, 32)?;
    let mut predictions = String::from("id,label,predicted\n");
    for chunk in patches.chunks(32) {
        let logits = model.logits(&model.batch(chunk.iter().copied())?)?;
        let c = logits.shape()[1];
        for (p, row) in chunk.iter().zip(logits.data().chunks(c)) {
            let pred = Label::from_index(predict(row)).map_or("?", Label::name);
            let _ = writeln!(predictions, "{},{},{pred}", p.source_id, p.label);
        }
    }
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(io(out))?;
        write(&out.join("report.json"), &report_json(&report))?;
        write(&out.join("predictions.csv"), &predictions)?;
        write(&out.join("run_config.txt"), &s.render())?;
    }
    if a.json {
        print!("{}", report_json(&report));
    } else {
        println!("{} images from {}", patches.len(), data.display());
        print!("{}", report.pretty());
    }
    Ok(())
}

pub fn attention(a: AttentionArgs) -> Result<()> {
    let mut s = Settings::new(
        "attention",
        &[
            ("checkpoint", String::new()),
            ("image", String::new()),
            ("layers", "all".into()),
            ("out", String::new()),
            ("upsample", "bilinear".into()),
            ("layout", "side-by-side".into()),
            ("alpha", "0.6".into()),
            ("format", "png".into()),
        ],
    )
    .file(a.config.as_deref())?;
    s.flag("checkpoint", a.checkpoint.as_ref().map(|p| p.display()));
    s.flag("image", a.image.as_ref().map(|p| p.display()));
    s.flag("layers", a.layers.as_ref());
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    s.flag("upsample", a.upsample.as_ref());
    s.flag("layout", a.layout.as_ref());
    s.flag("alpha", a.alpha);
    s.flag("format", a.format.as_ref());
    let checkpoint = s.path("checkpoint")?;
    let image = s.path("image")?;
    let out = s.path("out")?;
    let upsample = match s.raw("upsample") {
        "bilinear" => Upsample::Bilinear,
        "nearest" => Upsample::Nearest,
        other => return Err(CliError::Usage(format!("unknown upsampling `{other}`"))),
    };
    let alpha: f64 = s.get("alpha")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CliError::Usage(format!("--alpha {alpha} outside [0, 1]")));
    }
    let layout = match s.raw("layout") {
        "side-by-side" => Layout::SideBySide,
        "overlay" => Layout::Overlay(alpha),
        "heatmap" => Layout::Heatmap,
        other => return Err(CliError::Usage(format!("unknown layout `{other}`"))),
    };
    let ext = match s.raw("format") {
        f @ ("png" | "ppm") => f.to_string(),
        other => return Err(CliError::Usage(format!("unknown image format `{other}`"))),
    };
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found",
            checkpoint.display()
        )));
    }
    let model = Model::load(&checkpoint)?;
    let Architecture::Vit(cfg) = model.architecture() else {
        return Err(vitfield::viz::VizError::NotTransformer.into());
    };
    let layers: Vec<usize> = match s.raw("layers") {
        "all" => (0..cfg.depth).collect(),
        _ => s
            .list::<usize>("layers")?
            .into_iter()
            .map(|l| {
                if (1..=cfg.depth).contains(&l) {
                    Ok(l - 1)
                } else {
                    Err(CliError::Usage(format!("layer {l} out of range 1..={}", cfg.depth)))
                }
            })
            .collect::<Result<_>>()?,
    };

    let mut pixels = read_image(&image)?;
    if pixels.shape() != [cfg.image_height, cfg.image_width, cfg.channels] {
        pixels = resize(&pixels, cfg.image_height, cfg.image_width);
    }
    let patch = LabeledPatch::new(pixels.clone(), Label::Weed, "input");
    let (records, logits) = capture_attention(&model, &model.batch([&patch])?)?;
    let record = &records[0];
    let grid = (cfg.image_height / cfg.patch_size, cfg.image_width / cfg.patch_size);
    prepare_out(&out, true)?;
    let stem = image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let mut written = Vec::new();
    for &l in &layers {
        let map = layer_attention_map(record, l)?;
        let path = out.join(heatmap_file_name(&stem, Some(l), &ext));
        write_heatmap(&path, &render_heatmap(&map, grid, &pixels, upsample, layout)?)?;
        written.push(path);
    }
    let path = out.join(heatmap_file_name(&stem, None, &ext));
    write_heatmap(
        &path,
        &render_heatmap(&rollout(record)?, grid, &pixels, upsample, layout)?,
    )?;
    written.push(path);
    write(&out.join("run_config.txt"), &s.render())?;

    let row = logits.data();
    let class = Label::from_index(predict(row)).map_or("?", Label::name);
    println!("predicted {class}");
    let parts: Vec<String> = Label::ALL.iter().zip(row).map(|(l, v)| format!("{l}={v:.6}")).collect();
    println!("logits {}", parts.join(" "));
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
