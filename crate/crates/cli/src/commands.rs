use std::fs;
use std::path::{Path, PathBuf};

use deepangio::data::{generate_phantoms, load_manifest, load_samples, write_phantom_set, DomainTag, PhantomParams};
use deepangio::imgproc::io::{read_image, write_png};
use deepangio::imgproc::{clahe, Image};
use deepangio::nn::{load_checkpoint, Checkpoint, ModelKind};
use deepangio::train::{
    angiogram as angiogram_of, evaluate, predict, summarize, summary_csv, write_metrics_csv, Trainer,
};
use deepangio::Error;

use crate::failure::{CliResult, Failure, EXIT_DATA};
use crate::settings::{parse_kind, parse_pairs, resolve, RESOLVED_FILE};

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

pub fn synth_data(out: &Path, count: usize, size: usize, seed: u64, holdout: Option<usize>) -> CliResult {
    let params = PhantomParams {
        count,
        size,
        seed,
        ..Default::default()
    };
    let set = generate_phantoms(&params)?;
    let holdout = holdout.unwrap_or(count / 4).min(count);
    let manifest = write_phantom_set(out, &set, holdout)?;
    log::info!("wrote {count} phantoms ({holdout} held out) and {}", manifest.display());
    Ok(())
}

pub struct TrainRequest {
    pub config: Option<PathBuf>,
    pub baseline: Option<String>,
    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub overrides: Vec<String>,
}

pub fn train(req: TrainRequest) -> CliResult {
    let (mut pairs, base_dir) = match &req.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (parse_pairs(&text)?, dir)
        }
        None => (Vec::new(), PathBuf::new()),
    };
    for o in &req.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let kind = req.baseline.as_deref().map(parse_kind).transpose()?;
    let mut settings = resolve(&pairs, &base_dir, kind)?;
    if let Some(m) = req.manifest {
        settings.manifest = Some(m);
    }
    if let Some(r) = req.resume {
        settings.resume = Some(r);
    }
    settings.train.validate()?;

    // Everything that can fail on input is checked before training starts.
    let manifest_path = settings
        .manifest
        .clone()
        .ok_or_else(|| Failure::usage("no manifest given (config key `manifest` or --manifest)"))?;
    let manifest = load_manifest(&manifest_path)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let records: Vec<_> = manifest.source().cloned().collect();
    if records.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("{}: no source-domain records to train on", manifest_path.display()),
        });
    }
    let samples = load_samples(&records)?;
    let trainer = match &settings.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.kind != settings.kind {
                return Err(Failure::usage(format!(
                    "{} holds a {} model, not {}",
                    path.display(),
                    ckpt.kind.method_name(),
                    settings.kind.method_name()
                )));
            }
            Trainer::resume(settings.train.clone(), ckpt)?
        }
        None => Trainer::new(settings.train.clone(), settings.kind)?,
    };

    fs::create_dir_all(&req.out).map_err(|e| io_err(&req.out, e))?;
    let resolved = req.out.join(RESOLVED_FILE);
    fs::write(&resolved, settings.render()).map_err(|e| io_err(&resolved, e))?;
    let mut trainer = trainer.with_output_dir(&req.out)?;
    log::info!(
        "training {} on {} images for {} epochs (from epoch {})",
        settings.kind.method_name(),
        samples.len(),
        settings.train.epochs,
        trainer.epoch()
    );
    trainer.fit(&samples)?;
    if let Some(last) = trainer.log().last() {
        log::info!("finished at step {} with loss {:.5}", last.step, last.loss.total);
    }
    Ok(())
}

/// The input file itself, or every `.png` in the directory, sorted.
fn inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| io_err(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("{}: no PNG images found", input.display()),
        });
    }
    Ok(files)
}

fn out_path(out_dir: &Path, input: &Path) -> PathBuf {
    let stem = input.file_stem().unwrap_or_default();
    out_dir.join(stem).with_extension("png")
}

fn for_each_image(ckpt: &Path, input: &Path, out: &Path, f: impl Fn(&Checkpoint, &Image) -> CliResult<Image>) -> CliResult {
    let model = load_checkpoint(ckpt)?;
    let files = inputs(input)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for file in &files {
        let img = read_image(file)?;
        let img = if img.channels() == 3 {
            img
        } else {
            let (w, h) = img.dims();
            Image::new(w, h, 3, img.channel(0).into_data().repeat(3))?
        };
        let result = f(&model, &img)?;
        let path = out_path(out, file);
        write_png(&path, &result)?;
        log::info!("{} -> {}", file.display(), path.display());
    }
    Ok(())
}

pub fn angiogram(ckpt: &Path, input: &Path, out: &Path) -> CliResult {
    for_each_image(ckpt, input, out, |model, img| {
        if model.kind != ModelKind::Angiogram {
            return Err(Failure::usage(format!(
                "{} holds a {} model; angiograms need an angiogram checkpoint",
                ckpt.display(),
                model.kind.method_name()
            )));
        }
        Ok(angiogram_of(model, img)?)
    })
}

pub fn segment(ckpt: &Path, input: &Path, out: &Path) -> CliResult {
    for_each_image(ckpt, input, out, |model, img| Ok(predict(model, img)?.mask))
}

pub fn eval(
    manifest: &Path,
    methods: &[String],
    ckpts: &[String],
    csv: &Path,
    summary: Option<&Path>,
    split: &str,
) -> CliResult {
    let mut kinds = Vec::new();
    for m in methods {
        let k = ModelKind::from_method_name(m.trim())
            .ok_or_else(|| Failure::usage(format!("unknown method `{m}` (expected angiogram, green-unet, pca-unet)")))?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    let mut paths = Vec::new();
    for c in ckpts {
        let (m, p) = c
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--ckpt expects METHOD=PATH, got `{c}`")))?;
        let k = ModelKind::from_method_name(m.trim()).ok_or_else(|| Failure::usage(format!("unknown method `{m}`")))?;
        paths.push((k, PathBuf::from(p)));
    }
    let mut models = Vec::new();
    for k in &kinds {
        let (_, path) = paths
            .iter()
            .find(|(pk, _)| pk == k)
            .ok_or_else(|| Failure::usage(format!("no checkpoint given for method `{}`", k.method_name())))?;
        let model = load_checkpoint(path)?;
        if model.kind != *k {
            return Err(Failure::usage(format!(
                "{} holds a {} model, not {}",
                path.display(),
                model.kind.method_name(),
                k.method_name()
            )));
        }
        models.push(model);
    }

    let manifest = load_manifest(manifest)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| match split {
            "target" => r.domain == DomainTag::Target,
            "source" => r.domain == DomainTag::Source,
            _ => true,
        })
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("no {split} records in {}", manifest.path.display()),
        });
    }
    let refs: Vec<&Checkpoint> = models.iter().collect();
    let rows = evaluate(&records, &refs)?;
    write_metrics_csv(csv, &rows)?;
    let summary_path = summary.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = csv.file_stem().unwrap_or_default().to_string_lossy();
        csv.with_file_name(format!("{stem}.summary.csv"))
    });
    let stats = summary_csv(&summarize(&rows));
    fs::write(&summary_path, &stats).map_err(|e| io_err(&summary_path, e))?;
    print!("{stats}");
    log::info!("{} rows -> {}; summary -> {}", rows.len(), csv.display(), summary_path.display());
    Ok(())
}

pub fn augment_preview(input: &Path, clip: f64, out: &Path, tiles: &str) -> CliResult {
    let (r, c) = tiles
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .ok_or_else(|| Failure::usage(format!("--tiles expects ROWSxCOLS, got `{tiles}`")))?;
    if !(clip.is_finite() && clip >= 1.0) {
        return Err(Failure::usage("--clip must be a number >= 1"));
    }
    let img = read_image(input)?;
    let enhanced = clahe(&img, clip, (r, c))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_png(out, &enhanced)?;
    Ok(())
}
