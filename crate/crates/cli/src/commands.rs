use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tier::encoders::ModelDims;
use tier::metrics::{
    self, compare, evaluate, localization_hit_rate, mean_row_entropy, similarity_curves,
    EvalOptions, ScoreTable, SimilarityCurve,
};
use tier::synth_data::{read_dataset, write_dataset, Dataset, Split};
use tier::trainer::{
    self, load_checkpoint, save_checkpoint, train_until, Checkpoint, EpochRecord, TrainConfig,
};
use tier::zeroshot::{render_ppm, score_samples, Heatmap, QueryRegistry, QuerySet};
use tier::{Error, Result};

use crate::config::{write_bytes, write_text, RunConfig};

pub const DATASET_FILE: &str = "dataset.tierds";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn csv_string<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_dataset(rc: &RunConfig) -> Result<Dataset> {
    read_dataset(rc.dataset_path()?)
}

fn load_model(path: &Path, dims: &ModelDims) -> Result<Checkpoint<f64>> {
    let ckpt = load_checkpoint::<f64>(path)?;
    ckpt.ensure_dims(dims)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(ckpt)
}

fn registry(rc: &RunConfig, dataset: &Dataset) -> Result<QueryRegistry> {
    match &rc.queries {
        Some(path) => QueryRegistry::read(path),
        None => Ok(QueryRegistry::from_catalog(dataset.catalog())),
    }
}

fn non_empty<'a>(
    dataset: &'a Dataset,
    split: Split,
    path: &Path,
) -> Result<&'a [tier::synth_data::SyntheticSample]> {
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "{}: the {} split is empty",
            path.display(),
            split.name()
        )));
    }
    Ok(samples)
}

/// Display names for input files: file stems, falling back to the parent
/// directory name and then to the position when stems collide.
fn model_names(paths: &[PathBuf]) -> Vec<String> {
    let stem = |p: &PathBuf| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let parent = |p: &PathBuf| {
        p.parent()
            .and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let distinct = |names: &[String]| {
        names.iter().all(|n| !n.is_empty())
            && names.iter().collect::<BTreeSet<_>>().len() == names.len()
    };
    let stems: Vec<String> = paths.iter().map(stem).collect();
    if distinct(&stems) {
        return stems;
    }
    let parents: Vec<String> = paths.iter().map(parent).collect();
    if distinct(&parents) {
        return parents;
    }
    (0..paths.len())
        .map(|i| format!("model{}", i + 1))
        .collect()
}

pub fn gen_data(rc: &RunConfig, force: bool) -> Result<()> {
    let out = rc.prepare_output(force)?;
    let dataset = Dataset::generate(rc.data.seed, rc.data.counts(), rc.data.synth())?;
    write_dataset(&dataset, &out.join(DATASET_FILE))?;
    json_file(&out.join("manifest.json"), &dataset.manifest)?;
    let m = &dataset.manifest;
    println!("dataset   {}", out.join(DATASET_FILE).display());
    println!("seed      {}", m.seed);
    println!(
        "samples   train {} / val {} / test {}",
        m.counts.train, m.counts.val, m.counts.test
    );
    println!(
        "classes   {} ({} filler tokens)",
        m.catalog.classes.len(),
        m.catalog.filler_tokens.len()
    );
    let side = m.config.image_side();
    println!(
        "images    {side}x{side}, {}x{} patches of {} pixels",
        m.config.grid, m.config.grid, m.config.patch_size
    );
    Ok(())
}

/// `unregularized` for the plain contrastive baseline, `tier` otherwise.
fn run_name(config: &TrainConfig) -> &'static str {
    if config.lambda_p == 0.0 && config.lambda_t == 0.0 {
        "unregularized"
    } else {
        "tier"
    }
}

fn history_csv(history: &[EpochRecord]) -> Result<String> {
    csv_string(
        &["epoch", "clip", "patch_pen", "token_pen", "total"],
        history.iter().map(|h| {
            (
                h.epoch + 1,
                h.mean.clip_loss,
                h.mean.patch_penalty,
                h.mean.token_penalty,
                h.mean.total,
            )
        }),
    )
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    run: &'a str,
    dataset: Option<&'a Path>,
    train_samples: usize,
    parameters: usize,
    epochs: usize,
    optimizer_steps: u64,
    final_epoch: Option<&'a EpochRecord>,
}

/// A resumed run may extend the epoch count but must otherwise use the
/// configuration it was started with.
fn resume_compatible(saved: &TrainConfig, requested: &TrainConfig) -> bool {
    let strip = |c: &TrainConfig| TrainConfig {
        epochs: 0,
        dataset: None,
        checkpoint_every: 0,
        ..c.clone()
    };
    strip(saved) == strip(requested)
}

pub fn train(rc: &RunConfig, force: bool) -> Result<()> {
    let mut rc = rc.clone();
    rc.train.dataset = rc.dataset.clone().or(rc.train.dataset.take());
    rc.dataset = rc.train.dataset.clone();
    rc.train.validate()?;
    let out = rc.prepare_output(force)?;
    let path = rc.dataset_path()?;
    let dataset = read_dataset(path)?;
    let samples = non_empty(&dataset, Split::Train, path)?;
    let dims = dataset.manifest.model_dims();

    let mut ckpt = match &rc.resume {
        Some(from) => {
            let mut c = load_model(from, &dims)?;
            if !resume_compatible(&c.config, &rc.train) {
                return Err(Error::Config(format!(
                    "{} was trained with a different configuration",
                    from.display()
                )));
            }
            c.config = rc.train.clone();
            c
        }
        None => Checkpoint::initial(rc.train.clone(), dims)?,
    };
    let run = run_name(&ckpt.config);
    eprintln!(
        "{run}: lambda_p {} lambda_t {}, {} samples, {} parameters, epochs {}..{}",
        ckpt.config.lambda_p,
        ckpt.config.lambda_t,
        samples.len(),
        ckpt.params.parameter_count(),
        ckpt.epoch + 1,
        ckpt.config.epochs
    );
    let objective = ckpt.config.objective();
    let every = ckpt.config.checkpoint_every;
    let history_path = out.join("history.csv");
    train_until(&mut ckpt, samples, objective, |c, _| {
        let last = c.history.last().expect("an epoch just finished");
        eprintln!(
            "epoch {:>3}  clip {:.5}  patch {:.5}  token {:.5}  total {:.5}",
            c.epoch,
            last.mean.clip_loss,
            last.mean.patch_penalty,
            last.mean.token_penalty,
            last.mean.total
        );
        write_text(&history_path, &history_csv(&c.history)?)?;
        if every > 0 && c.epoch % every == 0 && c.epoch < c.config.epochs {
            save_checkpoint(c, &out.join(format!("model-epoch{}.ckpt", c.epoch)))?;
        }
        Ok(())
    })?;
    write_text(&history_path, &history_csv(&ckpt.history)?)?;
    save_checkpoint(&ckpt, &out.join(CHECKPOINT_FILE))?;
    json_file(
        &out.join("summary.json"),
        &TrainSummary {
            run,
            dataset: rc.dataset.as_deref(),
            train_samples: samples.len(),
            parameters: ckpt.params.parameter_count(),
            epochs: ckpt.epoch,
            optimizer_steps: ckpt.optimizer.step,
            final_epoch: ckpt.history.last(),
        },
    )?;
    println!("{run} checkpoint {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

pub fn sweep(rc: &RunConfig, force: bool) -> Result<()> {
    let grid = rc.sweep.grid()?;
    let base = TrainConfig {
        epochs: rc.sweep.epochs,
        dataset: rc.dataset.clone(),
        ..rc.train.clone()
    };
    base.validate()?;
    let out = rc.prepare_output(force)?;
    let path = rc.dataset_path()?;
    let dataset = read_dataset(path)?;
    let train_set = non_empty(&dataset, Split::Train, path)?;
    let val_set = non_empty(&dataset, Split::Val, path)?;
    let registry = registry(rc, &dataset)?;
    eprintln!(
        "sweeping {} x {} cells, {} epoch(s) each",
        grid.len(),
        grid.len(),
        base.epochs
    );
    let result = trainer::sweep(
        &base,
        &grid,
        &grid,
        dataset.manifest.model_dims(),
        train_set,
        val_set,
        dataset.catalog(),
        &registry,
    )?;
    for c in result.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "cell lambda_p {} lambda_t {} failed: {}",
            c.lambda_p,
            c.lambda_t,
            c.error.as_deref().unwrap_or_default()
        );
    }
    let csv = result.to_csv()?;
    write_text(&out.join("sweep.csv"), &csv)?;
    json_file(&out.join("sweep.json"), &result)?;
    print!("{csv}");
    Ok(())
}

pub fn zeroshot(rc: &RunConfig, force: bool) -> Result<()> {
    let out = rc.prepare_output(force)?;
    let dataset = load_dataset(rc)?;
    let ckpt = load_model(rc.checkpoint_path()?, &dataset.manifest.model_dims())?;
    let registry = registry(rc, &dataset)?;
    let samples = non_empty(&dataset, rc.split, rc.dataset_path()?)?;
    let table = score_samples(&ckpt.params, dataset.catalog(), &registry, samples)?;
    table.write(&out.join("scores.csv"))?;
    registry.write(&out.join("queries.json"))?;
    println!("label,auc");
    for label in table.labels() {
        let (scores, truth) = table.column(&label);
        match metrics::auc(&scores, &truth) {
            Ok(a) => println!("{label},{a:.4}"),
            Err(Error::UndefinedAuc) => println!("{label},undefined"),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn read_scores(path: &Path) -> Result<ScoreTable> {
    let table = ScoreTable::read(path)?;
    if table.rows.is_empty() {
        return Err(Error::Config(format!("{}: no scores", path.display())));
    }
    for label in table.labels() {
        let (_, truth) = table.column(&label);
        if truth.iter().all(|&t| t == truth[0]) {
            let class = if truth[0] { "positive" } else { "negative" };
            return Err(Error::Config(format!(
                "{}: AUC is undefined for label `{label}` because every sample is {class}",
                path.display()
            )));
        }
    }
    Ok(table)
}

pub fn eval(rc: &RunConfig, force: bool) -> Result<()> {
    let e = &rc.eval;
    if e.scores.is_empty() || e.scores.len() > 2 {
        return Err(Error::Config(
            "eval takes one or two score tables (--scores)".into(),
        ));
    }
    if !e.val_scores.is_empty() && e.val_scores.len() != e.scores.len() {
        return Err(Error::Config(
            "--val-scores must match --scores one to one".into(),
        ));
    }
    if !e.names.is_empty() && e.names.len() != e.scores.len() {
        return Err(Error::Config(
            "--names must match --scores one to one".into(),
        ));
    }
    if e.bootstrap < 2 {
        return Err(Error::Config(
            "--bootstrap needs at least 2 replicates".into(),
        ));
    }
    let names = if e.names.is_empty() {
        model_names(&e.scores)
    } else {
        e.names.clone()
    };
    if names[0] == names[names.len() - 1] && names.len() == 2 {
        return Err(Error::Config("the two models need distinct names".into()));
    }
    let out = rc.prepare_output(force)?;
    let options = EvalOptions {
        replicates: e.bootstrap,
        seed: e.seed,
        objective: e.objective,
    };
    let mut reports = Vec::new();
    for (i, path) in e.scores.iter().enumerate() {
        let test = read_scores(path)?;
        let val = e.val_scores.get(i).map(|p| read_scores(p)).transpose()?;
        let report = evaluate(&names[i], &test, val.as_ref(), &options)?;
        let table = report.auc_table_csv()?;
        json_file(&out.join(format!("report_{}.json", names[i])), &report)?;
        write_text(&out.join(format!("auc_{}.csv", names[i])), &table)?;
        println!("{}", names[i]);
        print!("{table}");
        reports.push(report);
    }
    if let [a, b] = reports.as_slice() {
        let cmp = compare(a, b)?;
        let table = cmp.to_csv()?;
        write_text(&out.join("comparison.csv"), &table)?;
        json_file(&out.join("comparison.json"), &cmp)?;
        print!("{table}");
    }
    Ok(())
}

pub fn heatmap(rc: &RunConfig, force: bool) -> Result<()> {
    let h = &rc.heatmap;
    let label = h
        .label
        .as_deref()
        .ok_or_else(|| Error::Config("no label (--label)".into()))?;
    let id = h
        .sample_id
        .ok_or_else(|| Error::Config("no sample (--sample-id)".into()))?;
    if h.cell == 0 {
        return Err(Error::Config("--cell must be at least 1".into()));
    }
    let out = rc.prepare_output(force)?;
    let dataset = load_dataset(rc)?;
    let ckpt = load_model(rc.checkpoint_path()?, &dataset.manifest.model_dims())?;
    let registry = registry(rc, &dataset)?;
    let spec = registry.0.get(label).ok_or_else(|| {
        let known: Vec<&str> = registry.labels().collect();
        Error::Config(format!(
            "unknown label `{label}` (known: {})",
            known.join(", ")
        ))
    })?;
    let sample = dataset.sample(id).ok_or_else(|| {
        Error::Config(format!(
            "{}: no sample {id} (ids 0..{})",
            rc.dataset_path()
                .map(Path::display)
                .map(|d| d.to_string())
                .unwrap_or_default(),
            dataset.samples.len()
        ))
    })?;
    let queries = QuerySet::build(&ckpt.params, label, spec)?;
    let map = Heatmap::compute(&ckpt.params, &sample.pixels, &queries, Some(id))?;
    let stem = format!("heatmap_{label}_{id}");
    write_text(&out.join(format!("{stem}.csv")), &map.to_csv()?)?;
    write_bytes(&out.join(format!("{stem}.ppm")), &render_ppm(&map, h.cell))?;
    let best = map.argmax();
    let present = dataset
        .catalog()
        .class_by_name(label)
        .map(|(c, _)| sample.labels[c])
        .unwrap_or(false);
    println!(
        "{stem}: peak at patch {best} (row {}, col {}), score {:.4}, label present: {present}",
        best / map.grid,
        best % map.grid,
        map.scores[best]
    );
    Ok(())
}

#[derive(Serialize)]
struct CurveRow<'a> {
    model: &'a str,
    variant: &'a str,
    rank: usize,
    mean: f64,
    std: f64,
}

pub fn curves(rc: &RunConfig, force: bool) -> Result<()> {
    if rc.checkpoints.is_empty() {
        return Err(Error::Config("no checkpoint (--checkpoint)".into()));
    }
    let out = rc.prepare_output(force)?;
    let dataset = load_dataset(rc)?;
    let samples = non_empty(&dataset, rc.split, rc.dataset_path()?)?;
    let dims = dataset.manifest.model_dims();
    let names = model_names(&rc.checkpoints);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut curves: Vec<SimilarityCurve> = Vec::new();
    for (path, name) in rc.checkpoints.iter().zip(&names) {
        let ckpt = load_model(path, &dims)?;
        curves.push(similarity_curves(&ckpt.params, samples)?);
        summary.push((
            name.as_str(),
            mean_row_entropy(&ckpt.params, samples)?,
            localization_hit_rate(&ckpt.params, samples, 1)?,
        ));
    }
    for (curve, name) in curves.iter().zip(&names) {
        for (variant, stats) in [("raw", &curve.raw), ("normalized", &curve.normalized)] {
            for (i, (&mean, &std)) in stats.mean.iter().zip(&stats.std).enumerate() {
                rows.push(CurveRow {
                    model: name,
                    variant,
                    rank: i + 1,
                    mean,
                    std,
                });
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    write_bytes(&out.join("curves.csv"), &bytes)?;
    let table = csv_string(
        &["model", "mean_row_entropy", "top1_localization"],
        &summary,
    )?;
    write_text(&out.join("entropy.csv"), &table)?;
    print!("{table}");
    Ok(())
}
