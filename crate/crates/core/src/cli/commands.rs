use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::{Cli, Command, CompareArgs, EvaluateArgs, SweepArgs, SynthArgs, TrainStudentArgs};
use crate::datamodel::io::{load_cores, read_bag_dir, read_bank, write_bag, write_bank, write_core, write_manifest};
use crate::datamodel::{preprocess_core, stratified_patient_kfold, synth_generate, ImagingCore};
use crate::distill::LossMode;
use crate::error::{Error, Result};
use crate::eval::{emit_report, summarize, wilcoxon_signed_rank_exact, EvalReport, WilcoxonResult};
use crate::nn::ParamSet;
use crate::rng::SeedTree;
use crate::student::{write_heatmap, StudentModel};
use crate::teacher::{accuracy, export_bank, train_teacher as fit_teacher, TeacherModel};
use crate::trainloop::{check_seed_pairing, run_cv, CvPlan, FoldData, GridPoint, RunManifest, RunStatus};

pub fn run(cli: &Cli) -> Result<String> {
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let value = match &cli.command {
        Command::Synth(a) => serde_json::to_value(synth(&config, a)?)?,
        Command::TrainTeacher => serde_json::to_value(train_teacher(&config)?)?,
        Command::TrainStudent(a) => train_student(&config, a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Compare(a) => serde_json::to_value(compare(a)?)?,
        Command::Sweep(a) => sweep(&config, a)?,
        Command::PrintConfig => return Ok(config.to_toml()),
    };
    Ok(serde_json::to_string_pretty(&value)?)
}

/// `a,b,c`, `a..b` (half-open) or `a..=b`.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse list {text:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let out: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSummary {
    pub data_dir: PathBuf,
    pub cores: usize,
    pub patients: usize,
    pub bags: usize,
}

pub fn synth(config: &ExperimentConfig, args: &SynthArgs) -> Result<SynthSummary> {
    let dir = &config.paths.data_dir;
    let manifest = config.paths.manifest();
    if manifest.exists() {
        if !args.force {
            return Err(Error::InvalidInput(format!(
                "{} already exists; pass --force to replace it",
                manifest.display()
            )));
        }
        for sub in ["images", "masks", "bags"] {
            let d = dir.join(sub);
            if d.exists() {
                fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = synth_generate(&config.synth, args.seed)?;
    let records = data.cores.iter().map(|c| write_core(dir, c)).collect::<Result<Vec<_>>>()?;
    write_manifest(&manifest, &records)?;
    for b in &data.bags {
        write_bag(&config.paths.bags(), b)?;
    }
    let patients: BTreeSet<&str> = data.cores.iter().map(|c| c.patient_id.as_str()).collect();
    log::info!("wrote {} cores and {} bags to {}", data.cores.len(), data.bags.len(), dir.display());
    Ok(SynthSummary {
        data_dir: dir.clone(),
        cores: data.cores.len(),
        patients: patients.len(),
        bags: data.bags.len(),
    })
}

/// Written next to the teacher checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub input_dim: usize,
    pub train_bags: usize,
    pub val_bags: usize,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub checksum: String,
    pub bank: PathBuf,
    pub bank_entries: usize,
    pub epoch_loss: Vec<f64>,
}

fn teacher_summary_path(config: &ExperimentConfig) -> PathBuf {
    config.paths.teacher_checkpoint().with_file_name("teacher.json")
}

/// Holds out `teacher_val_fraction` of the bags for a validation accuracy;
/// the bank is built from the training bags only.
pub fn train_teacher(config: &ExperimentConfig) -> Result<TeacherSummary> {
    let bags = read_bag_dir(&config.paths.bags())?;
    let mut order: Vec<usize> = (0..bags.len()).collect();
    order.shuffle(&mut SeedTree::new(config.split_seed).child("teacher-split").rng());
    let n_val = (bags.len() as f64 * config.teacher_val_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| {
        let mut v: Vec<usize> = idx.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| bags[i].clone()).collect::<Vec<_>>()
    };
    let (train, val) = (pick(train_idx), pick(val_idx));
    let (model, history) = fit_teacher(&train, &config.teacher, config.split_seed)?;
    let bank = export_bank(&train, &model.pool, &config.bin_edges()?)?;

    let ckpt = config.paths.teacher_checkpoint();
    for p in [&ckpt, &config.paths.bank] {
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
    }
    model.save(&ckpt)?;
    write_bank(&config.paths.bank, &bank)?;
    let summary = TeacherSummary {
        input_dim: train[0].dim(),
        train_bags: train.len(),
        val_bags: val.len(),
        train_accuracy: accuracy(&model, &train)?,
        val_accuracy: if val.is_empty() { None } else { Some(accuracy(&model, &val)?) },
        checksum: model.checksum(),
        bank: config.paths.bank.clone(),
        bank_entries: bank.len(),
        epoch_loss: history.epoch_loss,
    };
    let path = teacher_summary_path(config);
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Checksum of the stored teacher parameters, if a teacher was trained.
fn stored_teacher_checksum(config: &ExperimentConfig) -> Result<Option<String>> {
    let path = teacher_summary_path(config);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let s: TeacherSummary = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let mut m = TeacherModel::load(
        &config.paths.teacher_checkpoint(),
        config.teacher.dims(s.input_dim),
        config.teacher.hidden,
    )?;
    m.freeze();
    let now = m.checksum();
    if now != s.checksum {
        return Err(Error::InvalidInput(format!(
            "teacher checkpoint checksum {now} differs from the one recorded at training time"
        )));
    }
    Ok(Some(now))
}

/// Loads the manifest and preprocesses every core to the working size.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Vec<ImagingCore>> {
    load_cores(&config.paths.manifest())?
        .iter()
        .map(|c| preprocess_core(c, config.image_size))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub manifest: RunManifest,
    pub report: Option<EvalReport>,
}

/// Everything one `train-student` or `sweep` invocation produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub config: ExperimentConfig,
    pub grid: Vec<GridPoint>,
    pub seeds: Vec<u64>,
    pub folds: Vec<usize>,
    pub teacher_checksum_before: Option<String>,
    pub teacher_checksum_after: Option<String>,
    pub runs: Vec<RunRecord>,
}

impl RunSet {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.runs.iter().filter_map(|r| r.report.clone()).collect()
    }

    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| r.manifest.status != RunStatus::Completed).count()
    }
}

pub fn write_runset(dir: &Path, set: &RunSet) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("runset.json");
    fs::write(&path, serde_json::to_string_pretty(set)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Accepts the run set file or its directory.
pub fn read_runset(path: &Path) -> Result<RunSet> {
    let file = if path.is_dir() { path.join("runset.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&file, e.to_string()))
}

fn resolve_seeds(spec: Option<&str>, config: &ExperimentConfig) -> Result<Vec<u64>> {
    spec.map_or_else(|| Ok(config.seeds.clone()), parse_seed_list)
}

fn resolve_folds(spec: Option<&str>, config: &ExperimentConfig) -> Result<Vec<usize>> {
    let folds: Vec<usize> = match spec {
        Some(s) => parse_seed_list(s)?.into_iter().map(|f| f as usize).collect(),
        None if config.eval_folds.is_empty() => (0..config.folds).collect(),
        None => config.eval_folds.clone(),
    };
    if let Some(f) = folds.iter().find(|&&f| f >= config.folds) {
        return Err(Error::Config(format!("fold {f} out of range for {} folds", config.folds)));
    }
    Ok(folds)
}

fn grid_point(mode: LossMode, lambda: f64) -> GridPoint {
    // lambda 0 trains the segmentation-only baseline whatever the mode
    GridPoint {
        loss_mode: if lambda == 0.0 { LossMode::None } else { mode },
        lambda,
    }
}

fn execute(config: &ExperimentConfig, grid: Vec<GridPoint>, seeds: Vec<u64>, folds: Vec<usize>, out: &Path) -> Result<RunSet> {
    let cores = load_dataset(config)?;
    let bank = read_bank(&config.paths.bank)?;
    let split = stratified_patient_kfold(&cores, config.folds, config.split_seed)?;
    let teacher_checksum_before = stored_teacher_checksum(config)?;
    let plan = CvPlan {
        folds: folds.clone(),
        seeds: seeds.clone(),
        grid: grid.clone(),
        parallel: config.parallel,
    };
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let outcomes = run_cv(
        &cores,
        &split,
        &bank,
        &plan,
        &config.distill,
        &config.train_config(),
        &config.eval,
        Some(&ckpt_dir),
    )?;
    let teacher_checksum_after = stored_teacher_checksum(config)?;
    if teacher_checksum_before != teacher_checksum_after {
        return Err(Error::InvalidInput("teacher parameters changed during student training".into()));
    }
    let runs: Vec<RunRecord> = outcomes
        .into_iter()
        .map(|o| RunRecord {
            manifest: o.manifest,
            report: o.report,
        })
        .collect();
    for r in &runs {
        r.manifest.check_leakage()?;
    }
    let set = RunSet {
        config: config.clone(),
        grid,
        seeds,
        folds,
        teacher_checksum_before,
        teacher_checksum_after,
        runs,
    };
    write_runset(out, &set)?;
    if set.failed() > 0 {
        log::warn!("{} of {} runs failed; see runset.json", set.failed(), set.runs.len());
    }
    Ok(set)
}

fn group_json(reports: &[EvalReport]) -> serde_json::Value {
    let groups: Vec<serde_json::Value> = summarize(reports)
        .iter()
        .map(|g| {
            json!({
                "loss_mode": g.loss_mode,
                "lambda": g.lambda,
                "runs": g.runs,
                "auroc": g.auroc,
                "mean_entropy": g.mean_entropy,
                "sens60_cspca": g.sens_at_spec.cspca_at_60(),
            })
        })
        .collect();
    serde_json::Value::Array(groups)
}

pub fn train_student(config: &ExperimentConfig, args: &TrainStudentArgs) -> Result<serde_json::Value> {
    let mode = args.loss.unwrap_or(config.distill.loss_mode);
    let lambda = args.lambda.unwrap_or(config.distill.lambda);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let seeds = resolve_seeds(args.seeds.as_deref(), config)?;
    let folds = resolve_folds(args.folds.as_deref(), config)?;
    let g = grid_point(mode, lambda);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| config.paths.out_dir.join(format!("{}_l{}", g.loss_mode, lambda)));
    let set = execute(config, vec![g], seeds, folds, &out)?;
    Ok(json!({
        "runset": out.join("runset.json"),
        "runs": set.runs.len(),
        "failed": set.failed(),
        "summary": group_json(&set.reports()),
    }))
}

pub fn sweep(config: &ExperimentConfig, args: &SweepArgs) -> Result<serde_json::Value> {
    let lambdas = args.lambdas.clone().unwrap_or_else(|| config.sweep.lambdas.clone());
    if lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
    }
    let seeds = resolve_seeds(args.seeds.as_deref(), config)?;
    let folds = resolve_folds(args.folds.as_deref(), config)?;
    let grid = lambdas.iter().map(|&l| grid_point(config.distill.loss_mode, l)).collect();
    let out = args.out.clone().unwrap_or_else(|| config.paths.out_dir.join("sweep"));
    let set = execute(config, grid, seeds, folds, &out)?;
    let reports = set.reports();
    let files = if reports.is_empty() { None } else { Some(emit_report(&reports, &out.join("report"))?) };
    Ok(json!({
        "runset": out.join("runset.json"),
        "runs": set.runs.len(),
        "failed": set.failed(),
        "metrics_json": files.as_ref().map(|f| f.metrics_json.clone()),
        "sweep_plot": files.and_then(|f| f.sweep_plot),
        "summary": group_json(&reports),
    }))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<serde_json::Value> {
    let set = read_runset(&args.runset)?;
    let base = if args.runset.is_dir() {
        args.runset.clone()
    } else {
        args.runset.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let out = args.out.clone().unwrap_or_else(|| base.join("report"));
    let reports = set.reports();
    let files = emit_report(&reports, &out)?;
    let mut heatmaps = 0usize;
    if args.heatmaps {
        // the run set's own config decides geometry, not the one on the command line
        let run_config = &set.config;
        let cores = load_dataset(run_config)?;
        let split = stratified_patient_kfold(&cores, run_config.folds, run_config.split_seed)?;
        for r in &set.runs {
            let Some(ckpt) = &r.manifest.checkpoint else { continue };
            let model = StudentModel::load(ckpt, run_config.student.clone())?;
            let data = FoldData::new(&cores, &split, r.manifest.fold)?;
            let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let dir = out.join("heatmaps").join(stem);
            for c in &data.val {
                write_heatmap(&dir, &c.core_id, &model.heatmap(c.image.view())?)?;
                heatmaps += 1;
            }
        }
    }
    Ok(json!({
        "metrics_csv": files.metrics_csv,
        "metrics_json": files.metrics_json,
        "roc_csv": files.roc_csv,
        "per_grade_plot": files.per_grade_plot,
        "sweep_plot": files.sweep_plot,
        "heatmaps": heatmaps,
        "summary": group_json(&reports),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub a: GridPoint,
    pub b: GridPoint,
    /// Fold-mean Sens@60 csPCa per seed.
    pub per_seed: Vec<SeedPair>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub wilcoxon: WilcoxonResult,
}

fn per_seed_sens(set: &RunSet, path: &Path) -> Result<(GridPoint, BTreeMap<u64, f64>)> {
    let [g] = set.grid.as_slice() else {
        return Err(Error::InvalidInput(format!(
            "{} holds {} settings; compare needs single-setting run sets",
            path.display(),
            set.grid.len()
        )));
    };
    if set.failed() > 0 {
        return Err(Error::InvalidInput(format!("{} has {} failed runs", path.display(), set.failed())));
    }
    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in set.reports() {
        let e = sums.entry(r.seed).or_default();
        e.0 += r.sens_at_spec.cspca_at_60();
        e.1 += 1;
    }
    Ok((*g, sums.into_iter().map(|(s, (v, n))| (s, v / n as f64)).collect()))
}

pub fn compare(args: &CompareArgs) -> Result<CompareSummary> {
    let (sa, sb) = (read_runset(&args.a)?, read_runset(&args.b)?);
    let (ga, ma) = per_seed_sens(&sa, &args.a)?;
    let (gb, mb) = per_seed_sens(&sb, &args.b)?;
    if ma.keys().ne(mb.keys()) || sa.folds != sb.folds {
        return Err(Error::InvalidInput(
            "run sets must cover the same seeds and folds to be paired".into(),
        ));
    }
    for ra in &sa.runs {
        let rb = sb
            .runs
            .iter()
            .find(|rb| rb.manifest.seed == ra.manifest.seed && rb.manifest.fold == ra.manifest.fold)
            .ok_or_else(|| Error::InvalidInput(format!("no partner for seed {} fold {}", ra.manifest.seed, ra.manifest.fold)))?;
        check_seed_pairing(&ra.manifest, &rb.manifest)?;
    }
    let per_seed: Vec<SeedPair> = ma.iter().map(|(&seed, &a)| SeedPair { seed, a, b: mb[&seed] }).collect();
    let diffs: Vec<f64> = per_seed.iter().map(|p| p.b - p.a).collect();
    let n = per_seed.len() as f64;
    Ok(CompareSummary {
        a: ga,
        b: gb,
        mean_a: per_seed.iter().map(|p| p.a).sum::<f64>() / n,
        mean_b: per_seed.iter().map(|p| p.b).sum::<f64>() / n,
        wilcoxon: wilcoxon_signed_rank_exact(&diffs)?,
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seed_list("0..=3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seed_list("4, 2,9").unwrap(), vec![4, 2, 9]);
        assert!(parse_seed_list("3..3").is_err());
        assert!(parse_seed_list("a").is_err());
    }

    #[test]
    fn zero_lambda_is_baseline() {
        assert_eq!(grid_point(LossMode::Clip, 0.0).loss_mode, LossMode::None);
        assert_eq!(grid_point(LossMode::Clip, 0.5).loss_mode, LossMode::Clip);
    }
}
