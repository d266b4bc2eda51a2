use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{
    auroc, per_grade_auroc, roc_points, sens_at_spec, CoreScore, EntropyAccumulator, PositiveRule, RocPoint,
    SPEC_TARGETS,
};
use super::plot::{bar_chart, line_chart};
use crate::datamodel::IsupGrade;
use crate::distill::LossMode;
use crate::error::{Error, Result};

/// Positive-class rules for the two sensitivity rows and the three
/// specificity operating points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub pca: PositiveRule,
    pub cspca: PositiveRule,
    pub spec_targets: [f64; 3],
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            pca: PositiveRule::PCA,
            cspca: PositiveRule::CSPCA,
            spec_targets: SPEC_TARGETS,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.spec_targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("specificity target {t} outside (0, 1)")));
        }
        for r in [self.pca, self.cspca] {
            if r.min_grade == 0 || r.min_grade as usize >= IsupGrade::COUNT {
                return Err(Error::Config(format!("positive rule min_grade {} outside 1..=5", r.min_grade)));
            }
        }
        Ok(())
    }
}

/// Sensitivity at the three specificity targets (40/60/80 % by default).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensTable {
    pub pca: [f64; 3],
    pub cspca: [f64; 3],
}

impl SensTable {
    /// csPCa sensitivity at the middle target (60 % by default).
    pub fn cspca_at_60(&self) -> f64 {
        self.cspca[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub lambda: f64,
    pub core_count: usize,
    /// Cancer (any grade) versus benign.
    pub auroc: f64,
    pub sens_at_spec: SensTable,
    /// Nats per needle pixel.
    pub mean_entropy: f64,
    pub per_grade_auroc: BTreeMap<IsupGrade, f64>,
    /// The leading point uses `f64::MAX` as its threshold.
    pub roc: Vec<RocPoint>,
}

/// Run identity carried into a report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunTag {
    pub fold: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub lambda: f64,
}

impl EvalReport {
    pub fn from_scores(
        scores: &[CoreScore],
        entropy: EntropyAccumulator,
        tag: RunTag,
        settings: &EvalSettings,
    ) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("core scores".into()));
        }
        let s: Vec<f64> = scores.iter().map(|c| c.score).collect();
        let grades: Vec<IsupGrade> = scores.iter().map(|c| c.grade).collect();
        let cancer = PositiveRule::ANY_CANCER.labels(&grades);
        let mut sens = SensTable {
            pca: [0.0; 3],
            cspca: [0.0; 3],
        };
        let (pca, cspca) = (settings.pca.labels(&grades), settings.cspca.labels(&grades));
        settings.validate()?;
        for (k, &t) in settings.spec_targets.iter().enumerate() {
            sens.pca[k] = sens_at_spec(&s, &pca, t)?;
            sens.cspca[k] = sens_at_spec(&s, &cspca, t)?;
        }
        let mut roc = roc_points(&s, &cancer)?;
        roc[0].threshold = f64::MAX;
        Ok(EvalReport {
            fold: tag.fold,
            seed: tag.seed,
            loss_mode: tag.loss_mode,
            lambda: tag.lambda,
            core_count: scores.len(),
            auroc: auroc(&s, &cancer)?,
            sens_at_spec: sens,
            mean_entropy: entropy.mean()?,
            per_grade_auroc: per_grade_auroc(scores),
            roc,
        })
    }
}

/// Fold-and-seed means for one (loss mode, lambda) setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub loss_mode: LossMode,
    pub lambda: f64,
    pub runs: usize,
    pub auroc: f64,
    pub mean_entropy: f64,
    pub sens_at_spec: SensTable,
    pub per_grade_auroc: BTreeMap<IsupGrade, f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Groups in first-seen order.
pub fn summarize(reports: &[EvalReport]) -> Vec<GroupSummary> {
    let mut keys: Vec<(LossMode, f64)> = Vec::new();
    for r in reports {
        if !keys.iter().any(|k| *k == (r.loss_mode, r.lambda)) {
            keys.push((r.loss_mode, r.lambda));
        }
    }
    keys.into_iter()
        .map(|(mode, lambda)| {
            let g: Vec<&EvalReport> = reports.iter().filter(|r| r.loss_mode == mode && r.lambda == lambda).collect();
            let mut sens = SensTable {
                pca: [0.0; 3],
                cspca: [0.0; 3],
            };
            for k in 0..3 {
                sens.pca[k] = mean(g.iter().map(|r| r.sens_at_spec.pca[k]));
                sens.cspca[k] = mean(g.iter().map(|r| r.sens_at_spec.cspca[k]));
            }
            let mut per_grade = BTreeMap::new();
            for grade in IsupGrade::all() {
                let vals: Vec<f64> = g.iter().filter_map(|r| r.per_grade_auroc.get(&grade).copied()).collect();
                if !vals.is_empty() {
                    per_grade.insert(grade, mean(vals.into_iter()));
                }
            }
            GroupSummary {
                loss_mode: mode,
                lambda,
                runs: g.len(),
                auroc: mean(g.iter().map(|r| r.auroc)),
                mean_entropy: mean(g.iter().map(|r| r.mean_entropy)),
                sens_at_spec: sens,
                per_grade_auroc: per_grade,
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "scope,loss_mode,lambda,seed,fold,auroc,entropy,\
sens40_pca,sens60_pca,sens80_pca,sens40_cspca,sens60_cspca,sens80_cspca";

fn push_metrics(line: &mut String, auroc: f64, entropy: f64, s: &SensTable) {
    let _ = write!(line, ",{auroc},{entropy}");
    for v in s.pca.iter().chain(&s.cspca) {
        let _ = write!(line, ",{v}");
    }
    line.push('\n');
}

pub fn metrics_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        let _ = write!(out, "run,{},{},{},{}", r.loss_mode, r.lambda, r.seed, r.fold);
        push_metrics(&mut out, r.auroc, r.mean_entropy, &r.sens_at_spec);
    }
    for g in summarize(reports) {
        let _ = write!(out, "mean,{},{},all,all", g.loss_mode, g.lambda);
        push_metrics(&mut out, g.auroc, g.mean_entropy, &g.sens_at_spec);
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportFiles {
    pub metrics_csv: PathBuf,
    pub metrics_json: PathBuf,
    pub roc_csv: Vec<PathBuf>,
    pub per_grade_plot: Option<PathBuf>,
    pub sweep_plot: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes metrics.csv, metrics.json, roc_fold{i}.csv and the plots.
pub fn emit_report(reports: &[EvalReport], out_dir: &Path) -> Result<ReportFiles> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to emit".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = ReportFiles {
        metrics_csv: out_dir.join("metrics.csv"),
        metrics_json: out_dir.join("metrics.json"),
        ..ReportFiles::default()
    };
    write_text(&files.metrics_csv, &metrics_csv(reports))?;
    let mut json = serde_json::to_string_pretty(reports)?;
    json.push('\n');
    write_text(&files.metrics_json, &json)?;

    let folds: std::collections::BTreeSet<usize> = reports.iter().map(|r| r.fold).collect();
    for f in folds {
        let mut csv = String::from("seed,loss_mode,lambda,threshold,fpr,tpr\n");
        for r in reports.iter().filter(|r| r.fold == f) {
            for p in &r.roc {
                let _ = writeln!(csv, "{},{},{},{},{},{}", r.seed, r.loss_mode, r.lambda, p.threshold, p.fpr, p.tpr);
            }
        }
        let path = out_dir.join(format!("roc_fold{f}.csv"));
        write_text(&path, &csv)?;
        files.roc_csv.push(path);
    }

    let groups = summarize(reports);
    // one group of bars per cancer grade, one bar per setting
    let grades: Vec<IsupGrade> = IsupGrade::all()
        .filter(|g| groups.iter().any(|s| s.per_grade_auroc.contains_key(g)))
        .collect();
    if !grades.is_empty() {
        let bars: Vec<Vec<f64>> = grades
            .iter()
            .map(|g| groups.iter().map(|s| s.per_grade_auroc.get(g).copied().unwrap_or(0.0)).collect())
            .collect();
        let path = out_dir.join("per_grade_auroc.png");
        bar_chart(&bars, &path)?;
        files.per_grade_plot = Some(path);
    }
    let series = sweep_series(&groups);
    if !series.is_empty() {
        let path = out_dir.join("lambda_sweep.png");
        line_chart(&series.iter().map(|s| s.sens60_cspca.clone()).collect::<Vec<_>>(), &path)?;
        files.sweep_plot = Some(path);
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSeries {
    pub loss_mode: LossMode,
    pub lambdas: Vec<f64>,
    /// Mean Sens@60%Spec (csPCa) at each lambda.
    pub sens60_cspca: Vec<f64>,
}

/// Loss modes evaluated at two or more lambda values, lambdas ascending.
pub fn sweep_series(groups: &[GroupSummary]) -> Vec<SweepSeries> {
    let mut out = Vec::new();
    for mode in [LossMode::Triplet, LossMode::Clip, LossMode::None] {
        let mut pts: Vec<(f64, f64)> = groups
            .iter()
            .filter(|g| g.loss_mode == mode)
            .map(|g| (g.lambda, g.sens_at_spec.cspca_at_60()))
            .collect();
        if pts.len() >= 2 {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            out.push(SweepSeries {
                loss_mode: mode,
                lambdas: pts.iter().map(|p| p.0).collect(),
                sens60_cspca: pts.iter().map(|p| p.1).collect(),
            });
        }
    }
    out
}

pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
