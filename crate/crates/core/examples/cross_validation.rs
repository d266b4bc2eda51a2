//! Patient-level 5-fold cross-validation of the segmentation-only baseline
//! against triplet distillation, paired by seed, with the report files.
//!
//! cargo run --release --example cross_validation -- [out_dir]

use std::path::PathBuf;

use histodistill::datamodel::{stratified_patient_kfold, synth_generate, BinEdges, SynthSpec};
use histodistill::distill::LossMode;
use histodistill::eval::{emit_report, summarize, EvalSettings};
use histodistill::student::StudentConfig;
use histodistill::teacher::{export_bank, train_teacher, TeacherConfig};
use histodistill::trainloop::{check_seed_pairing, run_cv, CvPlan, DistillSettings, GridPoint, OptimConfig, StudentTrainConfig};

fn main() -> histodistill::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cv_report".into()));
    let spec = SynthSpec {
        cores_per_grade: [60, 0, 20, 20, 20, 20],
        texture_gain: 1.0,
        ..SynthSpec::default()
    };
    let mut data = synth_generate(&spec, 11)?;
    data.preprocess()?;
    let teacher_cfg = TeacherConfig {
        projection_dim: 16,
        attention_dim: 8,
        hidden: 16,
        ..TeacherConfig::default()
    };
    let (teacher, _) = train_teacher(&data.bags, &teacher_cfg, 11)?;
    let bank = export_bank(&data.bags, &teacher.pool, &BinEdges::default())?;
    let split = stratified_patient_kfold(&data.cores, 5, 11)?;

    let plan = CvPlan {
        folds: Vec::new(),
        seeds: vec![0, 1],
        grid: vec![
            GridPoint { loss_mode: LossMode::None, lambda: 0.0 },
            GridPoint { loss_mode: LossMode::Triplet, lambda: 1.0 },
        ],
        parallel: false,
    };
    let config = StudentTrainConfig {
        student: StudentConfig {
            patch: 8,
            embed_dim: 16,
            mixer_hidden: 24,
            adapter_dim: 4,
            decoder_hidden: 8,
            projection_dim: 16,
            attention_dim: 8,
            ..StudentConfig::default()
        },
        optim: OptimConfig {
            lr: 3e-3,
            max_epochs: 5,
            ..OptimConfig::default()
        },
    };
    let outcomes = run_cv(&data.cores, &split, &bank, &plan, &DistillSettings::default(), &config, &EvalSettings::default(), None)?;
    for pair in outcomes.chunks(2) {
        check_seed_pairing(&pair[0].manifest, &pair[1].manifest)?;
        pair[0].manifest.check_leakage()?;
    }
    let reports: Vec<_> = outcomes.into_iter().filter_map(|o| o.report).collect();
    for g in summarize(&reports) {
        println!(
            "{:>7} lambda {}: {} runs, auroc {:.3}, sens@60 csPCa {:.3}, entropy {:.3}",
            g.loss_mode.to_string(),
            g.lambda,
            g.runs,
            g.auroc,
            g.sens_at_spec.cspca_at_60(),
            g.mean_entropy
        );
    }
    let files = emit_report(&reports, &out)?;
    println!("wrote {} and {} ROC tables", files.metrics_json.display(), files.roc_csv.len());
    Ok(())
}
