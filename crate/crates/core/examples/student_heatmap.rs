//! Trains a small student on a handful of synthetic cores with the combined
//! segmentation + triplet objective, then writes a heatmap for one core.
//!
//! cargo run --release --example student_heatmap -- [out_dir]

use std::path::PathBuf;

use histodistill::datamodel::{stratified_patient_kfold, synth_generate, BinEdges, SynthSpec};
use histodistill::eval::core_score;
use histodistill::student::{write_heatmap, StudentConfig};
use histodistill::teacher::{export_bank, train_teacher, TeacherConfig};
use histodistill::trainloop::{train_student, DistillSettings, FoldData, OptimConfig, StudentTrainConfig};

fn main() -> histodistill::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmaps".into()));
    let spec = SynthSpec {
        cores_per_grade: [40, 0, 15, 15, 15, 15],
        texture_gain: 1.0,
        ..SynthSpec::default()
    };
    let mut data = synth_generate(&spec, 5)?;
    data.preprocess()?;
    let teacher_cfg = TeacherConfig {
        projection_dim: 16,
        attention_dim: 8,
        hidden: 16,
        ..TeacherConfig::default()
    };
    let (teacher, _) = train_teacher(&data.bags, &teacher_cfg, 5)?;
    let bank = export_bank(&data.bags, &teacher.pool, &BinEdges::default())?;

    let split = stratified_patient_kfold(&data.cores, 5, 5)?;
    let fold = FoldData::new(&data.cores, &split, 0)?;
    let config = StudentTrainConfig {
        student: StudentConfig {
            patch: 8,
            embed_dim: 24,
            mixer_hidden: 32,
            adapter_dim: 8,
            decoder_hidden: 16,
            projection_dim: 16,
            attention_dim: 8,
            ..StudentConfig::default()
        },
        optim: OptimConfig {
            lr: 3e-3,
            max_epochs: 8,
            ..OptimConfig::default()
        },
    };
    let trained = train_student(&fold, &bank, &DistillSettings::default(), &config, 0, None)?;
    for e in &trained.manifest.history {
        println!(
            "epoch {:>2}: seg {:.4} distill {:.4} val balanced acc {:.3}",
            e.epoch, e.seg_loss, e.distill_loss, e.val_balanced_accuracy
        );
    }
    println!("best epoch {:?}", trained.manifest.best_epoch);

    for core in fold.val.iter().take(3) {
        let h = trained.model.heatmap(core.image.view())?;
        let score = core_score(&h, core.needle_mask.view())?;
        write_heatmap(&out, &core.core_id, &h)?;
        println!("{} grade {}: mean in-needle probability {score:.3}", core.core_id, core.grade);
    }
    println!("heatmaps in {}", out.display());
    Ok(())
}
