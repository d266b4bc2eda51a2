//! Trains the bag-level grade classifier on synthetic embedding bags, freezes
//! it and exports the normalized embedding bank.

use histodistill::datamodel::io::{read_bank, write_bank};
use histodistill::datamodel::{synth_generate, BinEdges, SynthSpec};
use histodistill::nn::ParamSet;
use histodistill::teacher::{accuracy, export_bank, train_teacher, TeacherConfig};
use histodistill::trainloop::OptimConfig;

fn main() -> histodistill::Result<()> {
    let spec = SynthSpec {
        cores_per_grade: [0; 6],
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec, 1)?;
    let config = TeacherConfig {
        projection_dim: 32,
        attention_dim: 16,
        hidden: 32,
        optim: OptimConfig {
            lr: 1e-3,
            max_epochs: 20,
            ..OptimConfig::default()
        },
        class_weighting: false,
    };
    let (teacher, history) = train_teacher(&data.bags, &config, 1)?;
    println!(
        "loss {:.3} -> {:.3}, training accuracy {:.3}",
        history.epoch_loss[0],
        history.epoch_loss.last().unwrap(),
        accuracy(&teacher, &data.bags)?
    );
    println!("teacher checksum {}", teacher.checksum());

    let bank = export_bank(&data.bags, &teacher.pool, &BinEdges::default())?;
    for ((grade, bin), rows) in bank.index() {
        println!("  grade {grade} bin {bin}: {} entries", rows.len());
    }
    let path = std::env::temp_dir().join("histodistill_bank.bin");
    write_bank(&path, &bank)?;
    let back = read_bank(&path)?;
    println!("bank {}x{} written to {} and read back: {}", back.len(), back.dim(), path.display(), back == bank);
    Ok(())
}
