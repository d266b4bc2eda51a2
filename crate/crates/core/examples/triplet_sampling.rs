//! Draws grade-conditioned triplets from a teacher bank and prints the audit
//! records, including the fallback when the anchor's grade neighbor is
//! missing from the bank.

use histodistill::datamodel::{assign_bin, synth_generate, BinEdges, Involvement, IsupGrade, SynthSpec};
use histodistill::distill::{negative_grade, sample_triplet, triplet_loss_vec, SampleRecord};
use histodistill::nn::PoolDims;
use histodistill::rng::SeedTree;
use histodistill::teacher::{export_bank, TeacherModel};
use ndarray::Array1;

fn main() -> histodistill::Result<()> {
    // micro-ultrasound style cohort: no grade 1 bags
    let spec = SynthSpec {
        cores_per_grade: [0; 6],
        bags_per_grade: [30, 0, 30, 30, 30, 30],
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec, 3)?;
    let dims = PoolDims {
        input: spec.teacher_dim,
        projection: 16,
        attention: 8,
    };
    let teacher = TeacherModel::init(dims, 16, SeedTree::new(3));
    let bank = export_bank(&data.bags, &teacher.pool, &BinEdges::default())?;

    let mut rng = SeedTree::new(3).child("sampler").rng();
    for (g, inv) in [(0u8, 0.0), (2, 0.3), (3, 0.9), (5, 0.6)] {
        let grade = IsupGrade::new(g)?;
        let bin = assign_bin(Involvement::new(inv)?, bank.bin_edges()).0;
        // a stand-in student embedding: the normalized bank row of a random same-grade entry
        let anchor: Array1<f64> = bank.embedding(bank.grade_entries(grade)[0]).mapv(f64::from);
        let draw = sample_triplet(grade, bin, &bank, anchor.view(), &mut rng, 16)?;
        let rec = SampleRecord::new(&format!("anchor-g{g}"), grade, &draw, &bank);
        let p = bank.embedding(draw.positive).mapv(f64::from);
        let n = bank.embedding(draw.negative).mapv(f64::from);
        println!(
            "{} | negative grade {:?} | loss {:.3}",
            serde_json::to_string(&rec)?,
            negative_grade(grade, &bank).map(|g| g.value()),
            triplet_loss_vec(anchor.view(), p.view(), n.view(), 1.0)
        );
    }
    Ok(())
}
