//! Core-level metrics on hand-made scores: AUROC, sensitivity at fixed
//! specificity for both positive rules, and the ROC curve.

use histodistill::datamodel::IsupGrade;
use histodistill::eval::{auroc, binary_entropy, per_grade_auroc, roc_points, sens_at_spec, CoreScore, PositiveRule};

fn main() -> histodistill::Result<()> {
    let rows = [(0.05, 0), (0.20, 0), (0.35, 0), (0.40, 0), (0.62, 0), (0.30, 2), (0.55, 2), (0.70, 3), (0.66, 4), (0.91, 5)];
    let scores: Vec<CoreScore> = rows
        .iter()
        .enumerate()
        .map(|(i, &(s, g))| {
            Ok(CoreScore {
                core_id: format!("c{i}"),
                score: s,
                grade: IsupGrade::new(g)?,
            })
        })
        .collect::<histodistill::Result<_>>()?;
    let s: Vec<f64> = scores.iter().map(|c| c.score).collect();
    let grades: Vec<IsupGrade> = scores.iter().map(|c| c.grade).collect();
    for (name, rule) in [("PCa", PositiveRule::PCA), ("csPCa", PositiveRule::CSPCA)] {
        let labels = rule.labels(&grades);
        println!(
            "{name:>5}: auroc {:.3}, sens@40/60/80 spec {:.2} {:.2} {:.2}",
            auroc(&s, &labels)?,
            sens_at_spec(&s, &labels, 0.4)?,
            sens_at_spec(&s, &labels, 0.6)?,
            sens_at_spec(&s, &labels, 0.8)?
        );
    }
    for (g, a) in per_grade_auroc(&scores) {
        println!("grade {g} vs benign: {a:.3}");
    }
    let labels = PositiveRule::PCA.labels(&grades);
    for p in roc_points(&s, &labels)? {
        println!("  t {:>5.2}  fpr {:.2}  tpr {:.2}", p.threshold, p.fpr, p.tpr);
    }
    println!("entropy of p=0.5: {:.4} nats", binary_entropy(0.5));
    Ok(())
}
