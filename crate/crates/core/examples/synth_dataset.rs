//! Generates a small synthetic cohort and writes it in the on-disk layout the
//! CLI reads: manifest.jsonl, images/, masks/ and bags/.
//!
//! cargo run --example synth_dataset -- [out_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use histodistill::datamodel::io::{write_bag, write_core, write_manifest};
use histodistill::datamodel::{rescale_counts, synth_generate, SynthSpec, MICRO_US_GRADE_COUNTS};

fn main() -> histodistill::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_data".into()));
    let spec = SynthSpec {
        cores_per_grade: rescale_counts(&MICRO_US_GRADE_COUNTS, 200),
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec, 7)?;

    let records = data.cores.iter().map(|c| write_core(&out, c)).collect::<histodistill::Result<Vec<_>>>()?;
    write_manifest(&out.join("manifest.jsonl"), &records)?;
    for b in &data.bags {
        write_bag(&out.join("bags"), b)?;
    }

    let mut by_grade: BTreeMap<String, usize> = BTreeMap::new();
    for c in &data.cores {
        *by_grade.entry(c.grade.to_string()).or_default() += 1;
    }
    println!("{} cores, {} bags -> {}", data.cores.len(), data.bags.len(), out.display());
    for (g, n) in by_grade {
        println!("  grade {g}: {n} cores");
    }
    let c = &data.cores[0];
    let inside = c.needle_mask.iter().filter(|&&m| m).count();
    println!(
        "first core {} ({}x{}): grade {}, involvement {:.2}, {inside} needle pixels",
        c.core_id,
        c.size(),
        c.size(),
        c.grade,
        c.involvement.fraction()
    );
    Ok(())
}
