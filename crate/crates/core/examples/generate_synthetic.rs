//! Generate the default synthetic cohort, write it to disk and check that
//! the planted label signal is recoverable.
//!
//! cargo run --example generate_synthetic -- [OUT_DIR]

use chgrl::graph::{save_graph, DIAGNOSIS, DISEASE_DISEASE, PATIENT_PATIENT};
use chgrl::synth::{generate, label_recoverability_check, GenConfig};

fn main() -> chgrl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/synthetic".into());
    let cfg = GenConfig::default();
    let (g, truth) = generate(&cfg)?;

    println!("patients        {}", g.patients());
    println!("diseases        {}", g.diseases());
    println!("patient pairs   {}", g.edges_named(PATIENT_PATIENT)?.len() / 2);
    println!("disease pairs   {}", g.edges_named(DISEASE_DISEASE)?.len() / 2);
    println!("diagnoses       {}", g.edges_named(DIAGNOSIS)?.len());
    println!(
        "  causal {} / spurious {} / noise {}",
        truth.causal_diagnosis_edges, truth.spurious_diagnosis_edges, truth.noise_diagnosis_edges
    );
    println!("missing cells   {:.4}", g.features().missing_fraction());
    println!("recoverability  AUC {:.4}", label_recoverability_check(&g, &truth)?);

    save_graph(&g, &out)?;
    truth.save(&std::path::Path::new(&out).join("ground_truth.json"))?;
    println!("written to {out}");
    Ok(())
}
