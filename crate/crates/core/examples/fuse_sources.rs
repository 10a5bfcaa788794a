//! Ingest two sources that disagree on one visual acuity reading and fuse
//! them, with and without a source hierarchy.
//!
//! ```text
//! cargo run --example fuse_sources
//! ```

use std::path::Path;

use annofuse::fusion::fuse;
use annofuse::ingest::{load_descriptors, load_fusion_config_file, parse_sources};
use annofuse::model::Annotation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clinic");
    let descriptors = load_descriptors(&fixtures.join("sources.json"))?;
    let parsed = parse_sources(&descriptors)?;
    for w in &parsed.warnings {
        println!("warning: {w}");
    }
    println!("{} values from {} sources", parsed.values.len(), descriptors.len());

    let config = load_fusion_config_file(&fixtures.join("hierarchy.json"))?;
    let fused = fuse(&parsed.values, &config.hierarchies, &config.tolerance);
    println!("\nwith hierarchy:");
    for cell in fused.cells.values() {
        let chosen = cell.chosen.as_ref().map_or("-".to_string(), |v| v.to_string());
        println!("  {:<40} {:<20} {chosen}", cell.cell.to_string(), format!("{:?}", cell.status));
    }
    for a in &fused.annotations {
        if let Annotation::Resolution(r) = a {
            println!("  resolution: {}", r.rule_text);
        }
    }
    println!("  {}", fused.summary());

    let plain = fuse(&parsed.values, &[], &config.tolerance);
    println!("\nwithout hierarchy:\n  {}", plain.summary());
    for cell in &plain.unresolved {
        println!("  needs a decision: {cell}");
    }
    Ok(())
}
