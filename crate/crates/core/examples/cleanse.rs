//! Plausibility checks, a manual edit, an automatic correction and expert
//! validation of the edits, followed by the edit report.
//!
//! ```text
//! cargo run --example cleanse
//! ```

use std::fs::File;
use std::path::Path;

use annofuse::cleansing::{check_plausibility, CleansingConfig, EditRequest, NewValue};
use annofuse::ingest::{load_descriptors, load_fusion_config_file};
use annofuse::model::{EditScope, Qualification, Scalar, User, UserRegistry, Verdict};
use annofuse::report::{Format, Report, ReportKind};
use annofuse::workbench::{SystemClock, Workbench};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clinic");
    let users = UserRegistry::new([
        User::new("ana", "Ana Analyst", Qualification::Analyst),
        User::new("eve", "Dr. Eve Expert", Qualification::Expert),
    ])?;
    let fusion = load_fusion_config_file(&fixtures.join("hierarchy.json"))?;
    let mut wb = Workbench::in_memory(users, fusion, Box::new(SystemClock));
    for mut d in load_descriptors(&fixtures.join("sources.json"))? {
        let csv = std::fs::read(d.path.take().expect("fixture descriptors name a file"))?;
        wb.add_source(&d, &csv)?;
    }
    wb.fuse()?;

    let config = CleansingConfig::load(File::open(fixtures.join("cleansing.json"))?)?;
    let check = check_plausibility(wb.current(), &config.plausibility);
    println!("{} plausibility violations", check.violations.len());
    for v in &check.violations {
        println!("  {} on {}", v.rule_id, v.target.cell());
    }
    println!("{} of them have a suggested fix", check.suggestions.len());

    // The second visit's acuity was mistyped in the device export.
    let cell = wb
        .current()
        .iter()
        .map(|(k, _)| k.clone())
        .find(|k| k.entity_id == "P1" && k.dimension == "visual_acuity" && k.observed_at.to_string().starts_with("2019-06"))
        .expect("fixture has a second P1 visit");
    let (edit_id, edit) = wb.edit(&EditRequest {
        scope: EditScope::SingleCell { cell },
        new_value: NewValue::Uniform(Scalar::numeric(0.65)?),
        author: "ana".into(),
        rationale: "device printout reads 0.65".into(),
        rule_set: None,
    })?;
    println!("\nedit #{}: {} -> {}", edit_id.0, edit.changes[0].old.as_ref().unwrap(), edit.changes[0].new);

    for rule in &config.corrections {
        let applied = wb.rule_edit(rule, "eve")?;
        println!("{}: {} edit(s)", rule.describe(), applied.len());
    }

    if let Err(e) = wb.vote_edit(edit_id, Verdict::Confirm, "ana") {
        println!("analyst vote refused: {e}");
    }
    wb.vote_edit(edit_id, Verdict::Confirm, "eve")?;

    println!();
    Report::build(ReportKind::Edits, wb.log().events()).write(Format::Text, &mut std::io::stdout())?;
    Ok(())
}
