//! Externalize a finding with a chart snapshot, discuss it, validate it and
//! read the feed. An edit afterwards makes one of its data references stale.
//!
//! ```text
//! cargo run --example explore
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use annofuse::cleansing::{EditRequest, NewValue};
use annofuse::exploration::{separate, stale_refs};
use annofuse::ingest::{load_descriptors, load_fusion_config_file};
use annofuse::model::{Annotation, CellKey, EditScope, LifecycleState, Qualification, Scalar, User, UserRegistry, Verdict};
use annofuse::workbench::{SystemClock, Workbench};

/// A stand-in for a rendered chart: the PNG signature plus a label.
fn chart_png(label: &str) -> Vec<u8> {
    let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
    bytes.extend_from_slice(label.as_bytes());
    bytes
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clinic");
    let users = UserRegistry::new([
        User::new("ana", "Ana Analyst", Qualification::Analyst),
        User::new("eve", "Dr. Eve Expert", Qualification::Expert),
        User::new("eli", "Dr. Eli Expert", Qualification::Expert),
    ])?;
    let mut wb = Workbench::in_memory(users, load_fusion_config_file(&fixtures.join("hierarchy.json"))?, Box::new(SystemClock));
    for mut d in load_descriptors(&fixtures.join("sources.json"))? {
        let csv = std::fs::read(d.path.take().expect("fixture descriptors name a file"))?;
        wb.add_source(&d, &csv)?;
    }
    wb.fuse()?;

    let visible: Vec<CellKey> = wb
        .current()
        .iter()
        .filter(|(k, _)| k.entity_id == "P1" && k.dimension == "visual_acuity")
        .map(|(k, _)| k.clone())
        .collect();
    let (improves, finding) = wb.finding("P1 acuity improves between visits", chart_png("P1 acuity"), visible.clone(), "ana", false)?;
    let (flat, _) = wb.finding("P1 acuity is flat", chart_png("P1 acuity again"), visible, "ana", false)?;
    println!("finding #{} references {} cells, snapshot {}", improves.0, finding.data_refs.len(), finding.snapshot_ref);

    let (question, _) = wb.comment(improves, "is this the treated eye?", "eve")?;
    wb.comment(question, "yes, right eye", "ana")?;
    wb.vote_finding(improves, Verdict::Reject, "eve")?;
    wb.vote_finding(improves, Verdict::Confirm, "eli")?;
    wb.vote_finding(flat, Verdict::Reject, "eli")?;

    for card in wb.feed(false) {
        println!(
            "\n#{} by {} [{:?}] +{} -{}\n  {}",
            card.id.0, card.author.display_name, card.state, card.tally.confirms, card.tally.rejects, card.text
        );
        for c in &card.comments {
            println!("  > {}: {}", c.author.display_name, c.text);
        }
        let blob = card.thumbnail.as_ref().map(|id| wb.blobs().get(id)).transpose()?;
        println!("  snapshot: {} bytes", blob.map_or(0, |b| b.len()));
    }

    let valid = BTreeSet::from([LifecycleState::Valid]);
    let kept = separate(wb.log(), wb.log().events(), &valid);
    println!("\nvalid annotations: {:?}", kept.iter().map(|e| e.seq).collect::<Vec<_>>());

    let first = finding.data_refs[0].cell.clone();
    wb.edit(&EditRequest {
        scope: EditScope::SingleCell { cell: first },
        new_value: NewValue::Uniform(Scalar::numeric(0.4)?),
        author: "eve".into(),
        rationale: "letter supersedes the device value".into(),
        rule_set: None,
    })?;
    let Some(Annotation::Finding(recorded)) = wb.log().get(improves).map(|e| &e.annotation) else {
        unreachable!("id came from the log");
    };
    for s in stale_refs(recorded, wb.current()) {
        println!("stale reference: {} ({:?})", s.cell, s.staleness);
    }
    Ok(())
}
