//! Write a log to disk, rebuild the dataset from it, verify it, then show
//! what verification reports for a damaged copy.
//!
//! ```text
//! cargo run --example audit_log
//! ```

use std::path::Path;

use annofuse::cleansing::CorrectionRule;
use annofuse::ingest::{load_descriptors, load_fusion_config_file};
use annofuse::model::{Qualification, User, UserRegistry};
use annofuse::store::{read_snapshot, replay, verify_log, write_snapshot, EventLog, EventPredicate, Step};
use annofuse::workbench::{SystemClock, Workbench, LOG_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clinic");
    let dir = std::env::temp_dir().join(format!("annofuse-audit-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    {
        let users = UserRegistry::new([User::new("eve", "Dr. Eve Expert", Qualification::Expert)])?;
        let mut wb = Workbench::open_dir(&dir, users, load_fusion_config_file(&fixtures.join("hierarchy.json"))?, Box::new(SystemClock))?;
        for mut d in load_descriptors(&fixtures.join("sources.json"))? {
            let csv = std::fs::read(d.path.take().expect("fixture descriptors name a file"))?;
            wb.add_source(&d, &csv)?;
        }
        wb.fuse()?;
        wb.rule_edit(&CorrectionRule::ClampToRange { dimension: "iop".into(), min: 0.0, max: 20.0 }, "eve")?;
    }

    let path = dir.join(LOG_FILE);
    let log = EventLog::load(&path)?;
    for step in Step::ALL {
        println!("{step}: {} events", log.query(step, &EventPredicate::default()).len());
    }
    let current = replay(log.base_dataset(), log.events())?;
    let snapshot = dir.join("current.snapshot");
    write_snapshot(&snapshot, &current)?;
    assert_eq!(read_snapshot(&snapshot)?, current);
    println!("replayed {} cells; snapshot round-trips", current.len());

    let report = verify_log(&path)?;
    println!("verify: {} events, {} issues", report.events, report.issues.len());

    // Drop one record from the middle of a copy.
    let text = std::fs::read_to_string(&path)?;
    let damaged: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 3).map(|(_, l)| l).collect();
    let copy = dir.join("damaged.log");
    std::fs::write(&copy, damaged.join("\n") + "\n")?;
    for issue in verify_log(&copy)?.issues {
        println!("damaged copy: {issue}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
