mod common;

use std::collections::{BTreeMap, BTreeSet};

use annofuse::fusion::{fuse, FuseSummary};
use annofuse::model::{Annotation, CellKey, LifecycleState, RedundancyStatus, Tolerance, Verdict};
use annofuse::report::{self, EditGroup};
use annofuse::store::{replay, verify_log, AnnotationEvent, EventLog, EventPredicate, Step};
use common::{bits, random_instance, random_session};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Latest verdict wins; a plain scan, independent of the lifecycle code.
fn naive_state(events: &[AnnotationEvent], id: u64) -> LifecycleState {
    let mut state = LifecycleState::Unvalidated;
    for e in events {
        if let Annotation::Vote(v) = &e.annotation {
            if v.target().0 == id {
                state = match v.verdict() {
                    Verdict::Confirm => LifecycleState::Valid,
                    Verdict::Reject => LifecycleState::Invalid,
                };
            }
        }
    }
    state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_deterministic_and_order_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let tol = Tolerance::default();
        let a = fuse(&inst.values, &inst.hierarchies, &tol);
        prop_assert_eq!(&a, &fuse(&inst.values, &inst.hierarchies, &tol));

        let mut shuffled = inst.values.clone();
        shuffled.shuffle(&mut rng);
        let b = fuse(&shuffled, &inst.hierarchies, &tol);
        prop_assert_eq!(&a.annotations, &b.annotations);
        for (key, cell) in &a.cells {
            prop_assert_eq!(cell.status, b.cells[key].status);
            prop_assert_eq!(&cell.chosen, &b.cells[key].chosen);
        }
    }

    #[test]
    fn fusion_count_law_and_no_invention(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let r = fuse(&inst.values, &inst.hierarchies, &Tolerance::default());
        let distinct: BTreeSet<&CellKey> = inst.values.iter().map(|v| &v.cell).collect();
        let provenance = r.annotations.iter().filter(|a| matches!(a, Annotation::Provenance(_))).count();
        let resolutions = r.annotations.iter().filter(|a| matches!(a, Annotation::Resolution(_))).count();
        prop_assert_eq!(provenance, distinct.len());
        let resolved_discrepant = r
            .cells
            .values()
            .filter(|c| c.status == RedundancyStatus::Discrepant && c.chosen.is_some())
            .count();
        prop_assert_eq!(resolutions, resolved_discrepant);
        for (key, cell) in &r.cells {
            if let Some(chosen) = &cell.chosen {
                prop_assert!(inst.values.iter().any(|v| &v.cell == key && &v.value == chosen));
            }
        }
        let summary = FuseSummary::from_annotations(&r.annotations);
        prop_assert_eq!(summary.unresolved, r.unresolved.len());
        prop_assert_eq!(summary.cells, summary.single_source + summary.redundant + summary.discrepant);
    }

    #[test]
    fn session_logs_replay_to_the_live_dataset(seed in any::<u64>(), actions in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wb = random_session(&mut rng, actions);
        let events = wb.log().events();
        let replayed = replay(wb.log().base_dataset(), events).unwrap();
        prop_assert_eq!(bits(&replayed), bits(wb.current()));
        prop_assert_eq!(bits(&wb.log().base_dataset()), bits(wb.base()));
    }

    #[test]
    fn step_queries_partition_session_logs(seed in any::<u64>(), actions in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wb = random_session(&mut rng, actions);
        let all = EventPredicate::default();
        let mut seen = Vec::new();
        for step in Step::ALL {
            seen.extend(wb.log().query(step, &all).iter().map(|e| e.seq));
        }
        seen.sort_unstable();
        let every: Vec<u64> = wb.log().events().iter().map(|e| e.seq).collect();
        prop_assert_eq!(seen, every);
    }

    #[test]
    fn reports_match_log_scans(seed in any::<u64>(), actions in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wb = random_session(&mut rng, actions);
        let events = wb.log().events();

        // edits: per (group, key) counts and lifecycle tallies
        let mut expected: BTreeMap<(EditGroup, String), [usize; 5]> = BTreeMap::new();
        for e in events {
            if let Annotation::Edit(edit) = &e.annotation {
                let key = match &edit.rule_set {
                    Some(r) => (EditGroup::Rule, r.clone()),
                    None => (EditGroup::Author, edit.author.clone()),
                };
                let row = expected.entry(key).or_default();
                row[0] += 1;
                row[1] += edit.changes.len();
                row[2 + match naive_state(events, e.seq) {
                    LifecycleState::Unvalidated => 0,
                    LifecycleState::Valid => 1,
                    LifecycleState::Invalid => 2,
                }] += 1;
            }
        }
        let got: BTreeMap<(EditGroup, String), [usize; 5]> = report::edits(events)
            .into_iter()
            .map(|r| ((r.group, r.key), [r.edits, r.cells, r.unvalidated, r.valid, r.invalid]))
            .collect();
        prop_assert_eq!(got, expected);

        // findings: per state counts, refs and direct comments
        let mut expected: BTreeMap<LifecycleState, [usize; 3]> = BTreeMap::new();
        for e in events {
            if let Annotation::Finding(f) = &e.annotation {
                let comments = events
                    .iter()
                    .filter(|c| matches!(&c.annotation, Annotation::Comment(c) if c.target.0 == e.seq))
                    .count();
                let row = expected.entry(naive_state(events, e.seq)).or_default();
                row[0] += 1;
                row[1] += f.data_refs.len();
                row[2] += comments;
            }
        }
        let got: BTreeMap<LifecycleState, [usize; 3]> = report::findings(events)
            .into_iter()
            .map(|r| (r.state, [r.findings, r.data_refs, r.comments]))
            .collect();
        prop_assert_eq!(got, expected);

        // discrepancies: one count per distinct source of each discrepant cell
        let mut expected: BTreeMap<(String, String), [usize; 3]> = BTreeMap::new();
        for e in events {
            if let Annotation::Provenance(p) = &e.annotation {
                if p.status != RedundancyStatus::Discrepant {
                    continue;
                }
                let chosen_source = events.iter().find_map(|r| match &r.annotation {
                    Annotation::Resolution(r) if r.cell == p.cell => Some(r.chosen_source.clone()),
                    _ => None,
                });
                let sources: BTreeSet<&String> = p.sources.iter().map(|s| &s.source).collect();
                for s in sources {
                    let row = expected.entry((p.cell.dimension.clone(), s.clone())).or_default();
                    row[0] += 1;
                    row[1] += usize::from(chosen_source.as_ref() == Some(s));
                    row[2] += usize::from(p.chosen.is_none());
                }
            }
        }
        let got: BTreeMap<(String, String), [usize; 3]> = report::discrepancies(events)
            .into_iter()
            .map(|r| ((r.dimension, r.source), [r.discrepant, r.chosen, r.unresolved]))
            .collect();
        prop_assert_eq!(got, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn session_logs_survive_a_disk_round_trip(seed in any::<u64>(), actions in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wb = random_session(&mut rng, actions);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("annotations.log");
        {
            let mut log = EventLog::open(&path).unwrap();
            for e in wb.log().events() {
                log.append(e.annotation.clone(), e.wall_time).unwrap();
            }
        }
        let reloaded = EventLog::load(&path).unwrap();
        prop_assert_eq!(reloaded.events(), wb.log().events());
        let check = verify_log(&path).unwrap();
        prop_assert!(check.is_ok(), "{:?}", check.issues);
        prop_assert_eq!(check.events, wb.log().len());
    }
}
