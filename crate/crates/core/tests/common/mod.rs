//! Shared fixtures, random generators and brute-force oracles for the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use annofuse::cleansing::{CorrectionRule, EditRequest, NewValue};
use annofuse::dataset::{Dataset, DatasetRecord};
use annofuse::ingest::FusionConfig;
use annofuse::model::{
    AnnotationId, AnnotationKind, CellKey, EditScope, Qualification, RedundancyStatus,
    Reliability, Scalar, SourceHierarchy, SourceValue, Timestamp, Tolerance, User, UserRegistry,
    Verdict,
};
use annofuse::workbench::{Clock, SteppingClock, Workbench};
use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Minimal bytes carrying the PNG signature plus a distinguishing tag.
pub fn png(tag: &[u8]) -> Vec<u8> {
    let mut bytes = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    bytes.extend_from_slice(tag);
    bytes
}

pub fn users() -> UserRegistry {
    UserRegistry::new([
        User::new("ana", "Ana Analyst", Qualification::Analyst),
        User::new("eve", "Dr. Eve Expert", Qualification::Expert),
        User::new("eli", "Dr. Eli Expert", Qualification::Expert),
    ])
    .unwrap()
}

pub fn t(day: i64) -> Timestamp {
    Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap() + Duration::days(day)
}

pub fn stepping_clock() -> Box<dyn Clock> {
    Box::new(SteppingClock::new(
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        Duration::seconds(1),
    ))
}

// ---------------------------------------------------------------- fusion

pub const SOURCES: [&str; 5] = ["device_export", "doctoral_letter", "management", "lab", "registry"];

#[derive(Debug, Clone)]
pub struct Instance {
    pub values: Vec<SourceValue>,
    pub hierarchies: Vec<SourceHierarchy>,
}

fn random_scalar(rng: &mut ChaCha8Rng, dimension: &str) -> Scalar {
    let numeric = match dimension {
        "va" => rng.gen_bool(0.95),
        "dx" => rng.gen_bool(0.05),
        _ => rng.gen_bool(0.5),
    };
    if numeric {
        // small pool so that agreement is common; one value sits within
        // tolerance of another
        let pool = [0.5, 0.8, 0.8 + 1e-12, 1.0, 0.25];
        let unit = rng.gen_bool(0.05).then(|| "logmar".to_string());
        Scalar::numeric_with_unit(*pool.choose(rng).unwrap(), unit).unwrap()
    } else {
        Scalar::categorical(*["AMD", "DME", "RVO"].choose(rng).unwrap())
    }
}

/// Up to 5 sources, up to 20 cells, numeric and categorical dimensions.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_sources = rng.gen_range(1..=5);
    let sources = &SOURCES[..n_sources];
    let n_cells = rng.gen_range(0..=20);
    let mut values = Vec::new();
    for c in 0..n_cells {
        let dimension = *["va", "dx", "iop"].choose(rng).unwrap();
        let cell = CellKey::new(format!("P{}", c % 7), dimension, t(c as i64)).unwrap();
        let contributors = rng.gen_range(1..=n_sources);
        let mut chosen: Vec<&str> = sources.to_vec();
        chosen.shuffle(rng);
        for source in &chosen[..contributors] {
            // occasionally a source reports the same cell twice
            for _ in 0..if rng.gen_bool(0.1) { 2 } else { 1 } {
                values.push(
                    SourceValue::new(
                        cell.clone(),
                        random_scalar(rng, dimension),
                        *source,
                        t(c as i64 + rng.gen_range(0..3)),
                        if rng.gen_bool(0.5) { Reliability::Primary } else { Reliability::Secondary },
                    )
                    .unwrap(),
                );
            }
        }
    }
    values.shuffle(rng);
    let mut hierarchies = Vec::new();
    for dimension in ["va", "dx", "iop"] {
        if rng.gen_bool(0.6) {
            let mut order: Vec<String> = SOURCES.iter().map(|s| s.to_string()).collect();
            order.shuffle(rng);
            order.truncate(rng.gen_range(1..=5));
            hierarchies.push(SourceHierarchy::new(dimension, order).unwrap());
        }
    }
    Instance { values, hierarchies }
}

fn naive_equal(a: &Scalar, b: &Scalar, tol: f64) -> bool {
    match (a, b) {
        (Scalar::Categorical { value: x }, Scalar::Categorical { value: y }) => x == y,
        (Scalar::Numeric { value: x, unit: ux }, Scalar::Numeric { value: y, unit: uy }) => {
            ux == uy && (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
        }
        _ => false,
    }
}

/// Sort key that lists numeric before categorical, numbers by unit then
/// value, labels alphabetically.
fn naive_value_key(v: &Scalar) -> (u8, Option<String>, i64, String) {
    match v {
        Scalar::Numeric { value, unit } => {
            // total order on finite floats via ordered bit pattern
            let bits = value.to_bits() as i64;
            let ordered = if bits < 0 { bits ^ i64::MAX } else { bits };
            (0, unit.clone(), ordered, String::new())
        }
        Scalar::Categorical { value } => (1, None, 0, value.clone()),
    }
}

fn tie_key(v: &SourceValue) -> (String, Timestamp, (u8, Option<String>, i64, String), Reliability) {
    (v.source.clone(), v.recorded_at, naive_value_key(&v.value), v.reliability)
}

/// Independent per-cell recomputation: status and chosen value.
pub fn oracle_fuse(
    values: &[SourceValue],
    hierarchies: &[SourceHierarchy],
    tol: f64,
) -> BTreeMap<CellKey, (RedundancyStatus, Option<Scalar>)> {
    let mut keys: Vec<CellKey> = Vec::new();
    for v in values {
        if !keys.contains(&v.cell) {
            keys.push(v.cell.clone());
        }
    }
    let mut out = BTreeMap::new();
    for key in keys {
        let group: Vec<&SourceValue> = values.iter().filter(|v| v.cell == key).collect();
        let mut consistent = true;
        for a in &group {
            for b in &group {
                if !naive_equal(&a.value, &b.value, tol) {
                    consistent = false;
                }
            }
        }
        let status = if group.len() == 1 {
            RedundancyStatus::SingleSource
        } else if consistent {
            RedundancyStatus::RedundantConsistent
        } else {
            RedundancyStatus::Discrepant
        };
        let hierarchy = hierarchies.iter().find(|h| h.dimension == key.dimension);
        let by_hierarchy = hierarchy.and_then(|h| {
            let top = h.priority.iter().find(|s| group.iter().any(|v| &v.source == *s))?;
            group
                .iter()
                .filter(|v| &v.source == top)
                .min_by(|a, b| b.recorded_at.cmp(&a.recorded_at).then_with(|| tie_key(a).cmp(&tie_key(b))))
                .map(|v| v.value.clone())
        });
        let earliest = group
            .iter()
            .min_by(|a, b| a.recorded_at.cmp(&b.recorded_at).then_with(|| tie_key(a).cmp(&tie_key(b))))
            .map(|v| v.value.clone());
        let chosen = match status {
            RedundancyStatus::SingleSource => Some(group[0].value.clone()),
            RedundancyStatus::RedundantConsistent => by_hierarchy.or(earliest),
            RedundancyStatus::Discrepant => by_hierarchy,
        };
        out.insert(key, (status, chosen));
    }
    out
}

// ----------------------------------------------------------------- edits

/// A base dataset of a few patients over a shared time grid with gaps.
pub fn random_base(rng: &mut ChaCha8Rng) -> Dataset {
    let mut data = Dataset::new();
    for p in 0..rng.gen_range(1..=4) {
        for day in 0..rng.gen_range(2..=8) {
            if rng.gen_bool(0.8) {
                let cell = CellKey::new(format!("P{p}"), "va", t(day)).unwrap();
                data.insert(cell, Scalar::numeric(rng.gen_range(-5..=25) as f64 / 10.0).unwrap());
            }
            if rng.gen_bool(0.5) {
                let cell = CellKey::new(format!("P{p}"), "iop", t(day)).unwrap();
                data.insert(cell, Scalar::numeric(rng.gen_range(8..=30) as f64).unwrap());
            }
            if rng.gen_bool(0.2) {
                let cell = CellKey::new(format!("P{p}"), "dx", t(day)).unwrap();
                data.insert(cell, Scalar::categorical(*["AMD", "DME"].choose(rng).unwrap()));
            }
        }
    }
    data
}

#[derive(Debug, Clone)]
pub enum EditAction {
    Manual(EditRequest),
    Rule(CorrectionRule),
}

fn numeric_for(rng: &mut ChaCha8Rng, dimension: &str) -> Scalar {
    match dimension {
        "dx" => Scalar::categorical(*["AMD", "DME", "RVO"].choose(rng).unwrap()),
        "iop" => Scalar::numeric(rng.gen_range(5..=45) as f64).unwrap(),
        _ => Scalar::numeric(rng.gen_range(-10..=30) as f64 / 10.0).unwrap(),
    }
}

/// A random manual or rule edit against `data`. Some requests are invalid
/// on purpose (kind mismatch, empty scope) and must be rejected cleanly.
pub fn random_edit(rng: &mut ChaCha8Rng, data: &Dataset) -> EditAction {
    let cells: Vec<(&CellKey, &Scalar)> = data.iter().collect();
    let author = if rng.gen_bool(0.5) { "ana" } else { "eve" }.to_string();
    if rng.gen_bool(0.25) || cells.is_empty() {
        let rule = match rng.gen_range(0..4) {
            0 => CorrectionRule::ClampToRange {
                dimension: "va".into(),
                min: 0.0,
                max: 2.0,
            },
            1 => CorrectionRule::UnitRescale {
                dimension: "iop".into(),
                factor: 0.1,
                applies_from: 100.0,
                applies_to: 450.0,
            },
            2 => CorrectionRule::UnitRescale {
                dimension: "va".into(),
                factor: 0.01,
                applies_from: 10.0,
                applies_to: 300.0,
            },
            _ => CorrectionRule::FillForwardMissing {
                dimension: ["va", "iop"].choose(rng).unwrap().to_string(),
            },
        };
        return EditAction::Rule(rule);
    }
    let (cell, _) = *cells.choose(rng).unwrap();
    let (scope, in_scope): (EditScope, Vec<CellKey>) = match rng.gen_range(0..5) {
        0 | 1 => (EditScope::SingleCell { cell: cell.clone() }, vec![cell.clone()]),
        2 => {
            // creating a new cell
            let fresh = CellKey::new(cell.entity_id.clone(), cell.dimension.clone(), t(rng.gen_range(0..12)) + Duration::hours(6)).unwrap();
            (EditScope::SingleCell { cell: fresh.clone() }, vec![fresh])
        }
        3 => {
            let from = t(rng.gen_range(0..6));
            let to = from + Duration::days(rng.gen_range(0..5));
            let scope = EditScope::DimensionRange {
                entity_id: cell.entity_id.clone(),
                dimension: cell.dimension.clone(),
                from,
                to,
            };
            let covered = data.cells_in(&scope).map(|(k, _)| k.clone()).collect();
            (scope, covered)
        }
        _ => {
            let scope = EditScope::EntityWide {
                entity_id: cell.entity_id.clone(),
            };
            let covered = data.cells_in(&scope).map(|(k, _)| k.clone()).collect();
            (scope, covered)
        }
    };
    let new_value = if rng.gen_bool(0.5) || in_scope.is_empty() {
        NewValue::Uniform(numeric_for(rng, &cell.dimension))
    } else {
        NewValue::PerCell(
            in_scope
                .iter()
                .map(|k| DatasetRecord {
                    cell: k.clone(),
                    value: numeric_for(rng, &k.dimension),
                })
                .collect(),
        )
    };
    EditAction::Manual(EditRequest {
        scope,
        new_value,
        author,
        rationale: "checked against the original record".into(),
        rule_set: None,
    })
}

/// Bit-exact rendering of a dataset for equality checks.
pub fn bits(data: &Dataset) -> Vec<(CellKey, String)> {
    data.iter()
        .map(|(k, v)| {
            let repr = match v {
                Scalar::Numeric { value, unit } => format!("n:{:016x}:{unit:?}", value.to_bits()),
                Scalar::Categorical { value } => format!("c:{value}"),
            };
            (k.clone(), repr)
        })
        .collect()
}

// ------------------------------------------------------------------ logs

/// Drives a workbench through a random session: fusion, edits, rule edits,
/// findings, comments and votes (some of them rejected).
pub fn random_session(rng: &mut ChaCha8Rng, actions: usize) -> Workbench {
    let instance = random_instance(rng);
    let fusion = FusionConfig {
        hierarchies: instance.hierarchies.clone(),
        tolerance: Tolerance::default(),
    };
    let mut wb = Workbench::in_memory(users(), fusion, stepping_clock());
    if !instance.values.is_empty() {
        wb.add_values("all", instance.values).unwrap();
        wb.fuse().unwrap();
    }
    for i in 0..actions {
        let votable: Vec<AnnotationId> = wb
            .log()
            .events()
            .iter()
            .filter(|e| e.annotation.kind().is_votable())
            .map(|e| e.id())
            .collect();
        let any: Vec<AnnotationId> = wb.log().events().iter().map(|e| e.id()).collect();
        let who = *["ana", "eve", "eli"].choose(rng).unwrap();
        match rng.gen_range(0..6) {
            0 | 1 => {
                let action = random_edit(rng, wb.current());
                let _ = match action {
                    EditAction::Manual(r) => wb.edit(&r).map(|_| ()),
                    EditAction::Rule(r) => wb.rule_edit(&r, who).map(|_| ()),
                };
            }
            2 => {
                let cells: Vec<CellKey> = wb.current().iter().map(|(k, _)| k.clone()).take(rng.gen_range(0..4)).collect();
                let _ = wb.finding(&format!("finding {i}"), png(&[i as u8]), cells, who, rng.gen_bool(0.5));
            }
            3 => {
                if let Some(target) = any.choose(rng) {
                    wb.comment(*target, &format!("comment {i}"), who).unwrap();
                }
            }
            _ => {
                if let Some(target) = votable.choose(rng) {
                    let verdict = if rng.gen_bool(0.5) { Verdict::Confirm } else { Verdict::Reject };
                    let result = wb.vote(*target, verdict, who);
                    assert_eq!(result.is_ok(), who != "ana");
                }
            }
        }
    }
    wb
}

pub fn kind_counts(wb: &Workbench) -> BTreeMap<AnnotationKind, usize> {
    let mut out = BTreeMap::new();
    for e in wb.log().events() {
        *out.entry(e.annotation.kind()).or_insert(0) += 1;
    }
    out
}

// ------------------------------------------------------------------- api

pub mod http {
    use axum::body::Body;
    use axum::http::{Request, StatusCode};
    use axum::Router;
    use http_body_util::BodyExt;
    use serde_json::Value;
    use tower::ServiceExt;

    pub const BOUNDARY: &str = "annofuse-test-boundary";

    pub struct Reply {
        pub status: StatusCode,
        pub content_type: Option<String>,
        pub body: Vec<u8>,
    }

    impl Reply {
        pub fn json(&self) -> Value {
            serde_json::from_slice(&self.body).unwrap_or_else(|e| {
                panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.body))
            })
        }
    }

    pub async fn send(
        app: &Router,
        method: &str,
        uri: &str,
        user: Option<&str>,
        content_type: Option<&str>,
        body: Vec<u8>,
    ) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(u) = user {
            req = req.header("x-user-id", u);
        }
        if let Some(c) = content_type {
            req = req.header("content-type", c);
        }
        let response = app
            .clone()
            .oneshot(req.body(Body::from(body)).unwrap())
            .await
            .unwrap();
        let status = response.status();
        let content_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply {
            status,
            content_type,
            body,
        }
    }

    pub async fn get(app: &Router, uri: &str, user: &str) -> Reply {
        send(app, "GET", uri, Some(user), None, Vec::new()).await
    }

    pub async fn post_json(app: &Router, uri: &str, user: &str, body: &Value) -> Reply {
        send(
            app,
            "POST",
            uri,
            Some(user),
            Some("application/json"),
            serde_json::to_vec(body).unwrap(),
        )
        .await
    }

    /// Builds a multipart body for POST /api/findings.
    pub fn finding_form(text: &str, cells: &Value, snapshot: &[u8]) -> (String, Vec<u8>) {
        let mut body = Vec::new();
        let mut part = |name: &str, extra: &str, content: &[u8]| {
            body.extend_from_slice(
                format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"{extra}\r\n\r\n").as_bytes(),
            );
            body.extend_from_slice(content);
            body.extend_from_slice(b"\r\n");
        };
        part("text", "", text.as_bytes());
        part("cells", "", cells.to_string().as_bytes());
        part(
            "snapshot",
            "; filename=\"view.png\"\r\nContent-Type: image/png",
            snapshot,
        );
        body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
        (format!("multipart/form-data; boundary={BOUNDARY}"), body)
    }

    /// Upload bodies for the two-source fixture, built from the descriptor
    /// file with the CSV inlined.
    pub fn clinic_uploads() -> Vec<Value> {
        let dir = super::fixture("clinic");
        let descriptors: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("sources.json")).unwrap()).unwrap();
        descriptors
            .as_array()
            .unwrap()
            .iter()
            .map(|d| {
                let mut d = d.clone();
                let path = d["path"].as_str().unwrap().to_string();
                d.as_object_mut().unwrap().remove("path");
                let csv = std::fs::read_to_string(dir.join(path)).unwrap();
                serde_json::json!({ "descriptor": d, "csv": csv })
            })
            .collect()
    }
}
