#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use candor_core::config::load_case;
use candor_core::domain::CaseScenario;
use candor_core::orchestrator::{ClinicianInput, Orchestrator, SequentialIds, StepClock, TurnResult};
use candor_core::provider::scripted::{FixtureScript, ScriptedFactory};
use candor_core::session::SessionOptions;
use candor_core::store::SessionStore;
use chrono::{Duration, TimeZone, Utc};

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn golden_dir() -> PathBuf {
    root().join("fixtures/golden")
}

pub fn golden_case() -> CaseScenario {
    load_case(&root().join("cases/insulin-double-dose.json")).unwrap()
}

pub fn golden_script() -> FixtureScript {
    FixtureScript::load(&golden_dir().join("script.json")).unwrap()
}

pub fn golden_dialog() -> Vec<String> {
    serde_json::from_str(&std::fs::read_to_string(golden_dir().join("dialog.json")).unwrap()).unwrap()
}

pub fn orchestrator(dir: &Path, script: FixtureScript) -> Orchestrator {
    Orchestrator::new(SessionStore::open(dir).unwrap(), Arc::new(ScriptedFactory::new(script)))
        .with_clock(Arc::new(StepClock::new(
            Utc.with_ymd_and_hms(2025, 1, 6, 9, 0, 0).unwrap(),
            Duration::seconds(1),
        )))
        .with_ids(Arc::new(SequentialIds::new("golden")))
}

/// Runs the shipped golden session in `dir`.
pub fn run_golden(dir: &Path) -> (Orchestrator, String, Vec<TurnResult>) {
    let o = orchestrator(dir, golden_script());
    let s = o.create_session(golden_case(), SessionOptions::default()).unwrap();
    let results = golden_dialog()
        .into_iter()
        .map(|t| o.submit_clinician_turn(&s.session_id, ClinicianInput::Text(t)).unwrap())
        .collect();
    (o, s.session_id, results)
}

/// Compares `actual` with the golden file `name`, rewriting it instead when
/// CANDOR_BLESS is set.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("CANDOR_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .unwrap_or(expected.lines().count().min(actual.lines().count()));
        Err(format!("{name} differs from golden at line {}", line + 1))
    }
}
