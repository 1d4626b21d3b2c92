//! Predefined cases from the library directory plus bespoke cases created
//! through the API, which are kept under the data directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use candor_core::config::{load_case_library, LoadError};
use candor_core::domain::{CaseOrigin, CaseScenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub specialty: String,
    pub patient_name: String,
    pub speaker: String,
    pub origin: CaseOrigin,
}

impl CaseSummary {
    fn of(c: &CaseScenario) -> Self {
        CaseSummary {
            case_id: c.case_id.0.clone(),
            specialty: c.specialty.clone(),
            patient_name: c.patient_profile.name.clone(),
            speaker: c.interlocutor.label().to_ascii_lowercase(),
            origin: c.origin,
        }
    }
}

pub struct CaseCatalog {
    cases: RwLock<BTreeMap<String, CaseScenario>>,
    bespoke_dir: PathBuf,
}

impl CaseCatalog {
    /// Loads `library` (when given) and previously stored bespoke cases.
    pub fn load(library: Option<&Path>, bespoke_dir: PathBuf) -> Result<Self, LoadError> {
        let mut cases = BTreeMap::new();
        if let Some(dir) = library {
            for c in load_case_library(dir)? {
                cases.insert(c.case_id.0.clone(), c);
            }
        }
        std::fs::create_dir_all(&bespoke_dir).map_err(|source| LoadError::Io {
            path: bespoke_dir.clone(),
            source,
        })?;
        for c in load_case_library(&bespoke_dir)? {
            cases.insert(c.case_id.0.clone(), c);
        }
        Ok(CaseCatalog {
            cases: RwLock::new(cases),
            bespoke_dir,
        })
    }

    /// Summaries, optionally limited to one specialty (case-insensitive).
    pub fn list(&self, specialty: Option<&str>) -> Vec<CaseSummary> {
        let cases = self.cases.read().expect("catalog lock");
        cases
            .values()
            .filter(|c| specialty.is_none_or(|s| c.specialty.eq_ignore_ascii_case(s.trim())))
            .map(CaseSummary::of)
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<CaseScenario> {
        self.cases.read().expect("catalog lock").get(id).cloned()
    }

    /// Stores a validated bespoke case. Returns false if the id is taken.
    pub fn insert(&self, case: CaseScenario) -> std::io::Result<bool> {
        let mut cases = self.cases.write().expect("catalog lock");
        if cases.contains_key(&case.case_id.0) {
            return Ok(false);
        }
        let path = self.bespoke_dir.join(format!("{}.json", case.case_id.0));
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&case).expect("case serializes"))?;
        std::fs::rename(&tmp, &path)?;
        cases.insert(case.case_id.0.clone(), case);
        Ok(true)
    }
}
