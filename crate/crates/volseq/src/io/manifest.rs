//! Dataset manifest: one JSON document listing every subject's scans,
//! survival label, and covariates. Paths are relative to the manifest's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub scans: Vec<ScanEntry>,
    pub survival: SurvivalEntry,
    pub covariates: Covariates,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanEntry {
    pub time_years: f64,
    pub volume_path: String,
    pub mask_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalEntry {
    pub duration_years: f64,
    pub event: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Covariates {
    pub age: f64,
    pub sex: f64,
    pub smoking: f64,
}

impl Covariates {
    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.age, self.sex, self.smoking]
    }

    pub fn names() -> Vec<String> {
        vec!["age".into(), "sex".into(), "smoking".into()]
    }
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn subject(&self, id: &str) -> Result<&SubjectEntry> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Precondition(format!("subject {id} not in manifest")))
    }
}

/// Parse and semantically validate a manifest; does not touch the
/// filesystem.
pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let manifest: Manifest =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("manifest JSON: {e}")))?;
    if manifest.subjects.is_empty() {
        return Err(Error::Format("manifest lists no subjects".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for s in &manifest.subjects {
        if !seen.insert(s.id.clone()) {
            return Err(Error::Format(format!("duplicate subject id {}", s.id)));
        }
        if s.scans.is_empty() {
            return Err(Error::Format(format!("subject {} has no scans", s.id)));
        }
        for pair in s.scans.windows(2) {
            if !(pair[1].time_years > pair[0].time_years) {
                return Err(Error::Format(format!(
                    "subject {}: scan times must be strictly increasing ({} then {})",
                    s.id, pair[0].time_years, pair[1].time_years
                )));
            }
        }
        if !s.scans.iter().all(|sc| sc.time_years.is_finite()) {
            return Err(Error::Format(format!("subject {}: non-finite scan time", s.id)));
        }
        if !(s.survival.duration_years > 0.0) {
            return Err(Error::Format(format!(
                "subject {}: survival duration must be positive",
                s.id
            )));
        }
    }
    Ok(manifest)
}

/// Load a manifest from disk and verify every referenced path exists.
/// Returns the manifest together with the directory scan paths are
/// resolved against.
pub fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest =
        parse_manifest(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    for s in &manifest.subjects {
        for scan in &s.scans {
            for p in [&scan.volume_path, &scan.mask_path] {
                let full = base.join(p);
                if !full.exists() {
                    return Err(Error::Format(format!(
                        "manifest references missing file {}",
                        full.display()
                    )));
                }
            }
        }
    }
    Ok((manifest, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        r#"{
            "subjects": [{
                "id": "s000",
                "scans": [
                    {"time_years": 0.0, "volume_path": "s000_t0.00.vol", "mask_path": "s000_t0.00.vol"},
                    {"time_years": 1.1, "volume_path": "s000_t1.10.vol", "mask_path": "s000_t1.10.vol"}
                ],
                "survival": {"duration_years": 3.5, "event": true},
                "covariates": {"age": 63.0, "sex": 1.0, "smoking": 0.0}
            }]
        }"#
        .to_string()
    }

    #[test]
    fn parse_and_roundtrip() {
        let m = parse_manifest(sample_json().as_bytes()).unwrap();
        assert_eq!(m.subjects.len(), 1);
        assert_eq!(m.subjects[0].scans[1].time_years, 1.1);
        let again = parse_manifest(m.to_json().as_bytes()).unwrap();
        assert_eq!(again.subjects[0].id, "s000");
    }

    #[test]
    fn rejects_non_increasing_times() {
        let bad = sample_json().replace("1.1", "0.0");
        assert!(parse_manifest(bad.as_bytes()).is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_garbage() {
        assert!(parse_manifest(b"not json").is_err());
        let extra = sample_json().replace("\"id\"", "\"extra\": 1, \"id\"");
        assert!(parse_manifest(extra.as_bytes()).is_err());
    }

    #[test]
    fn load_checks_referenced_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, sample_json()).unwrap();
        assert!(load_manifest(&path).is_err());
    }
}
