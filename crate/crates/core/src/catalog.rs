//! JSON witness catalogs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critical_sets::{CriticalWitness, SolverProvenance, WITNESS_TOL};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: i64 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub schema_version: i64,
    pub generated_at: String,
    pub tool_version: String,
    pub records: Vec<CriticalWitness>,
    /// Parallel to `records`; `null` for closed-form entries.
    pub provenance: Vec<Option<SolverProvenance>>,
}

fn record_order(a: &CriticalWitness, b: &CriticalWitness) -> std::cmp::Ordering {
    let beta = |w: &CriticalWitness| match w.set {
        crate::critical_sets::CriticalSetId::RBeta { beta } => beta,
        _ => 0.0,
    };
    a.set.rank().cmp(&b.set.rank()).then(beta(a).total_cmp(&beta(b))).then(a.length.total_cmp(&b.length))
}

impl CatalogDocument {
    /// Sorts by set then length and stamps the current time.
    pub fn new(records: Vec<CriticalWitness>) -> Self {
        let generated_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        Self::with_timestamp(records, generated_at)
    }

    pub fn with_timestamp(mut records: Vec<CriticalWitness>, generated_at: String) -> Self {
        records.sort_by(record_order);
        let provenance = records.iter().map(|r| r.provenance.clone()).collect();
        CatalogDocument { schema_version: SCHEMA_VERSION, generated_at, tool_version: TOOL_VERSION.to_string(), records, provenance }
    }

    /// Canonical text: sorted keys, shortest round-trip floats, trailing newline.
    pub fn to_canonical_json(&self) -> Result<String> {
        // serde_json::Value keeps object keys in a BTreeMap, which sorts them
        let value = serde_json::to_value(self).map_err(|e| Error::Format(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_i64())
            .ok_or_else(|| Error::Format("missing integer schema_version".into()))?;
        if found != SCHEMA_VERSION {
            return Err(Error::Schema { found, expected: SCHEMA_VERSION });
        }
        let mut doc: CatalogDocument = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
        if doc.provenance.len() != doc.records.len() {
            return Err(Error::Format(format!(
                "{} provenance entries for {} records",
                doc.provenance.len(),
                doc.records.len()
            )));
        }
        for (i, (rec, prov)) in doc.records.iter_mut().zip(&doc.provenance).enumerate() {
            let tol = 10.0 * prov.as_ref().map_or(WITNESS_TOL, |p| p.tol);
            rec.validate(tol).map_err(|reason| Error::Corrupt { index: i, reason })?;
            rec.provenance = prov.clone();
        }
        Ok(doc)
    }
}

/// Write-then-rename, so readers never see a partial file.
pub fn save_catalog(doc: &CatalogDocument, path: &Path) -> Result<()> {
    let text = doc.to_canonical_json()?;
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(text.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load_catalog(path: &Path) -> Result<CatalogDocument> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    CatalogDocument::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical_sets::{enumerate_rosier, enumerate_transcendental, CriticalSetId, SearchBox};

    fn sample() -> CatalogDocument {
        let mut recs = enumerate_transcendental(CriticalSetId::NStar, &SearchBox::square(8.0), 4.0, 12.0).unwrap();
        recs.extend(enumerate_rosier(12.0));
        CatalogDocument::with_timestamp(recs, "2026-01-01T00:00:00Z".into())
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.json");
        let doc = CatalogDocument::with_timestamp(vec![], "2026-01-01T00:00:00Z".into());
        save_catalog(&doc, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"records\": []"));
        assert_eq!(load_catalog(&p).unwrap(), doc);
    }

    #[test]
    fn sorted_and_byte_stable() {
        let doc = sample();
        assert!(doc.records.windows(2).all(|w| record_order(&w[0], &w[1]).is_le()));
        assert_eq!(doc.records[0].set, CriticalSetId::NRosier);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        save_catalog(&doc, &a).unwrap();
        save_catalog(&doc, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(load_catalog(&a).unwrap(), doc);
    }

    #[test]
    fn complex_numbers_are_pairs() {
        let doc = sample();
        let v = serde_json::to_value(&doc).unwrap();
        let star = v["records"].as_array().unwrap().iter().find(|r| r["set"]["tag"] == "NStar").unwrap();
        assert_eq!(star["witness"]["a"].as_array().unwrap().len(), 2);
        assert_eq!(star["lambda"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn version_and_tamper_errors() {
        let doc = sample();
        let mut v = serde_json::to_value(&doc).unwrap();
        v["schema_version"] = 99.into();
        assert!(matches!(CatalogDocument::from_json(&v.to_string()), Err(Error::Schema { found: 99, expected: 1 })));

        for idx in [0usize, doc.records.len() - 1] {
            let mut v = serde_json::to_value(&doc).unwrap();
            let l = v["records"][idx]["L"].as_f64().unwrap();
            v["records"][idx]["L"] = (l * (1.0 + 1e-6)).into();
            match CatalogDocument::from_json(&v.to_string()) {
                Err(Error::Corrupt { index, .. }) => assert_eq!(index, idx),
                other => panic!("expected corruption, got {other:?}"),
            }
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_catalog(Path::new("/nonexistent/cat.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cat.json"));
    }
}
