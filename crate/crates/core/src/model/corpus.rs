use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::records::{
    EngagementRecord, LabeledPair, PinRecord, QueryRecord, Signature, DEFAULT_RANKER_DIM,
    DEFAULT_TEXT_DIM, DEFAULT_VISUAL_DIM,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: field `{field}` has dimension {actual}, expected {expected}")]
    Dimension {
        path: PathBuf,
        line: usize,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{path}:{line}: invalid record: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate pin signature {signature}")]
    DuplicateSignature {
        path: PathBuf,
        line: usize,
        signature: Signature,
    },
    #[error("manifest {path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Feature dimensions shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub visual: usize,
    pub text: usize,
    pub ranker_output: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            visual: DEFAULT_VISUAL_DIM,
            text: DEFAULT_TEXT_DIM,
            ranker_output: DEFAULT_RANKER_DIM,
        }
    }
}

/// Locations of the corpus files plus dimension and seed configuration.
///
/// On disk this is a `key=value` text file; relative paths resolve against the
/// manifest's own directory. `trends` and `taxonomy` are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub pins: PathBuf,
    pub queries: PathBuf,
    pub engagement: PathBuf,
    pub labels: PathBuf,
    pub trends: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub dims: Dims,
    pub seed: u64,
}

impl CorpusManifest {
    /// Manifest with the standard file names inside `dir`.
    pub fn in_dir(dir: &Path, dims: Dims, seed: u64) -> Self {
        Self {
            pins: dir.join("pins.jsonl"),
            queries: dir.join("queries.jsonl"),
            engagement: dir.join("engagement.jsonl"),
            labels: dir.join("labels.jsonl"),
            trends: Some(dir.join("trends.jsonl")),
            taxonomy: Some(dir.join("taxonomy.json")),
            dims,
            seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, path)
    }

    fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self, CorpusError> {
        let err = |line: usize, message: String| CorpusError::Manifest {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut kv = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected key=value, got `{line}`")))?;
            let key = k.trim().to_string();
            if !MANIFEST_KEYS.contains(&key.as_str()) {
                return Err(err(i + 1, format!("unknown key `{key}`")));
            }
            kv.insert(key, (i + 1, v.trim().to_string()));
        }
        let path_of = |key: &str| -> Result<PathBuf, CorpusError> {
            let (_, v) = kv
                .get(key)
                .ok_or_else(|| err(0, format!("missing required key `{key}`")))?;
            Ok(base.join(v))
        };
        let num_of = |key: &str, default: u64| -> Result<u64, CorpusError> {
            match kv.get(key) {
                None => Ok(default),
                Some((line, v)) => v
                    .parse::<u64>()
                    .map_err(|e| err(*line, format!("`{key}`: {e}"))),
            }
        };
        let dims = Dims {
            visual: num_of("d_v", DEFAULT_VISUAL_DIM as u64)? as usize,
            text: num_of("d_t", DEFAULT_TEXT_DIM as u64)? as usize,
            ranker_output: num_of("ranker_dim", DEFAULT_RANKER_DIM as u64)? as usize,
        };
        if dims.visual == 0 || dims.text == 0 || dims.ranker_output == 0 {
            return Err(err(0, "dimensions must be positive".into()));
        }
        let manifest = Self {
            pins: path_of("pins")?,
            queries: path_of("queries")?,
            engagement: path_of("engagement")?,
            labels: path_of("labels")?,
            trends: kv.get("trends").map(|(_, v)| base.join(v)),
            taxonomy: kv.get("taxonomy").map(|(_, v)| base.join(v)),
            dims,
            seed: num_of("seed", 0)?,
        };
        for p in manifest.required_paths() {
            if !p.exists() {
                return Err(err(0, format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(manifest)
    }

    fn required_paths(&self) -> [&Path; 4] {
        [&self.pins, &self.queries, &self.engagement, &self.labels]
    }

    /// Writes the manifest with paths relative to `path`'s directory when possible.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let rel = |p: &Path| -> String {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut out = String::new();
        out.push_str(&format!("pins={}\n", rel(&self.pins)));
        out.push_str(&format!("queries={}\n", rel(&self.queries)));
        out.push_str(&format!("engagement={}\n", rel(&self.engagement)));
        out.push_str(&format!("labels={}\n", rel(&self.labels)));
        if let Some(t) = &self.trends {
            out.push_str(&format!("trends={}\n", rel(t)));
        }
        if let Some(t) = &self.taxonomy {
            out.push_str(&format!("taxonomy={}\n", rel(t)));
        }
        out.push_str(&format!("d_v={}\n", self.dims.visual));
        out.push_str(&format!("d_t={}\n", self.dims.text));
        out.push_str(&format!("ranker_dim={}\n", self.dims.ranker_output));
        out.push_str(&format!("seed={}\n", self.seed));
        fs::write(path, out).map_err(|e| CorpusError::io(path, e))
    }
}

const MANIFEST_KEYS: [&str; 10] = [
    "pins",
    "queries",
    "engagement",
    "labels",
    "trends",
    "taxonomy",
    "d_v",
    "d_t",
    "ranker_dim",
    "seed",
];

/// Immutable in-memory corpus. Every record invariant has been checked.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub dims: Dims,
    pub seed: u64,
    pub pins: Vec<PinRecord>,
    pub queries: Vec<QueryRecord>,
    pub engagement: Vec<EngagementRecord>,
    pub labels: Vec<LabeledPair>,
}

impl Corpus {
    pub fn pin(&self, signature: Signature) -> Option<&PinRecord> {
        // pins are kept sorted by signature at load
        self.pins
            .binary_search_by_key(&signature, |p| p.signature)
            .ok()
            .map(|i| &self.pins[i])
    }

    pub fn query(&self, text: &str) -> Option<&QueryRecord> {
        self.queries.iter().find(|q| q.text == text)
    }
}

pub fn load_corpus(manifest: &CorpusManifest) -> Result<Corpus, CorpusError> {
    let dims = manifest.dims;
    let mut pins: Vec<PinRecord> = read_jsonl(&manifest.pins)?;
    let mut seen = HashSet::with_capacity(pins.len());
    for (i, pin) in pins.iter().enumerate() {
        let line = i + 1;
        check_pin(pin, dims, &manifest.pins, line)?;
        if !seen.insert(pin.signature) {
            return Err(CorpusError::DuplicateSignature {
                path: manifest.pins.clone(),
                line,
                signature: pin.signature,
            });
        }
    }
    pins.sort_by_key(|p| p.signature);

    let queries: Vec<QueryRecord> = read_jsonl(&manifest.queries)?;
    for (i, q) in queries.iter().enumerate() {
        check_query(q, dims, &manifest.queries, i + 1)?;
    }

    let engagement: Vec<EngagementRecord> = read_jsonl(&manifest.engagement)?;
    for (i, e) in engagement.iter().enumerate() {
        let invalid = |message: String| CorpusError::Invalid {
            path: manifest.engagement.clone(),
            line: i + 1,
            message,
        };
        if e.clicks > e.impressions {
            return Err(invalid(format!(
                "clicks ({}) exceed impressions ({})",
                e.clicks, e.impressions
            )));
        }
        if !(e.avg_position >= 1.0) || !e.avg_position.is_finite() {
            return Err(invalid(format!("avg_position {} must be >= 1", e.avg_position)));
        }
    }

    let labels: Vec<LabeledPair> = read_jsonl(&manifest.labels)?;
    for (i, l) in labels.iter().enumerate() {
        if !(0.0..=1.0).contains(&l.navboost_coverage) {
            return Err(CorpusError::Invalid {
                path: manifest.labels.clone(),
                line: i + 1,
                message: format!("navboost_coverage {} outside [0, 1]", l.navboost_coverage),
            });
        }
        check_query(&l.query, dims, &manifest.labels, i + 1)?;
    }

    Ok(Corpus {
        dims,
        seed: manifest.seed,
        pins,
        queries,
        engagement,
        labels,
    })
}

/// Writes the four corpus files named by `manifest`.
pub fn save_corpus(corpus: &Corpus, manifest: &CorpusManifest) -> Result<(), CorpusError> {
    write_jsonl(&manifest.pins, &corpus.pins)?;
    write_jsonl(&manifest.queries, &corpus.queries)?;
    write_jsonl(&manifest.engagement, &corpus.engagement)?;
    write_jsonl(&manifest.labels, &corpus.labels)?;
    Ok(())
}

fn check_pin(pin: &PinRecord, dims: Dims, path: &Path, line: usize) -> Result<(), CorpusError> {
    let dim_err = |field, expected, actual| CorpusError::Dimension {
        path: path.to_path_buf(),
        line,
        field,
        expected,
        actual,
    };
    if pin.visual_embedding.len() != dims.visual {
        return Err(dim_err("visual_embedding", dims.visual, pin.visual_embedding.len()));
    }
    if pin.text_embedding.len() != dims.text {
        return Err(dim_err("text_embedding", dims.text, pin.text_embedding.len()));
    }
    let finite = pin
        .visual_embedding
        .iter()
        .chain(&pin.text_embedding)
        .all(|x| x.is_finite());
    let invalid = |message: String| CorpusError::Invalid {
        path: path.to_path_buf(),
        line,
        message,
    };
    if !finite {
        return Err(invalid("embedding contains non-finite values".into()));
    }
    if !(0.0..=1.0).contains(&pin.perception_score) {
        return Err(invalid(format!(
            "perception_score {} outside [0, 1]",
            pin.perception_score
        )));
    }
    Ok(())
}

fn check_query(q: &QueryRecord, dims: Dims, path: &Path, line: usize) -> Result<(), CorpusError> {
    if q.text.trim().is_empty() || q.text.trim() != q.text {
        return Err(CorpusError::Invalid {
            path: path.to_path_buf(),
            line,
            message: format!("query text `{}` must be trimmed and non-empty", q.text),
        });
    }
    if let Some(e) = &q.embedding {
        if e.len() != dims.text {
            return Err(CorpusError::Dimension {
                path: path.to_path_buf(),
                line,
                field: "embedding",
                expected: dims.text,
                actual: e.len(),
            });
        }
    }
    Ok(())
}

/// Reads one JSON value per non-blank line; errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::records::QueryCategory;

    fn pin(sig: u64, dv: usize, dt: usize) -> PinRecord {
        PinRecord {
            signature: sig,
            visual_embedding: vec![0.5; dv],
            text_embedding: vec![0.25; dt],
            perception_score: 0.7,
            title: format!("pin {sig}"),
            description: String::new(),
            board_id: Some(1),
            category: "fashion".into(),
            language: "en-US".into(),
        }
    }

    fn write_fixture(dir: &Path, pins: &[PinRecord]) -> CorpusManifest {
        let dims = Dims {
            visual: 4,
            text: 3,
            ranker_output: 2,
        };
        let m = CorpusManifest {
            trends: None,
            taxonomy: None,
            ..CorpusManifest::in_dir(dir, dims, 7)
        };
        write_jsonl(&m.pins, pins).unwrap();
        let q = QueryRecord::new("sage green dress", QueryCategory::Description, "en").unwrap();
        write_jsonl(&m.queries, &[q]).unwrap();
        write_jsonl::<EngagementRecord>(&m.engagement, &[]).unwrap();
        write_jsonl::<LabeledPair>(&m.labels, &[]).unwrap();
        m
    }

    #[test]
    fn loads_three_pins() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &[pin(3, 4, 3), pin(1, 4, 3), pin(2, 4, 3)]);
        let c = load_corpus(&m).unwrap();
        assert_eq!(c.pins.len(), 3);
        assert_eq!(c.pin(2).unwrap().title, "pin 2");
    }

    #[test]
    fn rejects_short_visual_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &[pin(1, 3, 3)]);
        match load_corpus(&m) {
            Err(CorpusError::Dimension {
                field,
                expected,
                actual,
                line,
                ..
            }) => {
                assert_eq!((field, expected, actual, line), ("visual_embedding", 4, 3, 1));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn full_width_dimension_error_names_1028() {
        let dir = tempfile::tempdir().unwrap();
        let m = CorpusManifest {
            dims: Dims::default(),
            ..write_fixture(dir.path(), &[])
        };
        write_jsonl(&m.pins, &[pin(1, 1027, 768)]).unwrap();
        write_jsonl::<QueryRecord>(&m.queries, &[]).unwrap();
        let err = load_corpus(&m).unwrap_err().to_string();
        assert!(err.contains("visual_embedding") && err.contains("1028"), "{err}");
    }

    #[test]
    fn rejects_duplicate_signature() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &[pin(42, 4, 3), pin(42, 4, 3)]);
        assert!(matches!(
            load_corpus(&m),
            Err(CorpusError::DuplicateSignature { signature: 42, line: 2, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &[pin(1, 4, 3)]);
        let mut text = fs::read_to_string(&m.pins).unwrap();
        text.push_str("{not json\n");
        fs::write(&m.pins, text).unwrap();
        assert!(matches!(
            load_corpus(&m),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_clicks_above_impressions() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &[pin(1, 4, 3)]);
        let e = EngagementRecord {
            query_text: "q".into(),
            pin_signature: 1,
            impressions: 3,
            clicks: 4,
            avg_position: 2.0,
        };
        write_jsonl(&m.engagement, &[e]).unwrap();
        assert!(matches!(load_corpus(&m), Err(CorpusError::Invalid { .. })));
    }

    #[test]
    fn manifest_round_trips_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &[pin(1, 4, 3)]);
        let path = dir.path().join("manifest.txt");
        m.save(&path).unwrap();
        assert_eq!(CorpusManifest::load(&path).unwrap(), m);

        fs::write(&path, "pins=pins.jsonl\nbogus=1\n").unwrap();
        assert!(matches!(
            CorpusManifest::load(&path),
            Err(CorpusError::Manifest { line: 2, .. })
        ));
    }

    #[test]
    fn manifest_requires_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        fs::write(
            &path,
            "pins=a.jsonl\nqueries=b.jsonl\nengagement=c.jsonl\nlabels=d.jsonl\n",
        )
        .unwrap();
        assert!(CorpusManifest::load(&path).is_err());
    }
}
