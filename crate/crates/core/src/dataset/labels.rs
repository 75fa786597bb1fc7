use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelKey {
    pub doc_id: String,
    pub token_index: usize,
}

impl LabelKey {
    pub fn new(doc_id: impl Into<String>, token_index: usize) -> Self {
        LabelKey {
            doc_id: doc_id.into(),
            token_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Seed,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub label: u8,
    pub source: LabelSource,
    pub revision: u64,
    /// Milliseconds since the Unix epoch; 0 for generated seed labels.
    pub timestamp: u64,
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LabelLine {
    doc_id: String,
    token_index: usize,
    label: u8,
    source: LabelSource,
    revision: u64,
    timestamp: u64,
}

impl LabelLine {
    fn new(key: &LabelKey, rec: &LabelRecord) -> Self {
        LabelLine {
            doc_id: key.doc_id.clone(),
            token_index: key.token_index,
            label: rec.label,
            source: rec.source,
            revision: rec.revision,
            timestamp: rec.timestamp,
        }
    }

    fn split(self) -> (LabelKey, LabelRecord) {
        (
            LabelKey::new(self.doc_id, self.token_index),
            LabelRecord {
                label: self.label,
                source: self.source,
                revision: self.revision,
                timestamp: self.timestamp,
            },
        )
    }
}

/// In-memory label state: the latest record per token.
#[derive(Debug, Clone, Default)]
pub struct LabelStore {
    records: BTreeMap<LabelKey, LabelRecord>,
    /// Token count per known document; `None` accepts any key.
    known: Option<HashMap<String, usize>>,
    writes: u64,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store that only accepts keys of ingested tokens.
    pub fn with_known_tokens(known: HashMap<String, usize>) -> Self {
        LabelStore {
            known: Some(known),
            ..Self::default()
        }
    }

    pub fn check_key(&self, key: &LabelKey) -> Result<(), DatasetError> {
        match &self.known {
            Some(known) if known.get(&key.doc_id).is_none_or(|&n| key.token_index >= n) => {
                Err(DatasetError::UnknownToken {
                    doc_id: key.doc_id.clone(),
                    token_index: key.token_index,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn write(
        &mut self,
        key: LabelKey,
        label: i64,
        source: LabelSource,
        timestamp: u64,
    ) -> Result<LabelRecord, DatasetError> {
        let label = match label {
            0 | 1 => label as u8,
            other => return Err(DatasetError::InvalidLabel(other)),
        };
        self.check_key(&key)?;
        let revision = self.records.get(&key).map_or(0, |r| r.revision) + 1;
        let rec = LabelRecord {
            label,
            source,
            revision,
            timestamp,
        };
        self.records.insert(key, rec.clone());
        self.writes += 1;
        Ok(rec)
    }

    pub fn read(&self, key: &LabelKey) -> Result<&LabelRecord, DatasetError> {
        self.records.get(key).ok_or_else(|| DatasetError::NotFound {
            doc_id: key.doc_id.clone(),
            token_index: key.token_index,
        })
    }

    pub fn get(&self, key: &LabelKey) -> Option<&LabelRecord> {
        self.records.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LabelKey, &LabelRecord)> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of successful writes, including replayed ones.
    pub fn version(&self) -> u64 {
        self.writes
    }

    /// Apply a persisted record. Its revision must move the key forward.
    fn replay(&mut self, key: LabelKey, rec: LabelRecord, line: usize) -> Result<(), DatasetError> {
        if rec.label > 1 {
            return Err(DatasetError::BadLabelRecord {
                line,
                message: format!("label {} is not binary", rec.label),
            });
        }
        if let Some(prev) = self.records.get(&key) {
            if rec.revision <= prev.revision {
                return Err(DatasetError::BadLabelRecord {
                    line,
                    message: format!(
                        "revision {} does not advance {}#{} past {}",
                        rec.revision, key.doc_id, key.token_index, prev.revision
                    ),
                });
            }
        }
        self.check_key(&key)?;
        self.records.insert(key, rec);
        self.writes += 1;
        Ok(())
    }

    /// Rebuild state from a label JSONL stream.
    pub fn load<R: BufRead>(&mut self, reader: R) -> Result<(), DatasetError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LabelLine = serde_json::from_str(&line).map_err(|e| DatasetError::BadLabelRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
            let (key, rec) = parsed.split();
            self.replay(key, rec, i + 1)?;
        }
        Ok(())
    }

    /// Latest labels as a plain lookup.
    pub fn label_map(&self) -> HashMap<(String, usize), u8> {
        self.records
            .iter()
            .map(|(k, r)| ((k.doc_id.clone(), k.token_index), r.label))
            .collect()
    }

    /// Write the latest record of every key, ordered by key.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_lines(&mut w, self.records.iter())?;
        w.flush()
    }
}

fn write_lines<'a, W: Write>(
    w: &mut W,
    records: impl Iterator<Item = (&'a LabelKey, &'a LabelRecord)>,
) -> std::io::Result<()> {
    for (k, r) in records {
        serde_json::to_writer(&mut *w, &LabelLine::new(k, r))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a label JSONL stream into its latest records.
pub fn read_label_jsonl<R: BufRead>(reader: R) -> Result<LabelStore, DatasetError> {
    let mut store = LabelStore::new();
    store.load(reader)?;
    Ok(store)
}

/// Effective training labels: human records override seed records.
pub fn export_effective_labels(seed: &LabelStore, human: &LabelStore) -> Vec<(LabelKey, LabelRecord)> {
    let mut merged: BTreeMap<LabelKey, LabelRecord> =
        seed.iter().map(|(k, r)| (k.clone(), r.clone())).collect();
    for (k, r) in human.iter() {
        if r.source == LabelSource::Human || !merged.contains_key(k) {
            merged.insert(k.clone(), r.clone());
        }
    }
    merged.into_iter().collect()
}

pub fn write_label_records<W: Write>(mut w: W, records: &[(LabelKey, LabelRecord)]) -> std::io::Result<()> {
    write_lines(&mut w, records.iter().map(|(k, r)| (k, r)))?;
    w.flush()
}

/// A [`LabelStore`] backed by an append-only JSONL file.
#[derive(Debug)]
pub struct LabelLog {
    store: LabelStore,
    path: PathBuf,
    file: File,
}

impl LabelLog {
    /// Open (creating if needed) a label log and replay its contents.
    pub fn open(path: impl AsRef<Path>, store: LabelStore) -> Result<Self, DatasetError> {
        let path = path.as_ref().to_path_buf();
        let mut store = store;
        if path.exists() {
            store.load(BufReader::new(File::open(&path)?))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LabelLog { store, path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn store(&self) -> &LabelStore {
        &self.store
    }

    /// Validate a batch, then append every record. Either all writes land
    /// in memory or none do.
    pub fn write_batch(
        &mut self,
        writes: &[(LabelKey, i64)],
        source: LabelSource,
    ) -> Result<Vec<LabelRecord>, DatasetError> {
        for (key, label) in writes {
            if !matches!(label, 0 | 1) {
                return Err(DatasetError::InvalidLabel(*label));
            }
            self.store.check_key(key)?;
        }
        let timestamp = now_millis();
        let mut staged = self.store.clone();
        let mut out = Vec::with_capacity(writes.len());
        let mut buf = Vec::new();
        for (key, label) in writes {
            let rec = staged.write(key.clone(), *label, source, timestamp)?;
            serde_json::to_writer(&mut buf, &LabelLine::new(key, &rec)).map_err(std::io::Error::from)?;
            buf.push(b'\n');
            out.push(rec);
        }
        self.file.write_all(&buf)?;
        self.file.flush()?;
        self.store = staged;
        Ok(out)
    }

    pub fn write(&mut self, key: LabelKey, label: i64, source: LabelSource) -> Result<LabelRecord, DatasetError> {
        let mut recs = self.write_batch(&[(key, label)], source)?;
        Ok(recs.remove(0))
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(i: usize) -> LabelKey {
        LabelKey::new("inv-1", i)
    }

    #[test]
    fn write_then_read() {
        let mut s = LabelStore::new();
        let r = s.write(key(3), 1, LabelSource::Human, 5).unwrap();
        assert_eq!((r.label, r.revision), (1, 1));
        assert_eq!(s.read(&key(3)).unwrap().label, 1);
        let r = s.write(key(3), 0, LabelSource::Human, 6).unwrap();
        assert_eq!((r.label, r.revision), (0, 2));
        assert_eq!(s.read(&key(3)).unwrap().revision, 2);
        assert!(matches!(s.read(&key(4)), Err(DatasetError::NotFound { .. })));
    }

    #[test]
    fn rejects_bad_labels_and_unknown_tokens() {
        let mut s = LabelStore::with_known_tokens(HashMap::from([("inv-1".to_string(), 5)]));
        assert!(matches!(s.write(key(0), 2, LabelSource::Human, 0), Err(DatasetError::InvalidLabel(2))));
        assert!(matches!(s.write(key(5), 1, LabelSource::Human, 0), Err(DatasetError::UnknownToken { .. })));
        assert!(matches!(
            s.write(LabelKey::new("nope", 0), 1, LabelSource::Human, 0),
            Err(DatasetError::UnknownToken { .. })
        ));
        assert!(s.write(key(4), 1, LabelSource::Human, 0).is_ok());
    }

    #[test]
    fn human_overrides_seed_in_export() {
        let mut seed = LabelStore::new();
        for i in 0..4 {
            seed.write(key(i), (i % 2) as i64, LabelSource::Seed, 0).unwrap();
        }
        let mut human = LabelStore::new();
        human.write(key(2), 1, LabelSource::Human, 9).unwrap();
        let out = export_effective_labels(&seed, &human);
        assert_eq!(out.len(), 4);
        let labels: Vec<u8> = out.iter().map(|(_, r)| r.label).collect();
        assert_eq!(labels, [0, 1, 1, 1]);
        assert_eq!(out[2].1.source, LabelSource::Human);

        let mut a = Vec::new();
        let mut b = Vec::new();
        write_label_records(&mut a, &out).unwrap();
        write_label_records(&mut b, &export_effective_labels(&seed, &human)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_persists_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        {
            let mut log = LabelLog::open(&path, LabelStore::new()).unwrap();
            log.write(key(1), 1, LabelSource::Human).unwrap();
            log.write(key(1), 0, LabelSource::Human).unwrap();
            let err = log.write_batch(&[(key(2), 1), (key(3), 7)], LabelSource::Human);
            assert!(err.is_err());
            assert!(log.store().get(&key(2)).is_none());
        }
        let log = LabelLog::open(&path, LabelStore::new()).unwrap();
        let r = log.store().read(&key(1)).unwrap();
        assert_eq!((r.label, r.revision), (0, 2));
        assert_eq!(log.store().len(), 1);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn replay_rejects_stale_revision() {
        let text = "{\"doc_id\":\"a\",\"token_index\":0,\"label\":1,\"source\":\"seed\",\"revision\":2,\"timestamp\":0}\n\
                    {\"doc_id\":\"a\",\"token_index\":0,\"label\":0,\"source\":\"seed\",\"revision\":1,\"timestamp\":0}\n";
        assert!(matches!(
            read_label_jsonl(text.as_bytes()),
            Err(DatasetError::BadLabelRecord { line: 2, .. })
        ));
    }
}
