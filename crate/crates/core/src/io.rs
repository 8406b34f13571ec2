//! Readers and writers for the on-disk formats: `catalog.csv`, `events.jsonl`,
//! `consumers.csv`, `ground_truth.csv` and generic CSV / JSON-lines helpers.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Attribute, Catalog, CatalogItem, ConsumerId, ConsumerProfile, InteractionEvent, RawEvent, Sku,
    Vocabularies, Vocabulary,
};
use crate::error::{Error, Result};

const VOCAB_PREFIX: &str = "# vocab ";

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(display(path), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(open(path)?);
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(display(path), e)))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| Error::format(display(path), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::format(display(path), format!("line {}: {e}", i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

/// Writes `catalog.csv`, declaring each attribute vocabulary on a `# vocab`
/// line ahead of the header row.
pub fn write_catalog(path: &Path, catalog: &Catalog) -> Result<()> {
    let mut w = create(path)?;
    for (attr, vocab) in catalog.vocab().iter() {
        writeln!(w, "{VOCAB_PREFIX}{}={}", attr.as_str(), vocab.values().join("|"))
            .map_err(|e| Error::io(path, e))?;
    }
    let mut csv_w = csv::Writer::from_writer(w);
    for item in catalog.items() {
        csv_w.serialize(item).map_err(|e| Error::format(display(path), e))?;
    }
    csv_w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `catalog.csv`. Attributes without a `# vocab` declaration fall back to
/// the sorted set of values present in the file.
pub fn read_catalog(path: &Path) -> Result<Catalog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vocab = Vocabularies::new();
    let mut declared = BTreeSet::new();
    for line in text.lines() {
        if let Some(decl) = line.strip_prefix(VOCAB_PREFIX) {
            let (name, values) = decl
                .split_once('=')
                .ok_or_else(|| Error::format(display(path), format!("bad vocab line `{line}`")))?;
            let attr: Attribute = name
                .trim()
                .parse()
                .map_err(|e: Error| Error::format(display(path), e))?;
            let values: Vec<&str> = if values.is_empty() {
                Vec::new()
            } else {
                values.split('|').collect()
            };
            let v = Vocabulary::new(values).map_err(|e| Error::format(display(path), e))?;
            vocab.set(attr, v);
            declared.insert(attr);
        }
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let items: Vec<CatalogItem> = r
        .deserialize()
        .map(|row| row.map_err(|e| Error::format(display(path), e)))
        .collect::<Result<_>>()?;
    for attr in Attribute::ALL {
        if attr == Attribute::Gender || declared.contains(&attr) {
            continue;
        }
        let values: BTreeSet<&str> = items.iter().map(|i| i.attribute(attr)).collect();
        vocab.set(attr, Vocabulary::new(values).expect("set values are unique"));
    }
    Ok(Catalog::new(vocab, items))
}

pub fn write_events(path: &Path, events: &[InteractionEvent]) -> Result<()> {
    write_jsonl(path, events)
}

pub fn read_raw_events(path: &Path) -> Result<Vec<RawEvent>> {
    read_jsonl(path)
}

pub fn write_profiles(path: &Path, profiles: &[ConsumerProfile]) -> Result<()> {
    write_csv(path, profiles)
}

pub fn read_profiles(path: &Path) -> Result<Vec<ConsumerProfile>> {
    read_csv(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub consumer_id: ConsumerId,
    pub prototype_id: usize,
    pub is_core_designer: bool,
}

/// Collects the SKUs of events into a set.
pub fn sku_set<'a>(events: impl IntoIterator<Item = &'a InteractionEvent>) -> BTreeSet<Sku> {
    events.into_iter().map(|e| e.sku.clone()).collect()
}
