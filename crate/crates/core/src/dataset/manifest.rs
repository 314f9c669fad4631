//! Manifest CSV: `path,identity,attribute_id,illumination_id,split`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["path", "identity", "attribute_id", "illumination_id", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub image_path: PathBuf,
    pub identity: u32,
    pub attribute_id: usize,
    pub illumination_id: Option<u32>,
    pub split: Split,
}

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Parses manifest text. `source` only labels error messages.
pub fn parse_manifest(source: &Path, text: &[u8], vocab_size: usize) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text);
    let mut entries = Vec::new();
    let mut seen_paths: HashMap<PathBuf, u64> = HashMap::new();
    let mut identity_split: HashMap<u32, (Split, u64)> = HashMap::new();
    let mut header_seen = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(source, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if !header_seen {
            let fields: Vec<&str> = record.iter().map(str::trim).collect();
            if fields != MANIFEST_HEADER {
                return Err(parse_err(
                    source,
                    line,
                    format!("expected header {:?}, got {fields:?}", MANIFEST_HEADER.join(",")),
                ));
            }
            header_seen = true;
            continue;
        }
        if record.len() != MANIFEST_HEADER.len() {
            return Err(parse_err(
                source,
                line,
                format!("expected 5 fields, got {}", record.len()),
            ));
        }
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let path_s = field(0);
        if path_s.is_empty() {
            return Err(parse_err(source, line, "empty image path"));
        }
        let identity: u32 = field(1)
            .parse()
            .map_err(|_| parse_err(source, line, format!("bad identity {:?}", field(1))))?;
        let attribute_id: usize = field(2)
            .parse()
            .map_err(|_| parse_err(source, line, format!("bad attribute_id {:?}", field(2))))?;
        if attribute_id >= vocab_size {
            return Err(parse_err(
                source,
                line,
                format!("attribute_id {attribute_id} outside vocabulary of size {vocab_size}"),
            ));
        }
        let illumination_id = match field(3) {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| parse_err(source, line, format!("bad illumination_id {s:?}")))?,
            ),
        };
        let split = match field(4) {
            "train" => Split::Train,
            "test" => Split::Test,
            s => return Err(parse_err(source, line, format!("bad split {s:?}"))),
        };
        let image_path = PathBuf::from(path_s);
        if let Some(first) = seen_paths.insert(image_path.clone(), line) {
            return Err(parse_err(
                source,
                line,
                format!("duplicate path {path_s:?} (first on line {first})"),
            ));
        }
        match identity_split.get(&identity) {
            Some(&(s, first)) if s != split => {
                return Err(parse_err(
                    source,
                    line,
                    format!("identity {identity} is {s} on line {first} but {split} here; splits must be identity-disjoint"),
                ))
            }
            Some(_) => {}
            None => {
                identity_split.insert(identity, (split, line));
            }
        }
        entries.push(ManifestEntry {
            image_path,
            identity,
            attribute_id,
            illumination_id,
            split,
        });
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>, vocab_size: usize) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let mut text = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_manifest(path, &text, vocab_size)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for e in entries {
        let path = e.image_path.to_string_lossy();
        let illum = e.illumination_id.map(|i| i.to_string()).unwrap_or_default();
        w.write_record([
            path.as_ref(),
            &e.identity.to_string(),
            &e.attribute_id.to_string(),
            &illum,
            e.split.as_str(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_to_string(entries)?).map_err(|e| Error::io(path, e))
}

/// An ordered training pair, as indices into a manifest entry list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairRef {
    pub source: usize,
    pub target: usize,
}

/// Every ordered pair of distinct attributes within each
/// `(identity, illumination)` group, sorted by identity, illumination,
/// source attribute, target attribute. When an attribute occurs more than
/// once in a group only its first entry is used.
pub fn build_pairs(entries: &[ManifestEntry]) -> Vec<PairRef> {
    let mut groups: BTreeMap<(u32, Option<u32>), BTreeMap<usize, usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        groups
            .entry((e.identity, e.illumination_id))
            .or_default()
            .entry(e.attribute_id)
            .or_insert(i);
    }
    let mut pairs = Vec::new();
    for attrs in groups.values() {
        for (&sa, &si) in attrs {
            for (&ta, &ti) in attrs {
                if sa != ta {
                    pairs.push(PairRef { source: si, target: ti });
                }
            }
        }
    }
    pairs
}

/// Distinct identities in a split, ascending.
pub fn identities(entries: &[ManifestEntry], split: Split) -> Vec<u32> {
    let set: HashSet<u32> = entries.iter().filter(|e| e.split == split).map(|e| e.identity).collect();
    let mut v: Vec<u32> = set.into_iter().collect();
    v.sort_unstable();
    v
}
