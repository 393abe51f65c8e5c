//! Relation groups: word pairs that share one relation type.
//!
//! Two on-disk layouts are read. A BATS-style directory holds one file per
//! relation with `head<TAB>tail` lines, and the file stem names the
//! relation. A JSONL file holds one `{"relation", "head", "tail"}` record
//! per line.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationGroup {
    pub relation_id: String,
    pub pairs: Vec<(String, String)>,
}

impl RelationGroup {
    /// Fails if `pairs` is empty or repeats a `(head, tail)` pair.
    pub fn new(relation_id: impl Into<String>, pairs: Vec<(String, String)>) -> Result<Self> {
        let relation_id = relation_id.into();
        if pairs.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "relation {relation_id:?} has no pairs"
            )));
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        for pair in &pairs {
            if !seen.insert(pair) {
                return Err(Error::InvalidParameter(format!(
                    "relation {relation_id:?} repeats pair ({}, {})",
                    pair.0, pair.1
                )));
            }
        }
        Ok(RelationGroup { relation_id, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    relation: String,
    head: String,
    tail: String,
}

/// Collects pairs per relation, dropping repeated pairs with a warning.
#[derive(Default)]
struct GroupBuilder {
    order: Vec<String>,
    pairs: HashMap<String, (Vec<(String, String)>, HashSet<(String, String)>)>,
}

impl GroupBuilder {
    fn push(&mut self, relation: &str, head: String, tail: String) {
        if !self.pairs.contains_key(relation) {
            self.order.push(relation.to_owned());
        }
        let (list, seen) = self.pairs.entry(relation.to_owned()).or_default();
        let pair = (head, tail);
        if seen.insert(pair.clone()) {
            list.push(pair);
        } else {
            log::warn!("relation {relation:?}: dropping repeated pair {pair:?}");
        }
    }

    fn finish(mut self) -> Result<Vec<RelationGroup>> {
        self.order
            .into_iter()
            .map(|id| {
                let (pairs, _) = self.pairs.remove(&id).expect("recorded");
                RelationGroup::new(id, pairs)
            })
            .collect()
    }
}

/// Read a BATS-style directory. Files are visited in name order; files
/// without any pairs are ignored.
pub fn load_bats_dir(dir: impl AsRef<Path>) -> Result<Vec<RelationGroup>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();

    let mut builder = GroupBuilder::default();
    for path in paths {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.starts_with('.') {
            continue;
        }
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (head, tail) = line.split_once('\t').ok_or_else(|| Error::Malformed {
                line: lineno + 1,
                message: format!("{}: expected `head<TAB>tail`", path.display()),
            })?;
            builder.push(stem, head.trim().to_owned(), tail.trim().to_owned());
        }
    }
    builder.finish()
}

/// Read relation groups from JSONL; groups appear in order of first use.
pub fn read_groups_jsonl<R: BufRead>(reader: R) -> Result<Vec<RelationGroup>> {
    let mut builder = GroupBuilder::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        builder.push(&record.relation, record.head, record.tail);
    }
    builder.finish()
}

/// A directory is read as BATS layout, anything else as JSONL.
pub fn load_groups(path: impl AsRef<Path>) -> Result<Vec<RelationGroup>> {
    let path = path.as_ref();
    if path.is_dir() {
        load_bats_dir(path)
    } else {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_groups_jsonl(BufReader::new(file))
    }
}

pub fn write_groups_jsonl<W: Write>(mut writer: W, groups: &[RelationGroup]) -> Result<()> {
    for group in groups {
        for (head, tail) in &group.pairs {
            let record = PairRecord {
                relation: group.relation_id.clone(),
                head: head.clone(),
                tail: tail.clone(),
            };
            serde_json::to_writer(&mut writer, &record)?;
            writeln!(writer).map_err(|e| Error::io("<stream>", e))?;
        }
    }
    Ok(())
}
