//! Helpers shared by the CLI test targets: running the binary, building
//! synthetic inputs, and a from-scratch oracle for the bundled fixtures.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relcomp::embedding::{write_embeddings, TextFormat};
use relcomp::theorem_lab::synth_offset_relations;
use relcomp::training::write_groups_jsonl;
use serde_json::Value;

pub fn relcomp<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_relcomp"))
        .args(args)
        .env_remove("RELCOMP_CONFIG")
        .output()
        .expect("binary runs")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Offset-relation embeddings and their groups, written as text files.
pub fn write_synthetic(dir: &Path, pairs: usize, d: usize, relations: usize) -> (PathBuf, PathBuf) {
    let (e, groups) = synth_offset_relations(pairs, d, relations, 0.1, 11).unwrap();
    let emb = dir.join("emb.txt");
    let grp = dir.join("groups.jsonl");
    write_embeddings(fs::File::create(&emb).unwrap(), &e, TextFormat::NoHeader).unwrap();
    write_groups_jsonl(fs::File::create(&grp).unwrap(), &groups).unwrap();
    (emb, grp)
}

/// Every file in `dir`, by name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|entry| {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read(&path).unwrap())
        })
        .collect()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Straight reading of the fixture embedding file, no library code.
pub fn oracle_embeddings() -> HashMap<String, Vec<f64>> {
    fs::read_to_string(fixture("embeddings.txt"))
        .unwrap()
        .lines()
        .map(|line| {
            let mut it = line.split_whitespace();
            let word = it.next().unwrap().to_owned();
            (word, it.map(|x| x.parse().unwrap()).collect())
        })
        .collect()
}

fn offset(e: &HashMap<String, Vec<f64>>, pair: &Value) -> Vec<f64> {
    let h = &e[pair[0].as_str().unwrap()];
    let t = &e[pair[1].as_str().unwrap()];
    h.iter().zip(t).map(|(a, b)| a - b).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// PairDiff answer to each SAT fixture question and the gold answer.
pub fn sat_oracle() -> Vec<(usize, usize)> {
    let e = oracle_embeddings();
    fs::read_to_string(fixture("sat.jsonl"))
        .unwrap()
        .lines()
        .map(|line| {
            let q: Value = serde_json::from_str(line).unwrap();
            let stem = offset(&e, &q["stem"]);
            let scores: Vec<f64> = q["candidates"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| cos(&stem, &offset(&e, c)))
                .collect();
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            (best, q["answer"].as_u64().unwrap() as usize)
        })
        .collect()
}

/// For each MaxDiff question, `(most, least)` chosen by trying every
/// ordered pair of distinct choices, and the gold `(most, least)`.
pub fn maxdiff_oracle() -> Vec<((usize, usize), (usize, usize))> {
    let e = oracle_embeddings();
    let rels = read_json(&fixture("maxdiff.json"));
    let mut out = Vec::new();
    for rel in rels.as_array().unwrap() {
        let protos: Vec<Vec<f64>> = rel["prototypes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| offset(&e, p))
            .collect();
        for q in rel["questions"].as_array().unwrap() {
            let scores: Vec<f64> = q["choices"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| {
                    let r = offset(&e, c);
                    protos.iter().map(|p| cos(&r, p)).sum::<f64>() / protos.len() as f64
                })
                .collect();
            // Highest-scoring "most", then lowest-scoring "least" among the
            // rest; ties go to the lower index.
            let mut best: Option<(usize, usize)> = None;
            for m in 0..scores.len() {
                for l in 0..scores.len() {
                    if m == l {
                        continue;
                    }
                    best = match best {
                        None => Some((m, l)),
                        Some((bm, bl)) => {
                            let better_m = scores[m] > scores[bm];
                            let same_m = m == bm;
                            if better_m || (same_m && scores[l] < scores[bl]) {
                                Some((m, l))
                            } else {
                                Some((bm, bl))
                            }
                        }
                    };
                }
            }
            let gold = (
                q["most"].as_u64().unwrap() as usize,
                q["least"].as_u64().unwrap() as usize,
            );
            out.push((best.unwrap(), gold));
        }
    }
    out
}
