//! Scoring operators on multiple-choice analogies, MaxDiff questions and
//! held-out relation classification.
//!
//! Every decision is an argmax (or argmin) over cosine similarities of
//! relation vectors, with ties going to the lowest index so that reports are
//! reproducible.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{compose, cosine, BilinearOperator, RelationVector};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::training::RelationGroup;

pub type WordPair = (String, String);

/// What to do with a question that mentions a word missing from the
/// embeddings.
#[derive(Clone, Copy, Debug, Default, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    /// Leave the question out of the denominator and count it as skipped.
    #[default]
    Skip,
    /// Keep the question and count all of its decisions as wrong.
    CountWrong,
}

impl std::str::FromStr for OovPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(OovPolicy::Skip),
            "count-wrong" => Ok(OovPolicy::CountWrong),
            other => Err(Error::InvalidParameter(format!(
                "unknown OOV policy {other:?} (expected skip or count-wrong)"
            ))),
        }
    }
}

/// A stem pair with five candidate pairs, one of which is correct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SatQuestion {
    pub id: String,
    pub stem: WordPair,
    pub candidates: Vec<WordPair>,
    pub answer_index: usize,
}

impl SatQuestion {
    pub fn new(
        id: impl Into<String>,
        stem: WordPair,
        candidates: Vec<WordPair>,
        answer_index: usize,
    ) -> Result<Self> {
        let id = id.into();
        if candidates.len() != 5 {
            return Err(Error::InvalidParameter(format!(
                "question {id}: expected 5 candidates, found {}",
                candidates.len()
            )));
        }
        if answer_index >= 5 {
            return Err(Error::InvalidParameter(format!(
                "question {id}: answer index {answer_index} out of range"
            )));
        }
        Ok(SatQuestion {
            id,
            stem,
            candidates,
            answer_index,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxDiffQuestion {
    pub choices: Vec<WordPair>,
    pub gold_most: usize,
    pub gold_least: usize,
}

/// One relation with its prototypical pairs and MaxDiff questions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemEvalRelation {
    pub relation_id: String,
    pub prototypes: Vec<WordPair>,
    pub members: Vec<WordPair>,
    pub maxdiff_questions: Vec<MaxDiffQuestion>,
}

impl SemEvalRelation {
    pub fn new(
        relation_id: impl Into<String>,
        prototypes: Vec<WordPair>,
        members: Vec<WordPair>,
        maxdiff_questions: Vec<MaxDiffQuestion>,
    ) -> Result<Self> {
        let relation_id = relation_id.into();
        if prototypes.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "relation {relation_id} has no prototypes"
            )));
        }
        for (n, q) in maxdiff_questions.iter().enumerate() {
            let bad = |msg: String| {
                Err(Error::InvalidParameter(format!(
                    "relation {relation_id}, question {n}: {msg}"
                )))
            };
            if q.choices.len() != 4 {
                return bad(format!("expected 4 choices, found {}", q.choices.len()));
            }
            for i in 0..4 {
                if q.choices[i + 1..].contains(&q.choices[i]) {
                    return bad(format!("choice {:?} appears twice", q.choices[i]));
                }
            }
            if q.gold_most >= 4 || q.gold_least >= 4 {
                return bad("gold index out of range".into());
            }
            if q.gold_most == q.gold_least {
                return bad("most and least are the same choice".into());
            }
        }
        Ok(SemEvalRelation {
            relation_id,
            prototypes,
            members,
            maxdiff_questions,
        })
    }
}

/// How one question (or held-out pair) was answered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    /// Predicted indices: one for SAT and holdout, `[most, least]` for
    /// MaxDiff. Empty when the item could not be scored.
    pub chosen: Vec<usize>,
    pub gold: Vec<usize>,
    /// Score of every option.
    pub similarities: Vec<f64>,
    /// Options whose score involved a zero relation vector.
    pub degenerate: Vec<bool>,
    pub correct: usize,
    pub decisions: usize,
    pub oov: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    /// `correct / decisions`, or 0 when nothing was attempted.
    pub score: f64,
    pub correct: usize,
    pub decisions: usize,
    pub attempted: usize,
    /// Items left out under [`OovPolicy::Skip`].
    pub skipped: usize,
    /// Items with at least one out-of-vocabulary word, whatever the policy.
    pub oov: usize,
    pub warnings: Vec<String>,
    pub items: Vec<ItemRecord>,
}

impl EvalReport {
    fn assemble(
        metric: &str,
        items: Vec<ItemRecord>,
        policy: OovPolicy,
        warnings: Vec<String>,
    ) -> Self {
        let oov = items.iter().filter(|i| i.oov).count();
        let excluded = |i: &ItemRecord| i.oov && policy == OovPolicy::Skip;
        let kept = || items.iter().filter(|i| !excluded(i));
        let correct = kept().map(|i| i.correct).sum();
        let decisions: usize = kept().map(|i| i.decisions).sum();
        let attempted = kept().count();
        let skipped = items.len() - attempted;
        let score = if decisions == 0 {
            0.0
        } else {
            correct as f64 / decisions as f64
        };
        if skipped > 0 {
            log::warn!("{metric}: skipped {skipped} items with unknown words");
        }
        EvalReport {
            metric: metric.to_owned(),
            score,
            correct,
            decisions,
            attempted,
            skipped,
            oov,
            warnings,
            items,
        }
    }

    pub fn tsv_header() -> &'static str {
        "metric\tscore\tcorrect\tdecisions\tattempted\tskipped"
    }

    /// One tab-separated line matching [`EvalReport::tsv_header`].
    pub fn tsv_summary(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.metric, self.score, self.correct, self.decisions, self.attempted, self.skipped
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_dims(op: &BilinearOperator, embeddings: &EmbeddingMatrix) -> Result<()> {
    if op.dim() != embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: embeddings.dim(),
        });
    }
    Ok(())
}

fn relation_of(
    op: &BilinearOperator,
    embeddings: &EmbeddingMatrix,
    pair: &WordPair,
) -> Option<RelationVector> {
    let h = embeddings.lookup(&pair.0).ok()?;
    let t = embeddings.lookup(&pair.1).ok()?;
    Some(compose(op, h, t).expect("dimensions checked"))
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value other than `exclude`, lowest index on ties.
fn argmin_excluding(values: &[f64], exclude: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if i == exclude {
            continue;
        }
        match best {
            Some(b) if *v >= values[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("at least two options")
}

fn unanswered(id: String, gold: Vec<usize>, decisions: usize) -> ItemRecord {
    ItemRecord {
        id,
        chosen: Vec::new(),
        gold,
        similarities: Vec::new(),
        degenerate: Vec::new(),
        correct: 0,
        decisions,
        oov: true,
    }
}

/// Answer each question with the candidate whose relation vector is most
/// similar to the stem's.
pub fn eval_sat(
    op: &BilinearOperator,
    embeddings: &EmbeddingMatrix,
    questions: &[SatQuestion],
    oov_policy: OovPolicy,
) -> Result<EvalReport> {
    check_dims(op, embeddings)?;
    let items = questions
        .par_iter()
        .map(|q| {
            let gold = vec![q.answer_index];
            let Some(stem) = relation_of(op, embeddings, &q.stem) else {
                return unanswered(q.id.clone(), gold, 1);
            };
            let mut candidates = Vec::with_capacity(q.candidates.len());
            for c in &q.candidates {
                match relation_of(op, embeddings, c) {
                    Some(r) => candidates.push(r),
                    None => return unanswered(q.id.clone(), gold, 1),
                }
            }
            let sims: Vec<_> = candidates
                .iter()
                .map(|c| cosine(stem.as_slice(), c.as_slice()))
                .collect();
            let similarities: Vec<f64> = sims.iter().map(|s| s.value).collect();
            let chosen = argmax(&similarities);
            ItemRecord {
                id: q.id.clone(),
                chosen: vec![chosen],
                gold,
                degenerate: sims.iter().map(|s| s.degenerate).collect(),
                similarities,
                correct: usize::from(chosen == q.answer_index),
                decisions: 1,
                oov: false,
            }
        })
        .collect();
    Ok(EvalReport::assemble("sat", items, oov_policy, Vec::new()))
}

/// The resolvable prototypes of a relation, composed once.
struct Prototypes {
    vectors: Vec<RelationVector>,
    dropped: Vec<WordPair>,
}

impl Prototypes {
    fn resolve(
        op: &BilinearOperator,
        embeddings: &EmbeddingMatrix,
        rel: &SemEvalRelation,
    ) -> Result<Self> {
        let mut vectors = Vec::new();
        let mut dropped = Vec::new();
        for p in &rel.prototypes {
            match relation_of(op, embeddings, p) {
                Some(r) => vectors.push(r),
                None => dropped.push(p.clone()),
            }
        }
        if vectors.is_empty() {
            return Err(Error::NoPrototypes(rel.relation_id.clone()));
        }
        Ok(Prototypes { vectors, dropped })
    }

    /// Mean similarity to the prototypes and whether any term was
    /// degenerate.
    fn score(&self, r: &RelationVector) -> (f64, bool) {
        let mut sum = 0.0;
        let mut degenerate = false;
        for p in &self.vectors {
            let s = cosine(r.as_slice(), p.as_slice());
            sum += s.value;
            degenerate |= s.degenerate;
        }
        (sum / self.vectors.len() as f64, degenerate)
    }
}

/// Mean relational similarity between `pair` and the relation's
/// prototypes. Prototypes with unknown words are dropped.
pub fn semeval_pair_score(
    op: &BilinearOperator,
    embeddings: &EmbeddingMatrix,
    rel: &SemEvalRelation,
    pair: &WordPair,
) -> Result<f64> {
    check_dims(op, embeddings)?;
    let protos = Prototypes::resolve(op, embeddings, rel)?;
    for p in &protos.dropped {
        log::warn!("relation {}: dropped prototype {p:?}", rel.relation_id);
    }
    let h = embeddings.lookup(&pair.0)?;
    let t = embeddings.lookup(&pair.1)?;
    Ok(protos.score(&compose(op, h, t)?).0)
}

/// Pick the most and least prototypical choice of every question. Each
/// question contributes two decisions.
pub fn eval_maxdiff(
    op: &BilinearOperator,
    embeddings: &EmbeddingMatrix,
    relations: &[SemEvalRelation],
    oov_policy: OovPolicy,
) -> Result<EvalReport> {
    check_dims(op, embeddings)?;
    let mut warnings = Vec::new();
    let mut items = Vec::new();
    for rel in relations {
        let protos = match Prototypes::resolve(op, embeddings, rel) {
            Ok(p) => Some(p),
            Err(Error::NoPrototypes(_)) => {
                warnings.push(format!(
                    "relation {}: no prototype is in the vocabulary",
                    rel.relation_id
                ));
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(p) = &protos {
            for d in &p.dropped {
                warnings.push(format!(
                    "relation {}: dropped prototype {}:{}",
                    rel.relation_id, d.0, d.1
                ));
            }
        }
        let scored: Vec<ItemRecord> = rel
            .maxdiff_questions
            .par_iter()
            .enumerate()
            .map(|(n, q)| {
                let id = format!("{}#{n}", rel.relation_id);
                let gold = vec![q.gold_most, q.gold_least];
                let Some(protos) = &protos else {
                    return unanswered(id, gold, 2);
                };
                let mut sims = Vec::with_capacity(4);
                let mut degenerate = Vec::with_capacity(4);
                for c in &q.choices {
                    let Some(r) = relation_of(op, embeddings, c) else {
                        return unanswered(id, gold, 2);
                    };
                    let (s, d) = protos.score(&r);
                    sims.push(s);
                    degenerate.push(d);
                }
                let most = argmax(&sims);
                let least = argmin_excluding(&sims, most);
                ItemRecord {
                    id,
                    chosen: vec![most, least],
                    gold,
                    similarities: sims,
                    degenerate,
                    correct: usize::from(most == q.gold_most) + usize::from(least == q.gold_least),
                    decisions: 2,
                    oov: false,
                }
            })
            .collect();
        items.extend(scored);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(EvalReport::assemble("maxdiff", items, oov_policy, warnings))
}

/// k-fold relation classification within the training groups.
///
/// Each group's pairs are shuffled with `seed` and dealt into `k` folds
/// by position. A held-out pair is assigned to the group whose training
/// pairs (those outside its fold) have the highest mean similarity to it.
/// Groups with fewer than `k` resolvable pairs are left out with a
/// warning; pairs with unknown words are counted as skipped.
pub fn eval_bats_holdout(
    op: &BilinearOperator,
    embeddings: &EmbeddingMatrix,
    groups: &[RelationGroup],
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_dims(op, embeddings)?;
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "fold count must be at least 2, got {k}"
        )));
    }
    if groups.len() < 2 {
        return Err(Error::TooFewGroups(groups.len()));
    }

    struct Member {
        id: String,
        group: usize,
        fold: usize,
        vector: RelationVector,
    }

    let mut warnings = Vec::new();
    let mut oov_items = Vec::new();
    let mut members: Vec<Member> = Vec::new();
    let mut n_groups = 0;
    for (gi, g) in groups.iter().enumerate() {
        let mut resolved = Vec::new();
        for pair in &g.pairs {
            let id = format!("{}:{}:{}", g.relation_id, pair.0, pair.1);
            match relation_of(op, embeddings, pair) {
                Some(r) => resolved.push((id, r)),
                None => oov_items.push(unanswered(id, Vec::new(), 1)),
            }
        }
        if resolved.len() < k {
            warnings.push(format!(
                "relation {}: {} usable pairs, fewer than {k} folds",
                g.relation_id,
                resolved.len()
            ));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(gi as u64);
        resolved.shuffle(&mut rng);
        let class = n_groups;
        n_groups += 1;
        for (pos, (id, vector)) in resolved.into_iter().enumerate() {
            members.push(Member {
                id,
                group: class,
                fold: pos % k,
                vector,
            });
        }
    }
    if n_groups < 2 {
        return Err(Error::TooFewGroups(n_groups));
    }

    let mut items: Vec<ItemRecord> = members
        .par_iter()
        .map(|m| {
            let mut sums = vec![0.0; n_groups];
            let mut counts = vec![0usize; n_groups];
            let mut degenerate = vec![false; n_groups];
            for other in members.iter().filter(|o| o.fold != m.fold) {
                let s = cosine(m.vector.as_slice(), other.vector.as_slice());
                sums[other.group] += s.value;
                counts[other.group] += 1;
                degenerate[other.group] |= s.degenerate;
            }
            let means: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| {
                    if c == 0 {
                        f64::NEG_INFINITY
                    } else {
                        s / c as f64
                    }
                })
                .collect();
            let chosen = argmax(&means);
            ItemRecord {
                id: m.id.clone(),
                chosen: vec![chosen],
                gold: vec![m.group],
                similarities: means,
                degenerate,
                correct: usize::from(chosen == m.group),
                decisions: 1,
                oov: false,
            }
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    items.extend(oov_items);
    Ok(EvalReport::assemble(
        "bats-holdout",
        items,
        OovPolicy::Skip,
        warnings,
    ))
}

#[derive(Deserialize)]
struct RawSat {
    #[serde(default)]
    id: Option<serde_json::Value>,
    stem: WordPair,
    candidates: Vec<WordPair>,
    answer: usize,
}

/// SAT questions, one JSON object per line:
/// `{"id": .., "stem": [a, b], "candidates": [[c, d], ..], "answer": i}`.
/// A missing id becomes the line number.
pub fn read_sat_jsonl<R: BufRead>(reader: R) -> Result<Vec<SatQuestion>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<sat>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            line: n + 1,
            message,
        };
        let raw: RawSat = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let id = match raw.id {
            None => (n + 1).to_string(),
            Some(serde_json::Value::String(s)) => s,
            Some(v) => v.to_string(),
        };
        out.push(
            SatQuestion::new(id, raw.stem, raw.candidates, raw.answer)
                .map_err(|e| malformed(e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn load_sat(path: impl AsRef<Path>) -> Result<Vec<SatQuestion>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sat_jsonl(BufReader::new(file))
}

pub fn write_sat_jsonl<W: Write>(mut writer: W, questions: &[SatQuestion]) -> Result<()> {
    for q in questions {
        let line = serde_json::json!({
            "id": q.id,
            "stem": q.stem,
            "candidates": q.candidates,
            "answer": q.answer_index,
        });
        writeln!(writer, "{line}").map_err(|e| Error::io("<sat>", e))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RawQuestion {
    choices: Vec<WordPair>,
    most: usize,
    least: usize,
}

#[derive(Serialize, Deserialize)]
struct RawRelation {
    relation: String,
    prototypes: Vec<WordPair>,
    #[serde(default)]
    members: Vec<WordPair>,
    #[serde(default)]
    questions: Vec<RawQuestion>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSemEval {
    One(RawRelation),
    Many(Vec<RawRelation>),
}

fn from_raw(raw: RawRelation) -> Result<SemEvalRelation> {
    SemEvalRelation::new(
        raw.relation,
        raw.prototypes,
        raw.members,
        raw.questions
            .into_iter()
            .map(|q| MaxDiffQuestion {
                choices: q.choices,
                gold_most: q.most,
                gold_least: q.least,
            })
            .collect(),
    )
}

/// Parse one relation object or an array of them.
pub fn parse_semeval(text: &str) -> Result<Vec<SemEvalRelation>> {
    let raw: RawSemEval = serde_json::from_str(text).map_err(|e| Error::Malformed {
        line: e.line(),
        message: e.to_string(),
    })?;
    match raw {
        RawSemEval::One(r) => Ok(vec![from_raw(r)?]),
        RawSemEval::Many(rs) => rs.into_iter().map(from_raw).collect(),
    }
}

/// A SemEval file, or a directory of `.json` files read in name order.
pub fn load_semeval(path: impl AsRef<Path>) -> Result<Vec<SemEvalRelation>> {
    let path = path.as_ref();
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    if !path.is_dir() {
        return parse_semeval(&read(path)?);
    }
    let mut files: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(parse_semeval(&read(&f)?)?);
    }
    Ok(out)
}

pub fn semeval_to_json(relations: &[SemEvalRelation]) -> Result<String> {
    let raw: Vec<RawRelation> = relations
        .iter()
        .map(|r| RawRelation {
            relation: r.relation_id.clone(),
            prototypes: r.prototypes.clone(),
            members: r.members.clone(),
            questions: r
                .maxdiff_questions
                .iter()
                .map(|q| RawQuestion {
                    choices: q.choices.clone(),
                    most: q.gold_most,
                    least: q.gold_least,
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&raw)?)
}
