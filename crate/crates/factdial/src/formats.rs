//! Line-delimited JSON file formats: corpus, knowledge snapshot, sense-graph
//! export, responses and the derived report files.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use factdial_core::model::{Dialogue, DialogueSenseGraph, Response, ScoredTriple, Triple, Variant};
use factdial_core::reformulation::ReformulatedDialogue;
use factdial_core::{KnowledgeSnapshot, Utterance};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: duplicate id {id}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), source }
    }

    /// 1-based line of a malformed or duplicate record.
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::MalformedRecord { line, .. } | FormatError::DuplicateId { line, .. } => Some(*line),
            FormatError::Io { .. } => None,
        }
    }
}

/// Parses every non-blank line of `path` as a `T`, with 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| FormatError::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| FormatError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FormatError::io(path, e.into()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueRecord {
    id: String,
    turns: Vec<Utterance>,
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    triples: Vec<Triple>,
}

/// Loads a corpus, validating every dialogue and rejecting repeated ids.
pub fn load_corpus(path: &Path) -> Result<Vec<Dialogue>, FormatError> {
    let mut seen = HashSet::new();
    let mut corpus = Vec::new();
    for (line, r) in read_jsonl::<DialogueRecord>(path)? {
        let d = Dialogue { id: r.id, turns: r.turns, reference: r.reference, triples: r.triples };
        d.validate().map_err(|e| FormatError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason: e.to_string(),
        })?;
        if !seen.insert(d.id.clone()) {
            return Err(FormatError::DuplicateId { path: path.to_path_buf(), line, id: d.id });
        }
        corpus.push(d);
    }
    Ok(corpus)
}

pub fn save_corpus(path: &Path, corpus: &[Dialogue]) -> Result<(), FormatError> {
    write_jsonl(path, corpus)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub title: String,
    pub passage: String,
}

pub fn load_snapshot(path: &Path) -> Result<KnowledgeSnapshot, FormatError> {
    let mut snap = KnowledgeSnapshot::new();
    for (line, r) in read_jsonl::<SnapshotRecord>(path)? {
        snap.insert(r.title, r.passage).map_err(|e| FormatError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason: e.to_string(),
        })?;
    }
    Ok(snap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportTriple {
    pub s: String,
    pub p: String,
    pub o: String,
    pub score: f64,
}

/// One line of the sense-graph export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseGraphRecord {
    pub dialogue_id: String,
    pub variant: Variant,
    pub n: usize,
    pub triples: Vec<ExportTriple>,
}

impl From<&DialogueSenseGraph> for SenseGraphRecord {
    fn from(g: &DialogueSenseGraph) -> Self {
        SenseGraphRecord {
            dialogue_id: g.dialogue_id.clone(),
            variant: g.variant,
            n: g.n,
            triples: g
                .triples
                .iter()
                .map(|st| ExportTriple {
                    s: st.triple.subject.clone(),
                    p: st.triple.predicate.clone(),
                    o: st.triple.object.clone(),
                    score: st.score,
                })
                .collect(),
        }
    }
}

impl SenseGraphRecord {
    /// Rebuilds the graph; `source_index` becomes the position in the record.
    pub fn to_graph(&self) -> Result<DialogueSenseGraph, String> {
        let triples = self
            .triples
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Triple::new(t.s.clone(), t.p.clone(), t.o.clone())
                    .map(|triple| ScoredTriple { triple, score: t.score, source_index: i })
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        if triples.len() > self.n {
            return Err(format!("{} triples exceed n = {}", triples.len(), self.n));
        }
        Ok(DialogueSenseGraph { dialogue_id: self.dialogue_id.clone(), variant: self.variant, triples, n: self.n })
    }
}

pub fn write_sense_graphs(path: &Path, graphs: &[DialogueSenseGraph]) -> Result<(), FormatError> {
    let records: Vec<SenseGraphRecord> = graphs.iter().map(SenseGraphRecord::from).collect();
    write_jsonl(path, &records)
}

pub fn load_sense_graphs(path: &Path) -> Result<Vec<DialogueSenseGraph>, FormatError> {
    read_jsonl::<SenseGraphRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            r.to_graph().map_err(|reason| FormatError::MalformedRecord { path: path.to_path_buf(), line, reason })
        })
        .collect()
}

pub fn write_responses(path: &Path, responses: &[Response]) -> Result<(), FormatError> {
    write_jsonl(path, responses)
}

pub fn load_responses(path: &Path) -> Result<Vec<Response>, FormatError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, r) in read_jsonl::<Response>(path)? {
        if !seen.insert(r.dialogue_id.clone()) {
            return Err(FormatError::DuplicateId { path: path.to_path_buf(), line, id: r.dialogue_id });
        }
        out.push(r);
    }
    Ok(out)
}

/// One line of the reformulation output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulationRecord {
    pub dialogue_id: String,
    pub resolved_turns: Vec<Utterance>,
    pub chain_of_thought: String,
    pub fallback_used: bool,
}

impl From<&ReformulatedDialogue> for ReformulationRecord {
    fn from(r: &ReformulatedDialogue) -> Self {
        ReformulationRecord {
            dialogue_id: r.original.id.clone(),
            resolved_turns: r.resolved_turns.clone(),
            chain_of_thought: r.chain_of_thought.clone(),
            fallback_used: r.fallback_used,
        }
    }
}

pub fn write_reformulations(path: &Path, items: &[ReformulatedDialogue]) -> Result<(), FormatError> {
    let records: Vec<ReformulationRecord> = items.iter().map(ReformulationRecord::from).collect();
    write_jsonl(path, &records)
}

/// Joins reformulation records back onto their corpus dialogues.
pub fn load_reformulations(path: &Path, corpus: &[Dialogue]) -> Result<Vec<ReformulatedDialogue>, FormatError> {
    read_jsonl::<ReformulationRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let malformed = |reason: String| FormatError::MalformedRecord { path: path.to_path_buf(), line, reason };
            let original = corpus
                .iter()
                .find(|d| d.id == r.dialogue_id)
                .ok_or_else(|| malformed(format!("unknown dialogue {}", r.dialogue_id)))?;
            if r.resolved_turns.is_empty() {
                return Err(malformed("no resolved turns".into()));
            }
            for t in &r.resolved_turns {
                t.validate().map_err(|e| malformed(e.to_string()))?;
            }
            Ok(ReformulatedDialogue {
                original: original.clone(),
                resolved_turns: r.resolved_turns,
                chain_of_thought: r.chain_of_thought,
                fallback_used: r.fallback_used,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const D1: &str = r#"{"id":"a","turns":[{"speaker":"A","text":"Hi"}],"triples":[["x","y","z"]]}"#;
    const D2: &str =
        r#"{"id":"b","turns":[{"speaker":"A","text":"Yo"},{"speaker":"B","text":"Hey"}],"reference":"ok"}"#;

    #[test]
    fn loads_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.jsonl", &format!("{D1}\n{D2}\n"));
        let c = load_corpus(&p).unwrap();
        assert_eq!(c.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(c[0].triples[0], Triple::new("x", "y", "z").unwrap());
        assert_eq!(c[1].reference.as_deref(), Some("ok"));
    }

    #[test]
    fn missing_turns_is_malformed_line_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.jsonl", "{\"id\":\"a\"}\n");
        assert_eq!(load_corpus(&p).unwrap_err().line(), Some(1));
    }

    #[test]
    fn duplicate_ids_and_triples() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.jsonl", &format!("{D1}\n{D1}\n"));
        assert!(matches!(load_corpus(&p), Err(FormatError::DuplicateId { line: 2, .. })));
        let dup = r#"{"id":"a","turns":[{"speaker":"A","text":"Hi"}],"triples":[["x","y","z"],["x","y","z"]]}"#;
        let p = write(dir.path(), "d.jsonl", dup);
        assert!(matches!(load_corpus(&p), Err(FormatError::MalformedRecord { line: 1, .. })));
        let blank = r#"{"id":"a","turns":[{"speaker":"A","text":"  "}]}"#;
        let p = write(dir.path(), "e.jsonl", blank);
        assert!(matches!(load_corpus(&p), Err(FormatError::MalformedRecord { line: 1, .. })));
    }

    #[test]
    fn missing_file_is_io() {
        let err = load_corpus(Path::new("/definitely/not/here.jsonl")).unwrap_err();
        assert!(matches!(err, FormatError::Io { .. }));
        assert!(err.to_string().contains("/definitely/not/here.jsonl"));
    }

    #[test]
    fn sense_graph_export_schema() {
        let g = DialogueSenseGraph {
            dialogue_id: "a".into(),
            variant: Variant::Reformulated,
            n: 5,
            triples: vec![ScoredTriple { triple: Triple::new("s", "p", "o").unwrap(), score: 0.5, source_index: 3 }],
        };
        let line = serde_json::to_string(&SenseGraphRecord::from(&g)).unwrap();
        assert_eq!(
            line,
            r#"{"dialogue_id":"a","variant":"reformulated","n":5,"triples":[{"s":"s","p":"p","o":"o","score":0.5}]}"#
        );
    }

    #[test]
    fn snapshot_rejects_duplicate_titles() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.jsonl",
            "{\"title\":\"Dot\",\"passage\":\"x\"}\n{\"title\":\"dot\",\"passage\":\"y\"}\n",
        );
        assert!(matches!(load_snapshot(&p), Err(FormatError::MalformedRecord { line: 2, .. })));
    }
}
