//! Synthetic corpus generation, edit-benchmark construction and persistence.
//!
//! Benchmark and corpus files are UTF-8 JSON Lines: a header line
//! `{"format":"clmeeval-mini","version":1}` followed by one record per line.

mod build;
pub mod lexicon;
mod rewrite;
mod stats;
mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use build::{build_benchmark, split_pools, top_similar, BuildOptions};
pub use lexicon::Vocab;
pub use rewrite::{fresh_name_map, make_rewrite, paraphrase, rename_identifiers, swap_synonyms};
pub use stats::{dataset_stats, length_stats, DatasetStats, LengthStats};
pub use synth::synth_corpus;

use crate::error::{Error, Result};
use crate::toymodel::TokenPair;

pub const FILE_FORMAT: &str = "clmeeval-mini";
pub const FILE_VERSION: u32 = 1;
pub const NEIGHBORS_PER_INSTANCE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Natural language to code.
    Nl2Pl,
    /// Code to natural language.
    Pl2Nl,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Nl2Pl => "nl2pl",
            Task::Pl2Nl => "pl2nl",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nl2pl" => Ok(Task::Nl2Pl),
            "pl2nl" => Ok(Task::Pl2Nl),
            other => Err(Error::Usage(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPair {
    pub id: String,
    pub task: Task,
    pub intent: String,
    pub code: String,
}

impl CorpusPair {
    /// Model input for the pair's task.
    pub fn input(&self) -> &str {
        match self.task {
            Task::Nl2Pl => &self.intent,
            Task::Pl2Nl => &self.code,
        }
    }

    /// Expected output for the pair's task.
    pub fn output(&self) -> &str {
        match self.task {
            Task::Nl2Pl => &self.code,
            Task::Pl2Nl => &self.intent,
        }
    }

    pub fn tokens(&self) -> TokenPair {
        let v = Vocab::standard();
        (v.prompt(self.input()), v.target(self.output()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbor {
    pub x_u: String,
    /// The unedited model's greedy output for `x_u`.
    pub y_orig: String,
}

/// One edit: target input/output, semantically identical rewrites and
/// unrelated neighbor probes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditInstance {
    pub id: String,
    pub task: Task,
    pub x: String,
    pub y: String,
    pub rewrites: Vec<String>,
    pub neighbors: Vec<Neighbor>,
}

impl EditInstance {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.rewrites.is_empty() {
            return Err("instance has no rewrites".into());
        }
        if self.neighbors.len() != NEIGHBORS_PER_INSTANCE {
            return Err(format!(
                "instance has {} neighbors, expected {NEIGHBORS_PER_INSTANCE}",
                self.neighbors.len()
            ));
        }
        if self.neighbors.iter().any(|n| n.x_u == self.x) {
            return Err("a neighbor input equals the edited input".into());
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, &Header { format: FILE_FORMAT.into(), version: FILE_VERSION })?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn parse_jsonl<T: DeserializeOwned>(text: &str, check: impl Fn(&T) -> std::result::Result<(), String>) -> Result<Vec<T>> {
    let mut lines = text.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, l)) => serde_json::from_str(l).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?,
        None => return Err(Error::Parse { line: 1, message: "missing header line".into() }),
    };
    if header.format != FILE_FORMAT || header.version != FILE_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let rec: T =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        check(&rec).map_err(|message| Error::Parse { line: i + 1, message })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_benchmark(path: impl AsRef<Path>, instances: &[EditInstance]) -> Result<()> {
    write_jsonl(path.as_ref(), instances)
}

pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Vec<EditInstance>> {
    parse_benchmark(&fs::read_to_string(path)?)
}

pub fn parse_benchmark(text: &str) -> Result<Vec<EditInstance>> {
    parse_jsonl(text, EditInstance::validate)
}

pub fn save_corpus(path: impl AsRef<Path>, pairs: &[CorpusPair]) -> Result<()> {
    write_jsonl(path.as_ref(), pairs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusPair>> {
    parse_jsonl(&fs::read_to_string(path)?, |_: &CorpusPair| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Vec<EditInstance> {
        (0..n)
            .map(|i| EditInstance {
                id: format!("id-{i}"),
                task: Task::Nl2Pl,
                x: format!("reverse the list foo{i}"),
                y: "res = reversed ( foo )".into(),
                rewrites: vec!["given the array foo , invert it".into()],
                neighbors: (0..5)
                    .map(|j| Neighbor { x_u: format!("sort the list n{j}"), y_orig: format!("out = sorted ( n{j} )") })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bench.jsonl");
        let data = sample(3);
        save_benchmark(&p, &data).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"format\":\"clmeeval-mini\",\"version\":1}\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("{\"id\":\"id-0\",\"task\":\"nl2pl\",\"x\":"));
        assert_eq!(load_benchmark(&p).unwrap(), data);
    }

    #[test]
    fn truncated_file_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bench.jsonl");
        save_benchmark(&p, &sample(4)).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let cut = &text[..text.len() - 40];
        match parse_benchmark(cut) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_neighbor_count_rejected() {
        let mut data = sample(2);
        data[1].neighbors.pop();
        let mut text = String::from("{\"format\":\"clmeeval-mini\",\"version\":1}\n");
        for d in &data {
            text.push_str(&serde_json::to_string(d).unwrap());
            text.push('\n');
        }
        assert!(matches!(parse_benchmark(&text), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_benchmark(""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn many_rewrites_accepted() {
        let mut data = sample(1);
        data[0].rewrites.push("please reverse the list foo0".into());
        let text = format!(
            "{{\"format\":\"clmeeval-mini\",\"version\":1}}\n{}\n",
            serde_json::to_string(&data[0]).unwrap()
        );
        assert_eq!(parse_benchmark(&text).unwrap(), data);
    }

    #[test]
    fn large_file_digest_is_stable() {
        use sha2::{Digest, Sha256};
        let dir = tempfile::tempdir().unwrap();
        let digest = |name: &str| {
            let p = dir.path().join(name);
            save_benchmark(&p, &sample(1000)).unwrap();
            hex::encode(Sha256::digest(fs::read(&p).unwrap()))
        };
        assert_eq!(digest("a.jsonl"), digest("b.jsonl"));
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("corpus.jsonl");
        let c = synth_corpus(1, 30, Task::Pl2Nl);
        save_corpus(&p, &c).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), c);
    }
}
