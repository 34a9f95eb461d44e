use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{tokenize, DataError, Vocabulary};

/// Gold relation. The numeric order is fixed for every serialized artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            other => Err(format!("unknown gold_label {other:?}")),
        }
    }
}

/// A tokenized premise/hypothesis pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPair {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliExample {
    pub premise: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub label: Label,
}

impl NliExample {
    pub fn from_pair(pair: &TextPair, vocab: &Vocabulary) -> Self {
        Self {
            premise: vocab.encode(&pair.premise),
            hypothesis: vocab.encode(&pair.hypothesis),
            label: pair.label,
        }
    }

    /// Mean of the two sentence lengths.
    pub fn average_length(&self) -> f64 {
        (self.premise.len() + self.hypothesis.len()) as f64 / 2.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedCorpus {
    pub pairs: Vec<TextPair>,
    /// Records whose gold label is `"-"` (no annotator consensus).
    pub dropped_no_consensus: usize,
    /// Records where either sentence tokenizes to nothing.
    pub dropped_empty: usize,
    /// Non-blank lines read.
    pub records: usize,
}

impl ParsedCorpus {
    pub fn retained(&self) -> usize {
        self.pairs.len()
    }

    pub fn dropped(&self) -> usize {
        self.dropped_no_consensus + self.dropped_empty
    }

    /// Every token of every sentence, in corpus order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.pairs
            .iter()
            .flat_map(|p| p.premise.iter().chain(&p.hypothesis))
            .map(String::as_str)
    }

    pub fn examples(&self, vocab: &Vocabulary) -> Vec<NliExample> {
        self.pairs.iter().map(|p| NliExample::from_pair(p, vocab)).collect()
    }
}

#[derive(Deserialize)]
struct Record {
    sentence1: String,
    sentence2: String,
    gold_label: String,
}

/// Parses SNLI/MultiNLI-style JSON lines.
pub fn parse_nli_jsonl(path: &Path) -> Result<ParsedCorpus, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_nli_jsonl(BufReader::new(file), path)
}

pub fn read_nli_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<ParsedCorpus, DataError> {
    let mut corpus = ParsedCorpus::default();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        corpus.records += 1;
        let format_err = |message: String| DataError::Format {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| format_err(e.to_string()))?;
        if rec.gold_label == "-" {
            corpus.dropped_no_consensus += 1;
            continue;
        }
        let label: Label = rec.gold_label.parse().map_err(format_err)?;
        match (tokenize(&rec.sentence1), tokenize(&rec.sentence2)) {
            (Ok(premise), Ok(hypothesis)) => corpus.pairs.push(TextPair {
                premise,
                hypothesis,
                label,
            }),
            _ => {
                log::warn!("{}:{lineno}: empty sentence, record skipped", path.display());
                corpus.dropped_empty += 1;
            }
        }
    }
    Ok(corpus)
}
