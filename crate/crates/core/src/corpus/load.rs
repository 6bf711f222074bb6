use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{carve_validation, parse_optional_stance, Dataset, Example, Split, Stance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Semeval,
    Ukp,
    Synthetic,
    Generic,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "semeval" => Ok(DatasetKind::Semeval),
            "ukp" => Ok(DatasetKind::Ukp),
            "synthetic" => Ok(DatasetKind::Synthetic),
            "generic" => Ok(DatasetKind::Generic),
            other => Err(Error::invalid(format!("unknown dataset kind {other:?}"))),
        }
    }
}

/// A header-indexed tab-separated table. Quoting is disabled: tweets and
/// argument sentences routinely contain unbalanced quotes.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .quoting(false)
            .has_headers(true)
            .flexible(false)
            .from_reader(bytes.as_slice());
        let header = reader
            .byte_headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(|h| String::from_utf8_lossy(h).trim().trim_start_matches('\u{feff}').to_owned())
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for rec in reader.byte_records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.iter().all(|f| f.iter().all(u8::is_ascii_whitespace)) {
                continue;
            }
            let cells = rec
                .iter()
                .map(|f| String::from_utf8_lossy(f).into_owned())
                .collect();
            rows.push((line, cells));
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput(path.to_owned()));
        }
        Ok(Table {
            path: path.to_owned(),
            header,
            rows,
        })
    }

    fn column(&self, names: &[&str]) -> Option<usize> {
        self.header
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    }

    fn require(&self, names: &[&str]) -> Result<usize> {
        self.column(names).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 1,
            message: format!("missing column {:?}", names[0]),
        })
    }

    fn parse_err(&self, line: u64, err: Error) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: err.to_string(),
        }
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_owned(),
        line,
        message: match err.kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => format!("expected {expected_len} columns, found {len}"),
            _ => err.to_string(),
        },
    }
}

const SEMEVAL_TRAIN_FILES: &[&str] = &[
    "semeval2016-task6-trialdata.txt",
    "semeval2016-task6-trainingdata.txt",
];
const SEMEVAL_TEST_FILES: &[&str] = &[
    "SemEval2016-Task6-subtaskA-testdata-gold.txt",
    "SemEval2016-Task6-subtaskA-testdata.txt",
];

fn semeval_files(dir: &Path) -> Result<(Vec<PathBuf>, PathBuf)> {
    let train = if dir.join("train.tsv").is_file() {
        vec![dir.join("train.tsv")]
    } else {
        SEMEVAL_TRAIN_FILES
            .iter()
            .map(|f| dir.join(f))
            .filter(|p| p.is_file())
            .collect()
    };
    if train.is_empty() {
        return Err(Error::io(
            dir.join("train.tsv"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "training file not found"),
        ));
    }
    let test = std::iter::once("test.tsv")
        .chain(SEMEVAL_TEST_FILES.iter().copied())
        .map(|f| dir.join(f))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join("test.tsv"),
                std::io::Error::new(std::io::ErrorKind::NotFound, "test file not found"),
            )
        })?;
    Ok((train, test))
}

/// Loads SemEval-2016 Task 6 (subtask A) from a directory holding either
/// `train.tsv`/`test.tsv` or the official distribution file names. One sixth
/// of each target's training rows becomes the validation split.
pub fn load_semeval(dir: &Path, seed: u64) -> Result<Dataset> {
    let (train_files, test_file) = semeval_files(dir)?;
    let mut examples = Vec::new();
    for f in &train_files {
        read_semeval_file(f, Split::Train, &mut examples)?;
    }
    read_semeval_file(&test_file, Split::Test, &mut examples)?;
    carve_validation(&mut examples, seed);
    Dataset::assemble(DatasetKind::Semeval, examples, true)
}

fn read_semeval_file(path: &Path, split: Split, out: &mut Vec<Example>) -> Result<()> {
    let table = Table::read(path)?;
    let id_col = table.require(&["ID"])?;
    let target_col = table.require(&["Target"])?;
    let text_col = table.require(&["Tweet", "Text"])?;
    let stance_col = table.require(&["Stance"])?;
    for (line, row) in &table.rows {
        let stance = parse_optional_stance(&row[stance_col]).map_err(|e| table.parse_err(*line, e))?;
        if stance.is_none() && split != Split::Test {
            return Err(table.parse_err(*line, Error::UnknownStance(row[stance_col].clone())));
        }
        out.push(Example {
            id: row[id_col].trim().to_owned(),
            text: row[text_col].clone(),
            target: row[target_col].trim().to_owned(),
            stance,
            split,
            tokens: Vec::new(),
        });
    }
    Ok(())
}

/// Loads the UKP sentential argument corpus: one or more TSV files with
/// `topic`, `sentence`, `annotation` and `set` columns, using the split
/// assignment shipped with the data. Example ids are `<file stem>:<line>`.
pub fn load_ukp(path: &Path) -> Result<Dataset> {
    let files = tsv_files(path)?;
    let mut examples = Vec::new();
    for f in &files {
        let table = Table::read(f)?;
        let topic_col = table.require(&["topic"])?;
        let sentence_col = table.require(&["sentence"])?;
        let label_col = table.require(&["annotation"])?;
        let set_col = table.require(&["set"])?;
        let id_col = table.column(&["id"]);
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (line, row) in &table.rows {
            let stance: Stance = row[label_col].parse().map_err(|e| table.parse_err(*line, e))?;
            let split: Split = row[set_col].parse().map_err(|e| table.parse_err(*line, e))?;
            let id = match id_col {
                Some(c) => row[c].trim().to_owned(),
                None => format!("{stem}:{line}"),
            };
            examples.push(Example {
                id,
                text: row[sentence_col].clone(),
                target: row[topic_col].trim().to_owned(),
                stance: Some(stance),
                split,
                tokens: Vec::new(),
            });
        }
    }
    Dataset::assemble(DatasetKind::Ukp, examples, false)
}

/// Loads the plain `ID, Target, Text, Stance, Split` layout written by the
/// synthetic generator and accepted by `predict`. `Stance` and `Split` are
/// optional; rows without a split are treated as test rows.
pub fn load_generic(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    let mut examples = Vec::new();
    for f in tsv_files(path)? {
        let table = Table::read(&f)?;
        let id_col = table.require(&["ID"])?;
        let target_col = table.require(&["Target"])?;
        let text_col = table.require(&["Text", "Tweet", "Sentence"])?;
        let stance_col = table.column(&["Stance"]);
        let split_col = table.column(&["Split", "set"]);
        for (line, row) in &table.rows {
            let stance = match stance_col {
                Some(c) => parse_optional_stance(&row[c]).map_err(|e| table.parse_err(*line, e))?,
                None => None,
            };
            let split = match split_col {
                Some(c) => row[c].parse().map_err(|e| table.parse_err(*line, e))?,
                None => Split::Test,
            };
            examples.push(Example {
                id: row[id_col].trim().to_owned(),
                text: row[text_col].clone(),
                target: row[target_col].trim().to_owned(),
                stance,
                split,
                tokens: Vec::new(),
            });
        }
    }
    Dataset::assemble(kind, examples, false)
}

fn tsv_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.extension().is_some_and(|x| x == "tsv") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .tsv files"),
        ));
    }
    Ok(files)
}
