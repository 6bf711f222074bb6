//! Datasets, splits, stance labels and the bag-of-words vocabulary.

mod load;
mod stopwords;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use load::{load_generic, load_semeval, load_ukp, DatasetKind};
pub use tokenize::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    Favor,
    None,
    Against,
}

impl Stance {
    /// Label order used by every score triple and adjacency column.
    pub const ALL: [Stance; 3] = [Stance::Favor, Stance::None, Stance::Against];

    pub fn index(self) -> usize {
        match self {
            Stance::Favor => 0,
            Stance::None => 1,
            Stance::Against => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        Stance::ALL.get(i).copied()
    }

    /// Lowercase name used in embedding record ids (`label:favor`).
    pub fn key(self) -> &'static str {
        match self {
            Stance::Favor => "favor",
            Stance::None => "none",
            Stance::Against => "against",
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stance::Favor => "FAVOR",
            Stance::None => "NONE",
            Stance::Against => "AGAINST",
        })
    }
}

impl FromStr for Stance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "favor" | "favour" | "argument_for" | "for" => Ok(Stance::Favor),
            "none" | "noargument" | "neutral" | "no" => Ok(Stance::None),
            "against" | "argument_against" => Ok(Stance::Against),
            _ => Err(Error::UnknownStance(s.to_owned())),
        }
    }
}

/// Parses a stance cell where `UNKNOWN` (unlabelled test data) is allowed.
pub(crate) fn parse_optional_stance(s: &str) -> Result<Option<Stance>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("unknown") {
        Ok(None)
    } else {
        t.parse().map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "dev" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub target: String,
    /// `None` only for unlabelled test rows.
    pub stance: Option<Stance>,
    pub split: Split,
    pub tokens: Vec<String>,
}

/// Token index built from the training split. Indices are dense and follow
/// lexicographic token order so the mapping is reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    doc_freq: Vec<u32>,
}

impl Vocabulary {
    pub fn from_docs<'a, I, D>(docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        let mut df: BTreeMap<&str, u32> = BTreeMap::new();
        for doc in docs {
            let uniq: BTreeSet<&str> = doc.into_iter().map(String::as_str).collect();
            for tok in uniq {
                *df.entry(tok).or_default() += 1;
            }
        }
        let mut vocab = Vocabulary::default();
        for (tok, n) in df {
            vocab.index.insert(tok.to_owned(), vocab.tokens.len());
            vocab.tokens.push(tok.to_owned());
            vocab.doc_freq.push(n);
        }
        vocab
    }

    /// Rebuilds a vocabulary from an ordered token list (as stored on disk).
    pub fn from_tokens(tokens: Vec<String>, doc_freq: Vec<u32>) -> Result<Self> {
        if tokens.len() != doc_freq.len() {
            return Err(Error::invalid("vocabulary token/df length mismatch"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            index,
            tokens,
            doc_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_freq(&self, id: usize) -> u32 {
        self.doc_freq[id]
    }

    /// Maps tokens to ids, silently dropping out-of-vocabulary ones.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub examples: Vec<Example>,
    pub targets: Vec<String>,
    pub vocab: Vocabulary,
    /// True when the validation split was carved out of the official
    /// training file (SemEval), so official counts merge it back.
    pub val_carved_from_train: bool,
}

/// Per-target, per-split stance counts in Favor/None/Against order.
pub type SplitCounts = BTreeMap<(String, Split), [usize; 3]>;

impl Dataset {
    /// Validates invariants, tokenizes and builds the train vocabulary.
    pub(crate) fn assemble(
        kind: DatasetKind,
        mut examples: Vec<Example>,
        val_carved_from_train: bool,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        let mut targets: Vec<String> = Vec::new();
        for ex in &mut examples {
            if !seen.insert(ex.id.clone()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
            if ex.target.trim().is_empty() {
                return Err(Error::invalid(format!("example {} has an empty target", ex.id)));
            }
            if ex.stance.is_none() && ex.split != Split::Test {
                return Err(Error::invalid(format!(
                    "example {} in the {} split has no stance",
                    ex.id, ex.split
                )));
            }
            if !targets.contains(&ex.target) {
                targets.push(ex.target.clone());
            }
            ex.tokens = tokenize(&ex.text);
        }
        let vocab = Vocabulary::from_docs(
            examples
                .iter()
                .filter(|e| e.split == Split::Train)
                .map(|e| e.tokens.iter()),
        );
        Ok(Dataset {
            kind,
            examples,
            targets,
            vocab,
            val_carved_from_train,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn has_target(&self, target: &str) -> bool {
        self.targets.iter().any(|t| t == target)
    }

    /// Counts by the dataset's own split tags.
    pub fn split_counts(&self) -> SplitCounts {
        let mut out = SplitCounts::new();
        for ex in &self.examples {
            if let Some(s) = ex.stance {
                out.entry((ex.target.clone(), ex.split)).or_insert([0; 3])[s.index()] += 1;
            }
        }
        out
    }

    /// Counts by the distribution's official partition: a carved-out
    /// validation split is folded back into train.
    pub fn official_counts(&self) -> SplitCounts {
        let mut out = SplitCounts::new();
        for ex in &self.examples {
            let split = match ex.split {
                Split::Val if self.val_carved_from_train => Split::Train,
                s => s,
            };
            if let Some(s) = ex.stance {
                out.entry((ex.target.clone(), split)).or_insert([0; 3])[s.index()] += 1;
            }
        }
        out
    }
}

/// Train-split examples of one target partitioned by gold stance.
#[derive(Debug, Default)]
pub struct StanceSubsets<'a> {
    pub favor: Vec<&'a Example>,
    pub none: Vec<&'a Example>,
    pub against: Vec<&'a Example>,
}

impl<'a> StanceSubsets<'a> {
    pub fn get(&self, stance: Stance) -> &[&'a Example] {
        match stance {
            Stance::Favor => &self.favor,
            Stance::None => &self.none,
            Stance::Against => &self.against,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.favor.len(), self.none.len(), self.against.len()]
    }
}

pub fn stance_subsets<'a>(ds: &'a Dataset, target: &str) -> Result<StanceSubsets<'a>> {
    if !ds.has_target(target) {
        return Err(Error::UnknownTarget(target.to_owned()));
    }
    Ok(partition_by_stance(
        ds.split(Split::Train).filter(|e| e.target == target),
    ))
}

/// Partitions labelled examples by stance; unlabelled ones are skipped.
pub fn partition_by_stance<'a>(examples: impl Iterator<Item = &'a Example>) -> StanceSubsets<'a> {
    let mut out = StanceSubsets::default();
    for ex in examples {
        match ex.stance {
            Some(Stance::Favor) => out.favor.push(ex),
            Some(Stance::None) => out.none.push(ex),
            Some(Stance::Against) => out.against.push(ex),
            None => {}
        }
    }
    out
}

/// Moves one sixth of each target's training rows into a validation split
/// using a seeded Fisher-Yates shuffle.
pub(crate) fn carve_validation(examples: &mut [Example], seed: u64) {
    let mut by_target: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        if ex.split == Split::Train {
            by_target.entry(ex.target.clone()).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in by_target.values_mut() {
        idx.shuffle(&mut rng);
        let n_val = idx.len() / 6;
        for &i in &idx[..n_val] {
            examples[i].split = Split::Val;
        }
    }
}

/// Two-letter abbreviations used as report column headers, in the
/// conventional column order for each benchmark.
pub const TARGET_ABBREVIATIONS: &[(&str, &str)] = &[
    ("atheism", "AT"),
    ("climate change is a real concern", "CC"),
    ("feminist movement", "FM"),
    ("hillary clinton", "HC"),
    ("legalization of abortion", "LA"),
    ("abortion", "AB"),
    ("cloning", "CL"),
    ("death penalty", "DP"),
    ("gun control", "GC"),
    ("marijuana legalization", "ML"),
    ("minimum wage", "MW"),
    ("nuclear energy", "NE"),
    ("school uniforms", "SU"),
];

pub fn target_abbreviation(target: &str) -> Option<&'static str> {
    let norm = target.trim().to_lowercase();
    TARGET_ABBREVIATIONS
        .iter()
        .find(|(name, _)| *name == norm)
        .map(|(_, abbr)| *abbr)
}

/// Orders targets by the benchmark column order; unknown names follow in
/// lexicographic order.
pub fn report_target_order(targets: &[String]) -> Vec<String> {
    let rank = |t: &str| {
        let norm = t.trim().to_lowercase();
        TARGET_ABBREVIATIONS
            .iter()
            .position(|(name, _)| *name == norm)
            .unwrap_or(usize::MAX)
    };
    let mut out = targets.to_vec();
    out.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
    out
}
