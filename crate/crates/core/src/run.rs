//! End-to-end runs: topic models and CPA trials for every target group,
//! their on-disk layout, and scoring of whole splits.
//!
//! A run directory holds `run.json` plus one subdirectory per group:
//!
//! ```text
//! run.json
//! g0-<target>/vocab.tsv
//! g0-<target>/lda-{favor,none,against}.lda1
//! g0-<target>/topics.json
//! g0-<target>/train_ids.txt
//! g0-<target>/trial<k>.cpa1
//! g0-<target>/trial<k>-s<seed>.log.csv
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{partition_by_stance, report_target_order, Dataset, Example, Split, Stance, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{score_targets, Report};
use crate::graph::HeteroTopicGraph;
use crate::inference::{text_features, Mode, Predictor, ScoreBundle, ScoreNorm, TextFeatures};
use crate::topics::{read_lda, top_words_json, write_lda, TopicDistribution, TopicModelTriple};
use crate::training::{mix_seed, train_trial, EncoderStore, EpochLog, GroupInputs, TrainConfig, TrialOutcome};
use crate::cpa::{read_checkpoint, write_checkpoint, CpaModel};

/// Targets trained together in one graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub targets: Vec<String>,
}

/// One group per target, or a single group over all of them.
pub fn plan_groups(ds: &Dataset, joint: bool) -> Vec<GroupSpec> {
    if joint {
        vec![GroupSpec {
            name: "joint".into(),
            targets: ds.targets.clone(),
        }]
    } else {
        ds.targets
            .iter()
            .map(|t| GroupSpec {
                name: t.clone(),
                targets: vec![t.clone()],
            })
            .collect()
    }
}

fn in_group<'d>(ds: &'d Dataset, spec: &GroupSpec, split: Split) -> Vec<&'d Example> {
    ds.split(split).filter(|e| spec.targets.contains(&e.target)).collect()
}

/// Fits the three per-stance topic models on a group's training texts.
pub fn fit_group_topics(ds: &Dataset, spec: &GroupSpec, cfg: &TrainConfig, index: usize) -> Result<TopicModelTriple> {
    let train = in_group(ds, spec, Split::Train);
    if train.is_empty() {
        return Err(Error::invalid(format!("group {:?} has no training texts", spec.name)));
    }
    let vocab = Arc::new(Vocabulary::from_docs(train.iter().map(|e| e.tokens.iter())));
    let subsets = partition_by_stance(train.into_iter());
    let docs: Vec<Vec<Vec<String>>> = Stance::ALL
        .iter()
        .map(|&s| subsets.get(s).iter().map(|e| e.tokens.clone()).collect())
        .collect();
    TopicModelTriple::fit(
        [&docs[0], &docs[1], &docs[2]],
        vocab,
        &cfg.lda,
        mix_seed(cfg.seed, 0x006c_6461_0000 + index as u64),
    )
}

fn features_for(examples: &[&Example], store: &EncoderStore, triple: &TopicModelTriple) -> Result<Vec<TextFeatures>> {
    examples.iter().map(|e| text_features(e, store, triple)).collect()
}

/// Texts, features and graph of one group.
pub fn group_inputs<'d>(
    ds: &'d Dataset,
    spec: &GroupSpec,
    store: &EncoderStore,
    triple: &TopicModelTriple,
) -> Result<GroupInputs<'d>> {
    let train = in_group(ds, spec, Split::Train);
    let val = in_group(ds, spec, Split::Val);
    let train_features = features_for(&train, store, triple)?;
    let val_features = features_for(&val, store, triple)?;
    let dis: Vec<TopicDistribution> = train_features.iter().map(|f| f.dis.clone()).collect();
    let graph = HeteroTopicGraph::build(&train, &dis)?;
    let labels: Vec<_> = Stance::ALL.iter().map(|&s| store.label(s)).collect::<Result<_>>()?;
    let views: Vec<_> = labels.iter().map(|l| l.view()).collect();
    Ok(GroupInputs {
        train,
        train_features,
        val,
        val_features,
        graph,
        label_init: ndarray::stack(Axis(0), &views).expect("uniform encoder width"),
    })
}

#[derive(Debug, Clone)]
pub struct TrainedGroup {
    pub spec: GroupSpec,
    pub triple: TopicModelTriple,
    /// Text row order of every trial's embedding table.
    pub train_ids: Vec<String>,
    pub trials: Vec<TrialOutcome>,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub config: TrainConfig,
    pub groups: Vec<TrainedGroup>,
}

/// Trains every group for `cfg.trials` trials. `progress` receives one line
/// per finished trial.
pub fn train_run(
    ds: &Dataset,
    store: &EncoderStore,
    cfg: &TrainConfig,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<TrainedRun> {
    cfg.validate()?;
    store.check_coverage(ds)?;
    let mut groups = Vec::new();
    for (gi, spec) in plan_groups(ds, cfg.joint).into_iter().enumerate() {
        let triple = fit_group_topics(ds, &spec, cfg, gi)?;
        let inputs = group_inputs(ds, &spec, store, &triple)?;
        let seeds: Vec<u64> = (0..cfg.trials).map(|t| cfg.trial_seed(t)).collect();
        let report = |t: usize, out: &TrialOutcome| {
            let best = &out.log[out.best_epoch - 1];
            progress(&format!(
                "{} trial {} (seed {}): best epoch {} loss {:.4} val MicF {}",
                spec.name,
                t + 1,
                out.seed,
                out.best_epoch,
                best.loss,
                best.val_micro.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
            ))
        };
        let trials: Vec<TrialOutcome> = if cfg.parallel_trials && seeds.len() > 1 {
            let inputs = &inputs;
            std::thread::scope(|scope| {
                let handles: Vec<_> = seeds
                    .iter()
                    .map(|&s| scope.spawn(move || train_trial(inputs, cfg, s)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("trial thread panicked"))
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            seeds
                .iter()
                .map(|&s| train_trial(&inputs, cfg, s))
                .collect::<Result<Vec<_>>>()?
        };
        for (t, out) in trials.iter().enumerate() {
            report(t, out);
        }
        groups.push(TrainedGroup {
            train_ids: inputs.train.iter().map(|e| e.id.clone()).collect(),
            spec,
            triple,
            trials,
        });
    }
    Ok(TrainedRun {
        config: cfg.clone(),
        groups,
    })
}

/// Examples of one split with their group and model-independent features.
pub struct PreparedSplit<'d> {
    pub examples: Vec<&'d Example>,
    pub group: Vec<usize>,
    pub features: Vec<TextFeatures>,
}

impl TrainedRun {
    pub fn trials(&self) -> usize {
        self.config.trials
    }

    pub fn group_of(&self, target: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g.spec.targets.iter().any(|t| t == target))
            .ok_or_else(|| Error::UnknownTarget(target.to_string()))
    }

    pub fn prepare_examples<'d>(&self, examples: Vec<&'d Example>, store: &EncoderStore) -> Result<PreparedSplit<'d>> {
        let mut group = Vec::with_capacity(examples.len());
        let mut features = Vec::with_capacity(examples.len());
        for ex in &examples {
            let g = self.group_of(&ex.target)?;
            features.push(text_features(ex, store, &self.groups[g].triple)?);
            group.push(g);
        }
        Ok(PreparedSplit {
            examples,
            group,
            features,
        })
    }

    pub fn prepare<'d>(&self, ds: &'d Dataset, store: &EncoderStore, split: Split) -> Result<PreparedSplit<'d>> {
        self.prepare_examples(ds.split(split).collect(), store)
    }

    /// Scores every prepared example with trial `trial`'s models.
    pub fn predict(&self, prepared: &PreparedSplit<'_>, trial: usize, mode: Mode, norm: ScoreNorm) -> Result<Vec<ScoreBundle>> {
        if trial >= self.trials() {
            return Err(Error::invalid(format!("trial {} of {}", trial + 1, self.trials())));
        }
        let predictors: Vec<Predictor<'_>> = self
            .groups
            .iter()
            .map(|g| Predictor::new(&g.trials[trial].model))
            .collect::<Result<_>>()?;
        prepared
            .group
            .iter()
            .zip(&prepared.features)
            .map(|(&g, f)| predictors[g].score(f, mode, norm))
            .collect()
    }

    /// Per-target F_avg and MacF/MicF for each trial, in report order.
    pub fn report(&self, prepared: &PreparedSplit<'_>, mode: Mode, norm: ScoreNorm, title: &str) -> Result<Report> {
        let golds: Vec<Stance> = prepared
            .examples
            .iter()
            .map(|e| e.stance.ok_or_else(|| Error::invalid(format!("example {} has no gold stance", e.id))))
            .collect::<Result<_>>()?;
        let targets: Vec<&str> = prepared.examples.iter().map(|e| e.target.as_str()).collect();
        let mut present: Vec<String> = Vec::new();
        for t in &targets {
            if !present.iter().any(|p| p == t) {
                present.push(t.to_string());
            }
        }
        let order = report_target_order(&present);
        let mut trials = Vec::with_capacity(self.trials());
        for t in 0..self.trials() {
            let preds: Vec<Stance> = self.predict(prepared, t, mode, norm)?.iter().map(|b| b.predicted).collect();
            trials.push(score_targets(&preds, &golds, &targets, Some(&order))?);
        }
        Report::new(title, trials)
    }

    /// Final representations of a group's training texts under trial
    /// `trial`, in `train_ids` order.
    pub fn train_text_reps(&self, ds: &Dataset, store: &EncoderStore, group: usize, trial: usize) -> Result<Array2<f64>> {
        let g = &self.groups[group];
        let inputs = group_inputs(ds, &g.spec, store, &g.triple)?;
        let model = &g.trials[trial].model;
        let reps = model.final_reps_frozen(&inputs.graph.lap)?;
        Ok(reps.slice_move(ndarray::s![..model.dims.n_texts, ..]))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest {
            config: self.config.clone(),
            groups: Vec::new(),
        };
        for (gi, g) in self.groups.iter().enumerate() {
            let sub = format!("g{gi}-{}", slug(&g.spec.name));
            let gdir = dir.join(&sub);
            fs::create_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;
            write_vocab(g.triple.vocab(), &gdir.join("vocab.tsv"))?;
            for s in Stance::ALL {
                let path = gdir.join(format!("lda-{}.lda1", s.key()));
                write_lda(g.triple.get(s), create(&path)?).map_err(|e| at(&path, e))?;
            }
            let topics: serde_json::Value = Stance::ALL
                .iter()
                .map(|&s| (s.key().to_string(), top_words_json(g.triple.get(s), 10)))
                .collect::<serde_json::Map<_, _>>()
                .into();
            write_text(&gdir.join("topics.json"), &serde_json::to_string_pretty(&topics)?)?;
            write_text(&gdir.join("train_ids.txt"), &lines(&g.train_ids))?;
            let mut trials = Vec::new();
            for (t, out) in g.trials.iter().enumerate() {
                let path = gdir.join(format!("trial{}.cpa1", t + 1));
                let mut w = create(&path)?;
                write_checkpoint(&out.model, &mut w).map_err(|e| at(&path, e))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
                let log_path = gdir.join(format!("trial{}-s{}.log.csv", t + 1, out.seed));
                write_text(&log_path, &log_csv(&out.log))?;
                trials.push(TrialEntry {
                    seed: out.seed,
                    best_epoch: out.best_epoch,
                });
            }
            manifest.groups.push(GroupEntry {
                spec: g.spec.clone(),
                dir: sub,
                trials,
            });
        }
        write_text(&dir.join("run.json"), &serde_json::to_string_pretty(&manifest)?)
    }

    /// Reloads a saved run. Training logs are read back from their CSVs.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("run.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut groups = Vec::new();
        for entry in manifest.groups {
            let gdir = dir.join(&entry.dir);
            let vocab = Arc::new(read_vocab(&gdir.join("vocab.tsv"))?);
            let mut models = Vec::new();
            for s in Stance::ALL {
                let path = gdir.join(format!("lda-{}.lda1", s.key()));
                models.push(read_lda(open(&path)?, vocab.clone()).map_err(|e| at(&path, e))?);
            }
            let against = models.pop().expect("three models");
            let none = models.pop().expect("three models");
            let favor = models.pop().expect("three models");
            let triple = TopicModelTriple::new(favor, none, against)?;
            let ids_path = gdir.join("train_ids.txt");
            let train_ids: Vec<String> = fs::read_to_string(&ids_path)
                .map_err(|e| Error::io(&ids_path, e))?
                .lines()
                .map(str::to_string)
                .collect();
            let mut trials = Vec::new();
            for (t, tr) in entry.trials.iter().enumerate() {
                let path = gdir.join(format!("trial{}.cpa1", t + 1));
                let model: CpaModel = read_checkpoint(open(&path)?, manifest.config.leaky_slope).map_err(|e| at(&path, e))?;
                if model.dims.n_texts != train_ids.len() {
                    return Err(Error::Corrupt {
                        path,
                        message: format!("{} text rows for {} training ids", model.dims.n_texts, train_ids.len()),
                    });
                }
                let log_path = gdir.join(format!("trial{}-s{}.log.csv", t + 1, tr.seed));
                let log = read_log(&log_path)?;
                trials.push(TrialOutcome {
                    seed: tr.seed,
                    model,
                    best_epoch: tr.best_epoch,
                    log,
                });
            }
            groups.push(TrainedGroup {
                spec: entry.spec,
                triple,
                train_ids,
                trials,
            });
        }
        Ok(TrainedRun {
            config: manifest.config,
            groups,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: TrainConfig,
    groups: Vec<GroupEntry>,
}

#[derive(Serialize, Deserialize)]
struct GroupEntry {
    spec: GroupSpec,
    dir: String,
    trials: Vec<TrialEntry>,
}

#[derive(Serialize, Deserialize)]
struct TrialEntry {
    seed: u64,
    best_epoch: usize,
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let trimmed = out.trim_matches('-');
    if trimmed.is_empty() { "group".into() } else { trimmed.chars().take(40).collect() }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(EpochLog::CSV_HEADER);
    s.push('\n');
    for row in log {
        s.push_str(&row.csv_row());
        s.push('\n');
    }
    s
}

fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(bad(i + 1, format!("expected 6 cells, found {}", cells.len())));
        }
        let num = |c: &str| c.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
        let opt = |c: &str| if c.is_empty() { Ok(None) } else { num(c).map(Some) };
        out.push(EpochLog {
            epoch: cells[0].parse().map_err(|e: std::num::ParseIntError| bad(i + 1, e.to_string()))?,
            loss: num(cells[1])?,
            contrastive: num(cells[2])?,
            cosine: num(cells[3])?,
            val_macro: opt(cells[4])?,
            val_micro: opt(cells[5])?,
        });
    }
    Ok(out)
}

fn write_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut s = String::new();
    for (i, t) in vocab.tokens().iter().enumerate() {
        s.push_str(t);
        s.push('\t');
        s.push_str(&vocab.doc_freq(i).to_string());
        s.push('\n');
    }
    write_text(path, &s)
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut tokens = Vec::new();
    let mut df = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let (tok, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: "expected token<TAB>count".into(),
        })?;
        tokens.push(tok.to_string());
        df.push(count.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: format!("bad document frequency {count:?}"),
        })?);
    }
    Vocabulary::from_tokens(tokens, df)
}

fn lines(items: &[String]) -> String {
    let mut s = items.join("\n");
    s.push('\n');
    s
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Attaches a path to stream-level errors.
fn at(path: &Path, e: Error) -> Error {
    match e {
        Error::RawIo(source) => Error::io(path, source),
        Error::BadMagic { expected, .. } => Error::BadMagic {
            path: path.to_path_buf(),
            expected,
        },
        Error::Corrupt { message, .. } => Error::Corrupt {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("Climate Change is a Real Concern"), "climate-change-is-a-real-concern");
        assert_eq!(slug("--"), "group");
        assert_eq!(slug("abortion"), "abortion");
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = vec![
            EpochLog {
                epoch: 1,
                loss: 1.25,
                contrastive: 0.75,
                cosine: 0.5,
                val_macro: Some(0.5),
                val_micro: Some(0.625),
            },
            EpochLog {
                epoch: 2,
                loss: 1.0,
                contrastive: 0.5,
                cosine: 0.5,
                val_macro: None,
                val_micro: None,
            },
        ];
        let path = dir.path().join("log.csv");
        write_text(&path, &log_csv(&log)).unwrap();
        assert_eq!(read_log(&path).unwrap(), log);
    }
}
