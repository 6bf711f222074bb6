use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::Args;
use cosd::corpus::{load_generic, partition_by_stance, Dataset, DatasetKind, Example, Split, Stance, Vocabulary};
use cosd::inference::{export_attention, top_k_similar, Mode, ScoreNorm};
use cosd::run::{plan_groups, train_run, TrainedRun};
use cosd::synth::{generate, write_corpus, SynthConfig};
use cosd::topics::{fit_lda, perplexity, umass_coherence};
use cosd::training::mix_seed;

use crate::config::{ConfigArgs, RunConfig, SEED_ENV};

/// Bad flag combinations; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let env = std::env::var(SEED_ENV).ok();
    RunConfig::resolve(args, env.as_deref())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Inclusive topic-count range written `lo:hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HRange {
    pub lo: usize,
    pub hi: usize,
}

impl FromStr for HRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("{v:?} is not a topic count"));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo == 0 || lo > hi {
            return Err(format!("range {s:?} must satisfy 1 <= LO <= HI"));
        }
        Ok(HRange { lo, hi })
    }
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Topic counts to try, inclusive.
    #[arg(long, default_value = "3:7")]
    pub h_range: HRange,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fits one model per (group, stance, H). Perplexity is measured on the
/// group's validation texts of that stance, or on its training texts when
/// there are none; coherence always uses the training texts.
pub fn topics(args: TopicsArgs) -> Result<()> {
    let cfg = resolve(&args.config)?;
    let ds = cfg.load_dataset()?;
    let mut csv = String::from("target,stance,topics,perplexity,coherence,heldout\n");
    for (gi, spec) in plan_groups(&ds, cfg.joint).iter().enumerate() {
        let of = |split: Split| ds.split(split).filter(|e| spec.targets.contains(&e.target)).collect::<Vec<_>>();
        let train = of(Split::Train);
        let val = of(Split::Val);
        let vocab = std::sync::Arc::new(Vocabulary::from_docs(train.iter().map(|e| e.tokens.iter())));
        let train_sets = partition_by_stance(train.iter().copied());
        let val_sets = partition_by_stance(val.iter().copied());
        for stance in Stance::ALL {
            let docs: Vec<Vec<String>> = train_sets.get(stance).iter().map(|e| e.tokens.clone()).collect();
            let held: Vec<Vec<String>> = val_sets.get(stance).iter().map(|e| e.tokens.clone()).collect();
            if docs.is_empty() {
                eprintln!("{}: no {stance} training texts, skipped", spec.name);
                continue;
            }
            for h in args.h_range.lo..=args.h_range.hi {
                let mut params = cfg.lda_params();
                params.topics = h;
                let stream = 0x746f_7000_0000 + ((gi as u64) << 16) + ((stance.index() as u64) << 8) + h as u64;
                let model = fit_lda(&docs, vocab.clone(), &params, mix_seed(cfg.seed, stream))
                    .with_context(|| format!("fitting {} {stance} with H = {h}", spec.name))?;
                let (ppl, heldout) = match perplexity(&model, &held) {
                    Ok(p) if !held.is_empty() => (p, "val"),
                    _ => (perplexity(&model, &docs)?, "train"),
                };
                let coherence = umass_coherence(&model, &docs, 10)?;
                let _ = writeln!(
                    csv,
                    "{},{},{h},{ppl:.6},{coherence:.6},{heldout}",
                    csv_field(&spec.name),
                    stance.key()
                );
            }
        }
    }
    match &args.out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory; defaults to `<out_dir>/run-<unix seconds>-s<seed>`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

fn fresh_run_dir(cfg: &RunConfig) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let base = cfg.out_dir.join(format!("run-{secs}-s{}", cfg.seed));
    let mut dir = base.clone();
    let mut n = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    dir
}

fn labelled(ds: &Dataset, split: Split) -> Vec<&Example> {
    ds.split(split).filter(|e| e.stance.is_some()).collect()
}

fn report_title(split: Split, mode: Mode) -> String {
    format!("{split} ({mode})")
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve(&args.config)?.absolute()?;
    let store = cfg.load_embeddings()?;
    let ds = cfg.load_dataset()?;
    let tcfg = cfg.train_config();
    let dir = args.run_dir.clone().unwrap_or_else(|| fresh_run_dir(&cfg));
    eprintln!(
        "training {} groups x {} trials, {} epochs, into {}",
        plan_groups(&ds, cfg.joint).len(),
        cfg.trials,
        cfg.epochs,
        dir.display()
    );
    let run = train_run(&ds, &store, &tcfg, &|line| eprintln!("{line}"))?;
    run.save(&dir)?;
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)?;
    let mut last = None;
    for split in [Split::Val, Split::Test] {
        let examples = labelled(&ds, split);
        if examples.is_empty() {
            continue;
        }
        let prepared = run.prepare_examples(examples, &store)?;
        let report = run.report(&prepared, cfg.mode, cfg.score_norm, &report_title(split, cfg.mode))?;
        write_file(&dir.join(format!("report-{split}.txt")), &report.to_text())?;
        write_file(&dir.join(format!("report-{split}.csv")), &report.to_csv())?;
        last = Some(report);
    }
    if let Some(report) = last {
        print!("{}", report.to_text());
    }
    println!("run: {}", dir.display());
    Ok(())
}

/// Flags shared by commands that reuse a saved run.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run directory written by `cosd train`.
    #[arg(long = "run")]
    pub run: PathBuf,
    /// Dataset override; defaults to the run's configuration.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Embedding file override; defaults to the run's configuration.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Scoring mode; defaults to the run's configuration.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Score normalization; defaults to the run's configuration.
    #[arg(long)]
    pub score_norm: Option<ScoreNorm>,
}

struct Loaded {
    cfg: RunConfig,
    run: TrainedRun,
    mode: Mode,
    norm: ScoreNorm,
}

impl RunArgs {
    fn load(&self) -> Result<Loaded> {
        let mut cfg = RunConfig::from_file(&self.run.join("config.toml"))?;
        if let Some(d) = &self.data {
            cfg.data = d.clone();
        }
        if let Some(e) = &self.embeddings {
            cfg.embeddings = e.clone();
        }
        let run = TrainedRun::load(&self.run).with_context(|| format!("loading run {}", self.run.display()))?;
        Ok(Loaded {
            mode: self.mode.unwrap_or(cfg.mode),
            norm: self.score_norm.unwrap_or(cfg.score_norm),
            cfg,
            run,
        })
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let l = args.run.load()?;
    let store = l.cfg.load_embeddings()?;
    let ds = l.cfg.load_dataset()?;
    let examples = labelled(&ds, args.split);
    if examples.is_empty() {
        bail!("the {} split has no labelled examples", args.split);
    }
    let prepared = l.run.prepare_examples(examples, &store)?;
    let report = l.run.report(&prepared, l.mode, l.norm, &report_title(args.split, l.mode))?;
    if let Some(path) = &args.csv {
        write_file(path, &report.to_csv())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// TSV with ID, Target and Text columns.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Trial whose models score the texts, counted from 1.
    #[arg(long, default_value_t = 1)]
    pub trial: usize,
    /// Also write one token-attention CSV per text into this directory.
    #[arg(long)]
    pub attention_dir: Option<PathBuf>,
}

fn trial_index(run: &TrainedRun, trial: usize) -> Result<usize> {
    if trial == 0 || trial > run.trials() {
        return Err(usage(format!("--trial must be in 1..={}", run.trials())));
    }
    Ok(trial - 1)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let l = args.run.load()?;
    let trial = trial_index(&l.run, args.trial)?;
    let store = l.cfg.load_embeddings()?;
    let ds = load_generic(&args.input, DatasetKind::Generic)?;
    let examples: Vec<&Example> = ds.examples.iter().collect();
    let prepared = l.run.prepare_examples(examples, &store)?;
    let scores = l.run.predict(&prepared, trial, l.mode, l.norm)?;
    let mut out = String::from("id\tpredicted\tsem_favor\tsem_none\tsem_against\tdis_favor\tdis_none\tdis_against\n");
    for (ex, s) in prepared.examples.iter().zip(&scores) {
        let _ = write!(out, "{}\t{}", ex.id, s.predicted);
        for v in s.sem.iter().chain(&s.dis) {
            let _ = write!(out, "\t{v:.6}");
        }
        out.push('\n');
    }
    write_file(&args.out, &out)?;
    if let Some(dir) = &args.attention_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for ex in &prepared.examples {
            export_attention(ex, &store, &dir.join(format!("{}.csv", file_stem_for(&ex.id))))?;
        }
    }
    eprintln!("{} predictions written to {}", scores.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Trial to inspect, counted from 1.
    #[arg(long, default_value_t = 1)]
    pub trial: usize,
    /// Restrict to the group holding this target.
    #[arg(long)]
    pub group: Option<String>,
    /// Write `id v1 v2 ...` lines with the final representation of every
    /// training text.
    #[arg(long)]
    pub dump_final_reps: Option<PathBuf>,
    /// Write the normalized graph as `row col weight` lines.
    #[arg(long)]
    pub dump_graph: Option<PathBuf>,
    /// Print the training texts nearest to this one.
    #[arg(long)]
    pub similar: Option<String>,
    /// Neighbours printed by `--similar`.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Write token attention weights for this text to `--out`.
    #[arg(long, requires = "out")]
    pub attention: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the top words of every topic.
    #[arg(long)]
    pub topics: bool,
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    let nothing = args.dump_final_reps.is_none()
        && args.dump_graph.is_none()
        && args.similar.is_none()
        && args.attention.is_none()
        && !args.topics;
    if nothing {
        return Err(usage(
            "nothing to inspect: pass --dump-final-reps, --dump-graph, --similar, --attention or --topics",
        ));
    }
    let l = args.run.load()?;
    let trial = trial_index(&l.run, args.trial)?;
    let groups: Vec<usize> = match &args.group {
        Some(t) => vec![l.run.group_of(t).map_err(|e| usage(e.to_string()))?],
        None => (0..l.run.groups.len()).collect(),
    };

    if args.topics {
        for &g in &groups {
            let group = &l.run.groups[g];
            println!("[{}]", group.spec.name);
            for s in Stance::ALL {
                let model = group.triple.get(s);
                for k in 0..model.topics() {
                    let words: Vec<&str> = model.top_words(k, 10).into_iter().map(|w| model.vocab().token(w)).collect();
                    println!("{}/{k}: {}", s.key(), words.join(" "));
                }
            }
        }
    }
    let needs_data = args.dump_final_reps.is_some()
        || args.dump_graph.is_some()
        || args.similar.is_some()
        || args.attention.is_some();
    if !needs_data {
        return Ok(());
    }
    let store = l.cfg.load_embeddings()?;
    let ds = l.cfg.load_dataset()?;

    if let Some(path) = &args.dump_final_reps {
        let mut out = String::new();
        for &g in &groups {
            let reps = l.run.train_text_reps(&ds, &store, g, trial)?;
            for (id, row) in l.run.groups[g].train_ids.iter().zip(reps.rows()) {
                out.push_str(id);
                for v in row {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        write_file(path, &out)?;
    }
    if let Some(path) = &args.dump_graph {
        if groups.len() != 1 {
            return Err(usage("--dump-graph needs --group when the run has several groups"));
        }
        let group = &l.run.groups[groups[0]];
        let inputs = cosd::run::group_inputs(&ds, &group.spec, &store, &group.triple)?;
        let mut buf = Vec::new();
        inputs.graph.lap.write_coo(&mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(id) = &args.similar {
        let ex = ds.get(id).ok_or_else(|| usage(format!("unknown text id {id:?}")))?;
        let g = l.run.group_of(&ex.target)?;
        let group = &l.run.groups[g];
        let row = group
            .train_ids
            .iter()
            .position(|t| t == id)
            .ok_or_else(|| usage(format!("{id:?} is not a training text")))?;
        let reps = l.run.train_text_reps(&ds, &store, g, trial)?;
        let hits = top_k_similar(reps.row(row), reps.view(), &group.train_ids, Some(id), args.k)?;
        for (other, sim) in hits {
            let text = ds.get(&other).map_or("", |e| e.text.as_str());
            println!("{other}\t{sim:.6}\t{text}");
        }
    }
    if let Some(id) = &args.attention {
        let ex = ds.get(id).ok_or_else(|| usage(format!("unknown text id {id:?}")))?;
        let path = args.out.as_ref().expect("clap enforces --out");
        export_attention(ex, &store, path)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().n_train)]
    pub n_train: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_val)]
    pub n_val: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_test)]
    pub n_test: usize,
    #[arg(long, default_value_t = SynthConfig::default().targets)]
    pub targets: usize,
    /// Planted topics per stance.
    #[arg(long, default_value_t = SynthConfig::default().topics_per_stance)]
    pub topics: usize,
    /// Embedding width.
    #[arg(long, default_value_t = SynthConfig::default().dim)]
    pub dim: usize,
}

/// Writes the corpus plus a `cosd.toml` pointing at it.
pub fn synth(args: SynthArgs) -> Result<()> {
    let sc = SynthConfig {
        seed: args.seed,
        n_train: args.n_train,
        n_val: args.n_val,
        n_test: args.n_test,
        targets: args.targets,
        topics_per_stance: args.topics,
        dim: args.dim,
        ..SynthConfig::default()
    };
    let corpus = generate(&sc)?;
    write_corpus(&corpus, &args.out)?;
    let cfg = RunConfig {
        dataset: DatasetKind::Synthetic,
        data: "synthetic.tsv".into(),
        embeddings: "embeddings.emb1".into(),
        embedding_dim: args.dim,
        topics: args.topics,
        out_dir: "runs".into(),
        ..RunConfig::default()
    };
    write_file(&args.out.join("cosd.toml"), &cfg.to_toml()?)?;
    println!(
        "{} texts ({} train / {} val / {} test) written to {}",
        corpus.rows.len(),
        args.n_train,
        args.n_val,
        args.n_test,
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_range_parsing() {
        assert_eq!("3:7".parse::<HRange>().unwrap(), HRange { lo: 3, hi: 7 });
        assert_eq!("5:5".parse::<HRange>().unwrap(), HRange { lo: 5, hi: 5 });
        for bad in ["7:3", "0:2", "3", "a:b", "3:"] {
            assert!(bad.parse::<HRange>().is_err(), "{bad}");
        }
    }

    #[test]
    fn id_file_stems_are_safe() {
        assert_eq!(file_stem_for("test-0001"), "test-0001");
        assert_eq!(file_stem_for("a/b c"), "a_b_c");
    }
}
