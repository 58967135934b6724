use crate::config::{ConfigFileError, Settings};
use crate::manifest::Manifest;
use crate::{Command, Common, SweepParam};
use boundreg::checkpoint::{self, CheckpointError};
use boundreg::corpus::{generate_synthetic, load_corpus, split, write_corpus, CorpusError, Document, SynthSpec};
use boundreg::decoder::{predict_corpus, DecodeError, DecodeOptions, PredictionRecord};
use boundreg::encoder::{VectorError, VectorStore};
use boundreg::eval::{self, dump_trajectories, sweep_gamma, sweep_lambda, sweep_table, trajectory_table};
use boundreg::metrics::{evaluate, EvalError, Metrics};
use boundreg::state::ModelState;
use boundreg::trainer::{train, TrainError};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    /// Process exit code per error category. 2 is left to argument parsing.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Input(_) => 4,
            CliError::Train(_) => 5,
            CliError::Checkpoint(_) => 6,
            CliError::Output(_) => 7,
        }
    }
}

impl From<ConfigFileError> for CliError {
    fn from(e: ConfigFileError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<VectorError> for CliError {
    fn from(e: VectorError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => CliError::Config(c.to_string()),
            e @ (TrainError::EmptyCorpus
            | TrainError::Input(_)
            | TrainError::Eval(_)
            | TrainError::Decode(DecodeError::Input(_))) => CliError::Input(e.to_string()),
            e => CliError::Train(e.to_string()),
        }
    }
}

fn output_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Output(format!("{}: {e}", path.display()))
}

/// A run directory with its manifest.
struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn start(command: &str, common: &Common) -> Result<(Run, Settings), CliError> {
        let file = match &common.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let settings = file.overlay(&common.settings);
        fs::create_dir_all(&common.out).map_err(output_err(&common.out))?;
        let value = serde_json::to_value(&settings).expect("settings always serialize");
        let mut manifest = Manifest::new(command, settings.seed, value);
        if let Some(p) = &common.config {
            manifest.input("config", p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        }
        let run = Run {
            dir: common.out.clone(),
            manifest,
        };
        run.save()?;
        Ok((run, settings))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.manifest
            .input(role, path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    fn output(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.manifest.output(role, path).map_err(output_err(path))
    }

    fn write(&mut self, role: &str, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(output_err(&path))?;
        self.output(role, &path)?;
        Ok(path)
    }

    fn save(&self) -> Result<(), CliError> {
        self.manifest.write(&self.dir).map_err(output_err(&self.dir))
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.manifest.status = "complete";
        self.save()?;
        log::info!("run written to {}", self.dir.display());
        Ok(())
    }
}

fn corpus(run: &mut Run, role: &str, path: &Path) -> Result<Vec<Document>, CliError> {
    let docs = load_corpus(path)?;
    run.input(role, path)?;
    Ok(docs)
}

fn vectors(run: &mut Run, path: Option<&Path>) -> Result<Option<VectorStore>, CliError> {
    path.map(|p| {
        let v = VectorStore::load(p)?;
        run.input("vectors", p)?;
        Ok(v)
    })
    .transpose()
}

fn load_model(run: &mut Run, path: &Path) -> Result<ModelState, CliError> {
    let state = checkpoint::load(path)?;
    run.input("model", path)?;
    Ok(state)
}

/// Decoding options of `state` with any decoding settings applied.
fn decode_options(state: &ModelState, settings: &Settings) -> Result<DecodeOptions, CliError> {
    let mut t = state.train.clone();
    settings.apply(&mut t);
    t.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(DecodeOptions::from(&t))
}

fn metrics_outputs(run: &mut Run, metrics: &Metrics) -> Result<(), CliError> {
    let table = metrics.to_table();
    print!("{table}");
    run.write("metrics", "metrics.tsv", &table)?;
    let json = serde_json::to_string_pretty(metrics).expect("metrics always serialize") + "\n";
    run.write("metrics", "metrics.json", &json)?;
    Ok(())
}

fn write_predictions(run: &mut Run, records: &[PredictionRecord]) -> Result<(), CliError> {
    let path = run.path("predictions.jsonl");
    let err = output_err(&path);
    let mut out = io::BufWriter::new(fs::File::create(&path).map_err(&err)?);
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("records always serialize")).map_err(&err)?;
    }
    out.flush().map_err(&err)?;
    drop(out);
    run.output("predictions", &path)
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let input_err = |m: String| CliError::Input(format!("{}: {m}", path.display()));
    let file = fs::File::open(path).map_err(|e| input_err(e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| input_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| input_err(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate {
            common,
            sentences,
            types,
            vocab_size,
            min_sentence_len,
            max_sentence_len,
            nesting,
            length_weights,
            split: do_split,
        } => {
            let (mut run, settings) = Run::start("generate", &common)?;
            let defaults = SynthSpec::default();
            let spec = SynthSpec {
                sentences,
                vocab_size,
                num_types: types,
                min_sentence_len,
                max_sentence_len,
                entity_len_weights: length_weights.unwrap_or(defaults.entity_len_weights),
                nesting_ratio: nesting,
                marker_variants: defaults.marker_variants,
                seed: settings.seed.unwrap_or(defaults.seed),
            };
            let syn = generate_synthetic(&spec).map_err(|e| CliError::Config(e.to_string()))?;
            log::info!(
                "{} sentences, nesting ratio {:.3}",
                syn.documents.len(),
                syn.nesting_ratio
            );
            let path = run.path("corpus.jsonl");
            write_corpus(&path, &syn.documents).map_err(|e| CliError::Output(e.to_string()))?;
            run.output("corpus", &path)?;
            if do_split {
                let (tr, dev, te) = split(&syn.documents, spec.seed)?;
                for (name, docs) in [("train", tr), ("dev", dev), ("test", te)] {
                    let path = run.path(&format!("{name}.jsonl"));
                    write_corpus(&path, &docs).map_err(|e| CliError::Output(e.to_string()))?;
                    run.output(name, &path)?;
                }
            }
            run.manifest.settings["synthetic"] = serde_json::to_value(&spec).expect("spec serializes");
            run.manifest.settings["achieved_nesting_ratio"] = syn.nesting_ratio.into();
            run.finish()
        }

        Command::Train {
            common,
            train: train_path,
            dev,
            vectors: vector_path,
            resume,
            checkpoint_every,
        } => {
            let (mut run, settings) = Run::start("train", &common)?;
            let docs = corpus(&mut run, "train", &train_path)?;
            let vectors = vectors(&mut run, vector_path.as_deref())?;
            let mut state = match &resume {
                Some(p) => {
                    let mut s = load_model(&mut run, p)?;
                    settings.apply(&mut s.train);
                    s
                }
                None => {
                    let config = settings.model_config(vectors.as_ref().map(VectorStore::width));
                    ModelState::for_corpus(&docs, config, settings.train_config())
                }
            };
            state.config.validate().map_err(|e| CliError::Config(e.to_string()))?;
            state.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
            run.manifest.settings["model"] = serde_json::to_value(&state.config).expect("config serializes");
            run.manifest.settings["train"] = serde_json::to_value(&state.train).expect("config serializes");
            run.save()?;

            let ckpt_dir = run.path("checkpoints");
            let snapshot = |s: &ModelState| -> Result<(), CliError> {
                let p = ckpt_dir.join(format!("epoch-{:04}.ckpt", s.epochs_done));
                Ok(checkpoint::save(s, p)?)
            };
            if checkpoint_every > 0 {
                fs::create_dir_all(&ckpt_dir).map_err(output_err(&ckpt_dir))?;
                snapshot(&state)?;
            }
            let mut saved: Result<(), CliError> = Ok(());
            let log = train(&mut state, &docs, vectors.as_ref(), |entry, s| {
                if checkpoint_every > 0 && entry.epoch % checkpoint_every == 0 && saved.is_ok() {
                    saved = snapshot(s);
                }
            })?;
            saved?;

            let model_path = run.path("model.ckpt");
            checkpoint::save(&state, &model_path)?;
            run.output("model", &model_path)?;
            let log_text: String = log
                .iter()
                .map(|e| serde_json::to_string(e).expect("logs serialize") + "\n")
                .collect();
            run.write("epochs", "epochs.jsonl", &log_text)?;
            if let Some(dev_path) = dev {
                let dev_docs = corpus(&mut run, "dev", &dev_path)?;
                let m = eval::score(&state, &dev_docs, vectors.as_ref(), &DecodeOptions::from(&state.train))?;
                metrics_outputs(&mut run, &m)?;
            }
            run.finish()
        }

        Command::Predict {
            common,
            model,
            input,
            vectors: vector_path,
        } => {
            let (mut run, settings) = Run::start("predict", &common)?;
            let state = load_model(&mut run, &model)?;
            let docs = corpus(&mut run, "input", &input)?;
            let vectors = vectors(&mut run, vector_path.as_deref())?;
            let options = decode_options(&state, &settings)?;
            let records = predict_corpus(&state, &docs, vectors.as_ref(), &options).map_err(TrainError::from)?;
            write_predictions(&mut run, &records)?;
            run.finish()
        }

        Command::Eval {
            common,
            gold,
            predictions,
            model,
            vectors: vector_path,
        } => {
            let (mut run, settings) = Run::start("eval", &common)?;
            let gold_docs = corpus(&mut run, "gold", &gold)?;
            let records = match (predictions, model) {
                (Some(p), _) => {
                    let r = read_predictions(&p)?;
                    run.input("predictions", &p)?;
                    r
                }
                (None, Some(m)) => {
                    let state = load_model(&mut run, &m)?;
                    let vectors = vectors(&mut run, vector_path.as_deref())?;
                    let options = decode_options(&state, &settings)?;
                    predict_corpus(&state, &gold_docs, vectors.as_ref(), &options).map_err(TrainError::from)?
                }
                (None, None) => unreachable!("clap requires --predictions or --model"),
            };
            let mentions: Vec<_> = records.iter().map(PredictionRecord::mentions).collect();
            let m = evaluate(&mentions, &gold_docs)?;
            metrics_outputs(&mut run, &m)?;
            run.finish()
        }

        Command::AblateBbc {
            common,
            train: train_path,
            test,
            vectors: vector_path,
        } => {
            let (mut run, settings) = Run::start("ablate-bbc", &common)?;
            let train_docs = corpus(&mut run, "train", &train_path)?;
            let test_docs = corpus(&mut run, "test", &test)?;
            let vectors = vectors(&mut run, vector_path.as_deref())?;
            let config = settings.model_config(vectors.as_ref().map(VectorStore::width));
            let (fitted, m) = eval::run_bbc(&train_docs, &test_docs, vectors.as_ref(), config, settings.train_config())?;
            run.manifest.settings["train"] = serde_json::to_value(&fitted.state.train).expect("config serializes");
            let model_path = run.path("model.ckpt");
            checkpoint::save(&fitted.state, &model_path)?;
            run.output("model", &model_path)?;
            metrics_outputs(&mut run, &m)?;
            run.finish()
        }

        Command::Sweep {
            common,
            param,
            values,
            model,
            train: train_path,
            test,
            vectors: vector_path,
        } => {
            let (mut run, settings) = Run::start("sweep", &common)?;
            let test_docs = corpus(&mut run, "test", &test)?;
            let vectors = vectors(&mut run, vector_path.as_deref())?;
            let (name, rows) = match param {
                SweepParam::Lambda => {
                    let m = model.ok_or_else(|| CliError::Config("a lambda sweep needs --model".into()))?;
                    let state = load_model(&mut run, &m)?;
                    let options = decode_options(&state, &settings)?;
                    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                        return Err(CliError::Config(format!("lambda must lie in [0, 1], got {v}")));
                    }
                    ("lambda", sweep_lambda(&state, &test_docs, vectors.as_ref(), &options, &values)?)
                }
                SweepParam::Gamma => {
                    let t = train_path.ok_or_else(|| CliError::Config("a gamma sweep needs --train".into()))?;
                    let train_docs = corpus(&mut run, "train", &t)?;
                    let config = settings.model_config(vectors.as_ref().map(VectorStore::width));
                    let tc = settings.train_config();
                    ("gamma", sweep_gamma(&train_docs, &test_docs, vectors.as_ref(), &config, &tc, &values)?)
                }
            };
            let table = sweep_table(name, &rows);
            print!("{table}");
            run.write("sweep", "sweep.tsv", &table)?;
            run.finish()
        }

        Command::DumpTrajectories {
            common,
            checkpoints,
            input,
            sentence,
            vectors: vector_path,
        } => {
            let (mut run, _) = Run::start("dump-trajectories", &common)?;
            let docs = corpus(&mut run, "input", &input)?;
            let vectors = vectors(&mut run, vector_path.as_deref())?;
            let doc = match &sentence {
                Some(id) => docs
                    .iter()
                    .find(|d| &d.id == id)
                    .ok_or_else(|| CliError::Input(format!("no sentence with id {id}")))?,
                None => docs.first().ok_or_else(|| CliError::Input("input corpus is empty".into()))?,
            };
            let states = checkpoints
                .iter()
                .map(|p| load_model(&mut run, p))
                .collect::<Result<Vec<_>, _>>()?;
            let records = dump_trajectories(states.iter().map(|s| (s.epochs_done, s)), doc, vectors.as_ref())?;
            run.write("trajectories", "trajectories.tsv", &trajectory_table(&records))?;
            run.finish()
        }
    }
}
