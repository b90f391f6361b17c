//! Offline jobs: synthetic data, data preparation, training, evaluation
//! and latency benchmarks. Each job reads a TOML config and returns a JSON
//! report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ics_core::data_prep::{
    generate, load_jsonl, prepare, save_jsonl, PrepConfig, ReplayItem, SessionLogRecord, SyntheticConfig, TrainingTriplet,
};
use ics_core::matcher::{
    bundled_teacher_configs, AspectSchema, Checkpoint, HybridConfig, HybridModel, Matcher, ModelKind, StudentConfig, StudentModel,
    TeacherModel, WideTeacher,
};
use ics_core::service::{replay_evaluate, ModelSnapshot, ScenarioSolutionTable, ServeConfig};
use ics_core::text::{EmbeddingTable, SkipGramConfig, TextArtifacts};
use ics_core::trainer::{
    bench_latency, distill_student, evaluate, train_hybrid, train_supervised, train_teacher, EvalReport, ExampleSet, HybridTrainConfig,
    PanelConfig, Phase, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `generate-synthetic`: catalog, session logs and a labelled replay set.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: &Path) -> Result<Value> {
    fs::create_dir_all(out_dir)?;
    let corpus = generate(config);
    fs::write(out_dir.join("catalog.jsonl"), corpus.catalog.to_jsonl())?;
    save_jsonl(&out_dir.join("logs.jsonl"), &corpus.logs)?;
    save_jsonl(&out_dir.join("replay.jsonl"), &corpus.replay)?;
    Ok(json!({
        "scenarios": corpus.catalog.len(),
        "sessions": corpus.logs.len(),
        "replay_items": corpus.replay.len(),
        "rare": corpus.rare,
        "out_dir": out_dir,
    }))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareJob {
    pub catalog: PathBuf,
    pub logs: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "one")]
    pub min_count: u64,
    #[serde(default)]
    pub prep: PrepConfig,
    #[serde(default)]
    pub skipgram: SkipGramConfig,
}

fn one() -> u64 {
    1
}

/// `prepare-data`: triplet splits plus the word vectors and idf table fitted
/// on every utterance and description.
pub fn prepare_data(job: &PrepareJob) -> Result<Value> {
    let catalog = ScenarioSolutionTable::load(&job.catalog)?;
    let logs: Vec<SessionLogRecord> = load_jsonl(&job.logs)?;
    let prepared = prepare(&logs, &catalog, &job.prep)?;
    let mut texts: Vec<&str> = catalog.iter().map(|e| e.description.as_str()).collect();
    texts.extend(logs.iter().flat_map(|l| l.utterances.iter().map(|u| u.text.as_str())));
    let text = TextArtifacts::fit(&texts, job.min_count, &job.skipgram)?;

    let out = &job.out_dir;
    fs::create_dir_all(out)?;
    save_jsonl(&out.join("train.jsonl"), &prepared.split.train)?;
    save_jsonl(&out.join("validation.jsonl"), &prepared.split.validation)?;
    save_jsonl(&out.join("test.jsonl"), &prepared.split.test)?;
    text.embeddings.save(&out.join("vectors.txt"))?;
    fs::write(out.join("tfidf.json"), serde_json::to_vec(&text.tfidf)?)?;
    Ok(json!({
        "stats": prepared.stats,
        "lint": prepared.lint,
        "train": prepared.split.train.len(),
        "validation": prepared.split.validation.len(),
        "test": prepared.split.test.len(),
        "vocabulary": text.vocab.len(),
        "out_dir": out,
    }))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Word vectors whose vocabulary every model is built on.
    pub word_vectors: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 100, iterations: 1000 }
    }
}

/// Shared schema of the training, evaluation and benchmark jobs; each job
/// reads the sections it needs.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJob {
    pub data: DataPaths,
    /// Seeds parameter initialisation; `training.seed` seeds shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub training: TrainConfig,
    /// Bundled teacher id for `train-teacher`.
    pub teacher: Option<String>,
    /// Teacher checkpoints forming the panel for `distill`.
    #[serde(default)]
    pub teachers: Vec<PathBuf>,
    #[serde(default)]
    pub panel: PanelConfig,
    /// Student checkpoint to start `train-hybrid` from.
    pub init_student: Option<PathBuf>,
    #[serde(default)]
    pub hybrid: HybridConfig,
    #[serde(default)]
    pub hybrid_training: HybridTrainConfig,
    /// Checkpoint to `evaluate` or `bench-latency`.
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub bench: BenchConfig,
    /// Where a training job writes its checkpoint.
    pub output: Option<PathBuf>,
}

struct Loaded {
    embeddings: EmbeddingTable,
    schema: AspectSchema,
}

impl Loaded {
    fn new(job: &ModelJob) -> Result<Self> {
        Ok(Self { embeddings: EmbeddingTable::load(&job.data.word_vectors)?, schema: AspectSchema::default() })
    }

    fn set(&self, path: Option<&PathBuf>, name: &str) -> Result<ExampleSet> {
        let path = path.with_context(|| format!("data.{name} is required for this job"))?;
        let triplets: Vec<TrainingTriplet> = load_jsonl(path)?;
        Ok(ExampleSet::from_triplets(&triplets, Some(&self.schema))?)
    }
}

fn output(job: &ModelJob) -> Result<&Path> {
    job.output.as_deref().context("`output` is required for training jobs")
}

fn test_report<M: Matcher>(model: &M, job: &ModelJob, data: &Loaded) -> Result<Option<EvalReport>> {
    match &job.data.test {
        Some(_) => Ok(Some(evaluate(model, &data.set(job.data.test.as_ref(), "test")?, job.training.threshold)?)),
        None => Ok(None),
    }
}

pub fn train_teacher_job(job: &ModelJob) -> Result<Value> {
    let data = Loaded::new(job)?;
    let id = job.teacher.as_deref().context("`teacher` names the bundled teacher to train")?;
    let configs = bundled_teacher_configs(&job.student);
    let Some((_, config)) = configs.iter().find(|(t, _)| t == id) else {
        let known: Vec<&str> = configs.iter().map(|(t, _)| t.as_str()).collect();
        bail!("unknown teacher {id}; bundled teachers are {}", known.join(", "));
    };
    let (train, val) = (data.set(job.data.train.as_ref(), "train")?, data.set(job.data.validation.as_ref(), "validation")?);
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut teacher = WideTeacher::new(id.to_string(), config.clone(), data.embeddings.vocab().clone(), Some(&data.embeddings), &mut rng)?;
    let run = train_teacher(&mut teacher, &train, &val, &job.training)?;
    teacher.save(output(job)?)?;
    Ok(json!({ "teacher": id, "run": run, "test": test_report(&teacher, job, &data)?, "output": job.output }))
}

/// `distill`, or plain supervised student training when no teachers are
/// listed.
pub fn distill_job(job: &ModelJob) -> Result<Value> {
    let data = Loaded::new(job)?;
    let vocab = data.embeddings.vocab();
    let teachers = job.teachers.iter().map(|p| Ok(WideTeacher::load(p, Some(vocab))?)).collect::<Result<Vec<_>>>()?;
    let (train, val) = (data.set(job.data.train.as_ref(), "train")?, data.set(job.data.validation.as_ref(), "validation")?);
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut student = StudentModel::new(job.student.clone(), vocab.clone(), Some(&data.embeddings), &mut rng)?;
    let run = if teachers.is_empty() {
        train_supervised(&mut student, &train, &val, &job.training, Phase::Distill)?
    } else {
        let panel = job.panel.build(teachers.iter().map(|t| t as &dyn TeacherModel).collect())?;
        distill_student(&mut student, &panel, &train, &val, &job.training)?
    };
    student.save(output(job)?)?;
    let ids: Vec<&str> = teachers.iter().map(|t| t.id()).collect();
    Ok(json!({ "teachers": ids, "run": run, "test": test_report(&student, job, &data)?, "output": job.output }))
}

pub fn train_hybrid_job(job: &ModelJob) -> Result<Value> {
    let data = Loaded::new(job)?;
    let init = job.init_student.as_ref().context("`init_student` names the distilled student checkpoint")?;
    let student = StudentModel::load(init, Some(data.embeddings.vocab()))?;
    let (train, val) = (data.set(job.data.train.as_ref(), "train")?, data.set(job.data.validation.as_ref(), "validation")?);
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut hybrid = HybridModel::from_student(&student, job.hybrid.clone(), &mut rng)?;
    let runs = train_hybrid(&mut hybrid, &train, &val, &job.hybrid_training)?;
    hybrid.save(output(job)?)?;
    Ok(json!({ "runs": runs, "test": test_report(&hybrid, job, &data)?, "output": job.output }))
}

enum AnyModel {
    Student(StudentModel),
    Teacher(WideTeacher),
    Hybrid(HybridModel),
}

fn load_model(job: &ModelJob, data: &Loaded) -> Result<AnyModel> {
    let path = job.model.as_ref().context("`model` names the checkpoint to load")?;
    let ckpt = Checkpoint::read(path)?;
    let vocab = Some(data.embeddings.vocab());
    Ok(match ckpt.kind {
        ModelKind::Student => AnyModel::Student(StudentModel::from_checkpoint(&ckpt, vocab)?),
        ModelKind::Teacher => AnyModel::Teacher(WideTeacher::from_checkpoint(&ckpt, vocab)?),
        ModelKind::Hybrid => AnyModel::Hybrid(HybridModel::from_checkpoint(&ckpt, vocab)?),
    })
}

fn eval_set(job: &ModelJob, data: &Loaded) -> Result<ExampleSet> {
    match (&job.data.test, &job.data.validation) {
        (Some(p), _) | (None, Some(p)) => data.set(Some(p), "test"),
        (None, None) => bail!("data.test or data.validation is required"),
    }
}

/// `evaluate`: classification metrics plus mean single-pair latency.
pub fn evaluate_job(job: &ModelJob) -> Result<Value> {
    fn run<M: Matcher>(m: &M, set: &ExampleSet, job: &ModelJob) -> Result<EvalReport> {
        let mut report = evaluate(m, set, job.training.threshold)?;
        report.latency_ms = Some(bench_latency(m, set, job.bench.warmup, job.bench.iterations)?.mean_ms);
        Ok(report)
    }
    let data = Loaded::new(job)?;
    let set = eval_set(job, &data)?;
    let report = match load_model(job, &data)? {
        AnyModel::Student(m) => run(&m, &set, job)?,
        AnyModel::Teacher(m) => run(&m, &set, job)?,
        AnyModel::Hybrid(m) => run(&m, &set, job)?,
    };
    Ok(serde_json::to_value(report)?)
}

pub fn bench_job(job: &ModelJob) -> Result<Value> {
    let data = Loaded::new(job)?;
    let set = eval_set(job, &data)?;
    let (w, n) = (job.bench.warmup, job.bench.iterations);
    let stats = match load_model(job, &data)? {
        AnyModel::Student(m) => bench_latency(&m, &set, w, n)?,
        AnyModel::Teacher(m) => bench_latency(&m, &set, w, n)?,
        AnyModel::Hybrid(m) => bench_latency(&m, &set, w, n)?,
    };
    Ok(serde_json::to_value(stats)?)
}

/// `replay-evaluate`: the full serving pipeline over a labelled replay set.
pub fn replay_job(config: &ServeConfig, replay: &Path) -> Result<Value> {
    let items: Vec<ReplayItem> = load_jsonl(replay)?;
    let snapshot = Arc::new(ModelSnapshot::load(config)?);
    Ok(serde_json::to_value(replay_evaluate(snapshot, &config.recommend, &items)?)?)
}
