use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gensr_core::analysis::{
    collect_probe_samples, estimate_model_mi, kde_density, pca_project, run_separability_experiment, scott_bandwidth, MiEstimate,
    Probe,
};
use gensr_core::cf::{train_cf, CfTable};
use gensr_core::checkpoint::{Checkpoint, Model};
use gensr_core::corpus::{
    read_corpus, split_leave_one_out, write_corpus, write_stats, Corpus, DatasetSplit, EvalInstance, Task, INTERACTIONS_FILE,
    ITEMS_FILE, QUERIES_FILE, STATS_FILE,
};
use gensr_core::eval::{evaluate_fullranking, evaluate_reranking, sha256_hex};
use gensr_core::features::Features;
use gensr_core::genmodel::{GenSr, Mode, Vocabulary};
use gensr_core::tensor::Mat;
use gensr_core::training::{
    train_discriminative, train_gensr, write_gradient_trace, write_step_trace, DiscConfig, DiscModel, ExampleStream, TrainTrace,
};
use serde::Serialize;

use crate::manifest::{self, read_json, require, write_json};
use crate::{CliError, Paradigm, RunConfig};

pub const CF_FILE: &str = "cf.bin";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const STEP_TRACE_FILE: &str = "step_trace.csv";
pub const TRACE_JSON_FILE: &str = "trace.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MI_REPORT_FILE: &str = "mi_report.json";
pub const GRADIENT_TRACE_FILE: &str = "gradient_trace.csv";
pub const GRADIENT_SUMMARY_FILE: &str = "gradient_summary.json";
pub const PROJECTION_POINTS_FILE: &str = "projection_points.csv";
pub const KDE_GRID_FILE: &str = "kde_grid.csv";
pub const SANDBOX_REPORT_FILE: &str = "sandbox_report.json";

pub fn corpus_files(cfg: &RunConfig) -> Vec<PathBuf> {
    let d = cfg.data_dir();
    [ITEMS_FILE, QUERIES_FILE, INTERACTIONS_FILE].iter().map(|f| d.join(f)).collect()
}

pub fn cf_path(cfg: &RunConfig) -> PathBuf {
    cfg.out().join("cf").join(CF_FILE)
}

pub fn train_dir(cfg: &RunConfig, paradigm: Paradigm, mode: Mode) -> PathBuf {
    cfg.out().join("train").join(format!("{}-{}", paradigm.name(), mode.name()))
}

pub fn eval_dir(cfg: &RunConfig, paradigm: Paradigm, mode: Mode) -> PathBuf {
    cfg.out().join("eval").join(format!("{}-{}", paradigm.name(), mode.name()))
}

pub fn analysis_dir(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    let d = cfg.out().join("analysis").join(name);
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let files = corpus_files(cfg);
    require(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    Ok(read_corpus(&cfg.data_dir())?)
}

/// Corpus, split and CF table; every stage after pretraining starts here.
struct Inputs {
    corpus: Corpus,
    split: DatasetSplit,
    cf: CfTable,
    vocab: Vocabulary,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    let corpus = load_corpus(cfg)?;
    require(&[&cf_path(cfg)])?;
    let cf = CfTable::load(&cf_path(cfg))?;
    let split = split_leave_one_out(&corpus, cfg.seed()?)?;
    let vocab = Vocabulary::build(&corpus);
    Ok(Inputs { corpus, split, cf, vocab })
}

fn base_inputs(cfg: &RunConfig) -> Vec<PathBuf> {
    let mut v = corpus_files(cfg);
    v.push(cf_path(cfg));
    v
}

fn load_checkpoint(cfg: &RunConfig, paradigm: Paradigm, mode: Mode, vocab: &Vocabulary) -> Result<(Checkpoint, PathBuf), CliError> {
    let path = train_dir(cfg, paradigm, mode).join(CHECKPOINT_FILE);
    require(&[&path])?;
    let ck = Checkpoint::load(&path)?;
    if ck.vocabulary().tokens() != vocab.tokens() {
        return Err(CliError::Config(format!("{} was trained on a different corpus", path.display())));
    }
    Ok((ck, path))
}

fn hash_file(p: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&std::fs::read(p)?))
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = gensr_core::corpus::generate_synthetic_corpus(&cfg.generator()?, cfg.exec()?)?;
    let dir = cfg.data_dir();
    write_corpus(&dir, &corpus)?;
    write_stats(&dir, &corpus)?;
    let mut outputs = corpus_files(cfg);
    outputs.push(dir.join(STATS_FILE));
    manifest::write(&dir, "gen-data", cfg, &[], &outputs)
}

pub fn pretrain_cf(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let split = split_leave_one_out(&corpus, cfg.seed()?)?;
    let train: Vec<_> = split.train_interactions().cloned().collect();
    let cf = train_cf(&corpus, &train, &cfg.cf()?)?;
    let dir = cfg.out().join("cf");
    std::fs::create_dir_all(&dir)?;
    cf.save(&dir.join(CF_FILE))?;
    manifest::write(&dir, "pretrain-cf", cfg, &corpus_files(cfg), &[dir.join(CF_FILE)])
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let paradigm = cfg.paradigm()?;
    let tc = cfg.train()?;
    for w in tc.validate()? {
        eprintln!("warning: {w}");
    }
    if paradigm == Paradigm::Disc && tc.mode != Mode::Rerank {
        return Err(CliError::Config("the discriminative baseline only supports mode = rerank".into()));
    }
    let exec = cfg.exec()?;
    let inp = load_inputs(cfg)?;
    let f = Features::new(&inp.corpus, &inp.cf, &inp.vocab)?;
    let stream = ExampleStream::new(&inp.corpus, &inp.split, tc.model.max_history, tc.batch_size, tc.mode, tc.seed)?;
    let cf_dim = inp.cf.dim();
    let mut gensr = GenSr::new(tc.model.clone(), tc.mode, inp.vocab.len(), cf_dim, tc.seed)?;
    let (mut trace, model) = match paradigm {
        Paradigm::Gensr => {
            let trace = train_gensr(&mut gensr, &f, &stream, &tc, exec)?;
            (trace, Model::Gensr(gensr))
        }
        Paradigm::Disc => {
            let gensr_params = gensr.params.scalar_count();
            let dc = DiscConfig::matched(&tc.model, inp.vocab.len(), cf_dim, gensr_params)?;
            let mut disc = DiscModel::new(dc, inp.vocab.len(), cf_dim, tc.seed)?;
            let mut trace = train_discriminative(&mut disc, &f, &stream, &tc, exec)?;
            trace.header.push(("gensr_params".into(), gensr_params.to_string()));
            (trace, Model::Disc(disc))
        }
    };
    trace.header.push(("seed".into(), tc.seed.to_string()));
    trace.header.push(("mode".into(), tc.mode.name().into()));
    trace.header.push(("cf_sha256".into(), hash_file(&cf_path(cfg))?));
    let dir = train_dir(cfg, paradigm, tc.mode);
    std::fs::create_dir_all(&dir)?;
    let outputs = [dir.join(CHECKPOINT_FILE), dir.join(STEP_TRACE_FILE), dir.join(TRACE_JSON_FILE)];
    Checkpoint::new(model, &tc, &inp.vocab).save(&outputs[0])?;
    write_step_trace(&outputs[1], &trace)?;
    write_json(&outputs[2], &trace)?;
    manifest::write(&dir, "train", cfg, &base_inputs(cfg), &outputs)
}

fn instances<'a>(cfg: &RunConfig, split: &'a DatasetSplit) -> Result<&'a [EvalInstance], CliError> {
    match cfg.raw("split") {
        "test" => Ok(&split.test),
        "valid" => Ok(&split.valid),
        other => Err(CliError::Config(format!("`split` must be test or valid, got `{other}`"))),
    }
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let paradigm = cfg.paradigm()?;
    let mode = cfg.mode()?;
    let exec = cfg.exec()?;
    let beam: usize = cfg.get("beam")?;
    let inp = load_inputs(cfg)?;
    let (ck, ck_path) = load_checkpoint(cfg, paradigm, mode, &inp.vocab)?;
    let f = Features::new(&inp.corpus, &inp.cf, &inp.vocab)?;
    let inst = instances(cfg, &inp.split)?;
    let report = match (&ck.model, mode) {
        (Model::Gensr(m), Mode::Rerank) => evaluate_reranking(m, &f, inst, m.cfg.max_history, exec)?,
        (Model::Gensr(m), Mode::Fullrank) => evaluate_fullranking(m, &f, inst, beam, exec)?,
        (Model::Disc(m), Mode::Rerank) => evaluate_reranking(m, &f, inst, m.cfg.max_history, exec)?,
        (Model::Disc(_), Mode::Fullrank) => {
            return Err(CliError::Config("the discriminative baseline has no full-ranking mode".into()))
        }
    };
    let report = report.with_config_hash(&(&ck.header.train, cfg.raw("split"), beam))?;
    let dir = eval_dir(cfg, paradigm, mode);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(METRICS_FILE), report.to_json()?)?;
    let mut inputs = base_inputs(cfg);
    inputs.push(ck_path);
    manifest::write(&dir, "eval", cfg, &inputs, &[dir.join(METRICS_FILE)])
}

/// Frozen checkpoints of both paradigms in re-ranking mode.
struct Pair {
    gensr: GenSr,
    disc: DiscModel,
    paths: [PathBuf; 2],
}

fn load_pair(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Pair, CliError> {
    let (g, gp) = load_checkpoint(cfg, Paradigm::Gensr, Mode::Rerank, vocab)?;
    let (d, dp) = load_checkpoint(cfg, Paradigm::Disc, Mode::Rerank, vocab)?;
    match (g.model, d.model) {
        (Model::Gensr(gensr), Model::Disc(disc)) => Ok(Pair { gensr, disc, paths: [gp, dp] }),
        _ => Err(CliError::Config("checkpoint paradigms do not match their directories".into())),
    }
}

#[derive(Serialize)]
struct MiReport {
    header: Vec<(String, String)>,
    estimates: Vec<ParadigmMi>,
}

#[derive(Serialize)]
struct ParadigmMi {
    paradigm: String,
    estimate: MiEstimate,
}

/// Held-out instances used for every model-level analysis.
fn probe_instances(split: &DatasetSplit) -> Vec<EvalInstance> {
    split.test.iter().chain(&split.valid).cloned().collect()
}

fn checkpoint_header(cfg: &RunConfig, paths: &[PathBuf]) -> Result<Vec<(String, String)>, CliError> {
    let mut h = Vec::new();
    for p in paths {
        let name = p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.push((format!("checkpoint_{name}_sha256"), hash_file(p)?));
    }
    h.push(("seed".into(), cfg.seed()?.to_string()));
    h.push(("mode".into(), "rerank".into()));
    Ok(h)
}

pub fn analyze_mi(cfg: &RunConfig) -> Result<(), CliError> {
    let exec = cfg.exec()?;
    let mine = cfg.mine()?;
    let inp = load_inputs(cfg)?;
    let pair = load_pair(cfg, &inp.vocab)?;
    let f = Features::new(&inp.corpus, &inp.cf, &inp.vocab)?;
    let inst = probe_instances(&inp.split);
    let mut estimates = Vec::new();
    let models: [&dyn Probe; 2] = [&pair.gensr, &pair.disc];
    for m in models {
        for task in Task::ALL {
            estimates.push(ParadigmMi { paradigm: m.paradigm().into(), estimate: estimate_model_mi(m, &f, &inst, task, &mine, exec)? });
        }
    }
    let mut header = checkpoint_header(cfg, &pair.paths)?;
    header.push(("x".into(), "mean-pooled final encoder states".into()));
    header.push(("y".into(), "output click probability".into()));
    let dir = analysis_dir(cfg, "mi")?;
    write_json(&dir.join(MI_REPORT_FILE), &MiReport { header, estimates })?;
    let mut inputs = base_inputs(cfg);
    inputs.extend(pair.paths);
    manifest::write(&dir, "analyze mi", cfg, &inputs, &[dir.join(MI_REPORT_FILE)])
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct TraceSummary {
    pub paradigm: String,
    pub steps: usize,
    pub defined: usize,
    pub mean_cosine: Option<f64>,
    pub negative_steps: usize,
}

impl TraceSummary {
    pub fn of(t: &TrainTrace) -> Self {
        let c: Vec<f64> = t.cosines().into_iter().flatten().collect();
        Self {
            paradigm: t.paradigm.clone(),
            steps: t.steps.len(),
            defined: c.len(),
            mean_cosine: t.mean_cosine(),
            negative_steps: c.iter().filter(|x| **x < 0.0).count(),
        }
    }
}

pub fn analyze_gradients(cfg: &RunConfig) -> Result<(), CliError> {
    let g_dir = train_dir(cfg, Paradigm::Gensr, Mode::Rerank);
    let d_dir = train_dir(cfg, Paradigm::Disc, Mode::Rerank);
    let paths = [g_dir.join(CHECKPOINT_FILE), d_dir.join(CHECKPOINT_FILE)];
    require(&[&paths[0], &paths[1]])?;
    let g: TrainTrace = read_json(&g_dir.join(TRACE_JSON_FILE))?;
    let d: TrainTrace = read_json(&d_dir.join(TRACE_JSON_FILE))?;
    let batches = |t: &TrainTrace| t.steps.iter().map(|s| (s.step, s.search_examples, s.rec_examples)).collect::<Vec<_>>();
    if batches(&g) != batches(&d) {
        return Err(CliError::Config("the two paradigms were not trained on matched streams".into()));
    }
    let dir = analysis_dir(cfg, "gradients")?;
    let mut header = checkpoint_header(cfg, &paths)?;
    header.push(("probe".into(), "first encoder self-attention block".into()));
    write_gradient_trace(&dir.join(GRADIENT_TRACE_FILE), &header, &[&g, &d])?;
    write_json(&dir.join(GRADIENT_SUMMARY_FILE), &[TraceSummary::of(&g), TraceSummary::of(&d)])?;
    let inputs = vec![paths[0].clone(), g_dir.join(TRACE_JSON_FILE), paths[1].clone(), d_dir.join(TRACE_JSON_FILE)];
    manifest::write(&dir, "analyze gradients", cfg, &inputs, &[dir.join(GRADIENT_TRACE_FILE), dir.join(GRADIENT_SUMMARY_FILE)])
}

pub fn analyze_projection(cfg: &RunConfig) -> Result<(), CliError> {
    let paradigm = cfg.paradigm()?;
    let exec = cfg.exec()?;
    let grid: usize = cfg.get("kde_grid")?;
    let inp = load_inputs(cfg)?;
    let (ck, ck_path) = load_checkpoint(cfg, paradigm, Mode::Rerank, &inp.vocab)?;
    let f = Features::new(&inp.corpus, &inp.cf, &inp.vocab)?;
    let inst = probe_instances(&inp.split);
    let model: &dyn Probe = match &ck.model {
        Model::Gensr(m) => m,
        Model::Disc(m) => m,
    };
    let per_task: Vec<Mat> =
        Task::ALL.iter().map(|&t| collect_probe_samples(model, &f, &inst, t, exec).map(|s| s.0)).collect::<Result<_, _>>()?;
    let width = per_task.iter().map(Mat::cols).max().unwrap_or(0);
    let rows: Vec<Vec<f64>> = per_task.iter().flat_map(|m| (0..m.rows()).map(|r| m.row(r).to_vec())).collect();
    if rows.iter().any(|r| r.len() != width) {
        return Err(CliError::Core(gensr_core::Error::Shape("pooled state widths differ".into())));
    }
    let proj = pca_project(&Mat::from_rows(&rows))?;

    let mut header = checkpoint_header(cfg, &[ck_path.clone()])?;
    header.push(("paradigm".into(), paradigm.name().into()));
    header.push(("projection".into(), "pca for both steps (deterministic stand-in for t-SNE)".into()));
    header.push(("explained_1".into(), proj.explained[0].to_string()));
    header.push(("explained_2".into(), proj.explained[1].to_string()));
    let mut points = String::new();
    let mut kde = String::new();
    let mut offset = 0;
    for (task, m) in Task::ALL.iter().zip(&per_task) {
        let pts = &proj.points[offset..offset + m.rows()];
        offset += m.rows();
        for p in pts {
            writeln!(points, "{},{},{}", task.name(), p[0], p[1]).expect("string write");
        }
        let bw = scott_bandwidth(pts);
        header.push((format!("bandwidth_{}", task.name()), bw.to_string()));
        let g = kde_density(pts, bw, grid)?;
        for (i, row) in g.density.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(kde, "{},{},{},{}", task.name(), g.xs[j], g.ys[i], v).expect("string write");
            }
        }
    }
    let head: String = header.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    let dir = analysis_dir(cfg, &format!("projection-{}", paradigm.name()))?;
    std::fs::write(dir.join(PROJECTION_POINTS_FILE), format!("{head}task,x,y\n{points}"))?;
    std::fs::write(dir.join(KDE_GRID_FILE), format!("{head}task,x,y,density\n{kde}"))?;
    let mut inputs = base_inputs(cfg);
    inputs.push(ck_path);
    manifest::write(&dir, "analyze projection", cfg, &inputs, &[dir.join(PROJECTION_POINTS_FILE), dir.join(KDE_GRID_FILE)])
}

#[derive(Serialize)]
struct SandboxExport<'a> {
    header: Vec<(String, String)>,
    report: &'a gensr_core::analysis::SandboxReport,
}

pub fn analyze_sandbox(cfg: &RunConfig) -> Result<(), CliError> {
    let sc = cfg.sandbox()?;
    let report = run_separability_experiment(&sc, cfg.exec()?)?;
    let header = vec![
        ("seed".into(), sc.seed.to_string()),
        ("mi_mode".into(), format!("{:?}", sc.mi_mode).to_lowercase()),
        ("n".into(), sc.n.to_string()),
        ("trials".into(), sc.trials.to_string()),
    ];
    let dir = analysis_dir(cfg, "sandbox")?;
    write_json(&dir.join(SANDBOX_REPORT_FILE), &SandboxExport { header, report: &report })?;
    manifest::write(&dir, "analyze sandbox", cfg, &[], &[dir.join(SANDBOX_REPORT_FILE)])
}
