// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `langvec` command line.

mod config;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{
    agglomerative_cluster, cosine_distance_matrix, norm_table, pooling_ablation,
    sensitivity_sweep, PoolingAblation, SensitivityCurve, SteeringPipeline, DEFAULT_FRACTIONS,
};
use crate::corpus::{build_compute_samples, split_three_way};
use crate::evaluation::{
    cross_task_eval, extract_vectors, run_baseline, write_csv, write_json, BaselineKind,
    EvalMode, EvalReport, EvalTask, Evaluator, GridOutcome, Part, PromptRecipe, SummaryRow,
    TransferOutcome,
};
use crate::model::{load_model, save_model, train_toy, ToyModel};
use crate::seed::sha256_hex;
use crate::steering::{
    compute_language_vector, export_activation_dump, pooled_hidden_states_multi, save_vector,
    Pooling, PositionMode, SteeringPlan, SteeringVector, VectorMeta,
};

pub use config::{RunConfig, TaskSource, ToyModelSpec, ToySpec};
pub use render::{read_summary_csv, render_table, round_half_up_2, TABLE_COLUMNS};

#[derive(Debug, Parser)]
#[command(name = "langvec", version, about = "Language steering vectors: extraction, injection and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct OptionalConfig {
    /// JSON run configuration (or a manifest from an earlier run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Args)]
pub struct RequiredConfig {
    /// JSON run configuration (or a manifest from an earlier run).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Args)]
pub struct CommonFlags {
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; never changes any output.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dialect testbed to disk.
    MakeDialects(OptionalConfig),
    /// Train the toy transformer on the dialect testbed.
    TrainToy(OptionalConfig),
    /// Compute steering vectors (and optionally activation dumps).
    Extract {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        pooling: Option<Pooling>,
        /// Also write pooled activations in the LVAD1 dump format.
        #[arg(long)]
        dump: bool,
    },
    /// Evaluate one fixed steering configuration on the test part.
    SteerEval {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long)]
        layer: usize,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f32,
        #[arg(long)]
        position: PositionMode,
        #[arg(long)]
        pooling: Option<Pooling>,
    },
    /// Gated grid search over layers, scales and position modes.
    Grid {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long)]
        pooling: Option<Pooling>,
    },
    /// Baselines: b, mfs, oracle, random, or all.
    Baseline {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long, default_value = "all")]
        kind: String,
    },
    /// Apply the configuration selected on the first task to the second.
    Transfer {
        #[command(flatten)]
        cfg: RequiredConfig,
    },
    /// Cosine-distance clustering of target-language vectors.
    Cluster {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long)]
        layer: Option<usize>,
    },
    /// L2 norms of target-language vectors.
    Norms {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Test accuracy as a function of the compute-set fraction.
    Sensitivity {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long, value_delimiter = ',')]
        fraction_list: Option<Vec<f64>>,
    },
    /// Mean versus last-token pooling.
    AblatePooling {
        #[command(flatten)]
        cfg: RequiredConfig,
    },
    /// Print B | MFS | Ours | OR tables from summary CSV files.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

/// Parse `argv`, run, and return the process exit status: 0 on success,
/// 1 on a runtime failure, 2 on a usage error.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    if let Command::Report { files } = &command {
        let mut rows = Vec::new();
        for f in files {
            rows.extend(read_summary_csv(f)?);
        }
        print!("{}", render_table(&rows));
        return Ok(());
    }
    let (name, config, common) = match &command {
        Command::MakeDialects(o) => ("make-dialects", o.config.clone(), o.common.clone()),
        Command::TrainToy(o) => ("train-toy", o.config.clone(), o.common.clone()),
        Command::Extract { cfg, .. } => ("extract", Some(cfg.config.clone()), cfg.common.clone()),
        Command::SteerEval { cfg, .. } => ("steer-eval", Some(cfg.config.clone()), cfg.common.clone()),
        Command::Grid { cfg, .. } => ("grid", Some(cfg.config.clone()), cfg.common.clone()),
        Command::Baseline { cfg, .. } => ("baseline", Some(cfg.config.clone()), cfg.common.clone()),
        Command::Transfer { cfg } => ("transfer", Some(cfg.config.clone()), cfg.common.clone()),
        Command::Cluster { cfg, .. } => ("cluster", Some(cfg.config.clone()), cfg.common.clone()),
        Command::Norms { cfg, .. } => ("norms", Some(cfg.config.clone()), cfg.common.clone()),
        Command::Sensitivity { cfg, .. } => ("sensitivity", Some(cfg.config.clone()), cfg.common.clone()),
        Command::AblatePooling { cfg } => ("ablate-pooling", Some(cfg.config.clone()), cfg.common.clone()),
        Command::Report { .. } => unreachable!("handled above"),
    };
    let mut cfg = match &config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    match &command {
        Command::Extract { layer, pooling, .. } => {
            if let Some(l) = layer {
                cfg.layers = vec![*l];
            }
            if let Some(p) = pooling {
                cfg.pooling = *p;
            }
        }
        Command::SteerEval { pooling: Some(p), .. } | Command::Grid { pooling: Some(p), .. } => {
            cfg.pooling = *p;
        }
        Command::Sensitivity { fraction_list: Some(f), .. } => cfg.fractions = Some(f.clone()),
        _ => {}
    }
    let workers = common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let mut out = Outputs::new(&common.out)?;
    pool.install(|| -> anyhow::Result<()> {
        match &command {
            Command::MakeDialects(_) => make_dialects(&cfg, &mut out),
            Command::TrainToy(_) => train(&cfg, &mut out),
            Command::Extract { dump, .. } => extract(&cfg, *dump, &mut out),
            Command::SteerEval {
                layer,
                alpha,
                position,
                ..
            } => steer_eval(&cfg, *layer, *alpha, *position, &mut out),
            Command::Grid { .. } => grid(&cfg, &mut out),
            Command::Baseline { kind, .. } => baseline(&cfg, kind, &mut out),
            Command::Transfer { .. } => transfer(&cfg, &mut out),
            Command::Cluster { layer, .. } => cluster(&cfg, *layer, &mut out),
            Command::Norms { layer, .. } => norms(&cfg, *layer, &mut out),
            Command::Sensitivity { .. } => sensitivity(&cfg, &mut out),
            Command::AblatePooling { .. } => ablate(&cfg, &mut out),
            Command::Report { .. } => unreachable!("handled above"),
        }
    })?;
    out.finish(name, &cfg)
}

/// Output directory plus a record of every artifact written.
struct Outputs {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    artifacts: &'a BTreeMap<String, String>,
}

impl Outputs {
    fn new(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    fn path(&self, rel: &str) -> anyhow::Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(p)
    }

    fn record(&mut self, rel: &str) -> anyhow::Result<()> {
        let p = self.root.join(rel);
        let bytes = fs::read(&p).with_context(|| format!("reading back {}", p.display()))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        write_json(value, &self.path(rel)?)?;
        self.record(rel)
    }

    fn csv(&mut self, rel: &str, rows: &[SummaryRow]) -> anyhow::Result<()> {
        write_csv(rows, &self.path(rel)?)?;
        self.record(rel)
    }

    fn text(&mut self, rel: &str, text: &str) -> anyhow::Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        self.record(rel)
    }

    fn finish(self, command: &str, cfg: &RunConfig) -> anyhow::Result<()> {
        let m = Manifest {
            command,
            seed: cfg.seed,
            config: cfg,
            artifacts: &self.artifacts,
        };
        write_json(&m, &self.root.join("manifest.json"))?;
        Ok(())
    }
}

fn make_dialects(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let tb = cfg.testbed()?;
    out.json("dialects/spec.json", &tb.spec)?;
    out.json("dialects/blocks.json", &tb.symbol_maps)?;
    out.json("dialects/vocab.json", &tb.vocab)?;
    out.json("dialects/train.json", &tb.train)?;
    for (rel, corpus) in [
        ("dialects/reverse_corpus.jsonl", &tb.corpus),
        ("dialects/reverse_demos.jsonl", &tb.demos),
        ("dialects/copy_corpus.jsonl", &tb.copy_corpus),
        ("dialects/copy_demos.jsonl", &tb.copy_demos),
    ] {
        corpus.save(&out.path(rel)?)?;
        out.record(rel)?;
    }
    println!("wrote {} dialects to {}", tb.languages.len(), out.root.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model_id: &'a str,
    initial_loss: f32,
    final_loss: f32,
    step_losses: &'a [f32],
}

fn train(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let tb = cfg.testbed()?;
    let model_cfg = cfg.toy.model_config(tb.vocab.len(), cfg.seed);
    let opts = cfg.toy.train_options(cfg.seed);
    let report = train_toy(model_cfg, tb.vocab.clone(), &tb.train_tokens()?, &opts)?;
    save_model(&report.model, &out.path("model.lvtm")?)?;
    out.record("model.lvtm")?;
    out.json(
        "train_report.json",
        &TrainSummary {
            model_id: report.model.id(),
            initial_loss: report.initial_loss,
            final_loss: report.final_loss,
            step_losses: &report.step_losses,
        },
    )?;
    println!(
        "trained {} steps: loss {:.4} -> {:.4}",
        opts.steps, report.initial_loss, report.final_loss
    );
    Ok(())
}

fn load(cfg: &RunConfig) -> anyhow::Result<(ToyModel, Vec<EvalTask>)> {
    let path = cfg.model_path()?;
    let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    let tasks = cfg.selected_tasks()?;
    if tasks.is_empty() {
        bail!("no tasks selected");
    }
    Ok((model, tasks))
}

fn extract(cfg: &RunConfig, dump: bool, out: &mut Outputs) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    let layers: BTreeSet<usize> = cfg.layer_grid(model.num_layers()).into_iter().collect();
    let k = cfg.shots();
    for task in &tasks {
        let split = split_three_way(&task.corpus, cfg.seed)?;
        for target in cfg.targets_for(task) {
            let src = &cfg.source_lang;
            let samples =
                build_compute_samples(&task.corpus, &task.template, &split, src, &target, k, cfg.seed)?;
            let s_texts: Vec<String> = samples.iter().map(|s| s.source_text.clone()).collect();
            let t_texts: Vec<String> = samples.iter().map(|s| s.target_text.clone()).collect();
            let s = pooled_hidden_states_multi(&model, &s_texts, src, &layers, cfg.pooling)?;
            let t = pooled_hidden_states_multi(&model, &t_texts, &target, &layers, cfg.pooling)?;
            let dir = format!("{}/{src}-{target}", task.name);
            for &l in &layers {
                let mut v = compute_language_vector(&s[&l], &t[&l])?;
                v.meta.task = task.name.clone();
                v.meta.seed = cfg.seed;
                let rel = format!("vectors/{dir}/layer{l:02}.json");
                save_vector(&v, &out.path(&rel)?)?;
                out.record(&rel)?;
                if dump {
                    for (lang, set) in [(src.as_str(), &s[&l]), (target.as_str(), &t[&l])] {
                        let rel = format!("dumps/{dir}/{lang}-layer{l:02}.lvad");
                        export_activation_dump(set, &out.path(&rel)?)?;
                        out.record(&rel)?;
                    }
                }
            }
            println!("{}: {src} -> {target}, {} layers, {} samples", task.name, layers.len(), samples.len());
        }
    }
    Ok(())
}

fn steer_eval(
    cfg: &RunConfig,
    layer: usize,
    alpha: f32,
    position: PositionMode,
    out: &mut Outputs,
) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut rows = Vec::new();
    for task in &tasks {
        let split = split_three_way(&task.corpus, cfg.seed)?;
        let ev = Evaluator::new(&model, task)?;
        for target in cfg.targets_for(task) {
            let exp = cfg.experiment(&task.name, &target, model.num_layers())?;
            let vectors = extract_vectors(
                &model,
                task,
                &split.compute_ids,
                &cfg.source_lang,
                &target,
                &BTreeSet::from([layer]),
                exp.k,
                cfg.pooling,
                cfg.seed,
            )?;
            let plan = SteeringPlan::new(vectors[&layer].clone(), alpha, position)?;
            let recipe = PromptRecipe::baseline(&cfg.source_lang, &target, exp.k);
            let b = ev.evaluate(&split.test_ids, &recipe, None, EvalMode::B, Part::Test)?;
            let s = ev.evaluate(&split.test_ids, &recipe, Some(&plan), EvalMode::Ours, Part::Test)?;
            rows.push(SummaryRow::from_report(&b, None));
            rows.push(SummaryRow::from_report(&s, None));
            reports.push(b);
            reports.push(s);
        }
    }
    out.json("steer_eval.json", &reports)?;
    out.csv("steer_eval.csv", &rows)?;
    print!("{}", render_table(&rows));
    Ok(())
}

#[derive(Serialize)]
struct GridEntry {
    task: String,
    language: String,
    baseline_test: EvalReport,
    grid: GridOutcome,
}

fn grid(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for task in &tasks {
        for target in cfg.targets_for(task) {
            let exp = cfg.experiment(&task.name, &target, model.num_layers())?;
            let pipeline = SteeringPipeline::new(&model, task, exp)?;
            let run = pipeline.run()?;
            let b = pipeline.baseline_test()?;
            rows.push(SummaryRow::from_report(&b, Some(&run.grid.baseline_val)));
            rows.push(SummaryRow::from_grid(&run.grid));
            entries.push(GridEntry {
                task: task.name.clone(),
                language: target,
                baseline_test: b,
                grid: run.grid,
            });
        }
    }
    out.json("grid.json", &entries)?;
    out.csv("grid.csv", &rows)?;
    print!("{}", render_table(&rows));
    Ok(())
}

fn shape_vectors(model: &ToyModel, layers: &[usize], task: &str, target: &str, cfg: &RunConfig) -> BTreeMap<usize, SteeringVector> {
    layers
        .iter()
        .map(|&l| {
            (
                l,
                SteeringVector {
                    layer: l,
                    values: vec![0.0; model.hidden_size()],
                    meta: VectorMeta {
                        model_id: model.id().to_string(),
                        source_lang: cfg.source_lang.clone(),
                        target_lang: target.to_string(),
                        task: task.to_string(),
                        pooling: cfg.pooling,
                        n_samples: 0,
                        seed: cfg.seed,
                    },
                },
            )
        })
        .collect()
}

fn baseline(cfg: &RunConfig, kind: &str, out: &mut Outputs) -> anyhow::Result<()> {
    let kinds: Vec<BaselineKind> = if kind.eq_ignore_ascii_case("all") {
        vec![BaselineKind::B, BaselineKind::Mfs, BaselineKind::Oracle, BaselineKind::Random]
    } else {
        vec![kind.parse()?]
    };
    let (model, tasks) = load(cfg)?;
    let mut outcomes = Vec::new();
    let mut rows = Vec::new();
    for task in &tasks {
        let split = split_three_way(&task.corpus, cfg.seed)?;
        let ev = Evaluator::new(&model, task)?;
        for target in cfg.targets_for(task) {
            let exp = cfg.experiment(&task.name, &target, model.num_layers())?;
            let like = shape_vectors(&model, &exp.layers, &task.name, &target, cfg);
            for &k in &kinds {
                let o = run_baseline(k, &ev, &split.val_ids, &split.test_ids, &exp, Some(&like))?;
                rows.push(match &o.grid {
                    Some(g) => SummaryRow::from_grid(g),
                    None => SummaryRow::from_report(&o.test, Some(&o.val)),
                });
                outcomes.push(o);
            }
        }
    }
    out.json("baseline.json", &outcomes)?;
    out.csv("baseline.csv", &rows)?;
    print!("{}", render_table(&rows));
    Ok(())
}

#[derive(Serialize)]
struct TransferEntry {
    source_task: String,
    target_task: String,
    language: String,
    plan: Option<crate::evaluation::PlanDescriptor>,
    outcome: Option<TransferOutcome>,
    flag: Option<String>,
}

fn transfer(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    if tasks.len() < 2 {
        bail!("transfer needs two tasks (source task first), found {}", tasks.len());
    }
    let (a, b) = (&tasks[0], &tasks[1]);
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for target in cfg.targets_for(a) {
        let exp_a = cfg.experiment(&a.name, &target, model.num_layers())?;
        let exp_b = cfg.experiment(&b.name, &target, model.num_layers())?;
        let pa = SteeringPipeline::new(&model, a, exp_a)?;
        let pb = SteeringPipeline::new(&model, b, exp_b.clone())?;
        let run_a = pa.run()?;
        let run_b = pb.run()?;
        let base_b = pb.baseline_test()?;
        rows.push(SummaryRow::from_report(&base_b, None));
        rows.push(SummaryRow::from_grid(&run_b.grid));
        let mut entry = TransferEntry {
            source_task: a.name.clone(),
            target_task: b.name.clone(),
            language: target.clone(),
            plan: run_a.grid.best,
            outcome: None,
            flag: None,
        };
        match run_a.grid.best {
            Some(best) => {
                let plan = SteeringPlan::new(run_a.vectors[&best.layer].clone(), best.alpha, best.position)?;
                let ct = cross_task_eval(
                    &plan,
                    pb.evaluator(),
                    &pb.split().test_ids,
                    &cfg.source_lang,
                    exp_b.k,
                    base_b.accuracy,
                    run_b.grid.test.accuracy,
                )?;
                let mut row = SummaryRow::from_report(&ct.report, None);
                if ct.transfer_failure {
                    row.flag = Some("transfer failure".into());
                    entry.flag = row.flag.clone();
                }
                rows.push(row);
                entry.outcome = Some(ct);
            }
            None => entry.flag = Some("no gated config on source task".into()),
        }
        entries.push(entry);
    }
    out.json("transfer.json", &entries)?;
    out.csv("transfer.csv", &rows)?;
    print!("{}", render_table(&rows));
    Ok(())
}

fn target_vectors(
    cfg: &RunConfig,
    model: &ToyModel,
    task: &EvalTask,
    layer: usize,
) -> anyhow::Result<BTreeMap<String, SteeringVector>> {
    if layer == 0 || layer > model.num_layers() {
        bail!("layer {layer} outside [1, {}]", model.num_layers());
    }
    let split = split_three_way(&task.corpus, cfg.seed)?;
    let mut out = BTreeMap::new();
    for target in cfg.targets_for(task) {
        let mut v = extract_vectors(
            model,
            task,
            &split.compute_ids,
            &cfg.source_lang,
            &target,
            &BTreeSet::from([layer]),
            cfg.shots(),
            cfg.pooling,
            cfg.seed,
        )?;
        out.insert(target, v.remove(&layer).expect("requested layer"));
    }
    Ok(out)
}

fn analysis_layer(cfg: &RunConfig, flag: Option<usize>, model: &ToyModel) -> usize {
    flag.or(cfg.cluster_layer).unwrap_or(10.min(model.num_layers()))
}

fn cluster(cfg: &RunConfig, layer: Option<usize>, out: &mut Outputs) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    let layer = analysis_layer(cfg, layer, &model);
    let vectors = target_vectors(cfg, &model, &tasks[0], layer)?;
    let matrix = cosine_distance_matrix(&vectors)?;
    let tree = agglomerative_cluster(&matrix)?;
    matrix.write_csv(&out.path("cluster/distances.csv")?)?;
    out.record("cluster/distances.csv")?;
    tree.write_merges_csv(&out.path("cluster/merges.csv")?)?;
    out.record("cluster/merges.csv")?;
    out.json("cluster/dendrogram.json", &tree.to_json())?;
    out.json("cluster/merges.json", &tree)?;
    let newick = tree.to_newick();
    out.text("cluster/dendrogram.nwk", &format!("{newick}\n"))?;
    println!("layer {layer}: {newick}");
    Ok(())
}

fn norms(cfg: &RunConfig, layer: Option<usize>, out: &mut Outputs) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    let layer = analysis_layer(cfg, layer, &model);
    let vectors = target_vectors(cfg, &model, &tasks[0], layer)?;
    let table = norm_table(&vectors);
    out.json("norms.json", &table)?;
    let mut csv = String::from("language,norm\n");
    for r in &table {
        csv.push_str(&format!("{},{:.6}\n", r.language, r.norm));
        println!("{:<10} {:.4}", r.language, r.norm);
    }
    out.text("norms.csv", &csv)?;
    Ok(())
}

fn sensitivity(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    let fractions = cfg.fractions.clone().unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    let mut curves: Vec<SensitivityCurve> = Vec::new();
    for task in &tasks {
        for target in cfg.targets_for(task) {
            let exp = cfg.experiment(&task.name, &target, model.num_layers())?;
            let pipeline = SteeringPipeline::new(&model, task, exp)?;
            curves.push(sensitivity_sweep(&pipeline, &fractions, cfg.seed)?);
        }
    }
    out.json("sensitivity.json", &curves)?;
    let mut csv = String::from("language,task,fraction,compute_size,test_acc,gated,base_test_acc\n");
    for c in &curves {
        for p in &c.points {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.language, c.task, p.fraction, p.compute_size, p.test_acc, p.gated, c.base_test_acc
            ));
            println!(
                "{:<6} {:<12} fraction {:<5} acc {:>6}",
                c.language,
                c.task,
                p.fraction,
                round_half_up_2(p.test_acc * 100.0)
            );
        }
    }
    out.text("sensitivity.csv", &csv)?;
    Ok(())
}

/// Table with Baseline, Mean (Δ) and Last (Δ) columns in percent.
pub fn render_ablation(rows: &[PoolingAblation]) -> String {
    let pct = |x: f64| round_half_up_2(x * 100.0);
    let signed = |x: f64| {
        let s = pct(x);
        if s.starts_with('-') {
            s
        } else {
            format!("+{s}")
        }
    };
    let mut out = format!("{:<10} | {:>8} | {:>18} | {:>18}\n", "Language", "Baseline", "Mean (Δ)", "Last (Δ)");
    let mut line = |label: &str, b: f64, m: f64, l: f64| {
        out.push_str(&format!(
            "{:<10} | {:>8} | {:>18} | {:>18}\n",
            label,
            pct(b),
            format!("{} ({})", pct(m), signed(m - b)),
            format!("{} ({})", pct(l), signed(l - b)),
        ));
    };
    for r in rows {
        line(&r.language, r.baseline, r.mean, r.last);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let avg = |f: fn(&PoolingAblation) -> f64| rows.iter().map(f).sum::<f64>() / n;
        line("Average", avg(|r| r.baseline), avg(|r| r.mean), avg(|r| r.last));
    }
    out
}

fn ablate(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let (model, tasks) = load(cfg)?;
    let mut rows = Vec::new();
    for task in &tasks {
        for target in cfg.targets_for(task) {
            let exp = cfg.experiment(&task.name, &target, model.num_layers())?;
            let pipeline = SteeringPipeline::new(&model, task, exp)?;
            rows.push(pooling_ablation(&pipeline)?);
        }
    }
    out.json("ablation.json", &rows)?;
    let mut csv = String::from("language,task,baseline,mean,mean_delta,last,last_delta\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.language, r.task, r.baseline, r.mean, r.mean_delta, r.last, r.last_delta
        ));
    }
    out.text("ablation.csv", &csv)?;
    print!("{}", render_ablation(&rows));
    Ok(())
}
