// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance checks. Runs without the libtest harness so that every
//! check prints exactly one PASS/FAIL line; exits non-zero on any failure.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use langvec::analysis::{
    agglomerative_cluster, cosine_distance_matrix, fraction_subset, norm_table, pooling_ablation,
    sensitivity_sweep, DistanceMatrix, PipelineRun, SteeringPipeline, DEFAULT_FRACTIONS,
};
use langvec::cli::{render_ablation, RunConfig};
use langvec::corpus::{
    build_compute_samples, render_prompt, split_three_way, synth_dialect_corpus, DialectSpec,
    DialectTestbed, PromptSpans, RenderedPrompt,
};
use langvec::evaluation::{
    dialect_output_rate, extract_vectors, grid_search, EvalMode, EvalReport, EvalTask,
    ExperimentConfig, Part, PlanDescriptor, PlanEvaluator, PromptRecipe,
};
use langvec::model::{save_model, train_toy, ActivationTrace, ToyModel};
use langvec::steering::{
    compute_language_vector, export_activation_dump, import_activation_dump, load_vector,
    pool_trace, pooled_hidden_states, resolve_positions, save_vector, Pooling, PooledStateSet,
    PositionMode, SteeringPlan, SteeringVector, VectorMeta,
};
use langvec::Error;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct Toy {
    tb: DialectTestbed,
    model: ToyModel,
    task: EvalTask,
    cfg: RunConfig,
    train_secs: f64,
}

fn meta(lang: &str) -> VectorMeta {
    VectorMeta {
        model_id: "m".into(),
        source_lang: "en".into(),
        target_lang: lang.into(),
        task: "t".into(),
        pooling: Pooling::Mean,
        n_samples: 1,
        seed: 0,
    }
}

fn random_set(rng: &mut impl Rng, n: usize, dim: usize, lang: &str) -> PooledStateSet {
    PooledStateSet {
        layer: 2,
        dim,
        lang: lang.into(),
        pooling: Pooling::Mean,
        model_id: "m".into(),
        rows: common::random_vec(rng, n * dim, 4.0),
        text_hashes: vec![],
    }
}

fn random_prompt(tb: &DialectTestbed, model: &ToyModel, rng: &mut impl Rng) -> RenderedPrompt {
    let examples = tb.corpus.examples();
    let k = rng.random_range(0..=4);
    let demos: Vec<_> = (0..k)
        .map(|_| (examples.choose(rng).unwrap(), tb.languages.choose(rng).unwrap().as_str()))
        .collect();
    let q = (examples.choose(rng).unwrap(), tb.languages.choose(rng).unwrap().as_str());
    render_prompt(model.vocab(), &tb.template, &demos, q, "en").unwrap()
}

fn c1_alpha_zero(toy: &Toy) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = toy.model.hidden_size();
    let t = toy.model.num_layers();
    for i in 0..200 {
        let prompt = random_prompt(&toy.tb, &toy.model, &mut rng);
        let mode = *PositionMode::ALL.choose(&mut rng).unwrap();
        let mode = if mode == PositionMode::AfterFewshot { PositionMode::Entire } else { mode };
        let v = SteeringVector {
            layer: rng.random_range(1..=t),
            values: common::random_vec(&mut rng, d, 5.0),
            meta: meta("xa"),
        };
        let plan = ok(SteeringPlan::new(v, 0.0, mode))?;
        let spec = ok(plan.intervention(&prompt))?;
        let none = BTreeSet::new();
        let a = ok(toy.model.forward_with_interventions(&prompt.tokens, &[], &none))?;
        let b = ok(toy.model.forward_with_interventions(&prompt.tokens, &[spec], &none))?;
        let same = a.logits.iter().zip(&b.logits).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same, "prompt {i}: logits differ at alpha 0");
    }
    Ok("200 prompts, logits bit-identical".into())
}

fn c2_zero_vector(_: &Toy) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = rng.random_range(1..20);
        let dim = rng.random_range(1..70);
        let s = random_set(&mut rng, n, dim, "en");
        let mut same = s.clone();
        same.lang = "xa".into();
        let v = ok(compute_language_vector(&s, &same))?;
        let bound = 1e-6 * (dim as f64).sqrt();
        worst = worst.max(v.l2_norm());
        ensure!(v.l2_norm() <= bound, "set {i}: norm {} > {bound}", v.l2_norm());

        let t = random_set(&mut rng, n, dim, "xa");
        let fwd = ok(compute_language_vector(&s, &t))?;
        let back = ok(compute_language_vector(&t, &s))?;
        let exact = fwd.values.iter().zip(&back.values).all(|(a, b)| a.to_bits() == (-b).to_bits());
        ensure!(exact, "set {i}: v(s->t) != -v(t->s)");
    }
    Ok(format!("max identical-pair norm {worst:e}; antisymmetry exact on 100 sets"))
}

fn c3_pooling(toy: &Toy) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let seq_len = rng.random_range(1..40);
        let dim = rng.random_range(1..64);
        let trace = ActivationTrace {
            layer: 1,
            seq_len,
            dim,
            states: common::random_vec(&mut rng, seq_len * dim, 10.0),
        };
        let got = ok(pool_trace(&trace, Pooling::Mean))?;
        for c in 0..dim {
            let mut sum = 0.0f64;
            for j in 0..seq_len {
                sum += f64::from(trace.states[j * dim + c]);
            }
            worst = worst.max((f64::from(got[c]) - sum / seq_len as f64).abs());
        }
    }
    ensure!(worst <= 1e-6, "mean pooling off by {worst}");
    let singles: Vec<String> = toy.tb.vocab.symbols().iter().filter(|s| !s.contains('\n')).take(12).cloned().collect();
    for layer in 1..=toy.model.num_layers() {
        let mean = ok(pooled_hidden_states(&toy.model, &singles, "en", layer, Pooling::Mean))?;
        let last = ok(pooled_hidden_states(&toy.model, &singles, "en", layer, Pooling::Last))?;
        ensure!(mean.rows == last.rows, "layer {layer}: single-token mean != last");
    }
    Ok(format!("max deviation {worst:e} on 100 traces; single-token mean == last"))
}

fn c4_positions(_: &Toy) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let s1 = rng.random_range(0..5);
        let f1 = s1 + rng.random_range(0..10);
        let len = f1 + rng.random_range(0..10);
        if len == 0 {
            continue;
        }
        let p = RenderedPrompt {
            text: String::new(),
            tokens: vec![0; len],
            spans: PromptSpans { system: 0..s1, fewshot: s1..f1, question: f1..len },
            fewshot_langs: vec![],
            question_lang: "xa".into(),
        };
        let get = |m| resolve_positions(&p, m);
        ensure!(ok(get(PositionMode::OnFewshot))? == (s1..f1).collect::<Vec<_>>(), "on_fewshot");
        ensure!(ok(get(PositionMode::OnQuestion))? == (f1..len).collect::<Vec<_>>(), "on_question");
        ensure!(ok(get(PositionMode::Entire))? == (0..len).collect::<Vec<_>>(), "entire");
        match get(PositionMode::AfterFewshot) {
            Ok(v) => ensure!(f1 < len && v == vec![f1], "after_fewshot gave {v:?} for f1={f1} len={len}"),
            Err(Error::Argument(_)) => ensure!(f1 == len, "after_fewshot refused f1={f1} len={len}"),
            Err(e) => return Err(format!("after_fewshot: wrong error kind {e}")),
        }
    }
    Ok("500 random span layouts".into())
}

struct Stub {
    val: HashMap<(usize, u32, PositionMode), usize>,
    baseline: usize,
    total: usize,
    tests: Mutex<Vec<Option<PlanDescriptor>>>,
}

impl PlanEvaluator for Stub {
    fn evaluate_part(&self, part: Part, plan: Option<&SteeringPlan>) -> langvec::Result<EvalReport> {
        let correct = match (part, plan) {
            (Part::Val, Some(p)) => self.val[&(p.layer, p.scale.to_bits(), p.position_mode)],
            (Part::Val, None) => self.baseline,
            (Part::Test, p) => {
                self.tests.lock().unwrap().push(p.map(PlanDescriptor::from));
                0
            }
        };
        Ok(EvalReport {
            mode: if plan.is_some() { EvalMode::Ours } else { EvalMode::B },
            task: "stub".into(),
            language: "xx".into(),
            part,
            plan: plan.map(PlanDescriptor::from),
            records: vec![],
            correct,
            total: self.total,
            accuracy: correct as f64 / self.total as f64,
        })
    }
}

fn c5_gating(_: &Toy) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layers: Vec<usize> = (1..=6).collect();
    let alphas = [0.5f32, 1.0, 2.0, 3.0];
    let config = ExperimentConfig {
        layers: layers.clone(),
        alphas: alphas.to_vec(),
        ..ExperimentConfig::with_defaults("stub", "en", "xx")
    };
    let vectors: BTreeMap<usize, SteeringVector> = layers
        .iter()
        .map(|&l| (l, SteeringVector { layer: l, values: vec![1.0; 4], meta: meta("xx") }))
        .collect();
    let (mut gated, mut ungated) = (0, 0);
    for trial in 0..300 {
        let total = 10;
        let hi = rng.random_range(1..=total);
        let mut val = HashMap::new();
        for &l in &layers {
            for &a in &alphas {
                for m in PositionMode::ALL {
                    val.insert((l, a.to_bits(), m), rng.random_range(0..=hi));
                }
            }
        }
        let stub = Stub { val, baseline: rng.random_range(0..=total), total, tests: Mutex::new(vec![]) };
        let out = ok(grid_search(&stub, &vectors, &config, EvalMode::Ours))?;
        ensure!(out.val_table.len() == 96, "trial {trial}: {} rows", out.val_table.len());

        // brute force: scan all 6 x 4 x 4 configs in an arbitrary order
        let mut best: Option<(usize, f32, usize, PositionMode)> = None;
        for m in PositionMode::ALL.iter().rev() {
            for &a in alphas.iter().rev() {
                for &l in layers.iter().rev() {
                    let c = stub.val[&(l, a.to_bits(), *m)];
                    if c <= stub.baseline {
                        continue;
                    }
                    let rank = |(c, a, l, m): (usize, f32, usize, PositionMode)| {
                        let mi = PositionMode::ALL.iter().position(|x| *x == m).unwrap();
                        (std::cmp::Reverse(c), (a * 2.0) as u32, l, mi)
                    };
                    if best.is_none_or(|b| rank((c, a, l, *m)) < rank((b.0, b.1, b.2, b.3))) {
                        best = Some((c, a, l, *m));
                    }
                }
            }
        }
        let tests = stub.tests.lock().unwrap().clone();
        ensure!(tests.len() == 1, "trial {trial}: {} test evaluations", tests.len());
        match best {
            Some((_, a, l, m)) => {
                gated += 1;
                let want = PlanDescriptor { layer: l, alpha: a, position: m };
                ensure!(out.gated && out.best == Some(want), "trial {trial}: got {:?}, want {want:?}", out.best);
                ensure!(tests[0] == Some(want), "trial {trial}: test ran {:?}", tests[0]);
            }
            None => {
                ungated += 1;
                ensure!(!out.gated && out.best.is_none(), "trial {trial}: selected {:?} with no survivor", out.best);
                ensure!(tests[0].is_none(), "trial {trial}: steered test without survivor");
                ensure!(out.flag() == Some("no gated config"), "trial {trial}: missing flag");
            }
        }
    }
    Ok(format!("300 stubbed grids ({gated} gated, {ungated} without survivor) match brute force"))
}

struct Effect {
    language: String,
    pipeline_run: PipelineRun,
    baseline: EvalReport,
}

fn c6_effect(toy: &Toy, keep: &mut Vec<Effect>) -> Check {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for target in ["xa", "xb", "xc"] {
        let exp = ok(toy.cfg.experiment(&toy.task.name, target, toy.model.num_layers()))?;
        let k = exp.k;
        let pipeline = ok(SteeringPipeline::new(&toy.model, &toy.task, exp))?;
        let run = ok(pipeline.run())?;
        let b = ok(pipeline.baseline_test())?;
        let oracle = ok(pipeline.evaluator().evaluate(
            &pipeline.split().test_ids,
            &PromptRecipe::oracle("en", target, k),
            None,
            EvalMode::Oracle,
            Part::Test,
        ))?;
        let rate = |r: &EvalReport| dialect_output_rate(&toy.tb, r, target);
        let (rb, rs, ro) = (rate(&b), rate(&run.grid.test), rate(&oracle));
        let plan = run
            .grid
            .best
            .map(|p| format!("t={} a={} {}", p.layer, p.alpha, p.position))
            .unwrap_or_else(|| "no gated config".into());
        lines.push(format!(
            "{target}: B {:.1} / steered {:.1} / OR {:.1} pp ({plan})",
            100.0 * rb,
            100.0 * rs,
            100.0 * ro
        ));
        if !run.grid.gated {
            failures.push(format!("{target}: no gated config"));
        } else if rs - rb < 0.10 {
            failures.push(format!("{target}: gain {:.1} pp < 10", 100.0 * (rs - rb)));
        } else if !(ro >= rs && rs >= rb) {
            failures.push(format!("{target}: ordering OR >= steered >= B violated"));
        }
        keep.push(Effect { language: target.into(), pipeline_run: run, baseline: b });
    }
    let detail = format!("train {:.0}s; {}", toy.train_secs, lines.join("; "));
    ensure!(toy.train_secs <= 600.0, "training took {:.0}s; {detail}", toy.train_secs);
    ensure!(failures.is_empty(), "{}; {detail}", failures.join(", "));
    Ok(detail)
}

fn c7_clustering(toy: &Toy) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid: Vec<f64> = (0..400).map(|i| 0.01 + i as f64 / 200.0).collect();
    for s in 0..50 {
        let n = rng.random_range(4..=6);
        let labels: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let d = common::random_distances(&mut rng, n, &grid);
        let tree = ok(agglomerative_cluster(&ok(DistanceMatrix::new(labels.clone(), d.clone()))?))?;
        let want = common::brute_force_average_linkage(&labels, &d);
        for (step, (m, (members, dist))) in tree.merges.iter().zip(&want).enumerate() {
            ensure!(&m.members == members, "seed {s} step {step}: {:?} vs {members:?}", m.members);
            ensure!((m.distance - dist).abs() < 1e-9, "seed {s} step {step}: {} vs {dist}", m.distance);
        }
        ensure!(
            tree.merges.windows(2).all(|w| w[1].distance >= w[0].distance),
            "seed {s}: merge distances decrease"
        );
    }
    let split = ok(split_three_way(&toy.task.corpus, toy.cfg.seed))?;
    let mut firsts = Vec::new();
    for layer in 1..=toy.model.num_layers() {
        let mut vs = BTreeMap::new();
        for target in ["xa", "xb", "xc"] {
            let mut v = ok(extract_vectors(
                &toy.model,
                &toy.task,
                &split.compute_ids,
                "en",
                target,
                &BTreeSet::from([layer]),
                toy.cfg.shots(),
                Pooling::Mean,
                toy.cfg.seed,
            ))?;
            vs.insert(target.to_string(), v.remove(&layer).unwrap());
        }
        let m = ok(cosine_distance_matrix(&vs))?;
        let tree = ok(agglomerative_cluster(&m))?;
        let first = &tree.merges[0];
        ensure!(
            first.members == ["xa", "xb"],
            "layer {layer}: first merge {:?} ({})",
            first.members,
            tree.to_newick()
        );
        firsts.push(format!("t{layer} {:.3}", first.distance));
    }
    Ok(format!("50 random matrices match; testbed first merge (xa,xb) at {}", firsts.join(", ")))
}

fn c8_norms(_: &Toy) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..50 {
        let mut vs = BTreeMap::new();
        for i in 0..rng.random_range(1..8) {
            let len = rng.random_range(1..100);
            let values = common::random_vec(&mut rng, len, 3.0);
            let l = format!("l{i}");
            vs.insert(l.clone(), SteeringVector { layer: 1, values, meta: meta(&l) });
        }
        let table = norm_table(&vs);
        for r in &table {
            let want: f64 = vs[&r.language].values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            ensure!((r.norm - want).abs() <= 1e-6, "trial {trial}: {} vs {want}", r.norm);
        }
        ensure!(table.windows(2).all(|w| w[0].norm >= w[1].norm), "trial {trial}: not descending");
    }
    let mut vs = BTreeMap::new();
    vs.insert("x".to_string(), SteeringVector { layer: 1, values: vec![3.0, 4.0], meta: meta("x") });
    let n = norm_table(&vs)[0].norm;
    ensure!(n == 5.0, "[3,4] -> {n}");
    Ok("50 random tables match; [3,4] -> 5.0".into())
}

fn c9_interop(toy: &Toy, dir: &Path) -> Check {
    let split = ok(split_three_way(&toy.task.corpus, 0))?;
    let samples = ok(build_compute_samples(&toy.task.corpus, &toy.task.template, &split, "en", "xb", 4, 0))?;
    let src: Vec<String> = samples.iter().map(|s| s.source_text.clone()).collect();
    let tgt: Vec<String> = samples.iter().map(|s| s.target_text.clone()).collect();
    let mut worst = 0.0f64;
    for layer in 1..=toy.model.num_layers() {
        for pooling in [Pooling::Mean, Pooling::Last] {
            let s = ok(pooled_hidden_states(&toy.model, &src, "en", layer, pooling))?;
            let t = ok(pooled_hidden_states(&toy.model, &tgt, "xb", layer, pooling))?;
            let direct = ok(compute_language_vector(&s, &t))?;
            let (ps, pt) = (dir.join(format!("s{layer}.lvad")), dir.join(format!("t{layer}.lvad")));
            ok(export_activation_dump(&s, &ps))?;
            ok(export_activation_dump(&t, &pt))?;
            let via = ok(compute_language_vector(&ok(import_activation_dump(&ps))?, &ok(import_activation_dump(&pt))?))?;
            for (a, b) in direct.values.iter().zip(&via.values) {
                worst = worst.max((f64::from(*a) - f64::from(*b)).abs());
            }
            let pv = dir.join(format!("v{layer}.json"));
            ok(save_vector(&direct, &pv))?;
            ensure!(ok(load_vector(&pv))? == direct, "layer {layer}: vector file round trip differs");
        }
    }
    ensure!(worst <= 1e-7, "dump route differs by {worst}");
    Ok(format!("max dump-route deviation {worst:e}; vector files round-trip exactly"))
}

fn c10_determinism(toy: &Toy, dir: &Path) -> Check {
    let model_path = dir.join("model.lvtm");
    ok(save_model(&toy.model, &model_path))?;
    let cfg = dir.join("grid.json");
    let body = serde_json::json!({
        "seed": 0,
        "model": model_path,
        "select_tasks": [toy.task.name],
        "targets": ["xa", "xb"],
    });
    ok(fs::write(&cfg, body.to_string()))?;
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let out = dir.join(name);
        let status = ok(Command::new(env!("CARGO_BIN_EXE_langvec"))
            .args(["grid", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .args(["--workers", workers])
            .output())?;
        ensure!(status.status.success(), "grid run {name} failed: {}", String::from_utf8_lossy(&status.stderr));
        let mut files = BTreeMap::new();
        for entry in ok(fs::read_dir(&out))? {
            let p = ok(entry)?.path();
            files.insert(p.file_name().unwrap().to_string_lossy().to_string(), ok(fs::read(&p))?);
        }
        outputs.push(files);
    }
    let names: Vec<&String> = outputs[0].keys().collect();
    ensure!(names.len() >= 3, "expected report files, got {names:?}");
    ensure!(outputs[0] == outputs[1], "two runs with one worker differ");
    ensure!(outputs[0] == outputs[2], "1 vs 8 workers differ");
    Ok(format!("{} files byte-identical across 3 runs ({})", names.len(), names.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")))
}

fn c11_ablation(toy: &Toy, effects: &[Effect]) -> Check {
    let e = effects.iter().find(|e| e.language == "xa").ok_or("criterion 6 did not run for xa")?;
    let exp = ok(toy.cfg.experiment(&toy.task.name, "xa", toy.model.num_layers()))?;
    let pipeline = ok(SteeringPipeline::new(&toy.model, &toy.task, exp))?;

    let ablation = ok(pooling_ablation(&pipeline))?;
    ensure!(ablation.baseline == e.baseline.accuracy, "ablation baseline differs from B");
    ensure!(ablation.mean == e.pipeline_run.grid.test.accuracy, "mean pooling differs from the standard run");
    ensure!(ablation.mean_delta == ablation.mean - ablation.baseline, "mean delta");
    ensure!(ablation.last_delta == ablation.last - ablation.baseline, "last delta");
    let table = render_ablation(std::slice::from_ref(&ablation));
    for col in ["Language", "Baseline", "Mean (Δ)", "Last (Δ)"] {
        ensure!(table.lines().next().unwrap_or("").contains(col), "table lacks column {col}");
    }
    ensure!(table.lines().any(|l| l.starts_with("xa")) && table.lines().any(|l| l.starts_with("Average")), "table rows");

    let curve = ok(sensitivity_sweep(&pipeline, &DEFAULT_FRACTIONS, toy.cfg.seed))?;
    let fr: Vec<f64> = curve.points.iter().map(|p| p.fraction).collect();
    ensure!(fr == DEFAULT_FRACTIONS, "curve fractions {fr:?}");
    ensure!(curve.base_test_acc == e.baseline.accuracy, "curve baseline differs from B");
    ensure!(curve.points.windows(2).all(|w| w[0].compute_size <= w[1].compute_size), "compute sizes not monotone");
    let full = curve.points.last().unwrap();
    let standard = &e.pipeline_run.grid;
    ensure!(full.compute_size == pipeline.split().compute_ids.len(), "fraction 1.0 drops examples");
    ensure!(
        full.test_acc == standard.test.accuracy && full.gated == standard.gated,
        "fraction 1.0 gives {} vs standard {}",
        full.test_acc,
        standard.test.accuracy
    );
    let ids = ok(fraction_subset(&pipeline.split().compute_ids, 1.0, toy.cfg.seed))?;
    let rerun = ok(pipeline.run_with(Pooling::Mean, &ids))?;
    ensure!(rerun.grid == *standard && rerun.vectors == e.pipeline_run.vectors, "fraction 1.0 run differs from the standard run");
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{}:{:.1}", p.fraction, 100.0 * p.test_acc))
        .collect();
    Ok(format!(
        "xa pooling mean {:.1} / last {:.1} vs B {:.1}; curve {}",
        100.0 * ablation.mean,
        100.0 * ablation.last,
        100.0 * ablation.baseline,
        points.join(" ")
    ))
}

fn run_check(results: &mut Vec<(u32, &'static str, Check, f64)>, id: u32, name: &'static str, f: impl FnOnce() -> Check) {
    let start = Instant::now();
    let r = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &r {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("criterion {id:>2} {tag} {name} ({secs:.1}s): {detail}");
    results.push((id, name, r, secs));
}

fn main() {
    let cfg = RunConfig::default();
    let tb = synth_dialect_corpus(&DialectSpec::testbed(cfg.seed)).expect("testbed");
    let start = Instant::now();
    let report = train_toy(
        cfg.toy.model_config(tb.vocab.len(), cfg.seed),
        tb.vocab.clone(),
        &tb.train_tokens().expect("training tokens"),
        &cfg.toy.train_options(cfg.seed),
    )
    .expect("toy training");
    let train_secs = start.elapsed().as_secs_f64();
    println!(
        "trained toy model in {train_secs:.0}s (loss {:.3} -> {:.3})",
        report.initial_loss, report.final_loss
    );
    let task = EvalTask::from_testbed(&tb);
    let toy = Toy { tb, model: report.model, task, cfg, train_secs };
    let dir = tempfile::tempdir().expect("tempdir");

    let mut results = Vec::new();
    let mut effects = Vec::new();
    run_check(&mut results, 1, "alpha-zero identity", || c1_alpha_zero(&toy));
    run_check(&mut results, 2, "zero vector and antisymmetry", || c2_zero_vector(&toy));
    run_check(&mut results, 3, "pooling oracle", || c3_pooling(&toy));
    run_check(&mut results, 4, "position resolution", || c4_positions(&toy));
    run_check(&mut results, 5, "gating soundness", || c5_gating(&toy));
    run_check(&mut results, 6, "toy steering effect", || c6_effect(&toy, &mut effects));
    run_check(&mut results, 7, "clustering oracle", || c7_clustering(&toy));
    run_check(&mut results, 8, "norm table", || c8_norms(&toy));
    run_check(&mut results, 9, "dump and vector round trip", || c9_interop(&toy, dir.path()));
    run_check(&mut results, 10, "determinism", || c10_determinism(&toy, dir.path()));
    run_check(&mut results, 11, "ablation parity", || c11_ablation(&toy, &effects));

    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
