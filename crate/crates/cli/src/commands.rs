use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use enkcvs::evaluation::{write_sweep_csv, DataRecipe};
use enkcvs::reweight::{profiles, write_profiles_csv};
use enkcvs::rng;
use enkcvs::{
    closed_form, confusion_matrix, enkcvs as run_enkcvs, generate_blobs, inject, load_csv, monte_carlo, retrain,
    selection_metrics, sweep, test_accuracy, CsvSchema, FormulaMode, LabeledDataset, Model, NoiseKind, NoiseModel,
    SelectionConfig, SelectionOutcome, SweepGrid, TheoryInputs,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DataSource, RunConfig, Settings};
use crate::Command;

/// Seed-path tags for the decisions the command line makes itself.
mod tag {
    pub const TRAIN_DATA: u64 = 101;
    pub const TEST_DATA: u64 = 102;
    pub const NOISE: u64 = 103;
    pub const SELECT: u64 = 104;
    pub const RETRAIN: u64 = 105;
    pub const MONTE_CARLO: u64 = 106;
}

pub enum Failure {
    /// Bad or missing configuration: exit status 1.
    Usage(String),
    /// Anything that went wrong while running: exit status 2.
    Runtime(String),
}

impl From<enkcvs::Error> for Failure {
    fn from(e: enkcvs::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

pub struct Run {
    pub command: Command,
    pub settings: Settings,
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub workers: usize,
}

/// What a command produced, for the manifest.
#[derive(Default)]
struct Produced {
    artifacts: Vec<String>,
    /// Extra non-reproducible fields (timings) for the manifest's `meta`.
    meta: BTreeMap<String, Value>,
}

impl Produced {
    fn add(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }
}

pub fn execute(run: &Run) -> Result<()> {
    let started = SystemTime::now();
    let clock = Instant::now();
    fs::create_dir_all(&run.out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", run.out.display())))?;
    let mut produced = Produced::default();
    match run.command {
        Command::GenData => gen_data(run, &mut produced)?,
        Command::Inject => inject_cmd(run, &mut produced)?,
        Command::Select => select(run, &mut produced)?,
        Command::Retrain => retrain_cmd(run, &mut produced)?,
        Command::Eval => eval(run, &mut produced)?,
        Command::Sweep => sweep_cmd(run, &mut produced)?,
        Command::Theory => theory(run, &mut produced)?,
        Command::Simulate => simulate(run, &mut produced)?,
    }
    let mut meta = produced.meta;
    meta.insert(
        "started_unix".into(),
        json!(started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)),
    );
    meta.insert("wall_seconds".into(), json!(clock.elapsed().as_secs_f64()));
    meta.insert("workers".into(), json!(run.workers));
    meta.insert("out".into(), json!(run.out.display().to_string()));
    let manifest = json!({
        "command": run.command.name(),
        "version": enkcvs::VERSION,
        "seed": run.cfg.seed,
        "config": run.settings.values(),
        "artifacts": produced.artifacts,
        "meta": meta,
    });
    write_json(&run.out.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// The clean (or as-given) training data and an optional test set.
fn load_data(cfg: &RunConfig) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    match &cfg.data {
        None => Err(Failure::Usage("no dataset: pass --csv FILE or --blobs Q,N,D,SEPARATION".into())),
        Some(DataSource::Blobs(b)) => {
            let seed = rng::derive(cfg.seed, &[tag::TRAIN_DATA]);
            let train = generate_blobs(b.num_classes, b.n, b.dim, b.separation, seed)?;
            let test = if cfg.test_n > 0 {
                let seed = rng::derive(cfg.seed, &[tag::TEST_DATA]);
                Some(generate_blobs(b.num_classes, cfg.test_n, b.dim, b.separation, seed)?)
            } else {
                None
            };
            Ok((train, test))
        }
        Some(DataSource::Csv {
            path,
            label_col,
            true_label_col,
            num_classes,
            test_csv,
        }) => {
            let schema = CsvSchema {
                label_col: label_col.clone(),
                true_label_col: true_label_col.clone().or_else(|| detect_true_label(path)),
                num_classes: *num_classes,
            };
            let train = load_csv(path, &schema)?;
            let test = match test_csv {
                Some(p) => {
                    let schema = CsvSchema {
                        num_classes: Some(train.num_classes()),
                        ..schema
                    };
                    Some(load_csv(p, &schema)?)
                }
                None => None,
            };
            Ok((train, test))
        }
    }
}

/// Files written by this tool carry ground truth in a `true_label` column.
fn detect_true_label(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    let header = text.lines().next()?;
    header
        .split(',')
        .any(|c| c.trim() == "true_label")
        .then(|| "true_label".to_string())
}

fn noise_model(cfg: &RunConfig, num_classes: usize) -> Result<Option<NoiseModel>> {
    match cfg.noise.as_deref() {
        None | Some("none") => Ok(None),
        Some(spec) => {
            let model = NoiseModel::parse(spec, num_classes).map_err(|e| Failure::Usage(format!("config `noise`: {e}")))?;
            if matches!(&model.kind, NoiseKind::Asymmetric { pairs } if pairs.is_empty()) {
                log::warn!("noise `{spec}` lists no flip pairs; labels are left unchanged");
            }
            Ok(Some(model))
        }
    }
}

/// Training data with the configured noise applied, plus the test set.
fn noisy_data(cfg: &RunConfig) -> Result<(LabeledDataset, Option<LabeledDataset>, Option<NoiseModel>)> {
    let (clean, test) = load_data(cfg)?;
    let model = noise_model(cfg, clean.num_classes())?;
    let data = match &model {
        Some(m) => inject(&clean, m, rng::derive(cfg.seed, &[tag::NOISE]))?,
        None => clean,
    };
    Ok((data, test, model))
}

fn selection_config(cfg: &RunConfig, data: &LabeledDataset) -> SelectionConfig {
    SelectionConfig {
        k: cfg.k,
        m: cfg.m,
        t: cfg.t,
        spec: cfg.model_spec(data.dim(), data.num_classes()),
        train_cfg: cfg.train.clone(),
        seed: rng::derive(cfg.seed, &[tag::SELECT]),
    }
}

fn gen_data(run: &Run, produced: &mut Produced) -> Result<()> {
    if !matches!(run.cfg.data, Some(DataSource::Blobs(_))) {
        return Err(Failure::Usage("gen-data needs --blobs Q,N,D,SEPARATION".into()));
    }
    let (train, test) = load_data(&run.cfg)?;
    train.write_csv(run.out.join("data.csv"))?;
    produced.add("data.csv");
    if let Some(test) = test {
        test.write_csv(run.out.join("test.csv"))?;
        produced.add("test.csv");
    }
    Ok(())
}

fn inject_cmd(run: &Run, produced: &mut Produced) -> Result<()> {
    let (data, _, model) = noisy_data(&run.cfg)?;
    let Some(model) = model else {
        return Err(Failure::Usage("inject needs --noise symmetric:EPS or asym:EPS[:j>k,...]".into()));
    };
    data.write_csv(run.out.join("noisy.csv"))?;
    write_json(&run.out.join("noise_model.json"), &model)?;
    produced.add("noisy.csv");
    produced.add("noise_model.json");
    Ok(())
}

fn run_selection(cfg: &RunConfig, data: &LabeledDataset) -> Result<SelectionOutcome> {
    match &cfg.selection_file {
        Some(path) => {
            let outcome: SelectionOutcome = read_json(path)?;
            outcome.check_matches(data)?;
            Ok(outcome)
        }
        None => Ok(run_enkcvs(data, &selection_config(cfg, data))?),
    }
}

fn select(run: &Run, produced: &mut Produced) -> Result<()> {
    let cfg = &run.cfg;
    let (data, _, _) = noisy_data(cfg)?;
    let outcome = run_enkcvs(&data, &selection_config(cfg, &data))?;
    let profiles = profiles(&outcome, data.num_classes())?;

    outcome.write_verdicts_csv(run.out.join("verdicts.csv"))?;
    write_json(&run.out.join("selection.json"), &outcome)?;
    write_profiles_csv(run.out.join("profiles.csv"), &outcome, &profiles)?;
    let metrics = if data.has_true_labels() {
        Some(selection_metrics(&outcome, &data)?)
    } else {
        None
    };
    write_json(
        &run.out.join("metrics.json"),
        &json!({
            "n": data.len(),
            "num_selected": outcome.num_selected(),
            "K": cfg.k,
            "M": cfg.m,
            "t": cfg.t,
            "selection": metrics,
        }),
    )?;
    for name in ["verdicts.csv", "selection.json", "profiles.csv", "metrics.json"] {
        produced.add(name);
    }
    if let Some(m) = metrics {
        println!(
            "selected {} of {}; precision {:.4}, recall {:.4}",
            outcome.num_selected(),
            data.len(),
            m.precision,
            m.recall
        );
    } else {
        println!("selected {} of {}", outcome.num_selected(), data.len());
    }
    Ok(())
}

fn retrain_cmd(run: &Run, produced: &mut Produced) -> Result<()> {
    let cfg = &run.cfg;
    let (data, test, _) = noisy_data(cfg)?;
    let outcome = run_selection(cfg, &data)?;
    let spec = cfg.model_spec(data.dim(), data.num_classes());
    let train_cfg = cfg.train.reseeded(rng::derive(cfg.seed, &[tag::RETRAIN]));
    let model = retrain(&data, &outcome, cfg.gamma, &spec, &train_cfg)?;
    model.save_json(run.out.join("model.json"))?;
    produced.add("model.json");
    let accuracy = test.as_ref().map(|t| test_accuracy(&model, t)).transpose()?;
    write_json(
        &run.out.join("metrics.json"),
        &json!({
            "gamma": cfg.gamma,
            "num_selected": outcome.num_selected(),
            "test_accuracy": accuracy,
        }),
    )?;
    produced.add("metrics.json");
    if let Some(a) = accuracy {
        println!("test accuracy {a:.4}");
    }
    Ok(())
}

fn eval(run: &Run, produced: &mut Produced) -> Result<()> {
    let cfg = &run.cfg;
    if cfg.model_file.is_none() && cfg.selection_file.is_none() {
        return Err(Failure::Usage("eval needs --model FILE and/or --selection FILE".into()));
    }
    let (data, test, _) = noisy_data(cfg)?;
    let mut report = serde_json::Map::new();
    if let Some(path) = &cfg.model_file {
        let model = Model::load_json(path)?;
        let target = test.as_ref().unwrap_or(&data);
        let accuracy = test_accuracy(&model, target)?;
        report.insert("accuracy".into(), json!(accuracy));
        report.insert("evaluated_on".into(), json!(if test.is_some() { "test" } else { "train" }));
        if target.has_true_labels() {
            report.insert("confusion".into(), serde_json::to_value(confusion_matrix(&model, target)?)?);
        }
        println!("accuracy {accuracy:.4}");
    }
    if let Some(path) = &cfg.selection_file {
        let outcome: SelectionOutcome = read_json(path)?;
        let metrics = selection_metrics(&outcome, &data)?;
        println!("precision {:.4}, recall {:.4}", metrics.precision, metrics.recall);
        report.insert("selection".into(), serde_json::to_value(metrics)?);
    }
    write_json(&run.out.join("eval.json"), &report)?;
    produced.add("eval.json");
    Ok(())
}

fn sweep_cmd(run: &Run, produced: &mut Produced) -> Result<()> {
    let cfg = &run.cfg;
    let (recipe, dim, num_classes) = match &cfg.data {
        Some(DataSource::Blobs(b)) => (
            DataRecipe::Blobs {
                num_classes: b.num_classes,
                n: b.n,
                dim: b.dim,
                separation: b.separation,
                n_test: if cfg.sweep.retrain { cfg.test_n } else { 0 },
            },
            b.dim,
            b.num_classes,
        ),
        _ => {
            let (train, test) = load_data(cfg)?;
            let (dim, q) = (train.dim(), train.num_classes());
            (DataRecipe::Fixed { train, test }, dim, q)
        }
    };
    let s = &cfg.sweep;
    let grid = SweepGrid {
        ks: s.ks.clone(),
        ms: s.ms.clone(),
        ts: s.ts.clone(),
        epsilons: s.epsilons.clone(),
        pairs: s.pairs.clone(),
        spec: cfg.model_spec(dim, num_classes),
        train_cfg: cfg.train.clone(),
        retrain: s.retrain,
        gamma: cfg.gamma,
    };
    let records = sweep(&grid, &recipe, &s.seeds)?;
    write_sweep_csv(run.out.join("sweep.csv"), &records)?;
    produced.add("sweep.csv");
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        log::warn!("{failures} of {} sweep cells failed; see the error column", records.len());
    }
    let timings: Vec<Value> = records
        .iter()
        .map(|r| {
            json!({
                "k": r.cell.k, "m": r.cell.m, "t": r.cell.t,
                "epsilon": r.cell.epsilon, "seed": r.cell.seed,
                "wall_seconds": r.wall_time,
            })
        })
        .collect();
    produced.meta.insert("cell_wall_seconds".into(), Value::Array(timings));
    println!("{} cells, {failures} failed", records.len());
    Ok(())
}

fn theory_inputs(cfg: &RunConfig) -> Result<TheoryInputs> {
    let th = &cfg.theory;
    let mut inputs = TheoryInputs::symmetric(th.num_classes, th.epsilon, th.q, cfg.m, cfg.t)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(model) = noise_model(cfg, th.num_classes)? {
        inputs.transition = model.transition;
    }
    inputs.k = cfg.k;
    inputs.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(inputs)
}

fn formula_mode(cfg: &RunConfig) -> FormulaMode {
    if cfg.theory.literal {
        FormulaMode::Literal
    } else {
        FormulaMode::Corrected
    }
}

fn theory(run: &Run, produced: &mut Produced) -> Result<()> {
    let inputs = theory_inputs(&run.cfg)?;
    let result = closed_form(&inputs, formula_mode(&run.cfg))?;
    let report = json!({ "inputs": inputs, "result": result });
    write_json(&run.out.join("theory.json"), &report)?;
    produced.add("theory.json");
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn simulate(run: &Run, produced: &mut Produced) -> Result<()> {
    let cfg = &run.cfg;
    let inputs = theory_inputs(cfg)?;
    let exact = closed_form(&inputs, formula_mode(cfg))?;
    let simulated = monte_carlo(&inputs, cfg.theory.samples, rng::derive(cfg.seed, &[tag::MONTE_CARLO]))?;
    let within = simulated.brackets(&exact, 3.0);
    write_json(
        &run.out.join("simulate.json"),
        &json!({
            "inputs": inputs,
            "closed_form": exact,
            "monte_carlo": simulated,
            "within_3_se": within,
        }),
    )?;
    produced.add("simulate.json");
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
    println!("{:<10} {:>12} {:>12}", "", "closed form", "monte carlo");
    println!("{:<10} {:>12} {:>12}", "precision", show(exact.precision), show(simulated.precision));
    println!("{:<10} {:>12} {:>12}", "recall", show(exact.recall), show(simulated.recall));
    if let Some((lo, hi)) = simulated.precision_ci {
        println!("precision 95% CI [{lo:.6}, {hi:.6}]");
    }
    println!("within 3 standard errors: {within}");
    Ok(())
}
