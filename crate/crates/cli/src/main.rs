//! Pipeline driver: scenario generation, vocabulary clustering, offline
//! teacher simulation, distillation training, weight calibration,
//! benchmarking, single-trajectory evaluation, and scene rendering.

mod render;
mod report;

use clap::{Parser, Subcommand};
use drivesim_core::infer::{
    grid_search, load_weights, save_weights, write_grid_table, GridSpec, InferError,
    InferenceWeights,
};
use drivesim_core::scenario::gen::{generate_scenarios, GenError, TemplateMix};
use drivesim_core::scenario::{
    load_pairs, load_scenario, save_manifest, save_scenario, FramePairEntry, SchemaError,
    Trajectory,
};
use drivesim_core::student::model::{
    load_model, model_hash, save_model, ModelConfig, StudentModel,
};
use drivesim_core::student::train::{ablated_mask, build_item, train, Hyper, TrainItem};
use drivesim_core::student::StudentError;
use drivesim_core::teachers::{
    config_hash, epdms, load_score_matrix, pdms, save_score_matrix, score_ec, score_row,
    score_sidecar_hash, teach_scenario, SubScores, TeacherConfig, TeacherError, METRIC_NAMES,
};
use drivesim_core::vocab::{
    kmeans, load_vocabulary, sample_trajectories, save_vocabulary, vocab_hash, VocabError,
};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_SCHEMA: u8 = 2;
const EXIT_CONFIG_HASH: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

struct Failure {
    code: u8,
    error: String,
    context: String,
}

impl Failure {
    fn new(code: u8, error: impl Into<String>, context: impl Into<String>) -> Failure {
        Failure {
            code,
            error: error.into(),
            context: context.into(),
        }
    }
}

macro_rules! failure_from {
    ($ty:ty, $ctx:expr, $code:expr) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Failure {
                Failure::new($code(&e), e.to_string(), $ctx)
            }
        }
    };
}

failure_from!(SchemaError, "scenario schema", |_: &SchemaError| {
    EXIT_SCHEMA
});
failure_from!(GenError, "scenario generation", |_: &GenError| EXIT_SCHEMA);
failure_from!(VocabError, "vocabulary", |_: &VocabError| EXIT_SCHEMA);
failure_from!(
    TeacherError,
    "teacher scoring",
    |e: &TeacherError| match e {
        TeacherError::ConfigHashMismatch { .. } => EXIT_CONFIG_HASH,
        TeacherError::Io(_) | TeacherError::Format(_) => EXIT_SCHEMA,
        _ => EXIT_NUMERIC,
    }
);
failure_from!(StudentError, "student model", |e: &StudentError| match e {
    StudentError::NonFiniteLoss { .. } => EXIT_NUMERIC,
    _ => EXIT_SCHEMA,
});
failure_from!(InferError, "inference", |e: &InferError| match e {
    InferError::Student(StudentError::NonFiniteLoss { .. }) => EXIT_NUMERIC,
    InferError::Teacher(TeacherError::ConfigHashMismatch { .. }) => EXIT_CONFIG_HASH,
    _ => EXIT_SCHEMA,
});
failure_from!(std::io::Error, "io", |_: &std::io::Error| EXIT_SCHEMA);

/// Files written by the running command; removed unless committed, so failed
/// commands never leave partial outputs behind.
#[derive(Default)]
struct Outputs {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn add(&mut self, p: impl Into<PathBuf>) {
        self.paths.push(p.into());
    }

    fn commit(&mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "drivesim", about = "desk-scale driving benchmark pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate frame-pair scenarios and a manifest
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// template weights, e.g. straight=0.4,curved=0.2,intersection=0.2,lane_change=0.2
        #[arg(long)]
        mix: Option<String>,
    },
    /// Cluster random trajectories into a planning vocabulary
    Vocab {
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the whole vocabulary in every scenario with the rule-based teachers
    Teach {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train the student planner by imitation + metric distillation
    Train {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// train without the TL/DDC/LK distillation heads
        #[arg(long)]
        ablate_extended: bool,
    },
    /// Grid-search the assembled-cost confidence weights
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select on every scenario and report teacher-rescored aggregates
    Benchmark {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// output stem; writes <out>.json and <out>.csv
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// additionally report a second run, e.g. --compare imitation-only
        #[arg(long)]
        compare: Option<String>,
    },
    /// Score one trajectory file against one scenario
    Eval {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Emit an SVG of the scene with candidates colored by a metric
    Render {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mix(spec: &str) -> Result<TemplateMix, Failure> {
    let mut mix = TemplateMix {
        straight: 0.0,
        curved: 0.0,
        intersection: 0.0,
        lane_change: 0.0,
    };
    for part in spec.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(|| {
            Failure::new(
                EXIT_SCHEMA,
                format!("malformed mix entry `{part}`"),
                "gen --mix",
            )
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            Failure::new(
                EXIT_SCHEMA,
                format!("non-numeric mix weight `{value}`"),
                "gen --mix",
            )
        })?;
        match key.trim() {
            "straight" => mix.straight = value,
            "curved" => mix.curved = value,
            "intersection" => mix.intersection = value,
            "lane_change" => mix.lane_change = value,
            other => {
                return Err(Failure::new(
                    EXIT_SCHEMA,
                    format!("unknown template `{other}`"),
                    "gen --mix",
                ))
            }
        }
    }
    Ok(mix)
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(EXIT_SCHEMA, e.to_string(), "--jobs"))?;
    }
    Ok(())
}

fn load_teacher_config(path: Option<&Path>) -> Result<TeacherConfig, Failure> {
    match path {
        None => Ok(TeacherConfig::default()),
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Failure::new(EXIT_SCHEMA, e.to_string(), "teacher config file")),
    }
}

fn scores_path(dir: &Path, scenario_id: &str) -> PathBuf {
    dir.join(format!("{scenario_id}.scores"))
}

fn cmd_gen(count: usize, seed: u64, out: &Path, mix: Option<&str>) -> Result<(), Failure> {
    let mix = match mix {
        Some(spec) => parse_mix(spec)?,
        None => TemplateMix::uniform(),
    };
    if count == 0 {
        return Err(Failure::new(
            EXIT_SCHEMA,
            "--count must be at least 1",
            "gen",
        ));
    }
    let pairs = generate_scenarios(count, seed, &mix)?;
    std::fs::create_dir_all(out)?;
    let mut outputs = Outputs::default();
    let mut entries = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let prev_name = format!("{}.json", pair.prev.id);
        let curr_name = format!("{}.json", pair.curr.id);
        let prev_path = out.join(&prev_name);
        let curr_path = out.join(&curr_name);
        outputs.add(&prev_path);
        outputs.add(&curr_path);
        save_scenario(&pair.prev, &prev_path)?;
        save_scenario(&pair.curr, &curr_path)?;
        entries.push(FramePairEntry {
            prev: prev_name,
            curr: curr_name,
            transform: pair.transform,
        });
    }
    let manifest = out.join("manifest.json");
    outputs.add(&manifest);
    save_manifest(&entries, &manifest)?;
    outputs.commit();
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

fn cmd_vocab(samples: usize, k: usize, iters: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let vocab = kmeans(&sample_trajectories(samples, seed), k, iters, seed)?;
    let mut outputs = Outputs::default();
    outputs.add(out);
    save_vocabulary(&vocab, out)?;
    outputs.commit();
    println!(
        "wrote vocabulary k={} (final SSE {:.3}) to {}",
        vocab.k,
        vocab.meta.final_sse,
        out.display()
    );
    Ok(())
}

fn cmd_teach(
    scenarios: &Path,
    vocab_path: &Path,
    config: Option<&Path>,
    out: &Path,
    jobs: Option<usize>,
) -> Result<(), Failure> {
    set_jobs(jobs)?;
    let cfg = load_teacher_config(config)?;
    let vocab = load_vocabulary(vocab_path)?;
    let pairs = load_pairs(scenarios)?;
    std::fs::create_dir_all(out)?;
    let mut outputs = Outputs::default();
    for pair in &pairs {
        let matrix = teach_scenario(&pair.curr, &vocab, &cfg);
        let path = scores_path(out, &pair.curr.id);
        outputs.add(&path);
        outputs.add(path.with_extension("scores.json"));
        save_score_matrix(&matrix, &cfg, &path)?;
    }
    outputs.commit();
    println!(
        "wrote {} score matrices (config hash {:016x}) to {}",
        pairs.len(),
        config_hash(&cfg),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    scenarios: &Path,
    scores: &Path,
    vocab_path: &Path,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    out: &Path,
    ablate_extended: bool,
) -> Result<(), Failure> {
    let vocab = load_vocabulary(vocab_path)?;
    let pairs = load_pairs(scenarios)?;
    if pairs.is_empty() {
        return Err(Failure::new(
            EXIT_SCHEMA,
            "empty scenario manifest",
            "train",
        ));
    }

    // all score matrices must agree on the teacher config they were built with
    let first_hash = score_sidecar_hash(&scores_path(scores, &pairs[0].curr.id))?;
    let mut dataset: Vec<TrainItem> = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let path = scores_path(scores, &pair.curr.id);
        let hash = score_sidecar_hash(&path)?;
        if hash != first_hash {
            return Err(TeacherError::ConfigHashMismatch {
                found: hash,
                expected: first_hash,
            }
            .into());
        }
        let matrix = load_score_matrix(&path, Some(first_hash))?;
        if matrix.values.len() != vocab.k {
            return Err(Failure::new(
                EXIT_SCHEMA,
                format!(
                    "score matrix for {} has {} rows but the vocabulary has k={}",
                    pair.curr.id,
                    matrix.values.len(),
                    vocab.k
                ),
                "train",
            ));
        }
        dataset.push(build_item(
            &pair.curr,
            Some((&pair.prev, &pair.transform)),
            &matrix,
            &vocab,
        ));
    }

    let hyper = Hyper {
        lr,
        epochs,
        batch,
        seed,
        metric_mask: if ablate_extended {
            ablated_mask()
        } else {
            [true; 8]
        },
        ..Hyper::default()
    };
    let mut model = StudentModel::new(ModelConfig::default(), seed);
    train(&mut model, &vocab, &dataset, &hyper)?;
    let mut outputs = Outputs::default();
    outputs.add(out);
    save_model(&model, out)?;
    outputs.commit();
    let last = model.training_log.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} scenarios; final mean L_im {:.4}, L_kd {:.4}; model {}",
        epochs,
        dataset.len(),
        last.mean_im,
        last.mean_kd,
        out.display()
    );
    Ok(())
}

fn cmd_calibrate(
    model_path: &Path,
    scenarios: &Path,
    vocab_path: &Path,
    grid: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let model = load_model(model_path)?;
    let vocab = load_vocabulary(vocab_path)?;
    let pairs = load_pairs(scenarios)?;
    let spec: GridSpec = match grid {
        None => GridSpec::default(),
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Failure::new(EXIT_SCHEMA, e.to_string(), "grid spec file"))?,
    };
    let cfg = TeacherConfig::default();
    let (best, rows) = grid_search(&model, &vocab, &pairs, &spec, &cfg)?;
    let table_path = out.with_extension("grid.csv");
    let mut outputs = Outputs::default();
    outputs.add(out);
    outputs.add(&table_path);
    write_grid_table(&rows, &table_path)?;
    save_weights(&best, table_path.to_str(), out)?;
    outputs.commit();
    let best_row = rows
        .iter()
        .map(|r| r.mean_epdms)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "calibrated over {} grid points; best mean EPDMS {:.4}; weights {}",
        rows.len(),
        best_row,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_benchmark(
    model_path: &Path,
    weights_path: &Path,
    scenarios: &Path,
    vocab_path: &Path,
    out: &Path,
    jobs: Option<usize>,
    compare: Option<&str>,
) -> Result<(), Failure> {
    set_jobs(jobs)?;
    let model = load_model(model_path)?;
    let weights = load_weights(weights_path)?;
    let vocab = load_vocabulary(vocab_path)?;
    let pairs = load_pairs(scenarios)?;
    let cfg = TeacherConfig::default();

    let mut runs = vec![report::run_benchmark(
        "calibrated",
        &model,
        &vocab,
        &pairs,
        &weights,
        &cfg,
    )?];
    match compare {
        None => {}
        Some("imitation-only") => runs.push(report::run_benchmark(
            "imitation-only",
            &model,
            &vocab,
            &pairs,
            &InferenceWeights::imitation_only(),
            &cfg,
        )?),
        Some(other) => {
            return Err(Failure::new(
                EXIT_SCHEMA,
                format!("unknown --compare mode `{other}`"),
                "benchmark",
            ))
        }
    }

    let report = report::BenchmarkReport {
        scenario_count: pairs.len(),
        model_seed: model.seed,
        vocab_seed: vocab.meta.seed,
        config_hashes: report::ConfigHashes {
            teacher: format!("{:016x}", config_hash(&cfg)),
            vocab: format!("{:016x}", vocab_hash(&vocab)),
            model: format!("{:016x}", model_hash(&model)),
        },
        runs,
    };
    let json_path = out.with_extension("json");
    let csv_path = out.with_extension("csv");
    let mut outputs = Outputs::default();
    outputs.add(&json_path);
    outputs.add(&csv_path);
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report)
            .map_err(|e| Failure::new(EXIT_NUMERIC, e.to_string(), "report serialization"))?,
    )?;
    std::fs::write(&csv_path, report::report_csv(&report))?;
    outputs.commit();
    for run in &report.runs {
        println!(
            "{}: mean PDMS {:.2}, mean EPDMS {:.2} over {} scenarios",
            run.name, run.aggregates.pdms, run.aggregates.epdms, report.scenario_count
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    scenario_id: String,
    subscores: SubScores,
    pdms: f64,
    epdms: f64,
}

fn cmd_eval(
    scenario_path: &Path,
    trajectory_path: &Path,
    vocab_path: &Path,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let scenario = load_scenario(scenario_path)?;
    let traj: Trajectory = serde_json::from_str(&std::fs::read_to_string(trajectory_path)?)
        .map_err(|e| Failure::new(EXIT_SCHEMA, e.to_string(), "trajectory file"))?;
    let cfg = load_teacher_config(config)?;
    let vocab = load_vocabulary(vocab_path)?;

    // the candidate joins the vocabulary for the progress reference
    let mut extended = vocab.clone();
    extended.trajectories.push(traj.clone());
    extended.k += 1;
    let reference = drivesim_core::teachers::ep_reference(&scenario, &extended, &cfg);
    let row = score_row(&traj, &scenario, reference, &cfg);
    let mut sub = SubScores {
        nc: row[0],
        dac: row[1],
        ep: row[2],
        ttc: row[3],
        c: row[4],
        tl: row[5],
        ddc: row[6],
        lk: row[7],
        ec: None,
    };
    sub.ec = Some(score_ec(&traj, None, None, &cfg)?);
    let out = EvalOutput {
        scenario_id: scenario.id.clone(),
        pdms: pdms(&sub),
        epdms: epdms(&sub)?,
        subscores: sub,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).map_err(|e| Failure::new(
            EXIT_NUMERIC,
            e.to_string(),
            "eval output"
        ))?
    );
    Ok(())
}

fn cmd_render(
    scenario_path: &Path,
    vocab_path: &Path,
    scores: &Path,
    metric: &str,
    out: &Path,
) -> Result<(), Failure> {
    let scenario = load_scenario(scenario_path)?;
    let vocab = load_vocabulary(vocab_path)?;
    let matrix = load_score_matrix(scores, None)?;
    if matrix.values.len() != vocab.k {
        return Err(Failure::new(
            EXIT_SCHEMA,
            format!(
                "score matrix has {} rows but the vocabulary has k={}",
                matrix.values.len(),
                vocab.k
            ),
            "render",
        ));
    }
    let metric_col = METRIC_NAMES
        .iter()
        .position(|m| m.eq_ignore_ascii_case(metric))
        .ok_or_else(|| {
            Failure::new(
                EXIT_SCHEMA,
                format!("unknown metric `{metric}`; expected one of {METRIC_NAMES:?}"),
                "render",
            )
        })?;
    let svg = render::render_svg(
        &scenario,
        &vocab,
        &matrix,
        metric_col,
        METRIC_NAMES[metric_col],
    );
    let mut outputs = Outputs::default();
    outputs.add(out);
    std::fs::write(out, svg)?;
    outputs.commit();
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Cmd::Gen {
            count,
            seed,
            out,
            mix,
        } => cmd_gen(*count, *seed, out, mix.as_deref()),
        Cmd::Vocab {
            samples,
            k,
            iters,
            seed,
            out,
        } => cmd_vocab(*samples, *k, *iters, *seed, out),
        Cmd::Teach {
            scenarios,
            vocab,
            config,
            out,
            jobs,
        } => cmd_teach(scenarios, vocab, config.as_deref(), out, *jobs),
        Cmd::Train {
            scenarios,
            scores,
            vocab,
            epochs,
            lr,
            batch,
            seed,
            out,
            ablate_extended,
        } => cmd_train(
            scenarios,
            scores,
            vocab,
            *epochs,
            *lr,
            *batch,
            *seed,
            out,
            *ablate_extended,
        ),
        Cmd::Calibrate {
            model,
            scenarios,
            vocab,
            grid,
            out,
        } => cmd_calibrate(model, scenarios, vocab, grid.as_deref(), out),
        Cmd::Benchmark {
            model,
            weights,
            scenarios,
            vocab,
            out,
            jobs,
            compare,
        } => cmd_benchmark(
            model,
            weights,
            scenarios,
            vocab,
            out,
            *jobs,
            compare.as_deref(),
        ),
        Cmd::Eval {
            scenario,
            trajectory,
            vocab,
            config,
        } => cmd_eval(scenario, trajectory, vocab, config.as_deref()),
        Cmd::Render {
            scenario,
            vocab,
            scores,
            metric,
            out,
        } => cmd_render(scenario, vocab, scores, metric, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = serde_json::json!({ "error": f.error, "context": f.context });
            eprintln!("{msg}");
            ExitCode::from(f.code)
        }
    }
}
