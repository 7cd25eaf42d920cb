//! Operator surface: batch pipeline commands and an interactive chat loop.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use medigraph_core::clients::CacheMode;
use medigraph_core::config::{PipelineConfig, TaskMode};
use medigraph_core::dialogue::{load_dialogues, Dialogue, Role, Utterance};
use medigraph_core::error::{Error, Result};
use medigraph_core::eval::{aggregate, score_dialogue, EvalReport};
use medigraph_core::pipeline::{run_batch, DialogueTrace, Engine};

#[derive(Parser)]
#[command(
    name = "medigraph",
    version,
    about = "Knowledge-graph grounded dialogue engine for medication recommendation"
)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dump intermediate artifacts (graph, prompt bundle, assembled prompt).
    #[arg(long, global = true)]
    trace: bool,

    /// Override the configured cache mode.
    #[arg(long, global = true, value_name = "record|replay|passthrough")]
    cache_mode: Option<String>,

    /// Override the configured task.
    #[arg(long, global = true, value_name = "recommend|interview")]
    task: Option<String>,

    /// Override the configured worker count for batch commands.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run stage-one extraction and dump mentions and slot values.
    Extract {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and dump the patient-centric graph per dialogue.
    BuildGraph {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline and write prediction rows.
    Recommend {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against gold medications from the dialogue file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interactive session: patient turns on stdin, generated doctor turns
    /// on stdout.
    Chat,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(mode) = &cli.cache_mode {
        config.clients.cache_mode = CacheMode::parse(mode)
            .ok_or_else(|| Error::Config(format!("unknown cache mode {mode:?}")))?;
    }
    if let Some(task) = &cli.task {
        config.task =
            TaskMode::parse(task).ok_or_else(|| Error::Config(format!("unknown task {task:?}")))?;
    }
    if let Some(workers) = cli.workers {
        config.output.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Extract { dialogues, out } => cmd_extract(&config, dialogues, out.as_deref()),
        Command::BuildGraph { dialogues, out } => {
            cmd_build_graph(&config, dialogues, out.as_deref())
        }
        Command::Recommend { dialogues, out } => {
            cmd_recommend(&config, dialogues, out.as_deref(), cli.trace)
        }
        Command::Evaluate { predictions, dialogues, out } => {
            cmd_evaluate(&config, predictions, dialogues, out.as_deref())
        }
        Command::Chat => cmd_chat(&config, cli.trace),
    }
}

fn read_dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    load_dialogues(BufReader::new(file))
}

fn output_path(config: &PipelineConfig, out: Option<&Path>, default_name: &str) -> Result<PathBuf> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            Ok(path.to_path_buf())
        }
        None => {
            fs::create_dir_all(&config.output.dir)?;
            Ok(config.output.dir.join(default_name))
        }
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut body = String::new();
    for row in rows {
        body.push_str(&serde_json::to_string(row)?);
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

fn load_engine(config: &PipelineConfig) -> Result<Engine> {
    let engine = Engine::load(config.clone())?;
    let stats = engine.kg_stats();
    eprintln!(
        "knowledge graph: {} entities, {} relations, {} triples ({} dangling synonyms)",
        stats.entities, stats.relations, stats.triples, stats.dangling_synonyms
    );
    Ok(engine)
}

fn cmd_extract(config: &PipelineConfig, dialogues_path: &Path, out: Option<&Path>) -> Result<()> {
    let engine = load_engine(config)?;
    let dialogues = read_dialogues(dialogues_path)?;
    let results = run_batch(&dialogues, config.output.workers, |d| engine.extract_dialogue(d));

    let mut rows = Vec::new();
    let mut concepts = 0usize;
    let mut slot_values = 0usize;
    for result in results {
        let dump = result?;
        concepts += dump.concepts.len();
        slot_values += dump.slot_values.len() + dump.characteristics.len();
        rows.push(dump);
    }
    let path = output_path(config, out, "extraction.jsonl")?;
    write_jsonl(&path, &rows)?;
    eprintln!(
        "extracted {} dialogues: {concepts} concepts, {slot_values} slot values -> {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GraphRow {
    id: String,
    graph: medigraph_core::patient_graph::PatientGraph,
}

fn cmd_build_graph(config: &PipelineConfig, dialogues_path: &Path, out: Option<&Path>) -> Result<()> {
    let engine = load_engine(config)?;
    let dialogues = read_dialogues(dialogues_path)?;
    let results = run_batch(&dialogues, config.output.workers, |d| {
        let dump = engine.extract_dialogue(d)?;
        Ok(engine.build_graph(&dump))
    });

    let mut rows = Vec::new();
    for (dialogue, result) in dialogues.iter().zip(results) {
        rows.push(GraphRow { id: dialogue.id.clone(), graph: result? });
    }
    let path = output_path(config, out, "graphs.jsonl")?;
    write_jsonl(&path, &rows)?;
    eprintln!("built {} graphs -> {}", rows.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum PredictionRow {
    Success {
        id: String,
        response: String,
        medications: Vec<String>,
        warnings: Vec<String>,
    },
    Failure {
        id: String,
        error: String,
    },
}

fn cmd_recommend(
    config: &PipelineConfig,
    dialogues_path: &Path,
    out: Option<&Path>,
    trace: bool,
) -> Result<()> {
    let engine = load_engine(config)?;
    let dialogues = read_dialogues(dialogues_path)?;
    let results =
        run_batch(&dialogues, config.output.workers, |d| engine.recommend_dialogue(d));

    let trace_dir = config.output.dir.join("trace");
    if trace {
        fs::create_dir_all(&trace_dir)?;
    }

    let mut rows = Vec::new();
    let mut failures = 0usize;
    for (dialogue, result) in dialogues.iter().zip(results) {
        match result {
            Ok((result, dialogue_trace)) => {
                if trace {
                    write_trace(&trace_dir, &dialogue_trace)?;
                }
                rows.push(PredictionRow::Success {
                    id: dialogue.id.clone(),
                    response: result.response_text,
                    medications: result.medications.into_iter().collect(),
                    warnings: result.warnings,
                });
            }
            Err(e) => {
                // One poisoned dialogue must not sink the batch.
                failures += 1;
                rows.push(PredictionRow::Failure { id: dialogue.id.clone(), error: e.to_string() });
            }
        }
    }
    let path = output_path(config, out, "predictions.jsonl")?;
    write_jsonl(&path, &rows)?;
    eprintln!(
        "recommended for {} dialogues ({failures} failures) -> {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

fn write_trace(dir: &Path, trace: &DialogueTrace) -> Result<()> {
    let path = dir.join(format!("{}.json", sanitize(&trace.id)));
    fs::write(&path, serde_json::to_string_pretty(trace)?)?;
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_evaluate(
    config: &PipelineConfig,
    predictions_path: &Path,
    dialogues_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let dialogues = read_dialogues(dialogues_path)?;
    let gold_by_id: std::collections::BTreeMap<&str, &BTreeSet<String>> = dialogues
        .iter()
        .filter_map(|d| d.gold_medications.as_ref().map(|g| (d.id.as_str(), g)))
        .collect();

    let file = fs::File::open(predictions_path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", predictions_path.display())))?;
    let mut predicted_by_id: Vec<(String, BTreeSet<String>)> = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("predictions line {}", line_no + 1), e.to_string()))?;
        let id = row
            .get("id")
            .and_then(serde_json::Value::as_str)
            .ok_or_else(|| {
                Error::schema(format!("predictions line {}", line_no + 1), "missing id")
            })?
            .to_string();
        // Failure rows score as an empty prediction set.
        let medications: BTreeSet<String> = row
            .get("medications")
            .and_then(serde_json::Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(serde_json::Value::as_str)
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        predicted_by_id.push((id, medications));
    }

    let predicted_ids: BTreeSet<&str> =
        predicted_by_id.iter().map(|(id, _)| id.as_str()).collect();
    let unmatched_predictions: Vec<&str> = predicted_ids
        .iter()
        .filter(|id| !gold_by_id.contains_key(**id))
        .copied()
        .collect();
    let missing_predictions: Vec<&str> = gold_by_id
        .keys()
        .filter(|id| !predicted_ids.contains(**id))
        .copied()
        .collect();
    if !unmatched_predictions.is_empty() || !missing_predictions.is_empty() {
        return Err(Error::Evaluation(format!(
            "id alignment failed; predictions without gold: [{}]; gold without predictions: [{}]",
            unmatched_predictions.join(", "),
            missing_predictions.join(", ")
        )));
    }

    let mut scores = Vec::new();
    for (id, predicted) in &predicted_by_id {
        let gold = gold_by_id[id.as_str()];
        scores.push(score_dialogue(id.clone(), gold, predicted, config.evaluation.mode)?);
    }
    let report = aggregate(scores)?;
    print_report(&report);

    let path = output_path(config, out, "report.json")?;
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    eprintln!("report -> {}", path.display());
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:<24} {:>8} {:>10} {:>8} {:>8}", "id", "jaccard", "precision", "recall", "f1");
    for score in &report.per_dialogue {
        println!(
            "{:<24} {:>8.4} {:>10.4} {:>8.4} {:>8.4}",
            score.id, score.jaccard, score.precision, score.recall, score.f1
        );
    }
    println!(
        "mean over {} dialogues: jaccard {:.4}, f1 {:.4}",
        report.count, report.mean_jaccard, report.mean_f1
    );
}

fn cmd_chat(config: &PipelineConfig, trace: bool) -> Result<()> {
    let engine = load_engine(config)?;
    fs::create_dir_all(&config.output.dir)?;
    let transcript_path = config.output.dir.join("chat_transcript.jsonl");
    let mut transcript = fs::File::create(&transcript_path)?;

    let stdin = std::io::stdin();
    let mut dialogue = Dialogue {
        id: "chat-session".into(),
        department: None,
        turns: Vec::new(),
        gold_medications: None,
    };

    for line in stdin.lock().lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        dialogue.turns.push(Utterance {
            index: dialogue.turns.len(),
            role: Role::Patient,
            text: text.to_string(),
        });
        writeln!(transcript, "{}", serde_json::json!({"role": "patient", "text": text}))?;

        match engine.recommend_dialogue(&dialogue) {
            Ok((result, dialogue_trace)) => {
                println!("doctor: {}", result.response_text);
                if trace {
                    println!(
                        "[trace] graph version {} | {} nodes | NP {} | PP {}",
                        dialogue_trace.graph.version(),
                        dialogue_trace.graph.concept_nodes().len(),
                        dialogue_trace.bundle.neighborhood.len(),
                        dialogue_trace.bundle.path_prompts().len()
                    );
                    println!("[trace] graph:\n{}", dialogue_trace.graph.linearize());
                }
                writeln!(
                    transcript,
                    "{}",
                    serde_json::json!({"role": "doctor", "text": result.response_text})
                )?;
                dialogue.turns.push(Utterance {
                    index: dialogue.turns.len(),
                    role: Role::Doctor,
                    text: result.response_text,
                });
            }
            Err(e) => {
                // Session survives individual turn failures.
                println!("doctor: (no response: {e})");
                writeln!(transcript, "{}", serde_json::json!({"role": "error", "text": e.to_string()}))?;
            }
        }
    }
    eprintln!("transcript -> {}", transcript_path.display());
    Ok(())
}
