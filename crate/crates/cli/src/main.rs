//! fallback-probe: measure LLM fallback behaviors from raw completions.
//!
//! The pipeline is file-staged so expensive generation is decoupled from
//! cheap re-analysis: `generate → label → metrics / stats / report`, plus
//! `scan` for verbatim-recall checks. Every stage reads and writes only the
//! documented JSON/JSONL formats.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fallback_probe::corpus::{ListDataset, PromptVariant};
use fallback_probe::error::{Error, Result};
use fallback_probe::harness::{
    read_transcripts_jsonl, sample_batch, write_transcripts_jsonl, CompletionClient, DecodeConfig,
    FinishReason, Transcript,
};
use fallback_probe::label::{
    label_facts, read_labeled_jsonl, write_labeled_jsonl, LabeledGeneration,
};
use fallback_probe::listparse::parse_list_completion;
use fallback_probe::matching::MatchConfig;
use fallback_probe::metrics::{
    build_ngram_index, diversity_curve, permutation_baseline_with_rng, shift_score, verbatim_scan,
    Direction, FactLabelSeq, NgramIndex, TokenSequence,
};
use fallback_probe::report::{
    aggregate_breakdown, emit, ordering_matrix, EmitFormat, ReportArtifact,
};
use fallback_probe::stats::{ordering_test, BaselinePooling};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "fallback-probe",
    version,
    about = "Measure LLM fallback behaviors (correct / hallucination / repetition) from raw completions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Samples per question (5 for the sampling protocol).
    #[arg(long, default_value_t = 1)]
    samples: u32,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect completions from an OpenAI-compatible endpoint into a JSONL
    /// file, caching every sample.
    Generate {
        #[arg(long)]
        dataset: PathBuf,
        /// standard25 | nocount | colon | idk | icl
        #[arg(long, default_value = "standard25")]
        variant: String,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        model: String,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, default_value = "cache")]
        cache_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Override the in-context-learning prefix (icl variant only).
        #[arg(long)]
        prefix_file: Option<PathBuf>,
    },
    /// Parse transcripts into ordered facts and label each one.
    Label {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.55)]
        f1_threshold: f64,
    },
    /// Per-generation ShiftScore, permutation baseline, and diversity curve.
    Metrics {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// nonincreasing | paper
        #[arg(long, default_value = "nonincreasing")]
        direction: String,
        #[arg(long, default_value_t = 1000)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reference corpus (one document per line) for verbatim spans.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16])]
        window_lengths: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        curve_step: usize,
    },
    /// Mann-Whitney ordering test per model against permutation baselines.
    Stats {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "dataset")]
        dataset_id: String,
        #[arg(long, default_value_t = 1000)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// nonincreasing | paper
        #[arg(long, default_value = "nonincreasing")]
        direction: String,
        /// Pool per-generation baseline means instead of raw scores.
        #[arg(long)]
        baseline_mean: bool,
        /// Use every sample; default keeps only sample_index 0 per question.
        #[arg(long)]
        all_samples: bool,
    },
    /// Aggregate labeled generations into breakdown table and ordering
    /// matrix files.
    Report {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// csv | json | svg
        #[arg(long, default_value = "csv")]
        format: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sliding-window verbatim-recall scan of completions against a corpus.
    Scan {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16])]
        window_lengths: Vec<usize>,
    },
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn open_reader(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn load_variant(name: &str, prefix_file: Option<&Path>) -> Result<PromptVariant> {
    let mut variant = PromptVariant::from_cli_name(name)?;
    if let Some(path) = prefix_file {
        if variant.kind != fallback_probe::corpus::PromptVariantKind::IclPrefix {
            return Err(Error::Config("--prefix-file only applies to the icl variant".into()));
        }
        variant.prefix_text = Some(read_to_string(path)?);
    }
    Ok(variant)
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    dataset: &Path,
    variant_name: &str,
    endpoint: &str,
    model: &str,
    decode_args: &DecodeArgs,
    cache_dir: &Path,
    out: &Path,
    concurrency: usize,
    prefix_file: Option<&Path>,
) -> Result<ExitCode> {
    let ds = ListDataset::load(dataset)?;
    let variant = load_variant(variant_name, prefix_file)?;
    let decode = DecodeConfig {
        temperature: decode_args.temperature,
        max_tokens: decode_args.max_tokens,
        n_samples: decode_args.samples,
        seed: decode_args.seed,
    };
    decode.validate()?;
    let client = CompletionClient::new(endpoint);
    let set =
        sample_batch(&client, &ds.questions, &variant, model, &decode, cache_dir, concurrency)?;
    let mut buf = Vec::new();
    write_transcripts_jsonl(&set.transcripts, &mut buf)?;
    write_file(out, &String::from_utf8(buf).expect("jsonl is utf-8"))?;
    eprintln!(
        "wrote {} transcripts to {} ({} failures)",
        set.transcripts.len(),
        out.display(),
        set.failures.len()
    );
    if !set.failures.is_empty() {
        for f in &set.failures {
            eprintln!("  failed {}#{}: {}", f.question_id, f.sample_index, f.message);
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_label(transcripts: &Path, dataset: &Path, out: &Path, f1_threshold: f64) -> Result<ExitCode> {
    let ds = ListDataset::load(dataset)?;
    let cfg = MatchConfig::with_threshold(f1_threshold)?;
    let ts = read_transcripts_jsonl(open_reader(transcripts)?)?;
    let mut labeled = Vec::with_capacity(ts.len());
    for t in &ts {
        if t.finish_reason == FinishReason::Error {
            log::warn!("skipping errored transcript {}#{}", t.question_id, t.sample_index);
            continue;
        }
        let q = ds.question(&t.question_id).ok_or_else(|| {
            Error::record(&t.question_id, "transcript question id not in dataset")
        })?;
        let parsed = parse_list_completion(&t.completion_text, q.requested_count, t.eos_emitted());
        labeled.push(label_facts(&parsed, &q.gold_answers, &cfg).with_source(
            &t.question_id,
            &t.model_id,
            t.sample_index,
        ));
    }
    let mut buf = Vec::new();
    write_labeled_jsonl(&labeled, &mut buf)?;
    write_file(out, &String::from_utf8(buf).expect("jsonl is utf-8"))?;
    eprintln!("labeled {} generations to {}", labeled.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_corpus_index(path: &Path, window_lengths: &[usize]) -> Result<NgramIndex> {
    let text = read_to_string(path)?;
    let docs: Vec<TokenSequence> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(TokenSequence::words_from_text)
        .collect();
    let lengths: BTreeSet<usize> = window_lengths.iter().copied().collect();
    build_ngram_index(&docs, &lengths, &path.display().to_string())
}

#[allow(clippy::too_many_arguments)]
fn cmd_metrics(
    labeled_path: &Path,
    transcripts: &Path,
    out: &Path,
    direction_name: &str,
    n_perm: usize,
    seed: u64,
    corpus: Option<&Path>,
    window_lengths: &[usize],
    curve_step: usize,
) -> Result<ExitCode> {
    let direction = Direction::from_cli_name(direction_name)?;
    let labeled = read_labeled_jsonl(open_reader(labeled_path)?)?;
    let ts = read_transcripts_jsonl(open_reader(transcripts)?)?;
    let by_key: HashMap<(String, String, u32), &Transcript> = ts
        .iter()
        .map(|t| ((t.question_id.clone(), t.model_id.clone(), t.sample_index), t))
        .collect();
    let index = match corpus {
        Some(path) => Some(load_corpus_index(path, window_lengths)?),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(labeled.len());
    for gen in &labeled {
        let (score, baseline_mean) = if gen.labels.len() >= 2 {
            let seq = FactLabelSeq::from_generation(gen)?;
            let observed = shift_score(&seq, direction)?;
            let perms = permutation_baseline_with_rng(&seq, n_perm, &mut rng, direction)?;
            (Some(observed), Some(perms.iter().sum::<f64>() / perms.len() as f64))
        } else {
            (None, None)
        };
        let key = (gen.question_id.clone(), gen.model_id.clone(), gen.sample_index);
        let transcript = by_key.get(&key).copied().ok_or_else(|| {
            Error::record(
                format!("{}#{}", gen.question_id, gen.sample_index),
                "no matching transcript for labeled generation",
            )
        })?;
        let tokens = match &transcript.token_ids {
            Some(ids) => TokenSequence::Ids(ids.clone()),
            None => TokenSequence::words_from_text(&transcript.completion_text),
        };
        let curve: Vec<(usize, f64)> = if tokens.len() >= curve_step {
            diversity_curve(&tokens, curve_step)?
        } else {
            Vec::new()
        };
        let spans = match &index {
            Some(idx) => verbatim_scan(&tokens, idx),
            None => Vec::new(),
        };
        records.push(json!({
            "question_id": gen.question_id,
            "model_id": gen.model_id,
            "sample_index": gen.sample_index,
            "shift_score": score,
            "baseline_mean": baseline_mean,
            "diversity_curve": curve.iter().map(|(l, s)| json!([l, s])).collect::<Vec<_>>(),
            "verbatim_spans": spans,
        }));
    }
    let mut body = serde_json::to_string_pretty(&records).expect("records serialize");
    body.push('\n');
    write_file(out, &body)?;
    eprintln!("wrote metrics for {} generations to {}", records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_stats(
    labeled_path: &Path,
    out: &Path,
    dataset_id: &str,
    n_perm: usize,
    seed: u64,
    direction_name: &str,
    baseline_mean: bool,
    all_samples: bool,
) -> Result<ExitCode> {
    let direction = Direction::from_cli_name(direction_name)?;
    let pooling =
        if baseline_mean { BaselinePooling::PerGenerationMean } else { BaselinePooling::RawScores };
    let labeled = read_labeled_jsonl(open_reader(labeled_path)?)?;
    let mut by_model: BTreeMap<String, Vec<LabeledGeneration>> = BTreeMap::new();
    for gen in labeled {
        if !all_samples && gen.sample_index != 0 {
            continue;
        }
        by_model.entry(gen.model_id.clone()).or_default().push(gen);
    }
    if by_model.is_empty() {
        return Err(Error::EmptyInput("no labeled generations for stats".into()));
    }
    let mut records = Vec::new();
    for (model_id, gens) in &by_model {
        match ordering_test(gens, n_perm, seed, direction, pooling) {
            Ok(mut report) => {
                report.dataset_id = dataset_id.to_string();
                let mut value = serde_json::to_value(&report).expect("report serializes");
                value["reportable"] = json!(true);
                records.push(value);
            }
            Err(Error::NonReportable { eligible, required }) => {
                records.push(json!({
                    "model_id": model_id,
                    "dataset_id": dataset_id,
                    "n_eligible": eligible,
                    "reportable": false,
                    "reason": format!("fewer than {required} eligible generations"),
                }));
            }
            Err(e) => return Err(e),
        }
    }
    let mut body = serde_json::to_string_pretty(&records).expect("records serialize");
    body.push('\n');
    write_file(out, &body)?;
    eprintln!("wrote {} test reports to {}", records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(
    labeled_path: &Path,
    dataset: &Path,
    format_name: &str,
    out: &Path,
) -> Result<ExitCode> {
    let format = EmitFormat::from_cli_name(format_name)?;
    let ds = ListDataset::load(dataset)?;
    let labeled = read_labeled_jsonl(open_reader(labeled_path)?)?;
    let gold_sizes: BTreeMap<String, usize> =
        ds.questions.iter().map(|q| (q.id.clone(), q.gold_answers.len())).collect();
    let table = aggregate_breakdown(&labeled, &gold_sizes, |g| g.model_id.clone())?;
    let matrix = ordering_matrix(&labeled)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let breakdown_path = out.join(format!("breakdown.{}", format.extension()));
    let matrix_path = out.join(format!("matrix.{}", format.extension()));
    emit(&ReportArtifact::Breakdown(&table), format, &breakdown_path)?;
    emit(&ReportArtifact::Matrix(&matrix), format, &matrix_path)?;
    eprintln!("wrote {} and {}", breakdown_path.display(), matrix_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_scan(
    transcripts: &Path,
    corpus: &Path,
    out: &Path,
    window_lengths: &[usize],
) -> Result<ExitCode> {
    let ts = read_transcripts_jsonl(open_reader(transcripts)?)?;
    let index = load_corpus_index(corpus, window_lengths)?;
    let records: Vec<serde_json::Value> = ts
        .iter()
        .map(|t| {
            let tokens = TokenSequence::words_from_text(&t.completion_text);
            let spans = verbatim_scan(&tokens, &index);
            json!({
                "question_id": t.question_id,
                "model_id": t.model_id,
                "sample_index": t.sample_index,
                "n_tokens": tokens.len(),
                "spans": spans,
            })
        })
        .collect();
    let mut body = serde_json::to_string_pretty(&records).expect("records serialize");
    body.push('\n');
    write_file(out, &body)?;
    eprintln!("scanned {} transcripts against {}", records.len(), corpus.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate {
            dataset,
            variant,
            endpoint,
            model,
            decode,
            cache_dir,
            out,
            concurrency,
            prefix_file,
        } => cmd_generate(
            dataset,
            variant,
            endpoint,
            model,
            decode,
            cache_dir,
            out,
            *concurrency,
            prefix_file.as_deref(),
        ),
        Command::Label { transcripts, dataset, out, f1_threshold } => {
            cmd_label(transcripts, dataset, out, *f1_threshold)
        }
        Command::Metrics {
            labeled,
            transcripts,
            out,
            direction,
            n_perm,
            seed,
            corpus,
            window_lengths,
            curve_step,
        } => cmd_metrics(
            labeled,
            transcripts,
            out,
            direction,
            *n_perm,
            *seed,
            corpus.as_deref(),
            window_lengths,
            *curve_step,
        ),
        Command::Stats {
            labeled,
            out,
            dataset_id,
            n_perm,
            seed,
            direction,
            baseline_mean,
            all_samples,
        } => cmd_stats(
            labeled,
            out,
            dataset_id,
            *n_perm,
            *seed,
            direction,
            *baseline_mean,
            *all_samples,
        ),
        Command::Report { labeled, dataset, format, out } => {
            cmd_report(labeled, dataset, format, out)
        }
        Command::Scan { transcripts, corpus, out, window_lengths } => {
            cmd_scan(transcripts, corpus, out, window_lengths)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io_or_transport() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
