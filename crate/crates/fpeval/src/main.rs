use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use fpeval::manifest::{EvalKind, LoadedManifest};
use fpeval::{formats, matcher, report, runs, synth};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_EXTERNAL_FAILURES: u8 = 3;

/// External systems may fail on individual pairs; beyond this fraction the
/// run is considered unusable.
const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Parser)]
#[command(
    name = "fpeval",
    version,
    about = "White-box and black-box evaluation of fingerprint recognition modules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EvalArgs {
    /// Run manifest (JSON); record paths resolve relative to it.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the JSON report and CSV tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the manifest's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Reader quality metrics, condition t-tests, and uncertainty.
    ReaderEval(EvalArgs),
    /// External-extractor detection/localization statistics and uncertainty.
    ExtractorEval(EvalArgs),
    /// FNMR under occlusion/rotation perturbation arms, plus uncertainty.
    MatcherEval(EvalArgs),
    /// End-to-end FNMR per adverse capture condition.
    BlackboxEval(EvalArgs),
    /// Generate a seeded synthetic template dataset plus its manifest.
    Perturb {
        /// Directory to create the dataset in.
        #[arg(long)]
        out: PathBuf,
        /// Number of synthetic fingers.
        #[arg(long, default_value_t = 20)]
        fingers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a single template pair with the baseline matcher.
    Match {
        template_a: PathBuf,
        template_b: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match cli.command {
        Command::ReaderEval(args) => run_eval(args, EvalKind::Reader),
        Command::ExtractorEval(args) => run_eval(args, EvalKind::Extractor),
        Command::MatcherEval(args) => run_eval(args, EvalKind::Matcher),
        Command::BlackboxEval(args) => run_eval(args, EvalKind::Blackbox),
        Command::Perturb { out, fingers, seed } => generate_dataset(&out, fingers, seed),
        Command::Match {
            template_a,
            template_b,
        } => match_pair(&template_a, &template_b),
    }
}

fn data_error(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_DATA)
}

fn run_eval(args: EvalArgs, kind: EvalKind) -> ExitCode {
    if let Some(jobs) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not set worker count: {e}");
        }
    }
    let mut loaded = match LoadedManifest::load(&args.manifest) {
        Ok(l) => l,
        Err(e) => return data_error(e),
    };
    if loaded.manifest.kind != kind {
        return data_error(format!(
            "manifest kind {:?} does not match this subcommand",
            loaded.manifest.kind
        ));
    }
    if let Some(seed) = args.seed {
        loaded.manifest.seed = seed;
    }

    let outcome = match kind {
        EvalKind::Reader => runs::run_reader_eval(&loaded).map(|(r, tables)| {
            let summary = format!(
                "processed {} records ({} excluded)",
                r.processed_records, r.excluded_records
            );
            (serde_json::to_value(&r).expect("serializable"), tables, 0.0, summary)
        }),
        EvalKind::Extractor => runs::run_extractor_eval(&loaded).map(|(r, tables)| {
            let summary = format!(
                "processed {} records ({} excluded) across {} extractor(s)",
                r.processed_records,
                r.excluded_records,
                r.per_system.len()
            );
            let rate = r.max_failure_rate();
            (serde_json::to_value(&r).expect("serializable"), tables, rate, summary)
        }),
        EvalKind::Matcher => runs::run_matcher_eval(&loaded).map(|(r, tables)| {
            let summary = format!(
                "processed {} records across {} system(s)",
                r.processed_records,
                r.per_system.len()
            );
            let rate = r.max_failure_rate();
            (serde_json::to_value(&r).expect("serializable"), tables, rate, summary)
        }),
        EvalKind::Blackbox => runs::run_blackbox_eval(&loaded).map(|(r, tables)| {
            let summary = format!(
                "processed {} records ({} excluded, {} fingers without normal impression)",
                r.processed_records, r.excluded_records, r.excluded_fingers
            );
            let rate = r.max_failure_rate();
            (serde_json::to_value(&r).expect("serializable"), tables, rate, summary)
        }),
    };

    let (json, tables, failure_rate, summary) = match outcome {
        Ok(v) => v,
        Err(e) => return data_error(e),
    };
    if let Err(e) = report::write_outputs(&args.out, "report.json", &json, &tables) {
        return data_error(e);
    }
    println!("{summary}; reports written to {}", args.out.display());
    if failure_rate > MAX_FAILURE_RATE {
        eprintln!(
            "error: external system failure rate {:.1}% exceeds {:.0}%",
            failure_rate * 100.0,
            MAX_FAILURE_RATE * 100.0
        );
        return ExitCode::from(EXIT_EXTERNAL_FAILURES);
    }
    ExitCode::SUCCESS
}

fn generate_dataset(out: &Path, fingers: usize, seed: u64) -> ExitCode {
    let manifest = match synth::write_blackbox_dataset(out, fingers, seed) {
        Ok(m) => m,
        Err(e) => return data_error(e),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    if let Err(e) = std::fs::write(&path, text + "\n") {
        return data_error(e);
    }
    println!(
        "wrote {} records for {} fingers to {}",
        manifest.records.len(),
        fingers,
        out.display()
    );
    ExitCode::SUCCESS
}

fn match_pair(a: &Path, b: &Path) -> ExitCode {
    let set_a = match formats::load_template(a) {
        Ok(s) => s,
        Err(e) => return data_error(e),
    };
    let set_b = match formats::load_template(b) {
        Ok(s) => s,
        Err(e) => return data_error(e),
    };
    let score = matcher::match_sets(&set_a, &set_b);
    println!(
        "score {:.6} (pairs {}, rotation {:.4} rad, translation ({:.2}, {:.2}))",
        score.value,
        score.matched_pairs,
        score.rotation,
        score.translation.0,
        score.translation.1
    );
    ExitCode::SUCCESS
}
