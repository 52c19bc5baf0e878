//! `isca`: decode, rescore, tune and evaluate from the command line.
//!
//! Settings come from an optional `key=value` file (`--config`), then from
//! per-key flags, then from repeated `--set key=value`. Exit status is 0 on
//! success, 1 for bad input and 2 when an internal invariant fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Context;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "isca", version, about = "Source-channel decoding with label-synchronous rescoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file of `key=value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Print per-frame search statistics to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Command {
    /// Beam-search every posterior file into an n-best file.
    Decode,
    /// Fill the scorer column of n-best lists and re-rank them.
    Rescore,
    /// Tune interpolation weights against dev-set WER.
    Tune,
    /// Word error rate report against references.
    Wer,
    /// Forward and Viterbi scores of one label or word sequence.
    Score,
}

/// One flag per configuration key; the field name is the key.
#[derive(Args, Default)]
struct Settings {
    #[arg(long, global = true)]
    posteriors_dir: Option<String>,
    /// Single posterior file (score).
    #[arg(long, global = true)]
    posteriors: Option<String>,
    #[arg(long, global = true)]
    units: Option<String>,
    #[arg(long, global = true)]
    blank: Option<String>,
    /// phonetic or graphemic.
    #[arg(long, global = true)]
    unit_kind: Option<String>,
    #[arg(long, global = true)]
    lexicon: Option<String>,
    /// ARPA language model.
    #[arg(long, global = true)]
    lm: Option<String>,
    #[arg(long, global = true)]
    priors: Option<String>,
    /// file or ctc-prefix.
    #[arg(long, global = true)]
    scorer: Option<String>,
    #[arg(long, global = true)]
    scorer_table: Option<String>,
    /// Word-level auxiliary score table.
    #[arg(long, global = true)]
    aux_table: Option<String>,
    #[arg(long, global = true)]
    references: Option<String>,
    /// Transcript file of hypotheses (wer).
    #[arg(long, global = true)]
    hypotheses: Option<String>,
    #[arg(long, global = true)]
    nbest_dir: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<String>,
    /// Output file (tune weights, wer report).
    #[arg(long, global = true)]
    output: Option<String>,
    /// Initial weights file.
    #[arg(long, global = true)]
    weights: Option<String>,
    /// Write the scored graph as `from to logp label` lines (score).
    #[arg(long, global = true)]
    dump_graph: Option<String>,
    /// Space-separated words to score.
    #[arg(long, global = true)]
    words: Option<String>,
    /// Space-separated unit labels to score.
    #[arg(long, global = true)]
    labels: Option<String>,
    /// ctc, hmm or hmm:N.
    #[arg(long, global = true)]
    topology: Option<String>,
    #[arg(long, global = true)]
    beam_width: Option<String>,
    #[arg(long, global = true)]
    score_margin: Option<String>,
    #[arg(long, global = true)]
    nbest: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    insertion_penalty: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    blank_penalty: Option<String>,
    #[arg(long, global = true)]
    aux_scale: Option<String>,
    #[arg(long, global = true)]
    prior_scale: Option<String>,
    #[arg(long, global = true)]
    population: Option<String>,
    #[arg(long, global = true)]
    generations: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true)]
    tune_insertion_penalty: Option<String>,
    #[arg(long, global = true)]
    tune_aux_scale: Option<String>,
    #[arg(long, global = true)]
    length_normalize: Option<String>,
    /// Maximum pronunciation combinations summed per hypothesis.
    #[arg(long, global = true)]
    cap: Option<String>,
    /// Worker threads for utterance-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<String>,
}

impl Settings {
    fn pairs(self) -> Vec<(String, String)> {
        let fields = [
            ("posteriors_dir", self.posteriors_dir),
            ("posteriors", self.posteriors),
            ("units", self.units),
            ("blank", self.blank),
            ("unit_kind", self.unit_kind),
            ("lexicon", self.lexicon),
            ("lm", self.lm),
            ("priors", self.priors),
            ("scorer", self.scorer),
            ("scorer_table", self.scorer_table),
            ("aux_table", self.aux_table),
            ("references", self.references),
            ("hypotheses", self.hypotheses),
            ("nbest_dir", self.nbest_dir),
            ("output_dir", self.output_dir),
            ("output", self.output),
            ("weights", self.weights),
            ("dump_graph", self.dump_graph),
            ("words", self.words),
            ("labels", self.labels),
            ("topology", self.topology),
            ("beam_width", self.beam_width),
            ("score_margin", self.score_margin),
            ("nbest", self.nbest),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("insertion_penalty", self.insertion_penalty),
            ("blank_penalty", self.blank_penalty),
            ("aux_scale", self.aux_scale),
            ("prior_scale", self.prior_scale),
            ("population", self.population),
            ("generations", self.generations),
            ("seed", self.seed),
            ("sigma", self.sigma),
            ("tune_insertion_penalty", self.tune_insertion_penalty),
            ("tune_aux_scale", self.tune_aux_scale),
            ("length_normalize", self.length_normalize),
            ("cap", self.cap),
            ("jobs", self.jobs),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect()
    }
}

fn run(cli: Cli) -> isca_core::Result<()> {
    let mut overrides = cli.settings.pairs();
    for item in &cli.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| config::invalid(format!("--set expects KEY=VALUE, got {item:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let ctx = Context {
        config: RunConfig::resolve(cli.config.as_deref(), &overrides)?,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Decode => commands::decode(&ctx),
        Command::Rescore => commands::rescore(&ctx),
        Command::Tune => commands::tune(&ctx),
        Command::Wer => commands::wer(&ctx),
        Command::Score => commands::score(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
        // The panic message has already been printed by the default hook.
        Err(_) => ExitCode::from(2),
    }
}
