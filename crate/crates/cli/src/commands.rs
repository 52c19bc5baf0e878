use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use isca_core::acoustic::{forward_loglik, score_frames, viterbi_align, viterbi_loglik};
use isca_core::decoder::{beam_decode, build_prefix_tree, word_sequence_graphs, TopologyKind};
use isca_core::eval::{wer_report, EditStats};
use isca_core::io::{
    format_nbest, format_weights, load_lexicon, load_nbest, load_posteriors, load_priors, load_transcripts,
    load_units, write_atomic,
};
use isca_core::isca::{
    load_scorer_table, load_word_score_table, rescore_nbest_with, tune_weights, CtcSequenceScorer, DevUtterance,
    LabelScorer, SumOptions, TuneConfig,
};
use isca_core::lm::read_arpa;
use isca_core::topology::{build_ctc_sequence_graph, build_hmm_sequence_graph, StateGraph};
use isca_core::{Error, Result, UnitInventory, UnitPrior};

use crate::config::{invalid, RunConfig, ScorerKind};

/// Floor applied to priors read from file.
const PRIOR_FLOOR: f64 = 1e-8;

pub struct Context {
    pub config: RunConfig,
    pub verbose: bool,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invariant(format!("cannot start worker pool: {e}")))
}

/// Regular, non-hidden files in `dir`, sorted by name. Hidden files are
/// skipped so half-written temporaries are never read.
fn list_files(dir: &Path, extension: Option<&str>) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if hidden || !path.is_file() {
            continue;
        }
        if extension.is_some_and(|ext| path.extension().is_none_or(|e| e != ext)) {
            continue;
        }
        out.push(path);
    }
    out.sort();
    Ok(out)
}

fn output_dir(config: &RunConfig, key: &str) -> Result<PathBuf> {
    let dir = PathBuf::from(config.required(key)?);
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

/// CTC needs the blank label; HMM inventories use it only if present.
fn inventory(config: &RunConfig) -> Result<UnitInventory> {
    let path = config.existing_path("units")?;
    let blank = config.blank.as_str();
    match config.topology {
        TopologyKind::Ctc => load_units(&path, Some(blank), config.unit_kind),
        TopologyKind::Hmm { .. } => {
            let inv = load_units(&path, None, config.unit_kind)?;
            if inv.index_of(blank).is_some() {
                load_units(&path, Some(blank), config.unit_kind)
            } else {
                Ok(inv)
            }
        }
    }
}

fn priors(config: &RunConfig, inv: &UnitInventory) -> Result<Option<UnitPrior>> {
    match config.optional_path("priors")? {
        Some(p) => Ok(Some(load_priors(&p, inv, PRIOR_FLOOR)?)),
        None if config.prior_scale > 0.0 => Err(invalid("prior_scale > 0 needs a priors file")),
        None => Ok(None),
    }
}

fn ensure_distinct(input: &Path, output: &Path) -> Result<()> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(invalid(format!("output directory {} would overwrite the inputs", output.display())));
    }
    Ok(())
}

fn check_unique_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid(format!("utterance {id:?} appears more than once")));
        }
    }
    Ok(())
}

pub fn decode(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let post_dir = cfg.existing_path("posteriors_dir")?;
    let inv = inventory(cfg)?;
    let lexicon = load_lexicon(&cfg.existing_path("lexicon")?, &inv)?;
    let lm = read_arpa(&cfg.existing_path("lm")?)?;
    let priors = priors(cfg, &inv)?;
    let files = list_files(&post_dir, None)?;
    if files.is_empty() {
        return Err(invalid(format!("no posterior files in {}", post_dir.display())));
    }
    let tree = build_prefix_tree(&lexicon, &inv, cfg.topology)?;
    let out_dir = output_dir(cfg, "output_dir")?;
    ensure_distinct(&post_dir, &out_dir)?;

    let posteriors: Vec<_> = files.iter().map(|p| load_posteriors(p)).collect::<Result<_>>()?;
    check_unique_ids(posteriors.iter().map(|p| p.utterance_id.as_str()))?;
    let decoded: Vec<_> = pool(cfg.jobs)?.install(|| {
        posteriors
            .par_iter()
            .map(|post| {
                let frames = score_frames(post, priors.as_ref(), &inv, &cfg.weights, cfg.prior_scale)?;
                beam_decode(&frames, &tree, &lm, &cfg.decode, &post.utterance_id)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // Every utterance decoded before anything is written.
    for out in &decoded {
        let id = &out.nbest.utterance_id;
        if ctx.verbose {
            let counts: Vec<String> = out.live_tokens.iter().map(usize::to_string).collect();
            eprintln!("{id}: live tokens per frame: {}", counts.join(" "));
        }
        if let Some(w) = &out.warning {
            eprintln!("warning: {id}: {w}");
        }
        write_atomic(&out_dir.join(format!("{id}.nbest")), &format_nbest(&out.nbest))?;
    }
    eprintln!("decoded {} utterances into {}", decoded.len(), out_dir.display());
    Ok(())
}

fn label_scorer(cfg: &RunConfig, inv: &UnitInventory) -> Result<Box<dyn LabelScorer>> {
    Ok(match cfg.scorer {
        ScorerKind::File => Box::new(load_scorer_table(&cfg.existing_path("scorer_table")?, inv)?),
        ScorerKind::CtcPrefix => {
            let dir = cfg.existing_path("posteriors_dir")?;
            let posteriors = list_files(&dir, None)?
                .iter()
                .map(|p| load_posteriors(p))
                .collect::<Result<Vec<_>>>()?;
            Box::new(CtcSequenceScorer::new(posteriors, inv)?)
        }
    })
}

pub fn rescore(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let in_dir = cfg.existing_path("nbest_dir")?;
    let inv = inventory(cfg)?;
    let lexicon = load_lexicon(&cfg.existing_path("lexicon")?, &inv)?;
    let scorer = label_scorer(cfg, &inv)?;
    let aux = cfg.optional_path("aux_table")?.map(|p| load_word_score_table(&p)).transpose()?;
    let files = list_files(&in_dir, Some("nbest"))?;
    if files.is_empty() {
        return Err(invalid(format!("no .nbest files in {}", in_dir.display())));
    }
    let out_dir = output_dir(cfg, "output_dir")?;
    ensure_distinct(&in_dir, &out_dir)?;
    let options = SumOptions { cap: cfg.cap, length_normalize: cfg.length_normalize };

    let results: Vec<(PathBuf, Result<_>)> = pool(cfg.jobs)?.install(|| {
        files
            .par_iter()
            .map(|path| {
                let run = || {
                    let mut list = load_nbest(path)?;
                    if let Some(table) = &aux {
                        table.annotate(&list.utterance_id.clone(), &mut list.hypotheses);
                    }
                    rescore_nbest_with(&list, scorer.as_ref(), &lexicon, &cfg.weights, &options)
                };
                (path.clone(), run())
            })
            .collect()
    });

    let mut flagged = Vec::new();
    for (path, result) in results {
        let name = path.file_name().expect("listed files have names");
        match result {
            Ok(out) => {
                if out.truncated > 0 {
                    eprintln!(
                        "warning: {}: pronunciation sums truncated at {} for {} hypotheses",
                        out.nbest.utterance_id, cfg.cap, out.truncated
                    );
                }
                write_atomic(&out_dir.join(name), &format_nbest(&out.nbest))?;
            }
            Err(e) if e.is_input_error() => {
                eprintln!("error: {}: {e}", path.display());
                flagged.push(path.display().to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if !flagged.is_empty() {
        return Err(invalid(format!("{} utterance(s) not rescored: {}", flagged.len(), flagged.join(", "))));
    }
    Ok(())
}

fn dev_set(cfg: &RunConfig) -> Result<Vec<DevUtterance>> {
    let dir = cfg.existing_path("nbest_dir")?;
    let refs: HashMap<String, Vec<String>> = load_transcripts(&cfg.existing_path("references")?)?.into_iter().collect();
    let lists = list_files(&dir, Some("nbest"))?.iter().map(|p| load_nbest(p)).collect::<Result<Vec<_>>>()?;
    if lists.is_empty() {
        return Err(invalid(format!("empty dev set: no .nbest files in {}", dir.display())));
    }
    check_unique_ids(lists.iter().map(|l| l.utterance_id.as_str()))?;
    lists
        .into_iter()
        .map(|nbest| {
            let reference = refs
                .get(&nbest.utterance_id)
                .cloned()
                .ok_or_else(|| invalid(format!("utterance {:?} has no reference", nbest.utterance_id)))?;
            Ok(DevUtterance { nbest, reference })
        })
        .collect()
}

pub fn tune(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let output = PathBuf::from(cfg.required("output")?);
    let dev = dev_set(cfg)?;
    let tune_cfg = TuneConfig {
        population: cfg.population,
        generations: cfg.generations,
        seed: cfg.seed,
        initial_sigma: cfg.sigma,
        tune_insertion_penalty: cfg.tune_insertion_penalty,
        tune_aux_scale: cfg.tune_aux_scale,
    };
    let result = pool(cfg.jobs)?.install(|| tune_weights(&dev, cfg.weights, &tune_cfg))?;
    println!("initial WER {:.6}", result.initial_wer);
    for g in &result.history {
        println!(
            "generation {} best WER {:.6} generation WER {:.6} sigma {:.6}",
            g.generation, g.best_wer, g.generation_wer, g.sigma
        );
    }
    println!("final WER {:.6}", result.wer);
    write_atomic(&output, &format_weights(&result.weights))
}

pub fn wer(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let references = load_transcripts(&cfg.existing_path("references")?)?;
    let hypotheses = match (cfg.get("hypotheses"), cfg.get("nbest_dir")) {
        (Some(_), _) => load_transcripts(&cfg.existing_path("hypotheses")?)?,
        (None, Some(_)) => {
            let dir = cfg.existing_path("nbest_dir")?;
            let lists = list_files(&dir, Some("nbest"))?.iter().map(|p| load_nbest(p)).collect::<Result<Vec<_>>>()?;
            check_unique_ids(lists.iter().map(|l| l.utterance_id.as_str()))?;
            lists
                .into_iter()
                .map(|l| {
                    let words = l.best().map(|h| h.words.clone()).unwrap_or_default();
                    (l.utterance_id, words)
                })
                .collect()
        }
        (None, None) => return Err(invalid("wer needs hypotheses or nbest_dir")),
    };
    let (report, _): (String, EditStats) = wer_report(&references, &hypotheses)?;
    print!("{report}");
    if let Some(out) = cfg.get("output") {
        write_atomic(Path::new(out), &report)?;
    }
    Ok(())
}

pub fn score(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let inv = inventory(cfg)?;
    let post = load_posteriors(&cfg.existing_path("posteriors")?)?;
    let priors = priors(cfg, &inv)?;
    let frames = score_frames(&post, priors.as_ref(), &inv, &cfg.weights, cfg.prior_scale)?;

    let graphs: Vec<(String, StateGraph)> = match (cfg.get("labels"), cfg.get("words")) {
        (Some(labels), None) => {
            let labels: Vec<&str> = labels.split_whitespace().collect();
            let units = inv.resolve(&labels)?;
            let graph = match cfg.topology {
                TopologyKind::Ctc => build_ctc_sequence_graph(&units, &inv)?,
                TopologyKind::Hmm { states_per_unit } => build_hmm_sequence_graph(&units, states_per_unit)?,
            };
            vec![(labels.join(" "), graph)]
        }
        (None, Some(words)) => {
            let lexicon = load_lexicon(&cfg.existing_path("lexicon")?, &inv)?;
            let words: Vec<String> = words.split_whitespace().map(str::to_uppercase).collect();
            let graphs = word_sequence_graphs(&words, &lexicon, &inv, cfg.topology)?;
            graphs
                .into_iter()
                .enumerate()
                .map(|(i, g)| (format!("{} #{}", words.join(" "), i + 1), g))
                .collect()
        }
        _ => return Err(invalid("score needs exactly one of labels or words")),
    };
    if graphs.is_empty() {
        return Err(invalid("no graph to score"));
    }

    let mut out = String::new();
    for (name, graph) in &graphs {
        let fwd = forward_loglik(graph, &frames)?;
        let vit = viterbi_loglik(graph, &frames)?;
        let _ = writeln!(out, "{name}\tforward {fwd}\tviterbi {vit}");
        if vit.is_finite() {
            let align = viterbi_align(graph, &frames, inv.blank())?;
            let path: Vec<&str> = align
                .states
                .iter()
                .map(|&s| graph.states()[s].emission.map_or("<eps>", |u| inv.label(u)))
                .collect();
            let _ = writeln!(out, "{name}\talignment {}", path.join(" "));
        }
    }
    print!("{out}");
    if let Some(dump) = cfg.get("dump_graph") {
        let mut text = String::new();
        for (name, graph) in &graphs {
            if graphs.len() > 1 {
                let _ = writeln!(text, "# {name}");
            }
            text.push_str(&graph.dump(Some(&inv)));
        }
        write_atomic(Path::new(dump), &text)?;
    }
    Ok(())
}
