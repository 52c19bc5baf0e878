//! The full pipeline through the on-disk formats: files written, reloaded,
//! decoded, rescored, tuned and scored.

mod common;

use isca_core::acoustic::score_frames;
use isca_core::decoder::{beam_decode, build_prefix_tree, DecodeConfig, TopologyKind};
use isca_core::eval::corpus_wer;
use isca_core::io::{
    format_lexicon, load_lexicon, load_nbest, load_posteriors, load_transcripts, load_units, load_weights,
    format_transcripts, write_atomic, write_nbest, write_posteriors,
};
use isca_core::isca::{
    dev_wer, format_scorer_table, load_scorer_table, rescore_nbest, tune_weights, CtcSequenceScorer, DevUtterance,
    TuneConfig,
};
use isca_core::lm::{read_arpa, train_ngram, write_arpa};
use isca_core::{Lexicon, PosteriorMatrix, ScoreWeights, UnitInventory, UnitKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 5] = ["AB", "BA", "CAB", "C", "BC"];

/// Noisy CTC-like posteriors for `words`: each unit held for 1-2 frames,
/// separated by blanks.
fn render(rng: &mut ChaCha8Rng, id: &str, words: &[&str], inv: &UnitInventory, peak: f64) -> PosteriorMatrix {
    let mut path = vec![0];
    for w in words {
        for c in w.to_lowercase().chars() {
            let u = inv.index_of(&c.to_string()).unwrap();
            for _ in 0..rng.random_range(1..=2) {
                path.push(u);
            }
            path.push(0);
        }
    }
    let n = inv.len();
    let rows = path
        .iter()
        .map(|&u| {
            let mut row: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let rest: f64 = row.iter().enumerate().filter(|(k, _)| *k != u).map(|(_, v)| v).sum();
            for (k, v) in row.iter_mut().enumerate() {
                *v = if k == u { peak } else { *v * (1.0 - peak) / rest };
            }
            row
        })
        .collect();
    PosteriorMatrix::new(id, rows).unwrap()
}

#[test]
fn pipeline_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    write_atomic(&root.join("units.txt"), "<b>\na\nb\nc\n").unwrap();
    let inv = load_units(&root.join("units.txt"), Some("<b>"), UnitKind::Graphemic).unwrap();
    write_atomic(&root.join("lexicon.txt"), &format_lexicon(&Lexicon::graphemic(&WORDS, &inv).unwrap(), &inv)).unwrap();
    let lexicon = load_lexicon(&root.join("lexicon.txt"), &inv).unwrap();
    assert_eq!(lexicon.len(), WORDS.len());

    let corpus: Vec<Vec<&str>> = (0..60)
        .map(|_| (0..rng.random_range(1..=3)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect())
        .collect();
    write_arpa(&train_ngram(&corpus, 2, 0.5).unwrap(), &root.join("lm.arpa")).unwrap();
    let lm = read_arpa(&root.join("lm.arpa")).unwrap();

    let truth: Vec<(String, Vec<String>)> = corpus[..8]
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("utt{i}"), s.iter().map(|w| w.to_string()).collect()))
        .collect();
    write_atomic(&root.join("refs.txt"), &format_transcripts(&truth)).unwrap();
    let refs = load_transcripts(&root.join("refs.txt")).unwrap();
    assert_eq!(refs, truth);

    let tree = build_prefix_tree(&lexicon, &inv, TopologyKind::Ctc).unwrap();
    let config = DecodeConfig { nbest: 10, ..Default::default() };
    let mut scorer_posts = Vec::new();
    let mut dev = Vec::new();
    for (id, words) in &refs {
        let w: Vec<&str> = words.iter().map(String::as_str).collect();
        let path = root.join(format!("{id}.post"));
        write_posteriors(&render(&mut rng, id, &w, &inv, 0.55), &path).unwrap();
        let post = load_posteriors(&path).unwrap();
        assert_eq!(&post.utterance_id, id);
        scorer_posts.push(render(&mut rng, id, &w, &inv, 0.55));

        let frames = score_frames(&post, None, &inv, &config.weights, 0.0).unwrap();
        let out = beam_decode(&frames, &tree, &lm, &config, id).unwrap();
        assert!(out.warning.is_none());
        let nbest_path = root.join(format!("{id}.nbest"));
        write_nbest(&out.nbest, &nbest_path).unwrap();
        assert_eq!(load_nbest(&nbest_path).unwrap(), out.nbest);
        dev.push(out.nbest);
    }

    // The scorer goes through its table format as well.
    let ctc = CtcSequenceScorer::new(scorer_posts, &inv).unwrap();
    let mut table = isca_core::isca::FileScorerTable::new();
    for list in &dev {
        for h in &list.hypotheses {
            let combos = isca_core::decoder::word_sequence_graphs(&h.words, &lexicon, &inv, TopologyKind::Ctc).unwrap();
            assert_eq!(combos.len(), 1, "graphemic words have one spelling");
            let units: Vec<usize> = h.words.iter().flat_map(|w| lexicon.pronunciations(w).unwrap()[0].clone()).collect();
            let score = isca_core::isca::LabelScorer::score(&ctc, &list.utterance_id, &units);
            if score.is_finite() {
                let _ = table.insert(&list.utterance_id, units, score);
            }
        }
    }
    write_atomic(&root.join("scorer.tsv"), &format_scorer_table(&table, &inv)).unwrap();
    let table = load_scorer_table(&root.join("scorer.tsv"), &inv).unwrap();

    let init = ScoreWeights { scorer_scale: 0.5, ..Default::default() };
    let dev: Vec<DevUtterance> = dev
        .iter()
        .zip(&refs)
        .map(|(list, (_, reference))| DevUtterance {
            nbest: rescore_nbest(list, &table, &lexicon, &init, 64).unwrap(),
            reference: reference.clone(),
        })
        .collect();
    let tuned = tune_weights(&dev, init, &TuneConfig { generations: 15, seed: 2, ..Default::default() }).unwrap();
    assert!(tuned.wer <= tuned.initial_wer);
    assert!((dev_wer(&dev, &tuned.weights).unwrap().wer() - tuned.wer).abs() < 1e-12);

    write_atomic(&root.join("weights.txt"), &isca_core::io::format_weights(&tuned.weights)).unwrap();
    assert_eq!(load_weights(&root.join("weights.txt")).unwrap(), tuned.weights);

    // Re-rank with the tuned weights and score the 1-best against the truth.
    let pairs: Vec<(Vec<String>, Vec<String>)> = dev
        .iter()
        .map(|d| {
            let mut hyps = d.nbest.hypotheses.clone();
            isca_core::isca::rerank(&mut hyps, &tuned.weights);
            (d.reference.clone(), hyps[0].words.clone())
        })
        .collect();
    let stats = corpus_wer(&pairs).unwrap();
    assert!((stats.wer() - tuned.wer).abs() < 1e-12);
    let brute: usize = pairs.iter().map(|(r, h)| common::edit_distance(r, h)).sum();
    assert_eq!(stats.errors(), brute);
}
