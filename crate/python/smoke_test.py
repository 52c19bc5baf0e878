"""Smoke test for the isca Python bindings: decode, rescore, tune, score."""

import math

import isca


def peaked(utt, path, labels, peak=0.7):
    rest = (1.0 - peak) / (len(labels) - 1)
    rows = [[peak if k == u else rest for k in range(len(labels))] for u in path]
    return isca.PosteriorMatrix(utt, rows)


def main():
    labels = ["<b>", "a", "b", "c"]
    inv = isca.UnitInventory(labels, blank="<b>", kind="graphemic")
    lex = isca.Lexicon(
        [("a", [["a"]]), ("b", [["b"]]), ("ab", [["a", "b"]]), ("ca", [["c", "a"], ["c", "c", "a"]])],
        inv,
    )
    assert len(lex) == 4
    assert lex.pronunciations("CA", inv) == [["c", "a"], ["c", "c", "a"]]
    lm = isca.LanguageModel.train([["A", "B"], ["AB"], ["CA", "A"], ["B", "CA"]], order=2)
    assert isca.LanguageModel.from_arpa(lm.to_arpa()).score(["A", "B"]) == lm.score(["A", "B"])

    post = peaked("u1", [1, 0, 2, 0], labels)
    assert isca.PosteriorMatrix.from_text(post.to_text(), "u1").rows() == post.rows()

    fwd = isca.forward_loglik(post, ["a", "b"], inv)
    vit = isca.viterbi_loglik(post, ["a", "b"], inv)
    assert fwd >= vit and math.isfinite(vit)
    assert isca.ctc_prefix_score(post, ["a"], inv) >= fwd

    # Beam search with no pruning agrees with the exhaustive reference.
    weights = isca.ScoreWeights(alpha=0.8)
    nbest, live = isca.decode(post, lex, inv, lm, weights, beam_width=10**9, score_margin=1e9, nbest=5)
    assert len(live) == post.num_frames
    exact = isca.exhaustive_decode(post, lex, inv, lm, max_words=4, weights=weights, nbest=5)
    got = [(h.words, round(h.acoustic_logp, 9)) for h in nbest.hypotheses]
    want = [(h.words, round(h.acoustic_logp, 9)) for h in exact.hypotheses]
    assert got == want, (got, want)
    assert isca.NBestList.from_text(nbest.to_text()).to_text() == nbest.to_text()

    # Rescoring: with beta = 0 the ranking is unchanged.
    scorer = isca.CtcScorer([peaked("u1", [1, 1, 2, 2], labels, 0.6)], inv)
    same = isca.rescore(nbest, scorer, lex, isca.ScoreWeights(alpha=0.8, beta=0.0))
    assert [h.words for h in same.hypotheses] == [h.words for h in nbest.hypotheses]
    assert all(h.scorer_logp is not None for h in same.hypotheses)
    ranked = isca.rescore(nbest, scorer, lex, isca.ScoreWeights(alpha=0.8, beta=1.0))
    scores = [isca.combine_scores(h, isca.ScoreWeights(alpha=0.8, beta=1.0)) for h in ranked.hypotheses]
    assert scores == sorted(scores, reverse=True)

    table = isca.ScorerTable()
    table.insert("u1", ["c", "a"], -1.0, inv)
    table.insert("u1", ["c", "c", "a"], -2.0, inv)
    logp, n, truncated = isca.pronunciation_sum(lex, ["ca"], table, "u1")
    assert n == 2 and not truncated
    assert abs(logp - math.log(math.exp(-1.0) + math.exp(-2.0))) < 1e-12

    # Tuning never returns weights worse than the initial point.
    dev = [(ranked, ["A", "B"])]
    w, wer, initial, history = isca.tune(dev, init=weights, generations=5, seed=3)
    assert wer <= initial and len(history) == 5
    w0, *_ = isca.tune(dev, init=weights, generations=0)
    assert (w0.alpha, w0.beta) == (weights.alpha, weights.beta)

    s, i, d, n, ops = isca.align_words(["A", "B", "C"], ["A", "X", "C"])
    assert (s, i, d, n) == (1, 0, 0, 3) and ops == ["match", "sub", "match"]
    assert isca.align_words(["A", "B"], ["A"])[4] == ["match", "del"]
    report, total = isca.wer_report([("u1", ["a", "b"])], [("u1", ["a", "b"])])
    assert total == 0.0 and report.splitlines()[-1].startswith("TOTAL")

    try:
        isca.ScoreWeights(alpha=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative alpha accepted")

    print("smoke test passed:", nbest.hypotheses[0])


if __name__ == "__main__":
    main()
