"""Tests for the evaluation metric suite.

Each metric is checked against either hand arithmetic, an exhaustive
brute-force recomputation, or an external reference (scipy / sklearn).
"""

import itertools
import math
from collections import Counter

import numpy as np
import pytest
import scipy.special
import scipy.stats
import sklearn.metrics

from unlearnkit import alphabet
from unlearnkit.data import EvalExample
from unlearnkit.metrics import (bleu, csv_header, compute_report,
                                forget_quality, geometric_mean_prob,
                                kolmogorov_sf, ks_test, log_truth_ratio,
                                mc_accuracy, mia_auc, min_k_score,
                                MetricsReport, perplexity, rouge_l_recall,
                                truth_ratio)
from unlearnkit.model import ModelConfig, TinyLM, param_count

UNIFORM6 = TinyLM(ModelConfig(vocab_size=6, context_window=16, arch="linear"),
                  np.zeros(36))


def full_vocab_linear(fill_columns: dict) -> TinyLM:
    """Linear model over the full text alphabet with chosen logit columns."""
    config = ModelConfig(vocab_size=alphabet.VOCAB_SIZE, context_window=32,
                         arch="linear")
    table = np.zeros((alphabet.VOCAB_SIZE, alphabet.VOCAB_SIZE))
    for token, logit in fill_columns.items():
        table[:, token] = logit
    return TinyLM(config, table.reshape(-1))


def example(answer: str, perturbed, prompt: str = "Q") -> EvalExample:
    return EvalExample(id="x", split="forget", author="A", prompt=prompt,
                       answer=answer, perturbed_answers=tuple(perturbed))


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def test_kolmogorov_sf_matches_scipy():
    for x in (0.01, 0.05, 0.2, 0.4, 0.6, 0.8, 0.99, 1.0, 1.2, 1.7, 2.5, 4.0):
        ours = kolmogorov_sf(x)
        ref = float(scipy.special.kolmogorov(x))
        assert ours == pytest.approx(ref, rel=1e-13, abs=1e-300), f"x={x}"
    assert kolmogorov_sf(0.0) == 1.0
    assert kolmogorov_sf(-3.0) == 1.0
    assert kolmogorov_sf(50.0) == 0.0


def test_ks_statistic_matches_scipy_exactly():
    rng = np.random.default_rng(31)
    for trial in range(25):
        n, m = rng.integers(2, 60, size=2)
        a = rng.normal(size=n)
        b = rng.normal(loc=rng.uniform(-1, 1), size=m)
        if trial % 3 == 0:  # force ties within and across samples
            a, b = np.round(a, 1), np.round(b, 1)
        d, p = ks_test(a, b)
        ref = scipy.stats.ks_2samp(a, b, method="asymp")
        assert d == ref.statistic
        # p is the plain asymptotic survival function at sqrt(nm/(n+m)) d
        en = math.sqrt(n * m / (n + m))
        assert p == pytest.approx(float(scipy.special.kolmogorov(en * d)),
                                  rel=1e-12, abs=1e-300)


def test_ks_degenerate_samples():
    d, p = ks_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert d == 0.0 and p == 1.0
    d, p = ks_test(np.zeros(40), np.ones(40))
    assert d == 1.0 and p < 1e-6
    with pytest.raises(ValueError, match="non-empty"):
        ks_test([], [1.0])


# ---------------------------------------------------------------------------
# truth ratios, accuracy


def test_geometric_mean_prob_uniform():
    prob = geometric_mean_prob(UNIFORM6, [0, 1], [2, 3, 4])
    assert prob == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_truth_ratio_uniform_model_is_one():
    model = full_vocab_linear({})
    ex = example("abc", ("de", "fgh", "ij"))
    # Every answer scores 1/V per token, so the length-normalized ratio is 1
    # no matter how the answer lengths differ.
    assert log_truth_ratio(model, ex) == pytest.approx(0.0, abs=1e-12)
    assert truth_ratio(model, ex) == pytest.approx(1.0, rel=1e-12)


def test_truth_ratio_prefers_boosted_answer():
    model = full_vocab_linear({alphabet.encode("a")[0]: 5.0})
    good = example("aa", ("bb",))
    assert truth_ratio(model, good) > 10.0
    bad = example("bb", ("aa",))
    assert truth_ratio(model, bad) < 0.1
    assert log_truth_ratio(model, good) == pytest.approx(
        -log_truth_ratio(model, bad), rel=1e-9)


def test_truth_ratio_survives_extreme_models():
    # Logit gaps of 1600 per token overflow exp() long before the log
    # ratio does; the log form must stay finite and the ratio saturate.
    a_id, b_id = alphabet.encode("a")[0], alphabet.encode("b")[0]
    model = full_vocab_linear({a_id: 800.0, b_id: -800.0})
    boosted = example("aa", ("bb",))
    lr = log_truth_ratio(model, boosted)
    assert math.isfinite(lr) and lr > 709.0
    assert truth_ratio(model, boosted) == math.exp(709.0)
    crushed = example("bb", ("aa",))
    assert math.isfinite(log_truth_ratio(model, crushed))
    assert truth_ratio(model, crushed) == 0.0


def test_truth_ratio_mean_of_perturbed():
    # With one strongly wrong distractor and one neutral one, the mean
    # over distractors is dominated by the better (neutral) distractor.
    a_id = alphabet.encode("a")[0]
    model = full_vocab_linear({a_id: 3.0})
    one = example("cc", ("bb",))
    ratio_vs_neutral = truth_ratio(model, one)
    mixed = example("cc", ("bb", "aa"))
    # "aa" is boosted, so the mean distractor mass rises and the ratio drops.
    assert truth_ratio(model, mixed) < ratio_vs_neutral


def test_truth_ratio_on_memorized_model(memorized, tiny_corpus):
    model, _ = memorized
    ratios = [truth_ratio(model, ex) for ex in tiny_corpus.training_examples()]
    assert min(ratios) > 1.0
    assert float(np.median(ratios)) > 2.0


def test_mc_accuracy_ties_count_as_wrong():
    # The uniform model ties the correct answer with every distractor.
    exs = [example("ab", ("cd", "ef")), example("gh", ("ij",))]
    assert mc_accuracy(full_vocab_linear({}), exs) == 0.0


def test_mc_accuracy_hand_split():
    a_id = alphabet.encode("a")[0]
    model = full_vocab_linear({a_id: 5.0})
    wins = example("aa", ("bb",))
    loses = example("bb", ("aa",))
    assert mc_accuracy(model, [wins]) == 1.0
    assert mc_accuracy(model, [loses]) == 0.0
    assert mc_accuracy(model, [wins, loses]) == 0.5
    with pytest.raises(ValueError, match="non-empty"):
        mc_accuracy(model, [])


def test_mc_accuracy_memorized(memorized, tiny_corpus):
    model, _ = memorized
    assert mc_accuracy(model, tiny_corpus.training_examples()) >= 0.9


def test_forget_quality_memorized_forget_looks_like_retain(memorized,
                                                           tiny_corpus):
    model, _ = memorized
    fq = forget_quality(model, tiny_corpus.forget, tiny_corpus.retain)
    assert 0.0 <= fq <= 0.6  # both splits equally memorized: no separation
    with pytest.raises(ValueError, match="non-empty"):
        forget_quality(model, [], tiny_corpus.retain)


# ---------------------------------------------------------------------------
# membership inference


class FakeLogprobModel:
    """Stands in for TinyLM where only per_token_logprobs matters."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def per_token_logprobs(self, x, y):
        return self.values


def test_min_k_hand_case():
    model = FakeLogprobModel([-1.0, -3.0, -2.0])
    # floor(34% of 3) = 1 token: the single worst logprob.
    assert min_k_score(model, [], [0, 0, 0], k_percent=34.0) == -3.0
    # floor(67% of 3) = 2 tokens: mean of the two worst.
    assert min_k_score(model, [], [0, 0, 0], k_percent=67.0) == -2.5
    # k = 100 averages everything.
    assert min_k_score(model, [], [0, 0, 0], k_percent=100.0) == -2.0
    # tiny k still keeps at least one token
    assert min_k_score(model, [], [0, 0, 0], k_percent=1.0) == -3.0


def test_min_k_validation():
    model = FakeLogprobModel([-1.0])
    with pytest.raises(ValueError, match="k_percent"):
        min_k_score(model, [], [0], k_percent=0.0)
    with pytest.raises(ValueError, match="k_percent"):
        min_k_score(model, [], [0], k_percent=100.5)


def test_min_k_monotone_in_k():
    rng = np.random.default_rng(32)
    for _ in range(10):
        model = FakeLogprobModel(rng.normal(size=rng.integers(1, 12)))
        scores = [min_k_score(model, [], [0], k_percent=k)
                  for k in (5.0, 25.0, 50.0, 75.0, 100.0)]
        for low, high in zip(scores, scores[1:]):
            assert high >= low - 1e-12


def test_mia_auc_hand_cases():
    assert mia_auc([2.0, 1.0], [0.0]) == 1.0
    assert mia_auc([0.0], [2.0, 1.0]) == 0.0
    assert mia_auc([1.0], [1.0]) == 0.5
    assert mia_auc([1.0, 0.0], [1.0, 0.0]) == 0.5
    with pytest.raises(ValueError, match="non-empty"):
        mia_auc([], [1.0])


def test_mia_auc_matches_double_loop_and_sklearn():
    rng = np.random.default_rng(33)
    for trial in range(20):
        members = rng.normal(loc=0.5, size=rng.integers(2, 15))
        nonmembers = rng.normal(size=rng.integers(2, 15))
        if trial % 2 == 0:  # make exact ties common
            members, nonmembers = np.round(members, 0), np.round(nonmembers, 0)
        ours = mia_auc(members, nonmembers)
        wins = 0.0
        for m in members:
            for n in nonmembers:
                wins += 1.0 if m > n else (0.5 if m == n else 0.0)
        assert ours == pytest.approx(wins / (len(members) * len(nonmembers)),
                                     rel=1e-14)
        labels = [1] * len(members) + [0] * len(nonmembers)
        scores = np.concatenate([members, nonmembers])
        assert ours == pytest.approx(
            float(sklearn.metrics.roc_auc_score(labels, scores)), rel=1e-12)


# ---------------------------------------------------------------------------
# text overlap


def test_rouge_hand_cases():
    assert rouge_l_recall("the cat sat", "the cat sat") == 1.0
    assert rouge_l_recall("dog", "the cat sat") == 0.0
    assert rouge_l_recall("", "the cat sat") == 0.0
    # LCS("the cat sat", "the cat on the mat") = "the cat" -> 2 of 5
    assert rouge_l_recall("the cat sat", "the cat on the mat") == pytest.approx(0.4)
    # recall denominator is the reference, so extra hypothesis words are free
    assert rouge_l_recall("x the y cat z sat", "the cat sat") == 1.0
    with pytest.raises(ValueError, match="at least one word"):
        rouge_l_recall("the", "")


def all_subsequences(words):
    out = set()
    for r in range(len(words) + 1):
        for combo in itertools.combinations(words, r):
            out.add(combo)
    return out


def test_rouge_against_subsequence_enumeration():
    rng = np.random.default_rng(34)
    vocab = ["a", "b", "c"]
    for _ in range(40):
        hyp = [vocab[i] for i in rng.integers(0, 3, size=rng.integers(0, 7))]
        ref = [vocab[i] for i in rng.integers(0, 3, size=rng.integers(1, 7))]
        common = all_subsequences(hyp) & all_subsequences(ref)
        lcs = max(len(s) for s in common)
        assert rouge_l_recall(" ".join(hyp), " ".join(ref)) == lcs / len(ref)


def bleu_reference(hypothesis: str, reference: str, max_n: int = 4) -> float:
    """Counter-based recomputation, deliberately styled differently."""
    hyp, ref = hypothesis.split(), reference.split()
    if not hyp:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        hyp_grams = Counter(tuple(hyp[i:i + n])
                            for i in range(len(hyp) - n + 1))
        ref_grams = Counter(tuple(ref[i:i + n])
                            for i in range(len(ref) - n + 1))
        overlap = sum((hyp_grams & ref_grams).values())
        total = sum(hyp_grams.values())
        if n == 1:
            if overlap == 0:
                return 0.0
            log_precisions.append(math.log(overlap / total))
        else:
            log_precisions.append(math.log((overlap + 1) / (total + 1)))
    score = math.exp(sum(log_precisions) / max_n)
    if len(hyp) < len(ref):
        score *= math.exp(1.0 - len(ref) / len(hyp))
    return score


def test_bleu_hand_cases():
    assert bleu("the cat sat on the mat", "the cat sat on the mat") == 1.0
    assert bleu("dog dog dog", "the cat sat") == 0.0
    assert bleu("", "the cat sat") == 0.0
    # perfect prefix of half the length: only the brevity penalty bites
    assert bleu("a b", "a b c d") == pytest.approx(math.exp(-1.0), rel=1e-12)
    with pytest.raises(ValueError, match="at least one word"):
        bleu("the", "")
    with pytest.raises(ValueError, match="max_n"):
        bleu("a", "a", max_n=0)


def test_bleu_clips_repeated_ngrams():
    # "the the the" has 3 unigram candidates but the reference only
    # supplies one "the", so clipped precision is 1/3; the hypothesis is
    # longer than the reference, so no brevity penalty applies.
    assert bleu("the the the", "the cat", max_n=1) == pytest.approx(1 / 3)


def test_bleu_matches_reference_implementation():
    rng = np.random.default_rng(35)
    vocab = ["a", "b", "c", "d", "e"]
    for _ in range(40):
        hyp = " ".join(vocab[i]
                       for i in rng.integers(0, 5, size=rng.integers(0, 10)))
        ref = " ".join(vocab[i]
                       for i in rng.integers(0, 5, size=rng.integers(1, 10)))
        assert bleu(hyp, ref) == pytest.approx(bleu_reference(hyp, ref),
                                               rel=1e-12, abs=1e-300)


# ---------------------------------------------------------------------------
# perplexity


def test_perplexity_uniform_model_equals_vocab_size():
    corpus = [[0, 1, 2], [3], [4, 5, 0, 1]]
    assert perplexity(UNIFORM6, corpus) == pytest.approx(6.0, rel=1e-12)
    big = full_vocab_linear({})
    assert perplexity(big, [[1, 2, 3]]) == pytest.approx(
        alphabet.VOCAB_SIZE, rel=1e-12)


def test_perplexity_single_sequence_identity():
    rng = np.random.default_rng(36)
    config = ModelConfig(vocab_size=6, context_window=16, arch="linear")
    model = TinyLM(config, rng.normal(size=param_count(config)))
    seq = [0, 3, 2, 5, 1]
    assert perplexity(model, [seq]) == pytest.approx(
        math.exp(model.sequence_nll([], seq)), rel=1e-14)


def test_perplexity_saturates_to_inf():
    a_id = alphabet.encode("a")[0]
    model = full_vocab_linear({a_id: -3000.0})
    assert perplexity(model, [[a_id, a_id, a_id]]) == math.inf


def test_perplexity_validation():
    with pytest.raises(ValueError, match="non-empty"):
        perplexity(UNIFORM6, [])
    with pytest.raises(ValueError, match="non-empty"):
        perplexity(UNIFORM6, [[1, 2], []])


# ---------------------------------------------------------------------------
# report assembly


GOOD = dict(forget_quality=0.5, forget_acc=0.25, rouge_forget=0.1, bleu=0.0,
            mia_auc=0.75, retain_acc=1.0, rouge_retain=0.9, holdout_acc=0.5,
            perplexity=12.5)


def test_report_validation():
    MetricsReport(**GOOD)  # valid
    MetricsReport(**{**GOOD, "perplexity": math.inf})  # destroyed model: ok
    with pytest.raises(ValueError, match="forget_acc"):
        MetricsReport(**{**GOOD, "forget_acc": 1.5})
    with pytest.raises(ValueError, match="mia_auc"):
        MetricsReport(**{**GOOD, "mia_auc": math.nan})
    with pytest.raises(ValueError, match="rouge_retain"):
        MetricsReport(**{**GOOD, "rouge_retain": -0.1})
    with pytest.raises(ValueError, match="perplexity"):
        MetricsReport(**{**GOOD, "perplexity": math.nan})
    with pytest.raises(ValueError, match="perplexity"):
        MetricsReport(**{**GOOD, "perplexity": 0.0})


def test_csv_header_and_row_format():
    assert csv_header() == ("method,optimizer,seed,epoch,"
                            "forget_quality,forget_acc,rouge_forget,bleu,"
                            "mia_auc,retain_acc,rouge_retain,holdout_acc,"
                            "perplexity")
    row = MetricsReport(**GOOD).csv_row("graddiff", "so", 42, 3)
    assert row == ("graddiff,so,42,3,0.5,0.25,0.1,0.0,0.75,1.0,0.9,0.5,12.5")
    # repr() keeps every bit of less round floats
    tweaked = MetricsReport(**{**GOOD, "forget_quality": 1 / 3})
    assert ",0.3333333333333333," in tweaked.csv_row("ga", "fo", 0, 0)


def test_compute_report_on_memorized_model(memorized, tiny_corpus):
    model, _ = memorized
    report = compute_report(model, tiny_corpus.forget, tiny_corpus.retain,
                            tiny_corpus.holdout)
    # Pre-unlearning: forget set fully memorized, membership easy to call.
    assert report.forget_acc >= 0.9
    assert report.retain_acc >= 0.9
    assert report.rouge_forget >= 0.9
    assert report.bleu >= 0.9
    assert report.mia_auc >= 0.9
    assert report.rouge_retain >= 0.8
    # Forget and retain are equally memorized: no distribution gap yet.
    assert report.forget_quality <= 0.6
    # Holdout authors were never trained on.
    assert report.holdout_acc <= 0.8
    assert math.isfinite(report.perplexity) and report.perplexity > 1.0
