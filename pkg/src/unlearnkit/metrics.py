"""Evaluation metric suite.

Efficacy metrics (how forgotten is the forget set): KS-based forget
quality over truth ratios, multiple-choice accuracy, Rouge-L recall and
BLEU of greedy completions, and a Min-k% membership-inference AUC.
Utility metrics (how intact is everything else): retain/holdout
accuracy, retain Rouge-L, and corpus perplexity.

All functions are pure and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import alphabet
from .model import TinyLM
from .numerics import Array

# -- two-sample Kolmogorov-Smirnov ----------------------------------------


def kolmogorov_sf(x: float) -> float:
    """Two-sided asymptotic Kolmogorov survival function Q(x).

    Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2). The alternating series
    converges fast for large x; below x ~ 1 it loses digits, so there we
    use the theta-function dual

        Q(x) = 1 - sqrt(2 pi)/x * sum_{k>=1} exp(-(2k-1)^2 pi^2 / (8x^2)).
    """
    if x <= 0:
        return 1.0
    if x < 1.0:
        total = 0.0
        for k in range(1, 20):
            term = math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8.0 * x * x))
            total += term
            if term < 1e-18 * max(total, 1e-300):
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / x * total))
    total = 0.0
    for k in range(1, 200):
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * x * x)
        total += term
        if abs(term) < 1e-18:
            break
    return min(1.0, max(0.0, total))


def ks_test(sample_a, sample_b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic two-sided p-value."""
    a = np.sort(np.asarray(list(sample_a), dtype=np.float64))
    b = np.sort(np.asarray(list(sample_b), dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    return d, kolmogorov_sf(en * d)


# -- truth ratios and accuracy ---------------------------------------------


def geometric_mean_prob(model: TinyLM, x, y) -> float:
    """exp(-sequence_nll): per-token geometric-mean probability of y given x."""
    return math.exp(-model.sequence_nll(x, y))


def log_truth_ratio(model: TinyLM, example) -> float:
    """log of truth_ratio, computed without leaving log space.

    Heavily unlearned models assign the correct answer astronomically
    small mass; the ratio itself under- or overflows float64 long before
    its log does, so comparisons and the KS test run on this form.
    """
    if len(example.perturbed_answers) < 1:
        raise ValueError("example needs at least one perturbed answer")
    x = _prompt_tokens(example)
    log_correct = -model.sequence_nll(x, _answer_tokens(example.answer))
    log_perturbed = np.asarray(
        [-model.sequence_nll(x, _answer_tokens(p))
         for p in example.perturbed_answers])
    # log mean_j exp(lp_j), shifted for stability
    peak = float(np.max(log_perturbed))
    log_mean = peak + math.log(np.mean(np.exp(log_perturbed - peak)))
    return log_correct - log_mean


def truth_ratio(model: TinyLM, example) -> float:
    """P_bar(correct) / mean_j P_bar(perturbed_j), length-normalized.

    Above 1 means the model prefers the true answer over the average
    distractor; well below 1 means the distractors win. Saturates to 0
    or inf when the log ratio exceeds float64 range.
    """
    return math.exp(min(log_truth_ratio(model, example), 709.0))


def forget_quality(model: TinyLM, forget, retain) -> float:
    """1 - p for the KS test between forget and retain truth-ratio samples.

    Near 0 when forget examples still look as memorized as retain ones;
    near 1 when the two populations have clearly separated. The KS
    statistic is rank-based, so running it on log ratios is exact.
    """
    if len(forget) == 0 or len(retain) == 0:
        raise ValueError("both example sets must be non-empty")
    ratios_f = [log_truth_ratio(model, ex) for ex in forget]
    ratios_r = [log_truth_ratio(model, ex) for ex in retain]
    _, p = ks_test(ratios_f, ratios_r)
    return 1.0 - p


def mc_accuracy(model: TinyLM, examples) -> float:
    """Fraction of examples whose correct answer strictly beats every
    perturbed answer on geometric-mean probability. Ties count as wrong.

    Compared in log space (per-token mean log-probability), which orders
    identically and cannot underflow.
    """
    if len(examples) == 0:
        raise ValueError("examples must be non-empty")
    hits = 0
    for ex in examples:
        x = _prompt_tokens(ex)
        log_correct = -model.sequence_nll(x, _answer_tokens(ex.answer))
        best_other = max(-model.sequence_nll(x, _answer_tokens(p))
                         for p in ex.perturbed_answers)
        hits += log_correct > best_other
    return hits / len(examples)


# -- membership inference ---------------------------------------------------


def min_k_score(model: TinyLM, x, y, k_percent: float = 20.0) -> float:
    """Mean of the lowest-k% per-token log-probabilities of y given x.

    The number of tokens kept is floor(k% * |y|), at least 1 (so the
    documented hand case k=34%, |y|=3 keeps exactly one token). Training
    members tend to have no badly surprising tokens, which pushes their
    score up relative to non-members.
    """
    if not 0.0 < k_percent <= 100.0:
        raise ValueError(f"k_percent must lie in (0, 100], got {k_percent}")
    logp = model.per_token_logprobs(x, y)
    keep = max(1, int(math.floor(k_percent / 100.0 * logp.size)))
    return float(np.mean(np.sort(logp)[:keep]))


def mia_auc(member_scores, nonmember_scores) -> float:
    """Exact pairwise AUC: P(member score > nonmember score), ties 1/2."""
    members = np.asarray(list(member_scores), dtype=np.float64)
    nonmembers = np.asarray(list(nonmember_scores), dtype=np.float64)
    if members.size == 0 or nonmembers.size == 0:
        raise ValueError("both score lists must be non-empty")
    wins = (members[:, None] > nonmembers[None, :]).sum()
    ties = (members[:, None] == nonmembers[None, :]).sum()
    return float((wins + 0.5 * ties) / (members.size * nonmembers.size))


# -- text overlap ------------------------------------------------------------


def _lcs_length(a: list, b: list) -> int:
    # one-row dynamic program; sequences here are a handful of words
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l_recall(hypothesis: str, reference: str) -> float:
    """LCS(hyp words, ref words) / |ref words|."""
    ref = reference.split()
    if not ref:
        raise ValueError("reference must contain at least one word")
    hyp = hypothesis.split()
    return _lcs_length(hyp, ref) / len(ref)


def bleu(hypothesis: str, reference: str, max_n: int = 4) -> float:
    """Word-level BLEU with clipped precisions and a brevity penalty.

    Unigram precision is unsmoothed (no overlap means score 0); orders
    two and up use add-one smoothing, and an order with no candidate
    n-grams contributes (0+1)/(0+1) = 1. An empty hypothesis scores 0
    by convention rather than raising.
    """
    if max_n < 1:
        raise ValueError(f"max_n must be at least 1, got {max_n}")
    hyp = hypothesis.split()
    ref = reference.split()
    if not ref:
        raise ValueError("reference must contain at least one word")
    if not hyp:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        matched = sum(min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items())
        total = sum(hyp_counts.values())
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            precision = (matched + 1) / (total + 1)
        log_sum += math.log(precision)
    geo_mean = math.exp(log_sum / max_n)
    if len(hyp) >= len(ref):
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - len(ref) / len(hyp))
    return brevity * geo_mean


def _ngram_counts(words: list, n: int) -> dict:
    counts: dict = {}
    for i in range(len(words) - n + 1):
        gram = tuple(words[i:i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


# -- perplexity --------------------------------------------------------------


def perplexity(model: TinyLM, corpus) -> float:
    """exp of the token-weighted mean NLL over whole token sequences.

    Each sequence is scored against its own prefix (no prompt). A uniform
    model scores exactly vocab_size on any corpus.
    """
    corpus = list(corpus)
    if len(corpus) == 0:
        raise ValueError("corpus must be non-empty")
    total_nll = 0.0
    total_tokens = 0
    for seq in corpus:
        seq = list(seq)
        if not seq:
            raise ValueError("corpus sequences must be non-empty")
        total_nll += model.sequence_nll([], seq) * len(seq)
        total_tokens += len(seq)
    try:
        return math.exp(total_nll / total_tokens)
    except OverflowError:
        return math.inf  # a destroyed model; the direction is what matters


# -- the full report ---------------------------------------------------------

CSV_COLUMNS = (
    "method", "optimizer", "seed", "epoch",
    "forget_quality", "forget_acc", "rouge_forget", "bleu", "mia_auc",
    "retain_acc", "rouge_retain", "holdout_acc", "perplexity",
)


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation snapshot; efficacy block first, then utility."""

    forget_quality: float
    forget_acc: float
    rouge_forget: float
    bleu: float
    mia_auc: float
    retain_acc: float
    rouge_retain: float
    holdout_acc: float
    perplexity: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "perplexity":
                continue
            if not math.isfinite(value):
                raise ValueError(f"{f.name} is not finite: {value}")
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1], got {value}")
        # perplexity may saturate to inf on a destroyed model, never NaN
        if math.isnan(self.perplexity) or self.perplexity <= 0:
            raise ValueError(f"perplexity must be positive, got {self.perplexity}")

    def csv_row(self, method: str, optimizer: str, seed: int, epoch: int) -> str:
        cells = [method, optimizer, str(seed), str(epoch)]
        cells += [repr(getattr(self, name)) for name in CSV_COLUMNS[4:]]
        return ",".join(cells)


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def _prompt_tokens(example) -> list[int]:
    return alphabet.encode(example.prompt)


def _answer_tokens(text: str) -> list[int]:
    return alphabet.encode(text) + [alphabet.EOS_ID]


def compute_report(model: TinyLM, forget, retain, holdout,
                   k_percent: float = 20.0, decode_slack: int = 8) -> MetricsReport:
    """Evaluate every report field for one model checkpoint.

    BLEU and rouge_forget grade greedy completions of forget prompts
    against the true forget answers; rouge_retain does the same on the
    retain split. The membership detector scores forget examples (all
    were trained on) against the holdout split, whose authors the model
    never saw. Perplexity covers full retain and holdout sequences.
    """
    forget, retain, holdout = list(forget), list(retain), list(holdout)

    def decoded(ex) -> str:
        want = _answer_tokens(ex.answer)
        out = model.greedy_decode(_prompt_tokens(ex), len(want) + decode_slack,
                                  eos_id=alphabet.EOS_ID)
        return alphabet.decode(out)

    rouge_f = float(np.mean([rouge_l_recall(decoded(ex), ex.answer)
                             for ex in forget]))
    rouge_r = float(np.mean([rouge_l_recall(decoded(ex), ex.answer)
                             for ex in retain]))
    bleu_f = float(np.mean([bleu(decoded(ex), ex.answer) for ex in forget]))
    members = [min_k_score(model, _prompt_tokens(ex), _answer_tokens(ex.answer),
                           k_percent) for ex in forget]
    nonmembers = [min_k_score(model, _prompt_tokens(ex), _answer_tokens(ex.answer),
                              k_percent) for ex in holdout]
    ppl_corpus = [_prompt_tokens(ex) + _answer_tokens(ex.answer)
                  for ex in retain + holdout]
    return MetricsReport(
        forget_quality=forget_quality(model, forget, retain),
        forget_acc=mc_accuracy(model, forget),
        rouge_forget=rouge_f,
        bleu=bleu_f,
        mia_auc=mia_auc(members, nonmembers),
        retain_acc=mc_accuracy(model, retain),
        rouge_retain=rouge_r,
        holdout_acc=mc_accuracy(model, holdout),
        perplexity=perplexity(model, ppl_corpus),
    )
