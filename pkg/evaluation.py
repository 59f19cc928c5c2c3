"""
WER and named-entity WER scoring.

NE-WER counts reference NE occurrences: an occurrence is an error when its
alignment op is a substitution or deletion. Insertions next to an NE are
charged to WER only.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from utils import format_rate, get_logger

logger = get_logger(__name__)

MATCH = "match"
SUB = "sub"
DEL = "del"
INS = "ins"

DEFAULT_THRESHOLD = 10


class EvaluationError(ValueError):
    """Raised for inconsistent inventories and unscorable inputs."""


@dataclass(frozen=True)
class NEInventory:
    """Underrepresented named entities split by train-set frequency."""

    rare: frozenset
    oov: frozenset
    threshold: int = DEFAULT_THRESHOLD
    counts: dict = field(default_factory=dict)
    excluded: frozenset = frozenset()

    def __post_init__(self):
        if self.rare & self.oov:
            raise EvaluationError(f"Tokens both rare and oov: {sorted(self.rare & self.oov)[:5]}")
        for token in self.rare:
            if not 1 <= self.counts.get(token, 0) < self.threshold:
                raise EvaluationError(f"Rare NE {token!r} has count {self.counts.get(token, 0)}")
        for token in self.oov:
            if self.counts.get(token, 0) != 0:
                raise EvaluationError(f"OOV NE {token!r} occurs in the train set")

    @property
    def tokens(self):
        return self.rare | self.oov

    def category(self, token):
        if token in self.rare:
            return "rare"
        if token in self.oov:
            return "oov"
        return None


def classify_nes(ne_list, train_corpus, threshold=DEFAULT_THRESHOLD):
    """
    Partition NE tokens by their count in the train corpus.

    Args:
        ne_list: NE tokens (multi-word NEs already underscore-joined)
        train_corpus: Train sentences as token lists or strings
        threshold: Tokens seen at least this often are not underrepresented

    Returns:
        NEInventory: rare (count in [1, threshold)), oov (count 0) and the
        excluded frequent tokens
    """
    if threshold < 1:
        raise EvaluationError(f"threshold must be >= 1, got {threshold}")
    corpus_counts = Counter()
    for sentence in train_corpus:
        corpus_counts.update(sentence.split() if isinstance(sentence, str) else sentence)
    counts = {token: corpus_counts.get(token, 0) for token in ne_list}
    rare = frozenset(t for t, c in counts.items() if 1 <= c < threshold)
    oov = frozenset(t for t, c in counts.items() if c == 0)
    excluded = frozenset(t for t, c in counts.items() if c >= threshold)
    if excluded:
        logger.warning(
            f"{len(excluded)} NEs occur at least {threshold} times in the train set and are excluded"
        )
    logger.info(f"NE inventory: {len(rare)} rare, {len(oov)} oov")
    return NEInventory(rare, oov, threshold, counts, excluded)


@dataclass(frozen=True)
class Alignment:
    """Sequence of (op, ref token or None, hyp token or None)."""

    ops: tuple

    @property
    def ref_tokens(self):
        return [r for _, r, _ in self.ops if r is not None]

    @property
    def hyp_tokens(self):
        return [h for _, _, h in self.ops if h is not None]

    def count(self, op):
        return sum(1 for o, _, _ in self.ops if o == op)

    @property
    def distance(self):
        return len(self.ops) - self.count(MATCH)


def align(ref, hyp):
    """
    Minimum edit-distance alignment with unit costs.

    At equal cost the backtrace prefers match, then substitution, then
    deletion, then insertion.

    Args:
        ref: Reference tokens
        hyp: Hypothesis tokens

    Returns:
        Alignment: Ops in reference order
    """
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=int)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diagonal = cost[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            cost[i, j] = min(diagonal, cost[i - 1, j] + 1, cost[i, j - 1] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i, j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and cost[i - 1, j - 1] == here:
            ops.append((MATCH, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and cost[i - 1, j - 1] + 1 == here:
            ops.append((SUB, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i - 1, j] + 1 == here:
            ops.append((DEL, ref[i - 1], None))
            i -= 1
        else:
            ops.append((INS, None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return Alignment(tuple(ops))


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self):
        if self.reference_length == 0:
            raise EvaluationError("No reference tokens to score")
        return 100.0 * self.errors / self.reference_length

    def __add__(self, other):
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_length + other.reference_length,
        )


def _as_tokens(value):
    return value.split() if isinstance(value, str) else list(value)


def score_corpus(pairs):
    """Sum substitution, deletion and insertion counts over (ref, hyp) pairs."""
    total = ErrorCounts()
    for ref, hyp in pairs:
        ref = _as_tokens(ref)
        alignment = align(ref, _as_tokens(hyp))
        total = total + ErrorCounts(
            alignment.count(SUB), alignment.count(DEL), alignment.count(INS), len(ref)
        )
    return total


def wer(pairs):
    """Corpus WER in percent: 100 * (S + D + I) / N."""
    return score_corpus(pairs).rate


@dataclass(frozen=True)
class NEWERResult:
    """NE error counts overall and per underrepresentation class."""

    errors: dict
    totals: dict

    def rate(self, split="overall"):
        total = self.totals.get(split, 0)
        if total == 0:
            return None
        return 100.0 * self.errors.get(split, 0) / total

    @property
    def overall(self):
        return self.rate("overall")

    @property
    def rare(self):
        return self.rate("rare")

    @property
    def oov(self):
        return self.rate("oov")

    @property
    def e_ne(self):
        return self.errors.get("overall", 0)

    @property
    def n_ne(self):
        return self.totals.get("overall", 0)


def ne_wer(pairs, inventory):
    """
    Per-occurrence NE error rate, overall and split into rare and oov.

    Args:
        pairs: (reference, hypothesis) token sequences
        inventory: NEInventory naming the NE tokens

    Returns:
        NEWERResult: Splits without NE occurrences report None
    """
    errors = Counter()
    totals = Counter()
    for ref, hyp in pairs:
        for op, ref_token, _ in align(_as_tokens(ref), _as_tokens(hyp)).ops:
            if ref_token is None:
                continue
            category = inventory.category(ref_token)
            if category is None:
                continue
            wrong = op in (SUB, DEL)
            for split in ("overall", category):
                totals[split] += 1
                errors[split] += int(wrong)
    return NEWERResult(dict(errors), dict(totals))


def report_values(wer_value, ne_result):
    """Ordered metric name -> value mapping for one system."""
    return {
        "WER": wer_value,
        "NE-WER": ne_result.overall,
        "NE-WER_rare": ne_result.rare,
        "NE-WER_oov": ne_result.oov,
        "E_NE": ne_result.e_ne,
        "N_NE": ne_result.n_ne,
    }


def format_report(wer_value, ne_result):
    """
    Human-readable table followed by key=value lines.

    Rates are printed with two decimals; absent splits print as "--".
    """
    values = report_values(wer_value, ne_result)
    width = max(len(k) for k in values)
    table = []
    machine = []
    for key, value in values.items():
        text = str(value) if key in ("E_NE", "N_NE") else format_rate(value, 2)
        table.append(f"{key:<{width}}  {text:>8}")
        machine.append(f"{key}={text}")
    return "\n".join(table + [""] + machine) + "\n"
