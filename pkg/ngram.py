"""
Interpolated Kneser-Ney backoff n-gram models and the ARPA format.

Each order n uses a single absolute discount D_n = n1 / (n1 + 2 * n2) taken
from its count-of-counts. Orders below the highest use continuation counts,
except n-grams that start with ``<s>``, which keep raw counts. The unigram
level interpolates with a uniform distribution over every predictable
vocabulary word, so the model is total over its vocabulary.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

from utils import get_logger

logger = get_logger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIAL_TOKENS = (EOS, BOS, UNK)

# log10 probability ARPA files give to the never-predicted <s>
BOS_LOGPROB = -99.0
MAX_ORDER = 5


class NGramError(ValueError):
    """Raised for invalid training requests and malformed ARPA text."""


@dataclass(frozen=True)
class NGramLM:
    """
    Backoff n-gram model.

    probs[k] and bows[k] map k-gram tuples to log10 probability and log10
    backoff weight (index 0 is unused).
    """

    order: int
    vocab: frozenset
    probs: tuple
    bows: tuple

    def map_token(self, token):
        if token in self.vocab:
            return token
        return UNK

    def logprob(self, word, history=()):
        """
        log10 p(word | history) by the standard backoff recursion.

        Args:
            word: Predicted token; unknown tokens are mapped to <unk>
            history: Preceding tokens, truncated to the last order-1

        Returns:
            float: log10 probability
        """
        word = self.map_token(word)
        if word == BOS:
            return BOS_LOGPROB
        history = tuple(self.map_token(t) for t in history)
        if self.order > 1:
            history = history[-(self.order - 1):]
        else:
            history = ()
        backoff = 0.0
        while True:
            ngram = history + (word,)
            stored = self.probs[len(ngram)].get(ngram)
            if stored is not None:
                return backoff + stored
            if not history:
                # Only reachable for words missing from the unigram table
                return backoff + BOS_LOGPROB
            backoff += self.bows[len(history)].get(history, 0.0)
            history = history[1:]

    def sentence_logprob(self, sentence):
        """log10 probability of a sentence including its end marker."""
        history = [BOS]
        total = 0.0
        for word in list(sentence) + [EOS]:
            total += self.logprob(word, history)
            history.append(word)
        return total

    def perplexity(self, sentences):
        total = 0.0
        count = 0
        for sentence in sentences:
            total += self.sentence_logprob(sentence)
            count += len(sentence) + 1
        if count == 0:
            raise NGramError("Cannot compute perplexity of an empty corpus")
        return 10.0 ** (-total / count)

    def histories(self):
        """Every history the model stores an n-gram or backoff weight for."""
        seen = {()}
        for k in range(1, self.order):
            seen.update(self.probs[k])
        return sorted(seen, key=lambda h: (len(h), h))

    @property
    def predictable_words(self):
        return sorted(w for w in self.vocab if w != BOS)


def _pad(sentence, vocab):
    return [BOS] + [w if w in vocab else UNK for w in sentence] + [EOS]


def _discount(count_values, order):
    stats = Counter(count_values)
    n1, n2 = stats[1], stats[2]
    if n1 == 0:
        logger.warning(f"Degenerate count-of-counts at order {order} (n1={n1}, n2={n2}); using D=0.5")
        return 0.5
    return n1 / (n1 + 2 * n2)


def train_kn(corpus, order, vocab):
    """
    Train an interpolated Kneser-Ney model.

    Args:
        corpus: Sentences, each a list of tokens (or a whitespace string)
        order: N-gram order in [1, 5]
        vocab: Token set; <s>, </s> and <unk> are always added

    Returns:
        NGramLM: Trained model
    """
    if not 1 <= order <= MAX_ORDER:
        raise NGramError(f"order must lie in [1, {MAX_ORDER}], got {order}")
    sentences = [s.split() if isinstance(s, str) else list(s) for s in corpus]
    if not sentences:
        raise NGramError("Cannot train on an empty corpus")
    vocab = frozenset(vocab) | set(SPECIAL_TOKENS)

    raw = [None] + [Counter() for _ in range(order)]
    for sentence in sentences:
        tokens = _pad(sentence, vocab)
        for i in range(1, len(tokens)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                raw[k][tuple(tokens[i - k + 1:i + 1])] += 1

    for k in range(1, order + 1):
        if not raw[k]:
            raise NGramError(f"No {k}-grams observed; corpus too short for order {order}")

    # Modified counts: continuation counts below the top order
    counts = [None] * (order + 1)
    counts[order] = dict(raw[order])
    for k in range(1, order):
        left_contexts = Counter(ngram[1:] for ngram in raw[k + 1])
        level = {}
        for ngram, c in raw[k].items():
            level[ngram] = c if ngram[0] == BOS else left_contexts.get(ngram, 0)
        counts[k] = {g: c for g, c in level.items() if c > 0}

    discounts = [None] + [_discount(counts[k].values(), k) for k in range(1, order + 1)]
    logger.debug(f"KN discounts: {[round(d, 4) for d in discounts[1:]]}")

    totals = [None] + [defaultdict(int) for _ in range(order)]
    types = [None] + [defaultdict(int) for _ in range(order)]
    for k in range(1, order + 1):
        for ngram, c in counts[k].items():
            totals[k][ngram[:-1]] += c
            types[k][ngram[:-1]] += 1

    predictable = sorted(w for w in vocab if w != BOS)
    gammas = [None] + [
        {h: discounts[k] * types[k][h] / totals[k][h] for h in totals[k]} for k in range(1, order + 1)
    ]

    # Linear-domain probabilities per level
    prob = [None] + [{} for _ in range(order)]
    uniform = 1.0 / len(predictable)
    unigram_total = totals[1][()]
    gamma0 = gammas[1][()]
    d1 = discounts[1]
    for w in predictable:
        c = counts[1].get((w,), 0)
        prob[1][(w,)] = max(c - d1, 0.0) / unigram_total + gamma0 * uniform

    def lower(k, word, history):
        # Interpolated p_k(word | history) for an unseen (history, word)
        while history:
            stored = prob[k].get(history + (word,))
            if stored is not None:
                return stored
            gamma = gammas[k].get(history)
            if gamma is not None:
                return gamma * lower(k - 1, word, history[1:])
            history = history[1:]
            k -= 1
        return prob[1][(word,)]

    for k in range(2, order + 1):
        d = discounts[k]
        for ngram, c in sorted(counts[k].items()):
            history, word = ngram[:-1], ngram[-1]
            prob[k][ngram] = (
                max(c - d, 0.0) / totals[k][history]
                + gammas[k][history] * lower(k - 1, word, history[1:])
            )

    probs = [None] + [{} for _ in range(order)]
    bows = [None] + [{} for _ in range(order)]
    for k in range(1, order + 1):
        for ngram, p in prob[k].items():
            probs[k][ngram] = math.log10(p)
        if k < order:
            for history, gamma in gammas[k + 1].items():
                bows[k][history] = math.log10(gamma)
    # Never predicted, but it carries the sentence-start backoff weight
    probs[1][(BOS,)] = BOS_LOGPROB

    lm = NGramLM(order, vocab, tuple(probs), tuple(bows))
    logger.info(
        f"Trained {order}-gram KN model on {len(sentences)} sentences, "
        f"{len(vocab)} words, {sum(len(p) for p in probs[1:])} n-grams"
    )
    return lm


# ---------------------------------------------------------------------------
# ARPA format
# ---------------------------------------------------------------------------


def write_arpa(lm):
    """Serialize a model as ARPA text with 6-decimal scores."""
    lines = ["\\data\\"]
    for k in range(1, lm.order + 1):
        lines.append(f"ngram {k}={len(lm.probs[k])}")
    for k in range(1, lm.order + 1):
        lines.append("")
        lines.append(f"\\{k}-grams:")
        for ngram in sorted(lm.probs[k]):
            line = f"{lm.probs[k][ngram]:.6f}\t{' '.join(ngram)}"
            if k < lm.order and ngram in lm.bows[k]:
                line += f"\t{lm.bows[k][ngram]:.6f}"
            lines.append(line)
    lines.append("")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


def read_arpa(text):
    """
    Parse ARPA text.

    Raises:
        NGramError: On malformed section headers, bad lines or a count
            mismatch between the \\data\\ section and the body
    """
    lines = [(no, line.strip()) for no, line in enumerate(text.splitlines(), start=1)]
    lines = [(no, line) for no, line in lines if line]
    if not lines or lines[0][1] != "\\data\\":
        raise NGramError("ARPA text must start with \\data\\")

    declared = {}
    pos = 1
    while pos < len(lines) and lines[pos][1].startswith("ngram "):
        no, line = lines[pos]
        try:
            k, n = line[len("ngram "):].split("=")
            declared[int(k)] = int(n)
        except ValueError:
            raise NGramError(f"line {no}: malformed count line {line!r}")
        pos += 1
    if not declared or sorted(declared) != list(range(1, len(declared) + 1)):
        raise NGramError("\\data\\ section must declare orders 1..N")
    order = len(declared)

    probs = [None] + [{} for _ in range(order)]
    bows = [None] + [{} for _ in range(order)]
    for k in range(1, order + 1):
        if pos >= len(lines) or lines[pos][1] != f"\\{k}-grams:":
            where = lines[pos][0] if pos < len(lines) else "end"
            raise NGramError(f"line {where}: expected \\{k}-grams: section header")
        pos += 1
        while pos < len(lines) and not lines[pos][1].startswith("\\"):
            no, line = lines[pos]
            fields = line.split()
            if len(fields) not in (k + 1, k + 2):
                raise NGramError(f"line {no}: expected {k}-gram entry, got {line!r}")
            try:
                logp = float(fields[0])
                bow = float(fields[k + 1]) if len(fields) == k + 2 else None
            except ValueError:
                raise NGramError(f"line {no}: non-numeric score in {line!r}")
            ngram = tuple(fields[1:k + 1])
            probs[k][ngram] = logp
            if bow is not None:
                bows[k][ngram] = bow
            pos += 1
        if len(probs[k]) != declared[k]:
            raise NGramError(
                f"\\data\\ declares {declared[k]} {k}-grams but the body lists {len(probs[k])}"
            )
    if pos >= len(lines) or lines[pos][1] != "\\end\\":
        raise NGramError("ARPA text must end with \\end\\")

    vocab = frozenset(ngram[0] for ngram in probs[1])
    return NGramLM(order, vocab, tuple(probs), tuple(bows))


def save_arpa(lm, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(write_arpa(lm))


def load_arpa(path):
    with open(path, encoding="utf-8") as f:
        return read_arpa(f.read())
