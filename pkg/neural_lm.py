"""
Word-level recurrent LM with a tied embedding matrix.

The same matrix E provides the input lookup and the output projection:

    u_t  = E[w_t] (+ F^T x_letters(w_t) when letter features are on)
    h_t  = tanh(W_x u_t + W_h h_{t-1} + b_h)
    p_t  = softmax(E h_t + b_o)

Letter features are hashed character n-grams of ``^word$`` added to the
word embedding, so augmenting a word touches a single row of E.
"""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ngram import BOS, EOS, SPECIAL_TOKENS, UNK
from settings import NeuralLMConfig
from utils import get_logger

logger = get_logger(__name__)

MODEL_FORMAT_VERSION = 1
PARAMETER_BLOCKS = ("E", "F", "W_x", "W_h", "b_h", "b_o")


class NeuralLMError(ValueError):
    """Raised for invalid models, vocabularies and model files."""


class TrainingError(NeuralLMError):
    """Raised when training diverges."""


def letter_ngram_features(word, n_min=2, n_max=5, slots=10_000):
    """
    Hashed character n-gram counts of a word.

    Args:
        word: Token; padded to ``^word$`` before extraction
        n_min: Shortest n-gram length
        n_max: Longest n-gram length
        slots: Number of hash buckets

    Returns:
        dict: slot index -> count
    """
    if not word:
        raise NeuralLMError("Cannot extract letter features from an empty word")
    if not 1 <= n_min <= n_max:
        raise NeuralLMError(f"Invalid n-gram range [{n_min}, {n_max}]")
    if slots < 1:
        raise NeuralLMError(f"slots must be >= 1, got {slots}")
    padded = f"^{word}$"
    features = {}
    for n in range(n_min, n_max + 1):
        for i in range(len(padded) - n + 1):
            slot = _stable_hash(padded[i:i + n]) % slots
            features[slot] = features.get(slot, 0) + 1
    return features


def _stable_hash(text):
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(eq=False)
class NeuralLM:
    vocab: tuple
    E: np.ndarray
    W_x: np.ndarray
    W_h: np.ndarray
    b_h: np.ndarray
    b_o: np.ndarray
    F: np.ndarray = None
    config: NeuralLMConfig = field(default_factory=NeuralLMConfig)
    epoch_perplexities: tuple = ()

    def __post_init__(self):
        self.vocab = tuple(self.vocab)
        if len(set(self.vocab)) != len(self.vocab):
            raise NeuralLMError("Vocabulary contains duplicates")
        for token in SPECIAL_TOKENS:
            if token not in self.vocab:
                raise NeuralLMError(f"Vocabulary lacks {token}")
        d = self.config.dim
        expected = {
            "E": (len(self.vocab), d),
            "W_x": (d, d),
            "W_h": (d, d),
            "b_h": (d,),
            "b_o": (len(self.vocab),),
        }
        if self.config.letter_features:
            expected["F"] = (self.config.hash_slots, d)
        elif self.F is not None:
            raise NeuralLMError("F given but letter features are disabled")
        for name, shape in expected.items():
            value = getattr(self, name)
            if value is None or value.shape != shape:
                got = None if value is None else value.shape
                raise NeuralLMError(f"{name} has shape {got}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise NeuralLMError(f"{name} contains non-finite values")
        self._index = {w: i for i, w in enumerate(self.vocab)}
        self._letters = [self._letter_slots(w) for w in self.vocab]

    def _letter_slots(self, word):
        if not self.config.letter_features or word in SPECIAL_TOKENS:
            return np.zeros(0, dtype=int), np.zeros(0)
        feats = letter_ngram_features(
            word, self.config.ngram_min, self.config.ngram_max, self.config.hash_slots
        )
        slots = np.array(sorted(feats), dtype=int)
        return slots, np.array([feats[s] for s in slots], dtype=float)

    @property
    def dim(self):
        return self.config.dim

    def index(self, word):
        return self._index.get(word, self._index[UNK])

    def parameters(self):
        blocks = {name: getattr(self, name) for name in PARAMETER_BLOCKS}
        if blocks["F"] is None:
            del blocks["F"]
        return blocks

    def copy(self):
        params = {name: value.copy() for name, value in self.parameters().items()}
        return replace(self, **params)

    def input_vector(self, word):
        """Input representation of a word: its E row plus letter features."""
        i = self.index(word)
        vec = self.E[i].copy()
        slots, counts = self._letters[i]
        if slots.size:
            vec += counts @ self.F[slots]
        return vec

    def step(self, hidden, word):
        """
        Consume one word.

        Returns:
            tuple: (new hidden vector, natural-log distribution over vocab)
        """
        new_hidden = np.tanh(self.W_x @ self.input_vector(word) + self.W_h @ hidden + self.b_h)
        return new_hidden, _log_softmax(self.E @ new_hidden + self.b_o)

    def start(self):
        """State after reading <s> from the zero hidden vector."""
        return self.step(np.zeros(self.dim), BOS)

    def sentence_logprob(self, sentence):
        """Natural-log probability of a sentence including </s>."""
        hidden, logdist = self.start()
        total = 0.0
        for word in sentence:
            total += logdist[self.index(word)]
            hidden, logdist = self.step(hidden, word)
        return float(total + logdist[self._index[EOS]])


def _log_softmax(logits):
    shifted = logits - logits.max()
    return shifted - np.log(np.sum(np.exp(shifted)))


def build_vocabulary(corpus, extra_words=()):
    """Special tokens first, then the sorted corpus and extra words."""
    words = set(extra_words)
    for sentence in corpus:
        words.update(sentence)
    words.difference_update(SPECIAL_TOKENS)
    return (EOS, BOS, UNK) + tuple(sorted(words))


def init_model(vocab, config, rng=None):
    """Small random initialisation, deterministic under config.seed."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    d = config.dim
    scale = config.init_scale
    E = rng.normal(0.0, scale, size=(len(vocab), d))
    W_x = rng.normal(0.0, scale, size=(d, d))
    W_h = rng.normal(0.0, scale, size=(d, d))
    F = rng.normal(0.0, scale, size=(config.hash_slots, d)) if config.letter_features else None
    return NeuralLM(vocab, E, W_x, W_h, np.zeros(d), np.zeros(len(vocab)), F, config)


def zero_model(vocab, config):
    d = config.dim
    F = np.zeros((config.hash_slots, d)) if config.letter_features else None
    return NeuralLM(
        vocab,
        np.zeros((len(vocab), d)),
        np.zeros((d, d)),
        np.zeros((d, d)),
        np.zeros(d),
        np.zeros(len(vocab)),
        F,
        config,
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _forward(lm, sentence):
    inputs = [lm.index(BOS)] + [lm.index(w) for w in sentence]
    targets = [lm.index(w) for w in sentence] + [lm.index(EOS)]
    T = len(inputs)
    U = np.empty((T, lm.dim))
    H = np.empty((T, lm.dim))
    hidden = np.zeros(lm.dim)
    for t, i in enumerate(inputs):
        U[t] = lm.E[i]
        slots, counts = lm._letters[i]
        if slots.size:
            U[t] += counts @ lm.F[slots]
        hidden = np.tanh(lm.W_x @ U[t] + lm.W_h @ hidden + lm.b_h)
        H[t] = hidden
    logits = H @ lm.E.T + lm.b_o
    logits -= logits.max(axis=1, keepdims=True)
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return inputs, targets, U, H, log_probs


def sentence_loss(lm, sentence):
    """Cross-entropy (natural log) of one sentence."""
    _, targets, _, _, log_probs = _forward(lm, sentence)
    return float(-log_probs[np.arange(len(targets)), targets].sum())


def loss_and_gradients(lm, sentence):
    """
    Loss and exact gradients by backpropagation through time.

    Returns:
        tuple: (loss, dict of gradient arrays keyed like lm.parameters())
    """
    inputs, targets, U, H, log_probs = _forward(lm, sentence)
    T = len(inputs)
    loss = float(-log_probs[np.arange(T), targets].sum())

    dZ = np.exp(log_probs)
    dZ[np.arange(T), targets] -= 1.0
    dE = dZ.T @ H
    db_o = dZ.sum(axis=0)
    dH = dZ @ lm.E

    dA = np.zeros_like(H)
    carry = np.zeros(lm.dim)
    for t in range(T - 1, -1, -1):
        dA[t] = (dH[t] + carry) * (1.0 - H[t] ** 2)
        carry = lm.W_h.T @ dA[t]

    H_prev = np.vstack([np.zeros((1, lm.dim)), H[:-1]])
    grads = {
        "W_x": dA.T @ U,
        "W_h": dA.T @ H_prev,
        "b_h": dA.sum(axis=0),
        "b_o": db_o,
    }
    dU = dA @ lm.W_x
    np.add.at(dE, inputs, dU)
    grads["E"] = dE
    if lm.F is not None:
        dF = np.zeros_like(lm.F)
        for t, i in enumerate(inputs):
            slots, counts = lm._letters[i]
            if slots.size:
                dF[slots] += counts[:, None] * dU[t]
        grads["F"] = dF
    return loss, grads


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for name in grads:
            grads[name] *= factor
    return norm


def train(corpus, config=None, extra_words=()):
    """
    Train a model by per-sentence SGD with full-sentence BPTT.

    Args:
        corpus: Sentences as token lists (or whitespace strings)
        config: NeuralLMConfig; defaults when None
        extra_words: Words added to the vocabulary besides corpus words

    Returns:
        NeuralLM: Trained model; epoch_perplexities holds the running
        training perplexity of every epoch
    """
    config = config or NeuralLMConfig()
    sentences = [s.split() if isinstance(s, str) else list(s) for s in corpus]
    if not sentences:
        raise NeuralLMError("Cannot train on an empty corpus")
    rng = np.random.default_rng(config.seed)
    lm = init_model(build_vocabulary(sentences, extra_words), config, rng)
    logger.info(
        f"Training recurrent LM: |V|={len(lm.vocab)} d={config.dim} "
        f"letter_features={config.letter_features} epochs={config.epochs}"
    )

    perplexities = []
    for epoch in range(1, config.epochs + 1):
        total_loss = 0.0
        total_tokens = 0
        for position in rng.permutation(len(sentences)):
            sentence = sentences[position]
            loss, grads = loss_and_gradients(lm, sentence)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"Loss became {loss} at epoch {epoch} on sentence {position} "
                    f"({' '.join(sentence)[:60]!r}); try a lower learning rate"
                )
            _clip(grads, config.clip_norm)
            for name, grad in grads.items():
                getattr(lm, name)[...] -= config.learning_rate * grad
            total_loss += loss
            total_tokens += len(sentence) + 1
        ppl = math.exp(total_loss / total_tokens)
        perplexities.append(ppl)
        logger.info(f"Epoch {epoch}: training perplexity {ppl:.3f}")
    lm.epoch_perplexities = tuple(perplexities)
    return lm


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradientCheckReport:
    errors: dict
    tolerance: float

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-10):
    a = float(np.linalg.norm(analytic))
    n = float(np.linalg.norm(numeric))
    if a < floor and n < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / max(a, n)


def gradient_check(lm, sentence, epsilon=1e-5, tolerance=1e-4):
    """
    Compare analytic gradients with central finite differences.

    Every entry of every block is perturbed, except F where only the hash
    slots used by the sentence are checked (others have zero gradient).

    Returns:
        GradientCheckReport: Relative error per parameter block
    """
    _, grads = loss_and_gradients(lm, sentence)
    perturbed = lm.copy()
    errors = {}
    for name, analytic in grads.items():
        param = getattr(perturbed, name)
        if name == "F":
            rows = sorted({int(s) for w in [BOS] + list(sentence) for s in perturbed._letters[perturbed.index(w)][0]})
            entries = [(r, c) for r in rows for c in range(param.shape[1])]
        else:
            entries = list(np.ndindex(param.shape))
        numeric = np.zeros(len(entries))
        picked = np.zeros(len(entries))
        for k, entry in enumerate(entries):
            original = param[entry]
            param[entry] = original + epsilon
            plus = sentence_loss(perturbed, sentence)
            param[entry] = original - epsilon
            minus = sentence_loss(perturbed, sentence)
            param[entry] = original
            numeric[k] = (plus - minus) / (2 * epsilon)
            picked[k] = analytic[entry]
        errors[name] = relative_error(picked, numeric)
        logger.debug(f"gradient check {name}: relative error {errors[name]:.3e}")
    return GradientCheckReport(errors, tolerance)


# ---------------------------------------------------------------------------
# Vocabulary extension, scoring and model files
# ---------------------------------------------------------------------------


def extend_vocabulary(lm, words):
    """
    Append unseen words with zero embedding rows.

    Output biases of new words start at the mean existing bias.

    Returns:
        NeuralLM: New model; the input model is untouched
    """
    new = [w for w in dict.fromkeys(words) if w not in lm._index]
    if not new:
        return lm.copy()
    E = np.vstack([lm.E, np.zeros((len(new), lm.dim))])
    b_o = np.concatenate([lm.b_o, np.full(len(new), lm.b_o.mean())])
    params = {name: value.copy() for name, value in lm.parameters().items()}
    params.update(E=E, b_o=b_o)
    logger.info(f"Extended neural LM vocabulary by {len(new)} words")
    return replace(lm, vocab=lm.vocab + tuple(new), **params)


def score_sentences(lm, sentences, jobs=1):
    """Natural-log probability of each sentence, optionally in threads."""
    if jobs <= 1:
        return [lm.sentence_logprob(s) for s in sentences]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lm.sentence_logprob, sentences))


def _format_row(values):
    return " ".join(format(float(v), ".9g") for v in values)


def save_model(lm, path):
    """Write the versioned text model file (9 significant digits)."""
    cfg = lm.config
    lines = [
        f"nelm-model {MODEL_FORMAT_VERSION}",
        f"dim {cfg.dim}",
        f"vocab_size {len(lm.vocab)}",
        f"letter_features {int(cfg.letter_features)}",
        f"ngram_range {cfg.ngram_min} {cfg.ngram_max}",
        f"hash_slots {cfg.hash_slots}",
        f"seed {cfg.seed}",
        f"epochs {cfg.epochs}",
        f"learning_rate {cfg.learning_rate!r}",
        f"clip_norm {cfg.clip_norm!r}",
        f"init_scale {cfg.init_scale!r}",
        "vocab",
    ]
    lines.extend(lm.vocab)
    for name, value in lm.parameters().items():
        matrix = value.reshape(1, -1) if value.ndim == 1 else value
        lines.append(f"matrix {name} {matrix.shape[0]} {matrix.shape[1]}")
        lines.extend(_format_row(row) for row in matrix)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    try:
        return _parse_model(lines)
    except NeuralLMError:
        raise
    except (IndexError, ValueError) as e:
        raise NeuralLMError(f"Malformed model file {path}: {e}")


def _parse_model(lines):
    pos = 0

    def take(key):
        nonlocal pos
        parts = lines[pos].split()
        if parts[0] != key:
            raise NeuralLMError(f"line {pos + 1}: expected {key!r}, found {parts[0]!r}")
        pos += 1
        return parts[1:]

    version = int(take("nelm-model")[0])
    if version != MODEL_FORMAT_VERSION:
        raise NeuralLMError(f"Unsupported model format version {version}")
    dim = int(take("dim")[0])
    vocab_size = int(take("vocab_size")[0])
    letter = bool(int(take("letter_features")[0]))
    n_min, n_max = (int(v) for v in take("ngram_range"))
    slots = int(take("hash_slots")[0])
    config = NeuralLMConfig(
        dim=dim,
        seed=int(take("seed")[0]),
        epochs=int(take("epochs")[0]),
        learning_rate=float(take("learning_rate")[0]),
        clip_norm=float(take("clip_norm")[0]),
        init_scale=float(take("init_scale")[0]),
        letter_features=letter,
        ngram_min=n_min,
        ngram_max=n_max,
        hash_slots=slots,
    )
    take("vocab")
    vocab = tuple(lines[pos:pos + vocab_size])
    pos += vocab_size

    params = {}
    while pos < len(lines) and lines[pos].strip():
        name, rows, cols = take("matrix")
        rows, cols = int(rows), int(cols)
        block = np.array([[float(v) for v in lines[pos + r].split()] for r in range(rows)])
        if block.shape != (rows, cols):
            raise NeuralLMError(f"matrix {name} has shape {block.shape}, header says {(rows, cols)}")
        pos += rows
        params[name] = block.reshape(-1) if name in ("b_h", "b_o") else block
    return NeuralLM(vocab=vocab, config=config, **params)
