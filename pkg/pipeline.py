"""
Ablation ladder driver.

Systems are built in a fixed order: baseline 1-best, expanded lexicon,
neural LM rescoring with and without letter features, embedding
augmentation and lattice boosting. Every enabled system becomes one
report row scored with WER and NE-WER.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from augment import augment_embeddings, build_plans, read_candidate_map, select_candidates
from boost import boosted_best_path
from data_processing import pair_transcripts, read_corpus, read_lattice_file, read_ne_list, read_transcripts
from evaluation import classify_nes, ne_wer, wer
from lattice import Arc, Lattice, LatticeError, Node, best_path, restrict_vocabulary
from lexicon import LexiconError, build_graphemic_lexicon, expand_lexicon, read_lexicon
from neural_lm import extend_vocabulary, train
from ngram import SPECIAL_TOKENS, train_kn
from rescore import StateCapExceeded, rescore_lattice, rescore_nbest
from settings import PipelineSettings, load_settings
from utils import format_rate, get_logger

logger = get_logger(__name__)

# Acceptance margins of the synthetic ablation fixture
MIN_BASELINE_OOV_NE_WER = 40.0
MIN_AUGMENT_RELATIVE_GAIN = 0.2
MAX_WER_INCREASE = 0.5


class PipelineError(ValueError):
    """Raised when the pipeline inputs do not fit together."""


@dataclass(frozen=True)
class AblationRow:
    """Scores of one system of the ladder."""

    number: int
    key: str
    label: str
    parent: int = None
    wer: float = 0.0
    ne_wer: float = None
    ne_wer_rare: float = None
    ne_wer_oov: float = None
    e_ne: int = 0
    n_ne: int = 0

    @property
    def values(self):
        return {
            "WER": self.wer,
            "NE-WER": self.ne_wer,
            "NE-WER_rare": self.ne_wer_rare,
            "NE-WER_oov": self.ne_wer_oov,
            "E_NE": self.e_ne,
            "N_NE": self.n_ne,
        }


@dataclass(frozen=True)
class AblationReport:
    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def row(self, key):
        """Row of a system key, or None when that stage was disabled."""
        for row in self.rows:
            if row.key == key:
                return row
        return None

    def by_number(self, number):
        return self.rows[number - 1]

    @property
    def keys(self):
        return [row.key for row in self.rows]


def nbest_lattice(lat, hypotheses):
    """
    Lattice holding rescored hypotheses as parallel chains.

    Each chain copies the acoustic scores of its source arcs; the
    hypothesis' whole LM score sits on the chain's last arc.
    """
    times = lat.node_times
    nodes = [Node(0, times[lat.start_node])]
    arcs = []
    finals = set()
    for hyp in hypotheses:
        source = 0
        for position, index in enumerate(hyp.arcs):
            arc = lat.arcs[index]
            target = len(nodes)
            nodes.append(Node(target, times[arc.target]))
            lm_score = hyp.lm_score if position == len(hyp.arcs) - 1 else 0.0
            arcs.append(Arc(source, target, arc.word, arc.acoustic_score, lm_score))
            source = target
        finals.add(source)
    return Lattice(lat.utterance_id, nodes, arcs, 0, finals)


class PipelineManager:
    """
    Runs the ablation ladder of one configuration.

    Inputs are read once; models are trained lazily and shared by the
    rows that need them.
    """

    def __init__(self, settings):
        """
        Args:
            settings: PipelineSettings (see settings.load_settings)
        """
        self.settings = settings
        self.train_corpus = None
        self.references = None
        self.lattices = None
        self.ne_classes = None
        self.inventory = None
        self.train_vocab = None
        self.lexicon = None
        self._nlm = {}

    def load_inputs(self):
        s = self.settings
        for key in ("train_corpus", "test_references", "lattices", "ne_list"):
            if not Path(getattr(s, key)).is_file():
                raise FileNotFoundError(f"{key} file not found: {getattr(s, key)}")
        for key in ("lexicon", "pronunciations"):
            if getattr(s, key) and not Path(getattr(s, key)).is_file():
                raise FileNotFoundError(f"{key} file not found: {getattr(s, key)}")
        self.ne_classes = read_ne_list(s.ne_list)
        multiword = [token.split("_") for token in self.ne_classes if "_" in token]
        self.train_corpus = read_corpus(s.train_corpus, entities=multiword)
        self.references = read_transcripts(s.test_references)
        self.lattices = read_lattice_file(s.lattices)
        ids = [lat.utterance_id for lat in self.lattices]
        if len(set(ids)) != len(ids):
            raise PipelineError("Duplicate utterance ids in the lattice file")
        unknown = sorted(set(ids) - set(self.references))
        if unknown:
            raise PipelineError(f"Lattices without a reference transcript: {unknown[:5]}")
        self.inventory = classify_nes(self.ne_classes, self.train_corpus, s.frequency_threshold)
        self.train_vocab = {token for sentence in self.train_corpus for token in sentence}
        self.lexicon = self._baseline_lexicon()
        logger.info(
            f"Loaded {len(self.train_corpus)} train sentences, {len(self.lattices)} lattices "
            f"and {len(self.ne_classes)} NEs"
        )

    def _baseline_lexicon(self):
        if self.settings.lexicon:
            return read_lexicon(self.settings.lexicon)
        try:
            return build_graphemic_lexicon(self.train_vocab - set(SPECIAL_TOKENS))
        except LexiconError as e:
            raise PipelineError(f"Cannot graphemize the train vocabulary ({e}); supply a lexicon file") from e

    def expanded_lexicon(self):
        """
        Baseline lexicon plus the NE-list tokens of the test references it lacks.

        Returns:
            tuple: (expanded Lexicon, words added)
        """
        s = self.settings
        test_tokens = {token for words in self.references.values() for token in words}
        oov = sorted(t for t in self.ne_classes if t in test_tokens and t not in self.lexicon)
        pronunciations = read_lexicon(s.pronunciations).entries if s.pronunciations else None
        return expand_lexicon(self.lexicon, oov, pronunciations)

    @staticmethod
    def check_vocabulary(lexicon, name, vocab):
        """Every lexicon word must be a word the LM can score."""
        missing = sorted(set(lexicon.words) - set(vocab))
        if missing:
            raise PipelineError(
                f"Inconsistent vocabulary between lexicon and {name}: {len(missing)} words missing, "
                f"e.g. {missing[:5]}"
            )

    def _map(self, fn, items):
        if self.settings.jobs <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.settings.jobs) as pool:
            return list(pool.map(fn, items))

    def _rescore(self, lattices, kn, nlm, kn_weight):
        cfg = replace(self.settings.interpolation, kn_weight=kn_weight)

        def one(lat):
            try:
                return rescore_lattice(lat, kn, nlm, cfg)
            except StateCapExceeded as e:
                logger.warning(f"{e}; falling back to {cfg.nbest_size}-best rescoring")
                return nbest_lattice(lat, rescore_nbest(lat, kn, nlm, cfg))

        return self._map(one, lattices)

    def first_pass(self, lexicon):
        """
        Decode with a KN model over a lexicon's words.

        Args:
            lexicon: Lexicon of the words the decoder can emit

        Returns:
            tuple: (KN model, vocabulary-restricted lattices, rescored lattices)
        """
        vocabulary = set(lexicon.words)
        try:
            restricted = [restrict_vocabulary(lat, vocabulary) for lat in self.lattices]
        except LatticeError as e:
            raise PipelineError(f"Lattice has no path inside the decoder vocabulary: {e}") from e
        kn = train_kn(self.train_corpus, self.settings.kn_order, vocabulary)
        self.check_vocabulary(lexicon, "KN model", kn.vocab)
        return kn, restricted, self._rescore(restricted, kn, None, 1.0)

    def neural_lm(self, letter_features):
        """Neural LM trained on the train corpus, NE tokens appended."""
        if letter_features not in self._nlm:
            config = replace(self.settings.nlm, letter_features=letter_features)
            lm = train(self.train_corpus, config)
            self._nlm[letter_features] = extend_vocabulary(lm, sorted(self.ne_classes))
        return self._nlm[letter_features]

    def candidate_map(self):
        s = self.settings
        if s.candidate_map:
            return read_candidate_map(s.candidate_map)
        counts = {}
        for sentence in self.train_corpus:
            for token in sentence:
                counts[token] = counts.get(token, 0) + 1
        by_class = {}
        for token in sorted(self.inventory.excluded):
            by_class.setdefault(self.ne_classes.get(token, ""), []).append(token)
        targets = {token: self.ne_classes.get(token, "") for token in self.inventory.tokens}
        return select_candidates(
            targets, by_class, counts, s.augmentation.k, s.augmentation.strategy, s.seed
        )

    def augmented_lm(self, letter_features):
        a = self.settings.augmentation
        base = self.neural_lm(letter_features)
        plans = build_plans(
            self.inventory, self.candidate_map(), a.k, a.theta_rare, a.theta_oov, vocab=base.vocab
        )
        return augment_embeddings(base, plans)

    def score(self, hypotheses):
        """WER and NE-WER of one system's 1-best output."""
        hyps = {lat.utterance_id: list(hyp.words) for lat, hyp in zip(self.lattices, hypotheses)}
        pairs = pair_transcripts(self.references, hyps)
        result = ne_wer(pairs, self.inventory)
        return {
            "wer": wer(pairs),
            "ne_wer": result.overall,
            "ne_wer_rare": result.rare,
            "ne_wer_oov": result.oov,
            "e_ne": result.e_ne,
            "n_ne": result.n_ne,
        }

    def run(self):
        """
        Build and score every enabled system.

        Returns:
            AblationReport: Rows numbered in ladder order
        """
        if self.lattices is None:
            self.load_inputs()
        s = self.settings
        scales = s.scales
        ne_tokens = set(self.ne_classes)
        rows = []
        lattices_of = {}

        def add(key, label, parent_key, lattices, hypotheses=None):
            if hypotheses is None:
                hypotheses = self._map(lambda lat: best_path(lat, scales), lattices)
            parent = next((r.number for r in rows if r.key == parent_key), None)
            row = AblationRow(len(rows) + 1, key, label, parent, **self.score(hypotheses))
            rows.append(row)
            lattices_of[key] = lattices
            logger.info(f"Row {row.number} {label}: WER={row.wer:.2f} NE-WER={format_rate(row.ne_wer, 2)}")

        def boost(key, label, parent_key):
            hypotheses = self._map(
                lambda lat: boosted_best_path(lat, ne_tokens, s.boost.bonus, scales),
                lattices_of[parent_key],
            )
            add(key, label, parent_key, lattices_of[parent_key], hypotheses)

        lexicon = self.lexicon
        kn, first_pass, baseline = self.first_pass(lexicon)
        add("baseline", "Baseline 1-best", None, baseline)
        top = "baseline"
        if s.stage_lexicon:
            lexicon, added = self.expanded_lexicon()
            logger.info(f"Expanded lexicon adds {len(added)} test OOV NEs")
            kn, first_pass, expanded = self.first_pass(lexicon)
            add("lexicon", "+ Expanded lexicon", "baseline", expanded)
            top = "lexicon"

        neural = []
        if s.stage_nlm:
            variants = [(False, "nlm", "+ Neural LM")]
            if s.stage_letter_features:
                variants.append((True, "letters", "+ Neural LM, letter features"))
            for letters, key, label in variants:
                lm = self.neural_lm(letters)
                self.check_vocabulary(lexicon, "neural LM", lm.vocab)
                add(key, label, top, self._rescore(first_pass, kn, lm, s.interpolation.kn_weight))
                neural.append(key)
            if s.stage_augment:
                for letters, key, label in variants:
                    lm = self.augmented_lm(letters)
                    lattices = self._rescore(first_pass, kn, lm, s.interpolation.kn_weight)
                    add(f"{key}+augment", f"{label}, augmentation", key, lattices)
                    neural.append(f"{key}+augment")

        if s.stage_boost:
            for key in neural or [top]:
                label = next(r.label for r in rows if r.key == key)
                boost(f"{key}+boost", f"{label}, boosting", key)

        logger.info(f"Ablation finished with {len(rows)} rows")
        return AblationReport(rows)


def run_pipeline(config):
    """
    Run the ablation ladder.

    Args:
        config: Path of a key=value config file, or PipelineSettings

    Returns:
        AblationReport: One row per enabled system
    """
    settings = config if isinstance(config, PipelineSettings) else load_settings(config)
    return PipelineManager(settings).run()


def check_acceptance(report):
    """
    Compare a full ladder against the expected stage effects.

    Returns:
        list: Descriptions of the margins that do not hold (empty when all do)
    """
    failures = []
    need = ["baseline", "lexicon", "nlm", "nlm+augment", "nlm+augment+boost"]
    missing = [key for key in need if report.row(key) is None]
    if missing:
        return [f"rows missing: {', '.join(missing)}"]
    baseline, lexicon = report.row("baseline"), report.row("lexicon")
    nlm, augmented, boosted = report.row("nlm"), report.row("nlm+augment"), report.row("nlm+augment+boost")

    if baseline.ne_wer_oov is None or baseline.ne_wer_oov < MIN_BASELINE_OOV_NE_WER:
        failures.append(f"baseline oov NE-WER {baseline.ne_wer_oov} below {MIN_BASELINE_OOV_NE_WER}")
    if lexicon.ne_wer_oov is None or not lexicon.ne_wer_oov < baseline.ne_wer_oov:
        failures.append("expanded lexicon does not reduce oov NE-WER")
    if None in (nlm.ne_wer, augmented.ne_wer, boosted.ne_wer):
        return failures + ["test set has no underrepresented NE occurrences"]
    if not augmented.ne_wer <= (1 - MIN_AUGMENT_RELATIVE_GAIN) * nlm.ne_wer:
        failures.append(f"augmentation gain too small ({nlm.ne_wer} -> {augmented.ne_wer})")
    if not boosted.ne_wer < augmented.ne_wer:
        failures.append(f"boosting does not reduce NE-WER ({augmented.ne_wer} -> {boosted.ne_wer})")
    for row in report.rows:
        if row.parent is None:
            continue
        parent = report.by_number(row.parent)
        if row.wer - parent.wer > MAX_WER_INCREASE:
            failures.append(f"row {row.number} raises WER by {row.wer - parent.wer:.2f}")
    return failures
