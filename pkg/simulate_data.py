"""
Synthetic corpora and lattices with underrepresented named entities.

Sentences come from a small template grammar. NE slots take pseudo-word
names of two classes (places and persons); each class has frequent names
(seen at least ``threshold`` times in training, used as augmentation
candidates), rare names (seen 1 to threshold-1 times) and oov names
(never seen). Test lattices are sausages: the reference word on every
position plus ``confusion_depth`` common-word competitors at each
rare/oov NE position, so the reference is always reachable.

Grammar:

    place:   please take me to {place} | i want to go to {place} today
             the bus to {place} is late | we live near {place} station
             how far is {place} from here | is there a train to {place}
    person:  have you seen {person} today | {person} is my neighbour
             please call {person} now | i met {person} at the market
             my friend {person} works in the city
    mixed:   {person} lives near {place} | ask {person} about {place}
    filler:  {subject} {verb} the {object} {time}
"""

import math
import shutil
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from augment import select_candidates, write_candidate_map
from data_processing import write_corpus, write_lattice_file, write_ne_list, write_transcripts
from lattice import Arc, Lattice, Node
from pipeline import check_acceptance, run_pipeline
from settings import write_settings
from utils import get_logger

logger = get_logger(__name__)

PLACE = "place"
PERSON = "person"
CLASSES = (PLACE, PERSON)

TEMPLATES = {
    PLACE: (
        "please take me to {place}",
        "i want to go to {place} today",
        "the bus to {place} is late",
        "we live near {place} station",
        "how far is {place} from here",
        "is there a train to {place}",
    ),
    PERSON: (
        "have you seen {person} today",
        "{person} is my neighbour",
        "please call {person} now",
        "i met {person} at the market",
        "my friend {person} works in the city",
    ),
}
MIXED_TEMPLATES = ("{person} lives near {place}", "ask {person} about {place}")

SUBJECTS = ("i", "we", "they", "you")
VERBS = ("like", "need", "want", "see", "bring", "keep")
OBJECTS = ("food", "book", "ticket", "bag", "water", "phone", "car", "map")
TIMES = ("today", "now", "again", "later", "tonight")
COMPETITOR_WORDS = OBJECTS + TIMES

SYLLABLES = (
    "ba", "be", "bo", "da", "de", "ka", "ke", "ku", "la", "li", "lo", "ma", "me",
    "na", "ni", "pa", "pe", "ra", "ri", "sa", "se", "ta", "to", "wa", "ya", "ju",
    "so", "ho", "gi", "fa",
)
SUFFIXES = {PLACE: ("ok", "ang", "ong", "ah"), PERSON: ("ina", "an", "ei", "yu")}

PRESET_NAME = "paper-ablation"
FIXTURE_FILES = ("train.txt", "test.ref", "test.lat", "ne_list.txt", "candidates.txt", "ablation.conf")

# Pipeline knobs written into the preset config next to the file paths
PRESET_PIPELINE_SETTINGS = {
    "nlm_dim": 24,
    "nlm_epochs": 8,
    "letter_slots": 2000,
}


class SynthConfigError(ValueError):
    """Raised for inconsistent generator settings."""


@dataclass(frozen=True)
class SynthConfig:
    """
    Generator settings.

    Acoustic scores are raw log-likelihoods (scaled by acoustic_scale when
    searched). At an NE slot every competitor scores the reference score
    minus a per-slot margin drawn uniformly from [margin_low, margin_high],
    plus Gaussian jitter of spread ``jitter`` clipped at three sigma.
    """

    seed: int = 1
    frequent_per_class: int = 6
    num_rare: int = 10
    num_oov: int = 10
    threshold: int = 10
    frequent_count: int = 15
    filler_sentences: int = 150
    test_occurrences: int = 3
    test_filler_sentences: int = 120
    confusion_depth: int = 2
    margin_low: float = -80.0
    margin_high: float = 120.0
    jitter: float = 10.0
    multiword_rate: float = 0.2

    def __post_init__(self):
        if self.threshold < 2:
            raise SynthConfigError(
                f"threshold must be >= 2 so rare counts in [1, threshold) exist, got {self.threshold}"
            )
        if self.frequent_per_class < 1:
            raise SynthConfigError("frequent_per_class must be >= 1")
        if self.num_rare < 0 or self.num_oov < 0:
            raise SynthConfigError("NE counts must be >= 0")
        if self.frequent_count < self.threshold:
            raise SynthConfigError(
                f"frequent_count ({self.frequent_count}) must reach the threshold ({self.threshold})"
            )
        if self.test_occurrences < 2:
            raise SynthConfigError("every test NE must occur at least twice")
        if not 1 <= self.confusion_depth <= len(COMPETITOR_WORDS):
            raise SynthConfigError(f"confusion_depth must lie in [1, {len(COMPETITOR_WORDS)}]")
        if self.filler_sentences < 0 or self.test_filler_sentences < 0:
            raise SynthConfigError("filler sentence counts must be >= 0")
        if not (math.isfinite(self.margin_low) and math.isfinite(self.margin_high)):
            raise SynthConfigError("margins must be finite")
        if self.margin_low > self.margin_high:
            raise SynthConfigError("margin_low must not exceed margin_high")
        if not (math.isfinite(self.jitter) and self.jitter >= 0):
            raise SynthConfigError(f"jitter must be finite and >= 0, got {self.jitter}")
        if not 0.0 <= self.multiword_rate <= 1.0:
            raise SynthConfigError("multiword_rate must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticCorpus:
    train: tuple
    test: tuple
    ne_classes: dict
    frequent: tuple
    rare: tuple
    oov: tuple
    rare_counts: dict

    @property
    def underrepresented(self):
        return frozenset(self.rare) | frozenset(self.oov)


def _make_name(rng, category, taken):
    while True:
        size = 2 if rng.random() < 0.5 else 1
        name = "".join(rng.choice(SYLLABLES, size=size)) + str(rng.choice(SUFFIXES[category]))
        if name not in taken:
            return name


def generate_names(rng, category, count, taken, multiword_rate=0.0):
    """Distinct pseudo-word names of one class; some are two underscore-joined parts."""
    names = []
    while len(names) < count:
        first = _make_name(rng, category, taken)
        if rng.random() < multiword_rate:
            second = _make_name(rng, category, taken | {first})
            name = f"{first}_{second}"
        else:
            name = first
        if name in taken:
            continue
        taken.add(name)
        names.append(name)
    return names


def _fill(template, rng, slot_class, name, frequent_by_class):
    values = {}
    for category in CLASSES:
        if "{" + category + "}" not in template:
            continue
        if category == slot_class:
            values[category] = name
        else:
            values[category] = str(rng.choice(frequent_by_class[category]))
    return template.format(**values).split()


def _templates_for(category):
    return TEMPLATES[category] + MIXED_TEMPLATES


def _sentence_with(rng, category, name, frequent_by_class):
    templates = _templates_for(category)
    template = templates[int(rng.integers(len(templates)))]
    return _fill(template, rng, category, name, frequent_by_class)


def filler_sentence(rng):
    return [
        str(rng.choice(SUBJECTS)),
        str(rng.choice(VERBS)),
        "the",
        str(rng.choice(OBJECTS)),
        str(rng.choice(TIMES)),
    ]


def generate_corpus(cfg):
    """
    Train and test splits with a known rare/oov partition.

    Args:
        cfg: SynthConfig

    Returns:
        SyntheticCorpus: train sentences, test (utt_id, tokens) pairs and
        the NE classes; identical for identical configs
    """
    rng = np.random.default_rng(cfg.seed)
    taken = set(SUBJECTS + VERBS + OBJECTS + TIMES)
    for template in TEMPLATES[PLACE] + TEMPLATES[PERSON] + MIXED_TEMPLATES:
        taken.update(w for w in template.split() if not w.startswith("{"))

    ne_classes = {}
    frequent_by_class = {}
    for category in CLASSES:
        names = generate_names(rng, category, cfg.frequent_per_class, taken, cfg.multiword_rate)
        frequent_by_class[category] = names
        ne_classes.update((n, category) for n in names)
    rare = []
    oov = []
    for i in range(cfg.num_rare):
        category = CLASSES[i % 2]
        name = generate_names(rng, category, 1, taken, cfg.multiword_rate)[0]
        rare.append(name)
        ne_classes[name] = category
    for i in range(cfg.num_oov):
        category = CLASSES[i % 2]
        name = generate_names(rng, category, 1, taken, cfg.multiword_rate)[0]
        oov.append(name)
        ne_classes[name] = category

    train = []
    for category in CLASSES:
        for name in frequent_by_class[category]:
            for _ in range(cfg.frequent_count):
                train.append(_sentence_with(rng, category, name, frequent_by_class))
    rare_counts = {}
    for name in rare:
        rare_counts[name] = int(rng.integers(1, cfg.threshold))
        for _ in range(rare_counts[name]):
            train.append(_sentence_with(rng, ne_classes[name], name, frequent_by_class))
    train.extend(filler_sentence(rng) for _ in range(cfg.filler_sentences))
    train = [train[i] for i in rng.permutation(len(train))]

    test = []
    for name in rare + oov:
        for _ in range(cfg.test_occurrences):
            test.append(_sentence_with(rng, ne_classes[name], name, frequent_by_class))
    test.extend(filler_sentence(rng) for _ in range(cfg.test_filler_sentences))
    test = [test[i] for i in rng.permutation(len(test))]
    width = len(str(len(test)))
    test = tuple((f"test{i:0{width}d}", tuple(tokens)) for i, tokens in enumerate(test))

    logger.info(
        f"Synthetic corpus: {len(train)} train / {len(test)} test sentences, "
        f"{len(rare)} rare and {len(oov)} oov NEs"
    )
    return SyntheticCorpus(
        tuple(tuple(s) for s in train),
        test,
        ne_classes,
        tuple(n for c in CLASSES for n in frequent_by_class[c]),
        tuple(rare),
        tuple(oov),
        rare_counts,
    )


def generate_lattices(test, cfg, ne_tokens):
    """
    One sausage lattice per test sentence.

    Args:
        test: (utt_id, tokens) pairs
        cfg: SynthConfig
        ne_tokens: Tokens whose positions receive competitor arcs

    Returns:
        list: Lattice objects; LM scores are zero until a first pass fills them
    """
    rng = np.random.default_rng([cfg.seed, 1])
    ne_tokens = set(ne_tokens)
    lattices = []
    for utt, tokens in test:
        nodes = [Node(0, 0)]
        arcs = []
        time = 0
        for i, word in enumerate(tokens):
            time += 8 + 4 * len(word)
            nodes.append(Node(i + 1, time))
            reference = -float(rng.uniform(30.0, 60.0))
            arcs.append(Arc(i, i + 1, word, reference, 0.0))
            if word not in ne_tokens:
                continue
            margin = float(rng.uniform(cfg.margin_low, cfg.margin_high))
            pool = [w for w in COMPETITOR_WORDS if w != word]
            for competitor in rng.choice(pool, size=cfg.confusion_depth, replace=False):
                noise = float(np.clip(rng.normal(0.0, cfg.jitter), -3 * cfg.jitter, 3 * cfg.jitter))
                arcs.append(Arc(i, i + 1, str(competitor), reference - margin + noise, 0.0))
        lattices.append(Lattice(utt, nodes, arcs, 0, frozenset({len(tokens)})))
    return lattices


def write_fixture(out_dir, cfg, pipeline_overrides=None):
    """
    Write a complete experiment directory.

    Files: train.txt, test.ref, test.lat, ne_list.txt, candidates.txt and
    ablation.conf (paths relative to the directory).

    Returns:
        Path: The config file
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(cfg)
    lattices = generate_lattices(corpus.test, cfg, corpus.underrepresented)

    write_corpus(corpus.train, out / "train.txt")
    write_transcripts(dict(corpus.test), out / "test.ref")
    write_lattice_file(lattices, out / "test.lat")
    write_ne_list(corpus.ne_classes, out / "ne_list.txt")

    counts = {}
    for sentence in corpus.train:
        for token in sentence:
            counts[token] = counts.get(token, 0) + 1
    frequent_by_class = {c: [n for n in corpus.frequent if corpus.ne_classes[n] == c] for c in CLASSES}
    targets = {n: corpus.ne_classes[n] for n in corpus.rare + corpus.oov}
    k = min(5, cfg.frequent_per_class)
    write_candidate_map(select_candidates(targets, frequent_by_class, counts, k=k), out / "candidates.txt")

    values = {
        "train_corpus": "train.txt",
        "test_references": "test.ref",
        "lattices": "test.lat",
        "ne_list": "ne_list.txt",
        "candidate_map": "candidates.txt",
        "seed": cfg.seed,
        "frequency_threshold": cfg.threshold,
        "num_candidates": k,
    }
    values.update(pipeline_overrides or {})
    conf = out / "ablation.conf"
    write_settings(conf, values)
    logger.info(f"Wrote synthetic fixture to {out}")
    return conf


def build_ablation_preset(out_dir, cfg=None, attempts=5):
    """
    Write the ablation fixture, moving to the next seed until it shows the
    expected ladder effects.

    Args:
        out_dir: Target directory; only the fixture files in it are overwritten
        cfg: SynthConfig to start from
        attempts: Number of seeds tried

    Returns:
        tuple: (config path, AblationReport of the accepted fixture)
    """
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for attempt in range(attempts):
        candidate = replace(cfg, seed=cfg.seed + attempt)
        staging = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
        try:
            report = run_pipeline(write_fixture(staging, candidate, PRESET_PIPELINE_SETTINGS))
            failures = check_acceptance(report)
            if not failures:
                for name in FIXTURE_FILES:
                    (staging / name).replace(out / name)
                logger.info(f"Preset accepted with seed {candidate.seed}")
                return out / "ablation.conf", report
        finally:
            shutil.rmtree(staging, ignore_errors=True)
        logger.warning(f"Seed {candidate.seed} misses {'; '.join(failures)}; regenerating")
    raise SynthConfigError(f"No seed in {attempts} attempts produced the expected ablation effects")
