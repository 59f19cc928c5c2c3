"""
Training-free enrichment of NE embeddings in a pretrained neural LM.

Each underrepresented NE gets a row built from its own (possibly zero)
embedding and the mean embedding of k frequent words of the same class:

    E[target] := theta * E[target] + mean(E[c] for c in candidates)

Because E is tied, the change affects both how the NE is read and how
strongly it is predicted.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from neural_lm import extend_vocabulary
from utils import get_logger

logger = get_logger(__name__)

STRATEGIES = ("frequent", "random")


class AugmentationError(ValueError):
    """Raised for inconsistent plans, candidate maps and plan files."""


@dataclass(frozen=True)
class AugmentationPlan:
    target: str
    candidates: tuple
    theta: float
    category: str = ""

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise AugmentationError(f"No candidates for {self.target!r}")
        if self.target in self.candidates:
            raise AugmentationError(f"{self.target!r} is listed as its own candidate")
        if not (np.isfinite(self.theta) and self.theta >= 0):
            raise AugmentationError(f"theta must be finite and >= 0, got {self.theta}")


def build_plans(inventory, candidate_map, k=5, theta_rare=0.09, theta_oov=0.01, vocab=None):
    """
    One augmentation plan per underrepresented NE.

    Args:
        inventory: NEInventory with the rare and oov NEs
        candidate_map: NE token -> ranked candidate tokens
        k: Number of candidates used per NE (the first k of the ranking)
        theta_rare: Scaling factor for rare NEs
        theta_oov: Scaling factor for oov NEs
        vocab: Optional LM vocabulary every candidate must belong to

    Returns:
        list: AugmentationPlan objects sorted by target
    """
    if k < 1:
        raise AugmentationError(f"k must be >= 1, got {k}")
    known = set(vocab) if vocab is not None else None
    plans = []
    for target in sorted(inventory.tokens):
        candidates = list(candidate_map.get(target, ()))
        if len(candidates) < k:
            raise AugmentationError(
                f"{target!r} has {len(candidates)} candidates, {k} are required"
            )
        candidates = candidates[:k]
        if known is not None:
            missing = [c for c in candidates if c not in known]
            if missing:
                raise AugmentationError(f"Candidates of {target!r} outside the LM vocabulary: {missing}")
        category = inventory.category(target)
        theta = theta_rare if category == "rare" else theta_oov
        plans.append(AugmentationPlan(target, candidates, theta, category))
    logger.info(f"Built {len(plans)} augmentation plans (k={k})")
    return plans


def augment_embeddings(lm, plans):
    """
    Apply plans to a copy of the model.

    Candidate rows are read from the input model, so the result does not
    depend on plan order. Targets missing from the vocabulary are appended
    with a zero row first.

    Args:
        lm: NeuralLM to enrich (left untouched)
        plans: AugmentationPlan list with distinct targets

    Returns:
        NeuralLM: Model with the target rows replaced
    """
    targets = [plan.target for plan in plans]
    duplicates = sorted({t for t in targets if targets.count(t) > 1})
    if duplicates:
        raise AugmentationError(f"Duplicate augmentation targets: {duplicates}")
    known = set(lm.vocab)
    for plan in plans:
        missing = [c for c in plan.candidates if c not in known]
        if missing:
            raise AugmentationError(f"Candidates of {plan.target!r} outside the LM vocabulary: {missing}")

    augmented = extend_vocabulary(lm, targets)
    snapshot = augmented.E.copy()
    for plan in plans:
        row = augmented.index(plan.target)
        rows = [augmented.index(c) for c in plan.candidates]
        augmented.E[row] = plan.theta * snapshot[row] + snapshot[rows].mean(axis=0)
    logger.info(f"Augmented {len(plans)} embedding rows")
    return augmented


def select_candidates(ne_categories, category_words, counts, k=5, strategy="frequent", seed=1):
    """
    Pick k same-class candidate words for each NE.

    Args:
        ne_categories: NE token -> class label
        category_words: class label -> words of that class usable as candidates
        counts: Train-set token counts
        k: Candidates per NE
        strategy: "frequent" takes the k most frequent words (ties by token);
            "random" draws k of them with a seeded generator
        seed: Seed of the "random" strategy

    Returns:
        dict: NE token -> candidate list
    """
    if strategy not in STRATEGIES:
        raise AugmentationError(f"Unknown candidate strategy: {strategy}")
    rng = np.random.default_rng(seed)
    mapping = {}
    for ne in sorted(ne_categories):
        category = ne_categories[ne]
        pool = [w for w in category_words.get(category, ()) if w != ne and counts.get(w, 0) > 0]
        pool = sorted(set(pool), key=lambda w: (-counts[w], w))
        if len(pool) < k:
            raise AugmentationError(
                f"Class {category!r} offers {len(pool)} candidates for {ne!r}, {k} are required"
            )
        if strategy == "frequent":
            mapping[ne] = pool[:k]
        else:
            picks = rng.choice(len(pool), size=k, replace=False)
            mapping[ne] = [pool[i] for i in sorted(picks)]
    return mapping


def format_candidate_map(mapping):
    return "".join(f"{ne}\t{' '.join(cands)}\n" for ne, cands in sorted(mapping.items()))


def parse_candidate_map(text):
    """Parse ``ne<TAB>cand1 cand2 ...`` lines."""
    mapping = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip():
            raise AugmentationError(f"line {line_no}: expected 'ne<TAB>candidates'")
        ne = parts[0].strip()
        if ne in mapping:
            raise AugmentationError(f"line {line_no}: duplicate entry for {ne!r}")
        mapping[ne] = parts[1].split()
    return mapping


def read_candidate_map(path):
    return parse_candidate_map(Path(path).read_text(encoding="utf-8"))


def write_candidate_map(mapping, path):
    Path(path).write_text(format_candidate_map(mapping), encoding="utf-8")


def format_plans(plans):
    """Plan dump: ``target<TAB>class<TAB>theta<TAB>candidates`` per line."""
    lines = ["# target\tclass\ttheta\tcandidates"]
    for plan in plans:
        lines.append(f"{plan.target}\t{plan.category}\t{plan.theta:g}\t{' '.join(plan.candidates)}")
    return "\n".join(lines) + "\n"


def write_plans(plans, path):
    Path(path).write_text(format_plans(plans), encoding="utf-8")
