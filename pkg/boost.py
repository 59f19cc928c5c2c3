"""
Inverted lattice index and NE score boosting.

Every non-epsilon arc of every indexed lattice becomes one entry holding
its word, time span and log posterior. Boosting adds a natural-log bonus
to the entries of NE words; regenerating a lattice moves that bonus onto
the arc LM scores so a plain best-path search picks it up.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from lattice import arc_log_posteriors, best_path
from utils import get_logger

logger = get_logger(__name__)


class BoostError(ValueError):
    """Raised for invalid bonuses, index files and dangling arc references."""


@dataclass(frozen=True)
class IndexEntry:
    word: str
    utterance_id: str
    start: int
    end: int
    log_posterior: float
    arc_index: int
    bonus: float = 0.0

    def __post_init__(self):
        if self.start > self.end:
            raise BoostError(f"{self.word}@{self.utterance_id}: start {self.start} after end {self.end}")
        if not math.isfinite(self.log_posterior):
            raise BoostError(f"{self.word}@{self.utterance_id}: non-finite log posterior")

    @property
    def arc_ref(self):
        return self.utterance_id, self.arc_index

    @property
    def posterior(self):
        return math.exp(self.log_posterior)

    @property
    def sort_key(self):
        return self.utterance_id, self.start, self.end, self.arc_index


class InvertedIndex:
    """Word -> entries sorted by (utterance, start, end, arc index)."""

    def __init__(self, entries=()):
        grouped = {}
        for entry in entries:
            grouped.setdefault(entry.word, []).append(entry)
        self._entries = {
            word: tuple(sorted(items, key=lambda e: e.sort_key)) for word, items in grouped.items()
        }

    def __contains__(self, word):
        return word in self._entries

    def __len__(self):
        return sum(len(items) for items in self._entries.values())

    def __eq__(self, other):
        return isinstance(other, InvertedIndex) and self._entries == other._entries

    def get(self, word):
        return self._entries.get(word, ())

    @property
    def words(self):
        return sorted(self._entries)

    def entries(self):
        """All entries, grouped by word in sorted word order."""
        for word in self.words:
            yield from self._entries[word]


def _lattice_entries(lat, scales):
    log_post, _ = arc_log_posteriors(lat, scales)
    times = lat.node_times
    entries = []
    for i, arc in enumerate(lat.arcs):
        if arc.is_epsilon:
            continue
        # Arcs on no start-to-final path have zero posterior
        if not math.isfinite(log_post[i]):
            logger.debug(f"{lat.utterance_id}: skipping unreachable arc {i} ({arc.word})")
            continue
        entries.append(
            IndexEntry(arc.word, lat.utterance_id, times[arc.source], times[arc.target], float(log_post[i]), i)
        )
    return entries


def build_index(lattices, scales, jobs=1):
    """
    Index the arcs of a set of lattices.

    Args:
        lattices: Lattices with distinct utterance ids
        scales: ScaleConfig used for the posteriors
        jobs: Worker threads; lattices are processed independently

    Returns:
        InvertedIndex: One entry per non-epsilon arc on a start-to-final path
    """
    lattices = list(lattices)
    ids = [lat.utterance_id for lat in lattices]
    if len(set(ids)) != len(ids):
        raise BoostError("Duplicate utterance ids in the lattice set")
    if jobs <= 1:
        per_lattice = [_lattice_entries(lat, scales) for lat in lattices]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_lattice = list(pool.map(lambda lat: _lattice_entries(lat, scales), lattices))
    index = InvertedIndex(entry for entries in per_lattice for entry in entries)
    logger.info(f"Indexed {len(index)} arcs of {len(lattices)} lattices ({len(index.words)} words)")
    return index


def search(index, query):
    """Entries of one word, sorted; empty when the word is not indexed."""
    return list(index.get(query))


def boost_index(index, ne_set, bonus):
    """
    Add a log-domain bonus to the entries of NE words.

    Args:
        index: InvertedIndex
        ne_set: NE tokens (multi-word NEs underscore-joined)
        bonus: Natural-log bonus, finite and >= 0

    Returns:
        InvertedIndex: New index; non-NE entries are the same objects
    """
    if not (math.isfinite(bonus) and bonus >= 0):
        raise BoostError(f"bonus must be finite and >= 0, got {bonus}")
    ne_set = set(ne_set)
    boosted = []
    hits = 0
    for entry in index.entries():
        if entry.word in ne_set and bonus > 0:
            boosted.append(
                replace(entry, log_posterior=entry.log_posterior + bonus, bonus=entry.bonus + bonus)
            )
            hits += 1
        else:
            boosted.append(entry)
    logger.info(f"Boosted {hits} NE entries by {bonus:.4f}")
    return InvertedIndex(boosted)


def regenerate_lattice(lat, boosted, scales):
    """
    Move index bonuses onto the lattice's LM scores.

    Each boosted arc gets lm_score += bonus / lm_scale, so its combined
    weight grows by exactly the bonus. Structure and acoustic scores are
    unchanged.

    Args:
        lat: Lattice the index was built from
        boosted: InvertedIndex after boost_index
        scales: ScaleConfig the search will use

    Returns:
        Lattice: Regenerated lattice (the input itself when nothing applies)
    """
    bonuses = {}
    for entry in boosted.entries():
        if entry.utterance_id != lat.utterance_id or entry.bonus == 0.0:
            continue
        if not 0 <= entry.arc_index < len(lat.arcs) or lat.arcs[entry.arc_index].word != entry.word:
            raise BoostError(
                f"{lat.utterance_id}: dangling index entry for {entry.word!r} at arc {entry.arc_index}"
            )
        bonuses[entry.arc_index] = bonuses.get(entry.arc_index, 0.0) + entry.bonus
    if not bonuses:
        return lat
    arcs = list(lat.arcs)
    for i, bonus in bonuses.items():
        arcs[i] = replace(arcs[i], lm_score=arcs[i].lm_score + bonus / scales.lm_scale)
    return replace(lat, arcs=arcs)


def boosted_best_path(lat, ne_set, bonus, scales):
    """Best path after indexing, boosting and regenerating one lattice."""
    boosted = boost_index(build_index([lat], scales), ne_set, bonus)
    return best_path(regenerate_lattice(lat, boosted, scales), scales)


def format_index(index):
    """Index file text; the bonus column is written only when non-zero."""
    lines = []
    for entry in index.entries():
        fields = [
            entry.word,
            entry.utterance_id,
            str(entry.start),
            str(entry.end),
            format(entry.log_posterior, ".9g"),
            str(entry.arc_index),
        ]
        if entry.bonus:
            fields.append(format(entry.bonus, ".9g"))
        lines.append("\t".join(fields))
    return "".join(line + "\n" for line in lines)


def parse_index(text):
    entries = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (6, 7):
            raise BoostError(f"line {line_no}: expected 6 or 7 tab-separated fields, got {len(fields)}")
        try:
            entries.append(
                IndexEntry(
                    fields[0],
                    fields[1],
                    int(fields[2]),
                    int(fields[3]),
                    float(fields[4]),
                    int(fields[5]),
                    float(fields[6]) if len(fields) == 7 else 0.0,
                )
            )
        except ValueError as e:
            raise BoostError(f"line {line_no}: {e}") from e
    return InvertedIndex(entries)


def read_index(path):
    return parse_index(Path(path).read_text(encoding="utf-8"))


def write_index(index, path):
    Path(path).write_text(format_index(index), encoding="utf-8")


def read_ne_set(path):
    """One NE token per line; blank lines and # comments ignored."""
    tokens = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            tokens.add(line.split()[0])
    return tokens


def write_ne_set(tokens, path):
    Path(path).write_text("".join(f"{t}\n" for t in sorted(tokens)), encoding="utf-8")
