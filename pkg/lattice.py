"""
Word lattices: data model, text format and log-semiring dynamic programming.

A lattice is an acyclic graph whose arcs carry a word plus natural-log
acoustic and LM scores. Arc weights are combined as
``acoustic_scale * acoustic_score + lm_scale * lm_score`` and paths are
scored by summing combined weights in path order.
"""

import heapq
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from settings import ScaleConfig
from utils import get_logger

logger = get_logger(__name__)

EPSILON = "<eps>"


class LatticeError(ValueError):
    """Raised for malformed lattices and failed lattice searches."""


@dataclass(frozen=True)
class Node:
    id: int
    time: int = 0


@dataclass(frozen=True)
class Arc:
    source: int
    target: int
    word: str
    acoustic_score: float
    lm_score: float

    @property
    def is_epsilon(self):
        return self.word == EPSILON


@dataclass(frozen=True)
class Hypothesis:
    """One lattice path with epsilon words removed."""

    words: tuple
    total_score: float
    word_times: tuple = ()
    arcs: tuple = ()
    acoustic_score: float = 0.0
    lm_score: float = 0.0


@dataclass(frozen=True)
class Lattice:
    utterance_id: str
    nodes: tuple
    arcs: tuple
    start_node: int
    final_nodes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "arcs", tuple(self.arcs))
        object.__setattr__(self, "final_nodes", frozenset(self.final_nodes))
        self._validate()

    def _validate(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise LatticeError(f"{self.utterance_id}: duplicate node ids")
        known = set(ids)
        if self.start_node not in known:
            raise LatticeError(f"{self.utterance_id}: start node {self.start_node} is not a node")
        for node_id in self.final_nodes:
            if node_id not in known:
                raise LatticeError(f"{self.utterance_id}: dangling final node {node_id}")
        if self.start_node in self.final_nodes:
            raise LatticeError(f"{self.utterance_id}: start node cannot be final")
        for node in self.nodes:
            if node.time < 0:
                raise LatticeError(f"{self.utterance_id}: negative time on node {node.id}")
        times = self.node_times
        for index, arc in enumerate(self.arcs):
            if arc.source not in known or arc.target not in known:
                raise LatticeError(f"{self.utterance_id}: arc {index} references a dangling node id")
            if not (math.isfinite(arc.acoustic_score) and math.isfinite(arc.lm_score)):
                raise LatticeError(f"{self.utterance_id}: arc {index} has a non-finite score")
            if times[arc.target] < times[arc.source]:
                raise LatticeError(
                    f"{self.utterance_id}: arc {index} goes back in time "
                    f"({times[arc.source]} -> {times[arc.target]})"
                )
        # Raises on cycles
        self.topological_order

    @cached_property
    def node_times(self):
        return {n.id: n.time for n in self.nodes}

    @cached_property
    def outgoing(self):
        out = {n.id: [] for n in self.nodes}
        for index, arc in enumerate(self.arcs):
            out[arc.source].append(index)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def incoming(self):
        inc = {n.id: [] for n in self.nodes}
        for index, arc in enumerate(self.arcs):
            inc[arc.target].append(index)
        return {k: tuple(v) for k, v in inc.items()}

    @cached_property
    def topological_order(self):
        """Node ids in topological order, smallest id first among ready nodes."""
        indegree = {n.id: 0 for n in self.nodes}
        for arc in self.arcs:
            indegree[arc.target] += 1
        ready = [node_id for node_id, deg in indegree.items() if deg == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            node_id = heapq.heappop(ready)
            order.append(node_id)
            for index in self.outgoing[node_id]:
                target = self.arcs[index].target
                indegree[target] -= 1
                if indegree[target] == 0:
                    heapq.heappush(ready, target)
        if len(order) != len(self.nodes):
            raise LatticeError(f"{self.utterance_id}: cycle detected")
        return tuple(order)

    @property
    def words(self):
        return sorted({arc.word for arc in self.arcs if not arc.is_epsilon})


def combined_arc_weight(arc, scales):
    """
    Combine the two arc scores under the given scales.

    Args:
        arc: Arc to score
        scales: ScaleConfig (or any object with acoustic_scale / lm_scale)

    Returns:
        float: acoustic_scale * acoustic_score + lm_scale * lm_score
    """
    _check_scales(scales)
    return scales.acoustic_scale * arc.acoustic_score + scales.lm_scale * arc.lm_score


def _check_scales(scales):
    for name in ("acoustic_scale", "lm_scale"):
        value = getattr(scales, name)
        if not (math.isfinite(value) and value > 0):
            raise LatticeError(f"{name} must be positive, got {value}")


def arc_weights(lat, scales):
    _check_scales(scales)
    if not lat.arcs:
        return np.zeros(0)
    ac = np.array([arc.acoustic_score for arc in lat.arcs], dtype=float)
    lm = np.array([arc.lm_score for arc in lat.arcs], dtype=float)
    return scales.acoustic_scale * ac + scales.lm_scale * lm


def _logsumexp(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return -math.inf
    peak = values.max()
    if peak == -math.inf:
        return -math.inf
    return float(peak + np.log(np.sum(np.exp(values - peak))))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def parse_lattices(text, default_id="utt"):
    """
    Parse every lattice block in a lattice text blob.

    Blocks are separated by blank lines. Each block holds an optional
    ``UTT <id>`` header, optional ``NODE <id> <frame>`` lines, arc lines
    ``src dst word acoustic_score lm_score`` and final-node lines ``<id>``.
    Lines starting with ``#`` are ignored.

    Args:
        text: Lattice text
        default_id: Utterance id prefix for blocks without a UTT header

    Returns:
        list: Parsed Lattice objects in file order
    """
    lattices = []
    block = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if not line:
            if block:
                lattices.append(_parse_block(block, f"{default_id}{len(lattices)}"))
                block = []
            continue
        block.append((line_no, line))
    if block:
        lattices.append(_parse_block(block, f"{default_id}{len(lattices)}"))
    return lattices


def parse_lattice(text):
    """Parse a text blob holding exactly one lattice."""
    lattices = parse_lattices(text)
    if not lattices:
        raise LatticeError("empty lattice: no arc lines found")
    if len(lattices) > 1:
        raise LatticeError(f"expected one lattice, found {len(lattices)}")
    return lattices[0]


def _parse_score(token, line_no):
    try:
        value = float(token)
    except ValueError:
        raise LatticeError(f"line {line_no}: score {token!r} is not a number")
    if not math.isfinite(value):
        raise LatticeError(f"line {line_no}: non-finite score {token!r}")
    return value


def _parse_node_id(token, line_no):
    try:
        value = int(token)
    except ValueError:
        raise LatticeError(f"line {line_no}: node id {token!r} is not an integer")
    if value < 0:
        raise LatticeError(f"line {line_no}: negative node id {value}")
    return value


def _parse_block(block, default_id):
    utterance_id = default_id
    explicit_times = {}
    arcs = []
    finals = {}
    first_line = block[0][0]

    for line_no, line in block:
        parts = line.split()
        if parts[0] == "UTT":
            if len(parts) != 2:
                raise LatticeError(f"line {line_no}: UTT header needs exactly one id")
            if arcs or finals or explicit_times:
                raise LatticeError(f"line {line_no}: UTT header must open the block")
            utterance_id = parts[1]
        elif parts[0] == "NODE":
            if len(parts) != 3:
                raise LatticeError(f"line {line_no}: NODE line must be 'NODE id frame'")
            node_id = _parse_node_id(parts[1], line_no)
            try:
                frame = int(parts[2])
            except ValueError:
                raise LatticeError(f"line {line_no}: frame {parts[2]!r} is not an integer")
            if frame < 0:
                raise LatticeError(f"line {line_no}: negative frame {frame}")
            if node_id in explicit_times:
                raise LatticeError(f"line {line_no}: duplicate NODE line for {node_id}")
            explicit_times[node_id] = (frame, line_no)
        elif len(parts) == 5:
            source = _parse_node_id(parts[0], line_no)
            target = _parse_node_id(parts[1], line_no)
            acoustic = _parse_score(parts[3], line_no)
            lm = _parse_score(parts[4], line_no)
            arcs.append(Arc(source, target, parts[2], acoustic, lm))
        elif len(parts) == 1:
            node_id = _parse_node_id(parts[0], line_no)
            finals.setdefault(node_id, line_no)
        else:
            raise LatticeError(f"line {line_no}: cannot parse {line!r}")

    if not arcs:
        raise LatticeError(f"line {first_line}: empty lattice {utterance_id}")
    if not finals:
        raise LatticeError(f"line {first_line}: lattice {utterance_id} has no final nodes")

    arc_nodes = set()
    for arc in arcs:
        arc_nodes.add(arc.source)
        arc_nodes.add(arc.target)
    for node_id, line_no in finals.items():
        if node_id not in arc_nodes:
            raise LatticeError(f"line {line_no}: dangling final node id {node_id}")
    for node_id, (_, line_no) in explicit_times.items():
        if node_id not in arc_nodes:
            raise LatticeError(f"line {line_no}: dangling NODE id {node_id}")

    times = _infer_times(arc_nodes, arcs, {k: v[0] for k, v in explicit_times.items()}, first_line)
    nodes = [Node(node_id, times[node_id]) for node_id in sorted(arc_nodes)]
    try:
        return Lattice(utterance_id, nodes, arcs, arcs[0].source, frozenset(finals))
    except LatticeError as e:
        raise LatticeError(f"line {first_line}: {e}")


def _infer_times(node_ids, arcs, explicit, first_line):
    """Fill missing node times with max(time(pred) + 1), sources at 0."""
    indegree = {n: 0 for n in node_ids}
    succ = {n: [] for n in node_ids}
    for arc in arcs:
        indegree[arc.target] += 1
        succ[arc.source].append(arc.target)
    times = {n: explicit.get(n, 0) for n in node_ids}
    inferred = {n: 0 for n in node_ids if n not in explicit}
    ready = sorted(n for n, d in indegree.items() if d == 0)
    seen = 0
    while ready:
        node = ready.pop()
        seen += 1
        for target in succ[node]:
            if target in inferred:
                inferred[target] = max(inferred[target], times[node] + 1)
                times[target] = inferred[target]
            indegree[target] -= 1
            if indegree[target] == 0:
                ready.append(target)
    if seen != len(node_ids):
        raise LatticeError(f"line {first_line}: cycle detected")
    return times


def _fmt(value):
    return format(value, ".9g")


def serialize_lattice(lat):
    """
    Write a lattice in the text format, NODE lines always included.

    Arcs leaving the start node are written first so the parser recovers the
    same start node; otherwise arc order is preserved.
    """
    lines = [f"UTT {lat.utterance_id}"]
    for node in sorted(lat.nodes, key=lambda n: n.id):
        lines.append(f"NODE {node.id} {node.time}")
    ordered = sorted(lat.arcs, key=lambda a: a.source != lat.start_node)
    for arc in ordered:
        lines.append(
            f"{arc.source} {arc.target} {arc.word} {_fmt(arc.acoustic_score)} {_fmt(arc.lm_score)}"
        )
    for node_id in sorted(lat.final_nodes):
        lines.append(str(node_id))
    return "\n".join(lines) + "\n"


def serialize_lattices(lattices):
    return "\n".join(serialize_lattice(lat) for lat in lattices)


# ---------------------------------------------------------------------------
# Structural operations
# ---------------------------------------------------------------------------


def connect(lat):
    """
    Drop nodes and arcs that lie on no start-to-final path.

    Raises:
        LatticeError: If no start-to-final path exists
    """
    forward = {lat.start_node}
    for node_id in lat.topological_order:
        if node_id in forward:
            for index in lat.outgoing[node_id]:
                forward.add(lat.arcs[index].target)
    backward = set(lat.final_nodes)
    for node_id in reversed(lat.topological_order):
        if node_id in backward:
            for index in lat.incoming[node_id]:
                backward.add(lat.arcs[index].source)
    keep = forward & backward
    if lat.start_node not in keep:
        raise LatticeError(f"{lat.utterance_id}: no start to final path")
    arcs = [a for a in lat.arcs if a.source in keep and a.target in keep]
    nodes = [n for n in lat.nodes if n.id in keep]
    return Lattice(lat.utterance_id, nodes, arcs, lat.start_node, lat.final_nodes & keep)


def restrict_vocabulary(lat, vocabulary):
    """
    Remove arcs whose word a decoder with this vocabulary could not emit.

    Args:
        lat: Input lattice
        vocabulary: Container of allowed words (epsilon always allowed)

    Returns:
        Lattice: Connected lattice over the allowed words
    """
    arcs = [a for a in lat.arcs if a.is_epsilon or a.word in vocabulary]
    dropped = len(lat.arcs) - len(arcs)
    if dropped:
        logger.debug(f"{lat.utterance_id}: dropped {dropped} out-of-vocabulary arcs")
    used = {a.source for a in arcs} | {a.target for a in arcs} | {lat.start_node}
    nodes = [n for n in lat.nodes if n.id in used]
    pruned = Lattice(lat.utterance_id, nodes, arcs, lat.start_node, lat.final_nodes & used)
    return connect(pruned)


def replace_lm_scores(lat, lm_scores):
    """Return a copy of the lattice with every arc's lm_score replaced."""
    if len(lm_scores) != len(lat.arcs):
        raise LatticeError(
            f"{lat.utterance_id}: got {len(lm_scores)} LM scores for {len(lat.arcs)} arcs"
        )
    arcs = [replace(arc, lm_score=float(score)) for arc, score in zip(lat.arcs, lm_scores)]
    return replace(lat, arcs=arcs)


def count_paths(lat):
    """Number of start-to-final paths (exact integer)."""
    counts = {}
    for node_id in reversed(lat.topological_order):
        total = 1 if node_id in lat.final_nodes else 0
        for index in lat.outgoing[node_id]:
            total += counts[lat.arcs[index].target]
        counts[node_id] = total
    return counts[lat.start_node]


# ---------------------------------------------------------------------------
# Dynamic programming
# ---------------------------------------------------------------------------


def arc_log_posteriors(lat, scales):
    """
    Natural-log arc posteriors and the total log-probability.

    Returns:
        tuple: (array of log posteriors indexed by arc, total_logprob)
    """
    if not lat.arcs:
        raise LatticeError(f"{lat.utterance_id}: empty lattice")
    weights = arc_weights(lat, scales)
    alpha = {node_id: -math.inf for node_id in lat.topological_order}
    alpha[lat.start_node] = 0.0
    for node_id in lat.topological_order:
        if node_id == lat.start_node:
            continue
        incoming = lat.incoming[node_id]
        if incoming:
            alpha[node_id] = _logsumexp(
                [alpha[lat.arcs[i].source] + weights[i] for i in incoming]
            )

    beta = {}
    for node_id in reversed(lat.topological_order):
        terms = [0.0] if node_id in lat.final_nodes else []
        terms.extend(weights[i] + beta[lat.arcs[i].target] for i in lat.outgoing[node_id])
        beta[node_id] = _logsumexp(terms)

    total = beta[lat.start_node]
    if total == -math.inf:
        raise LatticeError(f"{lat.utterance_id}: no start to final path")

    sources = np.array([alpha[a.source] for a in lat.arcs])
    targets = np.array([beta[a.target] for a in lat.arcs])
    log_post = sources + weights + targets - total
    # Rounding can push a certain arc a hair above zero
    return np.minimum(log_post, 0.0), total


def forward_backward(lat, scales):
    """
    Arc posteriors by forward-backward in the log semiring.

    Args:
        lat: Lattice
        scales: ScaleConfig used to combine arc scores

    Returns:
        tuple: (posteriors array indexed by arc, total_logprob)
    """
    log_post, total = arc_log_posteriors(lat, scales)
    return np.exp(log_post), total


def _rank_key(item):
    score, words, arcs = item
    return (-score, words, arcs)


def _hypothesis(lat, score, words, arcs):
    times = lat.node_times
    word_times = tuple(
        (times[lat.arcs[i].source], times[lat.arcs[i].target])
        for i in arcs
        if not lat.arcs[i].is_epsilon
    )
    acoustic = 0.0
    lm = 0.0
    for i in arcs:
        acoustic += lat.arcs[i].acoustic_score
        lm += lat.arcs[i].lm_score
    return Hypothesis(words, float(score), word_times, arcs, acoustic, lm)


def _prune_prefixes(items, n):
    # Ties at the n-th distinct score survive; words only rank complete paths
    best = {}
    for item in items:
        group = best.get(item[1])
        if group is None or item[0] > group[0][0]:
            best[item[1]] = [item]
        elif item[0] == group[0][0]:
            group.append(item)
    scores = sorted((group[0][0] for group in best.values()), reverse=True)
    cutoff = scores[n - 1] if len(scores) > n else -math.inf
    return [item for group in best.values() if group[0][0] >= cutoff for item in group]


def _top_distinct(items, n):
    seen = set()
    kept = []
    for item in sorted(items, key=_rank_key):
        if item[1] in seen:
            continue
        seen.add(item[1])
        kept.append(item)
        if len(kept) == n:
            break
    return kept


def n_best(lat, scales, n):
    """
    Top-n distinct word sequences by combined score.

    Ties are broken by the word sequence, then by the arc-index sequence.

    Args:
        lat: Lattice
        scales: ScaleConfig
        n: Number of hypotheses wanted (>= 1)

    Returns:
        list: Hypothesis objects, best first
    """
    if n < 1:
        raise LatticeError(f"n must be >= 1, got {n}")
    if not lat.arcs:
        raise LatticeError(f"{lat.utterance_id}: empty lattice")
    weights = arc_weights(lat, scales)
    partial = {lat.start_node: [(0.0, (), ())]}
    for node_id in lat.topological_order:
        if node_id == lat.start_node:
            continue
        candidates = []
        for index in lat.incoming[node_id]:
            arc = lat.arcs[index]
            for score, words, arcs in partial.get(arc.source, ()):
                new_words = words if arc.is_epsilon else words + (arc.word,)
                candidates.append((score + weights[index], new_words, arcs + (index,)))
        if candidates:
            partial[node_id] = _prune_prefixes(candidates, n)

    complete = []
    for node_id in lat.final_nodes:
        complete.extend(partial.get(node_id, ()))
    if not complete:
        raise LatticeError(f"{lat.utterance_id}: no start to final path")
    return [_hypothesis(lat, float(s), w, a) for s, w, a in _top_distinct(complete, n)]


def best_path(lat, scales):
    """Highest-scoring path; epsilon words dropped but scored."""
    return n_best(lat, scales, 1)[0]


def enumerate_paths(lat, cap=10_000, scales=None):
    """
    Exhaustive depth-first enumeration of every start-to-final path.

    Args:
        lat: Lattice
        cap: Maximum number of paths allowed
        scales: ScaleConfig, defaults to ScaleConfig()

    Returns:
        list: (Hypothesis, combined weight) pairs in DFS order
    """
    scales = scales or ScaleConfig()
    total = count_paths(lat)
    if total > cap:
        raise LatticeError(f"{lat.utterance_id}: {total} paths exceed the cap of {cap}")
    weights = arc_weights(lat, scales)
    results = []
    stack = [(lat.start_node, 0.0, (), ())]
    while stack:
        node_id, score, words, arcs = stack.pop()
        if node_id in lat.final_nodes and arcs:
            results.append(_hypothesis(lat, score, words, arcs))
        # Reversed so the pop order follows arc order
        for index in reversed(lat.outgoing[node_id]):
            arc = lat.arcs[index]
            new_words = words if arc.is_epsilon else words + (arc.word,)
            stack.append((arc.target, score + weights[index], new_words, arcs + (index,)))
    return [(hyp, hyp.total_score) for hyp in results]
