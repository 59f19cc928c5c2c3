import math

import numpy as np
import pytest

from lattice import EPSILON, Arc, Lattice, Node, connect, count_paths
from settings import ScaleConfig

UNIT_SCALES = ScaleConfig(acoustic_scale=1.0, lm_scale=1.0)


def build_diamond(upper=("a", "b", "c"), lower=("x", "y", "z"), p_upper=0.75, utterance_id="diamond"):
    """
    Two disjoint three-arc routes from node 0 to node 5.

    All path mass sits in the LM scores, so with lm_scale 1 the upper path
    weighs ln(p_upper) and the lower one ln(1 - p_upper).
    """
    up = math.log(p_upper) / 3
    low = math.log(1.0 - p_upper) / 3
    nodes = [Node(0, 0), Node(1, 10), Node(2, 20), Node(3, 12), Node(4, 22), Node(5, 30)]
    arcs = [
        Arc(0, 1, upper[0], 0.0, up),
        Arc(1, 2, upper[1], 0.0, up),
        Arc(2, 5, upper[2], 0.0, up),
        Arc(0, 3, lower[0], 0.0, low),
        Arc(3, 4, lower[1], 0.0, low),
        Arc(4, 5, lower[2], 0.0, low),
    ]
    return Lattice(utterance_id, nodes, arcs, 0, frozenset({5}))


def build_chain(words, utterance_id="chain", acoustic=-1.0, lm=-0.5):
    nodes = [Node(i, i * 5) for i in range(len(words) + 1)]
    arcs = [Arc(i, i + 1, w, acoustic, lm) for i, w in enumerate(words)]
    return Lattice(utterance_id, nodes, arcs, 0, frozenset({len(words)}))


def make_random_lattice(rng, num_nodes=None, vocab=("a", "b", "c", "d"), max_paths=10_000, epsilon_rate=0.1):
    """
    Random connected lattice with a backbone chain plus skip arcs.

    Retries until the lattice has at most max_paths paths.
    """
    while True:
        n = num_nodes or int(rng.integers(2, 8))
        nodes = [Node(i, i) for i in range(n)]
        arcs = []
        for i in range(n - 1):
            for _ in range(int(rng.integers(1, 3))):
                arcs.append(_random_arc(rng, i, i + 1, vocab, epsilon_rate))
            for j in range(i + 2, n):
                if rng.random() < 0.3:
                    arcs.append(_random_arc(rng, i, j, vocab, epsilon_rate))
        finals = {n - 1}
        if n > 2 and rng.random() < 0.3:
            finals.add(int(rng.integers(1, n - 1)))
        lat = connect(Lattice("rand", nodes, arcs, 0, frozenset(finals)))
        if count_paths(lat) <= max_paths:
            return lat


def _random_arc(rng, source, target, vocab, epsilon_rate):
    word = EPSILON if rng.random() < epsilon_rate else str(rng.choice(vocab))
    return Arc(source, target, word, float(rng.normal(-5.0, 3.0)), float(rng.normal(-2.0, 1.0)))


@pytest.fixture
def diamond():
    return build_diamond()


@pytest.fixture
def chain():
    return build_chain(["go", "to", "bedok"])


@pytest.fixture
def random_lattice():
    return make_random_lattice


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def unit_scales():
    return UNIT_SCALES
