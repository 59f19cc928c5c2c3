"""
Second-pass rescoring with a KN / neural LM interpolation.

Word probabilities are mixed linearly:

    p(w | h) = kn_weight * p_kn(w | h) + (1 - kn_weight) * p_nlm(w | h)

Lattice LM scores are natural-log values. Acoustic scores are never
changed.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from lattice import EPSILON, Arc, Lattice, LatticeError, Node, connect, n_best
from ngram import BOS, EOS
from utils import get_logger

logger = get_logger(__name__)

LN10 = math.log(10.0)


class RescoreError(ValueError):
    """Raised when rescoring inputs do not fit together."""


class StateCapExceeded(RescoreError):
    """Exact history expansion grew past the configured state cap."""


class InterpolatedScorer:
    """
    Per-word interpolated log-probabilities with cached neural LM states.

    Histories are tuples that start with <s>. One scorer should serve one
    lattice or one batch of hypotheses; its cache grows with the number of
    distinct histories seen.
    """

    def __init__(self, kn, nlm, kn_weight):
        if not 0.0 <= kn_weight <= 1.0:
            raise RescoreError(f"kn_weight must lie in [0, 1], got {kn_weight}")
        if kn_weight > 0 and kn is None:
            raise RescoreError("A KN model is required when kn_weight > 0")
        if kn_weight < 1 and nlm is None:
            raise RescoreError("A neural LM is required when kn_weight < 1")
        self.kn = kn
        self.nlm = nlm
        self.kn_weight = kn_weight
        self._states = {}
        if nlm is not None:
            self._states[(BOS,)] = nlm.start()

    @property
    def uses_neural_lm(self):
        return self.kn_weight < 1.0

    def history_key(self, history):
        """
        Part of a history that determines every later word probability.

        The full history matters once the neural LM takes part; KN alone
        only looks at its last order-1 tokens.
        """
        if self.uses_neural_lm:
            return tuple(history)
        if self.kn.order == 1:
            return ()
        return tuple(history)[-(self.kn.order - 1):]

    def _neural_logdist(self, history):
        history = tuple(history)
        if history in self._states:
            return self._states[history][1]
        cut = len(history) - 1
        while history[:cut] not in self._states:
            cut -= 1
        hidden, logdist = self._states[history[:cut]]
        for end in range(cut + 1, len(history) + 1):
            hidden, logdist = self.nlm.step(hidden, history[end - 1])
            self._states[history[:end]] = (hidden, logdist)
        return logdist

    def word_logprob(self, word, history):
        """Natural-log interpolated probability of word after history."""
        if self.kn_weight == 1.0:
            return self.kn.logprob(word, history) * LN10
        neural = float(self._neural_logdist(history)[self.nlm.index(word)])
        if self.kn_weight == 0.0:
            return neural
        kn_ln = self.kn.logprob(word, history) * LN10
        return float(
            np.logaddexp(math.log(self.kn_weight) + kn_ln, math.log1p(-self.kn_weight) + neural)
        )

    def sentence_logprob(self, sentence):
        history = (BOS,)
        total = 0.0
        for word in list(sentence) + [EOS]:
            total += self.word_logprob(word, history)
            history = history + (word,)
        return total


def interpolated_sentence_logprob(kn, nlm, sentence, cfg):
    """
    Natural-log probability of a sentence (with </s>) under the mixture.

    Args:
        kn: NGramLM (may be None when cfg.kn_weight == 0)
        nlm: NeuralLM (may be None when cfg.kn_weight == 1)
        sentence: Word tokens
        cfg: InterpolationConfig

    Returns:
        float: Sum of per-word log mixture probabilities
    """
    return InterpolatedScorer(kn, nlm, cfg.kn_weight).sentence_logprob(sentence)


def rescore_nbest(lat, kn, nlm, cfg, scorer=None):
    """
    Rerank the lattice's N-best list with interpolated LM scores.

    Args:
        lat: Connected lattice
        kn: NGramLM
        nlm: NeuralLM
        cfg: InterpolationConfig (nbest_size, kn_weight, scales)
        scorer: Optional InterpolatedScorer to share a state cache

    Returns:
        list: Hypothesis objects with new lm_score and total_score, best
        first; ties keep the original rank
    """
    scorer = scorer or InterpolatedScorer(kn, nlm, cfg.kn_weight)
    scales = cfg.scales
    hypotheses = n_best(lat, scales, cfg.nbest_size)
    rescored = []
    for rank, hyp in enumerate(hypotheses):
        lm_score = scorer.sentence_logprob(hyp.words)
        total = scales.acoustic_scale * hyp.acoustic_score + scales.lm_scale * lm_score
        rescored.append((rank, replace(hyp, total_score=float(total), lm_score=float(lm_score))))
    rescored.sort(key=lambda item: (-item[1].total_score, item[0]))
    return [hyp for _, hyp in rescored]


def rescore_lattice(lat, kn, nlm, cfg):
    """
    Replace LM scores by exact history expansion.

    Every lattice node is split by the history key of the paths reaching
    it, so each arc can carry the interpolated probability of its word
    given that history. log p(</s> | h) is added to the arcs entering a
    final node without outgoing arcs; other final nodes get an epsilon
    arc to a new final node carrying it.

    Args:
        lat: Lattice
        kn: NGramLM
        nlm: NeuralLM
        cfg: InterpolationConfig (kn_weight, state_cap)

    Returns:
        Lattice: Expanded lattice with interpolated lm_scores

    Raises:
        StateCapExceeded: If more than cfg.state_cap states are needed;
            rescore_nbest is the fallback
    """
    lat = connect(lat)
    scorer = InterpolatedScorer(kn, nlm, cfg.kn_weight)
    times = lat.node_times
    state_ids = {}
    states_at = {node_id: [] for node_id in lat.topological_order}

    def state(node_id, key):
        found = state_ids.get((node_id, key))
        if found is None:
            if len(state_ids) >= cfg.state_cap:
                raise StateCapExceeded(
                    f"{lat.utterance_id}: more than {cfg.state_cap} expanded states; "
                    "use N-best rescoring instead"
                )
            found = len(state_ids)
            state_ids[(node_id, key)] = found
            states_at[node_id].append(key)
        return found

    state(lat.start_node, scorer.history_key((BOS,)))
    arcs = []
    incoming = {}
    for node_id in lat.topological_order:
        for key in states_at[node_id]:
            source = state_ids[(node_id, key)]
            for index in lat.outgoing[node_id]:
                arc = lat.arcs[index]
                if arc.is_epsilon:
                    lm_score, next_key = 0.0, key
                else:
                    lm_score = scorer.word_logprob(arc.word, key)
                    next_key = scorer.history_key(key + (arc.word,))
                target = state(arc.target, next_key)
                incoming.setdefault(target, []).append(len(arcs))
                arcs.append(Arc(source, target, arc.word, arc.acoustic_score, lm_score))

    nodes = [Node(sid, times[node_id]) for (node_id, _), sid in state_ids.items()]
    finals = set()
    super_final = None
    for node_id in sorted(lat.final_nodes):
        for key in states_at[node_id]:
            sid = state_ids[(node_id, key)]
            eos = scorer.word_logprob(EOS, key)
            if lat.outgoing[node_id]:
                if super_final is None:
                    super_final = len(nodes)
                    nodes.append(Node(super_final, max(times.values())))
                    finals.add(super_final)
                arcs.append(Arc(sid, super_final, EPSILON, 0.0, eos))
            else:
                for i in incoming[sid]:
                    arcs[i] = replace(arcs[i], lm_score=arcs[i].lm_score + eos)
                finals.add(sid)

    logger.debug(f"{lat.utterance_id}: {len(lat.nodes)} nodes expanded to {len(nodes)} states")
    return Lattice(lat.utterance_id, nodes, arcs, 0, finals)


def rescore_best(lat, kn, nlm, cfg):
    """
    Best rescored hypothesis, by lattice expansion or N-best fallback.

    Returns:
        Hypothesis: Rank-1 path of the rescored lattice
    """
    try:
        expanded = rescore_lattice(lat, kn, nlm, cfg)
    except StateCapExceeded as e:
        logger.warning(f"{e}; falling back to {cfg.nbest_size}-best rescoring")
        return rescore_nbest(lat, kn, nlm, cfg)[0]
    return n_best(expanded, cfg.scales, 1)[0]


def rescore_lattices(lattices, kn, nlm, cfg, jobs=1):
    """Rescore many lattices, utterance-parallel when jobs > 1."""
    lattices = list(lattices)

    def one(lat):
        try:
            return rescore_lattice(lat, kn, nlm, cfg)
        except LatticeError as e:
            raise RescoreError(f"Error rescoring {lat.utterance_id}: {e}") from e

    if jobs <= 1:
        return [one(lat) for lat in lattices]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, lattices))
