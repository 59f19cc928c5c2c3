"""
Graphemic lexicons with position-tagged units.

Every character of a word becomes one unit tagged ``_B`` (begin), ``_I``
(internal), ``_E`` (end) or ``_S`` (single-character word). Underscores that
join multi-word named entities become the silence-like unit ``SIL_<tag>``.
"""

import re
from dataclasses import dataclass, field

from utils import get_logger

logger = get_logger(__name__)

GRAPHEMIC = "graphemic"
PHONETIC = "phonetic"
POSITION_TAGS = ("B", "I", "E", "S")
SILENCE = "SIL"

_WORD_PATTERN = re.compile(r"^[a-z0-9'_]+$")


class LexiconError(ValueError):
    """Raised for invalid words, lexicon files and expansions."""


@dataclass(frozen=True)
class Lexicon:
    """
    Pronunciation dictionary.

    entries maps each word to a tuple of pronunciations, each a tuple of
    unit symbols.
    """

    entries: dict
    kind: str = GRAPHEMIC
    unit_inventory: frozenset = field(default=None)

    def __post_init__(self):
        if self.kind not in (GRAPHEMIC, PHONETIC):
            raise LexiconError(f"Unknown lexicon kind: {self.kind}")
        entries = {w: tuple(tuple(p) for p in prons) for w, prons in self.entries.items()}
        object.__setattr__(self, "entries", entries)
        used = {unit for prons in entries.values() for pron in prons for unit in pron}
        if self.unit_inventory is None:
            object.__setattr__(self, "unit_inventory", frozenset(used))
        else:
            object.__setattr__(self, "unit_inventory", frozenset(self.unit_inventory))
            missing = used - self.unit_inventory
            if missing:
                raise LexiconError(f"Units missing from inventory: {sorted(missing)[:5]}")
        for word, prons in entries.items():
            if not prons or any(not p for p in prons):
                raise LexiconError(f"Word {word!r} has an empty pronunciation")
            if self.kind == GRAPHEMIC and len(prons) != 1:
                raise LexiconError(f"Graphemic word {word!r} must have exactly one pronunciation")

    def __contains__(self, word):
        return word in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def words(self):
        return sorted(self.entries)


def validate_word(word):
    if not word:
        raise LexiconError("Cannot graphemize an empty word")
    if not _WORD_PATTERN.match(word):
        bad = sorted({c for c in word if not re.match(r"[a-z0-9'_]", c)})
        raise LexiconError(f"Unsupported character(s) {bad} in {word!r}")
    if word.startswith("_") or word.endswith("_") or "__" in word:
        raise LexiconError(f"Misplaced underscore in {word!r}")


def graphemize(word):
    """
    Map a word to its position-tagged grapheme units.

    Args:
        word: Lowercase token; letters, digits, apostrophes and underscores

    Returns:
        tuple: Unit symbols, e.g. "bedok" -> (b_B, e_I, d_I, o_I, k_E)
    """
    validate_word(word)
    if len(word) == 1:
        return (f"{word}_S",)
    units = []
    last = len(word) - 1
    for i, char in enumerate(word):
        tag = "B" if i == 0 else "E" if i == last else "I"
        symbol = SILENCE if char == "_" else char
        units.append(f"{symbol}_{tag}")
    return tuple(units)


def ungraphemize(units):
    """Invert graphemize: strip position tags and restore joining underscores."""
    chars = []
    for unit in units:
        symbol, sep, tag = unit.rpartition("_")
        if not sep or tag not in POSITION_TAGS:
            raise LexiconError(f"Unit {unit!r} carries no position tag")
        chars.append("_" if symbol == SILENCE else symbol)
    return "".join(chars)


def build_graphemic_lexicon(words):
    """Graphemic lexicon over the distinct words given."""
    return Lexicon({w: (graphemize(w),) for w in sorted(set(words))}, GRAPHEMIC)


def expand_lexicon(lex, new_words, pronunciations=None):
    """
    Add new words to a lexicon without touching existing entries.

    Args:
        lex: Lexicon to expand (left unmodified)
        new_words: Candidate words, typically test-set OOV tokens
        pronunciations: word -> list of unit sequences; required for
            phonetic lexicons since no G2P is available

    Returns:
        tuple: (expanded Lexicon, tuple of words actually added)
    """
    entries = dict(lex.entries)
    inventory = set(lex.unit_inventory)
    added = []
    for word in new_words:
        if word in entries:
            continue
        if lex.kind == GRAPHEMIC:
            prons = (graphemize(word),)
        else:
            if not pronunciations or word not in pronunciations:
                raise LexiconError(
                    f"Phonetic lexicon needs a supplied pronunciation for {word!r}"
                )
            prons = tuple(tuple(p) for p in pronunciations[word])
        entries[word] = prons
        inventory.update(u for p in prons for u in p)
        added.append(word)
    logger.info(f"Expanded lexicon by {len(added)} words to {len(entries)} entries")
    return Lexicon(entries, lex.kind, frozenset(inventory)), tuple(added)


def join_multiword(entity_words):
    """Join a multi-token named entity with underscores."""
    if not entity_words:
        raise LexiconError("Cannot join an empty entity")
    if any(not token for token in entity_words):
        raise LexiconError("Entity tokens must be non-empty")
    return "_".join(entity_words)


def join_multiword_in_sentence(tokens, entities):
    """
    Rewrite multi-token entities in a sentence as joined tokens.

    Longest match wins; scanning proceeds left to right.

    Args:
        tokens: Sentence tokens
        entities: Iterable of entity token sequences

    Returns:
        list: Tokens with every matched entity joined
    """
    spans = {tuple(e) for e in entities if len(e) > 1}
    if not spans:
        return list(tokens)
    longest = max(len(s) for s in spans)
    out = []
    i = 0
    while i < len(tokens):
        for size in range(min(longest, len(tokens) - i), 1, -1):
            candidate = tuple(tokens[i:i + size])
            if candidate in spans:
                out.append(join_multiword(candidate))
                i += size
                break
        else:
            out.append(tokens[i])
            i += 1
    return out


def format_lexicon(lex):
    lines = [f"# kind: {lex.kind}"]
    for word in lex.words:
        for pron in lex.entries[word]:
            lines.append(f"{word}\t{' '.join(pron)}")
    return "\n".join(lines) + "\n"


def parse_lexicon(text):
    """
    Parse lexicon text: a ``# kind:`` header then ``word<TAB>units`` lines.

    Repeated words accumulate pronunciation variants.
    """
    kind = GRAPHEMIC
    entries = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if key.strip() == "kind":
                kind = value.strip()
                if kind not in (GRAPHEMIC, PHONETIC):
                    raise LexiconError(f"line {line_no}: unknown lexicon kind {kind!r}")
            continue
        word, sep, units = raw.strip().partition("\t")
        if not sep or not units.split():
            raise LexiconError(f"line {line_no}: expected 'word<TAB>units'")
        entries.setdefault(word, []).append(tuple(units.split()))
    try:
        return Lexicon(entries, kind)
    except LexiconError as e:
        raise LexiconError(f"Invalid lexicon: {e}")


def read_lexicon(path):
    with open(path, encoding="utf-8") as f:
        return parse_lexicon(f.read())


def write_lexicon(lex, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_lexicon(lex))
