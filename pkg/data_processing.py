"""
Reading and writing the toolkit's text files.

Corpus files hold one sentence per line. Reference and hypothesis files
hold ``utt_id<TAB>token token ...`` lines. NE lists hold one token per
line with an optional ``<TAB>class`` column.
"""

import re
from pathlib import Path

from lattice import parse_lattices, serialize_lattices
from lexicon import join_multiword_in_sentence
from utils import get_logger

logger = get_logger(__name__)

# CJK ideographs are scored one character per token
_CJK = re.compile(r"([㐀-䶿一-鿿豈-﫿])")


class DataFormatError(ValueError):
    """Raised for malformed corpus, transcript and NE list files."""


def tokenize(text, characters=False):
    """
    Split a transcript into tokens.

    Args:
        text: Whitespace-separated transcript
        characters: Split CJK ideographs into single-character tokens

    Returns:
        list: Tokens
    """
    if characters:
        text = _CJK.sub(r" \1 ", text)
    return text.split()


def read_corpus(path, entities=(), characters=False):
    """
    Read a training corpus.

    Args:
        path: Text file, one sentence per line
        entities: Multi-word NE token sequences to rewrite as underscore tokens
        characters: Character tokenization for CJK text

    Returns:
        list: Sentences as token lists; blank lines are skipped
    """
    sentences = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        tokens = tokenize(line, characters)
        if not tokens:
            continue
        if entities:
            tokens = join_multiword_in_sentence(tokens, entities)
        sentences.append(tokens)
    logger.info(f"Read {len(sentences)} sentences from {path}")
    return sentences


def write_corpus(sentences, path):
    Path(path).write_text("".join(" ".join(s) + "\n" for s in sentences), encoding="utf-8")


def parse_transcripts(text, characters=False):
    """
    Parse ``utt_id<TAB>tokens`` lines.

    Returns:
        dict: utterance id -> token list, in file order
    """
    transcripts = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        utt, sep, body = line.partition("\t")
        utt = utt.strip()
        if not sep or not utt:
            raise DataFormatError(f"line {line_no}: expected 'utt_id<TAB>transcript'")
        if utt in transcripts:
            raise DataFormatError(f"line {line_no}: duplicate utterance id {utt!r}")
        transcripts[utt] = tokenize(body, characters)
    return transcripts


def read_transcripts(path, characters=False):
    return parse_transcripts(Path(path).read_text(encoding="utf-8"), characters)


def write_transcripts(transcripts, path):
    lines = [f"{utt}\t{' '.join(tokens)}\n" for utt, tokens in transcripts.items()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def pair_transcripts(references, hypotheses):
    """
    (reference, hypothesis) pairs in reference order.

    Utterances without a hypothesis are scored against an empty one.
    """
    unknown = sorted(set(hypotheses) - set(references))
    if unknown:
        raise DataFormatError(f"Hypotheses for unknown utterances: {unknown[:5]}")
    missing = [utt for utt in references if utt not in hypotheses]
    if missing:
        logger.warning(f"{len(missing)} utterances have no hypothesis and count as deleted")
    return [(references[utt], hypotheses.get(utt, [])) for utt in references]


def parse_ne_list(text):
    """
    Parse an NE list.

    Returns:
        dict: NE token -> class label ("" when the file has no class column)
    """
    entities = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) > 2 or " " in fields[0]:
            raise DataFormatError(f"line {line_no}: expected 'token[<TAB>class]'")
        entities[fields[0]] = fields[1].strip() if len(fields) == 2 else ""
    return entities


def read_ne_list(path):
    return parse_ne_list(Path(path).read_text(encoding="utf-8"))


def write_ne_list(entities, path):
    lines = [f"{token}\t{label}\n" if label else f"{token}\n" for token, label in sorted(entities.items())]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_lattice_file(path):
    lattices = parse_lattices(Path(path).read_text(encoding="utf-8"))
    logger.info(f"Read {len(lattices)} lattices from {path}")
    return lattices


def write_lattice_file(lattices, path):
    Path(path).write_text(serialize_lattices(lattices), encoding="utf-8")
