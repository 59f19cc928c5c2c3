import pytest

from data_processing import (
    DataFormatError,
    pair_transcripts,
    parse_ne_list,
    parse_transcripts,
    read_corpus,
    read_ne_list,
    tokenize,
    write_ne_list,
)


def test_tokenize_characters():
    assert tokenize("我 want 去 bedok", characters=True) == ["我", "want", "去", "bedok"]
    assert tokenize("我们去bedok", characters=True) == ["我", "们", "去", "bedok"]
    assert tokenize("我们去bedok") == ["我们去bedok"]


def test_read_corpus_joins_entities(tmp_path):
    path = tmp_path / "train.txt"
    path.write_text("go to boon lay now\n\nboon lay is far\n", encoding="utf-8")
    corpus = read_corpus(path, entities=[["boon", "lay"]])
    assert corpus == [["go", "to", "boon_lay", "now"], ["boon_lay", "is", "far"]]


class TestTranscripts:
    def test_parse(self):
        parsed = parse_transcripts("u2\tgo home\nu1\t\n")
        assert parsed == {"u2": ["go", "home"], "u1": []}
        assert list(parsed) == ["u2", "u1"]

    def test_missing_tab(self):
        with pytest.raises(DataFormatError, match="line 2"):
            parse_transcripts("u1\tok\nu2 no tab\n")

    def test_duplicate(self):
        with pytest.raises(DataFormatError, match="duplicate"):
            parse_transcripts("u1\ta\nu1\tb\n")

    def test_pairing(self):
        refs = {"u1": ["a"], "u2": ["b"]}
        assert pair_transcripts(refs, {"u2": ["c"]}) == [(["a"], []), (["b"], ["c"])]
        with pytest.raises(DataFormatError, match="unknown"):
            pair_transcripts(refs, {"u3": ["x"]})


class TestNeList:
    def test_classes_optional(self):
        assert parse_ne_list("# places\nbedok\tplace\njurong\n\n") == {"bedok": "place", "jurong": ""}

    def test_rejects_spaces(self):
        with pytest.raises(DataFormatError, match="line 1"):
            parse_ne_list("boon lay\tplace\n")

    def test_file(self, tmp_path):
        path = tmp_path / "ne.txt"
        write_ne_list({"pasir_ris": "place", "ahmad": ""}, path)
        assert path.read_text() == "ahmad\npasir_ris\tplace\n"
        assert read_ne_list(path) == {"pasir_ris": "place", "ahmad": ""}
