import pytest

from lexicon import (
    GRAPHEMIC,
    PHONETIC,
    Lexicon,
    LexiconError,
    build_graphemic_lexicon,
    expand_lexicon,
    graphemize,
    join_multiword,
    join_multiword_in_sentence,
    parse_lexicon,
    read_lexicon,
    ungraphemize,
    write_lexicon,
)


class TestGraphemize:
    def test_singleton(self):
        assert graphemize("a") == ("a_S",)

    def test_joined_entity(self):
        assert graphemize("boon_lay") == ("b_B", "o_I", "o_I", "n_I", "SIL_I", "l_I", "a_I", "y_E")

    def test_plain_word(self):
        assert graphemize("bedok") == ("b_B", "e_I", "d_I", "o_I", "k_E")

    def test_digits_and_apostrophe(self):
        assert graphemize("don't") == ("d_B", "o_I", "n_I", "'_I", "t_E")
        assert graphemize("7") == ("7_S",)

    @pytest.mark.parametrize("word", ["", "Bedok", "be dok", "bé", "_ab", "ab_", "a__b"])
    def test_invalid(self, word):
        with pytest.raises(LexiconError):
            graphemize(word)

    @pytest.mark.parametrize("word", ["a", "ab", "bedok", "ang_mo_kio", "don't", "b2b"])
    def test_round_trip_and_tags(self, word):
        units = graphemize(word)
        assert ungraphemize(units) == word
        tags = [u.rsplit("_", 1)[1] for u in units]
        assert all(t in ("B", "I", "E", "S") for t in tags)
        assert ("S" in tags) == (len(word) == 1)


class TestExpandLexicon:
    def test_adds_new_words(self):
        base = build_graphemic_lexicon(["go", "to", "via"])
        expanded, added = expand_lexicon(base, ["bedok", "tampines"])
        assert len(expanded) == 5
        assert added == ("bedok", "tampines")
        assert len(base) == 3

    def test_idempotent(self):
        base = build_graphemic_lexicon(["go", "to", "via"])
        expanded, added = expand_lexicon(base, ["go"])
        assert len(expanded) == 3
        assert added == ()
        once, _ = expand_lexicon(base, ["x"])
        twice, added_again = expand_lexicon(once, ["x"])
        assert added_again == ()
        assert twice.entries == once.entries

    def test_existing_entries_untouched(self):
        base = Lexicon({"go": [("g_B", "o_E")]}, GRAPHEMIC)
        expanded, _ = expand_lexicon(base, ["bedok"])
        assert expanded.entries["go"] == base.entries["go"]
        assert "k_E" in expanded.unit_inventory

    def test_phonetic_needs_pronunciations(self):
        base = Lexicon({"go": [("g", "ow")]}, PHONETIC)
        with pytest.raises(LexiconError, match="supplied pronunciation"):
            expand_lexicon(base, ["bedok"])
        expanded, added = expand_lexicon(base, ["bedok"], {"bedok": [("b", "ax", "d", "ao", "k")]})
        assert added == ("bedok",)
        assert expanded.kind == PHONETIC

    def test_phonetic_variants_allowed(self):
        lex = Lexicon({"either": [("iy", "dh", "er"), ("ay", "dh", "er")]}, PHONETIC)
        assert len(lex.entries["either"]) == 2
        with pytest.raises(LexiconError, match="exactly one"):
            Lexicon({"either": [("e_B", "r_E"), ("e_B", "x_E")]}, GRAPHEMIC)


class TestJoinMultiword:
    @pytest.mark.parametrize(
        "tokens, joined",
        [(["boon", "lay"], "boon_lay"), (["bedok"], "bedok"), (["ang", "mo", "kio"], "ang_mo_kio")],
    )
    def test_join(self, tokens, joined):
        assert join_multiword(tokens) == joined

    def test_empty(self):
        with pytest.raises(LexiconError):
            join_multiword([])

    def test_sentence_longest_match(self):
        entities = [("ang", "mo"), ("ang", "mo", "kio"), ("boon", "lay")]
        tokens = "go to ang mo kio via boon lay".split()
        assert join_multiword_in_sentence(tokens, entities) == ["go", "to", "ang_mo_kio", "via", "boon_lay"]


class TestLexiconFiles:
    def test_write_read(self, tmp_path):
        lex = build_graphemic_lexicon(["bedok", "boon_lay", "a"])
        path = tmp_path / "lexicon.txt"
        write_lexicon(lex, path)
        text = path.read_text(encoding="utf-8")
        assert text.startswith("# kind: graphemic\n")
        assert "bedok\tb_B e_I d_I o_I k_E\n" in text
        assert read_lexicon(path).entries == lex.entries

    def test_malformed_line(self):
        with pytest.raises(LexiconError, match="line 2"):
            parse_lexicon("# kind: graphemic\nbedok b_B\n")

    def test_phonetic_variants_from_text(self):
        lex = parse_lexicon("# kind: phonetic\neither\tiy dh er\neither\tay dh er\n")
        assert lex.kind == PHONETIC
        assert len(lex.entries["either"]) == 2
