import math
from pathlib import Path

import pytest

from app import main
from conftest import build_diamond
from data_processing import read_lattice_file, write_lattice_file, write_transcripts
from simulate_data import SynthConfig, write_fixture

TOY_CORPUS = Path(__file__).resolve().parent.parent / "data" / "toy_corpus.txt"


def kv_lines(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def diamond_file(tmp_path):
    path = tmp_path / "diamond.lat"
    write_lattice_file([build_diamond(upper=("go", "to", "town"), lower=("go", "boon_lay", "now"))], path)
    return path


class TestLatticeCommands:
    def test_best_path(self, diamond_file, capsys):
        assert main(["lattice", "best-path", str(diamond_file), "--lm-scale", "1.0"]) == 0
        assert capsys.readouterr().out == "diamond\tgo to town\n"

    def test_nbest(self, diamond_file, capsys):
        assert main(["lattice", "nbest", str(diamond_file), "-n", "5"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert [line.split("\t")[1] for line in lines] == ["1", "2"]

    def test_posteriors(self, diamond_file, capsys):
        assert main(["lattice", "posteriors", str(diamond_file), "--acoustic-scale", "1", "--lm-scale", "1"]) == 0
        rows = [line.split("\t") for line in capsys.readouterr().out.splitlines()]
        assert len(rows) == 6
        by_word = {row[2]: float(row[5]) for row in rows}
        assert by_word["town"] == pytest.approx(0.75, abs=1e-6)
        assert by_word["boon_lay"] == pytest.approx(0.25, abs=1e-6)

    def test_bad_scale_exits_one(self, diamond_file, caplog):
        assert main(["lattice", "best-path", str(diamond_file), "--acoustic-scale", "0"]) == 1
        assert "Error running lattice best-path" in caplog.text

    def test_missing_file(self, tmp_path, caplog):
        assert main(["lattice", "best-path", str(tmp_path / "none.lat")]) == 1
        assert "Error" in caplog.text


class TestModelCommands:
    def test_graphemize(self, capsys):
        assert main(["lexicon", "graphemize", "bedok", "a"]) == 0
        assert capsys.readouterr().out == "bedok\tb_B e_I d_I o_I k_E\na\ta_S\n"

    def test_lexicon_expand(self, tmp_path, capsys):
        words = tmp_path / "ne.txt"
        words.write_text("pasir_ris\tplace\nbedok\tplace\n")
        out = tmp_path / "lexicon.txt"
        assert main(["lexicon", "expand", str(words), "--corpus", str(TOY_CORPUS), "-o", str(out), "--kv"]) == 0
        values = kv_lines(capsys.readouterr().out)
        assert values["added"] == "1"
        assert "pasir_ris\t" in out.read_text()

    def test_ngram_train_and_score(self, tmp_path, capsys):
        arpa = tmp_path / "toy.arpa"
        assert main(["ngram", "train", str(TOY_CORPUS), "--order", "3", "-o", str(arpa)]) == 0
        assert arpa.read_text().startswith("\\data\\")
        assert main(["ngram", "score", str(arpa), str(TOY_CORPUS), "--kv"]) == 0
        ppl = float(kv_lines(capsys.readouterr().out)["perplexity"])
        assert 1.0 < ppl < 50.0

    def test_nlm_gradcheck(self, capsys):
        assert main(["nlm", "gradcheck", str(TOY_CORPUS), "--dim", "3", "--kv"]) == 0
        values = kv_lines(capsys.readouterr().out)
        assert values["passed"] == "true"
        assert set(values) >= {"E", "W_x", "W_h", "b_h", "b_o"}

    def test_nlm_train_score_augment(self, tmp_path, capsys):
        model = tmp_path / "model.txt"
        assert main(["nlm", "train", str(TOY_CORPUS), "--dim", "4", "--epochs", "1", "-o", str(model)]) == 0
        assert main(["nlm", "score", str(model), str(TOY_CORPUS), "--kv"]) == 0
        serial = kv_lines(capsys.readouterr().out)["perplexity"]
        assert math.isfinite(float(serial))
        assert main(["nlm", "score", str(model), str(TOY_CORPUS), "--kv", "--jobs", "3"]) == 0
        assert kv_lines(capsys.readouterr().out)["perplexity"] == serial

        ne_list = tmp_path / "ne.txt"
        ne_list.write_text("pasir_ris\tplace\n")
        candidates = tmp_path / "candidates.txt"
        candidates.write_text("pasir_ris\tbedok jurong\n")
        augmented = tmp_path / "augmented.txt"
        args = ["augment", "apply", str(model), str(TOY_CORPUS), str(ne_list), str(candidates)]
        assert main(args + ["-o", str(augmented), "--k", "2", "--kv"]) == 0
        assert kv_lines(capsys.readouterr().out) == {"augmented": "1", "rare": "0", "oov": "1"}
        assert "pasir_ris" in augmented.read_text().splitlines()


class TestBoostCommands:
    def test_apply_flips_best_path(self, diamond_file, tmp_path, capsys):
        ne_set = tmp_path / "ne.txt"
        ne_set.write_text("boon_lay\n")
        out = tmp_path / "boosted.lat"
        index = tmp_path / "index.txt"
        args = ["boost", "apply", str(diamond_file), str(ne_set), "-o", str(out), "--index", str(index)]
        assert main(args + ["--acoustic-scale", "1", "--lm-scale", "1", "--bonus", "1.2"]) == 0
        assert len(read_lattice_file(out)) == 1
        assert main(["lattice", "best-path", str(out), "--lm-scale", "1"]) == 0
        assert capsys.readouterr().out == "diamond\tgo boon_lay now\n"

        assert main(["boost", "search", str(index), "boon_lay"]) == 0
        utt, start, end, posterior = capsys.readouterr().out.strip().split("\t")
        assert (utt, start, end) == ("diamond", "12", "22")
        assert float(posterior) == pytest.approx(0.25 * math.exp(1.2), abs=1e-6)


class TestEvalCommands:
    @pytest.fixture
    def transcripts(self, tmp_path):
        ref = tmp_path / "test.ref"
        hyp = tmp_path / "test.hyp"
        write_transcripts({"u1": ["go", "to", "bedok"], "u2": ["call", "tampines", "now"]}, ref)
        write_transcripts({"u1": ["go", "to", "bedok"], "u2": ["call", "the", "now"]}, hyp)
        train = tmp_path / "train.txt"
        train.write_text("go to bedok\n")
        ne_list = tmp_path / "ne.txt"
        ne_list.write_text("bedok\ntampines\n")
        return ref, hyp, train, ne_list

    def test_wer(self, transcripts, capsys):
        ref, hyp, _, _ = transcripts
        assert main(["eval", "wer", str(ref), str(hyp), "--kv"]) == 0
        values = kv_lines(capsys.readouterr().out)
        assert values == {"WER": "16.67", "S": "1", "D": "0", "I": "0", "N": "6"}

    def test_ne_wer(self, transcripts, capsys):
        ref, hyp, train, ne_list = transcripts
        assert main(["eval", "ne-wer", str(ref), str(hyp), str(ne_list), str(train), "--kv"]) == 0
        values = kv_lines(capsys.readouterr().out)
        assert values["NE-WER"] == "50.00"
        assert values["NE-WER_rare"] == "0.00"
        assert values["NE-WER_oov"] == "100.00"
        assert values["N_NE"] == "2"


class TestPipelineCommands:
    def test_synth_generate(self, tmp_path):
        out = tmp_path / "synth"
        assert main(["synth", "generate", "--out", str(out), "--seed", "5"]) == 0
        for name in ("train.txt", "test.ref", "test.lat", "ne_list.txt", "candidates.txt", "ablation.conf"):
            assert (out / name).is_file()

    def test_report_ablation(self, tmp_path, capsys):
        cfg = SynthConfig(
            seed=2, frequent_per_class=3, num_rare=2, num_oov=2, frequent_count=10,
            filler_sentences=10, test_filler_sentences=2,
        )
        conf = write_fixture(tmp_path / "fx", cfg, {"nlm_dim": 3, "nlm_epochs": 1, "letter_slots": 32})
        html = tmp_path / "ladder.html"
        assert main(["report", "ablation", str(conf), "--html", str(html)]) == 0
        text = capsys.readouterr().out
        assert text.splitlines()[0].split()[:2] == ["row", "system"]
        assert text.count("row=") == 10
        assert html.read_text().lstrip().startswith("<html>")

    def test_report_unknown_key(self, tmp_path, caplog):
        conf = tmp_path / "bad.conf"
        conf.write_text("colour=blue\n")
        assert main(["report", "ablation", str(conf)]) == 1
        assert "Unknown config keys" in caplog.text
