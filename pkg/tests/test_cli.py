import filecmp
import json

import pytest

from dimnet_toy import config as C
from dimnet_toy.cli import build_parser, main
from dimnet_toy.errors import ConfigError, ParseError


def test_every_key_has_help_and_flag():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices["train"]
    text = sub.format_help()
    for name, s in C.SETTINGS.items():
        assert s.help, name
        assert f"--{name}" in text


def test_read_config(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nlr = 0.01\ndetach = false  # trailing\nutt_len = 2,5\n\n"
                 "accent_weights = none\nar_masked_accents = 1,3\n")
    vals = C.read_config(p)
    assert vals == {"lr": 0.01, "detach": False, "utt_len": (2, 5), "accent_weights": None,
                    "ar_masked_accents": (1, 3)}
    C.write_config(tmp_path / "d.txt", vals)
    assert C.read_config(tmp_path / "d.txt") == vals


@pytest.mark.parametrize("text,err", [("colour = red\n", ConfigError), ("lr 0.1\n", ParseError),
                                      ("lr = 1\nlr = 2\n", ParseError),
                                      ("epochs = two\n", ConfigError),
                                      ("detach = maybe\n", ConfigError)])
def test_bad_config(tmp_path, text, err):
    p = tmp_path / "c.txt"
    p.write_text(text)
    with pytest.raises(err):
        C.read_config(p)


def test_unknown_key_lists_valid_keys(tmp_path, capsys):
    p = tmp_path / "c.txt"
    p.write_text("colour = red\n")
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "d")]) != 0
    err = capsys.readouterr().err
    assert "colour" in err and "accent_shift_scale" in err and len(err.strip().splitlines()) == 1


def test_flags_override_file(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("n_train = 5\nn_dev = 2\nn_test = 2\nseed = 1\n")
    assert main(["gen-data", "--config", str(p), "--seed", "4", "--out", str(tmp_path / "d")]) == 0
    frozen = C.read_config(tmp_path / "d" / "config.txt")
    assert frozen["seed"] == 4 and frozen["n_train"] == 5
    assert set(frozen) == {f for f in C.SETTINGS if C.SETTINGS[f].owner == "corpus"}


def test_gen_data_deterministic(tmp_path):
    args = ["--n-train", "10", "--n-dev", "3", "--n-test", "3", "--seed", "7"]
    assert main(["gen-data", *args, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", *args, "--out", str(tmp_path / "b")]) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list == cmp.right_list
    for name in cmp.common_files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_checkpoint(tmp_path, capsys):
    assert main(["gen-data", "--n-train", "4", "--n-dev", "2", "--n-test", "2",
                 "--out", str(tmp_path / "d")]) == 0
    assert main(["decode", "--data", str(tmp_path / "d"), "--run", str(tmp_path / "none")]) != 0
    assert "checkpoint" in capsys.readouterr().err


TINY = ["--epochs", "1", "--d-model", "16", "--d-ff", "32", "--n-ctc", "1", "--n-att", "1",
        "--n-dec", "1", "--bimodal-width", "16", "--n-spaces", "4", "--d-k", "4",
        "--ar-blocks", "1", "--batch-size", "8", "--warmup-steps", "2"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(["gen-data", "--n-train", "24", "--n-dev", "6", "--n-test", "6", "--seed", "2",
                 "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(run), *TINY]) == 0
    assert main(["decode", "--data", str(data), "--run", str(run), "--split", "dev",
                 "--beam", "3"]) == 0
    assert main(["eval", "--data", str(data), "--run", str(run), "--split", "dev"]) == 0
    return root


def test_pipeline_outputs(pipeline):
    data, run = pipeline / "data", pipeline / "run"
    for name in ("corpus.json", "train.jsonl", "dev.jsonl", "test.jsonl", "fine.txt",
                 "coarse.txt", "lexicon.txt", "config.txt"):
        assert (data / name).exists(), name
    for name in ("checkpoint.pt", "metrics.jsonl", "config.txt", "decode-dev.jsonl",
                 "accent-dev.jsonl", "decode-dev.config.txt", "eval-dev.csv", "accent-dev.csv",
                 "phoneme-dev.csv", "eval-dev.config.txt"):
        assert (run / name).exists(), name
    recs = [json.loads(l) for l in (run / "decode-dev.jsonl").read_text().splitlines()]
    assert len(recs) == 6
    assert all(1 <= len(r["nbest"]) <= 3 and r["best"] in [h["y_c"] for h in r["nbest"]]
               for r in recs)
    acc = [json.loads(l) for l in (run / "accent-dev.jsonl").read_text().splitlines()]
    assert all(abs(sum(r["posteriors"]) - 1) < 1e-5 for r in acc)
    assert (run / "eval-dev.csv").read_text().splitlines()[0] == "metric,value"


def test_frozen_config_reproduces_run(pipeline):
    data, run = pipeline / "data", pipeline / "run"
    again = pipeline / "again"
    assert main(["train", "--data", str(data), "--out", str(again),
                 "--config", str(run / "config.txt")]) == 0
    assert (again / "metrics.jsonl").read_bytes() == (run / "metrics.jsonl").read_bytes()


def test_zero_ctc_weight_equals_first_pass(pipeline):
    data, run = pipeline / "data", pipeline / "run"
    assert main(["decode", "--data", str(data), "--run", str(run), "--split", "dev",
                 "--w2", "0", "--out", str(pipeline / "w0")]) == 0
    assert main(["decode", "--data", str(data), "--run", str(run), "--split", "dev",
                 "--first-pass-only", "--out", str(pipeline / "fp")]) == 0

    def best(d):
        return [json.loads(l)["best"] for l in (d / "decode-dev.jsonl").read_text().splitlines()]

    assert best(pipeline / "w0") == best(pipeline / "fp")


def test_eval_requires_decode(pipeline, capsys):
    assert main(["eval", "--data", str(pipeline / "data"), "--run", str(pipeline / "run"),
                 "--split", "test"]) != 0
    assert "decode" in capsys.readouterr().err


def test_ablate(pipeline, capsys):
    out = pipeline / "abl"
    assert main(["ablate", "--data", str(pipeline / "data"), "--out", str(out), *TINY,
                 "--axis", "scheme=AF_i,AF_ied", "--seeds", "0"]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("scheme,n_seeds") and len(lines) == 3
    assert main(["ablate", "--data", str(pipeline / "data"), "--out", str(out),
                 "--axis", "colour=1"]) != 0


def test_grad_check_command(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert float(out.strip().splitlines()[-1].split()[-1]) <= 1e-4
