import json
import subprocess
import sys

import numpy as np
import pytest

from shapprop.cli import UsageError, main, parse_cli, read_vector
from shapprop.network import linear_model, load_model, save_model


@pytest.fixture
def files(tmp_path):
    model = linear_model([[1.0, -2.0, 0.5, 3.0]], [0.25])
    save_model(model, tmp_path / "m.json")
    (tmp_path / "x.json").write_text("[1, 2, 3, 4]")
    return tmp_path


def read_result(path):
    return json.loads(path.read_text())


class TestParse:
    def test_attribute(self):
        cfg = parse_cli("attribute --model m.json --input x.json --method dasp --K 8 "
                        "--class 0 --out r.json".split())
        assert (cfg.command, cfg.method, cfg.K, cfg.class_index) == ("attribute", "dasp", 8, 0)
        assert cfg.scaling == "corrected"

    def test_compare(self):
        cfg = parse_cli("compare --config bench.json --out report.csv".split())
        assert cfg.command == "compare" and cfg.config_path == "bench.json"

    def test_seed_either_side(self):
        assert parse_cli("--seed 3 gen-model --arch 4-1 --out m.json".split()).seed == 3
        assert parse_cli("gen-model --arch 4-1 --out m.json --seed 4".split()).seed == 4

    def test_verbatim_scaling_flag(self):
        cfg = parse_cli("attribute --model m --input x --method dasp --out r "
                        "--paper-verbatim-scaling".split())
        assert cfg.scaling == "verbatim"

    @pytest.mark.parametrize("argv", [
        "attribute --method dasp",
        "attribute --model m --input x --method dasp",
        "attribute --model m --input x --input-seed 1 --method dasp --out r",
        "attribute --model m --input x --method sampling --out r",
        "attribute --model m --input x --method occlusion --K 3 --out r",
        "attribute --model m --input x --method dasp --K 0 --out r",
        "attribute --model m --input x --method lrp --out r",
        "frobnicate",
        "",
    ])
    def test_usage_errors(self, argv):
        with pytest.raises(UsageError):
            parse_cli(argv.split())

    def test_usage_exit_code(self, capsys):
        assert main(["attribute", "--method", "dasp"]) == 2
        assert "--model" in capsys.readouterr().err


class TestCommands:
    @pytest.mark.parametrize("method,extra", [
        ("exact", []), ("occlusion", []), ("grad_x_input", []),
        ("integrated_gradients", ["--steps", "8"]), ("sampling", ["--M", "2", "--seed", "1"]),
        ("dasp", ["--K", "2"]),
    ])
    def test_attribute_linear(self, files, method, extra):
        out = files / "r.json"
        code = main(["attribute", "--model", str(files / "m.json"), "--input",
                     str(files / "x.json"), "--method", method, "--out", str(out)] + extra)
        assert code == 0
        res = read_result(out)
        assert res["method"] == method and res["class"] == 0
        np.testing.assert_allclose(res["values"], [1, -4, 1.5, 12], atol=1e-9)

    def test_csv_input_and_baseline(self, files):
        (files / "x.csv").write_text("value\n1\n2\n3\n4\n")
        out = files / "r.json"
        assert main(["attribute", "--model", str(files / "m.json"), "--input", str(files / "x.csv"),
                     "--baseline", "1", "--method", "occlusion", "--out", str(out)]) == 0
        np.testing.assert_allclose(read_result(out)["values"], [0, -2, 1, 9])

    def test_oracle(self, files):
        out = files / "exact.json"
        assert main(["oracle", "--model", str(files / "m.json"), "--input-seed", "5",
                     "--out", str(out)]) == 0
        res = read_result(out)
        assert res["method"] == "exact" and res["eval_count"] == 16

    def test_oracle_refuses_large_n(self, tmp_path, capsys):
        save_model(linear_model(np.ones((1, 30)), [0]), tmp_path / "big.json")
        out = tmp_path / "o.json"
        assert main(["oracle", "--model", str(tmp_path / "big.json"), "--input-seed", "0",
                     "--out", str(out)]) == 1
        assert "2^30" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_file(self, tmp_path):
        assert main(["attribute", "--model", str(tmp_path / "nope.json"), "--input-seed", "0",
                     "--method", "dasp", "--out", str(tmp_path / "r.json")]) == 66

    def test_wrong_length_input(self, files):
        (files / "short.json").write_text("[1, 2]")
        out = files / "r.json"
        assert main(["attribute", "--model", str(files / "m.json"), "--input",
                     str(files / "short.json"), "--method", "dasp", "--out", str(out)]) == 1
        assert not out.exists()

    def test_malformed_model(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        assert main(["oracle", "--model", str(tmp_path / "bad.json"), "--input-seed", "0",
                     "--out", str(tmp_path / "o.json")]) == 1

    def test_gen_model(self, tmp_path, capsys):
        out = tmp_path / "g.json"
        assert main(["gen-model", "--arch", "5-4-relu-2", "--seed", "9", "--out", str(out)]) == 0
        m = load_model(out)
        assert m.input_shape == (5,) and m.output_dim == 2
        assert "seed:" not in capsys.readouterr().err

    def test_fresh_seed_is_printed(self, tmp_path, capsys):
        out = tmp_path / "g.json"
        assert main(["gen-model", "--arch", "5-2", "--out", str(out)]) == 0
        seed = int(capsys.readouterr().err.split("seed:")[1])
        assert main(["gen-model", "--arch", "5-2", "--seed", str(seed),
                     "--out", str(tmp_path / "h.json")]) == 0
        assert out.read_bytes() == (tmp_path / "h.json").read_bytes()

    def test_bad_arch(self, tmp_path):
        assert main(["gen-model", "--arch", "5-zz-2", "--seed", "0",
                     "--out", str(tmp_path / "g.json")]) == 1

    def test_compare(self, tmp_path, capsys):
        (tmp_path / "cfg.json").write_text(json.dumps({
            "models": {"arch": "6-8-relu-1", "count": 2},
            "methods": [{"name": "occlusion"}, {"name": "dasp", "K": [2, 6]}], "seed": 1}))
        out = tmp_path / "report.csv"
        assert main(["compare", "--config", str(tmp_path / "cfg.json"), "--out", str(out),
                     "--jobs", "2"]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("model_id,sample_id,method")
        assert len(lines) == 1 + 2 * 3
        assert "dasp" in capsys.readouterr().out

    def test_bad_config(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"models": {"arch": "4-1"}, "methods": []}))
        assert main(["compare", "--config", str(tmp_path / "cfg.json"),
                     "--out", str(tmp_path / "r.csv")]) == 1


def test_read_vector(tmp_path):
    (tmp_path / "a.json").write_text("[[1, 2], [3, 4]]")
    (tmp_path / "b.csv").write_text("1.5\n-2\n\n")
    np.testing.assert_array_equal(read_vector(tmp_path / "a.json").reshape(-1), [1, 2, 3, 4])
    np.testing.assert_array_equal(read_vector(tmp_path / "b.csv"), [1.5, -2])


def test_help_lists_commands():
    out = subprocess.run([sys.executable, "-m", "shapprop", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for cmd in ("attribute", "oracle", "compare", "gen-model", "moments-check"):
        assert cmd in out
    sub = subprocess.run([sys.executable, "-m", "shapprop", "attribute", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for flag in ("--model", "--input", "--method", "--K", "--M", "--steps", "--class",
                 "--baseline", "--paper-verbatim-scaling", "--seed"):
        assert flag in sub
