import json
import subprocess
import sys

import numpy as np
import pytest

from so3kit.cg import basis_q_j
from so3kit.cli import main
from so3kit.graph import save_graph_json
from so3kit.harness import synthetic_dataset
from so3kit.so3 import random_rotation

TINY_MODEL = {"num_blocks": 1, "channels": 2, "max_degree": 1, "n_heads": 1, "decoder_channels": 4,
              "head_hidden": 4, "radial_hidden": 4}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def config_line(err: str) -> dict:
    return json.loads(err.splitlines()[0])


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({"model": TINY_MODEL, "train": {"epochs": 3, "lr": 1e-2}}))
    return path


class TestCgTable:
    def test_degree_zero_is_single_unit_block(self, capsys):
        code, out, err = run(capsys, "cg-table", "--max-degree", "0")
        assert code == 0
        assert [json.loads(x) for x in out.splitlines()] == [{"k": 0, "l": 0, "J": 0, "rows": 1, "cols": 1,
                                                              "data": [1.0]}]
        assert config_line(err) == {"command": "cg-table", "config": {"max_degree": 0, "out": None}}

    def test_degree_one_blocks(self, capsys):
        _, out, _ = run(capsys, "cg-table", "--max-degree", "1")
        blocks = [json.loads(x) for x in out.splitlines()]
        assert {(b["k"], b["l"]) for b in blocks} == {(0, 0), (0, 1), (1, 0), (1, 1)}
        assert [b["J"] for b in blocks if (b["k"], b["l"]) == (1, 1)] == [0, 1, 2]
        for b in blocks:
            q = np.array(b["data"]).reshape(b["rows"], b["cols"])
            assert np.array_equal(q, basis_q_j(b["k"], b["l"], b["J"]).q_t)

    def test_rerun_bit_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(capsys, "cg-table", "--max-degree", "2", "--out", str(a))[0] == 0
        assert run(capsys, "cg-table", "--max-degree", "2", "--out", str(b))[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_degree_out_of_range(self, capsys):
        code, _, err = run(capsys, "cg-table", "--max-degree", "9")
        assert code == 2 and "max degree" in err

    def test_config_file_and_flag_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"max_degree": 0}))
        _, out, _ = run(capsys, "cg-table", "--config", str(cfg))
        assert len(out.splitlines()) == 1
        _, out, err = run(capsys, "cg-table", "--config", str(cfg), "--max-degree", "1")
        assert len(out.splitlines()) == 6 and config_line(err)["config"]["max_degree"] == 1

    def test_unreadable_config(self, tmp_path, capsys):
        code, _, err = run(capsys, "cg-table", "--config", str(tmp_path / "missing.json"))
        assert code == 2 and "cannot read config" in err


class TestShEval:
    def test_degree_zero_constant(self, capsys):
        code, out, _ = run(capsys, "sh-eval", "--degree", "0", "--dir", "0.3,-2,5")
        assert code == 0 and float(out) == pytest.approx(0.2820948, abs=1e-7)

    def test_pole_has_single_nonzero(self, capsys):
        _, out, _ = run(capsys, "sh-eval", "--degree", "1", "--dir", "0,0,1")
        values = [float(x) for x in out.split()]
        assert len(values) == 3 and values[0] == 0.0 and values[2] == 0.0 and values[1] != 0.0

    def test_zero_direction(self, capsys):
        code, out, err = run(capsys, "sh-eval", "--degree", "1", "--dir", "0,0,0")
        assert code == 2 and out == "" and "degenerate direction" in err

    @pytest.mark.parametrize("bad", ["1,2", "a,b,c"])
    def test_malformed_direction(self, capsys, bad):
        assert run(capsys, "sh-eval", "--degree", "1", "--dir", bad)[0] == 2


class TestCheck:
    def test_math_passes(self, capsys):
        code, out, err = run(capsys, "check", "--target", "math", "--trials", "2")
        assert code == 0 and out.startswith("PASS")
        assert config_line(err)["config"]["tol"] == 1e-9

    def test_tolerance_below_floor_fails(self, capsys):
        code, out, _ = run(capsys, "check", "--target", "math", "--trials", "2", "--tol", "1e-15")
        assert code == 1 and "FAIL" in out

    def test_report_written(self, tmp_path, capsys):
        report = tmp_path / "r.json"
        run(capsys, "check", "--target", "tfn", "--trials", "1", "--report", str(report))
        doc = json.loads(report.read_text())
        assert doc["target"] == "tfn" and doc["passed"] and doc["reports"]

    def test_zero_trials(self, capsys):
        assert run(capsys, "check", "--trials", "0")[0] == 2


class TestTrainPredict:
    def test_train_emits_run_json(self, tiny_config, capsys):
        code, out, err = run(capsys, "train", "--synthetic", "4", "--config", str(tiny_config))
        assert code == 0
        doc = json.loads(out)
        assert len(doc["loss_trace"]) == 3 and doc["seed"] == 0
        resolved = config_line(err)["config"]
        assert resolved["model"]["channels"] == 2 and resolved["train"]["epochs"] == 3

    def test_flags_override_file(self, tiny_config, capsys):
        _, out, _ = run(capsys, "train", "--synthetic", "3", "--config", str(tiny_config), "--epochs", "2")
        assert len(json.loads(out)["loss_trace"]) == 2

    def test_train_bit_identical(self, tiny_config, tmp_path, capsys):
        outs = []
        for name in "ab":
            path = tmp_path / f"{name}.json"
            run(capsys, "train", "--synthetic", "4", "--config", str(tiny_config), "--seed", "3", "--out", str(path))
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_train_from_directory_and_predict(self, tiny_config, tmp_path, capsys):
        data = tmp_path / "data"
        data.mkdir()
        graphs = synthetic_dataset(3, seed=5)
        for i, g in enumerate(graphs):
            save_graph_json(g, data / f"g{i}.json")
        ck = tmp_path / "ck.json"
        code, _, _ = run(capsys, "train", "--data", str(data), "--config", str(tiny_config), "--checkpoint", str(ck))
        assert code == 0 and ck.exists()

        code, out, _ = run(capsys, "predict", "--checkpoint", str(ck), "--input", str(data / "g0.json"))
        assert code == 0 and len(out.split()) == 1
        base = float(out)

        rng = np.random.default_rng(0)
        save_graph_json(graphs[0].transformed(random_rotation(rng), rng.normal(size=3)), tmp_path / "moved.json")
        _, out, _ = run(capsys, "predict", "--checkpoint", str(ck), "--input", str(tmp_path / "moved.json"))
        assert abs(float(out) - base) <= 1e-5 * (1 + abs(base))

    def test_train_needs_data(self, capsys):
        code, _, err = run(capsys, "train")
        assert code == 2 and "--synthetic" in err

    def test_missing_directory(self, tmp_path, capsys):
        assert run(capsys, "train", "--data", str(tmp_path / "nope"))[0] == 2

    def test_unknown_model_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model": {"depth": 3}}))
        code, _, err = run(capsys, "train", "--synthetic", "2", "--config", str(cfg))
        assert code == 2 and "depth" in err

    def test_divergence_exits_one(self, tiny_config, capsys):
        with np.errstate(all="ignore"):
            code, _, err = run(capsys, "train", "--synthetic", "3", "--config", str(tiny_config), "--lr", "1e300",
                               "--epochs", "50")
        assert code == 1 and "error" in err

    def test_predict_needs_arguments(self, capsys):
        assert run(capsys, "predict")[0] == 2

    def test_predict_bad_checkpoint(self, tmp_path, capsys):
        (tmp_path / "ck.json").write_text("{}")
        (tmp_path / "g.json").write_text("{}")
        assert run(capsys, "predict", "--checkpoint", str(tmp_path / "ck.json"), "--input",
                   str(tmp_path / "g.json"))[0] == 2


class TestProcess:
    @pytest.mark.parametrize("command", [[], ["cg-table"], ["sh-eval"], ["check"], ["train"], ["predict"]])
    def test_help_exits_zero(self, command):
        proc = subprocess.run([sys.executable, "-m", "so3kit", *command, "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "usage" in proc.stdout

    def test_thread_limit_variable(self):
        env = {"SO3KIT_THREADS": "1", "PATH": ""}
        proc = subprocess.run([sys.executable, "-m", "so3kit", "sh-eval", "--degree", "0", "--dir", "1,0,0"],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 0 and float(proc.stdout) == pytest.approx(0.2820948, abs=1e-7)

    def test_bad_thread_limit(self):
        proc = subprocess.run([sys.executable, "-m", "so3kit", "sh-eval"], capture_output=True, text=True,
                              env={"SO3KIT_THREADS": "many", "PATH": ""})
        assert proc.returncode == 2 and "SO3KIT_THREADS" in proc.stderr
