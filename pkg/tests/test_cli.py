"""Command-line interface: reports, output files, replay and exit codes."""

import hashlib
import json
import math
import subprocess
import sys

import pytest

from quasiergodic.cli import main

CLOSED_FORM = {"convention": "absorbed", "birth": {"expr": "i+3"}, "death": {"expr": "(i+1)^2"}}


@pytest.fixture
def config(tmp_path):
    def write(doc, name="config.json"):
        path = tmp_path / name
        path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
        return str(path)
    return write


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


class TestCommands:
    def test_classify(self, capsys, config):
        doc = run_json(capsys, "classify", "--config", config(CLOSED_FORM))
        assert doc["boundary"] == "entrance"
        assert doc["series"]["A"]["verdict"] == "divergent"

    def test_lambda(self, capsys, config):
        doc = run_json(capsys, "lambda", "--config", config(CLOSED_FORM), "--tol", "1e-10")
        assert doc["lambda"] == pytest.approx(2.0, abs=1e-10)

    def test_lambda_truncation_cap(self, capsys, config):
        code, _, err = run(capsys, "lambda", "--config", config(CLOSED_FORM), "--tol", "1e-14",
                           "--truncation", "32")
        assert code == 3 and "cap" in err

    def test_qsd_truncation(self, capsys, config):
        doc = run_json(capsys, "qsd", "--config", config(CLOSED_FORM), "--truncation", "10")
        assert len(doc["distribution"]["weights"]) == 10
        # renormalised over the ten kept states
        exact = [k / math.factorial(k + 1) for k in range(1, 11)]
        assert doc["distribution"]["weights"][0] == pytest.approx(0.5 / sum(exact), rel=1e-12)

    def test_qed(self, capsys, config):
        doc = run_json(capsys, "qed", "--config", config(CLOSED_FORM))
        assert doc["distribution"]["weights"][0] == pytest.approx(0.3817694488, rel=1e-8)

    def test_hprocess(self, capsys, config):
        doc = run_json(capsys, "hprocess", "--config", config(CLOSED_FORM))
        assert doc["boundary"] == "entrance"
        assert doc["death"][0] == 0.0

    def test_ordering(self, capsys, config):
        doc = run_json(capsys, "ordering", "--config", config(CLOSED_FORM))
        assert doc["is_lr_ordered"] is True

    def test_eigentime(self, capsys, config):
        doc = run_json(capsys, "eigentime", "--config", config(CLOSED_FORM))
        assert doc["rel_errors"]["series_alt"] < 1e-8
        assert doc["primal"]["birth"] == {"expr": "(i+2)^2"}

    def test_oracle_on_chain_file(self, capsys, config):
        chain = {"states": 2, "rates": [[1, 2, 1.0], [2, 1, 2.0]],
                 "absorption": [[1, 2.0], [2, 2.0]]}
        doc = run_json(capsys, "oracle", "--config", config(chain))
        assert doc["perron"]["lambda"] == pytest.approx(2.0)
        assert doc["marginal_tv_to_nu"] < 1e-12
        assert doc["h_generator"]["constants"] < 1e-12

    def test_oracle_on_truncated_spec(self, capsys, config):
        doc = run_json(capsys, "oracle", "--config", config(CLOSED_FORM), "--truncation", "20")
        assert doc["perron"]["lambda"] == pytest.approx(2.0, abs=1e-6)

    def test_simulate(self, capsys, config):
        doc = run_json(capsys, "simulate", "--config", config(CLOSED_FORM), "--horizon", "1",
                       "--paths", "4000", "--seed", "3")
        assert doc["batch"]["seed"] == 3
        assert doc["qed"]["n_surviving"] > 30
        again = run_json(capsys, "simulate", "--config", config(CLOSED_FORM), "--horizon", "1",
                         "--paths", "4000", "--seed", "3", "--jobs", "2")
        assert again["fingerprint"] == doc["fingerprint"]

    def test_simulate_h_process(self, capsys, config):
        doc = run_json(capsys, "simulate", "--config", config(CLOSED_FORM), "--horizon", "2",
                       "--paths", "500", "--h-process")
        assert doc["qed"]["n_surviving"] == 500


class TestOutputs:
    def test_files_and_manifest(self, capsys, config, tmp_path):
        out = tmp_path / "out"
        code, stdout, _ = run(capsys, "qsd", "--config", config(CLOSED_FORM), "--out", str(out),
                              "--format", "csv")
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["outputs"]) == {"qsd.json", "qsd.csv"}
        for name, digest in manifest["outputs"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
        assert (out / "qsd.json").read_text() == stdout
        assert manifest["config"] == CLOSED_FORM
        assert manifest["tolerances"]["tol"] == 1e-6

    def test_replay_reproduces(self, capsys, config, tmp_path):
        out = tmp_path / "out"
        run(capsys, "simulate", "--config", config(CLOSED_FORM), "--out", str(out),
            "--horizon", "1", "--paths", "3000", "--seed", "11", "--format", "csv")
        code, stdout, _ = run(capsys, "replay", "--config", str(out / "manifest.json"))
        assert code == 0
        assert json.loads(stdout)["reproduced"] is True

    def test_replay_detects_mismatch(self, capsys, config, tmp_path):
        out = tmp_path / "out"
        run(capsys, "lambda", "--config", config(CLOSED_FORM), "--out", str(out))
        manifest = json.loads((out / "manifest.json").read_text())
        manifest["outputs"]["lambda.json"] = "0" * 64
        tampered = config(manifest, "manifest.json")
        code, stdout, _ = run(capsys, "replay", "--config", tampered)
        assert code == 3
        assert json.loads(stdout)["mismatched"] == ["lambda.json"]

    def test_infinite_values_are_strings(self, capsys, config):
        doc = run_json(capsys, "classify", "--config", config(CLOSED_FORM))
        assert doc["series"]["A"]["partial_sum"] == "inf"


class TestExitCodes:
    def test_no_arguments(self, capsys):
        code, out, _ = run(capsys)
        assert code == 64 and out.startswith("usage:")

    def test_help(self, capsys):
        code, out, _ = run(capsys, "--help")
        assert code == 0 and "replay" in out

    def test_unknown_command(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 64 and "unknown command" in err

    def test_rate_syntax_error(self, capsys, config):
        bad = {"birth": {"expr": "i*"}, "death": {"expr": "i"}}
        code, _, err = run(capsys, "lambda", "--config", config(bad))
        assert code == 2 and "column 3" in err

    def test_invalid_json(self, capsys, config):
        code, _, err = run(capsys, "classify", "--config", config("{not json"))
        assert code == 2

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "classify", "--config", str(tmp_path / "nope.json"))
        assert code == 2

    def test_natural_boundary(self, capsys, config):
        natural = {"birth": {"expr": "i"}, "death": {"expr": "2*i"}}
        code, _, err = run(capsys, "lambda", "--config", config(natural))
        assert code == 2 and "natural" in err

    def test_insufficient_survivors(self, capsys, config):
        code, _, err = run(capsys, "simulate", "--config", config(CLOSED_FORM),
                           "--paths", "100", "--horizon", "20")
        assert code == 2 and "surviving" in err

    def test_chain_given_to_spec_command(self, capsys, config):
        chain = {"states": 1, "rates": [], "absorption": [[1, 1.0]]}
        code, _, _ = run(capsys, "lambda", "--config", config(chain))
        assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "quasiergodic"], capture_output=True, text=True)
    assert proc.returncode == 64
    assert "usage:" in proc.stdout
