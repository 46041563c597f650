import argparse
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from clansim.cli import main, parse_transport
from clansim.compressors import CompressorKind, compress, encode_frame


def write_config(path, **overrides):
    cfg = {"problem": "quadratic", "steps": 10, "lr": 0.01}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


class TestTrain:
    def test_minimal_run(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["--out-dir", str(out), "train", str(write_config(tmp_path / "c.json"))])
        assert code == 0
        rows = list(csv.reader((out / "metrics.csv").open()))
        assert len(rows) == 11 and rows[0][0] == "step"
        assert (out / "summary.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 0 and manifest["config"]["steps"] == 10
        assert "steps=10" in capsys.readouterr().out

    def test_manifest_replay_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", problem="logistic", problem_params={"n_samples": 400, "d": 10},
                           optimizer="clan", n_workers=2, batch_size=8,
                           aggregation={"compressor": "top_k:0.2", "use_ef": True, "size_threshold_bytes": 0})
        assert main(["--seed", "5", "--out-dir", str(tmp_path / "a"), "train", str(cfg)]) == 0
        assert main(["--out-dir", str(tmp_path / "b"), "train", str(tmp_path / "a" / "manifest.json")]) == 0
        first = (tmp_path / "a" / "metrics.csv").read_bytes()
        assert first == (tmp_path / "b" / "metrics.csv").read_bytes()
        assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 5

    def test_omega_with_ef_warns_and_runs(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", optimizer="clan",
                           aggregation={"compressor": "random_k:0.5", "use_ef": True})
        assert main(["--out-dir", str(tmp_path / "o"), "train", str(cfg)]) == 0
        assert "WARNING" in capsys.readouterr().err
        assert len((tmp_path / "o" / "metrics.csv").read_text().splitlines()) == 11

    def test_missing_file(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "train", str(tmp_path / "nope.json")]) == 2

    @pytest.mark.parametrize("cfg", [{"problem": "quadratic", "stepz": 3}, {"optimizer": "sgd"},
                                     {"aggregation": {"compressor": "fp16:f16"}}])
    def test_bad_config(self, tmp_path, cfg, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert main(["--out-dir", str(tmp_path), "train", str(path)]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        assert main(["--out-dir", str(tmp_path), "train", str(path)]) == 2

    def test_tcp_transport_same_csv(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", n_workers=2, steps=4)
        assert main(["--out-dir", str(tmp_path / "i"), "train", str(cfg)]) == 0
        assert main(["--transport", "tcp", "--out-dir", str(tmp_path / "t"), "train", str(cfg)]) == 0
        assert (tmp_path / "i" / "metrics.csv").read_bytes() == (tmp_path / "t" / "metrics.csv").read_bytes()

    def test_parse_transport(self):
        assert parse_transport("tcp:localhost:9000") == {"transport": "tcp", "host": "localhost", "port": 9000}
        with pytest.raises(argparse.ArgumentTypeError):
            parse_transport("tcp:nohost")


class TestVerify:
    def test_compressors_pass(self, tmp_path, capsys):
        assert main(["--out-dir", str(tmp_path), "verify", "compressors"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "PASS" in out
        rows = list(csv.reader((tmp_path / "verify_report.csv").open()))
        assert rows[0] == ["suite", "check", "passed", "margin", "detail"]
        assert all(r[2] == "1" for r in rows[1:])

    def test_sabotage_fails(self, capsys):
        assert main(["verify", "protocol", "--delta-offset", "0.5"]) == 1
        fails = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("FAIL")]
        assert fails and all("ef_residual" in ln for ln in fails)

    def test_all_is_superset(self, capsys):
        assert main(["verify", "all"]) == 0
        names = {ln.split()[2] for ln in capsys.readouterr().out.splitlines() if ln.startswith("PASS")}
        main(["verify", "bounds"])
        sub = {ln.split()[2] for ln in capsys.readouterr().out.splitlines() if ln.startswith("PASS")}
        assert sub and sub <= names


class TestBench:
    def test_identical_outputs(self, capsys):
        assert main(["bench", "--kind", "top_k:0.01", "--d", "20000", "--threads", "3",
                     "--min-seconds", "0.01", "--size-threshold", "0"]) == 0
        out = capsys.readouterr().out
        assert "identical across thread counts: yes" in out and "copy baseline" in out

    def test_below_threshold_note(self, capsys):
        assert main(["bench", "--kind", "scaled_sign", "--d", "100", "--threads", "1",
                     "--min-seconds", "0.01"]) == 0
        assert "uncompressed" in capsys.readouterr().out

    def test_bad_kind(self):
        assert main(["bench", "--kind", "zip", "--min-seconds", "0.01"]) == 2


class TestInspect:
    def _frame(self, tmp_path, kind, x, name="f.bin"):
        path = tmp_path / name
        path.write_bytes(encode_frame(compress(kind, np.asarray(x, dtype=np.float32)), 7))
        return path

    def test_scaled_sign(self, tmp_path, capsys):
        path = self._frame(tmp_path, CompressorKind.scaled_sign(), [1.0, -3.0, 2.0, -2.0, 0.5])
        assert main(["inspect", str(path)]) == 0
        out = capsys.readouterr().out
        assert "scaled_sign" in out and "tensor_id   7" in out
        assert "sign bits   3 positive, 2 negative" in out
        assert "scale       1.7" in out  # ||x||_1 / d = 8.5 / 5

    def test_none_round_trip(self, tmp_path, capsys):
        path = self._frame(tmp_path, CompressorKind.none(), [0.5, -1.25, 3.0])
        assert main(["inspect", str(path)]) == 0
        assert "[0.5, -1.25, 3]" in capsys.readouterr().out

    def test_truncated(self, tmp_path, capsys):
        path = self._frame(tmp_path, CompressorKind.none(), np.arange(4))
        path.write_bytes(path.read_bytes()[:30])
        assert main(["inspect", str(path)]) == 1
        err = capsys.readouterr().err
        assert "malformed" in err and "30" in err

    def test_missing(self, tmp_path):
        assert main(["inspect", str(tmp_path / "none.bin")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "clansim", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("train", "verify", "bench", "inspect"):
        assert sub in proc.stdout


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "clansim", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
