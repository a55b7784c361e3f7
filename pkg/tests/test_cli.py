import csv
import json

import numpy as np
import pytest

from noisy_nngp import cli
from noisy_nngp.cli import main, parse_grid, read_config
from noisy_nngp.mc_oracle import OracleCheck


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    meta = json.loads(lines[0][2:])
    return meta, list(csv.DictReader(lines[1:]))


class TestParsing:
    def test_grid_range(self):
        assert parse_grid("1.0:2.0:0.2") == (1.0, 1.2, 1.4, 1.6, 1.8, 2.0)

    def test_grid_list(self):
        assert parse_grid("1,1.5, 2") == (1.0, 1.5, 2.0)

    def test_full_grid_size(self):
        assert len(parse_grid("1.0:2.0:0.01")) == 101

    def test_config_grammar(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nsw2_grid = 1.0,2.0\nfull-grid = false\nplot = 'x.svg'\nlogy = true\n")
        assert read_config(p) == ["--sw2-grid=1.0,2.0", "--plot=x.svg", "--logy"]

    def test_config_bad_line(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("no equals sign\n")
        assert main(["limits", "--config", str(p)]) == 1


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0

    def test_bad_flag(self, capsys):
        assert main(["sweep", "--no-such-flag"]) == 1

    def test_bad_value(self):
        assert main(["limits", "--sb2", "-1"]) == 1

    def test_missing_data(self, tmp_path):
        assert main(["classify", "--data-dir", str(tmp_path), "--out", str(tmp_path / "c.json")]) == 1

    def test_smoke_sweep(self, tmp_path, data_dir):
        out = tmp_path / "s.csv"
        code = main(["sweep", "--data-dir", str(data_dir), "--n-train", "50", "--n-test", "50",
                     "--sw2-grid", "1.5,2.0", "--mu2-grid", "1.0,2.0", "--depths", "5",
                     "--out", str(out), "--plot", str(tmp_path / "h.svg")])
        assert code == 0
        meta, rows = read_csv(out)
        assert meta["command"] == "sweep" and meta["flags"]["seed"] == 0
        assert len(rows) == 4 and all(r["status"] == "OK" for r in rows)
        assert (tmp_path / "h.svg").read_text().startswith("<svg")

    def test_partial_failure(self, tmp_path, data_dir):
        out = tmp_path / "s.csv"
        code = main(["sweep", "--data-dir", str(data_dir), "--n-train", "20", "--n-test", "20",
                     "--sw2-grid", "1.0,3.0", "--mu2-grid", "2.0", "--depths", "3000", "--out", str(out)])
        assert code == 2
        _, rows = read_csv(out)
        assert [r["status"] for r in rows] == ["OK", "Overflow"]

    def test_env_data_dir(self, tmp_path, data_dir, monkeypatch):
        monkeypatch.setenv("NNGP_DATA_DIR", str(data_dir))
        out = tmp_path / "c.json"
        assert main(["classify", "--n-train", "30", "--n-test", "30", "--depth", "3", "--out", str(out)]) == 0
        assert 0 <= json.loads(out.read_text())["accuracy"] <= 1

    def test_verify_failure_exits_nonzero(self, tmp_path, monkeypatch):
        monkeypatch.setattr(cli, "run_oracle_suite", lambda *a, **k: [OracleCheck("bad", 1.0, 2.0, 0.1, 0.3)])
        assert main(["verify", "--out", str(tmp_path / "v.json")]) == 2
        assert json.loads((tmp_path / "v.json").read_text())["checks"][0]["passed"] is False

    def test_verify_small(self, tmp_path):
        out = tmp_path / "v.json"
        assert main(["verify", "--n-configs", "3", "--n-samples", "20000", "--width", "512",
                     "--n-networks", "200", "--out", str(out)]) in (0, 2)
        assert len(json.loads(out.read_text())["checks"]) == 1 + 6 + 6


class TestLimits:
    def run(self, capsys, *argv):
        assert main(["limits", *argv]) == 0
        return capsys.readouterr().out.strip()

    def test_fixed(self, capsys):
        assert self.run(capsys, "--sw2", "1.0", "--mu2", "2.0", "--sb2", "0", "--noise", "mult") == "M5 FixedPreserving"

    def test_additive_limit(self, capsys):
        out = self.run(capsys, "--sw2", "1.0", "--mu2", "0.5", "--sb2", "0.1", "--noise", "add")
        assert out == "A1 ConstantLimit(1.2)"

    def test_critical_keyword(self, capsys):
        assert self.run(capsys, "--mu2", "1.5") == "M5 FixedPreserving"

    def test_boundary(self, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["limits", "--boundary", "--out", str(out)]) == 0
        _, rows = read_csv(out)
        assert len(rows) == 101
        assert float(rows[0]["mu2"]) == 1.0 and float(rows[0]["sigma_w2"]) == 2.0

    def test_flag_beats_config(self, tmp_path, capsys):
        p = tmp_path / "l.cfg"
        p.write_text("sw2 = 5.0\nmu2 = 2.0\n")
        assert self.run(capsys, "--config", str(p)) == "M3 Divergent"
        assert self.run(capsys, "--config", str(p), "--sw2", "1.0") == "M5 FixedPreserving"


class TestTraceDemo:
    def test_critical_trace_constant(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["trace", "--mu2", "1.0,1.5,2.0", "--depth", "50", "--out", str(out),
                     "--plot", str(tmp_path / "t.svg"), "--logy"]) == 0
        _, rows = read_csv(out)
        assert len(rows) == 3 * 51
        for mu2 in ("1.0", "1.5", "2.0"):
            kxx = np.array([float(r["k_xx"]) for r in rows if r["mu2"] == mu2])
            np.testing.assert_allclose(kxx, float(mu2), rtol=1e-12)
        assert (tmp_path / "t_diag.svg").exists() and (tmp_path / "t_offdiag.svg").exists()

    def test_demo1d(self, tmp_path):
        out = tmp_path / "d.json"
        assert main(["demo1d", "--mu2", "1.0,1.001,2.0", "--out", str(out), "--plot", str(tmp_path / "d.svg")]) == 0
        payload = json.loads(out.read_text())
        assert [b["mu2"] for b in payload["bundles"]] == [1.0, 1.001, 2.0]
        assert len(list(tmp_path.glob("d_mu2_*.svg"))) == 9
