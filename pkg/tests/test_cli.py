import json

import numpy as np
import pytest

from hydrofit.cli import main, parse_range
from hydrofit.core import FittedModel
from hydrofit.dataset import load_csv
from hydrofit.models import PolyParams
from hydrofit.simulator import REFERENCE_COEFFS

SMALL = ["--flow-rates", "50,100", "--cycles", "2"]


def cli(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli(["simulate", "--seed", "42", "--noise", "0", "--out", str(out)] + SMALL) == 0
    return out


@pytest.fixture(scope="module")
def noisy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("noisy")
    assert cli(["simulate", "--seed", "7", "--noise", "0.3", "--out", str(out)] + SMALL) == 0
    return out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


class TestParseRange:
    @pytest.mark.parametrize("text, want", [("3", [3]), ("1..4", [1, 2, 3, 4]), ("1,3,5", [1, 3, 5])])
    def test_forms(self, text, want):
        assert parse_range(text) == want

    def test_bad(self):
        with pytest.raises(Exception):
            parse_range("4..1")


class TestSimulate:
    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert cli(["simulate", "--seed", "42", "--out", str(tmp_path / d)] + SMALL) == 0
        assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()

    def test_air_recorded(self, tmp_path):
        assert cli(["simulate", "--air", "100", "--out", str(tmp_path)] + SMALL) == 0
        truth = json.loads((tmp_path / "truth.json").read_text())
        assert truth["truth"]["air_volume"] == 100

    def test_default_protocol_size(self, tmp_path, capsys):
        assert cli(["simulate", "--out", str(tmp_path)]) == 0
        assert "wrote 100 trajectories" in capsys.readouterr().out

    def test_manifest(self, sim_dir):
        m = manifest(sim_dir)
        assert m["command"] == "simulate" and m["config"]["seed"] == 42
        assert set(m) == {"command", "config", "input_hashes", "tool_version", "timestamp"}
        assert len(list(sim_dir.glob("manifest*.json"))) == 1


class TestFit:
    def test_poly_round_trip(self, sim_dir, tmp_path, capsys):
        code = cli(["fit", sim_dir / "data.csv", "--family", "poly", "--n", "3", "--m", "2", "--out", tmp_path])
        assert code == 0
        model = FittedModel.load(tmp_path / "model.json")
        got = PolyParams.from_flat(model.spec, model.params).table()
        nz = REFERENCE_COEFFS != 0
        # the CSV stores 17 significant digits, so recovery stays near machine precision
        assert np.max(np.abs(got[nz] / REFERENCE_COEFFS[nz] - 1)) <= 1e-6
        out = capsys.readouterr().out
        assert "RMSE" in out and "nu" in out

    def test_intercept(self, noisy_dir, tmp_path):
        cli(["fit", noisy_dir / "data.csv", "--n", "0", "--m", "0", "--out", tmp_path])
        model = FittedModel.load(tmp_path / "model.json")
        p = load_csv(noisy_dir / "data.csv").column("p")
        assert model.params[0] == pytest.approx(p.mean(), rel=1e-12)

    def test_exp_nu(self, noisy_dir, tmp_path):
        assert cli(["fit", noisy_dir / "data.csv", "--family", "exp", "--k", "3", "--out", tmp_path]) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["report"]["nu"] == 8
        assert report["cost"]["class"] == "LM-LSQ"


class TestOtherCommands:
    def test_select(self, noisy_dir, tmp_path):
        assert cli(["select", noisy_dir / "data.csv", "--family", "poly", "--n", "1..4", "--m", "1..3",
                     "--out", tmp_path]) == 0
        grid = json.loads((tmp_path / "grid.json").read_text())
        assert len(grid["entries"]) == 12
        assert (tmp_path / "table.txt").read_text().count("\n") == 14

    def test_pca(self, noisy_dir, tmp_path):
        assert cli(["pca", noisy_dir / "data.csv", "--out", tmp_path]) == 0
        res = json.loads((tmp_path / "pca.json").read_text())
        assert "correlations" in res

    def test_diagnose(self, sim_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        cli(["fit", sim_dir / "data.csv", "--out", fit_dir])
        assert cli(["diagnose", fit_dir / "model.json", sim_dir / "data.csv", "--out", tmp_path / "diag"]) == 0
        lines = (tmp_path / "diag" / "pointwise.csv").read_text().splitlines()
        assert lines[0] == "v,vdot,k,c"
        assert len(lines) - 1 == load_csv(sim_dir / "data.csv").n_samples

    def test_chow(self, sim_dir, noisy_dir, tmp_path):
        assert cli(["chow", sim_dir / "data.csv", noisy_dir / "data.csv", "--n", "3", "--m", "2",
                     "--alpha", "0.0005", "--out", tmp_path]) == 0
        rep = json.loads((tmp_path / "chow.json").read_text())
        assert {"f_stat", "critical_value", "reject", "p_value"} <= set(rep)
        assert rep["df1"] == 12

    def test_force(self, sim_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        cli(["fit", sim_dir / "data.csv", "--out", fit_dir])
        data = sim_dir / "data.csv"
        args = ["force", "--models"] + [fit_dir / "model.json"] * 3 + ["--streams"] + [data] * 3
        assert cli(args + ["--out", tmp_path / "force"]) == 0
        lines = (tmp_path / "force" / "force.csv").read_text().splitlines()
        assert lines[0] == "t,force,r1,r2,r3"
        summary = json.loads((tmp_path / "force" / "force.json").read_text())
        assert abs(summary["mean_force"]) < 1e-6


class TestExitCodes:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli(["fit"])
        assert exc.value.code == 2

    def test_bad_flag_value(self):
        with pytest.raises(SystemExit) as exc:
            cli(["select", "x.csv", "--n", "a..b"])
        assert exc.value.code == 2

    def test_missing_file(self, tmp_path, capsys):
        assert cli(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1
        assert capsys.readouterr().err

    def test_runtime_error(self, sim_dir, tmp_path, capsys):
        # an exponential model has no analytic partials
        fit_dir = tmp_path / "fit"
        cli(["fit", sim_dir / "data.csv", "--family", "exp", "--k", "1", "--out", fit_dir])
        code = cli(["diagnose", fit_dir / "model.json", sim_dir / "data.csv", "--out", tmp_path / "d"])
        assert code == 1
        assert "polynomial" in capsys.readouterr().err
