import json

import numpy as np
import pytest

from hybrid_safety.cli import action_flip, main, sweep_grid
from hybrid_safety.model import thermostat_config_path

FAST = ["--beliefs", "6", "--probes", "3"]


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["solve", "--out", str(out), *FAST]) == 0
    return out


def body(path):
    return [l for l in path.read_text().splitlines() if not l.startswith("#")]


class TestFitIndicator:
    def test_error_shrinks_and_is_reproducible(self, tmp_path, capsys):
        assert main(["fit-indicator", "--iq", "10", "--out", str(tmp_path)]) == 0
        assert main(["fit-indicator", "--iq", "30", "--out", str(tmp_path)]) == 0
        d10 = json.loads((tmp_path / "rbf_iq10.json").read_text())
        d30 = json.loads((tmp_path / "rbf_iq30.json").read_text())
        assert d30["delta_I"] < d10["delta_I"]
        assert {"config_hash", "seed", "schema"} <= d10.keys()
        first = (tmp_path / "rbf_iq10.json").read_bytes()
        assert main(["fit-indicator", "--iq", "10", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "rbf_iq10.json").read_bytes() == first
        assert "delta_I" in capsys.readouterr().out

    def test_zero_components_is_config_error(self, tmp_path, capsys):
        assert main(["fit-indicator", "--iq", "0", "--out", str(tmp_path)]) != 0
        assert "error" in capsys.readouterr().err


class TestSolve:
    def test_artifacts(self, solved_dir):
        pol = json.loads((solved_dir / "policy_finite.json").read_text())
        assert pol["schema"] == "hybrid_safety.policy/1"
        assert {"config_hash", "seed", "model_hash"} <= pol["meta"].keys()
        bnd = json.loads((solved_dir / "bounds_finite.json").read_text())
        assert bnd["config_hash"] == pol["meta"]["config_hash"]
        assert bnd["heuristic_total"] >= 0

    def test_same_seed_same_policy(self, solved_dir, tmp_path):
        assert main(["solve", "--out", str(tmp_path), *FAST]) == 0
        assert (tmp_path / "policy_finite.json").read_bytes() == (solved_dir / "policy_finite.json").read_bytes()

    def test_horizon_zero(self, tmp_path, thermostat, finite_backend):
        assert main(["solve", "--horizon", "0", "--out", str(tmp_path), *FAST]) == 0
        meta = json.loads((tmp_path / "policy_finite.json").read_text())["meta"]
        np.testing.assert_allclose(meta["value"], finite_backend.rho[:-1].sum())

    def test_missing_config(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) != 0

    def test_bad_grid_parameter(self, tmp_path):
        assert main(["solve", "--delta-x", "-1", "--out", str(tmp_path)]) != 0


class TestSweep:
    def test_single_point(self, solved_dir, tmp_path):
        args = ["sweep", "--policy", str(solved_dir / "policy_finite.json"), "--mu0-start", "18.0",
                "--mu0-stop", "18.0", "--out", str(tmp_path)]
        assert main(args) == 0
        rows = body(tmp_path / "sweep_finite.csv")
        assert len(rows) == 2 and rows[1].startswith("18,")

    def test_sorted_and_reproducible(self, solved_dir, tmp_path):
        args = ["sweep", "--policy", str(solved_dir / "policy_finite.json"), "--with-bounds", *FAST,
                "--out", str(tmp_path)]
        assert main(args) == 0
        first = (tmp_path / "sweep_finite.csv").read_bytes()
        rows = body(tmp_path / "sweep_finite.csv")
        mus = [float(r.split(",")[0]) for r in rows[1:]]
        assert mus == sorted(mus) and len(mus) == 46
        assert rows[1].split(",")[3] != ""
        assert main(args) == 0
        assert (tmp_path / "sweep_finite.csv").read_bytes() == first
        timing = json.loads((tmp_path / "sweep_finite.timing.json").read_text())
        assert len(timing["row_seconds"]) == 46

    def test_grid_helpers(self):
        np.testing.assert_allclose(sweep_grid(17.5, 22.0, 0.1)[[0, -1]], [17.5, 22.0])
        assert action_flip([1.0, 2.0, 3.0], [1, 1, 0]) == 3.0
        assert action_flip([1.0, 2.0], [1, 1]) is None


class TestSimulate:
    def test_missing_policy_file(self, tmp_path):
        assert main(["simulate", "--policy", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) != 0
        assert main(["simulate", "--out", str(tmp_path)]) != 0

    def test_reproducible_csv(self, solved_dir, tmp_path):
        args = ["simulate", "--policy", str(solved_dir / "policy_finite.json"), "--trials", "50",
                "--out", str(tmp_path)]
        assert main(args) == 0
        first = (tmp_path / "mc_finite.csv").read_bytes()
        assert main(args) == 0
        assert (tmp_path / "mc_finite.csv").read_bytes() == first
        assert first.decode().splitlines()[0].startswith("# config_hash=")

    def test_model_hash_mismatch(self, solved_dir, tmp_path, capsys):
        doc = json.loads(thermostat_config_path().read_text())
        doc["W"] = [[0.7]]
        cfg = tmp_path / "other.json"
        cfg.write_text(json.dumps(doc))
        args = ["simulate", "--config", str(cfg), "--policy", str(solved_dir / "policy_finite.json"),
                "--trials", "5", "--out", str(tmp_path)]
        assert main(args) != 0
        assert "hash" in capsys.readouterr().err


class TestBounds:
    def test_from_policy(self, solved_dir, tmp_path, capsys):
        assert main(["bounds", "--policy", str(solved_dir / "policy_finite.json"), *FAST,
                     "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "heuristic total" in out and "PBVI bound (proxy)" in out
