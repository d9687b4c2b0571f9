"""Tests for the experiment runner and the command-line interface."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mpsfilter import analysis, cli, exact, runner
from mpsfilter import mps as mps_mod
from mpsfilter.config import parse_config

BASE = """\
model = ising
J = 1.0
g = -1.05
h = 0.5
N = 6
schedule = 4,8,16
d_max = 16
E0 = 0.0
initial_state = Y+
seed = 3
"""


def make(text=BASE, **replacements):
    for old, new in replacements.items():
        text = text.replace(old, new)
    return parse_config(text)


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "art"
    runner.run(make(), output=out)
    return out


class TestRunArtifacts:
    def test_files_present(self, artifacts):
        names = {p.name for p in artifacts.iterdir()}
        assert "manifest.json" in names
        assert "summary.json" in names
        assert "timing.json" in names
        for m in (4, 8, 16):
            assert f"trace_N6_M{m}.csv" in names
            assert f"state_N6_M{m}.mps" in names

    def test_manifest_round_trips(self, artifacts):
        from mpsfilter.config import config_from_manifest
        manifest = json.loads((artifacts / "manifest.json").read_text())
        assert config_from_manifest(manifest) == make()

    def test_summary_runs(self, artifacts):
        summary = json.loads((artifacts / "summary.json").read_text())
        assert [(e["N"], e["M"]) for e in summary["runs"]] \
            == [(6, 4), (6, 8), (6, 16)]
        assert summary["errors"] == []
        for entry in summary["runs"]:
            assert entry["backend"] == "mps"
            assert entry["final"]["variance"] > 0
            assert entry["flags"] == []

    def test_summary_matches_trace_csv(self, artifacts):
        summary = json.loads((artifacts / "summary.json").read_text())
        for entry in summary["runs"]:
            lines = (artifacts / entry["csv"]).read_text().splitlines()
            header = lines[0].split(",")
            final = dict(zip(header, lines[-1].split(",")))
            assert_allclose(entry["final"]["variance"],
                            float(final["variance"]), rtol=1e-12)
            assert entry["final"]["max_bond"] == int(final["max_bond"])

    def test_saved_state_reproduces_summary(self, artifacts):
        summary = json.loads((artifacts / "summary.json").read_text())
        model = runner.build_model("ising", 6,
                                   {"J": 1.0, "g": -1.05, "h": 0.5})
        entry = summary["runs"][-1]
        state = mps_mod.load(artifacts / entry["state"])
        assert_allclose(analysis.variance(state, model),
                        entry["final"]["variance"], atol=1e-9)

    def test_variance_falls_with_order(self, artifacts):
        summary = json.loads((artifacts / "summary.json").read_text())
        vs = [e["final"]["variance"] for e in summary["runs"]]
        assert vs[0] > vs[1] > vs[2]

    def test_window_distance_shrinks(self, artifacts):
        # filtering toward the spectral bulk drives the 4-site window
        # away from a pure product and toward higher entropy
        summary = json.loads((artifacts / "summary.json").read_text())
        ds = [e["trace_distance_L4"] for e in summary["runs"]]
        assert 0.0 < ds[-1] < ds[0] < 1.0

    def test_profile_and_correlations_recorded(self, artifacts):
        summary = json.loads((artifacts / "summary.json").read_text())
        entry = summary["runs"][0]
        assert len(entry["profile"]) == 6
        xs = [x for x, _ in entry["correlations"]]
        assert xs == sorted(xs)

    def test_fit_recorded(self, artifacts):
        # N = 6 at d_max = 16 never truncates, so all three orders
        # qualify and the variance falls as a power of M
        summary = json.loads((artifacts / "summary.json").read_text())
        fits = summary["fits"]
        assert len(fits) == 1
        assert fits[0]["N"] == 6
        assert fits[0]["n_points"] == 3
        assert fits[0]["params"]["exponent"] < -0.5

    def test_timing_real_seconds(self, artifacts):
        timing = json.loads((artifacts / "timing.json").read_text())
        assert timing["total_seconds"] > 0
        assert len(timing["runs"]) == 3
        assert all(t["seconds"] > 0 for t in timing["runs"])


class TestRunModes:
    def test_byte_identical_reruns(self, tmp_path):
        a = runner.run(make(), output=tmp_path / "a")
        b = runner.run(make(), output=tmp_path / "b")
        for m in (4, 8, 16):
            name = f"trace_N6_M{m}.csv"
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / "summary.json").read_bytes() \
            == (b / "summary.json").read_bytes()

    def test_dry_run(self, tmp_path):
        out = runner.run(make(), output=tmp_path / "dry", dry_run=True)
        assert [p.name for p in out.iterdir()] == ["manifest.json"]

    def test_exact_backend(self, tmp_path):
        cfg = make(**{"N = 6": "N = 8", "schedule = 4,8,16":
                      "schedule = 10,20,40"},
                   text=BASE + "backend = exact\n")
        out = runner.run(cfg, output=tmp_path / "exact")
        summary = json.loads((out / "summary.json").read_text())
        entry = summary["runs"][-1]
        assert entry["state"].endswith(".npy")
        v = np.load(out / entry["state"])
        assert_allclose(np.linalg.norm(v), 1.0, atol=1e-12)
        model = runner.build_model("ising", 8,
                                   {"J": 1.0, "g": -1.05, "h": 0.5})
        assert_allclose(exact.exact_variance(model, v),
                        entry["final"]["variance"], atol=1e-9)
        assert "profile" in entry
        assert len(summary["fits"]) == 1

    def test_partial_failure_recorded(self, tmp_path):
        cfg = make(**{"N = 6": "N = 6,7",
                      "initial_state = Y+": "initial_state = Z_st2"})
        out = runner.run(cfg, output=tmp_path / "partial")
        summary = json.loads((out / "summary.json").read_text())
        assert [(e["N"], e["M"]) for e in summary["runs"]] \
            == [(6, 4), (6, 8), (6, 16)]
        assert len(summary["errors"]) == 1
        assert summary["errors"][0]["N"] == 7
        assert "even N" in summary["errors"][0]["error"]

    def test_worker_pool_matches_sequential(self, tmp_path):
        seq = runner.run(make(**{"N = 6": "N = 6,8"}),
                         output=tmp_path / "seq")
        par = runner.run(make(text=BASE + "workers = 2\n",
                              **{"N = 6": "N = 6,8"}),
                         output=tmp_path / "par")
        for n in (6, 8):
            for m in (4, 8, 16):
                name = f"trace_N{n}_M{m}.csv"
                assert (seq / name).read_bytes() \
                    == (par / name).read_bytes()


class TestOutputResolution:
    def test_argument_beats_config(self, tmp_path):
        cfg = make(text=BASE + "output = from_config\n")
        out = runner.resolve_output_dir(cfg, tmp_path / "arg")
        assert out == tmp_path / "arg"

    def test_config_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(runner.OUTPUT_ROOT_ENV, str(tmp_path / "env"))
        cfg = make(text=BASE + "output = from_config\n")
        assert runner.resolve_output_dir(cfg) \
            == runner.pathlib.Path("from_config")

    def test_env_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(runner.OUTPUT_ROOT_ENV, str(tmp_path / "env"))
        out = runner.resolve_output_dir(make())
        assert out.parent == tmp_path / "env"
        assert out.name.startswith("exp_")

    def test_slug_is_stable(self):
        assert runner.resolve_output_dir(make()) \
            == runner.resolve_output_dir(make())


class TestAnalyze:
    def test_rebuilds_fits(self, artifacts):
        result = runner.analyze(artifacts)
        assert (artifacts / "analysis.json").exists()
        summary = json.loads((artifacts / "summary.json").read_text())
        assert len(result["table"]) == 3
        assert_allclose(result["fits"][0]["params"]["exponent"],
                        summary["fits"][0]["params"]["exponent"],
                        rtol=1e-12)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            runner.analyze(tmp_path)


class TestCli:
    @pytest.fixture()
    def cfg_path(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(BASE)
        return path

    def test_validate(self, cfg_path, capsys):
        assert cli.main(["validate", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "N=6: M=[4, 8, 16]" in out

    def test_validate_bad_config(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text(BASE.replace("ising", "bogus"))
        assert cli.main(["validate", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["run", str(tmp_path / "nope.cfg")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_dry_run(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "cli_dry"
        assert cli.main(["run", str(cfg_path), "--output", str(out),
                         "--dry-run"]) == 0
        assert [p.name for p in out.iterdir()] == ["manifest.json"]
        assert str(out) in capsys.readouterr().out

    def test_overrides_land_in_manifest(self, cfg_path, tmp_path):
        out = tmp_path / "cli_over"
        assert cli.main(["run", str(cfg_path), "--output", str(out),
                         "--dry-run", "--dmax", "32", "--seed", "9",
                         "--workers", "2", "--alpha-override", "0.02"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["d_max"] == 32
        assert manifest["seed"] == 9
        assert manifest["workers"] == 2
        assert manifest["alpha"] == 0.02

    def test_backend_override_is_validated(self, tmp_path, capsys):
        path = tmp_path / "big.cfg"
        path.write_text(BASE.replace("N = 6", "N = 30"))
        assert cli.main(["run", str(path), "--backend", "exact",
                         "--dry-run"]) == 2
        assert "exact backend" in capsys.readouterr().err

    def test_run_and_analyze(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "cli_run"
        assert cli.main(["run", str(cfg_path), "--output", str(out)]) == 0
        capsys.readouterr()
        assert cli.main(["analyze", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "variance ~ M^(" in printed
        assert "N=6" in printed

    def test_analyze_missing_dir(self, tmp_path, capsys):
        assert cli.main(["analyze", str(tmp_path / "void")]) == 2
        assert "analyze error" in capsys.readouterr().err

    def test_env_output_root(self, cfg_path, tmp_path, monkeypatch,
                             capsys):
        monkeypatch.setenv(runner.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
        assert cli.main(["run", str(cfg_path), "--dry-run"]) == 0
        printed = capsys.readouterr().out.strip()
        assert printed.startswith(str(tmp_path / "root"))
