import collections
import json

import numpy as np
import pytest

from clampedlab.cli import main
from clampedlab.pipeline import (
    ALL_INEQUALITIES,
    ConfigError,
    RunConfig,
    convergence_study,
    emit_report,
    load_config,
    run_pipeline,
)
from oracles import BEAM_LAMBDA1


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def beam_bundle():
    return run_pipeline(RunConfig.from_dict({"domain": "interval", "N": 64, "k": 3}))


@pytest.fixture(scope="module")
def square_bundle():
    return run_pipeline(RunConfig.from_dict({"domain": "square", "N": 16, "k": 4}))


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig.from_dict({})
        assert cfg["k"] >= 1 and cfg["delta"] == "auto"

    @pytest.mark.parametrize(
        "raw",
        [
            {"k": 0},
            {"k": 2.5},
            {"tensor": "isotropic"},
            {"domain": "torus"},
            {"tol": 0.5},
            {"tol": 0.0},
            {"delta": -1.0},
            {"inequalities": ["nonsense"]},
            {"inequalities": ["payne", "payne"]},
            {"seed": -1},
            {"unknown_key": 1},
            {"eigenvalues": [1.0]},
        ],
    )
    def test_rejected(self, raw):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(raw)

    def test_hash_ignores_output_location(self):
        a = RunConfig.from_dict({"out": "a"})
        b = RunConfig.from_dict({"out": "b", "strict": True})
        assert a.sha256 == b.sha256
        assert a.sha256 != RunConfig.from_dict({"seed": 3}).sha256

    def test_unreadable_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_affine_component(self):
        from clampedlab.pipeline import build_problem

        dom, fld = build_problem(RunConfig.from_dict({"tensor": "diagonal", "a": 1.0, "a_grad": [0.5, 0.0], "N": 8}))
        T = fld.sample(np.array([[1.0, 0.0]]))
        assert T[0, 0, 0] == pytest.approx(1.5)
        assert fld.fd_step == pytest.approx(dom.h / 4)


class TestPipeline:
    def test_beam(self, beam_bundle):
        assert beam_bundle.eigenvalues.size == 3
        assert beam_bundle.eigenvalues[0] == pytest.approx(BEAM_LAMBDA1, rel=5e-3)
        classical = [r for r in beam_bundle.bounds if r.name in ("payne", "hile_yeh", "hook", "cheng_yang", "wang_xia")]
        assert classical and all(r.holds for r in classical)

    def test_each_inequality_once_per_k(self, square_bundle):
        count = collections.Counter((r.name, r.mode, r.k) for r in square_bundle.bounds)
        assert set(count.values()) == {1}
        for k in range(1, 4):
            names = {r.name for r in square_bundle.bounds if r.k == k}
            expected = set(ALL_INEQUALITIES) - ({"ab1"} if k > 1 else set())
            assert names == expected

    def test_audits(self, square_bundle):
        a = square_bundle.audits
        assert a["symmetry_defect"] == 0.0
        assert a["max_residual"] <= max(1e-9 * square_bundle.eigenvalues.max(), a["residual_floor"])
        assert a["theorem3_sweep_all_hold"]

    def test_eigenvalue_override(self):
        b = run_pipeline(RunConfig.from_dict({"eigenvalues": [1.0, 20.0]}))
        assert b.system is None and b.functionals is None
        assert {r.name for r in b.bounds} == set(ALL_INEQUALITIES) - {"theorem1", "theorem2", "prop5", "prop6", "prop7"}
        assert b.exit_code() == 2

    def test_strict_policy(self):
        # lambda_2 / lambda_1 = 4 violates only the as_stated corollary bounds
        b = run_pipeline(RunConfig.from_dict({"eigenvalues": [1.0, 4.0]}))
        assert {r.mode for r in b.failures} == {"as_stated"}
        assert b.exit_code(strict=False) == 2
        assert b.exit_code(strict=True) == 0
        # a classical failure stays fatal under the strict policy
        assert run_pipeline(RunConfig.from_dict({"eigenvalues": [1.0, 20.0]})).exit_code(strict=True) == 2

    def test_delta_sweep_mode(self):
        b = run_pipeline(RunConfig.from_dict({"N": 16, "k": 3, "delta": "sweep", "inequalities": ["theorem3"]}))
        assert [r.k for r in b.bounds] == [1, 2]
        assert all(r.holds for r in b.bounds)

    def test_fixed_delta(self):
        b = run_pipeline(RunConfig.from_dict({"N": 16, "k": 3, "delta": 0.5, "inequalities": ["theorem1"]}))
        assert all(r.delta == 0.5 for r in b.bounds)

    def test_deterministic(self, tmp_path):
        cfg = RunConfig.from_dict({"N": 16, "k": 4, "seed": 7})
        files = []
        for sub in ("a", "b"):
            files.append({p.name: p.read_bytes() for p in emit_report(run_pipeline(cfg), tmp_path / sub)})
        assert files[0] == files[1]


class TestConvergence:
    def test_two_levels(self):
        with pytest.raises(ConfigError):
            convergence_study(RunConfig.from_dict({"domain": "interval", "k": 1}), [64, 128])

    def test_not_doubling(self):
        with pytest.raises(ConfigError):
            convergence_study(RunConfig.from_dict({"domain": "interval", "k": 1}), [32, 64, 96])

    def test_beam_table(self):
        t = convergence_study(RunConfig.from_dict({"domain": "interval", "k": 2}), [32, 64, 128])
        assert t.eigenvalues.shape == (3, 2)
        assert 1.5 <= t.order[0] <= 2.5
        assert abs(t.richardson[0] - BEAM_LAMBDA1) < abs(t.eigenvalues[-1, 0] - BEAM_LAMBDA1)


class TestEmit:
    def test_same_bundle_twice(self, square_bundle, tmp_path):
        a = emit_report(square_bundle, tmp_path / "a")
        b = emit_report(square_bundle, tmp_path / "b")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]

    def test_csv_format(self, square_bundle, tmp_path):
        paths = {p.name: p for p in emit_report(square_bundle, tmp_path)}
        text = paths["eigen.csv"].read_text()
        lines = text.split("\n")
        assert lines[0] == f"# config_sha256: {square_bundle.config.sha256}"
        assert lines[1] == "index,eigenvalue,residual"
        assert "\r" not in text
        value = lines[2].split(",")[1]
        assert float(value) == square_bundle.eigenvalues[0]
        assert len(value.replace(".", "").lstrip("0")) <= 17

    def test_header_only_bounds(self, tmp_path):
        b = run_pipeline(RunConfig.from_dict({"N": 16, "k": 2, "inequalities": []}))
        paths = {p.name: p for p in emit_report(b, tmp_path)}
        lines = paths["bounds.csv"].read_text().splitlines()
        assert lines[1:] == ["name,mode,k,delta,lhs,rhs,slack,holds"]

    def test_markdown_ab1_pair(self, square_bundle, tmp_path):
        paths = {p.name: p for p in emit_report(square_bundle, tmp_path, formats=("markdown",))}
        md = paths["summary.md"].read_text()
        assert "| as_stated |" in md and "| rederived |" in md
        assert square_bundle.config.sha256 in md

    def test_unwritable(self, square_bundle, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_report(square_bundle, blocker / "sub")


class TestCli:
    def test_solve(self, tmp_path, capsys):
        cfg = _write(tmp_path, {"domain": "interval", "N": 64, "k": 3})
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        rows = (tmp_path / "o" / "eigen.csv").read_text().splitlines()
        assert len(rows) == 2 + 3

    def test_check_passes_on_beam(self, tmp_path):
        cfg = _write(tmp_path, {"domain": "interval", "N": 64, "k": 3, "inequalities": ["payne", "hook"]})
        assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "bounds.csv").exists()
        assert (tmp_path / "o" / "functionals.csv").exists()

    def test_forced_failure(self, tmp_path, capsys):
        cfg = _write(tmp_path, {"eigenvalues": [1.0, 20.0], "inequalities": ["payne"]})
        assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "payne" in capsys.readouterr().err

    def test_strict_flag(self, tmp_path):
        cfg = _write(tmp_path, {"eigenvalues": [1.0, 4.0]})
        assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert main(["check", "--config", cfg, "--out", str(tmp_path / "o"), "--strict"]) == 0

    def test_unknown_tensor(self, tmp_path, capsys):
        cfg = _write(tmp_path, {"tensor": "isotropic"})
        assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "unknown tensor kind" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "none.json")]) == 1

    def test_converge(self, tmp_path):
        cfg = _write(tmp_path, {"domain": "interval", "k": 1, "levels": [32, 64, 128]})
        assert main(["converge", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        lines = (tmp_path / "o" / "convergence.csv").read_text().splitlines()
        assert lines[1] == "index,N32,N64,N128,order,richardson"

    def test_converge_needs_levels(self, tmp_path):
        cfg = _write(tmp_path, {"domain": "interval", "k": 1})
        assert main(["converge", "--config", cfg, "--out", str(tmp_path / "o")]) == 1

    def test_report(self, tmp_path):
        cfg = _write(tmp_path, {"N": 16, "k": 3})
        code = main(["report", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "5"])
        assert code in (0, 2)
        assert (tmp_path / "o" / "summary.md").exists()

    def test_seed_override_changes_hash(self, tmp_path):
        cfg = _write(tmp_path, {"domain": "interval", "N": 32, "k": 2})
        main(["solve", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["solve", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "9"])
        ha = (tmp_path / "a" / "eigen.csv").read_text().splitlines()[0]
        hb = (tmp_path / "b" / "eigen.csv").read_text().splitlines()[0]
        assert ha != hb
