import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from clampedlab.bounds import (
    BOUNDS_COLUMNS,
    SWEEP,
    BoundResult,
    SpectrumInput,
    check_ab,
    check_ab1,
    check_cc,
    check_cc1,
    check_theorem1,
    check_theorem2,
    check_theorem3,
    classical_checks,
    corollary_checks,
    delta_optimum,
    delta_sweep,
    extract_next_bound_minimal,
    theorem3_sweep,
    translation_audit,
    write_bounds_csv,
)
from clampedlab.discretize import discretize
from clampedlab.eigensolve import lobpcg
from clampedlab.functionals import FunctionalSet, all_quantities
from clampedlab.geometry import TensorField, build_rectangle, geometric_constants

ascending = st.lists(st.floats(1.0, 1e4), min_size=1, max_size=8).map(sorted)


def _scan_cc1_max(lams, n, hi, step=1e-6):
    """Largest lambda_{k+1} on a uniform grid that satisfies the gap-sum bound."""
    lam = np.asarray(lams)
    grid = np.arange(lam[-1], hi, step)
    g = grid[:, None] - lam[None, :]
    ok = np.sum(g * g, axis=1) <= 16 / n**2 * np.sum(g * lam, axis=1) + 1e-12
    return grid[ok].max()


@pytest.fixture(scope="module")
def square_run():
    dom = build_rectangle(1, 1, 32, 32)
    fld = TensorField.identity()
    ops = discretize(dom, fld)
    sys = lobpcg(ops.A, 6, precond="factor", weight=dom.cell_weight)
    c = geometric_constants(dom, fld)
    return dom, fld, ops, sys, c, all_quantities(sys, dom, fld, c, ops=ops)


def _toy_functionals(A, B, w):
    return FunctionalSet(lam=np.array([1.0]), lhs_weight=np.array([w]), A=np.array([A]), B=np.array([B]))


class TestBoundResult:
    def test_slack_and_tolerance(self):
        r = BoundResult("x", 1, 1.0 + 5e-10, 1.0)
        assert r.slack == pytest.approx(-5e-10) and r.holds
        assert not BoundResult("x", 1, 1.0 + 2e-9, 1.0).holds

    def test_not_evaluable_is_vacuous(self):
        r = BoundResult("x", 1, math.nan, math.inf, evaluable=False)
        assert r.holds and r.slack == math.inf


class TestDeltaOptimum:
    def test_examples(self):
        assert delta_optimum(4, 1) == (0.5, 4.0)
        assert delta_optimum(1, 1) == (1.0, 2.0)

    @pytest.mark.parametrize("P,Q", [(0, 1), (1, 0), (-1, 2)])
    def test_nonpositive(self, P, Q):
        with pytest.raises(ValueError):
            delta_optimum(P, Q)

    @given(st.floats(1e-2, 1e2), st.floats(1e-2, 1e2))
    def test_sweep_never_below_minimum(self, P, Q):
        _, m = delta_optimum(P, Q)
        assert delta_sweep(P, Q).min() >= m - 1e-6 * m

    def test_sweep_grid(self):
        assert SWEEP.size == 121
        assert SWEEP[0] == pytest.approx(1e-3) and SWEEP[-1] == pytest.approx(1e3)


class TestSpectrumInput:
    def test_rejects_descending(self):
        with pytest.raises(ValueError):
            SpectrumInput([2.0, 1.0], 2)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            SpectrumInput([0.0, 1.0], 2)

    def test_truncated(self):
        s = SpectrumInput([1.0, 2.0, 3.0, 4.0], 2)
        assert s.k == 3 and s.truncated(1).k == 1
        with pytest.raises(ValueError):
            s.truncated(4)


class TestTheorem1:
    def test_arithmetic(self):
        s = SpectrumInput([1.0, 2.0], 2, functionals=_toy_functionals(10.0, 1.0, 2.0))
        r = check_theorem1(s, 1.0)
        assert (r.lhs, r.rhs, r.holds) == (2.0, 11.0, True)

    def test_auto_delta(self):
        s = SpectrumInput([1.0, 2.0], 2, functionals=_toy_functionals(10.0, 1.0, 2.0))
        r = check_theorem1(s)
        assert r.delta == pytest.approx(math.sqrt(0.1))
        assert r.rhs == pytest.approx(2 * math.sqrt(10))
        assert r.holds

    def test_missing_functionals(self):
        with pytest.raises(ValueError):
            check_theorem1(SpectrumInput([1.0, 2.0], 2))

    def test_bad_delta(self):
        s = SpectrumInput([1.0, 2.0], 2, functionals=_toy_functionals(10.0, 1.0, 2.0))
        with pytest.raises(ValueError):
            check_theorem1(s, -1.0)
        with pytest.raises(ValueError):
            check_theorem1(s, "best")

    def test_diag_tensor_square(self):
        dom = build_rectangle(1, 1, 24, 24)
        fld = TensorField.diagonal(2.0, 1.0)
        ops = discretize(dom, fld)
        sys = lobpcg(ops.A, 4, precond="factor", weight=dom.cell_weight)
        c = geometric_constants(dom, fld)
        fs = all_quantities(sys, dom, fld, c, ops=ops)
        assert check_theorem1(SpectrumInput(sys.eigenvalues, 2, c, fs)).holds


class TestTheorem2:
    def test_holds_identity_square(self, square_run):
        *_, sys, c, fs = square_run
        spec = SpectrumInput(sys.eigenvalues[:4], 2, c, fs)
        assert check_theorem2(spec).holds

    def test_rhs_dominates_theorem1_for_large_delta(self, square_run):
        *_, sys, c, fs = square_run
        spec = SpectrumInput(sys.eigenvalues[:4], 2, c, fs)
        assert check_theorem2(spec, 1.0).rhs >= check_theorem1(spec, 1.0).rhs

    def test_order_reverses_for_tiny_delta(self, square_run):
        # D_i < B_i on the unit square, so the 1/delta terms decide the order as delta -> 0
        *_, sys, c, fs = square_run
        spec = SpectrumInput(sys.eigenvalues[:4], 2, c, fs)
        assert check_theorem2(spec, 1e-9).rhs < check_theorem1(spec, 1e-9).rhs


class TestTheorem3:
    def test_holds_example(self):
        r = check_theorem3(SpectrumInput([1.0, 4.9], 2))
        assert r.delta == pytest.approx(math.sqrt(3.9 / 60.84))
        assert r.delta == pytest.approx(0.2532, abs=1e-4)
        assert r.rhs == pytest.approx(30.81, abs=5e-3)
        assert r.lhs == pytest.approx(2 * 3.9**2)
        assert r.holds

    def test_fails_near_optimal_delta(self):
        s = SpectrumInput([1.0, 5.1], 2)
        assert not check_theorem3(s).holds
        sweep = theorem3_sweep(s)
        failing = [r.delta for r in sweep if not r.holds]
        assert failing and min(failing) <= check_theorem3(s).delta <= max(failing)
        assert sweep[0].holds and sweep[-1].holds

    @given(st.floats(0.1, 1e4), st.floats(1.0, 10.0))
    def test_k1_equivalent_to_ratio(self, l1, ratio):
        assume(abs(ratio - 5.0) > 1e-6)
        r = check_theorem3(SpectrumInput([l1, ratio * l1], 2))
        assert r.holds == (ratio <= 5.0)

    def test_degenerate_top_gap(self):
        r = check_theorem3(SpectrumInput([1.0, 2.0, 2.0], 2))
        lhs = 2 * (1.0 + 0.0)
        assert r.lhs == pytest.approx(lhs)

    def test_curvature_enters(self):
        from clampedlab.geometry import GeometricConstants

        c = GeometricConstants(n=2, m=3, S_0=0.0, T_star=1.0, T_0=0.0, I_0=2.0, H_0=0.5)
        flat = check_theorem3(SpectrumInput([1.0, 6.0], 2))
        curved = check_theorem3(SpectrumInput([1.0, 6.0], 2, c))
        assert curved.rhs > flat.rhs


class TestExtract:
    def test_k1_rederived(self):
        assert extract_next_bound_minimal([1.0], 2) == pytest.approx(5.0, rel=1e-14)
        assert _scan_cc1_max([1.0], 2, 6.0) == pytest.approx(5.0, abs=2e-6)

    def test_k1_as_stated(self):
        assert extract_next_bound_minimal([1.0], 2, "as_stated") == pytest.approx(3.125)
        assert check_ab1(SpectrumInput([1.0, 2.0], 2), "as_stated").rhs == pytest.approx(3.125)

    def test_double_eigenvalue(self):
        # the quadratic gives 3 + sqrt(9 - 5) = 5; a grid scan of the gap-sum bound agrees
        assert extract_next_bound_minimal([1.0, 1.0], 2) == pytest.approx(5.0, rel=1e-14)
        assert _scan_cc1_max([1.0, 1.0], 2, 6.0) == pytest.approx(5.0, abs=2e-6)

    def test_negative_discriminant(self):
        assert extract_next_bound_minimal([1.0, 100.0], 2) == math.inf
        r = check_ab(SpectrumInput([1.0, 100.0, 101.0], 2), "rederived")
        assert r.holds and r.note

    def test_empty(self):
        with pytest.raises(ValueError):
            extract_next_bound_minimal([], 2)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            extract_next_bound_minimal([1.0], 2, "guess")

    @given(st.floats(0.1, 1e4), st.integers(1, 6))
    def test_k1_closed_form(self, l1, n):
        assert extract_next_bound_minimal([l1], n) == pytest.approx((1 + 16 / n**2) * l1, rel=1e-12)

    @given(ascending, st.integers(1, 4))
    def test_matches_grid_scan_of_gap_sum(self, lams, n):
        b = extract_next_bound_minimal(lams, n)
        assume(math.isfinite(b))
        lam = np.asarray(lams)
        for x in (b * (1 - 1e-9), b * (1 + 1e-6)):
            g = x - lam
            lhs, rhs = np.sum(g * g), 16 / n**2 * np.sum(g * lam)
            assert (lhs <= rhs * (1 + 1e-9)) == (x < b)

    @given(ascending, st.floats(0.01, 100), st.sampled_from(["as_stated", "rederived"]))
    def test_scale_covariance(self, lams, c, mode):
        a = extract_next_bound_minimal(lams, 2, mode)
        b = extract_next_bound_minimal([c * x for x in lams], 2, mode)
        if math.isinf(a):
            assert math.isinf(b)
        else:
            assert b == pytest.approx(c * a, rel=1e-9)

    @settings(max_examples=50)
    @given(ascending, st.integers(0, 7), st.floats(0.0, 1.0))
    def test_monotone(self, lams, idx, frac):
        idx = idx % len(lams)
        hi = lams[idx + 1] if idx + 1 < len(lams) else lams[idx] * 2
        bumped = list(lams)
        bumped[idx] = lams[idx] + frac * (hi - lams[idx])
        a = extract_next_bound_minimal(lams, 2)
        b = extract_next_bound_minimal(bumped, 2)
        assume(math.isfinite(a) and math.isfinite(b))
        assert b >= a * (1 - 1e-12)


class TestCorollary:
    def test_cc_example(self):
        r = check_cc(SpectrumInput([1.0, 4.9], 2))
        assert r.lhs == pytest.approx(3.9**2 / 2)
        assert r.rhs == pytest.approx(math.sqrt(3.9**2 * 3.9))

    def test_cc1_example(self):
        r = check_cc1(SpectrumInput([1.0, 5.0], 2))
        assert r.lhs == pytest.approx(16.0) and r.rhs == pytest.approx(16.0) and r.holds

    def test_ab1_only_at_k1(self):
        assert [r.name for r in corollary_checks(SpectrumInput([1.0, 2.0], 2))].count("ab1") == 2
        assert "ab1" not in [r.name for r in corollary_checks(SpectrumInput([1.0, 2.0, 3.0], 2))]

    def test_ab1_modes(self):
        s = SpectrumInput([1.0, 4.33], 2)
        assert not check_ab1(s, "as_stated").holds
        assert check_ab1(s, "rederived").holds


class TestClassical:
    def test_payne_example(self):
        r = {x.name: x for x in classical_checks([1.0, 2.0], 2)}["payne"]
        assert (r.lhs, r.rhs, r.holds) == (1.0, 8.0, True)

    def test_hile_yeh_example(self):
        r = {x.name: x for x in classical_checks([1.0, 2.0], 2)}["hile_yeh"]
        assert r.rhs == pytest.approx(1.0) and r.lhs == pytest.approx(0.125) and r.holds

    def test_hook_and_cheng_yang_example(self):
        res = {x.name: x for x in classical_checks([1.0, 2.0], 2)}
        assert res["hook"].lhs == pytest.approx(4 / 32) and res["hook"].rhs == pytest.approx(1.0)
        assert res["cheng_yang"].lhs == pytest.approx(1.0)
        assert res["cheng_yang"].rhs == pytest.approx(math.sqrt(8.0))

    def test_wang_xia_k1(self):
        # k = 1: lambda_2 <= lambda_1 + 8/n sqrt(lambda_1^2) = 5 lambda_1 for n = 2
        r = {x.name: x for x in classical_checks([1.0, 2.0], 2)}["wang_xia"]
        assert r.rhs == pytest.approx(5.0)

    def test_degenerate_gap(self):
        res = {x.name: x for x in classical_checks([1.0, 2.0, 2.0], 2)}
        assert not res["hile_yeh"].evaluable and not res["hook"].evaluable
        assert res["hile_yeh"].holds and res["payne"].evaluable

    def test_forced_failure(self):
        assert not any(r.holds for r in classical_checks([1.0, 20.0], 2))

    def test_computed_square(self, square_run):
        *_, sys, _, _ = square_run
        for k in range(1, sys.k):
            assert all(r.holds for r in classical_checks(sys.eigenvalues[: k + 1], 2))

    @given(ascending.filter(lambda x: len(x) >= 2), st.floats(0.01, 100))
    def test_verdicts_scale_invariant(self, lams, c):
        a = [r.holds for r in classical_checks(lams, 2)]
        b = [r.holds for r in classical_checks([c * x for x in lams], 2)]
        slack = [abs(r.slack) / max(abs(r.rhs), 1e-300) for r in classical_checks(lams, 2) if r.evaluable]
        assume(min(slack, default=1.0) > 1e-6)
        assert a == b


class TestTranslationAudit:
    def test_zero_shift_identical(self, square_run):
        dom, _, ops, sys, _, _ = square_run
        before, after = translation_audit(dom, (0.0, 0.0), sys.head(4), ops)
        assert [(r.lhs, r.rhs) for r in before] == [(r.lhs, r.rhs) for r in after]

    def test_far_shift_grows_rhs(self, square_run):
        dom, _, ops, sys, _, _ = square_run
        before, after = translation_audit(dom, (10.0, 10.0), sys.head(4), ops, {"H_0": 0.1})
        assert all(r.holds for r in before + after)
        assert all(a.rhs > b.rhs for a, b in zip(after, before))

    def test_centred_is_tightest(self, square_run):
        dom, fld, ops, sys, _, _ = square_run
        rhs = {}
        for shift in [(0.0, 0.0), (-0.5, -0.5), (3.0, -2.0)]:
            _, after = translation_audit(dom, shift, sys.head(4), ops, {"H_0": 0.1})
            rhs[shift] = after[0].rhs
            assert all(r.holds for r in after)
        assert min(rhs, key=rhs.get) == (-0.5, -0.5)
        I0 = geometric_constants(dom.translate((-0.5, -0.5)), fld).I_0
        assert I0 == pytest.approx(math.sqrt(2) / 2)

    def test_variable_field_rejected(self):
        from clampedlab.geometry import affine

        dom = build_rectangle(1, 1, 16, 16)
        fld = TensorField.diagonal(affine(1.0, [0.5, 0.0]), 1.0)
        ops = discretize(dom, fld)
        sys = lobpcg(ops.A, 3, precond="factor", weight=dom.cell_weight)
        with pytest.raises(ValueError):
            translation_audit(dom, (1.0, 0.0), sys, ops)


class TestCsv:
    def test_header_only(self, tmp_path):
        path = write_bounds_csv([], tmp_path / "b.csv")
        assert path.read_text() == ",".join(BOUNDS_COLUMNS) + "\n"

    def test_rows(self, tmp_path):
        rows = corollary_checks(SpectrumInput([1.0, 4.33], 2))
        text = write_bounds_csv(rows, tmp_path / "b.csv", "config_sha256: abc").read_text()
        lines = text.splitlines()
        assert lines[0] == "# config_sha256: abc"
        assert lines[2].startswith("cc,,1,,")
        assert any(line.startswith("ab1,as_stated,1,,4.3300000000000001,3.125,") for line in lines)
        assert "\r" not in text
