"""Tests for the delta-filter engine, its kernels, and trace records."""

import math

import numpy as np
import pytest
import scipy.optimize
from numpy.testing import assert_allclose

from mpsfilter import exact
from mpsfilter.filtering import (
    TRACE_COLUMNS,
    FilterTrace,
    _check_variance_jump,
    _fit_step,
    _record_cadence,
    cheby_filter,
    cheby_filter_exact_traced,
    cheby_filter_multi,
    cosine_filter_exact,
)
from mpsfilter.hamiltonian import build_ising, build_xyz, rescaled
from mpsfilter.kernels import (
    delta_coefficients,
    envelope_sigma,
    jackson,
    predicted_delta_cheby,
    predicted_delta_cos,
)
from mpsfilter.mps import (
    block_entropy,
    entropy,
    from_product,
    norm,
    normalized,
    random_mps,
)

ISING = dict(J=1.0, g=-1.05, h=0.5)
XYZ = dict(Jx=1.1, Jy=-1.0, Jz=0.9, h=1.2)
Y_PLUS = np.array([1.0, 1.0j]) / np.sqrt(2)


def y_plus_mps(N):
    return from_product([Y_PLUS] * N)


def y_plus_vector(N):
    return exact.product_vector([Y_PLUS] * N)


def sigma_p_ising(N, J, g, h):
    # For the y+ product state every local term has zero mean and the
    # cross terms vanish, so <H^2> is one J^2 per bond plus (g^2 + h^2)
    # per site.
    return math.sqrt(J * J * (N - 1) + (g * g + h * h) * N)


def fidelity(a, b):
    return abs(np.vdot(a / np.linalg.norm(a), b / np.linalg.norm(b)))


def kernel_series(M, x):
    """Evaluate the damped delta polynomial sum c_n T_n(x) on a grid."""
    c = delta_coefficients(M).c
    t_prev = np.ones_like(x)
    f = c[0] * t_prev
    if M == 0:
        return f
    t_cur = x.copy()
    for n in range(2, M + 1):
        t_prev, t_cur = t_cur, 2.0 * x * t_cur - t_prev
        if c[n] != 0.0:
            f = f + c[n] * t_cur
    return f


def trace_row(step, variance=1.0, **over):
    row = {name: 0.0 for name in TRACE_COLUMNS}
    row.update(step=step, variance=variance, max_bond=1, d_tr=1)
    row.update(over)
    return row


@pytest.fixture(scope="module")
def n12_run():
    m = build_ising(12, **ISING)
    s, tr = cheby_filter(y_plus_mps(12), m, 60, d_max=48, e0=0.0)
    return m, s, tr


class TestJacksonKernel:
    @pytest.mark.parametrize("M", [1, 3, 17, 200])
    def test_endpoints(self, M):
        assert jackson(0, M) == pytest.approx(1.0, abs=1e-15)
        assert abs(jackson(M, M)) < 1e-12

    def test_hand_value(self):
        # M = 3, k = 1: (3 cos(pi/4) + sin(pi/4) cot(pi/4)) / 4 = sqrt(2)/2.
        assert_allclose(jackson(1, 3), math.sqrt(2) / 2, atol=1e-14)

    def test_monotone_decreasing(self):
        g = np.array([jackson(k, 200) for k in range(201)])
        assert np.all(np.diff(g) < 0.0)

    def test_coefficients_zero_order(self):
        k = delta_coefficients(0)
        assert k.M == 0
        assert_allclose(k.g, [1.0])
        assert_allclose(k.c, [1.0 / math.pi])

    def test_coefficient_structure(self):
        M = 7
        k = delta_coefficients(M)
        assert len(k.g) == len(k.c) == M + 1
        assert k.c[0] == pytest.approx(1.0 / math.pi)
        assert np.all(k.c[1::2] == 0.0)
        for n in range(2, M + 1, 2):
            want = (-1.0) ** (n // 2) * (2.0 / math.pi) * k.g[n]
            assert_allclose(k.c[n], want, atol=1e-15)


class TestPredictedWidths:
    def test_cheby_limit_value(self):
        # pi * 100 / (sqrt(2) * 1000)
        assert_allclose(predicted_delta_cheby(100, 1000), 0.2221441469,
                        atol=1e-9)

    def test_cos_limit_value(self):
        # 100 / sqrt(2e4)
        assert_allclose(predicted_delta_cos(100, 10**4), 0.7071067811,
                        atol=1e-9)

    def test_full_forms(self):
        sp = 6.0
        want = 1.0 / math.sqrt(1.0 / sp**2 + 2.0 * 80**2 / (math.pi * 16)**2)
        assert_allclose(predicted_delta_cheby(16, 80, sigma_p=sp), want,
                        rtol=1e-12)
        want = 1.0 / math.sqrt(1.0 / sp**2 + 2.0 * 80 / 16**2)
        assert_allclose(predicted_delta_cos(16, 80, sigma_p=sp), want,
                        rtol=1e-12)

    def test_limit_is_large_sigma_p(self):
        assert_allclose(predicted_delta_cheby(20, 100, sigma_p=1e12),
                        predicted_delta_cheby(20, 100), rtol=1e-9)
        assert_allclose(predicted_delta_cos(20, 100, sigma_p=1e12),
                        predicted_delta_cos(20, 100), rtol=1e-9)

    def test_monotone_in_order(self):
        widths = [predicted_delta_cheby(20, M, sigma_p=7.0)
                  for M in (10, 40, 160, 640)]
        assert np.all(np.diff(widths) < 0.0)

    def test_envelope_sigma(self):
        assert_allclose(envelope_sigma(200), math.pi / 200, rtol=1e-15)


class TestDeltaSeriesShape:
    def test_near_gaussian_peak(self):
        M = 200
        x = np.linspace(-0.05, 0.05, 1001)
        f = kernel_series(M, x)

        # the series is exactly even, so the Gaussian center is pinned at 0
        def gauss(x, a, s):
            return a * np.exp(-(x * x) / (2.0 * s * s))

        popt, _ = scipy.optimize.curve_fit(
            gauss, x, f, p0=(f.max(), envelope_sigma(M)))
        assert abs(abs(popt[1]) - envelope_sigma(M)) < 0.05 * envelope_sigma(M)
        assert abs(popt[0] - f.max()) < 0.05 * f.max()

    def test_tail_suppressed(self):
        M = 200
        peak = kernel_series(M, np.zeros(1))[0]
        near = kernel_series(M, np.linspace(0.3, 1.0, 500))
        far = kernel_series(M, np.linspace(0.5, 1.0, 400))
        assert np.max(np.abs(near)) < 1e-5 * peak
        assert np.max(np.abs(far)) < 1e-6 * peak


class TestDeltaFilterMps:
    def test_zero_order_returns_start(self):
        m = build_ising(8, **ISING)
        p = y_plus_mps(8)
        s, tr = cheby_filter(p, m, 0, d_max=8, e0=0.0)
        assert fidelity(exact.mps_to_vector(s), y_plus_vector(8)) > 1 - 1e-12
        assert len(tr.rows) == 1
        assert tr.rows[0]["step"] == 0

    @pytest.mark.parametrize("M", [1, 2, 5, 16, 60])
    def test_matches_dense_oracle_ising(self, M):
        # At d_max = 2^(N/2) no truncation can occur, so the engine must
        # reproduce the dense recurrence exactly.
        m = build_ising(8, **ISING)
        s, tr = cheby_filter(y_plus_mps(8), m, M, d_max=16, e0=0.0)
        y = exact.exact_cheby_filter(y_plus_vector(8), m, M, 0.0)
        assert fidelity(exact.mps_to_vector(s), y) > 1 - 1e-9
        assert tr.final["step"] == M

    def test_matches_dense_oracle_xyz(self):
        m = build_xyz(8, **XYZ)
        p = normalized(random_mps(8, 4, np.random.default_rng(2)))
        s, _ = cheby_filter(p, m, 16, d_max=16, e0=0.0)
        y = exact.exact_cheby_filter(exact.mps_to_vector(p), m, 16, 0.0)
        assert fidelity(exact.mps_to_vector(s), y) > 1 - 1e-9

    def test_long_chain_full_rank(self):
        m = build_ising(10, **ISING)
        s, tr = cheby_filter(y_plus_mps(10), m, 200, d_max=32, e0=0.0)
        y = exact.exact_cheby_filter(y_plus_vector(10), m, 200, 0.0)
        assert fidelity(exact.mps_to_vector(s), y) > 1 - 1e-9
        assert tr.final["discarded"] < 1e-9

    def test_variance_drops_and_monotone_while_clean(self, n12_run):
        _, _, tr = n12_run
        var = tr.column("variance")
        dis = tr.column("discarded")
        assert var[-1] < 0.1 * var[0]
        clean = dis[1:] < 1e-6
        ratios = var[1:][clean] / var[:-1][clean]
        assert np.all(ratios < 1.02)

    def test_energy_stays_near_target(self, n12_run):
        # The filter centers at E0 = 0; the residual drift scales with the
        # current width (the surviving window samples the sloped density
        # of states asymmetrically), staying well under 0.2 delta.
        _, _, tr = n12_run
        drift = np.abs(tr.column("energy"))
        delta = np.sqrt(tr.column("variance"))
        assert np.all(drift <= np.maximum(0.2 * delta, 1e-6 * 12))

    def test_trace_matches_returned_state(self, n12_run):
        m, s, tr = n12_run
        row = tr.final
        assert_allclose(row["S_half"], entropy(s, 6), atol=1e-8)
        assert_allclose(row["S_block_3"], block_entropy(s, 4, 3), atol=1e-8)
        from mpsfilter.analysis import energy_variance
        e, v = energy_variance(s, m)
        assert_allclose(row["energy"], e, atol=1e-8)
        assert_allclose(row["variance"], v, atol=1e-8)

    def test_discarded_accumulates(self, n12_run):
        _, _, tr = n12_run
        dis = tr.column("discarded")
        assert np.all(np.diff(dis) >= 0.0)
        assert dis[0] == 0.0

    def test_multi_matches_single(self):
        m = build_ising(8, **ISING)
        p = y_plus_mps(8)
        multi = cheby_filter_multi(p, m, [8, 24], d_max=12, e0=0.0)
        single_s, single_tr = cheby_filter(p, m, 8, d_max=12, e0=0.0)
        s8, tr8 = multi[8]
        assert fidelity(exact.mps_to_vector(s8),
                        exact.mps_to_vector(single_s)) > 1 - 1e-12
        assert np.array_equal(tr8.steps, single_tr.steps)
        assert_allclose(tr8.column("variance"),
                        single_tr.column("variance"), rtol=1e-12)
        assert multi[24][1].final["step"] == 24

    def test_meta_describes_run(self):
        m = build_ising(6, **ISING)
        _, tr = cheby_filter(y_plus_mps(6), m, 4, d_max=8, e0=0.25)
        meta = tr.meta
        assert meta["model"] == m.name
        assert meta["N"] == 6
        assert meta["M"] == 4
        assert meta["d_max"] == 8
        assert meta["E0"] == 0.25
        assert meta["backend"] == "mps"
        assert meta["alpha"] > 0.0

    def test_rejects_bad_orders(self):
        m = build_ising(6, **ISING)
        p = y_plus_mps(6)
        with pytest.raises(ValueError):
            cheby_filter_multi(p, m, [], d_max=8, e0=0.0)
        with pytest.raises(ValueError):
            cheby_filter(p, m, -1, d_max=8, e0=0.0)


class TestFitStep:
    """Variational recurrence step used once bonds outgrow the direct path."""

    def _setup(self, seed):
        model = build_ising(6, **ISING)
        op = rescaled(model, 0.0, 0.08)
        rng = np.random.default_rng(seed)
        t1 = random_mps(6, 8, rng)
        t0 = random_mps(6, 8, rng)
        t1.log_norm = 0.7
        t0.log_norm = -0.4
        return model, op, t1, t0

    def test_matches_dense_target(self):
        # at maximal bond the two alternating passes reproduce 2 H~ t1 - t0
        model, op, t1, t0 = self._setup(seed=0)
        ht = op.alpha * exact.dense_hamiltonian(model) / 6
        y = 2.0 * ht @ exact.mps_to_vector(t1) - exact.mps_to_vector(t0)
        phi = _fit_step(op.mpo, t1, t0, d_max=64, weight_tol=0.0)
        assert_allclose(exact.mps_to_vector(phi), y, atol=1e-10)

    def test_returns_unit_scale_tensors(self):
        # log_norm carries the whole magnitude, so chained fit steps cannot
        # drift the raw tensor scale toward overflow or underflow
        _, op, t1, t0 = self._setup(seed=3)
        phi = _fit_step(op.mpo, t1, t0, d_max=64, weight_tol=0.0)
        assert np.isclose(norm(phi), math.exp(phi.log_norm), rtol=1e-12)

    def test_forced_fit_chain_matches_oracle(self, monkeypatch):
        monkeypatch.setattr("mpsfilter.filtering.DIRECT_BOND_MAX", 0)
        model = build_ising(6, **ISING)
        state, trace = cheby_filter(y_plus_mps(6), model, 24, d_max=16,
                                    e0=0.0)
        v = exact.exact_cheby_filter(y_plus_vector(6), model, 24, 0.0)
        assert fidelity(exact.mps_to_vector(state), v) >= 1.0 - 1e-9
        assert math.isfinite(trace.final["discarded"])
        assert trace.final["discarded"] < 1e-6


class TestTraceRecords:
    def test_default_cadence(self):
        assert _record_cadence(49, None) == 1
        assert _record_cadence(60, None) == 2
        assert _record_cadence(500, None) == 10

    def test_explicit_cadence(self):
        assert _record_cadence(500, 3) == 3
        with pytest.raises(ValueError):
            _record_cadence(10, 0)

    def test_recorded_steps_default(self):
        m = build_ising(6, **ISING)
        _, tr = cheby_filter(y_plus_mps(6), m, 60, d_max=8, e0=0.0)
        assert list(tr.steps) == [0] + list(range(2, 61, 2))

    def test_recorded_steps_override_and_forced_final(self):
        m = build_ising(6, **ISING)
        _, tr = cheby_filter(y_plus_mps(6), m, 60, d_max=8, e0=0.0,
                             record_every=7)
        assert list(tr.steps) == [0, 7, 14, 21, 28, 35, 42, 49, 56, 60]

    def test_add_row_validates(self):
        tr = FilterTrace(meta={})
        bad = trace_row(0)
        del bad["variance"]
        with pytest.raises(ValueError, match="missing"):
            tr.add_row(bad)
        tr.add_row(trace_row(0))
        with pytest.raises(ValueError, match="increase"):
            tr.add_row(trace_row(0))

    def test_column_and_final(self):
        tr = FilterTrace(meta={})
        with pytest.raises(ValueError):
            tr.final
        tr.add_row(trace_row(0, variance=2.0))
        tr.add_row(trace_row(3, variance=1.0))
        assert_allclose(tr.column("variance"), [2.0, 1.0])
        assert tr.final["step"] == 3
        with pytest.raises(KeyError):
            tr.column("nope")

    def test_csv_format(self):
        tr = FilterTrace(meta={})
        tr.add_row(trace_row(0, variance=1.0 / 3.0, seconds=1.25,
                             max_bond=17))
        text = tr.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(TRACE_COLUMNS)
        cells = lines[1].split(",")
        assert cells[TRACE_COLUMNS.index("step")] == "0"
        assert cells[TRACE_COLUMNS.index("max_bond")] == "17"
        # floats are written with repr so they round-trip bit-exactly
        assert float(cells[TRACE_COLUMNS.index("variance")]) == 1.0 / 3.0
        assert cells[TRACE_COLUMNS.index("seconds")] == "1.25"
        zeroed = tr.to_csv(zero_seconds=True).strip().split("\n")
        assert zeroed[1].split(",")[TRACE_COLUMNS.index("seconds")] == "0.0"

    def test_save_csv(self, tmp_path):
        tr = FilterTrace(meta={})
        tr.add_row(trace_row(0))
        path = tmp_path / "trace.csv"
        tr.save_csv(path)
        assert path.read_text() == tr.to_csv()

    def test_runs_are_deterministic(self):
        m = build_ising(8, **ISING)
        texts = []
        for _ in range(2):
            _, tr = cheby_filter(y_plus_mps(8), m, 10, d_max=12, e0=0.0)
            texts.append(tr.to_csv(zero_seconds=True))
        assert texts[0] == texts[1]

    def test_variance_jump_flag(self):
        tr = FilterTrace(meta={})
        tr.add_row(trace_row(0, variance=1.0))
        tr.add_row(trace_row(1, variance=20.0))
        _check_variance_jump(tr, 10)
        assert len(tr.flags) == 1
        assert "variance rose" in tr.flags[0]

    def test_no_flag_for_mild_rise(self):
        tr = FilterTrace(meta={})
        tr.add_row(trace_row(0, variance=1.0))
        tr.add_row(trace_row(1, variance=5.0))
        _check_variance_jump(tr, 10)
        assert tr.flags == []


class TestExactTracedBackend:
    def test_matches_plain_dense_filter(self):
        m = build_ising(8, **ISING)
        v = y_plus_vector(8)
        out = cheby_filter_exact_traced(v, m, [0, 16], 0.0)
        u16, tr16 = out[16]
        y = exact.exact_cheby_filter(v, m, 16, 0.0)
        assert fidelity(u16, y) > 1 - 1e-12
        assert np.all(tr16.column("discarded") == 0.0)
        assert tr16.meta["backend"] == "exact"
        assert tr16.meta["d_max"] is None
        assert tr16.final["step"] == 16
        u0, tr0 = out[0]
        assert fidelity(u0, v) > 1 - 1e-12
        assert len(tr0.rows) == 1

    def test_cross_backend_trace_agreement(self):
        # Full-rank MPS run and dense run must report the same physics.
        m = build_ising(8, **ISING)
        _, tr_mps = cheby_filter(y_plus_mps(8), m, 12, d_max=16, e0=0.0)
        _, tr_ex = cheby_filter_exact_traced(y_plus_vector(8), m, [12], 0.0)[12]
        assert np.array_equal(tr_mps.steps, tr_ex.steps)
        for name in ("energy", "variance", "S_half", "S_block_2",
                     "S_block_5"):
            assert_allclose(tr_mps.column(name), tr_ex.column(name),
                            atol=1e-7)
        assert np.all(np.abs(tr_mps.column("d_tr") - tr_ex.column("d_tr"))
                      <= 1)

    def test_rejects_bad_orders(self):
        m = build_ising(6, **ISING)
        with pytest.raises(ValueError):
            cheby_filter_exact_traced(y_plus_vector(6), m, [], 0.0)
        with pytest.raises(ValueError):
            cheby_filter_exact_traced(y_plus_vector(6), m, [-3], 0.0)


class TestCosineFilter:
    def test_zero_applications_is_identity(self):
        m = build_ising(8, **ISING)
        v = y_plus_vector(8)
        out = cosine_filter_exact(v, m, 0, 0.0)
        assert_allclose(out, v, atol=0.0)

    def test_width_tracks_full_form(self):
        # In the moderate-order regime the product of the start-state
        # energy distribution and the squared filter is close to Gaussian
        # and the combined-width formula holds tightly.
        N, M = 12, 24
        m = build_ising(N, **ISING)
        y = cosine_filter_exact(y_plus_vector(N), m, M, 0.0)
        delta = math.sqrt(exact.exact_variance(m, y))
        pred = predicted_delta_cos(N, M, sigma_p=sigma_p_ising(N, **ISING))
        assert abs(delta / pred - 1.0) < 0.05

    def test_width_at_quadratic_order(self):
        # At M = N^2 the filter resolves the discreteness and skew of the
        # N = 12 spectrum, so the Gaussian-product formula is only good to
        # about 11 percent here (measured 0.891 ratio); the tolerance
        # allows for that systematic.
        N, M = 12, 144
        m = build_ising(N, **ISING)
        y = cosine_filter_exact(y_plus_vector(N), m, M, 0.0)
        delta = math.sqrt(exact.exact_variance(m, y))
        pred = predicted_delta_cos(N, M, sigma_p=sigma_p_ising(N, **ISING))
        assert abs(delta / pred - 1.0) < 0.12

    def test_binomial_expansion_matches(self):
        # cos^M (H/N) expands into binomially weighted evolutions
        # exp(i (M - 2j) H / N); keeping |M - 2j| <= 4 sqrt(M) drops
        # weight ~6e-5, so both constructions agree to better than 1e-3.
        N, M = 10, 64
        m = build_ising(N, **ISING)
        v = y_plus_vector(N)
        want = cosine_filter_exact(v, m, M, 0.0)
        half_width = int(4 * math.sqrt(M))
        y = np.zeros_like(v)
        for j in range((M - half_width) // 2, (M + half_width) // 2 + 1):
            w = math.comb(M, j) / 2.0**M
            y = y + w * exact.evolve(m, v, (M - 2 * j) / N)
        y = y / np.linalg.norm(y)
        phase = np.vdot(y, want)
        phase = phase / abs(phase)
        assert np.linalg.norm(want - phase * y) < 1e-3
