import math

import numpy as np
import pytest

from dilation.decompose import (SampledTrace, count_extrema, decompose, emd_sift,
                                fit_monomials, hybrid_dilate, interior_mask, lowpass_split,
                                stretch_mode)

TWO_PI = 2 * math.pi
X = np.linspace(0.0, 1.0, 4001)
H = X[1] - X[0]


def interior(x, frac=0.9):
    pad = (1 - frac) / 2
    return (x >= pad) & (x <= 1 - pad)


def test_sampled_trace_validation():
    with pytest.raises(ValueError):
        SampledTrace(np.array([0.0, 0.1, 0.3]), np.zeros(3))
    with pytest.raises(ValueError):
        SampledTrace(np.linspace(0, 1, 5), np.array([0, 1, np.nan, 0, 0]))
    tr = SampledTrace.sample(np.sin, n=11)
    assert tr.spacing == pytest.approx(0.1)


def test_lowpass_reproduces_polynomials():
    v = 1 + 0.5 * X - 2 * X ** 2 + X ** 3
    smooth, res = lowpass_split(v, 5 * H, x=X)
    assert np.max(np.abs(res)) <= 1e-3 * np.ptp(v)
    assert np.array_equal(smooth + res, v) or np.allclose(smooth + res, v, atol=1e-15)
    lin = 2 - 3 * X
    assert np.max(np.abs(lowpass_split(lin, 40 * H, x=X)[1])) < 1e-12


def test_lowpass_removes_fast_tone():
    eps = 1 / 20
    v = np.sin(TWO_PI * X / eps)
    smooth, _ = lowpass_split(v, 3 * eps, x=X)
    assert np.max(np.abs(smooth)) <= 0.1


def test_lowpass_zero_and_width_limits():
    smooth, res = lowpass_split(np.zeros(101), 0.05)
    assert not smooth.any() and not res.any()
    with pytest.raises(ValueError):
        lowpass_split(np.zeros(101), 0.015)
    with pytest.raises(ValueError):
        lowpass_split(np.zeros(101), 1.5)


def test_interior_mask():
    mask = interior_mask(np.linspace(0, 1, 11), 0.2)
    assert list(np.flatnonzero(mask)) == [2, 3, 4, 5, 6, 7, 8]


def test_fit_monomials_examples():
    p = fit_monomials(1 + 0.1 * X, 3, x=X)
    assert p.terms() == pytest.approx({(0,): 1.0, (1,): 0.1}, abs=1e-6)
    c = fit_monomials(np.full(50, 2.5), 4)
    assert c.terms() == pytest.approx({(0,): 2.5})
    q = fit_monomials(X ** 2, 4, threshold=1e-3, x=X)
    assert set(q.terms()) == {(2,)}
    assert q.coefficient(2) == pytest.approx(1.0, abs=1e-6)
    assert q.coefficient(0) == 0.0


def test_fit_monomials_2d():
    rng = np.random.default_rng(0)
    pts = rng.random((500, 2))
    v = 1 + 0.1 * pts[:, 0] + 0.05 * pts[:, 1]
    p = fit_monomials(v, 3, x=pts)
    assert p.terms() == pytest.approx({(0, 0): 1.0, (1, 0): 0.1, (0, 1): 0.05}, abs=1e-9)
    assert np.allclose(p(pts), v)


def test_fit_monomials_errors():
    with pytest.raises(ValueError):
        fit_monomials(X, 7, x=X)
    with pytest.raises(np.linalg.LinAlgError):
        fit_monomials(np.ones(3), 4)


def test_emd_single_tone_energy():
    eps = 1 / 40
    v = 0.7 * np.sin(TWO_PI * X / eps)
    imfs, rest = emd_sift(v, x=X)
    assert len(imfs) >= 1
    energy = [np.sum(m ** 2) for m in imfs]
    assert max(energy) >= 0.95 * np.sum(v ** 2)
    assert np.allclose(sum(imfs) + rest, v, atol=1e-12)


def test_emd_two_tones_fast_first():
    eps = 1 / 80
    fast = np.sin(TWO_PI * X / eps)
    slow = np.sin(TWO_PI * X / (8 * eps))
    imfs, rest = emd_sift(fast + slow, x=X)
    assert np.corrcoef(imfs[0], fast)[0, 1] >= 0.9
    assert np.allclose(sum(imfs) + rest, fast + slow, atol=1e-12)


def test_emd_monotone_input():
    v = np.exp(X)
    imfs, rest = emd_sift(v, x=X)
    assert imfs == [] and np.array_equal(rest, v)


def test_emd_residual_has_fewer_extrema():
    rng = np.random.default_rng(1)
    v = np.sin(TWO_PI * 23 * X) + 0.3 * np.sin(TWO_PI * 5 * X) + 0.01 * rng.standard_normal(len(X))
    imfs, rest = emd_sift(v, max_imfs=6, x=X)
    assert count_extrema(rest) < count_extrema(v)
    assert all(np.isfinite(np.sum(m ** 2)) for m in imfs)


def test_stretch_single_tone():
    eps = 1 / 40
    v = np.sin(TWO_PI * X / eps)
    out = stretch_mode(v, 2, x=X)
    ref = np.sin(TWO_PI * X / (2 * eps))
    assert np.max(np.abs(out - ref)[interior(X)]) <= 5e-2
    assert np.max(np.abs(stretch_mode(v, 1, x=X) - v)) <= 1e-10


def test_stretch_keeps_envelope():
    eps = 1 / 40
    env = 1 + 0.5 * X
    out = stretch_mode(env * np.sin(TWO_PI * X / eps), 3, x=X)
    idx = np.flatnonzero((np.abs(out[1:-1]) >= np.abs(out[:-2]))
                         & (np.abs(out[1:-1]) >= np.abs(out[2:]))) + 1
    idx = idx[(X[idx] > 0.05) & (X[idx] < 0.95) & (np.abs(out[idx]) > 0.5)]
    assert len(idx) >= 5
    assert np.max(np.abs(np.abs(out[idx]) / env[idx] - 1)) <= 0.05


def test_stretch_degenerate_mode_warns():
    with pytest.warns(RuntimeWarning):
        out = stretch_mode(np.exp(X), 2, x=X)
    assert np.array_equal(out, np.exp(X))
    with pytest.raises(ValueError):
        stretch_mode(np.sin(X), 0.5, x=X)


def test_decompose_bookkeeping_and_csv(tmp_path):
    eps = 0.01
    x = np.linspace(0, 1, 8193)
    v = 1 + 0.1 * x + 0.9 * np.sin(TWO_PI * x / eps)
    modes = decompose(v, 4 * eps, x=x)
    assert np.max(np.abs(modes.reconstruct() - v)) <= 1e-8
    assert modes.smooth.terms() == pytest.approx({(0,): 1.0, (1,): 0.1}, rel=1e-4)
    modes.to_csv(tmp_path / "modes.csv")
    header = (tmp_path / "modes.csv").read_text().splitlines()[0]
    assert header.startswith("x,smooth,imf1") and header.endswith("residual")


def test_hybrid_matches_partial_dilation():
    eps, m = 0.01, 3
    x = np.linspace(0, 1, 8193)
    v = 1 + 0.1 * x + 0.5 * np.sin(TWO_PI * x / eps)
    hc = hybrid_dilate(v, m, 4 * eps, x=x, origin=0.0)
    ref = 1 + 0.1 * x + 0.5 * np.sin(TWO_PI * x / (m * eps))
    assert np.max(np.abs(hc(x) - ref)[interior(x)]) <= 5e-2


def test_hybrid_oscillation_free_and_round_trip():
    x = np.linspace(0, 1, 4097)
    flat = hybrid_dilate(1 + 0.1 * x, 3, 0.04, x=x)
    assert flat.modes.imfs == []
    assert np.allclose(flat(x), 1 + 0.1 * x, atol=1e-9)
    v = 2 + np.sin(TWO_PI * x / 0.02)
    same = hybrid_dilate(v, 1, 0.08, x=x)
    assert np.max(np.abs(same(x) - v)) <= 1e-2
