import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddptycho.errors import ConfigError
from ddptycho.stagm import (lipschitz_constant, prox_magnitude, prox_magnitude_threshold,
                            stagm_gradient, stagm_pointwise, stagm_prox, stagm_value)

N_TUPLES = 10_000


def objective(t, ymag, b, lam, eps):
    """Scalar prox objective in the magnitude, written out independently."""
    sb = np.sqrt(b)
    g = np.where(t < eps * sb, 0.5 * (1 - eps) * (b - t ** 2 / eps), 0.5 * (t - sb) ** 2)
    return g + 0.5 * lam * (t - ymag) ** 2


def grid_search(ymag, b, lam, eps, coarse=2001, fine=201, levels=3):
    """Global minimum of the 1-D objective by nested grid refinement.

    The two pieces of the metric are searched separately so a near-tie
    between basins cannot send the refinement to the wrong one.
    """
    edge = eps * np.sqrt(b)
    top = np.maximum(ymag, np.sqrt(b)) + 1.0
    best = np.full(ymag.shape, np.inf)
    for lo, hi in ((np.zeros_like(edge), edge), (edge, top)):
        t = lo[:, None] + (hi - lo)[:, None] * np.linspace(0, 1, coarse)[None, :]
        for _ in range(levels):
            vals = objective(t, ymag[:, None], b[:, None], lam[:, None], eps[:, None])
            k = np.argmin(vals, axis=1)
            piece_best = vals[np.arange(len(k)), k]
            h = t[:, 1] - t[:, 0]
            centre = t[np.arange(len(k)), k]
            a = np.maximum(centre - h, lo)
            c = np.minimum(centre + h, hi)
            t = a[:, None] + (c - a)[:, None] * np.linspace(0, 1, fine)[None, :]
        best = np.minimum(best, piece_best)
    return best


@pytest.fixture(scope="module")
def tuples():
    rng = np.random.default_rng(7)
    eps = rng.uniform(0.05, 0.95, N_TUPLES)
    b = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), N_TUPLES))
    b[::50] = 0.0
    ymag = rng.uniform(0, 1, N_TUPLES) * (3 * np.sqrt(b) + 0.5)
    lam = np.exp(rng.uniform(np.log(0.05), np.log(20.0), N_TUPLES))
    return ymag, b, lam, eps


def _per_tuple(fn, ymag, b, lam, eps):
    return np.array([fn(ymag[i], b[i], lam[i], eps[i]) for i in range(len(ymag))])


def test_prox_matches_grid_oracle(tuples):
    ymag, b, lam, eps = tuples
    ref = np.concatenate([grid_search(ymag[s], b[s], lam[s], eps[s])
                          for s in np.array_split(np.arange(N_TUPLES), 20)])
    t = _per_tuple(lambda y, bb, l, e: prox_magnitude_threshold(y, bb, l, e), ymag, b, lam, eps)
    gap = objective(t, ymag, b, lam, eps) - ref
    assert np.all(np.abs(gap) <= 1e-8), np.max(np.abs(gap))


def test_closed_form_agrees_with_two_candidate_search(tuples):
    ymag, b, lam, eps = tuples
    closed = _per_tuple(prox_magnitude_threshold, ymag, b, lam, eps)
    search = _per_tuple(prox_magnitude, ymag, b, lam, eps)
    differ = np.abs(closed - search) > 1e-9 * (1 + np.abs(search))
    # disagreement is only allowed where both points are global minimizers (exact ties)
    f_closed = objective(closed, ymag, b, lam, eps)
    f_search = objective(search, ymag, b, lam, eps)
    assert np.all(np.abs(f_closed - f_search)[differ] <= 1e-12 * (1 + np.abs(f_search[differ])))


def test_documented_tie():
    # lam <= (1-eps)/eps: the cap is concave under the penalty, so its best point is
    # the endpoint 0, which never beats the outer stationary point
    eps, lam, b = 0.5, 0.5, 1.0
    ys = np.linspace(0, 1, 100_001)
    inner0 = 0.5 * (1 - eps) * b + 0.5 * lam * ys ** 2
    outer_t = np.maximum((1 + lam * ys) / (1 + lam), eps)
    outer = objective(outer_t, ys, b, lam, eps)
    assert np.all(inner0 >= outer - 1e-15)
    assert np.all(prox_magnitude_threshold(ys, b, lam, eps) == (1 + lam * ys) / (1 + lam))


def test_stagm_prox_complex_phase(rng):
    y = rng.standard_normal((50, 8)) + 1j * rng.standard_normal((50, 8))
    f = rng.uniform(0, 3, (50, 8))
    for lam, eps in ((0.1, 0.5), (5.0, 0.5), (3.0, 0.2), (10.0, 0.9)):
        x = stagm_prox(y, f, lam, eps)
        mag = prox_magnitude_threshold(np.abs(y), f, lam, eps)
        assert np.allclose(np.abs(x), mag, rtol=1e-13, atol=1e-15)
        nz = mag > 0
        assert np.allclose(np.angle(x[nz]), np.angle(y[nz]), atol=1e-12)
        assert np.array_equal(x, stagm_prox(y, f, lam, eps, sqrt_f=np.sqrt(f)))


def test_stagm_prox_zero_input_uses_positive_sign():
    x = stagm_prox(np.zeros(3, dtype=complex), np.array([4.0, 1.0, 0.0]), 0.1, 0.5)
    assert np.allclose(x, [2 / 1.1, 1 / 1.1, 0.0])
    assert np.all(x.imag == 0)


def test_stagm_prox_subnormal_input_keeps_phase():
    y = np.array([2.2e-311j, -1e-320 + 1e-320j])
    x = stagm_prox(y, np.ones(2), 1.0, 0.5)
    assert np.all(np.isfinite(x))
    assert np.allclose(x, [0.5j, 0.5 * np.exp(0.75j * np.pi)])


def test_prox_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        stagm_prox(np.ones(2), np.ones(2), 0.0, 0.5)
    with pytest.raises(ConfigError):
        stagm_prox(np.ones(2), np.ones(2), 1.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(
    yr=st.floats(-5, 5), yi=st.floats(-5, 5), b=st.floats(0, 25),
    lam=st.floats(0.01, 50), eps=st.floats(0.01, 0.99),
    xr=st.floats(-8, 8), xi=st.floats(-8, 8),
)
def test_prox_beats_any_candidate(yr, yi, b, lam, eps, xr, xi):
    y = np.array([yr + 1j * yi])
    f = np.array([b])
    p = stagm_prox(y, f, lam, eps)
    cand = np.array([xr + 1j * xi])

    def phi(x):
        return stagm_value(x, f, eps) + 0.5 * lam * np.abs(x - y)[0] ** 2

    assert phi(p) <= phi(cand) + 1e-9 * (1 + abs(phi(cand)))


# --- value, gradient, Lipschitz -------------------------------------------------------

def test_value_branches():
    eps = 0.5
    f = np.array([4.0, 4.0, 4.0])
    z = np.array([0.0, 0.5, 3.0])
    g = stagm_pointwise(z, f, eps)
    assert g[0] == pytest.approx(0.25 * 4)
    assert g[1] == pytest.approx(0.25 * (4 - 0.25 / 0.5))
    assert g[2] == pytest.approx(0.5)
    # continuity at the cap edge |z| = eps sqrt(f)
    edge = eps * 2.0
    lo = stagm_pointwise(np.array([edge - 1e-12]), f[:1], eps)[0]
    hi = stagm_pointwise(np.array([edge]), f[:1], eps)[0]
    assert lo == pytest.approx(hi, abs=1e-10)


def test_minimizers_on_measured_modulus(rng):
    f = rng.uniform(0.1, 4, 100)
    z = np.sqrt(f) * np.exp(1j * rng.uniform(0, 2 * np.pi, 100))
    assert stagm_value(z, f, 0.5) == pytest.approx(0.0, abs=1e-24)


def test_gradient_finite_differences():
    rng = np.random.default_rng(11)
    n = 2000
    eps = rng.uniform(0.1, 0.9, n)
    f = rng.uniform(0, 4, n)
    f[::40] = 0.0
    z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * 1.5
    # keep away from the C1 seam where central differences lose an order
    edge = eps * np.sqrt(f)
    keep = np.abs(np.abs(z) - edge) > 1e-3
    z, f, eps = z[keep], f[keep], eps[keep]
    h = 1e-6
    for i in range(len(z)):
        g = stagm_gradient(z[i:i + 1], f[i:i + 1], eps[i])[0]

        def val(x):
            return stagm_value(np.array([x]), f[i:i + 1], eps[i])

        dre = (val(z[i] + h) - val(z[i] - h)) / (2 * h)
        dim = (val(z[i] + 1j * h) - val(z[i] - 1j * h)) / (2 * h)
        assert abs(complex(dre, dim) - g) <= 1e-6 * max(1.0, abs(g))


def test_lipschitz_bound():
    rng = np.random.default_rng(12)
    for eps in (0.1, 0.5, 0.8):
        L = lipschitz_constant(eps)
        assert L == pytest.approx(2 / eps - 1)
        f = rng.uniform(0, 4, N_TUPLES)
        x = (rng.standard_normal(N_TUPLES) + 1j * rng.standard_normal(N_TUPLES)) * np.sqrt(f)
        y = x + (rng.standard_normal(N_TUPLES) + 1j * rng.standard_normal(N_TUPLES)) * rng.choice(
            [1e-3, 0.1, 1.0], N_TUPLES)
        gx = stagm_gradient(x, f, eps)
        gy = stagm_gradient(y, f, eps)
        assert np.all(np.abs(gx - gy) <= L * np.abs(x - y) * (1 + 1e-12) + 1e-15)


def test_lipschitz_constant_is_attained():
    # across the origin inside the cap the gradient is (1 - 1/eps) z: slope 1/eps - 1
    # and the bound 2/eps - 1 is approached by pairs straddling the seam
    eps, f = 0.5, np.array([1.0, 1.0])
    x = np.array([eps - 1e-9, eps + 1e-3])
    g = stagm_gradient(x, f, eps)
    ratio = abs(g[1] - g[0]) / abs(x[1] - x[0])
    assert ratio <= lipschitz_constant(eps)


def test_epsilon_validation():
    with pytest.raises(ConfigError):
        lipschitz_constant(0.0)
    with pytest.raises(ConfigError):
        stagm_value(np.ones(2), np.ones(2), 1.5)
