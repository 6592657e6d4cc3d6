import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss
from scipy.special import erfcx, gamma

from fracparabolic import specfun as sf
from fracparabolic.errors import ConfigurationError, PreconditionError, UnsupportedRegionError

from .conftest import dissipative, mp_ml, mp_wright


def laplace(f, zeta, upper=None, panels=400):
    """int_0^inf f(s) e^{-zeta s} ds by Gauss-Legendre panels on a geometric mesh."""
    upper = 60.0 / zeta if upper is None else upper
    edges = np.concatenate([[0.0], np.geomspace(1e-8, upper, panels)])
    x, w = leggauss(20)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    s = (mid[:, None] + half[:, None] * x).ravel()
    ws = (half[:, None] * w).ravel()
    return float(np.sum(ws * f(s) * np.exp(-zeta * s)))


# ---------------------------------------------------------------- Wright


@pytest.mark.parametrize("a,alpha", [(0.5, 0.5), (0.7, 0.3), (0.0, 0.5), (-0.5, 0.5), (-0.3, 0.3),
                                     (0.3, 0.7), (-0.7, 0.7), (1.0, 0.25)])
@pytest.mark.parametrize("z", [0.0, 0.1, 0.9, 2.5, 6.0, 12.0])
def test_wright_matches_high_precision_series(a, alpha, z):
    ref = mp_wright(a, alpha, z, dps=60)
    val = float(sf.wright(a, alpha, z))
    assert abs(val - ref) <= 1e-10 * max(1.0, abs(ref)) + 1e-14


def test_phi_half_is_gaussian():
    z = np.linspace(0, 30, 301)
    ref = np.exp(-z**2 / 4) / np.sqrt(np.pi)
    np.testing.assert_allclose(sf.wright_phi(0.5, z), ref, rtol=1e-10, atol=1e-300)


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.8])
def test_phi_shape(alpha):
    # a probability density: nonnegative, monotone for alpha <= 1/2, unimodal above
    v = sf.wright_phi(alpha, np.linspace(0, 10, 500))
    assert np.all(v >= -1e-15)
    d = np.diff(v)
    if alpha <= 0.5:
        assert np.all(d <= 1e-15)
    else:
        peak = np.argmax(v)
        assert peak > 0 and np.all(d[:peak] >= -1e-15) and np.all(d[peak:] <= 1e-15)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_phi_moments(alpha):
    # int s^k Phi_alpha(s) ds = k! / Gamma(1 + alpha k)
    for k in range(3):
        m = laplace(lambda s: s**k * sf.wright_phi(alpha, s), 1e-12, upper=400.0, panels=300)
        assert abs(m - gamma(k + 1) / gamma(1 + alpha * k)) < 1e-8


def test_wright_rejects_negative_argument():
    with pytest.raises(PreconditionError):
        sf.wright(0.5, 0.5, -1.0)
    with pytest.raises(PreconditionError):
        sf.wright(0.5, 0.5, np.nan)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5, np.nan])
def test_fractional_order_validation(alpha):
    with pytest.raises(ConfigurationError):
        sf.FractionalOrder(alpha)
    with pytest.raises(ConfigurationError):
        sf.wright_phi(alpha, 1.0)


# ------------------------------------------------------- subordination kernels


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_subordination_kernels(alpha):
    t = 0.8
    phi = lambda s: sf.subordination_kernel("phi", alpha, t, s)
    assert abs(laplace(phi, 1e-12, upper=200.0) - 1.0) < 1e-8
    # nu = d phi / dt, checked by a centred difference
    s = np.linspace(0.05, 3.0, 30)
    h = 1e-5
    fd = (sf.subordination_kernel("phi", alpha, t + h, s) - sf.subordination_kernel("phi", alpha, t - h, s)) / (2 * h)
    np.testing.assert_allclose(sf.subordination_kernel("nu", alpha, t, s), fd, rtol=1e-6, atol=1e-8)
    # psi_t(s) = t^-1 W_0(s t^-a) = (alpha s / t) phi_t(s)
    np.testing.assert_allclose(sf.subordination_kernel("psi", alpha, t, s),
                               alpha * s / t * sf.subordination_kernel("phi", alpha, t, s), rtol=1e-10)


def test_subordination_kernel_errors():
    with pytest.raises(PreconditionError):
        sf.subordination_kernel("phi", 0.5, 0.0, 1.0)
    with pytest.raises(PreconditionError):
        sf.subordination_kernel("phi", 0.5, 1.0, -1.0)
    with pytest.raises(ConfigurationError):
        sf.subordination_kernel("chi", 0.5, 1.0, 1.0)


# ---------------------------------------------------------- Laplace identities


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("zeta", [0.5, 1.0, 2.0, 5.0])
def test_laplace_identities(alpha, zeta):
    e1 = sf.mittag_leffler_scalar(alpha, 1, -zeta).real
    ea = sf.mittag_leffler_scalar(alpha, "alpha", -zeta).real
    e0 = sf.mittag_leffler_scalar(alpha, 0, -zeta).real
    assert abs(laplace(lambda s: sf.wright_phi(alpha, s), zeta) - e1) < 1e-8
    assert abs(laplace(lambda s: sf.wright(0.0, alpha, s), zeta) - ea) < 1e-8
    assert abs(laplace(lambda s: sf.wright(-alpha, alpha, s), zeta) - e0) < 1e-8


# --------------------------------------------------------------- Mittag-Leffler


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("family", ["1", "alpha", "0"])
@pytest.mark.parametrize("z", [-0.01, -0.5, -1.6, -3.0, -10.0, -30.0, -2 + 3j, -5 + 0.5j, 2j, 0.3, 1.5, 0.8 + 0.2j])
def test_ml_scalar_matches_high_precision(alpha, family, z):
    if abs(z) ** (1 / alpha) > 400:
        pytest.skip("reference series too expensive")
    beta = {"1": 1.0, "alpha": alpha, "0": 0.0}[family]
    ref = mp_ml(alpha, beta, z, dps=40 + int(abs(z) ** (1 / alpha) / 2))
    val = complex(sf.mittag_leffler_scalar(alpha, family, z))
    assert abs(val - ref) <= 1e-10 * max(1.0, abs(ref))


def test_ml_half_closed_form():
    z = np.linspace(0.0, 40.0, 81)
    np.testing.assert_allclose(sf.mittag_leffler_scalar(0.5, 1, -z).real, erfcx(z), rtol=1e-10)


def test_ml_far_right_half_plane_unsupported():
    with pytest.raises(UnsupportedRegionError):
        sf.mittag_leffler_scalar(0.5, 1, 50.0)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_ml_completely_monotone_on_negative_axis(alpha):
    v = sf.mittag_leffler_scalar(alpha, 1, -np.linspace(0, 20, 200)).real
    assert v[0] == pytest.approx(1.0)
    assert np.all(np.diff(v) < 0) and np.all(v > 0)


@pytest.mark.parametrize("N", [2, 4])
@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("family", ["1", "alpha", "0"])
def test_matrix_ml_contour_vs_series(rng, N, alpha, family):
    for _ in range(3):
        B = dissipative(rng, N, rng.uniform(0.2, 1.0))
        a = sf.mittag_leffler_matrix(alpha, family, B)
        b = sf.mittag_leffler_matrix_series(alpha, family, B)
        assert np.max(np.abs(a - b)) <= 1e-9


def test_matrix_ml_diagonal_similarity(rng):
    V = np.array([[1.0, 0.4], [0.2, 1.0]])
    D = np.diag([-3.0, -40.0])
    B = V @ D @ np.linalg.inv(V)
    E = sf.ml_contour(0.6, 1, B)[0]
    diag = np.diag(sf.mittag_leffler_scalar(0.6, 1, np.diag(D)))
    np.testing.assert_allclose(E, V @ diag @ np.linalg.inv(V), atol=1e-10)


def test_matrix_ml_preconditions():
    with pytest.raises(PreconditionError):
        sf.mittag_leffler_matrix(0.5, 1, np.array([[0.1, 0.0], [0.0, -1.0]]))
    with pytest.raises(PreconditionError):
        sf.mittag_leffler_matrix(0.5, 1, np.ones((2, 3)))
    with pytest.raises(ConfigurationError):
        sf.mittag_leffler_matrix(0.5, 1, -np.eye(2), sf.HankelContour(1.0, 0.1))
    with pytest.raises(ConfigurationError):
        sf.mittag_leffler_matrix(0.5, 1, -np.eye(2), sf.HankelContour(-1.0, 1.0))


def test_contour_refinement_is_stable():
    B = np.array([[-2.0, 1.0], [0.0, -3.0]])
    a, used = sf.ml_contour(0.5, 1, B, tol=1e-12)
    b = sf._ml_contour_batch(0.5, 1.0, B, used.refined())
    assert np.max(np.abs(a - b)) < 1e-12


def test_dissipativity_constant():
    assert sf.dissipativity_constant(-np.eye(3)) == pytest.approx(1.0)
    assert sf.dissipativity_constant(np.array([[-1.0, 4.0], [0.0, -1.0]])) < 0


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("family", ["1", "alpha", "0"])
def test_asymptotic_remainder_bounded(rng, alpha, family):
    # |H| delta^2 stays bounded as the matrix grows along a ray
    B0 = dissipative(rng, 3)
    d0 = sf.dissipativity_constant(B0)
    prods = [np.linalg.norm(sf.ml_asymptotic_remainder(alpha, family, s * B0), 2) * (s * d0) ** 2
             for s in np.geomspace(1, 1e3, 7)]
    assert max(prods) < 10.0 * max(prods[0], 0.05)
