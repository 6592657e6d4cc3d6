import numpy as np
import pytest
from scipy.special import gamma

from fracparabolic import oracle as orc
from fracparabolic.errors import ConfigurationError, PreconditionError
from fracparabolic.grids import GridSpec
from fracparabolic.kernels import kernel_field
from fracparabolic.operators import ConstantOperator, coupled_1d, heat_1d, sine_system
from fracparabolic.specfun import mittag_leffler_scalar


def test_weights():
    s = orc.SteppingScheme(0.4, 0.1, 50)
    w = s.weights
    j = np.arange(51)
    np.testing.assert_allclose(w, ((j + 1) ** 0.6 - j**0.6) / gamma(1.6))
    assert np.all(w > 0) and np.all(np.diff(w) < 0)
    with pytest.raises(ValueError):
        w[0] = 1.0
    with pytest.raises(ConfigurationError):
        orc.SteppingScheme(0.4, 0.0, 5)
    with pytest.raises(ConfigurationError):
        orc.SteppingScheme(0.4, 0.1, 0)


def test_caputo_l1_examples():
    s = orc.SteppingScheme(0.5, 0.1, 10)
    assert orc.caputo_l1(np.full(6, 3.0), s) == 0.0
    # exact on linear functions: D^a t = t^{1-a} / Gamma(2-a)
    s = orc.SteppingScheme(0.5, 0.1, 10)
    v = orc.caputo_l1(s.times, s)
    assert v == pytest.approx(1.0 / gamma(1.5), rel=1e-13)
    with pytest.raises(PreconditionError):
        orc.caputo_l1([1.0], s)


def test_caputo_l1_quadratic_rate():
    # D^a t^2 = 2 t^{2-a} / Gamma(3-a) at t = 1, rate 2 - a
    errs = []
    for K in (20, 40, 80, 160, 320):
        s = orc.SteppingScheme.uniform(0.5, 1.0, K)
        errs.append(abs(orc.caputo_l1(s.times**2, s) - 2.0 / gamma(2.5)))
    rates = orc.observed_order(errs)
    assert np.all(np.abs(rates - 1.5) < 0.05)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_smooth_manufactured_order(alpha):
    # u = t^2 solves D^a u = -u + f with f = 2 t^{2-a} / Gamma(3-a) + t^2
    f = lambda t, p: 2 * t ** (2 - alpha) / gamma(3 - alpha) + t**2
    errs = [abs(orc.solve_ivp(np.array([[-1.0]]), 0.0, f, alpha=alpha, T=1.0, steps=K).values[-1, 0, 0] - 1.0)
            for K in (40, 80, 160, 320, 640)]
    rate = orc.observed_order(errs)[-1]
    assert 1.3 <= rate <= 2 - alpha + 0.2


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_ode_mittag_leffler(alpha):
    lam = -1.0
    ex = mittag_leffler_scalar(alpha, 1, lam).real
    errs = [abs(orc.solve_ivp(np.array([[lam]]), 1.0, None, alpha=alpha, T=1.0, steps=K).values[-1, 0, 0] - ex)
            for K in (40, 80, 160, 320)]
    assert errs[-1] < 2e-4
    assert orc.observed_order(errs)[-1] > 1.0


def test_ode_order_at_half():
    ex = mittag_leffler_scalar(0.5, 1, -1.0).real
    errs = [abs(orc.solve_ivp(np.array([[-1.0]]), 1.0, None, alpha=0.5, T=1.0, steps=K).values[-1, 0, 0] - ex)
            for K in (40, 80, 160, 320, 640)]
    assert orc.observed_order(errs)[-1] >= 1.3


def test_first_step_correction_matters():
    ex = mittag_leffler_scalar(0.5, 1, -1.0).real
    def err(corrected):
        s = orc.SteppingScheme.uniform(0.5, 1.0, 160, corrected)
        return abs(orc.solve_ivp(np.array([[-1.0]]), 1.0, None, scheme=s).values[-1, 0, 0] - ex)
    assert err(True) < 0.2 * err(False)


@pytest.mark.parametrize("system", [heat_1d(), coupled_1d(), sine_system()], ids=["heat", "coupled", "sine"])
@pytest.mark.parametrize("alpha", [0.3, 0.7])
def test_zero_data_gives_zero(system, alpha):
    g = GridSpec(1, np.pi, 32)
    tr = orc.solve_ivp(system, np.zeros((32, system.N)), None, alpha=alpha, T=1.0, steps=20, grid=g)
    assert np.all(tr.values == 0)


def test_mass_conservation():
    g = GridSpec(1, np.pi, 64)
    x = g.points()[:, 0]
    tr = orc.solve_ivp(heat_1d(), np.exp(np.cos(x)), None, alpha=0.5, T=1.0, steps=100, grid=g)
    mass = tr.values[..., 0].sum(axis=1).real * g.spacing
    assert np.ptp(mass) < 1e-6


def test_heat_matches_kernel_convolution():
    g = GridSpec(1, 8.0, 256)
    x = g.points()[:, 0]
    u0 = np.exp(-x**2 / (2 * 0.25**2))
    T = 0.5
    tr = orc.solve_ivp(heat_1d(), u0, None, alpha=0.5, T=T, steps=400, grid=g)
    h = g.spacing
    d = h * np.arange(-255, 256)
    K = kernel_field(heat_1d(), 0.5, "Z_alpha", [T], d, "fourier").values[0, :, 0, 0]
    conv = h * np.array([np.sum(K[i - np.arange(256) + 255] * u0) for i in range(256)])
    assert np.max(np.abs(tr.at(T)[:, 0] - conv)) < 1e-3


def test_trajectory_lookup():
    tr = orc.solve_ivp(np.array([[-1.0]]), 1.0, None, alpha=0.5, T=1.0, steps=10)
    assert tr.at(0.5).shape == (1, 1)
    with pytest.raises(ConfigurationError):
        tr.at(0.55)


def test_rejects_bad_input():
    with pytest.raises(PreconditionError):
        orc.solve_ivp(ConstantOperator(1, 1, 1, {(2,): [[1.0]]}), 0.0, None, alpha=0.5, T=1.0, steps=5,
                      grid=GridSpec(1, 1.0, 8))
    with pytest.raises(ConfigurationError):
        orc.solve_ivp(heat_1d(), 0.0, None, alpha=0.5, T=1.0, steps=5)
    with pytest.raises(ConfigurationError):
        orc.solve_ivp(np.ones((2, 3)), 0.0, None, alpha=0.5, T=1.0, steps=5)
    with pytest.raises(ConfigurationError):
        orc.solve_ivp(np.array([[-1.0]]), 0.0, None)
