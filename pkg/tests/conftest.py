import numpy as np
import pytest

# PASS/FAIL lines of the acceptance criteria, printed after the run
ACCEPTANCE = []


def mp_wright(a, alpha, z, dps=40):
    """High-precision Wright series sum (-z)^k / (k! Gamma(a - alpha k)).

    The working precision grows until two evaluations agree, since the
    alternating terms can exceed the result by hundreds of digits.
    """
    prev = _mp_wright(a, alpha, z, dps)
    while True:
        dps += 60
        cur = _mp_wright(a, alpha, z, dps)
        if abs(cur - prev) <= 1e-15 * abs(cur) or cur == prev:
            return cur
        prev = cur


def _mp_wright(a, alpha, z, dps):
    mp = pytest.importorskip("mpmath")
    with mp.workdps(dps):
        z = mp.mpf(z)
        s, k, small = mp.mpf(0), 0, 0
        while True:
            t = (-z) ** k / mp.factorial(k) * mp.rgamma(mp.mpf(a) - mp.mpf(alpha) * k)
            s += t
            # terms vanish where a - alpha k is a pole of Gamma; require a run of small ones
            small = small + 1 if abs(t) < mp.mpf(10) ** (-dps + 5) * max(1, abs(s)) else 0
            if k > 20 and small > 8:
                break
            k += 1
        return float(s)


def mp_ml(alpha, beta, z, dps=50):
    """High-precision Mittag-Leffler series sum z^k / Gamma(alpha k + beta)."""
    mp = pytest.importorskip("mpmath")
    with mp.workdps(dps):
        zz = mp.mpc(z)
        s, small = mp.mpc(0), 0
        for k in range(200000):
            t = zz**k * mp.rgamma(mp.mpf(alpha) * k + mp.mpf(beta))
            s += t
            small = small + 1 if abs(t) < mp.mpf(10) ** (-dps + 10) else 0
            if k > 10 and small > 5:
                break
        return complex(s)


def dissipative(rng, N, scale=1.0):
    """Random strongly dissipative N x N complex matrix with spectral norm scale."""
    M = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
    B = -1.5 * np.eye(N) + 0.4 * (M - M.conj().T) + 0.3 * M
    return scale * B / np.linalg.norm(B, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
