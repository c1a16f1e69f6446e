"""Shared test models and closed-form oracles."""

import numpy as np
import pytest

from affinekit.model import AffineModel, JumpMeasure


def make_cir(b=2.0, alpha=1.0, beta=-1.0, mu_atoms=None):
    """Square-root diffusion on R_+ (m=1, n=0)."""
    mu = JumpMeasure.from_atoms(mu_atoms, dim=1) if mu_atoms else JumpMeasure.zero(1)
    return AffineModel(
        m=1, n=0,
        a=[[0.0]],
        alpha=[[[alpha]]],
        b=[b],
        beta=[[beta]],
        nu=JumpMeasure.zero(1),
        mu=(mu,),
    )


def make_ou(a=0.5, beta=-1.0, b=0.0, nu_atoms=None):
    """Gaussian mean-reverting model on R (m=0, n=1)."""
    nu = JumpMeasure.from_atoms(nu_atoms, dim=1) if nu_atoms else JumpMeasure.zero(1)
    return AffineModel(
        m=0, n=1,
        a=[[a]],
        alpha=np.zeros((0, 1, 1)),
        b=[b],
        beta=[[beta]],
        nu=nu,
        mu=(),
    )


def make_mixed():
    """Two-dimensional model (m=n=1) with one atom in each jump measure."""
    return AffineModel(
        m=1, n=1,
        a=[[0.0, 0.0], [0.0, 0.5]],
        alpha=[[[1.0, 0.1], [0.1, 0.3]]],
        b=[2.0, 0.5],
        beta=[[-1.0, 0.0], [0.2, -0.8]],
        nu=JumpMeasure.from_atoms([(0.3, [0.5, -0.4])]),
        mu=(JumpMeasure.from_atoms([(0.4, [0.3, 0.2])]),),
    )


def make_mixed_cert():
    """Mixed model variant for frequency sweeps to 1e4.

    Jump atoms sit on the I axis and the quadratic loading has no JJ block,
    so the flow stays non-stiff at extreme ||u_J|| (an explicit pair is
    stability-limited when alpha_JJ couples psi_I to u_J^2).
    """
    return AffineModel(
        m=1, n=1,
        a=[[0.0, 0.0], [0.0, 0.5]],
        alpha=[[[1.0, 0.0], [0.0, 0.0]]],
        b=[2.0, 0.5],
        beta=[[-1.0, 0.0], [0.2, -0.8]],
        nu=JumpMeasure.from_atoms([(0.3, [0.5, 0.0])]),
        mu=(JumpMeasure.from_atoms([(0.4, [0.3, 0.0])]),),
    )


@pytest.fixture(scope="session")
def cir():
    return make_cir()


@pytest.fixture(scope="session")
def cir3():
    return make_cir(b=3.0)


@pytest.fixture(scope="session")
def ou():
    return make_ou()


@pytest.fixture(scope="session")
def mixed():
    return make_mixed()


@pytest.fixture(scope="session")
def mixed_cert():
    return make_mixed_cert()


# -- closed forms -----------------------------------------------------------


def cir_psi(t, u, alpha=1.0, beta=-1.0):
    """Scalar quadratic-flow solution psi' = alpha psi^2 + beta psi, psi(0) = u."""
    u = np.asarray(u, dtype=complex)
    e = np.exp(beta * t)
    return beta * u * e / (beta + alpha * u * (1.0 - e))


def cir_phi(t, u, b=2.0, alpha=1.0, beta=-1.0):
    """phi(t) = b * int psi = -(b/alpha) log(1 + (alpha u / beta)(1 - e^{beta t}))."""
    u = np.asarray(u, dtype=complex)
    e = np.exp(beta * t)
    return -(b / alpha) * np.log(1.0 + (alpha * u / beta) * (1.0 - e))


def ou_phi(t, u, a=0.5, beta=-1.0):
    """phi(t, iu) for the Gaussian model: -(a u^2 / (2|beta|)) (1 - e^{2 beta t})."""
    u = np.asarray(u, dtype=float)
    return -(a * u * u / (2.0 * abs(beta))) * (1.0 - np.exp(2.0 * beta * t))


def ou_var(t, a=0.5, beta=-1.0):
    return (a / abs(beta)) * (1.0 - np.exp(2.0 * beta * t))


def gaussian_pdf(y, mean, var):
    return np.exp(-((y - mean) ** 2) / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def gamma_pdf(y, shape, rate=1.0):
    from scipy.special import gamma as gamma_fn

    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = rate**shape * y[pos] ** (shape - 1) * np.exp(-rate * y[pos]) / gamma_fn(shape)
    return out


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        status = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
        name = report.nodeid.split("::")[-1]
        print(f"\n[acceptance] {status} {name} ({report.duration:.1f}s)")
