"""Generalized Riccati flow of the characteristic-exponent pair (phi, psi).

For an initial frequency u in the closure of C_{<=0}^m x iR^n the exponent
solves

    d/dt phi    = F(psi),                 phi(0)   = 0,
    d/dt psi_I  = R(psi),                 psi_I(0) = u_I,
    psi_J(t)    = exp(beta_JJ^T t) u_J,

with

    F(u)   = <u, a u> + <b, u> + sum_k w_k (e^{<u,xi_k>} - 1 - <u_J, xi_kJ> 1{|xi_k|<=1})
    R_i(u) = <u, alpha_i u> + (beta^T u)_i + sum_k w_k (e^{<u,xi_k>} - 1 - <u, xi_k>)

where all inner products are bilinear (no conjugation) and the jump sums run
over the atoms of nu and mu_i respectively.  Only psi_I and phi are
integrated; psi_J is evaluated in closed form at every solver stage.

The integrator is an embedded Dormand-Prince 4(5) pair stepping a whole batch
of initial frequencies at once.  Error control is a per-sample scaled max
norm reduced by max over the batch: a boundary-layer sample (large ||u||)
cannot be out-voted by thousands of smooth ones, which matters for the
frequency-lattice sweeps feeding the Fourier inversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    FlowDivergenceError,
    FlowDomainError,
    StructuralError,
)
from .model import AffineModel

#: positive excursions of Re(psi_I) up to CLAMP_TOL * max(1, ||u0||) are
#: clamped to zero; anything larger aborts the solve.
CLAMP_TOL = 1e-12
#: tolerance for initial data membership in the closure of the domain
DOMAIN_TOL = 1e-9

# Dormand-Prince 4(5) tableau (FSAL)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-minus-fourth-order weights, k7 = f(t+h, y5) included
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass(frozen=True)
class SolverSettings:
    """Adaptive step control for the flow integrator."""

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = np.inf
    max_steps: int = 500_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise StructuralError("solver tolerances must be positive")


DEFAULT_SETTINGS = SolverSettings()


class _MatrixExponential:
    """Evaluator for exp(A t) with an eigen fast path and an expm fallback."""

    def __init__(self, A: np.ndarray):
        self.A = np.asarray(A, dtype=float)
        self._eig = None
        if self.A.size:
            w, V = np.linalg.eig(self.A)
            try:
                Vinv = np.linalg.inv(V)
                recon = (V * w) @ Vinv
                if np.linalg.norm(recon - self.A) <= 1e-13 * (1.0 + np.linalg.norm(self.A)):
                    self._eig = (w, V, Vinv)
            except np.linalg.LinAlgError:
                pass

    def __call__(self, t: float) -> np.ndarray:
        if self.A.size == 0:
            return self.A.reshape(0, 0)
        if self._eig is not None:
            w, V, Vinv = self._eig
            out = (V * np.exp(w * t)) @ Vinv
            return out.real if np.isrealobj(self.A) else out
        return scipy.linalg.expm(self.A * t)


def _check_domain(u: np.ndarray, m: int, what: str = "u"):
    u = np.atleast_2d(u)
    if m and u[:, :m].real.max(initial=-np.inf) > DOMAIN_TOL * (1.0 + np.abs(u).max()):
        raise StructuralError(f"Re({what}_I) must be <= 0")
    if u.shape[1] > m and np.abs(u[:, m:].real).max(initial=0.0) > DOMAIN_TOL * (1.0 + np.abs(u).max()):
        raise StructuralError(f"Re({what}_J) must vanish")


def _fr_values(model: AffineModel, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (F, R) at a batch of exponent values psi with shape (k, d)."""
    m = model.m
    F = np.einsum("kp,pq,kq->k", psi, model.a, psi) + psi @ model.b.astype(complex)
    if not model.nu.is_zero:
        phases = psi @ model.nu.points.T                     # (k, atoms)
        small = np.linalg.norm(model.nu.points, axis=1) <= 1.0
        comp = psi[:, m:] @ model.nu.points[:, m:].T
        F = F + (np.exp(phases) - 1.0 - np.where(small, comp, 0.0)) @ model.nu.masses
    R = np.empty(psi.shape[:1] + (m,), dtype=complex)
    for i in range(m):
        Ri = np.einsum("kp,pq,kq->k", psi, model.alpha[i], psi) + psi @ model.beta[:, i].astype(complex)
        mi = model.mu[i]
        if not mi.is_zero:
            phases = psi @ mi.points.T
            Ri = Ri + (np.exp(phases) - 1.0 - phases) @ mi.masses
        R[:, i] = Ri
    return F, R


def vector_field(model: AffineModel, u: np.ndarray) -> tuple[complex, np.ndarray]:
    """Evaluate (F(u), R(u)) at one frequency in the closed domain.

    Returns
    -------
    F : complex
    R : complex array, shape (m,)
    """
    model.require_valid()
    u = np.asarray(u, dtype=complex).reshape(model.d)
    _check_domain(u, model.m)
    F, R = _fr_values(model, u[None, :])
    return complex(F[0]), R[0]


def psi_J_closed(model: AffineModel, t: float, uJ: np.ndarray) -> np.ndarray:
    """Closed-form J block: exp(beta_JJ^T t) applied to uJ."""
    if model.n < 1:
        raise StructuralError("model has no J block")
    uJ = np.asarray(uJ, dtype=complex).reshape(model.n)
    return scipy.linalg.expm(model.beta_JJ.T * float(t)) @ uJ


class _FlowSystem:
    """Batched RHS for the augmented state [psi_I | phi], shape (k, m+1).

    Model parameters are promoted to complex once at construction; the per
    stage work is a handful of BLAS products on the (k, d) exponent block.
    """

    def __init__(self, model: AffineModel, u0: np.ndarray):
        self.model = model
        self.m = model.m
        self.n = model.n
        self.d = model.d
        self.u0J = u0[:, model.m:]                      # (k, n)
        self.expJT = _MatrixExponential(model.beta_JJ.T)
        self._a = model.a.astype(complex)
        self._alpha = [model.alpha[i].astype(complex) for i in range(model.m)]
        self._b = model.b.astype(complex)
        self._beta_I = model.beta[:, : model.m].astype(complex)
        nu = model.nu
        self._nu = None
        if not nu.is_zero:
            small = np.linalg.norm(nu.points, axis=1) <= 1.0
            ptsJ = nu.points[:, model.m:].copy()
            ptsJ[~small] = 0.0
            self._nu = (nu.points.T.astype(complex), nu.masses, ptsJ.T.astype(complex))
        self._mu = []
        for mi in model.mu:
            self._mu.append(None if mi.is_zero else (mi.points.T.astype(complex), mi.masses))

    def psi_full(self, t: float, Y: np.ndarray) -> np.ndarray:
        k = Y.shape[0]
        psi = np.empty((k, self.d), dtype=complex)
        psi[:, : self.m] = Y[:, : self.m]
        if self.n:
            psi[:, self.m:] = self.u0J @ self.expJT(t).T
        return psi

    def __call__(self, t: float, Y: np.ndarray) -> np.ndarray:
        psi = self.psi_full(t, Y)
        out = np.empty_like(Y)
        for i in range(self.m):
            Ri = ((psi @ self._alpha[i]) * psi).sum(axis=1) + psi @ self._beta_I[:, i]
            mu = self._mu[i]
            if mu is not None:
                pts, masses = mu
                phases = psi @ pts
                Ri = Ri + (np.exp(phases) - 1.0 - phases) @ masses
            out[:, i] = Ri
        F = ((psi @ self._a) * psi).sum(axis=1) + psi @ self._b
        if self._nu is not None:
            pts, masses, ptsJ = self._nu
            F = F + (np.exp(psi @ pts) - 1.0 - psi[:, self.m:] @ ptsJ) @ masses
        out[:, self.m] = F
        return out


def _clamp_factory(m: int, scale: np.ndarray):
    """Post-step projection: zero out tiny positive Re(psi_I), abort on large ones."""
    limit = CLAMP_TOL * np.maximum(1.0, scale)[:, None]

    def clamp(t: float, Y: np.ndarray) -> np.ndarray:
        if m == 0:
            return Y
        re = Y[:, :m].real
        if (re > 0).any():
            worst = re.max()
            if (re > limit).any():
                raise FlowDomainError(
                    f"Re(psi_I) reached {worst:.3e} at t={t:.6g}, beyond the clamp tolerance"
                )
            Y = Y.copy()
            Y[:, :m] = np.where(re > 0, 1j * Y[:, :m].imag, Y[:, :m])
        return Y

    return clamp


def _initial_step(fun, t0, y0, f0, rtol, atol, t_span):
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale) if y0.size else 0.0
    d1 = np.max(np.abs(f0) / scale) if y0.size else 0.0
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    y1 = y0 + h0 * f0
    f1 = fun(t0 + h0, y1)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_span)


def _integrate(
    fun: Callable,
    t0: float,
    t1: float,
    y0: np.ndarray,
    settings: SolverSettings,
    t_eval: Sequence[float],
    project: Callable | None = None,
    stop_when: Callable | None = None,
    record: bool = False,
):
    """Adaptive Dormand-Prince 4(5) over a complex batch state.

    The step size is capped so the solver lands exactly on every requested
    evaluation time.  Returns ``(evals, t_final, y_final, path)`` where
    ``evals`` maps each reached evaluation time to the state there and
    ``path`` is the accepted-step history (t, y, f) when ``record`` is set.
    """
    rtol, atol = settings.rel_tol, settings.abs_tol
    t_eval = sorted(set(float(t) for t in t_eval))
    if t_eval and (t_eval[0] < t0 - 1e-14 or t_eval[-1] > t1 + 1e-12 * max(1.0, abs(t1))):
        raise StructuralError("t_eval must lie within the integration span")

    y = np.array(y0, dtype=complex)
    t = float(t0)
    evals: dict[float, np.ndarray] = {}
    path_t, path_y, path_f = [], [], []

    f = fun(t, y)
    if record:
        path_t.append(t), path_y.append(y.copy()), path_f.append(f.copy())
    if t_eval and abs(t_eval[0] - t0) <= 1e-14 * max(1.0, abs(t0)):
        evals[t_eval[0]] = y.copy()
    if t1 <= t0:
        return evals, t, y, (path_t, path_y, path_f)

    targets = [te for te in t_eval if te > t0 + 1e-14]
    if not targets or targets[-1] < t1 - 1e-14:
        targets.append(t1)
    ti = 0

    h = _initial_step(fun, t, y, f, rtol, atol, t1 - t0)
    h = min(h, settings.max_step)
    n_steps = 0
    K = np.empty((7,) + y.shape, dtype=complex)

    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        if n_steps >= settings.max_steps:
            raise FlowDivergenceError(f"step budget exhausted at t={t:.6g}", t_last=t)
        target = targets[ti]
        h = min(h, settings.max_step, target - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise FlowDivergenceError(f"step size underflow at t={t:.6g}", t_last=t)

        K[0] = f
        for s in range(1, 6):
            ys = y + h * np.tensordot(_A[s], K[:s], axes=(0, 0))
            K[s] = fun(t + _C[s] * h, ys)
        y_new = y + h * np.tensordot(_B, K[:6], axes=(0, 0))
        t_new = t + h
        K[6] = fun(t_new, y_new)
        err = h * np.tensordot(_E, K, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratio = np.max(np.abs(err) / scale)
        if not np.isfinite(ratio):
            ratio = np.inf

        n_steps += 1
        if ratio <= 1.0:
            snapped = abs(t_new - target) <= 1e-14 * max(1.0, abs(target))
            if snapped:
                t_new = target
            modified = False
            if project is not None:
                y_proj = project(t_new, y_new)
                if y_proj is not y_new:
                    y_new, modified = y_proj, True
            t, y = t_new, y_new
            f = fun(t, y) if modified else K[6]
            if record:
                path_t.append(t), path_y.append(y.copy()), path_f.append(f.copy())
            if snapped:
                if target in t_eval:
                    evals[target] = y.copy()
                ti += 1
                if ti >= len(targets):
                    break
            if stop_when is not None and stop_when(t, y):
                break
            factor = 5.0 if ratio == 0.0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
            h = h * factor
        else:
            h = h * max(0.2, 0.9 * ratio ** -0.2)

    return evals, t, y, (path_t, path_y, path_f)


def solve_flow_batch(
    model: AffineModel,
    u0: np.ndarray,
    t_eval: Sequence[float],
    settings: SolverSettings | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the flow for a batch of initial frequencies at once.

    Parameters
    ----------
    u0 : complex array, shape (k, d)
        Initial frequencies in the closure of the domain.
    t_eval : increasing times, each >= 0

    Returns
    -------
    psi : complex array, shape (len(t_eval), k, d)
    phi : complex array, shape (len(t_eval), k)
    """
    settings = settings or DEFAULT_SETTINGS
    model.require_valid()
    u0 = np.atleast_2d(np.asarray(u0, dtype=complex))
    if u0.shape[1] != model.d:
        raise StructuralError(f"u0 must have d = {model.d} columns")
    _check_domain(u0, model.m, "u0")
    t_eval = [float(t) for t in t_eval]
    if any(t < 0 for t in t_eval):
        raise StructuralError("t_eval must be nonnegative")

    system = _FlowSystem(model, u0)
    Y0 = np.concatenate([u0[:, : model.m], np.zeros((u0.shape[0], 1), dtype=complex)], axis=1)
    t_end = max(t_eval) if t_eval else 0.0
    scale = np.abs(u0).max(axis=1) if u0.size else np.ones(u0.shape[0])
    evals, _, _, _ = _integrate(
        system,
        0.0,
        t_end,
        Y0,
        settings,
        t_eval=t_eval,
        project=_clamp_factory(model.m, scale),
    )
    psi = np.empty((len(t_eval), u0.shape[0], model.d), dtype=complex)
    phi = np.empty((len(t_eval), u0.shape[0]), dtype=complex)
    for j, te in enumerate(t_eval):
        Y = evals[te]
        psi[j] = system.psi_full(te, Y)
        phi[j] = Y[:, model.m]
    return psi, phi


@dataclass(frozen=True)
class RiccatiPath:
    """Time-indexed solution of the flow for one initial frequency."""

    u0: np.ndarray
    times: np.ndarray
    psi: np.ndarray            # (T, d)
    phi: np.ndarray            # (T,)
    dpsi: np.ndarray           # (T, d) time derivatives at the nodes
    dphi: np.ndarray

    def at(self, t: float) -> tuple[np.ndarray, complex]:
        """Cubic Hermite interpolation between accepted solver steps."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12 * max(1.0, times[-1]):
            raise StructuralError(f"t={t} outside the solved span [{times[0]}, {times[-1]}]")
        if len(times) == 1:
            return self.psi[0].copy(), complex(self.phi[0])
        j = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        t0, t1 = times[j], times[j + 1]
        h = t1 - t0
        if h <= 0:
            return self.psi[j].copy(), complex(self.phi[j])
        s = (t - t0) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        psi = (
            h00 * self.psi[j] + h * h10 * self.dpsi[j] + h01 * self.psi[j + 1] + h * h11 * self.dpsi[j + 1]
        )
        phi = (
            h00 * self.phi[j] + h * h10 * self.dphi[j] + h01 * self.phi[j + 1] + h * h11 * self.dphi[j + 1]
        )
        return psi, complex(phi)

    def write_csv(self, target) -> None:
        """Columns: t, Re psi_1..d, Im psi_1..d, Re phi, Im phi."""
        d = self.psi.shape[1]
        header = (
            ["t"]
            + [f"re_psi_{k + 1}" for k in range(d)]
            + [f"im_psi_{k + 1}" for k in range(d)]
            + ["re_phi", "im_phi"]
        )
        rows = np.column_stack(
            [self.times, self.psi.real, self.psi.imag, self.phi.real, self.phi.imag]
        )
        own = isinstance(target, (str, bytes, os.PathLike))
        fh = open(target, "w") if own else target
        try:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        finally:
            if own:
                fh.close()


def solve_flow(
    model: AffineModel,
    u0: np.ndarray,
    t_end: float,
    settings: SolverSettings | None = None,
    t_eval: Sequence[float] | None = None,
) -> RiccatiPath:
    """Solve the flow for a single initial frequency, keeping the step history.

    The returned path holds every accepted step (plus any requested ``t_eval``
    points) together with nodal derivatives, so intermediate values can be
    interpolated to the solver's own accuracy.
    """
    settings = settings or DEFAULT_SETTINGS
    model.require_valid()
    u0 = np.asarray(u0, dtype=complex).reshape(model.d)
    _check_domain(u0, model.m, "u0")
    t_end = float(t_end)
    if t_end < 0:
        raise StructuralError("t_end must be nonnegative")

    system = _FlowSystem(model, u0[None, :])
    Y0 = np.concatenate([u0[: model.m], [0.0 + 0.0j]])[None, :]
    eval_pts = sorted(set([t_end] + [float(t) for t in (t_eval or [])]))
    scale = np.array([max(1.0, np.abs(u0).max())]) if u0.size else np.ones(1)
    _, _, _, (ts, ys, fs) = _integrate(
        system,
        0.0,
        t_end,
        Y0,
        settings,
        t_eval=eval_pts,
        project=_clamp_factory(model.m, scale),
        record=True,
    )
    times = np.asarray(ts)
    Y = np.concatenate(ys, axis=0)
    Fv = np.concatenate(fs, axis=0)
    psi = np.empty((len(times), model.d), dtype=complex)
    dpsi = np.zeros_like(psi)
    for j, tj in enumerate(times):
        psi[j] = system.psi_full(tj, Y[j : j + 1])[0]
        dpsi[j, : model.m] = Fv[j, : model.m]
        if model.n:
            # d/dt psi_J = beta_JJ^T psi_J
            dpsi[j, model.m:] = model.beta_JJ.T @ psi[j, model.m:]
    return RiccatiPath(
        u0=u0,
        times=times,
        psi=psi,
        phi=Y[:, model.m],
        dpsi=dpsi,
        dphi=Fv[:, model.m],
    )


def flow_to_stationarity(
    model: AffineModel,
    u0: np.ndarray,
    settings: SolverSettings | None = None,
    tol: float = 1e-12,
    t_cap: float | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Integrate phi until the exponent has collapsed, for a batch of frequencies.

    Stops once ``|F(psi)| < tol * (1 + |phi|)`` and ``||psi|| < tol`` hold for
    every sample, or at ``t_cap``.  Requires all eigenvalues of beta strictly
    in the left half-plane (checked by the caller).

    Returns
    -------
    phi_inf : complex array (k,)
    converged : bool array (k,)
    t_stop : float
    """
    settings = settings or DEFAULT_SETTINGS
    model.require_valid()
    u0 = np.atleast_2d(np.asarray(u0, dtype=complex))
    _check_domain(u0, model.m, "u0")
    rates = -np.real(np.linalg.eigvals(model.beta))
    slowest = rates.min()
    if t_cap is None:
        t_cap = 50.0 / max(slowest, 1e-12)
    system = _FlowSystem(model, u0)
    Y0 = np.concatenate([u0[:, : model.m], np.zeros((u0.shape[0], 1), dtype=complex)], axis=1)

    def converged_mask(t, Y):
        psi = system.psi_full(t, Y)
        F, _ = _fr_values(model, psi)
        ok_f = np.abs(F) < tol * (1.0 + np.abs(Y[:, model.m]))
        ok_p = np.abs(psi).max(axis=1) < tol
        return ok_f & ok_p

    def stop_when(t, Y):
        return bool(converged_mask(t, Y).all())

    scale = np.abs(u0).max(axis=1) if u0.size else np.ones(u0.shape[0])
    _, t_stop, Y, _ = _integrate(
        system,
        0.0,
        t_cap,
        Y0,
        settings,
        t_eval=[t_cap],
        project=_clamp_factory(model.m, scale),
        stop_when=stop_when,
    )
    return Y[:, model.m], converged_mask(t_stop, Y), t_stop


def h_fields(
    model: AffineModel,
    i: int,
    x: np.ndarray,
    y: np.ndarray,
    u: np.ndarray,
) -> tuple[float, float]:
    """Scaled real/imaginary vector fields of coordinate i at (x, y; u).

    ``x`` must follow the (x_I <= 0, x_J = 0) pattern of the scaled real
    part; ``u`` only enters through its norm.  Jump integrals are exact
    atomic sums.
    """
    model.require_valid()
    if not 0 <= i < model.m:
        raise StructuralError(f"index i={i} outside I")
    x = np.asarray(x, dtype=float).reshape(model.d)
    y = np.asarray(y, dtype=float).reshape(model.d)
    u = np.asarray(u, dtype=float).reshape(model.d)
    r = np.linalg.norm(u)
    if r == 0.0:
        raise StructuralError("u must be nonzero")
    if model.m and x[: model.m].max() > DOMAIN_TOL:
        raise StructuralError("x_I must be <= 0")
    if model.n and np.abs(x[model.m:]).max() > DOMAIN_TOL:
        raise StructuralError("x_J must vanish")

    ai = model.alpha[i]
    lin = model.beta[:, i]
    h1 = x @ ai @ x - y @ ai @ y + (lin @ x) / r
    h2 = 2.0 * (x @ ai @ y) + (lin @ y) / r
    mi = model.mu[i]
    if not mi.is_zero:
        px = r * (mi.points @ x)
        py = r * (mi.points @ y)
        h1 += float(mi.masses @ (np.exp(px) * np.cos(py) - 1.0 - px)) / r**2
        h2 += float(mi.masses @ (np.exp(px) * np.sin(py) - py)) / r**2
    return float(h1), float(h2)


def scaled_FG(
    model: AffineModel,
    t: float,
    u: np.ndarray,
    settings: SolverSettings | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Norm-scaled real and imaginary parts of psi at slowed time t / ||u||."""
    u = np.asarray(u, dtype=float).reshape(model.d)
    r = np.linalg.norm(u)
    if r == 0.0:
        raise StructuralError("u must be nonzero")
    if t < 0:
        raise StructuralError("t must be nonnegative")
    psi, _ = solve_flow_batch(model, (1j * u)[None, :], [t / r], settings)
    return psi[0, 0].real / r, psi[0, 0].imag / r
