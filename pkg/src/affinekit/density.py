"""Transition and invariant densities by Fourier inversion.

The time-t law started at x has density

    f_t(x, y) = (2 pi)^-d  int  e^{-i<y,u>} e^{phi(t,iu) + <x, psi(t,iu)>} du,

whenever the frequency-side envelope is integrable; mixed partial derivatives
in x_k and y_k insert factors psi_k(t, iu) and (-i u_k) under the integral.
Two evaluation routes are provided:

* ``tensor-fft``  -- the frequency lattice is matched reciprocally to the
  requested output grid (du = 2 pi / y-period) and extended by an integer
  fold factor per dimension until it covers the certified truncation radius;
  the folded sums then collapse to one FFT per field.
* ``direct-quadrature`` -- plain trapezoid sum per output point, kept as an
  independent cross-check and for isolated evaluation points.

Both routes exploit conjugate symmetry (the flow maps -u to the conjugate
exponent) so only half the lattice is actually solved, and both enforce the
same mass and imaginary-residue contracts on the result.
"""

from __future__ import annotations

import os
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import scipy.optimize
import scipy.special

from .errors import (
    DegeneracyError,
    IntegrabilityError,
    MassContractError,
    RegularityError,
    ResidueError,
    StabilityError,
    StructuralError,
)
from .model import AffineModel
from .riccati import SolverSettings, flow_to_stationarity, solve_flow_batch
from .spectral import TailBoundCert, kalman_rank

#: relative imaginary-residue contract for inverted fields
RESIDUE_TOL = 1e-6
#: unit-mass contract for plain densities on adequate grids
MASS_TOL = 1e-3
#: negative ringing below this triggers a warning (values stay unclipped)
RINGING_TOL = -1e-8
#: decay-exponent margin required above the integrability threshold
LAMBDA_MARGIN = 0.1
#: fold factor cap per dimension (memory guard)
MAX_FOLD = 4096
#: default flow tolerances for lattice sweeps; looser than the scalar-call
#: default because inversion errors are budgeted by the truncation, and the
#: boundary-layer step count scales like (rel_tol)^(-1/5)
INVERSION_SETTINGS = SolverSettings(rel_tol=1e-8, abs_tol=1e-12)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular uniform output grid: per-dimension (lower, upper, count)."""

    dims: tuple[tuple[float, float, int], ...]

    def __init__(self, dims):
        dims = tuple((float(lo), float(hi), int(cnt)) for lo, hi, cnt in dims)
        for lo, hi, cnt in dims:
            if cnt < 2:
                raise StructuralError("grid needs at least 2 points per dimension")
            if not lo < hi:
                raise StructuralError(f"grid bounds must satisfy lo < hi, got ({lo}, {hi})")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(cnt for _, _, cnt in self.dims)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (cnt - 1) for lo, hi, cnt in self.dims)

    def axis(self, k: int) -> np.ndarray:
        lo, hi, cnt = self.dims[k]
        return np.linspace(lo, hi, cnt)

    def axes(self) -> list[np.ndarray]:
        return [self.axis(k) for k in range(self.ndim)]

    def __eq__(self, other) -> bool:
        return isinstance(other, GridSpec) and self.dims == other.dims


@dataclass
class DensityField:
    """Gridded real field plus evaluation metadata."""

    grid: GridSpec
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def mass(self) -> float:
        total = self.values
        for ax in reversed(range(self.grid.ndim)):
            total = np.trapezoid(total, self.grid.axis(ax), axis=ax)
        return float(total)

    def marginal(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Integrate out all other axes; returns (points, values)."""
        vals = self.values
        for ax in reversed(range(self.grid.ndim)):
            if ax == axis:
                continue
            vals = np.trapezoid(vals, self.grid.axis(ax), axis=ax)
        return self.grid.axis(axis), vals

    def write_csv(self, target) -> None:
        """Long format: one row per grid point, coordinates then value."""
        nd = self.grid.ndim
        header = [f"y{k + 1}" for k in range(nd)] + ["value"]
        mesh = np.meshgrid(*self.grid.axes(), indexing="ij")
        coords = np.column_stack([m.ravel() for m in mesh] + [self.values.ravel()])
        own = isinstance(target, (str, bytes, os.PathLike))
        fh = open(target, "w") if own else target
        try:
            fh.write(",".join(header) + "\n")
            for row in coords:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        finally:
            if own:
                fh.close()


# ---------------------------------------------------------------------------
# truncation radii
# ---------------------------------------------------------------------------


def _sphere_area(k: int) -> float:
    # measure of S^{k-1}; the two-point measure for k = 1
    return 2.0 * math.pi ** (k / 2) / math.gamma(k / 2) if k >= 1 else 1.0


def choose_truncation(
    cert: TailBoundCert,
    eps_trunc: float,
    order_I: int = 0,
    order_J: int = 0,
) -> np.ndarray:
    """Frequency radii such that the certified envelope integrates to <= eps outside.

    The envelope ``C (1+||u_I||)^(-lambda) exp(-delta ||u_J||^2)`` is split
    into an I tail (polynomial, closed form) and a J tail (Gaussian,
    bracketed numerically); each side receives half the budget.  Requires
    ``lambda > m + order_I`` so the polynomial side is integrable at all.
    """
    if not cert.verified:
        raise RegularityError("tail certificate is not verified; no truncation radius can be certified")
    m, n = cert.m, cert.n
    d = m + n
    if np.isinf(eps_trunc):
        return np.full(d, 1.0)
    if eps_trunc <= 0:
        raise StructuralError("eps_trunc must be positive")
    C = max(cert.fitted_C, 1.0)
    norm = C / (2.0 * math.pi) ** d
    sides = (1 if m else 0) + (1 if n else 0)
    budget = eps_trunc / max(sides, 1)

    s = cert.lam - order_I
    if m >= 1 and s <= m:
        raise IntegrabilityError(
            f"need lambda > m + order_I for an integrable envelope; "
            f"lambda = {cert.lam:.6g}, m + order = {m + order_I}"
        )

    # full-space factors for the opposite block
    if n >= 1:
        delta = cert.delta
        if delta <= 0:
            raise RegularityError("Gaussian envelope coefficient vanishes; J tail not integrable")
        j_full = _sphere_area(n) * scipy.integrate.quad(
            lambda r: r ** (n - 1) * (1 + r) ** order_J * math.exp(-delta * r * r),
            0.0,
            np.inf,
        )[0] if n > 1 else 2.0 * scipy.integrate.quad(
            lambda r: (1 + r) ** order_J * math.exp(-delta * r * r), 0.0, np.inf
        )[0]
    else:
        j_full = 1.0
    if m >= 1:
        # int r^{m-1} (1+r)^{-s} dr over (0, inf) = B(m, s - m)
        i_full = _sphere_area(m) * math.gamma(m) * math.gamma(s - m) / math.gamma(s)
    else:
        i_full = 1.0

    radii = np.zeros(d)
    if m >= 1:
        # bound r^{m-1} <= (1+r)^{m-1}:  tail <= K (1+U)^{m-s} / (s-m)
        K = norm * j_full * _sphere_area(m)
        U_I = (budget * (s - m) / K) ** (1.0 / (m - s)) - 1.0
        radii[:m] = max(U_I, 1.0)
    if n >= 1:
        K = norm * i_full * (_sphere_area(n) if n > 1 else 2.0)

        def j_tail(U):
            val = scipy.integrate.quad(
                lambda r: r ** max(n - 1, 0) * (1 + r) ** order_J * math.exp(-cert.delta * r * r),
                U,
                np.inf,
            )[0]
            return K * val - budget

        hi = 10.0 / math.sqrt(cert.delta)
        while j_tail(hi) > 0:
            hi *= 2.0
            if hi > 1e8:
                raise IntegrabilityError("Gaussian tail budget unreachable")
        U_J = scipy.optimize.brentq(j_tail, 1e-6, hi)
        radii[m:] = max(U_J, 1.0)
    return radii


# ---------------------------------------------------------------------------
# frequency-side providers
# ---------------------------------------------------------------------------


def _transition_provider(model, t, x, q, qt, settings) -> Callable:
    xc = np.asarray(x, dtype=complex)
    settings = settings or INVERSION_SETTINGS

    def provider(U: np.ndarray) -> np.ndarray:
        psi, phi = solve_flow_batch(model, 1j * U, [t], settings)
        g = np.exp(phi[0] + psi[0] @ xc)
        for k, qk in enumerate(q):
            if qk:
                g = g * psi[0][:, k] ** qk
        for k, qk in enumerate(qt):
            if qk:
                g = g * (-1j * U[:, k]) ** qk
        return g

    return provider


def _invariant_provider(model, qt, settings, tol, t_cap, flags) -> Callable:
    settings = settings or INVERSION_SETTINGS

    def provider(U: np.ndarray) -> np.ndarray:
        phi_inf, converged, _ = flow_to_stationarity(model, 1j * U, settings, tol=tol, t_cap=t_cap)
        if not converged.all():
            flags["non_converged"] = int((~converged).sum())
            warnings.warn(
                f"invariant exponent not converged at {int((~converged).sum())} frequencies",
                RuntimeWarning,
            )
        g = np.exp(phi_inf)
        for k, qk in enumerate(qt):
            if qk:
                g = g * (-1j * U[:, k]) ** qk
        return g

    return provider


def _eval_symmetric(provider: Callable, nodes: np.ndarray, shape, centers) -> np.ndarray:
    """Evaluate g on a centered lattice using conjugate symmetry g(-u) = conj(g(u)).

    ``nodes`` is the flat (F, d) array of lattice frequencies, ``shape`` the
    per-dim point counts and ``centers`` the per-dim integer offsets of zero.
    """
    F, d = nodes.shape
    idx = np.indices(shape).reshape(d, -1).T
    even = np.array([s % 2 == 0 for s in shape])
    edge = (idx == 0) & even[None, :]
    edge_any = edge.any(axis=1)

    sign = np.zeros(F, dtype=np.int8)
    for k in range(d):
        undecided = sign == 0
        col = nodes[:, k]
        sign[undecided & (col > 1e-300)] = 1
        sign[undecided & (col < -1e-300)] = -1
    canonical = sign >= 0

    compute = edge_any | canonical
    g = np.empty(F, dtype=complex)
    g[compute] = provider(nodes[compute])
    rest = ~compute
    if rest.any():
        mirror = np.asarray(centers)[None, :] * 2 - idx[rest]
        flat = np.ravel_multi_index(mirror.T, shape)
        g[rest] = np.conj(g[flat])
    return g


# ---------------------------------------------------------------------------
# inversion backends
# ---------------------------------------------------------------------------


def _invert_fft(provider, grid: GridSpec, radii: np.ndarray) -> tuple[np.ndarray, dict]:
    d = grid.ndim
    counts = grid.counts
    dy = grid.spacings
    du = [2.0 * math.pi / (counts[k] * dy[k]) for k in range(d)]
    folds = []
    for k in range(d):
        need = int(math.ceil(2.0 * radii[k] / (counts[k] * du[k])))
        folds.append(min(max(need, 1), MAX_FOLD))
    M = [folds[k] * counts[k] for k in range(d)]
    centers = [Mk // 2 for Mk in M]

    axes_u = [(np.arange(M[k]) - centers[k]) * du[k] for k in range(d)]
    mesh = np.meshgrid(*axes_u, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    g = _eval_symmetric(provider, nodes, tuple(M), centers)

    y0 = np.array([grid.dims[k][0] for k in range(d)])
    g = g * np.exp(-1j * (nodes @ y0))
    G = g.reshape(tuple(M))
    for ax in range(d):
        s = G.shape
        G = G.reshape(s[:ax] + (folds[ax], counts[ax]) + s[ax + 1:]).sum(axis=ax)
    S = np.fft.fftn(G)
    for ax in range(d):
        # integer phase arithmetic keeps the twiddle exact for large l * c
        frac = (np.arange(counts[ax], dtype=np.int64) * int(centers[ax])) % counts[ax]
        tw = np.exp(2j * math.pi * frac / counts[ax])
        S = S * tw.reshape((1,) * ax + (-1,) + (1,) * (d - ax - 1))
    scalefac = np.prod(du) / (2.0 * math.pi) ** d
    field = S * scalefac
    info = {
        "method": "tensor-fft",
        "radii": [centers[k] * du[k] for k in range(d)],
        "fold": folds,
        "lattice": M,
    }
    return field, info


def _invert_quad(provider, grid: GridSpec, radii: np.ndarray) -> tuple[np.ndarray, dict]:
    d = grid.ndim
    axes_u, weights = [], []
    total = 1
    for k in range(d):
        lo, hi, _ = grid.dims[k]
        ymax = max(abs(lo), abs(hi), 1.0)
        step = min(2.0 * math.pi / (16.0 * ymax), radii[k] / 64.0)
        half = int(math.ceil(radii[k] / step))
        pts = np.linspace(-half * step, half * step, 2 * half + 1)
        w = np.full(pts.size, step)
        w[0] = w[-1] = 0.5 * step
        axes_u.append(pts)
        weights.append(w)
        total *= pts.size
    if total > 8_000_000:
        raise StructuralError(
            f"direct quadrature lattice of {total} nodes is too large; use tensor-fft"
        )
    mesh = np.meshgrid(*axes_u, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    wmesh = np.meshgrid(*weights, indexing="ij")
    w = np.prod([m.ravel() for m in wmesh], axis=0)

    shape = tuple(p.size for p in axes_u)
    centers = [p.size // 2 for p in axes_u]
    g = _eval_symmetric(provider, nodes, shape, centers) * w

    ymesh = np.meshgrid(*grid.axes(), indexing="ij")
    ypts = np.column_stack([m.ravel() for m in ymesh])
    out = np.empty(ypts.shape[0], dtype=complex)
    chunk = max(1, int(4_000_000 // nodes.shape[0]))
    for start in range(0, ypts.shape[0], chunk):
        block = ypts[start : start + chunk]
        out[start : start + chunk] = np.exp(-1j * (block @ nodes.T)) @ g
    field = out.reshape(grid.counts) / (2.0 * math.pi) ** d
    info = {"method": "direct-quadrature", "radii": list(map(float, radii)), "lattice": list(shape)}
    return field, info


# ---------------------------------------------------------------------------
# hypothesis gates and radii probing
# ---------------------------------------------------------------------------


def _p_max(model: AffineModel) -> int | None:
    diag = np.array([model.alpha[i][i, i] for i in range(model.m)])
    if diag.min() <= 0:
        raise DegeneracyError("alpha_{i,ii} must be positive on I for density inversion")
    bound = (model.b[: model.m] / diag).min() - model.m
    if bound <= 0:
        return None
    p = int(math.ceil(bound) - 1)
    return p if p >= 0 else None


def _lambda_margin_ok(model: AffineModel, order_I: int) -> bool:
    from .spectral import tail_params

    for k in range(11):
        theta = 2.0 ** (-k)
        _, _, lam, _ = tail_params(model, theta)
        if lam - (model.m + order_I) >= LAMBDA_MARGIN:
            return True
    return False


def _check_regime(model: AffineModel, x, q, qt):
    """Multi-index admissibility per the density regularity regimes."""
    m = model.m
    if m == 0:
        return
    p_max = _p_max(model)
    order_y = int(sum(qt[:m]))
    order_x = int(sum(q[:m]))
    interior = bool(np.all(np.asarray(x)[:m] > 0))
    if order_x == 0:
        ok = p_max is not None and order_y <= p_max
        regime = "y-derivatives on D"
    else:
        if not interior:
            raise RegularityError(
                "x_I derivatives of the density require x in the interior of D"
            )
        ok = p_max is not None and order_x + order_y <= p_max
        regime = "mixed x/y derivatives on the interior"
    if not ok:
        raise RegularityError(
            f"derivative orders (sum q_I = {order_x}, sum qtilde_I = {order_y}) exceed the "
            f"regularity index p_max = {p_max} ({regime})"
        )
    if not _lambda_margin_ok(model, order_x + order_y):
        raise IntegrabilityError(
            "decay exponent lambda(theta) stays within "
            f"{LAMBDA_MARGIN} of the integrability threshold m + order for every probed theta; "
            "refusing the inversion"
        )


def _probe_radii(model: AffineModel, provider: Callable, eps: float, d: int) -> np.ndarray:
    """Per-dimension truncation radius from the decay of |g| along each axis.

    Trial radii are probed in increasing blocks and each axis stops at its
    first below-threshold radius; radii far beyond the needed one are never
    solved (they can be arbitrarily stiff for strongly coupled models).
    """
    trial = np.geomspace(2.0, 1e7, 44)
    radii = np.zeros(d)
    block = 6
    for k in range(d):
        found = None
        for start in range(0, trial.size, block):
            chunk = trial[start : start + block]
            U = np.zeros((chunk.size, d))
            U[:, k] = chunk
            vals = np.abs(provider(U))
            below = np.nonzero(vals <= eps)[0]
            if below.size:
                found = chunk[below[0]]
                break
        if found is None:
            raise IntegrabilityError(
                f"|integrand| along axis {k} has not decayed below {eps} by radius 1e7"
            )
        radii[k] = found * 1.5
    return radii


def _finalize(field: np.ndarray, grid: GridSpec, info: dict, meta: dict, plain: bool) -> DensityField:
    values = field.real
    residue = float(np.abs(field.imag).max())
    peak = float(np.abs(values).max())
    if peak > 0 and residue > RESIDUE_TOL * peak:
        raise ResidueError(
            f"imaginary residue {residue:.3e} exceeds {RESIDUE_TOL:g} * max|f| = {RESIDUE_TOL * peak:.3e}"
        )
    out = DensityField(grid=grid, values=values, meta={**meta, **info, "residue": residue})
    out.meta["min_value"] = float(values.min())
    if plain:
        mass = out.mass()
        out.meta["mass"] = mass
        if abs(mass - 1.0) > MASS_TOL:
            raise MassContractError(
                f"density mass {mass:.6f} violates the unit-mass contract "
                f"(|mass - 1| <= {MASS_TOL}); enlarge the grid or the frequency box"
            )
        if values.min() < RINGING_TOL:
            warnings.warn(
                f"negative ringing down to {values.min():.3e}; values reported unclipped",
                RuntimeWarning,
            )
    return out


def _resolve_radii(model, provider, d, freq_radius, cert, eps_trunc, order_I, order_J):
    if freq_radius is not None:
        radii = np.broadcast_to(np.asarray(freq_radius, dtype=float), (d,)).copy()
        if (radii <= 0).any():
            raise StructuralError("freq_radius must be positive")
        return radii
    if cert is not None:
        return choose_truncation(cert, eps_trunc, order_I, order_J)
    return _probe_radii(model, provider, eps_trunc, d)


def invert_density(
    model: AffineModel,
    t: float,
    x,
    q,
    qtilde,
    grid: GridSpec,
    method: str = "tensor-fft",
    settings: SolverSettings | None = None,
    *,
    eps_trunc: float = 1e-8,
    freq_radius=None,
    cert: TailBoundCert | None = None,
) -> DensityField:
    """Transition density or mixed-derivative field on a rectangular grid.

    ``q`` and ``qtilde`` are d-long multi-indices of derivative orders in the
    starting point x and the terminal point y.  The requested orders must lie
    inside the regularity regime of the model (see ``_check_regime``); the
    I-block of the grid must be nonnegative.
    """
    model.require_valid()
    t = float(t)
    if t <= 0:
        raise StructuralError("transition density needs t > 0")
    x = np.asarray(x, dtype=float).reshape(model.d)
    if model.m and x[: model.m].min() < 0:
        raise StructuralError("x must lie in D")
    q = (
        np.zeros(model.d, dtype=int)
        if q is None or not np.size(q)
        else np.asarray(q, dtype=int).reshape(model.d)
    )
    qt = (
        np.zeros(model.d, dtype=int)
        if qtilde is None or not np.size(qtilde)
        else np.asarray(qtilde, dtype=int).reshape(model.d)
    )
    if (q < 0).any() or (qt < 0).any():
        raise StructuralError("derivative multi-indices must be nonnegative")
    if grid.ndim != model.d:
        raise StructuralError(f"grid must have {model.d} dimensions")
    for k in range(model.m):
        if grid.dims[k][0] < 0:
            raise StructuralError(f"grid dimension {k} lies in I and needs a lower bound >= 0")
    if model.n >= 1:
        _, rank = kalman_rank(model)
        if rank != model.n:
            raise RegularityError(
                f"Kalman block matrix rank {rank} < n = {model.n}; no Gaussian smoothing in J"
            )
    _check_regime(model, x, q, qt)

    provider = _transition_provider(model, t, x, q, qt, settings)
    order_I = int(sum(q[: model.m]) + sum(qt[: model.m]))
    order_J = int(sum(q[model.m:]) + sum(qt[model.m:]))
    radii = _resolve_radii(model, provider, model.d, freq_radius, cert, eps_trunc, order_I, order_J)

    if method == "tensor-fft":
        if model.d > 3:
            raise StructuralError("tensor-fft inversion is limited to d <= 3")
        field, info = _invert_fft(provider, grid, radii)
    elif method == "direct-quadrature":
        if model.d > 4:
            raise StructuralError("direct quadrature is limited to d <= 4")
        field, info = _invert_quad(provider, grid, radii)
    else:
        raise StructuralError(f"unknown method {method!r}")

    plain = not q.any() and not qt.any()
    meta = {
        "kind": "transition",
        "t": t,
        "x": x.tolist(),
        "q": q.tolist(),
        "qtilde": qt.tolist(),
    }
    return _finalize(field, grid, info, meta, plain)


def invariant_charfn(
    model: AffineModel,
    u,
    tol: float = 1e-12,
    t_cap: float | None = None,
    settings: SolverSettings | None = None,
) -> complex:
    """Characteristic function of the invariant law at a real frequency.

    The exponent is the time integral of the constant-coefficient functional
    along the flow, integrated until the exponent has collapsed.  Requires a
    strictly stable linear drift.
    """
    _require_stable(model)
    u = np.asarray(u, dtype=float).reshape(model.d)
    phi_inf, converged, _ = flow_to_stationarity(model, (1j * u)[None, :], settings, tol=tol, t_cap=t_cap)
    if not converged[0]:
        warnings.warn("invariant exponent not converged at the requested frequency", RuntimeWarning)
    return complex(np.exp(phi_inf[0]))


def _require_stable(model: AffineModel):
    model.require_valid()
    eigs = np.linalg.eigvals(model.beta)
    worst = float(eigs.real.max())
    if worst >= -1e-10:
        raise StabilityError(
            f"linear drift must have spectrum strictly in the left half-plane; "
            f"max Re(eig) = {worst:.3e}"
        )


def invariant_density(
    model: AffineModel,
    grid: GridSpec,
    qtilde=None,
    settings: SolverSettings | None = None,
    *,
    method: str = "tensor-fft",
    eps_trunc: float = 1e-8,
    freq_radius=None,
    cert: TailBoundCert | None = None,
    tol: float = 1e-12,
    t_cap: float | None = None,
) -> DensityField:
    """Invariant density (or its y-derivatives) by inversion of the stationary exponent."""
    _require_stable(model)
    qt = (
        np.asarray(qtilde, dtype=int).reshape(model.d)
        if qtilde is not None and np.size(qtilde)
        else np.zeros(model.d, dtype=int)
    )
    if (qt < 0).any():
        raise StructuralError("derivative multi-index must be nonnegative")
    if grid.ndim != model.d:
        raise StructuralError(f"grid must have {model.d} dimensions")
    for k in range(model.m):
        if grid.dims[k][0] < 0:
            raise StructuralError(f"grid dimension {k} lies in I and needs a lower bound >= 0")
    if model.n >= 1:
        _, rank = kalman_rank(model)
        if rank != model.n:
            raise RegularityError(
                f"Kalman block matrix rank {rank} < n = {model.n}; no Gaussian smoothing in J"
            )
    _check_regime(model, np.zeros(model.d), np.zeros(model.d, dtype=int), qt)

    flags: dict = {}
    provider = _invariant_provider(model, qt, settings, tol, t_cap, flags)
    order_I = int(sum(qt[: model.m]))
    order_J = int(sum(qt[model.m:]))
    radii = _resolve_radii(model, provider, model.d, freq_radius, cert, eps_trunc, order_I, order_J)

    if method == "tensor-fft":
        field, info = _invert_fft(provider, grid, radii)
    elif method == "direct-quadrature":
        field, info = _invert_quad(provider, grid, radii)
    else:
        raise StructuralError(f"unknown method {method!r}")

    meta = {"kind": "invariant", "qtilde": qt.tolist(), **flags}
    return _finalize(field, grid, info, meta, plain=not qt.any())


def tv_distance(f: DensityField, g: DensityField) -> float:
    """Total variation distance between two gridded densities: half the L1 gap."""
    if f.grid != g.grid:
        raise StructuralError("density fields live on different grids")
    for fld in (f, g):
        q = fld.meta.get("q", None)
        qt = fld.meta.get("qtilde", None)
        if (q is not None and any(q)) or (qt is not None and any(qt)):
            raise StructuralError("total variation needs plain densities (q = qtilde = 0)")
    diff = np.abs(f.values - g.values)
    for ax in reversed(range(f.grid.ndim)):
        diff = np.trapezoid(diff, f.grid.axis(ax), axis=ax)
    return float(np.clip(0.5 * diff, 0.0, 1.0))
