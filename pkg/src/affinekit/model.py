"""Admissible parameter sets and finite-activity jump measures.

The state space is D = R_+^m x R^n.  Coordinates split into the index sets
I = {0, ..., m-1} (nonnegative components) and J = {m, ..., m+n-1}
(unconstrained components).  A model is the tuple (a, alpha, b, beta, nu, mu):

* ``a``      -- d x d PSD diffusion matrix, nonzero only on the JJ block;
* ``alpha``  -- m PSD matrices; alpha_i may be nonzero only on rows/columns
  {i} union J (the state-proportional diffusion loading of coordinate i);
* ``b``      -- constant drift, b_I >= 0;
* ``beta``   -- linear drift matrix with beta_IJ = 0 and inward-pointing
  off-diagonal I-block after jump compensation;
* ``nu``     -- state-independent jump measure on D \\ {0};
* ``mu``     -- m state-proportional jump measures on D \\ {0}.

Jump measures are restricted to the finite-activity atomic form (zero or a
finite list of weighted atoms), which keeps every jump integral in the flow
equations an exact finite sum and makes the simulator a compound-Poisson
scheme.  Extension to infinite-activity measures would need a quadrature
layer on top of the same interfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import StructuralError

#: absolute tolerance for equality (zero-block) constraints
ZERO_TOL = 1e-12
#: relative smallest-eigenvalue tolerance for PSD checks
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class JumpMeasure:
    """Finite-activity jump measure: zero or finitely many weighted atoms.

    Parameters
    ----------
    masses : array, shape (k,)
        Strictly positive atom masses.  ``k = 0`` is the zero measure.
    points : array, shape (k, dim)
        Atom locations in D \\ {0}.
    """

    masses: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(len(masses), -1) if len(masses) else points.reshape(0, 1)
        if masses.ndim != 1 or points.ndim != 2 or points.shape[0] != masses.shape[0]:
            raise StructuralError(
                f"jump measure needs masses (k,) and points (k, dim); "
                f"got {masses.shape} and {points.shape}"
            )
        masses.setflags(write=False)
        points.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "points", points)

    @classmethod
    def zero(cls, dim: int) -> "JumpMeasure":
        return cls(np.zeros(0), np.zeros((0, dim)))

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, Sequence[float]]], dim: int | None = None) -> "JumpMeasure":
        if not atoms:
            if dim is None:
                raise StructuralError("empty atom list needs an explicit dim")
            return cls.zero(dim)
        masses = np.array([float(w) for w, _ in atoms])
        points = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for _, p in atoms])
        return cls(masses, points)

    @property
    def is_zero(self) -> bool:
        return self.masses.size == 0

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def moment(self, region: str = "all") -> np.ndarray:
        """Exact first moment integral over atoms: ``all``, ``small`` (||xi|| <= 1) or ``large``."""
        if self.is_zero:
            return np.zeros(self.dim)
        norms = np.linalg.norm(self.points, axis=1)
        if region == "all":
            sel = slice(None)
        elif region == "small":
            sel = norms <= 1.0
        elif region == "large":
            sel = norms > 1.0
        else:
            raise StructuralError(f"unknown region {region!r}")
        return self.masses[sel] @ self.points[sel]

    def second_moment_below(self, theta: float) -> float:
        """Integral of ||xi||^2 over atoms with ||xi|| <= theta."""
        if self.is_zero:
            return 0.0
        norms = np.linalg.norm(self.points, axis=1)
        sel = norms <= theta
        return float(self.masses[sel] @ norms[sel] ** 2)

    def coord_moment_above(self, theta: float) -> np.ndarray:
        """Coordinatewise first moment over atoms with ||xi|| > theta."""
        if self.is_zero:
            return np.zeros(self.dim)
        norms = np.linalg.norm(self.points, axis=1)
        sel = norms > theta
        return self.masses[sel] @ self.points[sel]


def levy_f_term(nu: JumpMeasure, u: np.ndarray, m: int) -> complex:
    """Jump integral of the constant-coefficient functional.

    Sum over atoms of ``w * (exp(<u, xi>) - 1 - <u_J, xi_J> 1{||xi|| <= 1})``,
    the compensation acting on the J coordinates of small jumps only.
    Exact for atomic measures.  Caller guarantees Re(u_I) <= 0.
    """
    if nu.is_zero:
        return 0.0 + 0.0j
    u = np.asarray(u, dtype=complex)
    phases = nu.points @ u
    comp = np.where(
        np.linalg.norm(nu.points, axis=1) <= 1.0,
        nu.points[:, m:] @ u[m:],
        0.0,
    )
    return complex(nu.masses @ (np.exp(phases) - 1.0 - comp))


def levy_r_term(mu_i: JumpMeasure, u: np.ndarray) -> complex:
    """Jump integral of a state-proportional functional: full compensation.

    Sum over atoms of ``w * (exp(<u, xi>) - 1 - <u, xi>)``.
    """
    if mu_i.is_zero:
        return 0.0 + 0.0j
    u = np.asarray(u, dtype=complex)
    phases = mu_i.points @ u
    return complex(mu_i.masses @ (np.exp(phases) - 1.0 - phases))


@dataclass(frozen=True, eq=False)
class AffineModel:
    """Parameter set of an affine jump-diffusion on D = R_+^m x R^n."""

    m: int
    n: int
    a: np.ndarray
    alpha: np.ndarray          # shape (m, d, d)
    b: np.ndarray
    beta: np.ndarray
    nu: JumpMeasure
    mu: tuple[JumpMeasure, ...]

    def __post_init__(self):
        m, n = int(self.m), int(self.n)
        d = m + n
        if m < 0 or n < 0 or d < 1:
            raise StructuralError(f"need m, n >= 0 with m + n >= 1; got m={m}, n={n}")
        a = np.asarray(self.a, dtype=float).reshape(d, d) if np.size(self.a) == d * d else np.asarray(self.a, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.size == 0:
            alpha = alpha.reshape(m, d, d) if m == 0 else alpha
        b = np.asarray(self.b, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if a.shape != (d, d):
            raise StructuralError(f"a must be {d}x{d}, got {a.shape}")
        if alpha.shape != (m, d, d):
            raise StructuralError(f"alpha must have shape ({m}, {d}, {d}), got {alpha.shape}")
        if b.shape != (d,):
            raise StructuralError(f"b must have length {d}, got {b.shape}")
        if beta.shape != (d, d):
            raise StructuralError(f"beta must be {d}x{d}, got {beta.shape}")
        mu = tuple(self.mu)
        if len(mu) != m:
            raise StructuralError(f"mu must hold {m} measures, got {len(mu)}")
        if self.nu.dim != d or any(mi.dim != d for mi in mu):
            raise StructuralError("jump measure atom dimension does not match d = m + n")
        for arr in (a, alpha, b, beta):
            arr.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mu", mu)

    @property
    def d(self) -> int:
        return self.m + self.n

    @property
    def beta_JJ(self) -> np.ndarray:
        return self.beta[self.m:, self.m:]

    @property
    def a_JJ(self) -> np.ndarray:
        return self.a[self.m:, self.m:]

    @cached_property
    def validation(self) -> "ValidationReport":
        return validate(self)

    def require_valid(self):
        rep = self.validation
        if not rep.ok:
            from .errors import AdmissibilityError
            labels = ", ".join(sorted({v.condition for v in rep.violations}))
            raise AdmissibilityError(f"model violates admissibility condition(s) {labels}", rep)

    # -- serialization ------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "AffineModel":
        required = {"m", "n", "a", "alpha", "b", "beta"}
        allowed = required | {"nu", "mu"}
        unknown = set(data) - allowed
        if unknown:
            raise StructuralError(f"unknown model keys: {sorted(unknown)}")
        missing = required - set(data)
        if missing:
            raise StructuralError(f"missing model keys: {sorted(missing)}")
        m, n = int(data["m"]), int(data["n"])
        d = m + n

        def measure(entry, label):
            if entry is None:
                return JumpMeasure.zero(d)
            if not isinstance(entry, dict) or set(entry) - {"atoms"}:
                raise StructuralError(f"field {label!r} must be an object with an optional 'atoms' list")
            atoms = entry.get("atoms", [])
            parsed = []
            for k, atom in enumerate(atoms):
                if set(atom) != {"mass", "point"}:
                    raise StructuralError(f"{label}.atoms[{k}] must have exactly 'mass' and 'point'")
                point = np.asarray(atom["point"], dtype=float)
                if point.shape != (d,):
                    raise StructuralError(f"{label}.atoms[{k}].point must have length {d}")
                parsed.append((float(atom["mass"]), point))
            return JumpMeasure.from_atoms(parsed, dim=d)

        mu_entries = data.get("mu", [None] * m)
        if len(mu_entries) != m:
            raise StructuralError(f"mu must list {m} measures, got {len(mu_entries)}")
        try:
            return cls(
                m=m,
                n=n,
                a=np.asarray(data["a"], dtype=float),
                alpha=np.asarray(data["alpha"], dtype=float).reshape(m, d, d)
                if np.asarray(data["alpha"]).size == m * d * d
                else np.asarray(data["alpha"], dtype=float),
                b=np.asarray(data["b"], dtype=float),
                beta=np.asarray(data["beta"], dtype=float),
                nu=measure(data.get("nu"), "nu"),
                mu=tuple(measure(entry, f"mu[{i}]") for i, entry in enumerate(mu_entries)),
            )
        except ValueError as exc:
            raise StructuralError(f"malformed model field: {exc}") from exc

    def to_dict(self) -> dict:
        def measure(jm: JumpMeasure) -> dict:
            if jm.is_zero:
                return {}
            return {
                "atoms": [
                    {"mass": float(w), "point": [float(v) for v in p]}
                    for w, p in zip(jm.masses, jm.points)
                ]
            }

        return {
            "m": self.m,
            "n": self.n,
            "a": self.a.tolist(),
            "alpha": self.alpha.tolist(),
            "b": self.b.tolist(),
            "beta": self.beta.tolist(),
            "nu": measure(self.nu),
            "mu": [measure(mi) for mi in self.mu],
        }

    @classmethod
    def from_json(cls, text: str) -> "AffineModel":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(frozen=True)
class Violation:
    condition: str            # one of i, ii, iii, iv, v, vi
    detail: str
    indices: tuple = ()


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    def conditions(self) -> list[str]:
        return sorted({v.condition for v in self.violations})

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"condition": v.condition, "detail": v.detail, "indices": list(v.indices)}
                for v in self.violations
            ],
        }


def _psd_defect(matrix: np.ndarray) -> float:
    """How far the symmetric part is from PSD, relative to matrix scale."""
    sym = 0.5 * (matrix + matrix.T)
    if sym.size == 0:
        return 0.0
    eigs = np.linalg.eigvalsh(sym)
    scale = 1.0 + float(np.abs(eigs).max())
    return float(-eigs.min()) / scale if eigs.min() < 0 else 0.0


def validate(model: AffineModel) -> ValidationReport:
    """Check every admissibility condition, collecting all violations.

    Equality constraints use absolute tolerance ``ZERO_TOL``; PSD constraints
    allow the smallest eigenvalue down to ``-PSD_TOL`` relative to the matrix
    scale.  Dimension mismatches raise :class:`StructuralError` at model
    construction and never reach here.
    """
    m, n, d = model.m, model.n, model.d
    bad: list[Violation] = []

    # (i) a PSD, vanishing off the JJ block
    if not np.allclose(model.a, model.a.T, atol=ZERO_TOL, rtol=0.0):
        bad.append(Violation("i", "a is not symmetric"))
    elif _psd_defect(model.a) > PSD_TOL:
        bad.append(Violation("i", "a is not positive semidefinite"))
    for k in range(d):
        for l in range(d):
            if (k < m or l < m) and abs(model.a[k, l]) > ZERO_TOL:
                bad.append(Violation("i", f"a[{k},{l}] must vanish (row or column in I)", (k, l)))

    # (ii) each alpha_i PSD, supported on rows/columns {i} union J
    for i in range(m):
        ai = model.alpha[i]
        if not np.allclose(ai, ai.T, atol=ZERO_TOL, rtol=0.0):
            bad.append(Violation("ii", f"alpha[{i}] is not symmetric", (i,)))
        elif _psd_defect(ai) > PSD_TOL:
            bad.append(Violation("ii", f"alpha[{i}] is not positive semidefinite", (i,)))
        for k in range(d):
            for l in range(d):
                if ((k < m and k != i) or (l < m and l != i)) and abs(ai[k, l]) > ZERO_TOL:
                    bad.append(
                        Violation("ii", f"alpha[{i}][{k},{l}] must vanish (index in I \\ {{{i}}})", (i, k, l))
                    )

    # (iii) nu supported on D \ {0} with positive masses (finite activity by construction)
    for k, (w, p) in enumerate(zip(model.nu.masses, model.nu.points)):
        if w <= 0:
            bad.append(Violation("iii", f"nu atom {k} has nonpositive mass {w}", (k,)))
        if np.linalg.norm(p) == 0.0:
            bad.append(Violation("iii", f"nu atom {k} sits at the origin", (k,)))
        if m and p[:m].min() < -ZERO_TOL:
            bad.append(Violation("iii", f"nu atom {k} leaves D (negative I coordinate)", (k,)))

    # (iv) each mu_i likewise
    for i, mi in enumerate(model.mu):
        for k, (w, p) in enumerate(zip(mi.masses, mi.points)):
            if w <= 0:
                bad.append(Violation("iv", f"mu[{i}] atom {k} has nonpositive mass {w}", (i, k)))
            if np.linalg.norm(p) == 0.0:
                bad.append(Violation("iv", f"mu[{i}] atom {k} sits at the origin", (i, k)))
            if m and p[:m].min() < -ZERO_TOL:
                bad.append(Violation("iv", f"mu[{i}] atom {k} leaves D (negative I coordinate)", (i, k)))

    # (v) b in D
    for i in range(m):
        if model.b[i] < -ZERO_TOL:
            bad.append(Violation("v", f"b[{i}] = {model.b[i]} must be >= 0", (i,)))

    # (vi) beta_IJ = 0 and compensated off-diagonal I-block inward pointing
    for k in range(m):
        for l in range(m, d):
            if abs(model.beta[k, l]) > ZERO_TOL:
                bad.append(Violation("vi", f"beta[{k},{l}] must vanish (IJ block)", (k, l)))
    for i in range(m):
        comp = model.mu[i].moment("all")
        for k in range(m):
            if k == i:
                continue
            tilde = model.beta[k, i] - comp[k]
            if tilde < -ZERO_TOL:
                bad.append(
                    Violation(
                        "vi",
                        f"beta[{k},{i}] - int xi_{k} mu[{i}](dxi) = {tilde:.6g} must be >= 0",
                        (k, i),
                    )
                )

    return ValidationReport(ok=not bad, violations=tuple(bad))
