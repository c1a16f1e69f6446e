"""Euler simulation of the affine process, used as an independent oracle.

The scheme is reverse-engineered from the generator, which carries no 1/2 on
second derivatives and uses two distinct jump compensations:

* Gaussian increment with covariance ``2 (a + sum_i x_i^+ alpha_i) dt``;
* state-independent jumps: compound Poisson with rate |nu|, with drift
  correction ``- int_{||xi||<=1} xi_J nu(dxi)`` applied to the J block only
  (small jumps of nu are compensated in J only);
* state-proportional jumps: compound Poisson with rate ``x_i^+ |mu_i|``
  frozen at the step's left endpoint, with full drift correction
  ``- x_i int xi mu_i(dxi)``;
* full truncation: I coordinates are clamped at zero after every step.

Paths are generated in fixed-size chunks, each chunk driven by its own
counter-based Philox stream keyed by (seed, chunk index), so the ensemble is
reproducible bit for bit regardless of scheduling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, StructuralError
from .model import AffineModel
from .density import DensityField

#: paths per Philox stream; part of the reproducibility contract
CHUNK = 16384
#: fraction of clamped steps that triggers the step-size warning
CLAMP_WARN = 0.5


@dataclass(frozen=True)
class SimConfig:
    x0: np.ndarray
    t_end: float
    dt: float
    n_paths: int
    seed: int
    store_paths: bool = False

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if self.dt <= 0 or self.t_end <= 0 or self.dt > self.t_end + 1e-15:
            raise StructuralError("need 0 < dt <= t_end")
        if self.n_paths < 1:
            raise StructuralError("need at least one path")


@dataclass
class PathEnsemble:
    terminal: np.ndarray            # (N, d)
    jump_counts: np.ndarray         # (N, 1 + m): nu column then one per mu_i
    clamp_fraction: float
    config: SimConfig
    skeletons: np.ndarray | None = None   # (steps+1, N, d) when stored
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.terminal.shape[0]


def _diffusion_factor(mat: np.ndarray) -> np.ndarray:
    """Factor L with L L^T = mat for a PSD matrix (eigen route, robust to rank deficiency)."""
    w, V = np.linalg.eigh(0.5 * (mat + mat.T))
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


def simulate_paths(model: AffineModel, cfg: SimConfig) -> PathEnsemble:
    """Full-truncation Euler ensemble of the affine process."""
    model.require_valid()
    d, m = model.d, model.m
    if cfg.x0.shape != (d,):
        raise StructuralError(f"x0 must have length {d}")
    if m and cfg.x0[:m].min() < 0:
        raise StructuralError("x0 must lie in D")

    n_full = int(np.floor(cfg.t_end / cfg.dt + 1e-9))
    steps = [cfg.dt] * n_full
    rem = cfg.t_end - n_full * cfg.dt
    if rem > 1e-12 * cfg.t_end:
        steps.append(rem)
    n_steps = len(steps)

    # drift pieces: b + nu small-jump correction; linear part with mu compensation
    b_eff = model.b.copy()
    if not model.nu.is_zero:
        small_J = model.nu.moment("small")[m:]
        b_eff[m:] -= small_J
    B_eff = model.beta.copy()
    for i in range(m):
        B_eff[:, i] -= model.mu[i].moment("all")

    base_factor = _diffusion_factor(2.0 * model.a) if np.abs(model.a).max() > 0 else None
    alpha_factors = [
        _diffusion_factor(2.0 * model.alpha[i]) if np.abs(model.alpha[i]).max() > 0 else None
        for i in range(m)
    ]
    nu_mass = model.nu.total_mass
    nu_probs = model.nu.masses / nu_mass if nu_mass > 0 else None
    mu_masses = [mi.total_mass for mi in model.mu]
    mu_probs = [mi.masses / tm if tm > 0 else None for mi, tm in zip(model.mu, mu_masses)]

    if cfg.store_paths and cfg.n_paths * (n_steps + 1) * d > 50_000_000:
        raise StructuralError("skeleton storage too large; lower n_paths or raise dt")

    terminal = np.empty((cfg.n_paths, d))
    jump_counts = np.zeros((cfg.n_paths, 1 + m), dtype=np.int64)
    skeletons = (
        np.empty((n_steps + 1, cfg.n_paths, d)) if cfg.store_paths else None
    )
    clamped = 0
    clamp_opportunities = 0
    step_clamped = np.zeros(n_steps, dtype=np.int64)

    for c_start in range(0, cfg.n_paths, CHUNK):
        c_end = min(c_start + CHUNK, cfg.n_paths)
        k = c_end - c_start
        key = np.array([np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF), np.uint64(c_start // CHUNK)])
        rng = np.random.Generator(np.random.Philox(key=key))
        X = np.tile(cfg.x0, (k, 1))
        if skeletons is not None:
            skeletons[0, c_start:c_end] = X

        for s_idx, h in enumerate(steps):
            sq = np.sqrt(h)
            incr = (b_eff + X @ B_eff.T) * h
            if base_factor is not None:
                incr += (rng.standard_normal((k, d)) @ base_factor.T) * sq
            for i in range(m):
                if alpha_factors[i] is not None:
                    scalei = np.sqrt(np.maximum(X[:, i], 0.0)) * sq
                    incr += (rng.standard_normal((k, d)) @ alpha_factors[i].T) * scalei[:, None]
            if nu_mass > 0:
                counts = rng.poisson(nu_mass * h, size=k)
                jump_counts[c_start:c_end, 0] += counts
                if counts.any():
                    picks = rng.multinomial(counts, nu_probs)
                    incr += picks @ model.nu.points
            for i in range(m):
                if mu_masses[i] > 0:
                    lam = np.maximum(X[:, i], 0.0) * mu_masses[i] * h
                    counts = rng.poisson(lam)
                    jump_counts[c_start:c_end, 1 + i] += counts
                    if counts.any():
                        picks = rng.multinomial(counts, mu_probs[i])
                        incr += picks @ model.mu[i].points
            X = X + incr
            if m:
                neg = (X[:, :m] < 0).any(axis=1)
                clamped += int(neg.sum())
                step_clamped[s_idx] += int(neg.sum())
                clamp_opportunities += k
                np.maximum(X[:, :m], 0.0, out=X[:, :m])
            if skeletons is not None:
                skeletons[s_idx + 1, c_start:c_end] = X

        terminal[c_start:c_end] = X

    frac = clamped / clamp_opportunities if clamp_opportunities else 0.0
    worst_step = float(step_clamped.max() / cfg.n_paths) if m else 0.0
    meta = {}
    if frac > CLAMP_WARN or worst_step > CLAMP_WARN:
        warnings.warn(
            f"clamp rate {frac:.1%} overall, {worst_step:.1%} at the worst step; "
            f"dt too large for a trustworthy boundary treatment",
            RuntimeWarning,
        )
        meta["stability_warning"] = True
    meta["worst_step_clamp_fraction"] = worst_step
    return PathEnsemble(
        terminal=terminal,
        jump_counts=jump_counts,
        clamp_fraction=frac,
        config=cfg,
        skeletons=skeletons,
        meta=meta,
    )


def empirical_charfn(ens: PathEnsemble, u) -> tuple[complex, float]:
    """Sample characteristic function at u with a standard-error estimate."""
    if ens.n_paths < 1:
        raise StructuralError("empty ensemble")
    u = np.asarray(u, dtype=float).reshape(ens.terminal.shape[1])
    phases = ens.terminal @ u
    zs = np.exp(1j * phases)
    mean = zs.mean()
    if ens.n_paths == 1:
        return complex(mean), 0.0
    se = float(np.sqrt((zs.real.var(ddof=1) + zs.imag.var(ddof=1)) / ens.n_paths))
    return complex(mean), se


def compare_density(ens: PathEnsemble, f: DensityField, axis: int) -> tuple[float, float]:
    """Kolmogorov-Smirnov and histogram-L1 gap between an ensemble marginal and a density field.

    The field must be a plain density; its marginal along ``axis`` is
    integrated to a CDF on its own grid.  The grid must cover at least 99.9%
    of the sampled range.
    """
    q = f.meta.get("q")
    qt = f.meta.get("qtilde")
    if (q is not None and any(q)) or (qt is not None and any(qt)):
        raise StructuralError("comparison needs a plain density (q = qtilde = 0)")
    if not 0 <= axis < ens.terminal.shape[1]:
        raise StructuralError(f"axis {axis} out of range")
    pts, marg = f.marginal(axis)
    samples = np.sort(ens.terminal[:, axis])
    inside = (samples >= pts[0]) & (samples <= pts[-1])
    coverage = inside.mean()
    if coverage < 0.999:
        raise CoverageError(
            f"grid covers only {coverage:.2%} of the sampled range along axis {axis}"
        )

    cdf_grid = np.concatenate([[0.0], np.cumsum(0.5 * (marg[1:] + marg[:-1]) * np.diff(pts))])
    total = cdf_grid[-1]
    if total <= 0:
        raise StructuralError("marginal density has nonpositive mass")
    cdf_grid = cdf_grid / total
    F_model = np.interp(samples, pts, cdf_grid, left=0.0, right=1.0)
    n = samples.size
    i = np.arange(1, n + 1)
    ks = float(np.maximum(np.abs(i / n - F_model), np.abs((i - 1) / n - F_model)).max())

    hist, _ = np.histogram(samples, bins=pts)
    widths = np.diff(pts)
    emp_density = hist / (n * widths)
    model_density = 0.5 * (marg[1:] + marg[:-1])
    hist_l1 = float(np.sum(np.abs(emp_density - model_density) * widths))
    return ks, hist_l1
