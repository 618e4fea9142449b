"""Paths, coefficient fields and the discrete Itô map.

Time is always the unit interval discretised into ``n_steps`` uniform
steps.  An SDE model is a starting point plus two coefficient fields
(drift and diffusion) evaluated non-anticipatively: a field only ever
sees the step index, the grid time and the path prefix up to that step.
The solver is the left-endpoint Euler recursion

    Z[k+1] = Z[k] + b(k, Z[0..k]) * dt + sigma(k, Z[0..k]) @ dB[k],

and because the recursion is algebraically triangular it has an exact
discrete inverse: given the solution, the driving increments are
recovered by solving sigma against the de-drifted increments step by
step.

Randomness discipline: every path of an ensemble draws from its own
substream derived from (seed, path index), so generating an ensemble
in parallel chunks yields bit-identical output to a serial run.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError, SingularDiffusionError
from .linalg import DEFAULT_RANK_TOL

__all__ = [
    "TimeGrid",
    "SamplePath",
    "PathEnsemble",
    "CoefficientField",
    "SdeModel",
    "sample_brownian",
    "brownian_increments",
    "ito_map",
    "inverse_ito_map",
    "decompose",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, 1] with n_steps steps (n_steps + 1 knots)."""

    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise DimensionError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_steps + 1)


@dataclass(frozen=True)
class SamplePath:
    """One d-dimensional path sampled on a grid; values has shape (n_steps+1, d)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.grid.n_steps + 1:
            raise DimensionError(
                f"path values must have shape (n_steps+1, d), got {v.shape}"
            )
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PathEnsemble:
    """A batch of paths on a common grid; values has shape (N, n_steps+1, d)."""

    grid: TimeGrid
    values: np.ndarray
    seed: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != self.grid.n_steps + 1:
            raise DimensionError(
                f"ensemble values must have shape (N, n_steps+1, d), got {v.shape}"
            )
        object.__setattr__(self, "values", v)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    def path(self, i: int) -> SamplePath:
        return SamplePath(self.grid, self.values[i])

    def __iter__(self):
        return (self.path(i) for i in range(self.n_paths))


@dataclass(frozen=True)
class CoefficientField:
    """A non-anticipative coefficient functional.

    ``fn(k, t, prefix)`` receives the step index, the grid time t = k*dt
    and the batched path prefix shaped (N, k+1, d); it must return

    * drift:      (d,) shared across paths, or (N, d) per path,
    * diffusion:  (d, d) shared across paths, or (N, d, d) per path.

    Returning the shared shape whenever the coefficient does not depend
    on the path keeps the per-step membership and singularity checks
    cheap.  The interface enforces non-anticipativity by construction:
    only the prefix is ever passed in.
    """

    kind: str  # "drift" | "diffusion"
    dim: int
    fn: Callable[[int, float, np.ndarray], np.ndarray]
    label: str = "custom"

    def __post_init__(self):
        if self.kind not in ("drift", "diffusion"):
            raise DimensionError(f"unknown coefficient kind {self.kind!r}")

    def eval(self, k: int, t: float, prefix: np.ndarray) -> np.ndarray:
        return self.fn(k, t, prefix)


@dataclass(frozen=True)
class SdeModel:
    """Starting point plus drift and diffusion fields."""

    z0: np.ndarray
    drift: CoefficientField
    diffusion: CoefficientField
    label: str = "custom"

    def __post_init__(self):
        z0 = np.atleast_1d(np.asarray(self.z0, dtype=float))
        object.__setattr__(self, "z0", z0)
        if z0.ndim != 1:
            raise DimensionError("z0 must be a vector")
        if self.drift.dim != z0.size or self.diffusion.dim != z0.size:
            raise DimensionError(
                f"coefficient dims ({self.drift.dim}, {self.diffusion.dim}) "
                f"do not match z0 dim {z0.size}"
            )

    @property
    def dim(self) -> int:
        return self.z0.size


def constant_drift(mu, d: int, label: str | None = None) -> CoefficientField:
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (d,)).copy()
    return CoefficientField(
        "drift", d, lambda k, t, prefix: mu, label=label or f"const({mu.tolist()})"
    )


def constant_diffusion(sigma, d: int, label: str | None = None) -> CoefficientField:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 0:
        sigma = float(sigma) * np.eye(d)
    if sigma.shape != (d, d):
        raise DimensionError(f"constant diffusion must be ({d}, {d}), got {sigma.shape}")
    return CoefficientField(
        "diffusion", d, lambda k, t, prefix: sigma, label=label or "const-matrix"
    )


# ---------------------------------------------------------------------------
# sampling


def _substream(seed: int, index: int) -> np.random.Generator:
    """Generator for one path, derived from (seed, path index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _check_seed(seed):
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise DomainError(f"seed must be a nonnegative integer, got {seed!r}")
    return int(seed)


def brownian_increments(
    grid: TimeGrid, d: int, n_paths: int, seed: int, streams: int = 1, n_workers: int = 1
) -> np.ndarray:
    """Brownian increments shaped (streams, n_paths, n_steps, d).

    Path i draws all of its ``streams`` blocks from substream (seed, i)
    in a fixed order, so the result does not depend on ``n_workers`` or
    on how the paths are chunked.
    """
    seed = _check_seed(seed)
    if d < 1 or n_paths < 1 or streams < 1:
        raise DimensionError("d, n_paths and streams must all be >= 1")
    n = grid.n_steps
    root_dt = np.sqrt(grid.dt)
    out = np.empty((streams, n_paths, n, d))

    def fill(lo: int, hi: int):
        for i in range(lo, hi):
            out[:, i] = _substream(seed, i).standard_normal((streams, n, d))

    if n_workers <= 1 or n_paths < 2 * n_workers:
        fill(0, n_paths)
    else:
        chunk = -(-n_paths // n_workers)
        bounds = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda b: fill(*b), bounds))
    out *= root_dt
    if not np.isfinite(out).all():
        raise DomainError("non-finite values in generated increments")
    return out


def sample_brownian(
    grid: TimeGrid, d: int, n_paths: int, seed: int, n_workers: int = 1
) -> PathEnsemble:
    """Standard Brownian ensemble started at 0."""
    inc = brownian_increments(grid, d, n_paths, seed, streams=1, n_workers=n_workers)[0]
    values = np.zeros((n_paths, grid.n_steps + 1, d))
    np.cumsum(inc, axis=1, out=values[:, 1:])
    return PathEnsemble(grid=grid, values=values, seed=seed)


# ---------------------------------------------------------------------------
# coefficient evaluation plumbing


def _eval_drift(field: CoefficientField, k, t, prefix, n_paths, d):
    b = np.asarray(field.eval(k, t, prefix), dtype=float)
    if b.shape == (d,):
        return b
    if b.shape == (n_paths, d):
        return b
    raise DimensionError(
        f"drift {field.label!r} returned shape {b.shape} at step {k}; "
        f"expected ({d},) or ({n_paths}, {d})"
    )


def _eval_diffusion(field: CoefficientField, k, t, prefix, n_paths, d):
    s = np.asarray(field.eval(k, t, prefix), dtype=float)
    if s.shape == (d, d):
        return s
    if s.shape == (n_paths, d, d):
        return s
    raise DimensionError(
        f"diffusion {field.label!r} returned shape {s.shape} at step {k}; "
        f"expected ({d}, {d}) or ({n_paths}, {d}, {d})"
    )


def _apply_matrix(s: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """s @ vec per path; s is (d, d) shared or (N, d, d), vec is (N, d)."""
    if s.ndim == 2:
        return vec @ s.T
    return np.einsum("nij,nj->ni", s, vec)


def _values_and_kind(path_or_ensemble):
    if isinstance(path_or_ensemble, SamplePath):
        return path_or_ensemble.values[None], path_or_ensemble.grid, True, None
    if isinstance(path_or_ensemble, PathEnsemble):
        return (
            path_or_ensemble.values,
            path_or_ensemble.grid,
            False,
            path_or_ensemble.seed,
        )
    raise DimensionError(
        f"expected SamplePath or PathEnsemble, got {type(path_or_ensemble).__name__}"
    )


def _wrap_like(grid, values, single, seed):
    if single:
        return SamplePath(grid, values[0])
    return PathEnsemble(grid=grid, values=values, seed=seed)


# ---------------------------------------------------------------------------
# the Itô map and its inverse


def ito_map(model: SdeModel, driver):
    """Push a driving path (or ensemble) through the Euler recursion.

    The driver is read as Brownian increments dB[k] = driver[k+1] -
    driver[k]; its starting value is ignored.  Accepts a SamplePath or a
    PathEnsemble and returns the same kind.
    """
    drv, grid, single, seed = _values_and_kind(driver)
    n_paths, _, d = drv.shape
    if d != model.dim:
        raise DimensionError(f"driver dim {d} does not match model dim {model.dim}")
    dt = grid.dt
    z = np.empty_like(drv)
    z[:, 0] = model.z0
    for k in range(grid.n_steps):
        prefix = z[:, : k + 1]
        t = k * dt
        b = _eval_drift(model.drift, k, t, prefix, n_paths, d)
        s = _eval_diffusion(model.diffusion, k, t, prefix, n_paths, d)
        db = drv[:, k + 1] - drv[:, k]
        z[:, k + 1] = z[:, k] + b * dt + _apply_matrix(s, db)
    return _wrap_like(grid, z, single, seed)


def _solve_diffusion(s, rhs, k, rank_tol, label):
    """Solve s @ x = rhs per path with a per-step singularity check."""
    if s.ndim == 2:
        sv = np.linalg.svd(s, compute_uv=False)
        if sv[0] == 0.0 or sv[-1] <= rank_tol * sv[0]:
            raise SingularDiffusionError(
                f"diffusion {label!r} is singular", step=k
            )
        return np.linalg.solve(s, rhs.T).T
    sv = np.linalg.svd(s, compute_uv=False)
    bad = (sv[:, 0] == 0.0) | (sv[:, -1] <= rank_tol * sv[:, 0])
    if bad.any():
        raise SingularDiffusionError(
            f"diffusion {label!r} is singular on {int(bad.sum())} path(s)", step=k
        )
    return np.linalg.solve(s, rhs[..., None])[..., 0]


def inverse_ito_map(model: SdeModel, solution, rank_tol: float = DEFAULT_RANK_TOL):
    """Recover the driving path from a solution of the Euler recursion.

    Exact discrete inverse of :func:`ito_map` up to floating-point
    rounding: dW[k] = sigma(k, X)^(-1) (dX[k] - b(k, X) dt), accumulated
    from 0.  Raises :class:`SingularDiffusionError` (carrying the step
    index) when the diffusion is numerically singular at some step.
    """
    x, grid, single, seed = _values_and_kind(solution)
    n_paths, _, d = x.shape
    if d != model.dim:
        raise DimensionError(f"solution dim {d} does not match model dim {model.dim}")
    dt = grid.dt
    w = np.zeros_like(x)
    for k in range(grid.n_steps):
        prefix = x[:, : k + 1]
        t = k * dt
        b = _eval_drift(model.drift, k, t, prefix, n_paths, d)
        s = _eval_diffusion(model.diffusion, k, t, prefix, n_paths, d)
        rhs = x[:, k + 1] - x[:, k] - b * dt
        dw = _solve_diffusion(s, rhs, k, rank_tol, model.diffusion.label)
        w[:, k + 1] = w[:, k] + dw
    return _wrap_like(grid, w, single, seed)


def decompose(model: SdeModel, path):
    """Split a path into finite-variation and martingale components.

    finite_variation[k] = z0 + sum_{j<k} b(j, path[0..j]) * dt and
    martingale = path - finite_variation, so the two sum back to the
    path up to a single floating-point rounding per entry (no error
    accumulates).  The drift is evaluated on the *given* path, which
    need not have been produced by :func:`ito_map`.
    """
    x, grid, single, seed = _values_and_kind(path)
    n_paths, _, d = x.shape
    if d != model.dim:
        raise DimensionError(f"path dim {d} does not match model dim {model.dim}")
    dt = grid.dt
    fv = np.empty_like(x)
    fv[:, 0] = model.z0
    for k in range(grid.n_steps):
        b = _eval_drift(model.drift, k, k * dt, x[:, : k + 1], n_paths, d)
        fv[:, k + 1] = fv[:, k] + b * dt
    mart = x - fv
    return (
        _wrap_like(grid, fv, single, seed),
        _wrap_like(grid, mart, single, seed),
    )
