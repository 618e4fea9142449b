"""Named presets for models, rotations, correlations and cost functionals.

The registry is the only place the CLI builds coefficients from; library
users can always construct :class:`~pathcoupling.sde.CoefficientField`
objects directly.  Every model preset has weak uniqueness of the
associated SDE (constant, linear or bounded-Lipschitz coefficients);
the free-form ``expr`` preset is the documented escape hatch and is
accepted without any such check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coupling import CorrelationProcess, RotationProcess, chop_rotation
from .errors import ConfigError, DimensionError
from .sde import CoefficientField, SdeModel, constant_diffusion, constant_drift

__all__ = ["Preset", "get_preset", "build", "list_presets", "available"]


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str  # "model" | "rotation" | "correlation" | "h" | "g"
    description: str
    params: dict  # param name -> short doc including the default
    builder: Callable


_REGISTRY: dict[tuple[str, str], Preset] = {}


def _register(name, kind, description, params):
    def wrap(fn):
        _REGISTRY[(kind, name)] = Preset(name, kind, description, params, fn)
        return fn

    return wrap


def available(kind: str | None = None) -> list[Preset]:
    items = [p for p in _REGISTRY.values() if kind is None or p.kind == kind]
    return sorted(items, key=lambda p: (p.kind, p.name))


def get_preset(kind: str, name: str) -> Preset:
    try:
        return _REGISTRY[(kind, name)]
    except KeyError:
        names = ", ".join(sorted(n for k, n in _REGISTRY if k == kind))
        raise ConfigError(
            f"unknown {kind} preset {name!r}; available: {names}"
        ) from None


def build(kind: str, name: str, d: int = 1, **params):
    preset = get_preset(kind, name)
    unknown = set(params) - set(preset.params)
    if unknown:
        raise ConfigError(
            f"{kind} preset {name!r} does not take parameter(s) "
            f"{sorted(unknown)}; accepted: {sorted(preset.params)}"
        )
    return preset.builder(d=d, **params)


def list_presets() -> str:
    lines = []
    for p in available():
        lines.append(f"{p.kind:12s} {p.name:18s} {p.description}")
        for pname, doc in p.params.items():
            lines.append(f"{'':12s} {'':18s}   {pname}: {doc}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# model presets


@_register("bm", "model", "standard Brownian motion, optionally scaled", {
    "sigma": "scalar volatility (default 1.0)",
    "z0": "starting point, scalar broadcast to all components (default 0.0)",
})
def _bm(d, sigma=1.0, z0=0.0):
    return SdeModel(
        z0=np.full(d, float(z0)),
        drift=constant_drift(0.0, d),
        diffusion=constant_diffusion(float(sigma), d),
        label=f"bm(d={d},sigma={sigma},z0={z0})",
    )


@_register("const-matrix", "model", "constant matrix diffusion and vector drift", {
    "sigma": "scalar or d x d matrix (default 1.0 -> identity scale)",
    "mu": "scalar or length-d drift vector (default 0.0)",
    "z0": "starting point (default 0.0)",
})
def _const_matrix(d, sigma=1.0, mu=0.0, z0=0.0):
    sig = np.asarray(sigma, dtype=float)
    return SdeModel(
        z0=np.broadcast_to(np.atleast_1d(np.asarray(z0, dtype=float)), (d,)),
        drift=constant_drift(mu, d),
        diffusion=constant_diffusion(sig, d),
        label=f"const-matrix(d={d},sigma={np.asarray(sig).tolist()},mu={mu},z0={z0})",
    )


@_register("ou", "model", "mean-reverting linear drift with constant volatility", {
    "theta": "mean-reversion rate (default 1.0)",
    "mean": "long-run mean (default 0.0)",
    "sigma": "scalar volatility (default 1.0)",
    "z0": "starting point (default 0.0)",
})
def _ou(d, theta=1.0, mean=0.0, sigma=1.0, z0=0.0):
    theta = float(theta)
    mean_vec = np.full(d, float(mean))

    def drift(k, t, prefix):
        return -theta * (prefix[:, -1] - mean_vec)

    return SdeModel(
        z0=np.full(d, float(z0)),
        drift=CoefficientField("drift", d, drift, label=f"ou(theta={theta},mean={mean})"),
        diffusion=constant_diffusion(float(sigma), d),
        label=f"ou(d={d},theta={theta},mean={mean},sigma={sigma},z0={z0})",
    )


@_register("gbm-bounded", "model", "state-dependent but bounded diagonal volatility", {
    "sigma": "base scale; vol per component is sigma*(1 + x^2/(1+x^2)) (default 1.0)",
    "z0": "starting point (default 0.0)",
})
def _gbm_bounded(d, sigma=1.0, z0=0.0):
    s = float(sigma)

    def diffusion(k, t, prefix):
        x = prefix[:, -1]
        vol = s * (1.0 + x * x / (1.0 + x * x))
        out = np.zeros((x.shape[0], d, d))
        idx = np.arange(d)
        out[:, idx, idx] = vol
        return out

    return SdeModel(
        z0=np.full(d, float(z0)),
        drift=constant_drift(0.0, d),
        diffusion=CoefficientField("diffusion", d, diffusion, label=f"gbm-bounded({s})"),
        label=f"gbm-bounded(d={d},sigma={sigma},z0={z0})",
    )


@_register("degenerate", "model", "rank-deficient constant diffusion diag(1..1,0..0)", {
    "rank": "number of unit diagonal entries (default d-1)",
})
def _degenerate(d, rank=None):
    r = d - 1 if rank is None else int(rank)
    if not 0 <= r <= d:
        raise ConfigError(f"rank must be in [0, {d}], got {r}")
    sig = np.diag(np.concatenate([np.ones(r), np.zeros(d - r)]))
    return SdeModel(
        z0=np.zeros(d),
        drift=constant_drift(0.0, d),
        diffusion=constant_diffusion(sig, d),
        label=f"degenerate(d={d},rank={r})",
    )


_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sign": np.sign,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
    "pi": math.pi, "e": math.e,
}


def _compile_expr(expr: str, d: int):
    try:
        code = compile(expr, "<preset-expr>", "eval")
    except SyntaxError as err:
        raise ConfigError(f"bad expression {expr!r}: {err.msg}") from err
    allowed = set(_EXPR_NAMES) | {"t", "x"} | {f"x{j}" for j in range(d)}
    unknown = sorted(set(code.co_names) - allowed)
    if unknown:
        raise ConfigError(
            f"expression {expr!r} uses unknown names {unknown}; "
            f"allowed: t, x, x0..x{d - 1}, {', '.join(sorted(_EXPR_NAMES))}"
        )

    def evaluate(t, x):
        names = dict(_EXPR_NAMES)
        names["t"] = t
        names["x"] = x[:, 0] if d == 1 else x
        for j in range(d):
            names[f"x{j}"] = x[:, j]
        return eval(code, {"__builtins__": {}}, names)  # noqa: S307 - sandboxed names

    return evaluate


@_register("expr", "model", "scalar expressions over (t, x) applied isotropically", {
    "sigma_expr": "volatility expression, e.g. '1 + 0.5*sin(x0)' (default '1')",
    "mu_expr": "drift expression per component (default '0')",
    "z0": "starting point (default 0.0)",
})
def _expr_model(d, sigma_expr="1", mu_expr="0", z0=0.0):
    sig_fn = _compile_expr(str(sigma_expr), d)
    mu_fn = _compile_expr(str(mu_expr), d)

    def drift(k, t, prefix):
        x = prefix[:, -1]
        val = np.asarray(mu_fn(t, x), dtype=float)
        out = np.zeros((x.shape[0], d))
        out[:] = val.reshape(-1, 1) if val.ndim == 1 else val
        return out

    def diffusion(k, t, prefix):
        x = prefix[:, -1]
        val = np.asarray(sig_fn(t, x), dtype=float)
        out = np.zeros((x.shape[0], d, d))
        idx = np.arange(d)
        out[:, idx, idx] = val.reshape(-1, 1) if val.ndim == 1 else val
        return out

    return SdeModel(
        z0=np.full(d, float(z0)),
        drift=CoefficientField("drift", d, drift, label=f"expr({mu_expr})"),
        diffusion=CoefficientField("diffusion", d, diffusion, label=f"expr({sigma_expr})"),
        label=f"expr(d={d},sigma={sigma_expr!r},mu={mu_expr!r},z0={z0})",
    )


# ---------------------------------------------------------------------------
# rotation presets


@_register("identity", "rotation", "the identity transport", {})
def _rot_identity(d):
    return RotationProcess.identity(d)


@_register("sign", "rotation", "constant sign in dimension 1", {
    "s": "either +1 or -1 (default -1, the antithetic map)",
})
def _rot_sign(d, s=-1.0):
    if d != 1:
        raise ConfigError("the 'sign' rotation preset is 1-d only")
    if float(s) not in (-1.0, 1.0):
        raise ConfigError(f"s must be +1 or -1, got {s}")
    return RotationProcess.constant(np.array([[float(s)]]))


@_register("angle", "rotation", "constant planar rotation", {
    "theta": "rotation angle in radians (default 0.0)",
})
def _rot_angle(d, theta=0.0):
    if d != 2:
        raise ConfigError("the 'angle' rotation preset is 2-d only")
    th = float(theta)
    c, s = math.cos(th), math.sin(th)
    q = RotationProcess.constant(np.array([[c, -s], [s, c]]))
    return RotationProcess(2, q.fn, label=f"angle({theta})")


@_register("matrix", "rotation", "constant orthogonal matrix", {
    "q": "d x d orthogonal matrix (default identity)",
})
def _rot_matrix(d, q=None):
    mat = np.eye(d) if q is None else np.asarray(q, dtype=float)
    return RotationProcess.constant(mat)


@_register("rotation-by-state", "rotation", "planar rotation by the first component", {
    "scale": "angle per unit of x0 (default 1.0)",
})
def _rot_by_state(d, scale=1.0):
    if d != 2:
        raise ConfigError("the 'rotation-by-state' preset is 2-d only")
    a = float(scale)

    def fn(k, t, prefix):
        theta = a * prefix[:, -1, 0]
        c, s = np.cos(theta), np.sin(theta)
        out = np.empty((theta.shape[0], 2, 2))
        out[:, 0, 0] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
        out[:, 1, 1] = c
        return out

    return RotationProcess(2, fn, label=f"rotation-by-state(scale={a})")


@_register("chop", "rotation", "fast +/-1 chopping with a target duty cycle", {
    "c": "target mean correlation in [-1, 1] (default 0.0)",
    "block": "steps per block; must divide n_steps (default 16)",
    "n_steps": "grid size the schedule is laid out on (required)",
})
def _rot_chop(d, c=0.0, block=16, n_steps=None):
    if d != 1:
        raise ConfigError("the 'chop' rotation preset is 1-d only")
    if n_steps is None:
        raise ConfigError("the 'chop' rotation preset needs n_steps")
    q, _, _ = chop_rotation(float(c), int(n_steps), int(block))
    return q


# ---------------------------------------------------------------------------
# correlation presets


@_register("const", "correlation", "constant correlation matrix", {
    "c": "scalar (times identity) or full d x d matrix (default 0.0)",
})
def _corr_const(d, c=0.0):
    return CorrelationProcess.constant(np.asarray(c, dtype=float), d=d)


@_register("scaled-rotation", "correlation", "contraction of a planar rotation", {
    "scale": "contraction factor in [0, 1] (default 0.8)",
    "theta": "rotation angle in radians (default 0.0)",
})
def _corr_scaled_rotation(d, scale=0.8, theta=0.0):
    if d != 2:
        raise ConfigError("the 'scaled-rotation' correlation preset is 2-d only")
    th, sc = float(theta), float(scale)
    c, s = math.cos(th), math.sin(th)
    mat = sc * np.array([[c, -s], [s, c]])
    proc = CorrelationProcess.constant(mat)
    return CorrelationProcess(2, proc.fn, label=f"scaled-rotation({sc},{th})")


# ---------------------------------------------------------------------------
# cost functional presets (h acts on a batch of paths, g on nonnegative scalars)


@_register("zero", "h", "ignore the finite-variation difference", {})
def _h_zero(d):
    def h(paths):
        return np.zeros(paths.shape[0])

    return h


@_register("sup", "h", "sup over time of the euclidean norm", {})
def _h_sup(d):
    def h(paths):
        return np.linalg.norm(paths, axis=2).max(axis=1)

    return h


@_register("l2", "h", "time integral of the squared euclidean norm", {})
def _h_l2(d):
    def h(paths):
        sq = (paths[:, :-1] ** 2).sum(axis=2)
        return sq.mean(axis=1)

    return h


@_register("identity", "g", "g(r) = r", {})
def _g_identity(d):
    return lambda r: np.asarray(r, dtype=float)


@_register("sqrt", "g", "g(r) = sqrt(r)", {})
def _g_sqrt(d):
    return lambda r: np.sqrt(np.asarray(r, dtype=float))


@_register("square", "g", "g(r) = r^2", {})
def _g_square(d):
    return lambda r: np.asarray(r, dtype=float) ** 2
