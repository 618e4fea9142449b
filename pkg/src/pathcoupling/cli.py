"""Command line front end: simulate, couple, score and verify path ensembles.

The CLI is a thin orchestration layer over the library.  Runs are driven
by a versioned JSON config (see ``load_config``); the named experiments
ship as config files under ``pathcoupling/experiments/`` and can be
re-run with overridden sizes via flags.  All parallelism lives inside
the library calls; the CLI itself never spawns workers.

Exit codes: 0 success, 2 config error (with a line-numbered diagnostic
where possible), 3 numerical/domain error, 4 failed acceptance check
under ``experiment --check``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coupling, cost, pathio, presets, sde, verify
from .errors import ConfigError, DimensionError, DomainError
from .linalg import psd_sqrt, rotation_grid_max, trace_max_rotation
from .verify import TestReport

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

CONFIG_VERSION = 1

_CONSTRUCTORS = (
    "couple_brownians",
    "couple_sdes",
    "rotation_monge",
    "composed_monge",
    "monge_sde",
    "tanaka",
    "rotation_chop",
)


# ---------------------------------------------------------------------------
# config plumbing


def _line_of(raw: str, key: str):
    """Best-effort 1-based line of the first occurrence of a JSON key."""
    needle = f'"{key}"'
    for i, line in enumerate(raw.splitlines(), start=1):
        if needle in line:
            return i
    return None


@dataclass
class Config:
    """A parsed config plus enough context for line-numbered diagnostics."""

    data: dict
    raw: str
    source: str

    def error(self, key, message):
        raise ConfigError(f"{self.source}: {message}", line=_line_of(self.raw, key))

    def rewrap(self, key, err: ConfigError):
        # attach a line number to an error raised by a lower layer
        raise ConfigError(f"{self.source}: {err}", line=_line_of(self.raw, key)) from None


def load_config(path) -> Config:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: {err.msg}", line=err.lineno) from None
    cfg = Config(data=data, raw=raw, source=str(path))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        cfg.error("version", f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    return cfg


def _build_preset(cfg: Config, section, kind, d, key, extra=None):
    if not isinstance(section, dict) or "preset" not in section:
        cfg.error(key, f"'{key}' must be an object with a 'preset' name")
    params = dict(section.get("params", {}))
    if extra:
        for pname, pval in extra.items():
            params.setdefault(pname, pval)
    try:
        return presets.build(kind, section["preset"], d=d, **params)
    except ConfigError as err:
        cfg.rewrap(section["preset"], err)


def _require_model(cfg: Config, key, d):
    section = cfg.data.get(key)
    if section is None:
        cfg.error(key, f"config needs a '{key}' model section")
    return _build_preset(cfg, section, "model", d, key)


def _sizes(cfg: Config):
    data = cfg.data
    d = int(data.get("d", 1))
    n_steps = int(data.get("n_steps", 256))
    n_pairs = int(data.get("N", 1000))
    seed = int(data.get("seed", 0))
    return d, n_steps, n_pairs, seed


def build_coupled(cfg: Config, n_workers: int = 1) -> coupling.CoupledEnsemble:
    """Construct the coupled ensemble a config describes."""
    d, n_steps, n_pairs, seed = _sizes(cfg)
    grid = sde.TimeGrid(n_steps)
    section = cfg.data.get("coupling")
    if not isinstance(section, dict) or "constructor" not in section:
        cfg.error("coupling", "config needs a 'coupling' object with a 'constructor' name")
    ctor = section["constructor"]

    if ctor == "couple_brownians":
        rho = _build_preset(cfg, section.get("correlation"), "correlation", d, "correlation")
        return coupling.couple_brownians(rho, grid, n_pairs, seed, n_workers=n_workers)
    if ctor == "couple_sdes":
        src = _require_model(cfg, "src", d)
        dst = _require_model(cfg, "dst", d)
        rho = _build_preset(cfg, section.get("correlation"), "correlation", d, "correlation")
        return coupling.couple_sdes(src, dst, rho, grid, n_pairs, seed, n_workers=n_workers)
    if ctor == "rotation_monge":
        q = _build_preset(
            cfg, section.get("rotation"), "rotation", d, "rotation",
            extra={"n_steps": n_steps} if _is_chop(section) else None,
        )
        driver = sde.sample_brownian(grid, d, n_pairs, seed, n_workers=n_workers)
        return coupling.rotation_monge(q, driver)
    if ctor == "composed_monge":
        src = _require_model(cfg, "src", d)
        dst = _require_model(cfg, "dst", d)
        q = _build_preset(
            cfg, section.get("rotation"), "rotation", d, "rotation",
            extra={"n_steps": n_steps} if _is_chop(section) else None,
        )
        return coupling.composed_monge(src, dst, q, grid, n_pairs, seed, n_workers=n_workers)
    if ctor == "monge_sde":
        src = _require_model(cfg, "src", d)
        dst = _require_model(cfg, "dst", d)
        q = _build_preset(
            cfg, section.get("rotation"), "rotation", d, "rotation",
            extra={"n_steps": n_steps} if _is_chop(section) else None,
        )
        return coupling.monge_sde(
            dst.drift, dst.diffusion, q, src, grid, n_pairs, seed,
            z0_dst=dst.z0, n_workers=n_workers,
        )
    if ctor == "tanaka":
        if d != 1:
            cfg.error("d", "the tanaka coupling is one dimensional")
        return coupling.tanaka_coupling(grid, n_pairs, seed, n_workers=n_workers)
    if ctor == "rotation_chop":
        c = float(section.get("c", 0.0))
        block = int(section.get("block", 16))
        return coupling.rotation_chop(c, grid, n_pairs, seed, block, n_workers=n_workers)

    cfg.error("constructor", f"unknown coupling constructor {ctor!r}; known: {', '.join(_CONSTRUCTORS)}")


def _is_chop(section) -> bool:
    rot = section.get("rotation")
    return isinstance(rot, dict) and rot.get("preset") == "chop"


def _build_cost_spec(cfg: Config):
    """Returns (spec, src, dst); the models are None for lp costs."""
    section = cfg.data.get("cost")
    if not isinstance(section, dict) or "kind" not in section:
        cfg.error("cost", "config needs a 'cost' object with a 'kind'")
    kind = section["kind"]
    d = int(cfg.data.get("d", 1))
    if kind == "lp":
        return cost.CostSpec.lp(float(section.get("p", 2.0))), None, None
    if kind == "separable":
        src = _require_model(cfg, "src", d)
        dst = _require_model(cfg, "dst", d)
        h_sec = section.get("h", {"preset": "zero"})
        g_sec = section.get("g", {"preset": "identity"})
        h_fn = _build_preset(cfg, h_sec, "h", d, "h")
        g_fn = _build_preset(cfg, g_sec, "g", d, "g")
        label = f"separable(h={h_sec.get('preset')}, g={g_sec.get('preset')})"
        return cost.CostSpec.separable(h_fn, g_fn, label=label), src, dst
    cfg.error("kind", f"unknown cost kind {kind!r}; known: separable, lp")


def _py(obj):
    """Recursively convert numpy scalars/arrays for JSON output."""
    if isinstance(obj, dict):
        return {k: _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _wants(args, fmt) -> bool:
    return args.format is None or args.format == fmt


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    params = _parse_params(args.param)
    seed = 0 if args.seed is None else args.seed
    model = presets.build("model", args.preset, d=args.d, **params)
    grid = sde.TimeGrid(args.n_steps)
    driver = sde.sample_brownian(grid, args.d, args.n_paths, seed, n_workers=args.threads)
    ens = sde.ito_map(model, driver)
    out = _out_dir(args)
    written = []
    if _wants(args, "csv"):
        pathio.write_csv(out / "ensemble.csv", ens)
        written.append("ensemble.csv")
    if _wants(args, "bin"):
        pathio.write_binary(out / "ensemble.bin", ens)
        written.append("ensemble.bin")
    if _wants(args, "json"):
        manifest = {
            "model": model.label,
            "d": args.d,
            "n_steps": args.n_steps,
            "N": args.n_paths,
            "seed": seed,
        }
        pathio.write_json(out / "manifest.json", manifest)
        written.append("manifest.json")
    print(f"simulated {args.n_paths} x {args.preset}(d={args.d}, n={args.n_steps}); wrote {', '.join(written)} to {out}")
    return EXIT_OK


def _parse_params(items):
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def cmd_couple(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.data["seed"] = args.seed
    pair = build_coupled(cfg, n_workers=args.threads)
    out = _out_dir(args)
    written = []
    if _wants(args, "csv"):
        pathio.write_csv(out / "coupled.csv", pair)
        written.append("coupled.csv")
    if _wants(args, "bin"):
        pathio.write_binary(out / "coupled.bin", pair)
        written.append("coupled.bin")
    if _wants(args, "json"):
        pathio.write_json(out / "manifest.json", _py(dict(pair.provenance)))
        written.append("manifest.json")
    prov = pair.provenance
    print(f"coupled {pair.n_pairs} pairs via {prov.get('constructor')}; wrote {', '.join(written)} to {out}")
    return EXIT_OK


def cmd_cost(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.data["seed"] = args.seed
    _, n_steps, _, seed = _sizes(cfg)
    pair = build_coupled(cfg, n_workers=args.threads)
    spec, src, dst = _build_cost_spec(cfg)
    est = cost.estimate(pair, spec, src=src, dst=dst)
    closed = None
    cf_section = cfg.data.get("closed_form")
    if cf_section is not None:
        if spec.kind != cost.SEPARABLE:
            cfg.error("closed_form", "the closed form applies to separable costs only")
        probe_n = int(cf_section.get("probe_N", 64))
        probe = sde.ito_map(src, sde.sample_brownian(sde.TimeGrid(n_steps), src.dim, probe_n, seed + 1))
        closed, _ = cost.closed_form_optimal(src, dst, spec, probe)
    payload = pathio.cost_report(est, n_steps=n_steps, seed=seed, closed_form=closed)
    out = _out_dir(args)
    pathio.write_json(out / "cost.json", _py(payload))
    line = f"cost[{est.spec_label}] mean={est.mean:.6g} stderr={est.stderr:.3g} (N={est.n_pairs})"
    if closed is not None:
        line += f" closed-form={closed.mean:.6g} gap={est.mean - closed.mean:+.3g}"
    print(line)
    print(f"wrote {out / 'cost.json'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.data["seed"] = args.seed
    tests = cfg.data.get("verify")
    if not isinstance(tests, list) or not tests:
        cfg.error("verify", "config needs a non-empty 'verify' list of test objects")
    pair = build_coupled(cfg, n_workers=args.threads)
    reports = [_run_verify_test(cfg, t, pair) for t in tests]
    out = _out_dir(args)
    pathio.write_reports_jsonl(out / "reports.jsonl", reports)
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.name} statistic={rep.statistic:.6g} threshold={rep.threshold:.6g}")
    print(f"wrote {out / 'reports.jsonl'}")
    return EXIT_OK


def _run_verify_test(cfg: Config, t, pair) -> TestReport:
    if not isinstance(t, dict) or "test" not in t:
        cfg.error("verify", "each verify entry must be an object with a 'test' name")
    name = t["test"]
    if name == "wiener":
        side = t.get("side", "y")
        if side not in ("x", "y"):
            cfg.error("side", f"wiener test side must be 'x' or 'y', got {side!r}")
        ens = pair.x_ensemble() if side == "x" else pair.y_ensemble()
        return verify.wiener_marginal_test(ens, alpha=float(t.get("alpha", 0.01)))
    if name == "certificate":
        tol = t.get("tol")
        return verify.monge_certificate(
            pair,
            window=int(t.get("window", verify.DEFAULT_WINDOW)),
            tol=None if tol is None else float(tol),
        )
    if name == "adaptedness":
        return verify.adaptedness_probe(
            pair,
            k_neighbors=int(t.get("k_neighbors", 5)),
            threshold=float(t.get("threshold", 0.75)),
        )
    if name == "covariation":
        if "target" not in t:
            cfg.error("covariation", "the covariation test needs a 'target' (scalar or d x d)")
        rep = verify.realized_covariation(pair, window=int(t.get("window", verify.DEFAULT_WINDOW)))
        target = np.asarray(t["target"], dtype=float)
        if target.ndim == 0:
            target = float(target) * np.eye(pair.d)
        dev = float(np.max(np.abs(rep.terminal_mean - target)))
        budget = float(3.0 * np.max(rep.terminal_stderr) + 2.0 * math.sqrt(pair.grid.dt))
        return TestReport(
            name="realized_covariation",
            statistic=dev,
            threshold=budget,
            comparison="<=",
            passed=dev <= budget,
            n_paths=pair.n_pairs,
            n_steps=pair.grid.n_steps,
            seed=pair.seed,
            details={"target": target.tolist(), "terminal_mean": rep.terminal_mean.tolist()},
        )
    cfg.error("test", f"unknown verify test {name!r}; known: wiener, covariation, certificate, adaptedness")


def cmd_list_presets(_args) -> int:
    print(presets.list_presets())
    return EXIT_OK


# ---------------------------------------------------------------------------
# named experiments


def _resolve_experiment(name: str):
    path = Path(name)
    if path.suffix == ".json":
        if not path.exists():
            raise ConfigError(f"experiment config {name!r} does not exist")
        return path.stem, path
    pkg_dir = Path(__file__).parent / "experiments"
    candidate = pkg_dir / f"{name}.json"
    if candidate.exists():
        return name, candidate
    known = ", ".join(sorted(p.stem for p in pkg_dir.glob("*.json")))
    raise ConfigError(f"unknown experiment {name!r}; available: {known}")


_OVERRIDES = (
    ("a", "a"),
    ("b", "b"),
    ("n_paths", "N"),
    ("n_steps", "n_steps"),
    ("seed", "seed"),
    ("c", "c"),
    ("block", "block"),
    ("window", "window"),
    ("d", "d"),
)


def _apply_overrides(data: dict, args) -> None:
    for attr, key in _OVERRIDES:
        value = getattr(args, attr, None)
        if value is not None:
            data[key] = value


def cmd_experiment(args) -> int:
    name, path = _resolve_experiment(args.name)
    cfg = load_config(path)
    _apply_overrides(cfg.data, args)
    kind = cfg.data.get("kind")
    runner = _EXPERIMENTS.get(kind)
    if runner is None:
        cfg.error("kind", f"unknown experiment kind {kind!r}; known: {', '.join(sorted(_EXPERIMENTS))}")
    result = _py(runner(cfg.data, args))
    out = _out_dir(args)
    report_path = out / f"{name}-report.json"
    pathio.write_json(report_path, result)
    print(f"wrote {report_path}")
    if not args.check:
        return EXIT_OK
    failures = _run_checks(cfg, cfg.data.get("checks", []), result)
    return EXIT_CHECK if failures else EXIT_OK


def _field(cfg: Config, result: dict, key):
    if key not in result:
        cfg.error("checks", f"check references unknown result field {key!r}")
    return result[key]


def _run_checks(cfg: Config, checks, result) -> int:
    if not isinstance(checks, list):
        cfg.error("checks", "'checks' must be a list")
    failures = 0
    for spec in checks:
        ok, desc = _eval_check(cfg, spec, result)
        print(f"CHECK {'ok  ' if ok else 'FAIL'} {desc}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} of {len(checks)} checks failed")
    else:
        print(f"all {len(checks)} checks passed")
    return failures


def _eval_check(cfg: Config, spec, result):
    if not isinstance(spec, dict) or "check" not in spec:
        cfg.error("checks", "each check must be an object with a 'check' type")
    kind = spec["check"]
    field = spec.get("field")
    if kind == "close":
        value = float(_field(cfg, result, field))
        target = float(spec["target"]) if "target" in spec else float(_field(cfg, result, spec["target_field"]))
        tol = float(spec.get("tol", 0.0))
        if "tol_field" in spec:
            tol += float(spec.get("tol_scale", 1.0)) * float(_field(cfg, result, spec["tol_field"]))
        dev = abs(value - target)
        return dev <= tol, f"{field}={value:.6g} within {tol:.3g} of {target:.6g} (dev {dev:.3g})"
    if kind in ("le", "ge"):
        value = float(_field(cfg, result, field))
        bound = float(spec["bound"]) if "bound" in spec else float(_field(cfg, result, spec["bound_field"]))
        if "slack_field" in spec:
            bound += float(spec.get("slack_scale", 1.0)) * float(_field(cfg, result, spec["slack_field"]))
        ok = value <= bound if kind == "le" else value >= bound
        op = "<=" if kind == "le" else ">="
        return ok, f"{field}={value:.6g} {op} {bound:.6g}"
    if kind == "true":
        value = bool(_field(cfg, result, field))
        return value, f"{field} is {value}"
    if kind == "equals":
        value = _field(cfg, result, field)
        return value == spec.get("value"), f"{field}={value!r} == {spec.get('value')!r}"
    if kind == "decreasing":
        seq = list(_field(cfg, result, field))
        ok = all(b < a for a, b in zip(seq, seq[1:]))
        return ok, f"{field}={['%.4g' % v for v in seq]} strictly decreasing"
    cfg.error("checks", f"unknown check type {kind!r}")


def _zero_identity_spec(d):
    h = presets.build("h", "zero", d=d)
    g = presets.build("g", "identity", d=d)
    return cost.CostSpec.separable(h, g, label="separable(h=zero, g=identity)")


def _probe_from(src, n_steps, probe_n, seed):
    grid = sde.TimeGrid(n_steps)
    return sde.ito_map(src, sde.sample_brownian(grid, src.dim, probe_n, seed))


def _run_closed_form_d1(data, args):
    a = float(data.get("a", 2.0))
    b = float(data.get("b", 1.0))
    n_pairs = int(data.get("N", 10_000))
    n_steps = int(data.get("n_steps", 1024))
    seed = int(data.get("seed", 7))
    grid = sde.TimeGrid(n_steps)
    src = presets.build("model", "bm", d=1, sigma=a)
    dst = presets.build("model", "bm", d=1, sigma=b)
    spec = _zero_identity_spec(1)
    closed, q_star = cost.closed_form_optimal(
        src, dst, spec, _probe_from(src, n_steps, int(data.get("probe_N", 8)), seed + 1)
    )
    pair = coupling.monge_sde(
        dst.drift, dst.diffusion, q_star, src, grid, n_pairs, seed, n_workers=args.threads
    )
    est = cost.estimate(pair, spec, src=src, dst=dst)
    return {
        "kind": data["kind"],
        "a": a,
        "b": b,
        "N": n_pairs,
        "n_steps": n_steps,
        "seed": seed,
        "oracle": (a - b) ** 2,
        "closed_form": closed.mean,
        "estimate": est.mean,
        "stderr": est.stderr,
        "gap": est.mean - closed.mean,
    }


def _run_closed_form_d2(data, args):
    sigma = np.asarray(data.get("sigma", [[2.0, 0.0], [0.0, 1.0]]), dtype=float)
    sigma_bar = np.asarray(data.get("sigma_bar", [[1.0, 0.0], [0.0, 1.0]]), dtype=float)
    n_pairs = int(data.get("N", 10_000))
    n_steps = int(data.get("n_steps", 512))
    seed = int(data.get("seed", 11))
    grid_points = int(data.get("grid_points", 10_000))
    grid = sde.TimeGrid(n_steps)
    src = presets.build("model", "const-matrix", d=2, sigma=sigma.tolist())
    dst = presets.build("model", "const-matrix", d=2, sigma=sigma_bar.tolist())
    spec = _zero_identity_spec(2)
    probe = _probe_from(src, n_steps, int(data.get("probe_N", 8)), seed + 1)
    closed, q_star = cost.closed_form_optimal(src, dst, spec, probe)

    # cross-check the trace maximiser against a brute-force O(2) scan
    xi = psd_sqrt(sigma_bar @ sigma_bar.T)
    probed = sigma @ xi
    _, svd_value = trace_max_rotation(probed)
    _, grid_value = rotation_grid_max(probed, n_points=grid_points)
    qstar_dev = 0.0
    for k in (0, n_steps // 2, n_steps - 1):
        q = q_star.eval(k, k * grid.dt, probe.values[0, : k + 1])
        qstar_dev = max(qstar_dev, float(np.max(np.abs(q - np.eye(2)))))

    pair = coupling.monge_sde(
        dst.drift, dst.diffusion, q_star, src, grid, n_pairs, seed, n_workers=args.threads
    )
    est = cost.estimate(pair, spec, src=src, dst=dst)
    return {
        "kind": data["kind"],
        "sigma": sigma.tolist(),
        "sigma_bar": sigma_bar.tolist(),
        "N": n_pairs,
        "n_steps": n_steps,
        "seed": seed,
        "closed_form": closed.mean,
        "estimate": est.mean,
        "stderr": est.stderr,
        "gap": est.mean - closed.mean,
        "qstar_max_dev": qstar_dev,
        "trace_max_value": svd_value,
        "grid_value": grid_value,
        "grid_gap": abs(svd_value - grid_value),
    }


def _run_rotation_invariance(data, args):
    n_pairs = int(data.get("N", 2000))
    n_steps = int(data.get("n_steps", 256))
    n_seeds = int(data.get("n_seeds", 20))
    seed0 = int(data.get("seed", 100))
    alpha = float(data.get("alpha", 0.01))
    scale = float(data.get("scale", 1.0))
    d = int(data.get("d", 2))
    grid = sde.TimeGrid(n_steps)
    q = presets.build("rotation", "rotation-by-state", d=d, scale=scale)
    passes = 0
    worst = 0.0
    for i in range(n_seeds):
        driver = sde.sample_brownian(grid, d, n_pairs, seed0 + i, n_workers=args.threads)
        pair = coupling.rotation_monge(q, driver)
        rep = verify.wiener_marginal_test(pair.y_ensemble(), alpha=alpha)
        passes += int(rep.passed)
        worst = max(worst, rep.statistic - rep.threshold)
    return {
        "kind": data["kind"],
        "N": n_pairs,
        "n_steps": n_steps,
        "n_seeds": n_seeds,
        "alpha": alpha,
        "pass_rate": passes / n_seeds,
        "worst_excess": worst,
    }


def _run_tanaka(data, args):
    n_pairs = int(data.get("N", 2000))
    n_steps = int(data.get("n_steps", 4096))
    seed = int(data.get("seed", 5))
    window = int(data.get("window", verify.DEFAULT_WINDOW))
    grid = sde.TimeGrid(n_steps)
    pair = coupling.tanaka_coupling(grid, n_pairs, seed, n_workers=args.threads)
    cert = verify.monge_certificate(pair, window=window)
    wien = verify.wiener_marginal_test(pair.x_ensemble(), alpha=float(data.get("alpha", 0.01)))
    probe = verify.adaptedness_probe(pair)
    return {
        "kind": data["kind"],
        "N": n_pairs,
        "n_steps": n_steps,
        "seed": seed,
        "certificate_passed": cert.passed,
        "certificate_statistic": cert.statistic,
        "wiener_passed": wien.passed,
        "wiener_statistic": wien.statistic,
        "adaptedness_failed": not probe.passed,
        "adaptedness_accuracy": probe.statistic,
    }


def _run_rho_recovery(data, args):
    n_pairs = int(data.get("N", 4000))
    n_steps = int(data.get("n_steps", 256))
    seed = int(data.get("seed", 21))
    grid = sde.TimeGrid(n_steps)
    cases = data.get("cases")
    if not isinstance(cases, list) or not cases:
        raise ConfigError("rho-recovery config needs a non-empty 'cases' list")
    rows = []
    worst = -math.inf
    for case in cases:
        d = int(case.get("d", 1))
        if "c" in case:
            rho = presets.build("correlation", "const", d=d, c=case["c"])
            target = np.asarray(case["c"], dtype=float)
            if target.ndim == 0:
                target = float(target) * np.eye(d)
        else:
            rho = presets.build(
                "correlation", "scaled-rotation", d=d,
                scale=case["scale"], theta=case["theta"],
            )
            th, sc = float(case["theta"]), float(case["scale"])
            target = sc * np.array(
                [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
            )
        pair = coupling.couple_brownians(rho, grid, n_pairs, seed, n_workers=args.threads)
        rep = verify.realized_covariation(pair)
        dev = float(np.max(np.abs(rep.terminal_mean - target)))
        budget = float(3.0 * np.max(rep.terminal_stderr) + 2.0 * math.sqrt(grid.dt))
        rows.append({
            "case": case,
            "max_dev": dev,
            "budget": budget,
            "terminal_mean": rep.terminal_mean.tolist(),
        })
        worst = max(worst, dev - budget)
        seed += 1
    return {
        "kind": data["kind"],
        "N": n_pairs,
        "n_steps": n_steps,
        "cases": rows,
        "worst_excess": worst,
    }


def _run_rotation_chop_density(data, args):
    c = float(data.get("c", 0.5))
    block = int(data.get("block", 16))
    n_pairs = int(data.get("N", 4000))
    seed = int(data.get("seed", 33))
    n_list = [int(n) for n in data.get("n_list", [256, 1024, 4096])]
    mads = []
    cov_err = cov_budget = None
    for n_steps in n_list:
        grid = sde.TimeGrid(n_steps)
        pair = coupling.rotation_chop(c, grid, n_pairs, seed, block, n_workers=args.threads)
        dx = np.diff(pair.x, axis=1)
        dy = np.diff(pair.y, axis=1)
        bracket = np.einsum("pkd,pkd->p", dx, dy)
        target = pair.provenance["achieved_c"]
        mads.append(float(np.mean(np.abs(bracket - target))))
        x1 = pair.x[:, -1, 0]
        y1 = pair.y[:, -1, 0]
        prods = (x1 - x1.mean()) * (y1 - y1.mean())
        cov = float(prods.mean() * n_pairs / (n_pairs - 1))
        cov_err = abs(cov - target)
        cov_budget = 3.0 * float(np.std(prods, ddof=1) / math.sqrt(n_pairs))
    return {
        "kind": data["kind"],
        "c": c,
        "block": block,
        "N": n_pairs,
        "n_list": n_list,
        "mad": mads,
        "mad_final": mads[-1],
        "cov_error": cov_err,
        "cov_budget": cov_budget,
    }


def _run_kernel_infeasibility(data, args):
    n_pairs = int(data.get("N", 1000))
    n_steps = int(data.get("n_steps", 256))
    seed = int(data.get("seed", 42))
    grid = sde.TimeGrid(n_steps)
    degenerate = np.diag([1.0, 0.0])
    identity = np.eye(2)

    fwd = coupling.feasibility_check([degenerate], [identity])
    rev = coupling.feasibility_check([identity], [degenerate])

    src_ok = presets.build("model", "const-matrix", d=2, sigma=[[2.0, 0.0], [0.0, 1.0]])
    dst = presets.build("model", "bm", d=2)
    q = coupling.RotationProcess.identity(2)
    invertible = coupling.monge_sde(
        dst.drift, dst.diffusion, q, src_ok, grid, n_pairs, seed, n_workers=args.threads
    )
    src_bad = presets.build("model", "degenerate", d=2, rank=1)
    obstructed = coupling.monge_sde(
        dst.drift, dst.diffusion, q, src_bad, grid, n_pairs, seed + 1, n_workers=args.threads
    )
    return {
        "kind": data["kind"],
        "N": n_pairs,
        "n_steps": n_steps,
        "verdict_obstructed": fwd.verdict,
        "verdict_reverse": rev.verdict,
        "residual_invertible": invertible.provenance["kernel_residual"],
        "residual_obstructed": obstructed.provenance["kernel_residual"],
    }


def _run_synchronous_1d(data, args):
    n_pairs = int(data.get("N", 4000))
    n_steps = int(data.get("n_steps", 512))
    seed = int(data.get("seed", 17))
    p = float(data.get("p", 2.0))
    grid = sde.TimeGrid(n_steps)
    src = presets.build("model", "ou", d=1, **data.get("src_params", {"theta": 1.0, "mean": 0.0, "z0": 1.0}))
    dst = presets.build("model", "ou", d=1, **data.get("dst_params", {"theta": 2.0, "mean": 0.5, "z0": 0.0}))
    spec = cost.CostSpec.lp(p)

    def run(c):
        rho = coupling.CorrelationProcess.constant(c, d=1)
        pair = coupling.couple_sdes(src, dst, rho, grid, n_pairs, seed, n_workers=args.threads)
        return cost.estimate(pair, spec)

    sync = run(1.0)
    others = {name: run(c) for name, c in (("antithetic", -1.0), ("independent", 0.0), ("mid", 0.5))}
    worst = -math.inf
    result = {
        "kind": data["kind"],
        "N": n_pairs,
        "n_steps": n_steps,
        "seed": seed,
        "p": p,
        "synchronous": sync.mean,
        "synchronous_stderr": sync.stderr,
    }
    for name, est in others.items():
        combined = math.hypot(sync.stderr, est.stderr)
        margin = sync.mean - (est.mean - 3.0 * combined)
        result[name] = est.mean
        result[f"{name}_stderr"] = est.stderr
        result[f"{name}_margin"] = margin
        worst = max(worst, margin)
    result["worst_margin"] = worst
    return result


_EXPERIMENTS = {
    "closed-form-d1": _run_closed_form_d1,
    "closed-form-d2": _run_closed_form_d2,
    "rotation-invariance": _run_rotation_invariance,
    "tanaka": _run_tanaka,
    "rho-recovery": _run_rho_recovery,
    "rotation-chop-density": _run_rotation_chop_density,
    "kernel-infeasibility": _run_kernel_infeasibility,
    "synchronous-1d-optimality": _run_synchronous_1d,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathcoupling",
        description="Construct, simulate and score couplings of SDE laws on path space.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker count for path generation")
    common.add_argument(
        "--format", choices=("csv", "bin", "json"), default=None,
        help="restrict artifacts to one format (default: write all that apply)",
    )

    p = sub.add_parser("simulate", parents=[common], help="simulate one model law and write the ensemble")
    p.add_argument("--preset", default="bm", help="model preset name (see list-presets)")
    p.add_argument("--d", type=int, default=1, help="state dimension")
    p.add_argument("--n", dest="n_steps", type=int, default=256, help="number of grid steps")
    p.add_argument("--N", dest="n_paths", type=int, default=1000, help="number of paths")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="preset parameter (JSON value; repeatable)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("couple", parents=[common], help="construct a coupled ensemble from a config")
    p.add_argument("--config", required=True, help="path to a JSON run config")
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("cost", parents=[common], help="estimate a coupling cost from a config")
    p.add_argument("--config", required=True, help="path to a JSON run config")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("verify", parents=[common], help="run statistical checks from a config")
    p.add_argument("--config", required=True, help="path to a JSON run config")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", parents=[common], help="run a named experiment config")
    p.add_argument("name", help="experiment name or path to a config JSON")
    p.add_argument("--check", action="store_true", help="evaluate the config's acceptance checks (exit 4 on failure)")
    p.add_argument("--a", type=float, default=None, help="override source volatility a")
    p.add_argument("--b", type=float, default=None, help="override target volatility b")
    p.add_argument("--N", dest="n_paths", type=int, default=None, help="override the pair count")
    p.add_argument("--n", dest="n_steps", type=int, default=None, help="override the step count")
    p.add_argument("--c", type=float, default=None, help="override the correlation parameter")
    p.add_argument("--block", type=int, default=None, help="override the chop block size")
    p.add_argument("--w", dest="window", type=int, default=None, help="override the certificate window")
    p.add_argument("--d", type=int, default=None, help="override the dimension")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("list-presets", help="print the preset registry")
    p.set_defaults(func=cmd_list_presets)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
