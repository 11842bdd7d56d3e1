"""Command-line harness: ``run``, ``verify``, ``sweep`` and ``list``.

Exit status: 0 when every asserted identity holds, 2 on an assertion
failure, 3 on a configuration or precondition error, 4 on a numeric error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import action_only as ao
from . import bandit, dp, gallery, targets, verification
from .config import SCHEMA, TARGETS, build_system, load_config, set_path, validate_config
from .errors import (
    ConditioningError,
    ConfigError,
    DomainError,
    NumericError,
    OverlapError,
    RegimeError,
    SupportInstabilityError,
)

log = logging.getLogger("adaptive_attribution")

WORKERS_ENV = "ADAPTIVE_ATTRIBUTION_WORKERS"
MAX_GRID = 100_000
EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4

ROW_HEADER = ["experiment", "quantity", "index", "method", "value", "residual", "tolerance", "status"]
SEPARATION_HEADER = ["mu0", "eta2", "replay", "intervention", "flip_witness"]
MC_HEADER = ["epsilon", "estimate", "se", "n", "seed"]


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


@dataclass
class Result:
    header: list
    rows: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    failures: int = 0

    def check(self, exp, quantity, index, method, value, residual, tol):
        ok = abs(residual) <= tol
        self.failures += not ok
        self.rows.append([exp, quantity, index, method, value, residual, tol, "PASS" if ok else "FAIL"])

    def info(self, exp, quantity, index, method, value):
        self.rows.append([exp, quantity, index, method, value, None, None, "INFO"])


def _agree_tol(value, scale):
    """Cross-method tolerance: 1e-5 relative or 1e-7 absolute, whichever is looser."""
    return max(1e-7, 1e-5 * abs(value)) * scale


def _plain(obj):
    return obj.system if isinstance(obj, ao.FactorizedSystem) else obj


def _occurrence(cfg, system):
    t = cfg["t"]
    if "prefix" not in cfg:
        raise ConfigError("this target needs a prefix")
    prefix = tuple(cfg["prefix"])
    try:
        system.space.validate(prefix)
    except DomainError as exc:
        raise ConfigError(f"prefix: {exc}") from None
    if len(prefix) != t:
        raise ConfigError(f"prefix length {len(prefix)} does not match t={t}")
    return t, prefix


def evaluate(cfg: dict, seed: int, scale: float) -> Result:
    """Compute one experiment; pure apart from its return value."""
    target, exp = cfg["target"], cfg["id"]
    log.debug("evaluating %s (%s) seed=%d", exp, target, seed)
    if target == "separation":
        return _separation(cfg)
    if target == "certificate":
        eps = cfg["eps"][0]
        cert = gallery.insufficiency_certificate(cfg["gamma_a"], cfg["gamma_b"], eps)
        res = Result(ROW_HEADER)
        res.check(exp, "oracle_max_deviation", "", "table", cert["oracle_max_deviation"],
                  cert["oracle_max_deviation"], 0.0)
        for g, p, i in zip(cert["gammas"], cert["psi"], cert["influence"]):
            res.info(exp, f"psi[gamma={g:g}]", eps, "enumeration", p)
            res.check(exp, f"influence[gamma={g:g}]", "", "analytic", i, i - g / 4, 1e-12 * scale)
        res.files[f"{exp}.json"] = json.dumps(cert, indent=2, sort_keys=True) + "\n"
        return res
    obj = build_system(cfg)
    system = _plain(obj)
    t, prefix = _occurrence(cfg, system)
    if target == "mc":
        if not isinstance(obj, ao.FactorizedSystem) or not obj.is_action_only():
            raise ConfigError("target 'mc' needs an action-only system")
        res = Result(MC_HEADER)
        for e in cfg["eps"]:
            m = ao.mc_psi(obj, t, e, prefix, cfg["n"], seed)
            res.rows.append([m.epsilon, m.estimate, m.se, m.n, m.seed])
        return res
    res = Result(ROW_HEADER)
    mode = cfg["mode"]
    if target == "psi":
        for e in cfg["eps"]:
            res.info(exp, "psi", e, "enumeration", targets.psi(system, t, e, prefix))
    elif target == "replay":
        if "log" in cfg:
            full = tuple(cfg["log"])
            if full[:t] != prefix:
                raise ConfigError("log must extend the prefix")
            a = targets.replay_influence(system, t, full, "analytic")
            f = targets.replay_influence(system, t, full, "fd")
            quantity = "replay_influence"
        else:
            a = targets.conditional_expected_replay(system, t, prefix, "analytic")
            f = targets.conditional_expected_replay(system, t, prefix, "fd")
            quantity = "conditional_expected_replay"
        res.info(exp, quantity, "", "analytic", a)
        res.check(exp, quantity, "", "fd", f, f - a, _agree_tol(a, scale))
    elif target == "interventional":
        a = targets.interventional_influence(system, t, prefix, "analytic")
        f = targets.interventional_influence(system, t, prefix, "fd")
        res.info(exp, "interventional_influence", "", "analytic", a)
        res.check(exp, "interventional_influence", "", "fd", f, f - a, _agree_tol(a, scale))
    elif target == "decomposition":
        d = targets.structural_decomposition(system, t, prefix, mode)
        tol = (1e-8 if mode == "analytic" else 1e-6) * scale
        res.info(exp, "replay_term", "", mode, d.replay_term)
        res.info(exp, "future_law_term", "", mode, d.future_law_term)
        res.info(exp, "centered_future_law_term", "", mode, d.centered_future_law_term)
        res.check(exp, "total", "", mode, d.total, d.residual, tol)
        res.check(exp, "dot_q_sum", "", mode, d.dot_q_sum, d.dot_q_sum, 1e-10 * scale)
    elif target == "depth-L":
        horizon = system.T - t
        Ls = cfg.get("L", list(range(horizon + 1)))
        if any(L > horizon for L in Ls):
            raise ConfigError(f"L values must lie in 0..{horizon}")
        tree = dp.ContinuationTree(system, t, prefix, rng=np.random.default_rng(seed))
        rep = targets.conditional_expected_replay(system, t, prefix)
        for L in sorted(Ls):
            an = dp.depth_L_influence(system, t, prefix, L)
            fd = dp.depth_L_influence(system, t, prefix, L, "fd")
            b = dp.truncation_bounds(system, t, prefix, L, tree=tree)
            res.info(exp, "depth_L_influence", L, "analytic", an)
            res.check(exp, "depth_L_influence", L, "fd", fd, fd - an, _agree_tol(an, scale))
            res.check(exp, "depth_L_identity", L, "analytic", an, tree.root.g - an - b.exact_tail, 1e-8 * scale)
            res.info(exp, "exact_tail", L, "analytic", b.exact_tail)
            res.check(exp, "oscillation_bound", L, b.tv_method, b.oscillation_bound,
                      0.0 if b.chain_holds() else max(abs(b.exact_tail) - b.oscillation_bound,
                                                      b.oscillation_bound - b.uniform_bound), 0.0)
            res.info(exp, "uniform_bound", L, b.tv_method, b.uniform_bound)
            if L == 0:
                res.check(exp, "endpoint_replay", L, "analytic", an, an - rep, 1e-8 * scale)
            if L == horizon:
                res.check(exp, "endpoint_interventional", L, "analytic", an, an - tree.root.g, 1e-8 * scale)
    else:
        raise ConfigError(f"unknown target {target!r}")
    return res


def _separation(cfg) -> Result:
    kw = {"q": cfg["q"], "mu1": cfg["mu1"]}
    if "eta1" in cfg:
        kw["eta1"] = cfg["eta1"]
    rows = bandit.separation_table(cfg.get("eta2", [1.5, 2.0, 3.0]), cfg.get("mu0"), **kw)
    res = Result(SEPARATION_HEADER)
    for r in rows:
        witness = ""
        if r.witness is not None:
            witness = ";".join(f"a={a},r={rr}" for _, a, rr in r.witness.payload)
        res.rows.append([r.mu0, r.eta2, r.replay, r.intervention, witness])
    return res


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_atomic(out_dir: str, files: dict):
    """Stage every file in ``out_dir`` first, then move them all into place."""
    os.makedirs(out_dir, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp-", suffix="-" + name)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(out_dir, name)))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _grid_values(axes) -> list:
    if isinstance(axes, dict):
        return [float(v) for v in np.linspace(axes["start"], axes["stop"], axes["num"])]
    return list(axes)


_LIST_KEYS = {"eps", "L", "mu0", "eta2"}


def _point_config(cfg, names, values):
    point = copy.deepcopy(cfg)
    point.pop("sweep", None)
    for name, v in zip(names, values):
        if name in _LIST_KEYS:
            v = [int(v)] if name == "L" else [v]
        elif name in ("t", "n", "seed"):
            v = int(v)
        set_path(point, name, v)
    return validate_config(point)


def _sweep_point(args):
    cfg, seed, scale = args
    return evaluate(cfg, seed, scale)


def sweep(cfg, seed, scale, workers) -> Result:
    axes = cfg.get("sweep")
    if not axes:
        raise ConfigError("sweep needs a 'sweep' section")
    if cfg["target"] == "certificate":
        raise ConfigError("certificates cannot be swept")
    names = list(axes)
    grids = [_grid_values(axes[n]) for n in names]
    size = math.prod(len(g) for g in grids)
    if size > MAX_GRID:
        raise ConfigError(f"sweep grid has {size} points; the limit is {MAX_GRID}")
    points = list(itertools.product(*grids))
    configs = [_point_config(cfg, names, p) for p in points]
    jobs = [(c, seed, scale) for c in configs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    # parameters the target already reports are not repeated
    keep = [i for i, n in enumerate(names) if n not in results[0].header]
    out = Result([names[i] for i in keep] + results[0].header)
    for p, r in zip(points, results):
        out.failures += r.failures
        out.rows.extend([p[i] for i in keep] + row for row in r.rows)
    return out


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def _guarded(fn):
    """Map package errors onto the exit-status contract."""
    try:
        return fn()
    except (ConfigError, DomainError, ConditioningError, OverlapError, RegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SupportInstabilityError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AssertionError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT


def _settings(args, cfg):
    seed = args.seed if args.seed is not None else cfg["seed"]
    return seed, args.tolerance_scale, args.out


def cmd_run(args) -> int:
    def go():
        cfg = load_config(args.config)
        seed, scale, out = _settings(args, cfg)
        res = evaluate(cfg, seed, scale)
        files = dict(res.files)
        files[f"{cfg['id']}.csv"] = render_csv(res.header, res.rows)
        write_atomic(out, files)
        _summary(res, files, out)
        return EXIT_ASSERT if res.failures else EXIT_OK
    return _guarded(go)


def cmd_sweep(args) -> int:
    def go():
        cfg = load_config(args.config)
        seed, scale, out = _settings(args, cfg)
        res = sweep(cfg, seed, scale, _workers(args))
        files = {f"{cfg['id']}-sweep.csv": render_csv(res.header, res.rows)}
        write_atomic(out, files)
        _summary(res, files, out)
        return EXIT_ASSERT if res.failures else EXIT_OK
    return _guarded(go)


def _summary(res, files, out):
    for name in sorted(files):
        print(f"wrote {os.path.join(out, name)}")
    print(f"{len(res.rows)} rows, {res.failures} failed checks")


def cmd_verify(args) -> int:
    if args.suite != "all" and args.suite not in verification.SUITES:
        print(f"error: unknown suite {args.suite!r}; choose from all, {', '.join(verification.SUITES)}",
              file=sys.stderr)
        return EXIT_CONFIG

    def go():
        seed = args.seed or 0
        checks = verification.run_suite(args.suite, seed=seed, scale=args.tolerance_scale)
        for c in checks:
            status = "PASS" if c.passed else "FAIL"
            extra = f"  [{c.detail}]" if c.detail else ""
            print(f"{status}  {c.suite:<12} {c.name:<52} max={c.residual:.3e} tol={c.tolerance:.1e}{extra}")
        failed = sum(not c.passed for c in checks)
        print(f"{len(checks) - failed}/{len(checks)} invariants passed")
        if args.out:
            rows = [[c.suite, c.name, float(c.residual), float(c.tolerance), "PASS" if c.passed else "FAIL", c.detail]
                    for c in checks]
            write_atomic(args.out, {f"verify-{args.suite}.csv": render_csv(
                ["suite", "invariant", "residual", "tolerance", "status", "detail"], rows)})
        return EXIT_ASSERT if failed else EXIT_OK
    return _guarded(go)


def cmd_list(args) -> int:
    if args.schema:
        print(json.dumps(SCHEMA, indent=2))
        return EXIT_OK
    print("systems:")
    for name, params in gallery.registry_entries():
        print(f"  {name}({', '.join(params)})")
    print("targets: " + ", ".join(TARGETS))
    print("suites: all, " + ", ".join(verification.SUITES))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="reports", help="output directory (default: reports)")
    common.add_argument("--seed", type=int, default=None, help="master seed; overrides the config")
    common.add_argument("--workers", type=int, default=None,
                        help=f"parallel workers (default: ${WORKERS_ENV} or 1)")
    common.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every tolerance")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="adaptive-attribution", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one experiment config")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", parents=[common], help="evaluate a config over a parameter grid")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_sweep)
    v = sub.add_parser("verify", parents=[common], help="run invariant suites")
    v.add_argument("suite", nargs="?", default="all")
    v.set_defaults(func=cmd_verify, out=None)
    li = sub.add_parser("list", help="list registered systems, targets and suites")
    li.add_argument("--schema", action="store_true", help="print the config JSON schema")
    li.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which is reserved for failed assertions
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
