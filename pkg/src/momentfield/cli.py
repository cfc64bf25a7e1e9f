"""Batch driver: ``momentfield <command> --config <path> [--out-dir] [--seed] [--threads]``.

Commands write ``field.csv`` (two-time moment field), ``diag.csv`` (equal-time
slices) and ``summary.json`` into the output directory. The exit status is 0
exactly when every check in the summary passed.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .errors import CapacityError, ConditionError, MomentFieldError, ValidationError
from .linalg import PSD_RTOL, is_psd
from .moment import (
    TensorDuhamel,
    boundary_residual,
    delta_q_membership,
    exchange_symmetric,
    gram_psd,
    solve_second_moment,
    variational_residuals,
    xnorm_squared,
)
from .polynomial import TimePolynomial
from .random_pde import (
    cross_term_estimate,
    simulate_random_solutions,
    solve_random_covariance,
    solve_random_second_moment,
)
from .simulator import isometry_checks, mc_covariance, mc_second_moment, simulate_paths

COMMANDS = ("solve", "simulate", "verify", "isometry", "randpde", "report")
GRAM_LIMIT = (3, 16)  # (K, N) up to which the full Gram-matrix PSD check runs
DEFAULT_OUT_DIR = "momentfield-out"

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_CONDITION = 4
EXIT_ERROR = 5


@dataclass
class Check:
    name: str
    computed: float
    target: float
    passed: bool
    comparison: str
    tolerance: Optional[float] = None
    se_multiplier: Optional[float] = None

    def to_json(self) -> dict:
        out = {"name": self.name, "computed": _finite(self.computed),
               "target": _finite(self.target), "comparison": self.comparison}
        if self.tolerance is not None:
            out["tolerance"] = self.tolerance
        if self.se_multiplier is not None:
            out["se_multiplier"] = self.se_multiplier
        out["pass"] = bool(self.passed)
        return out


def _finite(x):
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


# -- CSV output -------------------------------------------------------------


def write_field_csv(path: Path, values: np.ndarray, nodes: np.ndarray,
                    stderr: Optional[np.ndarray] = None, time_pairs=None) -> None:
    """Write a moment field, row-major over ``(k, l, i, j)``.

    ``values`` is ``(K, K, N+1, N+1)``, or ``(K, K, P)`` with ``time_pairs``
    naming the ``(i, j)`` of each slice.
    """
    K = values.shape[0]
    if time_pairs is None:
        n = values.shape[2]
        time_pairs = [(i, j) for i in range(n) for j in range(n)]
        values = values.reshape(K, K, -1)
        if stderr is not None:
            stderr = stderr.reshape(K, K, -1)
    t = nodes.tolist()
    vals = values.tolist()
    errs = stderr.tolist() if stderr is not None else None
    header = "k,l,i,j,t,tprime,value" + (",stderr" if errs is not None else "")
    lines = [header]
    for k in range(K):
        for l in range(K):
            row_v = vals[k][l]
            row_e = errs[k][l] if errs is not None else None
            for p, (i, j) in enumerate(time_pairs):
                line = f"{k},{l},{i},{j},{t[i]!r},{t[j]!r},{row_v[p]!r}"
                if row_e is not None:
                    line += f",{row_e[p]!r}"
                lines.append(line)
    path.write_text("\n".join(lines) + "\n")


def write_diag_csv(path: Path, values: np.ndarray, nodes: np.ndarray,
                   stderr: Optional[np.ndarray] = None) -> None:
    """Equal-time slices ``values[k, l, i]`` as ``k,l,i,t,value[,stderr]``."""
    K, _, n = values.shape
    t = nodes.tolist()
    vals = values.tolist()
    errs = stderr.tolist() if stderr is not None else None
    header = "k,l,i,t,value" + (",stderr" if errs is not None else "")
    lines = [header]
    for k in range(K):
        for l in range(K):
            for i in range(n):
                line = f"{k},{l},{i},{t[i]!r},{vals[k][l][i]!r}"
                if errs is not None:
                    line += f",{errs[k][l][i]!r}"
                lines.append(line)
    path.write_text("\n".join(lines) + "\n")


def read_field_csv(path: Path) -> dict:
    """Read a field CSV back into column arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for a, name in enumerate(header):
        conv = int if name in ("k", "l", "i", "j") else float
        cols[name] = np.array([conv(r[a]) for r in body])
    return cols


def _diagonal(values: np.ndarray) -> np.ndarray:
    return np.einsum("klii->kli", values)


def _equal_time_pairs(values: np.ndarray, time_pairs) -> np.ndarray:
    """``(K, K, n)`` equal-time slices from a full or sliced field."""
    if time_pairs is None:
        return _diagonal(values)
    idx = [p for p, (i, j) in enumerate(time_pairs) if i == j]
    return values[:, :, idx]


# -- checks -----------------------------------------------------------------


def _psd_checks(label: str, values: np.ndarray, K: int, N: int, time_pairs=None,
                rtol: float = PSD_RTOL) -> list[Check]:
    et = _equal_time_pairs(values, time_pairs)
    ok = all(is_psd(et[:, :, i], rtol) for i in range(et.shape[2]))
    out = [Check(f"{label}_equal_time_psd", float(ok), 1.0, ok, "min eigenvalue >= -tol*max",
                 tolerance=rtol)]
    if time_pairs is None and K <= GRAM_LIMIT[0] and N <= GRAM_LIMIT[1]:
        g = gram_psd(values, rtol)
        out.append(Check(f"{label}_gram_psd", float(g), 1.0, g, "min eigenvalue >= -tol*max",
                         tolerance=rtol))
    return out


def _symmetry_check(label: str, values: np.ndarray, time_pairs=None) -> Check:
    if time_pairs is None:
        ok = exchange_symmetric(values)
    else:
        ok = all(np.array_equal(values[:, :, p], values[:, :, p].T)
                 for p, (i, j) in enumerate(time_pairs) if i == j)
    return Check(f"{label}_exchange_symmetry", float(ok), 1.0, ok, "bit-exact")


def _z_scores(estimate: np.ndarray, se: np.ndarray, target: np.ndarray) -> np.ndarray:
    gap = np.abs(estimate - target)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, gap / np.where(se > 0, se, 1.0), np.where(gap == 0, 0.0, np.inf))
    return z


def _mc_agreement_checks(label: str, est, target: np.ndarray, tol: dict) -> list[Check]:
    z = _z_scores(est.value, est.std_error, target)
    m = tol["se_multiplier"]
    mf, frac = tol["se_fraction_multiplier"], tol["se_fraction"]
    within = float(np.mean(z <= mf))
    return [
        Check(f"{label}_max_z", float(np.max(z)), m, bool(np.max(z) <= m),
              "max |mc - target| / se <= se_multiplier", se_multiplier=m),
        Check(f"{label}_fraction_within", within, frac, within >= frac,
              "fraction of entries with z <= se_multiplier >= target", se_multiplier=mf),
    ]


def _test_basis(op, T: float, max_power: int):
    return [(TimePolynomial.vanishing_at(T, a), k)
            for k in range(op.K) for a in range(max_power + 1)]


def _deterministic_checks(cfg: RunConfig, u: TensorDuhamel) -> list[Check]:
    tol = cfg.tolerances
    T = cfg.grid.T
    reports = variational_residuals(u, T, _test_basis(cfg.op, T, cfg.max_power),
                                    tolerance=tol["variational"])
    flat = [r for row in reports for r in row]
    worst = max(abs(r.residual) / r.scale for r in flat)
    checks = [Check("variational_residual", worst, 0.0, all(r.passed for r in flat),
                    "max |LHS - RHS| / max(1, |RHS|) <= tolerance", tolerance=tol["variational"])]
    b = boundary_residual(u, T)
    checks.append(Check("boundary_order", b.min_order, tol["boundary_order"],
                        b.min_order >= tol["boundary_order"], "observed order >= target"))
    checks.append(Check("boundary_origin", float(b.origin_exact), 1.0, b.origin_exact,
                        "u(0,0) == u0 bit-exact"))
    x = xnorm_squared(u, T)
    checks.append(Check("xnorm_bound", x.norm, x.bound, x.holds, "norm <= bound"))
    return checks


def _profile_check(cfg: RunConfig) -> list[Check]:
    if cfg.noise_profile is None:
        return []
    r = delta_q_membership(cfg.op, cfg.cov, cfg.noise_profile)
    return [Check("noise_profile_trace_class", r.profile_exponent, 3.0,
                  bool(r.profile_admissible), "decay exponent > target")]


# -- commands ---------------------------------------------------------------


class Run:
    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.out_dir = out_dir
        self.checks: list[Check] = []
        self.timings: dict[str, float] = {}
        self.files: list[str] = []
        self.extra: dict = {}

    @contextlib.contextmanager
    def timed(self, name: str):
        t0 = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - t0, 6)

    def emit(self, name: str, writer, *args, **kwargs):
        writer(self.out_dir / name, *args, **kwargs)
        self.files.append(name)

    def write_field(self, name, values, stderr=None, time_pairs=None):
        with self.timed(f"write_{name}"):
            self.emit(name, write_field_csv, values, self.cfg.grid.nodes, stderr, time_pairs)

    def write_diag(self, values, stderr=None, time_pairs=None):
        et = _equal_time_pairs(values, time_pairs)
        es = None if stderr is None else _equal_time_pairs(stderr, time_pairs)
        self.emit("diag.csv", write_diag_csv, et, self.cfg.grid.nodes, es)


def _solve(run: Run) -> None:
    cfg = run.cfg
    with run.timed("solve"):
        field = solve_second_moment(cfg.op, cfg.cov, cfg.init.second_moment(), cfg.grid)
    v = field.values
    run.write_field("field.csv", v)
    run.write_diag(v)
    run.checks.append(_symmetry_check("deterministic", v))
    run.checks += _psd_checks("deterministic", v, cfg.op.K, cfg.grid.N, rtol=cfg.tolerances["psd"])
    with run.timed("xnorm"):
        x = xnorm_squared(field.evaluator, cfg.grid.T)
    run.checks.append(Check("xnorm_bound", x.norm, x.bound, x.holds, "norm <= bound"))
    run.checks += _profile_check(cfg)


def _simulate(run: Run):
    cfg = run.cfg
    with run.timed("simulate"):
        ens = simulate_paths(cfg.op, cfg.cov, cfg.init, cfg.grid, cfg.M, cfg.master_seed,
                             threads=cfg.threads)
    with run.timed("estimate"):
        est = mc_second_moment(ens)
    return est


def _simulate_cmd(run: Run) -> None:
    cfg = run.cfg
    est = _simulate(run)
    run.write_field("field.csv", est.value, est.std_error, est.time_pairs)
    run.write_diag(est.value, est.std_error, est.time_pairs)
    run.checks.append(_symmetry_check("mc", est.value, est.time_pairs))
    run.checks += _psd_checks("mc", est.value, cfg.op.K, cfg.grid.N, est.time_pairs,
                              rtol=cfg.tolerances["psd"])


def _verify(run: Run) -> None:
    cfg = run.cfg
    with run.timed("solve"):
        field = solve_second_moment(cfg.op, cfg.cov, cfg.init.second_moment(), cfg.grid)
    with run.timed("deterministic_checks"):
        run.checks += _deterministic_checks(cfg, field.evaluator)
    est = _simulate(run)
    ref = field.values
    if est.time_pairs is not None:
        ref = np.stack([ref[:, :, i, j] for i, j in est.time_pairs], axis=-1)
    run.checks += _mc_agreement_checks("mc_vs_deterministic", est, ref, cfg.tolerances)
    K, N, rtol = cfg.op.K, cfg.grid.N, cfg.tolerances["psd"]
    run.checks.append(_symmetry_check("deterministic", field.values))
    run.checks.append(_symmetry_check("mc", est.value, est.time_pairs))
    run.checks += _psd_checks("deterministic", field.values, K, N, rtol=rtol)
    run.checks += _psd_checks("mc", est.value, K, N, est.time_pairs, rtol=rtol)
    run.checks += _profile_check(cfg)
    run.write_field("field.csv", est.value, est.std_error, est.time_pairs)
    run.write_field("reference.csv", field.values)
    run.write_diag(est.value, est.std_error, est.time_pairs)


def _default_isometry_pairs(K: int, T: float):
    p0 = TimePolynomial.vanishing_at(T, 0)
    p1 = TimePolynomial.vanishing_at(T, 1)
    p2 = TimePolynomial.vanishing_at(T, 2)
    k2 = min(1, K - 1)
    return [((p0, 0), (p0, 0)), ((p0, 0), (p1, 0)), ((p1, 0), (p2, 0)),
            ((p0, k2), (p0, k2)), ((p0, 0), (p0, k2)), ((p1, 0), (p2, k2))]


def _isometry(run: Run) -> None:
    cfg = run.cfg
    pairs = cfg.isometry_pairs or _default_isometry_pairs(cfg.op.K, cfg.grid.T)
    m = cfg.tolerances["se_multiplier"]
    with run.timed("isometry"):
        results = isometry_checks(cfg.op, cfg.cov, cfg.grid, pairs, cfg.M, cfg.master_seed, m)
    for a, ((v1, v2), r) in enumerate(zip(pairs, results)):
        run.checks.append(Check(f"isometry_pair_{a}_modes_{v1[1]}_{v2[1]}", r.estimate, r.target,
                                r.passed, "|mc - target| <= se_multiplier * se",
                                se_multiplier=m))
        run.extra.setdefault("isometry_std_errors", []).append(r.std_error)


def _randpde(run: Run) -> None:
    cfg = run.cfg
    model = cfg.random_model
    if model is None:
        raise ConfigError("/random_pde", "missing required key 'random_pde'")
    data = model.second_moment_data()
    if not data.independent:
        raise ConditionError("random-data identities require U0 and F to be independent; "
                             "the model declares a nonzero cross covariance")
    use_second = data.zero_mean_U0 or data.zero_mean_F
    with run.timed("solve"):
        solver = solve_random_second_moment if use_second else solve_random_covariance
        field = solver(cfg.op, data, cfg.grid)
    with run.timed("simulate"):
        ens = simulate_random_solutions(cfg.op, model, cfg.grid, cfg.M, cfg.master_seed,
                                        cfg.threads)
    with run.timed("estimate"):
        est = (mc_second_moment if use_second else mc_covariance)(ens)
    label = "second_moment" if use_second else "covariance"
    run.extra["identity"] = label
    ref = field.values
    if est.time_pairs is not None:
        ref = np.stack([ref[:, :, i, j] for i, j in est.time_pairs], axis=-1)
    run.checks += _mc_agreement_checks(f"random_{label}", est, ref, cfg.tolerances)
    m = cfg.tolerances["se_multiplier"]
    p0 = TimePolynomial.vanishing_at(cfg.grid.T, 0)
    tests = cfg.random_tests or [((p0, 0), (p0, 0))]
    with run.timed("cross_terms"):
        for a, (v1, v2) in enumerate(tests):
            r = cross_term_estimate(cfg.op, model, cfg.grid, v1, v2, cfg.M, cfg.master_seed,
                                    cfg.threads, m)
            for side, e, t, s in zip(("F_U0", "U0_F"), r.estimates, r.analytic, r.std_errors):
                ok = abs(e - t) <= m * s
                run.checks.append(Check(f"cross_term_{a}_{side}", e, t, ok,
                                        "|mc - analytic| <= se_multiplier * se",
                                        se_multiplier=m))
    run.write_field("field.csv", est.value, est.std_error, est.time_pairs)
    run.write_field("reference.csv", field.values)
    run.write_diag(est.value, est.std_error, est.time_pairs)


# -- report -----------------------------------------------------------------


def render_report(out_dir: Path) -> tuple[str, bool]:
    """Re-render a stored run from ``summary.json`` and its CSV files."""
    summary = json.loads((out_dir / "summary.json").read_text())
    lines = [f"command: {summary['command']}", ""]
    ok = bool(summary["pass"])
    for c in summary["checks"]:
        bound = c.get("tolerance", c.get("se_multiplier", ""))
        lines.append(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: computed={c['computed']} "
                     f"target={c['target']} ({c['comparison']}{'; ' + str(bound) if bound != '' else ''})")
    lines.append("")
    for name in summary.get("files", []):
        path = out_dir / name
        if not path.exists():
            lines.append(f"{name}: missing")
            ok = False
            continue
        cols = read_field_csv(path)
        v = cols["value"]
        desc = f"{name}: {v.size} rows, max |value| = {float(np.max(np.abs(v))) if v.size else 0.0!r}"
        if "stderr" in cols:
            desc += f", max stderr = {float(np.max(cols['stderr']))!r}"
        lines.append(desc)
    field, ref = out_dir / "field.csv", out_dir / "reference.csv"
    if field.exists() and ref.exists():
        f, r = read_field_csv(field), read_field_csv(ref)
        if "stderr" in f:
            key = {(k, l, i, j): n for n, (k, l, i, j) in
                   enumerate(zip(r["k"], r["l"], r["i"], r["j"]))}
            idx = np.array([key[t] for t in zip(f["k"], f["l"], f["i"], f["j"])])
            z = _z_scores(f["value"], f["stderr"], r["value"][idx])
            lines.append(f"recomputed max z (field vs reference) = {float(np.max(z))!r}")
            stored = [c for c in summary["checks"] if c["name"].endswith("_max_z")]
            for c in stored:
                if isinstance(c["computed"], float) and not math.isclose(
                        c["computed"], float(np.max(z)), rel_tol=1e-9, abs_tol=1e-12):
                    lines.append(f"mismatch with stored {c['name']} = {c['computed']!r}")
                    ok = False
    lines.append("")
    lines.append(f"overall: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n", ok


# -- entry point ------------------------------------------------------------


DISPATCH = {
    "solve": _solve,
    "simulate": _simulate_cmd,
    "verify": _verify,
    "isometry": _isometry,
    "randpde": _randpde,
}


def _parse_args(argv):
    ap = argparse.ArgumentParser(prog="momentfield", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON run configuration")
    ap.add_argument("--out-dir", type=Path, help="output directory")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads for sampling")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    args = ap.parse_args(argv)
    if args.command != "report" and args.config is None:
        ap.error(f"{args.command} requires --config")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        ap.error("--seed must be an unsigned 64-bit integer")
    if args.threads is not None and args.threads < 1:
        ap.error("--threads must be positive")
    return args


@contextlib.contextmanager
def _storage_cap(cap: Optional[int]):
    """Apply the config's storage cap unless the environment already sets one."""
    if cap is None or "MOMENTFIELD_MAX_CELLS" in os.environ:
        yield
        return
    os.environ["MOMENTFIELD_MAX_CELLS"] = str(cap)
    try:
        yield
    finally:
        del os.environ["MOMENTFIELD_MAX_CELLS"]


def run(command: str, cfg: RunConfig, out_dir: Path) -> dict:
    """Execute ``command`` and write its files; returns the summary document."""
    out_dir.mkdir(parents=True, exist_ok=True)
    r = Run(cfg, out_dir)
    with _storage_cap(cfg.max_cells), r.timed("total"):
        DISPATCH[command](r)
    params = dict(cfg.document)
    params["mc"] = {"M": cfg.M, "master_seed": cfg.master_seed, "threads": cfg.threads}
    params["tolerances"] = cfg.tolerances
    summary = {
        "command": command,
        "parameters": params,
        "checks": [c.to_json() for c in r.checks],
        "timings": r.timings,
        "files": r.files,
        "pass": all(c.passed for c in r.checks),
    }
    summary.update(r.extra)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        if args.command == "report":
            out_dir = args.out_dir
            if out_dir is None:
                cfg = load_config(args.config) if args.config else None
                out_dir = Path(cfg.out_dir if cfg and cfg.out_dir else DEFAULT_OUT_DIR)
            text, ok = render_report(out_dir)
            (out_dir / "report.txt").write_text(text)
            sys.stdout.write(text)
            return EXIT_PASS if ok else EXIT_CHECK_FAILED
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        out_dir = args.out_dir or Path(cfg.out_dir or DEFAULT_OUT_DIR)
        summary = run(args.command, cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ConditionError as exc:
        print(f"condition not met: {exc}", file=sys.stderr)
        return EXIT_CONDITION
    except (MomentFieldError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for c in summary["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}")
    print(f"overall: {'PASS' if summary['pass'] else 'FAIL'}")
    return EXIT_PASS if summary["pass"] else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
