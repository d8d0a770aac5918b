"""Command-line runner: ``eotlab {solve,sweep,detach,report}``.

Exit codes: 0 success, 2 when a computed quantity misses a configured
threshold, 1 on any execution error.  Every output file is written to a
temporary sibling and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import detachment, potentials
from .config import ExperimentConfig, load_config
from .errors import EotLabError
from .estimates import run_sweep, summary_text, sweep_csv
from .marginals import ConvexDomain, shrink
from .reference_ot import holder_exponent_u0, solve_reference
from .sinkhorn import PotentialField, solve_schrodinger

log = logging.getLogger("eotlab")

EXIT_OK, EXIT_ERROR, EXIT_THRESHOLD = 0, 1, 2

DETACH_COLUMNS = ("check", "p", "best_L", "required_L", "sample_count", "worst_x", "worst_y", "passes")
REPORT_KEYS = ("alpha_hat", "beta_used", "p0", "w2sq", "cpt_slope", "a_hat", "b_hat", "m_hat",
               "lp_p2_slope", "lp_p3_slope", "reference_seminorm", "max_holder_seminorm",
               "detachment_p", "detachment_L")


def _f(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _out_dir(cfg: ExperimentConfig, out) -> Path:
    return Path(out if out is not None else cfg.outputs)


def cmd_solve(cfg: ExperimentConfig, out=None, epsilon=None) -> int:
    """One Schrödinger solve; writes node, potentials, gradient and Hessian norm."""
    eps = cfg.epsilons[-1] if epsilon is None else float(epsilon)
    mu, nu = cfg.instance.build()
    prev = None
    for e in [x for x in cfg.epsilons if x > eps] + [eps]:
        prev = solve_schrodinger(mu, nu, e, tol=cfg.tol, max_iter=cfg.max_iter, init=prev)
    sol = prev
    n = mu.dimension
    G = potentials.grad_u(sol, mu.nodes)
    H = potentials.hessian_u(sol, mu.nodes)
    hn = np.max(np.abs(np.linalg.eigvalsh(H)), axis=1)
    header = ([f"x{k + 1}" for k in range(n)] + ["u"] + [f"grad_u{k + 1}" for k in range(n)]
              + ["hess_norm"] + [f"y{k + 1}" for k in range(n)] + ["v"])
    rows = []
    for i in range(mu.size):
        j = min(i, nu.size - 1)
        rows.append([_f(c) for c in mu.nodes[i]] + [_f(sol.u.values[i])] + [_f(g) for g in G[i]]
                    + [_f(hn[i])] + [_f(c) for c in nu.nodes[j]] + [_f(sol.v.values[j])])
    d = _out_dir(cfg, out)
    write_atomic(d / f"{cfg.instance.name}_solve.csv", _rows_to_csv(header, rows))
    log.info("eps=%g: %d iterations, residual %.3e", eps, sol.iterations, sol.marginal_residual)
    return EXIT_OK


def sweep_failures(cfg: ExperimentConfig, report) -> list:
    th, fit, fails = cfg.thresholds, report.fitted, []
    if fit:
        cpt = fit["cpt_slope"].value
        if th.cpt_min is not None and cpt < th.cpt_min:
            fails.append(f"cpt_slope {cpt:.4g} < {th.cpt_min}")
        if th.cpt_max is not None and cpt > th.cpt_max:
            fails.append(f"cpt_slope {cpt:.4g} > {th.cpt_max}")
        if fit["a_hat"].value <= th.a_min:
            fails.append(f"a_hat {fit['a_hat'].value:.4g} <= {th.a_min}")
        if fit["b_hat"].value <= th.b_min:
            fails.append(f"b_hat {fit['b_hat'].value:.4g} <= {th.b_min}")
        if fit["m_hat"].value >= th.m_max:
            fails.append(f"m_hat {fit['m_hat'].value:.4g} >= {th.m_max}")
    bound = th.holder_factor * report.reference_seminorm
    if max(report.holder_seminorm) > bound:
        fails.append(f"Hölder seminorm {max(report.holder_seminorm):.4g} > {bound:.4g}")
    return fails


def cmd_sweep(cfg: ExperimentConfig, out=None) -> int:
    report = run_sweep(cfg.instance, cfg.epsilons, cfg.ps, cfg.beta, cfg.subset_margin,
                       cfg.tol, cfg.max_iter)
    d = _out_dir(cfg, out)
    write_atomic(d / f"{cfg.instance.name}_sweep.csv", sweep_csv(report))
    write_atomic(d / f"{cfg.instance.name}_summary.txt", summary_text(report))
    fails = sweep_failures(cfg, report)
    for msg in fails:
        print(f"threshold failed: {msg}", file=sys.stderr)
    return EXIT_THRESHOLD if fails else EXIT_OK


def _analytic(name, resolution, alpha):
    """(u field, exact conjugate on the same nodes, gradient map, alpha, lambda, K)."""
    if name == "quadratic":
        x = (np.arange(resolution) + 0.5) / resolution
        u = PotentialField(x, 0.5 * x**2, 0.0, "generic")
        return u, PotentialField(x, 0.5 * x**2, 0.0, "generic"), (lambda p: p), 1.0, 1.0, None
    # the power potential (1+a)^-1 |x|^(1+a) on (-1, 1), conjugate |y|^p / p
    a = 0.5 if alpha is None else alpha
    res = resolution | 1  # odd, so that 0 is a node
    x = -1 + (np.arange(res) + 0.5) * 2 / res
    p = (1 + a) / a
    u = PotentialField(x, np.abs(x) ** (1 + a) / (1 + a), 0.0, "generic")
    v = PotentialField(x, np.abs(x) ** p / p, 0.0, "generic")
    return u, v, (lambda q: np.sign(q) * np.abs(q) ** a), a, None, ConvexDomain.box((-0.5, 0.5))


def _cert_row(check, cert):
    wx, wy = cert.worst_pair
    return [check, _f(cert.p), _f(cert.best_L), _f(cert.required_L), _f(cert.sample_count),
            " ".join(_f(c) for c in wx), " ".join(_f(c) for c in wy), _f(cert.passes)]


_BALLS = {
    "square": lambda: ConvexDomain.box((0, 1), (0, 1)),
    "disk": lambda: ConvexDomain.ball((0.0, 0.0), 1.0),
    "thin": lambda: ConvexDomain.box((0, 1), (0, 0.05)),
}


def cmd_detach(cfg: ExperimentConfig, out=None) -> int:
    """Local and global detachment certificates plus the convex-ball ratio."""
    dc = cfg.detach
    if dc is None:
        raise EotLabError("config has no [detach] section")
    rows, fails = [], []
    if dc.potential == "instance":
        mu, nu = cfg.instance.build()
        subset = shrink(cfg.instance.source, cfg.subset_margin)
        ref = solve_reference(mu, nu)
        alpha = holder_exponent_u0(ref, subset).alpha if dc.alpha is None else dc.alpha
        cert = detachment.check_p_detachment(ref.u0, ref.v0, subset, max((1 + alpha) / alpha, 2.0),
                                             ref.map_field())
        rows.append(_cert_row("local", cert))
        glob = detachment.global_detachment_forward(ref.u0, alpha, dc.lambda_h)
    else:
        u, v, grad, alpha, lam, K = _analytic(dc.potential, dc.resolution, dc.alpha)
        lam = dc.lambda_h if dc.lambda_h is not None else lam
        cert = detachment.check_p_detachment(u, v, K, (1 + alpha) / alpha, grad)
        rows.append(_cert_row("local", cert))
        glob = detachment.global_detachment_forward(u, alpha, lam, grad_u=grad)
    rows.append(_cert_row("global", glob))
    if not glob.passes:
        fails.append(f"global detachment {glob.best_L:.4g} < {glob.required_L:.4g}")
    for name in dc.ball_domains:
        bb = detachment.convex_ball_scan(_BALLS[name](), dc.z_samples, dc.r_samples,
                                         dc.n_points, cfg.seed)
        ok = cfg.thresholds.ball_min is None or bb.ratio >= cfg.thresholds.ball_min
        rows.append([f"ball-{name}", "", _f(bb.ratio), _f(cfg.thresholds.ball_min),
                     _f(bb.evaluations), " ".join(_f(c) for c in bb.z), _f(bb.r), _f(ok)])
        if not ok:
            fails.append(f"ball ratio on {name} {bb.ratio:.4g} < {cfg.thresholds.ball_min}")
    stem = cfg.instance.name if dc.potential == "instance" else dc.potential
    write_atomic(_out_dir(cfg, out) / f"{stem}_detach.csv",
                 _rows_to_csv(DETACH_COLUMNS, rows))
    for msg in fails:
        print(f"threshold failed: {msg}", file=sys.stderr)
    return EXIT_THRESHOLD if fails else EXIT_OK


def _read_summary(path: Path) -> dict:
    vals = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        key, sep, rest = line.partition(" = ")
        if sep:
            vals[key.strip()] = rest.split()[0] if rest.split() else ""
    return vals


def cmd_report(directory) -> int:
    """Collect every ``*_summary.txt`` under ``directory`` into ``report.csv``."""
    root = Path(directory)
    paths = sorted(root.rglob("*_summary.txt"))
    if not paths:
        raise EotLabError(f"no sweep summaries under {root}")
    rows = []
    for p in paths:
        s = _read_summary(p)
        rows.append([s.get("instance", p.stem)] + [s.get(k, "") for k in REPORT_KEYS])
    write_atomic(root / "report.csv", _rows_to_csv(("instance",) + REPORT_KEYS, rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eotlab", description="Entropic optimal transport experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for BLAS-backed kernels")
    common.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "one entropic solve"), ("sweep", "epsilon sweep with rate fits"),
                        ("detach", "detachment certificates")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--config", required=True)
        if name == "solve":
            p.add_argument("--epsilon", type=float, default=None,
                           help="defaults to the smallest epsilon of the config")
    p = sub.add_parser("report", parents=[common], help="aggregate sweep summaries")
    p.add_argument("directory", nargs="?", default=None)
    return ap


def _limit_threads(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl unavailable; --threads ignored")
        return None
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None:
        _limit_threads(args.threads)
    try:
        if args.command == "report":
            return cmd_report(args.directory or args.out or ".")
        cfg = load_config(args.config)
        if args.command == "solve":
            return cmd_solve(cfg, args.out, args.epsilon)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out)
        return cmd_detach(cfg, args.out)
    except EotLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
