"""Experiment configuration: flat INI sections parsed with :mod:`configparser`.

Example::

    [instance]
    name = B
    source = 0 1
    target = 0 2
    resolution = 128

    [sweep]
    epsilons = 0.2, 0.1, 0.05, 0.02, 0.01

    [output]
    directory = out/B

Boxes are written one interval per axis, axes separated by ``;``
(``0 1; 0 1`` is the unit square).  Density parameters are ``key=value``
pairs separated by commas.  An ``[instance]`` section naming a preset
(A, B, C, D) fills every key it does not set.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .errors import ConfigParseError, ConfigValidationError, EotLabError
from .instances import PRESETS, InstanceSpec
from .marginals import DENSITY_REGISTRY
from .sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL

DEFAULT_EPSILONS = (0.2, 0.1, 0.05, 0.02, 0.01)
MIN_RESOLUTION = 8
ANALYTIC_POTENTIALS = ("quadratic", "power", "instance")
BALL_DOMAINS = ("square", "disk", "thin")


@dataclass(frozen=True)
class DetachConfig:
    potential: str = "quadratic"
    resolution: int = 1000
    alpha: Optional[float] = None
    lambda_h: Optional[float] = None
    ball_domains: tuple = ()
    z_samples: int = 16
    r_samples: int = 16
    n_points: int = 100_000


@dataclass(frozen=True)
class Thresholds:
    cpt_min: Optional[float] = None
    cpt_max: Optional[float] = None
    a_min: float = 0.1
    b_min: float = 0.1
    m_max: float = 0.95
    holder_factor: float = 3.0
    ball_min: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceSpec
    epsilons: tuple = DEFAULT_EPSILONS
    ps: tuple = (2.0, 3.0)
    subset_margin: float = 0.1
    beta: Optional[float] = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    outputs: str = "out"
    detach: Optional[DetachConfig] = None
    thresholds: Thresholds = field(default_factory=Thresholds)


_KEYS = {
    "instance": {"name", "dimension", "source", "target", "source_density", "target_density",
                 "source_params", "target_params", "resolution"},
    "sweep": {"epsilons", "ps", "subset_margin", "beta", "tol", "max_iter", "seed"},
    "output": {"directory"},
    "detach": {f.name if f.name != "lambda_h" else "lambda" for f in fields(DetachConfig)},
    "thresholds": {f.name for f in fields(Thresholds)},
}


def _parse_error(exc: configparser.Error) -> ConfigParseError:
    lineno = getattr(exc, "lineno", None)
    if lineno is None and getattr(exc, "errors", None):
        lineno = exc.errors[0][0]
    return ConfigParseError(str(exc).splitlines()[0], lineno)


def _num(section, key, raw, kind=float, positive=False):
    try:
        val = kind(raw)
    except ValueError:
        raise ConfigValidationError(key, f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}")
    if kind is float and not math.isfinite(val):
        raise ConfigValidationError(key, f"[{section}] {key} must be finite")
    if positive and not val > 0:
        raise ConfigValidationError(key, f"[{section}] {key} must be positive")
    return val


def _numbers(key, raw):
    parts = [p for p in raw.replace(",", " ").split() if p]
    return tuple(_num("sweep", key, p) for p in parts)


def _box(key, raw):
    axes = []
    for chunk in raw.split(";"):
        vals = chunk.split()
        if len(vals) != 2:
            raise ConfigValidationError(key, f"{key} axis {chunk.strip()!r} needs two numbers")
        lo, hi = (_num("instance", key, v) for v in vals)
        if not lo < hi:
            raise ConfigValidationError(key, f"{key} interval needs lo < hi")
        axes.append((lo, hi))
    return tuple(axes)


def _params(key, raw):
    out = {}
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, val = item.partition("=")
        if not sep:
            raise ConfigValidationError(key, f"{key} entry {item!r} is not key=value")
        out[name.strip()] = _num("instance", key, val.strip())
    return tuple(sorted(out.items()))


def _optional(raw):
    return None if raw is None or raw.strip() == "" else raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config; every omitted key takes its default."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise _parse_error(exc) from None
    for sec in cp.sections():
        if sec not in _KEYS:
            raise ConfigValidationError(sec, f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in _KEYS[sec]:
                raise ConfigValidationError(key, f"unknown key {key!r} in [{sec}]")
    if "instance" not in cp:
        raise ConfigValidationError("instance", "missing [instance] section")

    ins = cp["instance"]
    name = ins.get("name", "custom").strip()
    base = PRESETS.get(name)
    if base is None and "source" not in ins:
        raise ConfigValidationError("name", f"{name!r} is not a preset and no source box is given")
    source = _box("source", ins["source"]) if "source" in ins else base.source_box
    target = _box("target", ins["target"]) if "target" in ins else (base.target_box if base else source)
    dens = {}
    for side in ("source", "target"):
        d = ins.get(f"{side}_density", getattr(base, f"{side}_density", "uniform")).strip()
        if d not in DENSITY_REGISTRY:
            raise ConfigValidationError(f"{side}_density", f"unknown density {d!r}")
        p = (_params(f"{side}_params", ins[f"{side}_params"]) if f"{side}_params" in ins
             else getattr(base, f"{side}_params", ()))
        dens[side] = (d, p)
    res = _num("instance", "resolution", ins["resolution"], int) if "resolution" in ins else (
        base.resolution if base else 128)
    if res < MIN_RESOLUTION:
        raise ConfigValidationError("resolution", f"resolution must be at least {MIN_RESOLUTION}")
    if len(source) != len(target):
        raise ConfigValidationError("target", "source and target dimensions differ")
    if "dimension" in ins and _num("instance", "dimension", ins["dimension"], int) != len(source):
        raise ConfigValidationError("dimension", "dimension does not match the source box")
    instance = InstanceSpec(name, source, target, dens["source"][0], dens["target"][0],
                            dens["source"][1], dens["target"][1], res)

    sw = cp["sweep"] if "sweep" in cp else {}
    eps = _numbers("epsilons", sw["epsilons"]) if "epsilons" in sw else DEFAULT_EPSILONS
    if not eps or any(e <= 0 for e in eps):
        raise ConfigValidationError("epsilons", "epsilons must be nonempty and positive")
    if len(set(eps)) != len(eps):
        raise ConfigValidationError("epsilons", "epsilons must be distinct")
    ps = _numbers("ps", sw["ps"]) if "ps" in sw else (2.0, 3.0)
    if any(p < 1 for p in ps):
        raise ConfigValidationError("ps", "every p must be at least 1")
    margin = _num("sweep", "subset_margin", sw.get("subset_margin", "0.1"), positive=True)
    beta = _optional(sw.get("beta"))
    if beta is not None:
        beta = _num("sweep", "beta", beta)
        if not 0 < beta <= 1:
            raise ConfigValidationError("beta", "beta must lie in (0, 1]")
    tol = _num("sweep", "tol", sw.get("tol", repr(DEFAULT_TOL)), positive=True)
    max_iter = _num("sweep", "max_iter", sw.get("max_iter", str(DEFAULT_MAX_ITER)), int, positive=True)
    seed = _num("sweep", "seed", sw.get("seed", "0"), int)
    outputs = cp["output"].get("directory", "out").strip() if "output" in cp else "out"

    detach = None
    if "detach" in cp:
        dt = cp["detach"]
        pot = dt.get("potential", "quadratic").strip()
        if pot not in ANALYTIC_POTENTIALS:
            raise ConfigValidationError("potential", f"potential must be one of {ANALYTIC_POTENTIALS}")
        balls = tuple(b.strip() for b in dt.get("ball_domains", "").split(",") if b.strip())
        for b in balls:
            if b not in BALL_DOMAINS:
                raise ConfigValidationError("ball_domains", f"unknown ball domain {b!r}")
        alpha = _optional(dt.get("alpha"))
        lam = _optional(dt.get("lambda"))
        detach = DetachConfig(
            potential=pot,
            resolution=_num("detach", "resolution", dt.get("resolution", "1000"), int),
            alpha=None if alpha is None else _num("detach", "alpha", alpha, positive=True),
            lambda_h=None if lam is None else _num("detach", "lambda", lam, positive=True),
            ball_domains=balls,
            z_samples=_num("detach", "z_samples", dt.get("z_samples", "16"), int),
            r_samples=_num("detach", "r_samples", dt.get("r_samples", "16"), int),
            n_points=_num("detach", "n_points", dt.get("n_points", "100000"), int, positive=True),
        )
        if detach.resolution < MIN_RESOLUTION:
            raise ConfigValidationError("resolution", f"resolution must be at least {MIN_RESOLUTION}")
        if detach.z_samples < 16 or detach.r_samples < 16:
            raise ConfigValidationError("z_samples", "need at least 16 center and radius samples")
        if detach.alpha is not None and detach.alpha > 1:
            raise ConfigValidationError("alpha", "alpha must lie in (0, 1]")

    th = Thresholds()
    if "thresholds" in cp:
        vals = {}
        for key, raw in cp["thresholds"].items():
            if _optional(raw) is not None:
                vals[key] = _num("thresholds", key, raw)
        th = replace(th, **vals)

    return ExperimentConfig(instance, tuple(sorted(eps, reverse=True)), ps, margin, beta, tol,
                            max_iter, seed, outputs, detach, th)


def _r(x) -> str:
    return "" if x is None else repr(float(x))


def _fmt_box(box):
    return "; ".join(f"{lo!r} {hi!r}" for lo, hi in box)


def _fmt_params(params):
    return ", ".join(f"{k}={v!r}" for k, v in params)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Text form that :func:`parse_config` maps back to an equal config."""
    ins = cfg.instance
    lines = ["[instance]",
             f"name = {ins.name}",
             f"dimension = {ins.dimension}",
             f"source = {_fmt_box(ins.source_box)}",
             f"target = {_fmt_box(ins.target_box)}",
             f"source_density = {ins.source_density}",
             f"source_params = {_fmt_params(ins.source_params)}",
             f"target_density = {ins.target_density}",
             f"target_params = {_fmt_params(ins.target_params)}",
             f"resolution = {ins.resolution}",
             "",
             "[sweep]",
             "epsilons = " + ", ".join(repr(float(e)) for e in cfg.epsilons),
             "ps = " + ", ".join(repr(float(p)) for p in cfg.ps),
             f"subset_margin = {cfg.subset_margin!r}",
             f"beta = {_r(cfg.beta)}",
             f"tol = {cfg.tol!r}",
             f"max_iter = {cfg.max_iter}",
             f"seed = {cfg.seed}",
             "",
             "[output]",
             f"directory = {cfg.outputs}"]
    if cfg.detach is not None:
        d = cfg.detach
        lines += ["", "[detach]",
                  f"potential = {d.potential}",
                  f"resolution = {d.resolution}",
                  f"alpha = {_r(d.alpha)}",
                  f"lambda = {_r(d.lambda_h)}",
                  "ball_domains = " + ", ".join(d.ball_domains),
                  f"z_samples = {d.z_samples}",
                  f"r_samples = {d.r_samples}",
                  f"n_points = {d.n_points}"]
    lines += ["", "[thresholds]"]
    lines += [f"{f.name} = {_r(getattr(cfg.thresholds, f.name))}" for f in fields(Thresholds)]
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise EotLabError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
