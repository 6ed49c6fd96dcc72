"""Command-line runner: ``rtci run | inspect | verify-constants | concentration``.

Experiments are described by TOML files; see ``README.md`` for the layout.
Exit codes: 0 success, 1 a coupling-bound check failed, 2 invalid
configuration or input file, 3 a theorem hypothesis fails, 4 a numerical
routine did not converge.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .bundle import MAGIC, VERSION, BundleFormatError, read_bundle, write_bundle
from .domain import box, from_halfspaces, half_line, half_space, wedge, whole_space
from .particles import LinearSpacing, RankCoefficients
from .reflect import DiffusionMatrix, DriftField, DriftPerturbation, OneSidedBound, simulate_reflected
from .tci import (
    NamedParticleSystem,
    PathFunctional,
    RankedParticleSystem,
    ReflectedSystem,
    TciConstantSpec,
    TruncatedInfiniteSystem,
    concentration_tail,
    tci_constant,
    verify_tci,
)
from .transport import DEFAULT_LADDER, EXACT_CAP
from .validation import ConfigError, HypothesisError, NumericalError, check_grid

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("rtci")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 1, 2, 3, 4
# stream for the stored sample paths; verification uses streams below 2^20
BUNDLE_STREAM = 1 << 20
KINDS = ("named", "ranked", "reflected", "truncated-infinite")


@dataclass
class ExperimentConfig:
    """Validated experiment: the system, its perturbations and run parameters."""

    label: str
    kind: str
    system: object
    gammas: list
    T: float
    dt: float
    M: int
    seed: int
    output: str = None
    refine: int = 10
    refine_paths: int = None
    ot_paths: tuple = (128, 256)
    exact_cap: int = EXACT_CAP
    ladder: tuple = DEFAULT_LADDER
    bundle_paths: int = 256
    bundle_record_every: int = 10
    concentration: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _field(section, key, name, default=..., kind=None):
    """Fetch ``section[key]``, naming ``[name].key`` in any error."""
    if key not in section:
        if default is ...:
            raise ConfigError(f"[{name}].{key} is required")
        return default
    value = section[key]
    try:
        if kind == "float":
            value = float(value)
        elif kind == "int":
            if isinstance(value, bool) or int(value) != value:
                raise ValueError(value)
            value = int(value)
        elif kind == "vector":
            value = np.asarray(value, dtype=float)
            if value.ndim != 1:
                raise ValueError("expected a list of numbers")
        elif kind == "matrix":
            value = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}].{key}: invalid value {section[key]!r} ({exc})") from None
    return value


def _wrap(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None
    except HypothesisError as exc:
        raise HypothesisError(f"[{name}]: {exc}") from None


def _domain(sec):
    kind = _field(sec, "type", "domain")
    if kind == "half-line":
        return half_line()
    if kind == "whole-space":
        return _wrap("domain", whole_space, _field(sec, "dim", "domain", kind="int"))
    if kind == "box":
        return _wrap("domain", box, _field(sec, "lower", "domain", kind="vector"), _field(sec, "upper", "domain", kind="vector"))
    if kind == "wedge":
        return _wrap("domain", wedge, _field(sec, "N", "domain", kind="int"))
    if kind == "half-space":
        return _wrap("domain", half_space, _field(sec, "normal", "domain", kind="vector"), _field(sec, "offset", "domain", 0.0, "float"))
    if kind == "halfspaces":
        normals = _field(sec, "normals", "domain", kind="matrix")
        offsets = _field(sec, "offsets", "domain", kind="vector")
        return _wrap("domain", from_halfspaces, normals, offsets)
    raise ConfigError(f"[domain].type must be one of half-line, whole-space, box, wedge, half-space, halfspaces; got {kind!r}")


def _drift(sec, dim):
    kind = _field(sec, "type", "drift", "constant")
    if kind == "constant":
        g = _field(sec, "g", "drift", np.zeros(dim), "vector")
        if g.shape != (dim,):
            raise ConfigError(f"[drift].g must have {dim} entries")
        return DriftField.constant(g)
    if kind == "linear":
        K = _field(sec, "matrix", "drift", kind="matrix")
        if K.shape != (dim, dim):
            raise ConfigError(f"[drift].matrix must be {dim}x{dim}")
        return _wrap("drift", DriftField.linear, K, _field(sec, "offset", "drift", None, "vector"))
    raise ConfigError(f"[drift].type must be 'constant' or 'linear', got {kind!r}")


def _diffusion(sec, dim):
    if "A" in sec:
        A = _field(sec, "A", "diffusion", kind="matrix")
    elif "diagonal" in sec:
        A = np.diag(_field(sec, "diagonal", "diffusion", kind="vector"))
    else:
        A = np.eye(dim)
    if A.shape != (dim, dim):
        raise ConfigError(f"[diffusion] matrix must be {dim}x{dim}, got {A.shape}")
    return _wrap("diffusion", DiffusionMatrix, A)


def _coefficients(sec):
    g = _field(sec, "g", "particles", kind="vector")
    sigma = _field(sec, "sigma", "particles", np.ones(g.shape[0]), "vector")
    return _wrap("particles", RankCoefficients, g, sigma, bool(_field(sec, "tail", "particles", False)))


def _system(kind, data):
    if kind == "reflected":
        dom = _domain(data.get("domain", {}))
        drift = _drift(data.get("drift", {}), dom.dim)
        A = _diffusion(data.get("diffusion", {}), dom.dim)
        z0 = _field(data.get("domain", {}), "z0", "domain", dom.witness, "vector")
        observed = data.get("domain", {}).get("observed")
        return _wrap("domain", ReflectedSystem, dom, drift, A, z0, observed, data["experiment"].get("label", "reflected"))
    sec = data.get("particles", {})
    c = _coefficients(sec)
    label = data["experiment"].get("label", kind)
    if kind == "named":
        return _wrap("particles", NamedParticleSystem, c, _field(sec, "x0", "particles", kind="vector"), label=label)
    if kind == "ranked":
        x0 = _field(sec, "x0", "particles", kind="vector")
        return _wrap("particles", RankedParticleSystem, c, x0, _field(sec, "k", "particles", None, "int"), label)
    N = _field(sec, "N", "particles", kind="int")
    rule = LinearSpacing(_field(sec, "spacing", "particles", 1.0, "float"))
    return _wrap("particles", TruncatedInfiniteSystem, c, N, rule, _field(sec, "k", "particles", 1, "int"), label)


def _gammas(items, dim):
    if not items:
        raise ConfigError("[[gamma]] needs at least one entry")
    out = []
    for i, sec in enumerate(items):
        name = f"gamma.{i}"
        kind = _field(sec, "type", name, "constant")
        if kind == "zero":
            out.append(DriftPerturbation.zero(dim))
            continue
        v = _field(sec, "vector", name, kind="vector")
        if v.shape != (dim,):
            raise ConfigError(f"[{name}].vector must have {dim} entries")
        scales = _field(sec, "scales", name, [1.0], "vector")
        for s in scales:
            label = f"{sec.get('label', f'gamma{i}')}x{s:g}"
            if kind == "constant":
                out.append(DriftPerturbation.constant(s * v, label))
            elif kind == "linear-in-time":
                g = DriftPerturbation.linear_in_time(s * v)
                g.label = label
                out.append(g)
            else:
                raise ConfigError(f"[{name}].type must be constant, linear-in-time or zero; got {kind!r}")
    return out


def load_config(path):
    """Parse and validate a TOML experiment file; nothing is simulated here."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    exp = data.get("experiment")
    if exp is None:
        raise ConfigError("[experiment] section is required")
    kind = _field(exp, "kind", "experiment")
    if kind not in KINDS:
        raise ConfigError(f"[experiment].kind must be one of {', '.join(KINDS)}; got {kind!r}")
    T = _field(exp, "T", "experiment", kind="float")
    dt = _field(exp, "dt", "experiment", kind="float")
    M = _field(exp, "M", "experiment", kind="int")
    seed = _field(exp, "seed", "experiment", kind="int")
    if T <= 0 or dt <= 0 or M < 2 or seed < 0:
        raise ConfigError("[experiment] needs T > 0, dt > 0, M >= 2 and seed >= 0")
    _wrap("experiment", check_grid, T, dt)
    system = _system(kind, data)
    system.check()
    gammas = _gammas(data.get("gamma", []), system.dim)
    solver = data.get("solver", {})
    ot = solver.get("ot_paths", [128, 256])
    if ot not in (False, None) and (len(ot) != 2 or not all(isinstance(m, int) and m >= 2 for m in ot) or ot[0] > ot[1]):
        raise ConfigError("[solver].ot_paths must be two increasing integers, or false")
    ladder = tuple(_field(solver, "ladder", "solver", np.array(DEFAULT_LADDER), "vector"))
    if not ladder or min(ladder) <= 0:
        raise ConfigError("[solver].ladder must be positive factors")
    return ExperimentConfig(
        label=str(exp.get("label", kind)),
        kind=kind,
        system=system,
        gammas=gammas,
        T=T,
        dt=dt,
        M=M,
        seed=seed,
        output=exp.get("output"),
        refine=_field(solver, "refine", "solver", 10, "int"),
        refine_paths=_field(solver, "refine_paths", "solver", None, "int"),
        ot_paths=tuple(ot) if ot else None,
        exact_cap=_field(solver, "exact_cap", "solver", EXACT_CAP, "int"),
        ladder=ladder,
        bundle_paths=_field(data.get("output", {}), "bundle_paths", "output", 256, "int"),
        bundle_record_every=_field(data.get("output", {}), "record_every", "output", 10, "int"),
        concentration=data.get("concentration", {}),
        raw=data,
    )


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out, config_path, cfg, artifacts, started, workers):
    raw = Path(config_path).read_bytes()
    manifest = {
        "config": str(config_path),
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "code_version": __version__,
        "python": platform.python_version(),
        "seed": cfg.seed,
        "workers": workers,
        "wall_clock_seconds": round(time.time() - started, 3),
        "artifacts": {name: _sha256(out / name) for name in artifacts},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args):
    cfg = load_config(args.config)
    out = Path(args.output or cfg.output or Path(args.config).with_suffix(""))
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        lock = FileLock(str(out / ".rtci.lock"), timeout=0)
        lock.acquire()
    except Timeout:
        raise ConfigError(f"output directory {out} is in use by another run") from None
    try:
        log.info("running %s (%s): %d perturbations, M=%d, dt=%g", cfg.label, cfg.kind, len(cfg.gammas), cfg.M, cfg.dt)
        report = verify_tci(
            cfg.system, cfg.gammas, cfg.T, cfg.dt, cfg.M, cfg.seed, cfg.refine, cfg.refine_paths,
            ot_paths=cfg.ot_paths, workers=args.workers, label=cfg.label, exact_cap=cfg.exact_cap, ladder=cfg.ladder,
        )  # fmt: skip
        report.write_json(out / "report.json")
        report.write_csv(out / "report.csv")
        artifacts = ["report.json", "report.csv"]
        if cfg.bundle_paths:
            sys_ = cfg.system
            res = simulate_reflected(
                sys_.domain, sys_.drift, sys_.A, sys_.z0, cfg.T, cfg.dt, cfg.bundle_paths, cfg.seed, BUNDLE_STREAM,
                cfg.bundle_record_every, workers=args.workers,
            )  # fmt: skip
            write_bundle(out / "paths.rtci", res.path, {"LOCT": res.localtime})
            artifacts.append("paths.rtci")
        _write_manifest(out, args.config, cfg, artifacts, started, args.workers)
    finally:
        lock.release()
    for r in report.results:
        print(
            f"{cfg.label} {r.gamma_id}: C={report.C:.6g} H={r.H:.6g} lhs={r.lhs:.6g}+-{r.lhs_se:.2g} "
            f"rhs={r.rhs:.6g} margin={r.margin:.4g} slack={r.stat_slack + r.disc_slack:.3g} check A {r.verdict}, "
            f"check B {r.verdict_B}"
        )
    print(f"artifacts written to {out}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_inspect(args):
    bundle, sections = read_bundle(args.bundle)
    print(f"magic {MAGIC.decode()} version {VERSION}")
    print(f"dim {bundle.dim}  steps {bundle.n_steps}  paths {bundle.n_paths}  dt {bundle.dt!r}  seed {bundle.seed}")
    print(f"T {bundle.T!r}")
    end = bundle.values[:, -1, :]
    for k in range(bundle.dim):
        var = float(end[:, k].var(ddof=1)) if bundle.n_paths > 1 else float("nan")
        print(f"coordinate {k}: mean {end[:, k].mean():.6g}  variance {var:.6g}  at t=T")
    if bundle.dim > 1:
        gaps = np.diff(bundle.values, axis=2)
        if np.all(gaps >= 0):
            print("ranked bundle: gap minima " + " ".join(f"{v:.3g}" for v in gaps.min(axis=(0, 1))))
    for tag, arr in sections.items():
        print(f"section {tag}: {arr.size} values")
    return EXIT_OK


def cmd_verify_constants(args):
    rows = []
    for F in args.F:
        for T in args.T:
            spec = TciConstantSpec(args.normA, OneSidedBound.constant(F), T)
            closed = tci_constant(spec)
            quad = tci_constant(spec, method="quadrature")
            rows.append((F, T, args.normA, closed, quad, abs(closed - quad)))
    writer = csv.writer(open(args.output, "w", newline="") if args.output else sys.stdout, lineterminator="\n")
    writer.writerow(["F", "T", "normA", "C_closed_form", "C_quadrature", "abs_diff"])
    for row in rows:
        writer.writerow([repr(float(v)) for v in row])
    return EXIT_OK


_FUNCTIONALS = {"terminal": PathFunctional.terminal, "max": PathFunctional.running_max, "constant": PathFunctional.constant}


def cmd_concentration(args):
    cfg = load_config(args.config)
    sec = cfg.concentration
    name = args.functional or sec.get("functional", "terminal")
    if name not in _FUNCTIONALS:
        raise ConfigError(f"[concentration].functional must be one of {', '.join(_FUNCTIONALS)}; got {name!r}")
    functional = _FUNCTIONALS[name]() if name == "constant" else _FUNCTIONALS[name](int(sec.get("coord", 0)))
    r = args.r or sec.get("r", [0.5, 1.0, 1.5, 2.0])
    r = np.asarray(r, dtype=float) * (np.sqrt(cfg.T) if sec.get("r_units", "sqrtT") == "sqrtT" else 1.0)
    M = args.M or int(sec.get("M", cfg.M))
    table = concentration_tail(cfg.system, functional, r, cfg.T, cfg.dt, M, cfg.seed, workers=args.workers)
    if args.output:
        table.write_csv(args.output)
    for row in table.rows:
        print(f"r={row.r:.4g} tail={row.tail:.4g} [{row.lower:.3g}, {row.upper:.3g}] bound={row.bound:.4g} {row.verdict}")
    return EXIT_OK if table.passed else EXIT_CHECK_FAILED


def build_parser():
    p = argparse.ArgumentParser(prog="rtci", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--workers", type=int, default=None, help="worker threads (also capped by $RTCI_MAX_WORKERS)")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="verify the inequality for one configured scenario")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (default: [experiment].output or the config stem)")
    r.set_defaults(func=cmd_run)
    i = sub.add_parser("inspect", help="summarize a path bundle file")
    i.add_argument("bundle")
    i.set_defaults(func=cmd_inspect)
    v = sub.add_parser("verify-constants", help="closed-form vs quadrature constants on a grid")
    v.add_argument("--F", type=float, nargs="+", default=[-2.0, -1.0, 0.0, 1.0, 2.0])
    v.add_argument("--T", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    v.add_argument("--normA", type=float, default=1.0)
    v.add_argument("-o", "--output")
    v.set_defaults(func=cmd_verify_constants)
    c = sub.add_parser("concentration", help="empirical tail table for a path functional")
    c.add_argument("config")
    c.add_argument("--functional", choices=sorted(_FUNCTIONALS))
    c.add_argument("--r", type=float, nargs="+", help="r grid in units of sqrt(T)")
    c.add_argument("--M", type=int)
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_concentration)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, BundleFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
