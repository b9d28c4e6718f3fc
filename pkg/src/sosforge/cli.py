"""Command-line front end: ``sosforge <subcommand> ...``.

Exit codes are 0 when every check passes, 1 on a failed check or pipeline
error, and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import hashlib
import importlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import bounds_table
from .control import DEFAULT_LAMBDA, DEFAULT_NU, ConstantControl, ControlFunction, fit_omega
from .decompose import DecomposeConfig, DecompositionError, class_bound, decompose
from .field import Field, SmoothnessClass, as_fraction, finite_difference_field, polynomial_field
from .graph import adjacency_graph, degree_certificate, welsh_powell_color
from .oddvand import linear_solve_weights, odd_moment_weights, verify_odd_moments
from .report import CheckReport
from .verify import check_disjoint_supports, check_reconstruction, regularity_suite, verdict
from .whitney import MAX_LEVEL, build_partition, partition_svg

OK, FAILED, USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    field_spec: dict
    box: list
    k: int
    alpha: Fraction
    nu: float = DEFAULT_NU
    lam: float = DEFAULT_LAMBDA
    omega: float | None = None
    max_level: int = MAX_LEVEL
    delta_cut: float | None = None
    grid: int = 40
    csv_samples: int = 200
    seed: str = "sosforge"
    out: str = "sosforge-out"
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.box)

    @property
    def smoothness(self) -> SmoothnessClass:
        return SmoothnessClass(self.n, self.k, self.alpha)

    @property
    def seed_value(self) -> int:
        return int.from_bytes(hashlib.sha256(self.seed.encode()).digest()[:8], "little")

    def decompose_config(self) -> DecomposeConfig:
        return DecomposeConfig(nu=self.nu, lam=self.lam, omega=self.omega, max_level=self.max_level, delta_cut=self.delta_cut)

    def to_json(self) -> dict:
        return {
            "field": self.field_spec,
            "box": self.box,
            "k": self.k,
            "alpha": str(self.alpha),
            "nu": self.nu,
            "lambda": self.lam,
            "omega": self.omega,
            "max_level": self.max_level,
            "delta_cut": self.delta_cut,
            "grid": self.grid,
            "csv_samples": self.csv_samples,
            "seed": self.seed,
        }


def _number(doc, key, default, kind=float):
    value = doc.get(key, default)
    if value is None:
        return None
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from exc


def parse_config(doc: dict) -> RunConfig:
    """Validate a config document. Every problem is raised as :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {"field", "box", "k", "alpha", "nu", "lambda", "omega", "max_level", "delta_cut", "grid", "csv_samples", "seed", "out", "control"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    box = doc.get("box")
    try:
        box = [[float(lo), float(hi)] for lo, hi in box]
    except (TypeError, ValueError) as exc:
        raise ConfigError("box must be a list of [min, max] pairs") from exc
    if not box or any(not hi > lo for lo, hi in box):
        raise ConfigError("box must be non-degenerate")
    try:
        alpha = as_fraction(doc.get("alpha", 1))
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"alpha: {exc}") from exc
    if not (0 < alpha <= 1):
        raise ConfigError("alpha must lie in (0, 1]")
    k = _number(doc, "k", 2, int)
    if k is None or k < 1:
        raise ConfigError("k must be a positive integer")
    lam = _number(doc, "lambda", DEFAULT_LAMBDA)
    if lam is None or not (1.0 < lam < 1.5):
        raise ConfigError("lambda must lie strictly between 1 and 3/2")
    nu = _number(doc, "nu", DEFAULT_NU)
    if nu is None or not nu > 0:
        raise ConfigError("nu must be positive")
    omega = _number(doc, "omega", None)
    if omega is not None and omega < 0:
        raise ConfigError("omega must be non-negative")
    delta_cut = _number(doc, "delta_cut", None)
    if delta_cut is not None and delta_cut < 0:
        raise ConfigError("delta_cut must be non-negative")
    max_level = _number(doc, "max_level", MAX_LEVEL, int)
    if max_level is None or max_level < 0:
        raise ConfigError("max_level must be a non-negative integer")
    grid = _number(doc, "grid", 40, int)
    csv_samples = _number(doc, "csv_samples", 200, int)
    if grid is None or grid < 2 or csv_samples is None or csv_samples < 0:
        raise ConfigError("grid must be >= 2 and csv_samples >= 0")
    spec = doc.get("field", {"polynomial": {}})
    extra = {"control": doc["control"]} if "control" in doc else {}
    cfg = RunConfig(spec, box, k, alpha, nu, lam, omega, max_level, delta_cut, grid, csv_samples,
                    str(doc.get("seed", "sosforge")), str(doc.get("out", "sosforge-out")), extra)
    build_field(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def _exponents(key, n: int) -> tuple[int, ...]:
    parts = key if isinstance(key, (list, tuple)) else str(key).split(",")
    try:
        exps = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad exponent key {key!r}") from exc
    if len(exps) != n or min(exps) < 0:
        raise ConfigError(f"exponent key {key!r} does not fit dimension {n}")
    return exps


def build_field(cfg: RunConfig) -> Field:
    """Polynomials are given as {"polynomial": {"2,0": 1, ...}} or a list of [exponents, coefficient];
    plugins as {"plugin": "module:attribute"} naming a Field or a plain callable of an (m, n) array."""
    spec = cfg.field_spec
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError('field must be {"polynomial": ...} or {"plugin": "module:attr"}')
    ((kind, body),) = spec.items()
    smooth = cfg.smoothness
    if kind == "polynomial":
        items = body.items() if isinstance(body, dict) else body
        coefs = {}
        try:
            for key, value in items:
                exps = _exponents(key, cfg.n)
                coefs[exps] = coefs.get(exps, Fraction(0)) + as_fraction(value)
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad polynomial coefficients: {exc}") from exc
        return polynomial_field(coefs, smooth)
    if kind == "plugin":
        module, _, attr = str(body).partition(":")
        try:
            target = getattr(importlib.import_module(module), attr)
        except (ImportError, AttributeError, ValueError) as exc:
            raise ConfigError(f"cannot resolve plugin {body!r}: {exc}") from exc
        if isinstance(target, Field):
            return target
        if callable(target):
            return finite_difference_field(target, smooth)
        raise ConfigError(f"plugin {body!r} is neither a Field nor callable")
    raise ConfigError(f"unknown field kind {kind!r}")


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("SOSFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"SOSFORGE_THREADS must be an integer, got {env!r}") from exc
    return 1


def run_checks(jobs, threads: int) -> list[CheckReport]:
    """Run zero-argument check callables, in parallel when asked; results keep submission order."""
    if threads <= 1:
        results = [job() for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: job(), jobs))
    flat = []
    for r in results:
        flat.extend(r if isinstance(r, list) else [r])
    return flat


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _csv_points(cfg: RunConfig) -> np.ndarray:
    box = np.asarray(cfg.box, dtype=float)
    rng = np.random.default_rng(cfg.seed_value)
    return box[:, 0] + rng.random((cfg.csv_samples, cfg.n)) * (box[:, 1] - box[:, 0])


def decomposition_checks(dec, f: Field, cfg: RunConfig, regularity: bool = False):
    jobs = [
        lambda: check_reconstruction(dec, f, cfg.grid),
        lambda: _class_count_report(dec),
    ]
    if dec.local is not None:
        jobs.append(lambda: check_disjoint_supports(dec))
        if regularity:
            jobs.append(lambda: regularity_suite(dec))
    return jobs


def _class_count_report(dec) -> CheckReport:
    bound = class_bound(dec.smoothness.n) if dec.local is not None else 1
    count = dec.class_count
    return CheckReport("class_count", count <= bound, float(count), float(bound), 1)


def _partition_for(cfg: RunConfig, f: Field | None):
    box = np.asarray(cfg.box, dtype=float)
    control = cfg.extra.get("control")
    if control is not None:
        try:
            value = float(control["constant"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError('control must be {"constant": value}') from exc
        if not value > 0:
            raise ConfigError("constant control must be positive")
        r = ConstantControl(value, cfg.n, cfg.nu)
    else:
        omega = cfg.omega
        if omega is None:
            omega = fit_omega(f, cfg.nu, box)
        r = ControlFunction(f, cfg.nu, omega)
    return build_partition(r, box, cfg.nu, cfg.lam, cfg.max_level, cfg.delta_cut)


def _partition_doc(part) -> dict:
    return {
        "cubes": len(part),
        "levels": {str(int(l)): int(c) for l, c in zip(*np.unique(part.levels, return_counts=True))},
        "nu": part.nu,
        "lambda": part.lam,
        "delta_cut": part.delta_cut,
        "report": part.report.to_json(),
        "cube_list": [{"level": c.level, "index": list(c.index)} for c in part.cubes],
    }


# subcommands


def cmd_decompose(cfg: RunConfig, out: Path, threads: int = 1, svg: bool = False, regularity: bool = False) -> int:
    f = build_field(cfg)
    dec = decompose(f, cfg.box, cfg.decompose_config())
    reports = run_checks(decomposition_checks(dec, f, cfg, regularity), threads)
    result = verdict(reports)
    manifest = {"version": __version__, "config": cfg.to_json(), **dec.manifest()}
    _write(out, "manifest.json", _dump(manifest))
    _write(out, "samples.csv", dec.to_csv(_csv_points(cfg)))
    _write(out, "verdict.json", _dump(result))
    if cfg.n == 2 and dec.local is not None:
        colors = [c.color for c in dec.local.cubes]
        _write(out, "partition.svg", partition_svg(dec.local.partition, colors))
    _summary("decompose", result, {"classes": dec.class_count, "out": str(out)})
    return OK if result["pass"] else FAILED


def cmd_partition(cfg: RunConfig, out: Path, svg: bool = False) -> int:
    part = _partition_for(cfg, None if "control" in cfg.extra else build_field(cfg))
    doc = _partition_doc(part)
    _write(out, "partition.json", _dump(doc))
    if svg and cfg.n == 2:
        _write(out, "partition.svg", partition_svg(part))
    print(f"{len(part)} cubes")
    return OK


def cmd_color(cfg: RunConfig, out: Path, svg: bool = False) -> int:
    part = _partition_for(cfg, None if "control" in cfg.extra else build_field(cfg))
    graph = adjacency_graph(part)
    coloring = welsh_powell_color(graph)
    proper = coloring.is_proper(graph)
    certified = degree_certificate(graph, cfg.n)
    doc = {
        "cubes": len(part),
        "max_degree": graph.max_degree,
        "classes": coloring.class_count,
        "proper": proper,
        "degree_certificate": certified,
        **coloring.to_json(graph),
    }
    _write(out, "coloring.json", _dump(doc))
    if svg and cfg.n == 2:
        _write(out, "partition.svg", partition_svg(part, coloring.colors))
    print(f"{len(part)} cubes, {coloring.class_count} classes, max degree {graph.max_degree}, proper={proper}")
    return OK if proper and certified else FAILED


def cmd_verify(manifest_path, cfg: RunConfig | None, out: Path, threads: int = 1, regularity: bool = True) -> int:
    """Rebuild from the config (the one stored in the manifest unless overridden) and re-run every check."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest: {exc}") from exc
    if cfg is None:
        if "config" not in manifest:
            raise ConfigError("manifest carries no config; pass --config")
        cfg = parse_config(manifest["config"])
    f = build_field(cfg)
    dec = decompose(f, cfg.box, cfg.decompose_config())
    reports = run_checks(decomposition_checks(dec, f, cfg, regularity), threads)
    rebuilt = {"version": __version__, "config": cfg.to_json(), **dec.manifest()}
    same = json.loads(_dump(rebuilt)) == manifest
    reports.append(CheckReport("manifest_match", same, 0.0 if same else 1.0, 0.0, 1))
    result = verdict(reports)
    _write(out, "verify.json", _dump(result))
    _summary("verify", result, {"out": str(out)})
    return OK if result["pass"] else FAILED


def cmd_lemma(ell: int) -> int:
    w = odd_moment_weights(ell)
    exact = verify_odd_moments(w)
    independent = linear_solve_weights(w.etas) == list(w.qs)
    positive = all(q > 0 for q in w.qs)
    ok = exact and independent and positive
    s = w.as_strings()
    print(f"eta=({','.join(s['eta'])}) q=({','.join(s['q'])}) {'PASS' if ok else 'FAIL'}")
    return OK if ok else FAILED


def cmd_bounds(n_values, k_values, fmt: str = "markdown") -> int:
    print(bounds_table(n_values, k_values, fmt))
    return OK


def _summary(name: str, result: dict, extra: dict):
    status = "PASS" if result["pass"] else "FAIL"
    failed = [c["check"] for c in result["checks"] if not c["pass"]]
    print(json.dumps({"command": name, "status": status, "failed": failed, **extra}, sort_keys=True))


def _range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a range like 1..4 or a list like 2,3, got {text!r}") from exc
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sosforge", description="Sums of half-regular squares for non-negative functions.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for checks (default: $SOSFORGE_THREADS or 1)")
        p.add_argument("--svg", action="store_true", help="write a partition SVG (planar inputs only)")

    p = sub.add_parser("decompose", help="build the decomposition, write manifest, CSV, verdict")
    common(p)
    p.add_argument("--regularity", action="store_true", help="also run the fitted-constant suite")
    common(sub.add_parser("partition", help="build the dyadic partition only"))
    common(sub.add_parser("color", help="partition, adjacency graph and greedy colouring"))
    p = sub.add_parser("verify", help="rebuild a manifest and re-run every check")
    common(p, needs_config=False)
    p.add_argument("manifest", help="manifest.json written by decompose")
    p.add_argument("--quick", action="store_true", help="skip the fitted-constant suite")
    p = sub.add_parser("lemma", help="exact odd-moment weights")
    p.add_argument("ell", type=int)
    p = sub.add_parser("bounds", help="table of lower and upper square counts")
    p.add_argument("--n", dest="n_values", type=_range, default=_range("1..4"))
    p.add_argument("--k", dest="k_values", type=_range, default=_range("2..3"))
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and USAGE
    try:
        if args.command == "lemma":
            return cmd_lemma(args.ell)
        if args.command == "bounds":
            return cmd_bounds(args.n_values, args.k_values, args.format)
        threads = resolve_threads(args.threads)
        cfg = load_config(args.config) if args.config else None
        out = Path(args.out or (cfg.out if cfg else "sosforge-out"))
        if args.command == "decompose":
            return cmd_decompose(cfg, out, threads, args.svg, args.regularity)
        if args.command == "partition":
            return cmd_partition(cfg, out, args.svg)
        if args.command == "color":
            return cmd_color(cfg, out, args.svg)
        return cmd_verify(args.manifest, cfg, out, threads, not args.quick)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return USAGE
    except (DecompositionError, ValueError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
