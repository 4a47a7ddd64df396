"""Command-line entry point: ``varconvex <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 an envelope was
unbounded below, 3 a certificate check failed (inconsistent equivalence
matrix, or an epi-convergence sequence that does not hold).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np
from referencing import Registry, Resource

from .banach import (
    PNormSpace, check_parallelogram_law, duality_map, duality_map_inverse, estimate_moduli, norm,
)
from .catalog import catalog_get, catalog_names
from .certificate import dumps, jsonable
from .certify import DEFAULT_LADDER, CertifyConfig, equivalence_matrix, markdown_table
from .core import Box, VarConvexError
from .epi import load_manifest, run_suite_entry, shipped_manifests
from .moreau import default_search_box, envelope_batch

EXIT_OK, EXIT_USAGE, EXIT_UNBOUNDED, EXIT_INCONSISTENT = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---- configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    function: str | None = None
    x: list[float] | None = None
    xstar: list[float] | None = None
    p: float = 2.0
    dim: int | None = None
    radius_x: float = 0.25
    radius_dual: float = 0.25
    eps_value: float = 0.05
    max_shrinks: int = 4
    lambda_ladder: list[float] = field(default_factory=lambda: list(DEFAULT_LADDER))
    points_per_axis: int | None = None
    search_points_per_axis: int | None = None
    search_radius: float | None = None
    localize: bool = False
    output_dir: str = "varconvex-out"
    seed: int = 0
    trials: int = 10000
    parallelogram_c: float | None = None
    manifests: list[str] = field(default_factory=list)

    @classmethod
    def from_json(cls, data: dict) -> RunConfig:
        validate(data, "config")
        flat = {}
        point = data.get("point", {})
        flat.update({k: point[k] for k in ("x", "xstar") if k in point})
        flat.update(data.get("space", {}))
        flat.update(data.get("window", {}))
        flat.update(data.get("grids", {}))
        flat.update({k: v for k, v in data.items()
                     if k not in ("point", "space", "window", "grids")})
        return cls(**flat)

    def override(self, **kw) -> RunConfig:
        known = {f.name for f in fields(self)}
        return replace(self, **{k: v for k, v in kw.items() if k in known and v is not None})

    def function_obj(self):
        if self.function is None:
            raise UsageError("--function is required")
        f = catalog_get(self.function)
        if self.dim is not None and self.dim != f.dim:
            raise UsageError(f"{self.function} has dim {f.dim}, config says {self.dim}")
        return f

    def point(self, f) -> tuple[np.ndarray, np.ndarray]:
        dx, ds = f.designated_points[0] if f.designated_points else ((0.0,) * f.dim, (0.0,) * f.dim)
        x = np.array(self.x if self.x is not None else dx, dtype=float)
        s = np.array(self.xstar if self.xstar is not None else ds, dtype=float)
        for name, v in (("x", x), ("xstar", s)):
            if v.shape != (f.dim,):
                raise UsageError(f"{name} must have {f.dim} coordinate(s)")
        return x, s

    def space(self, dim: int) -> PNormSpace:
        return PNormSpace(dim, self.p)

    def ladder(self) -> list[float]:
        if not self.lambda_ladder or any(not v > 0 for v in self.lambda_ladder):
            raise UsageError("lambda values must be positive")
        return [float(v) for v in self.lambda_ladder]

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.pop("output_dir")
        return d


# ---- schemas and output ---------------------------------------------------

def _schema_files() -> dict[str, dict]:
    root = resources.files("varconvex") / "schemas"
    return {p.name: json.loads(p.read_text(encoding="utf-8")) for p in root.iterdir()
            if p.name.endswith(".schema.json")}


_SCHEMAS = _schema_files()
_REGISTRY = Registry().with_resources(
    (name, Resource.from_contents(s)) for name, s in _SCHEMAS.items()
)


def validate(obj, schema: str) -> None:
    """Validate ``obj`` (after JSON conversion) against a shipped schema."""
    validator = jsonschema.Draft202012Validator(_SCHEMAS[f"{schema}.schema.json"], registry=_REGISTRY)
    validator.validate(jsonable(obj))


class Writer:
    """Collects outputs and writes them from one place, validating JSON first."""

    def __init__(self, out_dir: str):
        self.out = Path(out_dir)
        self.files: list[tuple[str, str]] = []

    def json(self, name: str, obj, schema: str) -> None:
        validate(obj, schema)
        self.files.append((name, dumps(obj)))

    def csv(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf)  # RFC 4180: CRLF line ends, minimal quoting
        w.writerow(header)
        w.writerows(rows)
        self.files.append((name, buf.getvalue()))

    def text(self, name: str, content: str) -> None:
        self.files.append((name, content))

    def flush(self) -> list[Path]:
        self.out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, content in self.files:
            path = self.out / name
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(content)
            paths.append(path)
        return paths


def _fmt(v: float) -> str:
    return repr(float(v))


# ---- commands -------------------------------------------------------------

def _envelope_results(cfg: RunConfig):
    f = cfg.function_obj()
    x, tilt = cfg.point(f)
    space = cfg.space(f.dim)
    if cfg.search_radius is not None:
        ppa = cfg.search_points_per_axis or (2001 if f.dim == 1 else 201)
        search = Box.around(x, cfg.search_radius, ppa)
    else:
        search = default_search_box(f, x[None, :], points_per_axis=cfg.search_points_per_axis)
    results = [envelope_batch(f, space, lam, x[None, :], tilt, search, cfg.localize)[0]
               for lam in cfg.ladder()]
    return f, x, tilt, space, search, results


def _envelope_record(command, cfg, f, x, tilt, space, search, results) -> dict:
    return {
        "command": command, "function": f.name, "space": space.to_json(), "x": x, "tilt": tilt,
        "localize": cfg.localize, "search": search.to_json(),
        "unbounded": any(r.unbounded for r in results),
        "results": [{"lambda": r.lam,
                     "value": "unbounded" if r.unbounded else r.value.value,
                     "minimizers": [m.tolist() for m in r.minimizers],
                     "diagnostics": r.diagnostics} for r in results],
    }


def cmd_envelope(cfg: RunConfig) -> int:
    f, x, tilt, space, search, results = _envelope_results(cfg)
    w = Writer(cfg.output_dir)
    rec = _envelope_record("envelope", cfg, f, x, tilt, space, search, results)
    w.json("envelope.json", rec, "envelope")
    w.csv("envelope.csv", ["lambda", "value"],
          [[_fmt(r.lam), "unbounded" if r.unbounded else _fmt(r.value.value)] for r in results])
    w.flush()
    return EXIT_UNBOUNDED if rec["unbounded"] else EXIT_OK


def cmd_prox(cfg: RunConfig) -> int:
    f, x, tilt, space, search, results = _envelope_results(cfg)
    w = Writer(cfg.output_dir)
    rec = _envelope_record("prox", cfg, f, x, tilt, space, search, results)
    w.json("prox.json", rec, "envelope")
    rows = []
    for r in results:
        if r.unbounded:
            rows.append([_fmt(r.lam), "unbounded"] + [""] * f.dim)
        for i, m in enumerate(r.minimizers):
            rows.append([_fmt(r.lam), str(i)] + [_fmt(v) for v in m])
    w.csv("prox.csv", ["lambda", "index"] + [f"x{i}" for i in range(f.dim)], rows)
    w.flush()
    return EXIT_UNBOUNDED if rec["unbounded"] else EXIT_OK


def cmd_certify(cfg: RunConfig, sample_hook: Callable | None = None) -> int:
    f = cfg.function_obj()
    x, s = cfg.point(f)
    cc = CertifyConfig(
        radius_x=cfg.radius_x, radius_dual=cfg.radius_dual, eps_value=cfg.eps_value,
        max_shrinks=cfg.max_shrinks, points_per_axis=cfg.points_per_axis,
        lambda_ladder=tuple(cfg.ladder()), p=cfg.p, seed=cfg.seed, sample_hook=sample_hook,
    )
    try:
        m = equivalence_matrix(f, x, s, cc)
    except ValueError as e:
        raise UsageError(str(e)) from e
    w = Writer(cfg.output_dir)
    w.json("matrix.json", m, "matrix")
    w.text("matrix.md", markdown_table([m]))
    w.flush()
    return EXIT_OK if m.consistent else EXIT_INCONSISTENT


def identity_errors(space: PNormSpace, samples: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, space.dim)) * rng.uniform(0.1, 10.0, (samples, 1))
    J = duality_map(space, X)
    nx = norm(space, X)
    pairing = np.abs(np.sum(J * X, axis=1) - nx**2) / (1.0 + nx**2)
    dual_norm = np.abs(norm(space.dual(), J) - nx) / (1.0 + nx)
    back = np.abs(duality_map_inverse(space, J) - X).max(axis=1) / (1.0 + np.abs(X).max(axis=1))
    rec = {"samples": samples, "seed": seed, "max_pairing_error": float(pairing.max()),
           "max_norm_error": float(dual_norm.max()), "max_roundtrip_error": float(back.max())}
    rec["holds"] = (rec["max_pairing_error"] <= 1e-12 and rec["max_norm_error"] <= 1e-12
                    and rec["max_roundtrip_error"] <= 1e-10)
    return rec


def cmd_space_check(cfg: RunConfig) -> int:
    dim = cfg.dim or 2
    space = cfg.space(dim)
    ident = identity_errors(space, cfg.trials, cfg.seed)
    c = cfg.parallelogram_c if cfg.parallelogram_c is not None else space.p - 1.0
    lower = space.p <= 2.0
    laws = [check_parallelogram_law(space, c, lower=lower, trials=2000, seed=cfg.seed)]
    if space.is_hilbert:
        laws.append(check_parallelogram_law(space, 1.0, lower=False, trials=2000, seed=cfg.seed))
    report = estimate_moduli(space, seed=cfg.seed) if dim >= 2 else None
    w = Writer(cfg.output_dir)
    w.json("geometry.json", {"space": space.to_json(), "identities": ident,
                             "parallelogram": laws, "report": report}, "geometry")
    rows = []
    if report is not None:
        rows += [["convexity", _fmt(t), _fmt(v)] for t, v in report.sampled_modulus_convexity]
        rows += [["smoothness", _fmt(t), _fmt(v)] for t, v in report.sampled_modulus_smoothness]
    w.csv("moduli.csv", ["modulus", "argument", "value"], rows)
    w.flush()
    return EXIT_OK


def cmd_epi(cfg: RunConfig) -> int:
    paths = [Path(p) for p in cfg.manifests] or shipped_manifests()
    for p in paths:
        if not p.is_file():
            raise UsageError(f"manifest not found: {p}")
    entries = []
    for p in paths:
        try:
            seq, limit = load_manifest(p)
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise UsageError(f"bad manifest {p}: {e}") from e
        entries.append({**run_suite_entry(seq, limit), "manifest": p.name})
    ok = all(e["all_hold"] for e in entries)
    w = Writer(cfg.output_dir)
    w.json("epi.json", {"sequences": entries, "all_hold": ok}, "epi")
    w.flush()
    return EXIT_OK if ok else EXIT_INCONSISTENT


def catalog_record() -> dict:
    out = []
    for name in catalog_names():
        f = catalog_get(name)
        d = f.descriptor()
        d.update(formula=f.formula, bounding_box=f.bounding_box.to_json(),
                 designated_points=[{"x": list(a), "xstar": list(b)} for a, b in f.designated_points])
        out.append(d)
    return {"functions": out}


def cmd_catalog_list(cfg: RunConfig, fmt: str = "text", write: bool = False) -> int:
    rec = catalog_record()
    if fmt == "json":
        sys.stdout.write(dumps(rec))
    else:
        for d in rec["functions"]:
            sys.stdout.write(f"{d['name']}\t{d['dim']}\t{d['formula']}\n")
    if write:
        w = Writer(cfg.output_dir)
        w.json("catalog.json", rec, "catalog")
        w.flush()
    return EXIT_OK


# ---- argument parsing -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="varconvex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        return p

    def point(p):
        p.add_argument("--function")
        p.add_argument("--x", type=_floats, help="comma-separated coordinates")
        p.add_argument("--xstar", type=_floats, help="comma-separated dual coordinates (tilt)")
        p.add_argument("--p", type=float)
        p.add_argument("--lambdas", dest="lambda_ladder", type=_floats)
        return p

    for name in ("envelope", "prox"):
        p = point(common(sub.add_parser(name, help=f"tilted Moreau {name} over a lambda ladder")))
        p.add_argument("--search-radius", dest="search_radius", type=float)
        p.add_argument("--search-points", dest="search_points_per_axis", type=int)
        p.add_argument("--localize", action="store_true", default=None,
                       help="treat the search box as the domain")

    p = point(common(sub.add_parser("certify", help="equivalence matrix at (x, x*)")))
    p.add_argument("--radius-x", dest="radius_x", type=float)
    p.add_argument("--radius-dual", dest="radius_dual", type=float)
    p.add_argument("--eps", dest="eps_value", type=float)
    p.add_argument("--max-shrinks", dest="max_shrinks", type=int)
    p.add_argument("--points", dest="points_per_axis", type=int)

    p = common(sub.add_parser("space-check", help="duality-map identities and weak parallelogram laws"))
    p.add_argument("--p", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--c", dest="parallelogram_c", type=float)

    p = common(sub.add_parser("epi", help="epi-convergence suite over sequence manifests"))
    p.add_argument("manifests", nargs="*", help="manifest paths (default: shipped manifests)")

    p = common(sub.add_parser("catalog-list", help="list the test-function catalog"))
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--write", action="store_true", help="also write catalog.json")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        cfg = RunConfig.from_json(data)
    over = {k: v for k, v in vars(args).items() if k not in ("config", "command", "format", "write")}
    if not over.get("manifests"):
        over.pop("manifests", None)
    return cfg.override(**over)


def main(argv: list[str] | None = None, *, sample_hook: Callable | None = None) -> int:
    """Run the CLI; ``sample_hook(f, window, sample) -> sample`` is a test seam for ``certify``."""
    try:
        args = build_parser().parse_args(argv)
        cfg = _load_config(args)
        if args.command == "envelope":
            return cmd_envelope(cfg)
        if args.command == "prox":
            return cmd_prox(cfg)
        if args.command == "certify":
            return cmd_certify(cfg, sample_hook)
        if args.command == "space-check":
            return cmd_space_check(cfg)
        if args.command == "epi":
            return cmd_epi(cfg)
        return cmd_catalog_list(cfg, args.format, args.write)
    except (UsageError, VarConvexError, jsonschema.ValidationError, ValueError, TypeError) as e:
        if isinstance(e, jsonschema.ValidationError):
            msg = e.message
        elif isinstance(e, KeyError) and e.args:
            msg = str(e.args[0])
        else:
            msg = str(e)
        print(f"varconvex: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
