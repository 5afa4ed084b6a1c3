"""Command line front door.

Subcommands: classify, branch, bol, symmetrize, ensemble, counterexample,
mesh. Exit codes: 0 success, 1 numerical failure, 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .bol_symm import bol_check, bol_field, counterexample_metrics, symmetrize
from .robin_dcrit import FIRST_KIND, WeightSpec, classify
from .ensembles import canonical_table, kind_verdict, legendre_check
from .errors import (BallDoesNotFit, EmptyPositivePart, InvalidDomain, InvalidWeight, MFELabError,
                     SourceTooCloseToBoundary)
from .geometry import DomainSpec, domain_from_dict, triangulate
from .mfe_solver import BRANCH_COLUMNS, EIGHT_PI, blowup_mesh, continue_branch, fit_blowup_rate, newton_solve

log = logging.getLogger("mfelab")

OK, NUMERICAL, INVALID = 0, 1, 2
_INPUT_ERRORS = (InvalidDomain, InvalidWeight, BallDoesNotFit, SourceTooCloseToBoundary, EmptyPositivePart)


def default_hints(n: int = 16, lo: float = math.pi, hi: float = 7.5 * math.pi) -> list:
    """ρ values from `lo` to `hi`, equispaced in ``log(8π - ρ)``."""
    gaps = np.geomspace(EIGHT_PI - lo, EIGHT_PI - hi, n)
    out = (EIGHT_PI - gaps).tolist()
    out[0], out[-1] = lo, hi
    return out


@dataclass
class RunConfig:
    domain: dict = field(default_factory=lambda: {"outer": {"type": "disk", "center": [0.0, 0.0], "radius": 1.0}, "holes": []})
    weight: dict = field(default_factory=lambda: WeightSpec().to_dict())
    target_h: float = 0.03
    rho_hints: list = field(default_factory=default_hints)
    lambda_cap: float = 12.0
    thresholds: int = 32
    output_dir: str = "mfelab_out"
    seed: int = 0
    rho: float = 4 * math.pi
    alpha: float = -0.5
    a: float = 1.0
    r1: float = 1e-4
    r2: float = 1.0

    def validate(self):
        if not self.target_h > 0:
            raise InvalidDomain("target_h must be positive")
        if not self.lambda_cap > 0:
            raise ValueError("lambda_cap must be positive")
        if self.thresholds < 1:
            raise ValueError("thresholds must be at least 1")
        if not (0 < self.rho <= EIGHT_PI * (1 + 1e-12)):
            raise ValueError("rho must lie in (0, 8π]")
        self.spec()
        self.weight_spec()
        return self

    def spec(self) -> DomainSpec:
        return domain_from_dict(self.domain)

    def weight_spec(self) -> WeightSpec:
        return WeightSpec.from_dict(self.weight)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        return io.config_hash({k: v for k, v in self.to_dict().items() if k != "output_dir"})


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str, n: Optional[int], what: str) -> list:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise InvalidDomain(f"{what} must be comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise InvalidDomain(f"{what} needs {n} numbers, got {text!r}")
    return vals


def _domain_from_flags(ns) -> dict:
    center = _floats(ns.center, 2, "--center") if ns.center else [0.0, 0.0]
    kind = ns.domain
    if kind in ("disk", "annulus"):
        outer = {"type": "disk", "center": center, "radius": ns.radius}
    elif kind == "ellipse":
        a, b = _floats(ns.axes, 2, "--axes")
        outer = {"type": "ellipse", "a": a, "b": b, "center": center}
    elif kind == "rectangle":
        w, h = _floats(ns.size, 2, "--size")
        outer = {"type": "rectangle", "width": w, "height": h, "center": center}
    else:
        raise InvalidDomain(f"unknown domain {kind!r}")
    holes = []
    for text in ns.hole or []:
        x, y, r = _floats(text, 3, "--hole")
        holes.append({"type": "disk", "center": [x, y], "radius": r})
    if kind == "annulus" and not holes:
        holes = [{"type": "disk", "center": [0.0, 0.0], "radius": 0.25}]
    return {"outer": outer, "holes": holes}


def _load_file(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


def config_from_args(ns) -> RunConfig:
    cfg = RunConfig(
        domain=_domain_from_flags(ns),
        target_h=ns.target_h,
        lambda_cap=ns.lambda_cap,
        thresholds=ns.thresholds,
        output_dir=ns.output_dir,
        seed=ns.seed,
    )
    if ns.weight:
        cfg.weight = json.loads(ns.weight)
    if ns.rho_hints:
        cfg.rho_hints = [r * math.pi for r in _floats(ns.rho_hints, None, "--rho-hints")]
    for name in ("rho", "alpha", "a", "r1", "r2"):
        v = getattr(ns, name, None)
        if v is not None:
            setattr(cfg, name, v * math.pi if name == "rho" else v)
    if ns.config:
        for k, v in _load_file(ns.config).items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config field {k!r}")
            setattr(cfg, k, v)
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfelab", description="Mean field equation laboratory")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--domain", default="disk", choices=["disk", "annulus", "ellipse", "rectangle"])
    common.add_argument("--radius", type=float, default=1.0)
    common.add_argument("--center", default=None, help="x,y")
    common.add_argument("--axes", default="2,0.5", help="a,b for the ellipse")
    common.add_argument("--size", default="4,0.5", help="width,height for the rectangle")
    common.add_argument("--hole", action="append", help="x,y,r (repeatable)")
    common.add_argument("--weight", default=None, help="weight spec as JSON")
    common.add_argument("--target-h", dest="target_h", type=float, default=0.03)
    common.add_argument("--rho-hints", dest="rho_hints", default=None, help="comma-separated multiples of π")
    common.add_argument("--lambda-cap", dest="lambda_cap", type=float, default=12.0)
    common.add_argument("--thresholds", type=int, default=32)
    common.add_argument("--output-dir", dest="output_dir", default="mfelab_out")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="JSON or YAML file; its fields override flags")
    common.add_argument("--json", action="store_true", help="print records as JSON")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common])
    sub.add_parser("branch", parents=[common])
    b = sub.add_parser("bol", parents=[common])
    b.add_argument("--rho", type=float, default=None, help="multiple of π")
    b.add_argument("--counterexample", action="store_true")
    b.add_argument("--alpha", type=float, default=None)
    s = sub.add_parser("symmetrize", parents=[common])
    s.add_argument("--rho", type=float, default=None, help="multiple of π")
    sub.add_parser("ensemble", parents=[common])
    c = sub.add_parser("counterexample", parents=[common])
    c.add_argument("--alpha", type=float, default=None)
    c.add_argument("--a", type=float, default=None)
    c.add_argument("--r1", type=float, default=None)
    c.add_argument("--r2", type=float, default=None)
    sub.add_parser("mesh", parents=[common])
    return p


# ---------------------------------------------------------------------------
# commands


def _outdir(cfg) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(record: dict, as_json: bool):
    if as_json:
        sys.stdout.write(io.dumps(record))
    else:
        for k in sorted(record):
            v = record[k]
            if not isinstance(v, (dict, list)):
                print(f"{k}: {v}")


def cmd_classify(cfg: RunConfig, as_json: bool = False) -> dict:
    spec = cfg.spec()
    mesh = triangulate(spec, cfg.target_h)
    rep = classify(spec, mesh, cfg.weight_spec())
    rec = rep.to_dict() | {"config_hash": cfg.hash}
    io.write_json(_outdir(cfg) / "classify.json", rec)
    _emit(rec, as_json)
    return rec


def _solve_branch(cfg: RunConfig):
    """Classify, then follow the branch: bubble-enriched at q for first kind."""
    spec, weight = cfg.spec(), cfg.weight_spec()
    rep = classify(spec, triangulate(spec, cfg.target_h), weight)
    if rep.verdict == FIRST_KIND:
        mesh = blowup_mesh(spec, cfg.target_h, rep.q, cfg.lambda_cap)
        br = continue_branch(mesh, weight, cfg.rho_hints, cfg.lambda_cap, center=rep.q)
    else:
        mesh = triangulate(spec, cfg.target_h)
        br = continue_branch(mesh, weight, cfg.rho_hints, cfg.lambda_cap)
    return rep, mesh, br


def cmd_branch(cfg: RunConfig, as_json: bool = False) -> dict:
    rep, mesh, br = _solve_branch(cfg)
    out = _outdir(cfg)
    h = cfg.hash
    io.write_csv(out / "branch.csv", br.records(), BRANCH_COLUMNS, h)
    table = canonical_table(br, [r for r in cfg.rho_hints if r < EIGHT_PI], domain_id=h)
    io.write_csv(out / "ensemble.csv", table.rows(), ("beta", "lambda", "f", "F", "E", "S"), h)
    io.plot_branch(out / "branch.svg", br, h)
    io.plot_ensemble(out / "ensemble.svg", table, h)
    rec = {"termination": br.termination, "points": len(br), "verdict": rep.verdict, "D_value": rep.D_value,
           "final_rho": br.points[-1].rho if br.points else None,
           "final_lambda": br.points[-1].lambda_blow if br.points else None, "config_hash": h}
    try:
        slope, intercept = fit_blowup_rate(br)
        rec.update(slope=slope, intercept=intercept)
    except MFELabError:
        pass
    io.write_json(out / "branch.json", rec)
    _emit(rec, as_json)
    return rec


def _solution_at(cfg: RunConfig):
    spec, weight = cfg.spec(), cfg.weight_spec()
    mesh = triangulate(spec, cfg.target_h)
    br = continue_branch(mesh, weight, [cfg.rho], cfg.lambda_cap, rho_stop=cfg.rho)
    pt = br.points[-1]
    if abs(pt.rho - cfg.rho) > 1e-12 * cfg.rho:
        pt = newton_solve(mesh, weight, cfg.rho, pt.u)
    return mesh, pt


def cmd_bol(cfg: RunConfig, as_json: bool = False, counterexample: bool = False) -> dict:
    h = cfg.hash
    if counterexample:
        m, ell, margin = counterexample_metrics(cfg.alpha, cfg.a, cfg.r1, cfg.r2)
        rec = {"alpha": cfg.alpha, "a": cfg.a, "r1": cfg.r1, "r2": cfg.r2, "m": m, "ell": ell,
               "margin_8pi": margin, "config_hash": h}
        io.write_json(_outdir(cfg) / "counterexample.json", rec)
        _emit(rec, as_json)
        return rec
    mesh, pt = _solution_at(cfg)
    rep = bol_check(mesh, pt, cfg.thresholds)
    out = _outdir(cfg)
    io.write_csv(out / "bol.csv", rep.rows(), ("t", "m", "ell", "margin", "components", "simply_connected"), h)
    io.plot_contours(out / "bol.svg", mesh, bol_field(pt), rep.thresholds, h)
    rec = rep.to_dict() | {"config_hash": h}
    io.write_json(out / "bol.json", rec)
    _emit(rec, as_json)
    return rec


def cmd_symmetrize(cfg: RunConfig, as_json: bool = False) -> dict:
    mesh, pt = _solution_at(cfg)
    rep = symmetrize(mesh, pt.u, bol_field(pt))
    out = _outdir(cfg)
    h = cfg.hash
    rows = [{"r": r, "phi_star": v} for r, v in zip(rep.profile.radii, rep.profile.values)]
    io.write_csv(out / "profile.csv", rows, ("r", "phi_star"), h)
    io.plot_profile(out / "profile.svg", rep.profile, h)
    rec = rep.to_dict() | {"rho": pt.rho, "config_hash": h}
    io.write_json(out / "symmetrize.json", rec)
    _emit(rec, as_json)
    return rec


def cmd_ensemble(cfg: RunConfig, as_json: bool = False) -> dict:
    rep, mesh, br = _solve_branch(cfg)
    h = cfg.hash
    table = canonical_table(br, [r for r in cfg.rho_hints if r < EIGHT_PI], domain_id=h)
    leg = legendre_check(table)
    kind = kind_verdict(table, br, rep)
    out = _outdir(cfg)
    io.write_csv(out / "ensemble.csv", table.rows(), ("beta", "lambda", "f", "F", "E", "S"), h)
    io.plot_ensemble(out / "ensemble.svg", table, h)
    rec = {"legendre": leg.to_dict(), "kind": kind.to_dict(), "config_hash": h}
    io.write_json(out / "ensemble.json", rec)
    _emit(rec, as_json)
    return rec


def cmd_counterexample(cfg: RunConfig, as_json: bool = False) -> dict:
    return cmd_bol(cfg, as_json, counterexample=True)


def cmd_mesh(cfg: RunConfig, as_json: bool = False) -> dict:
    mesh = triangulate(cfg.spec(), cfg.target_h)
    out = _outdir(cfg)
    path = out / "mesh.txt"
    mesh.save(path)
    path.write_text(f"# config_hash={cfg.hash}\n" + path.read_text())
    io.plot_mesh(out / "mesh.svg", mesh, cfg.hash)
    rec = {"nodes": mesh.n_nodes, "triangles": len(mesh.triangles), "boundary_nodes": len(mesh.boundary),
           "area": float(mesh.areas.sum()), "config_hash": cfg.hash}
    io.write_json(out / "mesh.json", rec)
    _emit(rec, as_json)
    return rec


COMMANDS = {
    "classify": cmd_classify,
    "branch": cmd_branch,
    "symmetrize": cmd_symmetrize,
    "ensemble": cmd_ensemble,
    "counterexample": cmd_counterexample,
    "mesh": cmd_mesh,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(ns)
        if ns.command == "bol":
            cmd_bol(cfg, ns.json, counterexample=ns.counterexample)
        else:
            COMMANDS[ns.command](cfg, ns.json)
    except _INPUT_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return INVALID
    except MFELabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERICAL
    except (ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return INVALID
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERICAL
    return OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
