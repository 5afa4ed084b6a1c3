"""Deterministic writers for JSON records, CSV tables and SVG plots."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def dumps(record: dict) -> str:
    return json.dumps(_clean(record), sort_keys=True, indent=2) + "\n"


def write_json(path, record: dict) -> Path:
    path = Path(path)
    path.write_text(dumps(record))
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows: Sequence[dict], columns: Iterable[str], chash: str = "") -> Path:
    """CSV with a leading ``# config_hash=...`` comment line."""
    path = Path(path)
    cols = list(columns)
    lines = []
    if chash:
        lines.append(f"# config_hash={chash}")
    lines.append(",".join(cols))
    for r in rows:
        lines.append(",".join(_fmt(r[c]) for c in cols))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> list:
    import csv

    with open(path) as fh:
        body = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(body))


# ---------------------------------------------------------------------------
# SVG


def _figure():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mfelab"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path, chash):
    fig.savefig(path, format="svg", metadata={"Date": None, "Title": f"config_hash={chash}", "Creator": "mfelab"})


def plot_branch(path, branch, chash: str = "") -> Path:
    plt = _figure()
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.6))
    rho = branch.rho / math.pi
    lam = branch.lambda_blow
    ax[0].plot(rho, lam, "o-", ms=3)
    ax[0].set_xlabel("ρ / π")
    ax[0].set_ylabel("λ = max u − log ∫h e^u")
    gap = 8 * math.pi - branch.rho
    ok = gap > 0
    ax[1].semilogy(lam[ok], gap[ok], "o-", ms=3)
    ax[1].set_xlabel("λ")
    ax[1].set_ylabel("8π − ρ")
    ax[0].set_title(branch.termination)
    fig.tight_layout()
    _save(fig, path, chash)
    plt.close(fig)
    return Path(path)


def plot_ensemble(path, table, chash: str = "") -> Path:
    plt = _figure()
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.6))
    ax[0].plot(table.beta, table.F, "o-", ms=3)
    ax[0].set_xlabel("β")
    ax[0].set_ylabel("F(β)")
    ax[1].plot(table.E, table.S, "o-", ms=3)
    ax[1].set_xlabel("E")
    ax[1].set_ylabel("S")
    fig.tight_layout()
    _save(fig, path, chash)
    plt.close(fig)
    return Path(path)


def plot_contours(path, mesh, v, levels, chash: str = "") -> Path:
    plt = _figure()
    from matplotlib.tri import Triangulation

    fig, ax = plt.subplots(figsize=(5, 5))
    tri = Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    ax.tricontour(tri, v, levels=sorted(levels), linewidths=0.6)
    ax.set_aspect("equal")
    ax.set_title("level sets of v")
    fig.tight_layout()
    _save(fig, path, chash)
    plt.close(fig)
    return Path(path)


def plot_mesh(path, mesh, chash: str = "") -> Path:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.triplot(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles, lw=0.2)
    ax.set_aspect("equal")
    fig.tight_layout()
    _save(fig, path, chash)
    plt.close(fig)
    return Path(path)


def plot_profile(path, profile, chash: str = "") -> Path:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(profile.radii, profile.values)
    ax.set_xlabel("r")
    ax.set_ylabel("φ*(r)")
    fig.tight_layout()
    _save(fig, path, chash)
    plt.close(fig)
    return Path(path)
