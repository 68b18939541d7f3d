"""Matplotlib figures written as reproducible SVG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

from .mesh import TriMesh  # noqa: E402

_RC = {"svg.hashsalt": "oscillab", "svg.fonttype": "path", "font.size": 9}
_STYLE = {"limit": ("-", "o"), "control": ("--", "s")}


def _save(fig, path: Path):
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def sweep_figure(result, path: str | Path) -> Path:
    """Log-log plot of every metric series against epsilon.

    Limit and control cases use solid and dashed lines; the refined mesh
    level, when present, is drawn thinner in the same colour.
    """
    path = Path(path)
    hs = sorted({r["h"] for r in result.rows}, reverse=True)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for mi, m in enumerate(result.metrics):
            for case, (ls, mk) in _STYLE.items():
                for hi, h in enumerate(hs):
                    eps, v = result.series(m, case, h)
                    if len(eps) == 0:
                        continue
                    keep = v > 0
                    if not keep.any():
                        continue
                    label = f"{m} ({case}, h={h:.4g})" if len(result.metrics) > 1 else f"{case}, h={h:.4g}"
                    ax.loglog(eps[keep], v[keep], linestyle=ls, marker=mk, color=colors[mi % len(colors)],
                              linewidth=1.6 if hi == 0 else 0.8, markersize=4 if hi == 0 else 2.5,
                              label=label)
        ax.set_xlabel("epsilon")
        ax.set_ylabel("metric")
        ax.set_title(result.name)
        ax.invert_xaxis()
        if ax.has_data():
            ax.legend(fontsize=7, loc="best")
        ax.grid(True, which="both", linewidth=0.3, alpha=0.5)
        fig.tight_layout()
    _save(fig, path)
    return path


def mesh_figure(mesh: TriMesh, path: str | Path, title: str = "") -> Path:
    """Wireframe of a mesh with the boundary edges highlighted."""
    path = Path(path)
    V, T = mesh.vertices, mesh.triangles
    edges = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 5.0))
        ax.add_collection(LineCollection(V[edges], linewidths=0.2, colors="0.4"))
        ax.add_collection(LineCollection(V[mesh.boundary_edges], linewidths=0.8, colors="C3"))
        ax.set_xlim(V[:, 0].min() - 0.02, V[:, 0].max() + 0.02)
        ax.set_ylim(V[:, 1].min() - 0.02, V[:, 1].max() + 0.02)
        ax.set_aspect("equal")
        ax.set_title(title or f"{len(V)} vertices, {len(T)} triangles")
        fig.tight_layout()
    _save(fig, path)
    return path
