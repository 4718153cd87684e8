"""Optional SVG renderings of the analysis tables. Requires matplotlib."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .nn import atomic_write_bytes  # noqa: E402


def _save(fig, out) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(out, buf.getvalue())


def usage_curves(out, rows) -> None:
    x = [r["episode_start"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for m in ("lf1", "lf2", "hf"):
        ax.plot(x, [r[f"frac_{m}"] for r in rows], label=m.upper())
    ax.set_xlabel("episode")
    ax.set_ylabel("usage fraction")
    ax.set_ylim(0, 1)
    ax.legend()
    _save(fig, out)


def grid_heatmap(out, grid, model) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(grid.proportions(model).T, origin="lower", extent=(-1, 1, -1, 1),
                   vmin=0, vmax=1, cmap="viridis")
    fig.colorbar(im, ax=ax, label=f"{model.upper()} proportion")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    _save(fig, out)


def quiver(out, rows) -> None:
    a = np.array([[r["x1"], r["x2"], r["mean1"], r["mean2"]] for r in rows])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.quiver(a[:, 0], a[:, 1], a[:, 2], a[:, 3], angles="xy")
    ax.set_xlim(-1, 1)
    ax.set_ylim(-1, 1)
    ax.set_aspect("equal")
    _save(fig, out)
