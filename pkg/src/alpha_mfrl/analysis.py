"""Post-hoc analyses of a training run: model usage over time and space, Moran's I, efficiency."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .fidelity import MODELS

MODEL_NAMES = tuple(m.value for m in MODELS)


class AnalysisError(ValueError):
    pass


def usage_over_time(usage: Sequence[Mapping], window: int) -> list[dict]:
    """Per-window fraction of steps assigned to each model.

    ``usage`` rows need ``episode`` and ``model`` keys (as in usage.csv).
    A window longer than the run collapses to a single window.
    """
    if not usage:
        raise AnalysisError("usage log is empty")
    if window < 1:
        raise AnalysisError("window must be >= 1")
    episodes = np.array([r["episode"] for r in usage])
    models = np.array([r["model"] for r in usage])
    first, last = int(episodes.min()), int(episodes.max())
    if window > last - first + 1:
        window = last - first + 1
    out = []
    for lo in range(first, last + 1, window):
        mask = (episodes >= lo) & (episodes < lo + window)
        n = int(mask.sum())
        if n == 0:
            continue
        counts = {m: int(np.sum(models[mask] == m)) for m in MODEL_NAMES}
        row = {"episode_start": lo, "episode_end": min(lo + window, last + 1) - 1, "steps": n}
        row.update({f"frac_{m}": counts[m] / n for m in MODEL_NAMES})
        out.append(row)
    return out


def usage_fraction(usage: Sequence[Mapping], models, episode_lo: int, episode_hi: int) -> float:
    """Fraction of steps with episode in [lo, hi) that used any of ``models``."""
    models = {models} if isinstance(models, str) else set(models)
    sel = [r for r in usage if episode_lo <= r["episode"] < episode_hi]
    if not sel:
        raise AnalysisError(f"no steps in episodes [{episode_lo}, {episode_hi})")
    return sum(r["model"] in models for r in sel) / len(sel)


@dataclass
class SpatialGrid:
    resolution: int
    visits: np.ndarray                     # (res, res) steps per cell
    counts: dict[str, np.ndarray]          # model -> (res, res) steps per cell

    @property
    def cell_width(self) -> float:
        return 2.0 / self.resolution

    def centers(self) -> np.ndarray:
        """(res, res, 2) cell centres; axis 0 is x1, axis 1 is x2."""
        c = -1.0 + (np.arange(self.resolution) + 0.5) * self.cell_width
        return np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1)

    @property
    def visited(self) -> np.ndarray:
        return self.visits > 0

    def proportions(self, model: str) -> np.ndarray:
        """Usage proportion per cell; NaN in unvisited cells."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.visited, self.counts[model] / self.visits, np.nan)


def cell_index(x, resolution: int) -> np.ndarray:
    """Bin scaled coordinates into cells; the upper boundary 1.0 falls in the last cell."""
    idx = np.floor((np.asarray(x, dtype=np.float64) + 1.0) * resolution / 2.0).astype(int)
    return np.clip(idx, 0, resolution - 1)


def grid_usage_proportions(usage: Sequence[Mapping], resolution: int = 10) -> SpatialGrid:
    visits = np.zeros((resolution, resolution), dtype=np.int64)
    counts = {m: np.zeros((resolution, resolution), dtype=np.int64) for m in MODEL_NAMES}
    if usage:
        xy = np.array([[r["x1"], r["x2"]] for r in usage], dtype=np.float64)
        if np.any(np.abs(xy) > 1.0):
            raise AnalysisError("usage log contains states outside [-1, 1]^2")
        i = cell_index(xy[:, 0], resolution)
        j = cell_index(xy[:, 1], resolution)
        np.add.at(visits, (i, j), 1)
        models = np.array([r["model"] for r in usage])
        for m in MODEL_NAMES:
            sel = models == m
            np.add.at(counts[m], (i[sel], j[sel]), 1)
    return SpatialGrid(resolution, visits, counts)


def kernel_weights(points: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian kernel weights between points with a zero diagonal, no row standardisation."""
    pts = np.asarray(points, dtype=np.float64)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    w = np.exp(-d2 / (2.0 * bandwidth**2))
    np.fill_diagonal(w, 0.0)
    return w


def kernel_weight_matrix(grid: SpatialGrid, bandwidth: float) -> np.ndarray:
    """Weights over visited cells, ordered row-major by (x1 index, x2 index)."""
    mask = grid.visited
    if mask.sum() < 2:
        raise AnalysisError(f"need at least 2 visited cells, got {int(mask.sum())}")
    return kernel_weights(grid.centers()[mask], bandwidth)


def morans_i(values, weights) -> float:
    x = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = x.size
    if n < 2:
        raise AnalysisError("Moran's I needs at least 2 cells")
    z = x - x.mean()
    denom = float(z @ z)
    if denom <= 1e-300 or np.ptp(x) == 0.0:
        raise AnalysisError("values have zero variance; Moran's I is undefined")
    return float(n / w.sum() * (z @ w @ z) / denom)


@dataclass
class MoranResult:
    i_value: float
    p_value: float
    n_permutations: int
    n_cells_used: int
    degenerate: bool = False
    null: np.ndarray = field(default=None, repr=False)


def permutation_test(values, weights, n_perm: int, rng: np.random.Generator,
                     chunk: int = 2048) -> MoranResult:
    """One-sided (upper tail) permutation p-value for Moran's I."""
    x = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    observed = morans_i(x, w)
    if n_perm <= 0:
        return MoranResult(observed, 1.0, 0, x.size, degenerate=True, null=np.empty(0))
    z = x - x.mean()
    scale = x.size / w.sum() / float(z @ z)
    null = np.empty(n_perm)
    for lo in range(0, n_perm, chunk):
        k = min(chunk, n_perm - lo)
        zp = rng.permuted(np.broadcast_to(z, (k, z.size)), axis=1)
        null[lo:lo + k] = scale * np.einsum("ki,ij,kj->k", zp, w, zp)
    # tolerance keeps permutations that reproduce the observed arrangement counted as ties
    hits = int(np.sum(null >= observed - 1e-12 * max(1.0, abs(observed))))
    return MoranResult(observed, (1 + hits) / (1 + n_perm), n_perm, x.size, null=null)


def spatial_moran(grid: SpatialGrid, model: str, bandwidth: float, n_perm: int,
                  rng: np.random.Generator) -> MoranResult:
    values = grid.proportions(model)[grid.visited]
    return permutation_test(values, kernel_weight_matrix(grid, bandwidth), n_perm, rng)


@dataclass
class AgentEfficiency:
    agent: str
    total_time_s: float | None
    q_median: float | None
    q_25: float | None
    q_75: float | None
    seed_q_median: float | None
    missing: list[str] = field(default_factory=list)


def ledger_total(ledger_rows: Sequence[Mapping]) -> float:
    """Total evaluation seconds recomputed from per-model counts."""
    total = Fraction(0)
    for r in ledger_rows:
        if r["model"] == "total":
            continue
        total += r["count"] * Fraction(repr(float(r["mean_cost_s"])))
    return float(total)


def final_quality(eval_rows: Sequence[Mapping]) -> np.ndarray:
    last = max(r["iteration"] for r in eval_rows)
    return np.array([r["q_hf"] for r in eval_rows if r["iteration"] == last])


def efficiency_report(agents: Mapping[str, tuple[Sequence[Mapping] | None, Sequence[Mapping] | None]]
                      ) -> list[AgentEfficiency]:
    """``agents`` maps name -> (ledger rows, eval rows); missing pieces are flagged, not fatal."""
    out = []
    for name, (ledger, evals) in agents.items():
        missing = []
        total = None
        if ledger:
            total = ledger_total(ledger)
        else:
            missing.append("ledger")
        q = (None, None, None)
        seed_med = None
        if evals:
            fq = final_quality(evals)
            q = tuple(float(v) for v in np.percentile(fq, [50, 25, 75]))
            seed_med = float(np.median([r["q_hf"] for r in evals if r["iteration"] == 0]))
        else:
            missing.append("eval")
        out.append(AgentEfficiency(name, total, q[0], q[1], q[2], seed_med, missing))
    return out


def policy_field_map(policy: nn.Params, resolution: int = 10) -> list[dict]:
    """Mean action at every cell centre, for quiver plots."""
    c = -1.0 + (np.arange(resolution) + 0.5) * (2.0 / resolution)
    xx, yy = np.meshgrid(c, c, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    mean = nn.policy_mean(policy, pts)
    return [{"x1": float(p[0]), "x2": float(p[1]), "mean1": float(m[0]), "mean2": float(m[1])}
            for p, m in zip(pts, mean)]


def policy_field_from_checkpoint(path, resolution: int = 10) -> list[dict]:
    policy, _ = nn.checkpoint_load(path)
    return policy_field_map(policy, resolution)


def bandwidth_from_cells(resolution: int, cells: float) -> float:
    return cells * 2.0 / resolution
