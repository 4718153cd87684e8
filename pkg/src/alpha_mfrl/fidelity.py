"""Modified-Ackley design environment with one high- and two low-fidelity models.

States live in the scaled box [-1, 1]^2; the models take physical
coordinates, which are the scaled ones multiplied by ``HALF_WIDTH``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable

import numpy as np

HALF_WIDTH = 32.768
STEP_SCALE = 0.2
F_NORM = 50.0
H_MID = 0.5 * (np.e - np.exp(-1.0))

MEAN_COST_HF = 275e-6
MEAN_COST_LF = 32e-6


class ModelId(str, Enum):
    LF1 = "lf1"
    LF2 = "lf2"
    HF = "hf"


MODELS = (ModelId.LF1, ModelId.LF2, ModelId.HF)


@dataclass(frozen=True)
class AckleyParams:
    """Shifted minimum ``center`` (physical units) and depth factor ``alpha``."""

    center: tuple[float, float]
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if any(abs(c) > HALF_WIDTH for c in self.center):
            raise ValueError(f"center {self.center} outside [-{HALF_WIDTH}, {HALF_WIDTH}]")


def eval_g(p, params: AckleyParams):
    """Exponential envelope term; ``p`` is physical, shape (..., 2)."""
    p = np.asarray(p, dtype=np.float64)
    dx = p[..., 0] - params.center[0]
    dy = p[..., 1] - params.center[1]
    return 20.0 - 20.0 * params.alpha * np.exp(-0.2 * np.sqrt(0.5 * (dx * dx + dy * dy)))


def eval_h(p, center):
    """Cosine ripple term centred on ``center``; ``p`` is physical."""
    p = np.asarray(p, dtype=np.float64)
    dx = p[..., 0] - center[0]
    dy = p[..., 1] - center[1]
    return np.e - np.exp(0.5 * (np.cos(2.0 * np.pi * dx) + np.cos(2.0 * np.pi * dy)))


def ackley(p, params: AckleyParams):
    return eval_g(p, params) + eval_h(p, params.center)


_A = AckleyParams((0.5 * HALF_WIDTH, 0.5 * HALF_WIDTH), 1.5)
_B = AckleyParams((-0.5 * HALF_WIDTH, -0.5 * HALF_WIDTH), 1.0)
_C = (-0.3 * HALF_WIDTH, -0.3 * HALF_WIDTH)
_D = (0.3 * HALF_WIDTH, 0.3 * HALF_WIDTH)


def f_hf(p):
    """High-fidelity objective at scaled point(s) ``p``."""
    x = np.asarray(p, dtype=np.float64) * HALF_WIDTH
    return ackley(x, _B) + ackley(x, _A)


def f_lf1(p):
    x = np.asarray(p, dtype=np.float64) * HALF_WIDTH
    return eval_g(x, AckleyParams(_C, 1.0)) + eval_g(x, AckleyParams(_D, 0.0)) + 2.0 * H_MID


def f_lf2(p):
    x = np.asarray(p, dtype=np.float64) * HALF_WIDTH
    return eval_g(x, AckleyParams(_C, 0.0)) + eval_g(x, AckleyParams(_D, 1.5)) + 2.0 * H_MID


@dataclass(frozen=True)
class FidelityModel:
    name: str
    objective: Callable[[np.ndarray], np.ndarray]
    mean_cost: float


# Extension point: other environments register their own evaluators here.
REGISTRY: dict[str, FidelityModel] = {
    ModelId.LF1.value: FidelityModel("lf1", f_lf1, MEAN_COST_LF),
    ModelId.LF2.value: FidelityModel("lf2", f_lf2, MEAN_COST_LF),
    ModelId.HF.value: FidelityModel("hf", f_hf, MEAN_COST_HF),
}


def register_model(model: FidelityModel) -> None:
    REGISTRY[model.name] = model


def _key(model) -> str:
    return model.value if isinstance(model, ModelId) else str(model)


@dataclass
class CostLedger:
    """Per-model evaluation counts; time totals are computed in exact decimal arithmetic."""

    counts: dict[str, int] = field(default_factory=lambda: {m.value: 0 for m in MODELS})
    mean_costs: dict[str, float] = field(
        default_factory=lambda: {m.value: REGISTRY[m.value].mean_cost for m in MODELS}
    )

    def charge(self, model, n: int = 1) -> None:
        k = _key(model)
        if k not in self.mean_costs:
            self.mean_costs[k] = REGISTRY[k].mean_cost
        self.counts[k] = self.counts.get(k, 0) + n

    @property
    def count_lf1(self) -> int:
        return self.counts.get("lf1", 0)

    @property
    def count_lf2(self) -> int:
        return self.counts.get("lf2", 0)

    @property
    def count_hf(self) -> int:
        return self.counts.get("hf", 0)

    @property
    def total_count(self) -> int:
        return sum(self.counts.values())

    def model_time(self, model) -> float:
        k = _key(model)
        return float(self.counts.get(k, 0) * Fraction(repr(self.mean_costs[k])))

    @property
    def total_time(self) -> float:
        return float(sum(c * Fraction(repr(self.mean_costs[k])) for k, c in self.counts.items()))


def eval_model(model, p, ledger: CostLedger | None = None) -> float:
    """Evaluate ``model`` at scaled point ``p``, charging one call to ``ledger``."""
    value = float(REGISTRY[_key(model)].objective(p))
    if ledger is not None:
        ledger.charge(model)
    return value


def quality(model, p):
    """Normalised quality; 1 at f = 0 and decreasing in f. Never charges a ledger."""
    return 1.0 - REGISTRY[_key(model)].objective(p) / F_NORM


class NumericFault(FloatingPointError):
    """A non-finite value reached the environment or a network."""


def clip_state(s):
    return np.clip(s, -1.0, 1.0)


class DesignEnv:
    """Stateful stepping with cached quality so one step costs one charged evaluation.

    The quality of the current state under the acting model is cached from the
    previous step. When the seed is new or the model changed, that baseline
    value is re-queried without charging, since the design was already
    evaluated (or is the seed).
    """

    def __init__(self, ledger: CostLedger | None = None):
        self.ledger = ledger if ledger is not None else CostLedger()
        self.state = np.zeros(2)
        self._cached: tuple[str, float] | None = None

    def reset(self, seed) -> np.ndarray:
        self.state = np.array(seed, dtype=np.float64)
        if not np.all(np.isfinite(self.state)):
            raise NumericFault(f"non-finite seed {self.state}")
        self._cached = None
        return self.state.copy()

    def step(self, action, model) -> tuple[np.ndarray, float]:
        a = np.asarray(action, dtype=np.float64)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(self.state))):
            raise NumericFault(f"non-finite state {self.state} or action {a}")
        k = _key(model)
        if self._cached is not None and self._cached[0] == k:
            q_prev = self._cached[1]
        else:
            q_prev = float(quality(k, self.state))
        s_next = clip_state(self.state + STEP_SCALE * a)
        q_next = 1.0 - eval_model(k, s_next, self.ledger) / F_NORM
        self.state = s_next
        self._cached = (k, q_next)
        return s_next.copy(), q_next - q_prev


def env_step(s, a, model, ledger: CostLedger | None = None) -> tuple[np.ndarray, float]:
    """One stateless step from ``s``; charges exactly one evaluation."""
    env = DesignEnv(ledger)
    env.reset(s)
    return env.step(a, model)


def sample_seeds(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(n, 2))


def sample_seed(rng: np.random.Generator) -> np.ndarray:
    return sample_seeds(rng, 1)[0]
