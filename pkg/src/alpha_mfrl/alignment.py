"""Policy-alignment model choice between two low-fidelity models and the high-fidelity one."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fidelity import ModelId, MODELS

SCHEDULE_KNEE = 0.9


@dataclass(frozen=True)
class ScheduleParams:
    epsilon: float = 0.1
    ep_max: int = 300
    knee: float = SCHEDULE_KNEE

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0 / 3.0:
            raise ValueError(f"epsilon must lie in (0, 1/3), got {self.epsilon}")
        if self.ep_max < 1:
            raise ValueError("ep_max must be >= 1")


@dataclass
class AlignmentDecision:
    episode: int
    step: int
    state: np.ndarray
    s_cos_1: float
    s_cos_2: float
    theta: float
    probs: tuple[float, float, float]
    model: ModelId
    aligned: bool


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = math.hypot(*u)
    nv = math.hypot(*v)
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))


def alignment_threshold(episode: int, sp: ScheduleParams) -> float:
    """Cosine of an angle annealed from 90 to 0 degrees, saturating at the knee."""
    knee = sp.knee * sp.ep_max
    if episode >= knee:
        return 1.0
    # cos(pi/4 (1 + c)) written as sin(pi/4 (1 - c)) so theta(0) is exactly 0
    return math.sin(0.25 * math.pi * (1.0 - math.cos(math.pi * episode / knee)))


def choice_probabilities(s1: float, s2: float, theta: float, eps: float) -> tuple[float, float, float]:
    a1 = s1 > theta
    a2 = s2 > theta
    if a1 and a2:
        return ((1.0 - eps) / 2.0, (1.0 - eps) / 2.0, eps)
    if a1:
        return (1.0 - eps, eps / 2.0, eps / 2.0)
    if a2:
        return (eps / 2.0, 1.0 - eps, eps / 2.0)
    return (eps / 2.0, eps / 2.0, 1.0 - eps)


def select_model(probs, rng: np.random.Generator) -> tuple[ModelId, bool]:
    """Categorical draw; aligned iff the drawn model attains the max probability (ties count)."""
    u = rng.random()
    i = 0 if u < probs[0] else (1 if u < probs[0] + probs[1] else 2)
    return MODELS[i], probs[i] == max(probs)


def model_choice(episode: int, step: int, state, mean_lf1, mean_lf2, mean_hf,
                 sp: ScheduleParams, rng: np.random.Generator) -> AlignmentDecision:
    s1 = cosine_similarity(mean_lf1, mean_hf)
    s2 = cosine_similarity(mean_lf2, mean_hf)
    theta = alignment_threshold(episode, sp)
    probs = choice_probabilities(s1, s2, theta, sp.epsilon)
    model, aligned = select_model(probs, rng)
    return AlignmentDecision(episode, step, np.array(state, dtype=np.float64), s1, s2, theta,
                             probs, model, aligned)
