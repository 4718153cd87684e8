"""PPO over per-model experience sequences."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence as Seq

import numpy as np

from . import nn
from .fidelity import NumericFault


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    aligned: bool
    behavior_log_prob: float
    model: str
    episode: int
    step: int


@dataclass
class Sequence:
    """Contiguous same-model run of transitions within one episode."""

    transitions: list[Transition] = field(default_factory=list)
    terminal: bool = False

    def __len__(self):
        return len(self.transitions)

    def validate(self) -> None:
        ts = self.transitions
        if not ts:
            raise ValueError("empty sequence")
        for prev, cur in zip(ts, ts[1:]):
            if cur.model != prev.model:
                raise ValueError(f"mixed models {prev.model}/{cur.model} in one sequence")
            if cur.episode != prev.episode or cur.step != prev.step + 1:
                raise ValueError(
                    f"non-consecutive steps ({prev.episode},{prev.step}) -> ({cur.episode},{cur.step})")
            if not np.array_equal(prev.s_next, cur.s):
                raise ValueError(f"state chain broken at step {cur.step}")


@dataclass
class PpoHyperparams:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    # 640 holds the first HF update past the first 10% of a 300-episode run
    batch_threshold: int = 640
    lr: float = 2e-3

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma must be in (0, 1] and lambda in [0, 1]")
        if self.clip_eps <= 0 or self.batch_threshold <= 0:
            raise ValueError("clip_eps and batch_threshold must be positive")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")


ValueFn = Callable[[np.ndarray], np.ndarray]


def compute_gae(seq: Sequence, value_fn: ValueFn, bootstrap_value_fn: ValueFn,
                hp: PpoHyperparams) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for one sequence.

    ``value_fn`` maps a (T, 2) array of states to (T,) values. The value after the
    last transition comes from ``bootstrap_value_fn`` unless the sequence is terminal.
    """
    seq.validate()
    ts = seq.transitions
    states = np.array([t.s for t in ts])
    rewards = np.array([t.r for t in ts], dtype=np.float64)
    values = np.asarray(value_fn(states), dtype=np.float64)
    next_values = np.empty_like(values)
    next_values[:-1] = values[1:]
    if seq.terminal:
        next_values[-1] = 0.0
    else:
        next_values[-1] = float(np.asarray(bootstrap_value_fn(ts[-1].s_next[None, :]))[0])
    deltas = rewards + hp.gamma * next_values - values
    adv = np.empty_like(deltas)
    acc = 0.0
    for t in range(len(ts) - 1, -1, -1):
        acc = deltas[t] + hp.gamma * hp.lam * acc
        adv[t] = acc
    return adv, adv + values


@dataclass
class TrainingBatch:
    states: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    models: list[str]

    def __len__(self):
        return len(self.states)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if adv.size < 2:
        return adv
    std = adv.std()
    if std < 1e-8:
        return adv
    return (adv - adv.mean()) / std


def make_batch(sequences: Seq[Sequence], value_fns: Seq[tuple[ValueFn, ValueFn]],
               hp: PpoHyperparams) -> TrainingBatch:
    """Flatten sequences with their GAE targets; ``value_fns[i]`` is (value, bootstrap) for sequence i."""
    if sum(len(s) for s in sequences) < 1:
        raise ValueError("no transitions to batch")
    advs, rets, trs = [], [], []
    for seq, (vf, bf) in zip(sequences, value_fns, strict=True):
        a, r = compute_gae(seq, vf, bf, hp)
        advs.append(a)
        rets.append(r)
        trs.extend(seq.transitions)
    adv, ret = np.concatenate(advs), np.concatenate(rets)
    if not (np.all(np.isfinite(adv)) and np.all(np.isfinite(ret))):
        raise NumericFault("non-finite advantages or returns")
    return TrainingBatch(
        states=np.array([t.s for t in trs]),
        actions=np.array([t.a for t in trs]),
        old_log_probs=np.array([t.behavior_log_prob for t in trs]),
        advantages=normalize_advantages(adv),
        returns=ret,
        models=[t.model for t in trs],
    )


class Learner:
    """Independent policy/value pair with their own Adam states."""

    def __init__(self, policy: nn.Params, value: nn.Params, lr: float = 2e-3):
        self.policy = policy
        self.value = value
        self.policy_opt = nn.Adam(policy, lr=lr)
        self.value_opt = nn.Adam(value, lr=lr)

    def value_fn(self, states):
        return nn.value_forward(self.value, np.atleast_2d(states))


class PpoUpdateError(RuntimeError):
    pass


def ppo_update(learner: Learner, batch: TrainingBatch, hp: PpoHyperparams,
               rng: np.random.Generator) -> dict:
    """Run ``hp.epochs`` passes of shuffled minibatch PPO on ``learner`` in place.

    On a numeric fault both networks and optimizer states are restored and
    ``PpoUpdateError`` is raised.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    saved = (nn.copy_params(learner.policy), nn.copy_params(learner.value),
             learner.policy_opt.state_dict(), learner.value_opt.state_dict())
    p_losses, v_losses, ents = [], [], []
    try:
        for _ in range(hp.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, hp.minibatch_size):
                idx = order[lo:lo + hp.minibatch_size]
                _, pg, stats = nn.ppo_policy_loss(
                    learner.policy, batch.states[idx], batch.actions[idx],
                    batch.advantages[idx], batch.old_log_probs[idx],
                    hp.clip_eps, hp.entropy_coef)
                vl, vg = nn.value_loss(learner.value, batch.states[idx], batch.returns[idx])
                if hp.value_coef != 1.0:
                    vg = {k: hp.value_coef * g for k, g in vg.items()}
                learner.policy_opt.step(learner.policy, pg)
                learner.value_opt.step(learner.value, vg)
                p_losses.append(stats["policy_loss"])
                v_losses.append(vl)
                ents.append(stats["entropy"])
        for params in (learner.policy, learner.value):
            for k, v in params.items():
                if not np.all(np.isfinite(v)):
                    raise NumericFault(f"non-finite parameter {k} after update")
    except NumericFault as exc:
        learner.policy.clear()
        learner.policy.update(saved[0])
        learner.value.clear()
        learner.value.update(saved[1])
        learner.policy_opt.load_state_dict(saved[2])
        learner.value_opt.load_state_dict(saved[3])
        raise PpoUpdateError(str(exc)) from exc
    return {
        "policy_loss": float(np.mean(p_losses)),
        "value_loss": float(np.mean(v_losses)),
        "entropy": float(np.mean(ents)),
        "batch_size": n,
    }
