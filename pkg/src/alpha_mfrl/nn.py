"""Small numpy MLPs for the Gaussian policy and the value function.

Parameters are plain ``dict[str, np.ndarray]`` keyed by layer name so that
optimizer state, checkpoints and finite-difference checks can iterate them
uniformly. Trunk layers are ``w{i}``/``b{i}`` with ReLU; the policy has a tanh
mean head (``mean_w``/``mean_b``) and a softplus std head (``std_w``/``std_b``);
the value net has a linear head (``out_w``/``out_b``).
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fidelity import NumericFault

STD_FLOOR = 1e-3
# tanh rounds to +-1.0 in float64 beyond |x| ~ 19; the mean must stay inside the open box
_MEAN_BOUND = float(np.nextafter(1.0, 0.0))
LOG_2PI = np.log(2.0 * np.pi)

Params = dict[str, np.ndarray]


@dataclass
class PolicyOutput:
    mean: np.ndarray
    std: np.ndarray


def _trunk_init(rng, n_in, width, depth) -> Params:
    p = {}
    fan_in = n_in
    for i in range(depth):
        p[f"w{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
        p[f"b{i}"] = np.zeros(width)
        fan_in = width
    return p


def init_policy(rng: np.random.Generator, width: int = 1024, n_in: int = 2, n_act: int = 2,
                depth: int = 2, head_std: float = 0.01) -> Params:
    p = _trunk_init(rng, n_in, width, depth)
    p["mean_w"] = rng.normal(0.0, head_std, size=(width, n_act))
    p["mean_b"] = np.zeros(n_act)
    p["std_w"] = rng.normal(0.0, head_std, size=(width, n_act))
    p["std_b"] = np.zeros(n_act)
    return p


def init_value(rng: np.random.Generator, width: int = 1024, n_in: int = 2, depth: int = 2,
               head_std: float = 0.01) -> Params:
    p = _trunk_init(rng, n_in, width, depth)
    p["out_w"] = rng.normal(0.0, head_std, size=(width, 1))
    p["out_b"] = np.zeros(1)
    return p


def copy_params(p: Params) -> Params:
    return {k: v.copy() for k, v in p.items()}


def _depth(p: Params) -> int:
    return sum(1 for k in p if k.startswith("w") and k[1:].isdigit())


def _trunk_forward(p: Params, x: np.ndarray):
    cache = [x]
    h = x
    for i in range(_depth(p)):
        z = h @ p[f"w{i}"] + p[f"b{i}"]
        h = np.maximum(z, 0.0)
        cache.append(h)
    return h, cache


def _trunk_backward(p: Params, cache, dh: np.ndarray, grads: Params) -> None:
    for i in reversed(range(_depth(p))):
        h_out, h_in = cache[i + 1], cache[i]
        dz = dh * (h_out > 0.0)
        grads[f"w{i}"] = h_in.T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ p[f"w{i}"].T


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(*arrays, what="activation"):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericFault(f"non-finite {what}")


def _as_batch(s):
    x = np.asarray(s, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _squash(m_pre):
    return np.clip(np.tanh(m_pre), -_MEAN_BOUND, _MEAN_BOUND)


def _policy_heads(p: Params, x):
    h, cache = _trunk_forward(p, x)
    m_pre = h @ p["mean_w"] + p["mean_b"]
    s_pre = h @ p["std_w"] + p["std_b"]
    return h, cache, m_pre, s_pre


def policy_forward(p: Params, s) -> PolicyOutput:
    """Mean in (-1, 1) via tanh, std >= STD_FLOOR via softplus. Accepts (2,) or (B, 2)."""
    x, single = _as_batch(s)
    _, _, m_pre, s_pre = _policy_heads(p, x)
    mean = _squash(m_pre)
    std = softplus(s_pre) + STD_FLOOR
    _check_finite(mean, std)
    if single:
        return PolicyOutput(mean[0], std[0])
    return PolicyOutput(mean, std)


def policy_mean(p: Params, s) -> np.ndarray:
    x, single = _as_batch(s)
    h, _ = _trunk_forward(p, x)
    mean = _squash(h @ p["mean_w"] + p["mean_b"])
    _check_finite(mean)
    return mean[0] if single else mean


def value_forward(p: Params, s):
    x, single = _as_batch(s)
    h, _ = _trunk_forward(p, x)
    v = (h @ p["out_w"] + p["out_b"])[:, 0]
    _check_finite(v)
    return float(v[0]) if single else v


def gaussian_log_prob(out: PolicyOutput, a) -> np.ndarray | float:
    """Diagonal Gaussian log-density summed over action dimensions."""
    std = np.asarray(out.std)
    if np.any(std <= 0):
        raise ValueError("standard deviation must be positive")
    z = (np.asarray(a) - out.mean) / std
    lp = np.sum(-0.5 * z * z - np.log(std) - 0.5 * LOG_2PI, axis=-1)
    return float(lp) if np.ndim(lp) == 0 else lp


def gaussian_entropy(std) -> np.ndarray | float:
    e = np.sum(0.5 + 0.5 * LOG_2PI + np.log(std), axis=-1)
    return float(e) if np.ndim(e) == 0 else e


def gaussian_sample_raw(out: PolicyOutput, rng: np.random.Generator) -> np.ndarray:
    """Unclamped draw ``mean + std * z``; this is what the likelihood is scored on."""
    return out.mean + out.std * rng.standard_normal(np.shape(out.mean))


def gaussian_sample(out: PolicyOutput, rng: np.random.Generator) -> np.ndarray:
    """Draw clamped to [-1, 1] so it is a valid environment action."""
    return np.clip(gaussian_sample_raw(out, rng), -1.0, 1.0)


def ppo_policy_loss(p: Params, states, actions, advantages, old_log_probs,
                    clip_eps: float, entropy_coef: float, need_grad: bool = True):
    """Clipped surrogate loss with entropy bonus, and its exact gradient.

    Returns ``(loss, grads, stats)``; ``grads`` is None when ``need_grad`` is false.
    """
    x = np.asarray(states, dtype=np.float64)
    n = x.shape[0]
    h, cache, m_pre, s_pre = _policy_heads(p, x)
    mu = _squash(m_pre)
    sp = softplus(s_pre)
    sigma = sp + STD_FLOOR
    diff = actions - mu
    logp = np.sum(-0.5 * (diff / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI, axis=1)
    ratio = np.exp(logp - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    surrogate = np.minimum(unclipped, clipped)
    entropy = np.sum(0.5 + 0.5 * LOG_2PI + np.log(sigma), axis=1)
    loss = -surrogate.mean() - entropy_coef * entropy.mean()
    stats = {
        "policy_loss": float(-surrogate.mean()),
        "entropy": float(entropy.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
    }
    if not np.isfinite(loss):
        raise NumericFault("non-finite policy loss")
    if not need_grad:
        return float(loss), None, stats

    # d(-surrogate)/dlogp is -ratio*A on the unclipped branch, 0 where the clip is active
    active = unclipped <= clipped
    dlogp = np.where(active, -unclipped, 0.0) / n
    dmu = dlogp[:, None] * diff / sigma**2
    dsigma = dlogp[:, None] * (diff**2 / sigma**3 - 1.0 / sigma)
    dsigma += -entropy_coef / n / sigma
    dm_pre = dmu * (1.0 - mu * mu)
    ds_pre = dsigma * sigmoid(s_pre)

    grads: Params = {
        "mean_w": h.T @ dm_pre,
        "mean_b": dm_pre.sum(axis=0),
        "std_w": h.T @ ds_pre,
        "std_b": ds_pre.sum(axis=0),
    }
    dh = dm_pre @ p["mean_w"].T + ds_pre @ p["std_w"].T
    _trunk_backward(p, cache, dh, grads)
    return float(loss), grads, stats


def value_loss(p: Params, states, returns, need_grad: bool = True):
    """Mean squared error of the value head against ``returns``."""
    x = np.asarray(states, dtype=np.float64)
    n = x.shape[0]
    h, cache = _trunk_forward(p, x)
    v = (h @ p["out_w"] + p["out_b"])[:, 0]
    err = v - returns
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericFault("non-finite value loss")
    if not need_grad:
        return loss, None
    dv = (2.0 / n) * err[:, None]
    grads: Params = {"out_w": h.T @ dv, "out_b": dv.sum(axis=0)}
    _trunk_backward(p, cache, dv @ p["out_w"].T, grads)
    return loss, grads


class Adam:
    """Adam with bias correction; updates a params dict in place."""

    def __init__(self, params: Params, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if params[k].shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": copy_params(self.m), "v": copy_params(self.v)}

    def load_state_dict(self, state: dict) -> None:
        self.t = state["t"]
        self.m = copy_params(state["m"])
        self.v = copy_params(state["v"])


# -- checkpoints -------------------------------------------------------------

MAGIC = b"ALPHANN1"


class CheckpointError(Exception):
    pass


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 8:
        raise CheckpointError("file too short for header")
    if data[:8] != MAGIC:
        if data[:7] == MAGIC[:7]:
            raise CheckpointError(f"unsupported checkpoint version {data[7:8]!r}")
        raise CheckpointError("bad magic; not an ALPHANN checkpoint")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor name is not valid UTF-8") from exc
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims)
        out[name] = arr.astype(np.float64)
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after last tensor")
    return out


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_save(path, policy: Params | None = None, value: Params | None = None) -> None:
    tensors = {}
    for prefix, params in (("policy", policy), ("value", value)):
        if params is not None:
            tensors.update({f"{prefix}/{k}": v for k, v in params.items()})
    atomic_write_bytes(path, encode_checkpoint(tensors))


def checkpoint_load(path) -> tuple[Params, Params]:
    """Load ``(policy, value)``; either may be empty if it was not saved."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    tensors = decode_checkpoint(data)
    policy, value = {}, {}
    for name, arr in tensors.items():
        prefix, _, key = name.partition("/")
        if prefix == "policy":
            policy[key] = arr
        elif prefix == "value":
            value[key] = arr
        else:
            raise CheckpointError(f"unexpected tensor {name!r}")
    return policy, value
