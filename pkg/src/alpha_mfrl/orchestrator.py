"""Training loops for the adaptive agent and its baselines, plus policy evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .alignment import AlignmentDecision, ScheduleParams, model_choice
from .fidelity import (MODELS, STEP_SCALE, CostLedger, DesignEnv, ModelId, NumericFault,
                       clip_state, quality, sample_seeds)
from .ppo import Learner, PpoHyperparams, PpoUpdateError, Sequence, Transition, make_batch, ppo_update
from .records import (EVAL_COLUMNS, LEDGER_COLUMNS, TRAINING_COLUMNS, USAGE_COLUMNS, write_csv)

log = logging.getLogger(__name__)

AGENT_KINDS = ("alpha", "hier1", "hier2", "hf_only", "lf1_only", "lf2_only")

# learner whose policy is evaluated after training, per agent kind
EVAL_LEARNER = {"alpha": "hf", "hier1": "hier", "hier2": "hier",
                "hf_only": "hf", "lf1_only": "lf1", "lf2_only": "lf2"}


@dataclass
class RunConfig:
    agent: str = "alpha"
    episode_count: int = 300
    episode_length: int = 20
    seed_count: int = 300
    rng_seed: int = 0
    hidden_width: int = 1024
    epsilon: float = 0.1
    checkpoint_interval: int = 20
    ppo: PpoHyperparams = field(default_factory=PpoHyperparams)
    out_dir: Path | None = None

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.agent!r}; expected one of {AGENT_KINDS}")
        if self.episode_count != self.seed_count:
            raise ValueError("episode_count must equal seed_count (one seed per episode)")
        if self.episode_length < 1 or self.episode_count < 1 or self.hidden_width < 1:
            raise ValueError("episode_length, episode_count and hidden_width must be positive")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        ScheduleParams(self.epsilon, self.episode_count)

    @property
    def schedule(self) -> ScheduleParams:
        return ScheduleParams(self.epsilon, self.episode_count)


def hier_schedule(agent: str, episode_length: int = 20) -> list[tuple[ModelId, int]]:
    """35% / 35% / 30% split of the episode; 7/7/6 for 20 steps."""
    n_lf = round(0.35 * episode_length)
    n_hf = episode_length - 2 * n_lf
    first, second = (ModelId.LF1, ModelId.LF2) if agent == "hier1" else (ModelId.LF2, ModelId.LF1)
    return [(first, n_lf), (second, n_lf), (ModelId.HF, n_hf)]


def scheduled_models(agent: str, episode_length: int) -> list[ModelId]:
    if agent in ("hier1", "hier2"):
        return [m for m, n in hier_schedule(agent, episode_length) for _ in range(n)]
    model = {"hf_only": ModelId.HF, "lf1_only": ModelId.LF1, "lf2_only": ModelId.LF2}[agent]
    return [model] * episode_length


class RunStreams:
    """Independent rng streams derived from one integer seed.

    The seed-design stream and the network-initialisation stream depend only on
    ``rng_seed``, so every agent kind sees the same seeds and the same initial
    weights.
    """

    def __init__(self, rng_seed: int):
        seeds, init, choice, action, shuffle = np.random.SeedSequence(rng_seed).spawn(5)
        self.seeds = np.random.default_rng(seeds)
        self.init = np.random.default_rng(init)
        self.choice = np.random.default_rng(choice)
        self.action = np.random.default_rng(action)
        self.shuffle = np.random.default_rng(shuffle)


def seed_designs(cfg: RunConfig) -> np.ndarray:
    return sample_seeds(RunStreams(cfg.rng_seed).seeds, cfg.seed_count)


def learner_names(agent: str) -> list[str]:
    if agent == "alpha":
        return [m.value for m in MODELS]
    return [EVAL_LEARNER[agent]]


def make_learners(cfg: RunConfig, rng: np.random.Generator) -> dict[str, Learner]:
    """All learners start from one shared initial policy and value network."""
    policy0 = nn.init_policy(rng, cfg.hidden_width)
    value0 = nn.init_value(rng, cfg.hidden_width)
    return {name: Learner(nn.copy_params(policy0), nn.copy_params(value0), lr=cfg.ppo.lr)
            for name in learner_names(cfg.agent)}


def _extend(buffer: list[Sequence], current: Sequence | None, tr: Transition,
            same_as_prev: bool) -> Sequence:
    if current is not None and same_as_prev:
        current.transitions.append(tr)
        return current
    seq = Sequence([tr])
    buffer.append(seq)
    return seq


def run_alpha_episode(learners: dict[str, Learner], buffers: dict[str, list[Sequence]],
                      seed, episode: int, cfg: RunConfig, env: DesignEnv,
                      usage: list[AlignmentDecision], streams: RunStreams) -> list[Sequence]:
    """Collect one episode with per-step model choice; returns the sequences it started."""
    sp = cfg.schedule
    env.reset(seed)
    started: list[Sequence] = []
    current: Sequence | None = None
    prev_model = None
    for t in range(cfg.episode_length):
        s = env.state.copy()
        try:
            outs = {m: nn.policy_forward(learners[m].policy, s) for m in ("lf1", "lf2", "hf")}
            dec = model_choice(episode, t, s, outs["lf1"].mean, outs["lf2"].mean, outs["hf"].mean,
                               sp, streams.choice)
            m = dec.model.value
            a = nn.gaussian_sample_raw(outs[m], streams.action)
            logp = nn.gaussian_log_prob(outs[m], a)
            s_next, r = env.step(np.clip(a, -1.0, 1.0), m)
        except NumericFault as exc:
            raise NumericFault(f"episode {episode} step {t}: {exc}") from exc
        tr = Transition(s, a, r, s_next, dec.aligned, logp, m, episode, t)
        seq = _extend(buffers[m], current, tr, t > 0 and m == prev_model)
        if seq is not current:
            started.append(seq)
        current, prev_model = seq, m
        usage.append(dec)
    current.terminal = True
    return started


def aligned_runs(seq: Sequence) -> list[Sequence]:
    """Maximal contiguous runs of aligned transitions, as new sequences."""
    runs: list[Sequence] = []
    cur: list[Transition] = []
    for tr in seq.transitions + [None]:
        if tr is not None and tr.aligned:
            cur.append(tr)
        elif cur:
            runs.append(Sequence(cur, terminal=seq.terminal and cur[-1] is seq.transitions[-1]))
            cur = []
    return runs


def augment_hf_buffer(buffers: dict[str, list[Sequence]], episode_sequences: list[Sequence]) -> int:
    """Copy aligned LF runs from this episode's sequences into the HF buffer; returns transitions copied."""
    copied = 0
    for seq in episode_sequences:
        if seq.transitions[0].model == "hf":
            continue
        for run in aligned_runs(seq):
            buffers["hf"].append(run)
            copied += len(run)
    return copied


def train_if_ready(buffers: dict[str, list[Sequence]], learners: dict[str, Learner],
                   hp: PpoHyperparams, rng: np.random.Generator, episode: int,
                   training_log: list[dict]) -> None:
    for name, learner in learners.items():
        buf = buffers[name]
        if sum(len(s) for s in buf) < hp.batch_threshold:
            continue
        # every sequence, native or augmented, is valued and bootstrapped by this learner's critic
        try:
            batch = make_batch(buf, [(learner.value_fn, learner.value_fn)] * len(buf), hp)
            report = ppo_update(learner, batch, hp, rng)
        except (PpoUpdateError, NumericFault) as exc:
            log.warning("episode %d: %s update skipped: %s", episode, name, exc)
            continue
        training_log.append({"episode": episode, "model": name, **report})
        buf.clear()


def run_scheduled_episode(learner: Learner, buffer: list[Sequence], seed, episode: int,
                          cfg: RunConfig, env: DesignEnv, usage: list[AlignmentDecision],
                          streams: RunStreams) -> None:
    """One episode of a single-learner agent following a fixed model schedule."""
    env.reset(seed)
    current: Sequence | None = None
    prev_model = None
    for t, model in enumerate(scheduled_models(cfg.agent, cfg.episode_length)):
        s = env.state.copy()
        m = model.value
        try:
            out = nn.policy_forward(learner.policy, s)
            a = nn.gaussian_sample_raw(out, streams.action)
            logp = nn.gaussian_log_prob(out, a)
            s_next, r = env.step(np.clip(a, -1.0, 1.0), m)
        except NumericFault as exc:
            raise NumericFault(f"episode {episode} step {t}: {exc}") from exc
        tr = Transition(s, a, r, s_next, True, logp, m, episode, t)
        current = _extend(buffer, current, tr, t > 0 and m == prev_model)
        prev_model = m
        probs = tuple(1.0 if x == model else 0.0 for x in MODELS)
        usage.append(AlignmentDecision(episode, t, s, None, None, None, probs, model, True))
    current.terminal = True


def evaluate_policy(policy: nn.Params, seeds, episode_length: int = 20) -> list[dict]:
    """Deterministic mean-action rollouts from every seed, scored by HF quality (not charged)."""
    s = np.array(seeds, dtype=np.float64).reshape(-1, 2)
    rows = []

    def record(it, states):
        q = quality(ModelId.HF, states)
        for i, (st, qi) in enumerate(zip(states, q)):
            rows.append({"seed_index": i, "iteration": it, "x1": float(st[0]),
                         "x2": float(st[1]), "q_hf": float(qi)})

    record(0, s)
    for it in range(1, episode_length + 1):
        s = clip_state(s + STEP_SCALE * nn.policy_mean(policy, s))
        record(it, s)
    rows.sort(key=lambda r: (r["seed_index"], r["iteration"]))
    return rows


def evaluate_checkpoint(path, seeds, episode_length: int = 20) -> list[dict]:
    policy, _ = nn.checkpoint_load(path)
    return evaluate_policy(policy, seeds, episode_length)


def usage_rows(usage: list[AlignmentDecision]) -> list[dict]:
    return [{"episode": d.episode, "step": d.step, "x1": float(d.state[0]), "x2": float(d.state[1]),
             "s_cos_1": d.s_cos_1, "s_cos_2": d.s_cos_2, "theta": d.theta,
             "p_lf1": d.probs[0], "p_lf2": d.probs[1], "p_hf": d.probs[2],
             "model": d.model.value, "aligned": d.aligned} for d in usage]


def ledger_rows(ledger: CostLedger) -> list[dict]:
    rows = [{"model": m.value, "count": ledger.counts.get(m.value, 0),
             "mean_cost_s": ledger.mean_costs[m.value], "total_s": ledger.model_time(m)}
            for m in MODELS]
    rows.append({"model": "total", "count": ledger.total_count, "mean_cost_s": None,
                 "total_s": ledger.total_time})
    return rows


@dataclass
class RunResult:
    cfg: RunConfig
    seeds: np.ndarray
    learners: dict[str, Learner]
    usage: list[AlignmentDecision]
    training_log: list[dict]
    ledger: CostLedger
    eval_rows: list[dict]
    checkpoints: list[Path]


def checkpoint_name(episode: int, learner: str) -> str:
    return f"ep{episode}_{learner}.alphann"


def run_training(cfg: RunConfig) -> RunResult:
    """Train one agent kind end to end; writes artifacts when ``cfg.out_dir`` is set."""
    streams = RunStreams(cfg.rng_seed)
    seeds = sample_seeds(streams.seeds, cfg.seed_count)
    learners = make_learners(cfg, streams.init)
    buffers: dict[str, list[Sequence]] = {name: [] for name in learners}
    ledger = CostLedger()
    env = DesignEnv(ledger)
    usage: list[AlignmentDecision] = []
    training_log: list[dict] = []
    checkpoints: list[Path] = []
    out = Path(cfg.out_dir) if cfg.out_dir is not None else None

    def save(ep):
        if out is None:
            return
        for name, lr in learners.items():
            path = out / "checkpoints" / checkpoint_name(ep, name)
            nn.checkpoint_save(path, lr.policy, lr.value)
            checkpoints.append(path)

    for e in range(cfg.episode_count):
        seed = seeds[e]
        if cfg.agent == "alpha":
            started = run_alpha_episode(learners, buffers, seed, e, cfg, env, usage, streams)
            augment_hf_buffer(buffers, started)
        else:
            (name,) = learners
            run_scheduled_episode(learners[name], buffers[name], seed, e, cfg, env, usage, streams)
        train_if_ready(buffers, learners, cfg.ppo, streams.shuffle, e, training_log)
        done = e + 1
        if done % cfg.checkpoint_interval == 0 and done != cfg.episode_count:
            save(done)
        if done % 50 == 0:
            log.info("%s: episode %d/%d, evaluations %d", cfg.agent, done, cfg.episode_count,
                     ledger.total_count)
    save(cfg.episode_count)

    eval_rows = evaluate_policy(learners[EVAL_LEARNER[cfg.agent]].policy, seeds, cfg.episode_length)
    if out is not None:
        write_csv(out / "usage.csv", USAGE_COLUMNS, usage_rows(usage))
        write_csv(out / "training.csv", TRAINING_COLUMNS, training_log)
        write_csv(out / "eval.csv", EVAL_COLUMNS, eval_rows)
        write_csv(out / "ledger.csv", LEDGER_COLUMNS, ledger_rows(ledger))
    return RunResult(cfg, seeds, learners, usage, training_log, ledger, eval_rows, checkpoints)
