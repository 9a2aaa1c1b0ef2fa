"""Linear-softmax policy-gradient learners written directly against numpy.

Policy: one softmax head per action dimension over features ``[obs, 1]``
(a MultiDiscrete action factorizes into independent heads). Critic: a
linear state-value estimate over the same features. Gradients are derived
by hand so they can be checked against finite differences.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import DeceptionEnv, EnvConfig
from .errors import ConfigError, TrainingError


class Learner(str, enum.Enum):
    RANDOM = "random"
    A2C = "a2c"
    A2C_NORM = "a2c_norm"
    PPO = "ppo"


class Agents(str, enum.Enum):
    SINGLE = "single"
    MULTI = "multi"


@dataclass(frozen=True)
class Hyper:
    lr_policy: float = 0.05
    lr_value: float = 0.05
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    ppo_epochs: int = 4
    batch_episodes: int = 8
    gamma: float | None = None  # None: take the environment's reward discount
    normalize_ppo: bool = True

    def __post_init__(self):
        if self.lr_policy <= 0 or self.lr_value <= 0:
            raise ConfigError("learning rates must be positive")
        if self.clip <= 0:
            raise ConfigError("clip ratio must be positive")
        if self.ppo_epochs < 1 or self.batch_episodes < 1:
            raise ConfigError("ppo_epochs and batch_episodes must be >= 1")


@dataclass
class Adam:
    """Per-array Adam moments; ``t`` counts applied steps."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lrs: Sequence[float]) -> list[np.ndarray]:
        """Ascent step; returns new arrays and leaves the inputs untouched."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        out = []
        for i, (p, g, lr) in enumerate(zip(params, grads, lrs)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            out.append(p + lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


@dataclass
class PolicyParams:
    heads: list[np.ndarray]  # each (obs_dim + 1, n_actions)
    value: np.ndarray  # (obs_dim + 1,)
    lr_policy: float = 0.05
    lr_value: float = 0.05
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    normalize_advantage: bool = False
    opt: Adam = field(default_factory=Adam)

    @classmethod
    def zeros(cls, obs_dim: int, head_sizes: Sequence[int], **kwargs) -> "PolicyParams":
        heads = [np.zeros((obs_dim + 1, n)) for n in head_sizes]
        return cls(heads=heads, value=np.zeros(obs_dim + 1), **kwargs)

    @property
    def obs_dim(self) -> int:
        return self.value.shape[0] - 1

    @property
    def head_sizes(self) -> tuple[int, ...]:
        return tuple(h.shape[1] for h in self.heads)

    def arrays(self) -> list[np.ndarray]:
        return [*self.heads, self.value]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        return replace(self, heads=[np.array(a) for a in arrays[:-1]], value=np.array(arrays[-1]))

    def check_finite(self) -> None:
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise TrainingError("non-finite policy parameters")

    def to_dict(self) -> dict:
        return {
            "heads": [h.tolist() for h in self.heads],
            "value": self.value.tolist(),
            "lr_policy": self.lr_policy,
            "lr_value": self.lr_value,
            "clip": self.clip,
            "entropy_coef": self.entropy_coef,
            "value_coef": self.value_coef,
            "normalize_advantage": self.normalize_advantage,
            "opt": {
                "beta1": self.opt.beta1,
                "beta2": self.opt.beta2,
                "eps": self.opt.eps,
                "t": self.opt.t,
                "m": [m.tolist() for m in self.opt.m],
                "v": [v.tolist() for v in self.opt.v],
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyParams":
        data = dict(data)
        heads = [np.asarray(h, dtype=float) for h in data.pop("heads")]
        value = np.asarray(data.pop("value"), dtype=float)
        opt = dict(data.pop("opt", {}))
        for key in ("m", "v"):
            opt[key] = [np.asarray(x, dtype=float) for x in opt.get(key, [])]
        return cls(heads=heads, value=value, opt=Adam(**opt), **data)


def save_checkpoint(path: str | Path, agents: Sequence[PolicyParams], meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "agents": [p.to_dict() for p in agents]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> tuple[list[PolicyParams], dict]:
    doc = json.loads(Path(path).read_text())
    return [PolicyParams.from_dict(a) for a in doc["agents"]], doc.get("meta", {})


# --- policy evaluation -----------------------------------------------------------


def features(obs: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    return np.hstack([obs, np.ones((obs.shape[0], 1))])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_probs(params: PolicyParams, obs: np.ndarray) -> list[np.ndarray]:
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != params.obs_dim:
        raise ValueError(f"observation has {obs.shape[-1]} features, policy expects {params.obs_dim}")
    phi = features(obs)
    return [softmax(phi @ w) for w in params.heads]


def _act(params: PolicyParams, obs: np.ndarray, greedy: bool, rng: np.random.Generator) -> tuple[int, ...]:
    action = []
    for p in head_probs(params, obs):
        p = p[0]
        if greedy:
            action.append(int(np.argmax(p)))
        else:
            action.append(int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1)))
    return tuple(action)


def act(params: PolicyParams, observation: np.ndarray, mode: str = "sample", rng_seed: int = 0) -> tuple[int, ...]:
    if mode not in ("sample", "greedy"):
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    return _act(params, observation, mode == "greedy", np.random.default_rng(rng_seed))


def log_prob(params: PolicyParams, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    actions = np.atleast_2d(np.asarray(actions))
    probs = head_probs(params, obs)
    rows = np.arange(actions.shape[0])
    return sum(np.log(p[rows, actions[:, h]]) for h, p in enumerate(probs))


# --- trajectories ------------------------------------------------------------------


@dataclass
class Trajectory:
    obs: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T, n_heads)
    rewards: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    log_probs: np.ndarray  # (T,)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass(frozen=True)
class Batch:
    """Flattened trajectories plus returns and (possibly standardized) advantages."""

    obs: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray
    old_log_probs: np.ndarray


def standardize(x: np.ndarray) -> np.ndarray:
    if len(x) < 2:
        return x - x.mean()
    return (x - x.mean()) / (x.std() + 1e-8)


def make_batch(trajectories: Sequence[Trajectory], gamma: float, normalize: bool) -> Batch:
    if not trajectories or not any(len(t) for t in trajectories):
        raise TrainingError("empty batch")
    trajs = [t for t in trajectories if len(t)]
    returns = np.concatenate([discounted_returns(t.rewards, gamma) for t in trajs])
    values = np.concatenate([t.values for t in trajs])
    adv = returns - values
    if normalize:
        adv = standardize(adv)
    return Batch(
        obs=np.vstack([t.obs for t in trajs]),
        actions=np.vstack([t.actions for t in trajs]).astype(int),
        returns=returns,
        advantages=adv,
        old_log_probs=np.concatenate([t.log_probs for t in trajs]),
    )


# --- objectives and analytic gradients -----------------------------------------


def _head_terms(params: PolicyParams, batch: Batch):
    phi = features(batch.obs)
    rows = np.arange(len(batch.returns))
    probs = [softmax(phi @ w) for w in params.heads]
    logp = sum(np.log(p[rows, batch.actions[:, h]]) for h, p in enumerate(probs))
    return phi, rows, probs, logp


def _entropy(probs: list[np.ndarray]) -> np.ndarray:
    return sum(-(p * np.log(p)).sum(axis=1) for p in probs)


def objective(params: PolicyParams, batch: Batch, kind: str = "a2c", clip: float | None = None) -> float:
    """Scalar maximized by an update: policy surrogate + entropy bonus - value loss."""
    phi, rows, probs, logp = _head_terms(params, batch)
    adv = batch.advantages
    if kind == "a2c":
        surrogate = adv * logp
    elif kind == "ppo":
        eps = params.clip if clip is None else clip
        ratio = np.exp(logp - batch.old_log_probs)
        surrogate = np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)
    else:
        raise ValueError(f"unknown objective {kind!r}")
    v = phi @ params.value
    value_loss = 0.5 * (batch.returns - v) ** 2
    return float(np.mean(surrogate + params.entropy_coef * _entropy(probs) - params.value_coef * value_loss))


def gradient(params: PolicyParams, batch: Batch, kind: str = "a2c", clip: float | None = None) -> list[np.ndarray]:
    """Analytic gradient of ``objective`` for each array in ``params.arrays()``."""
    phi, rows, probs, logp = _head_terms(params, batch)
    n = len(rows)
    adv = batch.advantages
    if kind == "a2c":
        weight = adv
    elif kind == "ppo":
        eps = params.clip if clip is None else clip
        ratio = np.exp(logp - batch.old_log_probs)
        # d/dtheta of min(r A, clip(r) A): r A dlogp on the unclipped branch, else 0
        unclipped = ratio * adv <= np.clip(ratio, 1 - eps, 1 + eps) * adv
        inside = (ratio >= 1 - eps) & (ratio <= 1 + eps)
        weight = np.where(unclipped | inside, ratio * adv, 0.0)
    else:
        raise ValueError(f"unknown objective {kind!r}")
    grads = []
    for h, p in enumerate(probs):
        onehot = np.zeros_like(p)
        onehot[rows, batch.actions[:, h]] = 1.0
        d_logp = onehot - p
        h_ent = -(p * np.log(p)).sum(axis=1, keepdims=True)
        d_ent = -p * (np.log(p) + h_ent)
        dz = weight[:, None] * d_logp + params.entropy_coef * d_ent
        grads.append(phi.T @ dz / n)
    v = phi @ params.value
    grads.append(params.value_coef * phi.T @ (batch.returns - v) / n)
    return grads


def numeric_gradient(params: PolicyParams, batch: Batch, kind: str = "a2c", clip: float | None = None, h: float = 1e-6):
    """Central finite differences of ``objective``."""
    arrays = [a.copy() for a in params.arrays()]
    out = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            up = objective(params.with_arrays(arrays), batch, kind, clip)
            a[idx] = orig - h
            down = objective(params.with_arrays(arrays), batch, kind, clip)
            a[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def _apply(params: PolicyParams, grads: list[np.ndarray], batch: Batch) -> PolicyParams:
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError(
            f"non-finite gradient; batch of {len(batch.returns)} steps, "
            f"returns in [{batch.returns.min():.3g}, {batch.returns.max():.3g}], "
            f"advantages in [{batch.advantages.min():.3g}, {batch.advantages.max():.3g}]"
        )
    lrs = [params.lr_policy] * len(params.heads) + [params.lr_value]
    opt = Adam(params.opt.beta1, params.opt.beta2, params.opt.eps, params.opt.t,
               [m.copy() for m in params.opt.m], [v.copy() for v in params.opt.v])
    new = replace(params.with_arrays(opt.step(params.arrays(), grads, lrs)), opt=opt)
    new.check_finite()
    return new


def update_a2c(params: PolicyParams, trajectories: Sequence[Trajectory], gamma: float = 0.99) -> PolicyParams:
    batch = make_batch(trajectories, gamma, params.normalize_advantage)
    return _apply(params, gradient(params, batch, "a2c"), batch)


def update_ppo(params: PolicyParams, trajectories: Sequence[Trajectory], epochs: int = 4, gamma: float = 0.99) -> PolicyParams:
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    batch = make_batch(trajectories, gamma, params.normalize_advantage)
    for _ in range(epochs):
        params = _apply(params, gradient(params, batch, "ppo"), batch)
    return params


# --- rollouts and training ----------------------------------------------------


def _rollout(
    env: DeceptionEnv,
    agents: list[PolicyParams],
    multi: bool,
    seed: int,
    rng: np.random.Generator,
    greedy: bool,
    uniform: bool = False,
) -> tuple[list[Trajectory], dict]:
    obs = env.reset(seed)
    n_agents = len(agents)
    buf = [{"obs": [], "act": [], "rew": [], "val": [], "logp": []} for _ in range(n_agents)]
    total = 0.0
    info: dict = {}
    while True:
        local = [env.local_observation(r) for r in range(n_agents)] if multi else [obs]
        actions = []
        for i, p in enumerate(agents):
            if uniform:
                a = tuple(int(rng.integers(n)) for n in p.head_sizes)
            else:
                a = _act(p, local[i], greedy, rng)
            actions.append(a)
            if not greedy and not uniform:
                phi = features(local[i])[0]
                b = buf[i]
                b["obs"].append(local[i])
                b["act"].append(a)
                b["val"].append(float(phi @ p.value))
                b["logp"].append(float(log_prob(p, local[i], [a])[0]))
        if multi:
            _, rewards, term, trunc, info = env.step_multi({r: a[0] for r, a in enumerate(actions)})
            reward = rewards[0]
        else:
            obs, reward, term, trunc, info = env.step_single(actions[0])
        total += reward
        if not greedy and not uniform:
            for b in buf:
                b["rew"].append(reward)
        if term or trunc:
            break
    trajs = []
    if not greedy and not uniform:
        for b in buf:
            trajs.append(
                Trajectory(
                    obs=np.asarray(b["obs"], dtype=float),
                    actions=np.asarray(b["act"], dtype=int),
                    rewards=np.asarray(b["rew"], dtype=float),
                    values=np.asarray(b["val"], dtype=float),
                    log_probs=np.asarray(b["logp"], dtype=float),
                )
            )
    return trajs, {"length": env.steps, "reward": total, "outcome": info.get("outcome")}


def init_agents(env: DeceptionEnv, learner: Learner | str, agents: Agents | str, hyper: Hyper = Hyper()) -> list[PolicyParams]:
    learner, agents = Learner(learner), Agents(agents)
    kw = dict(
        lr_policy=hyper.lr_policy,
        lr_value=hyper.lr_value,
        clip=hyper.clip,
        entropy_coef=hyper.entropy_coef,
        value_coef=hyper.value_coef,
        normalize_advantage=learner is Learner.A2C_NORM or (learner is Learner.PPO and hyper.normalize_ppo),
    )
    if agents is Agents.SINGLE:
        return [PolicyParams.zeros(env.obs_dim, (env.n_routers, env.n_interfaces), **kw)]
    local_dim = env.local_observation(0).shape[0] if not env._terminal else env.obs_dim // env.n_routers
    return [PolicyParams.zeros(local_dim, (env.n_interfaces,), **kw) for _ in range(env.n_routers)]


@dataclass
class TrainResult:
    agents: list[PolicyParams]
    curve: list[dict]
    env: DeceptionEnv


def train(
    env_config: EnvConfig,
    learner: Learner | str,
    agents: Agents | str,
    episodes: int,
    seed: int,
    hyper: Hyper = Hyper(),
    env: DeceptionEnv | None = None,
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Collect batches of episodes and update after each batch; random never updates."""
    learner, agents = Learner(learner), Agents(agents)
    if episodes < 0:
        raise ConfigError("episodes must be >= 0")
    env = env or DeceptionEnv(env_config)
    params = init_agents(env, learner, agents, hyper)
    multi = agents is Agents.MULTI
    gamma = hyper.gamma if hyper.gamma is not None else env.config.reward.gamma
    ss = np.random.SeedSequence(seed)
    env_seeds = ss.spawn(1)[0].generate_state(max(episodes, 1), dtype=np.uint32)
    rng = np.random.default_rng(ss.spawn(2)[1])
    curve: list[dict] = []
    pending: list[list[Trajectory]] = [[] for _ in params]
    uniform = learner is Learner.RANDOM
    for ep in range(episodes):
        trajs, row = _rollout(env, params, multi, int(env_seeds[ep]), rng, greedy=False, uniform=uniform)
        row = {"episode": ep, **row}
        curve.append(row)
        if callback:
            callback(row)
        if uniform:
            continue
        for i, t in enumerate(trajs):
            pending[i].append(t)
        if len(pending[0]) >= hyper.batch_episodes or ep == episodes - 1:
            for i in range(len(params)):
                if learner is Learner.PPO:
                    params[i] = update_ppo(params[i], pending[i], hyper.ppo_epochs, gamma)
                else:
                    params[i] = update_a2c(params[i], pending[i], gamma)
            pending = [[] for _ in params]
    return TrainResult(params, curve, env)


def evaluate(
    env: DeceptionEnv,
    params: list[PolicyParams],
    learner: Learner | str,
    agents: Agents | str,
    episodes: int,
    seed: int,
    greedy: bool = True,
) -> list[dict]:
    """Greedy evaluation by default; the random learner always samples uniformly."""
    learner, agents = Learner(learner), Agents(agents)
    ss = np.random.SeedSequence([seed, 1])
    env_seeds = ss.generate_state(episodes, dtype=np.uint32)
    rng = np.random.default_rng(ss.spawn(1)[0])
    rows = []
    uniform = learner is Learner.RANDOM
    for ep in range(episodes):
        _, row = _rollout(env, params, agents is Agents.MULTI, int(env_seeds[ep]), rng, greedy=greedy and not uniform, uniform=uniform)
        rows.append({"episode": ep, **row})
    return rows
