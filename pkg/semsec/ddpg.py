"""
The DDPG agent that designs the three precoding matrices.

The agent observes a 7-dimensional state, emits a bounded 3*N_m*N_n action,
stores transitions in a FIFO replay buffer and trains an actor-critic pair
with soft-updated target networks.
"""
from __future__ import annotations
from dataclasses import dataclass, astuple
from typing import NamedTuple, Optional, Tuple, Union
import io
import pathlib
import logging

import numpy as np

from semsec.errors import ConfigError, NumericalError, ShapeError
from semsec.nn_core import (
    BUFFER_TAG, LayerSpec, Network, OptimizerConfig, clone_network, init_network,
    load_networks, optimizer_step, save_networks, _check_same_shapes,
)

logger = logging.getLogger(__name__)

STATE_FIELDS = (
    "snr_leg_db", "snr_eve_db", "cu", "psnr_leg_prev", "psnr_eve_prev", "loss_prev", "progress"
)
STATE_DIM = len(STATE_FIELDS)
# Feature scaling applied before the actor/critic see a state.
STATE_SCALE = np.array([1 / 20, 1 / 20, 1 / 5, 1 / 40, 1 / 40, 1.0, 1.0])


@dataclass
class AgentState:
    """
    The environment state observed at one decision step, in raw units.

    ``features()`` returns the scaled vector the networks consume: SNRs/20,
    CU/5, PSNRs/40, loss clipped to [0, 1], progress unchanged.
    """
    snr_leg_db: float
    snr_eve_db: float
    cu: float
    psnr_leg_prev: float
    psnr_eve_prev: float
    loss_prev: float
    progress: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def features(self) -> np.ndarray:
        raw = self.to_array()
        raw[5] = np.clip(raw[5], 0.0, 1.0)
        return raw * STATE_SCALE


def build_state(snr_leg_db: float, snr_eve_db: float, cu: float, psnr_leg_prev: float,
                psnr_eve_prev: float, loss_prev: float, t: int, T: int) -> AgentState:
    """
    Pack the state variables in their documented order with progress t/T.
    """
    if not 0 <= t <= T or T <= 0:
        raise ValueError(f"The decision step t={t} must lie in [0, T={T}] with T > 0.")
    state = AgentState(float(snr_leg_db), float(snr_eve_db), float(cu), float(psnr_leg_prev),
                       float(psnr_eve_prev), float(loss_prev), t / T)
    if not np.all(np.isfinite(state.to_array())):
        raise NumericalError(f"Non-finite agent state: {state}.")
    return state


class OUProcess:
    """
    Ornstein-Uhlenbeck exploration noise,
    x <- x + theta*(mu - x)*dt + sigma*sqrt(dt)*N(0, I).

    Parameters
    ----------
    size: int
        Dimension of the noise vector.
    theta, sigma, dt, mu: float
        Mean reversion rate, diffusion scale, time step and long-run mean.
    rng: np.random.Generator
        The noise stream.
    """
    def __init__(self, size: int, theta: float = 0.15, sigma: float = 0.2, dt: float = 1.0,
                 mu: float = 0.0, rng: np.random.Generator = None) -> None:
        self.size = size
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self.mu = mu
        self.rng = np.random.default_rng() if rng is None else rng
        self.reset()
        return

    def reset(self) -> None:
        self.x = np.full(self.size, self.mu, dtype=np.float64)
        return

    def sample(self) -> np.ndarray:
        dx = self.theta * (self.mu - self.x) * self.dt
        dx += self.sigma * np.sqrt(self.dt) * self.rng.standard_normal(self.size)
        self.x = self.x + dx
        return self.x.copy()

    @property
    def stationary_std(self) -> float:
        """Exact stationary std of the discretized process."""
        t = self.theta * self.dt
        return float(np.sqrt(self.sigma ** 2 * self.dt / (2 * t - t ** 2)))


def select_action(actor: Network, state: Union[AgentState, np.ndarray], ou: OUProcess,
                  explore: bool, noise_scale: float = 1.0) -> np.ndarray:
    """
    a = mu(s) + noise_scale*N_t clipped to [-1, 1] when exploring, mu(s) otherwise.
    """
    features = state.features() if isinstance(state, AgentState) else np.asarray(state, dtype=np.float64)
    action = actor.forward(features[np.newaxis])[0]
    if explore:
        action = np.clip(action + noise_scale * ou.sample(), -1.0, 1.0)
    return action


def compute_reward(psnr_leg: float, psnr_eve: float, lambda_r: float) -> float:
    """r = PSNR_leg - lambda_r*PSNR_eve."""
    if not (np.isfinite(psnr_leg) and np.isfinite(psnr_eve)):
        raise NumericalError(f"PSNRs must be finite, got {psnr_leg} and {psnr_eve}.")
    return float(psnr_leg - lambda_r * psnr_eve)


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    d: float


class TransitionBatch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    d: np.ndarray


class ReplayBuffer:
    """
    A fixed-capacity ring buffer of transitions with FIFO eviction.

    Parameters
    ----------
    capacity: int
        Maximum number of stored transitions.
    state_dim, action_dim: int
        Sizes of the stored state and action vectors.
    """
    def __init__(self, capacity: int, state_dim: int = STATE_DIM, action_dim: int = 48) -> None:
        if capacity < 1:
            raise ConfigError(f"The buffer capacity must be positive, got {capacity}.")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.d = np.zeros(capacity)
        self._next = 0
        self._size = 0
        return

    def __len__(self) -> int:
        return self._size

    def ready(self, batch_size: int) -> bool:
        return self._size >= batch_size

    def push(self, t: Transition) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.d[i] = t.s, t.a, t.r, t.s_next, t.d
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        return

    def sample(self, batch_size: int, rng: np.random.Generator) -> Optional[TransitionBatch]:
        """
        A uniform minibatch drawn without replacement, or None while the
        buffer holds fewer than batch_size transitions.
        """
        if not self.ready(batch_size):
            return None
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return TransitionBatch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.d[idx])

    def contents(self) -> TransitionBatch:
        """All stored transitions, oldest first."""
        if self._size < self.capacity:
            idx = np.arange(self._size)
        else:
            idx = (self._next + np.arange(self.capacity)) % self.capacity
        return TransitionBatch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.d[idx])

    def to_bytes(self) -> bytes:
        f = io.BytesIO()
        np.savez(f, *self.contents(), capacity=self.capacity)
        return f.getvalue()

    @classmethod
    def from_bytes(cls, payload: bytes) -> ReplayBuffer:
        arrays = np.load(io.BytesIO(payload), allow_pickle=False)
        s, a, r, s_next, d = (arrays[f"arr_{i}"] for i in range(5))
        buffer = cls(int(arrays["capacity"]), s.shape[1], a.shape[1])
        for row in zip(s, a, r, s_next, d):
            buffer.push(Transition(*row))
        return buffer


def td_targets(batch: TransitionBatch, target_actor: Network, target_critic: Network,
               gamma: float) -> np.ndarray:
    """y = r + gamma*Q'(s', mu'(s'))*(1 - d). Target networks are only read."""
    if len(batch.r) == 0:
        raise ValueError("td_targets() needs a nonempty batch.")
    a_next = target_actor.forward(batch.s_next)
    q_next = target_critic.forward(np.concatenate([batch.s_next, a_next], axis=1))[:, 0]
    return batch.r + gamma * q_next * (1.0 - batch.d)


def critic_update(critic: Network, batch: TransitionBatch, y: np.ndarray, opt: OptimizerConfig) -> float:
    """
    One step on the mean squared Bellman error (1/B)*sum (y_i - Q(s_i, a_i))^2.

    Returns
    -------
    float
        The loss before the step.
    """
    if y.shape != batch.r.shape:
        raise ShapeError(f"TD targets have shape {y.shape}, expected {batch.r.shape}.")
    q = critic.forward(np.concatenate([batch.s, batch.a], axis=1))[:, 0]
    loss = float(np.mean((y - q) ** 2))
    if not np.isfinite(loss):
        raise NumericalError("The critic loss is non-finite; the update was aborted.")
    critic.zero_grad()
    critic.backward((-2.0 * (y - q) / len(y))[:, np.newaxis])
    optimizer_step(critic, opt)
    return loss


def actor_update(actor: Network, critic, states: np.ndarray, opt: OptimizerConfig) -> float:
    """
    One step on -(1/B)*sum Q(s_i, mu(s_i)). Gradients flow through the
    critic into the actor; the critic's parameters are never stepped and its
    gradients are cleared afterwards.

    The critic only needs ``forward``, ``backward`` and ``zero_grad``.
    """
    n, state_dim = states.shape
    actions = actor.forward(states)
    q = critic.forward(np.concatenate([states, actions], axis=1))
    loss = float(-np.mean(q))
    if not np.isfinite(loss):
        raise NumericalError("The actor loss is non-finite; the update was aborted.")
    input_grad = critic.backward(np.full(q.shape, -1.0 / n))
    critic.zero_grad()
    actor.zero_grad()
    actor.backward(input_grad[:, state_dim:])
    optimizer_step(actor, opt)
    return loss


def soft_update(target: Network, main: Network, tau: float) -> None:
    """theta' <- tau*theta + (1 - tau)*theta', in place."""
    _check_same_shapes(target, main)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}.")
    for p_target, p_main in zip(target.params, main.params):
        if p_target is None:
            continue
        if tau == 1.0:
            p_target[:] = p_main
        elif tau > 0.0:
            p_target += tau * (p_main - p_target)
    return


@dataclass
class AgentConfig:
    """
    DDPG hyperparameters.

    ``updates_per_step`` gradient updates follow every stored transition
    once the buffer holds ``batch_size`` transitions. Exploration noise is
    decayed linearly to 0 over the final ``noise_decay_fraction`` of the
    decision steps.
    """
    gamma: float = 0.99
    tau: float = 1e-3
    buffer_size: int = 1000
    batch_size: int = 128
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    weight_decay: float = 1e-4
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1.0
    hidden: int = 256
    updates_per_step: int = 1
    noise_decay_fraction: float = 0.2

    def validate(self) -> AgentConfig:
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}.")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}.")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ConfigError(
                f"The buffer ({self.buffer_size}) must hold at least one minibatch ({self.batch_size})."
            )
        if self.updates_per_step < 1:
            raise ConfigError(f"updates_per_step must be >= 1, got {self.updates_per_step}.")
        if not 0.0 <= self.noise_decay_fraction <= 1.0:
            raise ConfigError(f"noise_decay_fraction must lie in [0, 1], got {self.noise_decay_fraction}.")
        # Raises ConfigError for bad learning rates.
        OptimizerConfig("adam", self.actor_lr, weight_decay=self.weight_decay)
        OptimizerConfig("adam", self.critic_lr, weight_decay=self.weight_decay)
        return self


def actor_spec(state_dim: int, action_dim: int, hidden: int) -> list:
    return [
        LayerSpec.dense(state_dim, hidden), LayerSpec.activation("relu", hidden),
        LayerSpec.dense(hidden, hidden), LayerSpec.activation("relu", hidden),
        LayerSpec.dense(hidden, action_dim), LayerSpec.activation("tanh", action_dim),
    ]


def critic_spec(state_dim: int, action_dim: int, hidden: int) -> list:
    return [
        LayerSpec.dense(state_dim + action_dim, hidden), LayerSpec.activation("relu", hidden),
        LayerSpec.dense(hidden, hidden), LayerSpec.activation("relu", hidden),
        LayerSpec.dense(hidden, 1),
    ]


class DDPGAgent:
    """
    Actor, critic, their target copies, the replay buffer and OU noise.

    Parameters
    ----------
    cfg: AgentConfig
        Hyperparameters.
    action_dim: int
        3*N_m*N_n.
    init_rng, ou_rng, buffer_rng: np.random.Generator
        Independent streams for network initialization, exploration noise
        and minibatch sampling.
    state_dim: int
        Size of the state vector.

    Example
    -------
    | import numpy as np
    | from semsec.ddpg import AgentConfig, DDPGAgent, Transition
    |
    | agent = DDPGAgent(AgentConfig(batch_size=4), 48, *[np.random.default_rng(i) for i in range(3)])
    | s = np.zeros(7)
    | a = agent.act(s, explore=True)
    | agent.observe(Transition(s, a, -1.0, s, 1.0))
    """
    def __init__(self, cfg: AgentConfig, action_dim: int, init_rng: np.random.Generator,
                 ou_rng: np.random.Generator, buffer_rng: np.random.Generator,
                 state_dim: int = STATE_DIM) -> None:
        self.cfg = cfg.validate()
        self.state_dim = state_dim
        self.action_dim = action_dim
        actor_seed, critic_seed = (int(s) for s in init_rng.integers(0, 2 ** 32, size=2))
        self.actor = init_network(actor_spec(state_dim, action_dim, cfg.hidden), actor_seed, name="actor")
        self.critic = init_network(critic_spec(state_dim, action_dim, cfg.hidden), critic_seed, name="critic")
        self.target_actor = clone_network(self.actor, name="target_actor")
        self.target_critic = clone_network(self.critic, name="target_critic")
        self.buffer = ReplayBuffer(cfg.buffer_size, state_dim, action_dim)
        self.ou = OUProcess(action_dim, cfg.ou_theta, cfg.ou_sigma, cfg.ou_dt, rng=ou_rng)
        self.buffer_rng = buffer_rng
        self.actor_opt = OptimizerConfig("adam", cfg.actor_lr, weight_decay=cfg.weight_decay)
        self.critic_opt = OptimizerConfig("adam", cfg.critic_lr, weight_decay=cfg.weight_decay)
        self.n_updates = 0
        return

    def noise_scale(self, t: int, T: int) -> float:
        """1 until the final noise_decay_fraction of the steps, then linearly down to 0."""
        frac = self.cfg.noise_decay_fraction
        if frac == 0.0:
            return 1.0
        start = (1.0 - frac) * T
        if t < start:
            return 1.0
        return float(max(0.0, (T - t) / (frac * T)))

    def act(self, state: Union[AgentState, np.ndarray], explore: bool = True,
            noise_scale: float = 1.0) -> np.ndarray:
        return select_action(self.actor, state, self.ou, explore, noise_scale)

    def observe(self, transition: Transition) -> Optional[Tuple[float, float]]:
        """
        Store a transition, then run ``updates_per_step`` updates if the
        buffer is ready. Returns the last (critic_loss, actor_loss) or None.
        """
        self.buffer.push(transition)
        losses = None
        for _ in range(self.cfg.updates_per_step):
            result = self.update()
            if result is None:
                break
            losses = result
        return losses

    def update(self) -> Optional[Tuple[float, float]]:
        batch = self.buffer.sample(self.cfg.batch_size, self.buffer_rng)
        if batch is None:
            return None
        y = td_targets(batch, self.target_actor, self.target_critic, self.cfg.gamma)
        critic_loss = critic_update(self.critic, batch, y, self.critic_opt)
        actor_loss = actor_update(self.actor, self.critic, batch.s, self.actor_opt)
        soft_update(self.target_critic, self.critic, self.cfg.tau)
        soft_update(self.target_actor, self.actor, self.cfg.tau)
        self.n_updates += 1
        return critic_loss, actor_loss

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic,
                "target_actor": self.target_actor, "target_critic": self.target_critic}

    def save(self, path: Union[str, pathlib.Path], include_buffer: bool = True) -> pathlib.Path:
        sections = {BUFFER_TAG: self.buffer.to_bytes()} if include_buffer else None
        return save_networks(path, self.networks(), sections)

    def load(self, path: Union[str, pathlib.Path]) -> None:
        """Restore all four networks (and the buffer, if saved) from a checkpoint."""
        nets, sections = load_networks(path)
        for name, net in self.networks().items():
            if name not in nets:
                raise ValueError(f"{path} has no {name} network.")
            net.copy_params_from(nets[name])
        if BUFFER_TAG in sections:
            self.buffer = ReplayBuffer.from_bytes(sections[BUFFER_TAG])
        return
