"""
Self-contained correctness checks run by ``semsec selftest``.

Each check returns an ``OracleResult``; ``run_all()`` runs every check and
``check_all()`` raises AcceptanceError if any of them fails.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Dict, List
import time
import logging

import numpy as np

from semsec.channel import ChannelConfig, mmse_equalize, normalize_power, zf_equalize, transmit
from semsec.codec import CodecArchitecture, TextCorpus, synthetic_images
from semsec.ddpg import (
    STATE_DIM, AgentConfig, DDPGAgent, OUProcess, ReplayBuffer, Transition, soft_update,
)
from semsec.errors import AcceptanceError
from semsec.nn_core import LayerSpec, check_gradients, clone_network, grad_check, init_network, mse_loss
from semsec.superpose import PrecoderSet
from semsec.system import SemComSystem, make_streams

logger = logging.getLogger(__name__)

# Agent settings for the quadratic-reward toy. Every transition is terminal,
# so the critic regresses the reward directly. With theta*dt = 1 the OU
# process draws independent N(0, sigma^2) noise at every step, and the buffer
# keeps the whole run.
TOY_AGENT = AgentConfig(
    gamma=0.0, tau=1e-2, buffer_size=200, batch_size=32, actor_lr=2e-3, critic_lr=3e-3,
    weight_decay=0.0, ou_theta=1.0, ou_sigma=0.05, ou_dt=1.0, hidden=64, updates_per_step=20,
    noise_decay_fraction=0.0,
)


@dataclass
class OracleResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3g} (tolerance {self.tolerance:.3g}, {self.seconds:.1f} s) {self.detail}"


def mmse_oracle(n: int = 1000, seed: int = 0, tol: float = 1e-9) -> OracleResult:
    """mmse_equalize() against the closed form with an explicit inverse."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        H = rng.standard_normal((4, 4))
        sigma2 = rng.uniform(1e-3, 1.0)
        Y = rng.standard_normal((4, 8))
        explicit = H.T @ np.linalg.inv(H @ H.T + sigma2 * np.eye(4)) @ Y
        worst = max(worst, float(np.linalg.norm(mmse_equalize(Y, H, sigma2, 1.0) - explicit)))
    return OracleResult("mmse", worst <= tol, worst, tol)


def mmse_beats_zf(n: int = 1000, seed: int = 0) -> OracleResult:
    """Mean squared estimation error of MMSE vs pseudo-inverse at 10 dB."""
    rng = np.random.default_rng(seed)
    cfg = ChannelConfig(snr_leg_db=10.0)
    err_mmse = err_zf = 0.0
    for _ in range(n):
        H = rng.standard_normal((4, 4))
        Y = normalize_power(rng.standard_normal((4, 8)), cfg.power)
        R = transmit(Y, H, cfg.sigma2_leg, rng)
        err_mmse += float(np.sum((mmse_equalize(R, H, cfg.sigma2_leg, cfg.power) - Y) ** 2))
        err_zf += float(np.sum((zf_equalize(R, H) - Y) ** 2))
    ratio = err_mmse / err_zf
    return OracleResult("mmse_beats_zf", ratio <= 1.0, ratio, 1.0)


def power_oracle(n: int = 10000, seed: int = 0, tol: float = 1e-9) -> OracleResult:
    """Every normalized frame has ||Y~||_F^2/(N_m*L_c) = P."""
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, 4, 8)) * rng.uniform(1e-3, 1e3, size=(n, 1, 1))
    P = rng.uniform(0.5, 2.0)
    power = np.sum(normalize_power(Y, P) ** 2, axis=(1, 2)) / 32
    worst = float(np.max(np.abs(power - P)))
    return OracleResult("power", worst <= tol, worst, tol)


def layer_gradient_suite(seed: int = 0, tol: float = 1e-4) -> OracleResult:
    """grad_check() on a small net of every layer kind."""
    rng = np.random.default_rng(seed)
    stacks = {
        "dense+tanh": ([LayerSpec.dense(5, 4), LayerSpec.activation("tanh", 4), LayerSpec.dense(4, 3)],
                       rng.standard_normal((4, 5))),
        "relu": ([LayerSpec.dense(5, 6), LayerSpec.activation("relu", 6), LayerSpec.dense(6, 2)],
                 rng.standard_normal((4, 5))),
        "sigmoid+reshape": ([LayerSpec.dense(6, 6), LayerSpec.activation("sigmoid", 6), LayerSpec.reshape((2, 3))],
                            rng.standard_normal((4, 6))),
        "embedding": ([LayerSpec.embedding(10, 3, 2), LayerSpec.dense(6, 2), LayerSpec.activation("tanh", 2)],
                      rng.integers(0, 10, size=(4, 3))),
    }
    worst = 0.0
    for i, (name, (spec, x)) in enumerate(stacks.items()):
        net = init_network(spec, seed=seed + i, name=name)
        target = rng.standard_normal(net.forward(x).shape)
        err = grad_check(net, x, lambda out: mse_loss(out, target))
        logger.debug(f"grad_check({name}) = {err:.3g}")
        worst = max(worst, err)
    return OracleResult("layer_gradients", worst <= tol, worst, tol)


def tiny_system(seed: int = 0) -> SemComSystem:
    """A 2x2-antenna environment on 8x8x3 images with narrow codec layers."""
    arch = CodecArchitecture(hidden=8, jam_hidden=4, text_tokens=3, embed_dim=2, vocab=16)
    corpus = TextCorpus(vocab_size=arch.vocab)
    corpus.load()
    return SemComSystem(ChannelConfig(n_m=2, n_n=2), (8, 8, 3), 1, make_streams(seed), corpus, arch)


def end_to_end_gradients(seed: int = 0, tol: float = 1e-3) -> OracleResult:
    """
    Finite differences through encode, precode, normalize, a noiseless
    channel, MMSE equalization, decode and the loss MSE_leg - MSE_eve, for
    every parameter of all five codec networks.
    """
    env = tiny_system(seed)
    rng = np.random.default_rng(seed + 1)
    X = synthetic_images(2, 8, 8, 3, rng)
    V = PrecoderSet(*rng.uniform(-1.0, 1.0, size=(3, 2, 2)))

    def run():
        # Fresh streams on every call replay the same channels and jamming inputs.
        p = env.forward(X, V, jamming=True, noise=False, rngs=make_streams(seed + 2))
        loss_leg, g_leg = mse_loss(p.X_leg, X)
        loss_eve, g_eve = mse_loss(p.X_eve, X)
        return p, loss_leg - loss_eve, g_leg, -g_eve

    env.zero_grad()
    p, _, g_leg, g_eve = run()
    env.backward(p, g_leg, g_eve, env.nets.keys())
    params, analytic = [], []
    for net in env.nets.values():
        params += net.params
        analytic += [None if g is None else g.copy() for g in net.grads]
    worst = check_gradients(params, analytic, lambda: run()[1])
    env.zero_grad()
    return OracleResult("end_to_end_gradients", worst <= tol, worst, tol)


def ou_oracle(steps: int = 100000, seed: int = 0, tol: float = 0.1) -> OracleResult:
    """Empirical stationary std of the OU process against sigma/sqrt(2*theta)."""
    ou = OUProcess(48, theta=0.15, sigma=0.2, dt=1.0, rng=np.random.default_rng(seed))
    for _ in range(1000):
        ou.sample()
    samples = np.stack([ou.sample() for _ in range(steps)])
    expected = 0.2 / np.sqrt(2 * 0.15)
    rel = float(abs(samples.std() - expected) / expected)
    return OracleResult("ou_stationary_std", rel <= tol, rel, tol, detail=f"std={samples.std():.4f}")


def fifo_oracle(ops: int = 10000, seed: int = 0) -> OracleResult:
    """Replay contents always equal the last `capacity` pushes, oldest first."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    pushed = 0
    while pushed < ops:
        capacity = int(rng.integers(1, 200))
        buffer = ReplayBuffer(capacity, state_dim=1, action_dim=1)
        n = int(rng.integers(1, 3 * capacity))
        for i in range(n):
            buffer.push(Transition(np.zeros(1), np.zeros(1), float(i), np.zeros(1), 0.0))
        expected = np.arange(max(0, n - capacity), n, dtype=float)
        mismatches += int(not np.array_equal(buffer.contents().r, expected))
        pushed += n
    return OracleResult("replay_fifo", mismatches == 0, mismatches, 0)


def soft_update_oracle(n: int = 1000, tau: float = 1e-3, seed: int = 0, tol: float = 1e-12) -> OracleResult:
    """||theta' - theta|| contracts by exactly (1 - tau)^n with a frozen main net."""
    spec = [LayerSpec.dense(7, 16), LayerSpec.activation("relu", 16), LayerSpec.dense(16, 4)]
    main = init_network(spec, seed)
    target = init_network(spec, seed + 1)
    frozen = clone_network(main)

    def distance():
        return np.sqrt(sum(np.sum((p - q) ** 2) for p, q in zip(target.params, main.params) if p is not None))

    d0 = distance()
    for _ in range(n):
        soft_update(target, main, tau)
    err = float(abs(distance() / d0 - (1 - tau) ** n))
    unchanged = all(p is None or np.array_equal(p, q) for p, q in zip(main.params, frozen.params))
    return OracleResult("soft_update_contraction", err <= tol and unchanged, err, tol)


def ddpg_toy(seed: int = 0, dim: int = 48, steps: int = 200, tol: float = 0.1) -> OracleResult:
    """
    A stateless environment with reward -||a - a*||^2. Passes when the
    deterministic action gets within tol of a* (infinity norm) in at most
    `steps` decision steps.
    """
    rngs = make_streams(seed)
    target = rngs["eval"].uniform(-0.5, 0.5, size=dim)
    agent = DDPGAgent(TOY_AGENT, dim, rngs["init"], rngs["ou"], rngs["buffer"])
    s = np.zeros(STATE_DIM)
    err = float(np.max(np.abs(agent.act(s, explore=False) - target)))
    for t in range(steps):
        a = agent.act(s, explore=True, noise_scale=agent.noise_scale(t, steps))
        agent.observe(Transition(s, a, -float(np.sum((a - target) ** 2)), s, 1.0))
        err = float(np.max(np.abs(agent.act(s, explore=False) - target)))
        if err < tol:
            return OracleResult("ddpg_toy", True, err, tol, detail=f"reached at step {t + 1}")
    return OracleResult("ddpg_toy", False, err, tol, detail=f"not reached in {steps} steps")


ORACLES: Dict[str, Callable[..., OracleResult]] = {
    "mmse": mmse_oracle,
    "mmse_beats_zf": mmse_beats_zf,
    "power": power_oracle,
    "layer_gradients": layer_gradient_suite,
    "end_to_end_gradients": end_to_end_gradients,
    "ou": ou_oracle,
    "fifo": fifo_oracle,
    "soft_update": soft_update_oracle,
    "ddpg_toy": ddpg_toy,
}


def run_all(seed: int = 0, names=None) -> List[OracleResult]:
    results = []
    for name in (ORACLES if names is None else names):
        start = time.perf_counter()
        result = ORACLES[name](seed=seed)
        result.seconds = time.perf_counter() - start
        logger.info(str(result))
        results.append(result)
    return results


def check_all(seed: int = 0, names=None) -> List[OracleResult]:
    results = run_all(seed, names)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise AcceptanceError(f"Oracle checks failed: {', '.join(failed)}.")
    return results
