"""
The five-stage training strategy.

1. Semantic encoder and Bob's decoder, no jamming (L1).
2. Multi-level jamming switched on with identity precoders (L2).
3. Eve's decoder alone, everything else frozen (L3).
4. The DDPG agent picks precoders every K epochs while the environment
   trains on L4 = MSE_leg - lambda_r*MSE_eve.
5. The highest-reward precoders are fixed for the final training epochs.
"""
from __future__ import annotations
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Tuple, Union
import pathlib
import logging
import warnings

import numpy as np
import pandas as pd
from tqdm import tqdm

from semsec.codec import build_codec_networks, check_images, psnr_from_mse
from semsec.ddpg import DDPGAgent, Transition, build_state, compute_reward
from semsec.errors import ConfigError, NumericalError, ShapeError
from semsec.nn_core import OptimizerConfig, optimizer_step, reset_optimizer, save_networks
from semsec.superpose import PrecoderSet, reshape_action
from semsec.system import ENV_STREAMS, SemComSystem, make_streams

logger = logging.getLogger(__name__)

STAGE1_NETS = ("se", "sd1")
STAGE2_NETS = ("se", "tje", "gje", "sd1")
STAGE3_NETS = ("sd2",)
# Every module except Eve's decoder, in stages 4 and 5.
STAGE4_NETS = ("se", "tje", "gje", "sd1")
# Checkpoint section holding the stage-5 precoders as little-endian f8.
PRECODER_TAG = b"PREC"


def mse(X: np.ndarray, X_hat: np.ndarray) -> float:
    if X.shape != X_hat.shape:
        raise ShapeError(f"Image batches differ in shape: {X.shape} and {X_hat.shape}.")
    return float(np.mean((X - X_hat) ** 2))


def mse_grad(X: np.ndarray, X_hat: np.ndarray) -> np.ndarray:
    """d MSE(X, X_hat) / d X_hat."""
    return 2.0 * (X_hat - X) / X.size


def psnr(X: np.ndarray, X_hat: np.ndarray) -> float:
    """
    10*log10(1/MSE) in dB over the whole batch, peak value 1. The MSE is
    floored at 1e-10, so a perfect reconstruction gives 100 dB.
    """
    return psnr_from_mse(mse(check_images(X), check_images(X_hat)))


@dataclass
class StagePlan:
    """
    Epoch counts, learning rates and the stage-4 decision schedule.

    Stage 4 runs ``T`` decision steps of ``K`` epochs each. ``batch_size``
    is the environment's minibatch size.
    """
    epochs1: int = 100
    epochs2: int = 100
    epochs3: int = 100
    epochs5: int = 200
    K: int = 15
    T: int = 500
    lr1: float = 1e-3
    lr2: float = 1e-3
    lr3: float = 1e-3
    lr4: float = 5e-4
    lr5: float = 2e-4
    lambda_r: float = 1.0
    batch_size: int = 64

    @property
    def epochs4(self) -> int:
        return self.T * self.K

    def validate(self) -> StagePlan:
        for name in ("epochs1", "epochs2", "epochs3", "epochs5", "K", "T", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"plan.{name} must be >= 1, got {getattr(self, name)}.")
        for name in ("lr1", "lr2", "lr3", "lr4", "lr5"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"plan.{name} must be > 0, got {getattr(self, name)}.")
        if self.lambda_r < 0:
            raise ConfigError(f"plan.lambda_r must be >= 0, got {self.lambda_r}.")
        return self

    def scaled(self, factor: float) -> StagePlan:
        """
        Shrink the epochs of stages 1, 2, 3 and 5 and the number of decision
        steps T by factor (each at least 1). K is kept.
        """
        if not factor > 0:
            raise ConfigError(f"The scale factor must be > 0, got {factor}.")

        def _scale(n):
            return max(1, int(round(n * factor)))

        return replace(self, epochs1=_scale(self.epochs1), epochs2=_scale(self.epochs2),
                       epochs3=_scale(self.epochs3), epochs5=_scale(self.epochs5), T=_scale(self.T))


@dataclass
class EvalReport:
    psnr_leg_db: float
    psnr_eve_db: float
    mse_leg: float
    mse_eve: float
    loss: float
    epoch: int
    stage: int

    @property
    def gap_db(self) -> float:
        return self.psnr_leg_db - self.psnr_eve_db


class PolicyLog:
    """
    Every stage-4 decision step: the action, the PSNRs it produced, its
    reward and the agent losses. The rows live in the ``.data`` DataFrame and
    columns are accessible as ``log['reward']``.
    """
    def __init__(self, action_dim: int) -> None:
        self.action_dim = action_dim
        self._rows: List[Dict] = []
        self.data = pd.DataFrame()
        return

    def append(self, step: int, action: np.ndarray, report: EvalReport, reward: float,
               critic_loss: float = np.nan, actor_loss: float = np.nan) -> None:
        row = {
            "step": step, "reward": reward, "psnr_leg_db": report.psnr_leg_db,
            "psnr_eve_db": report.psnr_eve_db, "loss": report.loss,
            "critic_loss": critic_loss, "actor_loss": actor_loss,
        }
        row.update({f"a{i}": v for i, v in enumerate(action)})
        self._rows.append(row)
        self.data = pd.DataFrame(self._rows)
        return

    def __len__(self) -> int:
        return len(self._rows)

    def __getitem__(self, _slice):
        return self.data[_slice]

    def actions(self) -> np.ndarray:
        return self.data[[f"a{i}" for i in range(self.action_dim)]].to_numpy()

    def best_step(self) -> int:
        """Row index of the highest reward; ties go to the earliest step."""
        if len(self) == 0:
            raise ValueError("The policy log is empty; run stage 4 first.")
        return int(self.data["reward"].idxmax())

    def best_action(self) -> np.ndarray:
        return self.actions()[self.best_step()]

    def to_csv(self, path: Union[str, pathlib.Path]) -> pathlib.Path:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.data.to_csv(path, index=False, float_format="%.10g")
        return path


@dataclass
class FinalModel:
    precoders: PrecoderSet
    report: EvalReport
    best_step: int


class Trainer:
    """
    Runs the five stages on one environment.

    Parameters
    ----------
    env: SemComSystem
        The environment whose codec networks are trained.
    plan: StagePlan
        Epochs, learning rates and the decision schedule.
    train, test, eval_set: np.ndarray
        Image batches. The held-out ``eval_set`` feeds the agent's state and
        reward; ``test`` is only used for the final reports.
    rngs: dict
        Named streams; "data" shuffles minibatches.
    eval_seed: int
        Seed of the evaluation channel/noise streams. Every evaluation
        replays the same channel realizations.
    out_dir: str or pathlib.Path
        If set, CSV logs go to out_dir/logs and checkpoints to
        out_dir/checkpoints.
    verbose: bool
        Show tqdm progress bars.

    Example
    -------
    | trainer = semsec.Trainer(env, plan, train, test, eval_set, rngs, eval_seed=1)
    | trainer.stage1()
    | trainer.stage2()
    | trainer.stage3()
    | log = trainer.stage4(agent)
    | final = trainer.stage5(log)
    """
    def __init__(self, env: SemComSystem, plan: StagePlan, train: np.ndarray, test: np.ndarray,
                 eval_set: np.ndarray, rngs: Dict[str, np.random.Generator], eval_seed: int = 0,
                 out_dir: Union[str, pathlib.Path] = None, verbose: bool = False) -> None:
        self.env = env
        self.plan = plan.validate()
        self.train, self.test, self.eval_set = (check_images(a) for a in (train, test, eval_set))
        for name, a in (("train", self.train), ("test", self.test), ("eval", self.eval_set)):
            if a.shape[0] == 0 or a.shape[1:] != env.image_shape:
                raise ShapeError(f"The {name} set must be a nonempty batch of {env.image_shape} images, got {a.shape}.")
        self.rngs = rngs
        self.eval_seed = eval_seed
        self.out_dir = None if out_dir is None else pathlib.Path(out_dir)
        self.verbose = verbose
        self.epoch_log: List[Dict] = []
        self.reports: Dict[int, EvalReport] = {}
        self._epoch = 0
        return

    @property
    def identity(self) -> PrecoderSet:
        return PrecoderSet.identity(self.env.channel.n_m, self.env.channel.n_n)

    def eval_streams(self) -> Dict[str, np.random.Generator]:
        streams = make_streams(self.eval_seed)
        return {name: streams[name] for name in ENV_STREAMS}

    def evaluate(self, precoders: Union[PrecoderSet, str], jamming: bool = True, X: np.ndarray = None,
                 stage: int = 0) -> EvalReport:
        """
        PSNRs of Bob and Eve over X (the held-out eval set by default) under
        the fixed evaluation channel seed. No parameter changes.
        """
        X = self.eval_set if X is None else X
        rngs = self.eval_streams()
        self.env.new_epoch(rngs)
        sq_leg = sq_eve = 0.0
        for start in range(0, X.shape[0], self.plan.batch_size):
            Xb = X[start:start + self.plan.batch_size]
            p = self.env.forward(Xb, precoders, jamming=jamming, rngs=rngs)
            sq_leg += float(np.sum((p.X_leg - Xb) ** 2))
            sq_eve += float(np.sum((p.X_eve - Xb) ** 2))
        mse_leg, mse_eve = sq_leg / X.size, sq_eve / X.size
        return EvalReport(
            psnr_leg_db=psnr_from_mse(mse_leg), psnr_eve_db=psnr_from_mse(mse_eve),
            mse_leg=mse_leg, mse_eve=mse_eve, loss=mse_leg - self.plan.lambda_r * mse_eve,
            epoch=self._epoch, stage=stage,
        )

    def stage1(self) -> EvalReport:
        """Train f_SE and f_SD1 on L1 with Y = S1."""
        V = PrecoderSet.semantic_only(np.eye(self.env.channel.n_m, self.env.channel.n_n))
        return self._run_stage(1, self.plan.epochs1, self.plan.lr1, V, False, STAGE1_NETS, "leg")

    def stage2(self) -> EvalReport:
        """Train everything but Eve's decoder on L2 with Y = S1 + S2 + S3."""
        return self._run_stage(2, self.plan.epochs2, self.plan.lr2, self.identity, True, STAGE2_NETS, "leg")

    def stage3(self) -> EvalReport:
        """Train Eve's decoder alone on L3."""
        return self._run_stage(3, self.plan.epochs3, self.plan.lr3, self.identity, True, STAGE3_NETS, "eve")

    def stage4(self, agent: DDPGAgent) -> PolicyLog:
        """
        Alternate agent decisions and K-epoch environment training blocks for
        T decision steps.

        At step t the agent observes the state, emits an exploring action
        which fixes the precoders for the next K epochs, and then receives
        the reward of the held-out evaluation that follows the block.
        """
        plan, env = self.plan, self.env
        if agent.action_dim != env.action_dim:
            raise ShapeError(f"The agent acts in {agent.action_dim} dimensions, the environment needs {env.action_dim}.")
        self._reset_optimizers()
        agent.ou.reset()
        log = PolicyLog(env.action_dim)
        lr = plan.lr4

        prev = self.evaluate(self.identity, stage=4)
        loss = prev.mse_leg
        state = self._state(prev, loss, 0)
        for t in tqdm(range(plan.T), desc="Stage 4", disable=not self.verbose):
            action = agent.act(state, explore=True, noise_scale=agent.noise_scale(t, plan.T))
            V = reshape_action(action, env.channel.n_m, env.channel.n_n)
            for _ in range(plan.K):
                epoch_loss, lr = self._train_epoch(4, lr, V, True, STAGE4_NETS, "l4", guard=True)
                if np.isfinite(epoch_loss):
                    loss = epoch_loss

            report = self.evaluate(V, stage=4)
            reward = compute_reward(report.psnr_leg_db, report.psnr_eve_db, plan.lambda_r)
            done = 1.0 if t + 1 == plan.T else 0.0
            next_state = self._state(report, loss, t + 1)
            losses = agent.observe(Transition(state.features(), action, reward, next_state.features(), done))
            critic_loss, actor_loss = (np.nan, np.nan) if losses is None else losses
            log.append(t, action, report, reward, critic_loss, actor_loss)
            logger.debug(f"Step {t}: reward={reward:.3f} dB, PSNR_leg={report.psnr_leg_db:.2f} dB, "
                         f"PSNR_eve={report.psnr_eve_db:.2f} dB.")
            state = next_state

        self.reports[4] = report
        if self.out_dir is not None:
            log.to_csv(self.out_dir / "logs" / "policy.csv")
            agent.save(self.out_dir / "checkpoints" / "agent.ckpt")
        self._finish_stage(4)
        return log

    def stage5(self, log: PolicyLog) -> FinalModel:
        """
        Fix the highest-reward action of stage 4 as the precoders, train the
        stage-4 modules for epochs5 more epochs and evaluate on the test set.
        """
        best = log.best_step()
        V = reshape_action(log.best_action(), self.env.channel.n_m, self.env.channel.n_n)
        logger.info(f"Stage 5 uses the step {best} action with reward {log['reward'][best]:.3f} dB.")
        self._run_stage(5, self.plan.epochs5, self.plan.lr5, V, True, STAGE4_NETS, "l4")
        report = self.evaluate(V, X=self.test, stage=5)
        self.reports[5] = report
        self.checkpoint(5, {PRECODER_TAG: V.flatten().astype("<f8").tobytes()})
        return FinalModel(precoders=V, report=report, best_step=best)

    def adaptive_eve(self, precoders: PrecoderSet, epochs: int = None, seed: int = 0) -> EvalReport:
        """
        Train a freshly initialized Eve decoder against the final transmitter
        and report on the test set. The trained Eve decoder is restored
        afterwards.
        """
        epochs = self.plan.epochs3 if epochs is None else epochs
        fresh = build_codec_networks(self.env.image_shape, self.env.channel.n_n, self.env.code.l_c,
                                     self.env.arch, np.random.default_rng(seed))["sd2"]
        original = self.env.nets["sd2"]
        self.env.nets["sd2"] = fresh
        try:
            lr = self.plan.lr3
            for _ in range(epochs):
                self._train_epoch(3, lr, precoders, True, STAGE3_NETS, "eve")
            report = self.evaluate(precoders, X=self.test, stage=3)
        finally:
            self.env.nets["sd2"] = original
        logger.info(f"Adaptive Eve reaches {report.psnr_eve_db:.2f} dB after {epochs} epochs.")
        return report

    def run(self, agent: DDPGAgent) -> FinalModel:
        self.stage1()
        self.stage2()
        self.stage3()
        return self.stage5(self.stage4(agent))

    def checkpoint(self, stage: int, sections: Dict[bytes, bytes] = None) -> Optional[pathlib.Path]:
        if self.out_dir is None:
            return None
        return save_networks(self.out_dir / "checkpoints" / f"stage{stage}.ckpt", self.env.nets, sections)

    def svd_baseline(self) -> EvalReport:
        """
        The non-learned reference: per-frame SVD precoding of S1 without
        jamming. Bob's side trains for epochs1 and Eve's decoder for epochs3,
        then both are evaluated on the test set.
        """
        self._run_stage(1, self.plan.epochs1, self.plan.lr1, "svd", False, STAGE1_NETS, "leg")
        self._run_stage(3, self.plan.epochs3, self.plan.lr3, "svd", False, STAGE3_NETS, "eve")
        return self.evaluate("svd", jamming=False, X=self.test, stage=3)

    def write_epoch_log(self) -> Optional[pathlib.Path]:
        if self.out_dir is None or not self.epoch_log:
            return None
        path = self.out_dir / "logs" / "epochs.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.epoch_log).to_csv(path, index=False, float_format="%.10g")
        return path

    def _state(self, report: EvalReport, loss: float, t: int):
        cfg = self.env.channel
        return build_state(cfg.snr_leg_db, cfg.snr_eve_db, self.env.code.cu, report.psnr_leg_db,
                           report.psnr_eve_db, loss, t, self.plan.T)

    def _run_stage(self, stage: int, epochs: int, lr: float, precoders: Union[PrecoderSet, str], jamming: bool,
                   trainable: Iterable[str], loss_kind: str) -> EvalReport:
        self._reset_optimizers()
        for _ in tqdm(range(epochs), desc=f"Stage {stage}", disable=not self.verbose):
            loss, lr = self._train_epoch(stage, lr, precoders, jamming, trainable, loss_kind,
                                         guard=(stage in (4, 5)))
        report = self.evaluate(precoders, jamming=jamming, stage=stage)
        self.reports[stage] = report
        logger.info(f"Stage {stage} done: PSNR_leg={report.psnr_leg_db:.2f} dB, "
                    f"PSNR_eve={report.psnr_eve_db:.2f} dB.")
        self._finish_stage(stage)
        return report

    def _finish_stage(self, stage: int) -> None:
        self.checkpoint(stage)
        self.write_epoch_log()
        return

    def _reset_optimizers(self) -> None:
        for net in self.env.nets.values():
            reset_optimizer(net)
        return

    def _train_epoch(self, stage: int, lr: float, precoders: Union[PrecoderSet, str], jamming: bool,
                     trainable: Iterable[str], loss_kind: str, guard: bool = False) -> Tuple[float, float]:
        """
        One pass over the training set in shuffled minibatches.

        With guard=True a non-finite loss or gradient skips the step, halves
        lr and warns; otherwise it raises NumericalError.

        Returns
        -------
        (mean loss over the applied steps, possibly reduced lr)
        """
        trainable = tuple(trainable)
        env = self.env
        env.new_epoch()
        order = self.rngs["data"].permutation(self.train.shape[0])
        losses = []
        for start in range(0, len(order), self.plan.batch_size):
            Xb = self.train[order[start:start + self.plan.batch_size]]
            env.zero_grad()
            p = env.forward(Xb, precoders, jamming=jamming)
            loss, grad_leg, grad_eve = self._loss(loss_kind, Xb, p.X_leg, p.X_eve)
            try:
                if not np.isfinite(loss):
                    raise NumericalError(f"Stage {stage} loss is non-finite.")
                env.backward(p, grad_leg, grad_eve, trainable)
                for name in trainable:
                    for g in env.nets[name].grads:
                        if g is not None and not np.all(np.isfinite(g)):
                            raise NumericalError(f"Non-finite gradient in {name} during stage {stage}.")
            except NumericalError as err:
                if not guard:
                    raise
                lr *= 0.5
                warnings.warn(f"{err} Skipped the step and halved the learning rate to {lr:.3g}.")
                env.zero_grad()
                continue
            opt = OptimizerConfig("adam", lr)
            for name in trainable:
                optimizer_step(env.nets[name], opt)
            losses.append(loss)
        env.zero_grad()
        self._epoch += 1
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        self.epoch_log.append({"stage": stage, "epoch": self._epoch, "loss": mean_loss, "lr": lr})
        return mean_loss, lr

    def _loss(self, kind: str, X: np.ndarray, X_leg: np.ndarray, X_eve: np.ndarray):
        """(loss, dL/dX_leg, dL/dX_eve) for L1/L2 ("leg"), L3 ("eve") and L4 ("l4")."""
        if kind == "leg":
            return mse(X, X_leg), mse_grad(X, X_leg), None
        if kind == "eve":
            return mse(X, X_eve), None, mse_grad(X, X_eve)
        if kind == "l4":
            lam = self.plan.lambda_r
            grad_eve = -lam * mse_grad(X, X_eve) if lam else None
            return mse(X, X_leg) - lam * mse(X, X_eve), mse_grad(X, X_leg), grad_eve
        raise ValueError(f"Unknown loss kind {kind}.")
