from dataclasses import replace

import pytest
import numpy as np
import pandas as pd

from semsec.codec import synthetic_images
from semsec.ddpg import AgentConfig, DDPGAgent
from semsec.errors import ConfigError, NumericalError, ShapeError
from semsec.nn_core import load_networks
from semsec.oracles import tiny_system
from semsec.superpose import PrecoderSet
from semsec.trainer import PRECODER_TAG, EvalReport, PolicyLog, StagePlan, Trainer, psnr

TINY_PLAN = StagePlan(epochs1=2, epochs2=1, epochs3=2, epochs5=1, K=1, T=3, batch_size=4)
TINY_AGENT = AgentConfig(buffer_size=10, batch_size=2, hidden=8)


def tiny_trainer(out_dir=None, seed=0):
    env = tiny_system(seed)
    rng = np.random.default_rng(seed)
    train, test, eval_set = (synthetic_images(n, 8, 8, 3, rng) for n in (8, 4, 4))
    return Trainer(env, TINY_PLAN, train, test, eval_set, env.rngs, eval_seed=123, out_dir=out_dir)


def tiny_agent(trainer):
    rngs = trainer.env.rngs
    return DDPGAgent(TINY_AGENT, trainer.env.action_dim, rngs["init"], rngs["ou"], rngs["buffer"])


def snapshot(env, names):
    return {name: [None if p is None else p.copy() for p in env[name].params] for name in names}


def unchanged(env, snap):
    return all(p is None or np.array_equal(p, q)
               for name, params in snap.items() for p, q in zip(env[name].params, params))


def report(reward_leg, reward_eve=0.0):
    return EvalReport(reward_leg, reward_eve, 0.1, 0.2, -0.1, 0, 4)


def test_psnr():
    X = np.full((2, 2, 2, 3), 0.5)
    assert psnr(X, X) == pytest.approx(100.0)
    assert psnr(X, X + 0.1) == pytest.approx(20.0)
    return


def test_stage_plan():
    plan = StagePlan()
    assert plan.epochs4 == 7500
    scaled = plan.scaled(0.12)
    assert (scaled.epochs1, scaled.epochs5, scaled.T, scaled.K) == (12, 24, 60, 15)
    assert plan.scaled(1e-6).epochs1 == 1
    with pytest.raises(ConfigError):
        plan.scaled(0)
    with pytest.raises(ConfigError):
        StagePlan(K=0).validate()
    return


def test_policy_log():
    log = PolicyLog(3)
    with pytest.raises(ValueError):
        log.best_step()
    for step, r in enumerate([1.0, 3.0, 3.0]):
        log.append(step, np.full(3, step / 10), report(r), r)
    assert len(log) == 3
    assert log.best_step() == 1
    assert np.allclose(log.best_action(), 0.1)
    assert list(log["reward"]) == [1.0, 3.0, 3.0]
    assert list(log.data.columns[:7]) == [
        "step", "reward", "psnr_leg_db", "psnr_eve_db", "loss", "critic_loss", "actor_loss"
    ]
    return


def test_evaluate_is_repeatable():
    trainer = tiny_trainer()
    snap = snapshot(trainer.env, trainer.env.nets)
    a = trainer.evaluate(trainer.identity)
    b = trainer.evaluate(trainer.identity)
    assert a.psnr_leg_db == b.psnr_leg_db
    assert a.loss == pytest.approx(a.mse_leg - a.mse_eve)
    assert a.gap_db == pytest.approx(a.psnr_leg_db - a.psnr_eve_db)
    assert unchanged(trainer.env, snap)
    return


def test_stage1_trains_only_bob():
    trainer = tiny_trainer()
    frozen = snapshot(trainer.env, ["tje", "gje", "sd2"])
    before = trainer.env["se"].params[0].copy()
    result = trainer.stage1()
    assert np.isfinite(result.psnr_leg_db)
    assert trainer.reports[1] is result
    assert unchanged(trainer.env, frozen)
    assert not np.array_equal(trainer.env["se"].params[0], before)
    return


def test_stage3_trains_only_eve():
    trainer = tiny_trainer()
    frozen = snapshot(trainer.env, ["se", "tje", "gje", "sd1"])
    before = trainer.env["sd2"].params[0].copy()
    trainer.stage3()
    assert unchanged(trainer.env, frozen)
    assert not np.array_equal(trainer.env["sd2"].params[0], before)
    return


def test_eve_loss_falls_in_stage3():
    trainer = tiny_trainer()
    trainer.plan = replace(TINY_PLAN, epochs3=30)
    trainer.stage3()
    losses = [row["loss"] for row in trainer.epoch_log if row["stage"] == 3]
    assert losses[-1] < losses[0]
    return


def test_full_run_writes_logs_and_checkpoints(tmp_path):
    trainer = tiny_trainer(out_dir=tmp_path)
    agent = tiny_agent(trainer)
    final = trainer.run(agent)
    assert np.isfinite(final.report.psnr_leg_db) and np.isfinite(final.report.psnr_eve_db)
    assert final.report.stage == 5

    policy = pd.read_csv(tmp_path / "logs" / "policy.csv")
    assert len(policy) == TINY_PLAN.T
    assert final.best_step == int(policy["reward"].idxmax())
    assert np.allclose(policy.loc[final.best_step, [f"a{i}" for i in range(12)]].to_numpy(float),
                       final.precoders.flatten(), atol=1e-9)
    # Rewards use the PSNRs of the same step.
    assert np.allclose(policy["reward"], policy["psnr_leg_db"] - policy["psnr_eve_db"], atol=1e-6)

    epochs = pd.read_csv(tmp_path / "logs" / "epochs.csv")
    assert list(epochs.columns) == ["stage", "epoch", "loss", "lr"]
    assert sorted(epochs["stage"].unique()) == [1, 2, 3, 4, 5]
    assert (epochs["stage"] == 4).sum() == TINY_PLAN.T * TINY_PLAN.K

    for stage in (1, 2, 3, 4, 5):
        assert (tmp_path / "checkpoints" / f"stage{stage}.ckpt").exists()
    nets, sections = load_networks(tmp_path / "checkpoints" / "stage5.ckpt")
    assert set(nets) == {"se", "tje", "gje", "sd1", "sd2"}
    assert np.array_equal(np.frombuffer(sections[PRECODER_TAG], dtype="<f8"), final.precoders.flatten())
    assert (tmp_path / "checkpoints" / "agent.ckpt").exists()
    return


def test_stage4_keeps_eve_frozen():
    trainer = tiny_trainer()
    frozen = snapshot(trainer.env, ["sd2"])
    agent = tiny_agent(trainer)
    log = trainer.stage4(agent)
    assert len(log) == TINY_PLAN.T
    assert len(agent.buffer) == TINY_PLAN.T
    assert agent.buffer.contents().d.tolist() == [0.0, 0.0, 1.0]
    assert unchanged(trainer.env, frozen)
    return


def test_nan_guard(monkeypatch):
    trainer = tiny_trainer()
    monkeypatch.setattr(trainer, "_loss", lambda *args: (float("nan"), None, None))
    with pytest.warns(UserWarning, match="halved the learning rate"):
        loss, lr = trainer._train_epoch(4, 1e-3, trainer.identity, True, ("se",), "l4", guard=True)
    assert np.isnan(loss)
    # Two minibatches of 4 out of 8 images, one halving each.
    assert lr == pytest.approx(2.5e-4)
    with pytest.raises(NumericalError):
        trainer._train_epoch(1, 1e-3, trainer.identity, True, ("se",), "leg", guard=False)
    return


def test_adaptive_eve_restores_the_decoder():
    trainer = tiny_trainer()
    original = trainer.env["sd2"]
    snap = snapshot(trainer.env, ["sd2"])
    result = trainer.adaptive_eve(trainer.identity, epochs=1)
    assert trainer.env["sd2"] is original
    assert unchanged(trainer.env, snap)
    assert np.isfinite(result.psnr_eve_db)
    return


def test_svd_baseline():
    trainer = tiny_trainer()
    result = trainer.svd_baseline()
    assert np.isfinite(result.psnr_leg_db)
    assert set(trainer.reports) == {1, 3}
    return


def test_trainer_rejects_mismatched_images():
    env = tiny_system(0)
    rng = np.random.default_rng(0)
    wrong = synthetic_images(4, 4, 4, 3, rng)
    good = synthetic_images(4, 8, 8, 3, rng)
    with pytest.raises(ShapeError):
        Trainer(env, TINY_PLAN, wrong, good, good, env.rngs)
    return


def test_stage4_needs_a_matching_agent():
    trainer = tiny_trainer()
    rngs = [np.random.default_rng(i) for i in range(3)]
    with pytest.raises(ShapeError, match="dimensions"):
        trainer.stage4(DDPGAgent(TINY_AGENT, 48, *rngs))
    return


def test_stage_precoders_are_identity():
    trainer = tiny_trainer()
    V = trainer.identity
    assert isinstance(V, PrecoderSet)
    assert np.array_equal(V.v1, np.eye(2)) and np.array_equal(V.v3, np.eye(2))
    return


def test_stage2_keeps_eve_frozen():
    trainer = tiny_trainer()
    frozen = snapshot(trainer.env, ["sd2"])
    before = trainer.env["sd1"].params[0].copy()
    trainer.stage2()
    assert unchanged(trainer.env, frozen)
    assert not np.array_equal(trainer.env["sd1"].params[0], before)
    return


def test_stage4_fixes_the_precoders_for_each_block(monkeypatch):
    trainer = tiny_trainer()
    trainer.plan = replace(TINY_PLAN, K=2)
    agent = tiny_agent(trainer)
    actions, used = [], []
    act, train_epoch = agent.act, trainer._train_epoch

    def record_action(*args, **kwargs):
        actions.append(act(*args, **kwargs))
        return actions[-1]

    def record_precoders(stage, lr, precoders, *args, **kwargs):
        used.append(precoders.flatten().copy())
        return train_epoch(stage, lr, precoders, *args, **kwargs)
    monkeypatch.setattr(agent, "act", record_action)
    monkeypatch.setattr(trainer, "_train_epoch", record_precoders)

    log = trainer.stage4(agent)
    assert len(actions) == len(log) == 3
    assert len(used) == 3 * 2
    for t, action in enumerate(actions):
        assert np.array_equal(used[2 * t], action)
        assert np.array_equal(used[2 * t + 1], action)
    assert np.array_equal(log.actions(), np.array(actions))
    return


def test_stage5_uses_the_logged_action_without_noise():
    trainer = tiny_trainer()
    ou_state = trainer.env.rngs["ou"].bit_generator.state
    rng = np.random.default_rng(7)
    log = PolicyLog(trainer.env.action_dim)
    for step, r in enumerate([1.0, 4.0, 2.0]):
        log.append(step, rng.uniform(-1, 1, trainer.env.action_dim), report(r), r)
    final = trainer.stage5(log)
    assert final.best_step == 1
    assert np.array_equal(final.precoders.flatten(), log.actions()[1])
    assert trainer.env.rngs["ou"].bit_generator.state == ou_state
    again = trainer.evaluate(final.precoders, X=trainer.test, stage=5)
    assert again.psnr_leg_db == final.report.psnr_leg_db
    return
