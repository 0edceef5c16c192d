"""
Desk-scale end-to-end checks. The training runs take minutes to an hour on
a laptop CPU, so they only run with ``pytest --runslow``.
"""
import pytest
import numpy as np

from semsec import harness
from semsec.experiment import default_config
from semsec.codec import constant_predictor_psnr


def test_sweep_snr_is_deterministic(tiny_config, tmp_path):
    config = str(tiny_config)
    for name in ("a", "b"):
        argv = ["sweep-snr", "--config", config, "--snr-grid", "0", "20", "--seed", "5",
                "--out", str(tmp_path / name)]
        assert harness.main(argv) == harness.EXIT_OK
    a = (tmp_path / "a" / "sweep_snr.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep_snr.csv").read_bytes()
    assert (tmp_path / "a" / "sweep_snr.svg").read_bytes() == (tmp_path / "b" / "sweep_snr.svg").read_bytes()
    return


@pytest.mark.slow
def test_selftest():
    assert harness.main(["selftest"]) == harness.EXIT_OK
    return


@pytest.mark.slow
def test_desk_security_gap(tmp_path):
    cfg = default_config("desk")
    secure = 0
    for seed in (1, 2, 3):
        trainer, agent = harness.prepare(cfg, seed, tmp_path / f"seed{seed}")
        final = trainer.run(agent)
        report = trainer.evaluate(final.precoders, X=trainer.test, stage=5)
        constant = constant_predictor_psnr(trainer.train, trainer.test)
        if report.gap_db >= 5.0 and report.psnr_eve_db <= constant + 2.0:
            secure += 1
    assert secure >= 2
    return


@pytest.mark.slow
def test_bob_improves_with_snr(tmp_path):
    cfg = default_config("desk")
    result = harness.sweep_snr(cfg, [1], [0.0, 10.0, 20.0], tmp_path)
    leg = result["psnr_leg_db"].to_numpy(float)
    eve = result["psnr_eve_db"].to_numpy(float)
    drops = np.diff(leg)
    assert np.sum(drops < 0) <= 1 and np.all(drops >= -0.3)
    assert eve.max() - eve.min() <= 2.0
    return

