"""
The semsec command-line interface, seeded experiment sweeps and their CSV
and SVG outputs.

Example
-------
| semsec init-config --preset desk experiment.ini
| semsec train --config experiment.ini --seed 1 --out runs/
| semsec sweep-snr --config experiment.ini --snr-grid 0 10 20 --jobs 3
| semsec selftest
"""
from __future__ import annotations
from dataclasses import replace
from multiprocessing import Pool
from typing import List, Sequence, Tuple, Union
import argparse
import pathlib
import logging
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from semsec import oracles
from semsec.experiment import (
    PRESETS, ExperimentConfig, default_config, load_config, load_dataset, write_config,
    write_package_config,
)
from semsec.ddpg import DDPGAgent
from semsec.download import fetch_cifar10
from semsec.errors import AcceptanceError, ConfigError, NumericalError
from semsec.nn_core import load_networks
from semsec.superpose import reshape_action
from semsec.system import SemComSystem, make_streams
from semsec.trainer import PRECODER_TAG, EvalReport, FinalModel, Trainer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3

SNR_GRID = (0.0, 5.0, 10.0, 15.0, 20.0)
CU_GRID = (1, 2, 3, 4, 5)
CSV_COLUMNS = ["x", "psnr_leg_db", "psnr_eve_db", "gap_db", "seed"]
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class SweepResult:
    """
    Rows of (x, psnr_leg_db, psnr_eve_db, gap_db, seed), where x is the SNR
    in dB or the compression ratio. Columns are accessible as
    ``result['gap_db']`` and the table is in ``.data``.
    """
    def __init__(self, x_label: str, rows: Sequence[Tuple[float, EvalReport, int]] = ()) -> None:
        self.x_label = x_label
        self.data = pd.DataFrame(columns=CSV_COLUMNS)
        for x, report, seed in rows:
            self.add(x, report, seed)
        return

    def add(self, x: float, report: EvalReport, seed: int) -> None:
        row = pd.DataFrame([[float(x), report.psnr_leg_db, report.psnr_eve_db,
                             report.psnr_leg_db - report.psnr_eve_db, int(seed)]], columns=CSV_COLUMNS)
        self.data = row if self.data.empty else pd.concat([self.data, row], ignore_index=True)
        return

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, _slice):
        return self.data[_slice]


def emit_csv(result: SweepResult, path: Union[str, pathlib.Path]) -> pathlib.Path:
    """Write the sweep as CSV with header x,psnr_leg_db,psnr_eve_db,gap_db,seed."""
    if len(result) == 0:
        raise ValueError("Nothing to write: the sweep result is empty.")
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = result.data.astype({"seed": int})
    df.to_csv(path, index=False, columns=CSV_COLUMNS, float_format="%.10g")
    return path


def emit_plot(result: SweepResult, path: Union[str, pathlib.Path]) -> pathlib.Path:
    """
    Plot the seed-averaged PSNRs of Bob and Eve against x as an SVG. Output
    bytes depend only on the data.
    """
    if len(result) == 0:
        raise ValueError("Nothing to plot: the sweep result is empty.")
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    means = result.data.astype(float).groupby("x").mean()
    with plt.rc_context({"svg.hashsalt": "semsec", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(means.index, means["psnr_leg_db"], "o-", label="Bob (legitimate)")
        ax.plot(means.index, means["psnr_eve_db"], "s--", label="Eve (eavesdropper)")
        ax.set_xlabel("Channel SNR [dB]" if result.x_label == "snr_db" else "Compression ratio")
        ax.set_ylabel("PSNR [dB]")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def prepare(cfg: ExperimentConfig, seed: int, out_dir: pathlib.Path = None, verbose: bool = False,
            nets=None) -> Tuple[Trainer, DDPGAgent]:
    """Streams, data, environment, trainer and agent for one trial."""
    rngs = make_streams(seed, cfg.seeds.offsets)
    train, test, eval_set = load_dataset(cfg, rngs["data"])
    env = SemComSystem(cfg.channel, cfg.data.image_shape, cfg.cu, rngs, cfg.corpus(), cfg.arch, nets)
    trainer = Trainer(env, cfg.plan, train, test, eval_set, rngs, eval_seed=cfg.seeds.eval,
                      out_dir=out_dir, verbose=verbose)
    agent = DDPGAgent(cfg.agent, env.action_dim, rngs["init"], rngs["ou"], rngs["buffer"])
    return trainer, agent


def run_train(cfg: ExperimentConfig, seed: int, out_dir: pathlib.Path, verbose: bool = False) -> FinalModel:
    trainer, agent = prepare(cfg, seed, out_dir, verbose)
    final = trainer.run(agent)
    result = SweepResult("snr_db", [(cfg.channel.snr_leg_db, final.report, seed)])
    emit_csv(result, out_dir / "final.csv")
    return final


def run_eval(cfg: ExperimentConfig, checkpoint: pathlib.Path, seed: int, out_dir: pathlib.Path) -> EvalReport:
    """Evaluate a stage-5 checkpoint on the test set."""
    nets, sections = load_networks(checkpoint)
    if PRECODER_TAG not in sections:
        raise ConfigError(f"{checkpoint}:0: checkpoint has no precoder section; use a stage5.ckpt.")
    trainer, _ = prepare(cfg, seed, nets=nets)
    V = reshape_action(np.frombuffer(sections[PRECODER_TAG], dtype="<f8"), cfg.channel.n_m, cfg.channel.n_n)
    report = trainer.evaluate(V, X=trainer.test, stage=5)
    emit_csv(SweepResult("snr_db", [(cfg.channel.snr_leg_db, report, seed)]), out_dir / "eval.csv")
    return report


def with_snr(cfg: ExperimentConfig, snr_db: float) -> ExperimentConfig:
    return replace(cfg, channel=replace(cfg.channel, snr_leg_db=snr_db, snr_eve_db=snr_db))


def _shared_stages(args) -> pathlib.Path:
    cfg, seed, out_dir, verbose = args
    trainer, _ = prepare(cfg, seed, out_dir, verbose)
    trainer.stage1()
    trainer.stage2()
    trainer.stage3()
    return out_dir / "checkpoints" / "stage3.ckpt"


def _snr_point(args) -> EvalReport:
    cfg, seed, snr_db, checkpoint, out_dir, verbose = args
    nets, _ = load_networks(checkpoint)
    trainer, agent = prepare(with_snr(cfg, snr_db), seed, out_dir, verbose, nets=nets)
    return trainer.stage5(trainer.stage4(agent)).report


def _cr_point(args) -> EvalReport:
    cfg, seed, cu, out_dir, verbose = args
    return run_train(replace(cfg, cu=cu), seed, out_dir, verbose).report


def _svd_point(args) -> EvalReport:
    cfg, seed, snr_db, out_dir, verbose = args
    trainer, _ = prepare(with_snr(cfg, snr_db), seed, out_dir, verbose)
    return trainer.svd_baseline()


def _map(fn, tasks: List, jobs: int) -> List:
    if jobs > 1 and len(tasks) > 1:
        with Pool(min(jobs, len(tasks))) as p:
            return p.map(fn, tasks)
    return [fn(task) for task in tasks]


def sweep_snr(cfg: ExperimentConfig, seeds: Sequence[int], grid: Sequence[float], out_dir: pathlib.Path,
              jobs: int = 1, verbose: bool = False) -> SweepResult:
    """
    Stages 1-3 once per seed at the configured SNR, then stages 4-5 per SNR
    point starting from that shared checkpoint. The sweep runs at CU = 1
    whatever the config says.
    """
    cfg = replace(cfg, cu=1)
    shared = _map(_shared_stages, [(cfg, s, out_dir / f"seed{s}" / "shared", verbose) for s in seeds], jobs)
    tasks = [(cfg, s, snr, ckpt, out_dir / f"seed{s}" / f"snr{snr:g}", verbose)
             for s, ckpt in zip(seeds, shared) for snr in grid]
    reports = _map(_snr_point, tasks, jobs)
    return SweepResult("snr_db", [(t[2], r, t[1]) for t, r in zip(tasks, reports)])


def sweep_cr(cfg: ExperimentConfig, seeds: Sequence[int], grid: Sequence[int], out_dir: pathlib.Path,
             jobs: int = 1, verbose: bool = False) -> SweepResult:
    """
    All five stages from scratch per (seed, CU) at SNR_leg = SNR_eve = 10 dB.
    Every codec shape depends on CU, so no checkpoint can be shared.
    """
    cfg = with_snr(cfg, 10.0)
    tasks = [(cfg, s, cu, out_dir / f"seed{s}" / f"cu{cu}", verbose) for s in seeds for cu in grid]
    reports = _map(_cr_point, tasks, jobs)
    return SweepResult("cr", [(t[2] / 96, r, t[1]) for t, r in zip(tasks, reports)])


def baseline_svd(cfg: ExperimentConfig, seeds: Sequence[int], grid: Sequence[float], out_dir: pathlib.Path,
                 jobs: int = 1, verbose: bool = False) -> SweepResult:
    tasks = [(cfg, s, snr, out_dir / f"seed{s}" / f"snr{snr:g}", verbose) for s in seeds for snr in grid]
    reports = _map(_svd_point, tasks, jobs)
    return SweepResult("snr_db", [(t[2], r, t[1]) for t, r in zip(tasks, reports)])


def _emit(result: SweepResult, out_dir: pathlib.Path, stem: str) -> None:
    csv_path = emit_csv(result, out_dir / f"{stem}.csv")
    svg_path = emit_plot(result, out_dir / f"{stem}.svg")
    logger.info(f"Wrote {csv_path} and {svg_path}.")
    print(result.data.to_string(index=False))
    return


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=pathlib.Path, default=None,
                        help="An experiment INI file. Defaults to the desk preset.")
    common.add_argument("--seed", type=int, default=None, help="The master seed (overrides [seeds] master).")
    common.add_argument("--trials", type=int, default=1,
                        help="Number of seeds for sweeps, starting at --seed.")
    common.add_argument("--out", type=pathlib.Path, default=None, help="Output directory.")
    common.add_argument("--scale", type=float, default=None,
                        help="Scale the stage 1, 2, 3, 5 epochs and the decision steps T.")
    common.add_argument("--jobs", type=int, default=1, help="Parallel sweep points.")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging and progress bars.")

    parser = argparse.ArgumentParser(
        prog="semsec", description="Secure semantic communication over MIMO wiretap channels."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="Run all five training stages.")
    p = sub.add_parser("eval", parents=[common], help="Evaluate a stage-5 checkpoint on the test set.")
    p.add_argument("checkpoint", type=pathlib.Path)
    p = sub.add_parser("sweep-snr", parents=[common], help="PSNRs over a channel SNR grid at CU=1.")
    p.add_argument("--snr-grid", type=float, nargs="+", default=list(SNR_GRID))
    p = sub.add_parser("sweep-cr", parents=[common], help="PSNRs over a compression ratio grid at 10 dB.")
    p.add_argument("--cu-grid", type=int, nargs="+", default=list(CU_GRID))
    p = sub.add_parser("baseline-svd", parents=[common], help="SVD precoding without jamming.")
    p.add_argument("--snr-grid", type=float, nargs="+", default=list(SNR_GRID))
    sub.add_parser("selftest", parents=[common], help="Run the oracle checks.")
    p = sub.add_parser("init-config", parents=[common], help="Write a configuration with every default.")
    p.add_argument("path", type=pathlib.Path)
    p.add_argument("--preset", choices=PRESETS, default="desk")
    p = sub.add_parser("config", parents=[common], help="Set the semsec data directory.")
    p.add_argument("--data-dir", type=pathlib.Path, default=pathlib.Path.home() / "semsec-data")
    p = sub.add_parser("fetch-cifar", parents=[common], help="Download CIFAR-10 into the data directory.")
    p.add_argument("--data-dir", type=pathlib.Path, default=None)
    return parser


def main(argv: Sequence[str] = None) -> int:
    """
    The semsec command. Returns 0 on success, 1 for configuration errors,
    2 for numerical failures and 3 when a selftest check fails.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return _dispatch(args)
    except ConfigError as err:
        logger.error(str(err))
        return EXIT_CONFIG
    except NumericalError as err:
        logger.error(f"Numerical failure: {err}")
        return EXIT_NUMERICAL
    except AcceptanceError as err:
        logger.error(str(err))
        return EXIT_ACCEPTANCE


def _dispatch(args) -> int:
    if args.command == "init-config":
        write_config(default_config(args.preset), args.path)
        return EXIT_OK
    if args.command == "config":
        path = write_package_config(args.data_dir)
        logger.info(f"Wrote {path}.")
        return EXIT_OK

    cfg = default_config("desk") if args.config is None else load_config(args.config)
    if args.scale is not None:
        cfg = replace(cfg, plan=cfg.plan.scaled(args.scale))
    seed = cfg.seeds.master if args.seed is None else args.seed
    out_dir = pathlib.Path(cfg.out_dir if args.out is None else args.out)

    if args.command == "selftest":
        results = oracles.run_all(seed)
        for r in results:
            print(r)
        if not all(r.passed for r in results):
            raise AcceptanceError(f"{sum(not r.passed for r in results)} oracle check(s) failed.")
        return EXIT_OK
    if args.command == "fetch-cifar":
        fetch_cifar10(args.data_dir)
        return EXIT_OK
    if args.command == "train":
        final = run_train(cfg, seed, out_dir, args.verbose)
        logger.info(f"PSNR_leg={final.report.psnr_leg_db:.2f} dB, PSNR_eve={final.report.psnr_eve_db:.2f} dB, "
                    f"gap={final.report.gap_db:.2f} dB.")
        return EXIT_OK
    if args.command == "eval":
        report = run_eval(cfg, args.checkpoint, seed, out_dir)
        print(f"psnr_leg_db={report.psnr_leg_db:.4f} psnr_eve_db={report.psnr_eve_db:.4f}")
        return EXIT_OK

    seeds = list(range(seed, seed + args.trials))
    if args.command == "sweep-snr":
        _emit(sweep_snr(cfg, seeds, args.snr_grid, out_dir, args.jobs, args.verbose), out_dir, "sweep_snr")
    elif args.command == "sweep-cr":
        _emit(sweep_cr(cfg, seeds, args.cu_grid, out_dir, args.jobs, args.verbose), out_dir, "sweep_cr")
    elif args.command == "baseline-svd":
        _emit(baseline_svd(cfg, seeds, args.snr_grid, out_dir, args.jobs, args.verbose), out_dir, "baseline_svd")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
