# This code is part of SwarmTune.
#
# (C) Copyright SwarmTune developers, 2026.
#
# This code is licensed under the Apache License, Version 2.0. You may
# obtain a copy of this license in the LICENSE.txt file in the root directory
# of this source tree or at http://www.apache.org/licenses/LICENSE-2.0.
#
# Any modifications or derivative works of this code must retain this
# copyright notice, and modified files need to carry a notice indicating
# that they have been altered from the originals.

"""Command line front end: ``run`` tunes over the configured seeds, ``sweep``
builds the brute-force grid oracle and ``verify`` checks the former against
the latter."""

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import PROGRAM_NAME, ExperimentConfig, GainMapSection, PlantSection, load_config
from .exceptions import ConfigMismatchError, SwarmTuneError
from .lib.eql import GainPoint
from .lib.plant import GainMap, PlantParams, fly_batch
from .lib.utils import config_digest, mean_std
from .swarm import ExperimentResult, run_experiment

logger = logging.getLogger(__name__)

RUNS_HEADER = ["seed", "k_P", "k_D", "duration_s", "total_evals", "final_J"]
SLOTS_HEADER = ["seed", "seq", "t_start_s", "t_end_s", "mav_id", "k_P", "k_D", "cost"]
GRID_HEADER = ["k_P", "k_D", "mean_J", "log10_mean_J"]


@dataclass
class RunRecord:
    digest: str
    results: List[ExperimentResult]
    summary: Dict[str, Any]


@dataclass
class SweepRecord:
    digest: str
    points: List[GainPoint]
    mean_j: np.ndarray
    argmin: int


@dataclass
class VerifyReport:
    lines: List[str]
    passed: bool


def _write_csv(path: Path, header: Sequence[str], rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload: Dict[str, Any]):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _plant_params(plant: PlantSection) -> PlantParams:
    return PlantParams(**plant.model_dump())


def _gain_map(section: GainMapSection) -> GainMap:
    return GainMap(tuple(section.kp_range), tuple(section.kd_range))


def _stats(values: Sequence[float]) -> Dict[str, float]:
    mean, std = mean_std(values)
    return {"mean": mean, "std": std}


def cmd_run(config: ExperimentConfig, out: Path, transport: Optional[str] = None) -> RunRecord:
    """Tunes once per configured seed and writes the run artifacts.

    Writes ``runs.csv`` (one row per seed), ``slots.csv`` (the gain
    profiles flown in every slot) and ``summary.json`` (mean and sample
    deviation of the tuned gains, the config and its digest).

    Parameters
    ----------
    config : ExperimentConfig
        The experiment.
    out : Path
        Output directory, created if needed.
    transport : str, optional
        Overrides the configured transport mode.

    Returns
    -------
    RunRecord
        The digest, the per-seed results and the summary.
    """
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config)
    results = [run_experiment(config, seed, transport) for seed in config.seeds]

    _write_csv(
        out / "runs.csv",
        RUNS_HEADER,
        [
            [r.seed, r.final_gains.k_p, r.final_gains.k_d, r.simulated_duration,
             r.total_evals, r.final_cost]
            for r in results
        ],
    )
    _write_csv(
        out / "slots.csv",
        SLOTS_HEADER,
        [
            [r.seed, record.slot.seq, record.slot.t_start, record.slot.t_end, mav_id,
             p.k_p, p.k_d, record.costs[mav_id]]
            for r in results
            for record in r.slots
            for mav_id, p in sorted(record.slot.assignments.items())
        ],
    )

    summary = {
        "config": config.model_dump(mode="json"),
        "config_digest": digest,
        "nb_runs": len(results),
        "k_P": _stats([r.final_gains.k_p for r in results]),
        "k_D": _stats([r.final_gains.k_d for r in results]),
        "final_J": _stats([r.final_cost for r in results]),
        "duration_s": _stats([r.simulated_duration for r in results]),
    }
    _write_json(out / "summary.json", summary)
    logger.info(
        "k_P = %.4f +- %.4f, k_D = %.4f +- %.4f over %d seeds",
        summary["k_P"]["mean"], summary["k_P"]["std"],
        summary["k_D"]["mean"], summary["k_D"]["std"], len(results),
    )
    return RunRecord(digest, results, summary)


def sweep_seeds(base_seed: int, reps: int) -> List[int]:
    return [base_seed + rep for rep in range(reps)]


def cmd_sweep(
    config: ExperimentConfig, out: Path, grid: Optional[int] = None, reps: Optional[int] = None
) -> SweepRecord:
    """Evaluates the mean flight cost on a grid over the normalized box.

    Every node is flown once per repetition seed. All nodes share the
    repetition seeds. Writes ``grid.csv`` (k_P major), ``argmin.csv``
    and ``sweep.json``.

    Parameters
    ----------
    config : ExperimentConfig
        Provides the plant and the sweep section.
    out : Path
        Output directory, created if needed.
    grid : int, optional
        Nodes per axis, overriding the config.
    reps : int, optional
        Repetitions per node, overriding the config.

    Returns
    -------
    SweepRecord
        The grid means and the argmin index.
    """
    grid = grid or config.sweep.grid
    reps = reps or config.sweep.reps
    if grid < 2 or reps < 1:
        raise ValueError(f"Need grid >= 2 and reps >= 1, got {grid} and {reps}")
    out.mkdir(parents=True, exist_ok=True)

    params = _plant_params(config.plant)
    gm = _gain_map(config.gain_map)
    values = np.linspace(0.0, 1.0, grid)
    points = [GainPoint(float(kp), float(kd)) for kp in values for kd in values]
    seeds = sweep_seeds(config.sweep.base_seed, reps)

    costs = np.empty((reps, len(points)))
    for rep, seed in enumerate(seeds):
        costs[rep], _ = fly_batch(points, params, gm, [seed] * len(points))
    mean_j = costs.mean(axis=0)
    argmin = int(np.argmin(mean_j))

    rows = [
        [p.k_p, p.k_d, float(j), math.log10(j) if j > 0 else -math.inf]
        for p, j in zip(points, mean_j)
    ]
    _write_csv(out / "grid.csv", GRID_HEADER, rows)
    _write_csv(out / "argmin.csv", GRID_HEADER, [rows[argmin]])

    digest = config_digest(config)
    _write_json(
        out / "sweep.json",
        {
            "config_digest": digest,
            "plant": config.plant.model_dump(mode="json"),
            "gain_map": config.gain_map.model_dump(mode="json"),
            "grid": grid,
            "reps": reps,
            "base_seed": config.sweep.base_seed,
            "argmin": {
                "k_P": points[argmin].k_p,
                "k_D": points[argmin].k_d,
                "mean_J": float(mean_j[argmin]),
                "index": [argmin // grid, argmin % grid],
            },
        },
    )
    logger.info("Grid argmin at (%.4f, %.4f), J=%.6g", points[argmin].k_p,
                points[argmin].k_d, mean_j[argmin])
    return SweepRecord(digest, points, mean_j, argmin)


def cmd_verify(run_dir: Path, sweep_dir: Path, out: Path, delta: float) -> VerifyReport:
    """Checks every tuned seed against the grid oracle.

    A seed passes when the mean cost of its tuned gains over the sweep's
    repetition seeds is at most (1 + delta) times the grid minimum.

    Parameters
    ----------
    run_dir : Path
        Directory holding ``runs.csv`` and ``summary.json``.
    sweep_dir : Path
        Directory holding ``sweep.json``.
    out : Path
        Where ``verify-report.txt`` goes.
    delta : float
        Relative cost gap allowed. Infinity always passes.

    Raises
    ------
    ConfigMismatchError
        If the run and the sweep were made on different plants.

    Returns
    -------
    VerifyReport
        One line per seed and the overall verdict.
    """
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    sweep = json.loads((sweep_dir / "sweep.json").read_text(encoding="utf-8"))
    if summary["config_digest"] != sweep["config_digest"]:
        raise ConfigMismatchError(
            f"Run digest {summary['config_digest'][:12]} does not match "
            f"sweep digest {sweep['config_digest'][:12]}"
        )

    with open(run_dir / "runs.csv", newline="", encoding="utf-8") as f:
        runs = list(csv.DictReader(f))

    params = _plant_params(PlantSection.model_validate(sweep["plant"]))
    gm = _gain_map(GainMapSection.model_validate(sweep["gain_map"]))
    seeds = sweep_seeds(sweep["base_seed"], sweep["reps"])
    j_argmin = sweep["argmin"]["mean_J"]
    threshold = math.inf if math.isinf(delta) else (1.0 + delta) * j_argmin

    lines = []
    passed = True
    for row in runs:
        p = GainPoint(float(row["k_P"]), float(row["k_D"]))
        costs, _ = fly_batch([p] * len(seeds), params, gm, seeds)
        j_tuned = float(np.mean(costs))
        ok = j_tuned <= threshold
        passed = passed and ok
        lines.append(
            f"seed={row['seed']} k_P={p.k_p:.6f} k_D={p.k_d:.6f} J={j_tuned:.6g} "
            f"J_argmin={j_argmin:.6g} ratio={j_tuned / j_argmin:.4f} "
            f"{'PASS' if ok else 'FAIL'}"
        )
    lines.append(f"delta={delta} {'PASS' if passed else 'FAIL'}")

    out.mkdir(parents=True, exist_ok=True)
    (out / "verify-report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Verification %s", "passed" if passed else "failed")
    return VerifyReport(lines, passed)


def _override(config: ExperimentConfig, section: str, **values) -> ExperimentConfig:
    values = {key: value for key, value in values.items() if value is not None}
    if not values:
        return config
    data = config.model_dump()
    data[section].update(values)
    return ExperimentConfig.model_validate(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROGRAM_NAME, description="Parallel PD gain tuning across a simulated MAV swarm."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for every slot")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")

    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="tune once per seed")
    run.add_argument("--transport", choices=["inproc", "tcp"])
    run.add_argument("--listen", metavar="HOST:PORT")
    run.add_argument("--connect", metavar="HOST:PORT")

    sweep = commands.add_parser("sweep", parents=[common], help="build the grid oracle")
    sweep.add_argument("--grid", type=int)
    sweep.add_argument("--reps", type=int)

    verify = commands.add_parser("verify", parents=[common], help="check a run against a sweep")
    verify.add_argument("--run", type=Path, required=True, dest="run_dir")
    verify.add_argument("--sweep", type=Path, required=True, dest="sweep_dir")
    verify.add_argument("--delta", type=float)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config)
        if args.command == "run":
            config = _override(
                config, "transport", mode=args.transport, listen=args.listen, connect=args.connect
            )
            record = cmd_run(config, args.out)
            print(
                f"k_P = {record.summary['k_P']['mean']:.4f} +- {record.summary['k_P']['std']:.4f}, "
                f"k_D = {record.summary['k_D']['mean']:.4f} +- {record.summary['k_D']['std']:.4f}"
            )
        elif args.command == "sweep":
            config = _override(config, "sweep", grid=args.grid, reps=args.reps)
            record = cmd_sweep(config, args.out)
            p = record.points[record.argmin]
            print(f"argmin k_P={p.k_p:.4f} k_D={p.k_d:.4f} J={record.mean_j[record.argmin]:.6g}")
        else:
            config = _override(config, "verify", delta=args.delta)
            report = cmd_verify(args.run_dir, args.sweep_dir, args.out, config.verify.delta)
            print("\n".join(report.lines))
            if not report.passed:
                return 1
    except ValidationError as err:
        for error in err.errors():
            where = ".".join(str(part) for part in error["loc"]) or "config"
            print(f"{PROGRAM_NAME}: invalid {where}: {error['msg']}", file=sys.stderr)
        return 2
    except ConfigMismatchError as err:
        print(f"{PROGRAM_NAME}: {err}", file=sys.stderr)
        return 2
    except SwarmTuneError as err:
        logger.error("%s", err)
        print(f"{PROGRAM_NAME}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"{PROGRAM_NAME}: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
