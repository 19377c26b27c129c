"""Command-line front end.

Subcommands ``select``, ``oracle``, ``sweep`` and ``demo`` write CSV files and
a ``manifest.json`` run record into the output directory. Exit codes: 0 on
success, 2 for configuration errors, 3 for numerical failures, 4 when the
exhaustive oracle would be too large.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, FimSelectError, NumericalError, OracleGuardError
from .estimate import SELECTORS, monte_carlo_sweep, run_selector
from .fim import fim_init, fim_push
from .scenario import BUILTIN_TAGS, build_model, build_pools, builtin_scenario, dump_scenario, load_scenario

logger = logging.getLogger("fimselect")

OUT_ENV = "FIMSELECT_OUT"
SELECT_ALGORITHMS = ("greedy", "lazy", "random", "oracle", "independent", "cooperative")
SELECTION_COLUMNS = ["step", "atom_id", "agent_id", "sensor_type", "time_s", "marginal_gain", "cumulative_f"]
CURVE_COLUMNS = ["selector", "budget", "trials", "rmse_pos_m", "weighted_err", "nonconverged"]
MIX_COLUMNS = ["selector", "budget", "sensor_type", "count"]
PATH_COLUMNS = ["t", "agent_id", "agent_x", "agent_y", "agent_z", "selected", "sensor_type", "budget"]

DEMO_BUDGETS = {"example1": [10, 50, 100], "example2": [10], "example3": [10], "cooperative": [10]}
COOPERATIVE_CURVE_BUDGETS = [2, 5, 10, 20]
DEMO_TRIALS = 50

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ORACLE, EXIT_OTHER = 0, 2, 3, 4, 1


# ------------------------------------------------------------------ output


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


class Run:
    """Output directory plus the timings that end up in ``manifest.json``."""

    def __init__(self, command: list, out: Path, seed: int, config_hash: str = ""):
        self.command = command
        self.out = out
        self.seed = seed
        self.config_hash = config_hash
        self.phases: dict = {}
        self.started = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0

    def write_manifest(self) -> None:
        record = {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": __version__,
            "wall_clock_s": time.perf_counter() - self.started,
            "phases_s": self.phases,
        }
        (self.out / "manifest.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


def selection_rows(results, pools, q0) -> list:
    """One row per chosen atom; ``cumulative_f`` is the criterion of the union so far."""
    lookup = {}
    for pool in pools:
        lookup.update(pool.by_id())
    state = fim_init(q0)
    rows = []
    for r in results:
        for atom_id, gain in zip(r.chosen, r.gains):
            atom = lookup[atom_id]
            state = fim_push(state, atom)
            rows.append([len(rows) + 1, atom_id, atom.agent_id, atom.sensor_type, atom.time, gain, state.f])
    return rows


def curve_rows(curves) -> list:
    return [
        [c.selector, b, c.trials, c.rmse_pos[i], c.weighted_err[i], c.nonconverged[i]]
        for c in curves
        for i, b in enumerate(c.budgets)
    ]


def mix_rows(curves) -> list:
    return [[c.selector, b, kind, count] for c in curves for b in c.budgets for kind, count in c.mix[b].items()]


def path_rows(model, pools, selections: dict) -> list:
    """Candidate measurements with agent position, flagged per budget by ``selections``."""
    rows = []
    for budget, results in selections.items():
        chosen = {i for r in results for i in r.chosen}
        for pool, agent in zip(pools, model.agents):
            for atom in pool.atoms:
                x, y, z = agent.path.position(atom.time)
                rows.append([atom.time, agent.agent_id, x, y, z, atom.atom_id in chosen, atom.sensor_type, budget])
    return rows


# ---------------------------------------------------------------- commands


def _workers(threads: int) -> int:
    return os.cpu_count() or 1 if threads == 0 else max(1, threads)


def _seed(args, scenario) -> int:
    return scenario.seed if args.seed is None else args.seed


def cmd_select(args, run_factory) -> int:
    scenario = load_scenario(args.config)
    run = run_factory(_seed(args, scenario), scenario.config_hash())
    with run.phase("build"):
        _, pools, q0 = build_pools(scenario)
    with run.phase("select"):
        results = run_selector(args.algorithm, pools, q0, args.budget, run.seed)
    with run.phase("write"):
        write_csv(run.out / "selection.csv", SELECTION_COLUMNS, selection_rows(results, pools, q0))
    run.write_manifest()
    return EXIT_OK


def _int_list(text: str) -> list:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("budgets must be nonnegative integers")
    return values


def _str_list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def cmd_sweep(args, run_factory) -> int:
    scenario = load_scenario(args.config)
    run = run_factory(_seed(args, scenario), scenario.config_hash())
    with run.phase("sweep"):
        curves = monte_carlo_sweep(
            scenario, args.budgets, args.trials, args.selectors, run.seed, _workers(args.threads), strict=False
        )
    with run.phase("write"):
        write_csv(run.out / "error_curve.csv", CURVE_COLUMNS, curve_rows(curves))
        write_csv(run.out / "mix.csv", MIX_COLUMNS, mix_rows(curves))
    run.write_manifest()
    for c in curves:
        if c.worst_nonconverged_frac() > 0.05:
            raise NumericalError(f"selector {c.selector!r}: {max(c.nonconverged)} of {c.trials} estimates did not converge")
    return EXIT_OK


def cmd_demo(args, run_factory) -> int:
    scenario = builtin_scenario(args.tag)
    run = run_factory(_seed(args, scenario), scenario.config_hash())
    (run.out / "config.yaml").write_text(dump_scenario(scenario), encoding="utf-8")
    with run.phase("build"):
        model = build_model(scenario)
        _, pools, q0 = build_pools(model)
    budgets = DEMO_BUDGETS[args.tag]
    selectors = ["greedy", "random"] + (["cooperative"] if args.tag == "cooperative" else [])
    greedy = {}
    with run.phase("select"):
        for selector in selectors:
            for b in budgets:
                results = run_selector(selector, pools, q0, b, run.seed)
                if selector == "greedy":
                    greedy[b] = results
                write_csv(run.out / f"selection_{selector}_B{b}.csv", SELECTION_COLUMNS, selection_rows(results, pools, q0))
    write_csv(run.out / "path.csv", PATH_COLUMNS, path_rows(model, pools, greedy))
    if args.tag == "cooperative":
        with run.phase("sweep"):
            curves = monte_carlo_sweep(
                model, COOPERATIVE_CURVE_BUDGETS, DEMO_TRIALS, ["independent", "cooperative"], run.seed,
                _workers(args.threads), strict=False,
            )
        write_csv(run.out / "error_curve.csv", CURVE_COLUMNS, curve_rows(curves))
        write_csv(run.out / "mix.csv", MIX_COLUMNS, mix_rows(curves))
    run.write_manifest()
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default: the scenario's seed, else 0)")
    common.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./out)")
    common.add_argument("--threads", type=int, default=0, help="worker processes for Monte-Carlo trials (0 = auto)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fimselect", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    config_help = "scenario file (YAML/JSON) or builtin:<tag>"
    p = sub.add_parser("select", parents=[common], help="select measurements for one scenario")
    p.add_argument("config", help=config_help)
    p.add_argument("--budget", type=int, default=None, help="per-agent budget (default: from the scenario)")
    p.add_argument("--algorithm", choices=SELECT_ALGORITHMS, default="greedy")

    p = sub.add_parser("oracle", parents=[common], help="exhaustive selection (select --algorithm oracle)")
    p.add_argument("config", help=config_help)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(algorithm="oracle")

    p = sub.add_parser("sweep", parents=[common], help="Monte-Carlo error versus budget")
    p.add_argument("config", help=config_help)
    p.add_argument("--budgets", type=_int_list, default=[10, 50, 100])
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--selectors", type=_str_list, default=["greedy", "random"], help=f"from {', '.join(SELECTORS)}")

    p = sub.add_parser("demo", parents=[common], help="run one builtin example end to end")
    p.add_argument("tag", choices=BUILTIN_TAGS)
    return parser


COMMANDS = {"select": cmd_select, "oracle": cmd_select, "sweep": cmd_sweep, "demo": cmd_demo}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")

    def run_factory(seed: int, config_hash: str) -> Run:
        return Run(["fimselect", *argv], out, seed, config_hash)

    try:
        if getattr(args, "budget", None) is not None and args.budget < 0:
            raise ConfigError("--budget must be nonnegative")
        if args.command == "sweep" and args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        return COMMANDS[args.command](args, run_factory)
    except OracleGuardError as exc:
        code, msg = EXIT_ORACLE, exc
    except NumericalError as exc:
        code, msg = EXIT_NUMERICAL, exc
    except (ConfigError, ValueError) as exc:
        code, msg = EXIT_CONFIG, exc
    except (FimSelectError, OSError) as exc:
        code, msg = EXIT_OTHER, exc
    print(f"fimselect: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
