import os
import csv
import sys
import json
import time
import logging
import argparse
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import (OPTIMIZERS, PROFILES, ExperimentConfig, load_config_file,
                     resolve_config)
from .evaluator import ENDPOINT_ENV
from .d2r import EVALUATORS, REWARD_WEIGHTS, EvalConfig, PromptFitness, evaluate_fitness, make_evaluator
from .embedding import Embedder, similarity_matrix
from .evolve import EvolutionLog, run_es, run_ga
from .exceptions import ConfigurationError, InsufficientDataError, UsageError, ZapfieldError
from .helpers import atomic_write_bytes, atomic_write_json, format_float, mix_seed
from .p2i import forward, load_genome, load_weights, save_genome
from .sim_core import SimConfig, VectorField, run_episode, save_trajectory
from .stats import MIN_PAIRS, PairedSamples, summarize_runs, wilcoxon_signed_rank, write_summary_csv

logger = logging.getLogger(__name__)

MANIFEST     = "manifest.json"
LOG_FILE     = "log.csv"
GENOME_FILE  = "best_genome.json"
COMPARE_FILE = "compare.json"
SUMMARY_FILE = "summary.csv"
CURVES_FILE  = "fitness_curves.png"

STATUS_RUNNING  = "running"
STATUS_COMPLETE = "complete"
STATUS_FAILED   = "failed"


def run_id(grid_n: int, k: int) -> str:
    return f"grid{grid_n}/seed{k}"


def run_seed(base_seed: int, grid_n: int, k: int) -> int:
    """
    Seed of run k on grid_n within a campaign rooted at base_seed.
    """
    return mix_seed(base_seed, grid_n, k)


def _read_manifest(path: Path) -> Optional[dict]:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError):
        return None
    return data if isinstance(data, dict) else None


def is_complete(run_dir: Path) -> bool:
    """
    A run is complete iff its manifest says so and its log exists.
    """

    manifest = _read_manifest(run_dir / MANIFEST)
    return (manifest is not None
            and manifest.get("status") == STATUS_COMPLETE
            and (run_dir / LOG_FILE).is_file())


def _run_one(config: ExperimentConfig, grid_n: int, k: int) -> str:
    rid     = run_id(grid_n, k)
    run_dir = Path(config.output_dir) / f"grid{grid_n}" / f"seed{k}"
    run_dir.mkdir(parents=True, exist_ok=True)

    seed = run_seed(config.base_seed, grid_n, k)
    arch = config.arch_for(grid_n)

    embedder  = Embedder.from_file(config.embeddings) if config.embeddings else Embedder()
    evaluator = make_evaluator(config.eval)
    fitness   = PromptFitness(config.prompt, arch, config.sim, config.eval,
                              evaluator=evaluator, embedder=embedder)

    manifest = {
        "run_id":        rid,
        "status":        STATUS_RUNNING,
        "grid_size":     grid_n,
        "seed_index":    k,
        "run_seed":      seed,
        "optimizer":     config.optimizer,
        "deterministic": evaluator.deterministic,
        "config":        config.to_dict(),
    }
    atomic_write_json(run_dir / MANIFEST, manifest)

    start = time.monotonic()
    try:
        if config.optimizer == "es":
            log = run_es(config.es, arch, fitness, seed)
        else:
            log = run_ga(config.ga, arch, fitness, seed)
    except Exception as e:
        manifest.update({"status": STATUS_FAILED, "error": str(e),
                         "wall_time": time.monotonic() - start})
        atomic_write_json(run_dir / MANIFEST, manifest)
        logger.error("run %s failed: %s", rid, e)
        raise
    finally:
        evaluator.close()

    log.to_csv(run_dir / LOG_FILE)
    save_genome(run_dir / GENOME_FILE, arch, log.best_genome)

    manifest.update({
        "status":        STATUS_COMPLETE,
        "wall_time":     time.monotonic() - start,
        "initial_best":  log.initial_fitness,
        "final_best":    log.best_fitness,
        "artifacts":     [LOG_FILE, GENOME_FILE],
    })
    atomic_write_json(run_dir / MANIFEST, manifest)
    return rid


def run_campaign(config: ExperimentConfig) -> List[str]:
    """
    Run the optimizer once per (grid size, seed index), skipping runs whose
    manifest is already complete.

    Args:
        config (ExperimentConfig): The resolved campaign config.

    Returns:
        list: Ids (``grid<n>/seed<k>``) of the runs that executed, in
            (grid, seed) order.
    """

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / MANIFEST, {
        "config":        config.to_dict(),
        "deterministic": config.eval.evaluator == "oracle",
        "runs":          [run_id(n, k) for n in config.grid_sizes for k in range(config.seeds)],
    })

    pending: List[Tuple[int, int]] = []
    for n in config.grid_sizes:
        for k in range(config.seeds):
            run_dir = out / f"grid{n}" / f"seed{k}"
            if is_complete(run_dir):
                logger.info("%s complete, skipping", run_id(n, k))
                continue
            if (run_dir / MANIFEST).exists():
                logger.info("%s incomplete, redo", run_id(n, k))
            pending.append((n, k))

    total = len(pending)
    done  = 0
    if config.workers > 1 and total > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_one, config, n, k) for n, k in pending]
            for future in futures:
                rid = future.result()
                done += 1
                logger.info("[%d/%d] %s done", done, total, rid)
    else:
        for n, k in pending:
            rid = _run_one(config, n, k)
            done += 1
            logger.info("[%d/%d] %s done", done, total, rid)

    return [run_id(n, k) for n, k in pending]


def _parse_ints(text: str, flag: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"{flag} expects comma separated integers, got {text!r}") from None


def _parse_vector(text: str) -> Tuple[float, float]:
    parts = text.split(",")
    try:
        dx, dy = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"--constant-field expects dx,dy, got {text!r}") from None
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise UsageError("--constant-field values must be finite")
    return dx, dy


def _load_genome(path: str):
    try:
        return load_genome(path)
    except OSError as e:
        raise UsageError(f"cannot read genome {path}: {e}") from e


def _sim_from_args(args) -> SimConfig:
    base = {}
    if args.config:
        base = load_config_file(args.config).get("sim", {})
    if args.n is not None:
        base["n_cells"] = args.n
    if args.steps is not None:
        base["steps"] = args.steps
    if args.initial_speed is not None:
        base["initial_speed_max"] = args.initial_speed
    if args.repulsion is not None:
        base["repulsion_strength"] = args.repulsion
    return SimConfig.from_dict(base)


def _embedder_from_args(args) -> Embedder:
    return Embedder.from_file(args.embeddings) if args.embeddings else Embedder()


def cmd_simulate(args) -> int:
    """
    Run one episode and write ``<name>.csv`` / ``<name>.json`` (and the
    evaluator plots with --render).
    """

    if (args.genome is None) == (args.constant_field is None):
        raise UsageError("simulate needs exactly one of --genome or --constant-field")

    sim = _sim_from_args(args)
    if args.genome is not None:
        arch, genome = _load_genome(args.genome)
        vector_field = forward(load_weights(arch, genome), _embedder_from_args(args).embed(args.prompt))
    else:
        dx, dy = _parse_vector(args.constant_field)
        vector_field = VectorField.constant(args.grid, dx, dy)

    traj = run_episode(args.seed, vector_field, sim)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(traj, sim, out / f"{args.name}.csv", out / f"{args.name}.json")

    if args.render:
        from .render import render_distance_plot, render_layout_plot
        atomic_write_bytes(out / f"{args.name}_distance.png", render_distance_plot(traj.d_avg_series))
        atomic_write_bytes(out / f"{args.name}_layout.png",
                           render_layout_plot(traj.final_positions, vector_field, sim))

    logger.info("episode seed %d: d_avg %.6g -> %.6g", args.seed, traj.d_avg_series[0], traj.d_avg_series[-1])
    return 0


def _eval_flags(args) -> dict:
    d = {}
    if getattr(args, "epochs", None) is not None:
        d["epochs"] = args.epochs
    if getattr(args, "evaluator", None) is not None:
        d["evaluator"] = args.evaluator
    if getattr(args, "endpoint", None) is not None:
        d["endpoint"] = args.endpoint
    if getattr(args, "reward", None) is not None:
        d["alpha"], d["beta"] = REWARD_WEIGHTS[args.reward]
    return d


def cmd_evaluate(args) -> int:
    """
    Score a genome for a prompt and print the FitnessReport as JSON.
    """

    arch, genome = _load_genome(args.genome)

    file_data = load_config_file(args.config) if args.config else {}
    sim = SimConfig.from_dict(file_data.get("sim", {}))
    if args.steps is not None:
        sim = SimConfig.from_dict({**sim.to_dict(), "steps": args.steps})

    eval_data = {**file_data.get("eval", {}), **_eval_flags(args)}
    if not eval_data.get("endpoint") and os.environ.get(ENDPOINT_ENV):
        eval_data["endpoint"] = os.environ[ENDPOINT_ENV]
    cfg = EvalConfig.from_dict(eval_data)

    report = evaluate_fitness(genome, args.prompt, arch, sim, cfg, args.seed,
                              embedder=_embedder_from_args(args))
    print(json.dumps(report.to_dict()))
    return 0


def _experiment_flags(args) -> dict:
    flags = {}
    simple = {
        "prompt":     args.prompt,
        "seeds":      args.seeds,
        "optimizer":  args.optimizer,
        "output_dir": args.output_dir,
        "base_seed":  args.base_seed,
        "workers":    args.workers,
        "embeddings": args.embeddings,
    }
    flags.update({k: v for k, v in simple.items() if v is not None})

    if args.grids is not None:
        flags["grid_sizes"] = _parse_ints(args.grids, "--grids")
    if args.hidden is not None:
        flags["hidden_dims"] = _parse_ints(args.hidden, "--hidden")
    if args.generations is not None:
        flags["es"] = {"generations": args.generations}
        flags["ga"] = {"generations": args.generations}
    if args.pop_size is not None:
        flags.setdefault("ga", {})["pop_size"] = args.pop_size
    if args.steps is not None:
        flags["sim"] = {"steps": args.steps}

    eval_flags = _eval_flags(args)
    if eval_flags:
        flags["eval"] = eval_flags
    return flags


def cmd_evolve(args) -> int:
    """
    Run (or resume) an evolution campaign.
    """

    file_data = load_config_file(args.config) if args.config else {}
    profile   = "paper" if args.paper_scale else args.profile
    config    = resolve_config(file_data, _experiment_flags(args), profile=profile)

    executed = run_campaign(config)
    total    = len(config.grid_sizes) * config.seeds
    print(f"{len(executed)} run(s) executed, {total - len(executed)} already complete, in {config.output_dir}")
    return 0


def collect_logs(input_dir: Path, grid_n: Optional[int] = None) -> List[Tuple[str, EvolutionLog]]:
    """
    Load the logs of every complete run under input_dir, sorted by run id.
    """

    found = []
    for manifest_path in sorted(input_dir.glob(f"grid{grid_n if grid_n is not None else '*'}/seed*/{MANIFEST}")):
        run_dir = manifest_path.parent
        if not is_complete(run_dir):
            continue
        found.append((f"{run_dir.parent.name}/{run_dir.name}", EvolutionLog.from_csv(run_dir / LOG_FILE)))
    return found


def cmd_compare(args) -> int:
    """
    Wilcoxon test of generation-0 against final best fitness over the
    complete runs, plus a per-generation summary of the fitness curves and
    a plot of them.
    """

    input_dir = Path(args.input)
    if not input_dir.is_dir():
        raise UsageError(f"{input_dir} is not a directory")

    logs = collect_logs(input_dir, args.grid)
    if len(logs) < MIN_PAIRS:
        raise InsufficientDataError(f"need at least {MIN_PAIRS} completed runs, found {len(logs)} in {input_dir}")

    initial = np.array([log.initial_fitness for _, log in logs])
    final   = np.array([log.best_fitness for _, log in logs])
    result  = wilcoxon_signed_rank(PairedSamples(initial, final), alternative=args.alternative)

    report = {
        "n":            len(logs),
        "n_nonzero":    result.n,
        "W":            result.statistic,
        "w_plus":       result.w_plus,
        "w_minus":      result.w_minus,
        "p_value":      result.p_value,
        "alternative":  result.alternative,
        "exact":        result.exact,
        "mean_initial": float(initial.mean()),
        "mean_final":   float(final.mean()),
        "runs":         [rid for rid, _ in logs],
    }

    out = Path(args.output_dir) if args.output_dir else input_dir
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / COMPARE_FILE, report)
    try:
        rows = summarize_runs([log for _, log in logs])
    except ZapfieldError as e:
        logger.warning("no fitness summary written: %s", e)
    else:
        write_summary_csv(out / SUMMARY_FILE, rows)
        from .render import render_fitness_curves
        atomic_write_bytes(out / CURVES_FILE, render_fitness_curves(rows))

    if args.json:
        print(json.dumps(report))
    else:
        print(f"runs: {report['n']} (non-zero differences: {result.n})")
        print(f"mean best fitness: {report['mean_initial']:.4f} -> {report['mean_final']:.4f}")
        print(f"Wilcoxon W = {result.statistic:g}, p = {result.p_value:.6g} ({result.alternative})")
    return 0


def cmd_embed(args) -> int:
    """
    Print the cosine similarity matrix of the given prompts as CSV.
    """

    if not args.prompts:
        raise UsageError("embed needs at least one prompt")

    embedder = _embedder_from_args(args)
    matrix   = similarity_matrix([embedder.embed(p) for p in args.prompts])

    writer = csv.writer(sys.stdout, lineterminator="\n")
    for row in matrix:
        writer.writerow([format_float(v) for v in row])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zapfield",
                                     description="Evolve prompt-driven vector fields for a simulated cell collective.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="INFO, or DEBUG when repeated")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one episode and export its trajectory")
    p.add_argument("--genome", help="genome JSON file")
    p.add_argument("--constant-field", metavar="DX,DY", help="use a constant field instead of a genome")
    p.add_argument("--grid", type=int, default=2, help="constant field resolution")
    p.add_argument("--prompt", default="Cluster!", help="prompt fed to the genome's controller")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--n", type=int, help="number of cells")
    p.add_argument("--initial-speed", type=float, help="upper bound of initial speeds, 0 starts at rest")
    p.add_argument("--repulsion", type=float, help="repulsion strength, 0 disables it")
    p.add_argument("--config", help="JSON config file, its 'sim' section is used")
    p.add_argument("--embeddings", help="embedding table JSON")
    p.add_argument("--output-dir", default=".")
    p.add_argument("--name", default="trajectory", help="output file stem")
    p.add_argument("--render", action="store_true", help="also write the evaluator PNG plots")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score a genome for a prompt")
    p.add_argument("--genome", required=True)
    p.add_argument("--prompt", default="Cluster!")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--evaluator", choices=EVALUATORS)
    p.add_argument("--endpoint")
    p.add_argument("--reward", choices=sorted(REWARD_WEIGHTS))
    p.add_argument("--config")
    p.add_argument("--embeddings")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("evolve", help="run an evolution campaign")
    p.add_argument("--config", help="JSON file mirroring the experiment config")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--paper-scale", action="store_true", help="same as --profile paper")
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--prompt")
    p.add_argument("--grids", help="comma separated grid sizes")
    p.add_argument("--seeds", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--pop-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--hidden", help="comma separated hidden layer widths")
    p.add_argument("--evaluator", choices=EVALUATORS)
    p.add_argument("--endpoint")
    p.add_argument("--reward", choices=sorted(REWARD_WEIGHTS))
    p.add_argument("--base-seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--embeddings")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("compare", help="test generation-0 against final fitness")
    p.add_argument("input", help="campaign directory")
    p.add_argument("--grid", type=int, help="only runs on this grid size")
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.add_argument("--output-dir", help="where compare.json, summary.csv and the curve plot go, default the input")
    p.add_argument("--json", action="store_true", help="print the JSON report instead of text")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("embed", help="print the cosine similarity matrix of prompts")
    p.add_argument("prompts", nargs="*")
    p.add_argument("--embeddings")
    p.set_defaults(func=cmd_embed)

    return parser


def _configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.WARNING
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the ``zapfield`` command. Returns the exit code:
    0 on success, 2 on usage errors, 1 on any other failure.
    """

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    _configure_logging(args.verbose, args.quiet)

    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as e:
        print(f"zapfield {args.command}: error: {e}", file=sys.stderr)
        return 2
    except ZapfieldError as e:
        print(f"zapfield {args.command}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"zapfield {args.command}: {e}", file=sys.stderr)
        return 1
