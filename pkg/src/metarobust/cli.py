"""Command line entry point.

Every subcommand takes ``--config FILE`` (key=value lines), ``--out DIR``,
``--threads N`` and one ``--<dotted.key> VALUE`` flag per configuration
key.  Outputs go to a fresh run directory together with ``run.conf``, the
fully resolved configuration.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, plotting
from . import benchmark as bm
from .analysis import (
    embed_and_project,
    evaluate_range,
    render_tables,
    render_task_records,
    scatter_ratio,
)
from .config import int_list, read_config_file, resolve, str_list, write_run_conf
from .data import (
    EpisodeShape,
    generate_gaussian_universe,
    load_dataset,
    load_split,
    sample_episode,
    save_dataset,
    save_split,
    split_classes,
)
from .errors import (
    ConfigurationError,
    ConsistencyError,
    DegenerateInputError,
    ParseError,
    UsageError,
)
from .extractor import load_checkpoint, save_checkpoint
from .heads import EpisodeScorer, HeadSpec
from .margin import MarginSimConfig, midpoint_outside_cores_check, theorem_model, verify_theorem
from .meta import TrainConfig, adversarial_train, train
from .search import (
    SearchConfig,
    convergence_trace,
    evaluation_rows,
    greedy_support_search,
    report_rows,
)

log = logging.getLogger("metarobust")

SHAPE_KEYS = {"shape.K": 5, "shape.J": 1, "shape.M": bm.EVAL_M, "shape.Q": bm.EVAL_Q}
HEAD_KEYS = {"head.lambda": 1.0, "head.C": 1.0, "head.max_passes": 1000, "head.kkt_tol": 1e-6}
SEARCH_KEYS = {"search.iterations": 3, "search.restarts": 1}

DEFAULTS = {
    "gen-data": {
        "name": "gaussian", **bm.UNIVERSE,
        "split.train": bm.FRACTIONS[0], "split.val": bm.FRACTIONS[1],
        "split.test": bm.FRACTIONS[2], "split.seed": bm.SPLIT_SEED, "split.min_classes": 5,
    },
    "train": {
        "data": "", "init": "", "objective": bm.STANDARD.objective, "epochs": bm.STANDARD.epochs,
        "episodes_per_epoch": bm.STANDARD.episodes_per_epoch, "meta_batch": bm.STANDARD.meta_batch,
        "inner_lr": bm.STANDARD.inner_lr, "optim.lr": bm.STANDARD.learning_rate,
        "optim.momentum": bm.STANDARD.momentum, "optim.weight_decay": bm.STANDARD.weight_decay,
        "arch.hidden": ",".join(str(h) for h in bm.STANDARD.hidden),
        "shape.K": 5, "shape.J": 1, "shape.M": 20, "shape.Q": 15,
        "val.J": 5, "val.M": 20, "val.Q": 15, "val.tasks": 50,
        "adversarial": False, "adversarial.lr_factor": 10.0, "keep_best": True,
        **SEARCH_KEYS, "seed": bm.STANDARD.seed,
    },
    "search": {
        "data": "", "model": "", "part": "test", "task_seed": 0, "head.kind": "prototype",
        **HEAD_KEYS, **SHAPE_KEYS, "search.mode": "worst", **SEARCH_KEYS, "search.seed": 0,
    },
    "eval-range": {
        "data": "", "model": "", "part": "test", "heads": "prototype,ridge,svm",
        "shots": "1,5", "num_tasks": bm.EVAL_TASKS, "random_samples": 100, **HEAD_KEYS,
        "shape.K": 5, "shape.M": bm.EVAL_M, "shape.Q": bm.EVAL_Q, **SEARCH_KEYS, "seed": 4,
    },
    "margin-sim": {
        "d": 2, "t": 1.0, "sigma": 1.0, "trials": 10_000, "separation_factor": 2.05,
        "bound_variant": "proof", "midpoint_samples": 10_000, "seed": 5,
    },
    "mds": {
        "data": "", "model": "", "part": "test", "task_seed": 0, "head.kind": "prototype",
        **HEAD_KEYS, **SHAPE_KEYS, "highlight": True, **SEARCH_KEYS, "seed": 6,
    },
}

HELP = {
    "gen-data": "generate a Gaussian-cluster universe and its class split",
    "train": "episodic meta-training (--adversarial true for worst-case support training)",
    "search": "greedy worst/best support search on one task",
    "eval-range": "worst/avg/best accuracy table over many tasks",
    "margin-sim": "Monte-Carlo check of the two-point max-margin bound",
    "mds": "classical MDS projection of one task's query embeddings",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="metarobust", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"metarobust {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("--out", help="run directory (default runs/<timestamp>-s<seed>-<command>)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default $MR_THREADS or 1); results do not depend on it")
        for key, default in defaults.items():
            p.add_argument(f"--{key}", dest=f"cfg:{key}", default=None, metavar="V",
                           help=f"(default: {default!r})")
    return parser


def _shape(cfg, J=None, prefix="shape"):
    return EpisodeShape(K=cfg[f"{prefix}.K"] if f"{prefix}.K" in cfg else cfg["shape.K"],
                        J=J if J is not None else cfg[f"{prefix}.J"],
                        M=cfg[f"{prefix}.M"], Q=cfg[f"{prefix}.Q"])


def _head(cfg, kind):
    return HeadSpec(kind=kind, lam=cfg["head.lambda"], C=cfg["head.C"],
                    max_passes=cfg["head.max_passes"], kkt_tol=cfg["head.kkt_tol"])


def _require(cfg, *keys):
    for k in keys:
        if not cfg[k]:
            raise UsageError(f"--{k} is required")


def _load_data(cfg):
    _require(cfg, "data")
    return load_dataset(cfg["data"]), load_split(cfg["data"])


def _write(run_dir, name, text):
    with open(os.path.join(run_dir, name), "w", newline="\n") as fh:
        fh.write(text)


def cmd_gen_data(cfg, run_dir, threads):
    ds, _ = generate_gaussian_universe(cfg["num_classes"], cfg["dim"], cfg["center_scale"],
                                       cfg["within_std"], cfg["examples_per_class"], cfg["seed"],
                                       name=cfg["name"])
    split = split_classes(ds.manifest, (cfg["split.train"], cfg["split.val"], cfg["split.test"]),
                          cfg["split.seed"], min_classes=cfg["split.min_classes"])
    out = os.path.join(run_dir, "dataset")
    save_dataset(ds, out)
    save_split(split, out)
    print(f"dataset written to {out}")


def cmd_train(cfg, run_dir, threads):
    ds, split = _load_data(cfg)
    init = load_checkpoint(cfg["init"])[0] if cfg["init"] else None
    tc = TrainConfig(
        objective=cfg["objective"], epochs=cfg["epochs"],
        episodes_per_epoch=cfg["episodes_per_epoch"], meta_batch=cfg["meta_batch"],
        inner_lr=cfg["inner_lr"], learning_rate=cfg["optim.lr"], momentum=cfg["optim.momentum"],
        weight_decay=cfg["optim.weight_decay"], hidden=tuple(int_list(cfg["arch.hidden"])),
        train_shape=_shape(cfg),
        val_shape=EpisodeShape(cfg["shape.K"], cfg["val.J"], cfg["val.M"], cfg["val.Q"]),
        val_tasks=cfg["val.tasks"], adversarial=cfg["adversarial"],
        adversarial_search=SearchConfig("worst", cfg["search.iterations"], cfg["search.restarts"]),
        adversarial_lr_factor=cfg["adversarial.lr_factor"], keep_best=cfg["keep_best"],
        seed=cfg["seed"],
    )

    def progress(epoch, loss, acc):
        log.info("epoch %d/%d loss %.4f val %.4f", epoch, tc.epochs, loss, acc)

    if tc.adversarial:
        params, tlog = adversarial_train(ds, split, tc, init, threads=threads, progress=progress)
    else:
        params, tlog = train(ds, split, tc, init=init, threads=threads, progress=progress)
    tlog.checkpoint_path = save_checkpoint(
        params, os.path.join(run_dir, "model.txt"), seed=cfg["seed"],
        metadata={"objective": tc.objective, "adversarial": str(tc.adversarial).lower(),
                  "epochs": tc.epochs, "best_epoch": tlog.best_epoch,
                  "tool_version": __version__})
    _write(run_dir, "train_log.csv", tlog.to_csv())
    with open(os.path.join(run_dir, "training.conf"), "w", newline="\n") as fh:
        for k, v in sorted(vars(tc).items()):
            fh.write(f"{k}={v}\n")
    plotting.plot_train_log(tlog, os.path.join(run_dir, "train_log.png"))
    print(f"checkpoint written to {tlog.checkpoint_path} (best epoch {tlog.best_epoch})")


def _load_model(cfg):
    _require(cfg, "model")
    return load_checkpoint(cfg["model"])


def cmd_search(cfg, run_dir, threads):
    ds, split = _load_data(cfg)
    params, _ = _load_model(cfg)
    shape = _shape(cfg)
    episode = sample_episode(ds, split.part(cfg["part"]), shape, cfg["task_seed"])
    scorer = EpisodeScorer(params, _head(cfg, cfg["head.kind"]), episode)
    sc = SearchConfig(cfg["search.mode"], cfg["search.iterations"], cfg["search.restarts"],
                      cfg["search.seed"])
    report = greedy_support_search(scorer, shape, sc, threads=threads)
    _write(run_dir, "search.csv", report_rows(report))
    _write(run_dir, "evaluations.csv", evaluation_rows(report))
    _write(run_dir, "support.csv", "class,shot,index,class_id,example_id\n" + "".join(
        f"{k},{j},{m},{episode.class_ids[k]},{episode.pool_example_ids[k, m]}\n"
        for k in range(shape.K) for j, m in enumerate(report.final_indices[k])))
    plotting.plot_search_trace(report, os.path.join(run_dir, "search.png"))
    print(f"{sc.mode}-case accuracy {report.final_accuracy:.4f} "
          f"({report.evaluation_count} evaluations, converged={report.converged})")


def cmd_eval_range(cfg, run_dir, threads):
    ds, split = _load_data(cfg)
    params, header = _load_model(cfg)
    method = header.get("objective", "model")
    if header.get("adversarial") == "true":
        method += "_adv"
    sc = SearchConfig("worst", cfg["search.iterations"], cfg["search.restarts"])
    results = []
    for kind in str_list(cfg["heads"]):
        for J in int_list(cfg["shots"]):
            shape = EpisodeShape(cfg["shape.K"], J, cfg["shape.M"], cfg["shape.Q"])
            res = evaluate_range(params, _head(cfg, kind), ds, split.part(cfg["part"]), shape,
                                 cfg["num_tasks"], sc, cfg["seed"], cfg["random_samples"],
                                 threads=threads, method=method)
            results.append(res)
            agg = res.aggregate
            print(f"{res.method} {J}-shot: worst {100 * agg['worst'][0]:.2f} "
                  f"avg {100 * agg['avg'][0]:.2f} best {100 * agg['best'][0]:.2f}")
            tag = f"{kind}_{J}shot"
            plotting.plot_accuracy_histogram(
                np.concatenate(res.random_values), os.path.join(run_dir, f"hist_{tag}.png"),
                worst=agg["worst"][0], best=agg["best"][0], title=f"{res.method}, {J}-shot")
            trace = convergence_trace(res.worst_reports)
            _write(run_dir, f"convergence_{tag}.csv", "iteration,mean_worst_accuracy\n" + "".join(
                f"{i + 1},{v:.6f}\n" for i, v in enumerate(trace)))
            plotting.plot_convergence(
                trace, os.path.join(run_dir, f"convergence_{tag}.png"),
                initial=float(np.mean([r.initial_accuracy for r in res.worst_reports])))
    _write(run_dir, "ranges.csv", render_tables(results))
    _write(run_dir, "tasks.csv", render_task_records(results))
    plotting.plot_ranges(results, os.path.join(run_dir, "ranges.png"))


def cmd_margin_sim(cfg, run_dir, threads):
    mc = MarginSimConfig(d=cfg["d"], sigma=cfg["sigma"], t=cfg["t"], trials=cfg["trials"],
                         separation_factor=cfg["separation_factor"],
                         bound_variant=cfg["bound_variant"])
    report = verify_theorem(mc, cfg["seed"])
    model, r_core = theorem_model(mc)
    violations = midpoint_outside_cores_check(model, r_core, cfg["midpoint_samples"], cfg["seed"])
    _write(run_dir, "trials.csv", report.trial_rows())
    _write(run_dir, "summary.csv", report.summary_rows())
    _write(run_dir, "geometry.csv", "midpoint_samples,midpoint_violations,both_in_core_freq\n"
           f"{cfg['midpoint_samples']},{violations},{report.both_in_core_frequency:.10g}\n")
    plotting.plot_margin_errors(report, os.path.join(run_dir, "errors.png"))
    print(f"r_core {report.r_core:.6f}  bound {report.error_bound:.6g}  "
          f"success {report.success_frequency:.4f}  floor {report.theoretical_floor:.4f}  "
          f"midpoint violations {violations}")


def cmd_mds(cfg, run_dir, threads):
    ds, split = _load_data(cfg)
    params, _ = _load_model(cfg)
    shape = _shape(cfg)
    episode = sample_episode(ds, split.part(cfg["part"]), shape, cfg["task_seed"])
    Z = None
    if cfg["highlight"]:
        scorer = EpisodeScorer(params, _head(cfg, cfg["head.kind"]), episode)
        sc = SearchConfig("worst", cfg["search.iterations"], cfg["search.restarts"], cfg["seed"])
        report = greedy_support_search(scorer, shape, sc, threads=threads)
        Z = report.final_indices
        print(f"worst-case accuracy {report.final_accuracy:.4f}")
    proj = embed_and_project(params, episode, Z)
    _write(run_dir, "mds.csv", proj.to_csv())
    q = ~proj.is_support
    print(f"between/within scatter ratio {scatter_ratio(proj.mds.coordinates[q], proj.labels[q]):.4f}")
    plotting.plot_projection(proj, os.path.join(run_dir, "mds.png"))


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "search": cmd_search,
    "eval-range": cmd_eval_range, "margin-sim": cmd_margin_sim, "mds": cmd_mds,
}


def _run_dir(args, cfg):
    if args.out:
        path = args.out
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = os.path.join("runs", f"{stamp}-s{cfg.get('seed', 0)}-{args.command}")
    if os.path.exists(path) and os.listdir(path):
        raise UsageError(f"run directory {path} exists and is not empty")
    os.makedirs(path, exist_ok=True)
    return path


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (see --help)")
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(DEFAULTS[args.command], file_values, overrides)
        threads = args.threads if args.threads is not None else int(os.environ.get("MR_THREADS", "1"))
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        run_dir = _run_dir(args, cfg)
        write_run_conf(run_dir, args.command, cfg, __version__)
        COMMANDS[args.command](cfg, run_dir, threads)
        return 0
    except (UsageError, ConfigurationError, ParseError, ConsistencyError,
            DegenerateInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
