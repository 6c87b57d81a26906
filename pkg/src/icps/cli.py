"""Command line harness: ``icps {train,eval,compare,sweep,plotdata,selftest}``."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import MODES, ExperimentConfig, with_overrides
from .csdac import LOG_FIELDS, Agent, train
from .envmdp import trace_fields
from .evaluation import SUMMARY_FIELDS, reduction, run_agent, run_baseline, summarize
from .network import ConfigError

log = logging.getLogger("icps")

CHECKPOINT_CONFIG = "config.ini"


class CliError(Exception):
    pass


# -- csv helpers -------------------------------------------------------------

def write_csv(path, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), quoting=csv.QUOTE_MINIMAL,
                           lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def read_csv(path, required=()):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CliError(f"{path}: missing header row")
        missing = [f for f in required if f not in reader.fieldnames]
        if missing:
            raise CliError(f"{path}: missing columns {missing}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise CliError(f"{path}:{i}: wrong number of fields")
            rows.append((i, row))
    return rows


def _num(path, line, row, key):
    try:
        return float(row[key])
    except ValueError:
        raise CliError(f"{path}:{line}: column {key!r} is not a number: {row[key]!r}") from None


# -- config ----------------------------------------------------------------

def resolve_config(path, seed=None) -> ExperimentConfig:
    cfg = cfgmod.load(path) if path else cfgmod.loads("")
    if seed is not None:
        cfg = with_overrides(cfg, seed=seed)
    return cfg


def load_agent(ckpt, cfg_path=None, seed=None):
    ckpt = Path(ckpt)
    if not (ckpt / "manifest.json").is_file():
        raise CliError(f"not a checkpoint directory: {ckpt}")
    cfg = resolve_config(cfg_path or ckpt / CHECKPOINT_CONFIG, seed)
    agent = Agent(cfg)
    try:
        agent.load(ckpt)
    except (ValueError, KeyError) as exc:
        raise CliError(f"checkpoint {ckpt}: {exc}") from None
    return agent, cfg


# -- commands ----------------------------------------------------------------

def cmd_train(args):
    cfg = resolve_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = cfgmod.dumps(cfg)
    (out / "config.ini").write_text(snapshot)
    res = train(cfg, out_dir=out)
    write_csv(out / "train_log.csv", LOG_FIELDS, res.log)
    ckpt = res.agent.save(out / "checkpoint")
    (ckpt / CHECKPOINT_CONFIG).write_text(snapshot)
    print(f"trained {len(res.log)} iterations ({res.stopped_by}); checkpoint in {ckpt}")
    return 0


def _write_traces(out, label, episodes, cfg):
    fields = trace_fields(cfg.network)
    for i, ep in enumerate(episodes):
        write_csv(Path(out) / "traces" / f"{label}_{i:03d}.csv", fields, ep.rows)


def cmd_eval(args):
    agent, cfg = load_agent(args.checkpoint, args.config, args.seed)
    mode = args.mode or cfg.env.eval_mode
    n = cfg.eval.episodes if args.episodes is None else args.episodes
    eps = run_agent(agent, cfg, n, mode)
    summary = summarize("csdac", eps, cfg)
    out = Path(args.out)
    write_csv(out / "summary.csv", SUMMARY_FIELDS, [summary])
    _write_traces(out, "csdac", eps, cfg)
    _print_table([summary])
    return 0


def compare_rows(agent, cfg, episodes, mode):
    runs = {
        "csdac": run_agent(agent, cfg, episodes, mode),
        "lqr_trigger": run_baseline(cfg, episodes, mode, periodic=False),
        "lqr_periodic": run_baseline(cfg, episodes, mode, periodic=True),
    }
    rows = [summarize(k, v, cfg) for k, v in runs.items()]
    return rows, runs


COMPARE_FIELDS = ("reference", "updates_reduction_pct", "total_power_reduction_pct",
                  "transmit_power_reduction_pct", "survival_csdac", "survival_reference")


def reduction_rows(rows):
    by = {r["controller"]: r for r in rows}
    ours = by["csdac"]
    out = []
    for ref in ("lqr_trigger", "lqr_periodic"):
        theirs = by[ref]
        if not ours["episodes"]:
            continue
        out.append({
            "reference": ref,
            "updates_reduction_pct": reduction(ours["mean_updates_per_episode"],
                                               theirs["mean_updates_per_episode"]),
            "total_power_reduction_pct": reduction(ours["mean_total_power_W"],
                                                   theirs["mean_total_power_W"]),
            "transmit_power_reduction_pct": reduction(ours["mean_transmit_power_W"],
                                                      theirs["mean_transmit_power_W"]),
            "survival_csdac": ours["mean_episode_len"],
            "survival_reference": theirs["mean_episode_len"],
        })
    return out


def cmd_compare(args):
    agent, cfg = load_agent(args.checkpoint, args.config, args.seed)
    mode = args.mode or cfg.env.eval_mode
    n = cfg.eval.episodes if args.episodes is None else args.episodes
    rows, runs = compare_rows(agent, cfg, n, mode)
    out = Path(args.out)
    write_csv(out / "compare.csv", SUMMARY_FIELDS, rows)
    red = reduction_rows(rows)
    write_csv(out / "reductions.csv", COMPARE_FIELDS, red)
    for label, eps in runs.items():
        _write_traces(out, label, eps, cfg)
    _print_table(rows)
    _print_table(red)
    return 0


def parse_grid(spec: str) -> list[dict]:
    """``"mu1=0.1,1;mu3=0.5"`` -> list of {mu1, mu3} points (cartesian product)."""
    axes = []
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        if "=" not in part:
            raise CliError(f"grid entry {part!r} lacks '='")
        key, values = part.split("=", 1)
        key = key.strip()
        if key not in ("mu1", "mu2", "mu3"):
            raise CliError(f"grid key {key!r} is not one of mu1, mu2, mu3")
        try:
            vals = [float(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise CliError(f"grid values for {key} must be numbers") from None
        if not vals:
            raise CliError(f"grid key {key} has no values")
        axes.append([(key, v) for v in vals])
    if not axes:
        raise CliError("empty grid")
    return [dict(p) for p in itertools.product(*axes)]


def _sweep_job(job):
    cfg, point, seed, episodes, out = job
    cfg = with_overrides(cfg, seed=seed, env=point)
    res = train(cfg)
    tag = "_".join(f"{k}{v:g}" for k, v in point.items()) + f"_s{seed}"
    write_csv(Path(out) / "logs" / f"{tag}.csv", LOG_FIELDS, res.log)
    eps = run_agent(res.agent, cfg, episodes, cfg.env.eval_mode)
    ret = [sum(r["r0"] + r["r1"] for r in e.rows) for e in eps]
    return float(np.mean(ret)) if ret else 0.0


def cmd_sweep(args):
    cfg = resolve_config(args.config, args.seed)
    points = parse_grid(args.grid)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    n = cfg.eval.episodes if args.episodes is None else args.episodes
    jobs = [(cfg, p, s, n, args.out) for p in points for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            scores = list(pool.map(_sweep_job, jobs))
    else:
        scores = [_sweep_job(j) for j in jobs]
    rows = []
    for i, p in enumerate(points):
        s = scores[i * len(seeds):(i + 1) * len(seeds)]
        rows.append({**{k: p.get(k, getattr(cfg.env, k)) for k in ("mu1", "mu2", "mu3")},
                     "mean_eval_return": float(np.mean(s)),
                     "std_eval_return": float(np.std(s))})
    # stable sort keeps grid order among ties
    rows.sort(key=lambda r: -r["mean_eval_return"])
    for rank, r in enumerate(rows, start=1):
        r["rank"] = rank
    fields = ("rank", "mu1", "mu2", "mu3", "mean_eval_return", "std_eval_return")
    write_csv(Path(args.out) / "sweep.csv", fields, rows)
    _print_table(rows)
    return 0


def plot_series(log_path=None, trace_paths=()):
    """Per-figure series as ``{name: (fields, rows)}``."""
    series = {}
    if log_path is not None:
        src = read_csv(log_path, ("iteration", "constraint_violations", "mean_r0", "mean_r1"))
        series["violations"] = (("iteration", "constraint_violations"), [
            {"iteration": int(_num(log_path, i, r, "iteration")),
             "constraint_violations": int(_num(log_path, i, r, "constraint_violations"))}
            for i, r in src])
        series["rewards"] = (("iteration", "mean_r0", "mean_r1"), [
            {"iteration": int(_num(log_path, i, r, "iteration")),
             "mean_r0": _num(log_path, i, r, "mean_r0"),
             "mean_r1": _num(log_path, i, r, "mean_r1")} for i, r in src])
    states, control, power = [], [], []
    need = ("k", "x_d", "x_r", "u", "beta", "effective_beta", "total_power")
    for path in trace_paths:
        label = Path(path).stem
        cum = 0.0
        for i, r in read_csv(path, need):
            k = int(_num(path, i, r, "k"))
            states.append({"source": label, "k": k, "x_d": _num(path, i, r, "x_d"),
                           "x_r": _num(path, i, r, "x_r")})
            control.append({"source": label, "k": k, "u": _num(path, i, r, "u"),
                            "beta": int(_num(path, i, r, "beta")),
                            "effective_beta": int(_num(path, i, r, "effective_beta"))})
            p = _num(path, i, r, "total_power")
            cum += p
            power.append({"source": label, "k": k, "total_power": p, "cumulative_power": cum})
    if trace_paths:
        series["states"] = (("source", "k", "x_d", "x_r"), states)
        series["control"] = (("source", "k", "u", "beta", "effective_beta"), control)
        series["power"] = (("source", "k", "total_power", "cumulative_power"), power)
    return series


def cmd_plotdata(args):
    if not args.log and not args.traces:
        raise CliError("give --log and/or --traces")
    series = plot_series(args.log, args.traces or ())
    for name, (fields, rows) in series.items():
        p = write_csv(Path(args.out) / f"{name}.csv", fields, rows)
        print(f"{p}: {len(rows)} rows")
    return 0


def cmd_selftest(args):
    from .selftest import run_checks
    results = run_checks()
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def _print_table(rows):
    if not rows:
        print("(no rows)")
        return
    keys = list(rows[0])
    print(",".join(keys))
    for r in rows:
        print(",".join(f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k]) for k in keys))


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icps", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="INI experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("train", help="train the agent")
    common(sp, "runs/train")
    sp.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "evaluate a checkpoint"),
                              ("compare", cmd_compare, "compare against the baselines")):
        sp = sub.add_parser(name, help=help_)
        common(sp, f"runs/{name}")
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--mode", choices=MODES)
        sp.set_defaults(func=func)

    sp = sub.add_parser("sweep", help="reward-weight grid search")
    common(sp, "runs/sweep")
    sp.add_argument("--grid", required=True, help='e.g. "mu1=0.01,0.1,1;mu3=0.5"')
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("plotdata", help="export plot-ready series")
    sp.add_argument("--log", help="training log CSV")
    sp.add_argument("--traces", nargs="*", help="episode trace CSVs")
    sp.add_argument("--out", default="runs/plotdata")
    sp.set_defaults(func=cmd_plotdata)

    sp = sub.add_parser("selftest", help="run the built-in oracle checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CliError, FileNotFoundError) as exc:
        print(f"icps {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
