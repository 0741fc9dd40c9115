"""Command-line experiment runner.

Subcommands: gen-data, train, eval, online, bias-audit. Exit status is 0 on
success, 1 for usage or configuration errors and 2 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- output helpers ---------------------------------------------------------------

def fmt_value(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "%.9g" % v
    try:
        import numpy as np
        if isinstance(v, np.floating):
            return "%.9g" % float(v)
    except ImportError:  # pragma: no cover
        pass
    return str(v)


class CsvWriter:
    """CSV with a header row; floats use 9 significant digits; flushed per row."""

    def __init__(self, path: Path, columns, append: bool = False):
        self.columns = list(columns)
        exists = append and path.exists()
        self.fh = open(path, "a" if exists else "w", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        if not exists:
            self.writer.writerow(self.columns)
            self.fh.flush()

    def row(self, values: dict) -> None:
        self.writer.writerow([fmt_value(values[c]) for c in self.columns])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def write_csv(path: Path, columns, rows) -> None:
    w = CsvWriter(path, columns)
    for r in rows:
        w.row(r)
    w.close()


def version_string() -> str:
    from . import __version__
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def check_outputs(paths, force: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise UsageError(f"output already exists: {', '.join(existing)} (use --force)")


def write_manifest(out: Path, command: str, cfg, outputs, argv) -> Path:
    """Run record written before work starts; completion goes to a separate file."""
    from .config import dumps_toml
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": version_string(),
        "seed": cfg.seed,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [str(p) for p in outputs],
        "config": cfg.to_dict(),
        "config_toml": dumps_toml(cfg),
    }
    path = out / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / f"config-{command}.toml").write_text(dumps_toml(cfg), encoding="utf-8")
    return path


def write_completion(out: Path, command: str, extra: dict | None = None) -> None:
    rec = {"command": command, "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    rec.update(extra or {})
    (out / f"completed-{command}.json").write_text(json.dumps(rec, indent=2) + "\n",
                                                    encoding="utf-8")


# -- shared builders ----------------------------------------------------------------

def build_simulator(cfg, path: str | None = None):
    from .env import SimulatorSpec, new_simulator
    if path:
        spec = SimulatorSpec.load(path)
    else:
        s = cfg.simulator
        spec = new_simulator(s.m, s.n, s.k, cfg.simulator_seed)
    return spec


def model_dims(cfg, n_items: int):
    from .models import ModelDims
    m = cfg.model
    return ModelDims(n_items, m.embedding, m.hidden, m.layers)


# -- subcommands ----------------------------------------------------------------------

def cmd_gen_data(cfg, args) -> int:
    from .env import LoggingPolicy, generate_offline, save_sessions, session_stats
    from .seeding import derive_rng

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sessions = out / "sessions.jsonl"
    simfile = out / "simulator.bin"
    check_outputs([sessions, simfile], args.force)
    write_manifest(out, "gen-data", cfg, [sessions, simfile], args.argv)
    spec = build_simulator(cfg)
    trajs = generate_offline(spec, LoggingPolicy(cfg.data.policy), cfg.data.size,
                             cfg.data.t_max, derive_rng(cfg.seed, "gen_data"))
    save_sessions(sessions, trajs)
    spec.save(simfile)
    stats = session_stats(trajs)
    write_completion(out, "gen-data", stats)
    print(f"wrote {stats['count']} sessions to {sessions} "
          f"(mean length {stats['mean_length']:.3f}, mean reward {stats['mean_reward']:.3f})")
    return 0


def _latest_checkpoint(ckdir: Path):
    cks = sorted(ckdir.glob("epoch_*.bin"))
    return cks[-1] if cks else None


def cmd_train(cfg, args) -> int:
    from .env import load_sessions
    from .nnet import checkpoint
    from .training import METRIC_COLUMNS, Trainer

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = Path(args.data) if args.data else out / "sessions.jsonl"
    if not data.exists():
        raise UsageError(f"data file {data} not found (run gen-data first or pass --data)")
    metrics = out / "metrics.csv"
    ckdir = out / "checkpoints"
    final = out / "model.bin"
    resume_from = _latest_checkpoint(ckdir) if args.resume else None
    if not args.resume:
        check_outputs([metrics, final, ckdir], args.force)
        if ckdir.exists():
            for f in ckdir.glob("epoch_*.bin"):
                f.unlink()
    ckdir.mkdir(exist_ok=True)
    write_manifest(out, "train", cfg, [metrics, ckdir, final], args.argv)

    offline = load_sessions(data)
    if not offline:
        raise UsageError(f"data file {data} holds no sessions")
    n_items = cfg.simulator.n
    seen = max(max(s.slate) for t in offline for s in t.steps)
    if seen >= n_items:
        raise UsageError(f"data uses item {seen} but simulator.n = {n_items}")
    k = len(offline[0].steps[0].slate)
    trainer = Trainer(cfg.train.method, cfg.schedule, model_dims(cfg, n_items), k, offline,
                      cfg.seed, lambda_p=cfg.model.lambda_p,
                      disc_temperature=cfg.model.disc_temperature)
    if resume_from is not None:
        trainer.load(resume_from)
        # keep metric rows up to the checkpointed epoch
        kept = []
        if metrics.exists():
            with open(metrics, encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
            kept = [r for r in rows[1:] if r and int(r[0]) <= trainer.epoch]
        with open(metrics, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            w.writerows(kept)
        print(f"resumed from {resume_from} at epoch {trainer.epoch}")
        writer = CsvWriter(metrics, METRIC_COLUMNS, append=True)
    else:
        writer = CsvWriter(metrics, METRIC_COLUMNS)

    every = cfg.train.checkpoint_every
    if not trainer.pretrained:
        trainer.pretrain()
        checkpoint.save(ckdir / "epoch_0000.bin", trainer.state_arrays())

    def on_epoch(tr, row):
        writer.row(row)
        print(" ".join(f"{c}={fmt_value(row[c])}" for c in METRIC_COLUMNS), flush=True)
        if tr.epoch % every == 0 or tr.epoch == cfg.schedule.epochs:
            checkpoint.save(ckdir / f"epoch_{tr.epoch:04d}.bin", tr.state_arrays())

    try:
        trainer.run(cfg.schedule.epochs, on_epoch)
    finally:
        writer.close()
    checkpoint.save(final, trainer.state_arrays())
    write_completion(out, "train", {"epochs": trainer.epoch})
    return 0


def _pick_model(models: dict, method: str, requested: str):
    if requested == "auto":
        requested = "user" if method in ("LSTM", "LSTMD") else "agent"
    if requested not in models:
        raise UsageError(f"checkpoint of method {method} has no {requested} model")
    return requested, models[requested]


def cmd_eval(cfg, args) -> int:
    from .env import LoggingPolicy, generate_offline, load_sessions
    from .eval import avg_cumulative_reward, coverage_at_r, precision_at_k
    from .nnet import checkpoint
    from .seeding import derive_rng
    from .training import checkpoint_method, models_from_checkpoint

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = cfg.eval.mode
    report = out / f"eval-{mode}.csv"
    check_outputs([report], args.force)
    ck = Path(args.checkpoint) if args.checkpoint else out / "model.bin"
    if not ck.exists():
        raise UsageError(f"checkpoint {ck} not found")
    write_manifest(out, "eval", cfg, [report], args.argv)
    arrays = checkpoint.load(ck)
    models = models_from_checkpoint(arrays)
    method = checkpoint_method(arrays)
    which, model = _pick_model(models, method, cfg.eval.model)
    spec = build_simulator(cfg, args.simulator)
    if model.dims.n_items != spec.n:
        raise UsageError(f"model has {model.dims.n_items} items but the simulator has {spec.n}")
    rng = derive_rng(cfg.seed, "eval", mode)
    t_max = cfg.data.t_max
    if mode == "coverage":
        rep = coverage_at_r(spec, model, list(range(1, spec.k + 1)), spec.k,
                            cfg.eval.episodes, rng, t_max)
        rows = [{"model": f"{method}:{which}", "r": r, "coverage": rep.coverage[r]}
                for r in rep.r_values]
        write_csv(report, ["model", "r", "coverage"], rows)
        for r in rows:
            print(f"coverage@{r['r']} = {r['coverage']:.4f}")
    elif mode == "reward":
        val = avg_cumulative_reward(spec, model, cfg.eval.episodes, rng, t_max)
        write_csv(report, ["model", "episodes", "avg_cumulative_reward"],
                  [{"model": f"{method}:{which}", "episodes": cfg.eval.episodes,
                    "avg_cumulative_reward": val}])
        print(f"average cumulative reward over {cfg.eval.episodes} episodes = {val:.4f}")
    else:
        if args.data:
            sessions = load_sessions(args.data)
        else:
            sessions = generate_offline(spec, LoggingPolicy(cfg.data.policy),
                                        cfg.eval.heldout_size, t_max,
                                        derive_rng(cfg.seed, "heldout"))
        p1 = precision_at_k(model, sessions, 1)
        p10 = precision_at_k(model, sessions, 10)
        write_csv(report, ["model", "P@1", "P@10"],
                  [{"model": f"{method}:{which}", "P@1": p1, "P@10": p10}])
        print(f"P@1 = {p1:.4f}  P@10 = {p10:.4f}"
              + ("  (no slate has more than 10 candidates)" if math.isnan(p10) else ""))
    write_completion(out, "eval")
    return 0


def cmd_online(cfg, args) -> int:
    from .training import OnlineSchedule, online_learning_loop

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = out / "online.csv"
    check_outputs([report], args.force)
    write_manifest(out, "online", cfg, [report], args.argv)
    spec = build_simulator(cfg, args.simulator)
    o = cfg.online
    sched = OnlineSchedule(o.iterations, o.sequences, o.online_epochs, o.offline_epochs,
                           o.adversarial_epochs, o.eval_episodes)
    r_cols = [f"coverage@{r}" for r in sorted({1, min(10, spec.k)})]
    writer = CsvWriter(report, ["method", "iteration", "pool_size"] + r_cols)

    def on_row(row):
        writer.row(row)
        print(" ".join(f"{c}={fmt_value(row[c])}" for c in writer.columns), flush=True)

    try:
        online_learning_loop(spec, cfg.schedule, sched, model_dims(cfg, spec.n), cfg.seed,
                             o.methods, cfg.model.lambda_p, on_row)
    finally:
        writer.close()
    write_completion(out, "online")
    return 0


def cmd_bias_audit(cfg, args) -> int:
    import numpy as np

    from .env import LoggingPolicy, SessionStep, Trajectory, new_simulator
    from .eval import (LoggingAgentProcess, ModelAgentProcess, ModelUserWorld, SimulatorWorld,
                       audit_from_distributions, enumerate_distribution,
                       optimal_discriminator_check)
    from .models import AgentModel, ModelDims, UserModel
    from .nnet import checkpoint
    from .seeding import derive_rng, derive_seed
    from .training import models_from_checkpoint

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = out / "bias.csv"
    check_outputs([report], args.force)
    write_manifest(out, "bias-audit", cfg, [report], args.argv)
    b = cfg.bias
    spec = new_simulator(b.m, b.n, b.k, derive_seed(cfg.seed, "bias_simulator"))
    policy = LoggingPolicy(b.policy)
    models = {}
    if args.checkpoint:
        models = models_from_checkpoint(checkpoint.load(args.checkpoint))
        for name, mdl in models.items():
            if mdl.dims.n_items != b.n:
                raise UsageError(f"checkpoint {name} has {mdl.dims.n_items} items; bias.n = {b.n}")
        if "agent" in models and models["agent"].slate_size != b.k:
            raise UsageError("checkpoint agent slate size differs from bias.k")
    sim = SimulatorWorld(spec)
    P_data = enumerate_distribution(sim, LoggingAgentProcess(policy, spec), b.horizon)
    if b.identity:
        target = LoggingAgentProcess(policy, spec)
        P_pi = P_data
        P_g = enumerate_distribution(SimulatorWorld(spec, b.reward_shift), target, b.horizon)
    else:
        dims = ModelDims(b.n, cfg.model.embedding, cfg.model.hidden, cfg.model.layers)
        user = models.get("user") or UserModel(dims, derive_rng(cfg.seed, "bias", "user"))
        agent = models.get("agent") or AgentModel(dims, b.k, derive_rng(cfg.seed, "bias", "agent"))
        target = ModelAgentProcess(agent)
        P_pi = enumerate_distribution(sim, target, b.horizon)
        P_g = enumerate_distribution(ModelUserWorld(user, b.reward_shift), target, b.horizon)
    rows = []
    for lam in b.lambda1:
        rep = audit_from_distributions(P_pi, P_data, P_g, float(lam), b.w)
        summary = rep.summary()
        for term, value in summary.items():
            if term in ("lambda1", "w"):
                continue
            rows.append({"lambda1": float(lam), "term": term, "value": value})
        print(f"lambda1={lam}: true V_a={rep.true_value:.6f} estimate={rep.estimate:.6f} "
              f"delta={rep.delta:.3g} max|delta1|={summary['delta1_max_abs']:.3g} "
              f"max|delta2|={summary['delta2_max_abs']:.3g}")
    if "disc" in models:
        keys = sorted(set(P_data.sequences) | set(P_g.sequences), key=repr)
        trajs = [Trajectory([SessionStep(tuple(s), c, float(r)) for s, c, r in key],
                            "generated", len(key) < b.horizon) for key in keys if key]
        pd = np.array([P_data.prob(kk) for kk in keys if kk])
        pg = np.array([P_g.prob(kk) for kk in keys if kk])
        dev = optimal_discriminator_check(trajs, pd, pg, models["disc"])
        rows.append({"lambda1": float("nan"), "term": "disc_max_deviation", "value": dev})
        print(f"max |D - D*| = {dev:.4f}")
    write_csv(report, ["lambda1", "term", "value"], rows)
    write_completion(out, "bias-audit")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "online": cmd_online,
    "bias-audit": cmd_bias_audit,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file or preset name (desk, paper)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker/BLAS thread cap; 1 = reference mode")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    p = _Parser(prog="irecgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("gen-data", parents=[common], help="generate offline logs")
    t = sub.add_parser("train", parents=[common], help="train one method on offline logs")
    t.add_argument("--data", help="session file (default: <out>/sessions.jsonl)")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    e = sub.add_parser("eval", parents=[common], help="evaluate a trained checkpoint")
    e.add_argument("--checkpoint", help="trainer checkpoint (default: <out>/model.bin)")
    e.add_argument("--simulator", help="simulator file (default: rebuilt from the config)")
    e.add_argument("--data", help="held-out sessions for rerank mode")
    e.add_argument("--mode", choices=["coverage", "reward", "rerank"])
    o = sub.add_parser("online", parents=[common], help="online/offline alternation study")
    o.add_argument("--simulator", help="simulator file (default: rebuilt from the config)")
    ba = sub.add_parser("bias-audit", parents=[common], help="exact bias audit on a toy problem")
    ba.add_argument("--checkpoint", help="trainer checkpoint supplying user/agent/discriminator")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            for var in THREAD_VARS:
                os.environ[var] = str(args.threads)
        from .config import ConfigError, load_config
        overrides = list(args.set)
        if getattr(args, "mode", None):
            overrides.append(f'eval.mode="{args.mode}"')
        try:
            cfg = load_config(args.config, overrides, args.seed, args.threads, args.out)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"irecgan: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("irecgan: interrupted", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"irecgan: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
