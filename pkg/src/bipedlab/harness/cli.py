"""``bipedlab`` command line: training, evaluation protocols and metrics.

Every subcommand writes ``manifest.json`` (resolved config, seed, code
revision, argv, checkpoint digest) next to its outputs. Passing that manifest
back as ``--config`` reproduces the run.

Environment: ``BIPEDLAB_OUT`` sets the default output root, ``BIPEDLAB_THREADS``
caps BLAS and numba threads.
"""

from __future__ import annotations

import os

if os.environ.get("BIPEDLAB_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["BIPEDLAB_THREADS"])

import argparse
import hashlib
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

from .. import __version__
from ..env import BipedEnv
from ..errors import CheckpointError, ConfigError, DynamicsInputError, MetricsInputError, TrainingError
from ..metrics import SUMMARY_COLUMNS, csv_text, load_log, summarize_log, write_csv, write_jsonl
from ..ppo import Trainer, load_checkpoint
from . import protocols as P
from .config import ExperimentConfig, load_config

log = logging.getLogger("bipedlab")

CHECKPOINT_NAME = "checkpoint.bplc"


# ---------------------------------------------------------------- helpers
def code_revision() -> str:
    root = Path(__file__).resolve().parents[3]
    try:
        out = subprocess.run(["git", "-C", str(root), "rev-parse", "HEAD"], capture_output=True, text=True,
                             timeout=5, check=True)
        rev = out.stdout.strip()
        if rev:
            return rev
    except (OSError, subprocess.SubprocessError):
        pass
    return f"bipedlab-{__version__}"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, args, cfg: ExperimentConfig, checkpoint: Path | None = None, extra=None) -> Path:
    manifest = {
        "command": args.cmd,
        "argv": list(args.argv),
        "seed": cfg.seed,
        "revision": code_revision(),
        "version": __version__,
        "config": cfg.to_dict(),
        "checkpoint": None if checkpoint is None else {"path": str(checkpoint), "sha256": file_sha256(checkpoint)},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def env_seed(seed: int) -> int:
    return 10_000 * (int(seed) + 1)


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get("BIPEDLAB_OUT", "runs")) / args.cmd
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _policy(args, cfg: ExperimentConfig):
    if not args.checkpoint:
        raise ConfigError(f"{args.cmd} needs --checkpoint")
    path = Path(args.checkpoint)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    env = BipedEnv(cfg.env, cfg.model, num_envs=1, train=False)
    params, meta = load_checkpoint(path, env.obs_dim, env.act_dim, cfg.env.constraint_hash(), force=args.force)
    return P.params_policy(params), path


def _write_trials(out: Path, names: list[str], results: list[P.TrialResult]) -> None:
    for name, res in zip(names, results):
        write_jsonl(out / "trials" / f"{name}.jsonl", res.records)


def _tag(v: float) -> str:
    return f"{v:+.2f}".replace("+", "p").replace("-", "m").replace(".", "_")


# ---------------------------------------------------------------- subcommands
def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.iterations is not None:
        cfg = cfg.replace("train", total_steps=args.iterations * cfg.train.steps_per_iteration)
    out = _out_dir(args)
    env = BipedEnv(cfg.env, cfg.model, num_envs=cfg.train.num_envs, seed=env_seed(cfg.seed), train=True)
    meta = {"constraint_hash": cfg.env.constraint_hash(), "gait": cfg.env.constraints.gait, "seed": cfg.seed,
            "obs_dim": env.obs_dim, "act_dim": env.act_dim}
    ckpt = out / CHECKPOINT_NAME
    trainer = Trainer(env, cfg.train, stats_path=out / "stats.csv", checkpoint_path=ckpt, meta=meta)

    def progress(row):
        log.info("iter %d steps %d reward %.3f len %.1f gait %.3f", row["iteration"], row["steps"],
                 row["mean_reward"], row["mean_ep_len"], row.get("viol_gait", float("nan")))

    t0 = time.perf_counter()
    trainer.run(cfg.train.iterations, progress)
    # wall-clock lives outside the manifest so reruns stay byte-identical
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": round(time.perf_counter() - t0, 1)}) + "\n")
    write_manifest(out, args, cfg, ckpt, {"iterations": trainer.iteration, "steps": trainer.steps})
    print(f"trained {trainer.iteration} iterations ({trainer.steps} steps) -> {ckpt}")
    return 0


def cmd_play(args) -> int:
    cfg = _resolve_config(args)
    if args.command is not None:
        cfg = cfg.replace("play", command=args.command)
    if args.duration is not None:
        cfg = cfg.replace("play", duration=args.duration)
    policy, ckpt = _policy(args, cfg)
    out = _out_dir(args)
    spec = cfg.play
    res = P.run_trials(policy, [P.TrialSpec(P.trial_seed(cfg.seed, 0), spec.command, spec.duration,
                                            spec.init_noise)], cfg.env, cfg.model)[0]
    write_jsonl(out / "telemetry.jsonl", res.records)
    rows = []
    if res.steps >= 2:
        row = summarize_log(res.log(), cfg.model, cfg.env.actuator, window=spec.window)
        row["fell"] = res.fell
        row["steps"] = res.steps
        rows.append(row)
    write_csv(out / "summary.csv", rows, SUMMARY_COLUMNS + ["fell", "steps"])
    write_manifest(out, args, cfg, ckpt)
    print(f"{res.steps} steps, fell={res.fell} -> {out}")
    return 0


def cmd_sweep_velocity(args) -> int:
    cfg = _resolve_config(args)
    policy, ckpt = _policy(args, cfg)
    out = _out_dir(args)
    rep = P.run_velocity_sweep(policy, cfg.velocity, cfg.env, cfg.model, cfg.seed)
    names = [f"v{_tag(r['command'])}_rep{r['repetition']}" for r in rep.trials]
    _write_trials(out, names, rep.results)
    write_csv(out / "trials.csv", rep.trials, P.VELOCITY_TRIAL_COLUMNS)
    write_csv(out / "summary.csv", rep.summary, P.VELOCITY_SUMMARY_COLUMNS)
    write_manifest(out, args, cfg, ckpt)
    print(csv_text(rep.summary, P.VELOCITY_SUMMARY_COLUMNS), end="")
    return 0


def cmd_max_velocity(args) -> int:
    cfg = _resolve_config(args)
    policy, ckpt = _policy(args, cfg)
    out = _out_dir(args)
    res = P.find_max_velocity(policy, cfg.velocity, cfg.env, cfg.model, cfg.seed)
    write_csv(out / "trials.csv", res.trials, P.VELOCITY_TRIAL_COLUMNS)
    write_csv(out / "summary.csv", [res.row()], P.MAX_VELOCITY_COLUMNS)
    write_manifest(out, args, cfg, ckpt)
    print(csv_text([res.row()], P.MAX_VELOCITY_COLUMNS), end="")
    return 0


def cmd_push_sweep(args) -> int:
    cfg = _resolve_config(args)
    policy, ckpt = _policy(args, cfg)
    out = _out_dir(args)
    rep = P.run_push_sweep(policy, cfg.push, cfg.env, cfg.model, cfg.seed)
    names = [f"a{int(r['angle']):03d}_f{_tag(r['force'])}_rep{r['repetition']}" for r in rep.trials]
    _write_trials(out, names, rep.results)
    write_csv(out / "trials.csv", rep.trials, P.PUSH_TRIAL_COLUMNS)
    write_csv(out / "summary.csv", rep.rows, P.PUSH_COLUMNS)
    write_manifest(out, args, cfg, ckpt)
    print(csv_text(rep.rows, P.PUSH_COLUMNS), end="")
    return 0


def cmd_slip(args) -> int:
    cfg = _resolve_config(args)
    policy, ckpt = _policy(args, cfg)
    out = _out_dir(args)
    rep = P.run_slip_test(policy, cfg.slip, cfg.env, cfg.model, cfg.seed)
    n = len(rep.rows)
    names = [f"slip_{k:02d}" for k in range(n)] + [f"baseline_{k:02d}" for k in range(n)]
    _write_trials(out, names, rep.results)
    write_csv(out / "trials.csv", rep.rows, P.SLIP_COLUMNS)
    write_csv(out / "summary.csv", [rep.summary], P.SLIP_SUMMARY_COLUMNS)
    write_manifest(out, args, cfg, ckpt)
    print(csv_text([rep.summary], P.SLIP_SUMMARY_COLUMNS), end="")
    return 0


def cmd_jump_eval(args) -> int:
    cfg = _resolve_config(args)
    policy, ckpt = _policy(args, cfg)
    out = _out_dir(args)
    stats, res = P.run_jump_eval(policy, cfg.jump, cfg.env, cfg.model, cfg.seed)
    write_jsonl(out / "telemetry.jsonl", res.records)
    row = {**stats.row(), "fell": res.fell, "fall_time": res.fall_time}
    write_csv(out / "summary.csv", [row], P.JUMP_COLUMNS)
    write_manifest(out, args, cfg, ckpt)
    print(csv_text([row], P.JUMP_COLUMNS), end="")
    return 0


def cmd_metrics(args) -> int:
    cfg = _resolve_config(args)
    if not args.log:
        raise ConfigError("metrics needs --log")
    path = Path(args.log)
    if not path.exists():
        raise MetricsInputError(f"log not found: {path}")
    row = summarize_log(load_log(path), cfg.model, cfg.env.actuator, window=cfg.play.window)
    text = csv_text([row], SUMMARY_COLUMNS)
    out = _out_dir(args)
    (out / "summary.csv").write_text(text)
    write_manifest(out, args, cfg, extra={"log": {"path": str(path), "sha256": file_sha256(path)}})
    print(text, end="")
    return 0


COMMANDS = {
    "train": cmd_train,
    "play": cmd_play,
    "sweep-velocity": cmd_sweep_velocity,
    "max-velocity": cmd_max_velocity,
    "push-sweep": cmd_push_sweep,
    "slip": cmd_slip,
    "jump-eval": cmd_jump_eval,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config or a run manifest.json")
    common.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
    common.add_argument("--out", help="output directory (default $BIPEDLAB_OUT/<command> or runs/<command>)")
    common.add_argument("--checkpoint", help="policy checkpoint for evaluation commands")
    common.add_argument("--force", action="store_true", help="accept a checkpoint trained under other constraints")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bipedlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", metavar="COMMAND", required=True)
    p = sub.add_parser("train", parents=[common], help="train a policy")
    p.add_argument("--iterations", type=int, help="override the number of PPO iterations")
    p = sub.add_parser("play", parents=[common], help="roll out a checkpoint once and log telemetry")
    p.add_argument("--command", type=float, help="forward velocity command, m/s")
    p.add_argument("--duration", type=float, help="rollout length, s")
    sub.add_parser("sweep-velocity", parents=[common], help="steady-state error over the command grid")
    sub.add_parser("max-velocity", parents=[common], help="largest forward/backward command without falling")
    sub.add_parser("push-sweep", parents=[common], help="maximum survived push impulse per direction")
    sub.add_parser("slip", parents=[common], help="survival after a friction drop")
    sub.add_parser("jump-eval", parents=[common], help="count consecutive jumps")
    p = sub.add_parser("metrics", parents=[common], help="summarize a telemetry log")
    p.add_argument("--log", help="telemetry JSONL")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = os.environ.get("BIPEDLAB_THREADS")
    if threads:
        try:
            import numba

            numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            print(f"bipedlab: error: BIPEDLAB_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return 2
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, CheckpointError, MetricsInputError, DynamicsInputError, TrainingError, OSError) as exc:
        print(f"bipedlab {args.cmd}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
