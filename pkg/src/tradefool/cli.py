"""Command-line entry point: synth, train, attack, report.

One JSON config file with ``data`` / ``env`` / ``trainer`` / ``attack``
blocks drives everything; the trainer and attack blocks may name a preset
and override individual fields. Every command appends a line to
``manifest.jsonl`` in the output directory (tool version, resolved
configuration, seeds, input-data digest) before running. Output files are
reproducible byte-for-byte from the manifest inputs. ``TRADEFOOL_THREADS``
caps the attack sweep's in-process parallelism.

Exit codes: 0 success, 1 user error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

from . import __version__
from .attacks import AttackConfig, preset as attack_preset
from .dqn import TrainerConfig, train
from .envs import EnvError, make_env
from .harness import HarnessError, max_sweep_workers, run_sweep
from .market_data import MarketDataError, load_csv, synthesize_bars, write_bars_csv
from .qnet import load_checkpoint, save_checkpoint


class UserError(Exception):
    """Bad flags, missing files, invalid configuration."""


TRAINER_PRESETS = {
    "basic": dict(
        total_timesteps=100_000, gamma=0.99, learning_rate=1e-4,
        buffer_capacity=100_000, learning_starts=1000, target_sync_every=1000,
        epsilon_initial=1.0, epsilon_final=0.02, epsilon_decay_fraction=0.1),
    "managed": dict(
        total_timesteps=25_000, gamma=0.9999, learning_rate=1e-5,
        buffer_capacity=1000, learning_starts=1000, target_sync_every=1000,
        epsilon_initial=0.9, epsilon_final=0.05,
        epsilon_decay_fraction=None, epsilon_decay_interval=200),
}

DEFAULT_ENVS = {
    "basic": dict(kind="basic", window=10, commission_pct=0.1, episode_cap=250),
    "managed": dict(kind="managed", window=20, episode_cap=250),
}


def trainer_config(block: dict) -> TrainerConfig:
    block = dict(block)
    name = block.pop("preset", None)
    fields = dict(TRAINER_PRESETS.get(name, {})) if name else {}
    if name and name not in TRAINER_PRESETS:
        raise UserError(f"unknown trainer preset {name!r}; have {sorted(TRAINER_PRESETS)}")
    fields.update(block)
    if "hidden_sizes" in fields:
        fields["hidden_sizes"] = tuple(fields["hidden_sizes"])
    try:
        config = TrainerConfig(**fields)
        config.validate()
    except Exception as exc:  # noqa: BLE001 - surfaced as user error
        raise UserError(f"bad trainer config: {exc}") from exc
    return config


def attack_config(block: dict) -> AttackConfig:
    block = dict(block)
    name = block.pop("preset", None)
    if "k_scale" in block:
        block["k_scale"] = tuple(block["k_scale"])
    try:
        if name:
            return attack_preset(name, **block)
        config = AttackConfig(**block)
        config.validate()
        return config
    except Exception as exc:  # noqa: BLE001
        raise UserError(f"bad attack config: {exc}") from exc


def build_env(env_block: dict, bars):
    block = dict(env_block)
    kind = block.pop("kind", None)
    if kind not in ("basic", "managed"):
        raise UserError(f"env kind must be 'basic' or 'managed', got {kind!r}")
    for key in ("stops", "takes"):
        if key in block:
            block[key] = tuple(block[key])
    try:
        return make_env(kind, bars, **block)
    except (TypeError, EnvError, MarketDataError) as exc:
        raise UserError(f"cannot build {kind} env: {exc}") from exc


def file_digest(path) -> str:
    hasher = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(65536), b""):
                hasher.update(chunk)
    except OSError as exc:
        raise UserError(f"cannot read {path}: {exc}") from exc
    return hasher.hexdigest()


def append_manifest(out_dir, entry: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    entry = {"tool_version": __version__, **entry}
    with open(os.path.join(out_dir, "manifest.jsonl"), "a", encoding="utf-8") as handle:
        handle.write(json.dumps(entry, sort_keys=True) + "\n")


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise UserError(f"cannot read config {path}: {exc}") from exc


def _load_bars(path):
    if path is None:
        raise UserError("no data file given (flag --data or config data.path)")
    try:
        return load_csv(path)
    except MarketDataError as exc:
        raise UserError(str(exc)) from exc


def cmd_synth(args) -> int:
    if args.out is None:
        raise UserError("synth needs --out FILE")
    try:
        bars = synthesize_bars(
            n_bars=args.bars, drift=args.drift, volatility=args.volatility,
            seed=args.seed, start_price=args.start_price, momentum=args.momentum,
            bar_seconds=args.bar_seconds)
    except MarketDataError as exc:
        raise UserError(str(exc)) from exc
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_bars_csv(bars, args.out)
    print(f"wrote {len(bars)} bars to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = load_config_file(args.config)
    data_path = args.data or config.get("data", {}).get("path")
    env_block = config.get("env") or DEFAULT_ENVS[args.preset or "basic"]
    trainer_block = dict(config.get("trainer", {}))
    if args.preset:
        trainer_block.setdefault("preset", args.preset)
    if not trainer_block:
        raise UserError("no trainer config (use --preset or a config trainer block)")
    tconfig = trainer_config(trainer_block)
    out_dir = args.out or "."
    digest = file_digest(data_path) if data_path else None
    append_manifest(out_dir, {
        "command": "train", "config_path": args.config,
        "config": {"env": env_block, "trainer": trainer_block},
        "seeds": [args.seed], "data": str(data_path), "data_digest": digest,
        "out": str(out_dir)})

    bars = _load_bars(data_path)
    env = build_env(env_block, bars)
    net, trace = train(env, tconfig, args.seed)
    meta = {"env": env_block, "data_digest": digest, "seed": args.seed,
            "trainer": dataclasses.asdict(tconfig)}
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    save_checkpoint(net, ckpt_path, meta)
    trace.write_csv(os.path.join(out_dir, "trace.csv"))
    mean_tail = (sum(trace.episode_rewards[-10:]) / max(1, len(trace.episode_rewards[-10:]))
                 if trace.episode_rewards else 0.0)
    print(f"trained {tconfig.total_timesteps} steps, {len(trace.episode_rewards)} episodes, "
          f"mean reward (last 10 episodes) {mean_tail:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _parse_float_list(text: str) -> list[float]:
    if not text.strip():
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UserError(f"bad list {text!r}: {exc}") from exc


def _parse_int_list(text: str) -> list[int]:
    if not text.strip():
        return []
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UserError(f"bad list {text!r}: {exc}") from exc


def cmd_attack(args) -> int:
    if args.checkpoint is None:
        raise UserError("attack needs --checkpoint")
    config_file = load_config_file(args.config)
    attack_block = dict(config_file.get("attack", {}))
    if args.preset:
        attack_block["preset"] = args.preset
    if args.mode:
        attack_block["mode"] = args.mode
    if not attack_block:
        raise UserError("no attack config (use --preset or a config attack block)")
    base = attack_config(attack_block)

    try:
        net, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise UserError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    data_path = args.data or config_file.get("data", {}).get("path")
    env_block = config_file.get("env") or meta.get("env")
    if not env_block:
        raise UserError("no env config in checkpoint meta or config file")
    bars = _load_bars(data_path)

    def env_factory():
        return build_env(env_block, bars)

    probe = env_factory()
    if probe.observation_dim != net.input_dim or probe.n_actions != net.n_actions:
        raise UserError(
            f"checkpoint ({net.input_dim} inputs, {net.n_actions} actions) does not match "
            f"env ({probe.observation_dim} inputs, {probe.n_actions} actions)")

    try:
        max_sweep_workers()
    except HarnessError as exc:
        raise UserError(str(exc)) from exc
    chances = _parse_float_list(args.chances) if args.chances is not None else [1.0]
    seeds = _parse_int_list(args.seeds) if args.seeds else [args.seed]
    out_dir = args.out or "."
    append_manifest(out_dir, {
        "command": "attack", "config_path": args.config,
        "config": {"attack": attack_block, "env": env_block},
        "chances": chances, "seeds": seeds, "data": str(data_path),
        "data_digest": file_digest(data_path),
        "checkpoint_digest": file_digest(args.checkpoint), "out": str(out_dir)})

    jobs: list[tuple[str, AttackConfig | None, int]] = []
    run_meta: dict[str, dict] = {}
    label = args.preset or base.method
    for seed in seeds:
        name = f"control-s{seed}"
        jobs.append((name, None, seed))
        run_meta[name] = {"method": "control", "mode": "", "chance": "", "seed": seed}
        if base.method == "delay":
            name = f"{label}-s{seed}"  # delay ignores the chance list
            jobs.append((name, base, seed))
            run_meta[name] = {"method": "delay", "mode": "", "chance": 1.0, "seed": seed}
        else:
            for chance in chances:
                name = f"{label}-{base.mode}-c{chance:g}-s{seed}"
                jobs.append((name, dataclasses.replace(base, chance=chance), seed))
                run_meta[name] = {"method": base.method, "mode": base.mode,
                                  "chance": chance, "seed": seed}
    runs_dir = os.path.join(out_dir, "runs")
    summaries = run_sweep(net, env_factory, jobs, runs_dir)
    for name, meta_row in run_meta.items():
        with open(os.path.join(runs_dir, name, "run.json"), "w", encoding="utf-8") as handle:
            json.dump(meta_row, handle, sort_keys=True)
    for name, summary in summaries.items():
        print(f"{name}: attempts={summary['attempts']} failures={summary['failures']} "
              f"ncn={summary['ncn']} total_reward={summary['total_reward']:.4f}")
    return 0


def cmd_report(args) -> int:
    runs_dir = args.run_dir
    if not os.path.isdir(runs_dir):
        raise UserError(f"no such run directory: {runs_dir}")
    if os.path.isdir(os.path.join(runs_dir, "runs")):
        runs_dir = os.path.join(runs_dir, "runs")
    rows = []
    for name in sorted(os.listdir(runs_dir)):
        run_dir = os.path.join(runs_dir, name)
        summary_path = os.path.join(run_dir, "summary.json")
        if not os.path.isfile(summary_path):
            continue
        try:
            with open(summary_path, encoding="utf-8") as handle:
                summary = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise UserError(f"corrupt run files in {run_dir}: {exc}") from exc
        meta_path = os.path.join(run_dir, "run.json")
        meta = {}
        if os.path.isfile(meta_path):
            with open(meta_path, encoding="utf-8") as handle:
                meta = json.load(handle)
        if meta.get("method") == "control":
            continue
        rows.append({
            "run": name,
            "method": meta.get("method", ""), "mode": meta.get("mode", ""),
            "chance": meta.get("chance", ""), "seed": meta.get("seed", ""),
            "eligible": summary.get("eligible", 0), "attempts": summary.get("attempts", 0),
            "failures": summary.get("failures", 0), "ncn": summary.get("ncn", 0),
            "partial": summary.get("partial", 0), "non_target": summary.get("non_target", 0),
            "successes": summary.get("successes", 0),
            "total_reward": summary.get("total_reward", ""),
            "final_networth": summary.get("final_networth", ""),
        })
    out_dir = args.out or args.run_dir
    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "summary_table.csv")
    fields = ["run", "method", "mode", "chance", "seed", "eligible", "attempts", "failures",
              "ncn", "partial", "non_target", "successes", "total_reward", "final_networth"]
    with open(table_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    print(f"{len(rows)} attack run(s) summarized in {table_path}")
    print("difference curves: per-run curves.csv files under", runs_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    # global flags work both before and after the subcommand; the subparser
    # copies use SUPPRESS so an absent flag never clobbers the global value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base seed")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (or file for synth)")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON config with data/env/trainer/attack blocks")
    parser = argparse.ArgumentParser(
        prog="tradefool",
        description="Train small DQN trading agents and evaluate observation-channel attacks")
    parser.add_argument("--seed", type=int, default=0, help="base seed")
    parser.add_argument("--out", help="output directory (or file for synth)")
    parser.add_argument("--config", help="JSON config with data/env/trainer/attack blocks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", parents=[common], help="generate a synthetic OHLCV CSV")
    p_synth.add_argument("--bars", type=int, default=10_000)
    p_synth.add_argument("--drift", type=float, default=0.0)
    p_synth.add_argument("--volatility", type=float, default=0.002)
    p_synth.add_argument("--momentum", type=float, default=0.0)
    p_synth.add_argument("--start-price", type=float, default=100.0)
    p_synth.add_argument("--bar-seconds", type=int, default=60)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", parents=[common], help="train a DQN agent")
    p_train.add_argument("--preset", choices=sorted(TRAINER_PRESETS))
    p_train.add_argument("--data", help="OHLCV CSV path")
    p_train.set_defaults(func=cmd_train)

    p_attack = sub.add_parser("attack", parents=[common], help="run control + attacked evaluations")
    p_attack.add_argument("--checkpoint")
    p_attack.add_argument("--data", help="OHLCV CSV path")
    p_attack.add_argument("--preset", help="attack preset name")
    p_attack.add_argument("--mode", choices=["non_targeted", "targeted"])
    p_attack.add_argument("--chances", help="comma list of attack probabilities")
    p_attack.add_argument("--seeds", help="comma list of run seeds")
    p_attack.set_defaults(func=cmd_attack)

    p_report = sub.add_parser("report", parents=[common], help="summarize a directory of runs")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - internal invariant violation
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
