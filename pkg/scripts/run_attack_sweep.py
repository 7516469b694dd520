#!/usr/bin/env python3
"""End-to-end demo: synthesize a market, train both agents, sweep every
attack preset over the standard chance grid, and print the summary tables.

Small budgets by default so the whole thing finishes in a few minutes; the
short-trained agent trades timidly, so expect sparse attack successes. Pass
--full for the acceptance-scale basic run (50k bars, 1e5 steps), whose agent
is strong enough for the scaled FGSM sweep to visibly collapse its reward.

Usage:
    python scripts/run_attack_sweep.py --out runs/demo [--full]
"""

import argparse
import os
import subprocess
import sys

HERE = os.path.dirname(os.path.abspath(__file__))


def cli(*argv):
    cmd = [sys.executable, "-m", "tradefool.cli", *map(str, argv)]
    print("+", " ".join(cmd[2:]))
    subprocess.run(cmd, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--full", action="store_true",
                        help="acceptance-scale basic training run")
    args = parser.parse_args()
    out = args.out
    os.makedirs(out, exist_ok=True)

    bars = 50_000 if args.full else 20_000
    steps = 100_000 if args.full else 60_000
    basic_csv = os.path.join(out, "basic_bars.csv")
    managed_csv = os.path.join(out, "managed_bars.csv")

    # mean-reverting minute bars for the basic agent, hourly bars for the
    # portfolio agent
    cli("synth", "--bars", bars, "--drift", 1e-4, "--volatility", 0.05,
        "--momentum", -0.5, "--seed", 11, "--out", basic_csv)
    cli("synth", "--bars", 12_000, "--drift", 2e-4, "--volatility", 0.01,
        "--momentum", -0.3, "--seed", 77, "--start-price", 1000,
        "--bar-seconds", 3600, "--out", managed_csv)

    basic_dir = os.path.join(out, "basic")
    with open(os.path.join(out, "basic_train.json"), "w") as handle:
        handle.write('{"trainer": {"preset": "basic", "total_timesteps": %d}}' % steps)
    cli("--config", os.path.join(out, "basic_train.json"), "--seed", args.seed,
        "--out", basic_dir, "train", "--preset", "basic", "--data", basic_csv)

    managed_dir = os.path.join(out, "managed")
    with open(os.path.join(out, "managed_train.json"), "w") as handle:
        handle.write('{"trainer": {"preset": "managed", "clip_rewards": true, '
                     '"hidden_sizes": [16, 16]}}')
    cli("--config", os.path.join(out, "managed_train.json"), "--seed", args.seed,
        "--out", managed_dir, "train", "--preset", "managed", "--data", managed_csv)

    chance_grid = "0.01,0.1,0.5,1.0"
    basic_ckpt = os.path.join(basic_dir, "checkpoint.json")
    cli("--out", basic_dir, "attack", "--checkpoint", basic_ckpt, "--data", basic_csv,
        "--preset", "delay", "--seeds", "0,1,2")
    for preset in ("basic-fgsm", "basic-cw"):
        for mode in ("non_targeted", "targeted"):
            cli("--out", basic_dir, "attack", "--checkpoint", basic_ckpt,
                "--data", basic_csv, "--preset", preset, "--mode", mode,
                "--chances", chance_grid, "--seeds", "0,1,2")
    # the stock ladder targets minute-bar magnitudes; rescale it to this
    # market's 5%-per-bar features via a config-file override
    scaled = os.path.join(out, "fgsm_scaled.json")
    with open(scaled, "w") as handle:
        handle.write('{"attack": {"preset": "basic-fgsm", '
                     '"eps_start": 0.005, "eps_end": 0.05}}')
    cli("--config", scaled, "--out", os.path.join(out, "basic_scaled"), "attack",
        "--checkpoint", basic_ckpt, "--data", basic_csv,
        "--chances", chance_grid, "--seeds", "0,1,2")

    managed_ckpt = os.path.join(managed_dir, "checkpoint.json")
    cli("--out", managed_dir, "attack", "--checkpoint", managed_ckpt,
        "--data", managed_csv, "--preset", "delay", "--seeds", "0,1,2")
    for preset in ("managed-fgsm", "managed-cw"):
        for mode in ("non_targeted", "targeted"):
            cli("--out", managed_dir, "attack", "--checkpoint", managed_ckpt,
                "--data", managed_csv, "--preset", preset, "--mode", mode,
                "--chances", "0.1,0.5,1.0", "--seeds", "0,1,2")

    cli("report", basic_dir)
    cli("report", os.path.join(out, "basic_scaled"))
    cli("report", managed_dir)
    print("\nsummaries:")
    print(" ", os.path.join(basic_dir, "summary_table.csv"))
    print(" ", os.path.join(out, "basic_scaled", "summary_table.csv"))
    print(" ", os.path.join(managed_dir, "summary_table.csv"))


if __name__ == "__main__":
    main()
