"""Control and attacked evaluation runs, attack bookkeeping, and reports.

Per attacked timestep, exactly one of three things happens and is ledgered:
  ncn      -- a previously persisted perturbation already flips the greedy
              action, so no new attempt is made ("no change needed");
  skipped  -- the per-observation chance gate did not fire;
  attempt  -- the configured attack ran; its outcome is one of
              success / partial / non_target / failure.
Only success (and partial success in typed targeted mode) persist their
perturbed tuple into the sliding window for future observations; on every
other outcome the agent executes the greedy action of the served
observation. Delay attacks apply unconditionally and carry no taxonomy.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import (
    FAILURE,
    NON_TARGET,
    PARTIAL,
    SUCCESS,
    AttackConfig,
    delay_attack,
    least_q_target,
    qualifies_for_persistence,
    run_perturbation_attack,
)
from .qnet import QNetwork, forward


class HarnessError(RuntimeError):
    pass


@dataclass
class LedgerRow:
    t: int
    outcome: str  # success|partial|non_target|failure|ncn|skipped|delay
    action: int  # a: greedy action on the served observation
    induced: int | None  # a': action induced by the attack, when one ran
    eps: float | None
    l2: float | None
    orig_tuple: np.ndarray
    pert_tuple: np.ndarray | None


@dataclass
class AttackLedger:
    env_id: str
    seed: int
    config: AttackConfig | None
    rows: list[LedgerRow] = field(default_factory=list)

    def _count(self, *outcomes) -> int:
        return sum(1 for r in self.rows if r.outcome in outcomes)

    @property
    def eligible(self) -> int:
        return len(self.rows)

    @property
    def attempts(self) -> int:
        return self._count(SUCCESS, PARTIAL, NON_TARGET, FAILURE)

    @property
    def successes(self) -> int:
        return self._count(SUCCESS)

    @property
    def partial(self) -> int:
        return self._count(PARTIAL)

    @property
    def non_target(self) -> int:
        return self._count(NON_TARGET)

    @property
    def failures(self) -> int:
        return self._count(FAILURE)

    @property
    def ncn(self) -> int:
        return self._count("ncn")

    @property
    def skipped(self) -> int:
        return self._count("skipped")

    def counters(self) -> dict:
        return {
            "eligible": self.eligible,
            "attempts": self.attempts,
            "successes": self.successes,
            "failures": self.failures,
            "partial": self.partial,
            "non_target": self.non_target,
            "ncn": self.ncn,
            "skipped": self.skipped,
        }


@dataclass
class RunRecord:
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    cum_rewards: list[float] = field(default_factory=list)
    net_worths: list[float] | None = None

    @property
    def total_reward(self) -> float:
        return self.cum_rewards[-1] if self.cum_rewards else 0.0

    @property
    def final_net_worth(self) -> float | None:
        return self.net_worths[-1] if self.net_worths else None

    def __len__(self) -> int:
        return len(self.rewards)


def _greedy(net: QNetwork, obs) -> int:
    return int(np.argmax(forward(net, obs)))


def _env_id(env) -> str:
    return type(env).__name__


def run_control(net: QNetwork, env, seed: int) -> RunRecord:
    """One greedy episode with no interference."""
    record, _ = _run_episode(net, env, seed, None)
    return record


def run_attacked(net: QNetwork, env, config: AttackConfig, seed: int):
    """One greedy episode under the configured observation-channel attack.

    The episode (env start) and the chance gate derive from ``seed``; an
    explicit ``config.seed`` overrides the gate stream only, so the same
    episode can be replayed under different attack randomness.
    """
    config.validate()
    return _run_episode(net, env, seed, config)


def _run_episode(net, env, seed, config):
    env_stream, gate_stream = np.random.SeedSequence(seed).spawn(2)
    env.reset(np.random.default_rng(env_stream))
    if config is not None and config.seed is not None:
        gate_stream = np.random.SeedSequence(config.seed)
    gate_rng = np.random.default_rng(gate_stream)

    record = RunRecord()
    ledger = AttackLedger(env_id=_env_id(env), seed=seed, config=config)
    overrides: dict[int, np.ndarray] = {}
    window = env.window_length
    action_types = env.action_types
    t = 0
    cum = 0.0
    while True:
        cursor = env.cursor
        if overrides:
            overrides = {i: v for i, v in overrides.items() if i > cursor - window}
        if config is None:
            action = _greedy(net, env.observation())
        elif config.method == "delay":
            previous = env.feature_tuple(cursor - 1) if t > 0 else None
            served = delay_attack(env.observation(), env.recent_tuple_slice, previous)
            action = _greedy(net, served)
            ledger.rows.append(LedgerRow(
                t=t, outcome="delay", action=_greedy(net, env.observation()),
                induced=action, eps=None, l2=None,
                orig_tuple=env.feature_tuple(cursor).copy(),
                pert_tuple=None if previous is None else np.asarray(previous, float).copy()))
        else:
            gate = gate_rng.random()  # one draw per eligible timestep, unconditionally
            served = env.observation(overrides if overrides else None)
            served_action = _greedy(net, served)
            ncn = bool(overrides) and served_action != _greedy(net, env.observation())
            orig_tuple = env.feature_tuple(cursor).copy()
            if ncn:
                action = served_action
                ledger.rows.append(LedgerRow(t, "ncn", served_action, None, None, None,
                                             orig_tuple, None))
            elif gate >= config.chance:
                action = served_action
                ledger.rows.append(LedgerRow(t, "skipped", served_action, None, None, None,
                                             orig_tuple, None))
            else:
                target = least_q_target(net, served) if config.mode == "targeted" else None
                result = run_perturbation_attack(
                    net, served, config, env.recent_tuple_slice, target, action_types)
                if qualifies_for_persistence(result.outcome):
                    overrides[cursor] = result.perturbed.copy()
                    action = result.induced_action
                else:
                    action = served_action
                ledger.rows.append(LedgerRow(
                    t, result.outcome, served_action, result.induced_action,
                    result.final_eps, result.l2, orig_tuple,
                    result.perturbed.copy() if result.outcome != FAILURE else None))
        step = env.step(action)
        cum += step.reward
        record.actions.append(action)
        record.rewards.append(step.reward)
        record.cum_rewards.append(cum)
        worth = step.info.get("net_worth")
        if worth is not None:
            if record.net_worths is None:
                record.net_worths = []
            record.net_worths.append(worth)
        t += 1
        if step.terminal:
            break
    return record, ledger


def reward_difference(control: RunRecord, attacked: RunRecord) -> np.ndarray:
    """Control cumulative reward minus attacked cumulative reward, per step."""
    if len(control) != len(attacked):
        raise HarnessError(f"record lengths differ: {len(control)} vs {len(attacked)}")
    return np.asarray(control.cum_rewards) - np.asarray(attacked.cum_rewards)


def networth_difference(control: RunRecord, attacked: RunRecord) -> np.ndarray:
    """Control net-worth minus attacked net-worth, per step (managed env only)."""
    if control.net_worths is None or attacked.net_worths is None:
        raise HarnessError("net-worth differences need runs from an env with net-worth")
    if len(control.net_worths) != len(attacked.net_worths):
        raise HarnessError("record lengths differ")
    return np.asarray(control.net_worths) - np.asarray(attacked.net_worths)


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def write_ledger_csv(ledger: AttackLedger, path, tuple_dim: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        header = ["t", "outcome", "a", "a_prime", "eps", "l2"]
        header += [f"orig_{i}" for i in range(tuple_dim)]
        header += [f"pert_{i}" for i in range(tuple_dim)]
        writer.writerow(header)
        for row in ledger.rows:
            out = [row.t, row.outcome, row.action,
                   "" if row.induced is None else row.induced,
                   _fmt(row.eps), _fmt(row.l2)]
            out += [repr(float(v)) for v in row.orig_tuple]
            out += [""] * tuple_dim if row.pert_tuple is None else \
                [repr(float(v)) for v in row.pert_tuple]
            writer.writerow(out)


def write_record_csv(record: RunRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "action", "reward", "cum_reward", "net_worth"])
        for i in range(len(record)):
            worth = record.net_worths[i] if record.net_worths else None
            writer.writerow([i, record.actions[i], _fmt(record.rewards[i]),
                             _fmt(record.cum_rewards[i]), _fmt(worth)])


def summary_dict(ledger: AttackLedger, record: RunRecord,
                 control: RunRecord | None = None) -> dict:
    summary = dict(ledger.counters())
    summary["total_reward"] = record.total_reward
    summary["final_networth"] = record.final_net_worth
    if control is not None:
        summary["control_total_reward"] = control.total_reward
        summary["control_final_networth"] = control.final_net_worth
    return summary


def export_report(ledger: AttackLedger, record: RunRecord, out_dir,
                  control: RunRecord | None = None, tuple_dim: int = 3) -> None:
    """Write ledger.csv, record.csv, summary.json, and (when a control run is
    given) the plot-ready curves.csv of per-timestep differences.
    Byte-deterministic for identical inputs."""
    os.makedirs(out_dir, exist_ok=True)
    write_ledger_csv(ledger, os.path.join(out_dir, "ledger.csv"), tuple_dim)
    write_record_csv(record, os.path.join(out_dir, "record.csv"))
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as handle:
        json.dump(summary_dict(ledger, record, control), handle, sort_keys=True, indent=1)
    if control is not None:
        diff = reward_difference(control, attacked=record)
        has_worth = control.net_worths is not None and record.net_worths is not None
        worth_diff = networth_difference(control, record) if has_worth else None
        with open(os.path.join(out_dir, "curves.csv"), "w", newline="",
                  encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["t", "control_cum_reward", "attacked_cum_reward", "reward_diff",
                             "control_networth", "attacked_networth", "networth_diff"])
            for i in range(len(record)):
                row = [i, _fmt(control.cum_rewards[i]), _fmt(record.cum_rewards[i]),
                       _fmt(diff[i])]
                if has_worth:
                    row += [_fmt(control.net_worths[i]), _fmt(record.net_worths[i]),
                            _fmt(worth_diff[i])]
                else:
                    row += ["", "", ""]
                writer.writerow(row)


def max_sweep_workers() -> int:
    value = os.environ.get("TRADEFOOL_THREADS", "").strip()
    if value:
        try:
            workers = int(value)
        except ValueError as exc:
            raise HarnessError(f"TRADEFOOL_THREADS={value!r} is not an integer") from exc
        if workers < 1:
            raise HarnessError("TRADEFOOL_THREADS must be >= 1")
        return workers
    return min(8, os.cpu_count() or 1)


def run_sweep(net: QNetwork, env_factory, jobs: list[tuple[str, AttackConfig | None, int]],
              out_dir) -> dict[str, dict]:
    """Run (name, config, seed) jobs in parallel and export one report each.

    config=None runs a control. Attacked jobs are paired with the control of
    the same seed for difference curves, so each seed's control is run first.
    Returns {job name: summary dict} in sorted-name order.
    """
    os.makedirs(out_dir, exist_ok=True)
    controls: dict[int, RunRecord] = {}
    control_jobs = [(name, seed) for name, config, seed in jobs if config is None]
    attack_jobs = [(name, config, seed) for name, config, seed in jobs if config is not None]

    def _control(args):
        name, seed = args
        record, ledger = _run_episode(net, env_factory(), seed, None)
        return name, seed, record, ledger

    def _attacked(args):
        name, config, seed = args
        record, ledger = _run_episode(net, env_factory(), seed, config)
        return name, seed, record, ledger

    summaries: dict[str, dict] = {}
    tuple_dim = env_factory().tuple_dim
    with ThreadPoolExecutor(max_workers=max_sweep_workers()) as pool:
        for name, seed, record, ledger in pool.map(_control, control_jobs):
            controls[seed] = record
            export_report(ledger, record, os.path.join(out_dir, name), tuple_dim=tuple_dim)
            summaries[name] = summary_dict(ledger, record)
        for name, seed, record, ledger in pool.map(_attacked, attack_jobs):
            control = controls.get(seed)
            export_report(ledger, record, os.path.join(out_dir, name), control,
                          tuple_dim=tuple_dim)
            summaries[name] = summary_dict(ledger, record, control)
    return dict(sorted(summaries.items()))
