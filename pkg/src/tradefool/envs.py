"""The two trading MDPs.

BasicStockEnv: at most one share, actions wait/buy/close, rewards in percent
of entry price minus commission, 10-bar window of relative price features.

ManagedRiskEnv: cash + asset portfolio, 181-way action table built from the
cartesian product of side x trade-size x stop-loss x take-profit (hold at
index 0), bracket exits checked against bar low/high, Sharpe-ratio reward
over the episode's net-worth returns, 20-bar window of indicator features.

Both environments terminate on a step-count cap or data end only, never on
the agent's actions, and serve observations through an override hook so an
attack harness can substitute past window tuples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market_data import Bar, FeatureSeries, build_feature_series

WAIT, BUY, CLOSE = 0, 1, 2


class EnvError(ValueError):
    pass


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    info: dict


@dataclass(frozen=True)
class ManagedRiskAction:
    side: str  # "hold" | "buy" | "sell"
    fraction: float = 0.0
    stop: float = 0.0
    take: float = 0.0


@dataclass
class Portfolio:
    cash: float
    asset: float
    trade_log: list = field(default_factory=list)


@dataclass
class Order:
    """An executed entry with an attached stop/take exit bracket."""

    side: str
    entry_price: float
    quantity: float
    stop: float
    take: float


def net_worth(portfolio: Portfolio, price: float) -> float:
    """Cash plus asset holdings marked at ``price``."""
    if price <= 0:
        raise EnvError(f"price must be > 0, got {price}")
    return float(portfolio.cash + portfolio.asset * price)


def sharpe_reward(returns, risk_free: float = 0.0, offset: float = 1e-9,
                  window: int | None = None) -> float:
    """(mean(R - risk_free) + offset) / (population std(R) + offset).

    Empty history yields 0; a flat history yields offset/offset = 1.
    """
    r = np.asarray(returns, dtype=np.float64)
    if window is not None:
        r = r[-window:]
    if r.size == 0:
        return 0.0
    return float((np.mean(r - risk_free) + offset) / (np.std(r) + offset))


SIZE_FRACTION_GUARD = 1e-3  # keeps the largest trade at 99.9%, never 100%


def build_action_table(stops, takes, size_count: int) -> list[ManagedRiskAction]:
    """HOLD at index 0, then side-major / size / stop / take enumeration.

    Fractions are k/size_count scaled by (1 - guard), reproducing the
    33.3% / 66.6% / 99.9% pattern for size_count=3. Total length is
    2 * size_count * len(stops) * len(takes) + 1.
    """
    stops = list(stops)
    takes = list(takes)
    if not stops or not takes:
        raise EnvError("stop and take lists must be non-empty")
    if size_count < 1:
        raise EnvError("size_count must be >= 1")
    table = [ManagedRiskAction(side="hold")]
    for side in ("buy", "sell"):
        for k in range(1, size_count + 1):
            fraction = k / size_count * (1.0 - SIZE_FRACTION_GUARD)
            for stop in stops:
                for take in takes:
                    table.append(
                        ManagedRiskAction(side=side, fraction=fraction, stop=stop, take=take)
                    )
    return table


def _pick_start(rng_or_start, min_start: int, max_start: int) -> int:
    if max_start < min_start:
        raise EnvError("bar series too short for one episode step")
    if isinstance(rng_or_start, (int, np.integer)):
        start = int(rng_or_start)
        if not min_start <= start <= max_start:
            raise EnvError(f"start {start} outside [{min_start}, {max_start}]")
        return start
    return int(rng_or_start.integers(min_start, max_start + 1))


class BasicStockEnv:
    """Single-share long-only env over relative bar features.

    Observation: window of 10 (rel_high, rel_low, rel_close) tuples, oldest
    first, then the position flag and the open position's unrealized
    profit/loss as a fraction of the entry price (0 while flat), keeping all
    observation channels on comparable scales. Rewards are in percent of the
    entry price. Actions: 0 wait, 1 buy, 2 close.
    """

    n_actions = 3
    action_types = None  # every action is its own type

    def __init__(self, bars: list[Bar], window: int = 10, commission_pct: float = 0.1,
                 episode_cap: int = 250):
        if window < 1:
            raise EnvError("window must be >= 1")
        self.bars = bars
        self.features: FeatureSeries = build_feature_series(bars, "relative")
        self.window = window
        self.commission_pct = float(commission_pct)
        self.episode_cap = int(episode_cap)
        self.closes = np.array([b.close for b in bars])
        self._min_start = window - 1
        self._max_start = len(bars) - 2
        self.cursor = -1
        self._done = True

    @property
    def tuple_dim(self) -> int:
        return 3

    @property
    def window_length(self) -> int:
        return self.window

    @property
    def observation_dim(self) -> int:
        return self.window * 3 + 2

    @property
    def recent_tuple_slice(self) -> slice:
        return slice((self.window - 1) * 3, self.window * 3)

    def feature_tuple(self, index: int) -> np.ndarray:
        return self.features.tuple_at(index)

    def reset(self, rng_or_start) -> np.ndarray:
        self.cursor = _pick_start(rng_or_start, self._min_start, self._max_start)
        self.steps = 0
        self.holding = 0
        self.entry_price = 0.0
        self.trade_log: list[dict] = []
        self._done = False
        return self.observation()

    def observation(self, overrides: dict[int, np.ndarray] | None = None) -> np.ndarray:
        obs = np.empty(self.observation_dim)
        lo = self.cursor - self.window + 1
        for k in range(self.window):
            idx = lo + k
            tup = self.features.values[idx]
            if overrides and idx in overrides:
                tup = overrides[idx]
            obs[k * 3:(k + 1) * 3] = tup
        obs[-2] = self.holding
        close = self.closes[self.cursor]
        obs[-1] = (close - self.entry_price) / self.entry_price if self.holding else 0.0
        return obs

    def step(self, action: int) -> StepResult:
        if self._done:
            raise EnvError("step() after terminal; call reset()")
        if not 0 <= action < self.n_actions:
            raise EnvError(f"action {action} out of range")
        price = float(self.closes[self.cursor])
        reward = 0.0
        if action == BUY and not self.holding:
            self.holding = 1
            self.entry_price = price
            reward = -self.commission_pct
            self.trade_log.append({"step": self.steps, "kind": "buy", "price": price})
        elif action == CLOSE and self.holding:
            reward = 100.0 * (price - self.entry_price) / self.entry_price - self.commission_pct
            self.trade_log.append(
                {"step": self.steps, "kind": "close", "price": price,
                 "entry_price": self.entry_price}
            )
            self.holding = 0
            self.entry_price = 0.0
        self.steps += 1
        self.cursor += 1
        terminal = self.steps > self.episode_cap or self.cursor >= len(self.bars) - 1
        self._done = terminal
        return StepResult(self.observation(), reward, terminal, {"position": self.holding})


class ManagedRiskEnv:
    """Portfolio env over (log_return, MACD, RSI) windows with bracket exits.

    Buy converts a fraction of cash into asset at the bar close and attaches
    a stop/take exit; sell mirrors it (asset into cash, bracket re-enters).
    Brackets are checked against each new bar's low/high, stop before take.
    Reward is the Sharpe ratio of the episode's per-step net-worth returns.
    """

    def __init__(self, bars: list[Bar], window: int = 20, episode_cap: int = 250,
                 stops=(0.02, 0.04, 0.06), takes=(0.01, 0.02, 0.03), size_count: int = 10,
                 cash: float = 10_000.0, asset: float = 10.0,
                 risk_free: float = 0.0, sharpe_offset: float = 1e-9,
                 commission_pct: float = 0.0):
        if window < 1:
            raise EnvError("window must be >= 1")
        self.bars = bars
        self.features = build_feature_series(bars, "indicator")
        self.window = window
        self.episode_cap = int(episode_cap)
        self.action_table = build_action_table(stops, takes, size_count)
        self.action_types = [a.side for a in self.action_table]
        self.initial_cash = float(cash)
        self.initial_asset = float(asset)
        self.risk_free = float(risk_free)
        self.sharpe_offset = float(sharpe_offset)
        self.fee = float(commission_pct) / 100.0
        self.closes = np.array([b.close for b in bars])
        self._min_start = self.features.warmup_length + window - 1
        self._max_start = len(bars) - 2
        self.cursor = -1
        self._done = True

    @property
    def n_actions(self) -> int:
        return len(self.action_table)

    @property
    def tuple_dim(self) -> int:
        return 3

    @property
    def window_length(self) -> int:
        return self.window

    @property
    def observation_dim(self) -> int:
        return self.window * 3

    @property
    def recent_tuple_slice(self) -> slice:
        return slice((self.window - 1) * 3, self.window * 3)

    def feature_tuple(self, index: int) -> np.ndarray:
        return self.features.tuple_at(index)

    def reset(self, rng_or_start) -> np.ndarray:
        self.cursor = _pick_start(rng_or_start, self._min_start, self._max_start)
        self.steps = 0
        self.portfolio = Portfolio(cash=self.initial_cash, asset=self.initial_asset)
        self.open_orders: list[Order] = []
        self.returns: list[float] = []
        self._prev_net_worth = net_worth(self.portfolio, self.closes[self.cursor])
        self._done = False
        return self.observation()

    def observation(self, overrides: dict[int, np.ndarray] | None = None) -> np.ndarray:
        obs = np.empty(self.observation_dim)
        lo = self.cursor - self.window + 1
        for k in range(self.window):
            idx = lo + k
            tup = self.features.values[idx]
            if overrides and idx in overrides:
                tup = overrides[idx]
            obs[k * 3:(k + 1) * 3] = tup
        return obs

    def _execute(self, action: ManagedRiskAction, price: float) -> dict | None:
        pf = self.portfolio
        if action.side == "buy" and pf.cash > 0.0:
            spend = pf.cash * action.fraction
            quantity = spend * (1.0 - self.fee) / price
            pf.cash -= spend
            pf.asset += quantity
        elif action.side == "sell" and pf.asset > 0.0:
            quantity = pf.asset * action.fraction
            pf.asset -= quantity
            pf.cash += quantity * price * (1.0 - self.fee)
        else:
            return None
        self.open_orders.append(
            Order(side=action.side, entry_price=price, quantity=quantity,
                  stop=action.stop, take=action.take)
        )
        summary = {"step": self.steps, "side": action.side, "price": price,
                   "quantity": quantity, "stop": action.stop, "take": action.take}
        pf.trade_log.append(summary)
        return summary

    def _fill_brackets(self, bar: Bar) -> None:
        pf = self.portfolio
        remaining: list[Order] = []
        for order in self.open_orders:
            if order.side == "buy":
                stop_price = order.entry_price * (1.0 - order.stop)
                take_price = order.entry_price * (1.0 + order.take)
                fill = stop_price if bar.low <= stop_price else (
                    take_price if bar.high >= take_price else None)
                if fill is None:
                    remaining.append(order)
                    continue
                quantity = min(order.quantity, pf.asset)
                pf.asset -= quantity
                pf.cash += quantity * fill * (1.0 - self.fee)
                pf.trade_log.append({"step": self.steps, "side": "bracket_sell",
                                     "price": fill, "quantity": quantity})
            else:
                stop_price = order.entry_price * (1.0 + order.stop)
                take_price = order.entry_price * (1.0 - order.take)
                fill = stop_price if bar.high >= stop_price else (
                    take_price if bar.low <= take_price else None)
                if fill is None:
                    remaining.append(order)
                    continue
                spend = min(order.quantity * fill, pf.cash)
                pf.cash -= spend
                pf.asset += spend * (1.0 - self.fee) / fill
                pf.trade_log.append({"step": self.steps, "side": "bracket_buy",
                                     "price": fill, "quantity": spend / fill})
        self.open_orders = remaining

    def step(self, action: int) -> StepResult:
        if self._done:
            raise EnvError("step() after terminal; call reset()")
        if not 0 <= action < self.n_actions:
            raise EnvError(f"action {action} out of range")
        executed = self._execute(self.action_table[action], float(self.closes[self.cursor]))
        self.steps += 1
        self.cursor += 1
        self._fill_brackets(self.bars[self.cursor])
        worth = net_worth(self.portfolio, self.closes[self.cursor])
        self.returns.append(float(worth / self._prev_net_worth - 1.0))
        self._prev_net_worth = worth
        reward = sharpe_reward(self.returns, self.risk_free, self.sharpe_offset)
        terminal = self.steps > self.episode_cap or self.cursor >= len(self.bars) - 1
        self._done = terminal
        info = {"net_worth": worth, "executed": executed}
        return StepResult(self.observation(), reward, terminal, info)


def make_env(kind: str, bars: list[Bar], **kwargs):
    if kind == "basic":
        return BasicStockEnv(bars, **kwargs)
    if kind == "managed":
        return ManagedRiskEnv(bars, **kwargs)
    raise EnvError(f"unknown env kind {kind!r}")
