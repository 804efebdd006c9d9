"""Assembly of the window problems solved by the controller and the oracle.

Three problems share one variable layout.  Per slot the columns are, in
order: one output per generator, buy, sell, per-segment charge, per-segment
discharge, per-segment SoC share, aggregate SoC, the discharge-mode binary
``u`` and the buy-mode binary ``v``.  Columns are addressed through
``problem.col(slot, role)`` with absolute slot indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, InfeasibleError
from .model import BatteryParams, BatteryState, Plant, ScenarioDay, TimeGrid, segment_costs, time_aware_bounds
from .problem import BigMCoupling, MiqpProblem


@dataclass(frozen=True)
class ControllerConfig:
    rho1: float = 0.05
    rho2: float = 0.1
    epsilon: float = 0.001
    mu_x: float = 400.0
    mu_u: float = 1.0
    h1_len: int = 8
    h2_len: int = 2

    def __post_init__(self):
        if not 0 <= self.rho1 < 1 or not 0 <= self.rho2 < 1:
            raise ConfigError("controller: rho1 and rho2 must lie in [0, 1)")
        if self.epsilon < 0:
            raise ConfigError("controller.epsilon must be >= 0")
        if self.mu_x < 0 or self.mu_u < 0:
            raise ConfigError("controller: mu_x and mu_u must be >= 0")
        if not 1 <= self.h2_len <= self.h1_len:
            raise ConfigError("controller: 1 <= h2_len <= h1_len violated")


@dataclass(frozen=True)
class HorizonWindow:
    """Slots ``start .. start+length-1`` with the net inputs seen by a controller."""

    start: int
    length: int
    renewable: np.ndarray
    load: np.ndarray
    initial_state: BatteryState
    prev_gen: tuple[float, ...]

    def __post_init__(self):
        if self.length < 1:
            raise ConfigError("window length must be >= 1")
        r = np.asarray(self.renewable, dtype=float)
        ld = np.asarray(self.load, dtype=float)
        if r.size != self.length or ld.size != self.length:
            raise ConfigError("window series must match window length")
        object.__setattr__(self, "renewable", r)
        object.__setattr__(self, "load", ld)
        object.__setattr__(self, "prev_gen", tuple(float(g) for g in self.prev_gen))

    @property
    def slots(self) -> range:
        return range(self.start, self.start + self.length)

    @classmethod
    def forecast(cls, day: ScenarioDay, start: int, length: int, state: BatteryState, prev_gen) -> "HorizonWindow":
        """Forecast window, truncated at the end of the day."""
        stop = min(start + length, day.slots)
        return cls(
            start,
            stop - start,
            day.forecast_renewable[start:stop],
            day.forecast_load[start:stop],
            state,
            tuple(prev_gen),
        )


@dataclass(frozen=True)
class NominalReference:
    """Nominal trajectory handed to the ancillary controller (one row per slot)."""

    soc: np.ndarray
    buy: np.ndarray
    sell: np.ndarray
    gen: np.ndarray  # shape (slots, generators)


def per_slot_columns(n_gen: int, num_segments: int) -> int:
    return n_gen + 2 + 2 * num_segments + num_segments + 1 + 2


def slot_roles(n_gen: int, num_segments: int) -> list[str]:
    roles = [f"gen{j}" for j in range(n_gen)] + ["buy", "sell"]
    roles += [f"charge{i}" for i in range(num_segments)]
    roles += [f"discharge{i}" for i in range(num_segments)]
    roles += [f"seg{i}" for i in range(num_segments)]
    roles += ["soc", "u", "v"]
    return roles


@lru_cache(maxsize=64)
def _bounds_cached(battery: BatteryParams, time: TimeGrid):
    lo, hi = time_aware_bounds(battery, time)
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


@lru_cache(maxsize=64)
def _costs_cached(battery: BatteryParams):
    c = segment_costs(battery)
    c.setflags(write=False)
    return c


def soc_band(plant: Plant, rho1: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Time-aware SoC band, tightened by ``rho1`` (zero gives the original band)."""
    lo, hi = _bounds_cached(plant.battery, plant.time)
    return (1.0 + rho1) * lo, (1.0 - rho1) * hi


def _generation_band(plant: Plant, rho2: float):
    lo = np.array([(1.0 + rho2) * g.p_min for g in plant.generators])
    hi = np.array([(1.0 - rho2) * g.p_max for g in plant.generators])
    return lo, hi


class _Builder:
    """Collects triplets for one window problem."""

    def __init__(self, plant: Plant, window: HorizonWindow):
        self.plant = plant
        self.window = window
        self.G = plant.n_gen
        self.N = plant.battery.num_segments
        self.roles = slot_roles(self.G, self.N)
        self.width = len(self.roles)
        self.names: list[tuple[int, str]] = []
        for t in window.slots:
            self.names.extend((t, r) for r in self.roles)
        self.index = {name: k for k, name in enumerate(self.names)}
        self.extra = 0
        n = len(self.names)
        self.lb = np.zeros(n)
        self.ub = np.zeros(n)
        self.P = np.zeros(n)
        self.q = np.zeros(n)
        self.constant = 0.0
        self.eq_rows: list[tuple[list[int], list[float], float, str]] = []
        self.le_rows: list[tuple[list[int], list[float], float, str]] = []
        self.binaries: list[int] = []
        self.couplings: list[BigMCoupling] = []

    def c(self, t: int, role: str) -> int:
        return self.index[(t, role)]

    def add_column(self, t: int, role: str, lb: float, ub: float) -> int:
        k = len(self.names)
        self.names.append((t, role))
        self.index[(t, role)] = k
        self.lb = np.append(self.lb, lb)
        self.ub = np.append(self.ub, ub)
        self.P = np.append(self.P, 0.0)
        self.q = np.append(self.q, 0.0)
        return k

    def physics(
        self,
        soc_lo: np.ndarray,
        soc_hi: np.ndarray,
        gen_lo: np.ndarray,
        gen_hi: np.ndarray,
        renewable: np.ndarray,
        load: np.ndarray,
    ):
        """Balance, battery dynamics, mode couplings, ramping and bounds."""
        plant, w = self.plant, self.window
        bat, grid = plant.battery, plant.grid
        tau = plant.time.slot_hours
        gain, drain = bat.charge_gain(tau), bat.discharge_drain(tau)
        share = bat.segment_share
        G, N = self.G, self.N
        for k, t in enumerate(w.slots):
            if soc_lo[t] > soc_hi[t] + 1e-12:
                raise InfeasibleError(f"tightened SoC bounds cross at slot {t}", slot=t)
            gens = [self.c(t, f"gen{j}") for j in range(G)]
            ch = [self.c(t, f"charge{i}") for i in range(N)]
            dis = [self.c(t, f"discharge{i}") for i in range(N)]
            seg = [self.c(t, f"seg{i}") for i in range(N)]
            b, s, soc, u, v = (self.c(t, r) for r in ("buy", "sell", "soc", "u", "v"))

            self.lb[gens], self.ub[gens] = gen_lo, gen_hi
            self.ub[b], self.ub[s] = grid.buy_max_kw, grid.sell_max_kw
            self.ub[ch], self.ub[dis] = bat.charge_max_kw, bat.discharge_max_kw
            self.ub[seg] = share
            self.lb[soc], self.ub[soc] = soc_lo[t], soc_hi[t]
            self.ub[u] = self.ub[v] = 1.0
            self.binaries += [u, v]

            self.eq_rows.append(
                (
                    gens + [b, s] + dis + ch,
                    [1.0] * G + [1.0, -1.0] + [1.0] * N + [-1.0] * N,
                    (1.0 + grid.loss_factor) * load[k] - renewable[k],
                    f"balance[{t}]",
                )
            )
            for i in range(N):
                cols = [seg[i], ch[i], dis[i]]
                vals = [1.0, -gain, drain]
                rhs = 0.0
                if k == 0:
                    rhs = w.initial_state.segments[i]
                else:
                    cols.append(self.c(t - 1, f"seg{i}"))
                    vals.append(-1.0)
                self.eq_rows.append((cols, vals, rhs, f"segment[{t},{i}]"))
            self.eq_rows.append(([soc] + seg, [1.0] + [-1.0] * N, 0.0, f"soc[{t}]"))

            self.le_rows.append((ch + [u], [1.0] * N + [bat.charge_max_kw], bat.charge_max_kw, f"charge_mode[{t}]"))
            self.le_rows.append((dis + [u], [1.0] * N + [-bat.discharge_max_kw], 0.0, f"discharge_mode[{t}]"))
            self.le_rows.append(([b, v], [1.0, -grid.buy_max_kw], 0.0, f"buy_mode[{t}]"))
            self.le_rows.append(([s, v], [1.0, grid.sell_max_kw], grid.sell_max_kw, f"sell_mode[{t}]"))
            self.couplings += [
                BigMCoupling(u, tuple(ch), bat.charge_max_kw, 0),
                BigMCoupling(u, tuple(dis), bat.discharge_max_kw, 1),
                BigMCoupling(v, (b,), grid.buy_max_kw, 1),
                BigMCoupling(v, (s,), grid.sell_max_kw, 0),
            ]

            for j, gen in enumerate(plant.generators):
                g = gens[j]
                if k == 0:
                    prev = w.prev_gen[j]
                    self.le_rows.append(([g], [1.0], prev + gen.ramp_up, f"ramp_up[{t},{j}]"))
                    self.le_rows.append(([g], [-1.0], gen.ramp_down - prev, f"ramp_down[{t},{j}]"))
                else:
                    gp = self.c(t - 1, f"gen{j}")
                    self.le_rows.append(([g, gp], [1.0, -1.0], gen.ramp_up, f"ramp_up[{t},{j}]"))
                    self.le_rows.append(([gp, g], [1.0, -1.0], gen.ramp_down, f"ramp_down[{t},{j}]"))

    def operating_cost(self, epsilon: float):
        """Sum of per-slot operating costs, each power held for one slot."""
        plant = self.plant
        tau = plant.time.slot_hours
        costs = _costs_cached(plant.battery)
        tariff = plant.grid.tariff
        for t in self.window.slots:
            for j, gen in enumerate(plant.generators):
                g = self.c(t, f"gen{j}")
                self.P[g] += 2.0 * gen.a2 * tau
                self.q[g] += gen.a1 * tau
                self.constant += gen.a0 * tau
            self.q[self.c(t, "buy")] += tariff.buy[t] * tau
            self.q[self.c(t, "sell")] -= tariff.sell[t] * tau
            for i in range(self.N):
                self.q[self.c(t, f"discharge{i}")] += costs[i] * tau
                self.q[self.c(t, f"charge{i}")] += epsilon * costs[i] * tau

    def tracking_cost(self, ref: NominalReference, mu_x: float, mu_u: float):
        """Weighted squared deviation of SoC, trades and generation from ``ref``."""
        for k, t in enumerate(self.window.slots):
            terms = [(self.c(t, "soc"), ref.soc[k], mu_x), (self.c(t, "buy"), ref.buy[k], mu_u), (self.c(t, "sell"), ref.sell[k], mu_u)]
            terms += [(self.c(t, f"gen{j}"), ref.gen[k][j], mu_u) for j in range(self.G)]
            for col, target, weight in terms:
                self.P[col] += 2.0 * weight
                self.q[col] -= 2.0 * weight * target
                self.constant += weight * target * target

    def finish(self) -> MiqpProblem:
        n = len(self.names)

        def matrix(rows):
            if not rows:
                return sp.csr_matrix((0, n)), np.zeros(0), ()
            ri, ci, vi = [], [], []
            for r, (cols, vals, _, _) in enumerate(rows):
                ri.extend([r] * len(cols))
                ci.extend(cols)
                vi.extend(vals)
            A = sp.csr_matrix((vi, (ri, ci)), shape=(len(rows), n))
            rhs = np.array([row[2] for row in rows], dtype=float)
            return A, rhs, tuple(row[3] for row in rows)

        A_eq, b_eq, eq_names = matrix(self.eq_rows)
        A_le, b_le, le_names = matrix(self.le_rows)
        return MiqpProblem(
            P=sp.diags(self.P).tocsc(),
            q=self.q.copy(),
            A_eq=A_eq,
            b_eq=b_eq,
            A_ineq=A_le,
            b_ineq=b_le,
            lb=self.lb.copy(),
            ub=self.ub.copy(),
            binaries=tuple(self.binaries),
            couplings=tuple(self.couplings),
            names=tuple(self.names),
            constant=float(self.constant),
            eq_names=eq_names,
            ineq_names=le_names,
        )


def _check_window(window: HorizonWindow, plant: Plant):
    if window.start + window.length > plant.time.slots_per_day:
        raise ConfigError("window extends past the end of the day; truncate it first")
    if len(window.prev_gen) != plant.n_gen:
        raise ConfigError("prev_gen needs one entry per generator")
    if len(window.initial_state.segments) != plant.battery.num_segments:
        raise ConfigError("initial state has the wrong number of segments")


def build_nominal(window: HorizonWindow, plant: Plant, cfg: ControllerConfig) -> MiqpProblem:
    """Cost-minimising forecast problem with tightened SoC and generation limits."""
    _check_window(window, plant)
    soc_lo, soc_hi = soc_band(plant, cfg.rho1)
    gen_lo, gen_hi = _generation_band(plant, cfg.rho2)
    if np.any(gen_lo > gen_hi):
        raise InfeasibleError("tightened generator limits cross", stage="nominal")
    b = _Builder(plant, window)
    b.physics(soc_lo, soc_hi, gen_lo, gen_hi, window.renewable, window.load)
    b.operating_cost(cfg.epsilon)
    return b.finish()


def build_ancillary(
    window: HorizonWindow,
    reference: NominalReference,
    realized: tuple[float, float],
    plant: Plant,
    cfg: ControllerConfig,
    shortfall_penalty: float | None = None,
) -> MiqpProblem:
    """Tracking problem under the original limits.

    ``realized`` is ``(renewable_error, load_error)`` observed in the first
    slot; later slots keep their forecasts.  With ``shortfall_penalty`` set,
    two non-negative slack columns relax the first slot's balance at that
    price per kWh.
    """
    _check_window(window, plant)
    if len(reference.soc) < window.length:
        raise ConfigError("nominal reference shorter than the ancillary window")
    soc_lo, soc_hi = soc_band(plant, 0.0)
    gen_lo, gen_hi = _generation_band(plant, 0.0)
    renewable = window.renewable.copy()
    load = window.load.copy()
    renewable[0] += realized[0]
    load[0] += realized[1]
    b = _Builder(plant, window)
    b.physics(soc_lo, soc_hi, gen_lo, gen_hi, renewable, load)
    b.tracking_cost(reference, cfg.mu_x, cfg.mu_u)
    if shortfall_penalty is not None:
        t0 = window.start
        big = 1e6
        short = b.add_column(t0, "shortfall", 0.0, big)
        surplus = b.add_column(t0, "surplus", 0.0, big)
        cols, vals, rhs, name = b.eq_rows[0]
        b.eq_rows[0] = (cols + [short, surplus], vals + [1.0, -1.0], rhs, name)
        price = shortfall_penalty * plant.time.slot_hours
        b.q[short] += price
        b.q[surplus] += price
    return b.finish()


def build_perfect_dispatch(day: ScenarioDay, plant: Plant, initial_state: BatteryState, epsilon: float = 0.001, prev_gen=None) -> MiqpProblem:
    """Whole-day problem on realised series with the original limits."""
    T = plant.time.slots_per_day
    if day.slots != T:
        raise ConfigError(f"scenario has {day.slots} slots, expected {T}")
    prev = tuple(g.p_min for g in plant.generators) if prev_gen is None else tuple(prev_gen)
    window = HorizonWindow(0, T, day.actual_renewable, day.actual_load, initial_state, prev)
    _check_window(window, plant)
    soc_lo, soc_hi = soc_band(plant, 0.0)
    gen_lo, gen_hi = _generation_band(plant, 0.0)
    b = _Builder(plant, window)
    b.physics(soc_lo, soc_hi, gen_lo, gen_hi, window.renewable, window.load)
    b.operating_cost(epsilon)
    return b.finish()
