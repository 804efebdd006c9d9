"""Random instance generators shared by several test modules."""

import numpy as np
import scipy.sparse as sp

from tubedispatch import (
    BatteryParams,
    BatteryState,
    ControllerConfig,
    DegradationParams,
    InfeasibleError,
    MiqpProblem,
    Plant,
    build_nominal,
)
from tubedispatch.horizon import HorizonWindow


def random_window_problem(rng, max_len=3):
    """Nominal problem over a short random window: at most ``2 * max_len`` binaries."""
    while True:
        length = int(rng.integers(1, max_len + 1))
        n_seg = int(rng.integers(1, 6))
        bat = BatteryParams(
            degradation=DegradationParams(num_segments=n_seg),
            charge_max_kw=float(rng.uniform(20, 120)),
            discharge_max_kw=float(rng.uniform(20, 120)),
        )
        plant = Plant(battery=bat)
        start = int(rng.integers(0, plant.time.slots_per_day - length + 1))
        state = BatteryState.from_soc(float(rng.uniform(0.22, 0.88)), n_seg)
        prev = [float(rng.uniform(g.p_min, g.p_max)) for g in plant.generators]
        window = HorizonWindow(start, length, rng.uniform(0, 350, length), rng.uniform(50, 400, length), state, prev)
        cfg = ControllerConfig(rho1=float(rng.uniform(0, 0.1)), rho2=float(rng.uniform(0, 0.2)))
        try:
            return build_nominal(window, plant, cfg)
        except InfeasibleError:
            continue


def random_miqp(rng, n=6, k=3):
    """Generic convex MIQP with ``k`` binaries among ``n`` columns."""
    M = rng.normal(size=(n, n))
    P = sp.csc_matrix(M.T @ M + 0.1 * np.eye(n))
    A_in = rng.normal(size=(3, n))
    x0 = rng.uniform(0, 1, n)
    b_in = A_in @ x0 + rng.uniform(0, 0.5, 3)
    lb = np.full(n, -2.0)
    ub = np.full(n, 2.0)
    bins = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
    lb[list(bins)] = 0.0
    ub[list(bins)] = 1.0
    return MiqpProblem(P, rng.normal(size=n) * 3, sp.csr_matrix((0, n)), np.zeros(0), sp.csr_matrix(A_in), b_in,
                       lb, ub, binaries=bins)
