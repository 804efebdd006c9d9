"""Best-first branch-and-bound over the binary columns, plus an exhaustive oracle."""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import InfeasibleError, SolverError
from .problem import MiqpProblem
from .qp import INFEASIBLE, OPTIMAL, QpSettings, QpSolution, solve_qp

log = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6
ORACLE_MAX_BINARIES = 12


@dataclass
class BnbReport:
    incumbent: QpSolution | None
    nodes: int
    best_bound: float
    gap: float
    status: str  # optimal | infeasible | node-limit
    certificate: np.ndarray | None = None

    @property
    def objective(self) -> float:
        return self.incumbent.objective if self.incumbent is not None else np.inf

    @property
    def x(self) -> np.ndarray:
        return self.incumbent.x


def _fractionality(x: np.ndarray, binaries) -> np.ndarray:
    vals = x[list(binaries)]
    return np.abs(vals - np.round(vals))


def _round_by_couplings(problem: MiqpProblem, x: np.ndarray) -> np.ndarray:
    """Set each binary to the mode whose coupled powers carry the larger load."""
    x = x.copy()
    usage: dict[int, list[float]] = {}
    for cpl in problem.couplings:
        load = max(float(x[list(cpl.continuous)].sum()), 0.0) / cpl.bound
        usage.setdefault(cpl.binary, [0.0, 0.0])[cpl.on_value] += load
    for k in problem.binaries:
        if problem.lb[k] == problem.ub[k]:
            x[k] = problem.lb[k]
            continue
        off, on = usage.get(k, (0.0, 0.0))
        if max(off, on) > INTEGRALITY_TOL and abs(on - off) > INTEGRALITY_TOL:
            x[k] = 1.0 if on > off else 0.0
        else:
            x[k] = float(np.round(x[k]))
    return x


def _scale(value: float) -> float:
    return max(1.0, abs(value))


def solve_miqp(
    problem: MiqpProblem,
    gap_tol: float = 1e-6,
    node_limit: int = 10_000,
    settings: QpSettings | None = None,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> BnbReport:
    """Minimise ``problem`` with its binary columns restricted to {0, 1}.

    Nodes are explored best-bound first and split on the most fractional
    binary (lowest column index on ties).  Each node first tries to repair
    its relaxed point by setting every binary to the mode its coupled powers
    use; when that point is feasible it costs exactly the node bound and the
    node closes without branching.
    """
    settings = settings or QpSettings()
    root = solve_qp(problem, warm_start=warm_start, settings=settings)
    if root.status == INFEASIBLE:
        return BnbReport(None, 1, np.inf, np.inf, INFEASIBLE, root.certificate)
    if root.status != OPTIMAL:
        raise SolverError(f"root relaxation stopped with status {root.status}")

    incumbent: QpSolution | None = None
    counter = itertools.count()
    heap = [(root.objective, next(counter), {}, root)]
    nodes = 1
    feas_tol = 1e-7

    bins = list(problem.binaries)

    def accept(candidate: QpSolution):
        nonlocal incumbent
        if bins:
            x = candidate.x.copy()
            x[bins] = np.round(x[bins])
            candidate = replace(candidate, x=x, objective=problem.objective(x))
        if incumbent is None or candidate.objective < incumbent.objective:
            incumbent = candidate

    while heap:
        bound, _, fixed, sol = heapq.heappop(heap)
        if incumbent is not None:
            gap = (incumbent.objective - bound) / _scale(incumbent.objective)
            if gap <= gap_tol:
                heap.append((bound, 0, fixed, sol))
                break
        binaries = [k for k in problem.binaries if k not in fixed]
        frac = _fractionality(sol.x, binaries) if binaries else np.zeros(0)
        if frac.size == 0 or frac.max() <= INTEGRALITY_TOL:
            x = sol.x.copy()
            x[list(problem.binaries)] = np.round(x[list(problem.binaries)])
            accept(replace(sol, x=x, objective=problem.objective(x)))
            continue
        node_problem = problem.fix_binaries(fixed)
        repaired = _round_by_couplings(node_problem, sol.x)
        if node_problem.max_violation(repaired) <= feas_tol:
            cand = replace(sol, x=repaired, objective=problem.objective(repaired))
        else:
            # dive: re-optimise the continuous part under the rounded modes
            modes = {k: int(repaired[k]) for k in binaries}
            cand = solve_qp(node_problem.fix_binaries(modes), settings=settings)
            nodes += 1
            if cand.status != OPTIMAL:
                cand = None
        if cand is not None:
            accept(cand)
            if cand.objective <= bound + gap_tol * _scale(bound):
                continue
        if nodes >= node_limit:
            heap.append((bound, next(counter), fixed, sol))
            break
        k = binaries[int(np.argmax(frac))]
        for value in (0, 1):
            child_fixed = {**fixed, k: value}
            child = solve_qp(problem.fix_binaries(child_fixed), warm_start=(sol.x, sol.duals), settings=settings)
            nodes += 1
            if child.status == INFEASIBLE:
                continue
            if child.status != OPTIMAL:
                raise SolverError(f"node relaxation stopped with status {child.status}")
            # a child's feasible set lies inside its parent's, so a lower child
            # value is solver round-off on objectives with large cancelling terms
            child_bound = max(child.objective, bound)
            if child.objective < bound - 1e-6 * _scale(bound):
                log.debug("child relaxation %.12g below parent bound %.12g", child.objective, bound)
            if incumbent is not None and child_bound >= incumbent.objective - gap_tol * _scale(incumbent.objective):
                continue
            heapq.heappush(heap, (child_bound, next(counter), child_fixed, child))

    open_bounds = [entry[0] for entry in heap]
    if incumbent is None:
        if heap:
            return BnbReport(None, nodes, min(open_bounds), np.inf, "node-limit")
        return BnbReport(None, nodes, np.inf, np.inf, INFEASIBLE)
    best_bound = min(open_bounds + [incumbent.objective])
    gap = max(0.0, (incumbent.objective - best_bound) / _scale(incumbent.objective))
    status = OPTIMAL if gap <= gap_tol else "node-limit"
    return BnbReport(incumbent, nodes, best_bound, gap, status)


def enumerate_oracle(problem: MiqpProblem, settings: QpSettings | None = None) -> QpSolution:
    """Solve the QP for every binary assignment and keep the cheapest."""
    k = len(problem.binaries)
    if k > ORACLE_MAX_BINARIES:
        raise ValueError(f"enumeration guarded to {ORACLE_MAX_BINARIES} binaries, got {k}")
    best: QpSolution | None = None
    last: QpSolution | None = None
    for bits in itertools.product((0, 1), repeat=k):
        fixed = dict(zip(problem.binaries, bits))
        sol = solve_qp(problem.fix_binaries(fixed), settings=settings)
        last = sol
        if sol.status != OPTIMAL:
            continue
        if best is None or sol.objective < best.objective:
            best = sol
    if best is None:
        return replace(last, status=INFEASIBLE, objective=np.inf)
    return best


def solve_or_raise(problem: MiqpProblem, stage: str, slot: int | None = None, **kwargs) -> BnbReport:
    report = solve_miqp(problem, **kwargs)
    if report.status == INFEASIBLE:
        raise InfeasibleError(f"{stage} problem infeasible", slot=slot, stage=stage,
                              certificate=report.certificate)
    if report.incumbent is None:
        raise SolverError(f"{stage} problem: no integer solution within node limit")
    return report
