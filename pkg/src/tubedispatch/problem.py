"""Standard-form container for the mixed-integer QPs built by ``horizon``.

The problem is::

    minimise    0.5 x'Px + q'x + constant
    subject to  A_eq x  = b_eq
                A_ineq x <= b_ineq
                lb <= x <= ub
                x[k] in {0, 1}  for k in binaries
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class BigMCoupling:
    """``sum(x[continuous]) <= bound`` when ``x[binary] == on_value``, else 0."""

    binary: int
    continuous: tuple[int, ...]
    bound: float
    on_value: int


@dataclass(frozen=True, eq=False)
class MiqpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ineq: sp.csr_matrix
    b_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binaries: tuple[int, ...] = ()
    couplings: tuple[BigMCoupling, ...] = ()
    names: tuple[tuple[int, str], ...] = ()
    constant: float = 0.0
    eq_names: tuple[str, ...] = ()
    ineq_names: tuple[str, ...] = ()
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = self.q.size
        for arr in (self.q, self.b_eq, self.b_ineq, self.lb, self.ub):
            arr.setflags(write=False)
        if self.P.shape != (n, n):
            raise ValueError("P must be n x n")
        if self.A_eq.shape[1] != n or self.A_ineq.shape[1] != n:
            raise ValueError("constraint matrices must have n columns")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have n entries")
        for k in self.binaries:
            if self.lb[k] < 0 or self.ub[k] > 1:
                raise ValueError(f"binary column {k} must be bounded within [0, 1]")
        if self.names:
            index = {name: k for k, name in enumerate(self.names)}
            if len(index) != n or len(self.names) != n:
                raise ValueError("name map must be a bijection onto columns")
            object.__setattr__(self, "_index", index)

    @property
    def n(self) -> int:
        return self.q.size

    def col(self, slot: int, role: str) -> int:
        return self._index[(slot, role)]

    def value(self, x: np.ndarray, slot: int, role: str) -> float:
        return float(x[self._index[(slot, role)]])

    def has(self, slot: int, role: str) -> bool:
        return self._index is not None and (slot, role) in self._index

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.constant)

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "MiqpProblem":
        return replace(self, lb=np.asarray(lb, dtype=float), ub=np.asarray(ub, dtype=float), _index=None)

    def fix_binaries(self, values: dict[int, int]) -> "MiqpProblem":
        lb, ub = self.lb.copy(), self.ub.copy()
        for k, v in values.items():
            lb[k] = ub[k] = float(v)
        return self.with_bounds(lb, ub)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest absolute constraint violation at ``x`` (integrality excluded)."""
        parts = [0.0]
        if self.b_eq.size:
            parts.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        if self.b_ineq.size:
            parts.append(np.max(self.A_ineq @ x - self.b_ineq))
        parts.append(np.max(self.lb - x))
        parts.append(np.max(x - self.ub))
        return float(max(parts))

    def dump_text(self) -> str:
        """Plain-text listing: columns, objective, and triplet-form constraints."""
        out = io.StringIO()
        out.write(f"# columns {self.n}\n")
        diag = self.P.diagonal()
        for k in range(self.n):
            slot, role = self.names[k] if self.names else (-1, f"x{k}")
            kind = "B" if k in set(self.binaries) else "C"
            out.write(f"col {k} {slot} {role} {kind} lb={self.lb[k]:.12g} ub={self.ub[k]:.12g} "
                      f"P={diag[k]:.12g} q={self.q[k]:.12g}\n")
        out.write(f"constant {self.constant:.12g}\n")
        for label, A, b in (("eq", self.A_eq, self.b_eq), ("le", self.A_ineq, self.b_ineq)):
            coo = A.tocoo()
            out.write(f"# {label} rows {A.shape[0]} nnz {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                out.write(f"{label} {r} {c} {v:.12g}\n")
            for r, v in enumerate(b):
                out.write(f"{label}_rhs {r} {v:.12g}\n")
        return out.getvalue()
