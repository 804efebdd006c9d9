"""Convex QP solvers for the continuous relaxation of an :class:`MiqpProblem`.

Three methods share one result type and one dual sign convention
(``Px + q + A_eq'y_eq + A_ineq'y_ineq + y_bound = 0`` with ``y_ineq >= 0``):

``clarabel``
    the Clarabel interior-point solver (default; fastest here).
``ipm``
    an in-house Mehrotra predictor-corrector on the quasi-definite KKT system.
``admm``
    over-relaxed operator splitting with equilibration, adaptive penalty and
    active-set polishing; also the source of infeasibility certificates when
    the interior-point iterations cannot produce one.

Whatever the method, an optimum is only reported after its KKT residuals
have been checked; otherwise the next method in the chain takes over.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import clarabel
import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import MiqpProblem

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"

_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_EQ_RHO_FACTOR = 1e3


@dataclass
class QpSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_infeasible: float = 1e-6
    max_iter: int = 200_000
    check_every: int = 10
    adapt_every: int = 50
    scaling_iter: int = 15
    polish: bool = True
    polish_iter: int = 12
    method: str = "clarabel"
    ipm_tol: float = 1e-10
    ipm_max_iter: int = 100
    ipm_accept: float = 1e-8
    fallback_iter: int = 50_000


@dataclass
class QpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray
    y_bound: np.ndarray
    objective: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    certificate: np.ndarray | None = None
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def duals(self) -> np.ndarray:
        return np.concatenate([self.y_eq, self.y_ineq, self.y_bound])


def _stack(problem: MiqpProblem):
    n = problem.n
    A = sp.vstack([problem.A_eq, problem.A_ineq, sp.identity(n, format="csr")], format="csc")
    l = np.concatenate([problem.b_eq, np.full(problem.b_ineq.size, -np.inf), problem.lb])
    u = np.concatenate([problem.b_eq, problem.b_ineq, problem.ub])
    return A, l, u


def _ruiz(P: sp.csc_matrix, A: sp.csc_matrix, q: np.ndarray, iters: int):
    """Modified Ruiz equilibration of the KKT matrix plus cost scaling."""
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col_p = np.abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(n)
        col_a = np.abs(As).max(axis=0).toarray().ravel() if As.nnz else np.zeros(n)
        row_a = np.abs(As).max(axis=1).toarray().ravel() if As.nnz else np.zeros(m)
        dn = np.maximum(col_p, col_a)
        dm = row_a
        dn = 1.0 / np.sqrt(np.clip(np.where(dn < 1e-4, 1.0, dn), 1e-4, 1e4))
        dm = 1.0 / np.sqrt(np.clip(np.where(dm < 1e-4, 1.0, dm), 1e-4, 1e4))
        Dn, Dm = sp.diags(dn), sp.diags(dm)
        Ps = (Dn @ Ps @ Dn).tocsc()
        As = (Dm @ As @ Dn).tocsc()
        D *= dn
        E *= dm
    qs = D * q
    p_norm = np.abs(Ps).max(axis=0).toarray().ravel().mean() if Ps.nnz else 0.0
    c = max(p_norm, np.abs(qs).max(initial=0.0))
    c = 1.0 / np.clip(c if c > 1e-4 else 1.0, 1e-4, 1e4)
    return D, E, c, (c * Ps).tocsc(), As.tocsc(), c * qs


class _Admm:
    def __init__(self, problem: MiqpProblem, settings: QpSettings):
        self.problem = problem
        self.s = settings
        A, l, u = _stack(problem)
        P = sp.csc_matrix(problem.P)
        self.n, self.m = problem.n, A.shape[0]
        self.D, self.E, self.c, self.P, self.A, self.q = _ruiz(P, A, problem.q, settings.scaling_iter)
        self.At = self.A.T.tocsc()
        with np.errstate(invalid="ignore"):
            self.l = self.E * l
            self.u = self.E * u
        self.eq = np.isfinite(l) & (u - l <= 1e-12 * np.maximum(1.0, np.abs(l)))
        self.free = ~np.isfinite(l) & ~np.isfinite(u)
        self.rho = settings.rho
        self._set_rho_vec()
        self.factor()

    def _set_rho_vec(self):
        rv = np.full(self.m, self.rho)
        rv[self.eq] = _EQ_RHO_FACTOR * self.rho
        rv[self.free] = _RHO_MIN
        self.rho_vec = rv

    def factor(self):
        K = self.P + self.s.sigma * sp.identity(self.n) + self.At @ sp.diags(self.rho_vec) @ self.A
        self.lu = spla.splu(K.tocsc())

    # conversions between the caller's units and the equilibrated space
    def scale_x(self, x):
        return x / self.D

    def scale_y(self, y):
        return self.c * y / self.E

    def unscale_x(self, x):
        return self.D * x

    def unscale_y(self, y):
        return y * self.E / self.c

    def residuals(self, x, z, y):
        Ax = self.A @ x
        Px = self.P @ x
        Aty = self.At @ y
        Einv = 1.0 / self.E
        r_prim = np.max(np.abs(Einv * (Ax - z)), initial=0.0)
        eps_prim = self.s.eps_abs + self.s.eps_rel * max(
            np.max(np.abs(Einv * Ax), initial=0.0), np.max(np.abs(Einv * z), initial=0.0)
        )
        Dinv = 1.0 / self.D
        r_dual = np.max(np.abs(Dinv * (Px + self.q + Aty)), initial=0.0) / self.c
        eps_dual = self.s.eps_abs + self.s.eps_rel / self.c * max(
            np.max(np.abs(Dinv * Px), initial=0.0),
            np.max(np.abs(Dinv * Aty), initial=0.0),
            np.max(np.abs(Dinv * self.q), initial=0.0),
        )
        return r_prim, r_dual, eps_prim, eps_dual, Ax, Px, Aty

    def primal_infeasible(self, dy) -> bool:
        norm = np.max(np.abs(dy), initial=0.0)
        if norm < 1e-12:
            return False
        eps = self.s.eps_infeasible * norm
        if np.max(np.abs(self.At @ dy) / self.D, initial=0.0) > eps * 1.0:
            return False
        pos = np.maximum(dy, 0.0)
        neg = np.minimum(dy, 0.0)
        fin_u = np.isfinite(self.u)
        fin_l = np.isfinite(self.l)
        if np.any(pos[~fin_u] > eps) or np.any(neg[~fin_l] < -eps):
            return False
        support = self.u[fin_u] @ pos[fin_u] + self.l[fin_l] @ neg[fin_l]
        return support < -eps

    def polish(self, x, z, y):
        """Guess the active set from (z, y), solve it exactly, repair, verify."""
        l, u = self.l, self.u
        lower = (z - l < -y) & np.isfinite(l) & ~self.eq
        upper = (u - z < y) & np.isfinite(u) & ~self.eq
        both = lower & upper
        lower &= ~both | (y < 0)
        upper &= ~both | (y >= 0)
        tol = 1e-9
        for _ in range(self.s.polish_iter):
            rows = np.flatnonzero(self.eq | lower | upper)
            rhs = np.where(lower[rows], l[rows], u[rows])
            sol = self._reduced_kkt(rows, rhs)
            if sol is None:
                return None
            xp, yr = sol
            yp = np.zeros(self.m)
            yp[rows] = yr
            Ax = self.A @ xp
            viol_lo = (Ax < l - tol) & ~lower & ~self.eq
            viol_hi = (Ax > u + tol) & ~upper & ~self.eq
            wrong_lo = lower & (yp > tol)
            wrong_hi = upper & (yp < -tol)
            if not (viol_lo.any() or viol_hi.any() or wrong_lo.any() or wrong_hi.any()):
                zp = np.clip(Ax, l, u)
                return xp, zp, yp
            lower = (lower & ~wrong_lo) | viol_lo
            upper = (upper & ~wrong_hi) | viol_hi
        return None

    def _reduced_kkt(self, rows, rhs, delta=1e-10, refine=8):
        Ar = self.A[rows]
        k = rows.size
        K0 = sp.bmat([[self.P, Ar.T], [Ar, None]], format="csc")
        reg = sp.diags(np.concatenate([np.full(self.n, delta), np.full(k, -delta)]))
        try:
            lu = spla.splu((K0 + reg).tocsc())
        except RuntimeError:
            return None
        b = np.concatenate([-self.q, rhs])
        sol = lu.solve(b)
        for _ in range(refine):
            r = b - K0 @ sol
            if np.max(np.abs(r), initial=0.0) < 1e-13:
                break
            sol += lu.solve(r)
        if not np.all(np.isfinite(sol)):
            return None
        return sol[: self.n], sol[self.n :]

    def run(self, x, z, y, trace: Callable | None = None):
        s = self.s
        alpha, sigma = s.alpha, s.sigma
        y_prev = y.copy()
        next_polish = 25
        polish_failures = 0
        it = 0
        res = None
        while it < s.max_iter:
            it += 1
            rho = self.rho_vec
            rhs = sigma * x - self.q + self.At @ (rho * z - y)
            xt = self.lu.solve(rhs)
            zt = self.A @ xt
            x = alpha * xt + (1.0 - alpha) * x
            zr = alpha * zt + (1.0 - alpha) * z
            z_new = np.clip(zr + y / rho, self.l, self.u)
            y_prev = y
            y = y + rho * (zr - z_new)
            z = z_new
            if it % s.check_every and it != 1:
                continue
            r_prim, r_dual, eps_prim, eps_dual, Ax, Px, Aty = self.residuals(x, z, y)
            res = (r_prim, r_dual)
            if trace is not None:
                trace(it, r_prim, r_dual, self.rho)
            converged = r_prim <= eps_prim and r_dual <= eps_dual
            near = r_prim <= 1e3 * eps_prim and r_dual <= 1e3 * eps_dual
            if s.polish and (converged or (near and it >= next_polish)):
                polished = self.polish(x, z, y)
                if polished is not None:
                    xp, zp, yp = polished
                    rp = self.residuals(xp, zp, yp)
                    if rp[0] <= eps_prim and rp[1] <= eps_dual:
                        return xp, zp, yp, OPTIMAL, it, rp[0], rp[1], True, None
                polish_failures += 1
                next_polish = it + 25 * 2 ** min(polish_failures, 6)
            if converged:
                return x, z, y, OPTIMAL, it, r_prim, r_dual, False, None
            dy = y - y_prev
            if self.primal_infeasible(dy):
                return x, z, y, INFEASIBLE, it, r_prim, r_dual, False, dy
            if it % s.adapt_every == 0:
                self._adapt(r_prim, r_dual, Ax, Px, Aty, z)
        r_prim, r_dual = res if res is not None else (np.inf, np.inf)
        return x, z, y, ITERATION_LIMIT, it, r_prim, r_dual, False, None

    def _adapt(self, r_prim, r_dual, Ax, Px, Aty, z):
        # residuals here are in scaled units
        rp = np.max(np.abs(Ax - z), initial=0.0) / max(
            np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0), 1e-10
        )
        rd = np.max(np.abs(Px + self.q + Aty), initial=0.0) / max(
            np.max(np.abs(Px), initial=0.0),
            np.max(np.abs(Aty), initial=0.0),
            np.max(np.abs(self.q), initial=0.0),
            1e-10,
        )
        new_rho = float(np.clip(self.rho * np.sqrt(rp / max(rd, 1e-12)), _RHO_MIN, _RHO_MAX))
        if new_rho > 5 * self.rho or new_rho < self.rho / 5:
            self.rho = new_rho
            self._set_rho_vec()
            self.factor()


class _KktSystem:
    """Quasi-definite Newton matrix ``[[H, A'], [A, -delta I]]`` with a fixed pattern.

    ``H = P + G' diag(wg) G + diag(bound weights)``.  The pattern is computed
    once; each factorisation only refreshes the numerical values.  Small
    systems go through dense LU, larger ones through SuperLU.
    """

    DENSE_LIMIT = 160
    DELTA = 1e-10

    def __init__(self, P, A, G, lo, hi):
        n, me = P.shape[0], A.shape[0]
        self.n, self.me = n, me
        dim = n + me
        Pc, Ac, Gc = P.tocoo(), A.tocoo(), G.tocsr()
        rows, cols, vals = [Pc.row], [Pc.col], [Pc.data]
        rows += [Ac.row + n, Ac.col]
        cols += [Ac.col, Ac.row + n]
        vals += [Ac.data, Ac.data]
        diag = np.arange(dim)
        rows.append(diag)
        cols.append(diag)
        vals.append(np.concatenate([np.full(n, self.DELTA), np.full(me, -self.DELTA)]))
        fixed_r = np.concatenate(rows)
        fixed_c = np.concatenate(cols)
        fixed_v = np.concatenate(vals)
        # weight-dependent entries: G' diag(wg) G and the bound diagonals
        mg = Gc.shape[0]
        lens = np.diff(Gc.indptr)
        owner = np.repeat(np.arange(mg), lens)
        reps = lens[owner]
        left = np.repeat(np.arange(Gc.nnz), reps)
        offset = np.arange(left.size) - np.repeat(np.cumsum(reps) - reps, reps)
        right = Gc.indptr[owner[left]] + offset
        var_r = np.concatenate([Gc.indices[left], lo, hi])
        var_c = np.concatenate([Gc.indices[right], lo, hi])
        var_coef = np.concatenate([Gc.data[left] * Gc.data[right], np.ones(lo.size + hi.size)])
        var_w = np.concatenate([owner[left], mg + np.arange(lo.size + hi.size)]).astype(np.intp)
        all_r = np.concatenate([fixed_r, var_r]).astype(np.int64)
        all_c = np.concatenate([fixed_c, var_c]).astype(np.int64)
        keys = all_c * dim + all_r
        uniq, inv = np.unique(keys, return_inverse=True)
        self.inv_fixed = inv[: fixed_v.size]
        self.inv_var = inv[fixed_v.size :]
        self.fixed_v = fixed_v
        self.var_coef = var_coef
        self.var_w = var_w
        self.nuniq = uniq.size
        self.indices = (uniq % dim).astype(np.int32)
        self.col_of = (uniq // dim).astype(np.int64)
        self.indptr = np.searchsorted(self.col_of, np.arange(dim + 1)).astype(np.int32)
        self.base = np.bincount(self.inv_fixed, weights=fixed_v, minlength=self.nuniq)
        self.dim = dim
        self.dense = dim <= self.DENSE_LIMIT
        self.K = None

    def factor(self, w) -> bool:
        """Refactorise with weights ordered as inequality rows, lower bounds, upper bounds."""
        data = self.base + np.bincount(self.inv_var, weights=self.var_coef * w[self.var_w], minlength=self.nuniq)
        if self.dense:
            K = np.zeros((self.dim, self.dim))
            K[self.indices, self.col_of] = data
            self.K = K
            try:
                self.lu = scipy.linalg.lu_factor(K, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return False
            return bool(np.all(np.isfinite(self.lu[0].diagonal())))
        self.K = sp.csc_matrix((data, self.indices, self.indptr), shape=(self.dim, self.dim))
        try:
            self.lu = spla.splu(self.K, permc_spec="COLAMD", options={"SymmetricMode": True})
        except RuntimeError:
            return False
        return True

    def _raw_solve(self, rhs):
        if self.dense:
            return scipy.linalg.lu_solve(self.lu, rhs, check_finite=False)
        return self.lu.solve(rhs)

    def solve(self, rx, ry):
        rhs = np.concatenate([rx, ry])
        sol = self._raw_solve(rhs)
        for _ in range(2):
            sol += self._raw_solve(rhs - self.K @ sol)
        return sol[: self.n], sol[self.n :]


class _InteriorPoint:
    """Mehrotra predictor-corrector on the problem with fixed columns removed.

    Inequalities ``G x <= h`` and the finite variable bounds each carry a
    slack/multiplier pair; the Newton system is reduced to the quasi-definite
    ``[[H, A'], [A, -delta I]]`` form and factorised once per iteration.
    """

    def __init__(self, problem: MiqpProblem, settings: QpSettings):
        self.problem = problem
        self.s = settings
        n = problem.n
        fixed = problem.lb == problem.ub
        self.fixed = fixed
        self.free_idx = np.flatnonzero(~fixed)
        x_fixed = np.where(fixed, problem.lb, 0.0)
        self.x_fixed = x_fixed
        fr = self.free_idx
        P = sp.csc_matrix(problem.P)
        self.P = P[fr][:, fr].tocsc()
        self.q = problem.q[fr] + (P @ x_fixed)[fr]
        A = problem.A_eq.tocsc()
        G = problem.A_ineq.tocsc()
        b = problem.b_eq - A @ x_fixed
        h = problem.b_ineq - G @ x_fixed
        A = A[:, fr]
        G = G[:, fr]
        self.trivially_infeasible = None
        a_rows = np.diff(A.tocsr().indptr) > 0
        g_rows = np.diff(G.tocsr().indptr) > 0
        if np.any(np.abs(b[~a_rows]) > 1e-9):
            self.trivially_infeasible = "equality"
        if np.any(h[~g_rows] < -1e-9):
            self.trivially_infeasible = "inequality"
        self.eq_rows = np.flatnonzero(a_rows)
        self.in_rows = np.flatnonzero(g_rows)
        self.A = A.tocsr()[self.eq_rows].tocsc()
        self.b = b[self.eq_rows]
        self.G = G.tocsr()[self.in_rows].tocsc()
        self.h = h[self.in_rows]
        lb, ub = problem.lb[fr], problem.ub[fr]
        self.lo_idx = np.flatnonzero(np.isfinite(lb))
        self.hi_idx = np.flatnonzero(np.isfinite(ub))
        self.lb, self.ub = lb[self.lo_idx], ub[self.hi_idx]
        self.n = fr.size
        self.n_total = n

    def _initial_point(self):
        fr = self.free_idx
        lb, ub = self.problem.lb[fr], self.problem.ub[fr]
        x = np.zeros(self.n)
        both = np.isfinite(lb) & np.isfinite(ub)
        x[both] = 0.5 * (lb[both] + ub[both])
        only_lo = np.isfinite(lb) & ~np.isfinite(ub)
        x[only_lo] = lb[only_lo] + 1.0
        only_hi = ~np.isfinite(lb) & np.isfinite(ub)
        x[only_hi] = ub[only_hi] - 1.0
        return x

    def _split(self, z):
        mg, ml = self.h.size, self.lo_idx.size
        return z[:mg], z[mg : mg + ml], z[mg + ml :]

    def run(self):
        s = self.s
        q, A, b = self.q, self.A, self.b
        P = self.P
        lo, hi = self.lo_idx, self.hi_idx
        n = self.n
        # every inequality, including the finite bounds, as C x + slack = d
        C = sp.vstack([
            self.G,
            sp.csr_matrix((-np.ones(lo.size), (np.arange(lo.size), lo)), shape=(lo.size, n)),
            sp.csr_matrix((np.ones(hi.size), (np.arange(hi.size), hi)), shape=(hi.size, n)),
        ]).tocsr()
        d = np.concatenate([self.h, -self.lb, self.ub])
        At, Ct = A.T.tocsr(), C.T.tocsr()
        A = A.tocsr()
        kkt = _KktSystem(P, A, self.G, lo, hi)
        x = self._initial_point()
        y = np.zeros(b.size)
        sl = np.maximum(d - C @ x, 1.0)
        z = np.ones(d.size)
        m_cone = max(d.size, 1)
        scale_p = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(self.h), initial=0.0))
        scale_d = 1.0 + np.max(np.abs(q), initial=0.0)
        status = ITERATION_LIMIT
        it = 0
        best = (np.inf, x, y, z)

        def max_step(v, dv):
            ratio = np.where(dv < 0, -v / np.where(dv < 0, dv, -1.0), np.inf)
            return min(1.0, float(ratio.min(initial=np.inf)))

        for it in range(1, s.ipm_max_iter + 1):
            rd = P @ x + q + At @ y + Ct @ z
            rp = A @ x - b
            rc = C @ x + sl - d
            mu = (sl @ z) / m_cone
            res_p = max(np.max(np.abs(rp), initial=0.0), np.max(np.abs(rc), initial=0.0))
            res_d = np.max(np.abs(rd), initial=0.0)
            log.debug("ipm %3d  pres %.2e  dres %.2e  mu %.2e", it, res_p, res_d, mu)
            merit = max(res_p / scale_p, res_d / scale_d, mu)
            if merit <= s.ipm_tol:
                status = OPTIMAL
                break
            if merit < best[0]:
                best = (merit, x, y, z)
            elif best[0] <= s.ipm_accept and merit > 1e3 * best[0]:
                break
            big = max(np.max(z, initial=0.0), np.max(np.abs(y), initial=0.0))
            if big > 1e6:
                ray = self._farkas(y, *self._split(z))
                if ray is not None:
                    return self._infeasible(x, ray, it)
            if big > 1e12 or not np.isfinite(mu):
                status = INFEASIBLE
                break
            if not kkt.factor(z / sl):
                status = INFEASIBLE
                break

            def direction(c):
                # complementarity target slack * z = c
                rhs_x = -rd - Ct @ ((c + z * rc) / sl - z)
                dx, dy = kkt.solve(rhs_x, -rp)
                ds = -rc - C @ dx
                dz = (c - z * sl - z * ds) / sl
                return dx, dy, ds, dz

            affine = direction(0.0)
            if not all(np.all(np.isfinite(v)) for v in affine):
                break  # singular step: keep the best point or hand over
            _, _, ds_a, dz_a = affine
            a_aff = min(max_step(sl, ds_a), max_step(z, dz_a))
            mu_aff = ((sl + a_aff * ds_a) @ (z + a_aff * dz_a)) / m_cone
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, ds, dz = direction(sigma * mu - ds_a * dz_a)
            if not all(np.all(np.isfinite(v)) for v in (dx, dy, ds, dz)):
                break
            step = 0.995 * min(max_step(sl, ds), max_step(z, dz))
            x = x + step * dx
            y = y + step * dy
            sl = sl + step * ds
            z = z + step * dz
        if status != OPTIMAL:
            ray = self._farkas(y, *self._split(z))
            if ray is not None:
                return self._infeasible(x, ray, it)
        if status != OPTIMAL and best[0] <= s.ipm_accept:
            # numerical breakdown after reaching a usable point
            _, x, y, z = best
            status = OPTIMAL
        return self._assemble(x, y, *self._split(z), status, it)

    def _farkas(self, y, zg, zl, zu):
        """Normalised dual ray proving infeasibility of the reduced system, or None."""
        scale = max(np.max(np.abs(y), initial=0.0), np.max(zg, initial=0.0),
                    np.max(zl, initial=0.0), np.max(zu, initial=0.0))
        if not np.isfinite(scale) or scale <= 0:
            return None
        y, zg, zl, zu = y / scale, np.maximum(zg, 0) / scale, np.maximum(zl, 0) / scale, np.maximum(zu, 0) / scale
        r = self.A.T @ y + self.G.T @ zg
        r[self.lo_idx] -= zl
        r[self.hi_idx] += zu
        support = self.b @ y + self.h @ zg + self.ub @ zu - self.lb @ zl
        if np.max(np.abs(r), initial=0.0) <= self.s.eps_infeasible and support < -10 * self.s.eps_infeasible:
            return y, zg, zl, zu
        return None

    def _infeasible(self, x, ray, it):
        y, zg, zl, zu = ray
        pr = self.problem
        xf, y_eq, y_in, y_b, _, _ = self._assemble(x, y, zg, zl, zu, INFEASIBLE, it)
        if self.fixed.any():
            # fixed columns absorb the ray's residual through their bound rows
            r = pr.A_eq.T @ y_eq + pr.A_ineq.T @ y_in
            y_b[self.fixed] = -r[self.fixed]
        cert = np.concatenate([y_eq, y_in, y_b])
        cert /= max(np.max(np.abs(cert)), 1e-300)
        return xf, y_eq, y_in, y_b, INFEASIBLE, it, cert

    def _assemble(self, x, y, zg, zl, zu, status, it):
        pr = self.problem
        xf = self.x_fixed.copy()
        xf[self.free_idx] = x
        y_eq = np.zeros(pr.b_eq.size)
        y_eq[self.eq_rows] = y
        y_in = np.zeros(pr.b_ineq.size)
        y_in[self.in_rows] = zg
        yb_free = np.zeros(self.n)
        np.subtract.at(yb_free, self.lo_idx, zl)
        np.add.at(yb_free, self.hi_idx, zu)
        y_bound = np.zeros(pr.n)
        y_bound[self.free_idx] = yb_free
        if self.fixed.any():
            grad = pr.P @ xf + pr.q + pr.A_eq.T @ y_eq + pr.A_ineq.T @ y_in
            y_bound[self.fixed] = -grad[self.fixed]
        return xf, y_eq, y_in, y_bound, status, it


def solve_qp(
    problem: MiqpProblem,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
    settings: QpSettings | None = None,
    trace: Callable | None = None,
) -> QpSolution:
    """Solve the continuous relaxation of ``problem`` (binaries relaxed to [0, 1]).

    Methods are tried in the order ``clarabel -> ipm -> admm`` starting from
    ``settings.method``; a method hands over when it neither certifies an
    optimum within ``KKT_TOL`` nor proves infeasibility.  ``warm_start`` is
    ``(x, y)`` with ``y`` ordered like :attr:`QpSolution.duals` and only
    affects ADMM.  ``trace`` receives ``(iteration, primal_res, dual_res,
    rho)`` at every ADMM residual check.
    """
    settings = settings or QpSettings()
    if settings.method not in _CHAIN:
        raise ValueError(f"unknown QP method {settings.method!r}")
    if np.any(problem.lb > problem.ub):
        k = int(np.flatnonzero(problem.lb > problem.ub)[0])
        return _infeasible_bounds(problem, k)
    for method in _CHAIN[_CHAIN.index(settings.method):]:
        if method == "admm":
            fallback = settings
            if settings.method != "admm":
                fallback = QpSettings(**{**settings.__dict__, "method": "admm", "max_iter": settings.fallback_iter})
            return _solve_admm(problem, warm_start, fallback, trace)
        sol = _solve_clarabel(problem, settings) if method == "clarabel" else _solve_ipm(problem, settings)
        if sol is not None:
            return sol
    raise AssertionError("unreachable")


_CHAIN = ("clarabel", "ipm", "admm")
KKT_TOL = 1e-6


def _certified(problem: MiqpProblem, sol: QpSolution) -> QpSolution | None:
    res = kkt_residuals(problem, sol)
    sol.primal_residual = res["primal"]
    sol.dual_residual = res["stationarity"]
    scale = 1.0 + np.max(np.abs(problem.q), initial=0.0)
    if res["primal"] <= KKT_TOL and res["stationarity"] <= KKT_TOL * scale and res["complementarity"] <= KKT_TOL * scale:
        return sol
    log.debug("rejecting optimum with residuals %s", res)
    return None


def _solve_ipm(problem: MiqpProblem, settings: QpSettings) -> QpSolution | None:
    ip = _InteriorPoint(problem, settings)
    if ip.trivially_infeasible is not None:
        return None
    out = ip.run()
    x, y_eq, y_in, y_b, status, it = out[:6]
    if status == INFEASIBLE and len(out) == 7:
        return QpSolution(x, y_eq, y_in, y_b, np.inf, INFEASIBLE, it, problem.max_violation(x), 0.0,
                          certificate=out[6])
    if status == OPTIMAL:
        return _certified(problem, QpSolution(x, y_eq, y_in, y_b, problem.objective(x), OPTIMAL, it, 0.0, 0.0))
    log.debug("interior point ended with %s after %d iterations", status, it)
    return None


def _clarabel_settings(settings: QpSettings):
    cs = clarabel.DefaultSettings()
    cs.verbose = False
    # tracking objectives carry large cancelling terms, so only an absolute
    # gap is meaningful for branch-and-bound comparisons
    cs.tol_gap_abs = settings.ipm_tol
    cs.tol_gap_rel = 1e-15
    cs.tol_feas = settings.ipm_tol
    cs.tol_infeas_abs = cs.tol_infeas_rel = 1e-9
    cs.max_iter = settings.ipm_max_iter
    # the default 1e-8 regularisation leaves ~1e-8 primal error, which the
    # large SoC-row multipliers turn into objective error above the MIP gap
    cs.static_regularization_constant = 1e-12
    return cs


class _StackedRows:
    """``[A_eq; I; A_ineq; I; -I]`` in CSR, shared by every node of one problem."""

    def __init__(self, problem: MiqpProblem):
        n = problem.n
        eye = sp.identity(n, format="csr")
        self.A_eq = problem.A_eq  # keeps the cache key alive
        self.M = sp.vstack([problem.A_eq, eye, problem.A_ineq, eye, -eye], format="csr")
        self.P = sp.triu(problem.P, format="csc")
        self.me, self.mi, self.n = problem.b_eq.size, problem.b_ineq.size, n

    def rows(self, fixed, upper, lower) -> np.ndarray:
        me, mi, n = self.me, self.mi, self.n
        return np.concatenate([np.arange(me), me + fixed, me + n + np.arange(mi), me + n + mi + upper,
                               me + 2 * n + mi + lower])

    def select(self, rows: np.ndarray) -> sp.csc_matrix:
        M = self.M
        starts, ends = M.indptr[rows], M.indptr[rows + 1]
        lens = ends - starts
        indptr = np.concatenate([[0], np.cumsum(lens)])
        take = np.repeat(starts - indptr[:-1], lens) + np.arange(indptr[-1])
        sub = sp.csr_matrix((M.data[take], M.indices[take], indptr), shape=(rows.size, self.n))
        return sub.tocsc()


_STACK_CACHE: dict[int, _StackedRows] = {}


def _stacked(problem: MiqpProblem) -> _StackedRows:
    key = id(problem.A_eq)
    entry = _STACK_CACHE.get(key)
    if entry is None or entry.A_eq is not problem.A_eq or entry.P.shape[0] != problem.n:
        if len(_STACK_CACHE) >= 16:
            _STACK_CACHE.pop(next(iter(_STACK_CACHE)))
        entry = _STACK_CACHE[key] = _StackedRows(problem)
    return entry


def _solve_clarabel(problem: MiqpProblem, settings: QpSettings) -> QpSolution | None:
    n, me, mi = problem.n, problem.b_eq.size, problem.b_ineq.size
    lb, ub = problem.lb, problem.ub
    fixed = np.flatnonzero(lb == ub)
    free = lb != ub
    upper = np.flatnonzero(free & np.isfinite(ub))
    lower = np.flatnonzero(free & np.isfinite(lb))
    stack = _stacked(problem)
    A = stack.select(stack.rows(fixed, upper, lower))
    b = np.concatenate([problem.b_eq, lb[fixed], problem.b_ineq, ub[upper], -lb[lower]])
    n_zero = me + fixed.size
    cones = [clarabel.ZeroConeT(n_zero), clarabel.NonnegativeConeT(b.size - n_zero)]
    P = stack.P
    try:
        res = clarabel.DefaultSolver(P, np.asarray(problem.q, dtype=float), A, b, cones,
                                     _clarabel_settings(settings)).solve()
    except Exception as err:  # solver-internal failure: let the next method try
        log.debug("clarabel raised %s", err)
        return None
    status = str(res.status)
    x = np.asarray(res.x, dtype=float)
    z = np.asarray(res.z, dtype=float)
    y_eq = z[:me]
    y_in = z[n_zero : n_zero + mi]
    y_b = np.zeros(n)
    y_b[fixed] = z[me:n_zero]
    k = n_zero + mi
    y_b[upper] += z[k : k + upper.size]
    y_b[lower] -= z[k + upper.size :]
    it = int(res.iterations)
    if status in ("Solved", "AlmostSolved"):
        sol = QpSolution(x, y_eq.copy(), y_in.copy(), y_b, problem.objective(x), OPTIMAL, it, 0.0, 0.0)
        return _certified(problem, sol)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        cert = np.concatenate([y_eq, y_in, y_b])
        if _is_certificate(problem, cert):
            cert = cert / max(np.max(np.abs(cert)), 1e-300)
            return QpSolution(x, y_eq.copy(), y_in.copy(), y_b, np.inf, INFEASIBLE, it,
                              problem.max_violation(x), 0.0, certificate=cert)
    log.debug("clarabel ended with %s", status)
    return None


def _is_certificate(problem: MiqpProblem, cert: np.ndarray, tol: float = 1e-6) -> bool:
    """Check a dual ray ``(y_eq, y_ineq, y_bound)`` proves the constraints inconsistent."""
    me, mi = problem.b_eq.size, problem.b_ineq.size
    scale = np.max(np.abs(cert), initial=0.0)
    if not np.isfinite(scale) or scale <= 0:
        return False
    c = cert / scale
    y_eq, y_in, y_b = c[:me], c[me : me + mi], c[me + mi :]
    if np.any(y_in < -tol):
        return False
    pos, neg = np.maximum(y_b, 0.0), np.minimum(y_b, 0.0)
    if np.any(pos[~np.isfinite(problem.ub)] > tol) or np.any(neg[~np.isfinite(problem.lb)] < -tol):
        return False
    ray = problem.A_eq.T @ y_eq + problem.A_ineq.T @ np.maximum(y_in, 0.0) + y_b
    if np.max(np.abs(ray), initial=0.0) > tol:
        return False
    with np.errstate(invalid="ignore"):
        support = (problem.b_eq @ y_eq + problem.b_ineq @ np.maximum(y_in, 0.0)
                   + np.nansum(np.where(pos > 0, problem.ub * pos, 0.0))
                   + np.nansum(np.where(neg < 0, problem.lb * neg, 0.0)))
    return bool(support < -tol)


def _solve_admm(problem, warm_start, settings, trace) -> QpSolution:
    n, m_eq, m_in = problem.n, problem.b_eq.size, problem.b_ineq.size
    ws = _Admm(problem, settings)
    if warm_start is not None:
        x0 = ws.scale_x(np.asarray(warm_start[0], dtype=float))
        y0 = ws.scale_y(np.asarray(warm_start[1], dtype=float))
        z0 = np.clip(ws.A @ x0, ws.l, ws.u)
    else:
        x0 = np.zeros(n)
        y0 = np.zeros(ws.m)
        z0 = np.clip(np.zeros(ws.m), ws.l, ws.u)
    x, z, y, status, it, r_prim, r_dual, polished, dy = ws.run(x0, z0, y0, trace)
    xu = ws.unscale_x(x)
    yu = ws.unscale_y(y)
    cert = None
    if dy is not None:
        cert = ws.unscale_y(dy)
        cert = cert / max(np.max(np.abs(cert)), 1e-300)
    obj = problem.objective(xu) if status != INFEASIBLE else np.inf
    return QpSolution(
        x=xu,
        y_eq=yu[:m_eq],
        y_ineq=yu[m_eq : m_eq + m_in],
        y_bound=yu[m_eq + m_in :],
        objective=obj,
        status=status,
        iterations=it,
        primal_residual=float(r_prim),
        dual_residual=float(r_dual),
        certificate=cert,
        polished=polished,
    )


def _infeasible_bounds(problem: MiqpProblem, k: int) -> QpSolution:
    n, m_eq, m_in = problem.n, problem.b_eq.size, problem.b_ineq.size
    cert = np.zeros(m_eq + m_in + n)
    cert[m_eq + m_in + k] = 1.0
    return QpSolution(
        x=np.clip(np.zeros(n), problem.lb, problem.ub),
        y_eq=np.zeros(m_eq),
        y_ineq=np.zeros(m_in),
        y_bound=np.zeros(n),
        objective=np.inf,
        status=INFEASIBLE,
        iterations=0,
        primal_residual=float(problem.lb[k] - problem.ub[k]),
        dual_residual=0.0,
        certificate=cert,
    )


def kkt_residuals(problem: MiqpProblem, sol: QpSolution) -> dict[str, float]:
    """Unscaled primal, stationarity and complementarity residuals of a solution."""
    x = sol.x
    stat = problem.P @ x + problem.q + problem.A_eq.T @ sol.y_eq + problem.A_ineq.T @ sol.y_ineq + sol.y_bound
    primal = problem.max_violation(x)
    compl = 0.0
    if problem.b_ineq.size:
        slack = problem.b_ineq - problem.A_ineq @ x
        compl = max(compl, np.max(np.abs(sol.y_ineq * slack)))
        compl = max(compl, np.max(-sol.y_ineq, initial=0.0))
    yb = sol.y_bound
    with np.errstate(invalid="ignore"):
        at_hi = np.where(yb > 0, yb * np.abs(problem.ub - x), 0.0)
        at_lo = np.where(yb < 0, -yb * np.abs(x - problem.lb), 0.0)
        compl = max(compl, np.nanmax(at_hi, initial=0.0), np.nanmax(at_lo, initial=0.0))
    return {
        "primal": float(primal),
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "complementarity": float(compl),
    }
