"""Dense strictly-convex QP solver (dual active-set method).

Solves  min 1/2 x'Hx + g'x  subject to  C x >= b  with H symmetric positive
definite. The dual active-set strategy starts from the unconstrained minimum
and adds the most violated constraint one at a time, taking partial dual
steps that drop blocking constraints along the way. Every operation is plain
deterministic dense linear algebra and all tie-breaks go to the lowest row
index, so identical inputs produce bitwise-identical results.

Problem sizes here are tiny (tens of variables, low hundreds of rows), so
each iteration re-solves against a cached Cholesky factor of H instead of
maintaining incremental factorizations.

The result carries a KKT certificate (stationarity, primal feasibility,
complementary slackness, dual sign) that callers can verify independently of
how the solution was produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

DUAL_EPS = 1e-12


class QpError(RuntimeError):
    pass


class InfeasibleProblem(QpError):
    pass


class IterationLimit(QpError):
    pass


@dataclass
class KktCertificate:
    stationarity: float      # ||Hx + g - C' u||_inf
    primal: float            # max(0, max_i (b_i - c_i x)) worst violation
    complementarity: float   # max_i |u_i (c_i x - b_i)|
    dual_sign: float         # max(0, -min_i u_i) negative-multiplier mass

    def within(self, stat_tol: float, primal_tol: float, comp_tol: float) -> bool:
        return (
            self.stationarity <= stat_tol
            and self.primal <= primal_tol
            and self.complementarity <= comp_tol
            and self.dual_sign <= stat_tol
        )


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray      # one per constraint row, zero off the active set
    active: list[int]
    iterations: int
    certificate: KktCertificate


def kkt_certificate(h, g, c, b, x, u) -> KktCertificate:
    grad = h @ x + g
    if c.shape[0]:
        grad = grad - c.T @ u
        slack = c @ x - b
        primal = float(max(0.0, np.max(b - c @ x)))
        comp = float(np.max(np.abs(u * slack)))
        dual = float(max(0.0, -np.min(u)))
    else:
        primal = comp = dual = 0.0
    return KktCertificate(
        stationarity=float(np.max(np.abs(grad))),
        primal=primal,
        complementarity=comp,
        dual_sign=dual,
    )


def solve_qp(
    h: np.ndarray,
    g: np.ndarray,
    c: np.ndarray | None = None,
    b: np.ndarray | None = None,
    max_iter: int = 500,
    feas_tol: float = 1e-10,
) -> QpResult:
    """Minimize 1/2 x'Hx + g'x over C x >= b.

    Raises :class:`InfeasibleProblem` when the constraint set is empty and
    :class:`IterationLimit` if the active set cycles beyond ``max_iter``
    changes (does not happen for non-degenerate strictly convex problems).
    """
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    if c is None or len(c) == 0:
        c = np.zeros((0, n))
        b = np.zeros(0)
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    m = c.shape[0]

    try:
        chol = cho_factor(h, lower=True)
    except np.linalg.LinAlgError as exc:
        raise QpError(f"hessian is not positive definite: {exc}") from None
    x = cho_solve(chol, -g)
    active: list[int] = []
    u_active: list[float] = []
    iterations = 0

    hinv_cache: dict[int, np.ndarray] = {}  # row index -> H^-1 c_row

    def hinv_row(j: int) -> np.ndarray:
        if j not in hinv_cache:
            hinv_cache[j] = cho_solve(chol, c[j])
        return hinv_cache[j]

    while True:
        iterations += 1
        if iterations > max_iter:
            raise IterationLimit(f"active-set cycling after {max_iter} iterations")

        slack = c @ x - b if m else np.zeros(0)
        # most violated row, lowest index on ties
        p = -1
        worst = -feas_tol
        for i in range(m):
            if i in active:
                continue
            if slack[i] < worst:
                worst = slack[i]
                p = i
        if p < 0:
            break

        n_p = c[p]
        u_p = 0.0
        # inner loop: partial dual steps until row p becomes active
        while True:
            iterations += 1
            if iterations > max_iter:
                raise IterationLimit(f"active-set cycling after {max_iter} iterations")
            hp = hinv_row(p)
            if active:
                na = c[active]                                  # (k, n)
                hia = np.column_stack([hinv_row(j) for j in active])
                gram = na @ hia                                 # N' H^-1 N
                try:
                    r = np.linalg.solve(gram, na @ hp)
                except np.linalg.LinAlgError as exc:
                    raise QpError(f"degenerate active set {active}: {exc}") from None
                z = hp - hia @ r
            else:
                r = np.zeros(0)
                z = hp

            ztn = float(n_p @ z)
            sp = float(n_p @ x - b[p])

            # dual blocking step among active rows with r_j > 0
            t2 = np.inf
            blocker = -1
            for jpos in range(len(active)):
                if r[jpos] > DUAL_EPS:
                    cand = u_active[jpos] / r[jpos]
                    if cand < t2:
                        t2 = cand
                        blocker = jpos
            t1 = -sp / ztn if ztn > DUAL_EPS else np.inf

            if not np.isfinite(t1) and not np.isfinite(t2):
                raise InfeasibleProblem(
                    f"constraint row {p} cannot be satisfied (dual unbounded)"
                )
            t = min(t1, t2)
            if np.isfinite(ztn) and ztn > DUAL_EPS:
                x = x + t * z
            for jpos in range(len(active)):
                u_active[jpos] -= t * r[jpos]
            u_p += t
            if t2 < t1:
                # blocking row leaves; keep pushing row p toward feasibility
                active.pop(blocker)
                u_active.pop(blocker)
                continue
            active.append(p)
            u_active.append(u_p)
            break

    # polish: re-solve the equality-constrained problem on the final active
    # set; incremental x/u updates drift over long active-set paths and this
    # restores them to the precision of one factorized solve
    if active:
        order = sorted(active)
        na = c[order]
        hia = np.column_stack([hinv_row(j) for j in order])
        gram = na @ hia
        try:
            u_ref = np.linalg.solve(gram, b[order] + na @ cho_solve(chol, g))
            x_ref = cho_solve(chol, na.T @ u_ref - g)
            if np.all(np.isfinite(x_ref)) and np.all(np.isfinite(u_ref)):
                x = x_ref
                active = order
                u_active = list(u_ref)
        except np.linalg.LinAlgError:
            pass  # keep the incrementally tracked iterates

    u = np.zeros(m)
    for jpos, j in enumerate(active):
        u[j] = u_active[jpos]
    cert = kkt_certificate(h, g, c, b, x, u)
    return QpResult(
        x=x,
        multipliers=u,
        active=sorted(active),
        iterations=iterations,
        certificate=cert,
    )
