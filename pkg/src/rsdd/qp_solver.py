"""Convex quadratic programming with certified primal-dual output.

Dense Mehrotra predictor-corrector interior-point solver for

    minimize    0.5 x'Qx + c'x + offset
    subject to  A_eq x  = b_eq
                A_in x <= b_in
                lb <= x <= ub

Every variable is box bounded, so bounded feasible problems always have a
primal-dual pair.  The KKT residual attached to a solution is recomputed
from the returned values, never read from solver internals.  Problems that
share a sparsity-free dense shape can be solved as a batch (one interior
point loop over a leading batch axis), which is what the network simulator
uses to step all agents of one shape at once.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .problem_model import AgentProblem

# Inequality row tags.
TAG_LOCAL = "local"
TAG_HINGE = "hinge"
TAG_COUPLING = "coupling"

_FIX_TOL = 1e-12  # lb == ub within this -> variable pinned via an equality row
_PSD_TOL = 1e-9


class QpError(Exception):
    """Base class for solver failures."""


class QpInfeasibleError(QpError):
    """No feasible point exists; carries a Farkas-type certificate when available."""

    def __init__(self, message: str, certificate: np.ndarray | None = None):
        super().__init__(message)
        self.certificate = certificate
        self.status = "infeasible"


class QpNumericalError(QpError):
    """The interior-point iteration broke down on a (presumably) feasible problem."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.status = "numerical-error"


@dataclass
class QpStandardForm:
    """Box-bounded convex QP with optional linear equalities and inequalities.

    Inequality rows carry string tags so callers can recover structural rows
    (for instance the coupling rows of a relaxed local problem).  ``offset``
    is a constant added to the reported objective; ``n_primary`` records how
    many leading coordinates are original decision variables when trailing
    ones were introduced by a lifting step.
    """

    Q: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    ineq_tags: list[str] = field(default_factory=list)
    offset: float = 0.0
    n_primary: int | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        n = self.Q.shape[0]
        if self.A_eq is not None:
            self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_in is not None:
            self.A_in = np.asarray(self.A_in, dtype=float).reshape(-1, n)
            self.b_in = np.asarray(self.b_in, dtype=float).ravel()
            if not self.ineq_tags:
                self.ineq_tags = [TAG_LOCAL] * self.A_in.shape[0]
        if self.n_primary is None:
            self.n_primary = n

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def rows_tagged(self, tag: str) -> np.ndarray:
        """Indices of inequality rows carrying ``tag``."""
        return np.array([i for i, t in enumerate(self.ineq_tags) if t == tag], dtype=int)


@dataclass
class PrimalDualSolution:
    """Primal point plus multipliers for every constraint family."""

    x: np.ndarray
    eq_mult: np.ndarray
    ineq_mult: np.ndarray
    box_lower_mult: np.ndarray
    box_upper_mult: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str = "optimal"


@dataclass
class KktResiduals:
    """The four KKT error norms of a candidate primal-dual pair."""

    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal_feasibility,
                   self.dual_feasibility, self.complementarity)


def kkt_residuals(form: QpStandardForm, sol: PrimalDualSolution) -> KktResiduals:
    """Recompute KKT residuals of ``sol`` for ``form`` from scratch.

    Pure function of the candidate values; does not trust anything cached on
    the solution object.
    """
    x = np.asarray(sol.x, dtype=float)
    grad = form.Q @ x + form.c - sol.box_lower_mult + sol.box_upper_mult
    primal = 0.0
    comp = 0.0
    dual = max(0.0, -_amin(sol.box_lower_mult), -_amin(sol.box_upper_mult))
    if form.A_eq is not None and form.A_eq.shape[0]:
        grad = grad + form.A_eq.T @ sol.eq_mult
        primal = max(primal, np.abs(form.A_eq @ x - form.b_eq).max())
    if form.A_in is not None and form.A_in.shape[0]:
        grad = grad + form.A_in.T @ sol.ineq_mult
        slack = form.b_in - form.A_in @ x
        primal = max(primal, max(0.0, -_amin(slack)))
        dual = max(dual, -_amin(sol.ineq_mult))
        comp = max(comp, np.abs(sol.ineq_mult * slack).max())
    primal = max(primal,
                 max(0.0, (form.lb - x).max()),
                 max(0.0, (x - form.ub).max()))
    comp = max(comp,
               np.abs(sol.box_lower_mult * (x - form.lb)).max(),
               np.abs(sol.box_upper_mult * (form.ub - x)).max())
    return KktResiduals(np.abs(grad).max(), primal, max(0.0, dual), comp)


def _amin(a) -> float:
    a = np.asarray(a)
    return float(a.min()) if a.size else 0.0


def _amax_abs(a: np.ndarray) -> np.ndarray:
    """Row-wise max absolute value; zero for empty trailing axis."""
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1])
    return np.abs(a).max(axis=-1)


def _mv(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    return (mat @ vec[..., None])[..., 0]


def validate_form(form: QpStandardForm) -> None:
    """Raise ValueError on any malformed field of ``form``."""
    n = form.dim
    if form.Q.shape != (n, n):
        raise ValueError("Q must be square")
    for name in ("c", "lb", "ub"):
        v = getattr(form, name)
        if v.shape != (n,):
            raise ValueError(f"{name} has wrong length")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name} must be finite")
    if not np.all(np.isfinite(form.Q)):
        raise ValueError("Q must be finite")
    if np.any(form.lb > form.ub):
        raise ValueError("lb must not exceed ub")
    if np.abs(form.Q - form.Q.T).max() > _PSD_TOL:
        raise ValueError("Q must be symmetric")
    qs = 0.5 * (form.Q + form.Q.T)
    if qs.size and np.linalg.eigvalsh(qs).min() < -_PSD_TOL * max(1.0, np.abs(qs).max()):
        raise ValueError("Q must be positive semidefinite")
    if (form.A_eq is None) != (form.b_eq is None):
        raise ValueError("A_eq and b_eq must be given together")
    if form.A_eq is not None:
        if form.A_eq.shape[1] != n or form.A_eq.shape[0] != form.b_eq.shape[0]:
            raise ValueError("equality system has inconsistent shape")
        if not (np.all(np.isfinite(form.A_eq)) and np.all(np.isfinite(form.b_eq))):
            raise ValueError("equality system must be finite")
    if (form.A_in is None) != (form.b_in is None):
        raise ValueError("A_in and b_in must be given together")
    if form.A_in is not None:
        if form.A_in.shape[1] != n or form.A_in.shape[0] != form.b_in.shape[0]:
            raise ValueError("inequality system has inconsistent shape")
        if not (np.all(np.isfinite(form.A_in)) and np.all(np.isfinite(form.b_in))):
            raise ValueError("inequality system must be finite")
        if len(form.ineq_tags) != form.A_in.shape[0]:
            raise ValueError("ineq_tags length must match A_in rows")


class QpBatch:
    """A stack of same-shape QPs solved by one interior-point loop.

    Low-level repeated-solve API: the constituent matrices are assembled
    once; callers may overwrite entries of ``b_in`` and ``ub`` between
    ``solve`` calls (the relaxed local problems of the distributed method
    only change their coupling right-hand side from round to round).

    All forms in a batch must agree on dimension, equality row count,
    inequality row count and on which variables are pinned (lb == ub).
    """

    def __init__(self, forms: list[QpStandardForm], validate: bool = True):
        if not forms:
            raise ValueError("empty batch")
        if validate:
            for f in forms:
                validate_form(f)
        first = forms[0]
        n = first.dim
        fixed = np.abs(first.ub - first.lb) <= _FIX_TOL
        m_in = 0 if first.A_in is None else first.A_in.shape[0]
        m_eq = 0 if first.A_eq is None else first.A_eq.shape[0]
        for f in forms[1:]:
            same = (f.dim == n
                    and (0 if f.A_in is None else f.A_in.shape[0]) == m_in
                    and (0 if f.A_eq is None else f.A_eq.shape[0]) == m_eq
                    and np.array_equal(np.abs(f.ub - f.lb) <= _FIX_TOL, fixed))
            if not same:
                raise ValueError("batched problems must share their shape")
        self.forms = forms
        self.n = n
        self.m_in = m_in
        self.m_eq = m_eq
        self.fixed = fixed
        self.free = ~fixed
        nf = int(self.free.sum())
        B = len(forms)
        self.Q = np.stack([0.5 * (f.Q + f.Q.T) for f in forms])
        self.c = np.stack([f.c for f in forms])
        self.lb = np.stack([f.lb for f in forms])
        self.ub = np.stack([f.ub for f in forms])
        self.b_in = (np.stack([f.b_in for f in forms])
                     if m_in else np.zeros((B, 0)))
        a_in = (np.stack([f.A_in for f in forms])
                if m_in else np.zeros((B, 0, n)))
        # Internal equality system: user rows then one row per pinned variable.
        n_fix = int(fixed.sum())
        self.me = m_eq + n_fix
        self.A = np.zeros((B, self.me, n))
        self.b = np.zeros((B, self.me))
        if m_eq:
            self.A[:, :m_eq, :] = np.stack([f.A_eq for f in forms])
            self.b[:, :m_eq] = np.stack([f.b_eq for f in forms])
        if n_fix:
            cols = np.where(fixed)[0]
            self.A[:, m_eq + np.arange(n_fix), cols] = 1.0
            self.b[:, m_eq:] = self.lb[:, cols]
        # Inequality system: user rows, then lower and upper box rows of the
        # free variables.  Only h changes between repeated solves.
        eye = np.eye(n)[self.free]
        self.mi = m_in + 2 * nf
        self.G = np.concatenate(
            [a_in, np.broadcast_to(-eye, (B, nf, n)), np.broadcast_to(eye, (B, nf, n))],
            axis=1)
        self.GT = np.ascontiguousarray(self.G.transpose(0, 2, 1))
        self.AT = np.ascontiguousarray(self.A.transpose(0, 2, 1))
        self._warm: tuple[np.ndarray, np.ndarray] | None = None

    def _h(self) -> np.ndarray:
        return np.concatenate(
            [self.b_in, -self.lb[:, self.free], self.ub[:, self.free]], axis=1)

    def solve(self, tol: float = 1e-8, max_iter: int = 200,
              warm: bool = False) -> list[PrimalDualSolution]:
        """Solve all batched problems.

        With ``warm=True`` (and a previous solve on this batch) the
        interior-point loop starts from the last solution, which typically
        cuts iterations in half when only right-hand sides moved.  A warm
        start that breaks down is retried cold before being diagnosed, so
        warm solves are never less robust than cold ones.
        """
        h = self._h()
        x0 = 0.5 * (self.lb + self.ub)
        if self.mi == 0:
            # Every variable pinned: x is fixed, multipliers from stationarity.
            B = len(self.forms)
            y = np.stack([np.linalg.lstsq(self.AT[k], -(self.Q[k] @ x0[k] + self.c[k]),
                                          rcond=None)[0] for k in range(B)])
            return self._unpack(x0, y, np.zeros((B, 0)), np.zeros(B, dtype=int))
        start = self._warm if warm and self._warm is not None else (x0, None)
        x, y, z, iters, res = _ipm(self.Q, self.c, self.A, self.b, self.AT,
                                   self.G, self.GT, h, start[0], tol, max_iter,
                                   z_init=start[1])
        if np.any(iters < 0) and start[1] is not None:
            x, y, z, iters, res = _ipm(self.Q, self.c, self.A, self.b, self.AT,
                                       self.G, self.GT, h, x0, tol, max_iter)
        for k in np.where(iters < 0)[0]:
            # Degenerate optima (weakly active rows) can stall the interior
            # point above tol; an active-set crossover from the best iterate
            # usually lands on the exact solution.
            fix = _polish(self.Q[k], self.c[k], self.A[k], self.b[k],
                          self.G[k], h[k], x[k], z[k], tol)
            if fix is not None:
                x[k], y[k], z[k] = fix
                iters[k] = max_iter
        failed = np.where(iters < 0)[0]
        if failed.size:
            k = int(failed[0])
            self._diagnose(k, x0[k], h[k], int(max_iter), float(res[k]))
        self._warm = (x.copy(), z.copy())
        return self._unpack(x, y, z, iters)

    def _effective_form(self, k: int) -> QpStandardForm:
        """Form ``k`` with the batch's current right-hand sides.

        ``b_in`` and ``ub`` may have been overwritten since construction;
        certificates must grade the problem actually solved.
        """
        kwargs: dict = {"lb": self.lb[k].copy(), "ub": self.ub[k].copy()}
        if self.m_in:
            kwargs["b_in"] = self.b_in[k].copy()
        return dataclasses.replace(self.forms[k], **kwargs)

    def _diagnose(self, k: int, x0: np.ndarray, h: np.ndarray,
                  iterations: int, residual: float):
        """Classify a failed element: inconsistent equalities, infeasible, or breakdown."""
        A, b, G = self.A[k], self.b[k], self.G[k]
        if self.me:
            xls, *_ = np.linalg.lstsq(A, b, rcond=None)
            r = A @ xls - b
            if np.abs(r).max() > 1e-7 * (1.0 + np.abs(b).max()):
                cert = -r / np.linalg.norm(r)
                raise QpInfeasibleError(
                    f"equality system inconsistent (element {k})", certificate=cert)
        t_star, cert = _phase1(A, b, G, h, x0)
        if t_star > 1e-6:
            raise QpInfeasibleError(
                f"no feasible point (element {k}, phase-1 slack {t_star:.3e})",
                certificate=cert)
        raise QpNumericalError(
            f"interior-point breakdown on a feasible problem (element {k})",
            iterations=iterations, residual=residual)

    def _unpack(self, x, y, z, iters) -> list[PrimalDualSolution]:
        B = len(self.forms)
        nf = int(self.free.sum())
        lo = np.zeros((B, self.n))
        hi = np.zeros((B, self.n))
        lo[:, self.free] = z[:, self.m_in:self.m_in + nf]
        hi[:, self.free] = z[:, self.m_in + nf:]
        if self.fixed.any():
            theta = y[:, self.m_eq:]
            lo[:, self.fixed] = np.maximum(0.0, -theta)
            hi[:, self.fixed] = np.maximum(0.0, theta)
        obj = 0.5 * np.einsum("bi,bij,bj->b", x, self.Q, x) + np.einsum("bi,bi->b", self.c, x)
        sols = []
        for k in range(B):
            form = self._effective_form(k)
            sol = PrimalDualSolution(
                x=x[k].copy(),
                eq_mult=y[k, :self.m_eq].copy(),
                ineq_mult=z[k, :self.m_in].copy(),
                box_lower_mult=lo[k],
                box_upper_mult=hi[k],
                objective=float(obj[k]) + form.offset,
                kkt_residual=0.0,
                iterations=int(iters[k]))
            sol.kkt_residual = kkt_residuals(form, sol).max
            sols.append(sol)
        return sols


def solve_qp(form: QpStandardForm, tol: float = 1e-8, max_iter: int = 200,
             validate: bool = True) -> PrimalDualSolution:
    """Solve one QP and return a certified primal-dual pair.

    Parameters
    ----------
    form : QpStandardForm
        Problem data; boxes must be finite.
    tol : float
        Target for the recomputed KKT residual (max of the four norms).
    max_iter : int
        Interior-point iteration cap.
    validate : bool
        Check the form invariants (symmetry, PSD within 1e-9, shapes) first.

    Raises
    ------
    QpInfeasibleError
        After a phase-1 feasibility solve certifies there is no feasible point.
    QpNumericalError
        Breakdown on a problem phase 1 believes is feasible.
    """
    return QpBatch([form], validate=validate).solve(tol=tol, max_iter=max_iter)[0]


def _max_step(v: np.ndarray, dv: np.ndarray) -> np.ndarray:
    """Largest alpha per batch row keeping v + alpha*dv >= 0 (capped at 1)."""
    ratio = np.full_like(v, np.inf)
    np.divide(v, -dv, out=ratio, where=dv < 0)
    return np.minimum(ratio.min(axis=-1), 1.0)


def _solve_kkt(K, rhs, n, me):
    """Solve the batched quasi-definite systems, degrading gracefully.

    The fast path factorizes the whole batch at once.  An exactly singular
    element (possible at degenerate optima where whole rows shrink to
    rounding level) poisons the batched call, so on failure each element is
    retried alone with growing regularization and finally least squares,
    which never raises; the outer safeguards absorb a poor direction.
    """
    try:
        return np.linalg.solve(K, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(rhs)
    diag = np.arange(n + me)
    for k in range(K.shape[0]):
        try:
            out[k] = np.linalg.solve(K[k], rhs[k])
            continue
        except np.linalg.LinAlgError:
            pass
        kk = K[k].copy()
        kk[diag[:n], diag[:n]] += 1e-8
        kk[diag[n:], diag[n:]] -= 1e-8
        try:
            out[k] = np.linalg.solve(kk, rhs[k])
        except np.linalg.LinAlgError:
            out[k] = np.linalg.lstsq(kk, rhs[k], rcond=None)[0]
    return out


def _polish(Q, c, A, b, G, h, x0, z0, tol, max_rounds=50):
    """Active-set crossover for one stalled element.

    Guesses the active inequality rows from an interior-point iterate,
    solves the equality-constrained KKT system, and repairs the guess with
    the primal-dual rule act = {i : z_i - (h_i - G_i x) > 0} until the KKT
    residual meets tol.  Returns (x, y, z) or None if no visited active set
    qualifies; weakly active rows resolve to either side with a zero
    multiplier, which is exactly the case that stalls the interior point.
    """
    n = x0.size
    me = A.shape[0]
    mi = G.shape[0]
    s0 = np.maximum(h - G @ x0, 0.0)
    act = z0 > np.maximum(s0, 1e-10)
    seen = set()
    for _ in range(max_rounds):
        key = act.tobytes()
        if key in seen:
            return None
        seen.add(key)
        Ga = G[act]
        ma = int(act.sum())
        K = np.zeros((n + me + ma, n + me + ma))
        K[:n, :n] = Q
        K[:n, n:n + me] = A.T
        K[n:n + me, :n] = A
        K[:n, n + me:] = Ga.T
        K[n + me:, :n] = Ga
        rhs = np.concatenate([-c, b, h[act]])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        x = sol[:n]
        y = sol[n:n + me]
        z = np.zeros(mi)
        z[act] = sol[n + me:]
        slack = h - G @ x
        res = max(
            _amax_abs(Q @ x + c + G.T @ z + A.T @ y),
            _amax_abs(A @ x - b) if me else 0.0,
            max(0.0, -_amin(slack)),
            max(0.0, -_amin(z)),
            float(np.abs(z * slack).max()) if mi else 0.0)
        if res <= tol:
            return x, y, z
        act = (z - slack) > 0.0
    return None


def _ipm(Q, c, A, b, AT, G, GT, h, x0, tol, max_iter, z_init=None):
    """Batched Mehrotra predictor-corrector loop.

    Returns final (x, y, z, iters, res); iters[k] is the iteration at which
    element k converged, or -1 if it never did.  ``z_init`` warm-starts the
    inequality multipliers (floored away from the boundary).
    """
    B, n = c.shape
    me = b.shape[1]
    mi = h.shape[1]
    x = x0.copy()
    if z_init is None:
        s = np.maximum(h - _mv(G, x), 1.0)
        z = np.ones((B, mi))
    else:
        s = np.maximum(h - _mv(G, x), 1e-3)
        z = np.maximum(z_init, 1e-3)
    y = np.zeros((B, me))
    iters = np.full(B, -1, dtype=int)
    failed = np.zeros(B, dtype=bool)
    res = np.full(B, np.inf)
    best_res = np.full(B, np.inf)
    best_x, best_y, best_z = x.copy(), y.copy(), z.copy()
    last_improve = 0
    reg = 1e-12
    diag = np.arange(n + me)
    it = 0
    while True:
        rd = _mv(Q, x) + c + _mv(GT, z) + _mv(AT, y)
        rp = _mv(A, x) - b
        gx = _mv(G, x)
        rg = gx + s - h
        comp = s * z
        res = np.maximum.reduce([
            _amax_abs(rd), _amax_abs(rp), _amax_abs(rg),
            _amax_abs(z * (h - gx)),
        ])
        improved = np.isfinite(res) & (res < 0.999 * best_res)
        if improved.any():
            best_res[improved] = res[improved]
            best_x[improved] = x[improved]
            best_y[improved] = y[improved]
            best_z[improved] = z[improved]
            last_improve = it
        newly = (iters < 0) & ~failed & (res <= tol) & np.isfinite(res)
        iters[newly] = it
        active = (iters < 0) & ~failed
        # Ill-conditioning near a degenerate optimum can blow up late
        # iterates; stop on divergence or a long stall, and fall back to
        # the best iterate seen for any element that never reached tol.
        if not active.any() or it >= max_iter or it - last_improve > 30:
            break
        it += 1
        mu = comp.mean(axis=1)
        failed |= active & (~np.isfinite(mu) | (mu > 1e18)
                            | (~np.isfinite(res))
                            | ((res > 1e4 * best_res) & (res > 1.0)))
        active &= ~failed
        if not active.any():
            break
        w = z / s
        K = np.zeros((B, n + me, n + me))
        K[:, :n, :n] = Q + (GT * w[:, None, :]) @ G
        K[:, :n, n:] = AT
        K[:, n:, :n] = A
        K[:, diag[:n], diag[:n]] += reg
        K[:, diag[n:], diag[n:]] -= reg
        # Converged and failed elements stop moving; swap their systems for
        # the identity so stale values never poison the batched factorize.
        dead = np.where(~active)[0]
        if dead.size:
            K[dead] = 0.0
            K[dead[:, None], diag, diag] = 1.0
        rhs = np.empty((B, n + me))
        rhs[:, n:] = -rp

        def newton(rc_vec):
            rhs[:, :n] = -(rd + _mv(GT, (z * rg - rc_vec) / s))
            if dead.size:
                rhs[dead] = 0.0
            d = _solve_kkt(K, rhs, n, me)
            dx, dy = d[:, :n], d[:, n:]
            ds = -rg - _mv(G, dx)
            dz = (-rc_vec - z * ds) / s
            return dx, dy, ds, dz

        dx, dy, ds, dz = newton(comp)
        ap = _max_step(s, ds)
        ad = _max_step(z, dz)
        mu_aff = ((s + ap[:, None] * ds) * (z + ad[:, None] * dz)).mean(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            sigma = np.clip((mu_aff / mu) ** 3, 1e-10, 0.99)
        sigma = np.where(np.isfinite(sigma), sigma, 0.5)
        rc_vec = comp + ds * dz - (sigma * mu)[:, None]
        dx, dy, ds, dz = newton(rc_vec)
        step = np.where(active, 0.995, 0.0)
        ap = step * _max_step(s, ds)
        ad = step * _max_step(z, dz)
        finite = np.isfinite(dx).all(axis=1) & np.isfinite(dz).all(axis=1) \
            & np.isfinite(dy).all(axis=1) & np.isfinite(ds).all(axis=1)
        ap = np.where(finite, ap, 0.0)
        ad = np.where(finite, ad, 0.0)
        x += ap[:, None] * dx
        s += ap[:, None] * ds
        y += ad[:, None] * dy
        z += ad[:, None] * dz
    unconverged = iters < 0
    if unconverged.any():
        x[unconverged] = best_x[unconverged]
        y[unconverged] = best_y[unconverged]
        z[unconverged] = best_z[unconverged]
        res = np.minimum(res, best_res)
    return x, y, z, iters, res


def _phase1(A, b, G, h, x0):
    """Minimize the worst inequality violation; equalities are kept hard.

    Returns (t_star, certificate) where the certificate stacks the
    normalized inequality multipliers (a Farkas direction when t_star > 0).
    """
    n = x0.size
    mi = G.shape[0]
    me = A.shape[0]
    Q1 = np.zeros((n + 1, n + 1))
    c1 = np.zeros(n + 1)
    c1[-1] = 1.0
    A1 = np.concatenate([A, np.zeros((me, 1))], axis=1)
    G1 = np.zeros((mi + 1, n + 1))
    G1[:mi, :n] = G
    G1[:mi, n] = -1.0
    G1[mi, n] = -1.0
    h1 = np.concatenate([h, [1.0]])
    t0 = max(0.0, float((G @ x0 - h).max())) + 1.0
    x01 = np.concatenate([x0, [t0]])
    x, y, z, iters, res = _ipm(
        Q1[None], c1[None], A1[None], b[None], A1.T[None].copy(),
        G1[None], G1.T[None].copy(), h1[None], x01[None], 1e-9, 300)
    if iters[0] < 0:
        raise QpNumericalError("phase-1 feasibility solve broke down",
                               iterations=300, residual=float(res[0]))
    t_star = float(x[0, -1])
    zg = z[0, :mi]
    total = zg.sum()
    cert = zg / total if total > 0 else zg
    return t_star, cert


def lift_hinges(agent: "AgentProblem") -> QpStandardForm:
    """Rewrite an agent's hinge cost terms as epigraph variables.

    Each term ``scale * max(0, a'x + b)`` becomes a new variable e with cost
    ``scale * e``, bounds ``0 <= e <= e_max`` and the row ``a'x - e <= -b``
    (tagged "hinge").  ``e_max`` is a safe upper bound from interval
    arithmetic over the agent's box, padded so it is never active at an
    optimum.  The lifted QP minimizes the agent cost over its local set;
    coupling rows are not included.
    """
    n = agent.dim
    hinges = agent.cost_hinges
    k = len(hinges)
    ls = agent.local_set
    Q = np.zeros((n + k, n + k))
    Q[:n, :n] = agent.cost_quadratic
    c = np.concatenate([agent.cost_linear, [hg.scale for hg in hinges]])
    e_hi = np.empty(k)
    for j, hg in enumerate(hinges):
        top = np.maximum(hg.coeffs * ls.lb, hg.coeffs * ls.ub).sum() + hg.offset
        e_hi[j] = max(0.0, top) + 1.0
    lb = np.concatenate([ls.lb, np.zeros(k)])
    ub = np.concatenate([ls.ub, e_hi])
    a_eq = b_eq = None
    if ls.a_eq is not None:
        a_eq = np.concatenate([ls.a_eq, np.zeros((ls.a_eq.shape[0], k))], axis=1)
        b_eq = ls.b_eq.copy()
    rows = []
    rhs = []
    tags = []
    if ls.a_in is not None:
        rows.append(np.concatenate([ls.a_in, np.zeros((ls.a_in.shape[0], k))], axis=1))
        rhs.append(ls.b_in)
        tags += [TAG_LOCAL] * ls.a_in.shape[0]
    if k:
        hinge_rows = np.zeros((k, n + k))
        for j, hg in enumerate(hinges):
            hinge_rows[j, :n] = hg.coeffs
            hinge_rows[j, n + j] = -1.0
        rows.append(hinge_rows)
        rhs.append(np.array([-hg.offset for hg in hinges]))
        tags += [TAG_HINGE] * k
    a_in = np.concatenate(rows, axis=0) if rows else None
    b_in = np.concatenate(rhs) if rows else None
    return QpStandardForm(Q=Q, c=c, lb=lb, ub=ub, A_eq=a_eq, b_eq=b_eq,
                          A_in=a_in, b_in=b_in, ineq_tags=tags,
                          offset=agent.cost_constant, n_primary=n)
