"""Shared numerical optimizers: limited-memory quasi-Newton and CG.

Both are deterministic for fixed inputs (no randomized restarts, fixed
reduction order), which the reporting layer relies on.  The L-BFGS
objective may return +inf to reject a trial point (used as a barrier to
keep dist2-based energies on the det > 0 branch); the Wolfe line search
treats such points as "too far" and backtracks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndefiniteForm


@dataclass
class OptResult:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    converged: bool
    n_evals: int
    status: str  # converged | max_iter | line_search_stall


def _strong_wolfe(fg, x, f0, g0, d, c1, c2, alpha0, max_evals=30):
    """Strong-Wolfe line search (bracket + zoom).

    Returns (alpha, f, g, n_evals) or (None, ...) when no acceptable step
    was found.  phi(alpha) = f(x + alpha d); +inf values shrink the bracket.
    """
    dphi0 = float(np.dot(g0, d))
    evals = 0
    cache = {}

    def phi(a):
        nonlocal evals
        if a in cache:
            return cache[a]
        fa, ga = fg(x + a * d)
        evals += 1
        cache[a] = (fa, ga)
        return fa, ga

    amax = 1e10
    a_prev, f_prev = 0.0, f0
    a = alpha0
    f_a, g_a = None, None
    bracket = None
    for _ in range(max_evals):
        f_a, g_a = phi(a)
        if not np.isfinite(f_a):
            # barrier hit: bracket between the last finite point and a
            bracket = (a_prev, f_prev, a)
            break
        if f_a > f0 + c1 * a * dphi0 or (a_prev > 0.0 and f_a >= f_prev):
            bracket = (a_prev, f_prev, a)
            break
        dphi_a = float(np.dot(g_a, d))
        if abs(dphi_a) <= -c2 * dphi0:
            return a, f_a, g_a, evals
        if dphi_a >= 0.0:
            bracket = (a, f_a, a_prev)
            break
        a_prev, f_prev = a, f_a
        a = min(2.0 * a, amax)
    if bracket is None:
        return None, f_a, g_a, evals

    lo, f_lo, hi = bracket
    g_lo = None
    for _ in range(max_evals):
        if evals >= max_evals:
            break
        aj = 0.5 * (lo + hi)
        f_j, g_j = phi(aj)
        if not np.isfinite(f_j) or f_j > f0 + c1 * aj * dphi0 or f_j >= f_lo:
            hi = aj
        else:
            dphi_j = float(np.dot(g_j, d))
            if abs(dphi_j) <= -c2 * dphi0:
                return aj, f_j, g_j, evals
            if dphi_j * (hi - lo) >= 0.0:
                hi = lo
            lo, f_lo, g_lo = aj, f_j, g_j
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    if g_lo is not None and lo > 0.0:
        # sufficient decrease holds at lo even if curvature was not met
        return lo, f_lo, g_lo, evals
    return None, None, None, evals


def _armijo(fg, x, f0, g0, d, c1, alpha0, max_evals=40):
    """Backtracking sufficient-decrease search; returns like _strong_wolfe."""
    dphi0 = float(np.dot(g0, d))
    a = alpha0
    evals = 0
    for _ in range(max_evals):
        fa, ga = fg(x + a * d)
        evals += 1
        if np.isfinite(fa) and fa <= f0 + c1 * a * dphi0:
            return a, fa, ga, evals
        a *= 0.5
    return None, None, None, evals


def minimize_lbfgs(
    fg,
    x0,
    gtol=1e-8,
    max_iter=5000,
    memory=10,
    c1=1e-4,
    c2=0.9,
    callback=None,
):
    """Limited-memory BFGS with strong-Wolfe line search.

    fg(x) -> (f, grad).  Convergence on the max-norm of the gradient.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fg(x)
    n_evals = 1
    if not np.isfinite(f):
        raise ValueError("objective not finite at the starting point")
    S, Y, RHO = [], [], []
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= gtol:
            status = "converged"
            it -= 1
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a_i = rho * np.dot(s, q)
            alphas.append(a_i)
            q -= a_i * y
        if Y:
            gamma = np.dot(S[-1], Y[-1]) / max(np.dot(Y[-1], Y[-1]), 1e-300)
            q *= gamma
        for (s, y, rho), a_i in zip(zip(S, Y, RHO), reversed(alphas)):
            b_i = rho * np.dot(y, q)
            q += (a_i - b_i) * s
        d = -q
        if np.dot(d, g) >= 0.0:
            # stale curvature pairs; restart from steepest descent
            S, Y, RHO = [], [], []
            d = -g
        alpha0 = 1.0 if Y else min(1.0, 1.0 / max(gnorm, 1e-12))
        alpha, f_new, g_new, ev = _strong_wolfe(fg, x, f, g, d, c1, c2, alpha0)
        n_evals += ev
        if alpha is None and Y:
            # stale quasi-Newton direction; restart with an Armijo-only
            # steepest-descent step (the curvature condition can be
            # unsatisfiable near kinks of a.e.-smooth energies)
            S, Y, RHO = [], [], []
            d = -g
            alpha, f_new, g_new, ev = _armijo(
                fg, x, f, g, d, c1, min(1.0, 1.0 / max(gnorm, 1e-12))
            )
            n_evals += ev
        if alpha is None:
            status = "line_search_stall"
            break
        s_vec = alpha * d
        y_vec = g_new - g
        sy = float(np.dot(s_vec, y_vec))
        if sy > 1e-14 * float(np.linalg.norm(s_vec)) * float(np.linalg.norm(y_vec)):
            S.append(s_vec)
            Y.append(y_vec)
            RHO.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
                RHO.pop(0)
        x = x + s_vec
        f, g = f_new, g_new
        if callback is not None:
            callback(it, x, f, g)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    if status != "converged" and gnorm <= gtol:
        status = "converged"
    return OptResult(
        x=x,
        f=float(f),
        grad_norm=gnorm,
        iterations=it,
        converged=status == "converged",
        n_evals=n_evals,
        status=status,
    )


@dataclass
class CGInfo:
    iterations: int
    residual_norm: float
    converged: bool
    energy_history: list = field(default_factory=list)


def pcg(
    apply_A,
    b,
    x0=None,
    rtol=1e-10,
    max_iter=None,
    precond=None,
    project=None,
    track_energy=False,
):
    """Preconditioned conjugate gradients on an SPD (or PSD + projected) operator.

    `project`, when given, restricts the iteration to a subspace (e.g. the
    mean-zero fields); it is applied to b, the start, and every residual.
    Raises IndefiniteForm when a trial direction has nonpositive curvature.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(10 * n, 100)
    if project is not None:
        b = project(b)
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).copy()
    if project is not None:
        x = project(x)
    r = b - apply_A(x)
    if project is not None:
        r = project(r)
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(np.dot(r, z))
    bnorm = float(np.linalg.norm(b))
    tol = rtol * max(bnorm, 1e-300)
    info = CGInfo(0, float(np.linalg.norm(r)), False)

    def energy(v):
        return 0.5 * float(np.dot(v, apply_A(v))) - float(np.dot(b, v))

    if track_energy:
        info.energy_history.append(energy(x))
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) <= tol:
            info.converged = True
            break
        Ap = apply_A(p)
        if project is not None:
            Ap = project(Ap)
        pAp = float(np.dot(p, Ap))
        if pAp <= 0.0:
            raise IndefiniteForm(f"nonpositive curvature p^T A p = {pAp:.3e}")
        a = rz / pAp
        x = x + a * p
        r = r - a * Ap
        if project is not None:
            r = project(r)
        z = precond(r) if precond is not None else r
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / max(rz, 1e-300)) * p
        rz = rz_new
        info.iterations = it
        if track_energy:
            info.energy_history.append(energy(x))
    else:
        info.converged = float(np.linalg.norm(r)) <= tol
    info.residual_norm = float(np.linalg.norm(r))
    return x, info


def quadratic_fit(h, E, with_constant=True):
    """Least squares fit E ~ c + sigma h + q h^2 (or sigma h + q h^2).

    Returns (coeffs, sigmas, residual_rms): coeffs = (c, sigma, q), with
    one-standard-error estimates per coefficient from the fit residual.
    """
    h = np.asarray(h, dtype=float)
    E = np.asarray(E, dtype=float)
    cols = [np.ones_like(h), h, h * h] if with_constant else [h, h * h]
    X = np.stack(cols, axis=1)
    coef, res, rank, sv = np.linalg.lstsq(X, E, rcond=None)
    r = E - X @ coef
    dof = max(len(h) - X.shape[1], 1)
    s2 = float(np.dot(r, r)) / dof
    XtX_inv = np.linalg.pinv(X.T @ X)
    sig = np.sqrt(np.maximum(np.diag(XtX_inv) * s2, 0.0))
    if not with_constant:
        coef = np.concatenate([[0.0], coef])
        sig = np.concatenate([[0.0], sig])
    return coef, sig, float(np.sqrt(s2))
