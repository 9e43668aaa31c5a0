"""Least-deviation program: project u_nom onto the polyhedron {u : G u >= b}.

Small dense problems only. Infeasible starts go through a phase-1 simplex
(artificial variables, lowest-index anti-cycling pivoting); the projection
itself is a primal active-set iteration on the squared deviation, which has
the same minimizer as the stated norm objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tolerances import EPS_QP

_PIVOT_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class QpResult:
    """Solver outcome; ``u_star`` is None unless status is "optimal"."""

    u_star: np.ndarray | None
    active_set: tuple[int, ...]
    status: str  # "optimal" | "infeasible" | "iteration_limit"
    iterations: int = 0


def _phase1(G: np.ndarray, b: np.ndarray, budget: int):
    """Simplex feasibility phase: minimize total artificial infeasibility.

    Returns (status, feasible point or None, iterations used).
    """
    l, m = G.shape
    sign = np.where(b <= 0.0, -1.0, 1.0)
    Geq = sign[:, None] * G
    beq = sign * b
    art_rows = [k for k in range(l) if b[k] > 0.0]
    n_art = len(art_rows)
    ncols = 2 * m + l + n_art

    T = np.zeros((l, ncols))
    T[:, :m] = Geq
    T[:, m:2 * m] = -Geq
    for k in range(l):
        T[k, 2 * m + k] = -sign[k]
    basis = [0] * l
    for pos, k in enumerate(art_rows):
        T[k, 2 * m + l + pos] = 1.0
        basis[k] = 2 * m + l + pos
    for k in range(l):
        if b[k] <= 0.0:
            basis[k] = 2 * m + k
    rhs = beq.copy()
    cost = np.zeros(ncols)
    cost[2 * m + l:] = 1.0

    used = 0
    while used < budget:
        reduced = cost - cost[basis] @ T
        entering = -1
        for j in range(ncols):
            if j not in basis and reduced[j] < -_PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            break
        ratios = np.full(l, np.inf)
        col = T[:, entering]
        for k in range(l):
            if col[k] > _PIVOT_TOL:
                ratios[k] = rhs[k] / col[k]
        if not np.isfinite(ratios.min()):
            # feasibility objective is bounded below; an unbounded column is
            # numerical noise, so treat the instance as infeasible
            return "infeasible", None, used
        best = ratios.min()
        leave = min(
            (k for k in range(l) if ratios[k] <= best + _PIVOT_TOL),
            key=lambda k: basis[k],
        )
        piv = T[leave, entering]
        T[leave] /= piv
        rhs[leave] /= piv
        for k in range(l):
            if k != leave and abs(T[k, entering]) > 0.0:
                factor = T[k, entering]
                T[k] -= factor * T[leave]
                rhs[k] -= factor * rhs[leave]
        basis[leave] = entering
        used += 1
    else:
        return "iteration_limit", None, used

    obj = float(cost[basis] @ rhs)
    if obj > EPS_QP * (1.0 + float(np.linalg.norm(b))):
        return "infeasible", None, used
    values = np.zeros(ncols)
    values[basis] = rhs
    u0 = values[:m] - values[m:2 * m]
    return "feasible", u0, used


def _active_set(c: np.ndarray, G: np.ndarray, b: np.ndarray, u0: np.ndarray, budget: int) -> QpResult:
    """Primal active-set projection from a feasible start.

    Blocking rows are chosen lowest-index first among the tight ratios;
    constraints leave when their multiplier is negative, again lowest row
    index first (Bland-style anti-cycling).
    """
    l, m = G.shape
    u = u0.astype(float).copy()
    work: list[int] = []
    it = 0
    while it < budget:
        it += 1
        if work:
            Gw = G[work]
            M = Gw @ Gw.T
            target = b[work] - Gw @ c
            try:
                lam = np.linalg.solve(M, target)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(M, target, rcond=None)[0]
            z = c + Gw.T @ lam
        else:
            lam = np.zeros(0)
            z = c.copy()

        d = z - u
        if float(np.linalg.norm(d)) <= EPS_QP * (1.0 + float(np.linalg.norm(u))):
            if work and lam.min() < -EPS_QP:
                drop = min(work[k] for k in range(len(work)) if lam[k] < -EPS_QP)
                work.remove(drop)
                continue
            return QpResult(u_star=z, active_set=tuple(sorted(work)), status="optimal", iterations=it)

        Gd = G @ d
        Gu = G @ u
        alpha = 1.0
        blocker = -1
        for k in range(l):
            if k in work or Gd[k] >= -_PIVOT_TOL:
                continue
            ratio = max((b[k] - Gu[k]) / Gd[k], 0.0)
            if ratio < alpha - _PIVOT_TOL:
                alpha = ratio
                blocker = k
        u = u + alpha * d
        if blocker >= 0:
            work.append(blocker)
    return QpResult(u_star=None, active_set=tuple(sorted(work)), status="iteration_limit", iterations=it)


def solve_least_deviation(u_nom: np.ndarray, G: np.ndarray, b: np.ndarray) -> QpResult:
    """argmin ||u - u_nom|| subject to G u >= b (row-wise).

    Feasible nominal inputs are returned unchanged with an empty active set;
    otherwise a phase-1 simplex finds a feasible start (or certifies the
    polyhedron empty) and the active-set phase projects from there. The total
    iteration budget is 100 (l + m).
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    c = np.asarray(u_nom, dtype=float).reshape(-1)
    l, m = G.shape
    if b.shape[0] != l:
        raise ValueError(f"b has {b.shape[0]} entries, expected {l}")
    if c.shape[0] != m:
        raise ValueError(f"u_nom has {c.shape[0]} entries, expected {m}")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise ValueError("non-finite problem data")

    budget = 100 * (l + m)
    slack = EPS_QP * (1.0 + float(np.linalg.norm(b)))
    if np.min(G @ c - b) >= -slack:
        return _active_set(c, G, b, c, budget)

    status, u0, used = _phase1(G, b, budget)
    if status != "feasible":
        return QpResult(u_star=None, active_set=(), status=status, iterations=used)
    res = _active_set(c, G, b, u0, budget - used)
    return QpResult(
        u_star=res.u_star,
        active_set=res.active_set,
        status=res.status,
        iterations=res.iterations + used,
    )
