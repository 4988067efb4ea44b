"""Continuous LP baseline for the collateral problem.

A dense bounded-variable primal simplex (two phases, Bland's rule) over the
relaxation

    min  sum_ij Omega_ij Q_ij
    s.t. sum_j Q_ij <= 1                       per asset
         sum_i Q_ij a_i v_i H_ij >= c_j        per account
         sum_i T_ig Q_ij a_i <= K_gj           per group and account
         0 <= Q_ij <= min(1, B_ij / a_i)

Exposure rows are divided by c_j (rows with c_j = 0 are dropped, they hold
for any nonnegative Q) and group rows by their largest coefficient before
solving; reported duals are in the original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from collateral_qubo.model import CollateralInstance, FeasibilityReport, omega_matrix

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
_PIVOT_TOL = 1e-11
_ENTER_TOL = 1e-10


class ContractError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LpProblem:
    """Scaled standard-form data: rows ``A x (sense) b`` and bounds on x."""

    A: np.ndarray
    b: np.ndarray
    sense: tuple[str, ...]  # "L" (<=) or "G" (>=) per row
    row_names: tuple[str, ...]
    row_scale: np.ndarray
    cost: np.ndarray
    upper: np.ndarray
    shape: tuple[int, int]

    @classmethod
    def from_instance(cls, instance: CollateralInstance) -> "LpProblem":
        n, m = instance.n, instance.m
        nv = n * m
        a = instance.quantities
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(a[:, None] > 0, instance.limits / a[:, None], np.inf)
        upper = np.minimum(1.0, ratio).ravel()

        rows, rhs, sense, names, scale = [], [], [], [], []
        for i in range(n):
            r = np.zeros(nv)
            r[i * m:(i + 1) * m] = 1.0
            rows.append(r); rhs.append(1.0); sense.append("L")
            names.append(f"CON_{i}"); scale.append(1.0)
        value = instance.collateral_value()
        for j, c in enumerate(instance.exposures):
            if c <= 0:
                continue
            r = np.zeros(nv)
            r[j::m] = value[:, j] / c
            rows.append(r); rhs.append(1.0); sense.append("G")
            names.append(f"EXP_{j}"); scale.append(1.0 / c)
        for g in range(instance.n_groups):
            coef = instance.group_membership[:, g] * a
            s = 1.0 / coef.max() if coef.max() > 0 else 1.0
            for j in range(m):
                r = np.zeros(nv)
                r[j::m] = coef * s
                rows.append(r); rhs.append(instance.group_caps[g, j] * s)
                sense.append("L"); names.append(f"GRP_{g}_{j}"); scale.append(s)

        return cls(
            A=np.array(rows).reshape(len(rows), nv),
            b=np.array(rhs),
            sense=tuple(sense),
            row_names=tuple(names),
            row_scale=np.array(scale),
            cost=omega_matrix(instance).ravel(),
            upper=upper,
            shape=(n, m),
        )


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "iteration-limit"
    Q: np.ndarray
    objective: float
    iterations: int
    duals: dict = field(default_factory=dict)
    reduced_costs: np.ndarray | None = None
    certificate: dict = field(default_factory=dict)


def _simplex(A, b, cost, lo, hi, basis, at_upper, max_iter):
    """Bounded-variable primal simplex from a feasible basis.

    Returns (state, iterations, x, y) with state "optimal", "unbounded" or
    "iteration-limit". ``basis`` and ``at_upper`` are updated in place.
    """
    m, nvar = A.shape
    it = 0
    while True:
        nonbasic = np.ones(nvar, dtype=bool)
        nonbasic[basis] = False
        xN = np.where(at_upper, hi, lo)
        xN[~nonbasic] = 0.0
        Bm = A[:, basis]
        xB = np.linalg.solve(Bm, b - A @ xN)
        y = np.linalg.solve(Bm.T, cost[basis])
        d = cost - A.T @ y
        x = xN.copy()
        x[basis] = xB

        entering = -1
        for j in range(nvar):
            if not nonbasic[j] or hi[j] - lo[j] <= 0:
                continue
            if (not at_upper[j] and d[j] < -_ENTER_TOL) or (at_upper[j] and d[j] > _ENTER_TOL):
                entering = j
                break
        if entering < 0:
            return "optimal", it, x, y
        if it >= max_iter:
            return "iteration-limit", it, x, y

        j = entering
        direction = -1.0 if at_upper[j] else 1.0
        alpha = np.linalg.solve(Bm, A[:, j])
        step = hi[j] - lo[j]  # bound flip
        leave_pos, leave_var, leave_to_upper = -1, nvar, False
        for r, var in enumerate(basis):
            change = -direction * alpha[r]
            if change < -_PIVOT_TOL:
                t = max(0.0, (xB[r] - lo[var]) / -change)
                to_upper = False
            elif change > _PIVOT_TOL and math.isfinite(hi[var]):
                t = max(0.0, (hi[var] - xB[r]) / change)
                to_upper = True
            else:
                continue
            if t < step - 1e-12 or (abs(t - step) <= 1e-12 and leave_pos >= 0 and var < leave_var):
                step, leave_pos, leave_var, leave_to_upper = t, r, var, to_upper
        if not math.isfinite(step):
            return "unbounded", it, x, y
        it += 1
        if leave_pos < 0:
            at_upper[j] = not at_upper[j]
            continue
        basis[leave_pos] = j
        at_upper[j] = False
        at_upper[leave_var] = leave_to_upper


def solve_lp(instance: CollateralInstance, max_iter: int = 100_000) -> LpSolution:
    """Solve the continuous relaxation to a certified optimum.

    Returns status "infeasible" when the phase-one artificial sum stays above
    the feasibility tolerance, and "iteration-limit" with the current basis
    when ``max_iter`` pivots are exhausted.
    """
    lp = LpProblem.from_instance(instance)
    n, m = lp.shape
    nv = n * m
    nrow = lp.b.size

    # columns: structurals | row slacks | artificials for ">=" rows
    slack_sign = np.array([1.0 if s == "L" else -1.0 for s in lp.sense])
    art_rows = [r for r, s in enumerate(lp.sense) if s == "G"]
    na = len(art_rows)
    A = np.zeros((nrow, nv + nrow + na))
    A[:, :nv] = lp.A
    A[np.arange(nrow), nv + np.arange(nrow)] = slack_sign
    for k, r in enumerate(art_rows):
        A[r, nv + nrow + k] = 1.0
    lo = np.zeros(A.shape[1])
    hi = np.concatenate([lp.upper, np.full(nrow, np.inf), np.full(na, np.inf)])
    at_upper = np.zeros(A.shape[1], dtype=bool)
    art_of = dict(zip(art_rows, range(na)))
    basis = [nv + nrow + art_of[r] if r in art_of else nv + r for r in range(nrow)]

    total_it = 0
    if na:
        c1 = np.zeros(A.shape[1])
        c1[nv + nrow:] = 1.0
        state, it, x, _ = _simplex(A, lp.b, c1, lo, hi, basis, at_upper, max_iter)
        total_it += it
        if state == "iteration-limit":
            return _package(lp, instance, "iteration-limit", x, None, None, total_it)
        if x[nv + nrow:].sum() > FEAS_TOL:
            return _package(lp, instance, "infeasible", x, None, None, total_it)
        hi[nv + nrow:] = 0.0
        at_upper[nv + nrow:] = False

    c2 = np.concatenate([lp.cost, np.zeros(nrow + na)])
    state, it, x, y = _simplex(A, lp.b, c2, lo, hi, basis, at_upper, max_iter - total_it)
    total_it += it
    if state != "optimal":
        return _package(lp, instance, "iteration-limit", x, None, None, total_it)
    d = c2 - A.T @ y
    return _package(lp, instance, "optimal", x, y, d, total_it, hi=hi)


def _package(lp, instance, status, x, y, d, iterations, hi=None) -> LpSolution:
    n, m = lp.shape
    nv = n * m
    Q = np.clip(x[:nv], 0.0, None).reshape(n, m)
    Q.setflags(write=False)
    objective = float(lp.cost @ Q.ravel())
    if status != "optimal":
        return LpSolution(status=status, Q=Q, objective=objective, iterations=iterations)

    duals = {"consistency": np.zeros(n), "exposure": np.zeros(m),
             "group": np.zeros((instance.n_groups, m))}
    for r, name in enumerate(lp.row_names):
        kind, *idx = name.split("_")
        val = float(y[r] * lp.row_scale[r])
        if kind == "CON":
            duals["consistency"][int(idx[0])] = val
        elif kind == "EXP":
            duals["exposure"][int(idx[0])] = val
        else:
            duals["group"][int(idx[0]), int(idx[1])] = val

    activity = lp.A @ x[:nv]
    row_gap = np.where(np.array(lp.sense) == "L", lp.b - activity, activity - lp.b)
    dstruct = d[:nv]
    xs, ub = x[:nv], hi[:nv]
    var_cs = np.maximum(dstruct, 0) * (xs - 0.0) + np.maximum(-dstruct, 0) * (ub - xs)
    # with d = c - A^T y, "<=" rows need y <= 0 and ">=" rows y >= 0
    sign_ok = np.where(np.array(lp.sense) == "L", -y, y)
    certificate = {
        "primal_infeasibility": float(max(0.0, -row_gap.min(initial=0.0),
                                          -xs.min(), (xs - ub).max())),
        "dual_infeasibility": float(max(0.0, -sign_ok.min(initial=0.0))),
        "complementary_slackness": float(max(np.abs(y * row_gap).max(initial=0.0),
                                             var_cs.max(initial=0.0))),
    }
    return LpSolution(
        status=status,
        Q=Q,
        objective=objective,
        iterations=iterations,
        duals=duals,
        reduced_costs=dstruct.reshape(n, m),
        certificate=certificate,
    )


def lp_gap(lp: LpSolution, report: FeasibilityReport) -> float:
    """Objective excess of a decoded solution over the LP optimum."""
    if lp.status != "optimal":
        raise ContractError(f"LP status is {lp.status!r}, not optimal")
    return report.objective - lp.objective


def write_mps(instance: CollateralInstance, path: str | Path) -> None:
    """Unscaled relaxation in fixed-format MPS, columns ``Q_i_j`` row-major."""
    n, m = instance.n, instance.m
    omega = omega_matrix(instance)
    value = instance.collateral_value()
    a = instance.quantities
    lines = ["NAME          COLLATERAL", "ROWS", " N  COST"]
    lines += [f" L  CON_{i}" for i in range(n)]
    lines += [f" G  EXP_{j}" for j in range(m)]
    lines += [f" L  GRP_{g}_{j}" for g in range(instance.n_groups) for j in range(m)]
    lines.append("COLUMNS")
    for i in range(n):
        for j in range(m):
            col = f"Q_{i}_{j}"
            entries = [("COST", omega[i, j]), (f"CON_{i}", 1.0), (f"EXP_{j}", value[i, j])]
            entries += [(f"GRP_{g}_{j}", a[i]) for g in range(instance.n_groups)
                        if instance.group_membership[i, g]]
            for row, v in entries:
                lines.append(f"    {col:<8}  {row:<8}  {v:.12g}")
    lines.append("RHS")
    lines += [f"    RHS       CON_{i:<4}  1" for i in range(n)]
    lines += [f"    RHS       {'EXP_' + str(j):<8}  {c:.12g}" for j, c in enumerate(instance.exposures)]
    lines += [f"    RHS       {'GRP_%d_%d' % (g, j):<8}  {instance.group_caps[g, j]:.12g}"
              for g in range(instance.n_groups) for j in range(m)]
    lines.append("BOUNDS")
    for i in range(n):
        for j in range(m):
            ub = 1.0 if a[i] <= 0 else min(1.0, instance.limits[i, j] / a[i])
            lines.append(f" UP BND       {'Q_%d_%d' % (i, j):<8}  {ub:.12g}")
    lines.append("ENDATA")
    Path(path).write_text("\n".join(lines) + "\n")
