"""Robust routing as a second-order cone program.

Every constrained (node, flow) pair contributes one cone

    expected_margin - required_margin - slack >= z * || alpha * sqrt(link_var) ||

and the routing fractions obey transmit/receive budgets. The program is
maximize slack. It is reified as an explicit conic program in the form

    minimize c @ x   s.t.   G @ x + u = h,   u in R+^l x Q^d1 x ... x Q^dm

so any conic backend (Clarabel by default, CVXOPT optionally) can solve it
and tests can inspect it.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .channel import DEFAULT_R_MIN, ChannelParams, LinkRates, link_rates
from .errors import InvalidInputError
from .flows import (FlowSpec, RoutingVars, TeamConfig, allowed_mask, constrained_pairs,
                    validate_flows)

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

ALPHA_DUST = 1e-6
BUDGET_TOL = 1e-6


@dataclass(frozen=True)
class SolverOptions:
    backend: str = "clarabel"
    gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    max_iter: int = 200
    # Allow negative slack (useful for diagnostics; the default keeps s >= 0).
    free_slack: bool = False


@dataclass(frozen=True)
class RoutingProblem:
    team: TeamConfig
    flows: tuple[FlowSpec, ...]
    rates: LinkRates
    r_min: float = DEFAULT_R_MIN

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        if not self.flows:
            raise InvalidInputError("routing problem needs at least one flow")
        if self.rates.n != self.team.n:
            raise InvalidInputError("rate table size does not match team size")
        validate_flows(self.team, self.flows)

    @classmethod
    def build(cls, team: TeamConfig, flows: Sequence[FlowSpec], channel: ChannelParams,
              r_min: float = DEFAULT_R_MIN) -> "RoutingProblem":
        return cls(team, tuple(flows), link_rates(channel, team.positions, r_min), r_min)

    def with_margin_scale(self, scale: float) -> "RoutingProblem":
        flows = tuple(dataclasses.replace(f, margin=f.margin * scale) for f in self.flows)
        return dataclasses.replace(self, flows=flows)


@dataclass
class RoutingSolution:
    alpha: RoutingVars
    slack: float
    status: str
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class ConeProgram:
    """Explicit conic form of a routing problem.

    Column ``j < len(variables)`` is the routing fraction for the triple
    ``variables[j] = (i, j, k)``; the last column is the slack.
    """

    variables: list[tuple[int, int, int]]
    shape: tuple[int, int, int]
    c: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    n_linear: int
    soc_dims: list[int]
    soc_pairs: list[tuple[int, int]]
    soc_z: list[float]
    linear_labels: list[str] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.variables) + 1

    @property
    def slack_col(self) -> int:
        return len(self.variables)

    def soc_rows(self, b: int) -> slice:
        start = self.n_linear + sum(self.soc_dims[:b])
        return slice(start, start + self.soc_dims[b])

    def pack(self, alpha: RoutingVars, slack: float) -> np.ndarray:
        x = np.empty(self.n_vars)
        for col, (i, j, k) in enumerate(self.variables):
            x[col] = alpha.alpha[i, j, k]
        x[-1] = slack
        return x

    def unpack(self, x: np.ndarray) -> tuple[RoutingVars, float]:
        a = np.zeros(self.shape)
        for col, (i, j, k) in enumerate(self.variables):
            a[i, j, k] = x[col]
        return RoutingVars(a), float(x[-1])

    def cone_slacks(self, x: np.ndarray) -> np.ndarray:
        return self.h - self.G @ x

    def pair_values(self, alpha: RoutingVars, slack: float = 0.0) -> dict[tuple[int, int], float]:
        """Normalized residual per cone block, comparable to
        ``flows.constraint_values``.

        The head of block b equals mean - margin - slack and its tail has
        norm z * std, so (head + slack) / (norm / z) - z recovers the score.
        """
        u = self.cone_slacks(self.pack(alpha, slack))
        out = {}
        for b, pair in enumerate(self.soc_pairs):
            rows = u[self.soc_rows(b)]
            z = self.soc_z[b]
            num = rows[0] + slack
            norm = float(np.linalg.norm(rows[1:]))
            if norm > 0.0:
                out[pair] = num / (norm / z) - z
            else:
                out[pair] = np.inf if num >= 0 else -np.inf
        return out

    def to_text(self) -> str:
        """Plain-text dump: variables, cones, objective, then G and h triplets."""
        lines = ["# cone program v1",
                 "# minimize c'x  s.t.  G x + u = h,  u in R+^l x SOC(d1) x ...",
                 f"shape n={self.shape[0]} K={self.shape[2]}",
                 f"variables {self.n_vars}"]
        for col, (i, j, k) in enumerate(self.variables):
            lines.append(f"var {col} alpha i={i} j={j} k={k}")
        lines.append(f"var {self.slack_col} slack")
        lines.append(f"cones l={self.n_linear} q={','.join(map(str, self.soc_dims))}")
        for r, lab in enumerate(self.linear_labels):
            lines.append(f"row {r} {lab}")
        for b, (i, k) in enumerate(self.soc_pairs):
            rows = self.soc_rows(b)
            lines.append(f"soc {b} node={i} flow={k} rows={rows.start}..{rows.stop - 1} "
                         f"z={self.soc_z[b]!r}")
        for col in np.flatnonzero(self.c):
            lines.append(f"c {col} {self.c[col]!r}")
        coo = self.G.tocoo()
        for r, col, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
            lines.append(f"G {r} {col} {v!r}")
        for r in np.flatnonzero(self.h):
            lines.append(f"h {r} {self.h[r]!r}")
        return "\n".join(lines) + "\n"


def build_cone_program(problem: RoutingProblem, free_slack: bool = False) -> ConeProgram:
    team, flows, rates = problem.team, problem.flows, problem.rates
    n, K = team.n, len(flows)
    mask = allowed_mask(team, flows, rates)
    variables = [(int(i), int(j), int(k))
                 for k in range(K) for i in range(n) for j in range(n) if mask[i, j, k]]
    col_of = {t: c for c, t in enumerate(variables)}
    nv = len(variables)
    s_col = nv

    rows: list[dict[int, float]] = []
    rhs: list[float] = []
    labels: list[str] = []

    for c, (i, j, k) in enumerate(variables):
        rows.append({c: -1.0})
        rhs.append(0.0)
        labels.append(f"alpha[{i},{j},{k}] >= 0")
    if not free_slack:
        rows.append({s_col: -1.0})
        rhs.append(0.0)
        labels.append("slack >= 0")
    # Budgets also bound each alpha above by 1, so no separate box rows.
    seen = set()
    for axis, name in ((0, "transmit"), (1, "receive")):
        for node in range(n):
            cols = tuple(c for c, t in enumerate(variables) if t[axis] == node)
            if not cols or cols in seen:
                continue
            seen.add(cols)
            rows.append({c: 1.0 for c in cols})
            rhs.append(1.0)
            labels.append(f"{name} budget node {node} <= 1")
    n_linear = len(rows)

    soc_dims, soc_pairs, soc_z = [], [], []
    for i, k, m in constrained_pairs(team, flows):
        z = flows[k].z
        out_cols = [(col_of[(i, j, k)], j) for j in range(n) if (i, j, k) in col_of]
        in_cols = [(col_of[(j, i, k)], j) for j in range(n) if (j, i, k) in col_of]
        head = {s_col: 1.0}
        for c, j in out_cols:
            head[c] = -rates.mean[i, j]
        for c, j in in_cols:
            head[c] = rates.mean[j, i]
        rows.append(head)
        rhs.append(-m)
        for c, j in out_cols:
            rows.append({c: -z * np.sqrt(rates.variance[i, j])})
            rhs.append(0.0)
        for c, j in in_cols:
            rows.append({c: -z * np.sqrt(rates.variance[j, i])})
            rhs.append(0.0)
        soc_dims.append(1 + len(out_cols) + len(in_cols))
        soc_pairs.append((i, k))
        soc_z.append(z)

    ri, ci, vals = [], [], []
    for r, row in enumerate(rows):
        for c, v in row.items():
            ri.append(r)
            ci.append(c)
            vals.append(v)
    G = sp.csc_matrix((vals, (ri, ci)), shape=(len(rows), nv + 1))
    c = np.zeros(nv + 1)
    c[s_col] = -1.0
    return ConeProgram(variables, (n, n, K), c, G, np.asarray(rhs, dtype=float), n_linear,
                       soc_dims, soc_pairs, soc_z, labels)


def _solve_clarabel(prog: ConeProgram, opts: SolverOptions):
    import clarabel

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = opts.max_iter
    settings.tol_gap_abs = opts.gap_tol
    settings.tol_gap_rel = opts.gap_tol
    settings.tol_feas = opts.feas_tol
    cones = []
    if prog.n_linear:
        cones.append(clarabel.NonnegativeConeT(prog.n_linear))
    cones += [clarabel.SecondOrderConeT(d) for d in prog.soc_dims]
    P = sp.csc_matrix((prog.n_vars, prog.n_vars))
    res = clarabel.DefaultSolver(P, prog.c, prog.G, prog.h, cones, settings).solve()
    name = str(res.status)
    if name in ("Solved", "AlmostSolved"):
        status = OPTIMAL
    elif name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = INFEASIBLE
    else:
        status = NUMERICAL_FAILURE
    return status, np.asarray(res.x, dtype=float), int(res.iterations), float(res.solve_time)


def _solve_cvxopt(prog: ConeProgram, opts: SolverOptions):
    import time

    import cvxopt
    from cvxopt import solvers

    coo = prog.G.tocoo()
    G = cvxopt.spmatrix(coo.data.tolist(), coo.row.tolist(), coo.col.tolist(), size=prog.G.shape)
    dims = {"l": prog.n_linear, "q": list(prog.soc_dims), "s": []}
    options = {"show_progress": False, "abstol": opts.gap_tol, "reltol": opts.gap_tol,
               "feastol": opts.feas_tol, "maxiters": opts.max_iter}
    t0 = time.perf_counter()
    res = solvers.conelp(cvxopt.matrix(prog.c), G, cvxopt.matrix(prog.h), dims, options=options)
    elapsed = time.perf_counter() - t0
    status = {"optimal": OPTIMAL, "primal infeasible": INFEASIBLE}.get(res["status"],
                                                                     NUMERICAL_FAILURE)
    x = np.zeros(prog.n_vars) if res["x"] is None else np.array(res["x"]).ravel()
    return status, x, int(res["iterations"]), elapsed


BACKENDS = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def solve_cone_program(prog: ConeProgram, options: SolverOptions | None = None) -> RoutingSolution:
    opts = options or SolverOptions()
    try:
        backend = BACKENDS[opts.backend]
    except KeyError:
        raise InvalidInputError(f"unknown solver backend {opts.backend!r}") from None
    status, x, iters, elapsed = backend(prog, opts)
    if status != OPTIMAL or not np.all(np.isfinite(x)):
        if status == OPTIMAL:
            status = NUMERICAL_FAILURE
        return RoutingSolution(RoutingVars(np.zeros(prog.shape)), 0.0, status, iters, elapsed)

    alpha, slack = prog.unpack(x)
    a = np.clip(alpha.alpha, 0.0, 1.0)
    a[a < ALPHA_DUST] = 0.0
    if not opts.free_slack:
        slack = max(slack, 0.0)
    if (a.sum(axis=(1, 2)).max() > 1 + BUDGET_TOL) or (a.sum(axis=(0, 2)).max() > 1 + BUDGET_TOL):
        log.warning("solver returned routing that breaks a budget row")
        return RoutingSolution(RoutingVars(np.zeros(prog.shape)), 0.0, NUMERICAL_FAILURE,
                               iters, elapsed)
    return RoutingSolution(RoutingVars(a), slack, OPTIMAL, iters, elapsed)


def solve_robust_routing(problem: RoutingProblem,
                         options: SolverOptions | None = None) -> RoutingSolution:
    opts = options or SolverOptions()
    return solve_cone_program(build_cone_program(problem, free_slack=opts.free_slack), opts)


def supportable_margin(problem: RoutingProblem, steps: int = 10,
                       options: SolverOptions | None = None) -> tuple[float, RoutingSolution]:
    """Largest uniform multiplier on all demanded margins that stays feasible.

    Bisects the multiplier on [0, 1] for ``steps`` rounds and returns it along
    with the solution at that multiplier. A multiplier of 1 means the demand
    as stated is feasible.
    """
    full = solve_robust_routing(problem, options)
    if full.ok:
        return 1.0, full
    lo, hi = 0.0, 1.0
    best = solve_robust_routing(problem.with_margin_scale(0.0), options)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        sol = solve_robust_routing(problem.with_margin_scale(mid), options)
        if sol.ok:
            lo, best = mid, sol
        else:
            hi = mid
    return lo, best
