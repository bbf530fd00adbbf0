"""Teams, flows and routing variables, plus the rate-margin statistics built on them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .channel import LinkRates
from .errors import InvalidInputError


@dataclass(frozen=True)
class TeamConfig:
    """Positions of every agent and the task / network partition of indices.

    Indices are zero-based. ``positions`` is an (n, 2) array.
    """

    positions: np.ndarray
    task_idx: tuple[int, ...]
    network_idx: tuple[int, ...]

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "task_idx", tuple(int(i) for i in self.task_idx))
        object.__setattr__(self, "network_idx", tuple(int(i) for i in self.network_idx))
        if x.ndim != 2 or x.shape[1] != 2:
            raise InvalidInputError(f"positions must have shape (n, 2), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("positions must be finite")
        if not self.task_idx:
            raise InvalidInputError("task team must have at least one agent")
        t, nw = set(self.task_idx), set(self.network_idx)
        if len(t) != len(self.task_idx) or len(nw) != len(self.network_idx):
            raise InvalidInputError("duplicate agent index")
        if t & nw:
            raise InvalidInputError(f"agents {sorted(t & nw)} are in both teams")
        if t | nw != set(range(len(x))):
            raise InvalidInputError("task and network indices must cover 0..n-1")

    @classmethod
    def from_teams(cls, x_task, x_net) -> "TeamConfig":
        """Stack task agents first, then network agents."""
        x_task = np.asarray(x_task, dtype=float).reshape(-1, 2)
        x_net = np.asarray(x_net, dtype=float).reshape(-1, 2)
        p, q = len(x_task), len(x_net)
        return cls(np.vstack([x_task, x_net]), tuple(range(p)), tuple(range(p, p + q)))

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def p(self) -> int:
        return len(self.task_idx)

    @property
    def q(self) -> int:
        return len(self.network_idx)

    @property
    def x_task(self) -> np.ndarray:
        return self.positions[list(self.task_idx)]

    @property
    def x_net(self) -> np.ndarray:
        return self.positions[list(self.network_idx)]

    def with_network(self, x_net) -> "TeamConfig":
        x = self.positions.copy()
        x[list(self.network_idx)] = np.asarray(x_net, dtype=float).reshape(-1, 2)
        return TeamConfig(x, self.task_idx, self.network_idx)


@dataclass(frozen=True)
class FlowSpec:
    sources: tuple[int, ...]
    destinations: tuple[int, ...]
    margin: float
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(int(i) for i in self.sources))
        object.__setattr__(self, "destinations", tuple(int(i) for i in self.destinations))
        if not self.sources or not self.destinations:
            raise InvalidInputError("flow needs at least one source and one destination")
        if set(self.sources) & set(self.destinations):
            raise InvalidInputError("a node cannot be both source and destination of one flow")
        if not np.isfinite(self.margin) or self.margin < 0:
            raise InvalidInputError(f"margin must be finite and >= 0, got {self.margin}")
        if not 0.5 < self.confidence < 1.0:
            raise InvalidInputError(
                f"confidence must lie in the open interval (0.5, 1), got {self.confidence}")

    @property
    def z(self) -> float:
        """Standard-normal quantile of the confidence level."""
        return float(ndtri(self.confidence))


def validate_flows(team: TeamConfig, flows: Sequence[FlowSpec]) -> None:
    tasks = set(team.task_idx)
    for k, f in enumerate(flows):
        bad = (set(f.sources) | set(f.destinations)) - tasks
        if bad:
            raise InvalidInputError(f"flow {k}: endpoints {sorted(bad)} are not task agents")


@dataclass
class RoutingVars:
    """Routing fractions ``alpha[i, j, k]``: share of a timestep node i spends
    sending flow-k data to node j."""

    alpha: np.ndarray

    @classmethod
    def zeros(cls, n: int, K: int) -> "RoutingVars":
        return cls(np.zeros((n, n, K)))

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def K(self) -> int:
        return self.alpha.shape[2]

    def violations(self, team: TeamConfig, flows: Sequence[FlowSpec],
                   rates: LinkRates | None = None, tol: float = 1e-6) -> list[str]:
        """Human-readable list of broken invariants (empty when valid)."""
        a = self.alpha
        out = []
        if a.shape != (team.n, team.n, len(flows)):
            return [f"alpha has shape {a.shape}, expected {(team.n, team.n, len(flows))}"]
        if a.min() < -tol or a.max() > 1 + tol:
            out.append("alpha outside [0, 1]")
        if np.any(a.sum(axis=(1, 2)) > 1 + tol):
            out.append("transmit budget exceeded")
        if np.any(a.sum(axis=(0, 2)) > 1 + tol):
            out.append("receive budget exceeded")
        allowed = allowed_mask(team, flows, rates)
        if np.any(np.abs(a[~allowed]) > tol):
            out.append("nonzero alpha on a forbidden (i, j, k)")
        return out

    def to_json(self) -> dict:
        return {"n": self.n, "K": self.K, "alpha": self.alpha.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "RoutingVars":
        a = np.asarray(d["alpha"], dtype=float).reshape(d["n"], d["n"], d["K"])
        return cls(a)


@dataclass(frozen=True)
class MarginStats:
    mean: float
    variance: float


def allowed_mask(team: TeamConfig, flows: Sequence[FlowSpec],
                 rates: LinkRates | None = None) -> np.ndarray:
    """Boolean (n, n, K) mask of routing variables that may be nonzero.

    Task agents are clients: only a flow's own sources transmit it, and
    task agents receive only flows they are destinations of. Self links
    and links with zero mean (pruned) are excluded.
    """
    n, K = team.n, len(flows)
    mask = np.ones((n, n, K), dtype=bool)
    mask[np.arange(n), np.arange(n), :] = False
    for k, f in enumerate(flows):
        for i in team.task_idx:
            if i not in f.sources:
                mask[i, :, k] = False
            if i not in f.destinations:
                mask[:, i, k] = False
    if rates is not None:
        mask &= rates.usable[:, :, None]
    return mask


def constrained_pairs(team: TeamConfig, flows: Sequence[FlowSpec]) -> list[tuple[int, int, float]]:
    """(node, flow, required margin) triples that carry a balance constraint.

    Sources need their flow's margin; every network agent must at least
    forward what it receives (margin 0). Destinations are sinks and carry none.
    """
    out = []
    for k, f in enumerate(flows):
        for i in range(team.n):
            if i in f.sources:
                out.append((i, k, float(f.margin)))
            elif i in team.network_idx:
                out.append((i, k, 0.0))
    return out


def margin_arrays(alpha: RoutingVars, rates: LinkRates) -> tuple[np.ndarray, np.ndarray]:
    """Expected margin and variance for every (node, flow), each shaped (n, K)."""
    a = alpha.alpha
    rm = rates.mean[:, :, None]
    rv = rates.variance[:, :, None]
    mean = (a * rm).sum(axis=1) - (a * rm).sum(axis=0)
    a2 = a * a
    var = (a2 * rv).sum(axis=1) + (a2 * rv).sum(axis=0)
    return mean, var


def margin_stats(alpha: RoutingVars, rates: LinkRates, i: int, k: int) -> MarginStats:
    n, K = alpha.n, alpha.K
    if rates.n != n:
        raise InvalidInputError(f"rate table is {rates.n}x{rates.n}, alpha has n={n}")
    if not (0 <= i < n and 0 <= k < K):
        raise InvalidInputError(f"index (i={i}, k={k}) out of range for n={n}, K={K}")
    a = alpha.alpha[:, :, k]
    out_, in_ = a[i, :], a[:, i]
    mean = float(out_ @ rates.mean[i, :] - in_ @ rates.mean[:, i])
    var = float((out_ ** 2) @ rates.variance[i, :] + (in_ ** 2) @ rates.variance[:, i])
    return MarginStats(mean, var)


def constraint_values(alpha: RoutingVars, rates: LinkRates, team: TeamConfig,
                      flows: Sequence[FlowSpec]) -> dict[tuple[int, int], float]:
    """Normalized residual of every constrained pair, keyed by (node, flow).

    A pair with zero variance scores +inf if its mean meets the margin and
    -inf otherwise.
    """
    mean, var = margin_arrays(alpha, rates)
    out = {}
    for i, k, m in constrained_pairs(team, flows):
        num = mean[i, k] - m
        if var[i, k] > 0.0:
            out[(i, k)] = num / np.sqrt(var[i, k]) - flows[k].z
        else:
            out[(i, k)] = np.inf if num >= 0 else -np.inf
    return out


def min_constraint_value(alpha: RoutingVars, rates: LinkRates, team: TeamConfig,
                         flows: Sequence[FlowSpec]) -> float:
    """Score of the constraint closest to violation; >= 0 means all chance
    constraints hold."""
    vals = constraint_values(alpha, rates, team, flows)
    return float(min(vals.values())) if vals else np.inf


def sample_routing_table(alpha: RoutingVars, rng: np.random.Generator) -> dict[tuple[int, int], int | None]:
    """Pick one next hop per (node, flow), with probability proportional to alpha."""
    a = alpha.alpha
    table: dict[tuple[int, int], int | None] = {}
    for i in range(a.shape[0]):
        for k in range(a.shape[2]):
            row = np.clip(a[i, :, k], 0.0, None)
            total = row.sum()
            if total > 0:
                table[(i, k)] = int(rng.choice(len(row), p=row / total))
            else:
                table[(i, k)] = None
    return table
