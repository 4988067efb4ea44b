"""Problem-domain types for the knapsack testbed and collateral allocation.

Collateral instances carry their matrices as read-only numpy arrays so that a
single instance can be shared between workers without copying.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

if TYPE_CHECKING:
    from collateral_qubo.encode import VariableLayout

CONSISTENCY_TOL = 1e-9
DEFAULT_EPSILON = 0.05


class ShapeError(ValueError):
    """Raised when an allocation or matrix does not match the instance."""


class LayoutError(ValueError):
    """Raised when a bitstring does not fit a variable layout."""


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class KnapsackInstance:
    weights: tuple[int, ...]
    values: tuple[int, ...]
    capacity: int

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(int(w) for w in self.weights))
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if len(self.weights) != len(self.values):
            raise ValueError("weights and values must have equal length")
        if any(w < 0 for w in self.weights) or any(v < 0 for v in self.values):
            raise ValueError("weights and values must be nonnegative")
        if self.capacity < 0:
            raise ValueError("capacity must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.weights)

    def value_of(self, selection: Sequence[int]) -> int:
        return sum(v for v, x in zip(self.values, selection) if x)

    def weight_of(self, selection: Sequence[int]) -> int:
        return sum(w for w, x in zip(self.weights, selection) if x)


# Ten-item instance with capacity 165; optimum 309 at full capacity.
TABLE_I = KnapsackInstance(
    weights=(23, 31, 29, 44, 53, 38, 63, 85, 89, 82),
    values=(92, 57, 49, 68, 60, 43, 67, 84, 87, 72),
    capacity=165,
)


@dataclass(frozen=True)
class Asset:
    quantity: float
    unit_value: float
    tier: float

    def __post_init__(self):
        if self.quantity < 0 or self.unit_value < 0:
            raise ValueError("asset quantity and unit value must be nonnegative")
        if not 0.0 <= self.tier <= 1.0:
            raise ValueError(f"tier must lie in [0, 1], got {self.tier}")

    @property
    def market_value(self) -> float:
        return self.quantity * self.unit_value


@dataclass(frozen=True)
class Account:
    exposure: float
    duration: int  # 1 = short term, 0 = long term

    def __post_init__(self):
        if self.exposure < 0:
            raise ValueError("exposure must be nonnegative")
        if self.duration not in (0, 1):
            raise ValueError("duration must be 0 (long) or 1 (short)")


@dataclass(frozen=True, eq=False)
class CollateralInstance:
    """Assets, accounts and the constraint data linking them.

    ``limits`` holds ``inf`` for unbounded pairs. ``group_membership`` is
    n x G and ``group_caps`` is G x m; both are empty (G = 0) when the
    instance has no many-to-one constraints.
    """

    assets: tuple[Asset, ...]
    accounts: tuple[Account, ...]
    haircut: np.ndarray
    limits: np.ndarray = None
    group_membership: np.ndarray = None
    group_caps: np.ndarray = None

    def __post_init__(self):
        assets = tuple(self.assets)
        accounts = tuple(self.accounts)
        n, m = len(assets), len(accounts)
        if n == 0 or m == 0:
            raise ShapeError("instance needs at least one asset and one account")
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "accounts", accounts)

        haircut = _frozen(self.haircut)
        if haircut.shape != (n, m):
            raise ShapeError(f"haircut must be {n}x{m}, got {haircut.shape}")
        if np.any(haircut <= 0) or np.any(haircut > 1):
            raise ValueError("haircuts must lie in (0, 1]")
        object.__setattr__(self, "haircut", haircut)

        if self.limits is None:
            limits = np.full((n, m), np.inf)
        else:
            limits = np.array(
                [[np.inf if b is None else b for b in row] for row in self.limits],
                dtype=float,
            )
        if limits.shape != (n, m):
            raise ShapeError(f"limits must be {n}x{m}, got {limits.shape}")
        if np.any(limits < 0):
            raise ValueError("limits must be nonnegative")
        limits.setflags(write=False)
        object.__setattr__(self, "limits", limits)

        if self.group_membership is None:
            membership = np.zeros((n, 0))
            caps = np.zeros((0, m))
        else:
            membership = np.array(self.group_membership, dtype=float).reshape(n, -1)
            caps = np.array(self.group_caps, dtype=float).reshape(-1, m)
        if membership.shape[1] != caps.shape[0]:
            raise ShapeError("group membership and caps disagree on group count")
        if not np.all((membership == 0) | (membership == 1)):
            raise ValueError("group membership must be binary")
        if np.any(caps < 0):
            raise ValueError("group caps must be nonnegative")
        membership.setflags(write=False)
        caps.setflags(write=False)
        object.__setattr__(self, "group_membership", membership)
        object.__setattr__(self, "group_caps", caps)

    @property
    def n(self) -> int:
        return len(self.assets)

    @property
    def m(self) -> int:
        return len(self.accounts)

    @property
    def n_groups(self) -> int:
        return self.group_caps.shape[0]

    @property
    def quantities(self) -> np.ndarray:
        return np.array([a.quantity for a in self.assets])

    @property
    def unit_values(self) -> np.ndarray:
        return np.array([a.unit_value for a in self.assets])

    @property
    def tiers(self) -> np.ndarray:
        return np.array([a.tier for a in self.assets])

    @property
    def exposures(self) -> np.ndarray:
        return np.array([c.exposure for c in self.accounts])

    @property
    def durations(self) -> np.ndarray:
        return np.array([c.duration for c in self.accounts])

    def collateral_value(self) -> np.ndarray:
        """Haircut-adjusted USD value of posting all of asset i to account j."""
        return (self.quantities * self.unit_values)[:, None] * self.haircut

    def to_dict(self) -> dict:
        doc = {
            "assets": [
                {"quantity": a.quantity, "unit_value": a.unit_value, "tier": a.tier}
                for a in self.assets
            ],
            "accounts": [
                {"exposure": c.exposure, "duration": c.duration} for c in self.accounts
            ],
            "haircut": self.haircut.tolist(),
            "limits": [
                [None if math.isinf(b) else float(b) for b in row] for row in self.limits
            ],
        }
        if self.n_groups:
            doc["groups"] = {
                "membership": self.group_membership.astype(int).tolist(),
                "caps": self.group_caps.tolist(),
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CollateralInstance":
        groups = doc.get("groups")
        return cls(
            assets=[Asset(**a) for a in doc["assets"]],
            accounts=[Account(exposure=c["exposure"], duration=int(c["duration"]))
                      for c in doc["accounts"]],
            haircut=doc["haircut"],
            limits=doc.get("limits"),
            group_membership=None if groups is None else groups["membership"],
            group_caps=None if groups is None else groups["caps"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CollateralInstance":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "CollateralInstance":
        return cls.from_json(Path(path).read_text())


def omega_matrix(instance: CollateralInstance) -> np.ndarray:
    """Per-pair posting cost |tier_i - duration_j|."""
    return np.abs(instance.tiers[:, None] - instance.durations[None, :])


@dataclass(frozen=True)
class FeasibilityReport:
    objective: float
    consistency_residuals: np.ndarray
    exposure_coverage: np.ndarray
    limit_violations: list[tuple[int, int, float]]
    group_violations: list[tuple[int, int, float]]
    epsilon: float
    posted_value: np.ndarray = field(repr=False)

    @property
    def feasible_within(self) -> bool:
        return bool(
            np.all(self.consistency_residuals <= CONSISTENCY_TOL)
            and not self.limit_violations
            and not self.group_violations
            and np.all(self.exposure_coverage >= 1.0 - self.epsilon)
        )

    @property
    def consistent(self) -> bool:
        return bool(np.all(self.consistency_residuals <= CONSISTENCY_TOL))

    @property
    def max_exposure_shortfall(self) -> float:
        """Largest relative shortfall below full coverage (0 when all covered)."""
        return float(max(0.0, np.max(1.0 - self.exposure_coverage)))


def _violation_tol(bound: float) -> float:
    return 1e-9 * max(1.0, abs(bound))


def evaluate_allocation(
    Q: np.ndarray, instance: CollateralInstance, epsilon: float = DEFAULT_EPSILON
) -> FeasibilityReport:
    """Score an allocation matrix against the collateral constraints.

    Args:
        Q: n x m matrix of asset fractions.
        instance: the collateral instance Q was produced for.
        epsilon: relative exposure shortfall tolerated by ``feasible_within``.

    Returns:
        FeasibilityReport with the cost objective, per-asset over-allocation,
        per-account coverage ratios and the limit / group violations.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (instance.n, instance.m):
        raise ShapeError(f"allocation must be {instance.n}x{instance.m}, got {Q.shape}")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")

    objective = float(np.sum(omega_matrix(instance) * Q))
    residuals = np.maximum(0.0, Q.sum(axis=1) - 1.0)

    posted = np.sum(Q * instance.collateral_value(), axis=0)
    c = instance.exposures
    coverage = np.ones(instance.m)
    nz = c > 0
    coverage[nz] = posted[nz] / c[nz]

    a = instance.quantities
    limit_violations = []
    for i, j in zip(*np.nonzero(np.isfinite(instance.limits))):
        excess = Q[i, j] * a[i] - instance.limits[i, j]
        if excess > _violation_tol(instance.limits[i, j]):
            limit_violations.append((int(i), int(j), float(excess)))

    group_violations = []
    if instance.n_groups:
        group_load = instance.group_membership.T @ (Q * a[:, None])
        for g, j in np.ndindex(group_load.shape):
            excess = group_load[g, j] - instance.group_caps[g, j]
            if excess > _violation_tol(instance.group_caps[g, j]):
                group_violations.append((int(g), int(j), float(excess)))

    return FeasibilityReport(
        objective=objective,
        consistency_residuals=residuals,
        exposure_coverage=coverage,
        limit_violations=limit_violations,
        group_violations=group_violations,
        epsilon=float(epsilon),
        posted_value=posted,
    )


def decode_solution(
    bits: Sequence[int], layout: "VariableLayout", instance: CollateralInstance
) -> np.ndarray:
    """Map a QUBO bitstring to the allocation matrix it encodes.

    ``bits`` may be the full model bitstring or just its decision prefix;
    slack bits never contribute to the allocation.
    """
    x = np.asarray(bits, dtype=float).ravel()
    if x.size not in (layout.n, layout.n_decision):
        raise LayoutError(
            f"bitstring has {x.size} bits, layout expects {layout.n} "
            f"(or {layout.n_decision} decision bits)"
        )
    Q = np.zeros((instance.n, instance.m))
    for (i, j), (idx, weights) in layout.decision_bits.items():
        if idx:
            Q[i, j] = float(np.dot(x[list(idx)], weights))
    return Q
