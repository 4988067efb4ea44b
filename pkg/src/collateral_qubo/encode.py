"""QUBO construction for the knapsack and collateral problems.

Every builder assembles its energy as a sum of named terms. Each term is kept
separately (linear part, upper-triangular quadratic part, constant) together
with its penalty weight and normalization factor, so callers can evaluate a
single term at a bitstring, e.g. to recover the cost objective from a sample.

All energies follow the minimization convention; the knapsack value is
negated before encoding.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Sequence

import numpy as np

from collateral_qubo.model import (
    CollateralInstance,
    KnapsackInstance,
    LayoutError,
    omega_matrix,
)

Block = tuple[tuple[int, ...], tuple[float, ...]]


# --------------------------------------------------------------------------
# bit counting and grid weights
# --------------------------------------------------------------------------


def slack_bit_count(upper_bound: float) -> int:
    """Number of log-encoded slack bits, ceil(log2(u)) but at least one."""
    if not upper_bound > 0:
        raise ValueError(f"slack upper bound must be positive, got {upper_bound}")
    k = max(0, math.ceil(math.log2(upper_bound)))
    # guard against log2 rounding at exact powers of two
    while 2.0**k < upper_bound:
        k += 1
    while k > 0 and 2.0 ** (k - 1) >= upper_bound:
        k -= 1
    return max(1, k)


def bit_weights(B: int, qmin: float = 0.0, qmax: float = 1.0) -> np.ndarray:
    """Weights 2^(b-1) (qmax - qmin) / (2^B - 1) for b = 1..B."""
    if B < 1:
        raise ValueError("B must be at least 1")
    if not qmax > qmin:
        raise ValueError("qmax must exceed qmin")
    M = 2**B - 1
    return np.array([2.0**b for b in range(B)]) * (qmax - qmin) / M


def truncated_bits(limit: float, quantity: float, M: int, B: int) -> int:
    """Bits kept for a pair whose limit caps the allocated quantity.

    Floors log2(limit / quantity * M) so that the largest decodable fraction
    (2^n - 1) / M never exceeds limit / quantity.
    """
    if not quantity > 0:
        raise ValueError("quantity must be positive")
    if M != 2**B - 1:
        raise ValueError("M must equal 2^B - 1")
    ratio = limit / quantity
    if ratio >= 1:
        return B
    scaled = ratio * M
    if scaled < 1:
        return 0
    n = int(math.floor(math.log2(scaled)))
    while 2.0 ** (n + 1) <= scaled:
        n += 1
    while n > 0 and 2.0**n > scaled:
        n -= 1
    return min(B, n)


# --------------------------------------------------------------------------
# containers
# --------------------------------------------------------------------------


def _key_str(key: Hashable) -> str:
    if isinstance(key, tuple):
        return ",".join(str(k) for k in key)
    return str(key)


def _key_parse(text: str) -> Hashable:
    parts = text.split(",")
    if len(parts) == 1:
        return int(parts[0])
    return tuple(int(p) for p in parts)


@dataclass(frozen=True, eq=False)
class VariableLayout:
    """Where each decision and slack quantity lives in the bit vector.

    Decision blocks always occupy the lowest indices, so a prefix of length
    ``n_decision`` carries everything needed for decoding. Keys are item
    indices for the knapsack and ``(asset, account)`` pairs for collateral.
    """

    decision_bits: dict
    slack_bits: dict
    n: int
    B: int | None = None

    def __post_init__(self):
        seen = []
        for idx, w in list(self.decision_bits.values()) + list(self.slack_bits.values()):
            if len(idx) != len(w):
                raise LayoutError("block indices and weights differ in length")
            seen.extend(idx)
        if sorted(seen) != list(range(self.n)):
            raise LayoutError("layout blocks must be disjoint and cover 0..N-1")
        if self.decision_bits:
            top = max((max(idx) for idx, _ in self.decision_bits.values() if idx), default=-1)
            if top + 1 != self.n_decision:
                raise LayoutError("decision bits must occupy the lowest indices")

    @property
    def M(self) -> int | None:
        return None if self.B is None else 2**self.B - 1

    @property
    def n_decision(self) -> int:
        return sum(len(idx) for idx, _ in self.decision_bits.values())

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "B": self.B,
            "decision_bits": {
                _key_str(k): {"indices": list(idx), "weights": list(w)}
                for k, (idx, w) in self.decision_bits.items()
            },
            "slack_bits": {
                k: {"indices": list(idx), "weights": list(w)}
                for k, (idx, w) in self.slack_bits.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VariableLayout":
        def blocks(d, parse):
            return {
                parse(k): (tuple(v["indices"]), tuple(float(x) for x in v["weights"]))
                for k, v in d.items()
            }

        return cls(
            decision_bits=blocks(doc["decision_bits"], _key_parse),
            slack_bits=blocks(doc["slack_bits"], str),
            n=int(doc["n"]),
            B=doc.get("B"),
        )


@dataclass(frozen=True, eq=False)
class Term:
    """One named energy contribution before weighting.

    ``energy`` of the term is ``linear @ x + x^T upper x + offset`` with
    ``upper`` strictly upper triangular; the model adds
    ``weight * scale * energy``.
    """

    name: str
    linear: np.ndarray
    upper: np.ndarray
    offset: float
    weight: float = 1.0
    scale: float = 1.0

    def coefficients(self) -> np.ndarray:
        c = np.concatenate([self.linear, self.upper[np.triu_indices_from(self.upper, 1)]])
        return c[c != 0]

    def raw_energy(self, x: Sequence[int]) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.linear @ x + x @ self.upper @ x + self.offset)

    def energy(self, x: Sequence[int]) -> float:
        return self.weight * self.scale * self.raw_energy(x)


@dataclass(frozen=True, eq=False)
class QuboModel:
    """Energy sum_i linear_i x_i + sum_{i<j} quadratic[i, j] x_i x_j + offset."""

    linear: np.ndarray
    quadratic: dict
    offset: float
    layout: VariableLayout | None = None
    terms: tuple[Term, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float)
        lin.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        quad = {}
        for (i, j), v in sorted(self.quadratic.items()):
            i, j = int(i), int(j)
            if not 0 <= i < j < lin.size:
                raise ValueError(f"quadratic key ({i}, {j}) must satisfy 0 <= i < j < N")
            quad[(i, j)] = float(v)
        object.__setattr__(self, "quadratic", quad)
        object.__setattr__(self, "offset", float(self.offset))
        if self.layout is not None and self.layout.n != lin.size:
            raise LayoutError("layout size does not match model dimension")

    @property
    def dimension(self) -> int:
        return self.linear.size

    @cached_property
    def upper(self) -> np.ndarray:
        """Dense strictly upper-triangular coupling matrix."""
        U = np.zeros((self.dimension, self.dimension))
        for (i, j), v in self.quadratic.items():
            U[i, j] = v
        return U

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric CSR adjacency (indptr, indices, data) of the couplings."""
        n = self.dimension
        rows = [[] for _ in range(n)]
        for (i, j), v in self.quadratic.items():
            rows[i].append((j, v))
            rows[j].append((i, v))
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.array([j for r in rows for j, _ in sorted(r)], dtype=np.int64)
        data = np.array([v for r in rows for _, v in sorted(r)], dtype=float)
        return indptr, indices, data

    def energy(self, x: Sequence[int]) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise LayoutError(f"expected {self.dimension} bits, got shape {x.shape}")
        return float(self.linear @ x + x @ self.upper @ x + self.offset)

    def energies(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.linear + np.einsum("ij,ij->i", X @ self.upper, X) + self.offset

    def term(self, name: str) -> Term:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "n": self.dimension,
            "linear": self.linear.tolist(),
            "quadratic": [[i, j, v] for (i, j), v in self.quadratic.items()],
            "offset": self.offset,
            "layout": None if self.layout is None else self.layout.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "QuboModel":
        linear = doc["linear"]
        if len(linear) != doc["n"]:
            raise ValueError("linear vector length disagrees with n")
        layout = doc.get("layout")
        return cls(
            linear=linear,
            quadratic={(int(i), int(j)): v for i, j, v in doc["quadratic"]},
            offset=doc["offset"],
            layout=None if layout is None else VariableLayout.from_dict(layout),
        )

    @classmethod
    def from_json(cls, text: str) -> "QuboModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class IsingModel:
    """Energy -sum_j h_j s_j - sum_{j<k} J[j, k] s_j s_k + epsilon, s in {-1, +1}."""

    h: np.ndarray
    J: dict
    epsilon: float

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", {(int(i), int(j)): float(v) for (i, j), v in sorted(self.J.items())})

    @property
    def dimension(self) -> int:
        return self.h.size

    def energy(self, spins: Sequence[int]) -> float:
        s = np.asarray(spins, dtype=float)
        if s.shape != (self.dimension,) or not np.all(np.abs(s) == 1):
            raise ValueError("spins must be a length-N vector of -1/+1")
        e = -float(self.h @ s) + self.epsilon
        for (j, k), v in self.J.items():
            e -= v * s[j] * s[k]
        return e

    def energies(self, S: np.ndarray) -> np.ndarray:
        S = np.asarray(S, dtype=float)
        out = -(S @ self.h) + self.epsilon
        for (j, k), v in self.J.items():
            out -= v * S[:, j] * S[:, k]
        return out


@dataclass(frozen=True)
class PenaltyWeights:
    """Term weights lambda_0..lambda_6; lambda_0 always weights the cost."""

    lambdas: tuple[float, ...]

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if any(v < 0 for v in lam):
            raise ValueError("penalty weights must be nonnegative")
        object.__setattr__(self, "lambdas", lam)

    def __getitem__(self, k: int) -> float:
        return self.lambdas[k] if k < len(self.lambdas) else 0.0

    def __len__(self) -> int:
        return len(self.lambdas)


# --------------------------------------------------------------------------
# QUBO <-> Ising
# --------------------------------------------------------------------------


def qubo_to_ising(q: QuboModel) -> IsingModel:
    """Substitute x = (1 - s) / 2."""
    h = q.linear / 2.0
    J = {}
    # offsets sum many terms of mixed sign; fsum keeps the round trip exact
    eps = [q.offset, *(q.linear / 2.0)]
    for (i, j), b in q.quadratic.items():
        J[(i, j)] = -b / 4.0
        h[i] += b / 4.0
        h[j] += b / 4.0
        eps.append(b / 4.0)
    return IsingModel(h=h, J=J, epsilon=math.fsum(eps))


def ising_to_qubo(model: IsingModel) -> QuboModel:
    """Substitute s = 1 - 2x."""
    a = 2.0 * model.h
    quad = {}
    c = [model.epsilon, *(-model.h)]
    for (j, k), v in model.J.items():
        quad[(j, k)] = -4.0 * v
        a[j] += 2.0 * v
        a[k] += 2.0 * v
        c.append(-v)
    return QuboModel(linear=a, quadratic=quad, offset=math.fsum(c))


# --------------------------------------------------------------------------
# term assembly
# --------------------------------------------------------------------------


class _TermBuilder:
    """Accumulates one polynomial over N bits."""

    def __init__(self, n: int):
        self.n = n
        self.linear = np.zeros(n)
        self.pairs = np.zeros((n, n))
        self.offset = 0.0

    def add_affine(self, idx: Sequence[int], coef: Sequence[float], const: float = 0.0, sign: float = 1.0):
        idx = np.asarray(idx, dtype=np.int64)
        np.add.at(self.linear, idx, sign * np.asarray(coef, dtype=float))
        self.offset += sign * const

    def add_square(self, idx: Sequence[int], coef: Sequence[float], const: float = 0.0):
        """Add (sum_k coef_k x_idx_k + const)^2 using x^2 = x."""
        idx = np.asarray(idx, dtype=np.int64)
        c = np.asarray(coef, dtype=float)
        if len(set(idx.tolist())) != idx.size:
            raise ValueError("squared expression repeats a variable")
        self.pairs[np.ix_(idx, idx)] += np.outer(c, c)
        np.add.at(self.linear, idx, 2.0 * const * c)
        self.offset += const * const

    def build(self, name: str) -> Term:
        linear = self.linear + np.diag(self.pairs)
        upper = np.triu(self.pairs, 1) + np.tril(self.pairs, -1).T
        return Term(name=name, linear=linear, upper=upper, offset=self.offset)


def normalize_terms(term_coefficient_sets: Iterable[Sequence[float]]) -> list[float]:
    """Per-term scale factors that set the smallest magnitude to order one.

    Each term is divided by its largest absolute coefficient and then
    multiplied by the power of ten that lifts the smallest nonzero magnitude
    into [1, 10).
    """
    factors = []
    for coefs in term_coefficient_sets:
        c = np.abs(np.asarray(coefs, dtype=float).ravel())
        c = c[c > 0]
        if c.size == 0:
            warnings.warn("all-zero term left unnormalized", RuntimeWarning, stacklevel=2)
            factors.append(1.0)
            continue
        cmax, cmin = c.max(), c.min()
        decade = math.floor(math.log10(cmin / cmax))
        # exact decades like 0.05 -> log10 = -1.30103 are safe; 0.1 may round low
        if 10.0 ** (decade + 1) <= cmin / cmax:
            decade += 1
        factors.append(10.0 ** (-decade) / cmax)
    return factors


def _assemble(
    n: int,
    terms: list[tuple[Term, float]],
    layout: VariableLayout,
    normalize: bool,
    model_warnings: Sequence[str] = (),
) -> QuboModel:
    if normalize:
        scales = normalize_terms(t.coefficients() if t.coefficients().size else [0.0] for t, _ in terms)
    else:
        scales = [1.0] * len(terms)
    final = []
    linear = np.zeros(n)
    upper = np.zeros((n, n))
    offset = 0.0
    for (t, weight), scale in zip(terms, scales):
        t = Term(t.name, t.linear, t.upper, t.offset, weight=float(weight), scale=float(scale))
        k = t.weight * t.scale
        if k:
            linear += k * t.linear
            upper += k * t.upper
            offset += k * t.offset
        final.append(t)
    rows, cols = np.nonzero(upper)
    quad = {(int(i), int(j)): float(upper[i, j]) for i, j in zip(rows, cols)}
    return QuboModel(
        linear=linear,
        quadratic=quad,
        offset=offset,
        layout=layout,
        terms=tuple(final),
        warnings=tuple(model_warnings),
    )


# --------------------------------------------------------------------------
# knapsack encodings
# --------------------------------------------------------------------------


def _kp_layout(instance: KnapsackInstance, slack: dict[str, int]) -> VariableLayout:
    n = instance.n
    decision = {i: ((i,), (1.0,)) for i in range(n)}
    slack_bits = {}
    nxt = n
    for name, (count, weights) in slack.items():
        slack_bits[name] = (tuple(range(nxt, nxt + count)), tuple(weights))
        nxt += count
    return VariableLayout(decision_bits=decision, slack_bits=slack_bits, n=nxt)


def _kp_value_term(instance: KnapsackInstance, N: int) -> Term:
    t = _TermBuilder(N)
    t.add_affine(range(instance.n), instance.values, sign=-1.0)
    return t.build("value")


def kp_qubo_log(instance: KnapsackInstance, lam0: float, normalize: bool = False) -> QuboModel:
    """-sum v x + lam0 (sum w x - W + S)^2 with a log-encoded slack S."""
    if not lam0 > 0:
        raise ValueError("lam0 must be positive")
    if instance.n == 0:
        raise ValueError("knapsack instance has no items")
    W = instance.capacity
    ns = slack_bit_count(W) if W > 0 else 0
    sw = [2.0**k for k in range(ns)]
    layout = _kp_layout(instance, {"capacity": (ns, sw)})
    N = layout.n
    cap = _TermBuilder(N)
    cap.add_square(
        list(range(instance.n)) + list(layout.slack_bits["capacity"][0]),
        list(instance.weights) + sw,
        -W,
    )
    terms = [(_kp_value_term(instance, N), 1.0), (cap.build("capacity"), lam0)]
    return _assemble(N, terms, layout, normalize)


def kp_qubo_onehot(
    instance: KnapsackInstance, lam0: float, lam1: float, normalize: bool = False
) -> QuboModel:
    """-sum v x + lam0 (sum w x - sum k s_k)^2 + lam1 (1 - sum s_k)^2, k = 1..W."""
    if not (lam0 > 0 and lam1 > 0):
        raise ValueError("lam0 and lam1 must be positive")
    if instance.n == 0:
        raise ValueError("knapsack instance has no items")
    W = instance.capacity
    if W < 1:
        raise ValueError("one-hot encoding needs capacity >= 1")
    sw = [float(k) for k in range(1, W + 1)]
    layout = _kp_layout(instance, {"capacity": (W, sw)})
    N = layout.n
    sidx = list(layout.slack_bits["capacity"][0])
    cap = _TermBuilder(N)
    cap.add_square(list(range(instance.n)) + sidx, list(instance.weights) + [-k for k in sw])
    onehot = _TermBuilder(N)
    onehot.add_square(sidx, [-1.0] * W, 1.0)
    terms = [
        (_kp_value_term(instance, N), 1.0),
        (cap.build("capacity"), lam0),
        (onehot.build("one_hot"), lam1),
    ]
    return _assemble(N, terms, layout, normalize)


# Knapsack weights suggested by the unbalanced-penalization authors.
UNBALANCED_KP_DEFAULTS = {"lam_lin": 0.96, "lam_quad": 0.0371, "lam0": 1.0}


def kp_qubo_unbalanced(
    instance: KnapsackInstance,
    lam_lin: float = UNBALANCED_KP_DEFAULTS["lam_lin"],
    lam_quad: float = UNBALANCED_KP_DEFAULTS["lam_quad"],
    lam0: float = UNBALANCED_KP_DEFAULTS["lam0"],
    normalize: bool = False,
) -> QuboModel:
    """-lam0 sum v x + lam_lin h + lam_quad h^2 with h = sum w x - W; no slack bits."""
    if not (lam_lin > 0 and lam_quad > 0 and lam0 > 0):
        raise ValueError("all unbalanced weights must be positive")
    if instance.n == 0:
        raise ValueError("knapsack instance has no items")
    layout = _kp_layout(instance, {})
    N = layout.n
    idx = range(instance.n)
    lin = _TermBuilder(N)
    lin.add_affine(idx, instance.weights, -instance.capacity)
    quad = _TermBuilder(N)
    quad.add_square(idx, instance.weights, -instance.capacity)
    terms = [
        (_kp_value_term(instance, N), lam0),
        (lin.build("capacity_linear"), lam_lin),
        (quad.build("capacity_quadratic"), lam_quad),
    ]
    return _assemble(N, terms, layout, normalize)


def decode_items(bits: Sequence[int], layout: VariableLayout) -> tuple[int, ...]:
    """Item selection carried by a knapsack QUBO bitstring."""
    x = np.asarray(bits).ravel()
    if x.size not in (layout.n, layout.n_decision):
        raise LayoutError(f"bitstring has {x.size} bits, layout expects {layout.n}")
    return tuple(int(x[idx[0]]) for _, (idx, _) in sorted(layout.decision_bits.items()))


# --------------------------------------------------------------------------
# collateral encodings
# --------------------------------------------------------------------------


def _co_decision_layout(instance: CollateralInstance, B: int) -> tuple[dict, list[str]]:
    M = 2**B - 1
    p = bit_weights(B)
    a = instance.quantities
    blocks = {}
    nxt = 0
    for i in range(instance.n):
        for j in range(instance.m):
            limit = instance.limits[i, j]
            if math.isinf(limit) or a[i] <= 0:
                nb = B
            else:
                nb = truncated_bits(limit, a[i], M, B)
            blocks[(i, j)] = (tuple(range(nxt, nxt + nb)), tuple(p[:nb].tolist()))
            nxt += nb

    notes = []
    value = instance.collateral_value()
    for j in range(instance.m):
        reach = sum(sum(blocks[(i, j)][1]) * value[i, j] for i in range(instance.n))
        if reach < instance.exposures[j] * (1 - 1e-12):
            notes.append(
                f"account {j}: exposure {instance.exposures[j]:.6g} unreachable "
                f"with truncated bits (max {reach:.6g})"
            )
    return blocks, notes


def _group_resolution(instance: CollateralInstance, g: int, M: int) -> float:
    members = np.nonzero(instance.group_membership[:, g])[0]
    a = instance.quantities[members]
    a = a[a > 0]
    return float(a.min()) / M if a.size else 1.0


def _pair_cost(instance: CollateralInstance, cost_quantity_weighted: bool) -> np.ndarray:
    omega = omega_matrix(instance)
    if cost_quantity_weighted:
        omega = omega * instance.quantities[:, None]
    return omega


def _cost_term(instance, blocks, N, cost_quantity_weighted) -> Term:
    omega = _pair_cost(instance, cost_quantity_weighted)
    t = _TermBuilder(N)
    for (i, j), (idx, w) in blocks.items():
        if idx:
            t.add_affine(idx, omega[i, j] * np.asarray(w))
    return t.build("cost")


def _exposure_rows(instance, blocks):
    value = instance.collateral_value()
    for j in range(instance.m):
        idx, coef = [], []
        for i in range(instance.n):
            bidx, w = blocks[(i, j)]
            idx.extend(bidx)
            coef.extend(value[i, j] * np.asarray(w))
        yield j, idx, coef, float(instance.exposures[j])


def _consistency_rows(instance, blocks):
    for i in range(instance.n):
        idx, coef = [], []
        for j in range(instance.m):
            bidx, w = blocks[(i, j)]
            idx.extend(bidx)
            coef.extend(w)
        yield i, idx, coef


def _group_rows(instance, blocks):
    a = instance.quantities
    for g in range(instance.n_groups):
        for j in range(instance.m):
            idx, coef = [], []
            for i in np.nonzero(instance.group_membership[:, g])[0]:
                bidx, w = blocks[(int(i), j)]
                idx.extend(bidx)
                coef.extend(a[i] * np.asarray(w))
            yield g, j, idx, coef, float(instance.group_caps[g, j])


def co_qubo_balanced(
    instance: CollateralInstance,
    B: int,
    weights: PenaltyWeights,
    normalize: bool = False,
    cost_quantity_weighted: bool = False,
) -> QuboModel:
    """Slack-based collateral QUBO.

    Terms: ``cost`` (lambda_0), per-asset ``consistency`` scaled by M with a
    log-encoded slack of ceil(log2 M) bits (lambda_1), the exposure
    requirement relaxed to an equality with no slack (lambda_2), and the
    many-to-one ``group`` caps with log-encoded slack (lambda_3). One-to-one
    limits are enforced by truncating decision bits.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if not (weights[0] > 0 and weights[1] > 0 and weights[2] > 0):
        raise ValueError("balanced encoding needs positive lambda_0..lambda_2")
    if instance.n_groups and not weights[3] > 0:
        raise ValueError("group constraints present but lambda_3 is not positive")
    M = 2**B - 1
    blocks, notes = _co_decision_layout(instance, B)
    nxt = sum(len(idx) for idx, _ in blocks.values())

    slack = {}
    ncon = slack_bit_count(M)
    for i in range(instance.n):
        slack[f"consistency_{i}"] = (
            tuple(range(nxt, nxt + ncon)),
            tuple(2.0**k for k in range(ncon)),
        )
        nxt += ncon
    for g in range(instance.n_groups):
        res = _group_resolution(instance, g, M)
        for j in range(instance.m):
            cap = float(instance.group_caps[g, j])
            count = slack_bit_count(cap / res + 1) if cap > 0 else 0
            slack[f"group_{g}_{j}"] = (
                tuple(range(nxt, nxt + count)),
                tuple(res * 2.0**k for k in range(count)),
            )
            nxt += count

    layout = VariableLayout(decision_bits=blocks, slack_bits=slack, n=nxt, B=B)
    N = layout.n

    cons = _TermBuilder(N)
    for i, idx, coef in _consistency_rows(instance, blocks):
        sidx, sw = slack[f"consistency_{i}"]
        cons.add_square(idx + list(sidx), [M * c for c in coef] + list(sw), -M)

    expo = _TermBuilder(N)
    for _, idx, coef, c in _exposure_rows(instance, blocks):
        expo.add_square(idx, coef, -c)

    terms = [
        (_cost_term(instance, blocks, N, cost_quantity_weighted), weights[0]),
        (cons.build("consistency"), weights[1]),
        (expo.build("exposure"), weights[2]),
    ]
    if instance.n_groups:
        grp = _TermBuilder(N)
        for g, j, idx, coef, cap in _group_rows(instance, blocks):
            sidx, sw = slack[f"group_{g}_{j}"]
            grp.add_square(idx + list(sidx), coef + list(sw), -cap)
        terms.append((grp.build("group"), weights[3]))
    return _assemble(N, terms, layout, normalize, notes)


def co_qubo_unbalanced(
    instance: CollateralInstance,
    B: int,
    weights: PenaltyWeights,
    normalize: bool = False,
    cost_quantity_weighted: bool = False,
) -> QuboModel:
    """Slack-free collateral QUBO from unbalanced penalization.

    For g(x) <= 0 constraints the penalty is lambda_lin g + lambda_quad g^2;
    the exposure requirement is a g(x) >= 0 constraint, so its linear part
    enters with a minus sign. Weight order: cost, consistency linear /
    quadratic, exposure linear / quadratic, group linear / quadratic.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    blocks, notes = _co_decision_layout(instance, B)
    N = sum(len(idx) for idx, _ in blocks.values())
    layout = VariableLayout(decision_bits=blocks, slack_bits={}, n=N, B=B)

    cons_lin, cons_quad = _TermBuilder(N), _TermBuilder(N)
    for _, idx, coef in _consistency_rows(instance, blocks):
        cons_lin.add_affine(idx, coef, -1.0)
        cons_quad.add_square(idx, coef, -1.0)

    expo_lin, expo_quad = _TermBuilder(N), _TermBuilder(N)
    for _, idx, coef, c in _exposure_rows(instance, blocks):
        expo_lin.add_affine(idx, coef, -c, sign=-1.0)
        expo_quad.add_square(idx, coef, -c)

    terms = [
        (_cost_term(instance, blocks, N, cost_quantity_weighted), weights[0]),
        (cons_lin.build("consistency_linear"), weights[1]),
        (cons_quad.build("consistency_quadratic"), weights[2]),
        (expo_lin.build("exposure_linear"), weights[3]),
        (expo_quad.build("exposure_quadratic"), weights[4]),
    ]
    if instance.n_groups:
        grp_lin, grp_quad = _TermBuilder(N), _TermBuilder(N)
        for _, _, idx, coef, cap in _group_rows(instance, blocks):
            grp_lin.add_affine(idx, coef, -cap)
            grp_quad.add_square(idx, coef, -cap)
        terms.append((grp_lin.build("group_linear"), weights[5]))
        terms.append((grp_quad.build("group_quadratic"), weights[6]))
    return _assemble(N, terms, layout, normalize, notes)
