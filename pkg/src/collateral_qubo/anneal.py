"""Simulated annealing over QUBO models, plus exact oracles.

Each read draws from its own ``numpy.random.PCG64`` stream seeded with
``SeedSequence([seed, read_index])``, so a read's result does not depend on
which worker runs it or in which order reads are scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numba
import numpy as np

from collateral_qubo.encode import QuboModel
from collateral_qubo.model import KnapsackInstance


class EmptyModelError(ValueError):
    pass


class ModelTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    """Annealing schedule. ``None`` temperatures are derived from the model."""

    kind: str = "geometric"
    t_initial: float | None = None
    t_final: float | None = None
    sweeps: int = 1000
    reads: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("geometric", "linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.sweeps < 1 or self.reads < 1:
            raise ValueError("sweeps and reads must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.t_final is not None and not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if (
            self.t_initial is not None
            and self.t_final is not None
            and self.t_initial < self.t_final
        ):
            raise ValueError("t_initial must be >= t_final")

    def resolved(self, model: QuboModel) -> "Schedule":
        t_hot, t_cold = default_temperatures(model)
        ti = self.t_initial if self.t_initial is not None else t_hot
        tf = self.t_final if self.t_final is not None else min(t_cold, ti)
        return Schedule(self.kind, ti, tf, self.sweeps, self.reads, self.seed)

    def temperatures(self) -> np.ndarray:
        ti, tf, k = self.t_initial, self.t_final, self.sweeps
        if k == 1:
            return np.array([tf], dtype=float)
        frac = np.arange(k) / (k - 1)
        if self.kind == "geometric":
            return ti * (tf / ti) ** frac
        return ti + (tf - ti) * frac


def default_temperatures(model: QuboModel) -> tuple[float, float]:
    """(largest single-flip |dE| bound, 1% of the smallest nonzero coefficient)."""
    indptr, _, data = model.adjacency
    absdata = np.abs(data)
    bound = np.abs(model.linear).copy()
    for i in range(model.dimension):
        bound[i] += absdata[indptr[i]:indptr[i + 1]].sum()
    coefs = np.concatenate([np.abs(model.linear), absdata])
    coefs = coefs[coefs > 0]
    if coefs.size == 0:
        return 1.0, 1.0
    return float(bound.max()), float(0.01 * coefs.min())


@numba.njit(nogil=True, cache=True)
def _anneal_read(linear, indptr, indices, data, temps, rng):
    n = linear.size
    x = np.zeros(n, dtype=np.int8)
    for i in range(n):
        if rng.random() < 0.5:
            x[i] = 1
    # field[i] = linear[i] + sum_j Q_ij x_j, so flipping i changes E by +-field[i]
    field = linear.copy()
    energy = 0.0
    for i in range(n):
        if x[i]:
            energy += linear[i]
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                field[j] += data[p]
                if j > i and x[j]:
                    energy += data[p]
    best = x.copy()
    best_energy = energy
    trace = np.empty(temps.size)
    for k in range(temps.size):
        beta = 1.0 / temps[k]
        for _ in range(n):
            i = rng.integers(0, n)
            delta = field[i] if x[i] == 0 else -field[i]
            if delta <= 0.0 or rng.random() < math.exp(-delta * beta):
                sign = 1.0 if x[i] == 0 else -1.0
                x[i] = 1 - x[i]
                energy += delta
                for p in range(indptr[i], indptr[i + 1]):
                    field[indices[p]] += sign * data[p]
                if energy < best_energy:
                    best_energy = energy
                    best[:] = x
        trace[k] = best_energy
    return best, best_energy, trace


@dataclass(frozen=True)
class Sample:
    bits: tuple[int, ...]
    energy: float
    multiplicity: int

    @property
    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class SampleSet:
    samples: tuple[Sample, ...]
    schedule: Schedule
    model_hash: str
    traces: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def best(self) -> Sample:
        return self.samples[0]

    def metadata(self) -> dict:
        return {"schedule": asdict(self.schedule), "seed": self.schedule.seed,
                "model_hash": self.model_hash}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "energy", "multiplicity", "bitstring"])
        for rank, s in enumerate(self.samples):
            w.writerow([rank, repr(s.energy), s.multiplicity, s.bitstring])
        return buf.getvalue()

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n"


def model_hash(model: QuboModel) -> str:
    return hashlib.sha256(model.to_json().encode()).hexdigest()


def read_rng(seed: int, read: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, read])))


def anneal(model: QuboModel, schedule: Schedule = Schedule(), workers: int = 1) -> SampleSet:
    """Run ``schedule.reads`` independent single-flip Metropolis reads.

    Every read keeps the lowest-energy state it visited, not its final state.
    Stored energies are recomputed from scratch; samples are merged by
    bitstring and sorted by energy, ties kept in order of first discovery.
    """
    if model.dimension == 0:
        raise EmptyModelError("cannot anneal a model with no variables")
    sched = schedule.resolved(model)
    temps = sched.temperatures()
    indptr, indices, data = model.adjacency
    linear = np.ascontiguousarray(model.linear, dtype=float)

    def one(r):
        return _anneal_read(linear, indptr, indices, data, temps, read_rng(sched.seed, r))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(sched.reads)))
    else:
        results = [one(r) for r in range(sched.reads)]

    merged: dict[tuple[int, ...], list] = {}
    for best, _, _ in results:
        key = tuple(int(b) for b in best)
        if key in merged:
            merged[key][1] += 1
        else:
            merged[key] = [model.energy(best), 1, len(merged)]
    ordered = sorted(merged.items(), key=lambda kv: (kv[1][0], kv[1][2]))
    samples = tuple(Sample(bits=k, energy=e, multiplicity=c) for k, (e, c, _) in ordered)
    traces = np.stack([t for _, _, t in results]) + model.offset
    return SampleSet(samples=samples, schedule=sched, model_hash=model_hash(model), traces=traces)


def delta_energy(model: QuboModel, state: Sequence[int], flip: int) -> float:
    """E(state with bit ``flip`` toggled) - E(state), in O(degree)."""
    n = model.dimension
    if not 0 <= flip < n:
        raise IndexError(f"flip index {flip} out of range for {n} variables")
    x = np.asarray(state)
    indptr, indices, data = model.adjacency
    lo, hi = indptr[flip], indptr[flip + 1]
    local = model.linear[flip] + float(np.dot(data[lo:hi], x[indices[lo:hi]]))
    return local if x[flip] == 0 else -local


def kp_exact_dp(instance: KnapsackInstance) -> tuple[int, tuple[int, ...]]:
    """Exact 0/1 knapsack by dynamic programming over capacities.

    Among optimal selections the lexicographically smallest bit vector is
    returned (items are skipped whenever skipping keeps the optimum).
    """
    n, W = instance.n, instance.capacity
    w, v = instance.weights, instance.values
    # best[i][c]: best value from items i..n-1 with capacity c
    best = np.zeros((n + 1, W + 1), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        best[i] = best[i + 1]
        if w[i] <= W:
            take = best[i + 1, : W + 1 - w[i]] + v[i]
            best[i, w[i]:] = np.maximum(best[i, w[i]:], take)
    selection = []
    c = W
    for i in range(n):
        if best[i, c] == best[i + 1, c]:
            selection.append(0)
        else:
            selection.append(1)
            c -= w[i]
    return int(best[0, W]), tuple(selection)


def _bit_block(start: int, count: int, n: int) -> np.ndarray:
    states = np.arange(start, start + count, dtype=np.int64)
    return ((states[:, None] >> np.arange(n)) & 1).astype(float)


def enumerate_exact(model: QuboModel, max_bits: int = 24) -> tuple[float, list[tuple[int, ...]]]:
    """Exhaustive minimum over {0,1}^N with every minimizing bitstring.

    Bit k of the enumeration counter is variable k. Energies within
    1e-9 (1 + |E_min|) of the minimum count as ties.
    """
    energies = enumerate_energies(model, max_bits)
    emin = float(energies.min())
    tol = 1e-9 * (1.0 + abs(emin))
    winners = np.nonzero(energies <= emin + tol)[0]
    n = model.dimension
    return emin, [tuple(int(b) for b in _bit_block(int(s), 1, n)[0]) for s in winners]


def enumerate_energies(model: QuboModel, max_bits: int = 24) -> np.ndarray:
    """Energy of every state, indexed by the integer whose bit k is x_k."""
    n = model.dimension
    if n > max_bits:
        raise ModelTooLargeError(f"{n} variables exceed enumeration limit {max_bits}")
    total = 1 << n
    chunk = 1 << min(n, 16)
    out = np.empty(total)
    for start in range(0, total, chunk):
        out[start:start + chunk] = model.energies(_bit_block(start, chunk, n))
    return out
