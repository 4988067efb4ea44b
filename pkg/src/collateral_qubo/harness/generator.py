"""Synthetic collateral instances at desk scale."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from collateral_qubo.model import Account, Asset, CollateralInstance


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    n_assets: int = 10
    tier_counts: dict = field(default_factory=lambda: {0.2: 4, 0.5: 2, 0.8: 4})
    total_asset_value: float = 8.86e6
    asset_value_range: tuple[float, float] = (0.3e6, 1.5e6)
    unit_value_range: tuple[float, float] = (10.0, 200.0)
    n_long: int = 2
    long_exposure: float = 1.49e6
    n_short: int = 3
    short_exposure: float = 1.09e6
    small_account_ratio: float = 0.1
    haircut_range: tuple[float, float] = (0.85, 1.0)
    seed: int = 42

    @property
    def n_accounts(self) -> int:
        return self.n_long + self.n_short

    def validate(self) -> None:
        if sum(self.tier_counts.values()) != self.n_assets:
            raise SpecError("tier counts must sum to n_assets")
        if any(not 0 <= float(t) <= 1 for t in self.tier_counts):
            raise SpecError("tiers must lie in [0, 1]")
        lo, hi = self.asset_value_range
        if not 0 < lo <= hi:
            raise SpecError("asset value range must be positive and ordered")
        if not self.n_assets * lo <= self.total_asset_value <= self.n_assets * hi:
            raise SpecError(
                f"{self.n_assets} assets in [{lo:g}, {hi:g}] cannot total {self.total_asset_value:g}"
            )
        ulo, uhi = self.unit_value_range
        if not 0 < ulo <= uhi:
            raise SpecError("unit value range must be positive and ordered")
        hlo, hhi = self.haircut_range
        if not 0 < hlo <= hhi <= 1:
            raise SpecError("haircut range must lie in (0, 1]")
        if self.n_long < 1 or self.n_short < 1:
            raise SpecError("need at least one long and one short account")
        if self.small_account_ratio and self.n_short < 2:
            raise SpecError("a small account needs at least one other short account")
        if self.long_exposure < 0 or self.short_exposure < 0:
            raise SpecError("exposures must be nonnegative")
        if self.total_asset_value * hlo < self.long_exposure + self.short_exposure:
            raise SpecError("discounted inventory cannot cover the exposures")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tier_counts"] = {str(k): v for k, v in self.tier_counts.items()}
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        doc = dict(doc)
        if "tier_counts" in doc:
            doc["tier_counts"] = {float(k): int(v) for k, v in doc["tier_counts"].items()}
        for key in ("asset_value_range", "unit_value_range", "haircut_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def _fill_to_total(rng: np.random.Generator, n: int, total: float, lo: float, hi: float) -> np.ndarray:
    """n values in [lo, hi] summing to ``total`` (rescale, clip, repeat)."""
    v = rng.uniform(lo, hi, size=n)
    for _ in range(200):
        v = np.clip(v * total / v.sum(), lo, hi)
        if abs(v.sum() - total) <= 1e-12 * total:
            break
    free = (v > lo) & (v < hi)
    v[free] += (total - v.sum()) / max(1, free.sum())
    return v


def _split(rng: np.random.Generator, total: float, k: int) -> np.ndarray:
    if k == 1:
        return np.array([total])
    w = rng.uniform(0.7, 1.3, size=k)
    return total * w / w.sum()


def generate_instance(spec: GeneratorSpec = GeneratorSpec()) -> CollateralInstance:
    """Deterministic instance for ``spec.seed``.

    Assets are ordered by ascending tier. Accounts are the long-term ones
    followed by the short-term ones; with a nonzero ``small_account_ratio``
    the last short-term account gets roughly that fraction of the mean
    exposure of all other accounts. Limits are unbounded and no groups are
    emitted.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    tiers = [float(t) for t in sorted(spec.tier_counts, key=float) for _ in range(spec.tier_counts[t])]
    values = _fill_to_total(rng, spec.n_assets, spec.total_asset_value, *spec.asset_value_range)
    unit_values = rng.uniform(*spec.unit_value_range, size=spec.n_assets)
    quantities = values / unit_values
    assets = [Asset(quantity=float(q), unit_value=float(u), tier=t)
              for q, u, t in zip(quantities, unit_values, tiers)]

    long_c = _split(rng, spec.long_exposure, spec.n_long)
    if spec.small_account_ratio:
        k = spec.small_account_ratio * rng.uniform(0.9, 1.1)
        others = spec.n_accounts - 1
        total = spec.long_exposure + spec.short_exposure
        # small = k * (total - small) / others
        small = k * total / (others + k)
        short_c = np.append(_split(rng, spec.short_exposure - small, spec.n_short - 1), small)
    else:
        short_c = _split(rng, spec.short_exposure, spec.n_short)
    accounts = [Account(exposure=float(c), duration=0) for c in long_c]
    accounts += [Account(exposure=float(c), duration=1) for c in short_c]

    haircut = rng.uniform(*spec.haircut_range, size=(spec.n_assets, spec.n_accounts))
    return CollateralInstance(assets=assets, accounts=accounts, haircut=haircut)
