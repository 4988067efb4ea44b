"""Experiment orchestration and report emission."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from collateral_qubo.anneal import Schedule, anneal, kp_exact_dp
from collateral_qubo.encode import (
    PenaltyWeights,
    QuboModel,
    co_qubo_balanced,
    co_qubo_unbalanced,
    decode_items,
    kp_qubo_log,
    kp_qubo_onehot,
    kp_qubo_unbalanced,
)
from collateral_qubo.harness.generator import GeneratorSpec, generate_instance
from collateral_qubo.lpref import LpSolution, lp_gap, solve_lp
from collateral_qubo.model import (
    DEFAULT_EPSILON,
    TABLE_I,
    CollateralInstance,
    FeasibilityReport,
    KnapsackInstance,
    decode_solution,
    evaluate_allocation,
)

ENCODINGS = ("balanced", "unbalanced")
PROFILES = ("sampler", "digital")

SUMMARY_COLUMNS = [
    "encoding", "backend_profile", "seed", "objective", "lp_objective", "gap",
    "feasible", "max_exposure_shortfall_pct", "runtime_ms",
]
EXPOSURE_COLUMNS = ["account_id", "required_usd", "posted_usd", "coverage_pct"]


class ConfigError(ValueError):
    pass


class InfeasibleLpError(RuntimeError):
    pass


_WEIGHTS = {
    ("balanced", "sampler"): (1e3, 1.0, 1.0),
    ("balanced", "digital"): (1e5, 1.0, 300.0),
    ("unbalanced", "sampler"): (1.5e4, 1.0, 1.0, 1.0, 50.0),
    ("unbalanced", "digital"): (2e4, 1.0, 1.0, 1.0, 50.0),
}


def weight_defaults(encoding: str, backend_profile: str = "sampler") -> PenaltyWeights:
    """Published penalty weights per encoding and annealer profile.

    Balanced order is (cost, consistency, exposure); unbalanced order is
    (cost, consistency linear, consistency quadratic, exposure linear,
    exposure quadratic).
    """
    try:
        return PenaltyWeights(_WEIGHTS[(encoding, backend_profile)])
    except KeyError:
        raise ConfigError(f"no default weights for {encoding!r} / {backend_profile!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    instance: str | None = None
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    bits: int = 7
    encodings: tuple[str, ...] = ENCODINGS
    profiles: tuple[str, ...] = ("sampler",)
    weights: dict = field(default_factory=dict)
    schedule: Schedule = field(default_factory=Schedule)
    seeds: tuple[int, ...] = (0,)
    epsilon: float = DEFAULT_EPSILON
    normalize: bool = True
    out_dir: str = "results"
    workers: int = 1
    record_timing: bool = False

    def __post_init__(self):
        encodings = self.encodings
        if isinstance(encodings, str):
            encodings = ENCODINGS if encodings == "both" else (encodings,)
        object.__setattr__(self, "encodings", tuple(encodings))
        object.__setattr__(self, "profiles", tuple(self.profiles))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.bits < 1:
            raise ConfigError("bits must be at least 1")
        for enc in self.encodings:
            if enc not in ENCODINGS:
                raise ConfigError(f"unknown encoding {enc!r}")
        for prof in self.profiles:
            if prof not in PROFILES:
                raise ConfigError(f"unknown backend profile {prof!r}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.instance is not None and not Path(self.instance).is_file():
            raise ConfigError(f"instance file {self.instance} does not exist")

    def weights_for(self, encoding: str, profile: str) -> PenaltyWeights:
        custom = self.weights.get(encoding)
        if isinstance(custom, dict):
            custom = custom.get(profile)
        if custom is not None:
            return PenaltyWeights(tuple(custom))
        return weight_defaults(encoding, profile)

    def load_instance(self) -> CollateralInstance:
        if self.instance is not None:
            return CollateralInstance.load(self.instance)
        return generate_instance(self.generator)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("generator", "schedule")}
        d["generator"] = self.generator.to_dict()
        d["schedule"] = asdict(self.schedule)
        d["encodings"] = list(self.encodings)
        d["profiles"] = list(self.profiles)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "generator" in doc:
                doc["generator"] = GeneratorSpec.from_dict(doc["generator"])
            if "schedule" in doc:
                doc["schedule"] = Schedule(**doc["schedule"])
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def build_qubo(instance: CollateralInstance, encoding: str, B: int, weights: PenaltyWeights,
               normalize: bool = True) -> QuboModel:
    builder = co_qubo_balanced if encoding == "balanced" else co_qubo_unbalanced
    return builder(instance, B, weights, normalize=normalize)


@dataclass(frozen=True, eq=False)
class RunResult:
    encoding: str
    profile: str
    seed: int
    Q: np.ndarray
    report: FeasibilityReport
    gap: float | None
    best_energy: float
    runtime_ms: float
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class ReportBundle:
    out_dir: Path
    files: tuple[Path, ...]
    lp: LpSolution
    runs: tuple[RunResult, ...]
    instance: CollateralInstance


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def allocation_csv(Q: np.ndarray, instance: CollateralInstance) -> str:
    header = ["asset_id", "tier"] + [f"account_{j + 1}" for j in range(instance.m)]
    rows = [header]
    for i in range(instance.n):
        rows.append([i + 1, float(instance.assets[i].tier)] + [float(q) for q in Q[i]])
    return _csv(rows)


def read_allocation_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(v) for v in row[2:]] for row in rows[1:]])


def exposure_csv(report: FeasibilityReport, instance: CollateralInstance) -> str:
    rows = [EXPOSURE_COLUMNS]
    for j, acct in enumerate(instance.accounts):
        rows.append([j + 1, float(acct.exposure), float(report.posted_value[j]),
                     float(100.0 * report.exposure_coverage[j])])
    return _csv(rows)


def _run_one(instance, config, encoding, profile, seed, lp) -> RunResult:
    start = time.perf_counter()
    q = build_qubo(instance, encoding, config.bits, config.weights_for(encoding, profile),
                   config.normalize)
    ss = anneal(q, replace(config.schedule, seed=seed))
    Q = decode_solution(ss.best.bits, q.layout, instance)
    report = evaluate_allocation(Q, instance, config.epsilon)
    gap = lp_gap(lp, report) if lp.status == "optimal" else None
    runtime = 1000.0 * (time.perf_counter() - start)
    return RunResult(encoding, profile, seed, Q, report, gap, ss.best.energy, runtime, q.warnings)


def run_experiment(config: ExperimentConfig, write: bool = True) -> ReportBundle:
    """Solve the LP baseline and anneal every (encoding, profile, seed).

    Writes ``summary.csv``, one ``allocation_*.csv`` and ``exposure_*.csv``
    per solution (the LP included), the instance and the resolved config.
    Raises InfeasibleLpError after writing the bundle when the LP is
    infeasible.
    """
    instance = config.load_instance()
    lp = solve_lp(instance)

    jobs = [(e, p, s) for e in config.encodings for p in config.profiles for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(lambda job: _run_one(instance, config, *job, lp), jobs))
    else:
        runs = [_run_one(instance, config, *job, lp) for job in jobs]

    bundle = ReportBundle(Path(config.out_dir), (), lp, tuple(runs), instance)
    if write:
        bundle = _write_bundle(bundle, config)
    if lp.status == "infeasible":
        raise InfeasibleLpError("continuous relaxation is infeasible")
    return bundle


def _recorded_config(config: ExperimentConfig) -> dict:
    # execution knobs do not change results, so bundles compare byte for byte
    doc = config.to_dict()
    for key in ("out_dir", "workers", "record_timing"):
        doc.pop(key)
    return doc


def _write_bundle(bundle: ReportBundle, config: ExperimentConfig) -> ReportBundle:
    out = bundle.out_dir
    out.mkdir(parents=True, exist_ok=True)
    instance, lp = bundle.instance, bundle.lp
    files: dict[str, str] = {
        "instance.json": instance.to_json(),
        "config.json": json.dumps(_recorded_config(config), indent=2, sort_keys=True) + "\n",
    }
    lp_report = evaluate_allocation(lp.Q, instance, config.epsilon)
    summary = [SUMMARY_COLUMNS]
    if lp.status == "optimal":
        summary.append(["lp", "simplex", "", lp.objective, lp.objective, 0.0,
                        lp_report.feasible_within, 100.0 * lp_report.max_exposure_shortfall, ""])
        files["allocation_lp.csv"] = allocation_csv(lp.Q, instance)
        files["exposure_lp.csv"] = exposure_csv(lp_report, instance)
    for r in bundle.runs:
        tag = f"{r.encoding}_{r.profile}_s{r.seed}"
        summary.append([
            r.encoding, r.profile, r.seed, r.report.objective,
            lp.objective if lp.status == "optimal" else "",
            "" if r.gap is None else r.gap,
            r.report.feasible_within, 100.0 * r.report.max_exposure_shortfall,
            round(r.runtime_ms, 3) if config.record_timing else "",
        ])
        files[f"allocation_{tag}.csv"] = allocation_csv(r.Q, instance)
        files[f"exposure_{tag}.csv"] = exposure_csv(r.report, instance)
    files["summary.csv"] = _csv(summary)

    paths = []
    for name in sorted(files):
        path = out / name
        path.write_text(files[name])
        paths.append(path)
    return replace(bundle, files=tuple(paths))


# --------------------------------------------------------------------------
# knapsack demo
# --------------------------------------------------------------------------

KP_CONFIGS = (
    ("log", {"lam0": 1.0}),
    ("log", {"lam0": 1e4}),
    ("one_hot", {"lam0": 0.1, "lam1": 1e3}),
    ("unbalanced", {"lam_lin": 0.96, "lam_quad": 0.0371, "lam0": 1.0}),
)


def build_kp_qubo(instance: KnapsackInstance, encoding: str, params: dict) -> QuboModel:
    if encoding == "log":
        return kp_qubo_log(instance, **params)
    if encoding == "one_hot":
        return kp_qubo_onehot(instance, **params)
    if encoding == "unbalanced":
        return kp_qubo_unbalanced(instance, **params)
    raise ConfigError(f"unknown knapsack encoding {encoding!r}")


@dataclass(frozen=True)
class KpRow:
    encoding: str
    params: str
    seed: int
    best_energy: float
    value: int
    weight: int
    exact_value: int

    @property
    def optimal(self) -> bool:
        return self.value == self.exact_value


def run_kp(instance: KnapsackInstance = TABLE_I, seeds=(0,), schedule: Schedule = Schedule(),
           configs=KP_CONFIGS) -> list[KpRow]:
    exact, _ = kp_exact_dp(instance)
    rows = []
    for encoding, params in configs:
        q = build_kp_qubo(instance, encoding, params)
        label = ";".join(f"{k}={v:g}" for k, v in params.items())
        for seed in seeds:
            ss = anneal(q, replace(schedule, seed=seed))
            sel = decode_items(ss.best.bits, q.layout)
            rows.append(KpRow(encoding, label, seed, ss.best.energy, instance.value_of(sel),
                              instance.weight_of(sel), exact))
    return rows


def kp_summary_csv(rows: list[KpRow]) -> str:
    table = [["encoding", "params", "seed", "best_energy", "value", "weight", "exact_value", "optimal"]]
    table += [[r.encoding, r.params, r.seed, r.best_energy, r.value, r.weight, r.exact_value, r.optimal]
              for r in rows]
    return _csv(table)
