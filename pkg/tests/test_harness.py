import csv
import io
import json
import numpy as np
import pytest

from collateral_qubo.anneal import Schedule
from collateral_qubo.harness.cli import main
from collateral_qubo.harness.experiment import (
    ConfigError,
    ExperimentConfig,
    InfeasibleLpError,
    SUMMARY_COLUMNS,
    read_allocation_csv,
    run_experiment,
    run_kp,
    weight_defaults,
)
from collateral_qubo.harness.generator import GeneratorSpec, SpecError, generate_instance
from collateral_qubo.lpref import solve_lp
from collateral_qubo.model import evaluate_allocation

QUICK = Schedule(sweeps=50, reads=4)


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_default_instance_scale():
    inst = generate_instance(GeneratorSpec(seed=42))
    assert inst.n == 10 and inst.m == 5
    total = float((inst.quantities * inst.unit_values).sum())
    assert 8.683e6 <= total <= 9.037e6
    c = inst.exposures
    assert c[:2].sum() == pytest.approx(1.49e6, rel=0.02)
    assert c[2:].sum() == pytest.approx(1.09e6, rel=0.02)
    np.testing.assert_array_equal(inst.tiers, [0.2] * 4 + [0.5] * 2 + [0.8] * 4)
    np.testing.assert_array_equal(inst.durations, [0, 0, 1, 1, 1])
    assert np.all((inst.haircut >= 0.85) & (inst.haircut <= 1.0))
    assert np.all(np.isinf(inst.limits)) and inst.n_groups == 0


@pytest.mark.parametrize("seed", range(10))
def test_small_account_is_an_order_smaller(seed):
    c = generate_instance(GeneratorSpec(seed=seed)).exposures
    assert 0.05 <= c[-1] / c[:-1].mean() <= 0.15


@pytest.mark.parametrize("seed", [0, 7, 42])
def test_generated_instance_is_lp_feasible(seed):
    inst = generate_instance(GeneratorSpec(seed=seed))
    assert solve_lp(inst).status == "optimal"
    assert inst.collateral_value().min(axis=1).sum() > inst.exposures.sum()


def test_generator_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    generate_instance(GeneratorSpec(seed=3)).save(a)
    generate_instance(GeneratorSpec(seed=3)).save(b)
    assert a.read_bytes() == b.read_bytes()
    assert generate_instance(GeneratorSpec(seed=4)).to_json() != a.read_text()


def test_unsatisfiable_spec():
    with pytest.raises(SpecError):
        generate_instance(GeneratorSpec(total_asset_value=1e6))
    with pytest.raises(SpecError):
        generate_instance(GeneratorSpec(tier_counts={0.2: 3}))


def test_weight_defaults():
    assert weight_defaults("balanced", "sampler").lambdas == (1e3, 1, 1)
    assert weight_defaults("balanced", "digital").lambdas == (1e5, 1, 300)
    assert weight_defaults("unbalanced", "sampler").lambdas == (1.5e4, 1, 1, 1, 50)
    assert weight_defaults("unbalanced", "digital").lambdas == (2e4, 1, 1, 1, 50)
    with pytest.raises(ConfigError):
        weight_defaults("balanced", "quantum")


@pytest.mark.parametrize("enc,prof", [(e, p) for e in ("balanced", "unbalanced") for p in ("sampler", "digital")])
def test_cost_weight_dominates(enc, prof):
    lam = weight_defaults(enc, prof).lambdas
    assert lam[0] >= 10 * max(lam[1:])


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(bits=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(encodings=("dense",))
    with pytest.raises(ConfigError):
        ExperimentConfig(instance=str(tmp_path / "missing.json"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"colour": "blue"})
    assert ExperimentConfig(encodings="both").encodings == ("balanced", "unbalanced")
    cfg = ExperimentConfig(seeds=[1, 2], weights={"balanced": [1, 2, 3]})
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.weights_for("balanced", "sampler").lambdas == (1, 2, 3)


def test_lp_only_mode(tmp_path):
    bundle = run_experiment(ExperimentConfig(encodings=(), out_dir=str(tmp_path)))
    rows = _rows(tmp_path / "summary.csv")
    assert len(rows) == 1 and rows[0]["encoding"] == "lp"
    cover = [float(r["coverage_pct"]) for r in _rows(tmp_path / "exposure_lp.csv")]
    assert min(cover) >= 100 - 1e-5
    assert bundle.runs == ()


def test_bundle_contents_and_round_trip(tmp_path):
    cfg = ExperimentConfig(schedule=QUICK, seeds=(0, 1), out_dir=str(tmp_path))
    bundle = run_experiment(cfg)
    names = sorted(p.name for p in bundle.files)
    assert "summary.csv" in names and "instance.json" in names and "config.json" in names
    summary = _rows(tmp_path / "summary.csv")
    assert list(summary[0]) == SUMMARY_COLUMNS
    assert len(summary) == 1 + 2 * 2
    assert all(r["runtime_ms"] == "" for r in summary)
    inst = bundle.instance
    for r in bundle.runs:
        tag = f"{r.encoding}_{r.profile}_s{r.seed}"
        Q = read_allocation_csv((tmp_path / f"allocation_{tag}.csv").read_text())
        rep = evaluate_allocation(Q, inst)
        cover = [float(x["coverage_pct"]) for x in _rows(tmp_path / f"exposure_{tag}.csv")]
        np.testing.assert_allclose(cover, 100 * rep.exposure_coverage, rtol=1e-12)
        np.testing.assert_allclose(rep.exposure_coverage, r.report.exposure_coverage, rtol=1e-12)
        assert r.gap == pytest.approx(rep.objective - bundle.lp.objective)


def test_infeasible_samples_still_reported(tmp_path):
    cfg = ExperimentConfig(encodings=("balanced",), schedule=Schedule(sweeps=1, reads=1), out_dir=str(tmp_path))
    bundle = run_experiment(cfg)
    row = _rows(tmp_path / "summary.csv")[1]
    assert not bundle.runs[0].report.feasible_within
    assert row["feasible"] == "false"


def test_timing_column_opt_in(tmp_path):
    cfg = ExperimentConfig(encodings=("unbalanced",), schedule=QUICK, out_dir=str(tmp_path), record_timing=True)
    run_experiment(cfg)
    assert float(_rows(tmp_path / "summary.csv")[1]["runtime_ms"]) > 0


def test_infeasible_lp_raises_after_writing(tmp_path):
    inst_path = tmp_path / "inst.json"
    d = generate_instance(GeneratorSpec(seed=1)).to_dict()
    for acc in d["accounts"]:
        acc["exposure"] *= 10
    inst_path.write_text(json.dumps(d))
    cfg = ExperimentConfig(instance=str(inst_path), encodings=(), out_dir=str(tmp_path / "out"))
    with pytest.raises(InfeasibleLpError):
        run_experiment(cfg)
    assert (tmp_path / "out" / "summary.csv").exists()


def test_kp_demo():
    rows = run_kp(seeds=(0,))
    assert len(rows) == 4
    assert all(r.optimal and r.value == 309 and r.weight == 165 for r in rows)


# ---------------------------------------------------------------- CLI


def test_cli_generate_and_solve(tmp_path, capsys):
    inst = tmp_path / "inst.json"
    assert main(["generate", "--seed", "5", "--out", str(inst)]) == 0
    out = tmp_path / "lp"
    assert main(["solve-lp", "--instance", str(inst), "--out", str(out), "--mps"]) == 0
    assert "status=optimal" in capsys.readouterr().out
    assert (out / "problem.mps").exists() and (out / "allocation_lp.csv").exists()


def test_cli_encode_anneal(tmp_path, capsys):
    qubo = tmp_path / "q.json"
    assert main(["encode", "--encoding", "unbalanced", "--bits", "3", "--out", str(qubo)]) == 0
    samples = tmp_path / "s.csv"
    assert main(["anneal", "--qubo", str(qubo), "--sweeps", "20", "--reads", "3", "--out", str(samples)]) == 0
    assert samples.read_text().startswith("rank,energy,multiplicity,bitstring")
    assert json.loads(samples.with_suffix(".json").read_text())["schedule"]["reads"] == 3


def test_cli_run_and_kp(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schedule": {"sweeps": 30, "reads": 2}, "encodings": ["unbalanced"]}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r"), "--seed", "3"]) == 0
    assert "unbalanced,sampler,3" in capsys.readouterr().out
    assert main(["kp", "--config", str(cfg), "--out", str(tmp_path / "kp")]) == 0
    assert (tmp_path / "kp" / "kp_summary.csv").exists()


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"bits": 0}))
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 4
    assert main(["anneal", "--qubo", str(tmp_path / "nope.json")]) == 4
    inst = generate_instance(GeneratorSpec(seed=1)).to_dict()
    for acc in inst["accounts"]:
        acc["exposure"] *= 10
    path = tmp_path / "heavy.json"
    path.write_text(json.dumps(inst))
    assert main(["solve-lp", "--instance", str(path)]) == 3
