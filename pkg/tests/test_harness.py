import json
import math
import struct

import numpy as np
import pytest

from freegamp.channels import AWGN, GaussianPrior
from freegamp.cli import main
from freegamp.config import ConfigError, parse_config, with_overrides
from freegamp.dumps import HEADER, MAGIC, read_dense, read_state, write_dense, write_state
from freegamp.ensembles import EnsembleSpec, synthesize_problem
from freegamp.errors import DomainError
from freegamp.harness import ResultRecord, compare_strategies, run_experiment
from freegamp.oracle import lmmse
from freegamp.solvers import SecondOrderStrategy, SolverConfig, nmse_db, run

MINIMAL = """
schema_version = 1

[ensemble]
kind = "iid-gaussian"
N = 40
K = 20

[prior]
name = "gaussian"

[likelihood]
name = "awgn"
noise_var = 0.5
"""


def write_cfg(tmp_path, body=MINIMAL, extra="", name="cfg.toml"):
    p = tmp_path / name
    p.write_text(body + extra)
    return p


# ---------------------------------------------------------------- config

def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(write_cfg(tmp_path))
    assert cfg.solver.damping == 0.7
    assert cfg.solver.tolerance == 1e-8
    assert cfg.solver.max_iterations == 500
    assert cfg.trials == 1 and cfg.strategies == ("gamp-full",)
    assert cfg.prior == GaussianPrior() and cfg.likelihood == AWGN(0.5)


def test_misspelled_key_gets_suggestion(tmp_path):
    with pytest.raises(ConfigError, match="did you mean 'damping'") as ei:
        parse_config(write_cfg(tmp_path, extra="\n[solver]\ndampening = 0.5\n"))
    assert ei.value.key == "solver.dampening"


@pytest.mark.parametrize("extra, key", [
    ("trials = 0\n", "trials"),
    ("jobs = -1\n", "jobs"),
])
def test_counts_must_be_positive(tmp_path, extra, key):
    with pytest.raises(ConfigError) as ei:
        parse_config(write_cfg(tmp_path, body=extra + MINIMAL))
    assert ei.value.key == key


def test_unknown_channel_and_strategy(tmp_path):
    with pytest.raises(ConfigError, match="laplace"):
        parse_config(write_cfg(tmp_path, body=MINIMAL.replace('"gaussian"', '"laplase"')))
    with pytest.raises(ConfigError, match="exact-ep"):
        parse_config(write_cfg(tmp_path, extra='\n[solver]\nstrategies = ["exact_ep"]\n'))
    with pytest.raises(ConfigError, match="prior channel"):
        parse_config(write_cfg(tmp_path, body=MINIMAL.replace('name = "awgn"\nnoise_var = 0.5',
                                                              'name = "laplace"')))


def test_schema_version_is_required(tmp_path):
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(write_cfg(tmp_path, body=MINIMAL.replace("schema_version = 1", "")))


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ConfigError, match="line 6"):
        parse_config(write_cfg(tmp_path, body=MINIMAL.replace("N = 40", "N = = 40")))


def test_overrides(tmp_path):
    cfg = parse_config(write_cfg(tmp_path))
    cfg2 = with_overrides(cfg, seed=9, out_dir="x", strategies=["exact-ep"])
    assert cfg2.seed == 9 and cfg2.ensemble.seed == 9
    assert cfg2.output.dir == "x" and cfg2.strategies == ("exact-ep",)
    with pytest.raises(ConfigError):
        with_overrides(cfg, strategies=["nope"])


# ---------------------------------------------------------------- experiments

def test_run_is_deterministic(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, body="trials = 2\n" + MINIMAL))
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["comparison.csv", "summary.jsonl", "trajectory_gamp-full_trial000.csv",
                     "trajectory_gamp-full_trial001.csv"]
    for n in names:
        if n.endswith(".csv"):
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_cross_product_and_seeds(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, body="trials = 2\nseed = 5\n" + MINIMAL,
                                 extra='\n[solver]\nstrategies = ["gamp-iid", "exact-ep"]\n'))
    recs = run_experiment(cfg, tmp_path / "out")
    assert [(r.trial, r.strategy, r.seed) for r in recs] == [
        (0, "gamp-iid", 5), (0, "exact-ep", 5), (1, "gamp-iid", 6), (1, "exact-ep", 6)]
    lines = (tmp_path / "out" / "summary.jsonl").read_text().splitlines()
    assert [json.loads(l)["strategy"] for l in lines] == [r.strategy for r in recs]


def test_parallel_jobs_match_serial(tmp_path):
    body = "trials = 2\n" + MINIMAL
    serial = parse_config(write_cfg(tmp_path, body=body))
    par = parse_config(write_cfg(tmp_path, body="jobs = 2\n" + body, name="p.toml"))
    run_experiment(serial, tmp_path / "s")
    run_experiment(par, tmp_path / "p")
    for n in ("trajectory_gamp-full_trial001.csv", "comparison.csv"):
        assert (tmp_path / "s" / n).read_bytes() == (tmp_path / "p" / n).read_bytes()


def test_gaussian_records_match_lmmse(tmp_path):
    cfg = parse_config(write_cfg(
        tmp_path, body="trials = 3\n" + MINIMAL,
        extra='\n[solver]\nstrategies = ["gamp-full", "exact-ep"]\ntolerance = 1e-12\n'
              'max_iterations = 2000\n'))
    for r in run_experiment(cfg, tmp_path / "out"):
        P = synthesize_problem(cfg.ensemble, cfg.prior, cfg.likelihood, seed=r.seed)
        x, _ = lmmse(P.A, P.y, 1.0, 0.5)
        ref = nmse_db(x, P.x_true)
        assert r.converged
        assert abs(r.nmse_db - ref) <= 1e-6 * abs(ref)


def test_diverged_trial_is_recorded(tmp_path):
    # the flipped sign makes the Gaussian belief improper on the first sweep
    cfg = parse_config(write_cfg(tmp_path, extra='\n[solver]\nstrategies = ["exact-ep"]\n'
                                                  '[solver.strategy]\nep_sign = -1.0\n'))
    recs = run_experiment(cfg, tmp_path / "out")
    assert recs[0].diverged and not recs[0].converged and math.isnan(recs[0].nmse_db)
    row = compare_strategies(recs)[0]
    assert row["divergence_rate"] == 1.0
    assert json.loads((tmp_path / "out" / "summary.jsonl").read_text())["nmse_db"] is None


# ---------------------------------------------------------------- summaries

def rec(strategy, nmse, diverged=False, iters=10):
    return ResultRecord(0, 0, strategy, iters, not diverged, diverged, nmse, 0.1, 0.5, 0,
                        1e-9, 1e-9, 1e-10)


def test_single_record_summary():
    row = compare_strategies([rec("gamp-iid", -12.5)])[0]
    assert row["mean_nmse_db"] == row["median_nmse_db"] == -12.5
    assert row["mean_iterations"] == 10 and row["max_residual"] == 1e-9
    assert row["divergence_rate"] == 0.0 and row["converged_rate"] == 1.0


def test_divergence_rate_column():
    rows = compare_strategies([rec("a", -10.0), rec("a", float("nan"), True),
                               rec("a", -14.0), rec("b", -3.0), rec("a", -12.0)])
    a = rows[0]
    assert a["strategy"] == "a" and a["trials"] == 4
    assert a["divergence_rate"] == 0.25 and a["mean_nmse_db"] == -12.0
    assert rows[1]["trials"] == 1
    with pytest.raises(ValueError):
        compare_strategies([])


def test_iid_and_full_agree_at_scale():
    P = synthesize_problem(EnsembleSpec("iid-gaussian", 2048, 1024, seed=13), GaussianPrior(),
                           AWGN(0.1))
    res = {}
    for kind in ("gamp-iid", "gamp-full"):
        _, st = run(P, SolverConfig(strategy=SecondOrderStrategy(kind)))
        res[kind] = nmse_db(st.x_hat, P.x_true)
    assert abs(res["gamp-iid"] - res["gamp-full"]) <= 0.2


# ---------------------------------------------------------------- dumps

def test_dense_roundtrip(tmp_path):
    M = np.arange(12.0).reshape(3, 4) / 7
    write_dense(tmp_path / "m.bin", M)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:8] == MAGIC and len(raw) == 16 + 8 * 12
    assert struct.unpack("<II", raw[8:16]) == (3, 4)
    assert read_dense(tmp_path / "m.bin").tobytes() == M.tobytes()


def test_dense_rejects_bad_payload(tmp_path):
    (tmp_path / "bad.bin").write_bytes(HEADER.pack(MAGIC, 2, 2) + b"\0" * 8)
    with pytest.raises(DomainError, match="payload"):
        read_dense(tmp_path / "bad.bin")
    (tmp_path / "junk").write_bytes(b"\x00\x01garbage")
    with pytest.raises(DomainError):
        read_dense(tmp_path / "junk")


def test_csv_import(tmp_path):
    (tmp_path / "m.csv").write_text("1,2\n3,4.5\n")
    np.testing.assert_array_equal(read_dense(tmp_path / "m.csv"), [[1, 2], [3, 4.5]])


def test_state_roundtrip(tmp_path):
    P = synthesize_problem(EnsembleSpec("iid-gaussian", 12, 6, seed=0), GaussianPrior(), AWGN(0.5))
    _, st = run(P, SolverConfig(strategy=SecondOrderStrategy("exact-ep")))
    write_state(tmp_path / "s.bin", st, P.y)
    back, y = read_state(tmp_path / "s.bin", 6)
    assert y.tobytes() == P.y.tobytes()
    for k in ("x_hat", "tau_x", "L_x", "z_hat", "L_z", "m", "Lambda_x", "Lambda_z"):
        assert getattr(back, k).tobytes() == getattr(st, k).tobytes()
    with pytest.raises(DomainError):
        read_state(tmp_path / "s.bin", 18)


# ---------------------------------------------------------------- CLI

def test_cli_run(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    code = main(["run", str(cfg), "--out-dir", str(tmp_path / "o"), "--seed", "3",
                 "--strategy", "gamp-iid", "--strategy", "exact-ep"])
    out = capsys.readouterr().out
    assert code == 0 and "gamp-iid" in out and "exact-ep" in out
    assert (tmp_path / "o" / "trajectory_exact-ep_trial000.csv").exists()
    header = (tmp_path / "o" / "trajectory_exact-ep_trial000.csv").read_text().splitlines()[0]
    assert header == "iteration,mse,nmse_db,residual_f1,residual_f2,clip_count,change"


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra="\n[solver]\ndampening = 0.5\n")
    assert main(["run", str(cfg)]) == 2
    assert "damping" in capsys.readouterr().err


def test_cli_check_identities(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    c = parse_config(cfg)
    P = synthesize_problem(c.ensemble, c.prior, c.likelihood)
    _, st = run(P, SolverConfig(tolerance=1e-14, max_iterations=3000,
                                strategy=SecondOrderStrategy("exact-ep")))
    write_dense(tmp_path / "A.bin", P.A)
    write_state(tmp_path / "s.bin", st, P.y)
    assert main(["check-identities", str(tmp_path / "s.bin"), str(tmp_path / "A.bin"),
                 "--config", str(cfg)]) == 0
    assert "max=" in capsys.readouterr().out
    st.x_hat = st.x_hat + 1e-3
    write_state(tmp_path / "s2.bin", st, P.y)
    assert main(["check-identities", str(tmp_path / "s2.bin"), str(tmp_path / "A.bin"),
                 "--config", str(cfg)]) == 1


def test_cli_spectrum(tmp_path, capsys):
    P = synthesize_problem(EnsembleSpec("iid-gaussian", 400, 200, seed=1), GaussianPrior(), AWGN(1.0))
    write_dense(tmp_path / "A.bin", P.A)
    assert main(["spectrum", str(tmp_path / "A.bin"), "--omega", "-0.25,-0.5",
                 "--export", str(tmp_path / "s.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "omega,r_jz_numeric,r_jz_mp,r_jx_numeric,r_jx_mp"
    for line in lines[1:]:
        w, jz, jz_mp, jx, jx_mp = map(float, line.split(","))
        assert abs(jz - jz_mp) <= 0.05 * jz_mp and abs(jx - jx_mp) <= 0.05 * jx_mp
    assert (tmp_path / "s.csv").read_text().startswith("atom,weight")
