import json

import numpy as np
import pytest

from attn_newton.cli import main
from attn_newton.io import (
    TRACE_COLUMNS,
    InstanceFileError,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    read_trace,
    save_instance,
)
from attn_newton.oracles import plant


def test_instance_round_trip(tmp_path):
    pl = plant(5, 7, 2)
    path = save_instance(tmp_path / "i.json", pl.inst, seed=5, plant=pl.p_star)
    inst, p, seed = load_instance(path)
    assert seed == 5
    for name in ("A1", "A2", "A3", "B", "w"):
        np.testing.assert_array_equal(getattr(inst, name), getattr(pl.inst, name))
    np.testing.assert_array_equal(p.X, pl.X_star)


def test_missing_weights_default_to_ones():
    data = instance_to_dict(plant(0, 4, 2).inst)
    del data["W"]
    inst, _, _ = instance_from_dict(data)
    np.testing.assert_array_equal(inst.w, np.ones(4))


def test_bad_instance_files(tmp_path):
    pl = plant(1, 4, 2)
    data = instance_to_dict(pl.inst, plant=pl.p_star)
    data["Xstar"] = (pl.X_star + 0.5).tolist()
    with pytest.raises(InstanceFileError, match="loss"):
        instance_from_dict(data)
    data = instance_to_dict(pl.inst)
    data["n"] = 99
    with pytest.raises(InstanceFileError):
        instance_from_dict(data)
    with pytest.raises(InstanceFileError):
        instance_from_dict({"A1": [[1.0]]})
    (tmp_path / "junk.json").write_text("{")
    with pytest.raises(InstanceFileError):
        load_instance(tmp_path / "junk.json")


def test_gen_then_run(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), "--planted", "--n", "8", "--d", "2", "--seed", "3"]) == 0
    inst, p, seed = load_instance(tmp_path / "instance.json")
    assert (inst.n, inst.d, seed) == (8, 2, 3) and p is not None
    code = main(["run", "--out", str(tmp_path), "--instance", str(tmp_path / "instance.json"), "--tmax", "3"])
    assert code == 0
    rows = read_trace(tmp_path / "trace.csv")
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert rows[-1]["step_norm"] == "" and rows[0]["step_norm"] != ""
    assert all(r["t_solve_ms"] == "" for r in rows)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["n"] == 8 and summary["seeds"]["top"] == 0


def test_run_is_byte_identical(tmp_path):
    args = ["run", "--n", "8", "--d", "2", "--sketch", "sparse", "--m", "128", "--tmax", "4", "--init", "random"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_timings_flag_fills_columns(tmp_path):
    main(["run", "--n", "6", "--d", "2", "--tmax", "1", "--timings", "--out", str(tmp_path)])
    assert all(r["t_hess_ms"] != "" for r in read_trace(tmp_path / "trace.csv"))


def test_run_rejects_bad_config(tmp_path, capsys):
    assert main(["run", "--tmax", "0", "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "config"
    main(["gen", "--out", str(tmp_path), "--n", "6", "--d", "2"])
    assert main(["run", "--instance", str(tmp_path / "instance.json"), "--n", "7", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "mismatch" and err["field"] == "n"
    assert main(["run", "--instance", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert main(["run", "--init", "plant", "--out", str(tmp_path)]) == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 5, "d": 2, "tmax": 2}))
    main(["run", "--config", str(cfg), "--tmax", "1", "--out", str(tmp_path)])
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["n"] == 5 and summary["config"]["t_max"] == 1


def test_verify_exit_codes(tmp_path, capsys):
    assert main(["verify", "--suites", "", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "verify_report.json").read_text())["status"] == "no_tests"
    assert main(["verify", "--suites", "gradient", "--quick", "--out", str(tmp_path)]) == 0
    assert main(["verify", "--suites", "gradient", "--quick", "--corrupt-gradient", "--out", str(tmp_path)]) == 1
    assert main(["verify", "--suites", "bogus", "--out", str(tmp_path)]) == 2


def test_bench_single_point(tmp_path):
    assert main(["bench", "--ns", "64", "--reps", "1", "--d", "2", "--m", "64", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "bench.csv").read_text()
    assert "sketched_gram" in text and "exact_gram" in text
    assert json.loads((tmp_path / "bench_summary.json").read_text())["ns"] == [64]


def test_thread_env_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("ATTN_NEWTON_THREADS", "zero")
    assert main(["gen", "--out", str(tmp_path)]) == 2
    monkeypatch.setenv("ATTN_NEWTON_THREADS", "1")
    assert main(["gen", "--out", str(tmp_path)]) == 0
