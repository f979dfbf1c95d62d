import json
import math

import numpy as np
import pytest

from streamattn.cli import main, read_sparse_columns
from streamattn.core import mat_load, mat_store


def test_gen_run_verify_roundtrip(tmp_path, capsys):
    data = tmp_path / "data"
    assert main([
        "gen", "--n", "48", "--d", "3", "--b", "1.0", "--k", "4",
        "--profile", "spiky", "--seed", "3", "--out-dir", str(data),
    ]) == 0
    for name in ("Q.matf", "K.matf", "V.matf"):
        assert (data / name).exists()
    q = mat_load(data / "Q.matf")
    assert q.shape == (48, 3)
    assert np.abs(q).max() <= 1.0

    run_dir = tmp_path / "run"
    assert main([
        "run", "--q", str(data / "Q.matf"), "--k-mat", str(data / "K.matf"),
        "--v", str(data / "V.matf"), "--k-sparse", "4", "--eps1", "0.5",
        "--eps2", "0.3", "--delta", "0.1", "--degree", "2",
        "--sketch", "ams", "--seed", "7", "--out", str(run_dir),
    ]) == 0
    report = json.loads((run_dir / "report.json").read_text())
    assert report["params"]["n"] == 48
    assert report["dims"]["t"] == 13
    dense = read_sparse_columns(run_dir / "T.csv", 48, 3)
    assert (np.count_nonzero(dense, axis=0) <= 8).all()

    assert main([
        "verify", "--run-report", str(run_dir / "report.json"),
        "--oracle-mode", "full",
    ]) == 0
    out = capsys.readouterr().out
    assert "pass rate" in out
    err_report = json.loads((run_dir / "error_report.json").read_text())
    assert len(err_report["columns"]) == 3
    assert all("xi1_gap" in c for c in err_report["columns"])


def test_run_deterministic_output(tmp_path):
    data = tmp_path / "data"
    main(["gen", "--n", "32", "--d", "2", "--k", "4", "--seed", "1",
          "--out-dir", str(data)])
    args = ["run", "--q", str(data / "Q.matf"), "--k-mat", str(data / "K.matf"),
            "--v", str(data / "V.matf"), "--k-sparse", "4", "--eps2", "0.4",
            "--degree", "2", "--seed", "9"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "T.csv").read_text() == (tmp_path / "b" / "T.csv").read_text()


def test_run_cross_identity_matches_plain(tmp_path):
    rng = np.random.default_rng(0)
    n, d = 32, 2
    x1 = rng.uniform(-1, 1, (n, d))
    x2 = rng.uniform(-1, 1, (n, d))
    x2_scaled = x2 * (1.0 / (math.sqrt(n) * np.linalg.svd(x2, compute_uv=False)[0]))
    data = tmp_path / "data"
    data.mkdir()
    mat_store(x1, data / "X1.matf")
    mat_store(x2_scaled, data / "X2.matf")
    mat_store(np.eye(d), data / "I.matf")
    common = ["--k-sparse", "4", "--eps2", "0.4", "--degree", "2", "--seed", "5"]
    assert main([
        "run-cross", "--x1", str(data / "X1.matf"), "--x2", str(data / "X2.matf"),
        "--wq", str(data / "I.matf"), "--wk", str(data / "I.matf"),
        "--wv", str(data / "I.matf"), *common, "--out", str(tmp_path / "cross"),
    ]) == 0
    assert main([
        "run", "--q", str(data / "X1.matf"), "--k-mat", str(data / "X2.matf"),
        "--v", str(data / "X2.matf"), *common, "--out", str(tmp_path / "plain"),
    ]) == 0
    assert (tmp_path / "cross" / "T.csv").read_text() == (
        tmp_path / "plain" / "T.csv"
    ).read_text()


def test_v_norm_warning(tmp_path, capsys):
    rng = np.random.default_rng(2)
    n, d = 16, 2
    data = tmp_path / "data"
    data.mkdir()
    mat_store(rng.uniform(-1, 1, (n, d)), data / "Q.matf")
    mat_store(rng.uniform(-1, 1, (n, d)), data / "K.matf")
    mat_store(rng.uniform(-1, 1, (n, d)), data / "V.matf")  # norm >> 1/sqrt(n)
    assert main([
        "run", "--q", str(data / "Q.matf"), "--k-mat", str(data / "K.matf"),
        "--v", str(data / "V.matf"), "--k-sparse", "2", "--eps2", "0.5",
        "--degree", "2", "--out", str(tmp_path / "out"),
    ]) == 0
    assert "exceeds 1/sqrt(n)" in capsys.readouterr().err


def test_bench_memory_flat_across_n(capsys):
    assert main([
        "bench-memory", "--n-list", "1024,4096,16384", "--d", "2",
        "--k-sparse", "4", "--eps2", "0.5", "--degree", "2",
    ]) == 0
    out = capsys.readouterr().out
    assert "identical across all n" in out


def test_cli_error_paths(tmp_path, capsys):
    assert main(["run", "--q", str(tmp_path / "missing.matf"),
                 "--k-mat", str(tmp_path / "missing.matf"),
                 "--v", str(tmp_path / "missing.matf"),
                 "--k-sparse", "2", "--out", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.matf"
    bad.write_bytes(b"NOTMATF0" + b"\x00" * 16)
    assert main(["run", "--q", str(bad), "--k-mat", str(bad), "--v", str(bad),
                 "--k-sparse", "2", "--out", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err
