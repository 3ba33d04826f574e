import hashlib
import json
import math

import numpy as np

import pytest
from scipy.io import mmread

from stochmoment.cli import EXIT_INPUT, EXIT_OK, EXIT_SOLVER, config_hash, main

GOLDEN = ["--ts", "--mu", "0.5,0.333333333333333333,0.25,0.02,0.0166666666666666667,0.0142857142857142857",
          "--eps", "0.05"]


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    return main(["--out-dir", str(out), *argv]), out


def test_indexset_golden(tmp_path):
    code, out = run(tmp_path, "indexset", *GOLDEN)
    assert code == EXIT_OK
    lines = (out / "indexset.txt").read_text().splitlines()
    assert len(lines) == 15
    summary = json.loads((out / "indexset_summary.json").read_text())
    assert summary["cardinality"] == 15 and summary["max_degree"] == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "indexset"
    assert {o["path"] for o in manifest["outputs"]} == {"indexset.txt", "indexset_summary.json"}


@pytest.mark.parametrize("argv,count", [(["--isotp", "-N", "3", "-K", "2"], 27), (["--isotd", "-N", "4", "-K", "0"], 1),
                                        (["--atp", "-N", "2", "-K", "3", "--g", "1,2"], 8)])
def test_indexset_counts(tmp_path, argv, count):
    code, out = run(tmp_path, "indexset", *argv)
    assert code == EXIT_OK
    assert json.loads((out / "indexset_summary.json").read_text())["cardinality"] == count


def test_indexset_spec_file(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "isotd", "N": 2, "K": 3}))
    code, out = run(tmp_path, "indexset", "--spec", str(spec))
    assert code == EXIT_OK
    assert len((out / "indexset.txt").read_text().splitlines()) == 10


def test_moment_outputs(tmp_path):
    code, out = run(tmp_path, "moment", "--isotd", "-N", "2", "-K", "3", "--xi", "1:1;1:2,2:1")
    assert code == EXIT_OK
    report = json.loads((out / "sparsity.json").read_text())
    assert report["cardinality"] == 10
    assert set(report["G"]) == {"1x1", "1x2_2x1"}
    G = mmread(str(out / "G_1x1.mtx")).toarray()
    assert G.shape == (10, 10) and abs(G - G.T).max() == 0
    assert (out / "N_1x1.mtx").exists() and (out / "S_1x2_2x1.mtx").exists()


def test_moment_identity_and_k1(tmp_path):
    code, out = run(tmp_path, "moment", "--isotd", "-N", "2", "-K", "2", "--xi", "0;1:1")
    assert code == EXIT_OK
    G0 = mmread(str(out / "G_0.mtx")).toarray()
    np.testing.assert_array_equal(G0, np.eye(6))
    G1 = mmread(str(out / "G_1x1.mtx")).toarray()
    # isoTD(2,2) order: (0,0) (0,1) (0,2) (1,0) (1,1) (2,0)
    e1 = [0, 0, 0, 1, 1, 2]
    for i in range(6):
        for j in range(6):
            l, m = e1[i], e1[j]
            want = 0.0
            if abs(l - m) == 1 and _y2(i) == _y2(j):
                lo = min(l, m) + 1
                want = lo / math.sqrt((2 * lo - 1) * (2 * lo + 1))
            assert G1[i, j] == pytest.approx(want, abs=1e-15)
    report = json.loads((out / "sparsity.json").read_text())
    assert report["G"] == report["S"]


def _y2(i):
    return [0, 1, 2, 0, 1, 0][i]


def test_manifest_complete_and_hashes_match(tmp_path):
    code, out = run(tmp_path, "moment", "--isotp", "-N", "2", "-K", "2", "--diffusion", "2,2")
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {o["path"]: o["sha256"] for o in manifest["outputs"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(listed) == on_disk
    for name, digest in listed.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert manifest["version"] and manifest["seed"] == 0 and len(manifest["config_hash"]) == 64


def test_moment_set_file_roundtrip(tmp_path):
    code, out = run(tmp_path, "indexset", "--isotd", "-N", "2", "-K", "3", name="a")
    assert code == EXIT_OK
    code, _ = run(tmp_path, "moment", "--isotd", "-N", "2", "-K", "3", "--set-file", str(out / "indexset.txt"),
                  "--diffusion", "2,2", name="b")
    assert code == EXIT_OK
    code, _ = run(tmp_path, "moment", "--isotd", "-N", "2", "-K", "4", "--set-file", str(out / "indexset.txt"),
                  "--diffusion", "2,2", name="c")
    assert code == EXIT_INPUT


@pytest.mark.parametrize(
    "argv",
    [
        ["indexset", "--ts", "--mu", "1.0,0.5", "--eps", "0.1"],
        ["indexset", "--atd", "-N", "2", "-K", "3"],
        ["indexset", "--isotd", "-N", "2", "-K", "2.5"],
        ["moment", "--isotd", "-N", "2", "-K", "2"],
        ["moment", "--isotd", "-N", "2", "-K", "2", "--xi", "1:-1"],
        ["moment", "--isotd", "-N", "2", "-K", "2", "--xi", "1:1", "--family", "laguerre"],
        ["rates", "--rows", "4,2"],
        ["experiment"],
    ],
)
def test_input_errors(tmp_path, argv, capsys):
    code, _ = run(tmp_path, *argv)
    assert code == EXIT_INPUT
    assert "error:" in capsys.readouterr().err


def test_empty_sweep_writes_nothing(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"diffusion": {"M": 2, "s": 1.5, "p": 2}, "sweeps": []}))
    code, out = run(tmp_path, "experiment", str(cfg))
    assert code == EXIT_INPUT
    assert not out.exists()


def test_solver_failure_exit_code(tmp_path):
    cfg = {
        "diffusion": {"M": 2, "s": 1.5, "p": 1, "spatial": "sinusoidal"},
        "solver": {"maxit": 1},
        "sweeps": [{"family": "isoTD", "K": [35]}],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, _ = run(tmp_path, "experiment", str(path))
    assert code == EXIT_SOLVER


def _small_experiment(tmp_path):
    cfg = {
        "diffusion": {"M": 2, "s": 1.5, "p": 6},
        "weights": {"index_set": {"kind": "isotd", "N": 2, "K": 12}},
        "sweeps": [{"family": "isoTD", "K": [2, 4, 6]}, {"family": "aTP", "K": [3, 5]}],
        "reference": "exact",
        "best_m": {"from": "aTP", "sizes": [5, 10]},
        "rate": {"from": "aTP", "first": 1, "last": 10},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_experiment_outputs(tmp_path):
    code, out = run(tmp_path, "experiment", str(_small_experiment(tmp_path)))
    assert code == EXIT_OK
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "set_family,cardinality,mean_err_pct,var_err_pct"
    assert len(lines) == 1 + 3 + 2 + 2
    w = json.loads((out / "weights.json").read_text())
    assert len(w["g"]) == 2 and w["rate"] > 0


def test_experiment_rerun_byte_identical(tmp_path):
    cfg = str(_small_experiment(tmp_path))
    main(["--out-dir", str(tmp_path / "a"), "experiment", cfg])
    main(["--out-dir", str(tmp_path / "b"), "--threads", "3", "experiment", cfg])
    for name in ("convergence.csv", "coeff_norms.csv", "weights.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_moment_rerun_byte_identical(tmp_path):
    argv = ["moment", "--atd", "-N", "3", "-K", "5", "--g", "1,1.5,2", "--diffusion", "3,3"]
    main(["--out-dir", str(tmp_path / "a"), *argv])
    main(["--out-dir", str(tmp_path / "b"), "--threads", "4", *argv])
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a == b


def test_bench_cli(tmp_path):
    code, out = run(tmp_path, "bench", "--M", "3", "--p", "2", "--K-max", "3", "--repeats", "1")
    assert code == EXIT_OK
    lines = (out / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("set_family,M,p,K,cardinality,weight_count,wall_time_seconds")
    assert len(lines) == 4


def test_config_hash_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "stochmoment", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
