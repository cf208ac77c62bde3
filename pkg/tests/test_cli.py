import subprocess
import sys

import numpy as np
import pytest

from argmm.cli import main
from argmm.commands import evaluate_model, fit_model
from argmm.config import EmSettings, ExperimentConfig
from argmm.io import load_model, read_csv, read_dataset, write_dataset
from argmm.signal_model import ChannelDataset, ChannelModelConfig


@pytest.fixture
def small_config(tmp_path):
    cfg = ExperimentConfig(
        channel=ChannelModelConfig(M=16, pas_grid_points=720),
        n_train=(40,),
        K=(2,),
        snr_db=(0.0, 10.0),
        estimators=("ar_gmm", "gmm_toeplitz", "ls", "genie"),
        test_size=150,
        em=EmSettings(max_iters=40),
    )
    path = tmp_path / "cfg.json"
    cfg.dump(path)
    return path, cfg


def test_count_params(capsys):
    assert main(["count-params", "--K", "16", "--M", "64", "--orders", "4"]) == 0
    assert capsys.readouterr().out.strip() == "full=65551 proposed=159"


def test_count_params_per_component_orders(capsys):
    assert main(["count-params", "--K", "2", "--M", "8", "--orders", "1,3"]) == 0
    assert capsys.readouterr().out.strip() == "full=129 proposed=11"


def test_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "argmm", "count-params", "--K", "16", "--M", "64", "--orders", "4"],
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "full=65551 proposed=159"


def test_unknown_flag_exits_1(capsys):
    assert_exit(["count-params", "--K", "2", "--M", "4", "--orders", "1", "--frobnicate"], 1)
    assert "usage" in capsys.readouterr().err


def assert_exit(argv, code):
    try:
        rc = main(argv)
    except SystemExit as exc:
        rc = exc.code
    assert rc == code


def test_bad_config_exits_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_train": [10], "surprise": true}')
    assert_exit(["--config", str(bad), "count-params", "--K", "1", "--M", "2", "--orders", "0"], 1)
    assert_exit(["--config", str(tmp_path / "absent.json"), "sweep", "custom"], 1)


def test_numerical_failure_exits_2(tmp_path):
    write_dataset(ChannelDataset(h=np.zeros((10, 8), dtype=complex)), tmp_path / "zeros.bin")
    argv = ["fit", "--data", str(tmp_path / "zeros.bin"), "--K", "2", "--orders", "2", "--model-out", str(tmp_path / "m.json")]
    assert_exit(argv, 2)


def test_fit_then_estimate_matches_in_process(tmp_path, small_config):
    path, cfg = small_config
    common = ["--config", str(path), "--seed", "4", "--out", str(tmp_path / "out")]
    train, test, model = tmp_path / "train.bin", tmp_path / "test.bin", tmp_path / "model.json"
    assert main(common + ["generate", "--N", "40", "--data-out", str(train)]) == 0
    assert main(common + ["generate", "--N", "150", "--stream", "test", "--data-out", str(test)]) == 0
    assert main(common + ["fit", "--data", str(train), "--K", "3", "--orders", "2", "--lambdas", "0.9", "--model-out", str(model)]) == 0
    assert main(common + ["estimate", "--model", str(model), "--data", str(test), "--snr", "0,10"]) == 0
    rows = read_csv(tmp_path / "out" / "estimate.csv")

    cfg4 = cfg.with_(seed=4)
    ds_train, ds_test = read_dataset(train), read_dataset(test)
    in_process = fit_model("ar_gmm", ds_train.h, 3, cfg4, (2, 2, 2), (0.9, 0.9, 0.9))
    expected = evaluate_model(in_process, ds_test, [0.0, 10.0], 4, "ar_gmm", 40)
    for got, want in zip(rows, expected):
        assert got.nmse == pytest.approx(want.nmse, abs=1e-12, rel=0)
        assert (got.K, got.N, got.snr_db) == (3, 40, want.snr_db)
    # the serialized model reproduces the in-process estimates exactly
    loaded = load_model(model)
    exact = evaluate_model(loaded, ds_test, [0.0, 10.0], 4, "ar_gmm", 40)
    assert [r.nmse for r in exact] == [r.nmse for r in expected]


def test_fit_baseline_model(tmp_path, small_config):
    path, _ = small_config
    common = ["--config", str(path), "--out", str(tmp_path / "out")]
    data, model = tmp_path / "d.bin", tmp_path / "g.json"
    assert main(common + ["generate", "--N", "30", "--data-out", str(data)]) == 0
    assert main(common + ["fit", "--data", str(data), "--estimator", "gmm_circulant", "--K", "2", "--model-out", str(model)]) == 0
    assert main(common + ["estimate", "--model", str(model), "--data", str(data), "--snr", "5"]) == 0
    (row,) = read_csv(tmp_path / "out" / "estimate.csv")
    assert row.estimator == "gmm_circulant" and row.status == "ok"


def test_sweep_twice_byte_identical(tmp_path, small_config):
    path, _ = small_config
    outputs = []
    for run, threads in (("a", "1"), ("b", "1"), ("c", "3")):
        out = tmp_path / run
        assert main(["--config", str(path), "--seed", "7", "--out", str(out), "--threads", threads, "sweep", "custom"]) == 0
        outputs.append((out / "sweep_custom.csv").read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
    assert outputs[0].count(b"\n") == 1 + 4 * 2


def test_tune_writes_reusable_parameters(tmp_path, small_config):
    path, _ = small_config
    out = tmp_path / "t"
    assert main(["--config", str(path), "--out", str(out), "tune", "--N", "40", "--K", "2", "--budget", "3", "--steps", "1"]) == 0
    assert (out / "tuned.json").exists()
    assert (out / "tune_trials.csv").read_text().count("\n") == 1 + 4
    sweep_out = tmp_path / "s"
    assert main(["--config", str(path), "--out", str(sweep_out), "sweep", "custom", "--tuned", str(out / "tuned.json")]) == 0
    assert all(r.status == "ok" for r in read_csv(sweep_out / "sweep_custom.csv"))
