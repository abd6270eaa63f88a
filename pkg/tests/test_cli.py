import json

import numpy as np
import pandas as pd
import pytest

from gaze_fusion.core import ops
from gaze_fusion.main import EVAL_METRICS_FILE, main
from gaze_fusion.storage.dataset_store import MANIFEST_NAME
from gaze_fusion.training.ablation import build_report, read_report
from gaze_fusion.training.trainer import METRICS_FILE, SUMMARY_FILE, read_metrics

from .conftest import tiny_specs


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "specs.txt"
    path.write_text("# 测试用\n" + "\n".join(s.to_line() for s in tiny_specs()) + "\n", encoding="utf-8")
    return path


def _train(data_dir, out_dir, config_path, *extra):
    return main([
        "train", "--config", str(config_path), "--data-dir", str(data_dir),
        "--out-dir", str(out_dir), "--max-steps", "2", *extra,
    ])


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out
    assert main(["train", "--no-such-flag"]) == 1
    assert main(["train", "--regime", "sometimes"]) == 1


def test_bad_parameter_exits_with_one(tmp_path, tiny_data_dir, tiny_config_path, capsys):
    assert _train(tiny_data_dir, tmp_path / "run", tiny_config_path, "--regime", "single") == 1
    assert "--dataset" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()
    assert main(["train", "--anchor-epochs", "-1"]) == 1


def test_gen_data_writes_and_reproduces(tmp_path, spec_file):
    assert main(["gen-data", "--spec", str(spec_file), "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--spec", str(spec_file), "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("D0", "D1", "D2", "D3"):
        first = (tmp_path / "a" / name / MANIFEST_NAME).read_bytes()
        assert first == (tmp_path / "b" / name / MANIFEST_NAME).read_bytes()

    assert main(["gen-data", "--spec", str(spec_file), "--out-dir", str(tmp_path / "c"), "--seed", "99"]) == 0
    assert (tmp_path / "c" / "D1" / MANIFEST_NAME).read_bytes() != (tmp_path / "a" / "D1" / MANIFEST_NAME).read_bytes()


def test_gen_data_reports_spec_line(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("name=A dataset_id=0\nname=B dataset_id=1 gaze_range=wide\n", encoding="utf-8")
    assert main(["gen-data", "--spec", str(path), "--out-dir", str(tmp_path / "out")]) == 2
    assert ":2:" in capsys.readouterr().err
    assert main(["gen-data", "--spec", str(tmp_path / "missing.txt")]) == 2


def test_grad_check_command(tiny_config_path, monkeypatch):
    assert main(["grad-check", "--config", str(tiny_config_path), "--max-elements", "3"]) == 0
    original = ops.gelu_derivative
    monkeypatch.setattr(ops, "gelu_derivative", lambda x: 1.1 * original(x))
    assert main(["grad-check", "--config", str(tiny_config_path), "--max-elements", "3"]) == 2


def test_train_eval_and_report(tmp_path, tiny_data_dir, tiny_config_path):
    runs = {
        "lr_eh": ["--topology", "lr_eh", "--regime", "single", "--dataset", "D1"],
        "ttgf_single": ["--topology", "eh_lr", "--regime", "single", "--dataset", "D1"],
        "ttgf_mixed": ["--regime", "mixed", "--gam", "off"],
        "ttgf_gam": ["--regime", "mixed", "--gam", "on"],
    }
    for name, extra in runs.items():
        assert _train(tiny_data_dir, tmp_path / name, tiny_config_path, *extra) == 0
        assert (tmp_path / name / METRICS_FILE).exists()

    summary = json.loads((tmp_path / "ttgf_gam" / SUMMARY_FILE).read_text(encoding="utf-8"))
    assert summary["gam_enabled"] and summary["regime"] == "mixed"
    assert not json.loads((tmp_path / "lr_eh" / SUMMARY_FILE).read_text(encoding="utf-8"))["gam_enabled"]

    run = tmp_path / "ttgf_gam"
    assert main(["eval", "--run-dir", str(run), "--data-dir", str(tiny_data_dir)]) == 0
    metrics = read_metrics(run / METRICS_FILE)
    last = metrics[(metrics["split"] == "test") & (metrics["epoch"] == metrics["epoch"].max())].set_index("dataset")
    evaluated = read_metrics(run / EVAL_METRICS_FILE)
    evaluated = evaluated[evaluated["split"] == "test"].set_index("dataset")
    for name in ("D0", "D1", "D2", "D3"):
        np.testing.assert_allclose(evaluated.loc[name, "angular_error_deg"], last.loc[name, "angular_error_deg"], rtol=1e-12)

    csv = tmp_path / "report.csv"
    assert main(["report", *(str(tmp_path / n) for n in runs), "--csv", str(csv)]) == 0
    frame = read_report(csv)
    assert frame["model"].tolist() == ["LR-EH", "TTGF-only", "TTGF-only", "TTGF+GAM"]
    assert frame["multiple_sets"].tolist() == [False, False, True, True]
    assert list(frame.columns) == ["model", "multiple_sets", "D1", "D2", "D3"]
    # 单集运行只覆盖 D1
    assert np.isnan(frame.loc[0, "D2"])
    pd.testing.assert_frame_equal(frame, build_report([tmp_path / n for n in runs]))


def test_training_twice_gives_identical_metrics(tmp_path, tiny_data_dir, tiny_config_path):
    for name in ("first", "second"):
        assert _train(tiny_data_dir, tmp_path / name, tiny_config_path, "--seed", "3") == 0
    assert (tmp_path / "first" / METRICS_FILE).read_bytes() == (tmp_path / "second" / METRICS_FILE).read_bytes()


def test_runtime_errors_exit_with_two(tmp_path, tiny_data_dir, tiny_config_path, capsys):
    assert main(["eval", "--run-dir", str(tmp_path / "absent"), "--data-dir", str(tiny_data_dir)]) == 2
    assert main(["report", str(tmp_path / "absent")]) == 2
    assert _train(tiny_data_dir, tmp_path / "bad", tiny_config_path, "--regime", "single", "--dataset", "D1", "--gam", "on") == 2
    assert _train(tiny_data_dir, tmp_path / "bad", tiny_config_path, "--dataset", "D9") == 2
    assert "错误" in capsys.readouterr().err
