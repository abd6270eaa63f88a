import numpy as np
import pytest

from gaze_fusion.errors import DatasetError
from gaze_fusion.models.ttgf import FusionTopology
from gaze_fusion.settings.config import Regime
from gaze_fusion.training.ablation import (
    ABLATION_ROWS,
    MODEL_COLUMN,
    MULTIPLE_COLUMN,
    build_report,
    read_report,
    row_label,
    run_ablation,
    setting_config,
    write_report,
)
from gaze_fusion.training.trainer import build_estimator, train_run


def test_row_order_and_labels():
    assert [(s.label, s.multiple_sets) for s in ABLATION_ROWS] == [
        ("LR-EH", False),
        ("TTGF-only", False),
        ("TTGF-only", True),
        ("TTGF+GAM", True),
    ]
    assert row_label("lr_eh", "single", False) == ("LR-EH", False)
    assert row_label("eh_lr", "mixed", False) == ("TTGF-only", True)
    assert row_label("eh_lr", "mixed", True) == ("TTGF+GAM", True)
    assert row_label("two_eyes", "single", False) == ("TWO-EYES", False)


def test_setting_config_overrides(tiny_config):
    config = setting_config(tiny_config, ABLATION_ROWS[0], seed=7)
    assert config.model.topology == FusionTopology.LR_EH
    assert config.train.regime == Regime.SINGLE
    assert not config.train.gam_enabled
    assert config.train.seed == 7
    assert config.model.face_size == tiny_config.model.face_size


def test_run_ablation_table(tiny_config, tiny_datasets):
    frame = run_ablation(tiny_datasets, tiny_config, seeds=(0,), max_steps=2)
    assert list(frame.columns) == [MODEL_COLUMN, MULTIPLE_COLUMN, "D1", "D2", "D3"]
    assert frame[MODEL_COLUMN].tolist() == ["LR-EH", "TTGF-only", "TTGF-only", "TTGF+GAM"]
    assert frame[MULTIPLE_COLUMN].tolist() == [False, False, True, True]
    values = frame[["D1", "D2", "D3"]].to_numpy()
    assert np.all(np.isfinite(values)) and np.all(values >= 0.0)


def test_report_from_run_directories(tmp_path, tiny_config, tiny_datasets):
    runs = []
    for k, setting in enumerate(ABLATION_ROWS[2:]):
        config = setting_config(tiny_config, setting, seed=0)
        model, gam = build_estimator(config, 4)
        train_run(model, gam, tiny_datasets, config, out_dir=tmp_path / f"run{k}", max_steps=2)
        runs.append(tmp_path / f"run{k}")
    frame = build_report(list(reversed(runs)))
    assert frame[MODEL_COLUMN].tolist() == ["TTGF-only", "TTGF+GAM"]
    assert list(frame.columns)[2:] == ["D1", "D2", "D3"]
    assert "D0" in build_report(runs, include_anchor=True).columns

    write_report(frame, tmp_path / "report.csv")
    loaded = read_report(tmp_path / "report.csv")
    np.testing.assert_array_equal(loaded[["D1", "D2", "D3"]].to_numpy(), frame[["D1", "D2", "D3"]].to_numpy())


def test_report_errors(tmp_path):
    with pytest.raises(DatasetError):
        build_report([])
    with pytest.raises(DatasetError):
        build_report([tmp_path / "missing"])
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError):
        build_report([tmp_path / "empty"])


@pytest.mark.slow
def test_ablation_trends_on_default_datasets():
    from gaze_fusion.data.generate import generate_dataset
    from gaze_fusion.data.specs import default_specs
    from gaze_fusion.settings.config import load_run_config

    from .conftest import CONFIG_DIR

    datasets = [generate_dataset(spec) for spec in default_specs(samples_per_subject=30)]
    config = load_run_config(CONFIG_DIR / "toy.conf")
    frame = run_ablation(datasets, config, seeds=(0, 1, 2)).set_index([MODEL_COLUMN, MULTIPLE_COLUMN])
    single = frame.loc[("TTGF-only", False)]
    mixed = frame.loc[("TTGF-only", True)]
    adapted = frame.loc[("TTGF+GAM", True)]
    for name in ("D1", "D2", "D3"):
        assert mixed[name] < single[name], name
        assert adapted[name] < mixed[name], name
