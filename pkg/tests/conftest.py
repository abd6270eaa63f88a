"""
测试公共设施
慢速的统计验收测试默认跳过，用 --runslow 开启
"""

from pathlib import Path
from typing import List

import numpy as np
import pytest
import structlog

from gaze_fusion.data.generate import generate_dataset
from gaze_fusion.data.specs import DatasetSpec, default_specs
from gaze_fusion.settings.config import RunConfig, load_run_config
from gaze_fusion.storage.dataset_store import SyntheticDataset, save_dataset

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="运行标记为 slow 的测试")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def reset_logging():
    """命令行测试会把日志绑定到被捕获的stderr，每个测试后恢复默认"""
    yield
    structlog.reset_defaults()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config_path() -> Path:
    return CONFIG_DIR / "tiny.conf"


@pytest.fixture
def tiny_config(tiny_config_path) -> RunConfig:
    return load_run_config(tiny_config_path)


def tiny_specs(samples_per_subject: int = 10, num_subjects: int = 2) -> List[DatasetSpec]:
    """默认四个数据集的缩小版本：8×8 图像，每个数据集 20 个样本"""
    return [
        spec.model_copy(update={"num_subjects": num_subjects, "face_size": 8, "eye_size": 8})
        for spec in default_specs(samples_per_subject=samples_per_subject)
    ]


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("data")
    for spec in tiny_specs():
        save_dataset(generate_dataset(spec), root / spec.name)
    return root


@pytest.fixture(scope="session")
def tiny_datasets(tiny_data_dir) -> List[SyntheticDataset]:
    from gaze_fusion.storage.dataset_store import DatasetStore

    return DatasetStore(tiny_data_dir).load_all()
