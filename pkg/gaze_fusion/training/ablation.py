"""
消融实验
四种设置按固定行序对比：LR-EH单集、TTGF单集、TTGF混合、TTGF+GAM混合；每格为多个种子的中位数
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from ..errors import DatasetError
from ..models.ttgf import FusionTopology
from ..settings.config import Regime, RunConfig
from ..storage.dataset_store import SyntheticDataset
from .trainer import METRICS_FILE, SUMMARY_FILE, build_estimator, read_metrics, train_run

logger = structlog.get_logger(__name__)

MODEL_COLUMN = "model"
MULTIPLE_COLUMN = "multiple_sets"


@dataclass(frozen=True)
class AblationSetting:
    label: str
    topology: FusionTopology
    regime: Regime
    gam_enabled: bool

    @property
    def multiple_sets(self) -> bool:
        return self.regime == Regime.MIXED


ABLATION_ROWS: Tuple[AblationSetting, ...] = (
    AblationSetting("LR-EH", FusionTopology.LR_EH, Regime.SINGLE, False),
    AblationSetting("TTGF-only", FusionTopology.EH_LR, Regime.SINGLE, False),
    AblationSetting("TTGF-only", FusionTopology.EH_LR, Regime.MIXED, False),
    AblationSetting("TTGF+GAM", FusionTopology.EH_LR, Regime.MIXED, True),
)


def setting_config(base: RunConfig, setting: AblationSetting, seed: int) -> RunConfig:
    model = base.model.model_copy(update={"topology": setting.topology})
    train = base.train.model_copy(update={"regime": setting.regime, "gam_enabled": setting.gam_enabled, "seed": seed})
    return RunConfig(model=model, train=train)


def row_label(topology: str, regime: str, gam_enabled: bool) -> Tuple[str, bool]:
    """由运行配置推出表格行名与是否多数据集"""
    if gam_enabled:
        name = "TTGF+GAM"
    elif topology == FusionTopology.EH_LR.value:
        name = "TTGF-only"
    else:
        name = FusionTopology(topology).name.replace("_", "-")
    return name, regime == Regime.MIXED.value


def _train_errors(config: RunConfig, datasets: Sequence[SyntheticDataset], max_steps: Optional[int]) -> Dict[str, float]:
    model, gam = build_estimator(config, len(datasets) if config.train.regime == Regime.MIXED else 1)
    result = train_run(model, gam, datasets, config, max_steps=max_steps)
    return {name: values["test_vs_label"] for name, values in result.summary["final"].items()}


def run_ablation(
    datasets: Sequence[SyntheticDataset],
    base: RunConfig,
    seeds: Sequence[int] = (0, 1, 2),
    settings: Sequence[AblationSetting] = ABLATION_ROWS,
    max_steps: Optional[int] = None,
) -> pd.DataFrame:
    """返回每个设置一行、每个非锚数据集一列的测试误差中位数表"""
    datasets = sorted(datasets, key=lambda d: d.dataset_id)
    targets = [d for d in datasets if d.dataset_id != 0] or list(datasets)
    rows = []
    for setting in settings:
        per_seed: Dict[str, List[float]] = {d.name: [] for d in targets}
        for seed in seeds:
            config = setting_config(base, setting, seed)
            if setting.multiple_sets:
                errors = _train_errors(config, datasets, max_steps)
                for d in targets:
                    per_seed[d.name].append(errors[d.name])
            else:
                for d in targets:
                    per_seed[d.name].append(_train_errors(config, [d], max_steps)[d.name])
        row = {MODEL_COLUMN: setting.label, MULTIPLE_COLUMN: setting.multiple_sets}
        row.update({name: float(np.median(values)) for name, values in per_seed.items()})
        rows.append(row)
        logger.info("消融设置完成", model=setting.label, multiple_sets=setting.multiple_sets)
    return pd.DataFrame(rows, columns=[MODEL_COLUMN, MULTIPLE_COLUMN] + [d.name for d in targets])


def collect_run(run_dir: Union[str, Path]) -> Tuple[str, bool, Dict[str, float], Dict[str, int]]:
    """读取一个运行目录最后一个epoch的测试误差"""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise DatasetError(f"运行目录不存在: {run_dir}")
    summary_path = run_dir / SUMMARY_FILE
    if not summary_path.exists():
        raise DatasetError(f"运行目录缺少 {SUMMARY_FILE}: {run_dir}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    metrics = read_metrics(run_dir / METRICS_FILE)
    tests = metrics[metrics["split"] == "test"]
    last = tests[tests["epoch"] == tests["epoch"].max()]
    errors = {str(r.dataset): float(r.angular_error_deg) for r in last.itertuples()}
    ids = {name: int(info["dataset_id"]) for name, info in summary.get("datasets", {}).items()}
    label, multiple = row_label(summary["topology"], summary["regime"], bool(summary["gam_enabled"]))
    return label, multiple, errors, ids


def build_report(run_dirs: Sequence[Union[str, Path]], include_anchor: bool = False) -> pd.DataFrame:
    """把多个运行合并成对比表；行名相同的运行（如不同数据集上的单集训练）合并到同一行"""
    if not run_dirs:
        raise DatasetError("没有给出运行目录")
    rows: Dict[Tuple[str, bool], Dict[str, float]] = {}
    dataset_ids: Dict[str, int] = {}
    for run_dir in run_dirs:
        label, multiple, errors, ids = collect_run(run_dir)
        rows.setdefault((label, multiple), {}).update(errors)
        dataset_ids.update(ids)
    columns = sorted(dataset_ids, key=lambda name: (dataset_ids[name], name))
    if not include_anchor:
        columns = [c for c in columns if dataset_ids[c] != 0] or columns
    order = {(s.label, s.multiple_sets): k for k, s in enumerate(ABLATION_ROWS)}
    keys = sorted(rows, key=lambda key: (order.get(key, len(order)), key[0], key[1]))
    records = []
    for label, multiple in keys:
        record = {MODEL_COLUMN: label, MULTIPLE_COLUMN: multiple}
        record.update({c: rows[(label, multiple)].get(c, float("nan")) for c in columns})
        records.append(record)
    return pd.DataFrame(records, columns=[MODEL_COLUMN, MULTIPLE_COLUMN] + columns)


def write_report(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")


def read_report(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
