"""
训练与评估
L1 目标、单数据集与混合数据集两种训练方式、按数据集路由的GAM校正，以及逐epoch的指标记录
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from .. import __version__
from ..core import ops
from ..core.tensor import Tape, Tensor
from ..data.sampler import Batch, MixedBatchSampler
from ..errors import ConfigError, DatasetError, ShapeError
from ..geometry.gaze import angular_errors_deg
from ..models.gam import GamBank, ParameterReport, verify_param_budget
from ..models.ttgf import FusionGazeModel, build_model
from ..settings.config import Regime, RunConfig, TrainConfig, save_run_config
from ..storage.checkpoint import load_checkpoint, save_checkpoint
from ..storage.dataset_store import SyntheticDataset
from .optim import AdamW, lr_at

logger = structlog.get_logger(__name__)

METRIC_COLUMNS = ["epoch", "split", "dataset", "angular_error_deg", "loss", "lr"]
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "run_manifest.json"
CONFIG_FILE = "config.txt"
CHECKPOINT_FILE = "checkpoint.gzf"

# 随机数流标签
_MODEL_STREAM = 0
_GAM_STREAM = 1
_SAMPLER_STREAM = 3
_PRETRAIN_SAMPLER_STREAM = 4

PRETRAIN_SPLIT = "pretrain"


@dataclass
class MetricsRecord:
    """metrics.csv 的一行"""
    epoch: int
    split: str
    dataset: str
    angular_error_deg: float
    loss: float
    lr: float

    def __post_init__(self) -> None:
        if not self.angular_error_deg >= 0:
            raise ValueError(f"角度误差必须非负，得到 {self.angular_error_deg}")


@dataclass
class EvaluationResult:
    """一个数据集划分上的评估结果，角度单位为弧度的预测保留以便诊断"""
    dataset: str
    split: str
    raw: np.ndarray
    corrected: np.ndarray
    labels: np.ndarray
    true_gaze: np.ndarray

    @property
    def error_vs_label(self) -> float:
        return float(np.mean(angular_errors_deg(self.corrected, self.labels)))

    @property
    def error_vs_true(self) -> float:
        return float(np.mean(angular_errors_deg(self.corrected, self.true_gaze)))

    @property
    def loss(self) -> float:
        return float(np.mean(np.abs(self.corrected - self.labels)))

    @property
    def loss_vs_true(self) -> float:
        return float(np.mean(np.abs(self.corrected - self.true_gaze)))

    def to_record(self, epoch: int, lr: float) -> MetricsRecord:
        return MetricsRecord(epoch, self.split, self.dataset, self.error_vs_label, self.loss, lr)


@dataclass
class GamDiagnostics:
    """非锚数据集上GAM对注入标注偏差的吸收情况（度）"""
    dataset: str
    injected_deg: float
    offset_magnitude_deg: float
    raw_vs_label: float
    corrected_vs_label: float
    raw_vs_true: float
    corrected_vs_true: float
    error_reduction_deg: float
    absorbed_fraction: Optional[float]


@dataclass
class TrainResult:
    records: List[MetricsRecord]
    loss_history: List[float]
    summary: Dict[str, Any]
    out_dir: Optional[Path] = None


@dataclass
class RunManifest:
    """复现一次运行所需的全部信息"""
    config: str
    dataset_hashes: Dict[str, str]
    version: str
    seed: int
    outputs: Dict[str, str] = field(default_factory=dict)


def l1_loss(pred: Tensor, label: Tensor) -> Tensor:
    """两个分量与整个批次上的平均绝对误差"""
    if pred.shape != label.shape:
        raise ShapeError(f"预测形状 {pred.shape} 与标注形状 {label.shape} 不一致")
    if pred.size == 0:
        raise ShapeError("批次为空，无法计算损失")
    return ops.reduce_mean(ops.absolute(ops.sub(pred, label)))


def build_estimator(config: RunConfig, num_datasets: int) -> Tuple[FusionGazeModel, Optional[GamBank]]:
    """按种子构建网络与GAM；两者使用相互独立的随机数流"""
    seed = config.train.seed
    model = build_model(config.model, np.random.default_rng([seed, _MODEL_STREAM]))
    gam = None
    if config.train.gam_enabled:
        gam = GamBank(
            num_datasets,
            model.fused_dim,
            config.model.gam_hidden,
            np.random.default_rng([seed, _GAM_STREAM]),
            mode=config.model.gam_mode,
        )
    return model, gam


def _check_datasets(model: FusionGazeModel, gam: Optional[GamBank], datasets: Sequence[SyntheticDataset], config: RunConfig) -> None:
    if not datasets:
        raise DatasetError("没有可用于训练的数据集")
    if config.train.regime == Regime.SINGLE and len(datasets) != 1:
        raise DatasetError(f"单数据集训练只接受一个数据集，得到 {len(datasets)} 个")
    for d in datasets:
        if d.spec.face_size != model.face_size or d.spec.eye_size != model.eye_size:
            raise DatasetError(
                f"数据集 {d.name} 的图像尺寸 {d.spec.face_size}/{d.spec.eye_size} "
                f"与网络配置 {model.face_size}/{model.eye_size} 不一致"
            )
    ids = [d.dataset_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"dataset_id 重复: {ids}")
    if gam is not None and max(ids) >= gam.num_datasets:
        raise DatasetError(f"GAM 只有 {gam.num_datasets} 个槽位，数据集编号为 {ids}")


def _gather(
    datasets: Sequence[SyntheticDataset],
    train_rows: Sequence[np.ndarray],
    batch: Batch,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """按批次取出图像与标注，返回的 slots 为数据集在列表中的位置"""
    parts: List[List[np.ndarray]] = [[], [], [], [], []]
    for slot, dataset in enumerate(datasets):
        rows = train_rows[slot][batch.for_slot(slot)]
        parts[0].append(dataset.faces[rows])
        parts[1].append(dataset.left_eyes[rows])
        parts[2].append(dataset.right_eyes[rows])
        parts[3].append(dataset.labels[rows])
        parts[4].append(np.full(len(rows), slot, dtype=np.int64))
    face, left, right, labels, slots = (np.concatenate(p) for p in parts)
    return face, left, right, labels, slots


def _forward(
    model: FusionGazeModel,
    gam: Optional[GamBank],
    face: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    slots: np.ndarray,
) -> Tuple[Tensor, Tensor]:
    """返回 (原始输出 g, 校正后输出 ĝ)；不使用GAM时两者为同一张量"""
    out = model.forward(Tensor(face), Tensor(left), Tensor(right))
    if gam is None:
        return out.gaze, out.gaze
    return out.gaze, gam.correct(out.gaze, out.fused, slots)


def evaluate(
    model: FusionGazeModel,
    gam: Optional[GamBank],
    dataset: SyntheticDataset,
    use_gam: bool = True,
    split: str = "test",
    batch_size: int = 256,
) -> EvaluationResult:
    """在数据集的某个划分上做前向（不记录计算带），use_gam 决定是否叠加该数据集的偏移"""
    rows = dataset.split_indices(split)
    bank = gam if use_gam else None
    raw_parts, corrected_parts = [], []
    for start in range(0, len(rows), batch_size):
        chunk = rows[start:start + batch_size]
        face, left, right = dataset.images(chunk)
        slots = np.full(len(chunk), dataset.dataset_id, dtype=np.int64)
        raw, corrected = _forward(model, bank, face, left, right, slots)
        raw_parts.append(raw.data)
        corrected_parts.append(corrected.data)
    raw_all = np.concatenate(raw_parts) if raw_parts else np.empty((0, 2))
    corrected_all = np.concatenate(corrected_parts) if corrected_parts else np.empty((0, 2))
    return EvaluationResult(
        dataset=dataset.name,
        split=split,
        raw=raw_all,
        corrected=corrected_all,
        labels=dataset.labels[rows],
        true_gaze=dataset.true_gaze[rows],
    )


def mean_gaze_baseline(labels: np.ndarray) -> float:
    """以标注的分量均值作为常数预测时的平均角度误差"""
    labels = np.asarray(labels, dtype=np.float64)
    mean = labels.mean(axis=0)
    return float(np.mean(angular_errors_deg(np.broadcast_to(mean, labels.shape), labels)))


def random_predictor_baseline(
    labels: np.ndarray,
    gaze_range_deg: Tuple[float, float],
    rng: np.random.Generator,
    trials: int = 8,
) -> float:
    """在视线范围内均匀随机预测的平均角度误差（蒙特卡洛）"""
    labels = np.asarray(labels, dtype=np.float64)
    half = np.deg2rad(np.asarray(gaze_range_deg))
    errors = [
        np.mean(angular_errors_deg(rng.uniform(-half, half, size=labels.shape), labels))
        for _ in range(trials)
    ]
    return float(np.mean(errors))


def gam_diagnostics(result: EvaluationResult, injected_deg: float) -> GamDiagnostics:
    raw_vs_label = float(np.mean(angular_errors_deg(result.raw, result.labels)))
    corrected_vs_label = result.error_vs_label
    # 偏移在标注偏差 (label - true) 方向上的最小二乘投影系数，1 表示偏差被完全吸收
    shift = result.corrected - result.raw
    bias = result.labels - result.true_gaze
    bias_energy = float(np.sum(bias * bias))
    absorbed = float(np.sum(shift * bias)) / bias_energy if injected_deg > 0 and bias_energy > 0 else None
    return GamDiagnostics(
        dataset=result.dataset,
        injected_deg=injected_deg,
        offset_magnitude_deg=float(np.mean(angular_errors_deg(result.raw, result.corrected))),
        raw_vs_label=raw_vs_label,
        corrected_vs_label=corrected_vs_label,
        raw_vs_true=float(np.mean(angular_errors_deg(result.raw, result.true_gaze))),
        corrected_vs_true=result.error_vs_true,
        error_reduction_deg=raw_vs_label - corrected_vs_label,
        absorbed_fraction=absorbed,
    )


def checkpoint_tensors(model: FusionGazeModel, gam: Optional[GamBank]) -> Dict[str, np.ndarray]:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if gam is not None:
        tensors.update({f"gam.{k}": v for k, v in gam.state_dict().items()})
    return tensors


def load_init_checkpoint(path: Union[str, Path], model: FusionGazeModel, gam: Optional[GamBank]) -> int:
    """从检查点初始化共享网络及名字匹配的GAM头，返回载入的张量数"""
    tensors = load_checkpoint(path)
    model_state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    if not model_state:
        raise DatasetError(f"检查点 {path} 中没有网络参数")
    loaded = model.load_state_dict(model_state, strict=True)
    count = len(loaded)
    if gam is not None:
        gam_state = {k[len("gam."):]: v for k, v in tensors.items() if k.startswith("gam.")}
        count += len(gam.load_state_dict(gam_state, strict=False))
    logger.info("已从检查点初始化", file=str(path), tensors=count)
    return count


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class _Phase:
    """一个训练阶段：自己的采样器与优化器，学习率日程从头开始"""
    name: str
    datasets: List[SyntheticDataset]
    gam: Optional[GamBank]
    epochs: int
    sampler_stream: int


def _fit(
    model: FusionGazeModel,
    phase: _Phase,
    cfg: TrainConfig,
    records: List[MetricsRecord],
    loss_history: List[float],
    step_budget: Optional[int],
) -> int:
    """跑完一个阶段，指标追加到 records，返回本阶段执行的步数；step_budget 用尽即停"""
    datasets, gam = phase.datasets, phase.gam
    train_rows = [d.split_indices("train") for d in datasets]
    try:
        sampler = MixedBatchSampler(
            [len(r) for r in train_rows], cfg.batch_size, np.random.default_rng([cfg.seed, phase.sampler_stream])
        )
    except ValueError as e:
        raise ConfigError(str(e), source="train.batch_size") from None
    steps_per_epoch = sampler.steps_per_epoch

    named = [(f"model.{k}", p) for k, p in model.named_parameters()]
    if gam is not None:
        named += [(f"gam.{k}", p) for k, p in gam.named_parameters()]
    optimizer = AdamW(named, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay)
    dataset_ids = np.array([d.dataset_id for d in datasets], dtype=np.int64)

    logger.info(
        "开始训练",
        phase=phase.name,
        regime=cfg.regime.value,
        gam=gam is not None,
        datasets=[d.name for d in datasets],
        steps_per_epoch=steps_per_epoch,
        epochs=phase.epochs,
    )

    step = 0
    lr = 0.0
    stop = False
    for epoch in range(1, phase.epochs + 1):
        abs_sums = np.zeros(len(datasets))
        err_sums = np.zeros(len(datasets))
        counts = np.zeros(len(datasets))
        for batch in sampler.epoch():
            face, left, right, labels, slots = _gather(datasets, train_rows, batch)

            lr = lr_at(cfg, step + 1, steps_per_epoch)
            optimizer.zero_grad()
            with Tape() as tape:
                _, corrected = _forward(model, gam, face, left, right, dataset_ids[slots])
                loss = l1_loss(corrected, Tensor(labels))
            tape.backward(loss)
            optimizer.step(lr)
            tape.reset()

            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"{phase.name} 阶段第 {step + 1} 步损失为 {value}")
            loss_history.append(value)
            errors = angular_errors_deg(corrected.data, labels)
            abs_err = np.abs(corrected.data - labels).mean(axis=1)
            for s in range(len(datasets)):
                mask = slots == s
                abs_sums[s] += abs_err[mask].sum()
                err_sums[s] += errors[mask].sum()
                counts[s] += mask.sum()
            step += 1
            if step_budget is not None and step >= step_budget:
                stop = True
                break

        if phase.name == PRETRAIN_SPLIT:
            anchor = datasets[0]
            evaluation = evaluate(model, None, anchor, use_gam=False, batch_size=cfg.eval_batch_size)
            records.append(MetricsRecord(epoch, PRETRAIN_SPLIT, anchor.name, evaluation.error_vs_label, evaluation.loss, lr))
        else:
            for s, d in enumerate(datasets):
                if counts[s] > 0:
                    records.append(MetricsRecord(epoch, "train", d.name, err_sums[s] / counts[s], abs_sums[s] / counts[s], lr))
                evaluation = evaluate(model, gam, d, use_gam=gam is not None, batch_size=cfg.eval_batch_size)
                records.append(evaluation.to_record(epoch, lr))
                records.append(MetricsRecord(epoch, "test_true", d.name, evaluation.error_vs_true, evaluation.loss_vs_true, lr))
        logger.info("epoch 完成", phase=phase.name, epoch=epoch, step=step, loss=loss_history[-1] if loss_history else None, lr=lr)
        if stop:
            break
    return step


def train_run(
    model: FusionGazeModel,
    gam: Optional[GamBank],
    datasets: Sequence[SyntheticDataset],
    config: RunConfig,
    out_dir: Optional[Union[str, Path]] = None,
    init_checkpoint: Optional[Union[str, Path]] = None,
    max_steps: Optional[int] = None,
) -> TrainResult:
    """训练并逐epoch评估；给定种子时结果逐位可复现。gam 为 None 表示不使用GAM

    混合训练且 anchor_epochs > 0 时，先只在锚数据集（dataset_id 0）上不带GAM预训练，
    再换新的优化器与学习率日程做混合训练；max_steps 对两个阶段合计计数
    """
    cfg = config.train
    datasets = sorted(datasets, key=lambda d: d.dataset_id)
    _check_datasets(model, gam, datasets, config)
    if init_checkpoint is not None:
        load_init_checkpoint(init_checkpoint, model, gam)

    phases: List[_Phase] = []
    if cfg.regime == Regime.MIXED and cfg.anchor_epochs > 0:
        anchors = [d for d in datasets if d.dataset_id == 0]
        if not anchors:
            raise DatasetError("锚预训练需要 dataset_id 为 0 的数据集")
        phases.append(_Phase(PRETRAIN_SPLIT, anchors, None, cfg.anchor_epochs, _PRETRAIN_SAMPLER_STREAM))
    phases.append(_Phase("main", list(datasets), gam, cfg.epochs, _SAMPLER_STREAM))

    records: List[MetricsRecord] = []
    loss_history: List[float] = []
    steps: Dict[str, int] = {}
    total = 0
    for phase in phases:
        budget = None if max_steps is None else max_steps - total
        if budget is not None and budget <= 0:
            steps[phase.name] = 0
            continue
        steps[phase.name] = _fit(model, phase, cfg, records, loss_history, budget)
        total += steps[phase.name]

    summary = _summarize(model, gam, datasets, config, records, total)
    summary["pretrain_steps"] = steps.get(PRETRAIN_SPLIT, 0)
    result = TrainResult(records=records, loss_history=loss_history, summary=summary)
    if out_dir is not None:
        result.out_dir = write_run(Path(out_dir), model, gam, datasets, config, result)
    return result


def _summarize(
    model: FusionGazeModel,
    gam: Optional[GamBank],
    datasets: Sequence[SyntheticDataset],
    config: RunConfig,
    records: List[MetricsRecord],
    steps: int,
) -> Dict[str, Any]:
    last_epoch = max((r.epoch for r in records if r.split == "test"), default=0)
    final = {
        r.dataset: {"test_vs_label": r.angular_error_deg}
        for r in records if r.epoch == last_epoch and r.split == "test"
    }
    for r in records:
        if r.epoch == last_epoch and r.split == "test_true":
            final[r.dataset]["test_vs_true"] = r.angular_error_deg

    summary: Dict[str, Any] = {
        "version": __version__,
        "regime": config.train.regime.value,
        "gam_enabled": gam is not None,
        "topology": config.model.topology.value,
        "steps": steps,
        "epochs_completed": last_epoch,
        "config": config.model_dump(mode="json"),
        "datasets": {d.name: {"dataset_id": d.dataset_id, "content_hash": d.content_hash} for d in datasets},
        "final": final,
    }
    if gam is not None:
        report: ParameterReport = verify_param_budget(model, gam)
        summary["parameters"] = report.as_dict()
        diagnostics = []
        for d in datasets:
            if d.dataset_id == 0:
                continue
            result = evaluate(model, gam, d, use_gam=True, batch_size=config.train.eval_batch_size)
            diagnostics.append(asdict(gam_diagnostics(result, d.spec.perturbation.magnitude_deg)))
        summary["gam_diagnostics"] = diagnostics
    else:
        summary["parameters"] = {"N": model.num_parameters()}
    return summary


def write_metrics(records: Sequence[MetricsRecord], path: Path) -> None:
    frame = pd.DataFrame([asdict(r) for r in records], columns=METRIC_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"指标文件不存在: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in METRIC_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetError(f"{path}: 缺少列 {missing}")
    return frame


def write_run(
    out_dir: Path,
    model: FusionGazeModel,
    gam: Optional[GamBank],
    datasets: Sequence[SyntheticDataset],
    config: RunConfig,
    result: TrainResult,
) -> Path:
    """写出 metrics.csv、summary.json、config.txt、checkpoint.gzf 与 run_manifest.json"""
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / METRICS_FILE
    write_metrics(result.records, metrics_path)
    save_run_config(config, out_dir / CONFIG_FILE)
    save_checkpoint(out_dir / CHECKPOINT_FILE, checkpoint_tensors(model, gam))

    summary = dict(result.summary, metrics_sha256=_file_sha256(metrics_path))
    (out_dir / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")

    manifest = RunManifest(
        config=config.to_text(),
        dataset_hashes={d.name: d.content_hash or "" for d in datasets},
        version=__version__,
        seed=config.train.seed,
        outputs={name: str(out_dir / name) for name in (METRICS_FILE, SUMMARY_FILE, CONFIG_FILE, CHECKPOINT_FILE)},
    )
    (out_dir / MANIFEST_FILE).write_text(json.dumps(asdict(manifest), indent=2, ensure_ascii=False), encoding="utf-8")
    logger.info("运行结果已写出", out_dir=str(out_dir))
    return out_dir
