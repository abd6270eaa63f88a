"""
命令行入口
gen-data / train / eval / grad-check / report 五个子命令；退出码 0 成功、1 用法错误、2 运行错误
"""

import sys
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

import click
import numpy as np
import pandas as pd
import structlog
import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from . import __version__
from .core.tensor import set_debug_checks
from .data.generate import generate_datasets
from .data.specs import default_specs, load_spec_file
from .errors import ConfigError, DatasetError, GazeFusionError
from .models.ttgf import FusionTopology
from .settings.config import Regime, RunConfig, configure_logging, get_config, load_run_config
from .storage.checkpoint import load_checkpoint
from .storage.dataset_store import DatasetStore, load_dataset
from .training.ablation import build_report, write_report
from .training.gradcheck import run_grad_check
from .training.trainer import (
    CHECKPOINT_FILE,
    CONFIG_FILE,
    METRICS_FILE,
    MetricsRecord,
    build_estimator,
    evaluate,
    read_metrics,
    train_run,
    write_metrics,
)

logger = structlog.get_logger(__name__)
console = Console()
error_console = Console(stderr=True)

EVAL_METRICS_FILE = "eval_metrics.csv"

app = typer.Typer(
    name="gaze-fusion",
    help="两阶段Transformer视线特征融合与数据集自适应实验工具",
    add_completion=False,
    no_args_is_help=True,
)


class GamSwitch(str, Enum):
    ON = "on"
    OFF = "off"


class GradCheckFailed(GazeFusionError):
    """梯度检查存在超出容差的参数"""


@app.callback()
def setup(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="覆盖系统配置中的日志级别"),
) -> None:
    """按系统配置安装日志与调试检查"""
    system = get_config()
    configure_logging(log_level or system.log_level, system.log_format)
    set_debug_checks(system.debug_mode)


@app.command("gen-data")
def gen_data(
    spec: Optional[Path] = typer.Option(None, "--spec", "--config", help="数据集规格文件，缺省为内置的四个数据集"),
    out_dir: Path = typer.Option(Path("data"), "--out-dir", help="输出目录"),
    seed: Optional[int] = typer.Option(None, "--seed", help="覆盖规格中的种子（各数据集为 seed + dataset_id）"),
) -> None:
    """生成合成数据集"""
    specs = load_spec_file(spec) if spec is not None else default_specs()
    if seed is not None:
        specs = [s.model_copy(update={"seed": seed + s.dataset_id}) for s in specs]
    paths = generate_datasets(specs, out_dir)

    table = Table(title="生成的数据集")
    table.add_column("数据集")
    table.add_column("编号", justify="right")
    table.add_column("样本数", justify="right")
    table.add_column("注入偏差(°)", justify="right")
    table.add_column("内容哈希")
    for s, path in zip(specs, paths):
        dataset = load_dataset(path)
        table.add_row(s.name, str(s.dataset_id), str(len(dataset)), f"{s.perturbation.magnitude_deg:.2f}", (dataset.content_hash or "")[:16])
    console.print(table)


def _resolve_config(
    config_file: Optional[Path],
    seed: Optional[int],
    regime: Optional[Regime],
    gam: Optional[GamSwitch],
    topology: Optional[FusionTopology],
    epochs: Optional[int],
    anchor_epochs: Optional[int] = None,
) -> RunConfig:
    config = load_run_config(config_file) if config_file is not None else RunConfig()
    model_update = {} if topology is None else {"topology": topology}
    train_update: dict = {}
    if seed is not None:
        train_update["seed"] = seed
    if regime is not None:
        train_update["regime"] = regime
    if gam is not None:
        train_update["gam_enabled"] = gam == GamSwitch.ON
    if epochs is not None:
        train_update["epochs"] = epochs
    if anchor_epochs is not None:
        train_update["anchor_epochs"] = anchor_epochs
    train = config.train.model_copy(update=train_update)
    if train.regime == Regime.SINGLE and gam == GamSwitch.ON:
        raise ConfigError("单数据集训练不能启用GAM", source="--gam")
    return RunConfig(model=config.model.model_copy(update=model_update), train=train)


@app.command()
def train(
    config_file: Optional[Path] = typer.Option(None, "--config", help="运行配置文件（key=value）"),
    data_dir: Path = typer.Option(Path("data"), "--data-dir", help="数据集根目录"),
    out_dir: Path = typer.Option(Path("runs/latest"), "--out-dir", help="运行输出目录"),
    seed: Optional[int] = typer.Option(None, "--seed", help="随机种子"),
    regime: Optional[Regime] = typer.Option(None, "--regime", help="训练方式"),
    gam: Optional[GamSwitch] = typer.Option(None, "--gam", help="是否启用GAM"),
    topology: Optional[FusionTopology] = typer.Option(None, "--topology", help="特征融合拓扑"),
    dataset: Optional[List[str]] = typer.Option(None, "--dataset", help="参与训练的数据集名，可重复"),
    epochs: Optional[int] = typer.Option(None, "--epochs", min=1, help="覆盖训练轮数"),
    anchor_epochs: Optional[int] = typer.Option(None, "--anchor-epochs", min=0, help="混合训练前在锚数据集上预训练的轮数"),
    max_steps: Optional[int] = typer.Option(None, "--max-steps", min=1, help="最多训练的步数"),
    init_checkpoint: Optional[Path] = typer.Option(None, "--init-checkpoint", help="用于初始化的检查点（如锚数据集预训练结果）"),
) -> None:
    """训练一次运行并写出指标、摘要与检查点"""
    config = _resolve_config(config_file, seed, regime, gam, topology, epochs, anchor_epochs)
    store = DatasetStore(data_dir)
    if dataset:
        datasets = [store.get(name) for name in dataset]
    else:
        datasets = store.load_all()
    if config.train.regime == Regime.SINGLE and len(datasets) != 1:
        raise typer.BadParameter("单数据集训练需要用 --dataset 指定一个数据集", param_hint="--dataset")

    num_slots = max(d.dataset_id for d in datasets) + 1
    model, bank = build_estimator(config, num_slots)
    result = train_run(model, bank, datasets, config, out_dir=out_dir, init_checkpoint=init_checkpoint, max_steps=max_steps)
    _print_final(result.summary["final"], f"运行 {out_dir}")


def _print_final(final: dict, title: str) -> None:
    table = Table(title=title)
    table.add_column("数据集")
    table.add_column("测试误差(相对标注)", justify="right")
    table.add_column("测试误差(相对真实视线)", justify="right")
    for name, values in final.items():
        table.add_row(name, f"{values['test_vs_label']:.3f}°", f"{values.get('test_vs_true', float('nan')):.3f}°")
    console.print(table)


@app.command("eval")
def eval_run(
    run_dir: Path = typer.Option(..., "--run-dir", help="已完成的运行目录"),
    data_dir: Path = typer.Option(Path("data"), "--data-dir", help="数据集根目录"),
) -> None:
    """用运行目录中的检查点重新评估各数据集的测试集"""
    if not run_dir.is_dir():
        raise DatasetError(f"运行目录不存在: {run_dir}")
    config = load_run_config(run_dir / CONFIG_FILE)
    store = DatasetStore(data_dir)
    names = [str(n) for n in pd.unique(read_metrics(run_dir / METRICS_FILE)["dataset"])]
    datasets = sorted((store.get(n) for n in names), key=lambda d: d.dataset_id)

    model, bank = build_estimator(config, max(d.dataset_id for d in datasets) + 1)
    tensors = load_checkpoint(run_dir / CHECKPOINT_FILE)
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
    if bank is not None:
        bank.load_state_dict({k[len("gam."):]: v for k, v in tensors.items() if k.startswith("gam.")})

    records = []
    final = {}
    for d in datasets:
        result = evaluate(model, bank, d, use_gam=bank is not None, batch_size=config.train.eval_batch_size)
        records.append(result.to_record(0, 0.0))
        records.append(MetricsRecord(0, "test_true", d.name, result.error_vs_true, result.loss_vs_true, 0.0))
        final[d.name] = {"test_vs_label": result.error_vs_label, "test_vs_true": result.error_vs_true}
    write_metrics(records, run_dir / EVAL_METRICS_FILE)
    _print_final(final, f"评估 {run_dir}")


@app.command("grad-check")
def grad_check(
    config_file: Optional[Path] = typer.Option(None, "--config", help="运行配置文件，缺省为玩具规模"),
    seed: int = typer.Option(0, "--seed", help="随机种子"),
    max_elements: Optional[int] = typer.Option(None, "--max-elements", min=1, help="每个参数张量最多抽查的元素数"),
    tolerance: float = typer.Option(1e-4, "--tolerance", help="最大相对误差容差"),
) -> None:
    """对网络与GAM的全部参数做中心差分梯度检查"""
    config = load_run_config(config_file) if config_file is not None else RunConfig()
    report = run_grad_check(config, seed=seed, max_elements=max_elements, tolerance=tolerance)

    table = Table(title="梯度检查")
    table.add_column("参数")
    table.add_column("形状")
    table.add_column("抽查数", justify="right")
    table.add_column("最大相对误差", justify="right")
    table.add_column("结果")
    for check in report.checks:
        table.add_row(
            check.name,
            "×".join(str(d) for d in check.shape) or "标量",
            str(check.checked),
            f"{check.max_rel_error:.2e}",
            "[green]通过[/green]" if check.passed else "[red]失败[/red]",
        )
    console.print(table)
    if not report.passed:
        raise GradCheckFailed(f"{len(report.failures)} 个参数张量超出容差 {tolerance:g}")


@app.command()
def report(
    run_dirs: List[Path] = typer.Argument(..., help="运行目录"),
    csv: Optional[Path] = typer.Option(None, "--csv", help="把对比表写成CSV"),
    include_anchor: bool = typer.Option(False, "--include-anchor", help="同时列出锚数据集"),
) -> None:
    """按消融表的行序并列比较多个运行的测试误差"""
    frame = build_report(run_dirs, include_anchor=include_anchor)
    table = Table(title="消融对比（测试误差，度）")
    for column in frame.columns:
        table.add_column(str(column), justify="left" if column == "model" else "right")
    for row in frame.itertuples(index=False):
        cells = []
        for value in row:
            if isinstance(value, (bool, np.bool_)):
                cells.append("是" if value else "否")
            elif isinstance(value, float):
                cells.append("-" if np.isnan(value) else f"{value:.3f}")
            else:
                cells.append(str(value))
        table.add_row(*cells)
    console.print(table)
    if csv is not None:
        write_report(frame, csv)


@app.command()
def version() -> None:
    """显示版本"""
    console.print(f"gaze-fusion {__version__}")


def _click_exception_types(name: str) -> Tuple[type, ...]:
    """较新的 typer 自带一份 click 副本，异常类要两边都认"""
    modules = [click.exceptions]
    try:
        from typer._click import exceptions as bundled  # type: ignore[import-not-found]
    except ImportError:
        pass
    else:
        modules.append(bundled)
    return tuple(dict.fromkeys(getattr(m, name) for m in modules if hasattr(m, name)))


_EXIT_ERRORS = _click_exception_types("Exit")
_USAGE_ERRORS = _click_exception_types("UsageError")
_ABORT_ERRORS = _click_exception_types("Abort")


def main(argv: Optional[List[str]] = None) -> int:
    """运行命令并返回退出码"""
    try:
        result = app(args=argv, prog_name="gaze-fusion", standalone_mode=False)
    except _EXIT_ERRORS as e:
        return e.exit_code
    except _USAGE_ERRORS as e:
        e.show()
        return 1
    except _ABORT_ERRORS:
        error_console.print("已中止")
        return 1
    except (GazeFusionError, OSError) as e:
        logger.error("命令执行失败", error=str(e))
        error_console.print(f"[red]错误:[/red] {escape(str(e))}", soft_wrap=True)
        return 2
    return result if isinstance(result, int) else 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
