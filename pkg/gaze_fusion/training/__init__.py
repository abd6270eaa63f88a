"""
训练模块初始化
"""

from .ablation import ABLATION_ROWS, build_report, run_ablation
from .gradcheck import GradCheckReport, check_gradients, check_op, run_grad_check
from .optim import AdamW, AdamWState, adamw_step, lr_at
from .trainer import (
    EvaluationResult,
    MetricsRecord,
    TrainResult,
    build_estimator,
    evaluate,
    l1_loss,
    train_run,
)

__all__ = [
    'ABLATION_ROWS',
    'build_report',
    'run_ablation',
    'GradCheckReport',
    'check_gradients',
    'check_op',
    'run_grad_check',
    'AdamW',
    'AdamWState',
    'adamw_step',
    'lr_at',
    'EvaluationResult',
    'MetricsRecord',
    'TrainResult',
    'build_estimator',
    'evaluate',
    'l1_loss',
    'train_run',
]
