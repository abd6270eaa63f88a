"""
Gaze Fusion Lab - 两阶段Transformer视线特征融合与数据集自适应
在桌面规模上从零实现视线估计网络、逐数据集的视线校正模块与合成多数据集实验平台
"""

__version__ = "1.0.0"
__author__ = "Gaze Fusion Lab Team"
__description__ = "Two-stage transformer gaze-feature fusion with per-dataset gaze adaptation"
