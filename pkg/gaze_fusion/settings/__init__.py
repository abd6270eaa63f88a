"""
配置模块初始化
"""

from .config import (
    ConfigManager,
    ModelConfig,
    Regime,
    RunConfig,
    SystemConfig,
    TrainConfig,
    config_manager,
    configure_logging,
    get_config,
    load_run_config,
    parse_run_config,
    save_run_config,
)

__all__ = [
    'ConfigManager',
    'ModelConfig',
    'Regime',
    'RunConfig',
    'SystemConfig',
    'TrainConfig',
    'config_manager',
    'configure_logging',
    'get_config',
    'load_run_config',
    'parse_run_config',
    'save_run_config',
]
