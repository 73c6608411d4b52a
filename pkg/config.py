# config.py - 系统配置
import os
import sys

from dotenv import load_dotenv
from loguru import logger

# 加载环境变量
load_dotenv()

POLICY_NAMES = ('det', 'random', 'exhaustive')


class ConfigError(ValueError):
    """环境变量取值非法"""

    def __init__(self, variable, value, reason):
        super().__init__(f"{variable}={value!r}: {reason}")
        self.variable = variable
        self.value = value


def _env_int(name, default, minimum=0):
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(name, raw, "需要整数") from None
    if value < minimum:
        raise ConfigError(name, raw, f"不能小于 {minimum}")
    return value


class Config:
    def __init__(self):
        # 运行参数
        self.SEED = _env_int('EQPALG_SEED', 0)
        self.MAX_STEPS = _env_int('EQPALG_MAX_STEPS', 10000, minimum=1)
        self.POLICY = os.getenv('EQPALG_POLICY', 'det')
        if self.POLICY not in POLICY_NAMES:
            raise ConfigError('EQPALG_POLICY', self.POLICY, f"可选: {', '.join(POLICY_NAMES)}")

        # 状态空间探索
        self.GRAPH_DEPTH = _env_int('EQPALG_GRAPH_DEPTH', 64, minimum=1)
        self.MAX_NODES = _env_int('EQPALG_MAX_NODES', 50000, minimum=1)

        # 隐形传态检查
        self.TRIALS = _env_int('EQPALG_TRIALS', 100)

        # 输出
        self.COLOR = os.getenv('EQPALG_COLOR', '1') != '0'
        self.LOG_LEVEL = os.getenv('EQPALG_LOG_LEVEL', 'WARNING').upper()
        self.TRACE_LOG = os.getenv('EQPALG_TRACE_LOG') or None

        # 数值容差
        self.TOLERANCE = 1e-9


def setup_logging(level='WARNING'):
    """只保留一个 stderr 输出，stdout 留给数据"""
    logger.remove()
    # 每次写入时取当前的 sys.stderr
    logger.add(lambda message: sys.stderr.write(message), level=level,
               format="<level>{level: <7}</level> | {message}")
    return logger
