#!/usr/bin/env python3
"""
常用工具函数模块
异常类型、对数斜率拟合、JSON/CSV 输出、异步任务池
"""

import asyncio
import csv
import json
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import roots_legendre


class WillmoreLabError(Exception):
    """所有实验错误的基类"""


class InvalidParameterError(WillmoreLabError, ValueError):
    pass


class SingularParameterError(InvalidParameterError):
    pass


class DomainError(WillmoreLabError, ValueError):
    pass


class ConfigError(WillmoreLabError, ValueError):
    pass


class UnsupportedCaseError(WillmoreLabError):
    pass


class NumericalError(WillmoreLabError, RuntimeError):
    def __init__(self, message: str, estimate: Optional[float] = None):
        super().__init__(message)
        self.estimate = estimate


class DegenerateSurfaceError(NumericalError):
    def __init__(self, message: str, worst_node: Optional[Tuple[int, int]] = None):
        super().__init__(message)
        self.worst_node = worst_node


class ConvergenceError(NumericalError):
    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message, estimate=trace[-1] if trace else None)
        self.trace = list(trace or [])


def sanitize_name(name: str) -> str:
    """
    把场景名称转换成安全的文件名

    Args:
        name: 原始名称

    Returns:
        只含字母数字、下划线、连字符的名称
    """
    if not name:
        return "run"

    sanitized = name.encode("ascii", "ignore").decode("ascii")
    sanitized = "".join(c if (c.isalnum() or c in "-_") else "_" for c in sanitized)
    sanitized = sanitized.strip("_")

    if not sanitized or not sanitized[0].isalpha():
        sanitized = "run_" + sanitized

    return sanitized[:50] or "run"


def gauss_legendre(n: int, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
    """区间 [a, b] 上的 Gauss-Legendre 节点与权重"""
    x, w = roots_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def fit_decay_exponent(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """
    拟合 |y| ~ C x^(-p) 中的 p

    Returns:
        衰减指数 p; 数据全为零 (精确) 时返回 None
    """
    x = np.asarray(xs, dtype=float)
    y = np.abs(np.asarray(ys, dtype=float))
    mask = y > 0.0
    if mask.sum() < 2:
        return None
    slope, _ = np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)
    return float(-slope)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def write_json(path: Path, data: Dict[str, Any]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_plain(data), f, indent=2, ensure_ascii=False)


def format_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


async def _run_bounded(func: Callable, jobs: List[tuple], workers: int) -> List[Any]:
    semaphore = asyncio.Semaphore(max(1, workers))
    loop = asyncio.get_running_loop()

    async def one(args):
        async with semaphore:
            return await loop.run_in_executor(None, func, *args)

    return await asyncio.gather(*(one(args) for args in jobs))


def run_jobs(func: Callable, jobs: List[tuple], workers: int = 1) -> List[Any]:
    """
    在线程池中并发执行独立任务, 结果顺序与 jobs 一致

    workers <= 1 时顺序执行
    """
    if workers <= 1 or len(jobs) <= 1:
        return [func(*args) for args in jobs]

    loop = asyncio.new_event_loop()
    try:
        return loop.run_until_complete(_run_bounded(func, jobs, workers))
    finally:
        loop.close()
