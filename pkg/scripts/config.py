#!/usr/bin/env python3
"""
全局配置管理 - 数值实验参数
所有参数均可通过环境变量覆盖
"""

import os
from typing import Dict, Any


class Config:
    # 球谐截断阶数: 求解器 / 展开式校验
    LMAX = int(os.getenv("WILLMORE_LMAX", "32"))
    LMAX_VERIFY = int(os.getenv("WILLMORE_LMAX_VERIFY", "64"))

    # 内截断半径 (避开坐标奇点和视界区域)
    INNER_CUTOFF = float(os.getenv("WILLMORE_INNER_CUTOFF", "1.5"))

    # 排除环 |1-|xi|| < delta
    EXCLUSION_DELTA = float(os.getenv("WILLMORE_DELTA", "0.1"))

    # 残差容差 (单位 lambda^-4) 与面积容差 (单位 lambda^2)
    TOL_RES = float(os.getenv("WILLMORE_TOL_RES", "1e-6"))
    TOL_AREA = float(os.getenv("WILLMORE_TOL_AREA", "1e-8"))
    MAX_ITERATIONS = int(os.getenv("WILLMORE_MAX_ITER", "40"))

    # 有限差分步长
    XI_STEP = float(os.getenv("WILLMORE_XI_STEP", "1e-3"))
    Q_STEP = float(os.getenv("WILLMORE_Q_STEP", "1e-4"))

    # 积分节点
    PSI_NODES = int(os.getenv("WILLMORE_PSI_NODES", "64"))
    RADIAL_NODES = int(os.getenv("WILLMORE_RADIAL_NODES", "64"))
    BAND_TRUNCATION_FACTOR = float(os.getenv("WILLMORE_BAND_FACTOR", "10"))

    # 并发线程数
    WORKERS = int(os.getenv("WILLMORE_THREADS", "4"))

    OUTPUT_DIR = os.getenv("WILLMORE_OUTPUT_DIR", "output")
    SEED = int(os.getenv("WILLMORE_SEED", "20200"))

    # lambda 延拓的几何步长
    CONTINUATION_FACTOR = float(os.getenv("WILLMORE_CONTINUATION", "1.2"))

    @classmethod
    def xi_max(cls) -> float:
        return 1.0 + 1.0 / cls.EXCLUSION_DELTA

    @classmethod
    def to_dict(cls) -> Dict[str, Any]:
        return {
            "lmax": cls.LMAX,
            "lmax_verify": cls.LMAX_VERIFY,
            "inner_cutoff": cls.INNER_CUTOFF,
            "exclusion_delta": cls.EXCLUSION_DELTA,
            "tol_res": cls.TOL_RES,
            "tol_area": cls.TOL_AREA,
            "max_iterations": cls.MAX_ITERATIONS,
            "xi_step": cls.XI_STEP,
            "q_step": cls.Q_STEP,
            "psi_nodes": cls.PSI_NODES,
            "radial_nodes": cls.RADIAL_NODES,
            "band_truncation_factor": cls.BAND_TRUNCATION_FACTOR,
            "workers": cls.WORKERS,
            "output_dir": cls.OUTPUT_DIR,
            "seed": cls.SEED,
            "continuation_factor": cls.CONTINUATION_FACTOR,
        }

    @classmethod
    def print_config(cls):
        print("当前配置:")
        print(f"  球谐阶数: {cls.LMAX} (校验 {cls.LMAX_VERIFY})")
        print(f"  内截断半径: {cls.INNER_CUTOFF}")
        print(f"  排除环宽度: {cls.EXCLUSION_DELTA}")
        print(f"  残差容差: {cls.TOL_RES} λ^-4, 面积容差: {cls.TOL_AREA} λ^2")
        print(f"  最大迭代: {cls.MAX_ITERATIONS}次")
        print(f"  并发线程: {cls.WORKERS}个")
        print(f"  输出目录: {cls.OUTPUT_DIR}")
