#!/usr/bin/env python3
"""
统一入口脚本
用法: python3 run.py <command> [args] [--key=value ...]
  verify-identities     - 球谐/级数/Schwarzschild 精确性检查
  energy                - 图曲面的面积、Willmore 能量、Hawking 质量
  solve                 - 求解 Lyapunov-Schmidt 约化方程
  reduce                - 计算约化能量 G_λ(ξ) (直接求值与展开式)
  foliate               - 沿 λ 延拓临界点, 检查叶状结构
  counterexample <g>    - 反例度量 g1 | g2 | g3 | g4
  cmc-area              - 远外离区域的 CMC 约化面积
  scenario <name>       - 以默认配置运行任意命名场景
  run <config.yaml>     - 按 YAML 实验配置运行

覆盖参数示例: --lambda=400 --xi=[0.5,0,0] --metric.variant=euclidean --solver.lmax=24
退出码: 0 通过, 2 验收失败, 3 数值失败, 4 配置错误
"""

import sys
from pathlib import Path
from typing import Dict, List, Tuple

from scripts.scenarios import (
    SCENARIOS,
    ExperimentConfig,
    config_error_report,
    run,
)
from scripts.utils import ConfigError

COMMANDS = {
    "verify-identities": "verify-identities",
    "energy": "energy",
    "solve": "solve",
    "reduce": "reduce",
    "foliate": "foliate",
    "cmc-area": "cmc-area",
}

USAGE = "用法: python3 run.py [verify-identities|energy|solve|reduce|foliate|counterexample <g1|g2|g3|g4>|cmc-area|scenario <name>|run <config.yaml>] [--key=value ...]"


def split_args(argv: List[str]) -> Tuple[List[str], Dict[str, str]]:
    """拆分位置参数与 --key=value 覆盖"""
    positional: List[str] = []
    overrides: Dict[str, str] = {}
    for arg in argv:
        if arg.startswith("--"):
            key, sep, value = arg[2:].partition("=")
            if not sep or not key:
                raise ConfigError(f"参数格式应为 --key=value: {arg}")
            overrides[key] = value
        else:
            positional.append(arg)
    return positional, overrides


def resolve_config(positional: List[str], overrides: Dict[str, str]) -> ExperimentConfig:
    command = positional[0]
    if command == "run":
        if len(positional) < 2:
            raise ConfigError("run 需要配置文件路径")
        config = ExperimentConfig.load(Path(positional[1]))
    elif command == "counterexample":
        if len(positional) < 2 or positional[1] not in ("g1", "g2", "g3", "g4"):
            raise ConfigError("counterexample 需要 g1|g2|g3|g4")
        config = ExperimentConfig.default(f"counterexample-{positional[1]}")
    elif command == "scenario":
        if len(positional) < 2:
            raise ConfigError(f"scenario 需要场景名: {', '.join(SCENARIOS)}")
        config = ExperimentConfig.default(positional[1])
    else:
        config = ExperimentConfig.default(COMMANDS[command])
    if overrides:
        config = config.with_overrides(overrides)
    return config


def main():
    if len(sys.argv) < 2:
        print(USAGE)
        sys.exit(1)

    command = sys.argv[1]
    if command not in COMMANDS and command not in ("run", "counterexample", "scenario"):
        print(f"未知模式: {command}")
        print(USAGE)
        sys.exit(1)

    try:
        positional, overrides = split_args(sys.argv[1:])
        config = resolve_config(positional, overrides)
    except ConfigError as e:
        report = config_error_report(command, e)
        print(f"❌ 配置错误: {e}")
        sys.exit(report.exit_code)

    report = run(config)
    print(f"\n{'✅' if report.passed else '❌'} {report.scenario}: {sum(v.passed for v in report.verdicts)}/{len(report.verdicts)} 项判定通过")
    sys.exit(report.exit_code)


if __name__ == "__main__":
    main()
