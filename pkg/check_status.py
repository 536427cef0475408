#!/usr/bin/env python3
"""
检查实验输出状态脚本
汇总 output/ 下各场景报告的判定结果、退出码与耗时
"""

import json
from datetime import datetime
from pathlib import Path

from scripts.config import Config

EXIT_LABELS = {0: "通过", 2: "验收失败", 3: "数值失败", 4: "配置错误"}


def load_reports(output_dir: Path):
    reports = []
    for path in sorted(output_dir.glob("*_report.json")):
        with open(path, "r", encoding="utf-8") as f:
            try:
                reports.append((path, json.load(f)))
            except json.JSONDecodeError:
                print(f"⚠️  报告文件损坏: {path.name}")
    return reports


def check_status(output_dir: Path = None) -> int:
    """打印状态并返回失败报告的数量"""
    output_dir = Path(output_dir or Config.OUTPUT_DIR)
    print("=" * 60)
    print("📊 Willmore 约化实验 - 状态检查")
    print("=" * 60)
    print()

    if not output_dir.exists():
        print(f"⚠️  未找到输出目录: {output_dir}")
        return 0

    reports = load_reports(output_dir)
    if not reports:
        print("⚠️  未找到任何场景报告")
        return 0

    failed = 0
    for path, report in reports:
        verdicts = report.get("verdicts", [])
        passed = sum(1 for v in verdicts if v.get("passed"))
        code = report.get("exit_code", 0)
        mark = "✅" if report.get("passed") else "❌"
        mtime = datetime.fromtimestamp(path.stat().st_mtime)
        print(f"{mark} {report.get('scenario', path.stem)} ({path.name})")
        print(f"   判定: {passed}/{len(verdicts)} 通过, 退出码 {code} ({EXIT_LABELS.get(code, '未知')})")
        print(f"   耗时: {report.get('timings', {}).get('total', 0.0):.1f} 秒 (更新于 {mtime.strftime('%m-%d %H:%M')})")
        for v in verdicts:
            if not v.get("passed"):
                print(f"   ✗ [{v.get('criterion')}] {v.get('name')}: {v.get('value')}")
        if report.get("error"):
            print(f"   ⚠️ {report['error'].get('type')}: {report['error'].get('message')}")
        tables = report.get("tables", {})
        if tables:
            listing = ", ".join(f"{name}({table.get('rows', 0)}行)" for name, table in tables.items())
            print(f"   表格: {listing}")
        print()
        if not report.get("passed"):
            failed += 1

    print("=" * 60)
    print(f"✅ 状态检查完成: {len(reports) - failed}/{len(reports)} 个场景通过")
    print("=" * 60)
    return failed


if __name__ == "__main__":
    check_status()
