"""
Willmore 约化数值实验: 度量、球谐、曲面几何、LS 约化与约化能量
"""
