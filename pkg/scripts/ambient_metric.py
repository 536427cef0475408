#!/usr/bin/env python3
"""
背景度量模块
Schwarzschild / 标量曲率脉冲 / 凸起扰动 / 一般共形平坦度量族,
解析共形因子导数、Ricci 与标量曲率、曲率积分
"""

import math
import sys
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

try:
    from config import Config
except ImportError:
    from scripts.config import Config

from scripts.harmonics import grid_for, random_directions
from scripts.utils import (
    DomainError,
    InvalidParameterError,
    NumericalError,
    fit_decay_exponent,
    gauss_legendre,
)

EUCLIDEAN = "euclidean"
SCHWARZSCHILD = "schwarzschild"
PULSE = "pulse"
BUMP_G3 = "bump_g3"
GENERAL = "general_conformal"

RadialProfile = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]


def bump_1d(t: np.ndarray, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    """[lo, hi] 上的标准光滑凸起函数及其导数"""
    t = np.asarray(t, dtype=float)
    u = (2.0 * t - lo - hi) / (hi - lo)
    inside = np.abs(u) < 1.0
    q = np.where(inside, 1.0 - u * u, 1.0)
    value = np.where(inside, np.exp(-1.0 / q), 0.0)
    deriv = value * (-2.0 * u / q**2) * (2.0 / (hi - lo))
    return value, np.where(inside, deriv, 0.0)


@dataclass(frozen=True)
class PulseSpec:
    """
    脉冲剖面 S(s) = -B Σ_k base^{-p k} χ(s / base^k), χ 支撑在 support 上

    tilt > 0 时 χ(t) = bump(t) exp(tilt (t - mid)), 使 χ'(mid) = bump(mid) tilt
    """

    amplitude: float
    support: Tuple[float, float] = (3.0, 4.0)
    base: float = 10.0
    exponent: float = 4.0
    tilt: float = 0.0
    nodes: int = field(default_factory=lambda: Config.PSI_NODES)
    name: str = "pulse"

    def __post_init__(self):
        lo, hi = self.support
        if self.amplitude < 0.0:
            raise InvalidParameterError(f"脉冲幅度必须非负 (S ≤ 0): {self.amplitude}")
        if not 0.0 < lo < hi:
            raise InvalidParameterError(f"无效的支撑区间: {self.support}")
        if self.base <= 1.0 or hi >= self.base * lo:
            raise InvalidParameterError("相邻频带的支撑区间不能重叠")
        if self.exponent < 4.0:
            raise InvalidParameterError(f"S 需以 s^-4 衰减, 指数 {self.exponent} 过小")

    @classmethod
    def g2(cls, amplitude: float) -> "PulseSpec":
        return cls(amplitude=amplitude, support=(3.0, 4.0), name="g2")

    @classmethod
    def g1(cls, amplitude: float) -> "PulseSpec":
        return cls(amplitude=amplitude, support=(9.0 / 8.0, 11.0 / 8.0), name="g1")

    @classmethod
    def g4(cls, amplitude: float = 1.0) -> "PulseSpec":
        # bump(5) = e^-1, tilt = e 给出 χ'(5) = 1
        return cls(amplitude=amplitude, support=(4.0, 6.0), exponent=5.0, tilt=math.e, name="g4")

    def chi(self, t: np.ndarray) -> np.ndarray:
        return self.chi_jet(t)[0]

    def chi_jet(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.support
        value, deriv = bump_1d(t, lo, hi)
        if self.tilt:
            mid = 0.5 * (lo + hi)
            factor = np.exp(self.tilt * (np.asarray(t, dtype=float) - mid))
            factor = np.where(value > 0.0, factor, 0.0)
            return value * factor, (deriv + self.tilt * value) * factor
        return value, deriv

    def _partial_moment(self, sigma: np.ndarray, power: int) -> np.ndarray:
        """∫_{max(σ, lo)}^{hi} τ^power χ(τ) dτ"""
        lo, hi = self.support
        a = np.clip(np.asarray(sigma, dtype=float), lo, hi)
        x, w = gauss_legendre(self.nodes, 0.0, 1.0)
        length = (hi - a)[..., None]
        tau = a[..., None] + length * x
        return np.sum(length * w * tau**power * self.chi(tau), axis=-1)

    @lru_cache(maxsize=4)
    def full_moment(self, power: int) -> float:
        return float(self._partial_moment(np.array(self.support[0]), power))

    def band_scale(self, k: int) -> Tuple[float, float]:
        """第 k 带的 (幅度, 半径尺度)"""
        return self.amplitude * self.base ** (-self.exponent * k), self.base**k

    def band_count(self, s_max: float) -> int:
        lo = self.support[0]
        if s_max <= lo:
            return 1
        return int(math.floor(math.log(s_max / lo) / math.log(self.base))) + 1

    def profile_jet(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """S(s) 与 S'(s)"""
        s = np.asarray(s, dtype=float)
        S = np.zeros_like(s)
        dS = np.zeros_like(s)
        if self.amplitude == 0.0 or s.size == 0:
            return S, dS
        for k in range(self.band_count(float(np.max(s))) + 1):
            a_k, b_k = self.band_scale(k)
            value, deriv = self.chi_jet(s / b_k)
            S -= a_k * value
            dS -= a_k * deriv / b_k
        return S, dS

    def potential_jet(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Ψ(s) = s^-1 ∫_s^∞ (t - s) t S(t) dt 及其前三阶导数

        Ψ = B/s - A, B(s) = ∫_s^∞ t² S, A(s) = ∫_s^∞ t S; 全部位于 s 之外的频带按几何级数求和
        """
        s = np.asarray(s, dtype=float)
        zero = np.zeros_like(s)
        if self.amplitude == 0.0 or s.size == 0:
            return zero, zero.copy(), zero.copy(), zero.copy()

        kmax = self.band_count(float(np.max(s)))
        big_b = np.zeros_like(s)
        big_a = np.zeros_like(s)
        for k in range(kmax + 1):
            a_k, b_k = self.band_scale(k)
            sigma = s / b_k
            big_b -= a_k * b_k**3 * self._partial_moment(sigma, 2)
            big_a -= a_k * b_k**2 * self._partial_moment(sigma, 1)

        r3 = self.base ** (3.0 - self.exponent)
        r2 = self.base ** (2.0 - self.exponent)
        big_b -= self.amplitude * self.full_moment(2) * r3 ** (kmax + 1) / (1.0 - r3)
        big_a -= self.amplitude * self.full_moment(1) * r2 ** (kmax + 1) / (1.0 - r2)

        S, dS = self.profile_jet(s)
        psi = big_b / s - big_a
        d1 = -big_b / s**2
        d2 = S + 2.0 * big_b / s**3
        d3 = dS - 2.0 * S / s - 6.0 * big_b / s**4
        return psi, d1, d2, d3

    def band_intervals(self, s_min: float, s_max: float) -> List[Tuple[int, float, float]]:
        """与 [s_min, s_max] 相交的频带 (k, 左端, 右端)"""
        lo, hi = self.support
        out = []
        k = 0
        while True:
            _, b_k = self.band_scale(k)
            if b_k * lo > s_max:
                break
            left, right = max(b_k * lo, s_min), min(b_k * hi, s_max)
            if left < right:
                out.append((k, left, right))
            k += 1
        return out

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "amplitude": self.amplitude,
            "support": list(self.support),
            "base": self.base,
            "exponent": self.exponent,
            "tilt": self.tilt,
        }


@dataclass(frozen=True)
class MetricFamily:
    """
    共形平坦度量 g = w⁴ ḡ

    scale 记录 m/2 (内部按 m = 2 归一); cutoff 为内截断半径
    """

    variant: str
    mass: float = 2.0
    pulse: Optional[PulseSpec] = None
    eps: float = 0.0
    delta: float = 0.0
    profile: Optional[RadialProfile] = field(default=None, compare=False)
    cutoff: float = 0.0

    @property
    def scale(self) -> float:
        return self.mass / 2.0

    @property
    def is_radial(self) -> bool:
        return self.variant != BUMP_G3

    @property
    def scalar_flat(self) -> bool:
        if self.variant in (EUCLIDEAN, SCHWARZSCHILD):
            return True
        if self.variant == PULSE:
            return self.pulse.amplitude == 0.0
        if self.variant == BUMP_G3:
            return self.eps == 0.0
        return False

    def describe(self) -> Dict:
        info = {"variant": self.variant, "mass": self.mass, "cutoff": self.cutoff}
        if self.pulse is not None:
            info["pulse"] = self.pulse.to_dict()
        if self.variant == BUMP_G3:
            info.update({"eps": self.eps, "delta": self.delta})
        return info


def make_euclidean() -> MetricFamily:
    return MetricFamily(variant=EUCLIDEAN, mass=0.0, cutoff=0.0)


def make_schwarzschild(m: float = 2.0) -> MetricFamily:
    """φ_m⁴ ḡ, φ_m = 1 + m/(2|x|)"""
    if not m > 0.0:
        raise InvalidParameterError(f"质量必须为正: {m}")
    return MetricFamily(variant=SCHWARZSCHILD, mass=float(m), cutoff=Config.INNER_CUTOFF * m / 2.0)


def make_pulse_metric(spec: PulseSpec) -> MetricFamily:
    """(1 + |x|^-1 + Ψ(|x|))⁴ ḡ"""
    fam = MetricFamily(variant=PULSE, mass=2.0, pulse=spec, cutoff=Config.INNER_CUTOFF)
    sample_points = np.geomspace(Config.INNER_CUTOFF, 1e6, 200)
    w = 1.0 + 1.0 / sample_points + spec.potential_jet(sample_points)[0]
    if np.any(w <= 0.0):
        raise InvalidParameterError("脉冲幅度过大, 共形因子出现非正值")
    return fam


def make_bump_metric_g3(eps: float = 1.0, delta: float = 5e-4) -> MetricFamily:
    """[1 + |x|^-1 - ε(|x|^-2 + δψ(x))]⁴ ḡ"""
    if eps < 0.0 or delta < 0.0:
        raise InvalidParameterError(f"eps, delta 必须非负: {eps}, {delta}")
    fam = MetricFamily(variant=BUMP_G3, mass=2.0, eps=float(eps), delta=float(delta), cutoff=Config.INNER_CUTOFF)
    # 凸起中心所在的射线以及一般方向
    radii = np.geomspace(Config.INNER_CUTOFF * 1.0001, 1e5, 400)
    sample_points = np.concatenate(
        [radii[:, None] * np.array([1.0, 0.0, 0.0]), radii[:, None] * np.array([0.0, 0.6, 0.8])], axis=0
    )
    if np.any(conformal_jet(fam, sample_points)[0] <= 0.0):
        raise InvalidParameterError("eps/delta 过大, 共形因子出现非正值")
    return fam


def make_general_conformal(profile: RadialProfile, cutoff: Optional[float] = None) -> MetricFamily:
    """
    用户给定径向共形因子 w = f(|x|)

    profile(ρ) 返回 (f, f', f'', f''')
    """
    fam = MetricFamily(variant=GENERAL, mass=2.0, profile=profile, cutoff=Config.INNER_CUTOFF if cutoff is None else cutoff)
    sample_points = np.geomspace(max(fam.cutoff, 1e-3) * 1.0001, 1e6, 200)
    if np.any(np.asarray(profile(sample_points)[0]) <= 0.0):
        raise InvalidParameterError("共形因子出现非正值")
    return fam


def radial_profile(fam: MetricFamily, rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """径向度量族的 (f, f', f'', f''')"""
    rho = np.asarray(rho, dtype=float)
    if fam.variant == EUCLIDEAN:
        one = np.ones_like(rho)
        return one, 0.0 * one, 0.0 * one, 0.0 * one
    if fam.variant == SCHWARZSCHILD:
        s = fam.scale
        return 1.0 + s / rho, -s / rho**2, 2.0 * s / rho**3, -6.0 * s / rho**4
    if fam.variant == PULSE:
        psi, d1, d2, d3 = fam.pulse.potential_jet(rho)
        return 1.0 + 1.0 / rho + psi, -1.0 / rho**2 + d1, 2.0 / rho**3 + d2, -6.0 / rho**4 + d3
    if fam.variant == BUMP_G3:
        e = fam.eps
        return (
            1.0 + 1.0 / rho - e / rho**2,
            -1.0 / rho**2 + 2.0 * e / rho**3,
            2.0 / rho**3 - 6.0 * e / rho**4,
            -6.0 / rho**4 + 24.0 * e / rho**5,
        )
    if fam.variant == GENERAL:
        return tuple(np.asarray(v, dtype=float) * np.ones_like(rho) for v in fam.profile(rho))
    raise InvalidParameterError(f"未知度量族: {fam.variant}")


def _radial_jet(rho, xh, f, f1, f2, f3):
    eye = np.eye(3)
    dw = f1[..., None] * xh
    xx = np.einsum("...i,...j->...ij", xh, xh)
    d2w = f2[..., None, None] * xx + (f1 / rho)[..., None, None] * (eye - xx)
    c = (f2 - f1 / rho) / rho
    xxx = np.einsum("...ij,...k->...ijk", xx, xh)
    sym = (
        np.einsum("ij,...k->...ijk", eye, xh) + np.einsum("ik,...j->...ijk", eye, xh) + np.einsum("jk,...i->...ijk", eye, xh)
    )
    d3w = (f3 - 3.0 * c)[..., None, None, None] * xxx + c[..., None, None, None] * sym
    return f, dw, d2w, d3w


def bump_chi(y: np.ndarray) -> np.ndarray:
    """χ(y) = exp(-1/(1-|y|²)), |y| < 1"""
    return bump_chi_jet(y)[0]


def bump_chi_jet(y: np.ndarray):
    """χ 及其前三阶偏导数"""
    y = np.asarray(y, dtype=float)
    eye = np.eye(3)
    q = np.sum(y * y, axis=-1)
    inside = q < 1.0
    t = np.where(inside, 1.0 / (1.0 - np.where(inside, q, 0.0)), 0.0)
    g = np.where(inside, np.exp(-t), 0.0)
    g1 = -(t**2) * g
    g2 = (t**4 - 2.0 * t**3) * g
    g3 = (-(t**6) + 6.0 * t**5 - 6.0 * t**4) * g

    d1 = 2.0 * g1[..., None] * y
    yy = np.einsum("...i,...j->...ij", y, y)
    d2 = 4.0 * g2[..., None, None] * yy + 2.0 * g1[..., None, None] * eye
    sym = np.einsum("ij,...k->...ijk", eye, y) + np.einsum("ik,...j->...ijk", eye, y) + np.einsum("jk,...i->...ijk", eye, y)
    d3 = 8.0 * g3[..., None, None, None] * np.einsum("...ij,...k->...ijk", yy, y) + 4.0 * g2[..., None, None, None] * sym
    return g, d1, d2, d3


def bump_sum_jet(x: np.ndarray):
    """ψ(x) = Σ_k 10^{-2k} χ(2·10^{-k}(x - 10^k e₁)) 及其前三阶偏导数"""
    x = np.asarray(x, dtype=float)
    psi = np.zeros(x.shape[:-1])
    d1 = np.zeros(x.shape)
    d2 = np.zeros(x.shape + (3,))
    d3 = np.zeros(x.shape + (3, 3))
    x1_max = float(np.max(np.abs(x[..., 0]))) if x.size else 0.0
    k_max = int(math.ceil(math.log10(max(2.0 * x1_max, 1.0)))) + 1
    for k in range(k_max + 1):
        center = np.array([10.0**k, 0.0, 0.0])
        a = 2.0 * 10.0 ** (-k)
        weight = 10.0 ** (-2 * k)
        z = a * (x - center)
        if not np.any(np.sum(z * z, axis=-1) < 1.0):
            continue
        g, j1, j2, j3 = bump_chi_jet(z)
        psi += weight * g
        d1 += weight * a * j1
        d2 += weight * a**2 * j2
        d3 += weight * a**3 * j3
    return psi, d1, d2, d3


def _as_points(fam: MetricFamily, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    rho = np.linalg.norm(x, axis=-1)
    if np.any(rho <= fam.cutoff) or np.any(rho == 0.0):
        worst = float(np.min(rho))
        raise DomainError(f"点位于内截断半径 {fam.cutoff} 之内 (|x| = {worst:.6g})")
    return x, rho


def conformal_jet(fam: MetricFamily, x: np.ndarray):
    """
    共形因子 w 及其前三阶偏导数

    Args:
        fam: 度量族
        x: 形状 (..., 3) 的坐标点

    Returns:
        (w, ∂w, ∂²w, ∂³w), 形状 (...), (..., 3), (..., 3, 3), (..., 3, 3, 3)
    """
    x, rho = _as_points(fam, x)
    xh = x / rho[..., None]
    w, dw, d2w, d3w = _radial_jet(rho, xh, *radial_profile(fam, rho))
    if fam.variant == BUMP_G3 and fam.eps * fam.delta != 0.0:
        psi, p1, p2, p3 = bump_sum_jet(x)
        c = fam.eps * fam.delta
        w = w - c * psi
        dw = dw - c * p1
        d2w = d2w - c * p2
        d3w = d3w - c * p3
    return w, dw, d2w, d3w


@dataclass
class MetricJet:
    point: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    d3g: np.ndarray
    christoffel: np.ndarray


@dataclass
class CurvatureJet:
    """Ric_ij, R, ∂_k R, E = Ric - R g / 2; dric[..., i, j, k] = ∂_k Ric_ij"""

    ricci: np.ndarray
    scalar: np.ndarray
    scalar_gradient: np.ndarray
    einstein: np.ndarray
    metric: np.ndarray
    dricci: Optional[np.ndarray] = None


def metric_jet(fam: MetricFamily, x: np.ndarray) -> MetricJet:
    w, dw, d2w, d3w = conformal_jet(fam, x)
    eye = np.eye(3)
    w2 = (w**2)[..., None, None]

    g = (w**4)[..., None, None] * eye
    dg = np.einsum("...k,ij->...ijk", 4.0 * w[..., None] ** 3 * dw, eye)
    second = 12.0 * w2 * np.einsum("...k,...l->...kl", dw, dw) + 4.0 * (w**3)[..., None, None] * d2w
    d2g = np.einsum("...kl,ij->...ijkl", second, eye)
    third = (
        24.0 * w[..., None, None, None] * np.einsum("...k,...l,...m->...klm", dw, dw, dw)
        + 12.0
        * (w**2)[..., None, None, None]
        * (
            np.einsum("...kl,...m->...klm", d2w, dw)
            + np.einsum("...km,...l->...klm", d2w, dw)
            + np.einsum("...lm,...k->...klm", d2w, dw)
        )
        + 4.0 * (w**3)[..., None, None, None] * d3w
    )
    d3g = np.einsum("...klm,ij->...ijklm", third, eye)

    a = 2.0 * dw / w[..., None]
    christoffel = (
        np.einsum("lk,...i->...lki", eye, a) + np.einsum("li,...k->...lki", eye, a) - np.einsum("ki,...l->...lki", eye, a)
    )
    return MetricJet(point=np.asarray(x, dtype=float), g=g, dg=dg, d2g=d2g, d3g=d3g, christoffel=christoffel)


def curvature_from_jet(w, dw, d2w, d3w, with_derivative: bool = False) -> CurvatureJet:
    eye = np.eye(3)
    lap = np.trace(d2w, axis1=-2, axis2=-1)
    dlap = np.einsum("...iik->...k", d3w)
    grad_sq = np.sum(dw * dw, axis=-1)
    W = w[..., None, None]
    outer = np.einsum("...i,...j->...ij", dw, dw)

    ric = -2.0 * d2w / W + 6.0 * outer / W**2 - (2.0 * lap / w + 2.0 * grad_sq / w**2)[..., None, None] * eye
    scalar = -8.0 * w**-5 * lap
    grad_r = 40.0 * (w**-6 * lap)[..., None] * dw - 8.0 * (w**-5)[..., None] * dlap
    metric = (w**4)[..., None, None] * eye
    einstein = ric - 0.5 * scalar[..., None, None] * metric

    dric = None
    if with_derivative:
        W3 = w[..., None, None, None]
        dric = (
            -2.0 * d3w / W3
            + 2.0 * np.einsum("...ij,...k->...ijk", d2w, dw) / W3**2
            + 6.0 * (np.einsum("...ik,...j->...ijk", d2w, dw) + np.einsum("...i,...jk->...ijk", dw, d2w)) / W3**2
            - 12.0 * np.einsum("...i,...j,...k->...ijk", dw, dw, dw) / W3**3
        )
        trace_part = (
            2.0 * dlap / w[..., None]
            - 2.0 * (lap / w**2)[..., None] * dw
            + 4.0 * np.einsum("...l,...lk->...k", dw, d2w) / (w**2)[..., None]
            - 4.0 * (grad_sq / w**3)[..., None] * dw
        )
        dric = dric - np.einsum("ij,...k->...ijk", eye, trace_part)

    return CurvatureJet(
        ricci=ric, scalar=scalar, scalar_gradient=grad_r, einstein=einstein, metric=metric, dricci=dric
    )


def curvature_jet(fam: MetricFamily, x: np.ndarray, with_derivative: bool = False) -> CurvatureJet:
    """
    共形平坦度量 w⁴ḡ 的曲率

    Ric = -2∂²w/w + 6∂w∂w/w² - (2Δw/w + 2|∂w|²/w²)δ, R = -8 w^-5 Δw
    """
    return curvature_from_jet(*conformal_jet(fam, x), with_derivative=with_derivative)


def scalar_curvature(fam: MetricFamily, x: np.ndarray) -> np.ndarray:
    return curvature_jet(fam, x).scalar


def radial_growth(fam: MetricFamily, x: np.ndarray) -> np.ndarray:
    """x^i ∂_i(|x|² R)"""
    x = np.asarray(x, dtype=float)
    jet = curvature_jet(fam, x)
    r2 = np.sum(x * x, axis=-1)
    return 2.0 * r2 * jet.scalar + r2 * np.sum(x * jet.scalar_gradient, axis=-1)


def radial_scalar_curvature(fam: MetricFamily, s: np.ndarray) -> np.ndarray:
    """径向度量族的 R(s); 脉冲族精确满足 R = -8 w^-5 S"""
    s = np.asarray(s, dtype=float)
    if fam.variant == PULSE:
        f = radial_profile(fam, s)[0]
        return -8.0 * f**-5 * fam.pulse.profile_jet(s)[0]
    f, f1, f2, _ = radial_profile(fam, s)
    return -8.0 * f**-5 * (f2 + 2.0 * f1 / s)


def laplacian_R(fam: MetricFamily, x: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Euclidean ΔR, 对解析梯度做中心差分"""
    x = np.asarray(x, dtype=float)
    h = rel_step * np.linalg.norm(x, axis=-1)
    total = np.zeros(x.shape[:-1])
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        plus = curvature_jet(fam, x + h[..., None] * e).scalar_gradient[..., k]
        minus = curvature_jet(fam, x - h[..., None] * e).scalar_gradient[..., k]
        total += (plus - minus) / (2.0 * h)
    return total


def reference_schwarzschild(fam: MetricFamily) -> MetricFamily:
    mass = fam.mass if fam.variant == SCHWARZSCHILD else 2.0
    return MetricFamily(variant=SCHWARZSCHILD, mass=mass, cutoff=fam.cutoff)


def perturbation(fam: MetricFamily, x: np.ndarray) -> Dict[str, np.ndarray]:
    """σ = g - g_S 及其一阶、二阶偏导数"""
    ref = reference_schwarzschild(fam)
    a = metric_jet(fam, x)
    b = metric_jet(ref, x)
    return {"sigma": a.g - b.g, "dsigma": a.dg - b.dg, "d2sigma": a.d2g - b.d2g}


def decay_exponents(
    fam: MetricFamily, radii: Sequence[float], directions: Optional[np.ndarray] = None
) -> Dict[str, Optional[float]]:
    """
    在球壳阶梯上拟合 |σ|, |∂σ|, |∂²σ| 的衰减指数

    σ 恒为零时返回 None (精确)
    """
    if directions is None:
        directions = random_directions(32, Config.SEED)
    maxima = {"sigma": [], "dsigma": [], "d2sigma": []}
    for r in radii:
        parts = perturbation(fam, r * np.asarray(directions, dtype=float))
        for key, value in parts.items():
            maxima[key].append(float(np.max(np.abs(value))))
    return {key: fit_decay_exponent(radii, values) for key, values in maxima.items()}


# ---------------------------------------------------------------------------
# 曲率积分
# ---------------------------------------------------------------------------


@dataclass
class IntegralResult:
    value: float
    error: float
    bands: int = 0

    def to_dict(self) -> Dict:
        return {"value": self.value, "error": self.error, "bands": self.bands}


def cap_geometry(s: np.ndarray, d: float, r: float):
    """
    球面 |x| = s 落在球 B_r(c) (|c| = d) 内的部分

    Returns:
        (面积, 一阶矩沿 ĉ 的分量, 面积对 d 的导数)
    """
    s = np.asarray(s, dtype=float)
    if d == 0.0:
        inside = s < r
        area = np.where(inside, 4.0 * math.pi * s**2, 0.0)
        zero = np.zeros_like(s)
        return area, zero, zero
    c0 = (s * s + d * d - r * r) / (2.0 * s * d)
    partial = np.abs(c0) < 1.0
    c0 = np.clip(c0, -1.0, 1.0)
    area = 2.0 * math.pi * s**2 * (1.0 - c0)
    moment = math.pi * s**3 * (1.0 - c0**2)
    d_area = np.where(partial, math.pi * s * (s * s - d * d - r * r) / d**2, 0.0)
    return area, moment, d_area


def _radial_panels(fam: MetricFamily, s_min: float, s_max: float) -> List[Tuple[float, float]]:
    if fam.variant == PULSE:
        return [(a, b) for _, a, b in fam.pulse.band_intervals(s_min, s_max)]
    # 几何分段
    edges = np.geomspace(s_min, s_max, max(2, int(math.ceil(math.log(s_max / s_min) / math.log(1.5))) + 1))
    return list(zip(edges[:-1], edges[1:]))


def _radial_integral(fam, s_min, s_max, weight_fn, splits, nodes) -> float:
    total = 0.0
    for a, b in _radial_panels(fam, s_min, s_max):
        cuts = sorted({a, b, *[c for c in splits if a < c < b]})
        for left, right in zip(cuts[:-1], cuts[1:]):
            s, w = gauss_legendre(nodes, left, right)
            total += float(np.sum(w * radial_scalar_curvature(fam, s) * weight_fn(s)))
    return total


def integrate_R(
    fam: MetricFamily,
    center: np.ndarray,
    radius: float,
    exterior: bool = False,
    moment: Optional[np.ndarray] = None,
    tol: float = 1e-8,
) -> IntegralResult:
    """
    ∫ R dv̄ 在球 B_radius(center) 上 (exterior=True 时在其补集上)

    moment 给定时计算 ∫ R ḡ(moment, center - x) dv̄ (仅球内)
    """
    center = np.asarray(center, dtype=float)
    d = float(np.linalg.norm(center))
    if exterior:
        if d + fam.cutoff >= radius:
            raise DomainError("球的补集与内截断区域相交")
    elif d - radius <= fam.cutoff:
        raise DomainError("球与内截断区域相交")
    if exterior and moment is not None:
        raise InvalidParameterError("一阶矩只对球内积分提供")
    if fam.scalar_flat or fam.variant == EUCLIDEAN:
        return IntegralResult(0.0, 0.0)
    if not fam.is_radial:
        return _integrate_R_cartesian(fam, center, radius, exterior, moment, tol)

    nodes = Config.RADIAL_NODES
    lo_s = max(d - radius, fam.cutoff) if not exterior else fam.cutoff
    splits = [abs(d - radius), d + radius]

    if moment is not None:
        chat = center / d if d > 0.0 else np.zeros(3)
        v = np.asarray(moment, dtype=float)

        def weight(s):
            area, mom, _ = cap_geometry(s, d, radius)
            return float(v @ center) * area - float(v @ chat) * mom

        value = _radial_integral(fam, lo_s, d + radius, weight, splits, nodes)
        return IntegralResult(value, 0.0, len(_radial_panels(fam, lo_s, d + radius)))

    if not exterior:
        value = _radial_integral(fam, lo_s, d + radius, lambda s: cap_geometry(s, d, radius)[0], splits, nodes)
        return IntegralResult(value, 0.0, len(_radial_panels(fam, lo_s, d + radius)))

    def outside(s):
        return 4.0 * math.pi * s**2 - cap_geometry(s, d, radius)[0]

    near = _radial_integral(fam, lo_s, d + radius, outside, splits, nodes)
    return _exterior_tail(fam, near, d + radius, tol)


def _exterior_tail(fam: MetricFamily, near: float, start: float, tol: float) -> IntegralResult:
    """start 之外的整球壳贡献, 按频带 (或几何分段) 累加直到尾项估计小于 tol"""
    nodes = Config.RADIAL_NODES
    shell = lambda s: 4.0 * math.pi * s**2  # noqa: E731
    total = near
    count = 0
    if fam.variant == PULSE:
        ratio = fam.pulse.base ** (3.0 - fam.pulse.exponent)
        lo, hi = fam.pulse.support
        k = max(0, int(math.floor(math.log(start / lo) / math.log(fam.pulse.base))))
        last = 0.0
        while count < 400:
            _, b_k = fam.pulse.band_scale(k)
            left, right = max(b_k * lo, start), b_k * hi
            if left < right:
                s, w = gauss_legendre(nodes, left, right)
                last = float(np.sum(w * radial_scalar_curvature(fam, s) * shell(s)))
                total += last
                count += 1
            tail = abs(last) * ratio / (1.0 - ratio)
            if b_k * lo > Config.BAND_TRUNCATION_FACTOR * start and tail <= tol * max(abs(total), 1e-300):
                return IntegralResult(total, tail, count)
            k += 1
        raise NumericalError("频带求和未收敛", estimate=tail)

    # 一般径向族: 几何分段并以最后两段的比值估计尾项
    left = start
    previous = None
    while count < 400:
        right = 1.5 * left
        s, w = gauss_legendre(nodes, left, right)
        piece = float(np.sum(w * radial_scalar_curvature(fam, s) * shell(s)))
        total += piece
        count += 1
        if previous not in (None, 0.0):
            ratio = abs(piece / previous)
            tail = abs(piece) * ratio / (1.0 - ratio) if ratio < 1.0 else math.inf
            if right > Config.BAND_TRUNCATION_FACTOR * start and tail <= tol * max(abs(total), 1e-300):
                return IntegralResult(total, tail, count)
        elif previous == 0.0 and piece == 0.0 and right > Config.BAND_TRUNCATION_FACTOR * start:
            return IntegralResult(total, 0.0, count)
        previous = piece
        left = right
    raise NumericalError("外部积分尾项超出容差", estimate=abs(piece))


def _ball_samples(center, radius, radial_nodes, lmax, inner=0.0):
    grid = grid_for(lmax)
    s, ws = gauss_legendre(radial_nodes, inner, radius)
    points = center + s[:, None, None, None] * grid.points[None]
    weights = (ws * s**2)[:, None, None] * grid.weights[None]
    return points, weights


def _integrate_R_cartesian(fam, center, radius, exterior, moment, tol) -> IntegralResult:
    """非旋转对称度量族: 以 center 为中心的球坐标求积"""
    lmax = Config.LMAX_VERIFY
    nodes = Config.RADIAL_NODES
    if not exterior:
        points, weights = _ball_samples(center, radius, nodes, lmax)
        values = scalar_curvature(fam, points)
        if moment is not None:
            values = values * np.einsum("k,...k->...", np.asarray(moment, dtype=float), center - points)
        coarse_points, coarse_weights = _ball_samples(center, radius, nodes // 2, lmax // 2)
        coarse = scalar_curvature(fam, coarse_points)
        if moment is not None:
            coarse = coarse * np.einsum("k,...k->...", np.asarray(moment, dtype=float), center - coarse_points)
        value = float(np.sum(weights * values))
        return IntegralResult(value, abs(value - float(np.sum(coarse_weights * coarse))))

    # 外部: 以原点为中心的几何壳层, 减去球内部分
    grid = grid_for(lmax)
    inner = fam.cutoff * 1.0001
    total = 0.0
    left = inner
    piece = 0.0
    far = Config.BAND_TRUNCATION_FACTOR * (np.linalg.norm(center) + radius)
    while left < far:
        right = min(1.5 * left, far)
        s, ws = gauss_legendre(nodes // 2, left, right)
        pts = s[:, None, None, None] * grid.points[None]
        piece = float(np.sum((ws * s**2)[:, None, None] * grid.weights[None] * scalar_curvature(fam, pts)))
        total += piece
        left = right
    ball = _integrate_R_cartesian(fam, center, radius, False, None, tol)
    tail = abs(piece) * 2.0
    if tail > max(tol, 1e-3) * max(abs(total), 1.0):
        raise NumericalError("外部积分尾项超出容差", estimate=tail)
    return IntegralResult(total - ball.value, tail + ball.error)


def integrate_R_radial_derivative(fam: MetricFamily, center: np.ndarray, radius: float) -> float:
    """d/dd ∫_{B_radius(d ĉ)} R dv̄ (球心沿径向移动)"""
    center = np.asarray(center, dtype=float)
    d = float(np.linalg.norm(center))
    if fam.scalar_flat:
        return 0.0
    if d == 0.0:
        raise InvalidParameterError("球心在原点时径向导数无定义")
    if not fam.is_radial:
        chat = center / d
        return sphere_flux(fam, center, radius, chat)
    lo_s = max(d - radius, fam.cutoff)
    return _radial_integral(
        fam, lo_s, d + radius, lambda s: cap_geometry(s, d, radius)[2], [abs(d - radius), d + radius], Config.RADIAL_NODES
    )


def sphere_flux(fam: MetricFamily, center: np.ndarray, radius: float, direction: np.ndarray) -> float:
    """∫_{∂B_radius(center)} ḡ(direction, ν̄) R dμ̄"""
    grid = grid_for(Config.LMAX_VERIFY)
    points = np.asarray(center, dtype=float) + radius * grid.points
    values = scalar_curvature(fam, points) * np.einsum("k,ijk->ij", np.asarray(direction, dtype=float), grid.points)
    return radius**2 * grid.integrate(values)


def monte_carlo_integral(
    fam: MetricFamily,
    center: np.ndarray,
    radius: float,
    samples: int = 1_000_000,
    seed: Optional[int] = None,
    moment: Optional[np.ndarray] = None,
    chunk: int = 200_000,
) -> Tuple[float, float]:
    """球内 ∫R dv̄ 的 Monte-Carlo 估计, 返回 (均值, 标准误)"""
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    center = np.asarray(center, dtype=float)
    volume = 4.0 / 3.0 * math.pi * radius**3
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = radius * rng.uniform(size=n) ** (1.0 / 3.0)
        x = center + r[:, None] * v
        values = scalar_curvature(fam, x)
        if moment is not None:
            values = values * ((center - x) @ np.asarray(moment, dtype=float))
        total += float(values.sum())
        total_sq += float((values**2).sum())
        done += n
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    return volume * mean, volume * math.sqrt(var / samples)


def family_from_dict(spec: Dict) -> MetricFamily:
    """由实验配置中的 metric 字段构造度量族"""
    if not isinstance(spec, dict) or "variant" not in spec:
        raise InvalidParameterError(f"metric 配置缺少 variant: {spec}")
    variant = str(spec["variant"]).lower()
    if variant == EUCLIDEAN:
        return make_euclidean()
    if variant == SCHWARZSCHILD:
        return make_schwarzschild(float(spec.get("mass", 2.0)))
    if variant == PULSE:
        shape = str(spec.get("shape", "g2")).lower()
        amplitude = float(spec.get("amplitude", 1.0))
        builders = {"g1": PulseSpec.g1, "g2": PulseSpec.g2, "g4": PulseSpec.g4}
        if shape in builders:
            return make_pulse_metric(builders[shape](amplitude))
        if shape == "custom":
            return make_pulse_metric(
                PulseSpec(
                    amplitude=amplitude,
                    support=tuple(spec.get("support", (3.0, 4.0))),
                    base=float(spec.get("base", 10.0)),
                    exponent=float(spec.get("exponent", 4.0)),
                    tilt=float(spec.get("tilt", 0.0)),
                )
            )
        raise InvalidParameterError(f"未知脉冲形状: {shape}")
    if variant == BUMP_G3:
        return make_bump_metric_g3(float(spec.get("eps", 1.0)), float(spec.get("delta", 5e-4)))
    raise InvalidParameterError(f"配置文件不支持的度量族: {variant}")
