#!/usr/bin/env python3
"""
球谐分析模块
Gauss-Legendre 球面网格、实正交球谐变换、Legendre 多项式、
逆幂展开系数与级数恒等式校验
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln, lpmv

from scripts.utils import InvalidParameterError, SingularParameterError, gauss_legendre

FOUR_PI = 4.0 * math.pi

# 求解器所需的切向导数阶数余量
BAND_MARGIN = 4


class SphereGrid:
    """
    单位球面上的 Gauss-Legendre x 等距经度网格

    余纬节点数 n_theta >= ceil(3 l_max / 2) + 1, 经度节点数 n_phi = 2 n_theta,
    可精确积分三个带限场的乘积
    """

    def __init__(self, lmax: int, n_theta: Optional[int] = None, n_phi: Optional[int] = None):
        if lmax < 0:
            raise InvalidParameterError(f"l_max 必须非负: {lmax}")
        self.lmax = int(lmax)
        self.n_theta = int(n_theta or (3 * self.lmax + 1) // 2 + 1)
        self.n_phi = int(n_phi or max(2 * self.n_theta, 2 * self.lmax + 1))
        if self.n_theta < self.lmax + 1 or self.n_phi < 2 * self.lmax + 1:
            raise InvalidParameterError("网格节点数不足以表示该带限")

        mu, w = gauss_legendre(self.n_theta, -1.0, 1.0)
        order = np.argsort(-mu)
        self.mu = mu[order]
        self.w_theta = w[order]
        self.theta = np.arccos(self.mu)
        self.sin_theta = np.sqrt(1.0 - self.mu**2)
        self.phi = 2.0 * math.pi * np.arange(self.n_phi) / self.n_phi
        self.w_phi = 2.0 * math.pi / self.n_phi
        self.weights = np.outer(self.w_theta, np.full(self.n_phi, self.w_phi))

        st = self.sin_theta[:, None]
        ct = self.mu[:, None]
        cp = np.cos(self.phi)[None, :]
        sp = np.sin(self.phi)[None, :]
        self.points = np.stack([st * cp, st * sp, ct * np.ones_like(cp)], axis=-1)
        self.e_theta = np.stack([ct * cp, ct * sp, -st * np.ones_like(cp)], axis=-1)
        self.e_phi = np.stack([-sp * np.ones_like(st), cp * np.ones_like(st), np.zeros_like(st * cp)], axis=-1)

        self._build_tables()

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_theta, self.n_phi)

    def _build_tables(self):
        L = self.lmax
        nm = 2 * L + 1
        pi = np.zeros((nm, L + 1, self.n_theta))
        dpi = np.zeros_like(pi)
        d2pi = np.zeros_like(pi)
        sin_t = self.sin_theta
        cot_t = self.mu / sin_t

        for m in range(L + 1):
            ls = np.arange(m, L + 1)
            log_ratio = gammaln(ls - m + 1) - gammaln(ls + m + 1)
            norm = np.sqrt((2 * ls + 1) / FOUR_PI * np.exp(log_ratio))
            if m > 0:
                norm = norm * math.sqrt(2.0)
            table = norm[:, None] * lpmv(m, ls[:, None], self.mu[None, :])

            # (1 - mu^2) dP_l^m/dmu = (l + m) P_{l-1}^m - l mu P_l^m
            lower = np.zeros_like(table)
            lower[1:] = table[:-1]
            ratio = np.zeros(len(ls))
            lf = ls.astype(float)
            ratio[1:] = np.sqrt((2 * lf[1:] + 1) / (2 * lf[1:] - 1) * (lf[1:] - m) * (lf[1:] + m))
            d1 = -(ratio[:, None] * lower - lf[:, None] * self.mu[None, :] * table) / sin_t[None, :]
            d2 = -cot_t[None, :] * d1 - (lf[:, None] * (lf[:, None] + 1) - m**2 / sin_t[None, :] ** 2) * table

            for mi in {L + m, L - m}:
                pi[mi, m:, :] = table
                dpi[mi, m:, :] = d1
                d2pi[mi, m:, :] = d2

        ms = np.arange(-L, L + 1)
        am = np.abs(ms)[:, None]
        ph = self.phi[None, :]
        trig = np.where(ms[:, None] >= 0, np.cos(am * ph), np.sin(am * ph))
        dtrig = np.where(ms[:, None] >= 0, -am * np.sin(am * ph), am * np.cos(am * ph))

        self._pi = pi
        self._dpi = dpi
        self._d2pi = d2pi
        self._trig = trig
        self._dtrig = dtrig
        self._m = ms

    def integrate(self, values: np.ndarray) -> float:
        """球面积分 (相对单位球面测度)"""
        return float(np.sum(self.weights * values))

    def total_weight(self) -> float:
        return float(self.weights.sum())


@lru_cache(maxsize=32)
def grid_for(lmax: int) -> SphereGrid:
    """按带限缓存网格 (网格不可变, 可跨线程共享)"""
    return SphereGrid(lmax)


@dataclass
class HarmonicField:
    """
    单位球面上的带限实函数

    coeffs[l, m + lmax] 为实正交球谐基 Y_{l,m} 的系数 (l 升序, m 从 -l 到 l)
    """

    coeffs: np.ndarray
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    grid: Optional[SphereGrid] = field(default=None, repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != 2 * self.coeffs.shape[0] - 1:
            raise InvalidParameterError(f"系数数组形状错误: {self.coeffs.shape}")

    @property
    def lmax(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def zeros(cls, lmax: int) -> "HarmonicField":
        return cls(np.zeros((lmax + 1, 2 * lmax + 1)))

    @classmethod
    def constant(cls, value: float, lmax: int) -> "HarmonicField":
        out = cls.zeros(lmax)
        out.coeffs[0, lmax] = value * math.sqrt(FOUR_PI)
        return out

    @classmethod
    def harmonic(cls, l: int, m: int, lmax: int, amplitude: float = 1.0) -> "HarmonicField":
        if abs(m) > l or l > lmax:
            raise InvalidParameterError(f"无效的球谐指标 (l={l}, m={m})")
        out = cls.zeros(lmax)
        out.coeffs[l, m + lmax] = amplitude
        return out

    @classmethod
    def from_vector(cls, vector: np.ndarray, lmax: int, bands: Sequence[int]) -> "HarmonicField":
        out = cls.zeros(lmax)
        out.coeffs[band_mask(lmax, bands)] = vector
        return out

    def to_vector(self, bands: Sequence[int]) -> np.ndarray:
        return self.coeffs[band_mask(self.lmax, bands)].copy()

    def resized(self, lmax: int) -> "HarmonicField":
        """截断或补零到新的带限"""
        out = HarmonicField.zeros(lmax)
        n = min(lmax, self.lmax)
        out.coeffs[: n + 1, lmax - n : lmax + n + 1] = self.coeffs[: n + 1, self.lmax - n : self.lmax + n + 1]
        return out

    def copy(self) -> "HarmonicField":
        return HarmonicField(self.coeffs.copy())

    def __add__(self, other: "HarmonicField") -> "HarmonicField":
        L = max(self.lmax, other.lmax)
        return HarmonicField(self.resized(L).coeffs + other.resized(L).coeffs)

    def __sub__(self, other: "HarmonicField") -> "HarmonicField":
        L = max(self.lmax, other.lmax)
        return HarmonicField(self.resized(L).coeffs - other.resized(L).coeffs)

    def __mul__(self, scalar: float) -> "HarmonicField":
        return HarmonicField(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "HarmonicField":
        return HarmonicField(-self.coeffs)

    def band(self, l: int) -> np.ndarray:
        """第 l 带的 2l+1 个系数"""
        L = self.lmax
        return self.coeffs[l, L - l : L + l + 1].copy()

    def mean(self) -> float:
        """球面平均值"""
        return float(self.coeffs[0, self.lmax] / math.sqrt(FOUR_PI))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs)))


def band_mask(lmax: int, bands: Iterable[int]) -> np.ndarray:
    """coeffs 数组上选中 bands 的布尔掩码"""
    mask = np.zeros((lmax + 1, 2 * lmax + 1), dtype=bool)
    for l in bands:
        if 0 <= l <= lmax:
            mask[l, lmax - l : lmax + l + 1] = True
    return mask


def degree_array(lmax: int) -> np.ndarray:
    return np.broadcast_to(np.arange(lmax + 1)[:, None], (lmax + 1, 2 * lmax + 1)).astype(float)


def _padded_coeffs(grid: SphereGrid, f: HarmonicField) -> np.ndarray:
    if f.lmax > grid.lmax:
        raise InvalidParameterError(f"场的带限 {f.lmax} 超过网格带限 {grid.lmax}")
    return f.resized(grid.lmax).coeffs


def analyze(grid: SphereGrid, samples: np.ndarray, lmax: Optional[int] = None) -> HarmonicField:
    """
    网格采样 -> 球谐系数

    Args:
        grid: 球面网格
        samples: 形状 (n_theta, n_phi) 的采样值
        lmax: 输出带限 (默认等于网格带限, 不能超过)
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape != grid.shape:
        raise InvalidParameterError(f"采样形状 {samples.shape} 与网格 {grid.shape} 不符")
    if not np.all(np.isfinite(samples)):
        raise InvalidParameterError("采样值包含非有限数")
    lmax = grid.lmax if lmax is None else lmax
    if lmax > grid.lmax:
        raise InvalidParameterError(f"输出带限 {lmax} 超过网格带限 {grid.lmax}")

    fourier = np.einsum("ik,mk->mi", samples, grid._trig) * grid.w_phi
    coeffs = np.einsum("mi,mli,i->lm", fourier, grid._pi, grid.w_theta)
    field_ = HarmonicField(coeffs)
    if lmax < grid.lmax:
        field_ = field_.resized(lmax)
    else:
        field_.samples = samples
        field_.grid = grid
    return field_


def synthesize(grid: SphereGrid, f: HarmonicField) -> np.ndarray:
    """球谐系数 -> 网格采样"""
    c = _padded_coeffs(grid, f)
    a = np.einsum("lm,mli->mi", c, grid._pi)
    return np.einsum("mi,mk->ik", a, grid._trig)


def synthesize_derivatives(grid: SphereGrid, f: HarmonicField) -> Dict[str, np.ndarray]:
    """
    网格上的函数值及其 (theta, phi) 坐标一阶、二阶导数

    Returns:
        {"f", "t", "p", "tt", "tp", "pp"}
    """
    c = _padded_coeffs(grid, f)
    a0 = np.einsum("lm,mli->mi", c, grid._pi)
    a1 = np.einsum("lm,mli->mi", c, grid._dpi)
    a2 = np.einsum("lm,mli->mi", c, grid._d2pi)
    m2 = (grid._m.astype(float) ** 2)[:, None]
    return {
        "f": np.einsum("mi,mk->ik", a0, grid._trig),
        "t": np.einsum("mi,mk->ik", a1, grid._trig),
        "p": np.einsum("mi,mk->ik", a0, grid._dtrig),
        "tt": np.einsum("mi,mk->ik", a2, grid._trig),
        "tp": np.einsum("mi,mk->ik", a1, grid._dtrig),
        "pp": -np.einsum("mi,mk->ik", a0, m2 * grid._trig),
    }


def evaluate(f: HarmonicField, directions: np.ndarray) -> np.ndarray:
    """在任意方向上求值 (非网格点)"""
    y = np.asarray(directions, dtype=float)
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    mu = np.clip(y[..., 2], -1.0, 1.0)
    ph = np.arctan2(y[..., 1], y[..., 0])
    L = f.lmax
    out = np.zeros(mu.shape)
    for m in range(L + 1):
        ls = np.arange(m, L + 1)
        log_ratio = gammaln(ls - m + 1) - gammaln(ls + m + 1)
        norm = np.sqrt((2 * ls + 1) / FOUR_PI * np.exp(log_ratio)) * (math.sqrt(2.0) if m > 0 else 1.0)
        plm = norm.reshape((-1,) + (1,) * mu.ndim) * lpmv(m, ls.reshape((-1,) + (1,) * mu.ndim), mu[None, ...])
        cos_part = np.tensordot(f.coeffs[m:, L + m], plm, axes=(0, 0))
        out += cos_part * np.cos(m * ph)
        if m > 0:
            sin_part = np.tensordot(f.coeffs[m:, L - m], plm, axes=(0, 0))
            out += sin_part * np.sin(m * ph)
    return out


def project(f: HarmonicField, bands: Union[int, Iterable[int]]) -> HarmonicField:
    """只保留指定带 (整数或整数集合) 的系数"""
    if isinstance(bands, (int, np.integer)):
        bands = [int(bands)]
    mask = band_mask(f.lmax, bands)
    return HarmonicField(np.where(mask, f.coeffs, 0.0))


def project_out(f: HarmonicField, bands: Union[int, Iterable[int]]) -> HarmonicField:
    """去掉指定带"""
    return f - project(f, bands)


def laplacian(f: HarmonicField, radius: float = 1.0) -> HarmonicField:
    """半径为 radius 的圆球面上的 Laplace-Beltrami 算子: 第 l 带乘以 -l(l+1)/radius^2"""
    l = degree_array(f.lmax)
    return HarmonicField(-l * (l + 1) / radius**2 * f.coeffs)


def willmore_eigenvalue(l: Union[int, np.ndarray]) -> Union[float, np.ndarray]:
    return (l - 1) * l * (l + 1) * (l + 2)


def willmore_bilaplacian(f: HarmonicField, radius: float = 1.0) -> HarmonicField:
    """Δ² + 2 radius^-2 Δ, 第 l 带乘以 (l-1)l(l+1)(l+2)/radius^4"""
    l = degree_array(f.lmax)
    return HarmonicField(willmore_eigenvalue(l) / radius**4 * f.coeffs)


def legendre_table(lmax: int, s: Union[float, np.ndarray]) -> np.ndarray:
    """P_0..P_lmax 的三项递推, 形状 (lmax+1,) + s.shape"""
    s = np.asarray(s, dtype=float)
    s = np.where(np.abs(s) > 1.0, np.sign(s) * np.minimum(np.abs(s), 1.0), s)
    out = np.empty((lmax + 1,) + s.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = s
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + 1) * s * out[l] - l * out[l - 1]) / (l + 1)
    return out


def legendre(l: int, s: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Legendre 多项式 P_l(s), |s| 超出 1 不超过 1e-14 时截断"""
    if l < 0:
        raise InvalidParameterError(f"阶数必须非负: {l}")
    value = legendre_table(l, s)[l]
    return float(value) if np.ndim(value) == 0 else value


def zonal(grid: SphereGrid, axis: np.ndarray, coefficients: Sequence[float], lmax: Optional[int] = None) -> HarmonicField:
    """
    Σ_l c_l P_l(-<y, axis/|axis|>) 的球谐表示

    axis 为零向量时只保留常数项
    """
    coefficients = np.asarray(coefficients, dtype=float)
    L = len(coefficients) - 1
    lmax = grid.lmax if lmax is None else lmax
    if L > lmax:
        raise InvalidParameterError(f"带状级数阶数 {L} 超过带限 {lmax}")
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        return HarmonicField.constant(coefficients[0], lmax)
    s = -np.einsum("ijk,k->ij", grid.points, axis / norm)
    values = np.tensordot(coefficients, legendre_table(L, s), axes=(0, 0))
    return analyze(grid, values, lmax)


def coordinate_field(grid: SphereGrid, i: int, lmax: Optional[int] = None) -> HarmonicField:
    """坐标函数 y^i"""
    return analyze(grid, grid.points[..., i], lmax)


def y2_samples(grid: SphereGrid, i: int, j: int) -> np.ndarray:
    """Y_2^{ij} = (3 y^i y^j - δ^{ij}) / 2"""
    y = grid.points
    return 0.5 * (3.0 * y[..., i] * y[..., j] - (1.0 if i == j else 0.0))


def inverse_power_coeff(k: int, l: int, xi: Union[float, np.ndarray]) -> float:
    """
    |y + ξ|^{-2k-1} 的 Legendre 展开系数

    |ξ| < 1 返回 a_{k,l}(ξ), |ξ| > 1 返回 |ξ|^{-2k} a_{k,l}(ξ/|ξ|^2)
    """
    if k not in (0, 1, 2, 3):
        raise InvalidParameterError(f"k 只能取 0..3: {k}")
    if l < 0:
        raise InvalidParameterError(f"阶数必须非负: {l}")
    r = float(np.linalg.norm(xi)) if np.ndim(xi) else abs(float(xi))
    if abs(r - 1.0) < 1e-6:
        raise SingularParameterError(f"|ξ| = {r} 太接近 1")
    if r > 1.0:
        return r ** (-2 * k) * _inner_coeff(k, l, 1.0 / r)
    return _inner_coeff(k, l, r)


def _inner_coeff(k: int, l: int, r: float) -> float:
    q = r * r
    if k == 0:
        return 1.0
    if k == 1:
        return (2 * l + 1) / (1.0 - q)
    if k == 2:
        return (2 * l + 1) * ((2 * l + 3) - (2 * l - 1) * q) / (3.0 * (1.0 - q) ** 3)
    top = (2 * l + 3) * (2 * l + 5) - 2 * (2 * l - 3) * (2 * l + 5) * q + (2 * l - 3) * (2 * l - 1) * q * q
    return (2 * l + 1) * top / (15.0 * (1.0 - q) ** 5)


def inverse_power_series(k: int, xi: np.ndarray, y: np.ndarray, terms: int) -> np.ndarray:
    """截断级数 Σ_{l<=terms} 逼近 |y + ξ|^{-2k-1}, y 为单位向量数组 (..., 3)"""
    xi = np.asarray(xi, dtype=float)
    r = float(np.linalg.norm(xi))
    s = -np.einsum("...k,k->...", y, xi / r)
    table = legendre_table(terms, s)
    ls = np.arange(terms + 1)
    if r < 1.0:
        scale = np.array([inverse_power_coeff(k, l, r) for l in ls]) * r**ls
    else:
        scale = np.array([inverse_power_coeff(k, l, r) for l in ls]) * r ** (-ls - 1.0)
    return np.tensordot(scale, table, axes=(0, 0))


def random_directions(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def inverse_power_check(k: int, xi: np.ndarray, terms: int = 60, n_points: int = 100, seed: int = 7) -> float:
    """截断级数与直接求值的最大相对偏差"""
    y = random_directions(n_points, seed)
    direct = np.linalg.norm(y + np.asarray(xi, dtype=float), axis=1) ** (-2 * k - 1)
    series = inverse_power_series(k, xi, y, terms)
    return float(np.max(np.abs(series - direct) / direct))


def series_terms_needed(r: float, tol: float = 1e-13) -> int:
    """几何衰减率 r 下达到 tol 所需的项数 (含多项式因子余量)"""
    ratio = r if r < 1.0 else 1.0 / r
    return int(min(2000, max(20, math.ceil(math.log(tol) / math.log(ratio)) + 40)))


def oncenter_closed_sum(a: float) -> float:
    """Σ_{l>=2} (l-1)(l+1)(l+2)/(l(2l+1)) a^{2l} 的闭式"""
    return 0.25 * (
        4.5 / a * math.log((1 + a) / (1 - a)) + 8.0 * math.log(1 - a * a) + (23 * a**2 - 12 * a**4 - 9) / (1 - a * a) ** 2
    )


def outlying_closed_sum(a: float) -> float:
    """Σ_{l>=2} (l-1)l(l+2)/((l+1)(2l+1)) a^{-2l-2} 的闭式"""
    return 0.25 * (
        4.5 / a * math.log((a + 1) / (a - 1)) + 8.0 * math.log(1 - a**-2) + (3 - a * a) / (a * a - 1) ** 2
    )


def series_identities_check(tol: float = 1e-9) -> Dict:
    """
    数值校验对数级数、(1-t^2)^-2 级数以及两个闭式求和

    Returns:
        报告字典, 每项含 value/reference/error/passed
    """
    checks: List[Dict] = []

    def record(name: str, value: float, reference: float):
        error = abs(value - reference)
        checks.append(
            {"name": name, "value": value, "reference": reference, "error": error, "passed": bool(error < tol)}
        )

    n = 2000
    ls = np.arange(1, n + 1, dtype=float)
    for t in (0.5, -0.5, 0.9, -0.9):
        log_series = float(np.sum((-1.0) ** (ls - 1) / ls * t**ls))
        record(f"log(1+t) t={t}", log_series, math.log1p(t))
        ks = np.arange(0, n, dtype=float)
        inv_series = float(np.sum((1 + ks) * t ** (2 * ks)))
        record(f"(1-t^2)^-2 t={t}", inv_series, 1.0 / (1 - t * t) ** 2)

    partial_60 = float(np.sum((-1.0) ** (ls[:60] - 1) / ls[:60] * 0.5 ** ls[:60]))
    record("log(1.5) 60 terms", partial_60, math.log(1.5))

    for a in (0.3, 0.5, 0.7):
        l = np.arange(2, 200 + series_terms_needed(a * a), dtype=float)
        value = float(np.sum((l - 1) * (l + 1) * (l + 2) / (l * (2 * l + 1)) * a ** (2 * l)))
        record(f"on-center sum |xi|={a}", value, oncenter_closed_sum(a))
    for a in (1.5, 2.0, 3.0):
        l = np.arange(2, 200 + series_terms_needed(1.0 / (a * a)), dtype=float)
        value = float(np.sum((l - 1) * l * (l + 2) / ((l + 1) * (2 * l + 1)) * a ** (-2 * l - 2)))
        record(f"outlying sum |xi|={a}", value, outlying_closed_sum(a))

    return {"checks": checks, "passed": all(c["passed"] for c in checks)}


def generating_function_check(n_samples: int = 50, terms: Optional[int] = None, seed: int = 11, t_max: float = 0.9) -> float:
    """
    (1 - 2st + t^2)^{-1/2} = Σ_{l<terms} P_l(s) t^l 在 [0,1] x [0,t_max] 上的最大偏差

    terms 缺省时按 t_max 的几何衰减取足够的项数
    """
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, 1.0, n_samples)
    t = rng.uniform(0.0, t_max, n_samples)
    terms = series_terms_needed(t_max) if terms is None else terms
    if terms < 1:
        raise InvalidParameterError(f"级数项数必须为正: {terms}")
    table = legendre_table(terms - 1, s)
    powers = t[None, :] ** np.arange(terms)[:, None]
    series = np.sum(table * powers, axis=0)
    direct = (1.0 - 2.0 * s * t + t * t) ** -0.5
    return float(np.max(np.abs(series - direct)))


def spherical_identities_check(grid: SphereGrid, radial_nodes: int = 16) -> Dict:
    """
    正交关系表在网格求积下的误差

    ∫y^i y^j, ∫y^i y^j y^k y^l, ∫Y_2^{ij} Y_2^{kl} (单位球面) 以及 ∫_{B_1} y^i y^j (单位球)
    """
    y = grid.points
    w = grid.weights
    eye = np.eye(3)

    second = np.einsum("ab,abi,abj->ij", w, y, y)
    err2 = np.max(np.abs(second - FOUR_PI / 3.0 * eye))

    fourth = np.einsum("ab,abi,abj,abk,abl->ijkl", w, y, y, y, y)
    ref4 = FOUR_PI / 15.0 * (
        np.einsum("ij,kl->ijkl", eye, eye) + np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
    )
    err4 = np.max(np.abs(fourth - ref4))

    y2 = 0.5 * (3.0 * np.einsum("abi,abj->abij", y, y) - eye)
    y2y2 = np.einsum("ab,abij,abkl->ijkl", w, y2, y2)
    ref_y2 = math.pi / 5.0 * (
        3 * np.einsum("ik,jl->ijkl", eye, eye) + 3 * np.einsum("il,jk->ijkl", eye, eye) - 2 * np.einsum("ij,kl->ijkl", eye, eye)
    )
    err_y2 = np.max(np.abs(y2y2 - ref_y2))

    r, wr = gauss_legendre(radial_nodes, 0.0, 1.0)
    ball = np.sum(wr * r**4) * second
    err_ball = np.max(np.abs(ball - FOUR_PI / 15.0 * eye))

    errors = {
        "weights": abs(grid.total_weight() - FOUR_PI),
        "yy": float(err2),
        "yyyy": float(err4),
        "Y2Y2": float(err_y2),
        "ball_yy": float(err_ball),
    }
    return {"errors": errors, "passed": all(e < 1e-12 for e in errors.values())}


def bilaplacian_factors(lmax: int, radius: float = 1.0) -> Dict[int, float]:
    """对合成的单个球谐施加 willmore_bilaplacian, 读回每带的乘子"""
    factors = {}
    for l in range(lmax + 1):
        f = HarmonicField.harmonic(l, 0, lmax)
        out = willmore_bilaplacian(f, radius)
        factors[l] = float(out.coeffs[l, lmax])
    return factors
