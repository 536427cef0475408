#!/usr/bin/env python3
"""
曲面几何模块
坐标球面上的图曲面 Σ_{ξ,λ}(u): 法向、第一/第二基本形式、平均曲率、
Willmore 算子 W、线性化算子 L 与 Q、面积/能量变分、Pohozaev 与 Gauss 积分恒等式
"""

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

try:
    from config import Config
except ImportError:
    from scripts.config import Config

from scripts.ambient_metric import (
    EUCLIDEAN,
    MetricFamily,
    conformal_jet,
    curvature_from_jet,
    curvature_jet,
    reference_schwarzschild,
)
from scripts.harmonics import (
    BAND_MARGIN,
    FOUR_PI,
    HarmonicField,
    SphereGrid,
    analyze,
    evaluate,
    grid_for,
    legendre_table,
    synthesize,
    synthesize_derivatives,
)
from scripts.utils import (
    DegenerateSurfaceError,
    InvalidParameterError,
    NumericalError,
    UnsupportedCaseError,
    gauss_legendre,
)

Samples = np.ndarray
FieldLike = Union[HarmonicField, np.ndarray]

SURFACE_CSV_HEADER = [
    "lambda",
    "xi1",
    "xi2",
    "xi3",
    "area",
    "area_radius",
    "inner_radius",
    "willmore_energy",
    "hawking_mass",
    "trfree_h_sq",
    "gauss_residual",
]


@dataclass
class GraphSurface:
    """
    Σ_{ξ,λ}(u) = {λξ + (λ + u(y)) y : y ∈ S²}

    lmax 为计算网格的带限, u 的带限不得超过 lmax - BAND_MARGIN
    """

    xi: np.ndarray
    lam: float
    u: HarmonicField
    family: MetricFamily
    lmax: Optional[int] = None
    _geometry: Optional["GeometryFields"] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float).reshape(3)
        if not self.lam > 0.0:
            raise InvalidParameterError(f"λ 必须为正: {self.lam}")
        if self.lmax is None:
            self.lmax = max(Config.LMAX, self.u.lmax + BAND_MARGIN)
        if self.u.lmax > self.lmax - BAND_MARGIN:
            raise InvalidParameterError(
                f"u 的带限 {self.u.lmax} 超过网格带限 {self.lmax} 减去余量 {BAND_MARGIN}"
            )

    @classmethod
    def coordinate_sphere(cls, family: MetricFamily, xi, lam: float, lmax: Optional[int] = None) -> "GraphSurface":
        lmax = Config.LMAX if lmax is None else lmax
        return cls(xi=xi, lam=lam, u=HarmonicField.zeros(max(lmax - BAND_MARGIN, 0)), family=family, lmax=lmax)

    @property
    def center(self) -> np.ndarray:
        return self.lam * self.xi

    @property
    def grid(self) -> SphereGrid:
        return grid_for(self.lmax)

    @property
    def u_band(self) -> int:
        return self.lmax - BAND_MARGIN

    def with_u(self, u: HarmonicField) -> "GraphSurface":
        return GraphSurface(xi=self.xi, lam=self.lam, u=u.resized(self.u_band), family=self.family, lmax=self.lmax)


def _inv2(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1] / det
    inv[..., 1, 1] = m[..., 0, 0] / det
    inv[..., 0, 1] = -m[..., 0, 1] / det
    inv[..., 1, 0] = -m[..., 1, 0] / det
    return inv, det


class GeometryFields:
    """
    网格节点上的几何量

    坐标 (θ, φ) 下: frame[..., a, :] = ∂_a X, 诱导度量 gamma, 第二基本形式 h (外法向),
    平均曲率 H (圆球面 H = 2/λ > 0), 无迹部分的模方 h0_sq, 面积元节点权重 dmu
    """

    def __init__(self, surface: GraphSurface, with_curvature_derivative: bool = False):
        self.surface = surface
        grid = surface.grid
        self.grid = grid
        lam = surface.lam

        d = synthesize_derivatives(grid, surface.u)
        r = lam + d["f"]
        if np.any(r <= 0.0):
            node = np.unravel_index(int(np.argmin(r)), r.shape)
            raise DegenerateSurfaceError(f"图函数使半径 λ + u 非正 (节点 {node})", worst_node=tuple(int(i) for i in node))

        y = grid.points
        st = grid.sin_theta[:, None, None]
        ct = grid.mu[:, None, None]
        e_t = grid.e_theta
        e_p = grid.e_phi
        y_t = e_t
        y_p = st * e_p
        y_tt = -y
        y_tp = ct * e_p
        y_pp = -st * (st * y + ct * e_t)

        R = r[..., None]
        rt, rp = d["t"][..., None], d["p"][..., None]
        X_t = rt * y + R * y_t
        X_p = rp * y + R * y_p
        X_tt = d["tt"][..., None] * y + 2.0 * rt * y_t + R * y_tt
        X_tp = d["tp"][..., None] * y + rt * y_p + rp * y_t + R * y_tp
        X_pp = d["pp"][..., None] * y + 2.0 * rp * y_p + R * y_pp

        frame = np.stack([X_t, X_p], axis=-2)
        second = np.stack([np.stack([X_tt, X_tp], axis=-2), np.stack([X_tp, X_pp], axis=-2)], axis=-3)

        gb = np.einsum("...ak,...bk->...ab", frame, frame)
        gb_inv, det = _inv2(gb)
        scale = np.sum(X_t * X_t, axis=-1) * np.sum(X_p * X_p, axis=-1)
        ratio = det / scale
        if np.any(~np.isfinite(ratio)) or np.any(ratio < 1e-10):
            node = np.unravel_index(int(np.nanargmin(np.where(np.isfinite(ratio), ratio, -1.0))), ratio.shape)
            raise DegenerateSurfaceError(f"诱导度量退化 (节点 {node})", worst_node=tuple(int(i) for i in node))

        sqrt_det = np.sqrt(det)
        n_bar = np.cross(X_t, X_p) / sqrt_det[..., None]
        h_bar = -np.einsum("...abk,...k->...ab", second, n_bar)
        H_bar = np.einsum("...ab,...ab->...", gb_inv, h_bar)
        h0_bar = h_bar - 0.5 * H_bar[..., None, None] * gb
        h0_bar_sq = np.einsum("...ac,...bd,...ab,...cd->...", gb_inv, gb_inv, h0_bar, h0_bar)

        self.position = lam * surface.xi + R * y
        jet = conformal_jet(surface.family, self.position)
        w, dw = jet[0], jet[1]
        self.curvature = curvature_from_jet(*jet, with_derivative=with_curvature_derivative)

        dnw = np.sum(dw * n_bar, axis=-1)
        w2 = w**2
        w4 = w**4

        self.r = r
        self.frame = frame
        self.second = second
        self.normal_bar = n_bar
        self.normal = n_bar / w2[..., None]
        self.gamma_bar = gb
        self.gamma_bar_inv = gb_inv
        self.gamma = w4[..., None, None] * gb
        self.gamma_inv = gb_inv / w4[..., None, None]
        self.h_bar = h_bar
        self.H_bar = H_bar
        self.H = (H_bar + 4.0 * dnw / w) / w2
        self.h = w2[..., None, None] * (h_bar + (2.0 * dnw / w)[..., None, None] * gb)
        self.h0 = w2[..., None, None] * h0_bar
        self.h0_sq = h0_bar_sq / w4
        self.h0_bar_sq = h0_bar_sq
        self.jacobian = sqrt_det / grid.sin_theta[:, None]
        self.dmu_bar = grid.weights * self.jacobian
        self.dmu = w4 * self.dmu_bar
        self.w = w
        self.dw = dw
        self.ric_nn = np.einsum("...i,...ij,...j->...", n_bar, self.curvature.ricci, n_bar) / w4
        self.R = self.curvature.scalar

        christoffel_bar = np.einsum("...cd,...abk,...dk->...cab", gb_inv, second, frame)
        F = 2.0 * np.einsum("...k,...ak->...a", dw, frame) / w[..., None]
        eye = np.eye(2)
        self.christoffel = (
            christoffel_bar
            + np.einsum("ca,...b->...cab", eye, F)
            + np.einsum("cb,...a->...cab", eye, F)
            - np.einsum("...ab,...cd,...d->...cab", gb, gb_inv, F)
        )
        self._h_derivs = None

    # -- 积分与场转换 --------------------------------------------------------

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.dmu * values))

    def to_field(self, values: FieldLike) -> HarmonicField:
        if isinstance(values, HarmonicField):
            return values
        return analyze(self.grid, values)

    def samples(self, values: FieldLike) -> np.ndarray:
        if isinstance(values, HarmonicField):
            return synthesize(self.grid, values)
        return np.asarray(values, dtype=float)

    def derivatives(self, values: FieldLike) -> Dict[str, np.ndarray]:
        return synthesize_derivatives(self.grid, self.to_field(values))

    # -- 曲面上的微分算子 ------------------------------------------------------

    @staticmethod
    def coordinate_gradient(d: Dict[str, np.ndarray]) -> np.ndarray:
        return np.stack([d["t"], d["p"]], axis=-1)

    def hessian(self, d: Dict[str, np.ndarray]) -> np.ndarray:
        """∇²f_ab = ∂_a∂_b f - Γ^c_ab ∂_c f (诱导度量 γ)"""
        raw = np.stack([np.stack([d["tt"], d["tp"]], axis=-1), np.stack([d["tp"], d["pp"]], axis=-1)], axis=-2)
        return raw - np.einsum("...cab,...c->...ab", self.christoffel, self.coordinate_gradient(d))

    def laplacian(self, values: FieldLike) -> np.ndarray:
        """诱导度量下的 Laplace-Beltrami"""
        d = self.derivatives(values)
        return np.einsum("...ab,...ab->...", self.gamma_inv, self.hessian(d))

    def gradient_dot(self, d1: Dict[str, np.ndarray], d2: Dict[str, np.ndarray]) -> np.ndarray:
        return np.einsum(
            "...ab,...a,...b->...", self.gamma_inv, self.coordinate_gradient(d1), self.coordinate_gradient(d2)
        )

    def raise_gradient(self, d: Dict[str, np.ndarray]) -> np.ndarray:
        """∇f 的坐标分量 γ^{ab} ∂_b f"""
        return np.einsum("...ab,...b->...a", self.gamma_inv, self.coordinate_gradient(d))

    def tangent_components(self, vector: np.ndarray) -> np.ndarray:
        """切向量 (笛卡尔分量) 在坐标基 ∂_a X 下的分量"""
        return np.einsum("...ab,...bk,...k->...a", self.gamma_bar_inv, self.frame, vector)

    def directional(self, vector: np.ndarray, values: FieldLike) -> np.ndarray:
        """切向量作用于函数: T(f) = T^a ∂_a f"""
        comps = self.tangent_components(vector)
        return np.einsum("...a,...a->...", comps, self.coordinate_gradient(self.derivatives(values)))

    @property
    def potential(self) -> np.ndarray:
        """|h|² + Ric(ν,ν) = |h̊|² + H²/2 + Ric(ν,ν)"""
        return self.h0_sq + 0.5 * self.H**2 + self.ric_nn

    @property
    def mean_curvature_derivatives(self) -> Dict[str, np.ndarray]:
        if self._h_derivs is None:
            self._h_derivs = self.derivatives(self.H)
        return self._h_derivs

    # -- 环境曲率在曲面上的分量 ------------------------------------------------

    def ricci_normal_tangent(self) -> np.ndarray:
        """Ric(ν, ∂_a X)"""
        return np.einsum("...i,...ij,...aj->...a", self.normal, self.curvature.ricci, self.frame)

    def ricci_tangent(self) -> np.ndarray:
        """Ric(∂_a X, ∂_b X)"""
        return np.einsum("...ai,...ij,...bj->...ab", self.frame, self.curvature.ricci, self.frame)

    def ricci_normal_derivative(self) -> np.ndarray:
        """(D_ν Ric)(ν, ν)"""
        if self.curvature.dricci is None:
            raise InvalidParameterError("需要以 with_curvature_derivative=True 计算几何量")
        a = self.normal
        partial = np.einsum("...ijk,...i,...j,...k->...", self.curvature.dricci, a, a, a)
        ric = self.curvature.ricci
        a_dw = np.sum(a * self.dw, axis=-1)
        a_sq = np.sum(a * a, axis=-1)
        ric_aa = np.einsum("...i,...ij,...j->...", a, ric, a)
        ric_wa = np.einsum("...i,...ij,...j->...", self.dw, ric, a)
        return partial - 4.0 / self.w * (2.0 * a_dw * ric_aa - a_sq * ric_wa)


def geometry(surface: GraphSurface, with_curvature_derivative: bool = False) -> GeometryFields:
    """曲面几何量 (按曲面缓存)"""
    cached = surface._geometry
    if cached is not None and (cached.curvature.dricci is not None or not with_curvature_derivative):
        return cached
    geo = GeometryFields(surface, with_curvature_derivative=with_curvature_derivative)
    surface._geometry = geo
    return geo


# ---------------------------------------------------------------------------
# 标量泛函
# ---------------------------------------------------------------------------


@dataclass
class SurfaceReport:
    lam: float
    xi: List[float]
    area: float
    area_radius: float
    inner_radius: float
    willmore_energy: float
    hawking_mass: float
    trfree_h_sq: float
    gauss_residual: float
    h_sq: float

    def to_dict(self) -> Dict:
        return {
            "lambda": self.lam,
            "xi": list(self.xi),
            "area": self.area,
            "area_radius": self.area_radius,
            "inner_radius": self.inner_radius,
            "willmore_energy": self.willmore_energy,
            "hawking_mass": self.hawking_mass,
            "trfree_h_sq": self.trfree_h_sq,
            "gauss_residual": self.gauss_residual,
        }

    def csv_row(self) -> List[float]:
        return [
            self.lam,
            *self.xi,
            self.area,
            self.area_radius,
            self.inner_radius,
            self.willmore_energy,
            self.hawking_mass,
            self.trfree_h_sq,
            self.gauss_residual,
        ]


def area(surface: GraphSurface) -> float:
    return geometry(surface).integrate(1.0)


def willmore_integral(surface: GraphSurface) -> float:
    """∫ H² dμ"""
    geo = geometry(surface)
    return geo.integrate(geo.H**2)


def hawking_mass(area_value: float, h_sq: float) -> float:
    return math.sqrt(area_value / (16.0 * math.pi)) * (1.0 - h_sq / (16.0 * math.pi))


def inner_radius(surface: GraphSurface) -> float:
    """ρ(Σ) = min |x|: 网格节点与最靠近原点的方向 -ξ̂ 取较小者"""
    geo = geometry(surface)
    rho = float(np.min(np.linalg.norm(geo.position, axis=-1)))
    norm = float(np.linalg.norm(surface.xi))
    if norm > 0.0:
        direction = -surface.xi / norm
        r = surface.lam + float(evaluate(surface.u, direction[None, :])[0])
        rho = min(rho, float(np.linalg.norm(surface.center + r * direction)))
    return rho


def integrated_gauss_residual(surface: GraphSurface) -> float:
    """∫H² - 16π - 2∫|h̊|² - 2∫(2Ric(ν,ν) - R), 亏格零曲面上应为零"""
    geo = geometry(surface)
    return geo.integrate(geo.H**2 - 2.0 * geo.h0_sq - 2.0 * (2.0 * geo.ric_nn - geo.R)) - 16.0 * math.pi


def report(surface: GraphSurface) -> SurfaceReport:
    geo = geometry(surface)
    area_value = geo.integrate(1.0)
    h_sq = geo.integrate(geo.H**2)
    return SurfaceReport(
        lam=surface.lam,
        xi=[float(v) for v in surface.xi],
        area=area_value,
        area_radius=math.sqrt(area_value / FOUR_PI),
        inner_radius=inner_radius(surface),
        willmore_energy=0.25 * h_sq,
        hawking_mass=hawking_mass(area_value, h_sq),
        trfree_h_sq=geo.integrate(geo.h0_sq),
        gauss_residual=integrated_gauss_residual(surface),
        h_sq=h_sq,
    )


# ---------------------------------------------------------------------------
# 算子 W, L, Q
# ---------------------------------------------------------------------------


def _willmore_samples(geo: GeometryFields) -> np.ndarray:
    return geo.laplacian(geo.H) + (geo.h0_sq + geo.ric_nn) * geo.H


def willmore_operator(surface: GraphSurface) -> HarmonicField:
    """W = ΔH + (|h̊|² + Ric(ν,ν))H"""
    geo = geometry(surface)
    return analyze(geo.grid, _willmore_samples(geo))


def linearized_mean_curvature(surface: GraphSurface, v: FieldLike) -> HarmonicField:
    """
    L v = -Δv - (|h|² + Ric(ν,ν)) v

    L v 是以法向速度 v 变形时 H 的变化率 (外推时 H 减小)
    """
    geo = geometry(surface)
    vs = geo.samples(v)
    return analyze(geo.grid, -geo.laplacian(v) - geo.potential * vs)


def graph_variation(geo: GeometryFields, v: FieldLike, band: int) -> Tuple[HarmonicField, np.ndarray, np.ndarray]:
    """
    法向速度 v 对应的径向图变分 ψ = v / (w² ḡ(y, ν̄))

    Returns:
        (ψ, 实际法向速度, 切向分量 T)
    """
    y = geo.grid.points
    cos_angle = np.sum(y * geo.normal_bar, axis=-1)
    if np.any(cos_angle <= 0.0):
        raise DegenerateSurfaceError("曲面不再是径向图")
    psi = analyze(geo.grid, geo.samples(v) / (geo.w**2 * cos_angle), band)
    psi_s = synthesize(geo.grid, psi)
    speed = geo.w**2 * psi_s * cos_angle
    tangent = psi_s[..., None] * (y - cos_angle[..., None] * geo.normal_bar)
    return psi, speed, tangent


def _fd_willmore_derivative(surface: GraphSurface, psi: HarmonicField, step: float) -> np.ndarray:
    plus = geometry(surface.with_u(surface.u + step * psi))
    minus = geometry(surface.with_u(surface.u - step * psi))
    return (_willmore_samples(plus) - _willmore_samples(minus)) / (2.0 * step)


def _q_step(surface: GraphSurface, speed: np.ndarray) -> float:
    scale = float(np.max(np.abs(speed)))
    if scale == 0.0:
        return 0.0
    return Config.Q_STEP * surface.lam / scale


def linearized_willmore(surface: GraphSurface, v: FieldLike, method: str = "fd") -> HarmonicField:
    """
    Q v = -d/ds W(Σ_s) (法向速度 v), 默认为带 Richardson 外推的中心差分

    method="closed" 使用共形平坦背景下的完整解析线性化
    """
    if method == "closed":
        return linearized_willmore_closed(surface, v)
    if method != "fd":
        raise InvalidParameterError(f"未知的 Q 计算方式: {method}")

    geo = geometry(surface)
    psi, speed, tangent = graph_variation(geo, v, surface.u_band)
    step = _q_step(surface, speed)
    if step == 0.0:
        return HarmonicField.zeros(geo.grid.lmax)

    transport = geo.directional(tangent, _willmore_samples(geo))
    coarse = -_fd_willmore_derivative(surface, psi, step) + transport
    fine = -_fd_willmore_derivative(surface, psi, 0.5 * step) + transport
    scale = float(np.max(np.abs(fine)))
    gap = float(np.max(np.abs(fine - coarse)))
    if scale > 0.0 and gap > 1e-2 * scale + 1e-14 * surface.lam**-4:
        raise NumericalError("Q 的差分步长不满足 Richardson 一致性", estimate=gap / scale)
    return analyze(geo.grid, (4.0 * fine - coarse) / 3.0)


def linearized_willmore_closed(surface: GraphSurface, v: FieldLike) -> HarmonicField:
    """
    Q u = L(Lu) + ½H²Lu + 2H⟨h̊,∇²u⟩ + 2H Ric(ν,∇u) + 2h̊(∇H,∇u)
          + u[|∇H|² + 2Ric(ν,∇H) + HΔH + 2⟨h̊,∇²H⟩ + 2H²|h̊|² + 2H⟨Ric,h̊⟩ - H(D_νRic)(ν,ν)]
    """
    geo = geometry(surface, with_curvature_derivative=True)
    return analyze(geo.grid, _closed_q_samples(geo, v))


def _closed_q_samples(geo: GeometryFields, v: FieldLike) -> np.ndarray:
    H = geo.H
    dv = geo.derivatives(v)
    dH = geo.mean_curvature_derivatives
    vs = dv["f"]
    hess_v = geo.hessian(dv)
    hess_H = geo.hessian(dH)

    lap_v = np.einsum("...ab,...ab->...", geo.gamma_inv, hess_v)
    Lv = -lap_v - geo.potential * vs
    LLv = -geo.laplacian(Lv) - geo.potential * Lv

    up = geo.gamma_inv
    h0_up = np.einsum("...ac,...bd,...cd->...ab", up, up, geo.h0)
    grad_v = geo.raise_gradient(dv)
    grad_H = geo.raise_gradient(dH)
    ric_nt = geo.ricci_normal_tangent()

    first_order = (
        2.0 * H * np.einsum("...ab,...ab->...", h0_up, hess_v)
        + 2.0 * H * np.einsum("...a,...a->...", ric_nt, grad_v)
        + 2.0 * np.einsum("...ab,...a,...b->...", geo.h0, grad_H, grad_v)
    )
    zeroth = (
        geo.gradient_dot(dH, dH)
        + 2.0 * np.einsum("...a,...a->...", ric_nt, grad_H)
        + H * np.einsum("...ab,...ab->...", up, hess_H)
        + 2.0 * np.einsum("...ab,...ab->...", h0_up, hess_H)
        + 2.0 * H**2 * geo.h0_sq
        + 2.0 * H * np.einsum("...ab,...ab->...", h0_up, geo.ricci_tangent())
        - H * geo.ricci_normal_derivative()
    )
    return LLv + 0.5 * H**2 * Lv + first_order + zeroth * vs


# ---------------------------------------------------------------------------
# 变分公式
# ---------------------------------------------------------------------------


def area_variation(surface: GraphSurface, v: FieldLike, step: float) -> Dict[str, float]:
    """|Σ_s| - |Σ| 与一阶预测 s∫Hv dμ"""
    geo = geometry(surface)
    psi, speed, _ = graph_variation(geo, v, surface.u_band)
    moved = geometry(surface.with_u(surface.u + step * psi))
    return {
        "difference": moved.integrate(1.0) - geo.integrate(1.0),
        "predicted": step * geo.integrate(geo.H * speed),
    }


def willmore_first_variation(surface: GraphSurface, v: FieldLike, step: float = 1e-4) -> Dict[str, float]:
    """d/ds ∫H²dμ 的中心差分与 -2∫Wv dμ"""
    geo = geometry(surface)
    psi, speed, _ = graph_variation(geo, v, surface.u_band)
    step = step * surface.lam / max(float(np.max(np.abs(speed))), 1e-300)
    plus = willmore_integral(surface.with_u(surface.u + step * psi))
    minus = willmore_integral(surface.with_u(surface.u - step * psi))
    return {
        "difference": (plus - minus) / (2.0 * step),
        "predicted": -2.0 * geo.integrate(_willmore_samples(geo) * speed),
    }


def willmore_second_variation(surface: GraphSurface, v: FieldLike, step: float = 1e-3) -> Dict[str, float]:
    """
    沿直线径向图变分 u + sψ 的 d²/ds² ∫H²dμ

    预测值 2∫vQv - 2∫[HWv² + W(v̇ - T(v))], v̇ 为法向速度对 s 的导数
    """
    geo = geometry(surface)
    psi, speed, tangent = graph_variation(geo, v, surface.u_band)
    step = step * surface.lam / max(float(np.max(np.abs(speed))), 1e-300)

    def speed_at(s: float) -> np.ndarray:
        g = geometry(surface.with_u(surface.u + s * psi))
        cos_angle = np.sum(g.grid.points * g.normal_bar, axis=-1)
        return g.w**2 * synthesize(g.grid, psi) * cos_angle

    energies = [willmore_integral(surface.with_u(surface.u + s * psi)) for s in (-step, step)]
    difference = (energies[1] - 2.0 * geo.integrate(geo.H**2) + energies[0]) / step**2

    W = _willmore_samples(geo)
    q = synthesize(geo.grid, linearized_willmore(surface, speed))
    accel = (speed_at(step) - speed_at(-step)) / (2.0 * step)
    transport = geo.directional(tangent, speed)
    predicted = 2.0 * geo.integrate(speed * q) - 2.0 * geo.integrate(geo.H * W * speed**2 + W * (accel - transport))
    return {"difference": difference, "predicted": predicted}


def stability_margin(
    surface: GraphSurface,
    kappa: float,
    max_degree: Optional[int] = None,
    min_degree: int = 0,
    method: str = "closed",
) -> float:
    """
    min (∫u⊥Qu⊥ - κ∫u⊥Lu⊥) / ∫(u⊥)², u⊥ = u + sH 与 H 正交

    测试空间为 min_degree ≤ l ≤ max_degree 的全部球谐 (默认 max_degree = lmax - 6)
    """
    from scipy.linalg import eigh

    geo = geometry(surface, with_curvature_derivative=(method == "closed"))
    H = geo.H
    h_sq = geo.integrate(H**2)
    if h_sq < 1e-12 * surface.lam**-2 * geo.integrate(1.0):
        raise UnsupportedCaseError("极小曲面 (H ≡ 0) 上稳定性条件无定义")

    lmax = geo.grid.lmax
    top = lmax - 6 if max_degree is None else max_degree
    if top < min_degree:
        raise InvalidParameterError(f"测试空间为空: {min_degree}..{top}")

    def apply(values: FieldLike) -> Tuple[np.ndarray, np.ndarray]:
        if method == "closed":
            q = _closed_q_samples(geo, values)
        else:
            q = synthesize(geo.grid, linearized_willmore(surface, values, method="fd"))
        vs = geo.samples(values)
        lv = -geo.laplacian(values) - geo.potential * vs
        return q, lv

    qH, lH = apply(H)
    basis, images = [], []
    for l in range(min_degree, top + 1):
        for m in range(-l, l + 1):
            f = HarmonicField.harmonic(l, m, lmax)
            fs = synthesize(geo.grid, f)
            s = -geo.integrate(H * fs) / h_sq
            q, lv = apply(f)
            basis.append(fs + s * H)
            images.append(q + s * qH - kappa * (lv + s * lH))

    B = np.array([b.ravel() for b in basis])
    A = np.array([a.ravel() for a in images])
    weights = geo.dmu.ravel()
    stiffness = (B * weights) @ A.T
    stiffness = 0.5 * (stiffness + stiffness.T)
    mass = (B * weights) @ B.T

    evals, evecs = eigh(mass)
    keep = evals > 1e-10 * float(np.max(evals))
    reduce = evecs[:, keep] / np.sqrt(evals[keep])
    reduced = reduce.T @ stiffness @ reduce
    return float(eigh(reduced, eigvals_only=True)[0])


# ---------------------------------------------------------------------------
# 坐标球面的闭式表达
# ---------------------------------------------------------------------------


def coordinate_sphere_mean_curvature(fam: MetricFamily, center: np.ndarray, lam: float, points: np.ndarray) -> np.ndarray:
    """
    坐标球面 S_λ(center) 上的平均曲率 H = w^-2 (2/λ + 4 w^-1 ∂_ν̄ w)

    points 为单位方向 y, 球面上的点为 center + λy
    """
    y = np.asarray(points, dtype=float)
    w, dw, _, _ = conformal_jet(fam, np.asarray(center, dtype=float) + lam * y)
    return (2.0 / lam + 4.0 * np.sum(dw * y, axis=-1) / w) / w**2


def min_mean_curvature_scan(fam: MetricFamily, xi: np.ndarray, lam: float, lmax: Optional[int] = None) -> Dict[str, float]:
    """min φ²H_S 与预测值 2λ^-1 - 4ρ^-2"""
    xi = np.asarray(xi, dtype=float)
    grid = grid_for(Config.LMAX_VERIFY if lmax is None else lmax)
    directions = grid.points.reshape(-1, 3)
    norm = float(np.linalg.norm(xi))
    if norm > 0.0:
        directions = np.vstack([directions, -xi / norm])
    center = lam * xi
    x = center + lam * directions
    rho_all = np.linalg.norm(x, axis=-1)
    phi = 1.0 + _reference_scale(fam) / rho_all
    values = phi**2 * coordinate_sphere_mean_curvature(fam, center, lam, directions)
    rho = float(np.min(rho_all))
    return {
        "min": float(np.min(values)),
        "predicted": 2.0 / lam - 4.0 / rho**2,
        "inner_radius": rho,
    }


def _reference_scale(fam: MetricFamily) -> float:
    """φ = 1 + scale/|x| 中的 scale, Euclidean 背景取 0"""
    return 0.0 if fam.variant == EUCLIDEAN else reference_schwarzschild(fam).scale


def _on_center(xi: np.ndarray) -> bool:
    return float(np.linalg.norm(xi)) < 1.0


def willmore_energy_expansion(xi: np.ndarray, lam: float) -> float:
    """Schwarzschild (m = 2) 中 ∫_{S_{ξ,λ}} H² dμ 的闭式展开 (误差 O(λ^-3))"""
    a = float(np.linalg.norm(xi))
    if abs(a - 1.0) < 1e-6:
        raise InvalidParameterError("|ξ| 过于接近 1")
    if a < 1.0:
        if a < 1e-4:
            log_term = 6.0 + 2.0 * a**2 + 1.2 * a**4
        else:
            log_term = 3.0 / a * math.log((1.0 + a) / (1.0 - a))
        bracket = (10.0 - 6.0 * a * a) / (1.0 - a * a) ** 2 + log_term
        return 16.0 * math.pi - 64.0 * math.pi / lam + 8.0 * math.pi * bracket / lam**2
    bracket = (10.0 - 6.0 * a * a) / (a * a - 1.0) ** 2 + 3.0 / a * math.log((a + 1.0) / (a - 1.0))
    return 16.0 * math.pi + 8.0 * math.pi * bracket / lam**2


def willmore_operator_expansion(xi: np.ndarray, lam: float, grid: SphereGrid, terms: Optional[int] = None) -> np.ndarray:
    """
    坐标球面上 W 的 Legendre 级数主项

    |ξ| < 1: 4λ^-4 Σ (l-1)(l+1)(l+2)|ξ|^l P_l;  |ξ| > 1: -4λ^-4 Σ (l-1)l(l+2)|ξ|^{-l-1} P_l
    自变量为 -ḡ(ν̄, ξ)/|ξ|
    """
    xi = np.asarray(xi, dtype=float)
    a = float(np.linalg.norm(xi))
    y = grid.points
    if a == 0.0:
        return np.full(grid.shape, -8.0 / lam**4)
    terms = terms or 200
    s = -np.einsum("ijk,k->ij", y, xi / a)
    ls = np.arange(terms + 1, dtype=float)
    table = legendre_table(terms, s)
    if a < 1.0:
        coeff = 4.0 * (ls - 1) * (ls + 1) * (ls + 2) * a**ls
    else:
        coeff = -4.0 * (ls - 1) * ls * (ls + 2) * a ** (-ls - 1)
    return np.tensordot(coeff, table, axes=(0, 0)) / lam**4


def perturbation_mean_curvature_prediction(surface: GraphSurface) -> np.ndarray:
    """
    坐标球面上 H - H_S 关于 σ = (w⁴ - φ⁴)δ 的一阶预测

    -λ^-1 φ^-6 s + φ^-6 ∂_ν̄ s - 6 φ^-7 s ∂_ν̄ φ,  s = w⁴ - φ⁴
    """
    geo = geometry(surface)
    ref = reference_schwarzschild(surface.family)
    phi, dphi, _, _ = conformal_jet(ref, geo.position)
    n = geo.normal_bar
    s = geo.w**4 - phi**4
    ds = 4.0 * (geo.w**3)[..., None] * geo.dw - 4.0 * (phi**3)[..., None] * dphi
    dn_s = np.sum(ds * n, axis=-1)
    dn_phi = np.sum(dphi * n, axis=-1)
    return -s * phi**-6 / surface.lam + phi**-6 * dn_s - 6.0 * phi**-7 * s * dn_phi


# ---------------------------------------------------------------------------
# Pohozaev 恒等式
# ---------------------------------------------------------------------------


def _pohozaev_density(fam: MetricFamily, x: np.ndarray, center: np.ndarray, lam: float) -> np.ndarray:
    """div(E(Z)) = ½⟨E, 𝒟Z⟩ - (1/6)(div Z) R, 乘以体积元 w⁶"""
    w, dw, d2w, d3w = conformal_jet(fam, x)
    curv = curvature_from_jet(w, dw, d2w, d3w)
    eye = np.eye(3)
    rho = np.linalg.norm(x, axis=-1)
    scale = reference_schwarzschild(fam).scale
    phi = 1.0 + scale / rho
    dphi = -scale * x / rho[..., None] ** 3
    rel = x - center
    dZ = (phi**-2)[..., None, None] * eye - 2.0 * (phi**-3)[..., None, None] * np.einsum("...i,...j->...ij", dphi, rel)
    dZ = dZ / lam
    div_bar = np.trace(dZ, axis1=-2, axis2=-1)
    killing = dZ + np.swapaxes(dZ, -1, -2) - (2.0 / 3.0) * div_bar[..., None, None] * eye
    inner = np.einsum("...ij,...ij->...", curv.ricci, killing) / w**4
    Z = (phi**-2)[..., None] * rel / lam
    div = div_bar + 6.0 * np.sum(Z * dw, axis=-1) / w
    return (0.5 * inner - div * curv.scalar / 6.0) * w**6


def _pohozaev_flux(fam: MetricFamily, grid: SphereGrid, center: np.ndarray, lam: float, radius: float) -> float:
    """∫_{S_radius(center)} E(Z, ν) dμ"""
    y = grid.points
    x = center + radius * y
    w = conformal_jet(fam, x)[0]
    curv = curvature_jet(fam, x)
    rho = np.linalg.norm(x, axis=-1)
    phi = 1.0 + reference_schwarzschild(fam).scale / rho
    Z = (phi**-2)[..., None] * (x - center) / lam
    flux = np.einsum("...ij,...i,...j->...", curv.einstein, Z, y) * w**2
    return radius**2 * grid.integrate(flux)


def _shell_integral(fam, grid, center, lam, left, right, nodes) -> float:
    total = 0.0
    t, wt = gauss_legendre(nodes, left, right)
    for ti, wi in zip(t, wt):
        x = center + ti * grid.points
        total += wi * ti**2 * grid.integrate(_pohozaev_density(fam, x, center, lam))
    return total


def pohozaev_residual(
    fam: MetricFamily,
    xi: np.ndarray,
    lam: float,
    lmax: Optional[int] = None,
    radial_nodes: Optional[int] = None,
    far_factor: float = 8.0,
    panels: int = 8,
) -> Tuple[float, float]:
    """
    Pohozaev 恒等式两端, Z = λ^-1 φ^-2 (x - λξ)

    外离 (|ξ| > 1): ∫_S E(Z,ν) = ∫_{B_λ(λξ)} div E(Z)
    中心 (|ξ| < 1): ∫_S E(Z,ν) = ∫_{S_far} E(Z,ν) - ∫_{B_far \\ B_λ} div E(Z)

    Returns:
        (lhs, rhs)
    """
    xi = np.asarray(xi, dtype=float)
    grid = grid_for(Config.LMAX_VERIFY if lmax is None else lmax)
    nodes = radial_nodes or Config.RADIAL_NODES
    center = lam * xi
    lhs = _pohozaev_flux(fam, grid, center, lam, lam)

    if _on_center(xi):
        far = far_factor * lam
        edges = np.geomspace(lam, far, panels + 1)
        annulus = sum(_shell_integral(fam, grid, center, lam, a, b, nodes) for a, b in zip(edges[:-1], edges[1:]))
        rhs = _pohozaev_flux(fam, grid, center, lam, far) - annulus
    else:
        edges = np.linspace(0.0, lam, panels + 1)
        rhs = sum(_shell_integral(fam, grid, center, lam, a, b, nodes) for a, b in zip(edges[:-1], edges[1:]))
    return float(lhs), float(rhs)
