#!/usr/bin/env python3
"""
约化泛函模块
F_λ, G_λ(ξ) = F_λ(Σ_{ξ,λ}) 的直接计算与闭式展开, 临界点搜索, 叶状结构与 CMC 约化面积
"""

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

try:
    from config import Config
except ImportError:
    from scripts.config import Config

from scripts.ambient_metric import (
    MetricFamily,
    PulseSpec,
    conformal_jet,
    integrate_R,
    integrate_R_radial_derivative,
    laplacian_R,
    scalar_curvature,
)
from scripts.harmonics import grid_for, synthesize
from scripts.reduction import (
    FAR_OUTLYING,
    ON_CENTER,
    OUTLYING,
    LSState,
    SolverConfig,
    classify_regime,
    seed_scale,
    solve,
)
from scripts.surface_geometry import (
    GraphSurface,
    coordinate_sphere_mean_curvature,
    geometry,
    hawking_mass,
    min_mean_curvature_scan,
    report,
)
from scripts.utils import (
    ConvergenceError,
    DomainError,
    InvalidParameterError,
    NumericalError,
    UnsupportedCaseError,
    gauss_legendre,
    run_jobs,
)

DIRECT = "direct-LS"
EXPANSION = "closed-form-expansion"
FAR_EXPANSION = "far-outlying-expansion"

EVALUATED = "evaluated"
CONVERGED = "converged"
BOUNDARY_ESCAPE = "boundary-escape"
DEGENERATE_FLAT = "degenerate-flat"
STALLED = "stalled"

LEAF_OK = "ok"
LEAF_VIOLATION = "foliation-violation"

G1_HESSIAN_AT_ORIGIN = 256.0 * math.pi

FOLIATION_CSV_HEADER = [
    "lambda",
    "xi1",
    "xi2",
    "xi3",
    "kappa",
    "hawking_mass",
    "hessian_min_eig",
    "transversality_margin",
]


@dataclass
class ReducedEval:
    """G_λ(ξ) 的一次求值"""

    xi: List[float]
    lam: float
    regime: str
    value: float
    method: str
    gradient: Optional[List[float]] = None
    hessian: Optional[List[List[float]]] = None
    curvature_term: Optional[float] = None
    g1_term: Optional[float] = None
    comparison: Optional[float] = None
    status: str = EVALUATED
    steps: int = 0
    state: Optional[LSState] = field(default=None, repr=False)

    @property
    def hessian_eigenvalues(self) -> Optional[List[float]]:
        if self.hessian is None:
            return None
        return [float(v) for v in np.linalg.eigvalsh(np.asarray(self.hessian))]

    @property
    def gradient_norm(self) -> Optional[float]:
        return None if self.gradient is None else float(np.linalg.norm(self.gradient))

    def to_dict(self) -> Dict:
        data = {
            "xi": list(self.xi),
            "lambda": self.lam,
            "regime": self.regime,
            "value": self.value,
            "method": self.method,
            "status": self.status,
        }
        for key in ("gradient", "hessian", "curvature_term", "g1_term", "comparison"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        if self.gradient is not None:
            data["gradient_norm"] = self.gradient_norm
        if self.hessian is not None:
            data["hessian_eigenvalues"] = self.hessian_eigenvalues
        if self.steps:
            data["steps"] = self.steps
        if self.state is not None:
            data["kappa"] = self.state.kappa
        return data


@dataclass
class FoliationLeaf:
    lam: float
    xi: List[float]
    state: LSState = field(repr=False)
    kappa: float
    hawking_mass: float
    margin: float
    hessian_min_eig: float
    xi_prime: List[float] = field(default_factory=list)
    status: str = LEAF_OK

    def to_dict(self) -> Dict:
        return {
            "lambda": self.lam,
            "xi": list(self.xi),
            "kappa": self.kappa,
            "hawking_mass": self.hawking_mass,
            "transversality_margin": self.margin,
            "hessian_min_eig": self.hessian_min_eig,
            "xi_prime": list(self.xi_prime),
            "status": self.status,
        }

    def csv_row(self) -> List[float]:
        return [self.lam, *self.xi, self.kappa, self.hawking_mass, self.hessian_min_eig, self.margin]


# ---------------------------------------------------------------------------
# F_λ 与 G_λ 的直接计算
# ---------------------------------------------------------------------------


def willmore_deficit(surface: GraphSurface) -> float:
    """
    ∫H² dμ - 16π, 用 Gauss 方程写成 2∫|h̊|² + 2∫(2Ric(ν,ν) - R)

    两种形式在亏格零曲面上相等, 后者不含 16π 的抵消
    """
    geo = geometry(surface)
    return geo.integrate(2.0 * geo.h0_sq + 2.0 * (2.0 * geo.ric_nn - geo.R))


def F_lambda(surface: GraphSurface, regime: Optional[str] = None) -> float:
    """
    中心: λ²(∫H² - 16π + 32π m λ^-1); 外离: λ²(∫H² - 16π)

    m 为参考 Schwarzschild 质量 (Euclidean 背景为零)
    """
    lam = surface.lam
    regime = regime or classify_regime(surface.xi)
    deficit = willmore_deficit(surface)
    if regime == ON_CENTER:
        mass = 2.0 * seed_scale(surface.family)
        deficit += 32.0 * math.pi * mass / lam
    return lam**2 * deficit


def _value_at(xi, lam, family, config, seed=None, kappa0=0.0) -> Tuple[float, LSState]:
    state = solve(xi, lam, family, config, seed=seed, kappa0=kappa0)
    return F_lambda(state.surface, state.regime), state


def _unit(i: int) -> np.ndarray:
    e = np.zeros(3)
    e[i] = 1.0
    return e


def _gradient_stencil(xi: np.ndarray, h: float) -> List[np.ndarray]:
    points = []
    for i in range(3):
        points += [xi + h * _unit(i), xi - h * _unit(i)]
    return points


def _hessian_stencil(xi: np.ndarray, h: float) -> List[np.ndarray]:
    points = []
    for i in range(3):
        for j in range(i + 1, 3):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                points.append(xi + si * h * _unit(i) + sj * h * _unit(j))
    return points


def _difference_derivatives(center: float, values: List[float], h: float, with_hessian: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    grad = np.array([(values[2 * i] - values[2 * i + 1]) / (2.0 * h) for i in range(3)])
    if not with_hessian:
        return grad, None
    hess = np.zeros((3, 3))
    for i in range(3):
        hess[i, i] = (values[2 * i] + values[2 * i + 1] - 2.0 * center) / h**2
    k = 6
    for i in range(3):
        for j in range(i + 1, 3):
            pp, pm, mp, mm = values[k : k + 4]
            hess[i, j] = hess[j, i] = (pp - pm - mp + mm) / (4.0 * h**2)
            k += 4
    return grad, hess


def G_direct(
    xi: Sequence[float],
    lam: float,
    family: MetricFamily,
    config: Optional[SolverConfig] = None,
    derivatives: bool = False,
    hessian: bool = True,
    step: Optional[float] = None,
    workers: Optional[int] = None,
    seed_state: Optional[LSState] = None,
) -> ReducedEval:
    """
    G_λ(ξ) = F_λ(Σ_{ξ,λ}); 梯度/Hessian 为中心差分 (每个模板点独立求解, 共 19 次)
    """
    cfg = config or SolverConfig()
    xi = np.asarray(xi, dtype=float).reshape(3)
    h = Config.XI_STEP if step is None else step
    workers = Config.WORKERS if workers is None else workers
    seed = seed_state.u if seed_state is not None else None
    kappa0 = seed_state.kappa if seed_state is not None else 0.0

    value, state = _value_at(xi, lam, family, cfg, seed, kappa0)
    result = ReducedEval(xi=[float(v) for v in xi], lam=lam, regime=state.regime, value=value, method=DIRECT, state=state)
    if not derivatives:
        return result

    points = _gradient_stencil(xi, h) + (_hessian_stencil(xi, h) if hessian else [])
    jobs = [(p, lam, family, cfg, state.u, state.kappa) for p in points]
    values = [v for v, _ in run_jobs(_value_at, jobs, workers)]
    grad, hess = _difference_derivatives(value, values, h, hessian)
    result.gradient = [float(v) for v in grad]
    if hess is not None:
        result.hessian = hess.tolist()
    return result


# ---------------------------------------------------------------------------
# 闭式展开
# ---------------------------------------------------------------------------


def G1(xi: Sequence[float]) -> float:
    """64π + 32π/(1-|ξ|²) - 48π|ξ|^-1 log((1+|ξ|)/(1-|ξ|)) - 128π log(1-|ξ|²)"""
    a = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    if a >= 1.0:
        raise DomainError(f"G1 只对 |ξ| < 1 定义: {a}")
    if a < 1e-2:
        a2 = a * a
        return math.pi * a2 * (128.0 + a2 * (384.0 / 5.0 + a2 * (1280.0 / 21.0 + a2 * 160.0 / 3.0)))
    return (
        64.0 * math.pi
        + 32.0 * math.pi / (1.0 - a * a)
        - 48.0 * math.pi / a * math.log((1.0 + a) / (1.0 - a))
        - 128.0 * math.pi * math.log(1.0 - a * a)
    )


def G1_radial_derivative(a: float) -> float:
    """d G1 / d|ξ|"""
    if not 0.0 <= a < 1.0:
        raise DomainError(f"G1 只对 |ξ| < 1 定义: {a}")
    if a < 1e-2:
        a2 = a * a
        return math.pi * a * (256.0 + a2 * (1536.0 / 5.0 + a2 * (2560.0 / 7.0 + a2 * 1280.0 / 3.0)))
    q = 1.0 - a * a
    return (
        64.0 * math.pi * a / q**2
        + 48.0 * math.pi / a**2 * math.log((1.0 + a) / (1.0 - a))
        - 96.0 * math.pi / (a * q)
        + 256.0 * math.pi * a / q
    )


def _outlying_series_coeff(n: int) -> float:
    """G1_outlying 关于 |ξ|^-2 的展开系数 (n ≥ 1)"""
    return math.pi * (-32.0 - 96.0 / (2 * n - 1) + 128.0 / n)


def G1_outlying(xi: Sequence[float]) -> float:
    """-32π/(|ξ|²-1) - 48π|ξ|^-1 log((|ξ|+1)/(|ξ|-1)) - 128π log(1-|ξ|^-2)"""
    a = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    if a <= 1.0:
        raise DomainError(f"外离闭式只对 |ξ| > 1 定义: {a}")
    if a >= 2.0:
        b2 = a**-2
        return float(sum(_outlying_series_coeff(n) * b2**n for n in range(3, 80)))
    return (
        -32.0 * math.pi / (a * a - 1.0)
        - 48.0 * math.pi / a * math.log((a + 1.0) / (a - 1.0))
        - 128.0 * math.pi * math.log(1.0 - a**-2)
    )


def G1_outlying_radial_derivative(a: float) -> float:
    if a <= 1.0:
        raise DomainError(f"外离闭式只对 |ξ| > 1 定义: {a}")
    if a >= 2.0:
        b = 1.0 / a
        return float(sum(-2.0 * n * _outlying_series_coeff(n) * b ** (2 * n + 1) for n in range(3, 80)))
    q = a * a - 1.0
    return 64.0 * math.pi * a / q**2 + 48.0 * math.pi / a**2 * math.log((a + 1.0) / (a - 1.0)) - 160.0 * math.pi / (a * q)


def _closed_term(a: float) -> float:
    return G1(a * _unit(0)) if a < 1.0 else G1_outlying(a * _unit(0))


def G_expansion(xi: Sequence[float], lam: float, family: MetricFamily, delta: Optional[float] = None) -> ReducedEval:
    """
    中心: G1(ξ) + 2λ ∫_{ℝ³∖B_λ(λξ)} R dv̄
    外离: G1_outlying(ξ) - 2λ ∫_{B_λ(λξ)} R dv̄
    Schwarzschild 部分按 (m/2)² 缩放
    """
    xi = np.asarray(xi, dtype=float).reshape(3)
    regime = classify_regime(xi, delta)
    a = float(np.linalg.norm(xi))
    closed = seed_scale(family) ** 2 * _closed_term(a)
    if regime == ON_CENTER:
        curvature = 2.0 * lam * integrate_R(family, lam * xi, lam, exterior=True).value
    else:
        curvature = -2.0 * lam * integrate_R(family, lam * xi, lam).value
    return ReducedEval(
        xi=[float(v) for v in xi],
        lam=lam,
        regime=regime,
        value=closed + curvature,
        method=EXPANSION,
        curvature_term=curvature,
        g1_term=closed,
    )


def G_far_outlying(xi: Sequence[float], lam: float, family: MetricFamily) -> ReducedEval:
    """-(128π/15)|ξ|^-6 - 2λ ∫_{B_λ(λξ)} R dv̄, comparison 为一般外离展开的值"""
    xi = np.asarray(xi, dtype=float).reshape(3)
    a = float(np.linalg.norm(xi))
    if a <= 2.0:
        raise InvalidParameterError(f"远外离展开要求 |ξ| > 2: {a}")
    closed = -seed_scale(family) ** 2 * 128.0 * math.pi / 15.0 * a**-6
    curvature = -2.0 * lam * integrate_R(family, lam * xi, lam).value
    generic = G_expansion(xi, lam, family)
    return ReducedEval(
        xi=[float(v) for v in xi],
        lam=lam,
        regime=FAR_OUTLYING,
        value=closed + curvature,
        method=FAR_EXPANSION,
        curvature_term=curvature,
        g1_term=closed,
        comparison=generic.value,
    )


def pulse_radial_predictor(family: MetricFamily, xi: Sequence[float], lam: float) -> float:
    """-2λ² ∫_{S_{ξ,λ}} ḡ(ξ, ν̄) R dμ̄: 曲率项对 ξ 的径向导数 ξ·∇"""
    xi = np.asarray(xi, dtype=float).reshape(3)
    a = float(np.linalg.norm(xi))
    return -2.0 * lam**2 * a * integrate_R_radial_derivative(family, lam * xi, lam)


def radial_derivative(
    lam: float,
    family: MetricFamily,
    xi: Sequence[float],
    method: str = EXPANSION,
    config: Optional[SolverConfig] = None,
    step: Optional[float] = None,
) -> float:
    """ξ·∇G_λ / |ξ|: 闭式展开 (解析) 或直接求解 (中心差分)"""
    xi = np.asarray(xi, dtype=float).reshape(3)
    a = float(np.linalg.norm(xi))
    if a == 0.0:
        raise InvalidParameterError("原点处径向导数无定义")
    if method == DIRECT:
        h = Config.XI_STEP if step is None else step
        direction = xi / a
        plus = G_direct(xi + h * direction, lam, family, config).value
        minus = G_direct(xi - h * direction, lam, family, config).value
        return (plus - minus) / (2.0 * h)
    if method != EXPANSION:
        raise InvalidParameterError(f"未知方法: {method}")
    regime = classify_regime(xi, None if config is None else config.delta)
    closed = G1_radial_derivative(a) if regime == ON_CENTER else G1_outlying_radial_derivative(a)
    return seed_scale(family) ** 2 * closed + pulse_radial_predictor(family, xi, lam) / a


def far_outlying_radial_lower_bound(xi: Sequence[float]) -> float:
    """Schwarzschild 远外离区域 ξ·∇G 的主项 (256π/5)|ξ|^-6"""
    a = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    return 256.0 * math.pi / 5.0 * a**-6


def g4_profile_prediction(t: float, j: int, spec: Optional[PulseSpec] = None) -> float:
    """G_{λ_j}(t 10^j a) 的主项 -(128π/15)t^-6 10^-6j - (64π/3) B χ(t) 10^-6j"""
    spec = spec or PulseSpec.g4()
    chi = float(spec.chi(np.array([t]))[0])
    scale = 10.0 ** (-6 * j)
    return -128.0 * math.pi / 15.0 * t**-6 * scale - 64.0 * math.pi / 3.0 * spec.amplitude * chi * scale


def g4_critical_t(j: int, spec: Optional[PulseSpec] = None, t_range: Tuple[float, float] = (3.0, 7.0), samples: int = 401) -> List[float]:
    """g4_profile_prediction 关于 t 的导数变号位置 (二分细化)"""
    spec = spec or PulseSpec.g4()

    def slope(t: float) -> float:
        h = 1e-5
        return (g4_profile_prediction(t + h, j, spec) - g4_profile_prediction(t - h, j, spec)) / (2.0 * h)

    ts = np.linspace(t_range[0], t_range[1], samples)
    slopes = [slope(t) for t in ts]
    roots = []
    for k in range(len(ts) - 1):
        if slopes[k] == 0.0 or slopes[k] * slopes[k + 1] < 0.0:
            lo, hi = ts[k], ts[k + 1]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if slope(lo) * slope(mid) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            roots.append(0.5 * (lo + hi))
    return roots


# ---------------------------------------------------------------------------
# 临界点搜索
# ---------------------------------------------------------------------------


def dogleg_step(g: np.ndarray, B: np.ndarray, radius: float) -> np.ndarray:
    """二次模型 g·p + ½pᵀBp 在 ‖p‖ ≤ radius 上的 dogleg 步"""
    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        return np.zeros_like(g)
    curvature = float(g @ B @ g)
    try:
        np.linalg.cholesky(B)
        positive = True
    except np.linalg.LinAlgError:
        positive = False
    if not positive or curvature <= 0.0:
        return -radius * g / g_norm

    p_newton = -np.linalg.solve(B, g)
    if np.linalg.norm(p_newton) <= radius:
        return p_newton
    p_cauchy = -(g_norm**2 / curvature) * g
    if np.linalg.norm(p_cauchy) >= radius:
        return -radius * g / g_norm
    d = p_newton - p_cauchy
    a = float(d @ d)
    b = 2.0 * float(p_cauchy @ d)
    c = float(p_cauchy @ p_cauchy) - radius**2
    s = (-b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    return p_cauchy + s * d


def eigenvector_following_step(g: np.ndarray, B: np.ndarray, radius: float, index: int) -> np.ndarray:
    """沿最低的 index 个本征方向上升, 其余方向下降, 截断到信赖域"""
    evals, evecs = np.linalg.eigh(B)
    gc = evecs.T @ g
    floor = 1e-8 * max(1.0, float(np.max(np.abs(evals))))
    scale = np.maximum(np.abs(evals), floor)
    pc = -gc / scale
    pc[:index] = gc[:index] / scale[:index]
    p = evecs @ pc
    norm = float(np.linalg.norm(p))
    return p if norm <= radius else p * (radius / norm)


def _stationary(value: float, g: np.ndarray, B: np.ndarray, grad_tol: float, xi_tol: float) -> bool:
    scale = max(1.0, abs(value), float(np.linalg.norm(B, 2)))
    if np.linalg.norm(g) <= grad_tol * scale:
        return True
    try:
        newton = np.linalg.solve(B, g)
    except np.linalg.LinAlgError:
        return False
    return bool(np.linalg.norm(newton) <= xi_tol)


class CriticalPointFinder:
    """
    G_λ 的临界点搜索

    mode: minimize (信赖域 dogleg) / saddle / maximize (本征向量跟踪)
    """

    def __init__(
        self,
        family: MetricFamily,
        config: Optional[SolverConfig] = None,
        verbose: bool = False,
        workers: Optional[int] = None,
    ):
        self.family = family
        self.config = config or SolverConfig()
        self.verbose = verbose
        self.workers = workers

    def log(self, message: str):
        if self.verbose:
            print(message)

    def _admissible(self, xi: np.ndarray, on_center: bool, xi_max: float) -> bool:
        try:
            regime = classify_regime(xi, self.config.delta)
        except InvalidParameterError:
            return False
        return (regime == ON_CENTER) == on_center and float(np.linalg.norm(xi)) <= xi_max

    def _evaluate(self, xi: np.ndarray, lam: float, seed: Optional[LSState], derivatives: bool = True) -> ReducedEval:
        return G_direct(xi, lam, self.family, self.config, derivatives=derivatives, workers=self.workers, seed_state=seed)

    def find(
        self,
        lam: float,
        init: Sequence[float],
        mode: str = "minimize",
        index: int = 1,
        max_steps: int = 30,
        grad_tol: float = 1e-7,
        xi_tol: float = 1e-5,
        step_tol: float = 1e-6,
        trust_radius: float = 0.1,
        xi_max: Optional[float] = None,
        flat_tol: float = 1e-9,
    ) -> ReducedEval:
        """
        收敛: |∇G| ≤ grad_tol·scale (scale = max(1, |G|, ‖D̄²G‖)), 或二次模型的临界点距当前 ξ 不超过 xi_tol

        信赖域半径缩到 step_tol 以下仍未收敛时返回 STALLED, 保留当前梯度供诊断
        """
        if mode not in ("minimize", "saddle", "maximize"):
            raise InvalidParameterError(f"未知搜索模式: {mode}")
        if mode == "maximize":
            index = 3
        xi = np.asarray(init, dtype=float).reshape(3)
        xi_max = Config.xi_max() if xi_max is None else xi_max
        on_center = classify_regime(xi, self.config.delta) == ON_CENTER
        if not self._admissible(xi, on_center, xi_max):
            raise InvalidParameterError(f"初始点不在可行域内: {xi.tolist()}")

        current = self._evaluate(xi, lam, None)
        g = np.asarray(current.gradient)
        B = np.asarray(current.hessian)
        scale = max(1.0, abs(current.value))
        if np.max(np.abs(g)) <= flat_tol * scale and np.max(np.abs(B)) <= flat_tol * scale:
            current.status = DEGENERATE_FLAT
            self.log(f"⚠️ λ={lam:g}: G 在 ξ={xi.tolist()} 附近退化平坦")
            return current

        radius = trust_radius
        trace = [float(np.linalg.norm(g))]
        self.log(f"🔍 λ={lam:g} 临界点搜索 ({mode}) 起点 ξ={np.round(xi, 6).tolist()} |∇G|={trace[0]:.3e}")

        converged = _stationary(current.value, g, B, grad_tol, xi_tol)
        step_count = 0
        while not converged:
            if step_count >= max_steps:
                raise ConvergenceError(f"λ={lam:g}: {max_steps} 步内未找到临界点", trace=trace)
            step_count += 1
            if mode == "minimize":
                p = dogleg_step(g, B, radius)
            else:
                p = eigenvector_following_step(g, B, radius, index)

            trial_xi = xi + p
            if not self._admissible(trial_xi, on_center, xi_max):
                if np.linalg.norm(p) < radius * (1.0 - 1e-12) or radius < step_tol:
                    current.status = BOUNDARY_ESCAPE
                    current.steps = step_count
                    self.log(f"🚧 λ={lam:g}: 搜索越过可行域边界 (ξ={np.round(trial_xi, 6).tolist()})")
                    return current
                radius *= 0.5
                continue

            if mode == "minimize":
                predicted = float(g @ p + 0.5 * p @ B @ p)
                trial = self._evaluate(trial_xi, lam, current.state, derivatives=False)
                ratio = (trial.value - current.value) / predicted if predicted != 0.0 else 0.0
                accepted = ratio > 0.1
                if ratio < 0.25:
                    radius *= 0.25
                elif ratio > 0.75 and np.linalg.norm(p) >= 0.99 * radius:
                    radius = min(2.0 * radius, 1.0)
                if accepted:
                    trial = self._evaluate(trial_xi, lam, current.state)
            else:
                trial = self._evaluate(trial_xi, lam, current.state)
                accepted = np.linalg.norm(trial.gradient) < np.linalg.norm(g)
                radius = min(2.0 * radius, 1.0) if accepted else 0.5 * radius

            if accepted:
                xi, current = trial_xi, trial
                g = np.asarray(current.gradient)
                B = np.asarray(current.hessian)
                trace.append(float(np.linalg.norm(g)))
                self.log(f"   步 {step_count}: ξ={np.round(xi, 6).tolist()} G={current.value:.6e} |∇G|={trace[-1]:.3e}")
                converged = _stationary(current.value, g, B, grad_tol, xi_tol)
            if not converged and radius < step_tol:
                current.status = STALLED
                current.steps = step_count
                self.log(f"⚠️ λ={lam:g}: 信赖域收缩到 {radius:.1e} 仍未收敛, |∇G|={trace[-1]:.3e}")
                return current

        current.status = CONVERGED
        current.steps = len(trace) - 1
        self.log(f"✅ λ={lam:g}: ξ*={np.round(xi, 8).tolist()} Hessian 本征值={np.round(current.hessian_eigenvalues, 6).tolist()}")
        return current


def find_critical_point(
    lam: float,
    family: MetricFamily,
    init: Sequence[float],
    config: Optional[SolverConfig] = None,
    mode: str = "minimize",
    verbose: bool = False,
    **kwargs,
) -> ReducedEval:
    return CriticalPointFinder(family, config, verbose=verbose).find(lam, init, mode=mode, **kwargs)


# ---------------------------------------------------------------------------
# 叶状结构
# ---------------------------------------------------------------------------


def _gradient_at(xi, lam, family, config, seed: LSState, h: float, workers: int) -> np.ndarray:
    jobs = [(p, lam, family, config, seed.u, seed.kappa) for p in _gradient_stencil(xi, h)]
    values = [v for v, _ in run_jobs(_value_at, jobs, workers)]
    return _difference_derivatives(0.0, values, h, False)[0]


def transversality_margin(
    leaf: ReducedEval,
    family: MetricFamily,
    config: Optional[SolverConfig] = None,
    rel_step: float = 1e-3,
    workers: Optional[int] = None,
) -> Tuple[float, np.ndarray]:
    """
    min_y ḡ(Ψ', y) = 1 + ḡ(ξ, y) + λ ḡ(ξ', y) + u'(y)

    ξ' = -(D̄²G)^-1 ∂_λ D̄G (隐函数定理), u' 为沿 (ξ(λ), λ) 的全导数
    """
    cfg = config or SolverConfig()
    workers = Config.WORKERS if workers is None else workers
    h = Config.XI_STEP
    xi = np.asarray(leaf.xi, dtype=float)
    lam = leaf.lam
    dl = rel_step * lam
    seed = leaf.state

    g_plus = _gradient_at(xi, lam + dl, family, cfg, seed, h, workers)
    g_minus = _gradient_at(xi, lam - dl, family, cfg, seed, h, workers)
    xi_prime = -np.linalg.solve(np.asarray(leaf.hessian), (g_plus - g_minus) / (2.0 * dl))

    plus = solve(xi + dl * xi_prime, lam + dl, family, cfg, seed=seed.u, kappa0=seed.kappa)
    minus = solve(xi - dl * xi_prime, lam - dl, family, cfg, seed=seed.u, kappa0=seed.kappa)
    du = (plus.u - minus.u) * (1.0 / (2.0 * dl))
    grid = grid_for(max(du.lmax, 2))
    y = grid.points
    speed = 1.0 + y @ xi + lam * (y @ xi_prime) + synthesize(grid, du)
    return float(np.min(speed)), xi_prime


class FoliationBuilder:
    """λ 方向的延拓: 热启动的 ξ, 几何步长 continuation_factor, 失败时步长减半 (几何意义)"""

    def __init__(
        self,
        family: MetricFamily,
        config: Optional[SolverConfig] = None,
        verbose: bool = False,
        factor: Optional[float] = None,
        max_bisections: int = 4,
    ):
        self.family = family
        self.config = config or SolverConfig()
        self.verbose = verbose
        self.factor = Config.CONTINUATION_FACTOR if factor is None else factor
        self.max_bisections = max_bisections
        self.finder = CriticalPointFinder(family, self.config, verbose=False)
        if self.factor <= 1.0:
            raise InvalidParameterError(f"延拓因子必须大于 1: {self.factor}")

    def log(self, message: str):
        if self.verbose:
            print(message)

    def _critical(self, lam: float, xi: np.ndarray) -> ReducedEval:
        found = self.finder.find(lam, xi)
        if found.status == DEGENERATE_FLAT:
            raise UnsupportedCaseError(f"λ={lam:g}: G 退化平坦, 无法构造叶状结构")
        if found.status != CONVERGED:
            raise ConvergenceError(f"λ={lam:g}: 临界点搜索状态 {found.status}")
        return found

    def _advance(self, lam: float, target: float, xi: np.ndarray) -> Tuple[float, ReducedEval]:
        step = min(target, lam * self.factor)
        for _ in range(self.max_bisections + 1):
            try:
                return step, self._critical(step, xi)
            except (NumericalError, InvalidParameterError) as exc:
                self.log(f"   ↩️ λ={step:g} 失败 ({exc}), 缩小步长")
                step = math.sqrt(lam * step)
        raise ConvergenceError(f"λ 延拓在 {lam:g} 处停滞")

    def _leaf(self, found: ReducedEval) -> FoliationLeaf:
        margin, xi_prime = transversality_margin(found, self.family, self.config)
        state = found.state
        leaf = FoliationLeaf(
            lam=found.lam,
            xi=list(found.xi),
            state=state,
            kappa=state.kappa,
            hawking_mass=report(state.surface).hawking_mass,
            margin=margin,
            hessian_min_eig=min(found.hessian_eigenvalues),
            xi_prime=[float(v) for v in xi_prime],
            status=LEAF_OK if margin > 0.0 else LEAF_VIOLATION,
        )
        self.log(
            f"🍃 λ={leaf.lam:g} |ξ|={np.linalg.norm(leaf.xi):.3e} κλ³={leaf.kappa * leaf.lam**3:.4f} "
            f"m_H={leaf.hawking_mass:.6f} margin={leaf.margin:.4f}"
        )
        return leaf

    def build(self, lams: Sequence[float], init: Optional[Sequence[float]] = None) -> List[FoliationLeaf]:
        lams = sorted(float(v) for v in lams)
        if not lams:
            return []
        xi = np.zeros(3) if init is None else np.asarray(init, dtype=float).reshape(3)
        self.log(f"🌿 构造叶状结构: λ ∈ {lams}")
        found = self._critical(lams[0], xi)
        lam = lams[0]
        leaves = [self._leaf(found)]
        for target in lams[1:]:
            xi = np.asarray(found.xi)
            while lam < target:
                lam, found = self._advance(lam, target, xi)
                xi = np.asarray(found.xi)
            leaves.append(self._leaf(found))
        return leaves


def build_foliation(
    lams: Sequence[float],
    family: MetricFamily,
    config: Optional[SolverConfig] = None,
    init: Optional[Sequence[float]] = None,
    verbose: bool = False,
) -> List[FoliationLeaf]:
    return FoliationBuilder(family, config, verbose=verbose).build(lams, init)


def foliation_summary(leaves: Sequence[FoliationLeaf]) -> Dict:
    kappas = [leaf.kappa for leaf in leaves]
    norms = [float(np.linalg.norm(leaf.xi)) for leaf in leaves]
    return {
        "leaves": len(leaves),
        "kappa_decreasing": all(b < a for a, b in zip(kappas, kappas[1:])),
        "min_margin": min((leaf.margin for leaf in leaves), default=None),
        "min_hessian_eig": min((leaf.hessian_min_eig for leaf in leaves), default=None),
        "xi_norms": norms,
        "hawking_masses": [leaf.hawking_mass for leaf in leaves],
        "violations": [leaf.lam for leaf in leaves if leaf.status != LEAF_OK],
    }


# ---------------------------------------------------------------------------
# 径向单调性
# ---------------------------------------------------------------------------


def monotonicity_scan(
    lam: float,
    family: MetricFamily,
    radii: Sequence[float],
    direction: Sequence[float] = (1.0, 0.0, 0.0),
    config: Optional[SolverConfig] = None,
    method: str = DIRECT,
    workers: Optional[int] = None,
    step: Optional[float] = None,
) -> Dict:
    """沿射线列出 ξ·∇G/|ξ|, 标出非正值与符号变化"""
    cfg = config or SolverConfig()
    workers = Config.WORKERS if workers is None else workers
    h = Config.XI_STEP if step is None else step
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    radii = [float(r) for r in radii]

    if method == DIRECT:
        jobs = []
        for r in radii:
            jobs += [((r + h) * direction, lam, family, cfg), ((r - h) * direction, lam, family, cfg)]
        values = [v for v, _ in run_jobs(_value_at, jobs, workers)]
        derivs = [(values[2 * k] - values[2 * k + 1]) / (2.0 * h) for k in range(len(radii))]
    else:
        derivs = [radial_derivative(lam, family, r * direction, method=method, config=cfg) for r in radii]

    rows = [{"radius": r, "radial_derivative": d} for r, d in zip(radii, derivs)]
    changes = [
        (radii[k], radii[k + 1]) for k in range(len(radii) - 1) if derivs[k] * derivs[k + 1] < 0.0
    ]
    return {
        "lambda": lam,
        "method": method,
        "rows": rows,
        "violations": [r for r, d in zip(radii, derivs) if d <= 0.0],
        "sign_changes": changes,
    }


# ---------------------------------------------------------------------------
# CMC 约化面积与缓慢发散序列
# ---------------------------------------------------------------------------


def cmc_reduced_area(xi: Sequence[float], lam: float, family: MetricFamily) -> Tuple[float, float]:
    """
    A_λ(ξ) = 4πλ² - (2π/15)λ⁴R̲ - (π/105)λ⁶Δ̄R̲ - (8π/35)|ξ|^-6
    与径向导数预测 (48π/35)|ξ|^-6 + ½∫_{B_λ(λξ)} ḡ(ξ, λξ - x) R dv̄

    R̲, Δ̄R̲ 取在 λξ 处
    """
    xi = np.asarray(xi, dtype=float).reshape(3)
    a = float(np.linalg.norm(xi))
    if a <= 2.0:
        raise InvalidParameterError(f"CMC 约化面积展开要求 |ξ| > 2: {a}")
    center = (lam * xi)[None, :]
    schwarzschild = seed_scale(family) ** 2
    if family.scalar_flat:
        R0 = 0.0
        lap = 0.0
        volume = 0.0
    else:
        R0 = float(scalar_curvature(family, center)[0])
        lap = float(laplacian_R(family, center)[0])
        volume = 0.5 * integrate_R(family, lam * xi, lam, moment=xi).value
    area_value = (
        4.0 * math.pi * lam**2
        - 2.0 * math.pi / 15.0 * lam**4 * R0
        - math.pi / 105.0 * lam**6 * lap
        - schwarzschild * 8.0 * math.pi / 35.0 * a**-6
    )
    predictor = schwarzschild * 48.0 * math.pi / 35.0 * a**-6 + volume
    return area_value, predictor


def _axisymmetric_integrals(family: MetricFamily, lam: float, a: float, nodes: int = 24) -> Tuple[float, float]:
    """坐标球面 S_λ(λa e₁) 的面积与 ∫H² dμ, 在最近点附近按几何分段加密"""
    center = lam * a * _unit(0)
    alpha = max(abs(1.0 - a), 1e-12)
    edges = [0.0]
    edge = alpha / 16.0
    while edge < math.pi:
        edges.append(edge)
        edge *= 2.0
    edges.append(math.pi)
    area_value = 0.0
    h_sq = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        # psi 为与 -e₁ 的夹角
        psi, wts = gauss_legendre(nodes, lo, hi)
        y = np.stack([-np.cos(psi), np.sin(psi), np.zeros_like(psi)], axis=-1)
        H = coordinate_sphere_mean_curvature(family, center, lam, y)
        density = wts * conformal_jet(family, center + lam * y)[0] ** 4 * np.sin(psi)
        area_value += float(np.sum(density))
        h_sq += float(np.sum(density * H**2))
    factor = 2.0 * math.pi * lam**2
    return factor * area_value, factor * h_sq


def slow_divergence_energy(family: MetricFamily, lam: float, rho: float, on_center: bool = True) -> Dict:
    """
    内半径 ρ 满足 1 ≪ ρ ≪ λ 的坐标球面: ∫H² 与其展开, min φ²H 与 2λ^-1 - 4ρ^-2, Hawking 质量

    中心: 16π - 32πλ^-1(2 - ρ^-1) + 8πρ^-2; 外离: 16π + 32πλ^-1ρ^-1 + 8πρ^-2
    """
    if not family.is_radial:
        raise UnsupportedCaseError("只支持径向度量族")
    if not 0.0 < rho < lam:
        raise InvalidParameterError(f"需要 0 < ρ < λ: ρ={rho}, λ={lam}")
    a = 1.0 - rho / lam if on_center else 1.0 + rho / lam
    area_value, h_sq = _axisymmetric_integrals(family, lam, a)
    if on_center:
        predicted = 16.0 * math.pi - 32.0 * math.pi / lam * (2.0 - 1.0 / rho) + 8.0 * math.pi / rho**2
    else:
        predicted = 16.0 * math.pi + 32.0 * math.pi / (lam * rho) + 8.0 * math.pi / rho**2
    scan = min_mean_curvature_scan(family, a * _unit(0), lam)
    return {
        "lambda": lam,
        "rho": rho,
        "regime": ON_CENTER if on_center else OUTLYING,
        "h_sq": h_sq,
        "predicted": predicted,
        "difference": h_sq - predicted,
        "min_phi2_H": scan["min"],
        "predicted_min": scan["predicted"],
        "hawking_mass": hawking_mass(area_value, h_sq),
    }


def hessian_floor(lam: float, family: MetricFamily, config: Optional[SolverConfig] = None) -> float:
    """ξ = 0 处 D̄²G_λ 的最小本征值"""
    ev = G_direct(np.zeros(3), lam, family, config, derivatives=True)
    return min(ev.hessian_eigenvalues)


def expansion_gap(xi: Sequence[float], lam: float, family: MetricFamily, config: Optional[SolverConfig] = None) -> Dict:
    """(G_direct - G_expansion)·λ"""
    direct = G_direct(xi, lam, family, config)
    expanded = G_expansion(xi, lam, family, None if config is None else config.delta)
    return {
        "lambda": lam,
        "xi": list(direct.xi),
        "regime": direct.regime,
        "direct": direct.value,
        "expansion": expanded.value,
        "scaled_gap": (direct.value - expanded.value) * lam,
    }

