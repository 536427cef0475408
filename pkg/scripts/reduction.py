#!/usr/bin/env python3
"""
Lyapunov-Schmidt 约化求解器
对给定 (ξ, λ) 求 u ⊥ Λ₁ 与乘子 κ, 使 W + κH ∈ Λ₁ 且 |Σ| = 4πλ²
"""

import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

try:
    from config import Config
except ImportError:
    from scripts.config import Config

from scripts.ambient_metric import MetricFamily, conformal_jet, perturbation, reference_schwarzschild
from scripts.harmonics import (
    FOUR_PI,
    BAND_MARGIN,
    HarmonicField,
    analyze,
    band_mask,
    degree_array,
    grid_for,
    project,
    synthesize,
    willmore_eigenvalue,
    y2_samples,
    zonal,
)
from scripts.surface_geometry import GraphSurface, geometry, willmore_operator
from scripts.utils import (
    ConvergenceError,
    DegenerateSurfaceError,
    DomainError,
    InvalidParameterError,
    fit_decay_exponent,
    run_jobs,
)

ON_CENTER = "on-center"
OUTLYING = "outlying"
FAR_OUTLYING = "far-outlying"
REGIMES = (ON_CENTER, OUTLYING, FAR_OUTLYING)

FAR_OUTLYING_RADIUS = 2.0

LS_CSV_HEADER = [
    "lambda",
    "xi1",
    "xi2",
    "xi3",
    "regime",
    "kappa",
    "kappa_lambda3",
    "residual_l1",
    "residual_perp",
    "area_error",
    "iterations",
]


@dataclass
class SolverConfig:
    """
    约化求解器参数

    tol_res 以 λ^-4 为单位, tol_area 以 λ² 为单位
    """

    lmax: int = field(default_factory=lambda: Config.LMAX)
    delta: float = field(default_factory=lambda: Config.EXCLUSION_DELTA)
    tol_res: float = field(default_factory=lambda: Config.TOL_RES)
    tol_area: float = field(default_factory=lambda: Config.TOL_AREA)
    max_iterations: int = field(default_factory=lambda: Config.MAX_ITERATIONS)
    damping: float = 1.0
    min_step: float = 1.0 / 64.0
    lambda_floor: float = 5.0
    regime: Optional[str] = None

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise InvalidParameterError(f"δ 必须在 (0, 1/2) 内: {self.delta}")
        if self.lmax < BAND_MARGIN + 2:
            raise InvalidParameterError(f"lmax 过小: {self.lmax}")
        if self.tol_res <= 0.0 or self.tol_area <= 0.0:
            raise InvalidParameterError("容差必须为正")
        if self.max_iterations < 1:
            raise InvalidParameterError(f"最大迭代次数必须为正: {self.max_iterations}")
        if not 0.0 < self.min_step <= self.damping <= 1.0:
            raise InvalidParameterError(f"步长参数无效: damping={self.damping}, min_step={self.min_step}")
        if self.regime is not None and self.regime not in REGIMES:
            raise InvalidParameterError(f"未知区域: {self.regime}")

    @property
    def u_band(self) -> int:
        return self.lmax - BAND_MARGIN

    def to_dict(self) -> Dict:
        return asdict(self)


def unknown_bands(u_band: int) -> List[int]:
    """未知量所在的带: Λ₀ ⊕ Λ₂ ⊕ ... ⊕ Λ_{u_band}"""
    return [0] + list(range(2, u_band + 1))


def classify_regime(xi: Sequence[float], delta: Optional[float] = None) -> str:
    """按 |ξ| 判定中心/外离/远外离区域, 排除环带 |1 - |ξ|| < δ"""
    delta = Config.EXCLUSION_DELTA if delta is None else delta
    a = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    if abs(1.0 - a) < delta:
        raise InvalidParameterError(f"|ξ| = {a:.6g} 落在排除环带 |1 - |ξ|| < {delta}")
    if a < 1.0:
        return ON_CENTER
    return FAR_OUTLYING if a > FAR_OUTLYING_RADIUS else OUTLYING


def seed_scale(family: MetricFamily) -> float:
    """主阶 u 的整体系数 m/2 (Euclidean 背景为零)"""
    return 0.0 if family.mass == 0.0 else reference_schwarzschild(family).scale


def _check_regime(xi: np.ndarray, regime: Optional[str], delta: float) -> str:
    actual = classify_regime(xi, delta)
    if regime is None:
        return actual
    if regime == FAR_OUTLYING and actual != FAR_OUTLYING:
        raise InvalidParameterError("远外离区域要求 |ξ| > 2")
    if (regime == ON_CENTER) != (actual == ON_CENTER):
        raise InvalidParameterError(f"区域 {regime} 与 |ξ| = {np.linalg.norm(xi):.6g} 不一致")
    return regime


def leading_order_u(
    xi: Sequence[float],
    lam: float,
    regime: Optional[str] = None,
    lmax: Optional[int] = None,
    family: Optional[MetricFamily] = None,
    delta: Optional[float] = None,
) -> HarmonicField:
    """
    u 的主阶近似 (带限 lmax)

    中心: -2 + 4 Σ_{l≥2} |ξ|^l / l · P_l
    外离: -2|ξ|^-1 - 4 Σ_{l≥2} |ξ|^{-l-1} / (l+1) · P_l
    远外离: 外离级数加上 Λ₂ 修正 -(1/3) λ φ̲^-6 σ̲_ij Y₂^{ij}
    P_l 的自变量为 -<y, ξ>/|ξ|; 质量 m ≠ 2 时整体乘以 m/2
    """
    xi = np.asarray(xi, dtype=float).reshape(3)
    delta = Config.EXCLUSION_DELTA if delta is None else delta
    regime = _check_regime(xi, regime, delta)
    lmax = Config.LMAX - BAND_MARGIN if lmax is None else lmax
    scale = 1.0 if family is None else seed_scale(family)
    if scale == 0.0:
        return HarmonicField.zeros(lmax)

    a = float(np.linalg.norm(xi))
    coeffs = np.zeros(lmax + 1)
    ls = np.arange(2, lmax + 1, dtype=float)
    if regime == ON_CENTER:
        coeffs[0] = -2.0
        coeffs[2:] = 4.0 * a**ls / ls
    else:
        coeffs[0] = -2.0 / a
        coeffs[2:] = -4.0 * a ** (-ls - 1) / (ls + 1)

    grid = grid_for(max(lmax, 2))
    u0 = zonal(grid, xi, coeffs * scale, lmax)

    if regime == FAR_OUTLYING and family is not None:
        u0 = u0 + _far_outlying_correction(family, xi, lam, lmax)
    return u0


def _far_outlying_correction(family: MetricFamily, xi: np.ndarray, lam: float, lmax: int) -> HarmonicField:
    """-(1/3) λ φ̲^-6 σ̲_ij Y₂^{ij}, σ 取在 λξ 处; 共形的 σ 其无迹部分为零"""
    center = lam * xi
    sigma = perturbation(family, center[None, :])["sigma"][0]
    phi = conformal_jet(reference_schwarzschild(family), center[None, :])[0][0]
    grid = grid_for(max(lmax, 2))
    values = np.zeros(grid.shape)
    for i in range(3):
        for j in range(3):
            values += sigma[i, j] * y2_samples(grid, i, j)
    return analyze(grid, -(lam * phi**-6 / 3.0) * values, lmax)


@dataclass
class LSState:
    """约化方程的解 u_{ξ,λ}, κ_{ξ,λ} 与残量诊断"""

    surface: GraphSurface
    kappa: float
    regime: str
    residual_l1: float
    residual_perp: float
    residual_tail: float
    area_error: float
    iterations: int
    trace: List[float] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def u(self) -> HarmonicField:
        return self.surface.u

    @property
    def xi(self) -> np.ndarray:
        return self.surface.xi

    @property
    def lam(self) -> float:
        return self.surface.lam

    def to_dict(self, with_coefficients: bool = True) -> Dict:
        data = {
            "lambda": self.lam,
            "xi": [float(v) for v in self.xi],
            "regime": self.regime,
            "kappa": self.kappa,
            "kappa_lambda3": self.kappa * self.lam**3,
            "residual_l1": self.residual_l1,
            "residual_perp": self.residual_perp,
            "residual_tail": self.residual_tail,
            "area_error": self.area_error,
            "iterations": self.iterations,
            "trace": list(self.trace),
            "elapsed": self.elapsed,
        }
        if with_coefficients:
            data["u_lmax"] = self.u.lmax
            data["u_coeffs"] = self.u.coeffs.tolist()
        return data

    def csv_row(self) -> List:
        return [
            self.lam,
            *[float(v) for v in self.xi],
            self.regime,
            self.kappa,
            self.kappa * self.lam**3,
            self.residual_l1,
            self.residual_perp,
            self.area_error,
            self.iterations,
        ]


def _residual_field(surface: GraphSurface, kappa: float) -> HarmonicField:
    geo = geometry(surface)
    return willmore_operator(surface) + kappa * analyze(geo.grid, geo.H)


def sup_norm(field_: HarmonicField) -> float:
    return float(np.max(np.abs(synthesize(grid_for(max(field_.lmax, 2)), field_))))


class LSSolver:
    """
    带边 (bordered) 的弦 Newton 迭代

    未知量: u 在 Λ₀ ⊕ Λ_{≥2} 上的系数与 κ
    方程: proj(W + κH) = 0 (同样的带), |Σ| - 4πλ² = 0
    u-u 块用对角模型 -λ^-4 (l-1)l(l+1)(l+2) + κ (l-1)(l+2) λ^-2,
    κ 列 (H 的系数) 与面积行 (∫ H w² ḡ(y, ν̄) Y dμ) 每步精确计算
    """

    def __init__(self, family: MetricFamily, config: Optional[SolverConfig] = None, verbose: bool = False):
        self.family = family
        self.config = config or SolverConfig()
        self.verbose = verbose

    def log(self, message: str):
        if self.verbose:
            print(message)

    # -- 方程与模型 Jacobian ---------------------------------------------------

    def _evaluate(self, surface: GraphSurface, kappa: float, bands: List[int]) -> Dict:
        lam = surface.lam
        res = _residual_field(surface, kappa)
        area_value = geometry(surface).integrate(1.0)
        controlled = project(res.resized(surface.u_band), bands)
        perp = lam**4 * sup_norm(controlled)
        area_error = abs(area_value - FOUR_PI * lam**2) / lam**2
        merit = max(perp / self.config.tol_res, area_error / self.config.tol_area)
        return {
            "residual": res,
            "vector": controlled.to_vector(bands),
            "area_gap": area_value - FOUR_PI * lam**2,
            "perp": perp,
            "area_error": area_error,
            "merit": merit,
        }

    def _jacobian(self, surface: GraphSurface, kappa: float, bands: List[int]) -> np.ndarray:
        lam = surface.lam
        geo = geometry(surface)
        L = surface.u_band
        mask = band_mask(L, bands)
        l = degree_array(L)[mask]
        diag = -willmore_eigenvalue(l) / lam**4 + kappa * (l - 1.0) * (l + 2.0) / lam**2

        n = int(mask.sum())
        J = np.zeros((n + 1, n + 1))
        J[np.arange(n), np.arange(n)] = diag
        J[:n, n] = analyze(geo.grid, geo.H).resized(L).coeffs[mask]
        cos_angle = np.sum(geo.grid.points * geo.normal_bar, axis=-1)
        density = geo.H * geo.w**2 * cos_angle * geo.dmu / geo.grid.weights
        J[n, :n] = analyze(geo.grid, density).resized(L).coeffs[mask]
        return J

    # -- 迭代 --------------------------------------------------------------------

    def solve(
        self,
        xi: Sequence[float],
        lam: float,
        seed: Optional[HarmonicField] = None,
        kappa0: float = 0.0,
    ) -> LSState:
        cfg = self.config
        start = time.time()
        xi = np.asarray(xi, dtype=float).reshape(3)
        if lam < cfg.lambda_floor:
            raise InvalidParameterError(f"λ = {lam} 低于下限 {cfg.lambda_floor}")
        regime = _check_regime(xi, cfg.regime, cfg.delta)
        L = cfg.u_band
        bands = unknown_bands(L)

        if seed is None:
            seed = leading_order_u(xi, lam, regime, L, self.family, cfg.delta)
        u = project(seed.resized(L), bands)
        surface = GraphSurface(xi=xi, lam=lam, u=u, family=self.family, lmax=cfg.lmax)
        kappa = float(kappa0)

        try:
            state = self._evaluate(surface, kappa, bands)
        except DomainError as exc:
            raise InvalidParameterError(f"初始曲面与内截断区域相交: {exc}") from exc
        trace = [state["merit"]]
        self.log(f"🔧 LS 求解 ξ={np.round(xi, 6).tolist()} λ={lam:g} ({regime}), 初始 merit={state['merit']:.3e}")

        iterations = 0
        while state["merit"] > 1.0:
            if iterations >= cfg.max_iterations:
                raise ConvergenceError(
                    f"LS 迭代 {cfg.max_iterations} 步未收敛 (merit={state['merit']:.3e})", trace=trace
                )
            iterations += 1
            J = self._jacobian(surface, kappa, bands)
            rhs = np.concatenate([state["vector"], [state["area_gap"]]])
            step = -np.linalg.solve(J, rhs)
            du = HarmonicField.from_vector(step[:-1], L, bands)

            t = cfg.damping
            best = None
            failures = 0
            while t >= cfg.min_step:
                try:
                    trial = surface.with_u(surface.u + t * du)
                    trial_kappa = kappa + t * step[-1]
                    trial_state = self._evaluate(trial, trial_kappa, bands)
                except (DegenerateSurfaceError, DomainError):
                    failures += 1
                    t *= 0.5
                    continue
                if best is None or trial_state["merit"] < best[2]["merit"]:
                    best = (trial, trial_kappa, trial_state)
                if trial_state["merit"] < state["merit"]:
                    break
                t *= 0.5

            if best is None:
                raise DegenerateSurfaceError(f"线搜索 {failures} 次均得到退化曲面 (第 {iterations} 步)")
            surface, kappa, state = best
            trace.append(state["merit"])
            self.log(f"   迭代 {iterations}: merit={state['merit']:.3e} κ={kappa:.6e} 步长={t:g}")

        res = state["residual"]
        tail = lam**4 * sup_norm(project(res, range(L + 1, res.lmax + 1))) if res.lmax > L else 0.0
        result = LSState(
            surface=surface,
            kappa=kappa,
            regime=regime,
            residual_l1=sup_norm(project(res, 1)),
            residual_perp=state["perp"],
            residual_tail=tail,
            area_error=state["area_error"],
            iterations=iterations,
            trace=trace,
            elapsed=time.time() - start,
        )
        self.log(f"✅ 收敛: {iterations} 步, κλ³={kappa * lam**3:.6f}")
        return result


def solve(
    xi: Sequence[float],
    lam: float,
    family: MetricFamily,
    config: Optional[SolverConfig] = None,
    seed: Optional[HarmonicField] = None,
    kappa0: float = 0.0,
    verbose: bool = False,
) -> LSState:
    return LSSolver(family, config, verbose=verbose).solve(xi, lam, seed=seed, kappa0=kappa0)


# ---------------------------------------------------------------------------
# 诊断
# ---------------------------------------------------------------------------


def _constant_offset(state: LSState, family: MetricFamily) -> float:
    """proj_{Λ₀}u 与主阶常数 -2 (中心) 或 -2|ξ|^-1 (外离) 之差"""
    scale = seed_scale(family)
    a = float(np.linalg.norm(state.xi))
    target = -2.0 * scale if state.regime == ON_CENTER else -2.0 * scale / a
    return state.u.mean() - target


def residual_orders(
    xi: Sequence[float],
    lams: Sequence[float],
    family: MetricFamily,
    config: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> Dict:
    """λ 扫描: Λ₁ 残量、‖u - u₀‖_∞ 与常数带偏差的衰减指数, 以及 κλ³"""
    cfg = config or SolverConfig()
    workers = Config.WORKERS if workers is None else workers
    lams = [float(v) for v in lams]
    states = run_jobs(solve, [(xi, lam, family, cfg) for lam in lams], workers)

    rows = []
    for state in states:
        u0 = leading_order_u(state.xi, state.lam, state.regime, state.u.lmax, family, cfg.delta)
        rows.append(
            {
                "lambda": state.lam,
                "kappa": state.kappa,
                "kappa_lambda3": state.kappa * state.lam**3,
                "residual_l1": state.residual_l1,
                "residual_perp": state.residual_perp,
                "u_deviation": sup_norm(state.u - u0),
                "constant_offset": abs(_constant_offset(state, family)),
                "iterations": state.iterations,
            }
        )

    def exponent(key: str) -> Optional[float]:
        return fit_decay_exponent(lams, [row[key] for row in rows])

    return {
        "xi": [float(v) for v in np.asarray(xi, dtype=float)],
        "regime": states[0].regime if states else None,
        "rows": rows,
        "residual_l1_exponent": exponent("residual_l1"),
        "u_deviation_exponent": exponent("u_deviation"),
        "constant_offset_exponent": exponent("constant_offset"),
        "states": states,
    }


def uniqueness_basin(
    xi: Sequence[float],
    lam: float,
    family: MetricFamily,
    config: Optional[SolverConfig] = None,
    radius: float = 0.1,
    trials: int = 3,
    seed: Optional[int] = None,
    match_tol: float = 1e-8,
) -> Dict:
    """
    从 u₀ + η (‖η‖_{L²(S²)} = radius) 重新求解, 报告与基准解的最大系数距离

    重新求解采用收紧 100 倍的残量容差
    """
    cfg = replace(config or SolverConfig(), tol_res=(config or SolverConfig()).tol_res * 1e-2)
    base = solve(xi, lam, family, cfg)
    L = cfg.u_band
    bands = unknown_bands(L)
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    u0 = leading_order_u(base.xi, lam, base.regime, L, family, cfg.delta)

    distances = []
    kappa_gaps = []
    for _ in range(trials):
        eta = rng.normal(size=int(band_mask(L, bands).sum()))
        eta *= radius / np.linalg.norm(eta)
        perturbed = u0 + HarmonicField.from_vector(eta, L, bands)
        other = solve(xi, lam, family, cfg, seed=perturbed)
        distances.append(float(np.max(np.abs(other.u.coeffs - base.u.coeffs))))
        kappa_gaps.append(abs(other.kappa - base.kappa) * lam**3)

    worst = max(distances) if distances else 0.0
    return {
        "radius": radius,
        "trials": trials,
        "distances": distances,
        "kappa_gaps": kappa_gaps,
        "max_distance": worst,
        "unique": worst < match_tol,
    }


def parameter_derivatives(
    xi: Sequence[float],
    lam: float,
    family: MetricFamily,
    config: Optional[SolverConfig] = None,
    step: Optional[float] = None,
) -> Dict:
    """
    中心差分估计 D̄u (对 ξ) 与 u' (对 λ) 的 sup 范数

    预期阶: λ‖D̄u‖ 与 λ²‖u'‖ 有界
    """
    cfg = config or SolverConfig()
    h = Config.XI_STEP if step is None else step
    xi = np.asarray(xi, dtype=float).reshape(3)
    base = solve(xi, lam, family, cfg)

    def neighbour(new_xi, new_lam) -> HarmonicField:
        return solve(new_xi, new_lam, family, cfg, seed=base.u, kappa0=base.kappa).u

    xi_norms = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        diff = (neighbour(xi + e, lam) - neighbour(xi - e, lam)) * (1.0 / (2.0 * h))
        xi_norms.append(sup_norm(diff))
    dl = h * lam
    lam_diff = (neighbour(xi, lam + dl) - neighbour(xi, lam - dl)) * (1.0 / (2.0 * dl))
    lam_norm = sup_norm(lam_diff)
    return {
        "xi_derivative": max(xi_norms),
        "lambda_derivative": lam_norm,
        "scaled_xi_derivative": lam * max(xi_norms),
        "scaled_lambda_derivative": lam**2 * lam_norm,
        "step": h,
    }


def tilde_rescaling(state: LSState, family: MetricFamily) -> Dict:
    """
    外离区域的重标度 ũ = u + 2|ξ|^-1, λ̃ = λ - 2|ξ|^-1, ξ̃ = λ λ̃^-1 ξ

    同一曲面写成 λ̃ξ̃ + (λ̃ + ũ)y; 报告 λ̃ 与 φ̲^-2 λ 的差和 ‖proj_{Λ>2} ũ‖_∞
    """
    a = float(np.linalg.norm(state.xi))
    if state.regime == ON_CENTER:
        raise InvalidParameterError("重标度只用于外离区域")
    scale = seed_scale(family)
    shift = 2.0 * scale / a
    lam = state.lam
    lam_tilde = lam - shift
    xi_tilde = lam / lam_tilde * state.xi
    u_tilde = state.u + HarmonicField.constant(shift, state.u.lmax)
    phi = 1.0 + scale / (lam * a)
    high = project(u_tilde, range(3, u_tilde.lmax + 1))
    return {
        "lambda_tilde": lam_tilde,
        "xi_tilde": [float(v) for v in xi_tilde],
        "lambda_tilde_gap": abs(lam_tilde - lam / phi**2),
        "u_tilde_mean": u_tilde.mean(),
        "u_tilde_high": sup_norm(high) if high.lmax >= 3 else 0.0,
    }


if __name__ == "__main__":
    from scripts.ambient_metric import make_schwarzschild

    state = solve([0.0, 0.0, 0.0], 100.0, make_schwarzschild(), SolverConfig(lmax=16), verbose=True)
    print(f"κλ³ = {state.kappa * state.lam**3:.6f}")
