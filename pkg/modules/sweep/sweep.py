"""
参数扫描与优化模块
(τ_m, T_c) 误码率热力图、最优工作点选择，以及半双工/全双工四种对比场景
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Dict, Any, Sequence

import numpy as np
import pandas as pd

from modules.ber.ber import (
    BerEvaluator, optimal_threshold, optimal_qcsk_thresholds, throughput,
    ZOOM_POINTS
)
from modules.link.link import LinkConfig, link_coefficients
from utils.errors import DomainError, NonConvergenceError
from utils.logger import get_module_logger

log = get_module_logger('sweep')

# 对数误码率匹配容差
LOG_MATCH_TOL = 0.05
MAX_BISECTION_STEPS = 60


@dataclass(frozen=True)
class SweepGrid:
    """热力图网格"""
    tau_m: np.ndarray
    T_c: np.ndarray

    def __post_init__(self):
        for name in ('tau_m', 'T_c'):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.size == 0:
                raise DomainError(f"{name} 网格不能为空")
            if values.size > 1 and np.any(np.diff(values) <= 0):
                raise DomainError(f"{name} 网格必须严格递增")
            object.__setattr__(self, name, values)
        if np.any(self.tau_m < 0) or np.any(self.tau_m > 1):
            raise DomainError("tau_m 必须在 [0, 1]")
        if np.any(self.T_c < 0):
            raise DomainError("T_c 不能为负")

    @classmethod
    def default(cls, t_s: float, tau_min: float = 0.0, tau_max: float = 0.25,
                tau_points: int = 51, T_c_points: int = 21):
        """T_c 取 [0, t_s) 上的等间距点"""
        return cls(
            tau_m=np.linspace(tau_min, tau_max, tau_points),
            T_c=np.linspace(0.0, t_s, T_c_points, endpoint=False)
        )


@dataclass
class HeatmapResult:
    """热力图结果，ber[a, b] 对应 (tau_m[a], T_c[b])"""
    grid: SweepGrid
    ber: np.ndarray
    tau_m_star: float
    T_c_star: float
    ber_min: float

    def to_frame(self) -> pd.DataFrame:
        tau, T_c = np.meshgrid(self.grid.tau_m, self.grid.T_c, indexing='ij')
        return pd.DataFrame({
            'tau_m': tau.ravel(),
            'T_c': T_c.ravel(),
            'ber': self.ber.ravel()
        })

    def argmin_tau_at(self, column: int) -> float:
        """给定 T_c 列时使误码率最小的 τ_m"""
        values = self.ber[:, column]
        return float(self.grid.tau_m[int(np.flatnonzero(values == values.min())[0])])


def _select_argmin(ber: np.ndarray):
    """最小值；并列时先取较小的 T_c，再取较小的 τ_m"""
    best = None
    for b in range(ber.shape[1]):
        for a in range(ber.shape[0]):
            if best is None or ber[a, b] < ber[best]:
                best = (a, b)
    return best


def ber_heatmap(grid: SweepGrid, evaluator, threads: int = 1) -> HeatmapResult:
    """
    在网格上求理论误码率

    evaluator 提供 row(T_c, taus) 时按 T_c 整行求值，否则逐格调用 evaluator(tau_m, T_c)。
    """
    def column(T_c):
        if hasattr(evaluator, 'row'):
            return np.asarray(evaluator.row(T_c, grid.tau_m), dtype=float)
        return np.array([evaluator(tau, T_c) for tau in grid.tau_m], dtype=float)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            columns = list(executor.map(column, grid.T_c))
    else:
        columns = [column(T_c) for T_c in grid.T_c]

    ber = np.column_stack(columns)
    a, b = _select_argmin(ber)
    log.debug(f"热力图最优点: tau_m={grid.tau_m[a]:.4f} T_c={grid.T_c[b]:.4f} BER={ber[a, b]:.4g}")
    return HeatmapResult(
        grid=grid,
        ber=ber,
        tau_m_star=float(grid.tau_m[a]),
        T_c_star=float(grid.T_c[b]),
        ber_min=float(ber[a, b])
    )


@dataclass
class OperatingPoint:
    """一个系统在给定 t_s 下的最优工作点"""
    duplex: str
    scheme: str
    t_s: float
    ber: float
    tau_m: float = 0.0
    T_c: float = 0.0
    thresholds: Optional[Sequence[float]] = None

    @property
    def bits_per_symbol(self) -> int:
        return 1 if self.scheme == 'BCSK' else 2

    @property
    def throughput(self) -> float:
        return throughput(self.bits_per_symbol, self.ber, self.t_s)


def optimize_fd(model, base: LinkConfig, t_s: float, grid: SweepGrid = None,
                threads: int = 1) -> OperatingPoint:
    """
    全双工 BCSK（A-SIC + D-SIC）：热力图找 (τ_m*, T_c*)，再在 T_c* 上细化 τ_m
    """
    config = base.with_(duplex='FD', scheme='BCSK', t_s=t_s, d_sic=True, a_sic=True, T_c=0.0)
    grid = grid or SweepGrid.default(t_s)
    heat = ber_heatmap(grid, BerEvaluator(model, config), threads=threads)

    at_best = config.with_(T_c=heat.T_c_star)
    coeffs = link_coefficients(model, at_best)
    step = grid.tau_m[1] - grid.tau_m[0] if grid.tau_m.size > 1 else 0.0
    lo = max(heat.tau_m_star - step, 0.0)
    hi = min(heat.tau_m_star + step, 1.0)
    taus = np.unique(np.concatenate([np.linspace(lo, hi, ZOOM_POINTS), [heat.tau_m_star]]))
    tau, ber = optimal_threshold(at_best, coeffs, taus)
    if ber > heat.ber_min:
        tau, ber = heat.tau_m_star, heat.ber_min

    log.debug(f"FD 最优: t_s={t_s} tau_m={tau:.4f} T_c={heat.T_c_star:.4f} BER={ber:.4g}")
    return OperatingPoint(duplex='FD', scheme='BCSK', t_s=t_s, ber=ber, tau_m=tau, T_c=heat.T_c_star)


def optimize_hd(model, base: LinkConfig, t_s_hd: float, scheme: str = 'BCSK',
                tau_values=None) -> OperatingPoint:
    """半双工（不做 SIC）：BCSK 搜索 τ_m，QCSK 搜索阈值族"""
    config = base.with_(duplex='HD', scheme=scheme, t_s=t_s_hd, a_sic=False, d_sic=False, T_c=0.0)
    coeffs = link_coefficients(model, config)
    if scheme == 'QCSK':
        thresholds, ber = optimal_qcsk_thresholds(config, coeffs)
        return OperatingPoint(duplex='HD', scheme='QCSK', t_s=t_s_hd, ber=ber, thresholds=thresholds)

    if tau_values is None:
        tau_values = np.linspace(0.0, 0.5, 101)
    tau, ber = optimal_threshold(config, coeffs, tau_values)
    return OperatingPoint(duplex='HD', scheme='BCSK', t_s=t_s_hd, ber=ber, tau_m=tau)


def _log_ber(ber: float) -> float:
    return math.log10(max(ber, 1e-300))


def match_fd_symbol_time(model, base: LinkConfig, target_ber: float, t_s_hd: float,
                         grid_factory=None, threads: int = 1) -> OperatingPoint:
    """
    二分搜索 t_s^FD，使 |log10 BER_FD − log10 BER_HD| < 0.05

    搜索区间 [t_s^HD/4, 8·t_s^HD]，区间两端不异号时抛出 NonConvergenceError。
    """
    grid_factory = grid_factory or SweepGrid.default
    target = _log_ber(target_ber)

    def gap(t_s):
        point = optimize_fd(model, base, t_s, grid_factory(t_s), threads)
        return _log_ber(point.ber) - target, point

    lo, hi = t_s_hd / 4.0, 8.0 * t_s_hd
    gap_lo, point_lo = gap(lo)
    if abs(gap_lo) < LOG_MATCH_TOL:
        return point_lo
    gap_hi, point_hi = gap(hi)
    if abs(gap_hi) < LOG_MATCH_TOL:
        return point_hi
    if gap_lo * gap_hi > 0:
        raise NonConvergenceError(
            f"无法找到匹配区间: t_s∈[{lo:.4g}, {hi:.4g}] 对数误码率差 {gap_lo:.3f}, {gap_hi:.3f}"
        )

    for _ in range(MAX_BISECTION_STEPS):
        mid = math.sqrt(lo * hi)
        gap_mid, point_mid = gap(mid)
        log.debug(f"二分: t_s={mid:.5f} 对数差={gap_mid:.4f}")
        if abs(gap_mid) < LOG_MATCH_TOL:
            return point_mid
        if gap_mid * gap_lo > 0:
            lo, gap_lo = mid, gap_mid
        else:
            hi = mid
    raise NonConvergenceError(f"二分搜索 {MAX_BISECTION_STEPS} 步内未收敛")


def compare_systems(case: int, n1: int, t_s_hd: float, model, base: LinkConfig = None,
                    t_s_fd: float = None, grid_factory=None, threads: int = 1) -> Dict[str, Any]:
    """
    半双工与全双工系统的吞吐量对比

    case 1: t_s^FD = t_s^HD/2；case 2: t_s 相同；case 3: 调整 t_s^FD 使误码率相同；
    case 4: 半双工 QCSK 对全双工 BCSK，t_s^FD = t_s^HD/2。

    Returns:
        报告字典，status 为 'ok' 或 'N/A'（case 3 无法匹配时），附带 error 说明
    """
    if case not in (1, 2, 3, 4):
        raise DomainError(f"case 只能是 1-4: {case}")
    base = (base or LinkConfig()).with_(n1=n1)
    grid_factory = grid_factory or SweepGrid.default

    report = {
        'case': case,
        'n1': n1,
        't_s_hd': t_s_hd,
        't_s_fd': None,
        'scheme_hd': 'QCSK' if case == 4 else 'BCSK',
        'ber_hd': None,
        'ber_fd': None,
        'thp_hd': None,
        'thp_fd': None,
        'ratio': None,
        'tau_m_fd': None,
        'T_c_fd': None,
        'status': 'ok',
        'error': ''
    }

    hd = optimize_hd(model, base, t_s_hd, scheme=report['scheme_hd'])
    report['ber_hd'] = hd.ber
    report['thp_hd'] = hd.throughput

    try:
        if case == 3:
            fd = match_fd_symbol_time(model, base, hd.ber, t_s_hd, grid_factory, threads)
        else:
            if t_s_fd is None:
                t_s_fd = t_s_hd if case == 2 else t_s_hd / 2.0
            fd = optimize_fd(model, base, t_s_fd, grid_factory(t_s_fd), threads)
    except NonConvergenceError as e:
        log.warning(f"case {case} N1={n1} t_s^HD={t_s_hd}: {e}")
        report['status'] = 'N/A'
        report['error'] = str(e)
        return report

    report.update({
        't_s_fd': fd.t_s,
        'ber_fd': fd.ber,
        'thp_fd': fd.throughput,
        'ratio': fd.throughput / hd.throughput if hd.throughput > 0 else math.inf,
        'tau_m_fd': fd.tau_m,
        'T_c_fd': fd.T_c
    })
    log.info(
        f"对比 case {case}: N1={n1} t_s^HD={t_s_hd} t_s^FD={fd.t_s:.4g} "
        f"BER HD={hd.ber:.3e} FD={fd.ber:.3e} 吞吐量比={report['ratio']:.4f}"
    )
    return report


def comparison_frame(reports: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """对比报告表（每个场景一行）"""
    columns = ['case', 'n1', 't_s_hd', 't_s_fd', 'scheme_hd', 'ber_hd', 'ber_fd',
               'thp_hd', 'thp_fd', 'ratio', 'tau_m_fd', 'T_c_fd', 'status', 'error']
    return pd.DataFrame(list(reports), columns=columns)

