"""
解析信道模块
单接收机闭式 CDF、双接收机渐近捕获概率、虚拟点距离、时变 CDF 级数近似、
以及每个符号间隔的信道系数
"""

import math
from dataclasses import dataclass
from typing import Tuple, Optional, Union

import numpy as np
import pandas as pd
from scipy.special import erfc, eval_legendre

from modules.topology.topology import (
    SystemTopology, Point, build_frame, to_bispherical,
    transmitter_position, surface_clearances
)
from utils.errors import DomainError, DegenerateGeometryError
from utils.logger import get_module_logger

log = get_module_logger('channel')

ArrayLike = Union[float, np.ndarray]

# 级数提前终止阈值
SERIES_TOL = 1e-15
# 每次计算的 Legendre 项数
LEGENDRE_CHUNK = 512
# erfc(6.5) ≈ 4e-20，超过该参数的项可以忽略
ERFC_CUTOFF = 6.5
# 符号间干扰周期 (s)
DEFAULT_ISI_PERIOD = 0.6


def _as_time_array(t: ArrayLike) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("时间不能为负")
    return arr, arr.ndim == 0


def single_receiver_cdf(r_r: float, d: float, D: float, t: ArrayLike) -> ArrayLike:
    """
    单个吸收球的首次命中概率 (r/(r+d))·erfc(d/√(4Dt))

    Args:
        r_r: 接收球半径 (µm)
        d: 发射点到球面的距离 (µm)
        D: 扩散系数 (µm²/s)
        t: 时间 (s)，标量或数组

    Returns:
        与 t 同形状的概率
    """
    if r_r <= 0 or d < 0 or D <= 0:
        raise DomainError(f"参数非法: r_r={r_r} d={d} D={D}")
    arr, scalar = _as_time_array(t)

    if d == 0:
        out = np.where(arr > 0, 1.0, 0.0)
    else:
        with np.errstate(divide='ignore'):
            arg = d / np.sqrt(4.0 * D * arr)
        out = (r_r / (r_r + d)) * erfc(arg)

    return float(out) if scalar else out


def single_receiver_pdf(r_r: float, d: float, D: float, t: ArrayLike) -> ArrayLike:
    """单接收机首次命中时间的概率密度（CDF 的导数），t=0 处取 0"""
    if r_r <= 0 or d <= 0 or D <= 0:
        raise DomainError(f"参数非法: r_r={r_r} d={d} D={D}")
    arr, scalar = _as_time_array(t)

    safe = np.where(arr > 0, arr, 1.0)
    dens = (r_r / (r_r + d)) * d / np.sqrt(4.0 * math.pi * D * safe ** 3) \
        * np.exp(-d * d / (4.0 * D * safe))
    out = np.where(arr > 0, dens, 0.0)
    return float(out) if scalar else out


@dataclass(frozen=True)
class CaptureProbabilities:
    """t→∞ 时各接收机最终吸收的分子比例"""
    k1: float
    k2: float
    truncation_bound: float = 0.0
    terms: int = 0

    def __post_init__(self):
        if not (0.0 <= self.k1 <= 1.0 and 0.0 <= self.k2 <= 1.0):
            raise DomainError(f"捕获概率越界: k1={self.k1} k2={self.k2}")
        if self.k1 + self.k2 > 1.0 + 1e-9:
            raise DomainError(f"捕获概率之和大于 1: {self.k1 + self.k2}")

    def of(self, j: int) -> float:
        return self.k1 if j == 1 else self.k2


def _tx_distances(topology: SystemTopology, tx: Point) -> Tuple[float, float]:
    """发射点到 Rx1、Rx2 表面的距离，点在球内时抛出 DomainError"""
    d11, d12 = surface_clearances(topology, tx)

    tol = 1e-12 * max(topology.r_r1, topology.r_r2)
    if d11 < -tol or d12 < -tol:
        raise DomainError(f"发射点位于接收球内部: {tx}")
    return max(d11, 0.0), max(d12, 0.0)


def capture_probabilities(topology: SystemTopology, tx: Point, m_max: int = 100000,
                          tol: float = SERIES_TOL) -> CaptureProbabilities:
    """
    双接收机渐近捕获概率（双球坐标下的 Legendre 级数）

    Args:
        topology: 系统拓扑
        tx: 发射点笛卡尔坐标
        m_max: 最多计算的级数项数
        tol: 项包络低于该值时提前终止

    Returns:
        CaptureProbabilities，附带截断误差上界
    """
    if m_max < 1:
        raise DomainError(f"m_max 必须 >= 1: {m_max}")

    d11, d12 = _tx_distances(topology, tx)
    surface_tol = 1e-12 * max(topology.r_r1, topology.r_r2)
    if d11 <= surface_tol:
        return CaptureProbabilities(k1=1.0, k2=0.0)
    if d12 <= surface_tol:
        return CaptureProbabilities(k1=0.0, k2=1.0)

    frame = build_frame(topology)
    bp = to_bispherical(tx, frame)
    mu0, eta0 = bp.mu, bp.eta
    mu1, mu2 = frame.mu1, frame.mu2

    prefactor = math.sqrt(2.0 * (math.cosh(mu0) - math.cos(eta0)))
    cos_eta = math.cos(eta0)

    # 相邻项包络之比
    q1 = math.exp(mu0 - 2.0 * mu1)
    q2 = math.exp(-(mu0 + 2.0 * mu2))

    sum1 = 0.0
    sum2 = 0.0
    used = 0
    tail_env1 = tail_env2 = 0.0
    start = 0
    while start < m_max:
        idx = np.arange(start, min(start + LEGENDRE_CHUNK, m_max))
        x = idx + 0.5
        env1 = np.exp(x * (mu0 - 2.0 * mu1))
        env2 = np.exp(-x * (mu0 + 2.0 * mu2))
        denom = -np.expm1(-2.0 * x * (mu1 + mu2))
        legendre = eval_legendre(idx, cos_eta)

        term1 = env1 * (-np.expm1(-2.0 * x * (mu0 + mu2))) / denom * legendre
        term2 = env2 * (-np.expm1(-2.0 * x * (mu1 - mu0))) / denom * legendre

        small = np.nonzero(np.maximum(env1, env2) < tol)[0]
        if small.size:
            stop = int(small[0])
            sum1 += float(np.sum(term1[:stop]))
            sum2 += float(np.sum(term2[:stop]))
            used = start + stop
            tail_env1, tail_env2 = float(env1[stop]), float(env2[stop])
            break

        sum1 += float(np.sum(term1))
        sum2 += float(np.sum(term2))
        used = int(idx[-1]) + 1
        start = used
        tail_env1 = math.exp((used + 0.5) * (mu0 - 2.0 * mu1))
        tail_env2 = math.exp(-(used + 0.5) * (mu0 + 2.0 * mu2))

    bound = prefactor * (tail_env1 / (1.0 - q1) + tail_env2 / (1.0 - q2))
    k1 = min(max(prefactor * sum1, 0.0), 1.0)
    k2 = min(max(prefactor * sum2, 0.0), 1.0)

    log.debug(f"捕获概率: k1={k1:.10f} k2={k2:.10f} 项数={used} 截断上界={bound:.2e}")
    return CaptureProbabilities(k1=k1, k2=k2, truncation_bound=bound, terms=used)


def virtual_point_distances(caps: CaptureProbabilities, topology: SystemTopology,
                            tx: Point) -> Tuple[float, float]:
    """
    由捕获概率反解两个虚拟点到另一接收球的距离

    Returns:
        (d_p1_rx2, d_p2_rx1)

    Raises:
        DegenerateGeometryError: 分母非正或结果非正
    """
    r1, r2 = topology.r_r1, topology.r_r2
    d11, d12 = _tx_distances(topology, tx)
    k1, k2 = caps.k1, caps.k2
    total = k1 + k2

    den1 = r2 * (1.0 - k2) - d12 * k2
    den2 = r1 * (1.0 - k1) - d11 * k1
    if den1 <= 0 or den2 <= 0:
        raise DegenerateGeometryError(
            f"虚拟点距离分母非正: {den1:.3e}, {den2:.3e} (k1={k1}, k2={k2})"
        )

    d_p1_rx2 = (r2 * r2 * (total - 1.0) + r2 * d12 * total) / den1
    d_p2_rx1 = (r1 * r1 * (total - 1.0) + r1 * d11 * total) / den2
    if not (d_p1_rx2 > 0 and d_p2_rx1 > 0):
        raise DegenerateGeometryError(
            f"虚拟点距离非正: d_p1_rx2={d_p1_rx2:.6g} d_p2_rx1={d_p2_rx1:.6g}"
        )
    return d_p1_rx2, d_p2_rx1


def capture_from_virtual(topology: SystemTopology, tx: Point, d_p1_rx2: float,
                         d_p2_rx1: float) -> Tuple[float, float]:
    """
    路径分解方程：k1 = G1 − g1·k2，k2 = G2 − g2·k1，
    其中 G 为发射点到球面的单球概率，g 为虚拟点到另一球面的单球概率
    """
    r1, r2 = topology.r_r1, topology.r_r2
    d11, d12 = _tx_distances(topology, tx)
    big1 = r1 / (r1 + d11)
    big2 = r2 / (r2 + d12)
    g1 = r1 / (r1 + d_p2_rx1)
    g2 = r2 / (r2 + d_p1_rx2)
    det = 1.0 - g1 * g2
    return (big1 - g1 * big2) / det, (big2 - g2 * big1) / det


@dataclass(frozen=True)
class SeriesCoefficients:
    """时变 CDF 级数的系数（长度已除以 √D，单位 s^½）"""
    A: float
    B: float
    a1: float
    a2: float
    b1: float
    b2: float
    c11: float
    c12: float
    c21: float
    c22: float
    d_p1_rx2: float
    d_p2_rx1: float

    def terms_for(self, i: int) -> Tuple[float, float, float, float]:
        """接收机 i 的 (c_i1, a_i, c_i2, b_i)"""
        if i == 1:
            return self.c11, self.a1, self.c12, self.b1
        return self.c21, self.a2, self.c22, self.b2

    def limit(self, i: int) -> float:
        """t→∞ 的极限值"""
        c_direct, _, c_cross, _ = self.terms_for(i)
        return c_direct - c_cross


def series_coefficients(topology: SystemTopology, tx: Point,
                        virtual: Tuple[float, float]) -> SeriesCoefficients:
    """按路径分解计算 A、B、b_i、c_ij"""
    r1, r2 = topology.r_r1, topology.r_r2
    d11, d12 = _tx_distances(topology, tx)
    if topology.D <= 0:
        raise DomainError(f"解析信道要求 D > 0: {topology.D}")
    d_p1, d_p2 = virtual
    sqrt_d = math.sqrt(topology.D)

    A = (r1 + d_p2) * (r2 + d_p1) / (r1 * r2)
    ratio = A / (A - 1.0)

    return SeriesCoefficients(
        A=A,
        B=-(d_p1 + d_p2) / sqrt_d,
        a1=d11 / sqrt_d,
        a2=d12 / sqrt_d,
        b1=(d_p2 + d12) / sqrt_d,
        b2=(d_p1 + d11) / sqrt_d,
        c11=ratio * r1 / (r1 + d11),
        c12=ratio * r1 * r2 / ((r2 + d12) * (r1 + d_p2)),
        c21=ratio * r2 / (r2 + d12),
        c22=ratio * r1 * r2 / ((r1 + d11) * (r2 + d_p1)),
        d_p1_rx2=d_p1,
        d_p2_rx1=d_p2
    )


def two_receiver_cdf(coeffs: SeriesCoefficients, i: int, t: ArrayLike,
                     n_terms: int = 100000, tol: float = SERIES_TOL) -> ArrayLike:
    """
    接收机 i 在时间 t 之前吸收的分子比例

    展开为镜像级数：
        F_i(t) = (A−1)/A · Σ_m A^{−m} [c_i1·erfc((a_i+m|B|)/2√t) − c_i2·erfc((b_i+m|B|)/2√t)]
    A^{−m} 低于 tol 或 erfc 参数超过截断值后停止求和。
    """
    if i not in (1, 2):
        raise DomainError(f"接收机编号只能是 1 或 2: {i}")
    if n_terms < 1:
        raise DomainError(f"n_terms 必须 >= 1: {n_terms}")

    arr, scalar = _as_time_array(t)
    flat = arr.reshape(-1)
    c_direct, a, c_cross, b = coeffs.terms_for(i)
    A = coeffs.A
    step = abs(coeffs.B)

    # 几何衰减所需项数
    m_geom = int(math.ceil(-math.log(tol) / math.log(A))) + 1
    t_max = float(flat.max()) if flat.size else 0.0
    m_erfc = int(math.ceil((2.0 * ERFC_CUTOFF * math.sqrt(t_max) - min(a, b)) / step)) + 1 \
        if step > 0 else m_geom
    m_count = max(1, min(n_terms, m_geom, max(m_erfc, 1)))

    out = np.zeros_like(flat)
    positive = flat > 0
    if np.any(positive):
        root = 2.0 * np.sqrt(flat[positive])
        acc = np.zeros(root.shape)
        for start in range(0, m_count, LEGENDRE_CHUNK):
            m = np.arange(start, min(start + LEGENDRE_CHUNK, m_count), dtype=float)[:, None]
            weight = A ** (-m)
            acc += np.sum(weight * (c_direct * erfc((a + m * step) / root)
                                    - c_cross * erfc((b + m * step) / root)), axis=0)
        out[positive] = np.clip((A - 1.0) / A * acc, 0.0, 1.0)

    out = out.reshape(arr.shape)
    return float(out) if scalar else out


@dataclass(frozen=True)
class TransmitterChannel:
    """单个发射机到两个接收机的信道"""
    tx: Point
    caps: CaptureProbabilities
    coeffs: Optional[SeriesCoefficients]
    # 发射机贴在某个接收球表面时，记录该接收机编号（阶跃 CDF）
    surface_receiver: Optional[int] = None

    def cdf(self, j: int, t: ArrayLike, n_terms: int = 100000) -> ArrayLike:
        if self.surface_receiver is not None:
            arr, scalar = _as_time_array(t)
            out = np.where(arr > 0, 1.0 if j == self.surface_receiver else 0.0, 0.0)
            return float(out) if scalar else out
        return two_receiver_cdf(self.coeffs, j, t, n_terms=n_terms)


def _build_transmitter_channel(topology: SystemTopology, m_max: int) -> TransmitterChannel:
    """topology 中 Tx1 的信道"""
    frame = build_frame(topology)
    tx = transmitter_position(topology, frame, 1)
    caps = capture_probabilities(topology, tx, m_max=m_max)
    if topology.d1 == 0:
        return TransmitterChannel(tx=tx, caps=caps, coeffs=None, surface_receiver=1)
    virtual = virtual_point_distances(caps, topology, tx)
    return TransmitterChannel(tx=tx, caps=caps, coeffs=series_coefficients(topology, tx, virtual))


class ChannelModel:
    """
    两个发射机的解析信道

    cdf(i, j, t) 给出 Tx_i 发射的分子在 t 之前被 Rx_j 吸收的比例。
    Tx2 的曲线由交换收发器标签后的拓扑计算。
    """

    def __init__(self, topology: SystemTopology, m_max: int = 100000, n_terms: int = 100000):
        self.topology = topology
        self.n_terms = n_terms
        self._tx1 = _build_transmitter_channel(topology, m_max)
        self._tx2 = _build_transmitter_channel(topology.swapped(), m_max)
        log.info(
            f"解析信道已建立: Tx1 (k1={self._tx1.caps.k1:.4f}, k2={self._tx1.caps.k2:.4f}) "
            f"Tx2 (k1={self._tx2.caps.k2:.4f}, k2={self._tx2.caps.k1:.4f})"
        )

    def transmitter(self, i: int) -> TransmitterChannel:
        """Tx_i 的信道；i=2 时接收机编号为交换后的编号"""
        return self._tx1 if i == 1 else self._tx2

    def _local_receiver(self, i: int, j: int) -> int:
        return j if i == 1 else 3 - j

    def cdf(self, i: int, j: int, t: ArrayLike) -> ArrayLike:
        if i not in (1, 2) or j not in (1, 2):
            raise DomainError(f"收发编号只能是 1 或 2: i={i} j={j}")
        return self.transmitter(i).cdf(self._local_receiver(i, j), t, n_terms=self.n_terms)

    def capture(self, i: int, j: int) -> float:
        """Tx_i → Rx_j 的渐近捕获概率"""
        return self.transmitter(i).caps.of(self._local_receiver(i, j))

    def coefficients(self, i: int) -> Optional[SeriesCoefficients]:
        return self.transmitter(i).coeffs


@dataclass(frozen=True)
class ChannelCoefficients:
    """
    每个符号间隔的信道系数

    p[i-1, j-1, k]: Tx_i 的分子在第 k 个符号间隔被 Rx_j 吸收的概率
    phi[i-1, j-1, k]: A-SIC 丢弃每个间隔前 T_c 后的对应概率
    """
    t_s: float
    T_c: float
    K: int
    p: np.ndarray
    phi: np.ndarray

    def taps(self, i: int, j: int, a_sic: bool = False) -> np.ndarray:
        table = self.phi if a_sic else self.p
        return table[i - 1, j - 1]

    def to_frame(self):
        """展开为 (i, j, k, p, phi) 行，供 CSV 输出"""
        rows = []
        for i in (1, 2):
            for j in (1, 2):
                for k in range(self.K):
                    rows.append({
                        'i': i, 'j': j, 'k': k,
                        'p': float(self.p[i - 1, j - 1, k]),
                        'phi': float(self.phi[i - 1, j - 1, k])
                    })
        return pd.DataFrame(rows, columns=['i', 'j', 'k', 'p', 'phi'])


def default_tap_count(t_s: float, isi_period: float = DEFAULT_ISI_PERIOD) -> int:
    """K = ceil(ISI 周期 / t_s)"""
    if t_s <= 0:
        raise DomainError(f"t_s 必须为正: {t_s}")
    return max(1, int(math.ceil(isi_period / t_s - 1e-9)))


def channel_coefficients(model, t_s: float, T_c: float = 0.0, K: int = None) -> ChannelCoefficients:
    """
    由 CDF 计算信道系数

    Args:
        model: 提供 cdf(i, j, t) 的对象（解析模型或经验模型）
        t_s: 符号间隔 (s)
        T_c: A-SIC 丢弃时间 (s)，0 <= T_c < t_s
        K: 抽头数，默认 ceil(0.6/t_s)
    """
    if t_s <= 0:
        raise DomainError(f"t_s 必须为正: {t_s}")
    if not (0.0 <= T_c < t_s):
        raise DomainError(f"T_c 必须满足 0 <= T_c < t_s: T_c={T_c} t_s={t_s}")
    if K is None:
        K = default_tap_count(t_s)
    if K < 1:
        raise DomainError(f"K 必须 >= 1: {K}")

    edges = np.arange(K + 1) * t_s
    p = np.zeros((2, 2, K))
    phi = np.zeros((2, 2, K))
    for i in (1, 2):
        for j in (1, 2):
            F_edges = np.asarray(model.cdf(i, j, edges), dtype=float)
            p[i - 1, j - 1] = np.maximum(np.diff(F_edges), 0.0)
            if T_c == 0.0:
                phi[i - 1, j - 1] = p[i - 1, j - 1]
            else:
                F_start = np.asarray(model.cdf(i, j, edges[:-1] + T_c), dtype=float)
                phi[i - 1, j - 1] = np.clip(F_edges[1:] - F_start, 0.0, p[i - 1, j - 1])

    log.debug(f"信道系数: t_s={t_s} T_c={T_c} K={K}")
    return ChannelCoefficients(t_s=t_s, T_c=T_c, K=K, p=p, phi=phi)


def impulse_response(model, i: int, n1: int, dt: float, n_steps: int) -> np.ndarray:
    """
    Tx_i 一次发射 n1 个分子后，每个时间步内各接收机的期望吸收数

    Returns:
        形状 (2, n_steps) 的数组，行对应 Rx1、Rx2
    """
    if dt <= 0 or n_steps < 1:
        raise DomainError(f"dt 与 n_steps 必须为正: dt={dt} n_steps={n_steps}")
    edges = np.arange(n_steps + 1) * dt
    return np.vstack([
        n1 * np.maximum(np.diff(np.asarray(model.cdf(i, j, edges), dtype=float)), 0.0)
        for j in (1, 2)
    ])
