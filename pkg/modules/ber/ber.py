"""
误码率理论模块
高斯近似下对所有比特序列组合枚举求误码率，以及吞吐量
"""

import itertools
import math
from dataclasses import dataclass
from typing import Tuple, Sequence

import numpy as np
from scipy.special import erfc

from modules.channel.channel import ChannelCoefficients
from modules.link.link import LinkConfig, link_coefficients
from utils.errors import DomainError, EnumerationLimitError
from utils.logger import get_module_logger

log = get_module_logger('ber')

# 最优阈值搜索细化网格的点数
ZOOM_POINTS = 21


def q_function(x):
    """Q(x) = ½·erfc(x/√2)"""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class GaussianSlotStats:
    """判决时隙计数的均值与方差"""
    mu: float
    sigma_sq: float


@dataclass
class BerReport:
    """理论误码率报告"""
    ber: float
    throughput: float
    config: LinkConfig
    enumeration_size: int
    per_receiver: Tuple[float, float] = (0.0, 0.0)
    method: str = 'enumeration'


def receiver_taps(coeffs: ChannelCoefficients, config: LinkConfig, j: int,
                  memory: int = None) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    接收机 j 判决时隙上的等效抽头

    Returns:
        (配对发射机抽头 g, 自干扰抽头 h, D-SIC 减去的系数)
        全双工：g[k]=p_ij[k]，h[k]=p_jj[k]；
        半双工：g[k]=p_ij[2k]，h[k]=p_jj[2k+1]，当前时隙本地发射机不发射。
    """
    L = memory or config.memory
    i = 3 - j
    paired = coeffs.taps(i, j, config.a_sic)
    own = coeffs.taps(j, j, config.a_sic)

    if config.duplex == 'FD':
        g = paired[:L]
        h = own[:L]
        subtract = float(h[0]) if (config.d_sic and h.size) else 0.0
    else:
        g = paired[0::2][:L]
        h = own[1::2][:L]
        subtract = 0.0

    g = np.pad(np.asarray(g, dtype=float), (0, max(0, L - len(g))))
    h = np.pad(np.asarray(h, dtype=float), (0, max(0, L - len(h))))
    return g, h, subtract


def slot_stats(history_i: Sequence[int], history_j: Sequence[int], coeffs: ChannelCoefficients,
               config: LinkConfig, j: int = 2) -> GaussianSlotStats:
    """
    给定符号历史时接收机 j 判决量的均值与方差

    Args:
        history_i: 配对发射机的符号 x_i[1:n]，时间顺序，最后一个为当前符号
        history_j: 本地发射机的符号，时间顺序，最后一个与 h[0] 对应
        coeffs: 信道系数
        config: 链路配置
        j: 接收机编号
    """
    n = len(history_i)
    if len(history_j) != n:
        raise DomainError("两个符号历史长度必须相同")
    if n > config.memory:
        raise DomainError(f"历史长度 {n} 超过记忆长度 {config.memory}")

    g, h, subtract = receiver_taps(coeffs, config, j)
    lv = config.levels.astype(float)
    a = lv[np.asarray(history_i, dtype=int)[::-1]]
    b = lv[np.asarray(history_j, dtype=int)[::-1]]

    mu = float(a @ g[:n] + b @ h[:n])
    var = config.sigma_noise_sq + float(a @ (g[:n] * (1 - g[:n])) + b @ (h[:n] * (1 - h[:n])))
    if n:
        mu -= b[0] * subtract
    return GaussianSlotStats(mu=mu, sigma_sq=var)


def _prob_above(threshold, mu, sigma):
    """P(y > threshold)，y ~ N(mu, sigma²)；sigma=0 时退化为阶跃"""
    threshold = np.asarray(threshold, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        z = (threshold - mu) / np.where(sigma > 0, sigma, 1.0)
    return np.where(sigma > 0, q_function(z), (mu > threshold).astype(float))


class _CombinationStats:
    """
    接收机 j 在所有（或抽样的）符号组合下的均值、标准差与当前真实符号

    均值和方差与阈值无关，阈值扫描时只计算一次。
    """

    def __init__(self, coeffs: ChannelCoefficients, config: LinkConfig, j: int,
                 memory: int = None, rng: np.random.Generator = None):
        L = memory or config.memory
        g, h, subtract = receiver_taps(coeffs, config, j, L)
        lv = config.levels.astype(float)
        M = config.n_levels
        bits = 2 * L * config.bits_per_symbol

        if bits <= config.enum_cap_bits:
            self.method = 'enumeration'
            history = np.array(list(itertools.product(range(M), repeat=L)), dtype=np.int64)
            a = lv[history]
            mu_a = a @ g
            var_a = a @ (g * (1 - g))
            mu_b = a @ h - a[:, 0] * subtract
            var_b = a @ (h * (1 - h))
            self.mu = (mu_a[:, None] + mu_b[None, :]).ravel()
            var = config.sigma_noise_sq + (var_a[:, None] + var_b[None, :]).ravel()
            self.truth = np.repeat(history[:, 0], history.shape[0])
        else:
            if not config.mc_fallback:
                raise EnumerationLimitError(
                    f"枚举规模 2^{bits} 超过上限 2^{config.enum_cap_bits}，请改用蒙特卡洛方式"
                )
            self.method = 'monte_carlo'
            rng = rng or np.random.default_rng(np.random.SeedSequence(config.seed))
            hist_i = rng.integers(0, M, size=(config.mc_sequences, L))
            hist_j = rng.integers(0, M, size=(config.mc_sequences, L))
            a = lv[hist_i]
            b = lv[hist_j]
            self.mu = a @ g + b @ h - b[:, 0] * subtract
            var = config.sigma_noise_sq + a @ (g * (1 - g)) + b @ (h * (1 - h))
            self.truth = hist_i[:, 0]

        self.sigma = np.sqrt(var)
        self.size = int(self.mu.size)

    def symbol_error(self, thresholds: np.ndarray) -> float:
        """给定一组递增阈值时的平均符号错误率"""
        above = [_prob_above(t, self.mu, self.sigma) for t in thresholds]
        upper = np.ones_like(self.mu)
        correct = np.zeros_like(self.mu)
        # 区域 s = (τ_s, τ_{s+1}]
        edges = [upper] + above + [np.zeros_like(self.mu)]
        for s in range(len(thresholds) + 1):
            in_region = edges[s] - edges[s + 1]
            correct += np.where(self.truth == s, in_region, 0.0)
        return float(np.mean(1.0 - correct))

    def bcsk_curve(self, taus: np.ndarray) -> np.ndarray:
        """BCSK 在一组绝对阈值上的误码率"""
        taus = np.asarray(taus, dtype=float)
        above = _prob_above(taus[:, None], self.mu[None, :], self.sigma[None, :])
        err = np.where(self.truth[None, :] == 0, above, 1.0 - above)
        return err.mean(axis=1)


def _receiver_stats(coeffs, config, memory=None):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    stats = [_CombinationStats(coeffs, config, j, memory, rng) for j in (1, 2)]
    if stats[0].method == 'monte_carlo':
        log.warning(f"枚举规模超过上限，改用 {config.mc_sequences} 条随机序列估计误码率")
    return stats


def theoretical_ber(config: LinkConfig, coeffs: ChannelCoefficients, memory: int = None,
                    per_receiver: bool = False):
    """
    高斯近似下的理论误码率（BCSK 按 τ_d = τ_m·n1，QCSK 按三个阈值）

    对两个发射机最近 L 个符号的所有组合等概率平均；两个接收机取平均。

    Args:
        config: 链路配置
        coeffs: 物理时隙上的信道系数
        memory: 记忆长度 L，默认由 ISI 周期得到
        per_receiver: 为 True 时返回 (系统误码率, (Rx1, Rx2))
    """
    L = memory or config.memory
    needed = L if config.duplex == 'FD' else 2 * L
    if coeffs.K < needed:
        raise DomainError(f"记忆长度 {L} 超过信道抽头数 {coeffs.K}")

    stats = _receiver_stats(coeffs, config, L)
    values = tuple(s.symbol_error(config.thresholds) for s in stats)
    ber = float(np.mean(values))
    if per_receiver:
        return ber, values
    return ber


def qcsk_theoretical_ber(config: LinkConfig, coeffs: ChannelCoefficients, memory: int = None) -> float:
    """QCSK 的符号错误率"""
    if config.scheme != 'QCSK':
        config = config.with_(scheme='QCSK')
    return theoretical_ber(config, coeffs, memory)


def throughput(M: int, ber: float, t_s: float) -> float:
    """吞吐量 M·(1−P_e)/t_s (bit/s)"""
    if M < 1:
        raise DomainError(f"M 必须 >= 1: {M}")
    if t_s <= 0:
        raise DomainError(f"t_s 必须为正: {t_s}")
    if not (0.0 <= ber <= 1.0):
        raise DomainError(f"误码率必须在 [0, 1]: {ber}")
    return M * (1.0 - ber) / t_s


def ber_report(config: LinkConfig, coeffs: ChannelCoefficients) -> BerReport:
    stats = _receiver_stats(coeffs, config)
    values = tuple(s.symbol_error(config.thresholds) for s in stats)
    ber = float(np.mean(values))
    return BerReport(
        ber=ber,
        throughput=throughput(config.bits_per_symbol, ber, config.t_s),
        config=config,
        enumeration_size=stats[0].size,
        per_receiver=values,
        method=stats[0].method
    )


def ber_curve(config: LinkConfig, coeffs: ChannelCoefficients, tau_values) -> np.ndarray:
    """BCSK 误码率随 τ_m 的变化"""
    taus = np.asarray(tau_values, dtype=float)
    stats = _receiver_stats(coeffs, config)
    curves = [s.bcsk_curve(taus * config.n1) for s in stats]
    return (curves[0] + curves[1]) / 2.0


def _argmin_first(values: np.ndarray) -> int:
    return int(np.flatnonzero(values == values.min())[0])


def optimal_threshold(config: LinkConfig, coeffs: ChannelCoefficients,
                      tau_values=None) -> Tuple[float, float]:
    """
    穷举网格 + 一次局部细化，求使 BCSK 误码率最小的 τ_m

    Returns:
        (tau_m*, ber*)；并列时取较小的 τ_m
    """
    if tau_values is None:
        tau_values = np.linspace(0.0, 0.25, 51)
    taus = np.asarray(tau_values, dtype=float)
    stats = _receiver_stats(coeffs, config)

    def curve(values):
        return (stats[0].bcsk_curve(values * config.n1) + stats[1].bcsk_curve(values * config.n1)) / 2.0

    coarse = curve(taus)
    best = _argmin_first(coarse)
    if taus.size > 1:
        lo = taus[max(best - 1, 0)]
        hi = taus[min(best + 1, taus.size - 1)]
        fine_taus = np.unique(np.concatenate([np.linspace(lo, hi, ZOOM_POINTS), [taus[best]]]))
        fine = curve(fine_taus)
        idx = _argmin_first(fine)
        if fine[idx] < coarse[best]:
            return float(fine_taus[idx]), float(fine[idx])
    return float(taus[best]), float(coarse[best])


def qcsk_thresholds(n1: int, gain: float, offset: float) -> Tuple[float, float, float]:
    """QCSK 阈值族 τ_dk = n1·(offset + gain·(2k−1)/6)，gain=1、offset=0 为发射电平中点"""
    return tuple(n1 * (offset + gain * (2 * k - 1) / 6.0) for k in (1, 2, 3))


def paired_main_tap(config: LinkConfig, coeffs: ChannelCoefficients) -> float:
    """两个接收机配对主抽头 g[0] 的平均值，即当前符号到达判决时隙的比例"""
    taps = [receiver_taps(coeffs, config, j)[0][0] for j in (1, 2)]
    return float(np.mean(taps))


def optimal_qcsk_thresholds(config: LinkConfig, coeffs: ChannelCoefficients,
                            gains=None, offsets=None) -> Tuple[Tuple[float, float, float], float]:
    """
    在 (gain, offset) 网格上穷举 QCSK 阈值

    默认网格以配对主抽头 g[0] 缩放，阈值落在接收电平 n1·g[0]·k/3 之间；
    显式传入的 gains/offsets 按 n1 的比例解释，不再缩放。

    Returns:
        (阈值, 符号错误率)；并列时取网格中较早的点
    """
    if config.scheme != 'QCSK':
        config = config.with_(scheme='QCSK')
    scale = paired_main_tap(config, coeffs) if gains is None or offsets is None else 1.0
    if scale <= 0:
        scale = 1.0
    gains = scale * np.linspace(0.5, 1.5, 21) if gains is None else np.asarray(gains, dtype=float)
    offsets = scale * np.linspace(0.0, 0.5, 26) if offsets is None else np.asarray(offsets, dtype=float)
    stats = _receiver_stats(coeffs, config)

    best_th, best_err = None, math.inf
    for gain in gains:
        if gain <= 0:
            continue
        for offset in offsets:
            th = np.asarray(qcsk_thresholds(config.n1, gain, offset))
            err = (stats[0].symbol_error(th) + stats[1].symbol_error(th)) / 2.0
            if err < best_err:
                best_th, best_err = tuple(float(v) for v in th), err
    log.debug(f"QCSK 最优阈值: {best_th} SER={best_err:.4g}")
    return best_th, best_err


class BerEvaluator:
    """
    (τ_m, T_c) → 理论误码率

    row(T_c, taus) 对同一 T_c 的一整行 τ_m 一次求值，均值与方差只依赖 T_c。
    """

    def __init__(self, model, config: LinkConfig):
        self.model = model
        self.config = config

    def _config_at(self, T_c: float) -> LinkConfig:
        a_sic = self.config.a_sic or T_c > 0
        return self.config.with_(T_c=float(T_c), a_sic=a_sic)

    def row(self, T_c: float, taus) -> np.ndarray:
        config = self._config_at(T_c)
        coeffs = link_coefficients(self.model, config)
        return ber_curve(config, coeffs, taus)

    def __call__(self, tau_m: float, T_c: float) -> float:
        return float(self.row(T_c, [tau_m])[0])
