"""
系统拓扑模块
两个收发器（点发射机 + 吸收球接收机）的几何参数，以及笛卡尔/双球坐标转换

约定：Rx1 球心在 (0,0,ell-a)，Rx2 球心在 (0,0,-a)，焦点 (0,0,±f)。
这样 Rx1 表面为 mu=mu1>0，Rx2 表面为 mu=-mu2。
Tx_i 在两球心连线上，位于 Rx_i 与另一个接收机之间。
单位固定为 µm 和秒。
"""

import math
from dataclasses import dataclass
from typing import Tuple, Dict

from utils.errors import GeometryError, SingularCoordinateError
from utils.logger import get_module_logger

log = get_module_logger('topology')

Point = Tuple[float, float, float]

# 共线一致性的相对容差
REL_TOL = 1e-9


@dataclass(frozen=True)
class SystemTopology:
    """
    两个收发器的几何与物理参数

    Args:
        r_r1, r_r2: 接收球半径 (µm)
        d1, d2: Tx_i 到 Rx_i 表面的距离 (µm)，d=0 表示发射机贴在接收球表面
        d_tx1_rx2, d_tx2_rx1: Tx_i 到非配对接收球表面的距离 (µm)
        ell: 两球心距离 (µm)
        D: 扩散系数 (µm²/s)，解析信道要求 D > 0
    """
    r_r1: float
    r_r2: float
    d1: float
    d2: float
    d_tx1_rx2: float
    d_tx2_rx1: float
    ell: float
    D: float

    def __post_init__(self):
        for name in ('r_r1', 'r_r2', 'd_tx1_rx2', 'd_tx2_rx1', 'ell'):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise GeometryError(f"{name} 必须为正数: {value}")
        for name in ('d1', 'd2', 'D'):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise GeometryError(f"{name} 不能为负: {value}")

        if self.ell <= self.r_r1 + self.r_r2:
            raise GeometryError(
                f"两个接收球重叠: ell={self.ell} <= r_r1 + r_r2={self.r_r1 + self.r_r2}"
            )

        expected1 = self.r_r1 + self.d1 + self.d_tx1_rx2 + self.r_r2
        expected2 = self.r_r2 + self.d2 + self.d_tx2_rx1 + self.r_r1
        if abs(expected1 - self.ell) > REL_TOL * self.ell:
            raise GeometryError(f"Tx1 距离与 ell 不一致: {expected1} != {self.ell}")
        if abs(expected2 - self.ell) > REL_TOL * self.ell:
            raise GeometryError(f"Tx2 距离与 ell 不一致: {expected2} != {self.ell}")

    @classmethod
    def collinear(cls, r_r1: float, r_r2: float, d1: float, d2: float, ell: float, D: float):
        """按共线放置推导 Tx 到非配对接收机的距离"""
        gap = ell - r_r1 - r_r2
        return cls(
            r_r1=r_r1,
            r_r2=r_r2,
            d1=d1,
            d2=d2,
            d_tx1_rx2=gap - d1,
            d_tx2_rx1=gap - d2,
            ell=ell,
            D=D
        )

    def radius(self, j: int) -> float:
        return self.r_r1 if j == 1 else self.r_r2

    def tx_distance(self, i: int, j: int) -> float:
        """Tx_i 到 Rx_j 表面的距离"""
        if i == 1:
            return self.d1 if j == 1 else self.d_tx1_rx2
        return self.d_tx2_rx1 if j == 1 else self.d2

    def swapped(self) -> 'SystemTopology':
        """交换两个收发器的标签（Tx2 的信道复用 Tx1 的公式）"""
        return SystemTopology(
            r_r1=self.r_r2,
            r_r2=self.r_r1,
            d1=self.d2,
            d2=self.d1,
            d_tx1_rx2=self.d_tx2_rx1,
            d_tx2_rx1=self.d_tx1_rx2,
            ell=self.ell,
            D=self.D
        )


@dataclass(frozen=True)
class BisphericalFrame:
    """双球坐标系参数"""
    a: float
    f: float
    mu1: float
    mu2: float


@dataclass(frozen=True)
class BisphericalPoint:
    """双球坐标点 (mu, eta, phi)，eta ∈ [0, π]，phi ∈ (−π, π]"""
    mu: float
    eta: float
    phi: float


def build_frame(topology: SystemTopology) -> BisphericalFrame:
    """
    由拓扑计算双球坐标系

    Returns:
        BisphericalFrame(a, f, mu1, mu2)
    """
    ell = topology.ell
    r1 = topology.r_r1
    r2 = topology.r_r2

    a = (ell ** 2 + r2 ** 2 - r1 ** 2) / (2 * ell)
    arg1 = (ell - a) / r1
    arg2 = a / r2
    if arg1 <= 1 or arg2 <= 1:
        raise GeometryError(f"acosh 参数 <= 1，接收球重叠: {arg1:.6g}, {arg2:.6g}")

    mu2 = math.acosh(arg2)
    mu1 = math.acosh(arg1)
    f = r2 * math.sinh(mu2)

    log.debug(f"双球坐标: a={a:.6g} f={f:.6g} mu1={mu1:.6g} mu2={mu2:.6g}")
    return BisphericalFrame(a=a, f=f, mu1=mu1, mu2=mu2)


def to_bispherical(p: Point, frame: BisphericalFrame) -> BisphericalPoint:
    """笛卡尔坐标 → 双球坐标（焦点 (0,0,±f)）"""
    x, y, z = (float(v) for v in p)
    f = frame.f
    rho2 = x * x + y * y

    # 到两个焦点的距离平方
    dist_plus = (z + f) ** 2 + rho2
    dist_minus = (z - f) ** 2 + rho2
    if dist_plus == 0.0 or dist_minus == 0.0 or \
            (rho2 == 0.0 and abs(abs(z) - f) <= 1e-12 * f):
        raise SingularCoordinateError(f"点位于焦点上: {p}")

    mu = 0.5 * math.log(dist_plus / dist_minus)
    eta = math.atan2(2 * f * math.sqrt(rho2), rho2 + z * z - f * f)
    phi = math.atan2(y, x)
    if phi <= -math.pi:
        phi += 2 * math.pi

    return BisphericalPoint(mu=mu, eta=eta, phi=phi)


def from_bispherical(bp: BisphericalPoint, frame: BisphericalFrame) -> Point:
    """双球坐标 → 笛卡尔坐标"""
    denom = math.cosh(bp.mu) - math.cos(bp.eta)
    if denom <= 0:
        raise SingularCoordinateError(f"无穷远点: {bp}")
    scale = frame.f / denom
    return (
        scale * math.sin(bp.eta) * math.cos(bp.phi),
        scale * math.sin(bp.eta) * math.sin(bp.phi),
        scale * math.sinh(bp.mu)
    )


def receiver_centers(topology: SystemTopology, frame: BisphericalFrame) -> Tuple[Point, Point]:
    """Rx1、Rx2 球心"""
    return (0.0, 0.0, topology.ell - frame.a), (0.0, 0.0, -frame.a)


def transmitter_position(topology: SystemTopology, frame: BisphericalFrame, i: int) -> Point:
    """共线放置下 Tx_i 的笛卡尔坐标"""
    if i == 1:
        return (0.0, 0.0, topology.ell - frame.a - topology.r_r1 - topology.d1)
    return (0.0, 0.0, -frame.a + topology.r_r2 + topology.d2)


def reconstruct_spheres(frame: BisphericalFrame) -> Dict[str, float]:
    """由 (f, mu1, mu2) 反推球心与半径"""
    r1 = frame.f / math.sinh(frame.mu1)
    r2 = frame.f / math.sinh(frame.mu2)
    z1 = frame.f / math.tanh(frame.mu1)
    z2 = -frame.f / math.tanh(frame.mu2)
    return {
        'r_r1': r1,
        'r_r2': r2,
        'z_rx1': z1,
        'z_rx2': z2,
        'ell': z1 - z2,
        'a': -z2
    }


def surface_distance(p: Point, center: Point, radius: float) -> float:
    """点到球面的距离（球内为负）"""
    return math.dist(p, center) - radius


def surface_clearances(topology: SystemTopology, p: Point) -> Tuple[float, float]:
    """点到 Rx1、Rx2 表面的距离"""
    frame = build_frame(topology)
    c1, c2 = receiver_centers(topology, frame)
    return surface_distance(p, c1, topology.r_r1), surface_distance(p, c2, topology.r_r2)
