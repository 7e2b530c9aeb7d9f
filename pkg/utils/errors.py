"""
异常定义
所有领域错误都继承 McvdError，CLI 根据类型映射退出码
"""


class McvdError(Exception):
    """工具包基础异常"""


class GeometryError(McvdError, ValueError):
    """几何参数非法（球体重叠、长度非正等）"""


class DegenerateGeometryError(GeometryError):
    """虚拟点距离的分母非正，无法求解"""


class SingularCoordinateError(GeometryError):
    """双球坐标在焦点处奇异"""


class DomainError(McvdError, ValueError):
    """输入超出定义域（发射点在接收球内部、T_c >= t_s 等）"""


class EnumerationLimitError(DomainError):
    """理论误码率枚举规模超过上限"""


class NonConvergenceError(McvdError):
    """搜索无法收敛或无法找到区间"""


class ConfigError(McvdError, ValueError):
    """配置文件缺少字段或格式错误"""

    def __init__(self, message: str, key: str = None, line: int = None):
        self.key = key
        self.line = line
        detail = message
        if key:
            detail += f" (key: {key})"
        if line is not None:
            detail += f" (line {line})"
        super().__init__(detail)
