"""
输出文件管理
CSV 写出（首行为配置哈希注释）与运行清单
"""

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import List

import pandas as pd

FLOAT_FORMAT = '%.12g'


def config_hash(text: str) -> str:
    """配置文本的 SHA-256（忽略行尾空白与空行）"""
    lines = [line.rstrip() for line in text.splitlines() if line.strip()]
    return hashlib.sha256('\n'.join(lines).encode('utf-8')).hexdigest()[:16]


def write_csv(df: pd.DataFrame, path: str, cfg_hash: str, summary: dict = None) -> str:
    """
    写出 CSV：第一行为 `# config_hash=...` 注释，其后为表头和数据

    Args:
        df: 数据
        path: 输出路径
        cfg_hash: 配置哈希
        summary: 附加在注释行中的摘要（如热力图最优点）
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    comment = f"# config_hash={cfg_hash}"
    if summary:
        comment += ' ' + ' '.join(f"{k}={_format_value(v)}" for k, v in summary.items())
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(comment + '\n')
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def read_csv(path: str) -> pd.DataFrame:
    """读取 write_csv 写出的文件"""
    return pd.read_csv(path, comment='#')


def _format_value(value) -> str:
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)


@dataclass
class RunManifest:
    """一次命令的运行清单"""
    command: str
    config_hash: str
    seed: int
    version: str
    outputs: List[str] = field(default_factory=list)
    started: float = field(default_factory=time.time)
    wall_time: float = 0.0

    def add(self, path: str) -> str:
        self.outputs.append(path)
        return path

    def finish(self):
        self.wall_time = time.time() - self.started

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'version': self.version,
            'wall_time_s': round(self.wall_time, 3),
            'outputs': list(self.outputs)
        }

    def write(self, out_dir: str) -> str:
        """写出 manifest.txt（key=value 文本）"""
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, 'manifest.txt')
        with open(path, 'w', encoding='utf-8') as f:
            for key, value in self.to_dict().items():
                if key == 'outputs':
                    for item in value:
                        f.write(f"output={item}\n")
                else:
                    f.write(f"{key}={value}\n")
        return path

    def journal_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)
