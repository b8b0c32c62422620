from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from stme.config import FRAME_RATE_HZ, KERNEL_FRAMES, KERNEL_CHANNELS, RATE_MAX_HZ, SCALE_MAX_CPC
from stme.errors import NonFiniteError, ShapeMismatchError

# 包络宽度缺省为核支撑的1/6
DEFAULT_T_SIGMA_S = KERNEL_FRAMES / 6.0 / FRAME_RATE_HZ
DEFAULT_F_SIGMA = KERNEL_CHANNELS / 6.0

@dataclass(frozen=True)
class MelFilterbank:
    """B个频带 × K个频点的非负积分权重"""
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeMismatchError(f"Mel权重必须为二维 B×K: {weights.shape}")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("Mel权重必须非负且有限")
        empty = np.flatnonzero(weights.sum(axis=1) <= 0)
        if len(empty):
            raise ValueError(f"存在空的Mel频带: {empty.tolist()}")
        weights.setflags(write=False)
        object.__setattr__(self, 'weights', weights)

    @property
    def bands(self) -> int:
        return self.weights.shape[0]

    @property
    def bins(self) -> int:
        return self.weights.shape[1]

@dataclass(frozen=True)
class MelLogSpectrogram:
    """T帧 × B通道的对数Mel功率"""
    data: np.ndarray
    frame_rate_hz: float = FRAME_RATE_HZ

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeMismatchError(f"Mel对数谱必须为二维 T×B: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("Mel对数谱中存在非有限值")
        object.__setattr__(self, 'data', data)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

class Direction(Enum):
    UP = 'up'
    DOWN = 'down'

    @property
    def sign(self) -> float:
        return 1.0 if self == Direction.UP else -1.0

    @staticmethod
    def from_string(direction_str: str) -> 'Direction':
        for direction in Direction:
            if direction.value == direction_str:
                return direction
        raise ValueError(f"Unknown direction: {direction_str}")

@dataclass(frozen=True)
class GaborStrfParams:
    """Gabor型STRF参数：时间调制率、频谱调制尺度、扫动方向、相位、包络宽度"""
    rate_hz: float
    scale_cpc: float
    direction: Direction = Direction.UP
    phase_rad: float = 0.0
    t_sigma: float = DEFAULT_T_SIGMA_S  # 秒
    f_sigma: float = DEFAULT_F_SIGMA  # 通道

    def __post_init__(self):
        if isinstance(self.direction, str):
            object.__setattr__(self, 'direction', Direction.from_string(self.direction))
        for name in ('rate_hz', 'scale_cpc', 'phase_rad', 't_sigma', 'f_sigma'):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"{name}必须有限: {value}")
            object.__setattr__(self, name, value)
        if not 0.0 <= self.rate_hz < RATE_MAX_HZ:
            raise ValueError(f"rate_hz必须在[0, {RATE_MAX_HZ})内: {self.rate_hz}")
        if not 0.0 <= self.scale_cpc < SCALE_MAX_CPC:
            raise ValueError(f"scale_cpc必须在[0, {SCALE_MAX_CPC})内: {self.scale_cpc}")
        if self.t_sigma <= 0 or self.f_sigma <= 0:
            raise ValueError(f"包络宽度必须大于0: t_sigma={self.t_sigma}, f_sigma={self.f_sigma}")

    def to_dict(self) -> dict:
        return {
            'rate_hz': self.rate_hz,
            'scale_cpc': self.scale_cpc,
            'direction': self.direction.value,
            'phase_rad': self.phase_rad,
            't_sigma': self.t_sigma,
            'f_sigma': self.f_sigma,
        }

@dataclass(frozen=True, eq=False)
class StrfKernel:
    """T_k帧 × C_k通道的零均值、单位范数核"""
    matrix: np.ndarray
    params: Optional[GaborStrfParams] = None  # 非Gabor核（外部给定或测试用）为None

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeMismatchError(f"核矩阵必须为二维: {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise NonFiniteError("核矩阵中存在非有限值")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

@dataclass(frozen=True, eq=False)
class StrfKernelBank:
    kernels: Tuple[StrfKernel, ...]
    frame_rate_hz: float = FRAME_RATE_HZ
    _stacked: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ValueError("核组至少包含一个核")
        shapes = {k.shape for k in kernels}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"核组内形状不一致: {sorted(shapes)}")
        stacked = np.stack([k.matrix for k in kernels])
        stacked.setflags(write=False)
        object.__setattr__(self, 'kernels', kernels)
        object.__setattr__(self, '_stacked', stacked)

    def __len__(self) -> int:
        return len(self.kernels)

    @property
    def kernel_frames(self) -> int:
        return self.kernels[0].shape[0]

    @property
    def kernel_channels(self) -> int:
        return self.kernels[0].shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """N × T_k × C_k"""
        return self._stacked

    @property
    def params(self) -> Tuple[GaborStrfParams, ...]:
        return tuple(k.params for k in self.kernels)

@dataclass(frozen=True)
class ResponseMap:
    """单个核的valid互相关响应 (T−T_k+1) × (B−C_k+1)"""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeMismatchError(f"响应图必须为二维: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("响应图中存在非有限值")
        object.__setattr__(self, 'data', data)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape
