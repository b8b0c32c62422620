from dataclasses import dataclass, field
import numpy as np
from scipy.signal import get_window

from stme.config import SAMPLE_RATE_HZ, WIN_LEN, HOP, N_FFT, NORM_DECAY, VARIANCE_FLOOR
from stme.errors import NonFiniteError, ShapeMismatchError

@dataclass(frozen=True)
class StftConfig:
    """STFT参数：周期Hamming窗，50%重叠"""
    sample_rate_hz: int = SAMPLE_RATE_HZ
    win_len: int = WIN_LEN
    hop: int = HOP
    n_fft: int = N_FFT

    def __post_init__(self):
        if self.win_len <= 0 or self.win_len % 2 != 0:
            raise ValueError(f"窗长必须为正偶数: {self.win_len}")
        if self.hop * 2 != self.win_len:
            raise ValueError(f"帧移必须为窗长的一半: hop={self.hop}, win_len={self.win_len}")
        if self.n_fft < self.win_len:
            raise ValueError(f"n_fft ({self.n_fft}) 不能小于窗长 ({self.win_len})")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"采样率必须大于0: {self.sample_rate_hz}")

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hop

    @property
    def window(self) -> np.ndarray:
        # 周期窗：0.54 - 0.46·cos(2πn/N)
        return get_window('hamming', self.win_len, fftbins=True)

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.win_len:
            return 0
        return (num_samples - self.win_len) // self.hop + 1

@dataclass(frozen=True)
class ComplexSpectrogram:
    """T帧 × K个频点的复数谱"""
    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise ShapeMismatchError(f"谱必须为二维 T×K，实际维度 {data.shape}")
        if data.shape[1] != self.config.bins:
            raise ShapeMismatchError(f"频点数 {data.shape[1]} 与配置 {self.config.bins} 不一致")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("谱中存在非有限值")
        object.__setattr__(self, 'data', data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    @property
    def power(self) -> np.ndarray:
        return self.data.real ** 2 + self.data.imag ** 2

@dataclass(frozen=True)
class NormalizerState:
    """频率相关在线归一化的状态：逐频点滑动均值与方差"""
    mean: np.ndarray
    var: np.ndarray
    decay: float = NORM_DECAY
    frames_seen: int = 0
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"decay必须在[0,1)内: {self.decay}")
        mean = np.array(self.mean, dtype=np.float64)
        var = np.maximum(np.array(self.var, dtype=np.float64), self.variance_floor)
        if mean.shape != var.shape:
            raise ShapeMismatchError(f"mean {mean.shape} 与 var {var.shape} 形状不一致")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'var', var)

    @staticmethod
    def fresh(bins: int, decay: float = NORM_DECAY, variance_floor: float = VARIANCE_FLOOR) -> 'NormalizerState':
        """初始状态：均值0，方差1"""
        return NormalizerState(np.zeros(bins), np.ones(bins), decay, 0, variance_floor)
