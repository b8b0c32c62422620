from dataclasses import dataclass
import numpy as np

from stme.config import SAMPLE_RATE_HZ
from stme.errors import NonFiniteError

@dataclass(frozen=True)
class Waveform:
    """单声道音频：样本（名义范围[-1,1]）与采样率"""
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise NonFiniteError("Waveform samples must be finite")
        if int(self.sample_rate_hz) <= 0 or int(self.sample_rate_hz) != self.sample_rate_hz:
            raise ValueError(f"采样率必须为正整数: {self.sample_rate_hz}")
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate_hz', int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def power(self) -> float:
        """平均功率 mean(x^2)"""
        if len(self) == 0:
            return 0.0
        return float(np.mean(self.samples * self.samples))

    def crop(self, offset: int, length: int) -> 'Waveform':
        if offset < 0 or offset + length > len(self):
            raise ValueError(f"Crop [{offset}, {offset + length}) out of range for {len(self)} samples")
        return Waveform(self.samples[offset:offset + length], self.sample_rate_hz)

    def scaled(self, gain: float) -> 'Waveform':
        return Waveform(self.samples * gain, self.sample_rate_hz)
