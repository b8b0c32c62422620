from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np

from stme.config import SAMPLE_RATE_HZ
from .models import Waveform

PEAK_LEVEL = 0.5

@dataclass(frozen=True)
class SurrogateClass:
    """替代语音的类别特征"""
    f0_hz: float  # 基频
    am_rate_hz: float  # 幅度调制速率
    formant_hz: float  # 共振峰扫动中心

# 固定的8类表（基频90-220 Hz，调制速率2-8 Hz）
SURROGATE_CLASSES: List[SurrogateClass] = [
    SurrogateClass(90.0, 2.0, 700.0),
    SurrogateClass(105.0, 5.0, 1500.0),
    SurrogateClass(120.0, 3.0, 2200.0),
    SurrogateClass(140.0, 7.0, 900.0),
    SurrogateClass(160.0, 4.0, 1800.0),
    SurrogateClass(180.0, 8.0, 1100.0),
    SurrogateClass(200.0, 2.5, 2500.0),
    SurrogateClass(220.0, 6.0, 1300.0),
]

class NoiseKind(Enum):
    WHITE = 'white'
    PINK = 'pink'
    MODULATED = 'modulated'

    @staticmethod
    def from_string(kind_str: str) -> 'NoiseKind':
        for kind in NoiseKind:
            if kind.value == kind_str:
                return kind
        raise ValueError(f"Unknown noise kind: {kind_str}")

def _num_samples(duration_s: float, sample_rate_hz: int) -> int:
    if not duration_s > 0:
        raise ValueError(f"时长必须大于0: {duration_s}")
    return max(1, int(round(duration_s * sample_rate_hz)))

def _peak_normalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak <= 0.0:
        return x
    return x * (PEAK_LEVEL / peak)

def synth_surrogate_speech(seed: int, duration_s: float, class_id: int, sample_rate_hz: int = SAMPLE_RATE_HZ) -> Waveform:
    """
    合成替代语音：谐波复合音 + 2-8 Hz正弦幅度调制 + 缓慢的共振峰扫动，峰值归一化到0.5

    class_id决定基频、调制速率与共振峰中心；seed决定谐波相位、基频微扰与扫动相位。
    """
    n = _num_samples(duration_s, sample_rate_hz)
    if not 0 <= class_id < len(SURROGATE_CLASSES):
        raise ValueError(f"class_id超出范围[0, {len(SURROGATE_CLASSES)}): {class_id}")
    cls = SURROGATE_CLASSES[class_id]
    rng = np.random.default_rng([seed, class_id])

    t = np.arange(n) / sample_rate_hz
    f0 = cls.f0_hz * (1.0 + 0.02 * rng.uniform(-1.0, 1.0))
    # 缓慢的基频漂移
    f0_t = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi)))
    base_phase = 2 * np.pi * np.cumsum(f0_t) / sample_rate_hz

    formant_t = cls.formant_hz * (1.0 + 0.35 * np.sin(2 * np.pi * 0.5 * t + rng.uniform(0, 2 * np.pi)))
    n_harmonics = int(min(5000.0, 0.45 * sample_rate_hz) // (f0 * 1.05))
    harmonics = np.arange(1, n_harmonics + 1)[:, None]
    phases = rng.uniform(0, 2 * np.pi, size=(n_harmonics, 1))

    # 谐波幅度：1/sqrt(h)倾斜 × 共振峰包络
    freqs = harmonics * f0_t[None, :]
    amplitude = (0.3 + np.exp(-((freqs - formant_t[None, :]) / 400.0) ** 2)) / np.sqrt(harmonics)
    voiced = np.sum(amplitude * np.sin(harmonics * base_phase[None, :] + phases), axis=0)

    am = 0.5 * (1.0 + 0.8 * np.sin(2 * np.pi * cls.am_rate_hz * t + rng.uniform(0, 2 * np.pi)))
    return Waveform(_peak_normalize(voiced * am), sample_rate_hz)

def synth_noise(kind: str, seed: int, duration_s: float, sample_rate_hz: int = SAMPLE_RATE_HZ) -> Waveform:
    """
    合成噪声：white / pink（-3 dB/倍频程频谱整形）/ modulated（白噪声 × 4 Hz正弦调幅），峰值归一化到0.5
    """
    noise_kind = kind if isinstance(kind, NoiseKind) else NoiseKind.from_string(kind)
    n = _num_samples(duration_s, sample_rate_hz)
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)

    if noise_kind == NoiseKind.WHITE:
        x = white
    elif noise_kind == NoiseKind.PINK:
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
        shaping = np.zeros_like(freqs)
        shaping[1:] = 1.0 / np.sqrt(freqs[1:])
        x = np.fft.irfft(spectrum * shaping, n=n)
    else:
        t = np.arange(n) / sample_rate_hz
        x = white * 0.5 * (1.0 + 0.9 * np.sin(2 * np.pi * 4.0 * t))
    return Waveform(_peak_normalize(x), sample_rate_hz)
