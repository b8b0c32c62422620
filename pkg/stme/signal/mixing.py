from dataclasses import dataclass
import logging
import math

import numpy as np

from stme.errors import SampleRateMismatchError, SignalTooShortError, ZeroPowerError
from .models import Waveform

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class Mixture:
    """加性混合结果：noisy = clean + scaled_noise"""
    noisy: Waveform
    scaled_noise: Waveform
    offset: int  # 噪声裁剪起点（样本）
    alpha: float  # 噪声缩放系数

def measured_snr_db(clean: Waveform, noise: Waveform) -> float:
    """10·log10(P_clean / P_noise)"""
    p_noise = noise.power()
    if p_noise <= 0.0:
        raise ZeroPowerError("噪声功率为0，无法计算SNR")
    return 10.0 * math.log10(clean.power() / p_noise)

def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, seed: int = 0) -> Mixture:
    """
    按给定SNR混合干净语音与噪声（时域加性模型）

    噪声从种子决定的均匀随机起点裁剪为clean的长度，缩放系数
    alpha = sqrt(P_clean / (P_noise · 10^(snr/10)))，功率在裁剪段上计算。

    Raises:
        SampleRateMismatchError: 采样率不一致
        SignalTooShortError: 噪声短于干净语音
        ZeroPowerError: 干净语音或噪声段功率为0
    """
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise SampleRateMismatchError(f"采样率不一致: clean {clean.sample_rate_hz} Hz, noise {noise.sample_rate_hz} Hz")
    if len(noise) < len(clean):
        raise SignalTooShortError(f"噪声长度 {len(noise)} 短于干净语音长度 {len(clean)}")
    if not math.isfinite(snr_db):
        raise ValueError(f"SNR必须为有限值: {snr_db}")

    p_clean = clean.power()
    if p_clean <= 0.0:
        raise ZeroPowerError("干净语音功率为0")

    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise) - len(clean) + 1))
    segment = noise.samples[offset:offset + len(clean)]
    p_noise = float(np.mean(segment * segment)) if len(segment) else 0.0
    if p_noise <= 0.0:
        raise ZeroPowerError(f"噪声段功率为0 (offset={offset})")

    alpha = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = segment * alpha
    noisy = clean.samples + scaled
    logger.debug(f"mix_at_snr: snr={snr_db} dB, offset={offset}, alpha={alpha:.6g}")
    return Mixture(
        noisy=Waveform(noisy, clean.sample_rate_hz),
        scaled_noise=Waveform(scaled, clean.sample_rate_hz),
        offset=offset,
        alpha=alpha,
    )
