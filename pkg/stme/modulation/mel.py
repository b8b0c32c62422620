from typing import Union

import librosa
import numpy as np

from stme.config import SAMPLE_RATE_HZ, N_FFT, MEL_BANDS, MEL_FMIN_HZ, MEL_FMAX_HZ, LOG_FLOOR
from stme.errors import ShapeMismatchError
from stme.grad.tape import Tape, Tensor
from stme.spectral.models import ComplexSpectrogram
from .models import MelFilterbank, MelLogSpectrogram

def mel_filterbank(sample_rate_hz: int = SAMPLE_RATE_HZ, n_fft: int = N_FFT, bands: int = MEL_BANDS,
                   fmin_hz: float = MEL_FMIN_HZ, fmax_hz: float = MEL_FMAX_HZ) -> MelFilterbank:
    """
    Mel刻度三角滤波器组（HTK公式，峰值为1，不做面积归一化）

    Raises:
        ValueError: 参数组合导致空频带
    """
    weights = librosa.filters.mel(sr=sample_rate_hz, n_fft=n_fft, n_mels=bands,
                                  fmin=fmin_hz, fmax=fmax_hz, htk=True, norm=None, dtype=np.float64)
    return MelFilterbank(weights)

def _check_bins(bins: int, bank: MelFilterbank):
    if bins != bank.bins:
        raise ShapeMismatchError(f"谱频点数 {bins} 与Mel滤波器组频点数 {bank.bins} 不一致")

def mel_log_power(spec: Union[ComplexSpectrogram, np.ndarray], bank: MelFilterbank,
                  floor: float = LOG_FLOOR) -> MelLogSpectrogram:
    """
    out[t,b] = ln(max(Σ_k weights[b,k]·|spec[t,k]|², floor))

    Args:
        spec: 复数谱，或已经是 T×K 功率谱的数组
    """
    if isinstance(spec, ComplexSpectrogram):
        power, frame_rate = spec.power, spec.config.frame_rate_hz
    else:
        power, frame_rate = np.asarray(spec, dtype=np.float64), None
    if power.ndim != 2:
        raise ShapeMismatchError(f"功率谱必须为二维 T×K: {power.shape}")
    _check_bins(power.shape[1], bank)
    data = np.log(np.maximum(power @ bank.weights.T, floor))
    if frame_rate is None:
        return MelLogSpectrogram(data)
    return MelLogSpectrogram(data, frame_rate)

def mel_log_power_on_tape(tape: Tape, power: Tensor, bank: MelFilterbank, floor: float = LOG_FLOOR) -> Tensor:
    """带上的可微版本：power (..., T, K) → (..., T, B)"""
    _check_bins(power.shape[-1], bank)
    return tape.log_guarded(tape.matmul(power, bank.weights.T), floor)
