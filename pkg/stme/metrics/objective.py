"""
客观指标：SI-SDR、STOI（16 kHz 下不重采样）与作为指标使用的 STMI
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.signal import windows

from stme.config import SI_SDR_CAP_DB
from stme.errors import SampleRateMismatchError, ShapeMismatchError, SignalTooShortError, ZeroPowerError
from stme.modulation.mel import mel_filterbank, mel_log_power
from stme.modulation.models import MelFilterbank, StrfKernelBank
from stme.modulation.stmr import stmi_template
from stme.signal.models import Waveform
from stme.spectral.models import StftConfig
from stme.spectral.stft import stft

logger = logging.getLogger(__name__)

SI_SDR_MIN_SAMPLES = 1600

# STOI参数（16 kHz）：帧长512/帧移256 ≈ 32/16 ms，24帧 = 384 ms
STOI_FS = 16000
STOI_FRAME = 512
STOI_NFFT = 1024
STOI_BANDS = 15
STOI_MIN_FREQ_HZ = 150.0
STOI_SEGMENT_FRAMES = 24
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0
STOI_MIN_SECONDS = 3.0

_EPS = np.finfo(np.float64).eps

def _check_pair(reference: Waveform, estimate: Waveform):
    if reference.sample_rate_hz != estimate.sample_rate_hz:
        raise SampleRateMismatchError(f"采样率不一致: {reference.sample_rate_hz} vs {estimate.sample_rate_hz}")
    if len(reference) != len(estimate):
        raise ShapeMismatchError(f"长度不一致: {len(reference)} vs {len(estimate)}")

def si_sdr(reference: Waveform, estimate: Waveform) -> float:
    """
    α = ⟨e,r⟩/⟨r,r⟩，SI-SDR = 10·log10(||α·r||² / ||e − α·r||²)，结果裁剪到 ±80 dB

    Raises:
        ZeroPowerError: 参考信号全零
        SignalTooShortError: 短于1600个样本
    """
    _check_pair(reference, estimate)
    if len(reference) < SI_SDR_MIN_SAMPLES:
        raise SignalTooShortError(f"SI-SDR至少需要 {SI_SDR_MIN_SAMPLES} 个样本: {len(reference)}")
    r, e = reference.samples, estimate.samples
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise ZeroPowerError("SI-SDR的参考信号为全零")
    target = (float(np.dot(e, r)) / ref_energy) * r
    residual = e - target
    target_energy = float(np.dot(target, target))
    residual_energy = float(np.dot(residual, residual))
    if residual_energy == 0.0:
        return SI_SDR_CAP_DB
    if target_energy == 0.0:
        return -SI_SDR_CAP_DB
    value = 10.0 * np.log10(target_energy / residual_energy)
    return float(np.clip(value, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))

def third_octave_matrix(fs: int = STOI_FS, n_fft: int = STOI_NFFT, bands: int = STOI_BANDS,
                        min_freq_hz: float = STOI_MIN_FREQ_HZ) -> Tuple[np.ndarray, np.ndarray]:
    """
    1/3倍频程带矩阵，边界取最近的DFT频点

    Returns:
        (bands × (n_fft/2+1) 的0/1矩阵, 中心频率)
    """
    freqs = np.linspace(0, fs, n_fft + 1)[:n_fft // 2 + 1]
    k = np.arange(bands, dtype=np.float64)
    centers = min_freq_hz * 2.0 ** (k / 3.0)
    lower = min_freq_hz * 2.0 ** ((2 * k - 1) / 6.0)
    upper = min_freq_hz * 2.0 ** ((2 * k + 1) / 6.0)
    matrix = np.zeros((bands, freqs.size))
    for i in range(bands):
        lo = int(np.argmin((freqs - lower[i]) ** 2))
        hi = int(np.argmin((freqs - upper[i]) ** 2))
        matrix[i, lo:hi] = 1.0
    return matrix, centers

def _stoi_window() -> np.ndarray:
    return windows.hann(STOI_FRAME + 2)[1:-1]

def _frames(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    n = (len(x) - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]

def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range_db: float = STOI_DYN_RANGE_DB,
                         frame: int = STOI_FRAME, hop: int = STOI_FRAME // 2) -> Tuple[np.ndarray, np.ndarray]:
    """按参考信号的帧能量去掉比最强帧低 dyn_range_db 以上的帧，再重叠相加拼回两路信号"""
    w = _stoi_window()
    x_frames = _frames(x, frame, hop) * w
    y_frames = _frames(y, frame, hop) * w
    energies = 20.0 * np.log10(np.linalg.norm(x_frames, axis=1) + _EPS)
    keep = (np.max(energies) - dyn_range_db - energies) < 0
    x_frames, y_frames = x_frames[keep], y_frames[keep]
    n_kept = x_frames.shape[0]
    length = (n_kept - 1) * hop + frame if n_kept else 0
    x_out, y_out = np.zeros(length), np.zeros(length)
    for i in range(n_kept):
        x_out[i * hop:i * hop + frame] += x_frames[i]
        y_out[i * hop:i * hop + frame] += y_frames[i]
    return x_out, y_out

def _band_envelopes(x: np.ndarray, octave: np.ndarray) -> np.ndarray:
    """bands × frames 的1/3倍频程带幅度"""
    spec = np.fft.rfft(_frames(x, STOI_FRAME, STOI_FRAME // 2) * _stoi_window(), n=STOI_NFFT, axis=1)
    return np.sqrt(octave @ (np.abs(spec) ** 2).T)

def stoi(reference: Waveform, degraded: Waveform) -> float:
    """
    短时客观可懂度：去静音帧 → 1/3倍频程分解 → 384 ms 短时段上裁剪后的归一化相关，对带与段取平均

    Raises:
        SampleRateMismatchError: 非16 kHz输入
        SignalTooShortError: 短于3 s，或去静音后不足一个短时段
        ZeroPowerError: 参考信号全零
    """
    _check_pair(reference, degraded)
    if reference.sample_rate_hz != STOI_FS:
        raise SampleRateMismatchError(f"STOI要求 {STOI_FS} Hz 输入: {reference.sample_rate_hz}")
    if len(reference) < STOI_MIN_SECONDS * STOI_FS:
        raise SignalTooShortError(f"STOI至少需要 {STOI_MIN_SECONDS} s 输入: {reference.duration_s:.3f} s")
    if not np.any(reference.samples):
        raise ZeroPowerError("STOI的参考信号全为静音")

    x, y = remove_silent_frames(reference.samples, degraded.samples)
    n_frames = (len(x) - STOI_FRAME) // (STOI_FRAME // 2) + 1 if len(x) >= STOI_FRAME else 0
    if n_frames < STOI_SEGMENT_FRAMES:
        raise SignalTooShortError(f"去除静音帧后仅剩 {n_frames} 帧，不足一个短时段 ({STOI_SEGMENT_FRAMES} 帧)")

    octave, _ = third_octave_matrix()
    x_env = _band_envelopes(x, octave)
    y_env = _band_envelopes(y, octave)
    clip = 10.0 ** (-STOI_BETA_DB / 20.0)

    n = STOI_SEGMENT_FRAMES
    scores = []
    for m in range(n, x_env.shape[1] + 1):
        x_seg = x_env[:, m - n:m]
        y_seg = y_env[:, m - n:m]
        alpha = np.sqrt(np.sum(x_seg ** 2, axis=1, keepdims=True) / (np.sum(y_seg ** 2, axis=1, keepdims=True) + _EPS))
        y_prime = np.minimum(alpha * y_seg, x_seg * (1.0 + clip))
        xc = x_seg - x_seg.mean(axis=1, keepdims=True)
        yc = y_prime - y_prime.mean(axis=1, keepdims=True)
        xc /= np.linalg.norm(xc, axis=1, keepdims=True) + _EPS
        yc /= np.linalg.norm(yc, axis=1, keepdims=True) + _EPS
        scores.append(np.sum(xc * yc, axis=1).mean())
    return float(np.mean(scores))

def stmi(reference: Waveform, degraded: Waveform, bank: StrfKernelBank,
         mel_bank: Optional[MelFilterbank] = None, cfg: Optional[StftConfig] = None) -> float:
    """两段波形各自 stft → Mel对数谱 后的模板STMI"""
    _check_pair(reference, degraded)
    cfg = cfg or StftConfig(sample_rate_hz=reference.sample_rate_hz)
    mel_bank = mel_bank or mel_filterbank(cfg.sample_rate_hz, cfg.n_fft)
    mel_ref = mel_log_power(stft(reference, cfg), mel_bank)
    mel_deg = mel_log_power(stft(degraded, cfg), mel_bank)
    return stmi_template(mel_ref, mel_deg, bank)
