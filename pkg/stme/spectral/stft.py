import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from stme.errors import NonFiniteError, SampleRateMismatchError, SignalTooShortError
from stme.signal.models import Waveform
from .models import StftConfig, ComplexSpectrogram

def frame_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """分帧：第t帧覆盖 [t·hop, t·hop + win_len)，不补边"""
    n_frames = cfg.num_frames(len(samples))
    return sliding_window_view(samples, cfg.win_len)[::cfg.hop][:n_frames]

def stft_frames(frames: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """加窗、补零到n_fft后做单边DFT"""
    return np.fft.rfft(frames * cfg.window, n=cfg.n_fft, axis=-1)

def stft(w: Waveform, cfg: StftConfig = None) -> ComplexSpectrogram:
    """
    短时傅里叶变换（无中心化、无边缘补零）

    Raises:
        SampleRateMismatchError: 采样率与配置不一致
        SignalTooShortError: 信号短于一个窗长
    """
    cfg = cfg or StftConfig()
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise SampleRateMismatchError(f"波形采样率 {w.sample_rate_hz} Hz 与STFT配置 {cfg.sample_rate_hz} Hz 不一致")
    if len(w) < cfg.win_len:
        raise SignalTooShortError(f"信号长度 {len(w)} 短于窗长 {cfg.win_len}")
    return ComplexSpectrogram(stft_frames(frame_signal(w.samples, cfg), cfg), cfg)

def synthesis_frames(data: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """逆DFT后截取窗长并再次加窗（加权重叠相加的逐帧部分）"""
    frames = np.fft.irfft(data, n=cfg.n_fft, axis=-1)[..., :cfg.win_len]
    return frames * cfg.window

def window_square_envelope(n_frames: int, cfg: StftConfig) -> np.ndarray:
    """Σ_t w²[n - t·hop]，长度 (T-1)·hop + win_len"""
    length = (n_frames - 1) * cfg.hop + cfg.win_len if n_frames > 0 else 0
    envelope = np.zeros(length)
    w2 = cfg.window ** 2
    for t in range(n_frames):
        envelope[t * cfg.hop:t * cfg.hop + cfg.win_len] += w2
    return envelope

def istft(spec: ComplexSpectrogram, length: int = None) -> Waveform:
    """
    加权重叠相加逆变换：Σ_t w·y_t / Σ_t w²

    Hamming窗50%重叠时 Σw 恒为1.08，但 Σw² 随样本位置起伏，因此按逐样本的窗平方包络归一化；
    该包络在周期Hamming窗下处处不小于 0.08²，首尾半窗同样可逆。

    Args:
        spec: 复数谱
        length: 输出长度；超出最后一帧覆盖范围的样本补零
    """
    cfg = spec.config
    if not np.all(np.isfinite(spec.data)):
        raise NonFiniteError("谱中存在非有限值")
    n_frames = spec.num_frames
    frames = synthesis_frames(spec.data, cfg)
    covered = (n_frames - 1) * cfg.hop + cfg.win_len if n_frames > 0 else 0
    out = np.zeros(covered)
    for t in range(n_frames):
        out[t * cfg.hop:t * cfg.hop + cfg.win_len] += frames[t]
    if covered:
        out /= window_square_envelope(n_frames, cfg)

    if length is not None:
        if length >= covered:
            out = np.concatenate([out, np.zeros(length - covered)])
        else:
            out = out[:length]
    return Waveform(out, cfg.sample_rate_hz)
