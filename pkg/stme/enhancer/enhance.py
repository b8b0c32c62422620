import logging
from typing import Optional

import numpy as np

from stme.config import LOG_FLOOR
from stme.errors import SampleRateMismatchError, ShapeMismatchError
from stme.signal.models import Waveform
from stme.spectral.features import log_power, online_normalize, normalize_frame
from stme.spectral.models import ComplexSpectrogram, NormalizerState, StftConfig
from stme.spectral.stft import stft, istft, stft_frames, synthesis_frames
from .models import EnhancerParams, GainMask
from .network import forward

logger = logging.getLogger(__name__)

def apply_gain(noisy: ComplexSpectrogram, gain: GainMask) -> np.ndarray:
    """|Ŝ|[t,k] = G[t,k]·|X|[t,k]"""
    if noisy.data.shape != gain.shape:
        raise ShapeMismatchError(f"谱形状 {noisy.data.shape} 与增益形状 {gain.shape} 不一致")
    return gain.data * noisy.magnitude

def _check_arch(params: EnhancerParams, cfg: StftConfig):
    if params.arch.input_dim != cfg.bins:
        raise ShapeMismatchError(f"网络输入维度 {params.arch.input_dim} 与STFT频点数 {cfg.bins} 不一致")

def enhance_spectrogram(noisy: ComplexSpectrogram, params: EnhancerParams,
                        normalizer: Optional[NormalizerState] = None) -> ComplexSpectrogram:
    """增益乘到复数谱上（即幅度乘增益、保留带噪相位）"""
    _check_arch(params, noisy.config)
    normalizer = normalizer or NormalizerState.fresh(noisy.config.bins)
    features, _ = online_normalize(log_power(noisy), normalizer)
    gain, _ = forward(features, params)
    return ComplexSpectrogram(gain.data * noisy.data, noisy.config)

def enhance_waveform(noisy: Waveform, params: EnhancerParams, cfg: StftConfig = None) -> Waveform:
    """
    stft → LPS → 在线归一化 → 网络 → 增益 × 带噪谱 → istft，输出与输入等长

    Raises:
        SampleRateMismatchError: 采样率与配置不一致
        SignalTooShortError: 短于一帧
    """
    cfg = cfg or StftConfig()
    spec = stft(noisy, cfg)
    enhanced = enhance_spectrogram(spec, params)
    return istft(enhanced, length=len(noisy))

class StreamingEnhancer:
    """
    逐块（通常每块一个帧移）流式增强。每凑满一个窗长即处理一帧，
    已不会再被后续帧覆盖的样本立即输出；结果与 enhance_waveform 一致。
    """

    def __init__(self, params: EnhancerParams, cfg: StftConfig = None, floor: float = LOG_FLOOR):
        self.cfg = cfg or StftConfig()
        _check_arch(params, self.cfg)
        self.params = params
        self.floor = floor
        self.reset()

    def reset(self):
        cfg = self.cfg
        self._input = np.zeros(0)  # 尚未成帧的输入（从下一帧起点开始）
        self._acc = np.zeros(cfg.win_len)  # 当前帧起点之后的叠加结果
        self._env = np.zeros(cfg.win_len)  # 对应的窗平方包络
        self._norm = NormalizerState.fresh(cfg.bins)
        self._mean, self._var = self._norm.mean.copy(), self._norm.var.copy()
        self._state = None
        self.frames_processed = 0
        self.samples_in = 0
        self.samples_out = 0

    def _process_frame(self, frame: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        spectrum = stft_frames(frame[None, :], cfg)  # (1, K)
        lps = np.log(np.maximum(spectrum.real ** 2 + spectrum.imag ** 2, self.floor))
        feature, self._mean, self._var = normalize_frame(lps[0], self._mean, self._var,
                                                         self._norm.decay, self._norm.variance_floor)
        gain, self._state = forward(feature[None, :], self.params, self._state)
        synthesized = synthesis_frames(gain.data * spectrum, cfg)[0]

        self._acc += synthesized
        self._env += cfg.window ** 2
        hop = cfg.hop
        # 前hop个样本不会再被后续帧覆盖
        ready = self._acc[:hop] / self._env[:hop]
        self._acc = np.concatenate([self._acc[hop:], np.zeros(hop)])
        self._env = np.concatenate([self._env[hop:], np.zeros(hop)])
        self.frames_processed += 1
        return ready

    def push(self, chunk: np.ndarray) -> np.ndarray:
        """输入任意长度的样本块，返回已定稿的输出样本"""
        chunk = np.asarray(chunk, dtype=np.float64).reshape(-1)
        self.samples_in += len(chunk)
        self._input = np.concatenate([self._input, chunk])
        cfg = self.cfg
        out = []
        while len(self._input) >= cfg.win_len:
            out.append(self._process_frame(self._input[:cfg.win_len]))
            self._input = self._input[cfg.hop:]
        result = np.concatenate(out) if out else np.zeros(0)
        self.samples_out += len(result)
        return result

    def flush(self) -> np.ndarray:
        """输出剩余样本：最后一帧的尾部，不足一帧的输入补零，使总输出长度等于输入长度"""
        cfg = self.cfg
        tail = np.zeros(0)
        if self.frames_processed > 0:
            rest = cfg.win_len - cfg.hop
            tail = self._acc[:rest] / self._env[:rest]
        remaining = self.samples_in - self.samples_out
        if len(tail) >= remaining:
            tail = tail[:remaining]
        else:
            tail = np.concatenate([tail, np.zeros(remaining - len(tail))])
        self.samples_out += len(tail)
        return tail

    def process(self, noisy: Waveform, chunk_size: int = None) -> Waveform:
        """按块喂入整段波形（缺省每块一个帧移）"""
        if noisy.sample_rate_hz != self.cfg.sample_rate_hz:
            raise SampleRateMismatchError(f"波形采样率 {noisy.sample_rate_hz} Hz 与STFT配置 {self.cfg.sample_rate_hz} Hz 不一致")
        chunk_size = chunk_size or self.cfg.hop
        self.reset()
        pieces = [self.push(noisy.samples[i:i + chunk_size]) for i in range(0, len(noisy), chunk_size)]
        pieces.append(self.flush())
        logger.debug(f"StreamingEnhancer: {self.frames_processed} 帧, {len(noisy)} 样本")
        return Waveform(np.concatenate(pieces), noisy.sample_rate_hz)
