"""
桌面级STRF核调优：Gabor参数与线性softmax分类头联合训练，用片段级类别标签做监督，
训练结束只保留核组
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from stme.errors import ConfigError, EmptyCorpusError, SignalTooShortError
from stme.grad.tape import Tape, Tensor, backward
from stme.modulation.gabor import gabor_bank_on_tape, make_bank
from stme.modulation.mel import mel_filterbank, mel_log_power
from stme.modulation.models import (DEFAULT_F_SIGMA, DEFAULT_T_SIGMA_S, Direction, GaborStrfParams,
                                    MelFilterbank, StrfKernelBank)
from stme.signal.models import Waveform
from stme.spectral.models import StftConfig
from stme.spectral.stft import stft
from stme.config import RATE_MAX_HZ, SCALE_MAX_CPC
from stme.utils.exec_time_cost import exec_time_cost
from .optimizer import AdamMoments, adam_step

logger = logging.getLogger(__name__)

LabeledClip = Tuple[Waveform, int]

# 单位化坐标：rate/RATE_MAX、scale/SCALE_MAX、phase/2π、σ/缺省σ
KERNEL_PARAM_NAMES = ('rate', 'scale', 'phase', 't_sigma', 'f_sigma')
UNIT_UPPER = 1.0 - 1e-9
SIGMA_RATIO_RANGE = (0.25, 4.0)
ENERGY_FLOOR = 1e-12
STD_FLOOR = 1e-6

@dataclass
class TuneConfig:
    epochs: int = 30
    learning_rate: float = 0.05  # 分类头
    kernel_learning_rate: float = 0.01  # Gabor参数（单位化坐标）
    batch_size: int = 16
    channel_groups: int = 4  # 响应沿通道轴汇聚成的频段数
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs不能为负: {self.epochs}")
        if not (self.learning_rate > 0 and self.kernel_learning_rate > 0):
            raise ConfigError(f"学习率必须大于0: {self.learning_rate}, {self.kernel_learning_rate}")
        if self.batch_size < 1 or self.channel_groups < 1:
            raise ConfigError(f"batch_size/channel_groups必须不小于1: {self.batch_size}, {self.channel_groups}")

def bank_to_unit(bank: StrfKernelBank) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Returns:
        (单位化坐标 {名称: (N,)}, 方向符号 (N,))

    Raises:
        ValueError: 核组中有非Gabor核
    """
    if any(p is None for p in bank.params):
        raise ValueError("只能调优由Gabor参数生成的核组")
    params = bank.params
    unit = {
        'rate': np.array([p.rate_hz / RATE_MAX_HZ for p in params]),
        'scale': np.array([p.scale_cpc / SCALE_MAX_CPC for p in params]),
        'phase': np.array([(p.phase_rad / (2 * np.pi)) % 1.0 for p in params]),
        't_sigma': np.array([p.t_sigma / DEFAULT_T_SIGMA_S for p in params]),
        'f_sigma': np.array([p.f_sigma / DEFAULT_F_SIGMA for p in params]),
    }
    signs = np.array([p.direction.sign for p in params])
    return unit, signs

def clamp_unit(unit: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """裁剪回参数不变量范围；相位按周期回绕"""
    low, high = SIGMA_RATIO_RANGE
    return {
        'rate': np.clip(unit['rate'], 0.0, UNIT_UPPER),
        'scale': np.clip(unit['scale'], 0.0, UNIT_UPPER),
        'phase': np.mod(unit['phase'], 1.0),
        't_sigma': np.clip(unit['t_sigma'], low, high),
        'f_sigma': np.clip(unit['f_sigma'], low, high),
    }

def unit_to_bank(unit: Dict[str, np.ndarray], signs: np.ndarray, template: StrfKernelBank) -> StrfKernelBank:
    params = [
        GaborStrfParams(float(unit['rate'][i] * RATE_MAX_HZ), float(unit['scale'][i] * SCALE_MAX_CPC),
                        Direction.UP if signs[i] > 0 else Direction.DOWN, float(unit['phase'][i] * 2 * np.pi),
                        float(unit['t_sigma'][i] * DEFAULT_T_SIGMA_S), float(unit['f_sigma'][i] * DEFAULT_F_SIGMA))
        for i in range(len(signs))
    ]
    return make_bank(params, template.frame_rate_hz, template.kernel_frames, template.kernel_channels)

def channel_pooling(width: int, groups: int) -> np.ndarray:
    """width × groups 的平均汇聚矩阵，按连续通道段划分"""
    groups = min(groups, width)
    edges = np.linspace(0, width, groups + 1).round().astype(int)
    pool = np.zeros((width, groups))
    for g in range(groups):
        pool[edges[g]:edges[g + 1], g] = 1.0 / (edges[g + 1] - edges[g])
    return pool

def features_on_tape(tape: Tape, mels: np.ndarray, kernels, pool: np.ndarray) -> Tensor:
    """
    mels (B, T, Bm) → 每个核沿时间平均的响应能量，按通道段汇聚后取对数 → (B, N·G)
    """
    responses = tape.xcorr2d_valid(mels, kernels)  # (B, N, Ho, Wo)
    energy = responses.square().mean(axis=2)  # (B, N, Wo)
    pooled = tape.log_guarded(tape.matmul(energy, pool), ENERGY_FLOOR)  # (B, N, G)
    batch, n, g = pooled.shape
    return pooled.reshape(batch, n * g)

def cross_entropy_on_tape(tape: Tape, logits: Tensor, labels: np.ndarray) -> Tensor:
    """平均交叉熵；logsumexp 先减去逐行最大值"""
    shift = logits.data.max(axis=1, keepdims=True)
    shifted = logits - shift
    lse = tape.log_guarded(shifted.exp().sum(axis=1), ENERGY_FLOOR)
    one_hot = np.eye(logits.shape[1])[labels]
    picked = (shifted * one_hot).sum(axis=1)
    return (lse - picked).mean()

class KernelTuner:
    """
    在带标签的片段上联合优化 Gabor 参数与线性softmax分类头

    特征为每个核沿时间平均的STMR能量（按通道段汇聚、取对数、用训练集统计量标准化）。
    每一步后参数裁剪回不变量范围；fit 只返回核组。
    """

    def __init__(self, init: StrfKernelBank, config: Optional[TuneConfig] = None,
                 mel_bank: Optional[MelFilterbank] = None, stft_config: Optional[StftConfig] = None):
        self.init = init
        self.config = config or TuneConfig()
        self.stft_config = stft_config or StftConfig()
        self.mel_bank = mel_bank or mel_filterbank(self.stft_config.sample_rate_hz, self.stft_config.n_fft)
        self.unit, self.signs = bank_to_unit(init)
        self.bank = init
        self.classes: List[int] = []
        self.head: Dict[str, np.ndarray] = {}
        self.feature_mean: Optional[np.ndarray] = None
        self.feature_std: Optional[np.ndarray] = None
        self._frames: Optional[int] = None

    # ---- 数据准备 ----

    def _mels(self, clips: Sequence[Waveform], frames: Optional[int] = None) -> np.ndarray:
        mels = [mel_log_power(stft(w, self.stft_config), self.mel_bank).data for w in clips]
        shortest = min(m.shape[0] for m in mels)
        frames = frames or shortest
        if shortest < max(frames, self.init.kernel_frames):
            raise SignalTooShortError(f"片段仅 {shortest} 帧，短于所需的 {max(frames, self.init.kernel_frames)} 帧")
        return np.stack([m[:frames] for m in mels])

    def _pool(self) -> np.ndarray:
        width = self.mel_bank.bands - self.init.kernel_channels + 1
        return channel_pooling(width, self.config.channel_groups)

    def _kernels_on_tape(self, tape: Tape, requires_grad: bool) -> Tuple[Dict[str, Tensor], Tensor]:
        leaves = {name: tape.leaf(self.unit[name], name=name, requires_grad=requires_grad) for name in KERNEL_PARAM_NAMES}
        kernels = gabor_bank_on_tape(
            tape,
            tape.scale(leaves['rate'], RATE_MAX_HZ),
            tape.scale(leaves['scale'], SCALE_MAX_CPC),
            tape.scale(leaves['phase'], 2 * np.pi),
            tape.scale(leaves['t_sigma'], DEFAULT_T_SIGMA_S),
            tape.scale(leaves['f_sigma'], DEFAULT_F_SIGMA),
            self.signs, self.init.frame_rate_hz, self.init.kernel_frames, self.init.kernel_channels)
        return leaves, kernels

    def _raw_features(self, mels: np.ndarray) -> np.ndarray:
        tape = Tape(np.float64, record=False)
        _, kernels = self._kernels_on_tape(tape, requires_grad=False)
        return features_on_tape(tape, mels, kernels, self._pool()).data

    def _refresh_statistics(self, mels: np.ndarray):
        raw = self._raw_features(mels)
        self.feature_mean = raw.mean(axis=0)
        self.feature_std = np.maximum(raw.std(axis=0), STD_FLOOR)

    # ---- 训练与评估 ----

    def _labels(self, clips: Sequence[LabeledClip]) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.classes)}
        unknown = sorted({c for _, c in clips} - set(index))
        if unknown:
            raise ValueError(f"未见过的类别: {unknown}")
        return np.array([index[c] for _, c in clips])

    def _step(self, mels: np.ndarray, labels: np.ndarray, kernel_moments: AdamMoments,
              head_moments: AdamMoments) -> Tuple[float, AdamMoments, AdamMoments]:
        tape = Tape(np.float64)
        leaves, kernels = self._kernels_on_tape(tape, requires_grad=True)
        head = {name: tape.leaf(value, name=name) for name, value in self.head.items()}
        feats = (features_on_tape(tape, mels, kernels, self._pool()) - self.feature_mean) / self.feature_std
        loss = cross_entropy_on_tape(tape, feats @ head['w'] + head['b'], labels)
        grads = backward(tape, loss)

        kernel_cfg = replace(self.config, learning_rate=self.config.kernel_learning_rate)
        kernel_result = adam_step(self.unit, {n: grads[t] for n, t in leaves.items()}, kernel_moments,
                                  kernel_cfg, kernel_moments.step + 1)
        head_result = adam_step(self.head, {n: grads[t] for n, t in head.items()}, head_moments,
                                self.config, head_moments.step + 1)
        if kernel_result.accepted and head_result.accepted:
            self.unit = clamp_unit(kernel_result.params)
            self.head = head_result.params
            return loss.item(), kernel_result.moments, head_result.moments
        return loss.item(), kernel_moments, head_moments

    @exec_time_cost
    def fit(self, clips: Sequence[LabeledClip]) -> StrfKernelBank:
        """
        Raises:
            EmptyCorpusError: 没有片段
            ConfigError: 少于两个类别
            SignalTooShortError: 片段短于核的时间支撑
        """
        if not clips:
            raise EmptyCorpusError("核调优需要带标签的片段")
        self.classes = sorted({int(c) for _, c in clips})
        if len(self.classes) < 2:
            raise ConfigError(f"核调优至少需要两个类别，实际只有 {self.classes}")
        mels = self._mels([w for w, _ in clips])
        self._frames = mels.shape[1]
        labels = self._labels(clips)
        self._refresh_statistics(mels)
        n_features = self.feature_mean.shape[0]
        self.head = {'w': np.zeros((n_features, len(self.classes))), 'b': np.zeros(len(self.classes))}
        if self.config.epochs == 0:
            return self.init

        rng = np.random.default_rng(self.config.seed)
        kernel_moments = AdamMoments.zeros_like(self.unit)
        head_moments = AdamMoments.zeros_like(self.head)
        logger.info(f"核调优: {len(clips)} 个片段，{len(self.classes)} 类，{len(self.signs)} 个核，{self.config.epochs} 轮")
        for epoch in range(1, self.config.epochs + 1):
            self._refresh_statistics(mels)
            order = rng.permutation(len(clips))
            losses = []
            for start in range(0, len(order), self.config.batch_size):
                batch = order[start:start + self.config.batch_size]
                loss, kernel_moments, head_moments = self._step(mels[batch], labels[batch], kernel_moments, head_moments)
                losses.append(loss)
            logger.info(f"epoch {epoch}/{self.config.epochs}: 交叉熵 {np.mean(losses):.4f}")

        self.bank = unit_to_bank(self.unit, self.signs, self.init)
        self._refresh_statistics(mels)
        return self.bank

    def predict(self, clips: Sequence[Waveform]) -> np.ndarray:
        if not self.head:
            raise ValueError("KernelTuner尚未fit")
        feats = (self._raw_features(self._mels(clips, self._frames)) - self.feature_mean) / self.feature_std
        logits = feats @ self.head['w'] + self.head['b']
        return np.array(self.classes)[np.argmax(logits, axis=1)]

    def score(self, clips: Sequence[LabeledClip]) -> float:
        """保留集分类准确率"""
        predicted = self.predict([w for w, _ in clips])
        truth = np.array([int(c) for _, c in clips])
        return float(np.mean(predicted == truth))

def tune_kernel_bank(labeled_clips: Sequence[LabeledClip], init: StrfKernelBank, epochs: int = 30,
                     lr: float = 0.01, **kwargs) -> StrfKernelBank:
    """联合Gabor参数与分类头训练后只返回核组；epochs 为0时原样返回初始核组"""
    config = TuneConfig(epochs=epochs, kernel_learning_rate=lr, **kwargs)
    return KernelTuner(init, config).fit(labeled_clips)
