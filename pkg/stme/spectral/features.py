from typing import Tuple

import numpy as np

from stme.config import LOG_FLOOR
from stme.errors import ShapeMismatchError
from .models import ComplexSpectrogram, NormalizerState

def log_power(spec: ComplexSpectrogram, floor: float = LOG_FLOOR) -> np.ndarray:
    """对数功率谱 ln(max(|X|², floor))"""
    if not floor > 0:
        raise ValueError(f"floor必须大于0: {floor}")
    return np.log(np.maximum(spec.power, floor))

def normalize_frame(x: np.ndarray, mean: np.ndarray, var: np.ndarray, decay: float, variance_floor: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """单帧递推：先更新均值，再用新均值更新方差，输出 (x - mean)/sqrt(max(var, floor))"""
    mean = decay * mean + (1.0 - decay) * x
    var = np.maximum(decay * var + (1.0 - decay) * (x - mean) ** 2, variance_floor)
    return (x - mean) / np.sqrt(var), mean, var

def online_normalize(lps: np.ndarray, state: NormalizerState) -> Tuple[np.ndarray, NormalizerState]:
    """
    频率相关的在线归一化（逐帧因果递推），流式与整段调用结果一致

    Args:
        lps: T×K 对数功率谱
        state: 归一化状态（不被修改）

    Returns:
        (归一化后的 T×K 矩阵, 新状态)
    """
    lps = np.asarray(lps, dtype=np.float64)
    if lps.ndim != 2 or lps.shape[1] != state.mean.shape[0]:
        raise ShapeMismatchError(f"LPS形状 {lps.shape} 与状态频点数 {state.mean.shape[0]} 不一致")

    out = np.empty_like(lps)
    mean, var = state.mean.copy(), state.var.copy()
    for t in range(lps.shape[0]):
        out[t], mean, var = normalize_frame(lps[t], mean, var, state.decay, state.variance_floor)

    new_state = NormalizerState(mean, var, state.decay, state.frames_seen + lps.shape[0], state.variance_floor)
    return out, new_state
