"""
谱时调制响应（STMR）及其上的两个距离：无时间积分的 STME 与时间积分后的模板 STMI。
"""
from typing import Union

import numpy as np

from stme.config import LOSS_EPS
from stme.errors import ShapeMismatchError
from stme.grad.tape import Tape, Tensor
from stme.grad.xcorr import xcorr2d_valid
from .models import MelLogSpectrogram, StrfKernel, StrfKernelBank, ResponseMap

def stmr(mel: MelLogSpectrogram, kernel: StrfKernel) -> ResponseMap:
    """out[t,c] = Σ_{τ,γ} kernel[τ,γ]·mel[t+τ, c+γ]（valid模式，不翻转、不补零）"""
    return ResponseMap(xcorr2d_valid(mel.data, kernel.matrix))

def stmr_stack(mel: MelLogSpectrogram, bank: StrfKernelBank) -> np.ndarray:
    """整组核的响应 N × (T−T_k+1) × (B−C_k+1)"""
    return xcorr2d_valid(mel.data, bank.stacked)

def _check_pair(a: MelLogSpectrogram, b: MelLogSpectrogram):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"两个Mel对数谱形状不一致: {a.shape} vs {b.shape}")

def _check_eps(eps: float):
    if not eps > 0:
        raise ValueError(f"eps必须大于0: {eps}")

def stme(mel_clean: MelLogSpectrogram, mel_enh: MelLogSpectrogram, bank: StrfKernelBank,
         eps: float = LOSS_EPS) -> float:
    """Σ_i ||R_i(clean) − R_i(enh)||² / (Σ_i ||R_i(clean)||² + eps)，响应不做时间积分"""
    _check_pair(mel_clean, mel_enh)
    _check_eps(eps)
    r_clean = stmr_stack(mel_clean, bank)
    r_enh = stmr_stack(mel_enh, bank)
    return float(np.sum((r_clean - r_enh) ** 2) / (np.sum(r_clean ** 2) + eps))

def stmi_template(mel_clean: MelLogSpectrogram, mel_degraded: MelLogSpectrogram, bank: StrfKernelBank,
                  eps: float = LOSS_EPS) -> float:
    """1 − 距离比，各核响应先沿时间轴取平均再向量化"""
    _check_pair(mel_clean, mel_degraded)
    _check_eps(eps)
    r_clean = stmr_stack(mel_clean, bank).mean(axis=1)
    r_degraded = stmr_stack(mel_degraded, bank).mean(axis=1)
    return float(1.0 - np.sum((r_clean - r_degraded) ** 2) / (np.sum(r_clean ** 2) + eps))

def stme_on_tape(tape: Tape, mel_clean: Union[Tensor, np.ndarray], mel_enh: Tensor,
                 kernels: Union[Tensor, np.ndarray], eps: float = LOSS_EPS) -> Tensor:
    """
    带上的 STME：mel (..., T, B)，kernels (N, T_k, C_k)

    Returns:
        形状为批维 (...) 的逐段 STME
    """
    _check_eps(eps)
    clean_shape = mel_clean.shape
    if tuple(clean_shape) != tuple(mel_enh.shape):
        raise ShapeMismatchError(f"两个Mel对数谱形状不一致: {clean_shape} vs {mel_enh.shape}")
    r_clean = tape.xcorr2d_valid(mel_clean, kernels)
    r_enh = tape.xcorr2d_valid(mel_enh, kernels)
    # 响应形状 (..., N, Ho, Wo)
    axes = (-3, -2, -1)
    numerator = (r_clean - r_enh).square().sum(axis=axes)
    denominator = r_clean.square().sum(axis=axes) + eps
    return numerator / denominator
