from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from stme.config import LOG_FLOOR, LOSS_EPS
from stme.errors import ShapeMismatchError
from stme.grad.tape import Tape, Tensor
from stme.modulation.mel import mel_filterbank, mel_log_power, mel_log_power_on_tape
from stme.modulation.models import MelFilterbank, StrfKernelBank
from stme.modulation.stmr import stme, stme_on_tape
from stme.spectral.models import ComplexSpectrogram
from .config import LossMode

def _check_same_shape(a_shape, b_shape):
    if tuple(a_shape) != tuple(b_shape):
        raise ShapeMismatchError(f"幅度谱形状不一致: {tuple(a_shape)} vs {tuple(b_shape)}")

def tfe_loss(clean_mag: np.ndarray, enh_mag: np.ndarray) -> float:
    """时频误差：全部 T·K 个元素的均方误差"""
    clean_mag, enh_mag = np.asarray(clean_mag, dtype=np.float64), np.asarray(enh_mag, dtype=np.float64)
    _check_same_shape(clean_mag.shape, enh_mag.shape)
    return float(np.mean((clean_mag - enh_mag) ** 2))

def combined_loss(clean: ComplexSpectrogram, enh_mag: np.ndarray, bank: StrfKernelBank, lam: float,
                  mel_bank: Optional[MelFilterbank] = None, eps: float = LOSS_EPS) -> Tuple[float, float, float]:
    """
    total = TFE + λ·STME(melLog(clean), melLog(enh))

    Returns:
        (total, tfe_term, stme_term)
    """
    if lam < 0:
        raise ValueError(f"λ不能为负: {lam}")
    mel_bank = mel_bank or mel_filterbank(clean.config.sample_rate_hz, clean.config.n_fft)
    enh_mag = np.asarray(enh_mag, dtype=np.float64)
    clean_mag = clean.magnitude
    tfe_term = tfe_loss(clean_mag, enh_mag)
    # 两侧都由幅度平方得到功率，enh == clean 时两项精确为0
    stme_term = stme(mel_log_power(clean_mag ** 2, mel_bank), mel_log_power(enh_mag ** 2, mel_bank), bank, eps)
    return tfe_term + lam * stme_term, tfe_term, stme_term

@dataclass
class LossTerms:
    """带上的损失：total 可反传，tfe/stme 供记录（未启用的项为None）"""
    total: Tensor
    tfe: Optional[Tensor]
    stme: Optional[Tensor]

    def values(self) -> Tuple[float, float, float]:
        tfe_value = self.tfe.item() if self.tfe is not None else 0.0
        stme_value = self.stme.item() if self.stme is not None else 0.0
        return self.total.item(), tfe_value, stme_value

def tfe_loss_on_tape(tape: Tape, clean_mag: Union[Tensor, np.ndarray], enh_mag: Tensor) -> Tensor:
    _check_same_shape(clean_mag.shape, enh_mag.shape)
    return tape.mean(tape.square(tape.sub(clean_mag, enh_mag)))

def stme_loss_on_tape(tape: Tape, clean_mag: Union[Tensor, np.ndarray], enh_mag: Tensor, mel_bank: MelFilterbank,
                      kernels: Union[Tensor, np.ndarray], eps: float = LOSS_EPS, floor: float = LOG_FLOOR) -> Tensor:
    """逐段计算STME后对批维取平均；输入 (..., T, K) 幅度谱"""
    _check_same_shape(clean_mag.shape, enh_mag.shape)
    clean_power = tape.square(clean_mag)
    mel_clean = mel_log_power_on_tape(tape, clean_power, mel_bank, floor)
    mel_enh = mel_log_power_on_tape(tape, tape.square(enh_mag), mel_bank, floor)
    return tape.mean(stme_on_tape(tape, mel_clean, mel_enh, kernels, eps))

def loss_on_tape(tape: Tape, mode: LossMode, clean_mag: Union[Tensor, np.ndarray], enh_mag: Tensor, lam: float,
                 mel_bank: Optional[MelFilterbank] = None, kernels: Union[Tensor, np.ndarray, None] = None,
                 eps: float = LOSS_EPS) -> LossTerms:
    """按损失模式组装；STME模式需要 mel_bank 与 kernels"""
    tfe_term = tfe_loss_on_tape(tape, clean_mag, enh_mag) if mode.uses_tfe else None
    stme_term = None
    if mode.uses_stme:
        if mel_bank is None or kernels is None:
            raise ValueError(f"损失模式 {mode.value} 需要Mel滤波器组与STRF核组")
        stme_term = stme_loss_on_tape(tape, clean_mag, enh_mag, mel_bank, kernels, eps)

    if mode == LossMode.TFE:
        total = tfe_term
    elif mode == LossMode.STME:
        total = stme_term
    else:
        total = tape.add(tfe_term, tape.scale(stme_term, lam))
    return LossTerms(total, tfe_term, stme_term)
