"""
梯度检查：对损失与网络各参数组做中心差分比对，输出每组的最大相对误差
"""
import os
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from stme.config import N_FFT
from stme.dao.csv_dao import DataclassCsvDAO
from stme.enhancer.models import EnhancerArch, EnhancerParams
from stme.enhancer.network import forward_on_tape, params_on_tape
from stme.grad.check import finite_diff_check
from stme.grad.tape import Tape, Tensor
from stme.modulation.gabor import sample_random_bank
from stme.modulation.models import MelFilterbank
from stme.utils.exec_time_cost import exec_time_cost
from .config import LossMode
from .losses import loss_on_tape, stme_loss_on_tape, tfe_loss_on_tape

logger = logging.getLogger(__name__)

TFE_TOLERANCE = 1e-6
STME_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-4
COMBINED_LAMBDAS = (0.0, 1.0, 10.0)
# 损失是上千个元素的均值，单坐标梯度很小；步长取1e-5时中心差分的舍入误差会超出TFE的容差
STEP = 1e-4

# TFE组：10帧 × 257个频点
TFE_FRAMES = 10
# STME组：40帧 × 25个频点，稠密随机Mel矩阵 + 缩小网格的Gabor核
STME_FRAMES = 40
STME_BINS = 25
STME_BANDS = 12
STME_KERNEL = (10, 4)
GAIN_BANK_SIZE = 6
# 网络组：tiny结构 + 5帧BPTT，配小尺寸的Mel矩阵与核
BPTT_FRAMES = 5
SMALL_BANDS = 5
SMALL_KERNEL = (3, 2)
SMALL_BANK_SIZE = 3

@dataclass
class GradcheckRow:
    group: str
    max_rel_error: float
    tolerance: float
    passed: bool

@dataclass
class GradcheckReport:
    rows: List[GradcheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> List[GradcheckRow]:
        return [r for r in self.rows if not r.passed]

    def add(self, group: str, error: float, tolerance: float):
        row = GradcheckRow(group, float(error), tolerance, bool(error < tolerance))
        level = logging.INFO if row.passed else logging.WARNING
        logger.log(level, f"gradcheck {group}: 最大相对误差 {error:.3e} (容差 {tolerance:g}) {'通过' if row.passed else '未通过'}")
        self.rows.append(row)

    def save_csv(self, path: str):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with DataclassCsvDAO(path, GradcheckRow) as dao:
            dao.write_records(self.rows)

def _sample_coords(rng: np.random.Generator, size: int, limit: Optional[int]) -> Optional[np.ndarray]:
    if limit is None or size <= limit:
        return None
    return np.sort(rng.choice(size, limit, replace=False))

def _gain_instance(rng: np.random.Generator, frames: int, bins: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (clean, noisy, gain)：gain·noisy 处处高于 clean，残差不会落在0附近

    clean ∈ [0.05, 0.3]，noisy ∈ [1.0, 1.5]，gain ∈ [0.4, 0.9]
    """
    clean_mag = rng.uniform(0.05, 0.3, size=(frames, bins))
    noisy_mag = rng.uniform(1.0, 1.5, size=(frames, bins))
    gain = rng.uniform(0.4, 0.9, size=(frames, bins))
    return clean_mag, noisy_mag, gain

def _random_mel(rng: np.random.Generator, bands: int, bins: int) -> MelFilterbank:
    return MelFilterbank(rng.uniform(0.1, 1.0, size=(bands, bins)))

def _small_kernels(rng: np.random.Generator) -> np.ndarray:
    k = rng.standard_normal((SMALL_BANK_SIZE,) + SMALL_KERNEL)
    k -= k.mean(axis=(1, 2), keepdims=True)
    return k / np.linalg.norm(k, axis=(1, 2), keepdims=True)

@exec_time_cost
def gradcheck_suite(seed: int = 0, tolerance: Optional[float] = None, coords_per_group: Optional[int] = 30) -> GradcheckReport:
    """
    对以下各组做有限差分检查（双精度，步长 STEP）：
      - TFE 对增益（10×257）
      - STME 对增益（40×25）
      - TFE + λ·STME 对增益，λ ∈ {0, 1, 10}（40×25）
      - 组合损失对 tiny 网络的每个参数组（经过5帧BPTT）

    Args:
        seed: 随机数据与参数的种子
        tolerance: 统一覆盖各组的容差，None 时按组取缺省值
        coords_per_group: 每组抽查的坐标数上限，None 为全部

    Returns:
        GradcheckReport，失败以行记录而不抛异常
    """
    def tol(default: float) -> float:
        return tolerance if tolerance is not None else default

    rng = np.random.default_rng(seed)
    report = GradcheckReport()

    # ---- 增益组 ----
    tfe_clean, tfe_noisy, tfe_gain = _gain_instance(rng, TFE_FRAMES, N_FFT // 2 + 1)

    def tfe_fn(tape: Tape, g: Tensor) -> Tensor:
        return tfe_loss_on_tape(tape, tfe_clean, g * tfe_noisy)

    report.add('tfe_vs_gain', finite_diff_check(tfe_fn, tfe_gain, h=STEP,
                                                coords=_sample_coords(rng, tfe_gain.size, coords_per_group)),
               tol(TFE_TOLERANCE))

    clean_mag, noisy_mag, gain0 = _gain_instance(rng, STME_FRAMES, STME_BINS)
    mel_bank = _random_mel(rng, STME_BANDS, STME_BINS)
    kernels = sample_random_bank(seed, GAIN_BANK_SIZE, frames=STME_KERNEL[0], channels=STME_KERNEL[1]).stacked
    coords = _sample_coords(rng, gain0.size, coords_per_group)

    def stme_fn(tape: Tape, g: Tensor) -> Tensor:
        return stme_loss_on_tape(tape, clean_mag, g * noisy_mag, mel_bank, kernels)

    report.add('stme_vs_gain', finite_diff_check(stme_fn, gain0, h=STEP, coords=coords), tol(STME_TOLERANCE))
    for lam in COMBINED_LAMBDAS:
        def combined_fn(tape: Tape, g: Tensor, lam=lam) -> Tensor:
            return loss_on_tape(tape, LossMode.TFE_PLUS_STME, clean_mag, g * noisy_mag, lam, mel_bank, kernels).total
        report.add(f'combined_lambda_{lam:g}_vs_gain', finite_diff_check(combined_fn, gain0, h=STEP, coords=coords),
                   tol(STME_TOLERANCE))

    # ---- 网络参数组 ----
    arch = EnhancerArch.tiny()
    params = EnhancerParams.init(arch, seed=seed)
    # 偏置非零，避免ReLU恰好停在折点上
    params = params.replace({name: rng.uniform(-0.3, 0.3, size=value.shape)
                             for name, value in params.tensors.items() if name.endswith('.b')})
    features = rng.standard_normal((BPTT_FRAMES, arch.input_dim))
    small_clean = rng.uniform(0.1, 1.0, size=(BPTT_FRAMES, arch.input_dim))
    small_noisy = small_clean + rng.uniform(0.1, 0.5, size=(BPTT_FRAMES, arch.input_dim))
    small_mel = _random_mel(rng, SMALL_BANDS, arch.input_dim)
    small_kernels = _small_kernels(rng)

    for name, value in params.tensors.items():
        def network_fn(tape: Tape, x: Tensor, name=name) -> Tensor:
            p = params_on_tape(tape, params, requires_grad=False)
            p[name] = x
            gain, _ = forward_on_tape(tape, tape.constant(features), p)
            return loss_on_tape(tape, LossMode.TFE_PLUS_STME, small_clean, gain * small_noisy, 1.0,
                                small_mel, small_kernels).total
        group_coords = _sample_coords(rng, value.size, coords_per_group)
        report.add(f'network.{name}', finite_diff_check(network_fn, value, h=STEP, coords=group_coords),
                   tol(NETWORK_TOLERANCE))

    logger.info(f"gradcheck seed={seed}: {len(report.rows)} 组，{len(report.failures())} 组未通过")
    return report
