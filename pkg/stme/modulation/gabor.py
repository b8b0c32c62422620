import logging
from typing import Sequence

import numpy as np

from stme.config import FRAME_RATE_HZ, KERNEL_FRAMES, KERNEL_CHANNELS, BANK_SIZE, RATE_MAX_HZ, SCALE_MAX_CPC
from stme.errors import NonFiniteError
from stme.grad.tape import Tape, Tensor
from .models import Direction, GaborStrfParams, StrfKernel, StrfKernelBank

logger = logging.getLogger(__name__)

def kernel_grid(frames: int, channels: int):
    """以核中心为原点的时间/通道坐标，使 up/down 恰为通道轴镜像"""
    tau = np.arange(frames) - (frames - 1) / 2.0
    chan = np.arange(channels) - (channels - 1) / 2.0
    return tau[:, None], chan[None, :]

def make_gabor_kernel(p: GaborStrfParams, frame_rate_hz: float = FRAME_RATE_HZ,
                      frames: int = KERNEL_FRAMES, channels: int = KERNEL_CHANNELS) -> StrfKernel:
    """
    可分离高斯包络 × 倾斜余弦平面波，再去均值、单位化Frobenius范数

    raw[τ,c] = exp(-τ²/2σt²)·exp(-c²/2σf²)·cos(2π·rate·τ/fr + s·2π·scale·c + phase)

    Raises:
        NonFiniteError: 去均值后能量为0或出现非有限值
    """
    tau, chan = kernel_grid(frames, channels)
    t_sigma_frames = p.t_sigma * frame_rate_hz
    envelope = np.exp(-tau ** 2 / (2.0 * t_sigma_frames ** 2)) * np.exp(-chan ** 2 / (2.0 * p.f_sigma ** 2))
    carrier = np.cos(2 * np.pi * p.rate_hz * tau / frame_rate_hz
                     + p.direction.sign * 2 * np.pi * p.scale_cpc * chan + p.phase_rad)
    raw = envelope * carrier
    centered = raw - raw.mean()
    norm = np.linalg.norm(centered)
    if not np.isfinite(norm) or norm <= 0.0:
        raise NonFiniteError(f"Gabor核去均值后范数非法 ({norm})，参数: {p}")
    return StrfKernel(centered / norm, p)

def make_bank(params: Sequence[GaborStrfParams], frame_rate_hz: float = FRAME_RATE_HZ,
              frames: int = KERNEL_FRAMES, channels: int = KERNEL_CHANNELS) -> StrfKernelBank:
    kernels = [make_gabor_kernel(p, frame_rate_hz, frames, channels) for p in params]
    return StrfKernelBank(tuple(kernels), frame_rate_hz)

def sample_random_bank(seed: int, n: int = BANK_SIZE, frame_rate_hz: float = FRAME_RATE_HZ,
                       frames: int = KERNEL_FRAMES, channels: int = KERNEL_CHANNELS) -> StrfKernelBank:
    """
    随机核组：rate ~ U[0,50) Hz，scale ~ U[0,0.5) cyc/ch，方向等概率，相位 ~ U[0,2π)，包络宽度取缺省值
    """
    if n < 1:
        raise ValueError(f"核数必须不小于1: {n}")
    rng = np.random.default_rng(seed)
    rates = rng.uniform(0.0, RATE_MAX_HZ, n)
    scales = rng.uniform(0.0, SCALE_MAX_CPC, n)
    ups = rng.random(n) < 0.5
    phases = rng.uniform(0.0, 2 * np.pi, n)
    params = [
        GaborStrfParams(float(rates[i]), float(scales[i]), Direction.UP if ups[i] else Direction.DOWN, float(phases[i]))
        for i in range(n)
    ]
    logger.debug(f"sample_random_bank seed={seed}: {n} 个核")
    return make_bank(params, frame_rate_hz, frames, channels)

def gabor_bank_on_tape(tape: Tape, rate_hz: Tensor, scale_cpc: Tensor, phase_rad: Tensor,
                       t_sigma: Tensor, f_sigma: Tensor, signs: np.ndarray,
                       frame_rate_hz: float = FRAME_RATE_HZ, frames: int = KERNEL_FRAMES,
                       channels: int = KERNEL_CHANNELS) -> Tensor:
    """
    带上构建 N × T_k × C_k 核组，对 rate/scale/phase/包络宽度可微；方向 signs (N,) 为常量

    与 make_gabor_kernel 同一公式。
    """
    tau, chan = kernel_grid(frames, channels)
    tau3, chan3 = tau[None], chan[None]

    def col(t: Tensor) -> Tensor:
        return tape.reshape(t, (-1, 1, 1))

    signs3 = np.asarray(signs, dtype=np.float64).reshape(-1, 1, 1)

    t_frames = col(t_sigma) * frame_rate_hz
    env_t = tape.exp(tape.scale(tape.div(tau3 ** 2, tape.square(t_frames)), -0.5))
    env_f = tape.exp(tape.scale(tape.div(chan3 ** 2, tape.square(col(f_sigma))), -0.5))
    argument = (col(rate_hz) * (2 * np.pi * tau3 / frame_rate_hz)
                + col(scale_cpc) * (signs3 * 2 * np.pi * chan3)
                + col(phase_rad))
    raw = env_t * env_f * tape.cos(argument)
    centered = raw - raw.mean(axis=(1, 2), keepdims=True)
    norm = tape.sqrt(centered.square().sum(axis=(1, 2), keepdims=True))
    if np.any(norm.data <= 0.0) or not np.all(np.isfinite(norm.data)):
        raise NonFiniteError("带上构建的Gabor核范数非法")
    return centered / norm
