from typing import Tuple

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from stme.errors import ShapeMismatchError

# 直接求和的乘加次数上限；超过则走FFT
DIRECT_COST_LIMIT = 4_000_000

def _flatten(x: np.ndarray, k: np.ndarray):
    if x.ndim < 2 or k.ndim < 2:
        raise ShapeMismatchError(f"xcorr2d需要至少二维输入: x {x.shape}, k {k.shape}")
    H, W = x.shape[-2:]
    kh, kw = k.shape[-2:]
    if H < kh or W < kw:
        raise ShapeMismatchError(f"输入 {H}×{W} 小于核 {kh}×{kw}")
    xb, kb = x.shape[:-2], k.shape[:-2]
    return x.reshape((-1, H, W)), k.reshape((-1, kh, kw)), xb, kb

def _use_direct(nx: int, nk: int, Ho: int, Wo: int, kh: int, kw: int) -> bool:
    return nx * nk * Ho * Wo * kh * kw <= DIRECT_COST_LIMIT

def xcorr2d_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """
    valid模式二维互相关（不翻转核、不补零）

    out[..., t, c] = Σ_{τ,γ} k[τ,γ]·x[t+τ, c+γ]

    Args:
        x: (*xb, H, W)
        k: (*kb, kh, kw)

    Returns:
        (*xb, *kb, H-kh+1, W-kw+1)
    """
    x2, k2, xb, kb = _flatten(x, k)
    (nx, H, W), (nk, kh, kw) = x2.shape, k2.shape
    Ho, Wo = H - kh + 1, W - kw + 1

    if _use_direct(nx, nk, Ho, Wo, kh, kw):
        windows = sliding_window_view(x2, (kh, kw), axis=(1, 2))  # (nx, Ho, Wo, kh, kw)
        out = np.einsum('nijab,kab->nkij', windows, k2)
    else:
        # 循环相关在 H×W 尺寸下对valid区域无回绕
        X = scipy.fft.rfft2(x2, s=(H, W))
        K = scipy.fft.rfft2(k2, s=(H, W))
        out = scipy.fft.irfft2(X[:, None] * np.conj(K)[None], s=(H, W))[..., :Ho, :Wo]
    return out.reshape(xb + kb + (Ho, Wo))

def xcorr2d_valid_adjoints(x: np.ndarray, k: np.ndarray, g: np.ndarray,
                           need_x: bool = True, need_k: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    xcorr2d_valid的伴随：
      对输入：输出梯度与翻转核的full相关（即与核的full卷积）；
      对核：输入与输出梯度的valid互相关。
    """
    x2, k2, xb, kb = _flatten(x, k)
    (nx, H, W), (nk, kh, kw) = x2.shape, k2.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    g2 = g.reshape((nx, nk, Ho, Wo))
    gx = gk = None

    if _use_direct(nx, nk, Ho, Wo, kh, kw):
        if need_x:
            padded = np.pad(g2, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # (nx, nk, H, W, kh, kw)
            gx = np.einsum('nkijab,kab->nij', windows, k2[:, ::-1, ::-1])
        if need_k:
            windows = sliding_window_view(x2, (Ho, Wo), axis=(1, 2))  # (nx, kh, kw, Ho, Wo)
            gk = np.einsum('nabij,nkij->kab', windows, g2)
    else:
        G = scipy.fft.rfft2(g2, s=(H, W))
        if need_x:
            K = scipy.fft.rfft2(k2, s=(H, W))
            gx = scipy.fft.irfft2(np.sum(G * K[None], axis=1), s=(H, W))
        if need_k:
            X = scipy.fft.rfft2(x2, s=(H, W))
            gk = scipy.fft.irfft2(np.sum(X[:, None] * np.conj(G), axis=0), s=(H, W))[:, :kh, :kw]

    if gx is not None:
        gx = gx.reshape(x.shape)
    if gk is not None:
        gk = gk.reshape(k.shape)
    return gx, gk
