import logging
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from stme.errors import NonFiniteError
from .tape import Tape, Tensor, backward

logger = logging.getLogger(__name__)

# f(tape, x) -> 标量Tensor
ScalarFn = Callable[[Tape, Tensor], Tensor]

def tape_gradient(f: ScalarFn, x: np.ndarray) -> Tuple[float, np.ndarray]:
    """在新带上求 f(x) 及其对 x 的梯度"""
    tape = Tape(np.float64)
    leaf = tape.leaf(x, name='x')
    out = f(tape, leaf)
    return out.item(), backward(tape, out)[leaf]

def _evaluate(f: ScalarFn, x: np.ndarray) -> float:
    tape = Tape(np.float64, record=False)
    value = f(tape, tape.leaf(x)).item()
    if not np.isfinite(value):
        raise NonFiniteError(f"探测点处函数值非有限: {value}")
    return value

def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)

def finite_diff_check(f: ScalarFn, x: np.ndarray, h: float = 1e-5,
                      coords: Optional[Sequence[int]] = None) -> float:
    """
    中心差分与带梯度逐坐标比较，返回最大相对误差

    Args:
        f: 标量函数，接收 (tape, x) 返回标量Tensor
        x: 检查点
        h: 差分步长
        coords: 只检查这些扁平坐标（大参数张量抽样用），缺省检查全部
    """
    if not h > 0:
        raise ValueError(f"h必须大于0: {h}")
    x = np.array(x, dtype=np.float64)
    _, analytic = tape_gradient(f, x)
    analytic = analytic.ravel()

    flat = x.ravel()
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in indices:
        shifted = flat.copy()
        shifted[i] = flat[i] + h
        f_plus = _evaluate(f, shifted.reshape(x.shape))
        shifted[i] = flat[i] - h
        f_minus = _evaluate(f, shifted.reshape(x.shape))
        numeric = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, float(relative_error(np.float64(analytic[i]), np.float64(numeric))))
    logger.debug(f"finite_diff_check: {len(indices)} 个坐标，最大相对误差 {worst:.3e}")
    return worst
