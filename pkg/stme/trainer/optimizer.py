import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)

@dataclass
class AdamMoments:
    """一阶/二阶矩估计；step 为已接受的更新次数"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @staticmethod
    def zeros_like(params: Dict[str, np.ndarray]) -> 'AdamMoments':
        return AdamMoments({k: np.zeros_like(p) for k, p in params.items()},
                           {k: np.zeros_like(p) for k, p in params.items()}, 0)

@dataclass
class AdamResult:
    params: Dict[str, np.ndarray]
    moments: AdamMoments
    accepted: bool
    reason: Optional[str] = None

def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], moments: AdamMoments,
              config, step_index: int) -> AdamResult:
    """
    带偏差修正的Adam：
      m = β1·m + (1−β1)·g，v = β2·v + (1−β2)·g²
      θ −= lr · m̂ / (sqrt(v̂) + eps)，m̂ = m/(1−β1^t)，v̂ = v/(1−β2^t)

    梯度含非有限值时拒绝本步：参数与矩估计保持不变，结果中给出原因。

    Args:
        config: 提供 learning_rate、beta1、beta2、adam_eps（如 TrainConfig）
        step_index: 从1开始的更新序号 t
    """
    if set(params) != set(grads):
        raise ValueError(f"参数与梯度的名称不一致: {sorted(set(params) ^ set(grads))}")
    if step_index < 1:
        raise ValueError(f"step_index从1开始: {step_index}")

    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        reason = f"梯度非有限，拒绝第 {step_index} 步更新: {bad}"
        logger.warning(reason)
        return AdamResult(params, moments, False, reason)

    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** step_index
    correction2 = 1.0 - b2 ** step_index
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        m = b1 * moments.m[name] + (1.0 - b1) * g
        v = b2 * moments.v[name] + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_m[name], new_v[name] = m, v
    return AdamResult(new_params, AdamMoments(new_m, new_v, moments.step + 1), True)
