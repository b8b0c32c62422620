"""
因果增益网络的前向计算。训练（记录反向）与推理（record=False）走同一套带上代码。
"""
from typing import Dict, Optional, Tuple

import numpy as np

from stme.errors import ShapeMismatchError
from stme.grad.tape import Tape, Tensor
from .models import EnhancerParams, GainMask, GruState

def params_on_tape(tape: Tape, params: EnhancerParams, requires_grad: bool = True) -> Dict[str, Tensor]:
    return {name: tape.leaf(value, name=name, requires_grad=requires_grad) for name, value in params.tensors.items()}

def _dense(tape: Tape, x: Tensor, p: Dict[str, Tensor], prefix: str) -> Tensor:
    return tape.add(tape.matmul(x, p[f'{prefix}.w']), p[f'{prefix}.b'])

def _gru_layer(tape: Tape, x: Tensor, p: Dict[str, Tensor], prefix: str, h0: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """
    单层GRU，逐帧递推：
      z, r = sigmoid(W_zr·x + U_zr·h + b_zr)
      ĥ = tanh(W_h·x + U_h·(r⊙h) + b_h)
      h' = (1 − z)⊙h + z⊙ĥ

    所有帧的输入投影一次算完，循环部分逐帧。
    """
    u_zr, u_h = p[f'{prefix}.u_zr'], p[f'{prefix}.u_h']
    H = u_h.shape[0]
    xw = _dense(tape, x, p, prefix)  # (..., T, 3H)
    n_frames = xw.shape[-2]

    # 隐状态保持 (..., 1, H) 以便直接做矩阵乘
    h = tape.constant(np.expand_dims(h0, -2))
    outputs = []
    for t in range(n_frames):
        xt = xw[..., t:t + 1, :]
        zr = tape.sigmoid(xt[..., :2 * H] + h @ u_zr)
        z, r = zr[..., :H], zr[..., H:]
        candidate = tape.tanh(xt[..., 2 * H:] + (r * h) @ u_h)
        h = (1.0 - z) * h + z * candidate
        outputs.append(h)
    return tape.concat(outputs, axis=-2), h.data[..., 0, :]

def forward_on_tape(tape: Tape, features: Tensor, p: Dict[str, Tensor],
                    state: Optional[GruState] = None) -> Tuple[Tensor, GruState]:
    """
    Args:
        features: 归一化LPS (..., T, K)
        p: 带上的参数
        state: 上一段末尾的GRU状态；None 为全零

    Returns:
        (增益 (..., T, K), 本段末尾状态)
    """
    input_dim = p['fc_in.w'].shape[0]
    H = p['gru1.u_h'].shape[0]
    if features.ndim < 2 or features.shape[-1] != input_dim:
        raise ShapeMismatchError(f"特征形状 {features.shape} 与网络输入维度 {input_dim} 不一致")
    batch_shape = tuple(features.shape[:-2])
    if state is None:
        state = GruState.fresh(H, batch_shape)
    if state.h1.shape != batch_shape + (H,) or state.h2.shape != batch_shape + (H,):
        raise ShapeMismatchError(f"GRU状态形状 {state.h1.shape}/{state.h2.shape} 与期望 {batch_shape + (H,)} 不一致")

    x = tape.relu(_dense(tape, features, p, 'fc_in'))
    x, h1 = _gru_layer(tape, x, p, 'gru1', state.h1)
    x, h2 = _gru_layer(tape, x, p, 'gru2', state.h2)
    x = tape.relu(_dense(tape, x, p, 'fc1'))
    x = tape.relu(_dense(tape, x, p, 'fc2'))
    gain = tape.sigmoid(_dense(tape, x, p, 'fc_out'))
    return gain, GruState(h1, h2)

def forward(features: np.ndarray, params: EnhancerParams, state: Optional[GruState] = None) -> Tuple[GainMask, GruState]:
    """推理：T×K 归一化LPS → (增益, 末尾状态)，可分段调用并传递状态实现流式"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeMismatchError(f"特征必须为二维 T×K: {features.shape}")
    tape = Tape(np.float64, record=False)
    gain, new_state = forward_on_tape(tape, tape.constant(features), params_on_tape(tape, params, False), state)
    return GainMask(gain.data), new_state
