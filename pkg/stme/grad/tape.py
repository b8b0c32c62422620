"""
反向模式自动微分：带（Tape）按执行顺序记录原语，backward 逆序遍历一次。

Tensor 只持有数据与所属带；requires_grad 为 False 的输入（常量）不参与反向，
所有输入都是常量的运算不会被记录。
"""
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from stme.config import LOG_FLOOR
from stme.errors import NonFiniteError, ShapeMismatchError, TapeError
from . import xcorr as _xcorr

Operand = Union['Tensor', float, int, np.ndarray]

class Tensor:
    __slots__ = ('data', 'tape', 'node_id', 'requires_grad', 'name')

    def __init__(self, data: np.ndarray, tape: 'Tape', node_id: int, requires_grad: bool, name: str = None):
        self.data = data
        self.tape = tape
        self.node_id = node_id
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self):
        label = f" {self.name}" if self.name else ''
        return f"Tensor#{self.node_id}{label} shape={self.shape}"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __add__(self, other: Operand) -> 'Tensor':
        return self.tape.add(self, other)

    def __radd__(self, other: Operand) -> 'Tensor':
        return self.tape.add(other, self)

    def __sub__(self, other: Operand) -> 'Tensor':
        return self.tape.sub(self, other)

    def __rsub__(self, other: Operand) -> 'Tensor':
        return self.tape.sub(other, self)

    def __mul__(self, other: Operand) -> 'Tensor':
        return self.tape.mul(self, other)

    def __rmul__(self, other: Operand) -> 'Tensor':
        return self.tape.mul(other, self)

    def __truediv__(self, other: Operand) -> 'Tensor':
        return self.tape.div(self, other)

    def __rtruediv__(self, other: Operand) -> 'Tensor':
        return self.tape.div(other, self)

    def __neg__(self) -> 'Tensor':
        return self.tape.scale(self, -1.0)

    def __matmul__(self, other: Operand) -> 'Tensor':
        return self.tape.matmul(self, other)

    def __getitem__(self, index) -> 'Tensor':
        return self.tape.slice(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return self.tape.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return self.tape.mean(self, axis, keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.tape.reshape(self, shape)

    def square(self) -> 'Tensor':
        return self.tape.square(self)

    def sqrt(self) -> 'Tensor':
        return self.tape.sqrt(self)

    def exp(self) -> 'Tensor':
        return self.tape.exp(self)

    def cos(self) -> 'Tensor':
        return self.tape.cos(self)

    def sigmoid(self) -> 'Tensor':
        return self.tape.sigmoid(self)

    def tanh(self) -> 'Tensor':
        return self.tape.tanh(self)

    def relu(self) -> 'Tensor':
        return self.tape.relu(self)

    def log_guarded(self, floor: float = LOG_FLOOR) -> 'Tensor':
        return self.tape.log_guarded(self, floor)

@dataclass
class _Record:
    op: str
    input_ids: Tuple[int, ...]
    needs: Tuple[bool, ...]
    output_id: int
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度按广播轴求和还原为原形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad

def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape).copy()
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, shape).copy()

class Tape:
    """
    单线程使用的计算记录

    Args:
        dtype: 叶子与常量的数值类型（梯度检查用float64，训练可用float32）
        record: False 时为推理模式，只做前向，不保存反向闭包
    """

    def __init__(self, dtype=np.float64, record: bool = True):
        self.dtype = np.dtype(dtype)
        self.record = record
        self._records: List[_Record] = []
        self._next_id = 0
        self._leaves: Dict[int, Tensor] = {}

    def __len__(self):
        return len(self._records)

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def leaf(self, value, name: str = None, requires_grad: bool = True) -> Tensor:
        """登记一个可求导的叶子（参数或输入）"""
        data = np.array(value, dtype=self.dtype)
        tensor = Tensor(data, self, self._new_id(), requires_grad and self.record, name)
        if tensor.requires_grad:
            self._leaves[tensor.node_id] = tensor
        return tensor

    def constant(self, value, name: str = None) -> Tensor:
        return Tensor(np.asarray(value, dtype=self.dtype), self, self._new_id(), False, name)

    @property
    def leaves(self) -> List[Tensor]:
        return list(self._leaves.values())

    def _lift(self, x: Operand) -> Tensor:
        if isinstance(x, Tensor):
            if x.tape is not self:
                raise TapeError(f"{x!r} 属于另一条带")
            return x
        return self.constant(x)

    def _emit(self, op: str, inputs: Sequence[Tensor], data: np.ndarray,
              backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
        needs = tuple(t.requires_grad for t in inputs)
        requires_grad = self.record and any(needs)
        out = Tensor(data, self, self._new_id(), requires_grad)
        if requires_grad:
            self._records.append(_Record(op, tuple(t.node_id for t in inputs), needs, out.node_id, backward_fn))
        return out

    # ---- 逐元素二元运算（支持广播） ----

    def add(self, a: Operand, b: Operand) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        return self._emit('add', (a, b), a.data + b.data,
                          lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))

    def sub(self, a: Operand, b: Operand) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        return self._emit('sub', (a, b), a.data - b.data,
                          lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))

    def mul(self, a: Operand, b: Operand) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        return self._emit('mul', (a, b), a.data * b.data,
                          lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))

    def div(self, a: Operand, b: Operand) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        out = a.data / b.data

        def backward_fn(g):
            gb = -g * out / b.data if b.requires_grad else None
            return unbroadcast(g / b.data, a.shape), (unbroadcast(gb, b.shape) if gb is not None else None)
        return self._emit('div', (a, b), out, backward_fn)

    def scale(self, a: Operand, c: float) -> Tensor:
        a = self._lift(a)
        c = float(c)
        return self._emit('scale', (a,), a.data * c, lambda g: (g * c,))

    def matmul(self, a: Operand, b: Operand) -> Tensor:
        """(..., m, k) @ (..., k, n)，批维按广播规则"""
        a, b = self._lift(a), self._lift(b)
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeMismatchError(f"matmul需要至少二维: {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeMismatchError(f"matmul内维不一致: {a.shape} @ {b.shape}")

        def backward_fn(g):
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
            return ga, gb
        return self._emit('matmul', (a, b), a.data @ b.data, backward_fn)

    def xcorr2d_valid(self, x: Operand, k: Operand) -> Tensor:
        """x (*xb, H, W) 与 k (*kb, kh, kw) 的valid互相关 → (*xb, *kb, Ho, Wo)"""
        x, k = self._lift(x), self._lift(k)
        out = _xcorr.xcorr2d_valid(x.data, k.data)

        def backward_fn(g):
            return _xcorr.xcorr2d_valid_adjoints(x.data, k.data, g, x.requires_grad, k.requires_grad)
        return self._emit('xcorr2d_valid', (x, k), out, backward_fn)

    # ---- 逐元素一元运算 ----

    def log_guarded(self, x: Operand, floor: float = LOG_FLOOR) -> Tensor:
        """ln(max(x, floor))；钳位区域（x <= floor）梯度为0"""
        x = self._lift(x)
        if not floor > 0:
            raise ValueError(f"floor必须大于0: {floor}")
        active = x.data > floor
        out = np.log(np.where(active, x.data, floor))
        return self._emit('log_guarded', (x,), out,
                          lambda g: (np.where(active, g / np.where(active, x.data, 1.0), 0.0),))

    def exp(self, x: Operand) -> Tensor:
        x = self._lift(x)
        out = np.exp(x.data)
        return self._emit('exp', (x,), out, lambda g: (g * out,))

    def cos(self, x: Operand) -> Tensor:
        x = self._lift(x)
        return self._emit('cos', (x,), np.cos(x.data), lambda g: (-g * np.sin(x.data),))

    def sqrt(self, x: Operand) -> Tensor:
        x = self._lift(x)
        out = np.sqrt(x.data)
        return self._emit('sqrt', (x,), out, lambda g: (g * 0.5 / out,))

    def square(self, x: Operand) -> Tensor:
        x = self._lift(x)
        return self._emit('square', (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))

    def sigmoid(self, x: Operand) -> Tensor:
        x = self._lift(x)
        out = expit(x.data)
        return self._emit('sigmoid', (x,), out, lambda g: (g * out * (1.0 - out),))

    def tanh(self, x: Operand) -> Tensor:
        x = self._lift(x)
        out = np.tanh(x.data)
        return self._emit('tanh', (x,), out, lambda g: (g * (1.0 - out * out),))

    def relu(self, x: Operand) -> Tensor:
        x = self._lift(x)
        active = x.data > 0
        return self._emit('relu', (x,), np.where(active, x.data, 0.0).astype(x.data.dtype),
                          lambda g: (np.where(active, g, 0.0),))

    # ---- 规约与形状 ----

    def sum(self, x: Operand, axis=None, keepdims: bool = False) -> Tensor:
        x = self._lift(x)
        out = np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims))
        return self._emit('sum', (x,), out, lambda g: (_expand_reduced(g, x.shape, axis, keepdims),))

    def mean(self, x: Operand, axis=None, keepdims: bool = False) -> Tensor:
        x = self._lift(x)
        out = np.asarray(np.mean(x.data, axis=axis, keepdims=keepdims))
        count = x.data.size / max(out.size, 1) if x.data.size else 1.0
        return self._emit('mean', (x,), out,
                          lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,))

    def reshape(self, x: Operand, shape: Tuple[int, ...]) -> Tensor:
        x = self._lift(x)
        return self._emit('reshape', (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))

    def slice(self, x: Operand, index) -> Tensor:
        """基本切片（整数/切片/省略号），不支持花式索引"""
        x = self._lift(x)
        parts = index if isinstance(index, tuple) else (index,)
        if not all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts):
            raise ShapeMismatchError(f"slice只支持基本索引: {index!r}")
        out = x.data[index]

        def backward_fn(g):
            grad = np.zeros_like(x.data)
            grad[index] = g
            return (grad,)
        return self._emit('slice', (x,), np.array(out), backward_fn)

    def concat(self, xs: Iterable[Operand], axis: int = 0) -> Tensor:
        xs = [self._lift(x) for x in xs]
        if not xs:
            raise ShapeMismatchError("concat需要至少一个输入")
        sizes = [x.shape[axis] for x in xs]
        out = np.concatenate([x.data for x in xs], axis=axis)
        splits = np.cumsum(sizes)[:-1]
        return self._emit('concat', xs, out, lambda g: tuple(np.split(g, splits, axis=axis)))

    def stack(self, xs: Iterable[Operand], axis: int = 0) -> Tensor:
        xs = [self._lift(x) for x in xs]
        if not xs:
            raise ShapeMismatchError("stack需要至少一个输入")
        out = np.stack([x.data for x in xs], axis=axis)
        return self._emit('stack', xs, out,
                          lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(xs))))

class Gradients:
    """backward 的结果：按节点取梯度，未连通的叶子得到全零"""

    def __init__(self, grads: Dict[int, np.ndarray], tape: Tape):
        self._grads = grads
        self._tape = tape

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        if tensor.tape is not self._tape:
            raise TapeError(f"{tensor!r} 不属于该带")
        grad = self._grads.get(tensor.node_id)
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.node_id in self._grads

    def global_norm(self, tensors: Iterable[Tensor]) -> float:
        return float(np.sqrt(sum(float(np.sum(self[t] ** 2)) for t in tensors)))

def backward(tape: Tape, output: Tensor) -> Gradients:
    """
    从标量输出逆序遍历记录，每条记录恰好处理一次，扇出处梯度相加

    Raises:
        TapeError: 推理模式的带、输出不属于该带、输出不是标量或与任何叶子无关
    """
    if not tape.record:
        raise TapeError("推理模式（record=False）的带不能反向传播")
    if output.tape is not tape:
        raise TapeError(f"{output!r} 不属于该带")
    if output.data.size != 1:
        raise TapeError(f"backward需要标量输出，实际形状 {output.shape}")
    if not output.requires_grad:
        raise TapeError("输出不依赖任何可求导的叶子，带上没有可反传的前向记录")
    if not np.all(np.isfinite(output.data)):
        raise NonFiniteError(f"输出非有限: {output.data}")

    grads: Dict[int, np.ndarray] = {output.node_id: np.ones_like(output.data)}
    for rec in reversed(tape._records):
        g = grads.pop(rec.output_id, None)
        if g is None:
            continue
        input_grads = rec.backward_fn(g)
        for node_id, need, grad in zip(rec.input_ids, rec.needs, input_grads):
            if not need or grad is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + grad
            else:
                grads[node_id] = grad
    leaf_grads = {node_id: grads[node_id] for node_id in tape._leaves if node_id in grads}
    return Gradients(leaf_grads, tape)
