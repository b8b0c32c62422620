from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from stme.errors import NonFiniteError, ShapeMismatchError

# 饱和单位增益的输出偏置：float64 下 sigmoid(40) == 1.0
SATURATED_BIAS = 40.0

@dataclass(frozen=True)
class EnhancerArch:
    """
    增益预测网络结构：FC_in(ReLU) → GRU1 → GRU2 → FC1(ReLU) → FC2(ReLU) → FC_out(sigmoid)
    """
    input_dim: int = 257
    fc_in_dim: int = 64
    gru_hidden: int = 64
    fc_hidden: int = 96
    output_dim: Optional[int] = None

    def __post_init__(self):
        if self.output_dim is None:
            object.__setattr__(self, 'output_dim', self.input_dim)
        dims = (self.input_dim, self.fc_in_dim, self.gru_hidden, self.fc_hidden, self.output_dim)
        if any(int(d) != d or d < 1 for d in dims):
            raise ValueError(f"网络各维度必须为正整数: {dims}")
        if self.output_dim != self.input_dim:
            raise ValueError(f"output_dim ({self.output_dim}) 必须等于 input_dim ({self.input_dim})")

    @staticmethod
    def desk(input_dim: int = 257) -> 'EnhancerArch':
        return EnhancerArch(input_dim, 64, 64, 96)

    @staticmethod
    def full(input_dim: int = 257) -> 'EnhancerArch':
        return EnhancerArch(input_dim, 400, 400, 600)

    @staticmethod
    def tiny(input_dim: int = 6) -> 'EnhancerArch':
        """梯度检查用的小网络"""
        return EnhancerArch(input_dim, 5, 4, 6)

    @staticmethod
    def from_name(name: str, input_dim: int = 257) -> 'EnhancerArch':
        builders = {'desk': EnhancerArch.desk, 'full': EnhancerArch.full, 'tiny': EnhancerArch.tiny}
        if name not in builders:
            raise ValueError(f"Unknown arch: {name}，可选 {sorted(builders)}")
        return builders[name](input_dim)

    def as_tuple(self) -> Tuple[int, int, int, int, int]:
        return (self.input_dim, self.fc_in_dim, self.gru_hidden, self.fc_hidden, self.output_dim)

    def param_shapes(self) -> 'OrderedDict[str, Tuple[int, ...]]':
        """
        参数名与形状（按存储顺序）

        全连接权重为 (in, out)；GRU 的输入权重与偏置按 [z | r | h] 三段拼接，
        循环权重拆为 u_zr (H, 2H) 与 u_h (H, H)。
        """
        H = self.gru_hidden
        shapes = OrderedDict()
        shapes['fc_in.w'] = (self.input_dim, self.fc_in_dim)
        shapes['fc_in.b'] = (self.fc_in_dim,)
        for name, in_dim in (('gru1', self.fc_in_dim), ('gru2', H)):
            shapes[f'{name}.w'] = (in_dim, 3 * H)
            shapes[f'{name}.u_zr'] = (H, 2 * H)
            shapes[f'{name}.u_h'] = (H, H)
            shapes[f'{name}.b'] = (3 * H,)
        shapes['fc1.w'] = (H, self.fc_hidden)
        shapes['fc1.b'] = (self.fc_hidden,)
        shapes['fc2.w'] = (self.fc_hidden, self.fc_hidden)
        shapes['fc2.b'] = (self.fc_hidden,)
        shapes['fc_out.w'] = (self.fc_hidden, self.output_dim)
        shapes['fc_out.b'] = (self.output_dim,)
        return shapes

    @property
    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

@dataclass(frozen=True, eq=False)
class EnhancerParams:
    arch: EnhancerArch
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.arch.param_shapes()
        if set(self.tensors) != set(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeMismatchError(f"参数名与结构不一致: 缺少 {missing}，多余 {extra}")
        tensors = OrderedDict()
        for name, shape in expected.items():
            value = np.array(self.tensors[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeMismatchError(f"参数 {name} 形状 {value.shape} 与结构要求 {shape} 不一致")
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"参数 {name} 中存在非有限值")
            value.setflags(write=False)
            tensors[name] = value
        object.__setattr__(self, 'tensors', tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def param_count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    @staticmethod
    def zeros(arch: EnhancerArch) -> 'EnhancerParams':
        return EnhancerParams(arch, {name: np.zeros(shape) for name, shape in arch.param_shapes().items()})

    @staticmethod
    def init(arch: EnhancerArch, seed: int = 0) -> 'EnhancerParams':
        """Glorot均匀初始化权重，偏置为0"""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in arch.param_shapes().items():
            if len(shape) == 1:
                tensors[name] = np.zeros(shape)
            else:
                fan_in, fan_out = shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                tensors[name] = rng.uniform(-limit, limit, size=shape)
        return EnhancerParams(arch, tensors)

    @staticmethod
    def constant_gain(arch: EnhancerArch, bias: float = SATURATED_BIAS) -> 'EnhancerParams':
        """全零权重、输出偏置为常数：增益恒为 sigmoid(bias)"""
        params = EnhancerParams.zeros(arch).tensors
        tensors = {name: np.array(value) for name, value in params.items()}
        tensors['fc_out.b'] = np.full(arch.output_dim, float(bias))
        return EnhancerParams(arch, tensors)

    def replace(self, updates: Dict[str, np.ndarray]) -> 'EnhancerParams':
        tensors = dict(self.tensors)
        tensors.update(updates)
        return EnhancerParams(self.arch, tensors)

@dataclass(frozen=True)
class GruState:
    """两层GRU的隐状态 (..., H)"""
    h1: np.ndarray
    h2: np.ndarray

    @staticmethod
    def fresh(hidden: int, batch_shape: Tuple[int, ...] = ()) -> 'GruState':
        return GruState(np.zeros(batch_shape + (hidden,)), np.zeros(batch_shape + (hidden,)))

@dataclass(frozen=True)
class GainMask:
    """T × K 幅度增益，取值在sigmoid值域内"""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeMismatchError(f"增益必须为二维 T×K: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("增益中存在非有限值")
        # sigmoid饱和时在浮点下可达到端点
        if np.any(data < 0.0) or np.any(data > 1.0):
            raise ValueError("增益超出[0, 1]")
        object.__setattr__(self, 'data', data)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape
