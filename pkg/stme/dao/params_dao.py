"""
增益网络参数的二进制文件：

  magic 'STME' | version u16 | 结构头 5×u32 | 张量数 u32 |
  每个张量: 名称长度 u16, 名称(utf-8), 维数 u8, 各维 u32, float64 小端数据 |
  CRC32 u32（覆盖之前的全部字节）

所有整数均为小端。
"""
import os
import struct
import zlib
import logging

import numpy as np

from stme.enhancer.models import EnhancerArch, EnhancerParams

logger = logging.getLogger(__name__)

PARAMS_MAGIC = b'STME'
PARAMS_FORMAT_VERSION = 1

class ParamsFileError(Exception):
    """模型文件异常基类"""
    pass

class ChecksumError(ParamsFileError):
    """校验和不符或文件被截断"""
    pass

class ParamsVersionError(ParamsFileError):
    """不支持的格式版本"""
    pass

class ArchInconsistencyError(ParamsFileError):
    """张量名称/形状与结构头不一致"""
    pass

def encode_params(params: EnhancerParams) -> bytes:
    parts = [PARAMS_MAGIC, struct.pack('<H', PARAMS_FORMAT_VERSION),
             struct.pack('<5I', *params.arch.as_tuple()), struct.pack('<I', len(params.tensors))]
    for name, value in params.tensors.items():
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<B', value.ndim))
        parts.append(struct.pack(f'<{value.ndim}I', *value.shape))
        parts.append(np.ascontiguousarray(value, dtype='<f8').tobytes())
    body = b''.join(parts)
    return body + struct.pack('<I', zlib.crc32(body))

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumError("模型文件内容不完整")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

def decode_params(data: bytes) -> EnhancerParams:
    if len(data) < len(PARAMS_MAGIC) + 2 + 4:
        raise ChecksumError(f"模型文件过短 ({len(data)} 字节)，可能被截断")
    body, (stored_crc,) = data[:-4], struct.unpack('<I', data[-4:])
    if zlib.crc32(body) != stored_crc:
        raise ChecksumError("模型文件校验和不符（文件损坏或被截断）")

    reader = _Reader(body)
    if reader.take(len(PARAMS_MAGIC)) != PARAMS_MAGIC:
        raise ParamsFileError("不是STME模型文件（magic不符）")
    (version,) = reader.unpack('<H')
    if version != PARAMS_FORMAT_VERSION:
        raise ParamsVersionError(f"不支持的模型格式版本: {version}（支持 {PARAMS_FORMAT_VERSION}）")
    try:
        arch = EnhancerArch(*reader.unpack('<5I'))
    except ValueError as e:
        raise ArchInconsistencyError(f"结构头非法: {e}") from e
    expected = arch.param_shapes()

    (count,) = reader.unpack('<I')
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = tuple(reader.unpack(f'<{ndim}I'))
        if name not in expected:
            raise ArchInconsistencyError(f"结构中不存在参数 {name}")
        if shape != expected[name]:
            raise ArchInconsistencyError(f"参数 {name} 声明形状 {shape} 与结构头要求 {expected[name]} 不一致")
        size = int(np.prod(shape))
        tensors[name] = np.frombuffer(reader.take(8 * size), dtype='<f8').reshape(shape).astype(np.float64)
    if set(tensors) != set(expected):
        raise ArchInconsistencyError(f"缺少参数: {sorted(set(expected) - set(tensors))}")
    if reader.pos != len(body):
        raise ArchInconsistencyError(f"张量之后还有 {len(body) - reader.pos} 字节未解析")
    return EnhancerParams(arch, tensors)

def save_params(params: EnhancerParams, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(encode_params(params))
    logger.info(f"模型参数已保存: {path} ({params.param_count} 个参数)")

def load_params(path: str) -> EnhancerParams:
    """
    Raises:
        FileNotFoundError: 文件不存在
        ChecksumError: 校验和不符/截断
        ParamsVersionError: 版本不匹配
        ArchInconsistencyError: 声明形状与结构不一致
    """
    with open(path, 'rb') as f:
        data = f.read()
    params = decode_params(data)
    logger.info(f"模型参数已加载: {path} (arch={params.arch.as_tuple()}, {params.param_count} 个参数)")
    return params
