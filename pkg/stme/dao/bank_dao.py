import os
import json
import logging

import numpy as np
import pandas as pd

from stme.modulation.gabor import make_bank
from stme.modulation.models import Direction, GaborStrfParams, StrfKernelBank

logger = logging.getLogger(__name__)

BANK_FORMAT_VERSION = 1

_KERNEL_KEYS = ('rate_hz', 'scale_cpc', 'direction', 'phase_rad', 't_sigma', 'f_sigma')

class BankFileError(Exception):
    """核组文件异常基类"""
    pass

class BankSchemaError(BankFileError):
    """字段缺失、类型错误或参数越界"""
    pass

class BankVersionError(BankFileError):
    """不支持的格式版本"""
    pass

def bank_to_dict(bank: StrfKernelBank) -> dict:
    if any(p is None for p in bank.params):
        raise BankSchemaError("核组中存在没有Gabor参数的核，无法保存为参数形式")
    return {
        'version': BANK_FORMAT_VERSION,
        'frame_rate_hz': float(bank.frame_rate_hz),
        'kernel_frames': bank.kernel_frames,
        'kernel_channels': bank.kernel_channels,
        'kernels': [p.to_dict() for p in bank.params],
    }

def bank_from_dict(doc: dict) -> StrfKernelBank:
    """按参数重建核组，矩阵总是由 make_gabor_kernel 重新生成"""
    if not isinstance(doc, dict):
        raise BankSchemaError(f"核组文件顶层必须是对象，实际为 {type(doc).__name__}")
    if 'version' not in doc:
        raise BankSchemaError("核组文件缺少 version 字段")
    if doc['version'] != BANK_FORMAT_VERSION:
        raise BankVersionError(f"不支持的核组格式版本: {doc['version']}（支持 {BANK_FORMAT_VERSION}）")
    for key in ('frame_rate_hz', 'kernel_frames', 'kernel_channels', 'kernels'):
        if key not in doc:
            raise BankSchemaError(f"核组文件缺少 {key} 字段")
    if not isinstance(doc['kernels'], list) or not doc['kernels']:
        raise BankSchemaError("kernels 必须是非空数组")

    params = []
    for i, entry in enumerate(doc['kernels']):
        if not isinstance(entry, dict):
            raise BankSchemaError(f"kernels[{i}] 必须是对象")
        missing = [key for key in _KERNEL_KEYS if key not in entry]
        if missing:
            raise BankSchemaError(f"kernels[{i}] 缺少字段: {missing}")
        try:
            params.append(GaborStrfParams(
                rate_hz=entry['rate_hz'],
                scale_cpc=entry['scale_cpc'],
                direction=Direction.from_string(entry['direction']),
                phase_rad=entry['phase_rad'],
                t_sigma=entry['t_sigma'],
                f_sigma=entry['f_sigma'],
            ))
        except (TypeError, ValueError) as e:
            raise BankSchemaError(f"kernels[{i}] 参数非法: {e}") from e

    try:
        frames, channels = int(doc['kernel_frames']), int(doc['kernel_channels'])
        frame_rate = float(doc['frame_rate_hz'])
    except (TypeError, ValueError) as e:
        raise BankSchemaError(f"核几何字段非法: {e}") from e
    if frames < 1 or channels < 1 or frame_rate <= 0:
        raise BankSchemaError(f"核几何非法: {frames}×{channels} @ {frame_rate} Hz")
    return make_bank(params, frame_rate, frames, channels)

def save_bank(bank: StrfKernelBank, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        # repr级浮点保证参数逐位往返
        json.dump(bank_to_dict(bank), f, indent=2)
    logger.info(f"核组已保存: {path} ({len(bank)} 个核)")

def load_bank(path: str) -> StrfKernelBank:
    """
    Raises:
        FileNotFoundError: 文件不存在
        BankSchemaError: JSON无法解析或字段不合法
        BankVersionError: 版本不匹配
    """
    with open(path, 'r', encoding='utf-8') as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise BankSchemaError(f"核组文件不是合法JSON: {path}: {e}") from e
    bank = bank_from_dict(doc)
    logger.info(f"核组已加载: {path} ({len(bank)} 个核, {bank.kernel_frames}×{bank.kernel_channels})")
    return bank

def export_bank_csv(bank: StrfKernelBank, path: str) -> pd.DataFrame:
    """核矩阵导出为长表 (kernel, frame, channel, weight)，附带各核参数列"""
    n, frames, channels = bank.stacked.shape
    kernel_idx, frame_idx, channel_idx = np.meshgrid(np.arange(n), np.arange(frames), np.arange(channels), indexing='ij')
    df = pd.DataFrame({
        'kernel': kernel_idx.ravel(),
        'frame': frame_idx.ravel(),
        'channel': channel_idx.ravel(),
        'weight': bank.stacked.ravel(),
    })
    if all(p is not None for p in bank.params):
        params_df = pd.DataFrame([p.to_dict() for p in bank.params])
        params_df.insert(0, 'kernel', np.arange(n))
        df = df.merge(params_df, on='kernel', how='left')
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False, float_format='%.9g')
    logger.info(f"核矩阵已导出: {path} ({len(df)} 行)")
    return df

def export_bank_matrices(bank: StrfKernelBank, directory: str) -> list:
    """每个核一个 frames×channels 的CSV矩阵（kernel_000.csv ...），行为帧、列为通道"""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, kernel in enumerate(bank.stacked):
        path = os.path.join(directory, f'kernel_{i:03d}.csv')
        pd.DataFrame(kernel).to_csv(path, index=False, header=False, float_format='%.9g')
        paths.append(path)
    logger.info(f"核矩阵已导出到 {directory} ({len(paths)} 个文件)")
    return paths
