import os
import logging
from typing import Optional

import numpy as np
import soundfile as sf

from stme.signal.models import Waveform

logger = logging.getLogger(__name__)

# 支持的编码：对外名称 -> libsndfile subtype
ENCODINGS = {
    'pcm16': 'PCM_16',
    'float32': 'FLOAT',
}

class WavError(Exception):
    """WAV读写异常基类"""
    pass

class WavFileNotFoundError(WavError, FileNotFoundError):
    """文件不存在"""
    pass

class WavFormatError(WavError):
    """RIFF头损坏或不是WAV文件"""
    pass

class UnsupportedEncodingError(WavError):
    """不支持的采样编码"""
    pass

class WavWriteError(WavError):
    """路径不可写"""
    pass

def load_wav(path: str) -> Waveform:
    """
    读取WAV文件，多声道取平均为单声道；PCM16按1/32768缩放；不做重采样

    Raises:
        WavFileNotFoundError: 文件不存在
        WavFormatError: RIFF头损坏
        UnsupportedEncodingError: 非PCM16/float32编码
    """
    if not os.path.isfile(path):
        raise WavFileNotFoundError(f"WAV文件不存在: {path}")

    try:
        info = sf.info(path)
    except (RuntimeError, sf.LibsndfileError) as e:
        raise WavFormatError(f"RIFF头损坏或无法解析: {path}: {e}") from e

    if info.format != 'WAV':
        raise WavFormatError(f"不是RIFF WAV文件: {path} (format={info.format})")
    if info.subtype not in ENCODINGS.values():
        raise UnsupportedEncodingError(f"不支持的编码 {info.subtype}: {path}，仅支持PCM_16与FLOAT")

    try:
        data, sample_rate = sf.read(path, dtype='float64', always_2d=True)
    except (RuntimeError, sf.LibsndfileError) as e:
        raise WavFormatError(f"读取WAV数据失败: {path}: {e}") from e

    samples = data.mean(axis=1) if data.shape[1] > 1 else data[:, 0]
    logger.debug(f"load_wav {path}: {len(samples)} samples, {sample_rate} Hz, {info.channels} ch, {info.subtype}")
    return Waveform(samples, sample_rate)

def save_wav(w: Waveform, path: str, encoding: str = 'pcm16') -> int:
    """
    写出单声道WAV

    Args:
        w: 波形
        path: 输出路径
        encoding: 'pcm16' 或 'float32'；float32 时 Waveform 的 float64 样本被截为单精度，读回为最近的 float32 值

    Returns:
        int: 削波样本数（仅pcm16下可能非零）
    """
    if encoding not in ENCODINGS:
        raise UnsupportedEncodingError(f"不支持的编码: {encoding}")

    samples = np.asarray(w.samples, dtype=np.float64)
    clip_count = 0
    if encoding == 'pcm16':
        # -32768对应-1.0；正向最大可表示值为32767/32768
        pcm = np.round(samples * 32768.0)
        clip_count = int(np.count_nonzero((pcm > 32767) | (pcm < -32768)))
        pcm = np.clip(pcm, -32768, 32767).astype(np.int16)
        if clip_count:
            logger.warning(f"save_wav {path}: {clip_count} 个样本超出范围被削波")
        data = pcm
    else:
        data = samples.astype(np.float32)

    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        sf.write(path, data, w.sample_rate_hz, subtype=ENCODINGS[encoding], format='WAV')
    except (OSError, RuntimeError, sf.LibsndfileError) as e:
        raise WavWriteError(f"无法写入WAV文件: {path}: {e}") from e
    return clip_count

def list_wavs(directory: str) -> list:
    """目录下所有.wav文件名（排序）"""
    if not os.path.isdir(directory):
        raise WavFileNotFoundError(f"目录不存在: {directory}")
    return sorted(name for name in os.listdir(directory) if name.lower().endswith('.wav'))
