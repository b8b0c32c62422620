import os
import logging
from abc import ABC, abstractmethod
from typing import List, Optional, Set, Tuple

import numpy as np

from stme.config import SAMPLE_RATE_HZ
from stme.dao.wav_dao import load_wav, list_wavs
from stme.errors import EmptyCorpusError, SampleRateMismatchError, ZeroPowerError
from stme.signal.mixing import mix_at_snr
from stme.signal.models import Waveform
from stme.signal.synth import SURROGATE_CLASSES, NoiseKind, synth_surrogate_speech, synth_noise
from .config import TrainConfig

logger = logging.getLogger(__name__)

# 单次取段的最大尝试次数（跳过过短片段或静音段）
MAX_SAMPLE_ATTEMPTS = 1000

class Corpus(ABC):
    """干净语音片段集合 + 噪声片段集合"""
    sample_rate_hz: int = SAMPLE_RATE_HZ

    @abstractmethod
    def clean_names(self) -> List[str]:
        pass

    @abstractmethod
    def noise_names(self) -> List[str]:
        pass

    @abstractmethod
    def clean(self, index: int) -> Waveform:
        pass

    @abstractmethod
    def noise(self, index: int) -> Waveform:
        pass

class SyntheticCorpus(Corpus):
    """由替代语音与合成噪声构成的语料，片段按需生成并缓存"""

    def __init__(self, clips_per_class: int = 4, clip_seconds: float = 2.0, noise_kinds: Tuple[str, ...] = ('white', 'pink', 'modulated'),
                 noise_seconds: float = 4.0, seed: int = 0, sample_rate_hz: int = SAMPLE_RATE_HZ):
        if clips_per_class < 1 or not noise_kinds:
            raise EmptyCorpusError("合成语料至少需要每类一个片段和一种噪声")
        self.clips_per_class = clips_per_class
        self.clip_seconds = clip_seconds
        self.noise_kinds = tuple(NoiseKind.from_string(k) if isinstance(k, str) else k for k in noise_kinds)
        self.noise_seconds = noise_seconds
        self.seed = seed
        self.sample_rate_hz = sample_rate_hz
        self._clean_cache = {}
        self._noise_cache = {}

    def clean_names(self) -> List[str]:
        return [f"class{i % len(SURROGATE_CLASSES)}_{i // len(SURROGATE_CLASSES):03d}"
                for i in range(self.clips_per_class * len(SURROGATE_CLASSES))]

    def noise_names(self) -> List[str]:
        return [kind.value for kind in self.noise_kinds]

    def class_of(self, index: int) -> int:
        return index % len(SURROGATE_CLASSES)

    def clean(self, index: int) -> Waveform:
        if index not in self._clean_cache:
            self._clean_cache[index] = synth_surrogate_speech(self.seed * 100003 + index, self.clip_seconds,
                                                              self.class_of(index), self.sample_rate_hz)
        return self._clean_cache[index]

    def noise(self, index: int) -> Waveform:
        if index not in self._noise_cache:
            self._noise_cache[index] = synth_noise(self.noise_kinds[index], self.seed * 100003 + 50000 + index,
                                                   self.noise_seconds, self.sample_rate_hz)
        return self._noise_cache[index]

class DirectoryCorpus(Corpus):
    """clean-dir + noise-dir 下的WAV文件；读取后缓存"""

    def __init__(self, clean_dir: str, noise_dir: str, sample_rate_hz: int = SAMPLE_RATE_HZ):
        self.clean_dir = clean_dir
        self.noise_dir = noise_dir
        self.sample_rate_hz = sample_rate_hz
        self._clean_files = list_wavs(clean_dir)
        self._noise_files = list_wavs(noise_dir)
        if not self._clean_files:
            raise EmptyCorpusError(f"干净语音目录为空: {clean_dir}")
        if not self._noise_files:
            raise EmptyCorpusError(f"噪声目录为空: {noise_dir}")
        self._cache = {}
        logger.info(f"语料: {len(self._clean_files)} 个干净片段 ({clean_dir}), {len(self._noise_files)} 个噪声片段 ({noise_dir})")

    def clean_names(self) -> List[str]:
        return list(self._clean_files)

    def noise_names(self) -> List[str]:
        return list(self._noise_files)

    def _load(self, directory: str, name: str) -> Waveform:
        path = os.path.join(directory, name)
        if path not in self._cache:
            w = load_wav(path)
            if w.sample_rate_hz != self.sample_rate_hz:
                raise SampleRateMismatchError(f"{path}: 采样率 {w.sample_rate_hz} Hz，期望 {self.sample_rate_hz} Hz")
            self._cache[path] = w
        return self._cache[path]

    def clean(self, index: int) -> Waveform:
        return self._load(self.clean_dir, self._clean_files[index])

    def noise(self, index: int) -> Waveform:
        return self._load(self.noise_dir, self._noise_files[index])

def sample_segment(corpus: Corpus, cfg: TrainConfig, rng: np.random.Generator,
                   skipped: Optional[Set[str]] = None) -> Tuple[Waveform, Waveform]:
    """
    随机取一个训练段：均匀选干净片段与随机起点，均匀选噪声片段，SNR在 snr_range_db 内均匀取值后混合

    过短的片段与静音段被跳过并记入 skipped（首次出现时告警）。

    Returns:
        (clean, noisy)，长度均为 round(segment_seconds · fs)

    Raises:
        EmptyCorpusError: 语料为空或没有足够长的片段
    """
    skipped = skipped if skipped is not None else set()
    clean_names, noise_names = corpus.clean_names(), corpus.noise_names()
    if not clean_names or not noise_names:
        raise EmptyCorpusError("语料为空")
    seg_len = int(round(cfg.segment_seconds * corpus.sample_rate_hz))
    low, high = cfg.snr_range_db

    def skip(kind: str, name: str, why: str):
        key = f"{kind}/{name}"
        if key not in skipped:
            skipped.add(key)
            logger.warning(f"跳过{kind}片段 {name}: {why}")

    for _ in range(MAX_SAMPLE_ATTEMPTS):
        ci = int(rng.integers(len(clean_names)))
        ni = int(rng.integers(len(noise_names)))
        clean = corpus.clean(ci)
        if len(clean) < seg_len:
            skip('clean', clean_names[ci], f"长度 {len(clean)} 短于段长 {seg_len}")
            continue
        noise = corpus.noise(ni)
        if len(noise) < seg_len:
            skip('noise', noise_names[ni], f"长度 {len(noise)} 短于段长 {seg_len}")
            continue
        offset = int(rng.integers(0, len(clean) - seg_len + 1))
        snr_db = float(rng.uniform(low, high)) if high > low else low
        mix_seed = int(rng.integers(2 ** 31))
        segment = clean.crop(offset, seg_len)
        try:
            mixture = mix_at_snr(segment, noise, snr_db, seed=mix_seed)
        except ZeroPowerError as e:
            logger.debug(f"静音段，重新采样: {clean_names[ci]}@{offset}: {e}")
            continue
        return segment, mixture.noisy

    raise EmptyCorpusError(f"{MAX_SAMPLE_ATTEMPTS} 次尝试后仍未取到长度不小于 {cfg.segment_seconds} s 的有效训练段（已跳过 {len(skipped)} 个片段）")

def synthetic_labeled_clips(clips_per_class: int, clip_seconds: float = 1.0, seed: int = 0,
                            sample_rate_hz: int = SAMPLE_RATE_HZ) -> List[Tuple[Waveform, int]]:
    """每个替代语音类别 clips_per_class 个带标签片段"""
    corpus = SyntheticCorpus(clips_per_class, clip_seconds, seed=seed, sample_rate_hz=sample_rate_hz)
    return [(corpus.clean(i), corpus.class_of(i)) for i in range(len(corpus.clean_names()))]

def labeled_clips_from_dir(root: str, sample_rate_hz: int = SAMPLE_RATE_HZ) -> Tuple[List[Tuple[Waveform, int]], List[str]]:
    """
    root 下每个一级子目录为一个类别，类别序号按子目录名排序

    Returns:
        (带标签片段, 类别名列表)
    """
    if not os.path.isdir(root):
        raise EmptyCorpusError(f"目录不存在: {root}")
    class_names = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    clips = []
    for class_id, name in enumerate(class_names):
        directory = os.path.join(root, name)
        for filename in list_wavs(directory):
            w = load_wav(os.path.join(directory, filename))
            if w.sample_rate_hz != sample_rate_hz:
                raise SampleRateMismatchError(f"{filename}: 采样率 {w.sample_rate_hz} Hz，期望 {sample_rate_hz} Hz")
            clips.append((w, class_id))
    if not clips:
        raise EmptyCorpusError(f"{root} 下没有带标签的WAV文件")
    logger.info(f"带标签片段: {len(clips)} 个，{len(class_names)} 类 ({root})")
    return clips, class_names
