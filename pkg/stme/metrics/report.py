import os
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from stme.dao.wav_dao import load_wav, list_wavs
from stme.errors import EmptyCorpusError, SignalTooShortError, ZeroPowerError
from stme.modulation.mel import mel_filterbank
from stme.modulation.models import MelFilterbank, StrfKernelBank
from stme.utils.exec_time_cost import exec_time_cost
from .objective import si_sdr, stoi, stmi

logger = logging.getLogger(__name__)

AGGREGATE_ROW = 'MEAN'
REPORT_COLUMNS = ['filename', 'si_sdr_db', 'stoi', 'stmi', 'duration_s']

@dataclass
class FileMetrics:
    filename: str
    si_sdr_db: float  # 参考信号全零时为NaN（不适用）
    stoi: float  # 短于STOI最小分析长度或参考全静音时为NaN
    stmi: float
    duration_s: float

@dataclass
class MetricReport:
    """逐文件指标 + 聚合；unmatched 为两个目录中未配对的文件"""
    rows: List[FileMetrics] = field(default_factory=list)
    unmatched: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def mean(self, metric: str) -> float:
        """忽略不适用（NaN）项的均值；全部不适用时为NaN"""
        values = np.array([getattr(r, metric) for r in self.rows], dtype=np.float64)
        valid = values[~np.isnan(values)]
        return float(valid.mean()) if valid.size else float('nan')

    def count(self, metric: str) -> int:
        return int(sum(1 for r in self.rows if not np.isnan(getattr(r, metric))))

    def to_frame(self) -> pd.DataFrame:
        """逐文件行 + 末尾一行聚合均值"""
        df = pd.DataFrame([asdict(r) for r in self.rows], columns=REPORT_COLUMNS)
        aggregate = {'filename': AGGREGATE_ROW}
        aggregate.update({m: self.mean(m) for m in REPORT_COLUMNS[1:]})
        return pd.concat([df, pd.DataFrame([aggregate])], ignore_index=True)

    def save_csv(self, path: str) -> pd.DataFrame:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        df = self.to_frame()
        df.to_csv(path, index=False, encoding='utf-8', float_format='%.6g', na_rep='nan')
        logger.info(f"评估报告已写入 {path}（{len(self.rows)} 个文件）")
        return df

def _or_nan(name: str, filename: str, metric: Callable[[], float]) -> float:
    """静音参考或过短输入使该项不适用，记为NaN"""
    try:
        return metric()
    except (SignalTooShortError, ZeroPowerError) as e:
        logger.warning(f"{filename} 不计算{name}: {e}")
        return float('nan')

def evaluate_pair(clean_path: str, processed_path: str, bank: StrfKernelBank,
                  mel_bank: Optional[MelFilterbank] = None) -> FileMetrics:
    clean = load_wav(clean_path)
    processed = load_wav(processed_path)
    filename = os.path.basename(clean_path)
    return FileMetrics(
        filename=filename,
        si_sdr_db=_or_nan('SI-SDR', filename, lambda: si_sdr(clean, processed)),
        stoi=_or_nan('STOI', filename, lambda: stoi(clean, processed)),
        stmi=stmi(clean, processed, bank, mel_bank),
        duration_s=clean.duration_s,
    )

@exec_time_cost
def evaluate_corpus(clean_dir: str, processed_dir: str, bank: StrfKernelBank, workers: int = 1) -> MetricReport:
    """
    按文件名配对两个目录的WAV文件并逐文件计算 SI-SDR / STOI / STMI

    未配对的文件告警并跳过；按文件名排序合并，并行与串行结果一致。

    Raises:
        EmptyCorpusError: 两个目录没有同名文件
    """
    clean_names = set(list_wavs(clean_dir))
    processed_names = set(list_wavs(processed_dir))
    matched = sorted(clean_names & processed_names)
    unmatched = sorted(clean_names ^ processed_names)
    for name in unmatched:
        logger.warning(f"未配对的文件，跳过: {name}")
    if not matched:
        raise EmptyCorpusError(f"{clean_dir} 与 {processed_dir} 没有同名WAV文件")

    mel_bank = mel_filterbank()

    def run(name: str) -> FileMetrics:
        return evaluate_pair(os.path.join(clean_dir, name), os.path.join(processed_dir, name), bank, mel_bank)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, matched))
    else:
        rows = [run(name) for name in matched]
    logger.info(f"评估完成: {len(rows)} 个文件，平均SI-SDR {MetricReport(rows).mean('si_sdr_db'):.2f} dB")
    return MetricReport(rows, unmatched)
