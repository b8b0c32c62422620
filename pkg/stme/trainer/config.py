from dataclasses import dataclass, asdict, fields
from enum import Enum
from typing import Tuple

from stme.config import BANK_SIZE
from stme.errors import ConfigError

class LossMode(Enum):
    """四种训练目标：GRU(TFE) / GRU(STME) / GRU(TFE+STME) / GRU(TFE+随机核STME)"""
    TFE = 'tfe'
    STME = 'stme'
    TFE_PLUS_STME = 'tfe_plus_stme'
    TFE_PLUS_RANDOM_STME = 'tfe_plus_random_stme'

    @staticmethod
    def from_string(mode_str: str) -> 'LossMode':
        for mode in LossMode:
            if mode.value == mode_str:
                return mode
        raise ConfigError(f"Unknown loss mode: {mode_str}，可选 {[m.value for m in LossMode]}")

    @property
    def uses_tfe(self) -> bool:
        return self != LossMode.STME

    @property
    def uses_stme(self) -> bool:
        return self != LossMode.TFE

@dataclass
class TrainConfig:
    """训练配置，可从JSON字典构建；未知键视为错误"""
    learning_rate: float = 5e-4
    batch_size: int = 8  # 全规模训练为64
    segment_seconds: float = 1.0
    steps: int = 200
    seed: int = 0
    loss_mode: LossMode = LossMode.TFE
    stme_weight: float = 1.0  # λ
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    snr_range_db: Tuple[float, float] = (-6.0, 6.0)
    arch: str = 'desk'
    bank_seed: int = 0  # tfe_plus_random_stme 未给核组时的随机核种子
    bank_size: int = BANK_SIZE
    log_every: int = 10
    checkpoint_every: int = 0  # 0 表示只在结束时保存
    eval_every: int = 0  # 0 表示不做周期性验证
    eval_segments: int = 4
    dtype: str = 'float64'

    def __post_init__(self):
        if isinstance(self.loss_mode, str):
            self.loss_mode = LossMode.from_string(self.loss_mode)
        self.snr_range_db = tuple(float(v) for v in self.snr_range_db)
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate必须大于0: {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size必须不小于1: {self.batch_size}")
        if not self.segment_seconds > 0:
            raise ConfigError(f"segment_seconds必须大于0: {self.segment_seconds}")
        if self.steps < 0:
            raise ConfigError(f"steps不能为负: {self.steps}")
        if self.stme_weight < 0:
            raise ConfigError(f"stme_weight (λ) 不能为负: {self.stme_weight}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or not self.adam_eps > 0:
            raise ConfigError(f"Adam参数非法: betas=({self.beta1}, {self.beta2}), eps={self.adam_eps}")
        if len(self.snr_range_db) != 2 or self.snr_range_db[0] > self.snr_range_db[1]:
            raise ConfigError(f"snr_range_db必须为 [low, high] 且 low <= high: {self.snr_range_db}")
        if self.arch not in ('desk', 'full', 'tiny'):
            raise ConfigError(f"Unknown arch: {self.arch}")
        if self.dtype not in ('float64', 'float32'):
            raise ConfigError(f"dtype必须为float64或float32: {self.dtype}")
        for name in ('bank_size', 'log_every', 'eval_segments'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}必须不小于1: {getattr(self, name)}")
        if self.checkpoint_every < 0 or self.eval_every < 0:
            raise ConfigError("checkpoint_every/eval_every不能为负")

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"未知的训练配置项: {unknown}")
        return cls(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['loss_mode'] = self.loss_mode.value
        data['snr_range_db'] = list(self.snr_range_db)
        return data
