import os
import time
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Set, Tuple

import numpy as np

from stme.dao.csv_dao import DataclassCsvDAO
from stme.dao.params_dao import save_params
from stme.enhancer.enhance import enhance_waveform
from stme.enhancer.models import EnhancerArch, EnhancerParams
from stme.enhancer.network import forward_on_tape, params_on_tape
from stme.errors import ConfigError, TrainingAbortedError
from stme.grad.tape import Tape, backward
from stme.metrics.objective import si_sdr
from stme.modulation.gabor import sample_random_bank
from stme.modulation.mel import mel_filterbank, mel_log_power
from stme.modulation.models import MelFilterbank, StrfKernelBank
from stme.modulation.stmr import stme, stmi_template
from stme.signal.models import Waveform
from stme.spectral.features import log_power, online_normalize
from stme.spectral.models import NormalizerState, StftConfig
from stme.spectral.stft import stft
from stme.utils.exec_time_cost import exec_time_cost
from .config import LossMode, TrainConfig
from .corpus import Corpus, sample_segment
from .losses import loss_on_tape
from .optimizer import AdamMoments, adam_step

logger = logging.getLogger(__name__)

# 验证片段使用与训练不同的随机流
EVAL_SEED_OFFSET = 7919
# 被拒绝的更新在历史中记录的梯度范数（范数本身非负）
REJECTED_GRAD_NORM = -1.0

@dataclass
class StepRecord:
    """一步训练的记录；被拒绝的更新 grad_norm 记为 REJECTED_GRAD_NORM"""
    step: int
    total: float
    tfe: float
    stme: float
    grad_norm: float
    wall_ms: float

@dataclass
class EvalRecord:
    step: int
    si_sdr_db: float
    noisy_si_sdr_db: float
    stmi: float
    stme: float

@dataclass
class TrainHistory:
    steps: List[StepRecord] = field(default_factory=list)
    evals: List[EvalRecord] = field(default_factory=list)
    events: List[str] = field(default_factory=list)  # 被拒绝的更新等
    skipped: Set[str] = field(default_factory=set)  # 取段时跳过的片段

    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.steps])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.steps])

    def save_csv(self, directory: str):
        """history.csv（逐步）与 eval.csv（周期验证）"""
        os.makedirs(directory, exist_ok=True)
        with DataclassCsvDAO(os.path.join(directory, 'history.csv'), StepRecord) as dao:
            dao.write_records(self.steps)
        if self.evals:
            with DataclassCsvDAO(os.path.join(directory, 'eval.csv'), EvalRecord) as dao:
                dao.write_records(self.evals)

def smoothed(values: np.ndarray, window: int) -> np.ndarray:
    """滑动平均（valid），用于观察训练损失走向"""
    values = np.asarray(values, dtype=np.float64)
    window = max(1, min(window, len(values)))
    return np.convolve(values, np.ones(window) / window, mode='valid')

def resolve_bank(config: TrainConfig, bank: Optional[StrfKernelBank]) -> Optional[StrfKernelBank]:
    """
    STME类模式需要核组；tfe_plus_random_stme 未给核组时按 bank_seed 随机生成

    Raises:
        ConfigError: stme / tfe_plus_stme 模式没有提供核组
    """
    mode = config.loss_mode
    if bank is not None or not mode.uses_stme:
        return bank
    if mode == LossMode.TFE_PLUS_RANDOM_STME:
        logger.info(f"未提供核组，使用随机核组 seed={config.bank_seed}, n={config.bank_size}")
        return sample_random_bank(config.bank_seed, config.bank_size)
    raise ConfigError(f"损失模式 {mode.value} 需要提供STRF核组")

def prepare_batch(pairs: List[Tuple[Waveform, Waveform]], cfg: StftConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns:
        (clean_mag, noisy_mag, features)，均为 B×T×K；features 为逐段在线归一化的带噪LPS
    """
    clean_mags, noisy_mags, features = [], [], []
    for clean, noisy in pairs:
        noisy_spec = stft(noisy, cfg)
        clean_mags.append(stft(clean, cfg).magnitude)
        noisy_mags.append(noisy_spec.magnitude)
        feats, _ = online_normalize(log_power(noisy_spec), NormalizerState.fresh(cfg.bins))
        features.append(feats)
    return np.stack(clean_mags), np.stack(noisy_mags), np.stack(features)

def draw_eval_set(config: TrainConfig, corpus: Corpus, skipped: Optional[Set[str]] = None) -> List[Tuple[Waveform, Waveform]]:
    rng = np.random.default_rng(config.seed + EVAL_SEED_OFFSET)
    return [sample_segment(corpus, config, rng, skipped) for _ in range(config.eval_segments)]

def evaluate(params: EnhancerParams, pairs: List[Tuple[Waveform, Waveform]], bank: StrfKernelBank,
             mel_bank: MelFilterbank, cfg: StftConfig, step: int = 0) -> EvalRecord:
    """验证集上增强后的平均 SI-SDR、STMI、STME，以及带噪输入的 SI-SDR 作为参照"""
    enhanced_sdr, noisy_sdr, stmi_values, stme_values = [], [], [], []
    for clean, noisy in pairs:
        enhanced = enhance_waveform(noisy, params, cfg)
        enhanced_sdr.append(si_sdr(clean, enhanced))
        noisy_sdr.append(si_sdr(clean, noisy))
        mel_clean = mel_log_power(stft(clean, cfg), mel_bank)
        mel_enh = mel_log_power(stft(enhanced, cfg), mel_bank)
        stmi_values.append(stmi_template(mel_clean, mel_enh, bank))
        stme_values.append(stme(mel_clean, mel_enh, bank))
    return EvalRecord(step, float(np.mean(enhanced_sdr)), float(np.mean(noisy_sdr)),
                      float(np.mean(stmi_values)), float(np.mean(stme_values)))

def train_step(params: EnhancerParams, pairs: List[Tuple[Waveform, Waveform]], config: TrainConfig,
               cfg: StftConfig, mel_bank: Optional[MelFilterbank], kernels: Optional[np.ndarray]):
    """
    一次前向 + 反向

    Returns:
        ((total, tfe, stme), {参数名: 梯度}, 梯度全局范数)

    Raises:
        TrainingAbortedError: 损失非有限
    """
    clean_mag, noisy_mag, features = prepare_batch(pairs, cfg)
    tape = Tape(np.dtype(config.dtype))
    p = params_on_tape(tape, params)
    gain, _ = forward_on_tape(tape, tape.constant(features), p)
    enh_mag = gain * noisy_mag
    terms = loss_on_tape(tape, config.loss_mode, clean_mag, enh_mag, config.stme_weight, mel_bank, kernels)
    values = terms.values()
    if not np.isfinite(values[0]):
        raise TrainingAbortedError(f"损失非有限: total={values[0]}, tfe={values[1]}, stme={values[2]}")
    grads = backward(tape, terms.total)
    grad_dict = {name: grads[t].astype(np.float64) for name, t in p.items()}
    return values, grad_dict, grads.global_norm(p.values())

@exec_time_cost
def train(config: TrainConfig, corpus: Corpus, bank: Optional[StrfKernelBank] = None,
          out_dir: Optional[str] = None, init_params: Optional[EnhancerParams] = None) -> Tuple[EnhancerParams, TrainHistory]:
    """
    训练增益网络：取段 → 前向 → 损失 → 反向 → Adam，逐步记录历史

    Args:
        config: 训练配置
        corpus: 语料
        bank: STRF核组（stme / tfe_plus_stme 模式必需）
        out_dir: 非空时写出检查点、最终模型与历史CSV
        init_params: 初始参数，缺省按 seed 初始化

    Raises:
        ConfigError: 缺少必需的核组，或初始参数结构与配置不一致
        TrainingAbortedError: 损失非有限
    """
    cfg = StftConfig(sample_rate_hz=corpus.sample_rate_hz)
    arch = EnhancerArch.from_name(config.arch, cfg.bins)
    if init_params is not None and init_params.arch != arch:
        raise ConfigError(f"初始参数结构 {init_params.arch.as_tuple()} 与配置 {arch.as_tuple()} 不一致")
    params = init_params or EnhancerParams.init(arch, seed=config.seed)
    bank = resolve_bank(config, bank)
    mel_bank = mel_filterbank(cfg.sample_rate_hz, cfg.n_fft)
    kernels = bank.stacked if config.loss_mode.uses_stme else None

    history = TrainHistory()
    rng = np.random.default_rng(config.seed)
    moments = AdamMoments.zeros_like(params.tensors)
    eval_pairs, eval_bank = None, None
    if config.eval_every:
        eval_pairs = draw_eval_set(config, corpus, history.skipped)
        eval_bank = bank or sample_random_bank(config.bank_seed, config.bank_size)

    logger.info(f"开始训练: mode={config.loss_mode.value}, arch={arch.as_tuple()} ({arch.param_count} 个参数), "
                f"steps={config.steps}, batch={config.batch_size}, λ={config.stme_weight}")
    for step in range(1, config.steps + 1):
        start = time.perf_counter()
        pairs = [sample_segment(corpus, config, rng, history.skipped) for _ in range(config.batch_size)]
        (total, tfe_value, stme_value), grads, grad_norm = train_step(params, pairs, config, cfg, mel_bank, kernels)

        result = adam_step(params.tensors, grads, moments, config, moments.step + 1)
        if result.accepted:
            params = params.replace(result.params)
            moments = result.moments
        else:
            history.events.append(f"step {step}: {result.reason}")
            grad_norm = REJECTED_GRAD_NORM

        wall_ms = (time.perf_counter() - start) * 1000.0
        history.steps.append(StepRecord(step, total, tfe_value, stme_value, grad_norm, wall_ms))
        if step % config.log_every == 0 or step == 1:
            logger.info(f"step {step}/{config.steps}: total={total:.6g} tfe={tfe_value:.6g} "
                        f"stme={stme_value:.6g} |g|={grad_norm:.4g} ({wall_ms:.0f} ms)")

        if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_params(params, os.path.join(out_dir, f'checkpoint_{step:06d}.bin'))
        if eval_pairs and step % config.eval_every == 0:
            record = evaluate(params, eval_pairs, eval_bank, mel_bank, cfg, step)
            history.evals.append(record)
            logger.info(f"eval step {step}: SI-SDR {record.si_sdr_db:.2f} dB (带噪 {record.noisy_si_sdr_db:.2f} dB), "
                        f"STMI {record.stmi:.4f}, STME {record.stme:.4f}")

    if out_dir:
        save_params(params, os.path.join(out_dir, 'model.bin'))
        history.save_csv(out_dir)
        logger.info(f"模型与训练历史已写入 {out_dir}")
    return params, history
