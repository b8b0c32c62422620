from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Tuple
import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from stme.config import BANK_SIZE, OUTPUT_DIR_ENV
from stme.dao.bank_dao import BankFileError, save_bank, load_bank, export_bank_csv, export_bank_matrices
from stme.dao.csv_dao import CSVSchemaError, DataclassCsvDAO
from stme.dao.params_dao import ParamsFileError, load_params
from stme.dao.wav_dao import WavError, ENCODINGS, load_wav, save_wav, list_wavs
from stme.enhancer.enhance import StreamingEnhancer, enhance_waveform
from stme.errors import StmeError, EmptyCorpusError, SignalTooShortError
from stme.metrics.report import evaluate_corpus
from stme.modulation.gabor import sample_random_bank
from stme.signal.mixing import mix_at_snr, measured_snr_db
from stme.spectral.features import log_power
from stme.spectral.models import StftConfig
from stme.spectral.stft import stft
from stme.trainer.config import LossMode, TrainConfig
from stme.trainer.corpus import SyntheticCorpus, DirectoryCorpus, synthetic_labeled_clips, labeled_clips_from_dir
from stme.trainer.gradcheck import GradcheckReport, gradcheck_suite
from stme.trainer.kernel_tuning import KernelTuner, TuneConfig
from stme.trainer.trainer import train

logger = logging.getLogger(__name__)

# 命令行上的损失模式写法 -> LossMode取值
LOSS_ALIASES = {
    'tfe': 'tfe',
    'stme': 'stme',
    'tfe+stme': 'tfe_plus_stme',
    'tfe+stme-random': 'tfe_plus_random_stme',
}

TRAIN_FIELDS = [f.name for f in fields(TrainConfig)]

# 子命令运行时会被捕获并转为退出码1的异常
HANDLED_ERRORS = (StmeError, WavError, BankFileError, ParamsFileError, CSVSchemaError, FileNotFoundError)

# 不属于可配置参数的内部字段
_INTERNAL_KEYS = ('func', 'leaf', 'config')

class UsageError(Exception):
    """参数组合不合法（退出码2）"""
    pass

class InputFileError(StmeError, FileNotFoundError):
    """命令行指定的输入文件/目录不存在"""
    pass

@dataclass
class MixRecord:
    filename: str
    clean_file: str
    noise_file: str
    snr_db: float
    measured_snr_db: float
    offset: int
    alpha: float
    seed: int
    clipped: int

def output_path(path: str, is_dir: bool = False) -> str:
    """STME_OUTPUT_DIR 覆盖输出目录：目录型输出整体替换，文件型输出保留文件名"""
    override = os.environ.get(OUTPUT_DIR_ENV)
    if not override:
        return path
    return override if is_dir else os.path.join(override, os.path.basename(path))

def require_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise UsageError(f"缺少参数 {flag}")
    if not os.path.exists(path):
        raise InputFileError(f"{flag} 指定的路径不存在: {path}")
    return path

def require_args(args: argparse.Namespace, *names: str):
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name) in (None, '')]
    if missing:
        raise UsageError(f"缺少参数: {', '.join(missing)}")

def bank_or_random(path: Optional[str], seed: int, n: int):
    if path:
        return load_bank(require_file(path, '--bank'))
    logger.info(f"未指定 --bank，使用随机核组 (seed={seed}, n={n})")
    return sample_random_bank(seed, n)

def echo_config(args: argparse.Namespace, extra: Optional[dict] = None):
    resolved = {k: v for k, v in vars(args).items() if k not in _INTERNAL_KEYS}
    if extra:
        resolved.update(extra)
    logger.info(f"{args.leaf} 配置: {json.dumps(resolved, ensure_ascii=False, sort_keys=True, default=str)}")

# ---- kernels ----

def cmd_kernels_make_random(args: argparse.Namespace) -> int:
    require_args(args, 'out')
    args.out = output_path(args.out)
    echo_config(args)
    save_bank(sample_random_bank(args.seed, args.n), args.out)
    return 0

def cmd_kernels_tune(args: argparse.Namespace) -> int:
    require_args(args, 'out')
    if bool(args.synthetic) == bool(args.labeled_dir):
        raise UsageError("--synthetic 与 --labeled-dir 必须且只能指定一个")
    if not 0.0 <= args.holdout < 1.0:
        raise UsageError(f"--holdout 必须在 [0, 1) 内: {args.holdout}")
    args.out = output_path(args.out)
    echo_config(args)

    if args.synthetic:
        clips = synthetic_labeled_clips(args.clips_per_class, args.clip_seconds, seed=args.seed)
    else:
        clips, class_names = labeled_clips_from_dir(require_file(args.labeled_dir, '--labeled-dir'))
        logger.info(f"类别: {class_names}")
    init = load_bank(require_file(args.init, '--init')) if args.init else sample_random_bank(args.seed, args.n)

    train_clips, test_clips = clips, []
    if args.holdout > 0:
        order = np.random.default_rng(args.seed).permutation(len(clips))
        n_test = int(round(len(clips) * args.holdout))
        test_clips = [clips[i] for i in order[:n_test]]
        train_clips = [clips[i] for i in order[n_test:]]

    tuner = KernelTuner(init, TuneConfig(epochs=args.epochs, kernel_learning_rate=args.lr, seed=args.seed))
    bank = tuner.fit(train_clips)
    if test_clips:
        logger.info(f"保留集准确率: {tuner.score(test_clips):.3f} ({len(test_clips)} 个片段)")
    save_bank(bank, args.out)
    return 0

def cmd_kernels_export_csv(args: argparse.Namespace) -> int:
    bank = load_bank(require_file(args.bank, 'bank'))
    args.out = output_path(args.out or os.path.splitext(args.bank)[0] + '_csv', is_dir=True)
    echo_config(args)
    export_bank_matrices(bank, args.out)
    if args.long:
        export_bank_csv(bank, os.path.join(args.out, 'kernels_long.csv'))
    return 0

# ---- mix ----

def cmd_mix(args: argparse.Namespace) -> int:
    """clean × noise × SNR 的笛卡尔积，写出 clean/ 与 noisy/ 同名文件及清单"""
    require_args(args, 'clean_dir', 'noise_dir', 'out')
    clean_dir = require_file(args.clean_dir, '--clean-dir')
    noise_dir = require_file(args.noise_dir, '--noise-dir')
    args.out = output_path(args.out, is_dir=True)
    echo_config(args)

    clean_names, noise_names = list_wavs(clean_dir), list_wavs(noise_dir)
    if not clean_names or not noise_names:
        raise EmptyCorpusError(f"{clean_dir} 或 {noise_dir} 中没有WAV文件")
    noises = {name: load_wav(os.path.join(noise_dir, name)) for name in noise_names}

    rng = np.random.default_rng(args.seed)
    records = []
    for clean_name in clean_names:
        clean = load_wav(os.path.join(clean_dir, clean_name))
        for noise_name in noise_names:
            for snr_db in args.snrs:
                mix_seed = int(rng.integers(2 ** 31))
                filename = f"{os.path.splitext(clean_name)[0]}__{os.path.splitext(noise_name)[0]}__snr{snr_db:+g}.wav"
                try:
                    mixture = mix_at_snr(clean, noises[noise_name], snr_db, seed=mix_seed)
                except SignalTooShortError as e:
                    logger.warning(f"跳过 {filename}: {e}")
                    continue
                save_wav(clean, os.path.join(args.out, 'clean', filename), args.encoding)
                clipped = save_wav(mixture.noisy, os.path.join(args.out, 'noisy', filename), args.encoding)
                records.append(MixRecord(filename, clean_name, noise_name, float(snr_db),
                                         measured_snr_db(clean, mixture.scaled_noise), mixture.offset,
                                         mixture.alpha, mix_seed, clipped))
    if not records:
        raise EmptyCorpusError("没有生成任何混合文件")

    manifest = os.path.join(args.out, 'manifest.csv')
    with DataclassCsvDAO(manifest, MixRecord, float_format='.9g') as dao:
        dao.write_records(records)
    logger.info(f"混合完成: {len(records)} 个文件，清单 {manifest}")
    return 0

# ---- train ----

def build_train_config(args: argparse.Namespace) -> TrainConfig:
    overrides = {name: getattr(args, name) for name in TRAIN_FIELDS if getattr(args, name, None) is not None}
    if 'loss_mode' in overrides:
        overrides['loss_mode'] = LOSS_ALIASES.get(overrides['loss_mode'], overrides['loss_mode'])
    return TrainConfig.from_dict(overrides)

def cmd_train(args: argparse.Namespace) -> int:
    require_args(args, 'out')
    if bool(args.synthetic) == bool(args.clean_dir or args.noise_dir):
        raise UsageError("--synthetic 与 --clean-dir/--noise-dir 必须且只能选择一种")
    config = build_train_config(args)
    args.out = output_path(args.out, is_dir=True)
    echo_config(args, {'train_config': config.to_dict()})

    if args.synthetic:
        corpus = SyntheticCorpus(clips_per_class=args.clips_per_class, seed=config.seed)
    else:
        require_args(args, 'clean_dir', 'noise_dir')
        corpus = DirectoryCorpus(require_file(args.clean_dir, '--clean-dir'), require_file(args.noise_dir, '--noise-dir'))
    bank = load_bank(require_file(args.bank, '--bank')) if args.bank else None
    init_params = load_params(require_file(args.init, '--init')) if args.init else None

    _, history = train(config, corpus, bank=bank, out_dir=args.out, init_params=init_params)
    if history.events:
        logger.warning(f"训练中有 {len(history.events)} 步被拒绝")
    totals = history.totals()
    if len(totals):
        logger.info(f"训练结束: 初始损失 {totals[0]:.6g}，最终损失 {totals[-1]:.6g}")
    return 0

# ---- enhance ----

def cmd_enhance(args: argparse.Namespace) -> int:
    require_args(args, 'checkpoint', 'input', 'out')
    params = load_params(require_file(args.checkpoint, '--checkpoint'))
    source = require_file(args.input, '--input')
    args.out = output_path(args.out, is_dir=True)
    echo_config(args)

    if os.path.isdir(source):
        inputs = [os.path.join(source, name) for name in list_wavs(source)]
    else:
        inputs = [source]
    if not inputs:
        raise EmptyCorpusError(f"{source} 中没有WAV文件")

    cfg = StftConfig()
    streamer = StreamingEnhancer(params, cfg) if args.streaming else None
    for path in inputs:
        noisy = load_wav(path)
        if streamer is not None:
            enhanced = streamer.process(noisy, args.chunk)
        else:
            enhanced = enhance_waveform(noisy, params, cfg)
        save_wav(enhanced, os.path.join(args.out, os.path.basename(path)), args.encoding)
    logger.info(f"增强完成: {len(inputs)} 个文件 -> {args.out}")
    return 0

# ---- evaluate ----

def cmd_evaluate(args: argparse.Namespace) -> int:
    require_args(args, 'clean_dir', 'processed_dir', 'out')
    if args.workers < 1:
        raise UsageError(f"--workers 必须不小于1: {args.workers}")
    clean_dir = require_file(args.clean_dir, '--clean-dir')
    processed_dir = require_file(args.processed_dir, '--processed-dir')
    args.out = output_path(args.out)
    echo_config(args)

    bank = bank_or_random(args.bank, args.seed, args.n)
    report = evaluate_corpus(clean_dir, processed_dir, bank, workers=args.workers)
    report.save_csv(args.out)
    logger.info(f"SI-SDR {report.mean('si_sdr_db'):.2f} dB, STOI {report.mean('stoi'):.4f} "
                f"({report.count('stoi')} 个文件), STMI {report.mean('stmi'):.4f}")
    return 0

# ---- gradcheck ----

def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.repeats < 1:
        raise UsageError(f"--repeats 必须不小于1: {args.repeats}")
    if args.out:
        args.out = output_path(args.out)
    echo_config(args)

    combined = GradcheckReport()
    for seed in range(args.seed, args.seed + args.repeats):
        report = gradcheck_suite(seed=seed, tolerance=args.tolerance, coords_per_group=args.coords)
        for row in report.rows:
            if args.repeats > 1:
                row.group = f"{row.group}@seed{seed}"
            combined.rows.append(row)
    if args.out:
        combined.save_csv(args.out)
    for row in combined.failures():
        logger.error(f"梯度检查未通过: {row.group} 误差 {row.max_rel_error:.3e} > 容差 {row.tolerance:g}")
    logger.info(f"梯度检查: {len(combined.rows) - len(combined.failures())}/{len(combined.rows)} 组通过")
    return 0 if combined.passed else 1

# ---- spectrogram ----

def cmd_spectrogram(args: argparse.Namespace) -> int:
    """对数功率谱导出为CSV（行=帧，列=频点）"""
    require_args(args, 'input', 'out')
    w = load_wav(require_file(args.input, '--input'))
    args.out = output_path(args.out)
    echo_config(args)
    lps = log_power(stft(w, StftConfig(sample_rate_hz=w.sample_rate_hz)))
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    pd.DataFrame(lps).to_csv(args.out, index=False, header=False, float_format='%.6g')
    logger.info(f"对数功率谱已导出: {args.out} ({lps.shape[0]} 帧 × {lps.shape[1]} 频点)")
    return 0

def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog='stme', description='STME modulation-domain loss toolkit')
    commands = parser.add_subparsers(dest='command', required=True)
    leaves: Dict[str, argparse.ArgumentParser] = {}

    def leaf(group, name: str, full_name: str, func, help_text: str) -> argparse.ArgumentParser:
        sub = group.add_parser(name, help=help_text)
        sub.add_argument('--config', type=str, default='', help="JSON file whose keys mirror this command's flags")
        sub.set_defaults(func=func, leaf=full_name)
        leaves[full_name] = sub
        return sub

    kernels = commands.add_parser('kernels', help='Create, tune or export STRF kernel banks')
    kernel_actions = kernels.add_subparsers(dest='action', required=True)

    sub = leaf(kernel_actions, 'make-random', 'kernels make-random', cmd_kernels_make_random, 'Sample a random Gabor bank')
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--n', type=int, default=BANK_SIZE, help='Number of kernels')
    sub.add_argument('--out', type=str, default=None, help='Output bank JSON path')

    sub = leaf(kernel_actions, 'tune', 'kernels tune', cmd_kernels_tune, 'Tune a bank on a class-discrimination task')
    sub.add_argument('--synthetic', action='store_true', help='Use the built-in surrogate speech classes')
    sub.add_argument('--labeled-dir', dest='labeled_dir', type=str, default='', help='One subdirectory of WAVs per class')
    sub.add_argument('--init', type=str, default='', help='Initial bank JSON (default: random bank from --seed)')
    sub.add_argument('--n', type=int, default=BANK_SIZE)
    sub.add_argument('--epochs', type=int, default=30)
    sub.add_argument('--lr', type=float, default=0.01)
    sub.add_argument('--clips-per-class', dest='clips_per_class', type=int, default=20)
    sub.add_argument('--clip-seconds', dest='clip_seconds', type=float, default=1.0)
    sub.add_argument('--holdout', type=float, default=0.0, help='Fraction of clips held out for an accuracy report')
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--out', type=str, default=None)

    sub = leaf(kernel_actions, 'export-csv', 'kernels export-csv', cmd_kernels_export_csv, 'Dump kernel matrices as CSV')
    sub.add_argument('bank', type=str, help='Bank JSON path')
    sub.add_argument('--out', type=str, default=None, help='Output directory (default: <bank>_csv)')
    sub.add_argument('--long', action='store_true', help='Also write a long-format table with kernel parameters')

    sub = leaf(commands, 'mix', 'mix', cmd_mix, 'Build a mixed corpus at fixed SNRs')
    sub.add_argument('--clean-dir', dest='clean_dir', type=str, default=None)
    sub.add_argument('--noise-dir', dest='noise_dir', type=str, default=None)
    sub.add_argument('--snrs', type=float, nargs='+', default=[-6.0, 0.0, 6.0])
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--encoding', type=str, default='float32', choices=sorted(ENCODINGS))
    sub.add_argument('--out', type=str, default=None, help='Output directory')

    sub = leaf(commands, 'train', 'train', cmd_train, 'Train the gain-mask network')
    sub.add_argument('--synthetic', action='store_true', help='Train on the built-in synthetic corpus')
    sub.add_argument('--clips-per-class', dest='clips_per_class', type=int, default=4)
    sub.add_argument('--clean-dir', dest='clean_dir', type=str, default='')
    sub.add_argument('--noise-dir', dest='noise_dir', type=str, default='')
    sub.add_argument('--bank', type=str, default='', help='Kernel bank JSON for the STME term')
    sub.add_argument('--init', type=str, default='', help='Initial model checkpoint')
    sub.add_argument('--loss', dest='loss_mode', type=str, default=None,
                     choices=sorted(set(LOSS_ALIASES) | {m.value for m in LossMode}))
    sub.add_argument('--learning-rate', '--lr', dest='learning_rate', type=float, default=None)
    sub.add_argument('--batch-size', dest='batch_size', type=int, default=None)
    sub.add_argument('--segment-seconds', dest='segment_seconds', type=float, default=None)
    sub.add_argument('--steps', type=int, default=None)
    sub.add_argument('--seed', type=int, default=None)
    sub.add_argument('--stme-weight', '--lambda', dest='stme_weight', type=float, default=None)
    sub.add_argument('--beta1', type=float, default=None)
    sub.add_argument('--beta2', type=float, default=None)
    sub.add_argument('--adam-eps', dest='adam_eps', type=float, default=None)
    sub.add_argument('--snr-range-db', dest='snr_range_db', type=float, nargs=2, default=None)
    sub.add_argument('--arch', type=str, default=None, choices=['desk', 'full', 'tiny'])
    sub.add_argument('--bank-seed', dest='bank_seed', type=int, default=None)
    sub.add_argument('--bank-size', dest='bank_size', type=int, default=None)
    sub.add_argument('--log-every', dest='log_every', type=int, default=None)
    sub.add_argument('--checkpoint-every', dest='checkpoint_every', type=int, default=None)
    sub.add_argument('--eval-every', dest='eval_every', type=int, default=None)
    sub.add_argument('--eval-segments', dest='eval_segments', type=int, default=None)
    sub.add_argument('--dtype', type=str, default=None, choices=['float64', 'float32'])
    sub.add_argument('--out', type=str, default=None, help='Output directory for checkpoints and history')

    sub = leaf(commands, 'enhance', 'enhance', cmd_enhance, 'Apply a trained model to a file or directory')
    sub.add_argument('--checkpoint', type=str, default=None)
    sub.add_argument('--input', type=str, default=None, help='WAV file or directory')
    sub.add_argument('--out', type=str, default=None, help='Output directory')
    sub.add_argument('--streaming', action='store_true', help='Process hop-sized chunks frame by frame')
    sub.add_argument('--chunk', type=int, default=None, help='Streaming chunk size in samples (default: hop)')
    sub.add_argument('--encoding', type=str, default='float32', choices=sorted(ENCODINGS))

    sub = leaf(commands, 'evaluate', 'evaluate', cmd_evaluate, 'Compute SI-SDR / STOI / STMI over a directory pair')
    sub.add_argument('--clean-dir', dest='clean_dir', type=str, default=None)
    sub.add_argument('--processed-dir', dest='processed_dir', type=str, default=None)
    sub.add_argument('--bank', type=str, default='', help='Kernel bank JSON for STMI (default: random bank)')
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--n', type=int, default=BANK_SIZE)
    sub.add_argument('--workers', type=int, default=1)
    sub.add_argument('--out', type=str, default='metrics.csv')

    sub = leaf(commands, 'gradcheck', 'gradcheck', cmd_gradcheck, 'Finite-difference gradient verification')
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--tolerance', type=float, default=None, help='Override every group tolerance')
    sub.add_argument('--repeats', type=int, default=1, help='Run consecutive seeds')
    sub.add_argument('--coords', type=int, default=30, help='Sampled coordinates per group')
    sub.add_argument('--out', type=str, default='', help='Optional report CSV')

    sub = leaf(commands, 'spectrogram', 'spectrogram', cmd_spectrogram, 'Export a log-power spectrogram as CSV')
    sub.add_argument('--input', type=str, default=None)
    sub.add_argument('--out', type=str, default=None)
    return parser, leaves

def parse_args(argv: Optional[List[str]] = None) -> Tuple[argparse.ArgumentParser, argparse.Namespace]:
    """解析命令行；--config 的JSON键作为该子命令的缺省值，命令行参数优先"""
    parser, leaves = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return parser, args

    try:
        with open(args.config, 'r', encoding='utf-8') as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        parser.error(f"--config 无法读取: {e}")
    if not isinstance(doc, dict):
        parser.error("--config 顶层必须是对象")
    allowed = set(vars(args)) - set(_INTERNAL_KEYS) - {'command', 'action'}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        parser.error(f"--config 中有未知的键: {unknown}")
    leaves[args.leaf].set_defaults(**doc)
    return parser, parser.parse_args(argv)

def main(argv: Optional[List[str]] = None) -> int:
    parser, args = parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except HANDLED_ERRORS as e:
        logger.error(f"{args.leaf} 失败: {type(e).__name__}: {e}")
        return 1

if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    sys.exit(main())
