import os
import json
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np
import pandas as pd

from stme.cli.stme_runner import main
from stme.config import OUTPUT_DIR_ENV
from stme.dao.bank_dao import load_bank, save_bank
from stme.dao.wav_dao import load_wav, save_wav, list_wavs
from stme.signal.mixing import measured_snr_db
from stme.signal.models import Waveform
from stme.signal.synth import synth_surrogate_speech, synth_noise
from stme.modulation.gabor import sample_random_bank

TRAIN_FLAGS = ['--synthetic', '--clips-per-class', '1', '--arch', 'tiny', '--steps', '3', '--batch-size', '2',
               '--segment-seconds', '0.4', '--bank-size', '6', '--log-every', '100']


class RunnerTestCase(unittest.TestCase):

    def setUp(self):
        """测试前准备"""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """测试后清理"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def path(self, *parts):
        return os.path.join(self.temp_dir, *parts)

    def run_cli(self, *argv):
        with self.assertLogs('stme', level='INFO') as logs:
            code = main(list(argv))
        return code, '\n'.join(logs.output)

    def assertUsageError(self, *argv):
        with self.assertRaises(SystemExit) as ctx, mock.patch('sys.stderr'):
            main(list(argv))
        self.assertEqual(ctx.exception.code, 2)


class TestKernelsCommand(RunnerTestCase):

    def test_make_random(self):
        """make-random 写出合法核组文件，并回显配置"""
        out = self.path('bank.json')
        code, output = self.run_cli('kernels', 'make-random', '--seed', '7', '--n', '60', '--out', out)
        self.assertEqual(code, 0)
        self.assertIn('"seed": 7', output)
        bank = load_bank(out)
        self.assertEqual(len(bank), 60)
        self.assertEqual(bank.params, sample_random_bank(7, 60).params)

    def test_export_csv(self):
        """60个 30×20 的CSV矩阵"""
        bank_path = self.path('bank.json')
        save_bank(sample_random_bank(1, 60), bank_path)
        code, _ = self.run_cli('kernels', 'export-csv', bank_path, '--long')
        self.assertEqual(code, 0)
        out_dir = self.path('bank_csv')
        matrices = sorted(f for f in os.listdir(out_dir) if f.startswith('kernel_'))
        self.assertEqual(len(matrices), 60)
        self.assertEqual(pd.read_csv(os.path.join(out_dir, matrices[0]), header=None).shape, (30, 20))
        self.assertEqual(len(pd.read_csv(os.path.join(out_dir, 'kernels_long.csv'))), 60 * 30 * 20)

    def test_tune_synthetic(self):
        """合成语料上调优后的核组满足参数不变量"""
        out = self.path('tuned.json')
        code, output = self.run_cli('kernels', 'tune', '--synthetic', '--n', '6', '--epochs', '2',
                                    '--clips-per-class', '3', '--clip-seconds', '0.5', '--holdout', '0.25', '--out', out)
        self.assertEqual(code, 0)
        self.assertIn('保留集准确率', output)
        bank = load_bank(out)
        self.assertEqual(len(bank), 6)
        self.assertTrue(all(0 <= p.rate_hz < 50 and 0 <= p.scale_cpc < 0.5 for p in bank.params))

    def test_tune_usage(self):
        """--synthetic 与 --labeled-dir 必须二选一"""
        self.assertUsageError('kernels', 'tune', '--out', self.path('x.json'))
        self.assertUsageError('kernels', 'tune', '--synthetic', '--labeled-dir', self.temp_dir, '--out', self.path('x.json'))

    def test_bad_bank_file(self):
        """核组文件不合法时退出码1"""
        bad = self.path('bad.json')
        with open(bad, 'w', encoding='utf-8') as f:
            json.dump({'version': 99}, f)
        with self.assertLogs('stme', level='ERROR'):
            self.assertEqual(main(['kernels', 'export-csv', bad]), 1)


class TestConfigFile(RunnerTestCase):

    def write_config(self, doc):
        path = self.path('config.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(doc, f)
        return path

    def test_json_defaults_and_override(self):
        """JSON 提供缺省值，命令行参数优先"""
        config = self.write_config({'n': 4, 'seed': 3, 'out': self.path('from_json.json')})
        self.assertEqual(self.run_cli('kernels', 'make-random', '--config', config)[0], 0)
        self.assertEqual(len(load_bank(self.path('from_json.json'))), 4)
        self.assertEqual(self.run_cli('kernels', 'make-random', '--config', config, '--n', '2')[0], 0)
        self.assertEqual(len(load_bank(self.path('from_json.json'))), 2)

    def test_unknown_key(self):
        """未知键为用法错误"""
        config = self.write_config({'n': 4, 'bogus': 1})
        self.assertUsageError('kernels', 'make-random', '--config', config, '--out', self.path('b.json'))

    def test_output_dir_env(self):
        """STME_OUTPUT_DIR 覆盖输出目录"""
        override = self.path('override')
        with mock.patch.dict(os.environ, {OUTPUT_DIR_ENV: override}):
            self.run_cli('kernels', 'make-random', '--n', '2', '--out', self.path('elsewhere', 'bank.json'))
        self.assertTrue(os.path.isfile(os.path.join(override, 'bank.json')))
        self.assertFalse(os.path.exists(self.path('elsewhere')))


class TestMixCommand(RunnerTestCase):

    def setUp(self):
        super().setUp()
        for i in range(2):
            save_wav(synth_surrogate_speech(seed=i, duration_s=1.0, class_id=i), self.path('clean', f'c{i}.wav'), 'float32')
        for i, kind in enumerate(('white', 'pink')):
            save_wav(synth_noise(kind, seed=10 + i, duration_s=2.0), self.path('noise', f'{kind}.wav'), 'float32')

    def mix(self, out):
        return self.run_cli('mix', '--clean-dir', self.path('clean'), '--noise-dir', self.path('noise'),
                            '--snrs', '-6', '0', '6', '--seed', '5', '--out', out)[0]

    def test_cartesian_count(self):
        """2 clean × 2 noise × 3 SNR → 12 个文件 + 清单"""
        self.assertEqual(self.mix(self.path('mixed')), 0)
        self.assertEqual(len(list_wavs(self.path('mixed', 'noisy'))), 12)
        self.assertEqual(list_wavs(self.path('mixed', 'clean')), list_wavs(self.path('mixed', 'noisy')))
        manifest = pd.read_csv(self.path('mixed', 'manifest.csv'))
        self.assertEqual(len(manifest), 12)
        self.assertEqual(sorted(set(manifest['snr_db'])), [-6.0, 0.0, 6.0])

    def test_measured_snr(self):
        """由写出的文件实测SNR与清单一致（0.01 dB内）"""
        self.mix(self.path('mixed'))
        manifest = pd.read_csv(self.path('mixed', 'manifest.csv'))
        for row in manifest.itertuples():
            clean = load_wav(self.path('mixed', 'clean', row.filename))
            noisy = load_wav(self.path('mixed', 'noisy', row.filename))
            noise = Waveform(noisy.samples - clean.samples)
            self.assertAlmostEqual(measured_snr_db(clean, noise), row.snr_db, delta=0.01)

    def test_rerun_identical(self):
        """同种子重跑得到完全相同的语料"""
        self.mix(self.path('a'))
        self.mix(self.path('b'))
        for sub in ('noisy', 'clean'):
            for name in list_wavs(self.path('a', sub)):
                with open(self.path('a', sub, name), 'rb') as fa, open(self.path('b', sub, name), 'rb') as fb:
                    self.assertEqual(fa.read(), fb.read())
        with open(self.path('a', 'manifest.csv')) as fa, open(self.path('b', 'manifest.csv')) as fb:
            self.assertEqual(fa.read(), fb.read())


class TestTrainEnhanceEvaluate(RunnerTestCase):

    def history(self, out):
        return pd.read_csv(os.path.join(out, 'history.csv'))

    def test_tfe_mode_zero_stme(self):
        """--loss tfe：历史行数等于步数，STME列全为0"""
        out = self.path('run')
        self.assertEqual(self.run_cli('train', *TRAIN_FLAGS, '--loss', 'tfe', '--out', out)[0], 0)
        history = self.history(out)
        self.assertEqual(len(history), 3)
        self.assertTrue((history['stme'] == 0).all())
        self.assertTrue(os.path.isfile(os.path.join(out, 'model.bin')))

    def test_combined_mode_with_bank(self):
        """--loss tfe+stme --bank：STME列非零"""
        bank_path = self.path('bank.json')
        save_bank(sample_random_bank(2, 6), bank_path)
        out = self.path('run')
        code, _ = self.run_cli('train', *TRAIN_FLAGS, '--loss', 'tfe+stme', '--bank', bank_path, '--out', out)
        self.assertEqual(code, 0)
        self.assertTrue((self.history(out)['stme'] > 0).all())

    def test_missing_bank_for_stme(self):
        """stme 模式缺少核组时退出码1"""
        with self.assertLogs('stme', level='ERROR'):
            self.assertEqual(main(['train', *TRAIN_FLAGS, '--loss', 'stme', '--out', self.path('run')]), 1)

    def test_enhance_streaming_matches_batch(self):
        """--streaming 与批处理输出最大差 < 1e-4"""
        run = self.path('run')
        self.run_cli('train', *TRAIN_FLAGS, '--out', run)
        noisy = synth_surrogate_speech(seed=3, duration_s=0.7, class_id=2).samples + 0.05 * synth_noise('white', 4, 0.7).samples
        save_wav(Waveform(noisy), self.path('in', 'x.wav'), 'float32')
        checkpoint = os.path.join(run, 'model.bin')
        self.run_cli('enhance', '--checkpoint', checkpoint, '--input', self.path('in'), '--out', self.path('batch'))
        self.run_cli('enhance', '--checkpoint', checkpoint, '--input', self.path('in', 'x.wav'),
                     '--out', self.path('stream'), '--streaming')
        batch = load_wav(self.path('batch', 'x.wav')).samples
        stream = load_wav(self.path('stream', 'x.wav')).samples
        self.assertEqual(len(batch), len(noisy))
        self.assertLess(np.max(np.abs(batch - stream)), 1e-4)

    def test_enhance_missing_checkpoint(self):
        """检查点不存在：错误信息指明参数，退出码1"""
        save_wav(Waveform(np.zeros(1600)), self.path('x.wav'))
        with self.assertLogs('stme', level='ERROR') as logs:
            code = main(['enhance', '--checkpoint', self.path('nope.bin'), '--input', self.path('x.wav'), '--out', self.path('o')])
        self.assertEqual(code, 1)
        self.assertIn('--checkpoint', '\n'.join(logs.output))

    def test_evaluate_identity(self):
        """相同目录对：STOI、STMI 为1，聚合行与逐文件行一致"""
        for i in range(2):
            save_wav(synth_surrogate_speech(seed=i, duration_s=3.2, class_id=i), self.path('clean', f'{i}.wav'), 'float32')
        out = self.path('metrics.csv')
        code, _ = self.run_cli('evaluate', '--clean-dir', self.path('clean'), '--processed-dir', self.path('clean'),
                               '--n', '6', '--workers', '2', '--out', out)
        self.assertEqual(code, 0)
        df = pd.read_csv(out)
        rows, aggregate = df.iloc[:-1], df.iloc[-1]
        np.testing.assert_allclose(rows['stoi'], 1.0, atol=1e-6)
        np.testing.assert_allclose(rows['stmi'], 1.0, atol=1e-9)
        self.assertAlmostEqual(aggregate['si_sdr_db'], rows['si_sdr_db'].mean(), delta=1e-3)

    def test_evaluate_missing_bank(self):
        """核组文件不存在时错误信息指明 --bank"""
        os.makedirs(self.path('clean'))
        with self.assertLogs('stme', level='ERROR') as logs:
            code = main(['evaluate', '--clean-dir', self.path('clean'), '--processed-dir', self.path('clean'),
                         '--bank', self.path('missing.json')])
        self.assertEqual(code, 1)
        self.assertIn('--bank', '\n'.join(logs.output))


class TestGradcheckCommand(RunnerTestCase):

    def test_pass(self):
        """缺省容差下全部通过，报告列出每个参数组"""
        out = self.path('gradcheck.csv')
        self.assertEqual(self.run_cli('gradcheck', '--coords', '3', '--out', out)[0], 0)
        groups = list(pd.read_csv(out)['group'])
        self.assertIn('tfe_vs_gain', groups)
        self.assertIn('stme_vs_gain', groups)
        self.assertTrue(any(g.startswith('network.') for g in groups))

    def test_tight_tolerance_fails(self):
        """--tolerance 1e-12 → 退出码1"""
        self.assertEqual(self.run_cli('gradcheck', '--coords', '3', '--tolerance', '1e-12')[0], 1)


class TestSpectrogramCommand(RunnerTestCase):

    def test_export(self):
        """1 s 输入 → 99帧 × 257频点"""
        save_wav(synth_noise('pink', 1, 1.0), self.path('x.wav'), 'float32')
        self.assertEqual(self.run_cli('spectrogram', '--input', self.path('x.wav'), '--out', self.path('x.csv'))[0], 0)
        self.assertEqual(pd.read_csv(self.path('x.csv'), header=None).shape, (99, 257))


if __name__ == '__main__':
    unittest.main()
