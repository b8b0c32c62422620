import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from stme.errors import NonFiniteError, ShapeMismatchError
from stme.grad.tape import Tape
from stme.modulation.gabor import make_gabor_kernel, sample_random_bank, gabor_bank_on_tape, make_bank
from stme.modulation.mel import mel_filterbank, mel_log_power, mel_log_power_on_tape
from stme.modulation.models import (Direction, GaborStrfParams, MelFilterbank, MelLogSpectrogram,
                                    StrfKernel, StrfKernelBank)
from stme.modulation.stmr import stmr, stmr_stack, stme, stmi_template, stme_on_tape
from stme.signal.mixing import mix_at_snr
from stme.signal.synth import synth_surrogate_speech, synth_noise
from stme.spectral.models import ComplexSpectrogram, StftConfig
from stme.spectral.stft import stft


def brute_stmr(mel, kernel):
    T, B = mel.shape
    kh, kw = kernel.shape
    out = np.zeros((T - kh + 1, B - kw + 1))
    for t in range(T - kh + 1):
        for c in range(B - kw + 1):
            acc = 0.0
            for tau in range(kh):
                for gamma in range(kw):
                    acc += kernel[tau, gamma] * mel[t + tau, c + gamma]
            out[t, c] = acc
    return out


def random_kernel(rng, shape):
    k = rng.standard_normal(shape)
    k -= k.mean()
    return StrfKernel(k / np.linalg.norm(k))


class TestMel(unittest.TestCase):
    """Mel积分与对数压缩"""

    @classmethod
    def setUpClass(cls):
        cls.bank = mel_filterbank()

    def test_filterbank_geometry(self):
        """64个非空频带，中心频率递增"""
        self.assertEqual(self.bank.weights.shape, (64, 257))
        self.assertTrue(np.all(self.bank.weights.sum(axis=1) > 0))
        centers = np.argmax(self.bank.weights, axis=1)
        self.assertTrue(np.all(np.diff(centers) >= 0))

    def test_unit_power(self):
        """单位功率时输出为 ln(Σ_k weights[b,k])"""
        spec = ComplexSpectrogram(np.ones((3, 257), dtype=complex))
        out = mel_log_power(spec, self.bank)
        assert_allclose(out.data, np.tile(np.log(self.bank.weights.sum(axis=1)), (3, 1)), rtol=1e-13)
        self.assertEqual(out.frame_rate_hz, 100.0)

    def test_zero_spectrum(self):
        """零谱全部为 ln(floor)"""
        spec = ComplexSpectrogram(np.zeros((2, 257), dtype=complex))
        assert_array_equal(mel_log_power(spec, self.bank, 1e-10).data, np.full((2, 64), np.log(1e-10)))

    def test_brute_force(self):
        """与两重循环求和一致"""
        rng = np.random.default_rng(0)
        spec = ComplexSpectrogram(rng.standard_normal((4, 257)) + 1j * rng.standard_normal((4, 257)))
        power = np.abs(spec.data) ** 2
        expected = np.zeros((4, 64))
        for t in range(4):
            for b in range(64):
                expected[t, b] = np.log(max(sum(self.bank.weights[b, k] * power[t, k] for k in range(257)), 1e-10))
        assert_allclose(mel_log_power(spec, self.bank).data, expected, rtol=0, atol=1e-12)

    def test_bin_mismatch(self):
        """频点数不一致"""
        with self.assertRaises(ShapeMismatchError):
            mel_log_power(np.ones((3, 100)), self.bank)

    def test_empty_band_rejected(self):
        """空频带"""
        with self.assertRaises(ValueError):
            MelFilterbank(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_tape_version_matches(self):
        """带上版本与数组版本一致"""
        rng = np.random.default_rng(1)
        power = np.abs(rng.standard_normal((5, 257)))
        tape = Tape(record=False)
        out = mel_log_power_on_tape(tape, tape.leaf(power), self.bank)
        assert_allclose(out.data, mel_log_power(power, self.bank).data, rtol=0, atol=1e-12)


class TestGabor(unittest.TestCase):
    """Gabor STRF核"""

    def test_dc_kernel_zero_sum(self):
        """rate=scale=phase=0 时原始核为正包络，去均值后和为0"""
        kernel = make_gabor_kernel(GaborStrfParams(0.0, 0.0))
        self.assertEqual(kernel.shape, (30, 20))
        self.assertAlmostEqual(kernel.matrix.sum(), 0.0, places=12)

    def test_unit_norm_zero_mean(self):
        """任意合法参数：单位范数、零均值"""
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = GaborStrfParams(rng.uniform(0, 50), rng.uniform(0, 0.5),
                                Direction.UP if rng.random() < 0.5 else Direction.DOWN, rng.uniform(0, 2 * np.pi))
            kernel = make_gabor_kernel(p)
            self.assertAlmostEqual(np.linalg.norm(kernel.matrix), 1.0, delta=1e-9)
            self.assertAlmostEqual(kernel.matrix.mean(), 0.0, delta=1e-9)

    def test_up_down_reflection(self):
        """up 与 down 核互为通道轴镜像"""
        up = make_gabor_kernel(GaborStrfParams(12.0, 0.2, Direction.UP, 0.4))
        down = make_gabor_kernel(GaborStrfParams(12.0, 0.2, Direction.DOWN, 0.4))
        assert_allclose(up.matrix[:, ::-1], down.matrix, rtol=0, atol=1e-12)
        self.assertGreater(np.abs(up.matrix - down.matrix).max(), 1e-3)

    def test_param_invariants(self):
        """参数越界"""
        with self.assertRaises(ValueError):
            GaborStrfParams(50.0, 0.1)
        with self.assertRaises(ValueError):
            GaborStrfParams(10.0, 0.5)
        with self.assertRaises(ValueError):
            GaborStrfParams(10.0, 0.1, t_sigma=0.0)

    def test_degenerate_kernel(self):
        """去均值后能量为0"""
        with self.assertRaises(NonFiniteError):
            make_gabor_kernel(GaborStrfParams(0.0, 0.0), frames=1, channels=1)

    def test_random_bank(self):
        """60个核，参数满足不变量，同种子可复现"""
        bank = sample_random_bank(7, 60)
        self.assertEqual(len(bank), 60)
        self.assertEqual(bank.stacked.shape, (60, 30, 20))
        for p in bank.params:
            self.assertTrue(0 <= p.rate_hz < 50)
            self.assertTrue(0 <= p.scale_cpc < 0.5)
            self.assertTrue(0 <= p.phase_rad < 2 * np.pi)
        again = sample_random_bank(7, 60)
        self.assertEqual(bank.params, again.params)
        assert_array_equal(bank.stacked, again.stacked)

    def test_random_bank_rate_mean(self):
        """大样本下rate均值约为25 Hz"""
        bank = sample_random_bank(11, 10000)
        self.assertAlmostEqual(np.mean([p.rate_hz for p in bank.params]), 25.0, delta=1.0)

    def test_tape_bank_matches(self):
        """带上构建与 make_gabor_kernel 一致"""
        bank = sample_random_bank(3, 5)
        params = bank.params
        tape = Tape(record=False)
        leaf = lambda name: tape.leaf(np.array([getattr(p, name) for p in params]))
        signs = np.array([p.direction.sign for p in params])
        kernels = gabor_bank_on_tape(tape, leaf('rate_hz'), leaf('scale_cpc'), leaf('phase_rad'),
                                     leaf('t_sigma'), leaf('f_sigma'), signs)
        assert_allclose(kernels.data, bank.stacked, rtol=0, atol=1e-12)


class TestStmr(unittest.TestCase):
    """调制响应、STME与STMI"""

    def test_constant_mel_zero_response(self):
        """常数输入响应为0（核零均值）"""
        kernel = make_gabor_kernel(GaborStrfParams(5.0, 0.1))
        out = stmr(MelLogSpectrogram(np.full((40, 25), -3.7)), kernel)
        self.assertEqual(out.shape, (11, 6))
        assert_allclose(out.data, 0.0, atol=1e-12)

    def test_brute_force(self):
        """40×25 输入、30×20 核与四重循环一致"""
        rng = np.random.default_rng(4)
        mel = MelLogSpectrogram(rng.standard_normal((40, 25)))
        kernel = make_gabor_kernel(GaborStrfParams(8.0, 0.3, Direction.DOWN, 1.0))
        out = stmr(mel, kernel)
        self.assertEqual(out.shape, (11, 6))
        assert_allclose(out.data, brute_stmr(mel.data, kernel.matrix), rtol=0, atol=1e-12)

    def test_matched_filter(self):
        """核取自输入窗口时，归一化相关在该偏移处最大"""
        rng = np.random.default_rng(5)
        mel = rng.standard_normal((20, 15))
        t0, c0 = 4, 7
        window = mel[t0:t0 + 6, c0:c0 + 5]
        kernel = StrfKernel(window / np.linalg.norm(window))
        response = stmr(MelLogSpectrogram(mel), kernel).data
        norms = np.array([[np.linalg.norm(mel[t:t + 6, c:c + 5]) for c in range(11)] for t in range(15)])
        self.assertEqual(np.unravel_index(np.argmax(response / norms), response.shape), (t0, c0))

    def test_input_smaller_than_kernel(self):
        """输入小于核"""
        with self.assertRaises(ShapeMismatchError):
            stmr(MelLogSpectrogram(np.zeros((20, 25))), make_gabor_kernel(GaborStrfParams(1.0, 0.1)))

    def test_linearity_and_offset_invariance(self):
        """对输入线性，对常数偏移不变"""
        rng = np.random.default_rng(6)
        kernel = make_gabor_kernel(GaborStrfParams(20.0, 0.05))
        m1, m2 = rng.standard_normal((45, 30)), rng.standard_normal((45, 30))
        r = lambda m: stmr(MelLogSpectrogram(m), kernel).data
        assert_allclose(r(2.0 * m1 - 0.5 * m2), 2.0 * r(m1) - 0.5 * r(m2), rtol=0, atol=1e-9)
        c = 37.0
        self.assertLess(np.max(np.abs(r(m1 + c) - r(m1))), 1e-7 * c)

    def test_stme_identity_and_silence(self):
        """相同输入为0；干净参考为常数时分母为eps，结果有限"""
        rng = np.random.default_rng(7)
        bank = sample_random_bank(1, 4)
        mel = MelLogSpectrogram(rng.standard_normal((50, 64)))
        self.assertEqual(stme(mel, mel, bank), 0.0)
        silence = MelLogSpectrogram(np.full((50, 64), np.log(1e-10)))
        value = stme(silence, mel, bank)
        self.assertTrue(np.isfinite(value))
        self.assertGreater(value, 0.0)

    def test_stme_oracle(self):
        """与由暴力stmr组合的参考实现一致"""
        rng = np.random.default_rng(8)
        kernels = [random_kernel(rng, (4, 3)) for _ in range(3)]
        bank = StrfKernelBank(tuple(kernels))
        clean = MelLogSpectrogram(rng.standard_normal((12, 9)))
        enh = MelLogSpectrogram(rng.standard_normal((12, 9)))
        num = sum(np.sum((brute_stmr(clean.data, k.matrix) - brute_stmr(enh.data, k.matrix)) ** 2) for k in kernels)
        den = sum(np.sum(brute_stmr(clean.data, k.matrix) ** 2) for k in kernels) + 1e-8
        self.assertAlmostEqual(stme(clean, enh, bank), num / den, places=12)

    def test_stme_gain_invariance(self):
        """两侧施加相同的全局功率增益，STME不变"""
        rng = np.random.default_rng(9)
        bank = sample_random_bank(2, 6)
        clean = rng.standard_normal((60, 64))
        enh = rng.standard_normal((60, 64))
        base = stme(MelLogSpectrogram(clean), MelLogSpectrogram(enh), bank)
        shifted = stme(MelLogSpectrogram(clean + np.log(7.0)), MelLogSpectrogram(enh + np.log(7.0)), bank)
        self.assertAlmostEqual(base, shifted, delta=1e-9)

    def test_stme_shape_mismatch(self):
        """形状不一致"""
        bank = sample_random_bank(0, 2)
        with self.assertRaises(ShapeMismatchError):
            stme(MelLogSpectrogram(np.zeros((40, 64))), MelLogSpectrogram(np.zeros((41, 64))), bank)

    def test_stme_on_tape_matches(self):
        """带上STME与数组版本一致，批维逐段计算"""
        rng = np.random.default_rng(10)
        bank = sample_random_bank(5, 3)
        clean = rng.standard_normal((2, 35, 64))
        enh = rng.standard_normal((2, 35, 64))
        tape = Tape(record=False)
        values = stme_on_tape(tape, clean, tape.leaf(enh), bank.stacked).data
        self.assertEqual(values.shape, (2,))
        for b in range(2):
            expected = stme(MelLogSpectrogram(clean[b]), MelLogSpectrogram(enh[b]), bank)
            self.assertAlmostEqual(values[b], expected, delta=1e-10)

    def test_stmi_identity(self):
        """相同输入STMI为1"""
        rng = np.random.default_rng(11)
        bank = sample_random_bank(3, 5)
        mel = MelLogSpectrogram(rng.standard_normal((40, 64)))
        self.assertEqual(stmi_template(mel, mel, bank), 1.0)


class TestStmiOnSignals(unittest.TestCase):
    """在合成信号上的STMI单调性"""

    @classmethod
    def setUpClass(cls):
        cls.bank = sample_random_bank(0, 60)
        cls.mel_bank = mel_filterbank()
        cls.clean = synth_surrogate_speech(seed=1, duration_s=2.0, class_id=2)
        cls.noise = synth_noise('white', seed=2, duration_s=2.0)

    def _mel(self, w):
        return mel_log_power(stft(w, StftConfig()), self.mel_bank)

    def test_monotone_in_snr(self):
        """种子0–9：SNR降低时STMI严格下降"""
        for seed in range(10):
            clean = synth_surrogate_speech(seed=seed, duration_s=2.0, class_id=2)
            noise = synth_noise('white', seed=100 + seed, duration_s=2.0)
            mel_clean = self._mel(clean)
            values = [stmi_template(mel_clean, self._mel(mix_at_snr(clean, noise, snr, seed=seed).noisy), self.bank)
                      for snr in (20.0, 10.0, 0.0, -10.0)]
            with self.subTest(seed=seed):
                self.assertTrue(all(a > b for a, b in zip(values, values[1:])), values)
                self.assertTrue(all(v <= 1.0 for v in values))

    def test_unrelated_noise(self):
        """干净语音与无关噪声的STMI低于0.5"""
        self.assertLess(stmi_template(self._mel(self.clean), self._mel(self.noise), self.bank), 0.5)


if __name__ == '__main__':
    unittest.main()
