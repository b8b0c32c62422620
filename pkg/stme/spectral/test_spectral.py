import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from stme.errors import SampleRateMismatchError, SignalTooShortError, ShapeMismatchError
from stme.signal.models import Waveform
from stme.spectral.features import log_power, online_normalize
from stme.spectral.models import ComplexSpectrogram, NormalizerState, StftConfig
from stme.spectral.stft import stft, istft, frame_signal, window_square_envelope


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    return 10 * np.log10(np.sum(reference ** 2) / np.sum((reference - estimate) ** 2))


class TestStft(unittest.TestCase):

    def setUp(self):
        self.cfg = StftConfig()

    def test_frame_count(self):
        """1 s 16 kHz → 99帧 × 257个频点"""
        spec = stft(Waveform(np.random.default_rng(0).standard_normal(16000)))
        self.assertEqual(spec.data.shape, (99, 257))

    def test_bin_center_sine(self):
        """频点中心频率的正弦在每帧峰值落在该频点"""
        k0 = 37
        t = np.arange(8000) / 16000
        spec = stft(Waveform(np.sin(2 * np.pi * k0 * 16000 / 512 * t)))
        assert_array_equal(np.argmax(spec.magnitude, axis=1), k0)

    def test_zero_input(self):
        spec = stft(Waveform(np.zeros(1000)))
        assert_array_equal(spec.data, 0)
        assert_array_equal(istft(spec).samples, 0)

    def test_periodic_hamming_cola(self):
        """周期Hamming窗在50%重叠下 Σw 恒为1.08"""
        w = self.cfg.window
        self.assertAlmostEqual(w[0], 0.08, places=12)
        total = w[:self.cfg.hop] + w[self.cfg.hop:]
        assert_allclose(total, 1.08, rtol=0, atol=1e-12)

    def test_round_trip(self):
        """istft(stft(x)) 内部重建SNR > 60 dB，50个随机信号"""
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.standard_normal(16000)
            y = istft(stft(Waveform(x)), length=len(x)).samples
            interior = slice(self.cfg.win_len, len(x) - self.cfg.win_len)
            self.assertGreater(snr_db(x[interior], y[interior]), 60.0)

    def test_stft_istft_stft(self):
        """stft→istft→stft 的内部帧与原谱一致"""
        x = Waveform(np.random.default_rng(2).standard_normal(8000))
        spec = stft(x)
        again = stft(istft(spec, length=len(x)))
        a, b = spec.data[1:-1], again.data[1:-1]
        self.assertLess(np.linalg.norm(a - b) / np.linalg.norm(a), 1e-6)

    def test_istft_length(self):
        """length 参数补零或截断"""
        spec = stft(Waveform(np.ones(1000)))
        self.assertEqual(len(istft(spec, length=1200)), 1200)
        self.assertEqual(len(istft(spec, length=500)), 500)

    def test_envelope_positive(self):
        """窗平方包络处处为正"""
        self.assertTrue(np.all(window_square_envelope(20, self.cfg) >= 0.08 ** 2 - 1e-15))

    def test_errors(self):
        """过短与采样率不一致"""
        with self.assertRaises(SignalTooShortError):
            stft(Waveform(np.ones(100)))
        with self.assertRaises(SampleRateMismatchError):
            stft(Waveform(np.ones(1000), 8000))
        with self.assertRaises(ShapeMismatchError):
            ComplexSpectrogram(np.ones((3, 100)))

    def test_config_validation(self):
        for bad in ({'win_len': 321}, {'hop': 100}, {'n_fft': 256}):
            with self.assertRaises(ValueError, msg=str(bad)):
                StftConfig(**bad)

    def test_framing(self):
        frames = frame_signal(np.arange(1000.0), self.cfg)
        self.assertEqual(frames.shape, (5, 320))
        assert_array_equal(frames[2], np.arange(320, 640))


class TestFeatures(unittest.TestCase):

    def test_log_power_values(self):
        """ln 1 = 0，零功率取下限，|X|² = e → 1"""
        data = np.zeros((1, 257), dtype=complex)
        data[0, 0] = 1.0
        data[0, 1] = np.sqrt(np.e)
        out = log_power(ComplexSpectrogram(data))
        self.assertEqual(out[0, 0], 0.0)
        self.assertAlmostEqual(out[0, 1], 1.0, places=14)
        self.assertAlmostEqual(out[0, 2], np.log(1e-10), places=12)

    def test_constant_input_converges(self):
        """恒定输入时输出趋于0"""
        lps = np.full((3000, 4), 5.0)
        out, state = online_normalize(lps, NormalizerState.fresh(4))
        self.assertLess(np.max(np.abs(out[-1])), 1e-3)
        self.assertEqual(state.frames_seen, 3000)

    def test_zero_decay(self):
        """decay = 0 时用瞬时均值，输出为0"""
        lps = np.random.default_rng(0).standard_normal((10, 3))
        out, _ = online_normalize(lps, NormalizerState.fresh(3, decay=0.0))
        assert_allclose(out, 0.0, atol=1e-12)

    def test_streaming_equivalence(self):
        """逐帧调用与整段调用结果一致"""
        lps = np.random.default_rng(3).standard_normal((50, 6))
        whole, final = online_normalize(lps, NormalizerState.fresh(6))
        state = NormalizerState.fresh(6)
        parts = []
        for t in range(50):
            out, state = online_normalize(lps[t:t + 1], state)
            parts.append(out)
        assert_array_equal(np.concatenate(parts), whole)
        assert_array_equal(state.mean, final.mean)

    def test_state_not_mutated(self):
        state = NormalizerState.fresh(2)
        online_normalize(np.ones((5, 2)), state)
        assert_array_equal(state.mean, 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            online_normalize(np.ones((5, 3)), NormalizerState.fresh(2))


if __name__ == '__main__':
    unittest.main()
