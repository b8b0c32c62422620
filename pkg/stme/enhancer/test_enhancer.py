import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from stme.errors import SampleRateMismatchError, ShapeMismatchError, SignalTooShortError
from stme.enhancer.enhance import apply_gain, enhance_waveform, StreamingEnhancer
from stme.enhancer.models import EnhancerArch, EnhancerParams, GainMask, GruState
from stme.enhancer.network import forward
from stme.signal.models import Waveform
from stme.signal.synth import synth_surrogate_speech, synth_noise
from stme.signal.mixing import mix_at_snr
from stme.spectral.models import ComplexSpectrogram
from stme.spectral.stft import stft, istft


class TestArch(unittest.TestCase):
    """网络结构与参数量"""

    def test_full_param_count(self):
        """完整规模约2.8M参数，与闭式计数一致"""
        arch = EnhancerArch.full()
        self.assertEqual(arch.param_count, 2781257)
        self.assertAlmostEqual(arch.param_count / 1e6, 2.8, delta=0.1)

    def test_desk_param_count(self):
        """桌面规模参数量"""
        arch = EnhancerArch.desk()
        params = EnhancerParams.init(arch, seed=0)
        self.assertEqual(params.param_count, arch.param_count)
        self.assertEqual(arch.param_count, 106529)

    def test_invalid_arch(self):
        """维度非法"""
        with self.assertRaises(ValueError):
            EnhancerArch(257, 0, 64, 96)
        with self.assertRaises(ValueError):
            EnhancerArch(257, 64, 64, 96, output_dim=128)

    def test_params_shape_check(self):
        """参数形状与结构不一致"""
        arch = EnhancerArch.tiny()
        tensors = dict(EnhancerParams.zeros(arch).tensors)
        tensors['fc1.w'] = np.zeros((3, 3))
        with self.assertRaises(ShapeMismatchError):
            EnhancerParams(arch, tensors)


class TestForward(unittest.TestCase):
    """因果GRU增益网络"""

    def setUp(self):
        self.arch = EnhancerArch.tiny(8)
        self.params = EnhancerParams.init(self.arch, seed=3)
        self.features = np.random.default_rng(0).standard_normal((25, 8))

    def test_zero_weights_half_gain(self):
        """全零参数时增益恒为0.5"""
        gain, _ = forward(self.features, EnhancerParams.zeros(self.arch))
        assert_array_equal(gain.data, np.full((25, 8), 0.5))

    def test_gain_range(self):
        """增益在(0,1)内"""
        params = EnhancerParams.init(self.arch, seed=9)
        gain, _ = forward(10.0 * self.features, params)
        self.assertTrue(np.all(gain.data > 0.0) and np.all(gain.data < 1.0))

    def test_streaming_equivalence(self):
        """整段前向与逐帧携带状态的前向一致"""
        full, full_state = forward(self.features, self.params)
        state = None
        frames = []
        for t in range(25):
            gain, state = forward(self.features[t:t + 1], self.params, state)
            frames.append(gain.data)
        assert_allclose(np.vstack(frames), full.data, rtol=0, atol=1e-6)
        assert_allclose(state.h2, full_state.h2, rtol=0, atol=1e-6)

    def test_causality(self):
        """扰动第t帧不改变t之前的增益"""
        base, _ = forward(self.features, self.params)
        for t in (0, 7, 24):
            perturbed = self.features.copy()
            perturbed[t] += 3.0
            gain, _ = forward(perturbed, self.params)
            assert_array_equal(gain.data[:t], base.data[:t])
            self.assertGreater(np.abs(gain.data[t:] - base.data[t:]).max(), 0.0)

    def test_dimension_mismatch(self):
        """特征维度或状态维度不一致"""
        with self.assertRaises(ShapeMismatchError):
            forward(np.zeros((5, 7)), self.params)
        with self.assertRaises(ShapeMismatchError):
            forward(self.features, self.params, GruState.fresh(self.arch.gru_hidden + 1))


class TestApplyGain(unittest.TestCase):
    """增益作用于带噪幅度谱"""

    def setUp(self):
        rng = np.random.default_rng(1)
        self.spec = ComplexSpectrogram(rng.standard_normal((6, 257)) + 1j * rng.standard_normal((6, 257)))

    def test_unit_and_half_gain(self):
        """单位增益不变，0.5增益减半"""
        assert_array_equal(apply_gain(self.spec, GainMask(np.ones((6, 257)))), self.spec.magnitude)
        assert_array_equal(apply_gain(self.spec, GainMask(np.full((6, 257), 0.5))), 0.5 * self.spec.magnitude)

    def test_elementwise_oracle(self):
        """逐元素参考"""
        gain = np.random.default_rng(2).uniform(0.01, 0.99, (6, 257))
        out = apply_gain(self.spec, GainMask(gain))
        assert_allclose(out, gain * np.abs(self.spec.data), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        """形状不一致"""
        with self.assertRaises(ShapeMismatchError):
            apply_gain(self.spec, GainMask(np.ones((5, 257))))

    def test_gain_out_of_range(self):
        """增益超出值域"""
        with self.assertRaises(ValueError):
            GainMask(np.full((2, 3), 1.5))


class TestEnhanceWaveform(unittest.TestCase):
    """波形级增强与流式增强"""

    @classmethod
    def setUpClass(cls):
        clean = synth_surrogate_speech(seed=4, duration_s=0.5, class_id=1)
        noise = synth_noise('pink', seed=5, duration_s=0.5)
        cls.noisy = mix_at_snr(clean, noise, 5.0).noisy
        cls.params = EnhancerParams.init(EnhancerArch(257, 8, 6, 10), seed=1)

    def test_saturated_unit_gain_identity(self):
        """饱和单位增益：输出等于 istft(stft(x))"""
        params = EnhancerParams.constant_gain(EnhancerArch(257, 8, 6, 10))
        out = enhance_waveform(self.noisy, params)
        reference = istft(stft(self.noisy), length=len(self.noisy))
        self.assertEqual(len(out), len(self.noisy))
        assert_allclose(out.samples, reference.samples, rtol=0, atol=1e-12)
        covered = (stft(self.noisy).num_frames - 1) * 160 + 320
        assert_allclose(out.samples[:covered], self.noisy.samples[:covered], rtol=0, atol=1e-9)

    def test_zero_signal(self):
        """零输入输出为零"""
        out = enhance_waveform(Waveform(np.zeros(1600)), self.params)
        assert_array_equal(out.samples, np.zeros(1600))

    def test_errors(self):
        """采样率不一致、短于一帧"""
        with self.assertRaises(SampleRateMismatchError):
            enhance_waveform(Waveform(np.zeros(1600), 8000), self.params)
        with self.assertRaises(SignalTooShortError):
            enhance_waveform(Waveform(np.zeros(100)), self.params)

    def test_streaming_matches_batch(self):
        """按帧移分块流式处理与整段处理一致"""
        batch = enhance_waveform(self.noisy, self.params)
        streamed = StreamingEnhancer(self.params).process(self.noisy)
        self.assertEqual(len(streamed), len(batch))
        assert_allclose(streamed.samples, batch.samples, rtol=0, atol=1e-9)

    def test_streaming_odd_chunks(self):
        """块长与帧移不同时结果不变"""
        batch = enhance_waveform(self.noisy, self.params)
        streamed = StreamingEnhancer(self.params).process(self.noisy, chunk_size=97)
        assert_allclose(streamed.samples, batch.samples, rtol=0, atol=1e-9)


if __name__ == '__main__':
    unittest.main()
