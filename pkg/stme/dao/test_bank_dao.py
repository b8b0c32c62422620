import os
import json
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from stme.dao.bank_dao import (save_bank, load_bank, export_bank_csv, bank_to_dict,
                               BankSchemaError, BankVersionError)
from stme.modulation.gabor import sample_random_bank, make_gabor_kernel


class TestBankDAO(unittest.TestCase):

    def setUp(self):
        """测试前准备"""
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, 'bank.json')
        self.bank = sample_random_bank(42, 8)

    def tearDown(self):
        """测试后清理"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _write(self, doc):
        with open(self.path, 'w', encoding='utf-8') as f:
            json.dump(doc, f)

    def test_round_trip(self):
        """保存后加载：参数逐位相等，矩阵误差 < 1e-12"""
        save_bank(self.bank, self.path)
        loaded = load_bank(self.path)
        self.assertEqual(loaded.params, self.bank.params)
        self.assertEqual(loaded.frame_rate_hz, 100.0)
        assert_allclose(loaded.stacked, self.bank.stacked, rtol=0, atol=1e-12)

    def test_schema_fields(self):
        """文件字段与版本"""
        save_bank(self.bank, self.path)
        with open(self.path, 'r', encoding='utf-8') as f:
            doc = json.load(f)
        self.assertEqual(doc['version'], 1)
        self.assertEqual(doc['kernel_frames'], 30)
        self.assertEqual(doc['kernel_channels'], 20)
        self.assertEqual(len(doc['kernels']), 8)
        self.assertIn(doc['kernels'][0]['direction'], ('up', 'down'))

    def test_params_only_regenerates(self):
        """只含参数的文件：矩阵由 make_gabor_kernel 重新生成"""
        self._write(bank_to_dict(self.bank))
        loaded = load_bank(self.path)
        for kernel, params in zip(loaded.kernels, self.bank.params):
            np.testing.assert_array_equal(kernel.matrix, make_gabor_kernel(params).matrix)

    def test_missing_version(self):
        """缺少version字段"""
        doc = bank_to_dict(self.bank)
        del doc['version']
        self._write(doc)
        with self.assertRaises(BankSchemaError):
            load_bank(self.path)

    def test_version_mismatch(self):
        """版本不匹配"""
        doc = bank_to_dict(self.bank)
        doc['version'] = 2
        self._write(doc)
        with self.assertRaises(BankVersionError):
            load_bank(self.path)

    def test_out_of_range_param(self):
        """参数越界视为模式错误"""
        doc = bank_to_dict(self.bank)
        doc['kernels'][0]['rate_hz'] = 75.0
        self._write(doc)
        with self.assertRaises(BankSchemaError):
            load_bank(self.path)

    def test_invalid_json(self):
        """非法JSON"""
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write('{not json')
        with self.assertRaises(BankSchemaError):
            load_bank(self.path)

    def test_export_csv(self):
        """核矩阵导出为长表"""
        csv_path = os.path.join(self.temp_dir, 'kernels.csv')
        export_bank_csv(self.bank, csv_path)
        df = pd.read_csv(csv_path)
        self.assertEqual(len(df), 8 * 30 * 20)
        self.assertEqual(list(df.columns[:4]), ['kernel', 'frame', 'channel', 'weight'])
        k3 = df[df['kernel'] == 3].sort_values(['frame', 'channel'])['weight'].to_numpy().reshape(30, 20)
        assert_allclose(k3, self.bank.stacked[3], rtol=1e-8, atol=1e-9)


if __name__ == '__main__':
    unittest.main()
