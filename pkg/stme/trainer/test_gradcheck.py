import os
import shutil
import tempfile
import unittest

from stme.dao.csv_dao import DataclassCsvDAO
from stme.enhancer.models import EnhancerArch
from stme.trainer.gradcheck import gradcheck_suite, GradcheckRow


class TestGradcheckSuite(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.report = gradcheck_suite(seed=0)

    def setUp(self):
        """测试前准备"""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """测试后清理"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_all_groups_pass(self):
        """默认容差下全部通过"""
        self.assertTrue(self.report.passed, [(r.group, r.max_rel_error) for r in self.report.failures()])

    def test_tolerances(self):
        """TFE 1e-6，其余 1e-4"""
        rows = {r.group: r for r in self.report.rows}
        self.assertEqual(rows['tfe_vs_gain'].tolerance, 1e-6)
        self.assertEqual(rows['stme_vs_gain'].tolerance, 1e-4)
        self.assertEqual(rows['network.gru1.u_zr'].tolerance, 1e-4)

    def test_every_parameter_group_listed(self):
        """报告列出每个网络参数组与每个λ"""
        groups = [r.group for r in self.report.rows]
        for name in EnhancerArch.tiny().param_shapes():
            self.assertIn(f'network.{name}', groups)
        for lam in ('0', '1', '10'):
            self.assertIn(f'combined_lambda_{lam}_vs_gain', groups)

    def test_tight_tolerance_fails(self):
        """容差 1e-12 时出现失败行而不是异常"""
        report = gradcheck_suite(seed=1, tolerance=1e-12, coords_per_group=3)
        self.assertFalse(report.passed)
        self.assertTrue(all(r.tolerance == 1e-12 for r in report.rows))

    def test_zero_tolerance_respected(self):
        """显式容差0不回落到缺省值"""
        report = gradcheck_suite(seed=2, tolerance=0.0, coords_per_group=2)
        self.assertTrue(all(r.tolerance == 0.0 for r in report.rows))
        self.assertFalse(report.passed)

    def test_twenty_seeds_pass(self):
        """种子0–19在缺省容差下全部通过"""
        for seed in range(20):
            with self.subTest(seed=seed):
                report = gradcheck_suite(seed=seed, coords_per_group=5)
                self.assertTrue(report.passed, [(r.group, r.max_rel_error) for r in report.failures()])

    def test_csv(self):
        """报告可写为CSV"""
        path = os.path.join(self.temp_dir, 'gradcheck.csv')
        self.report.save_csv(path)
        with DataclassCsvDAO(path, GradcheckRow, mode='r') as dao:
            rows = dao.read_records()
        self.assertEqual([r.group for r in rows], [r.group for r in self.report.rows])
        self.assertTrue(all(r.passed for r in rows))


if __name__ == '__main__':
    unittest.main()
