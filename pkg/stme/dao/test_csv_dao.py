import os
import math
import shutil
import tempfile
import unittest
from dataclasses import dataclass

from stme.dao.csv_dao import DataclassCsvDAO, CSVSchemaError
from stme.trainer.config import LossMode


@dataclass
class Row:
    name: str
    value: float
    count: int
    ok: bool
    mode: LossMode


@dataclass
class OtherRow:
    name: str


class TestDataclassCsvDAO(unittest.TestCase):

    def setUp(self):
        """测试前准备"""
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, 'sub', 'rows.csv')
        self.rows = [Row('a', 0.123456789, 3, True, LossMode.TFE),
                     Row('b', float('nan'), -1, False, LossMode.TFE_PLUS_STME)]

    def tearDown(self):
        """测试后清理"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_write_then_read(self):
        """6位有效数字、布尔与枚举的写出和读回"""
        with DataclassCsvDAO(self.path, Row) as dao:
            dao.write_records(self.rows)
        with open(self.path, encoding='utf-8') as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], 'name,value,count,ok,mode')
        self.assertEqual(lines[1], 'a,0.123457,3,true,tfe')
        self.assertEqual(lines[2], 'b,nan,-1,false,tfe_plus_stme')

        records = DataclassCsvDAO(self.path, Row, mode='r').read_records()
        self.assertEqual(records[0], Row('a', 0.123457, 3, True, LossMode.TFE))
        self.assertTrue(math.isnan(records[1].value))
        self.assertEqual(records[1].mode, LossMode.TFE_PLUS_STME)

    def test_append_and_limit(self):
        """追加模式不重复写表头；limit 截断读取"""
        with DataclassCsvDAO(self.path, Row) as dao:
            dao.write_record(self.rows[0])
        with DataclassCsvDAO(self.path, Row, mode='a') as dao:
            dao.write_record(self.rows[1])
        dao = DataclassCsvDAO(self.path, Row, mode='r')
        self.assertEqual(len(dao.read_records()), 2)
        self.assertEqual([r.name for r in dao.read_records(limit=1)], ['a'])

    def test_header_mismatch(self):
        """表头与模型不一致"""
        with DataclassCsvDAO(self.path, Row) as dao:
            dao.write_records(self.rows)
        with self.assertRaises(CSVSchemaError):
            DataclassCsvDAO(self.path, OtherRow, mode='r')
        with self.assertRaises(CSVSchemaError):
            DataclassCsvDAO(self.path, OtherRow, mode='a')

    def test_misuse(self):
        """只读DAO写入、错误记录类型、非dataclass模型"""
        with DataclassCsvDAO(self.path, Row) as dao:
            with self.assertRaises(TypeError):
                dao.write_record(OtherRow('x'))
        with self.assertRaises(ValueError):
            DataclassCsvDAO(self.path, Row, mode='r').write_record(self.rows[0])
        with self.assertRaises(ValueError):
            DataclassCsvDAO(self.path, dict)


if __name__ == '__main__':
    unittest.main()
