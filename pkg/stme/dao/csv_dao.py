import os
import csv
import math
from typing import List, Optional, Any, Type, TypeVar, Generic, get_type_hints
from dataclasses import dataclass, fields, is_dataclass
from enum import Enum

T = TypeVar('T')

class CSVSchemaError(ValueError):
    """CSV表头与数据模型不一致"""
    pass

class DataclassCsvDAO(Generic[T]):
    """以dataclass字段为列的CSV读写，用于训练历史、混合清单、梯度检查报告等行式数据"""

    def __init__(self, filepath: str, model_class: Type[T], mode: str = 'w', float_format: str = '.6g'):
        """
        初始化CSV DAO

        Args:
            filepath: CSV文件路径
            model_class: 数据模型类（必须是dataclass）
            mode: 'w' 覆盖写入；'a' 追加（表头需一致）；'r' 只读
            float_format: 浮点数格式（默认6位有效数字）
        """
        if not is_dataclass(model_class):
            raise ValueError(f"{model_class.__name__} must be a dataclass")
        if mode not in ('w', 'a', 'r'):
            raise ValueError(f"Unsupported mode: {mode}")

        self.filepath = filepath
        self.model_class = model_class
        self.mode = mode
        self.float_format = float_format
        self._headers = [field.name for field in fields(model_class)]
        self._type_hints = get_type_hints(model_class)
        self._file = None
        self._writer = None

        self._init_file()

    def _init_file(self):
        """初始化文件，按模式写表头或校验表头"""
        directory = os.path.dirname(self.filepath)
        if directory and self.mode != 'r':
            os.makedirs(directory, exist_ok=True)

        file_exists = os.path.exists(self.filepath) and os.path.getsize(self.filepath) > 0
        if self.mode == 'r' or (self.mode == 'a' and file_exists):
            self._validate_headers()

        if self.mode == 'r':
            return

        write_header = self.mode == 'w' or not file_exists
        self._file = open(self.filepath, self.mode, newline='', encoding='utf-8')
        self._writer = csv.writer(self._file)
        if write_header:
            self._writer.writerow(self._headers)

    def _validate_headers(self):
        """验证文件头部是否匹配"""
        with open(self.filepath, 'r', newline='', encoding='utf-8') as f:
            reader = csv.reader(f)
            file_headers = next(reader, None)
        if file_headers is None:
            raise CSVSchemaError(f"File is empty or invalid: {self.filepath}")
        if file_headers != self._headers:
            raise CSVSchemaError(f"File headers {file_headers} don't match model fields {self._headers}")

    def _serialize_value(self, value: Any) -> str:
        if value is None:
            return ''
        if isinstance(value, Enum):
            return str(value.value)
        if isinstance(value, bool):
            return 'true' if value else 'false'
        if isinstance(value, float):
            if math.isnan(value):
                return 'nan'
            return format(value, self.float_format)
        return str(value)

    def write_record(self, record: T) -> None:
        """写入单条记录"""
        if self._writer is None:
            raise ValueError("DAO is read-only or closed")
        if not isinstance(record, self.model_class):
            raise TypeError(f"Record must be instance of {self.model_class.__name__}")
        self._writer.writerow([self._serialize_value(getattr(record, name)) for name in self._headers])

    def write_records(self, records: List[T]) -> None:
        """写入多条记录"""
        for record in records:
            self.write_record(record)

    def read_records(self, limit: Optional[int] = None) -> List[T]:
        """
        读取记录（跳过表头）

        Args:
            limit: 最大读取数量，None表示读取所有
        """
        if self._file is not None:
            self._file.flush()
        records = []
        with open(self.filepath, 'r', newline='', encoding='utf-8') as f:
            reader = csv.reader(f)
            next(reader, None)
            for row in reader:
                if limit is not None and len(records) >= limit:
                    break
                if not row:
                    continue
                records.append(self._row_to_record(row))
        return records

    def _row_to_record(self, row: List[str]) -> T:
        if len(row) != len(self._headers):
            raise CSVSchemaError(f"Row length {len(row)} doesn't match headers length {len(self._headers)}")
        values = {}
        for name, raw_value in zip(self._headers, row):
            values[name] = None if raw_value == '' else self._convert_value(raw_value, self._type_hints.get(name, str))
        return self.model_class(**values)

    def _convert_value(self, value: str, target_type: Type) -> Any:
        """值类型转换"""
        if target_type == str:
            return value
        if target_type == int:
            return int(value)
        if target_type == float:
            return float(value)
        if target_type == bool:
            return value.lower() in ('true', '1', 'yes', 'on')
        if isinstance(target_type, type) and issubclass(target_type, Enum):
            return target_type(value)
        try:
            return target_type(value)
        except (TypeError, ValueError):
            return value

    def close(self) -> None:
        """关闭文件"""
        if self._file:
            self._file.close()
            self._file = None
            self._writer = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
