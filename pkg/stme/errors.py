class StmeError(Exception):
    """领域异常基类"""
    pass

class ShapeMismatchError(StmeError, ValueError):
    """形状/维度不匹配"""
    pass

class SampleRateMismatchError(StmeError, ValueError):
    """采样率不一致"""
    pass

class SignalTooShortError(StmeError, ValueError):
    """信号长度不足（短于一帧、短于噪声片段或最小分析长度）"""
    pass

class ZeroPowerError(StmeError, ValueError):
    """零功率信号（除零保护）"""
    pass

class NonFiniteError(StmeError, ValueError):
    """出现 NaN/Inf"""
    pass

class TapeError(StmeError):
    """自动微分带使用错误"""
    pass

class EmptyCorpusError(StmeError):
    """语料为空或无可用片段"""
    pass

class TrainingAbortedError(StmeError):
    """训练因非有限损失中止"""
    pass

class ConfigError(StmeError, ValueError):
    """配置非法"""
    pass
