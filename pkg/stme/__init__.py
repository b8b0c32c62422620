"""STME 调制域损失与桌面级语音增强流水线"""

__version__ = '0.1.0'
