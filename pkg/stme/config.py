# 全局默认参数（16 kHz 桌面级流水线）

SAMPLE_RATE_HZ = 16000

# STFT：20 ms Hamming 窗，50% 重叠，512 点 DFT
WIN_LEN = 320
HOP = 160
N_FFT = 512

LOG_FLOOR = 1e-10  # ln(max(|X|^2, floor))

# 在线归一化：衰减 0.996 约等于 10 ms 帧移下 2.5 s 的时间常数
NORM_DECAY = 0.996
VARIANCE_FLOOR = 1e-6

# Mel 积分与 STRF 核几何
MEL_BANDS = 64
MEL_FMIN_HZ = 0.0
MEL_FMAX_HZ = 8000.0
FRAME_RATE_HZ = 100.0
KERNEL_FRAMES = 30  # 300 ms
KERNEL_CHANNELS = 20
BANK_SIZE = 60
RATE_MAX_HZ = 50.0
SCALE_MAX_CPC = 0.5

LOSS_EPS = 1e-8

SI_SDR_CAP_DB = 80.0

# 环境变量：覆盖各子命令的输出目录
OUTPUT_DIR_ENV = 'STME_OUTPUT_DIR'
