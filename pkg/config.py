# 默认参数表（配置文件和命令行未给出时使用）

DEFAULT_K = 10                      # 传播步数，约束游走对步数不敏感，取较大值
DEFAULT_LAYERS = 2                  # 朴素模型 / GCN 的层数
DEFAULT_HIDDEN = 64                 # 嵌入维度
DEFAULT_HEADS = 8                   # 多头注意力头数
DEFAULT_ACTIVATION = "identity"     # 改进模型去掉激活，仅输出层使用softmax

DEFAULT_LEARNING_RATE = 0.005
DEFAULT_DROPOUT = 0.5
DEFAULT_PATIENCE = 50
DEFAULT_MAX_EPOCHS = 1000
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_WEIGHT_DECAY = 0.0

LEAKY_SLOPE = 0.01                  # LeakyReLU 负半轴斜率

EVAL_RATIOS = (0.05, 0.10, 0.20, 0.40, 0.60, 0.80)
EVAL_REPEATS = 10
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6
PROBE_C = 1.0                       # 线性探针的L2正则强度（sklearn的C为其倒数形式）
PROBE_TOL = 1e-6

ZERO_EIGEN_TOL = 1e-8               # 低于此值的特征值视为0，混合时间为无界
DENSE_EIGEN_LIMIT = 5000            # 节点数不超过此值时使用稠密对称特征分解

OUTPUT_ROOT_ENV = "GIAM_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "outputs"

VARIANTS = ("gcn", "giam1", "giam2", "giam", "giam3")
ACTIVATIONS = ("identity", "elu", "relu")
