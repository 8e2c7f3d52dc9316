"""NL-CNN: compact CNNs whose macro-layers cascade 3x3 conv + ReLU stages."""
from .datasets import LabeledSet, load_cifar10, load_idx, load_split, one_hot
from .errors import ConfigError, DatasetFormatError, ModelFileError, NLCNNError, NumericError, ShapeError
from .model import HyperParams, ModelPlan, ParamReport, build_plan, count_params, estimate_macs, receptive_field
from .model_io import load_model, save_model
from .network import Network, ParamRegistry, init_network
from .trainer import RunMetrics, TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
