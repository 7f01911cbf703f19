from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradient_check
from .inference import infer
from .layers import BatchNorm2d, BilinearUp, Conv2d, MaxPool2, ReLU, ShapeError, bilinear_up, concat, maxpool2, relu
from .net import DenoiseBlock, DenoiserNet, NetConfig, build_net, count_parameters_by_formula
from .train import TrainConfig, TrainingDiverged, train

__all__ = [
    "BatchNorm2d", "BilinearUp", "Conv2d", "DenoiseBlock", "DenoiserNet", "MaxPool2", "NetConfig",
    "ReLU", "ShapeError", "TrainConfig", "TrainingDiverged", "bilinear_up", "build_net", "concat",
    "count_parameters_by_formula", "gradient_check", "infer", "load_checkpoint", "maxpool2", "relu",
    "save_checkpoint", "train",
]
