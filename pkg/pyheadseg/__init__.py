from pyheadseg.dataset import Dataset, ImageSample
from pyheadseg.enums import Architecture
from pyheadseg.network import Network, NetworkConfig, build, count_flops, count_parameters
from pyheadseg.phantom import generate_dataset
from pyheadseg.report import MetricsReport, evaluate
from pyheadseg.training import TrainConfig, train

__all__ = [
    "Architecture",
    "Dataset",
    "ImageSample",
    "MetricsReport",
    "Network",
    "NetworkConfig",
    "TrainConfig",
    "build",
    "count_flops",
    "count_parameters",
    "evaluate",
    "generate_dataset",
    "train",
]
