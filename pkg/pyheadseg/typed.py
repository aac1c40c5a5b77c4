from typing import Dict, Literal, Tuple, Union

import numpy as np

Shape = Tuple[int, ...]
Size2D = Tuple[int, int]

Mode = Literal["train", "eval"]
SplitName = Literal["train", "val", "test"]
Difficulty = Literal["easy", "hard"]
ConcentrationMode = Literal["mass", "count"]
DType = Literal["float32", "float64"]

StateDict = Dict[str, np.ndarray]
ArrayLike = Union[np.ndarray, float, int, list]
