from . import kernels, tensor
from .adam import Adam, MissingGradient, adam_step
from .gradcheck import finite_difference_gradient, relative_error
from .layers import (Conv1d, Conv2d, GroupNorm, Identity, Linear, Module,
                     Parameter, Sequential, SiLU, backpropagate, evaluate)
from .serialize import (ContainerError, file_hash, load_into_tree, load_tensors,
                        save_tensors, save_tree, tree_hash)
from .tensor import Tensor

__all__ = [
    "Adam", "MissingGradient", "adam_step",
    "finite_difference_gradient", "relative_error",
    "Conv1d", "Conv2d", "GroupNorm", "Identity", "Linear", "Module",
    "Parameter", "Sequential", "SiLU", "backpropagate", "evaluate",
    "ContainerError", "file_hash", "load_into_tree", "load_tensors",
    "save_tensors", "save_tree", "tree_hash",
    "Tensor", "kernels", "tensor",
]
