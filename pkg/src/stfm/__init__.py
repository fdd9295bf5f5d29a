"""Permutation-invariant set attention networks on a small autodiff core."""

from .blocks import (ISABParams, MABParams, MultiheadParams, PMAParams,
                     RFFPParams, att, dotprod_pool, isab, mab, multihead, pma,
                     rffp_layer, sab)
from .estimators import AmortizedMoGClusterer, MaxSetRegressor
from .model import DecoderConfig, EncoderConfig, SetModel
from .rng import Rng
from .tensor import Parameter, Tensor, backward, finite_diff_check, no_grad
from .training import Adam, TrainConfig, train

__all__ = [
    "Adam", "AmortizedMoGClusterer", "DecoderConfig", "EncoderConfig",
    "ISABParams", "MABParams", "MaxSetRegressor", "MultiheadParams",
    "PMAParams", "Parameter", "RFFPParams", "Rng", "SetModel", "Tensor",
    "TrainConfig", "att", "backward", "dotprod_pool", "finite_diff_check",
    "isab", "mab", "multihead", "no_grad", "pma", "rffp_layer", "sab", "train",
]

__version__ = "0.1.0"
