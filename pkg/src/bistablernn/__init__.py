"""Recurrent networks built around bistable cells, with hand-derived BPTT.

Modules cover the numerics substrate, the recurrent cells (BRC, nBRC, GRU,
LSTM, RNN), sequence networks with checkpointing, training, synthetic
long-memory benchmarks plus sequential MNIST, and a dynamical-analysis
toolkit for the cells' fixed points and bifurcations.
"""

__version__ = "0.1.0"

from .benchmarks import CopyFirst, Denoising, SampleSpec, SeqMnist, SparseCopy
from .cells import (BrcCell, CELL_TYPES, GruCell, LstmCell, NbrcCell, RnnCell,
                    make_cell, state_jacobian)
from .dynamics import (FixedPointReport, LayerTrace, ScalarCellConfig,
                       bifurcation_sweep, check_pitchfork_conditions,
                       find_fixed_points, iv_curve, simulate_scalar_cell,
                       trace_layers)
from .network import (Network, NetworkSpec, backward_batch, backward_sequence,
                      forward_batch, forward_sequence, load_checkpoint,
                      save_checkpoint)
from .numerics import ContractError, Rng
from .training import AdamState, RunLog, TrainConfig, adam_step, train

__all__ = [
    "AdamState", "BrcCell", "CELL_TYPES", "ContractError", "CopyFirst",
    "Denoising", "FixedPointReport", "GruCell", "LayerTrace", "LstmCell",
    "NbrcCell", "Network", "NetworkSpec", "Rng", "RnnCell", "RunLog",
    "SampleSpec", "ScalarCellConfig", "SeqMnist", "SparseCopy", "TrainConfig",
    "adam_step", "backward_batch", "backward_sequence", "bifurcation_sweep",
    "check_pitchfork_conditions", "find_fixed_points", "forward_batch",
    "forward_sequence", "iv_curve", "load_checkpoint", "make_cell",
    "save_checkpoint", "simulate_scalar_cell", "state_jacobian",
    "trace_layers", "train", "__version__",
]
