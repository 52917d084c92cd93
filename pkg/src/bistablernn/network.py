"""Stacked recurrent networks over sequences, with BPTT and checkpointing.

A network is an ordered stack of recurrent layers plus a linear readout that
consumes the deepest layer's hidden state at the final timestep (the
predict-at-end protocol; there are no per-step outputs). All layers start
from h_0 = 0, which is a fixed point of every bias-free cell.

`forward_sequence`/`backward_sequence` work on a single (T, input_dim)
sequence; `forward_batch`/`backward_batch` on (batch, T, input_dim) stacks,
with batch gradients averaged over the batch axis. Both run the cells'
fused sequence kernels layer by layer; the backward pass is the standard
stacked-BPTT decomposition (each layer's adjoint recursion consumes the
input-gradient sequence emitted by the layer above it).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .cells import CellBase, _outer, _vsum, make_cell
from .numerics import ContractError, Rng, glorot_init

CHECKPOINT_FORMAT_VERSION = 1

OUTPUT_HEADS = ("linear", "softmax")


@dataclass
class NetworkSpec:
    """Architecture description: cell kind, layer widths, and readout shape."""

    cell_kind: str
    layer_sizes: list[int]
    input_dim: int
    output_dim: int
    output_head: str = "linear"

    def validate(self) -> None:
        if not self.layer_sizes:
            raise ContractError("need at least one recurrent layer")
        if any(s < 1 for s in self.layer_sizes) or self.input_dim < 1 or self.output_dim < 1:
            raise ContractError("all sizes must be >= 1")
        if self.output_head not in OUTPUT_HEADS:
            raise ContractError(f"output_head must be one of {OUTPUT_HEADS}")


@dataclass
class SequenceCache:
    """Per-layer fused caches plus the final hidden state fed to the readout."""

    layer_caches: list[dict]
    h_final: np.ndarray        # (batch, hidden) of the deepest layer
    T: int
    batched: bool


class Network:
    """Cell stack plus linear readout; parameters live in the cells and here."""

    def __init__(self, spec: NetworkSpec, rng: Rng):
        spec.validate()
        self.spec = spec
        self.layers: list[CellBase] = []
        in_dim = spec.input_dim
        for width in spec.layer_sizes:
            self.layers.append(make_cell(spec.cell_kind, in_dim, width, rng))
            in_dim = width
        self.W_out = glorot_init(spec.output_dim, in_dim, rng)
        self.b_out = np.zeros(spec.output_dim)

    def params(self) -> dict[str, np.ndarray]:
        """Live name -> array views of every trainable parameter."""
        out = {}
        for i, cell in enumerate(self.layers):
            for name, arr in cell.params().items():
                out[f"layer{i}.{name}"] = arr
        out["readout.W"] = self.W_out
        out["readout.b"] = self.b_out
        return out


def _norm_states(net: Network, init_states, batch: int, unsqueeze: bool):
    if init_states is None:
        return [cell.zero_state(batch) for cell in net.layers]
    states = []
    for cell, state in zip(net.layers, init_states):
        if unsqueeze:
            state = tuple(np.asarray(s, dtype=np.float64)[None, :] for s in state)
        states.append(tuple(np.asarray(s, dtype=np.float64) for s in state))
    return states


def _run_forward(net: Network, xs: np.ndarray, batched: bool, init_states=None):
    """Core pass over time-major (T, batch, input_dim) inputs."""
    T = xs.shape[0]
    if T < 1:
        raise ContractError("sequence must have at least one timestep")
    if xs.shape[2] != net.spec.input_dim:
        raise ContractError(
            f"sequence feature dim {xs.shape[2]}, expected {net.spec.input_dim}")
    states = _norm_states(net, init_states, xs.shape[1], unsqueeze=not batched)
    layer_caches = []
    finals = []
    trace = []
    h_seq = xs
    for cell, state0 in zip(net.layers, states):
        h_seq, final, cache = cell.run_sequence(h_seq, state0)
        layer_caches.append(cache)
        finals.append(final)
        trace.append(h_seq)
    h_final = h_seq[-1]
    output = h_final @ net.W_out.T + net.b_out
    cache = SequenceCache(layer_caches=layer_caches, h_final=h_final, T=T,
                          batched=batched)
    return output, cache, trace, finals


def forward_sequence(net: Network, seq: np.ndarray, init_states=None):
    """Run one (T, input_dim) sequence through the stack.

    Returns (output, cache, hidden_trace): the linear readout of the final
    hidden state, the bookkeeping for `backward_sequence`, and the per-layer
    (T, hidden) hidden-state traces for instrumentation. For classification
    heads apply `training.softmax` to the output to get probabilities;
    `backward_sequence` always pulls back through the linear readout.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ContractError(f"expected (T, input_dim) sequence, got shape {seq.shape}")
    output, cache, trace, _ = _run_forward(net, seq[:, None, :], False, init_states)
    return output[0], cache, [tr[:, 0, :] for tr in trace]


def forward_batch(net: Network, seqs: np.ndarray, init_states=None):
    """Batched forward over (batch, T, input_dim); same returns, batch-first."""
    seqs = np.asarray(seqs, dtype=np.float64)
    if seqs.ndim != 3:
        raise ContractError(f"expected (batch, T, input_dim), got shape {seqs.shape}")
    xs = np.ascontiguousarray(seqs.transpose(1, 0, 2))
    output, cache, trace, _ = _run_forward(net, xs, True, init_states)
    return output, cache, [tr.transpose(1, 0, 2) for tr in trace]


def final_states(net: Network, seq: np.ndarray):
    """Forward a single (T, input_dim) sequence; return per-layer final states."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ContractError(f"expected (T, input_dim) sequence, got shape {seq.shape}")
    finals = _run_forward(net, seq[:, None, :], False)[3]
    return [tuple(s[0] for s in state) for state in finals]


def _run_backward(net: Network, cache: SequenceCache, grad_output: np.ndarray):
    """Stacked BPTT: adjoint of <grad_output, output>, top layer first."""
    grads = {
        "readout.W": _outer(grad_output, cache.h_final),
        "readout.b": _vsum(grad_output),
    }
    top = len(net.layers) - 1
    gh_seq = np.zeros(cache.layer_caches[top]["hs"][1:].shape)
    gh_seq[-1] = grad_output @ net.W_out
    for li in reversed(range(len(net.layers))):
        pgrads, gx_seq, _ = net.layers[li].run_sequence_back(
            cache.layer_caches[li], gh_seq)
        for name, arr in pgrads.items():
            grads[f"layer{li}.{name}"] = arr
        gh_seq = gx_seq
    return grads


def backward_sequence(net: Network, cache: SequenceCache,
                      grad_output: np.ndarray) -> dict[str, np.ndarray]:
    """BPTT pullback of <grad_output, output> through all layers and steps.

    Accumulates through both the state path and the gate (neuromodulation)
    paths; verified against central finite differences in the test suite.
    """
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if cache.batched or grad_output.shape != (net.spec.output_dim,):
        raise ContractError("backward_sequence needs a single-sequence cache and "
                            f"a ({net.spec.output_dim},) output gradient")
    return _run_backward(net, cache, grad_output[None, :])


def backward_batch(net: Network, cache: SequenceCache,
                   grad_outputs: np.ndarray) -> dict[str, np.ndarray]:
    """Batched BPTT; returns the mean of the per-sequence gradients."""
    grad_outputs = np.asarray(grad_outputs, dtype=np.float64)
    if not cache.batched or grad_outputs.ndim != 2:
        raise ContractError("backward_batch needs a batched cache and "
                            "(batch, output_dim) output gradients")
    grads = _run_backward(net, cache, grad_outputs)
    n = grad_outputs.shape[0]
    for arr in grads.values():
        arr /= n
    return grads


def save_checkpoint(net: Network, path, seed: int | None = None,
                    iteration: int = 0) -> None:
    """Write a self-describing JSON checkpoint.

    Floats are serialised with Python's shortest round-trip repr, so loading
    reproduces every parameter bit-for-bit.
    """
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "bistablernn-checkpoint",
        "spec": asdict(net.spec),
        "seed": seed,
        "iteration": iteration,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in net.params().items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> tuple[Network, dict]:
    """Rebuild a Network from `save_checkpoint` output; returns (net, meta)."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("kind") != "bistablernn-checkpoint":
        raise ContractError(f"{path}: not a checkpoint file")
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version "
                            f"{doc.get('format_version')!r}")
    spec = NetworkSpec(**doc["spec"])
    net = Network(spec, Rng(0))
    params = net.params()
    saved = doc["params"]
    if set(saved) != set(params):
        raise ContractError(f"{path}: parameter names do not match the spec")
    for name, arr in params.items():
        entry = saved[name]
        data = np.asarray(entry["data"], dtype=np.float64)
        if list(arr.shape) != entry["shape"] or data.size != arr.size:
            raise ContractError(f"{path}: bad shape for parameter {name}")
        if not np.all(np.isfinite(data)):
            raise ContractError(f"{path}: non-finite values in parameter {name}")
        arr[...] = data.reshape(arr.shape)
    meta = {"seed": doc.get("seed"), "iteration": doc.get("iteration", 0)}
    return net, meta
