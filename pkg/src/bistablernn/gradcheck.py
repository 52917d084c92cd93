"""Finite-difference oracles for verifying the hand-derived gradients.

The analytic passes in `cells` and `network` are checked against central
differences: f(x+eps) - f(x-eps) over 2*eps, applied to every parameter
entry. Mismatch is scored as

    |analytic - numeric| / max(|analytic|, |numeric|, abs_floor / rel_tol)

so a check passes when the relative error is below `rel_tol` or the absolute
difference is below `abs_floor`, whichever is more forgiving.
"""

from __future__ import annotations

import numpy as np

from .network import Network, NetworkSpec, backward_sequence, forward_sequence
from .numerics import Rng


def numeric_gradient(f, arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar f() w.r.t. arr's entries.

    arr is perturbed in place and restored; f must read the same array
    object (not a copy) on each call.
    """
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f()
        flat[i] = orig - eps
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def grad_error(analytic: np.ndarray, numeric: np.ndarray,
               rel_tol: float = 1e-5, abs_floor: float = 1e-8) -> float:
    """Worst-case floored relative error between two gradient arrays."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)),
                       abs_floor / rel_tol)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_cell_step(cell, x, h_prev, grad_h, eps: float = 1e-5) -> float:
    """Max floored relative error of one cell step's backward pass.

    Covers every parameter plus the input and every previous-state component,
    using the pullback <grad_h, h_t> as the scalar under differentiation.
    """
    x = np.array(x, dtype=np.float64)
    state = (np.array(h_prev, dtype=np.float64),) + cell.zero_state()[1:]
    _, cache = cell.step(x, state)
    grads, gx, gstate = cell.step_back(cache, (grad_h,) + tuple(
        np.zeros_like(s) for s in state[1:]))

    def pullback():
        h = cell.step(x, state)[0][0]
        return float(grad_h @ h)

    worst = 0.0
    for name, arr in cell.params().items():
        num = numeric_gradient(pullback, arr, eps)
        worst = max(worst, grad_error(grads[name], num))
    worst = max(worst, grad_error(gx, numeric_gradient(pullback, x, eps)))
    for comp, analytic in zip(state, gstate):
        worst = max(worst, grad_error(analytic, numeric_gradient(pullback, comp, eps)))
    return worst


def check_bptt(net: Network, seq: np.ndarray, grad_output: np.ndarray,
               eps: float = 1e-5) -> float:
    """Max floored relative error of full BPTT over every network parameter."""
    _, cache, _ = forward_sequence(net, seq)
    analytic = backward_sequence(net, cache, grad_output)

    def pullback():
        out, _, _ = forward_sequence(net, seq)
        return float(grad_output @ out)

    worst = 0.0
    for name, arr in net.params().items():
        num = numeric_gradient(pullback, arr, eps)
        worst = max(worst, grad_error(analytic[name], num))
    return worst


def random_bptt_instance(cell_kind: str, rng: Rng, max_layers: int = 2,
                         max_hidden: int = 8, max_T: int = 10):
    """Sample a small random network plus sequence/pullback for grad checking."""
    n_layers = int(rng.integers(1, max_layers + 1))
    sizes = [int(rng.integers(2, max_hidden + 1)) for _ in range(n_layers)]
    input_dim = int(rng.integers(1, 5))
    output_dim = int(rng.integers(1, 4))
    T = int(rng.integers(1, max_T + 1))
    spec = NetworkSpec(cell_kind=cell_kind, layer_sizes=sizes,
                       input_dim=input_dim, output_dim=output_dim)
    net = Network(spec, rng)
    seq = rng.normal((T, input_dim))
    grad_output = rng.normal(output_dim)
    return net, seq, grad_output


def check_cell_kind(cell_kind: str, n_instances: int, seed: int,
                    eps: float = 1e-5, **size_caps) -> float:
    """Worst BPTT mismatch over seeded random instances of one cell kind."""
    rng = Rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        net, seq, g = random_bptt_instance(cell_kind, rng, **size_caps)
        worst = max(worst, check_bptt(net, seq, g, eps))
    return worst
