"""One-timestep forward/backward passes for every recurrent cell type.

A cell owns its parameter arrays and exposes two interfaces:

* reference path: `step(x, state)` / `step_back(cache, gstate)` for one
  timestep, used by the analysis tools and as the oracle in tests;
* fused path: `run_sequence(xs, state0)` / `run_sequence_back(...)` over a
  whole (T, batch, dim) block, used by the network module. Input projections
  are hoisted out of the time loop and the per-gate recurrent matmuls are
  stacked into one contiguous product, which is what makes desk-scale
  training runs tolerable in pure numpy. Both paths compute the same maths;
  the test suite pins them against each other and against central finite
  differences.

`state` is a tuple of arrays whose first entry is always the hidden state h
(the LSTM carries an extra cell-state array). Step inputs may be single
vectors (dim,) or batches (batch, dim); parameter gradients are summed over
the batch axis. Backward passes return the exact partials of the scalar
<gstate, next_state> with respect to every parameter, input and previous
state, including the paths through the gates.
"""

from __future__ import annotations

import numpy as np

from .numerics import ContractError, Rng, glorot_init, sigmoid_map


def _outer(d: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Gradient of a (out x in) matrix from upstream (..., out) and input (..., in)."""
    if d.ndim == 1:
        return np.outer(d, v)
    return d.T @ v


def _vsum(x: np.ndarray) -> np.ndarray:
    """Reduce a batched per-neuron gradient to a vector parameter's shape."""
    return x if x.ndim == 1 else x.sum(axis=0)


def _stacked(*mats: np.ndarray) -> np.ndarray:
    """Row-stack matrices contiguously (shared input, several gates)."""
    return np.ascontiguousarray(np.concatenate(mats, axis=0))


def _stacked_T(*mats: np.ndarray) -> np.ndarray:
    """Contiguous transpose of row-stacked matrices for hot-loop matmuls."""
    return np.ascontiguousarray(np.concatenate(mats, axis=0).T)


def _sigmoid_inplace(pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    # sigmoid(x) = (1 + tanh(x/2)) / 2, written into `out`
    pre *= 0.5
    np.tanh(pre, out=out)
    out += 1.0
    out *= 0.5
    return out


class CellBase:
    """Shared plumbing: parameter access, state construction, shape checks."""

    kind: str = ""
    param_names: tuple[str, ...] = ()
    n_state: int = 1

    def __init__(self, input_dim: int, hidden: int):
        if input_dim < 1 or hidden < 1:
            raise ContractError(f"cell dims must be >= 1, got ({input_dim}, {hidden})")
        self.input_dim = input_dim
        self.hidden = hidden

    def params(self) -> dict[str, np.ndarray]:
        """Live name -> array views of every trainable parameter."""
        return {name: getattr(self, name) for name in self.param_names}

    def zero_state(self, batch: int | None = None) -> tuple[np.ndarray, ...]:
        shape = (self.hidden,) if batch is None else (batch, self.hidden)
        return tuple(np.zeros(shape) for _ in range(self.n_state))

    def _check_step(self, x: np.ndarray, state: tuple) -> None:
        if x.shape[-1] != self.input_dim:
            raise ContractError(
                f"{self.kind}: input dim {x.shape[-1]}, expected {self.input_dim}")
        if len(state) != self.n_state or state[0].shape[-1] != self.hidden:
            raise ContractError(f"{self.kind}: bad state for hidden={self.hidden}")

    def _check_back(self, cache: dict, gstate: tuple) -> None:
        if cache.get("kind") != self.kind or cache["h_prev"].shape[-1] != self.hidden \
                or cache["x"].shape[-1] != self.input_dim:
            raise ContractError(f"{self.kind}: cache does not match this cell")
        if len(gstate) != self.n_state or gstate[0].shape != cache["h_prev"].shape:
            raise ContractError(f"{self.kind}: upstream gradient shape mismatch")

    def _check_seq(self, xs: np.ndarray, state0: tuple) -> None:
        if xs.ndim != 3 or xs.shape[2] != self.input_dim:
            raise ContractError(f"{self.kind}: expected (T, batch, {self.input_dim}) "
                                f"inputs, got {xs.shape}")
        if len(state0) != self.n_state or state0[0].shape != (xs.shape[1], self.hidden):
            raise ContractError(f"{self.kind}: bad initial state for {xs.shape}")

    def _check_seq_back(self, cache: dict, gh_seq: np.ndarray) -> None:
        if cache.get("kind") != self.kind or "xs" not in cache:
            raise ContractError(f"{self.kind}: sequence cache does not match this cell")
        if gh_seq.shape != cache["hs"][1:].shape:
            raise ContractError(f"{self.kind}: upstream gradient shape mismatch")


class BrcCell(CellBase):
    """Bistable recurrent cell.

    h_t = c * h_prev + (1 - c) * tanh(U x + a * h_prev)
    a   = 1 + tanh(U_a x + w_a * h_prev)     feedback gain, in (0, 2)
    c   = sigmoid(U_c x + w_c * h_prev)      update gate,   in (0, 1)

    h_prev enters only through elementwise products, so each neuron's state
    evolves independently of its neighbours (the state Jacobian is diagonal);
    a neuron with a > 1 has two attracting zero-input states, which is what
    lets it store a bit indefinitely.
    """

    kind = "brc"
    param_names = ("U", "U_a", "U_c", "w_a", "w_c")

    def __init__(self, input_dim: int, hidden: int, rng: Rng):
        super().__init__(input_dim, hidden)
        self.U = glorot_init(hidden, input_dim, rng)
        self.U_a = glorot_init(hidden, input_dim, rng)
        self.U_c = glorot_init(hidden, input_dim, rng)
        self.w_a = rng.uniform(-1.0, 1.0, hidden)
        self.w_c = rng.uniform(-1.0, 1.0, hidden)

    def step(self, x, state):
        x = np.asarray(x, dtype=np.float64)
        self._check_step(x, state)
        (h_prev,) = state
        a = 1.0 + np.tanh(x @ self.U_a.T + self.w_a * h_prev)
        c = sigmoid_map(x @ self.U_c.T + self.w_c * h_prev)
        e = np.tanh(x @ self.U.T + a * h_prev)
        h = c * h_prev + (1.0 - c) * e
        cache = {"kind": self.kind, "x": x, "h_prev": h_prev, "a": a, "c": c, "e": e}
        return (h,), cache

    def step_back(self, cache, gstate):
        self._check_back(cache, gstate)
        (g,) = gstate
        x, h_prev = cache["x"], cache["h_prev"]
        a, c, e = cache["a"], cache["c"], cache["e"]
        gc = g * (h_prev - e)
        gph = g * (1.0 - c) * (1.0 - e * e)          # pre-tanh of the candidate
        gpa = gph * h_prev * (1.0 - (a - 1.0) ** 2)  # tanh' of the a branch
        gpc = gc * c * (1.0 - c)
        grads = {
            "U": _outer(gph, x),
            "U_a": _outer(gpa, x),
            "U_c": _outer(gpc, x),
            "w_a": _vsum(gpa * h_prev),
            "w_c": _vsum(gpc * h_prev),
        }
        gx = gph @ self.U + gpa @ self.U_a + gpc @ self.U_c
        gh = g * c + gph * a + gpa * self.w_a + gpc * self.w_c
        return grads, gx, (gh,)

    def run_sequence(self, xs, state0):
        self._check_seq(xs, state0)
        T, B, _ = xs.shape
        H = self.hidden
        h = state0[0]
        proj = (xs.reshape(T * B, self.input_dim)
                @ _stacked_T(self.U_a, self.U_c, self.U)).reshape(T, B, 3 * H)
        a_s = np.empty((T, B, H))
        c_s = np.empty((T, B, H))
        e_s = np.empty((T, B, H))
        hs = np.empty((T + 1, B, H))
        hs[0] = h
        for t in range(T):
            p = proj[t]
            a, c, e = a_s[t], c_s[t], e_s[t]
            np.tanh(p[:, :H] + self.w_a * h, out=a)
            a += 1.0
            _sigmoid_inplace(p[:, H:2 * H] + self.w_c * h, out=c)
            np.tanh(p[:, 2 * H:] + a * h, out=e)
            hn = hs[t + 1]
            np.multiply(c, h, out=hn)
            tmp = 1.0 - c
            tmp *= e
            hn += tmp
            h = hn
        cache = {"kind": self.kind, "xs": xs, "hs": hs, "a": a_s, "c": c_s, "e": e_s}
        return hs[1:], (hs[T],), cache

    def run_sequence_back(self, cache, gh_seq, gfinal=None):
        self._check_seq_back(cache, gh_seq)
        xs, hs = cache["xs"], cache["hs"]
        a_s, c_s, e_s = cache["a"], cache["c"], cache["e"]
        T, B, H = a_s.shape
        gates = np.empty((T, B, 3 * H))         # [gpa | gpc | gph]
        carry = np.zeros((B, H)) if gfinal is None else gfinal[0].copy()
        for t in range(T - 1, -1, -1):
            g = gh_seq[t] + carry
            h_prev, a, c, e = hs[t], a_s[t], c_s[t], e_s[t]
            gpa = gates[t, :, :H]
            gpc = gates[t, :, H:2 * H]
            gph = gates[t, :, 2 * H:]
            np.multiply(g, 1.0 - c, out=gph)
            gph *= 1.0 - e * e
            np.multiply(gph, h_prev, out=gpa)
            gpa *= 1.0 - (a - 1.0) ** 2
            np.multiply(g, h_prev - e, out=gpc)
            gpc *= c * (1.0 - c)
            carry = g * c
            carry += gph * a
            carry += gpa * self.w_a
            carry += gpc * self.w_c
        flat = gates.reshape(T * B, 3 * H)
        d_in = flat.T @ xs.reshape(T * B, self.input_dim)
        grads = {
            "U_a": d_in[:H],
            "U_c": d_in[H:2 * H],
            "U": d_in[2 * H:],
            "w_a": np.einsum("tbh,tbh->h", gates[:, :, :H], hs[:-1]),
            "w_c": np.einsum("tbh,tbh->h", gates[:, :, H:2 * H], hs[:-1]),
        }
        gx_seq = (flat @ _stacked(self.U_a, self.U_c, self.U)
                  ).reshape(T, B, self.input_dim)
        return grads, gx_seq, (carry,)


class NbrcCell(CellBase):
    """Neuromodulated bistable recurrent cell.

    Same state update as the BRC, but the gates a and c are computed from the
    full previous layer state (W_a h_prev, W_c h_prev), so other neurons can
    retune a neuron's feedback gain and update speed. The state path itself
    stays diagonal.
    """

    kind = "nbrc"
    param_names = ("U", "U_a", "U_c", "W_a", "W_c")

    def __init__(self, input_dim: int, hidden: int, rng: Rng):
        super().__init__(input_dim, hidden)
        self.U = glorot_init(hidden, input_dim, rng)
        self.U_a = glorot_init(hidden, input_dim, rng)
        self.U_c = glorot_init(hidden, input_dim, rng)
        self.W_a = glorot_init(hidden, hidden, rng)
        self.W_c = glorot_init(hidden, hidden, rng)

    def step(self, x, state):
        x = np.asarray(x, dtype=np.float64)
        self._check_step(x, state)
        (h_prev,) = state
        a = 1.0 + np.tanh(x @ self.U_a.T + h_prev @ self.W_a.T)
        c = sigmoid_map(x @ self.U_c.T + h_prev @ self.W_c.T)
        e = np.tanh(x @ self.U.T + a * h_prev)
        h = c * h_prev + (1.0 - c) * e
        cache = {"kind": self.kind, "x": x, "h_prev": h_prev, "a": a, "c": c, "e": e}
        return (h,), cache

    def step_back(self, cache, gstate):
        self._check_back(cache, gstate)
        (g,) = gstate
        x, h_prev = cache["x"], cache["h_prev"]
        a, c, e = cache["a"], cache["c"], cache["e"]
        gc = g * (h_prev - e)
        gph = g * (1.0 - c) * (1.0 - e * e)
        gpa = gph * h_prev * (1.0 - (a - 1.0) ** 2)
        gpc = gc * c * (1.0 - c)
        grads = {
            "U": _outer(gph, x),
            "U_a": _outer(gpa, x),
            "U_c": _outer(gpc, x),
            "W_a": _outer(gpa, h_prev),
            "W_c": _outer(gpc, h_prev),
        }
        gx = gph @ self.U + gpa @ self.U_a + gpc @ self.U_c
        gh = g * c + gph * a + gpa @ self.W_a + gpc @ self.W_c
        return grads, gx, (gh,)

    def run_sequence(self, xs, state0):
        self._check_seq(xs, state0)
        T, B, _ = xs.shape
        H = self.hidden
        h = state0[0]
        proj = (xs.reshape(T * B, self.input_dim)
                @ _stacked_T(self.U_a, self.U_c, self.U)).reshape(T, B, 3 * H)
        w_rec_T = _stacked_T(self.W_a, self.W_c)     # (H, 2H)
        a_s = np.empty((T, B, H))
        c_s = np.empty((T, B, H))
        e_s = np.empty((T, B, H))
        hs = np.empty((T + 1, B, H))
        hs[0] = h
        for t in range(T):
            p = proj[t]
            rec = h @ w_rec_T
            a, c, e = a_s[t], c_s[t], e_s[t]
            np.tanh(p[:, :H] + rec[:, :H], out=a)
            a += 1.0
            _sigmoid_inplace(p[:, H:2 * H] + rec[:, H:], out=c)
            np.tanh(p[:, 2 * H:] + a * h, out=e)
            hn = hs[t + 1]
            np.multiply(c, h, out=hn)
            tmp = 1.0 - c
            tmp *= e
            hn += tmp
            h = hn
        cache = {"kind": self.kind, "xs": xs, "hs": hs, "a": a_s, "c": c_s, "e": e_s}
        return hs[1:], (hs[T],), cache

    def run_sequence_back(self, cache, gh_seq, gfinal=None):
        self._check_seq_back(cache, gh_seq)
        xs, hs = cache["xs"], cache["hs"]
        a_s, c_s, e_s = cache["a"], cache["c"], cache["e"]
        T, B, H = a_s.shape
        gates = np.empty((T, B, 3 * H))         # [gpa | gpc | gph]
        w_rec = _stacked(self.W_a, self.W_c)    # (2H, H)
        carry = np.zeros((B, H)) if gfinal is None else gfinal[0].copy()
        for t in range(T - 1, -1, -1):
            g = gh_seq[t] + carry
            h_prev, a, c, e = hs[t], a_s[t], c_s[t], e_s[t]
            gpa = gates[t, :, :H]
            gpc = gates[t, :, H:2 * H]
            gph = gates[t, :, 2 * H:]
            np.multiply(g, 1.0 - c, out=gph)
            gph *= 1.0 - e * e
            np.multiply(gph, h_prev, out=gpa)
            gpa *= 1.0 - (a - 1.0) ** 2
            np.multiply(g, h_prev - e, out=gpc)
            gpc *= c * (1.0 - c)
            carry = g * c
            carry += gph * a
            carry += gates[t, :, :2 * H] @ w_rec
        flat = gates.reshape(T * B, 3 * H)
        d_in = flat.T @ xs.reshape(T * B, self.input_dim)
        d_rec = (np.ascontiguousarray(gates[:, :, :2 * H]).reshape(T * B, 2 * H).T
                 @ hs[:-1].reshape(T * B, H))
        grads = {
            "U_a": d_in[:H],
            "U_c": d_in[H:2 * H],
            "U": d_in[2 * H:],
            "W_a": d_rec[:H],
            "W_c": d_rec[H:],
        }
        gx_seq = (flat @ _stacked(self.U_a, self.U_c, self.U)
                  ).reshape(T, B, self.input_dim)
        return grads, gx_seq, (carry,)


class GruCell(CellBase):
    """Gated recurrent unit (no biases).

    z = sigmoid(U_z x + W_z h_prev)          update gate
    r = sigmoid(U_r x + W_r h_prev)          reset gate
    h = z * h_prev + (1 - z) * tanh(U_h x + r * (W_h h_prev))
    """

    kind = "gru"
    param_names = ("U_z", "U_r", "U_h", "W_z", "W_r", "W_h")

    def __init__(self, input_dim: int, hidden: int, rng: Rng):
        super().__init__(input_dim, hidden)
        self.U_z = glorot_init(hidden, input_dim, rng)
        self.U_r = glorot_init(hidden, input_dim, rng)
        self.U_h = glorot_init(hidden, input_dim, rng)
        self.W_z = glorot_init(hidden, hidden, rng)
        self.W_r = glorot_init(hidden, hidden, rng)
        self.W_h = glorot_init(hidden, hidden, rng)

    def step(self, x, state):
        x = np.asarray(x, dtype=np.float64)
        self._check_step(x, state)
        (h_prev,) = state
        z = sigmoid_map(x @ self.U_z.T + h_prev @ self.W_z.T)
        r = sigmoid_map(x @ self.U_r.T + h_prev @ self.W_r.T)
        s = h_prev @ self.W_h.T
        e = np.tanh(x @ self.U_h.T + r * s)
        h = z * h_prev + (1.0 - z) * e
        cache = {"kind": self.kind, "x": x, "h_prev": h_prev,
                 "z": z, "r": r, "s": s, "e": e}
        return (h,), cache

    def step_back(self, cache, gstate):
        self._check_back(cache, gstate)
        (g,) = gstate
        x, h_prev = cache["x"], cache["h_prev"]
        z, r, s, e = cache["z"], cache["r"], cache["s"], cache["e"]
        gz = g * (h_prev - e)
        gph = g * (1.0 - z) * (1.0 - e * e)
        gr = gph * s
        gs = gph * r                                 # grad into W_h h_prev
        gpz = gz * z * (1.0 - z)
        gpr = gr * r * (1.0 - r)
        grads = {
            "U_z": _outer(gpz, x),
            "U_r": _outer(gpr, x),
            "U_h": _outer(gph, x),
            "W_z": _outer(gpz, h_prev),
            "W_r": _outer(gpr, h_prev),
            "W_h": _outer(gs, h_prev),
        }
        gx = gpz @ self.U_z + gpr @ self.U_r + gph @ self.U_h
        gh = g * z + gpz @ self.W_z + gpr @ self.W_r + gs @ self.W_h
        return grads, gx, (gh,)

    def run_sequence(self, xs, state0):
        self._check_seq(xs, state0)
        T, B, _ = xs.shape
        H = self.hidden
        h = state0[0]
        proj = (xs.reshape(T * B, self.input_dim)
                @ _stacked_T(self.U_z, self.U_r, self.U_h)).reshape(T, B, 3 * H)
        w_rec_T = _stacked_T(self.W_z, self.W_r, self.W_h)
        z_s = np.empty((T, B, H))
        r_s = np.empty((T, B, H))
        s_s = np.empty((T, B, H))
        e_s = np.empty((T, B, H))
        hs = np.empty((T + 1, B, H))
        hs[0] = h
        for t in range(T):
            p = proj[t]
            rec = h @ w_rec_T
            z, r, e = z_s[t], r_s[t], e_s[t]
            s_s[t] = rec[:, 2 * H:]
            _sigmoid_inplace(p[:, :H] + rec[:, :H], out=z)
            _sigmoid_inplace(p[:, H:2 * H] + rec[:, H:2 * H], out=r)
            np.tanh(p[:, 2 * H:] + r * s_s[t], out=e)
            hn = hs[t + 1]
            np.multiply(z, h, out=hn)
            tmp = 1.0 - z
            tmp *= e
            hn += tmp
            h = hn
        cache = {"kind": self.kind, "xs": xs, "hs": hs,
                 "z": z_s, "r": r_s, "s": s_s, "e": e_s}
        return hs[1:], (hs[T],), cache

    def run_sequence_back(self, cache, gh_seq, gfinal=None):
        self._check_seq_back(cache, gh_seq)
        xs, hs = cache["xs"], cache["hs"]
        z_s, r_s, s_s, e_s = cache["z"], cache["r"], cache["s"], cache["e"]
        T, B, H = z_s.shape
        rec_gates = np.empty((T, B, 3 * H))     # [gpz | gpr | gs] (recurrent side)
        gph_s = np.empty((T, B, H))
        w_rec = _stacked(self.W_z, self.W_r, self.W_h)
        carry = np.zeros((B, H)) if gfinal is None else gfinal[0].copy()
        for t in range(T - 1, -1, -1):
            g = gh_seq[t] + carry
            h_prev, z, r, s, e = hs[t], z_s[t], r_s[t], s_s[t], e_s[t]
            gpz = rec_gates[t, :, :H]
            gpr = rec_gates[t, :, H:2 * H]
            gs = rec_gates[t, :, 2 * H:]
            gph = gph_s[t]
            np.multiply(g, 1.0 - z, out=gph)
            gph *= 1.0 - e * e
            np.multiply(gph, r, out=gs)
            np.multiply(gph, s, out=gpr)
            gpr *= r * (1.0 - r)
            np.multiply(g, h_prev - e, out=gpz)
            gpz *= z * (1.0 - z)
            carry = g * z
            carry += rec_gates[t] @ w_rec
        d_rec = (rec_gates.reshape(T * B, 3 * H).T
                 @ hs[:-1].reshape(T * B, H))
        in_gates = np.ascontiguousarray(rec_gates[:, :, :2 * H]).reshape(T * B, 2 * H)
        gph_flat = gph_s.reshape(T * B, H)
        xs_flat = xs.reshape(T * B, self.input_dim)
        d_in = in_gates.T @ xs_flat
        grads = {
            "U_z": d_in[:H],
            "U_r": d_in[H:],
            "U_h": gph_flat.T @ xs_flat,
            "W_z": d_rec[:H],
            "W_r": d_rec[H:2 * H],
            "W_h": d_rec[2 * H:],
        }
        gx_seq = (in_gates @ _stacked(self.U_z, self.U_r)
                  + gph_flat @ self.U_h).reshape(T, B, self.input_dim)
        return grads, gx_seq, (carry,)


class LstmCell(CellBase):
    """Standard LSTM (input/forget/output gates, tanh candidate, biases).

    Kept as an off-the-shelf baseline: state is the pair (h, cell); the
    forget-gate bias is initialised to 1.0.
    """

    kind = "lstm"
    param_names = ("U_i", "U_f", "U_o", "U_g", "W_i", "W_f", "W_o", "W_g",
                   "b_i", "b_f", "b_o", "b_g")
    n_state = 2

    def __init__(self, input_dim: int, hidden: int, rng: Rng):
        super().__init__(input_dim, hidden)
        for name in ("U_i", "U_f", "U_o", "U_g"):
            setattr(self, name, glorot_init(hidden, input_dim, rng))
        for name in ("W_i", "W_f", "W_o", "W_g"):
            setattr(self, name, glorot_init(hidden, hidden, rng))
        self.b_i = np.zeros(hidden)
        self.b_f = np.ones(hidden)
        self.b_o = np.zeros(hidden)
        self.b_g = np.zeros(hidden)

    def step(self, x, state):
        x = np.asarray(x, dtype=np.float64)
        self._check_step(x, state)
        h_prev, c_prev = state
        i = sigmoid_map(x @ self.U_i.T + h_prev @ self.W_i.T + self.b_i)
        f = sigmoid_map(x @ self.U_f.T + h_prev @ self.W_f.T + self.b_f)
        o = sigmoid_map(x @ self.U_o.T + h_prev @ self.W_o.T + self.b_o)
        gcand = np.tanh(x @ self.U_g.T + h_prev @ self.W_g.T + self.b_g)
        c_new = f * c_prev + i * gcand
        tc = np.tanh(c_new)
        h = o * tc
        cache = {"kind": self.kind, "x": x, "h_prev": h_prev, "c_prev": c_prev,
                 "i": i, "f": f, "o": o, "gcand": gcand, "tc": tc}
        return (h, c_new), cache

    def step_back(self, cache, gstate):
        self._check_back(cache, gstate)
        gh, gc_next = gstate
        x, h_prev, c_prev = cache["x"], cache["h_prev"], cache["c_prev"]
        i, f, o, gcand, tc = (cache["i"], cache["f"], cache["o"],
                              cache["gcand"], cache["tc"])
        go = gh * tc
        gcc = gh * o * (1.0 - tc * tc) + gc_next
        gpi = gcc * gcand * i * (1.0 - i)
        gpf = gcc * c_prev * f * (1.0 - f)
        gpo = go * o * (1.0 - o)
        gpg = gcc * i * (1.0 - gcand * gcand)
        grads = {
            "U_i": _outer(gpi, x), "W_i": _outer(gpi, h_prev), "b_i": _vsum(gpi),
            "U_f": _outer(gpf, x), "W_f": _outer(gpf, h_prev), "b_f": _vsum(gpf),
            "U_o": _outer(gpo, x), "W_o": _outer(gpo, h_prev), "b_o": _vsum(gpo),
            "U_g": _outer(gpg, x), "W_g": _outer(gpg, h_prev), "b_g": _vsum(gpg),
        }
        gx = gpi @ self.U_i + gpf @ self.U_f + gpo @ self.U_o + gpg @ self.U_g
        gh_prev = gpi @ self.W_i + gpf @ self.W_f + gpo @ self.W_o + gpg @ self.W_g
        gc_prev = gcc * f
        return grads, gx, (gh_prev, gc_prev)

    def run_sequence(self, xs, state0):
        self._check_seq(xs, state0)
        T, B, _ = xs.shape
        H = self.hidden
        h, c = state0
        bias = np.concatenate([self.b_i, self.b_f, self.b_o, self.b_g])
        proj = (xs.reshape(T * B, self.input_dim)
                @ _stacked_T(self.U_i, self.U_f, self.U_o, self.U_g) + bias
                ).reshape(T, B, 4 * H)
        w_rec_T = _stacked_T(self.W_i, self.W_f, self.W_o, self.W_g)
        i_s = np.empty((T, B, H))
        f_s = np.empty((T, B, H))
        o_s = np.empty((T, B, H))
        g_s = np.empty((T, B, H))
        tc_s = np.empty((T, B, H))
        cs = np.empty((T + 1, B, H))
        hs = np.empty((T + 1, B, H))
        hs[0] = h
        cs[0] = c
        for t in range(T):
            p = proj[t]
            rec = h @ w_rec_T
            rec += p
            i, f, o, g = i_s[t], f_s[t], o_s[t], g_s[t]
            _sigmoid_inplace(rec[:, :H], out=i)
            _sigmoid_inplace(rec[:, H:2 * H], out=f)
            _sigmoid_inplace(rec[:, 2 * H:3 * H], out=o)
            np.tanh(rec[:, 3 * H:], out=g)
            cn = cs[t + 1]
            np.multiply(f, c, out=cn)
            cn += i * g
            tc = tc_s[t]
            np.tanh(cn, out=tc)
            hn = hs[t + 1]
            np.multiply(o, tc, out=hn)
            h, c = hn, cn
        cache = {"kind": self.kind, "xs": xs, "hs": hs, "cs": cs,
                 "i": i_s, "f": f_s, "o": o_s, "gcand": g_s, "tc": tc_s}
        return hs[1:], (hs[T], cs[T]), cache

    def run_sequence_back(self, cache, gh_seq, gfinal=None):
        self._check_seq_back(cache, gh_seq)
        xs, hs, cs = cache["xs"], cache["hs"], cache["cs"]
        i_s, f_s, o_s, g_s, tc_s = (cache["i"], cache["f"], cache["o"],
                                    cache["gcand"], cache["tc"])
        T, B, H = i_s.shape
        gates = np.empty((T, B, 4 * H))         # [gpi | gpf | gpo | gpg]
        w_rec = _stacked(self.W_i, self.W_f, self.W_o, self.W_g)
        if gfinal is None:
            carry_h = np.zeros((B, H))
            carry_c = np.zeros((B, H))
        else:
            carry_h, carry_c = gfinal[0].copy(), gfinal[1].copy()
        for t in range(T - 1, -1, -1):
            gh = gh_seq[t] + carry_h
            i, f, o, g, tc = i_s[t], f_s[t], o_s[t], g_s[t], tc_s[t]
            gcc = gh * o
            gcc *= 1.0 - tc * tc
            gcc += carry_c
            gpi = gates[t, :, :H]
            gpf = gates[t, :, H:2 * H]
            gpo = gates[t, :, 2 * H:3 * H]
            gpg = gates[t, :, 3 * H:]
            np.multiply(gcc, g, out=gpi)
            gpi *= i * (1.0 - i)
            np.multiply(gcc, cs[t], out=gpf)
            gpf *= f * (1.0 - f)
            np.multiply(gh, tc, out=gpo)
            gpo *= o * (1.0 - o)
            np.multiply(gcc, i, out=gpg)
            gpg *= 1.0 - g * g
            carry_c = gcc * f
            carry_h = gates[t] @ w_rec
        flat = gates.reshape(T * B, 4 * H)
        d_in = flat.T @ xs.reshape(T * B, self.input_dim)
        d_rec = flat.T @ hs[:-1].reshape(T * B, H)
        d_b = flat.sum(axis=0)
        grads = {
            "U_i": d_in[:H], "U_f": d_in[H:2 * H],
            "U_o": d_in[2 * H:3 * H], "U_g": d_in[3 * H:],
            "W_i": d_rec[:H], "W_f": d_rec[H:2 * H],
            "W_o": d_rec[2 * H:3 * H], "W_g": d_rec[3 * H:],
            "b_i": d_b[:H], "b_f": d_b[H:2 * H],
            "b_o": d_b[2 * H:3 * H], "b_g": d_b[3 * H:],
        }
        gx_seq = (flat @ _stacked(self.U_i, self.U_f, self.U_o, self.U_g)
                  ).reshape(T, B, self.input_dim)
        return grads, gx_seq, (carry_h, carry_c)


class RnnCell(CellBase):
    """Vanilla recurrent cell: h = tanh(U x + W h_prev), no bias."""

    kind = "rnn"
    param_names = ("U", "W")

    def __init__(self, input_dim: int, hidden: int, rng: Rng):
        super().__init__(input_dim, hidden)
        self.U = glorot_init(hidden, input_dim, rng)
        self.W = glorot_init(hidden, hidden, rng)

    def step(self, x, state):
        x = np.asarray(x, dtype=np.float64)
        self._check_step(x, state)
        (h_prev,) = state
        h = np.tanh(x @ self.U.T + h_prev @ self.W.T)
        cache = {"kind": self.kind, "x": x, "h_prev": h_prev, "h": h}
        return (h,), cache

    def step_back(self, cache, gstate):
        self._check_back(cache, gstate)
        (g,) = gstate
        x, h_prev, h = cache["x"], cache["h_prev"], cache["h"]
        gp = g * (1.0 - h * h)
        grads = {"U": _outer(gp, x), "W": _outer(gp, h_prev)}
        gx = gp @ self.U
        gh = gp @ self.W
        return grads, gx, (gh,)

    def run_sequence(self, xs, state0):
        self._check_seq(xs, state0)
        T, B, _ = xs.shape
        H = self.hidden
        h = state0[0]
        proj = (xs.reshape(T * B, self.input_dim)
                @ np.ascontiguousarray(self.U.T)).reshape(T, B, H)
        w_T = np.ascontiguousarray(self.W.T)
        hs = np.empty((T + 1, B, H))
        hs[0] = h
        for t in range(T):
            hn = hs[t + 1]
            np.tanh(proj[t] + h @ w_T, out=hn)
            h = hn
        cache = {"kind": self.kind, "xs": xs, "hs": hs}
        return hs[1:], (hs[T],), cache

    def run_sequence_back(self, cache, gh_seq, gfinal=None):
        self._check_seq_back(cache, gh_seq)
        xs, hs = cache["xs"], cache["hs"]
        T, B, H = gh_seq.shape
        gp_s = np.empty((T, B, H))
        carry = np.zeros((B, H)) if gfinal is None else gfinal[0].copy()
        for t in range(T - 1, -1, -1):
            g = gh_seq[t] + carry
            h = hs[t + 1]
            gp = gp_s[t]
            np.multiply(g, 1.0 - h * h, out=gp)
            carry = gp @ self.W
        flat = gp_s.reshape(T * B, H)
        grads = {
            "U": flat.T @ xs.reshape(T * B, self.input_dim),
            "W": flat.T @ hs[:-1].reshape(T * B, H),
        }
        gx_seq = (flat @ self.U).reshape(T, B, self.input_dim)
        return grads, gx_seq, (carry,)


CELL_TYPES: dict[str, type[CellBase]] = {
    cls.kind: cls for cls in (BrcCell, NbrcCell, GruCell, LstmCell, RnnCell)
}


def make_cell(kind: str, input_dim: int, hidden: int, rng: Rng) -> CellBase:
    """Construct a freshly initialised cell of the given kind."""
    if kind not in CELL_TYPES:
        raise ContractError(f"unknown cell kind {kind!r}; choose from {sorted(CELL_TYPES)}")
    return CELL_TYPES[kind](input_dim, hidden, rng)


def state_jacobian(cell: CellBase, x: np.ndarray, h_prev: np.ndarray,
                   eps: float = 1e-6) -> np.ndarray:
    """Numerical Jacobian dh_t/dh_prev via central differences.

    For cells with extra state (LSTM) the non-hidden components are held at
    zero. Exposes the coupling structure: diagonal for BRC, dense for nBRC
    with dense gate matrices.
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if h_prev.ndim != 1:
        raise ContractError("state_jacobian expects a single state vector")
    n = h_prev.shape[0]
    extra = cell.zero_state()[1:]
    jac = np.empty((n, n))
    for j in range(n):
        hp = h_prev.copy()
        hp[j] += eps
        h_plus = cell.step(x, (hp,) + extra)[0][0]
        hm = h_prev.copy()
        hm[j] -= eps
        h_minus = cell.step(x, (hm,) + extra)[0][0]
        jac[:, j] = (h_plus - h_minus) / (2.0 * eps)
    return jac
