"""Dynamical analysis of the bistable cells.

A single neuron with frozen gates is the one-dimensional map

    F(h) = c h + (1 - c) tanh(drive + a h),        G(h) = h - F(h)

whose fixed points are the roots of G. For drive = 0 the map undergoes a
supercritical pitchfork at a = 1: one stable point (the origin) for a < 1,
and for a > 1 an unstable origin flanked by two stable points +-h1. This
module locates and classifies those fixed points, sweeps them against a,
verifies the pitchfork's defining derivative conditions, simulates scalar
trajectories, and instruments full networks (fraction of neurons with a > 1,
mean update-gate value, per layer and timestep). CSV emitters produce the
tables a plotting tool needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Network, forward_sequence
from .numerics import ContractError

ROOT_DOMAIN = (-2.0, 2.0)   # |F(h)| <= c|h| + (1-c) pins fixed points inside [-1, 1]
ROOT_TOL = 1e-12
SINGULAR_TOL = 1e-6


@dataclass
class ScalarCellConfig:
    """Frozen-gate scalar cell: feedback gain a, update gate c, input drive."""

    a: float
    c: float
    drive: float = 0.0

    def __post_init__(self):
        # a = 2 (the supremum of the cell's gain range) is allowed for analysis.
        if not 0.0 < self.a <= 2.0:
            raise ContractError(f"feedback gain a must lie in (0, 2], got {self.a}")
        if not 0.0 < self.c < 1.0:
            raise ContractError(f"update gate c must lie in (0, 1), got {self.c}")


def scalar_map(cfg: ScalarCellConfig, h):
    """One step of the frozen-gate cell, F(h)."""
    return cfg.c * h + (1.0 - cfg.c) * np.tanh(cfg.drive + cfg.a * h)


def scalar_map_derivative(cfg: ScalarCellConfig, h):
    """dF/dh: the stability multiplier when evaluated at a fixed point."""
    t = np.tanh(cfg.drive + cfg.a * h)
    return cfg.c + (1.0 - cfg.c) * cfg.a * (1.0 - t * t)


def residual(cfg: ScalarCellConfig, h):
    """G(h) = h - F(h); fixed points are its roots."""
    return h - scalar_map(cfg, h)


def iv_curve(alpha: float, v_grid: np.ndarray) -> np.ndarray:
    """Current-voltage curve v - alpha*tanh(v) of the underlying feedback loop.

    For alpha <= 1 the curve is monotone (one zero crossing: monostable);
    alpha > 1 creates a negative-slope region around 0 and two extra
    crossings (bistable).
    """
    v = np.asarray(v_grid, dtype=np.float64)
    return v - alpha * np.tanh(v)


@dataclass
class FixedPoint:
    h: float
    multiplier: float
    stability: str   # stable | unstable | singular


@dataclass
class FixedPointReport:
    config: ScalarCellConfig
    points: list[FixedPoint] = field(default_factory=list)

    @property
    def stable(self) -> list[FixedPoint]:
        return [p for p in self.points if p.stability == "stable"]

    @property
    def unstable(self) -> list[FixedPoint]:
        return [p for p in self.points if p.stability == "unstable"]


def _bisect(f, lo: float, hi: float) -> float:
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0 or (hi - lo) < 1e-15:
            return mid
        if (flo < 0.0) == (fmid < 0.0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_fixed_points(cfg: ScalarCellConfig, grid_points: int = 4001) -> FixedPointReport:
    """Locate and classify every fixed point of the frozen-gate cell.

    Roots of G are bracketed by sign changes on a uniform grid over
    [-2, 2] and polished by bisection to |G| < 1e-12; each is classified by
    its multiplier dF/dh (stable iff |m| < 1, singular when |m - 1| < 1e-6).
    """
    lo, hi = ROOT_DOMAIN
    hs = np.linspace(lo, hi, grid_points)
    gs = residual(cfg, hs)
    roots: list[float] = []
    for i in range(grid_points - 1):
        if gs[i] == 0.0:
            roots.append(float(hs[i]))
        elif (gs[i] < 0.0) != (gs[i + 1] < 0.0):
            roots.append(_bisect(lambda h: residual(cfg, h), float(hs[i]), float(hs[i + 1])))
    if gs[-1] == 0.0:
        roots.append(float(hs[-1]))

    report = FixedPointReport(config=cfg)
    for h_star in sorted(roots):
        if report.points and abs(h_star - report.points[-1].h) < 1e-9:
            continue
        if abs(residual(cfg, h_star)) > ROOT_TOL:
            raise ContractError(f"root polish failed at h={h_star}")
        m = float(scalar_map_derivative(cfg, h_star))
        if abs(m - 1.0) < SINGULAR_TOL:
            stability = "singular"
        elif abs(m) < 1.0:
            stability = "stable"
        else:
            stability = "unstable"
        report.points.append(FixedPoint(h=h_star, multiplier=m, stability=stability))
    return report


def bifurcation_sweep(a_values: np.ndarray, c: float, drive: float = 0.0):
    """Fixed points across a range of feedback gains.

    Returns rows (a, h_star, stability, multiplier) sorted by a then h, the
    direct input for plotting the pitchfork diagram.
    """
    rows = []
    for a in np.asarray(a_values, dtype=np.float64):
        report = find_fixed_points(ScalarCellConfig(a=float(a), c=c, drive=drive))
        for p in report.points:
            rows.append((float(a), p.h, p.stability, p.multiplier))
    return rows


def drive_sweep(drives: np.ndarray, a: float, c: float):
    """Fixed points across input drives (locates the fold where branches vanish)."""
    rows = []
    for d in np.asarray(drives, dtype=np.float64):
        report = find_fixed_points(ScalarCellConfig(a=a, c=c, drive=float(d)))
        for p in report.points:
            rows.append((float(d), p.h, p.stability, p.multiplier))
    return rows


@dataclass
class PitchforkReport:
    """Closed-form vs finite-difference values of the six pitchfork conditions.

    The first four (G, dG/dh, d2G/dh2, dG/da at h=0, a=1) must vanish; the
    genericity terms must satisfy d3G/dh3 = 2(1-c) > 0 and d2G/(dh da) =
    c - 1 < 0.
    """

    c: float
    closed: dict[str, float]
    numeric: dict[str, float]

    def max_zero_violation(self) -> float:
        keys = ("G", "dG_dh", "d2G_dh2", "dG_da")
        return max(max(abs(self.closed[k]), abs(self.numeric[k])) for k in keys)

    def max_genericity_gap(self) -> float:
        keys = ("d3G_dh3", "d2G_dhda")
        return max(abs(self.closed[k] - self.numeric[k]) for k in keys)


def _richardson(coarse: float, fine: float) -> float:
    # Central differences have O(eps^2) error: combining eps and eps/2 cancels it.
    return (4.0 * fine - coarse) / 3.0


def check_pitchfork_conditions(c: float, eps: float = 1e-3) -> PitchforkReport:
    """Evaluate the pitchfork conditions at (h=0, a=1) both ways.

    Closed forms follow from G(h) = (1-c)(h - tanh(a h)) at drive 0; the
    numeric column uses central finite differences with one round of
    Richardson refinement.
    """
    if not 0.0 < c < 1.0:
        raise ContractError(f"c must lie in (0, 1), got {c}")
    a_pf = 1.0

    def g(h: float, a: float) -> float:
        return h - (c * h + (1.0 - c) * np.tanh(a * h))

    closed = {
        "G": g(0.0, a_pf),
        "dG_dh": (1.0 - c) * (1.0 - a_pf),
        "d2G_dh2": 0.0,
        "dG_da": 0.0,
        "d3G_dh3": 2.0 * (1.0 - c),
        "d2G_dhda": c - 1.0,
    }

    def d1h(e: float) -> float:
        return (g(e, a_pf) - g(-e, a_pf)) / (2.0 * e)

    def d2h(e: float) -> float:
        return (g(e, a_pf) - 2.0 * g(0.0, a_pf) + g(-e, a_pf)) / (e * e)

    def d1a(e: float) -> float:
        return (g(0.0, a_pf + e) - g(0.0, a_pf - e)) / (2.0 * e)

    def d3h(e: float) -> float:
        return (-g(-2.0 * e, a_pf) + 2.0 * g(-e, a_pf)
                - 2.0 * g(e, a_pf) + g(2.0 * e, a_pf)) / (2.0 * e ** 3)

    def dhda(e: float) -> float:
        return (g(e, a_pf + e) - g(-e, a_pf + e)
                - g(e, a_pf - e) + g(-e, a_pf - e)) / (4.0 * e * e)

    numeric = {
        "G": g(0.0, a_pf),
        "dG_dh": _richardson(d1h(eps), d1h(eps / 2.0)),
        "d2G_dh2": _richardson(d2h(eps), d2h(eps / 2.0)),
        "dG_da": _richardson(d1a(eps), d1a(eps / 2.0)),
        "d3G_dh3": _richardson(d3h(eps), d3h(eps / 2.0)),
        "d2G_dhda": _richardson(dhda(eps), dhda(eps / 2.0)),
    }
    return PitchforkReport(c=c, closed=closed, numeric=numeric)


def simulate_scalar_cell(a_series, c_series, input_series, h0: float = 0.0) -> np.ndarray:
    """Iterate the scalar cell over per-step gain/gate/input series.

    Returns the trajectory [h0, h1, ..., hT] (length T+1).
    """
    a_series = np.asarray(a_series, dtype=np.float64)
    c_series = np.asarray(c_series, dtype=np.float64)
    input_series = np.asarray(input_series, dtype=np.float64)
    if not a_series.shape == c_series.shape == input_series.shape or a_series.ndim != 1:
        raise ContractError("simulate_scalar_cell needs three equal-length 1-d series")
    traj = np.empty(a_series.shape[0] + 1)
    traj[0] = h0
    h = h0
    for t in range(a_series.shape[0]):
        h = c_series[t] * h + (1.0 - c_series[t]) * np.tanh(input_series[t] + a_series[t] * h)
        traj[t + 1] = h
    return traj


@dataclass
class LayerTrace:
    """Per-timestep, per-layer gate statistics of a BRC/nBRC forward pass."""

    bistable_fraction: np.ndarray   # (T, layers): share of neurons with a > 1
    mean_c: np.ndarray              # (T, layers)


def trace_layers(net: Network, seq: np.ndarray) -> LayerTrace:
    """Run a sequence and record each layer's bistable share and mean gate.

    A neuron counts as bistable at a step when its feedback gain is strictly
    above 1. Only meaningful for cells that have such a gain, so other cell
    kinds are rejected.
    """
    if net.spec.cell_kind not in ("brc", "nbrc"):
        raise ContractError(f"trace_layers needs a brc or nbrc network, "
                            f"got {net.spec.cell_kind!r}")
    _, cache, _ = forward_sequence(net, np.asarray(seq, dtype=np.float64))
    n_layers = len(net.layers)
    frac = np.empty((cache.T, n_layers))
    mean_c = np.empty((cache.T, n_layers))
    for li, layer_cache in enumerate(cache.layer_caches):
        # gate stacks are (T, 1, hidden) for a single sequence
        frac[:, li] = (layer_cache["a"] > 1.0).mean(axis=(1, 2))
        mean_c[:, li] = layer_cache["c"].mean(axis=(1, 2))
    return LayerTrace(bistable_fraction=frac, mean_c=mean_c)


# ---------------------------------------------------------------------------
# CSV emitters

def write_bifurcation_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("a,h_star,stability,multiplier\n")
        for a, h, stability, m in rows:
            f.write(f"{float(a)!r},{float(h)!r},{stability},{float(m)!r}\n")


def write_trajectory_csv(traj: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,h\n")
        for t, h in enumerate(traj):
            f.write(f"{t},{float(h)!r}\n")


def write_layer_trace_csv(trace: LayerTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,layer,bistable_fraction,mean_c\n")
        T, L = trace.bistable_fraction.shape
        for t in range(T):
            for li in range(L):
                f.write(f"{t},{li},{float(trace.bistable_fraction[t, li])!r},"
                        f"{float(trace.mean_c[t, li])!r}\n")
