"""Benchmark definitions: residual assembly from jet outputs, initial
conditions, and the derived quantities each problem matches at the window
start.

Each residual builder consumes a network output node (jet-valued) and returns
a per-point node of the lambda-weighted sum of squared residual components.
Slice losses are means of this quantity over the spatial batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .jets import downward_closure, get_space
from .models import (ArchitectureSpec, build_input_jets, hard_ic_lorenz,
                     network_forward)
from .tape import Tape


@dataclass(frozen=True)
class ProblemDefinition:
    name: str
    spatial_dim: int
    input_degree: int
    n_out: int
    lambda_ic: float
    domain: tuple[tuple[float, float], ...]
    component_names: tuple[str, ...]
    residual: Callable[[Tape, int], int]
    ic_sqerr: Callable[[Tape, int, dict, int], int] | None
    initial_state: Callable[..., dict | None]
    predict: Callable[[Tape, int], np.ndarray]
    # raw signed equation residuals (one node per equation, pre-squaring),
    # used by per-point gradient diagnostics
    residual_parts: Callable[[Tape, int], list[int]] | None = None
    hard_ic: bool = False
    constants: dict = field(default_factory=dict)
    # downward closure of the derivative multi-indices the residual reads;
    # None means the full truncation space
    slots: tuple | None = None

    @property
    def num_vars(self) -> int:
        return 1 + self.spatial_dim

    def space(self):
        return get_space(self.num_vars, self.input_degree, keep=self.slots)


def _sq(tape, a):
    return tape.mul(a, a)


# ---------------------------------------------------------------------------
# Lorenz system (ODE, hard initial condition)

LORENZ_SIGMA = 3.0
LORENZ_RHO = 28.0
LORENZ_BETA = 8.0 / 3.0


def _lorenz_parts(tape: Tape, out: int) -> list[int]:
    val = tape.extract(out, (0,))
    dot = tape.extract(out, (1,))
    x, y, z = (tape.take(val, c) for c in range(3))
    xt, yt, zt = (tape.take(dot, c) for c in range(3))
    r1 = tape.sub(xt, tape.scale(tape.sub(y, x), LORENZ_SIGMA))
    rho_minus_z = tape.add_const(tape.neg(z), LORENZ_RHO)
    r2 = tape.add(tape.sub(yt, tape.mul(x, rho_minus_z)), y)
    r3 = tape.add(tape.sub(zt, tape.mul(x, y)),
                  tape.scale(z, LORENZ_BETA))
    return [r1, r2, r3]


def _lorenz_residual(tape: Tape, out: int) -> int:
    r1, r2, r3 = _lorenz_parts(tape, out)
    return tape.add(tape.add(_sq(tape, r1), _sq(tape, r2)), _sq(tape, r3))


def _lorenz_initial_state() -> dict:
    return {"state": np.array([1.0, 1.0, 1.0])}


def _lorenz_predict(tape: Tape, out: int) -> np.ndarray:
    return tape.nodes[tape.extract(out, (0,))].primal.copy()


def lorenz() -> ProblemDefinition:
    return ProblemDefinition(
        name="lorenz", spatial_dim=0, input_degree=1, n_out=3,
        lambda_ic=1.0, domain=(), component_names=("x", "y", "z"),
        residual=_lorenz_residual, ic_sqerr=None,
        initial_state=_lorenz_initial_state, predict=_lorenz_predict,
        residual_parts=_lorenz_parts, hard_ic=True,
        constants={"sigma": LORENZ_SIGMA, "rho": LORENZ_RHO,
                   "beta": LORENZ_BETA})


# ---------------------------------------------------------------------------
# Allen-Cahn equation on [-1, 1], periodic

AC_NU = 1e-4


def _ac_parts(tape: Tape, out: int) -> list[int]:
    u = tape.take(tape.extract(out, (0, 0)), 0)
    ut = tape.take(tape.extract(out, (1, 0)), 0)
    uxx = tape.take(tape.extract(out, (0, 2)), 0)
    cubic = tape.mul(tape.mul(u, u), u)
    return [tape.sub(tape.add(tape.sub(ut, tape.scale(uxx, AC_NU)),
                              tape.scale(cubic, 5.0)),
                     tape.scale(u, 5.0))]


def _ac_residual(tape: Tape, out: int) -> int:
    (r,) = _ac_parts(tape, out)
    return _sq(tape, r)


def _scalar_ic_sqerr(tape: Tape, out: int, ic_data: dict, n_ic: int) -> int:
    u = tape.take(tape.extract(out, (0,) + (0,) * (tape.space.num_vars - 1)),
                  0)
    d = tape.add_const(tape.slice_rows(u, 0, n_ic),
                       -np.asarray(ic_data["u"]))
    return _sq(tape, d)


def _ac_initial_state(x: np.ndarray) -> dict:
    return {"u": x ** 2 * np.cos(np.pi * x)}


def _scalar_predict(tape: Tape, out: int) -> np.ndarray:
    alpha = (0,) + (0,) * (tape.space.num_vars - 1)
    return tape.nodes[tape.extract(out, alpha)].primal.copy()


def allen_cahn() -> ProblemDefinition:
    return ProblemDefinition(
        name="allen_cahn", spatial_dim=1, input_degree=2, n_out=1,
        lambda_ic=100.0, domain=((-1.0, 1.0),), component_names=("u",),
        residual=_ac_residual, ic_sqerr=_scalar_ic_sqerr,
        initial_state=_ac_initial_state, predict=_scalar_predict,
        residual_parts=_ac_parts,
        constants={"nu": AC_NU},
        slots=downward_closure([(1, 0), (0, 2)]))


# ---------------------------------------------------------------------------
# Kuramoto-Sivashinsky equation, two parameter regimes

def _ks_parts_factory(alpha: float, beta: float, gamma: float):
    def parts(tape: Tape, out: int) -> list[int]:
        u = tape.take(tape.extract(out, (0, 0)), 0)
        ut = tape.take(tape.extract(out, (1, 0)), 0)
        ux = tape.take(tape.extract(out, (0, 1)), 0)
        uxx = tape.take(tape.extract(out, (0, 2)), 0)
        uxxxx = tape.take(tape.extract(out, (0, 4)), 0)
        return [tape.add(tape.add(ut, tape.scale(tape.mul(u, ux), alpha)),
                         tape.add(tape.scale(uxx, beta),
                                  tape.scale(uxxxx, gamma)))]
    return parts


def _ks_residual_factory(alpha: float, beta: float, gamma: float):
    parts = _ks_parts_factory(alpha, beta, gamma)

    def residual(tape: Tape, out: int) -> int:
        (r,) = parts(tape, out)
        return _sq(tape, r)
    return residual


def _ks_regular_initial_state(x: np.ndarray) -> dict:
    return {"u": -np.sin(np.pi * x)}


def ks(case: str = "regular") -> ProblemDefinition:
    if case == "regular":
        a, b, g = 5.0, 0.5, 0.005
        dom = (-1.0, 1.0)
        lam = 1e3
        init = _ks_regular_initial_state
    elif case == "chaotic":
        a, b, g = 100.0 / 16.0, 100.0 / 16.0 ** 2, 100.0 / 16.0 ** 4
        dom = (0.0, 2.0 * np.pi)
        lam = 1e4
        init = lambda x: None  # IC comes from the reference solver at t=0.5
    else:
        raise ValueError(f"unknown regime {case!r}")
    return ProblemDefinition(
        name=f"ks_{case}", spatial_dim=1, input_degree=4, n_out=1,
        lambda_ic=lam, domain=(dom,), component_names=("u",),
        residual=_ks_residual_factory(a, b, g), ic_sqerr=_scalar_ic_sqerr,
        initial_state=init, predict=_scalar_predict,
        residual_parts=_ks_parts_factory(a, b, g),
        constants={"alpha": a, "beta": b, "gamma": g},
        slots=downward_closure([(1, 0), (0, 4)]))


# ---------------------------------------------------------------------------
# 2D Navier-Stokes, velocity-vorticity form on [0, 2pi]^2

NS_RE = 100.0
NS_LAMBDA_W = 1.0
NS_LAMBDA_C = 100.0


def _ns_vorticity_nodes(tape: Tape, out: int):
    """w and its first derivatives from the velocity jet: w = v_x - u_y."""
    def u_of(alpha):
        return tape.take(tape.extract(out, alpha), 0)

    def v_of(alpha):
        return tape.take(tape.extract(out, alpha), 1)

    w = tape.sub(v_of((0, 1, 0)), u_of((0, 0, 1)))
    wt = tape.sub(v_of((1, 1, 0)), u_of((1, 0, 1)))
    wx = tape.sub(v_of((0, 2, 0)), u_of((0, 1, 1)))
    wy = tape.sub(v_of((0, 1, 1)), u_of((0, 0, 2)))
    lap = tape.add(tape.sub(v_of((0, 3, 0)), u_of((0, 2, 1))),
                   tape.sub(v_of((0, 1, 2)), u_of((0, 0, 3))))
    return w, wt, wx, wy, lap, u_of, v_of


def _ns_parts(tape: Tape, out: int) -> list[int]:
    """Unweighted transport and continuity residuals."""
    w, wt, wx, wy, lap, u_of, v_of = _ns_vorticity_nodes(tape, out)
    uval = u_of((0, 0, 0))
    vval = v_of((0, 0, 0))
    rw = tape.sub(tape.add(wt, tape.add(tape.mul(uval, wx),
                                        tape.mul(vval, wy))),
                  tape.scale(lap, 1.0 / NS_RE))
    rc = tape.add(u_of((0, 1, 0)), v_of((0, 0, 1)))
    return [rw, rc]


def _ns_residual(tape: Tape, out: int) -> int:
    rw, rc = _ns_parts(tape, out)
    return tape.add(tape.scale(_sq(tape, rw), NS_LAMBDA_W),
                    tape.scale(_sq(tape, rc), NS_LAMBDA_C))


def _ns_ic_sqerr(tape: Tape, out: int, ic_data: dict, n_ic: int) -> int:
    w, _, _, _, _, u_of, v_of = _ns_vorticity_nodes(tape, out)
    du = tape.add_const(tape.slice_rows(u_of((0, 0, 0)), 0, n_ic),
                        -np.asarray(ic_data["u"]))
    dv = tape.add_const(tape.slice_rows(v_of((0, 0, 0)), 0, n_ic),
                        -np.asarray(ic_data["v"]))
    dw = tape.add_const(tape.slice_rows(w, 0, n_ic),
                        -np.asarray(ic_data["w"]))
    return tape.add(tape.add(_sq(tape, du), _sq(tape, dv)), _sq(tape, dw))


def _ns_predict(tape: Tape, out: int) -> np.ndarray:
    uv = tape.nodes[tape.extract(out, (0, 0, 0))].primal
    vx = tape.nodes[tape.extract(out, (0, 1, 0))].primal[:, 1]
    uy = tape.nodes[tape.extract(out, (0, 0, 1))].primal[:, 0]
    return np.column_stack([uv[:, 0], uv[:, 1], vx - uy])


def navier_stokes_2d() -> ProblemDefinition:
    return ProblemDefinition(
        name="ns2d", spatial_dim=2, input_degree=3, n_out=2,
        lambda_ic=1e4,
        domain=((0.0, 2.0 * np.pi), (0.0, 2.0 * np.pi)),
        component_names=("u", "v", "w"),
        residual=_ns_residual, ic_sqerr=_ns_ic_sqerr,
        initial_state=lambda x, y: None,  # band-limited random field, external
        predict=_ns_predict, residual_parts=_ns_parts,
        constants={"re": NS_RE, "lambda_w": NS_LAMBDA_W,
                   "lambda_c": NS_LAMBDA_C},
        slots=downward_closure([(1, 1, 0), (1, 0, 1), (0, 3, 0), (0, 2, 1),
                                (0, 1, 2), (0, 0, 3)]))


# ---------------------------------------------------------------------------

PROBLEMS: dict[str, Callable[..., ProblemDefinition]] = {
    "lorenz": lorenz,
    "allen_cahn": allen_cahn,
    "ks_regular": lambda: ks("regular"),
    "ks_chaotic": lambda: ks("chaotic"),
    "ns2d": navier_stokes_2d,
}


def get_problem(name: str) -> ProblemDefinition:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from "
                         f"{sorted(PROBLEMS)}") from None


def wrap_output(tape: Tape, problem: ProblemDefinition, out: int,
                t_phys: np.ndarray, t0: float, ic_data: dict) -> int:
    """Apply the output constraint (exact IC for the ODE system)."""
    if not problem.hard_ic:
        return out
    return hard_ic_lorenz(tape, out, t_phys, t0,
                          np.asarray(ic_data["state"]))


def evaluate_network(problem: ProblemDefinition, params, arch: ArchitectureSpec,
                     window: tuple[float, float], t: np.ndarray,
                     x: np.ndarray | None = None,
                     y: np.ndarray | None = None,
                     ic_data: dict | None = None, degree: int = 1,
                     chunk: int = 16384) -> np.ndarray:
    """Predicted components (batch, n_components) at physical points.

    Degree-1 jets suffice for every derived component (vorticity needs one
    derivative); residual evaluation goes through the training path instead.
    """
    space = get_space(problem.num_vars, degree)
    n = t.shape[0]
    outs = []
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        tape = Tape(params, space)
        X = build_input_jets(arch, space, t[lo:hi], window,
                             x=None if x is None else x[lo:hi],
                             y=None if y is None else y[lo:hi])
        net = network_forward(tape, arch, tape.const(X, jet=True))
        net = wrap_output(tape, problem, net, t[lo:hi], window[0],
                          ic_data or {})
        outs.append(problem.predict(tape, net))
    return np.concatenate(outs, axis=0)


def next_window_state(problem: ProblemDefinition, params,
                      arch: ArchitectureSpec, window: tuple[float, float],
                      x: np.ndarray | None, y: np.ndarray | None,
                      ic_data: dict) -> dict:
    """IC payload for the following window: this window's prediction at its
    right endpoint."""
    if problem.spatial_dim == 0:
        t = np.array([window[1]])
        state = evaluate_network(problem, params, arch, window, t,
                                 ic_data=ic_data)
        return {"state": state[0]}
    n = x.shape[0]
    t = np.full(n, window[1])
    comps = evaluate_network(problem, params, arch, window, t, x=x, y=y,
                             ic_data=ic_data)
    return {name: comps[:, i]
            for i, name in enumerate(problem.component_names)}
