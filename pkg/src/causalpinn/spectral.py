"""Classical reference solvers used as ground truth: a fixed-step
Runge-Kutta integrator with a step-halving acceptance gate for the chaotic
ODE system, an exponential-time-differencing fourth-order spectral scheme
for the stiff periodic 1D equations, and a pseudo-spectral vorticity solver
for 2D incompressible flow.

All PDE solvers work on uniform periodic grids via the FFT; nonlinear terms
are evaluated pointwise in physical space with 2/3-rule dealiasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .diagnostics import GridSolution
from .problems import AC_NU, LORENZ_BETA, LORENZ_RHO, LORENZ_SIGMA


class ReferenceRejected(RuntimeError):
    """A convergence gate failed: the requested step size is too coarse or
    the solution blew up."""


@dataclass(frozen=True)
class SpectralConfig:
    modes: int
    dt: float
    t_final: float
    dealias: bool = True
    save_every: int = 1

    def __post_init__(self):
        if self.modes < 4 or (self.modes & (self.modes - 1)) != 0:
            raise ValueError("modes must be a power of two >= 4")
        if self.dt <= 0.0 or self.t_final <= 0.0:
            raise ValueError("dt and t_final must be positive")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")
        if self.n_steps % self.save_every:
            raise ValueError(f"save_every {self.save_every} does not divide "
                             f"{self.n_steps} steps")

    @property
    def n_steps(self) -> int:
        n = round(self.t_final / self.dt)
        if n < 1 or abs(n * self.dt - self.t_final) > 1e-9 * max(
                1.0, abs(self.t_final)):
            raise ValueError(f"t_final {self.t_final} is not an integer "
                             f"multiple of dt {self.dt}")
        return n

    def halved(self) -> "SpectralConfig":
        return SpectralConfig(self.modes, self.dt / 2.0, self.t_final,
                              self.dealias, self.save_every * 2)


# ---------------------------------------------------------------------------
# ODE reference

def _rk4_march(f, state: np.ndarray, dt: float, n_steps: int,
               save_every: int) -> np.ndarray:
    out = np.empty((n_steps // save_every + 1, state.shape[0]))
    out[0] = state
    s = state
    j = 1
    for i in range(1, n_steps + 1):
        k1 = f(s)
        k2 = f(s + 0.5 * dt * k1)
        k3 = f(s + 0.5 * dt * k2)
        k4 = f(s + dt * k3)
        s = s + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if i % save_every == 0:
            out[j] = s
            j += 1
    if not np.all(np.isfinite(out)):
        raise ReferenceRejected("trajectory diverged (non-finite state)")
    return out


def lorenz_reference(ic, t_final: float, dt: float = 1e-3,
                     sigma: float = LORENZ_SIGMA, rho: float = LORENZ_RHO,
                     beta: float = LORENZ_BETA, save_every: int = 1,
                     gate_horizon: float = 5.0,
                     gate_tol: float = 1e-8) -> GridSolution:
    """Fixed-step RK4 trajectory on a uniform grid.

    The run is accepted only if a half-step re-integration over the first
    gate_horizon time units agrees to gate_tol in relative L2.
    """
    if dt <= 0.0 or t_final <= 0.0:
        raise ValueError("dt and t_final must be positive")
    n_steps = round(t_final / dt)
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final {t_final} is not an integer multiple "
                         f"of dt {dt}")
    if n_steps % save_every:
        raise ValueError(f"save_every {save_every} does not divide "
                         f"{n_steps} steps")

    def f(s):
        x, y, z = s
        return np.array([sigma * (y - x), x * (rho - z) - y,
                         x * y - beta * z])

    state = np.asarray(ic, dtype=np.float64)
    if state.shape != (3,):
        raise ValueError("initial condition must have three components")
    traj = _rk4_march(f, state, dt, n_steps, save_every)

    span = min(gate_horizon, t_final)
    gate_steps = max(1, round(span / dt))
    coarse = _rk4_march(f, state, dt, gate_steps, 1)
    fine = _rk4_march(f, state, dt / 2.0, 2 * gate_steps, 2)
    rel = np.linalg.norm(coarse - fine) / np.linalg.norm(fine)
    if rel > gate_tol:
        raise ReferenceRejected(
            f"step {dt} too coarse: half-step disagreement {rel:.3e} "
            f"over [0, {span}] exceeds {gate_tol}")

    t = np.arange(traj.shape[0]) * (dt * save_every)
    return GridSolution(t, (), traj, ("x", "y", "z"))


# ---------------------------------------------------------------------------
# 1D periodic stiff PDEs, exponential time differencing (fourth order)

@dataclass(frozen=True)
class SpectralProblem1D:
    """Periodic u_t = L u + N(u) with a polynomial-in-u or advective
    nonlinearity, described by its linear symbol and physical-space
    nonlinear term."""
    kind: str                       # "allen_cahn" | "ks" | "heat"
    domain: tuple[float, float]
    coeffs: dict

    def linear_symbol(self, k: np.ndarray) -> np.ndarray:
        if self.kind in ("allen_cahn", "heat"):
            return -self.coeffs["nu"] * k ** 2
        # u_t = -alpha u u_x - beta u_xx - gamma u_xxxx
        return (self.coeffs["beta"] * k ** 2
                - self.coeffs["gamma"] * k ** 4)

    def has_nonlinearity(self) -> bool:
        return self.kind != "heat"


def ac_spectral_problem(nu: float = AC_NU) -> SpectralProblem1D:
    return SpectralProblem1D("allen_cahn", (-1.0, 1.0), {"nu": nu})


def ks_spectral_problem(alpha: float, beta: float, gamma: float,
                        domain: tuple[float, float]) -> SpectralProblem1D:
    return SpectralProblem1D("ks", domain, {"alpha": alpha, "beta": beta,
                                            "gamma": gamma})


def ks_case1_problem() -> SpectralProblem1D:
    return ks_spectral_problem(5.0, 0.5, 0.005, (-1.0, 1.0))


def ks_case2_problem() -> SpectralProblem1D:
    return ks_spectral_problem(100.0 / 16.0, 100.0 / 16.0 ** 2,
                               100.0 / 16.0 ** 4, (0.0, 2.0 * np.pi))


def heat_spectral_problem(nu: float,
                          domain: tuple[float, float] = (-1.0, 1.0)
                          ) -> SpectralProblem1D:
    return SpectralProblem1D("heat", domain, {"nu": nu})


def grid_1d(domain: tuple[float, float], n: int) -> np.ndarray:
    lo, hi = domain
    return lo + (hi - lo) * np.arange(n) / n


def wavenumbers_1d(domain: tuple[float, float], n: int) -> np.ndarray:
    """Angular wavenumbers for the real-FFT layout."""
    length = domain[1] - domain[0]
    return 2.0 * np.pi * sfft.rfftfreq(n, d=1.0 / n) / length


def spectral_diff(u: np.ndarray, domain: tuple[float, float],
                  order: int = 1) -> np.ndarray:
    """order-th derivative of a periodic sample by Fourier collocation."""
    n = u.shape[-1]
    k = wavenumbers_1d(domain, n)
    uh = sfft.rfft(u) * (1j * k) ** order
    if order % 2 == 1:
        # the unpaired mode at n/2 has no sine partner; its odd
        # derivatives are zero
        uh[..., -1] = 0.0
    return sfft.irfft(uh, n=n)


def resample_periodic_1d(u: np.ndarray, m: int) -> np.ndarray:
    """Change the sampling rate of a periodic signal by Fourier
    truncation/zero-padding; exact for signals band-limited below both
    grids."""
    n = u.shape[-1]
    if m == n:
        return np.asarray(u, dtype=np.float64).copy()
    uh = sfft.rfft(u)
    out = np.zeros(m // 2 + 1, dtype=np.complex128)
    keep = min(n, m) // 2
    out[:keep] = uh[:keep]
    return sfft.irfft(out, n=m) * (m / n)


def resample_periodic_2d(u: np.ndarray, m: int) -> np.ndarray:
    """2D counterpart of resample_periodic_1d on a square grid."""
    n = u.shape[0]
    if u.shape != (n, n):
        raise ValueError("expected a square grid")
    if m == n:
        return np.asarray(u, dtype=np.float64).copy()
    uh = np.fft.fftshift(np.fft.fft2(u))
    out = np.zeros((m, m), dtype=np.complex128)
    # copy the symmetric block |k| <= keep-1 so the result stays Hermitian
    keep = min(n, m) // 2
    cn, cm = n // 2, m // 2
    sl_n = slice(cn - keep + 1, cn + keep)
    sl_m = slice(cm - keep + 1, cm + keep)
    out[sl_m, sl_m] = uh[sl_n, sl_n]
    return np.fft.ifft2(np.fft.ifftshift(out)).real * (m * m) / (n * n)


def _phi_coefficients(lin: np.ndarray, dt: float, n_contour: int = 32):
    """ETD coefficients via contour-averaged phi-functions.

    Each entry of lin*dt is surrounded by a unit circle in the complex
    plane and the phi-functions are averaged over n_contour points, which
    avoids the catastrophic cancellation of the direct formulas near 0.
    """
    z = dt * lin
    E = np.exp(z)
    E2 = np.exp(z / 2.0)
    r = np.exp(2j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
    LR = z[:, None] + r[None, :]
    Q = dt * np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=1).real
    f1 = dt * np.mean(
        (-4.0 - LR + np.exp(LR) * (4.0 - 3.0 * LR + LR ** 2)) / LR ** 3,
        axis=1).real
    f2 = dt * np.mean(
        (2.0 + LR + np.exp(LR) * (-2.0 + LR)) / LR ** 3, axis=1).real
    f3 = dt * np.mean(
        (-4.0 - 3.0 * LR - LR ** 2 + np.exp(LR) * (4.0 - LR)) / LR ** 3,
        axis=1).real
    return E, E2, Q, f1, f2, f3


def _dealias_mask(n: int) -> np.ndarray:
    k_index = np.arange(n // 2 + 1)
    return k_index <= n // 3


def etdrk4_solve(problem: SpectralProblem1D, u0: np.ndarray,
                 cfg: SpectralConfig,
                 halving_tol: float | None = None) -> GridSolution:
    """March the periodic 1D problem with exponential time differencing.

    The stiff linear part is integrated exactly through its exponential;
    the nonlinearity enters through contour-averaged phi-coefficients at
    fourth order.  With halving_tol set, the final state is re-checked
    against a half-step run and rejected on disagreement.
    """
    n = cfg.modes
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (n,):
        raise ValueError(f"u0 must have {n} samples, got {u0.shape}")
    k = wavenumbers_1d(problem.domain, n)
    E, E2, Q, f1, f2, f3 = _phi_coefficients(problem.linear_symbol(k),
                                             cfg.dt)
    mask = _dealias_mask(n) if cfg.dealias else np.ones_like(k, dtype=bool)

    if problem.kind == "ks":
        alpha = problem.coeffs["alpha"]
        ik = 1j * k

        def nonlin(vh):
            u = sfft.irfft(np.where(mask, vh, 0.0), n=n)
            # u u_x = (u^2)_x / 2, one product instead of two transforms
            return np.where(mask, -0.5 * alpha * ik * sfft.rfft(u * u),
                            0.0)
    elif problem.kind == "allen_cahn":
        def nonlin(vh):
            u = sfft.irfft(np.where(mask, vh, 0.0), n=n)
            return np.where(mask, sfft.rfft(5.0 * u - 5.0 * u ** 3), 0.0)
    else:
        def nonlin(vh):
            return np.zeros_like(vh)

    n_steps = cfg.n_steps
    n_saves = n_steps // cfg.save_every
    frames = np.empty((n_saves + 1, n))
    frames[0] = u0
    vh = sfft.rfft(u0)
    j = 1
    for i in range(1, n_steps + 1):
        Nv = nonlin(vh)
        a = E2 * vh + Q * Nv
        Na = nonlin(a)
        b = E2 * vh + Q * Na
        Nb = nonlin(b)
        c = E2 * a + Q * (2.0 * Nb - Nv)
        Nc = nonlin(c)
        vh = E * vh + Nv * f1 + 2.0 * (Na + Nb) * f2 + Nc * f3
        if i % cfg.save_every == 0:
            frames[j] = sfft.irfft(vh, n=n)
            if not np.all(np.isfinite(frames[j])):
                raise ReferenceRejected(f"solution blew up by step {i}")
            j += 1

    if halving_tol is not None:
        fine = etdrk4_solve(problem, u0, cfg.halved())
        diff = np.linalg.norm(frames[-1] - fine.values[-1, :, 0])
        ref = np.linalg.norm(fine.values[-1, :, 0])
        if diff > halving_tol * max(ref, 1e-300):
            raise ReferenceRejected(
                f"dt {cfg.dt} too coarse: half-step disagreement "
                f"{diff / max(ref, 1e-300):.3e} exceeds {halving_tol}")

    t = np.arange(n_saves + 1) * (cfg.dt * cfg.save_every)
    x = grid_1d(problem.domain, n)
    return GridSolution(t, (x,), frames[:, :, None], ("u",))


def ks_chaotic_ic(cfg: SpectralConfig | None = None) -> np.ndarray:
    """State of the stiff-regime equation at t = 0.5, evolved from
    cos(x)(1 + sin(x)); serves as the training initial condition."""
    if cfg is None:
        cfg = SpectralConfig(512, 1e-4, 0.5, save_every=5000)
    if abs(cfg.t_final - 0.5) > 1e-12:
        raise ValueError("the warmup run ends at t = 0.5 by definition")
    problem = ks_case2_problem()
    x = grid_1d(problem.domain, cfg.modes)
    u0 = np.cos(x) * (1.0 + np.sin(x))
    sol = etdrk4_solve(problem, u0, cfg)
    return sol.values[-1, :, 0]


# ---------------------------------------------------------------------------
# 2D incompressible flow in vorticity form

def grid_2d(n: int, length: float = 2.0 * np.pi):
    g = length * np.arange(n) / n
    return np.meshgrid(g, g, indexing="ij")


def _wavenumbers_2d(n: int, length: float):
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n) / length
    return np.meshgrid(k, k, indexing="ij")


def velocity_from_vorticity(wh: np.ndarray, kx: np.ndarray,
                            ky: np.ndarray):
    """Spectral streamfunction solve: psi = inv(-lap) w, u = psi_y,
    v = -psi_x; divergence-free by construction."""
    k2 = kx ** 2 + ky ** 2
    inv = np.zeros_like(k2)
    nz = k2 > 0
    inv[nz] = 1.0 / k2[nz]
    psi_h = wh * inv
    return 1j * ky * psi_h, -1j * kx * psi_h


def ns2d_reference(w0: np.ndarray, re: float, cfg: SpectralConfig,
                   length: float = 2.0 * np.pi) -> GridSolution:
    """Pseudo-spectral vorticity marching with the diffusion handled by an
    integrating factor and RK4 on the advection term; saves (u, v, w)."""
    n = cfg.modes
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.shape != (n, n):
        raise ValueError(f"w0 must be {n}x{n}, got {w0.shape}")
    mean = abs(float(np.mean(w0)))
    if mean > 1e-10 * max(1.0, float(np.max(np.abs(w0)))):
        raise ValueError("initial vorticity must have zero mean")
    if re <= 0:
        raise ValueError("Reynolds number must be positive")

    kx, ky = _wavenumbers_2d(n, length)
    k2 = kx ** 2 + ky ** 2
    nu = 1.0 / re
    dt = cfg.dt
    E1 = np.exp(-nu * k2 * dt / 2.0)
    E2 = E1 * E1
    if cfg.dealias:
        kcut = (2.0 * np.pi / length) * (n // 3)
        mask = (np.abs(kx) <= kcut) & (np.abs(ky) <= kcut)
    else:
        mask = np.ones_like(k2, dtype=bool)

    def advection(wh):
        whm = np.where(mask, wh, 0.0)
        uh, vh = velocity_from_vorticity(whm, kx, ky)
        u = np.fft.ifft2(uh).real
        v = np.fft.ifft2(vh).real
        wx = np.fft.ifft2(1j * kx * whm).real
        wy = np.fft.ifft2(1j * ky * whm).real
        return np.where(mask, -np.fft.fft2(u * wx + v * wy), 0.0)

    n_steps = cfg.n_steps
    n_saves = n_steps // cfg.save_every
    frames = np.empty((n_saves + 1, n, n, 3))
    wh = np.fft.fft2(w0)

    def store(idx, wh):
        uh, vh = velocity_from_vorticity(wh, kx, ky)
        frames[idx, :, :, 0] = np.fft.ifft2(uh).real
        frames[idx, :, :, 1] = np.fft.ifft2(vh).real
        frames[idx, :, :, 2] = np.fft.ifft2(wh).real
        if not np.all(np.isfinite(frames[idx])):
            raise ReferenceRejected("flow blew up (non-finite field)")

    store(0, wh)
    j = 1
    for i in range(1, n_steps + 1):
        k1 = advection(wh)
        k2s = advection(E1 * (wh + 0.5 * dt * k1))
        k3 = advection(E1 * wh + 0.5 * dt * k2s)
        k4 = advection(E2 * wh + dt * E1 * k3)
        wh = E2 * wh + (dt / 6.0) * (E2 * k1 + 2.0 * E1 * (k2s + k3) + k4)
        if i % cfg.save_every == 0:
            store(j, wh)
            j += 1

    t = np.arange(n_saves + 1) * (dt * cfg.save_every)
    gx = length * np.arange(n) / n
    return GridSolution(t, (gx, gx), frames, ("u", "v", "w"))


def random_initial_vorticity(seed: int, max_velocity: float = 5.0,
                             modes: int = 256, band: float = 4.0,
                             length: float = 2.0 * np.pi) -> np.ndarray:
    """Band-limited random vorticity whose induced velocity peaks at
    exactly max_velocity.

    A white random field is filtered to wavenumber magnitudes in (0, band]
    and used as the streamfunction, so the velocity is divergence-free and
    the vorticity has zero mean; one global rescale sets the max speed.
    """
    if modes < 4 or (modes & (modes - 1)) != 0:
        raise ValueError("modes must be a power of two >= 4")
    rng = np.random.default_rng(seed)
    kx, ky = _wavenumbers_2d(modes, length)
    kmag = np.sqrt(kx ** 2 + ky ** 2)
    keep = (kmag > 0) & (kmag <= band + 1e-12)
    psi_h = np.fft.fft2(rng.standard_normal((modes, modes)))
    psi_h = np.where(keep, psi_h, 0.0)
    uh, vh = 1j * ky * psi_h, -1j * kx * psi_h
    u = np.fft.ifft2(uh).real
    v = np.fft.ifft2(vh).real
    speed = float(np.max(np.hypot(u, v)))
    if speed == 0.0:
        raise ValueError("degenerate random draw produced zero velocity")
    scale = max_velocity / speed
    w = np.fft.ifft2((kx ** 2 + ky ** 2) * psi_h).real * scale
    return w
