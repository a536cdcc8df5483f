"""Time stepping for the coupled model: eps-system, limit, and corrector.

The temperature update is always semi-implicit Euler-Maruyama (the
dissipative a2 part is solved implicitly), which is unconditionally stable
and preserves the energy structure behind the exponential moment bounds.
The stiff velocity relaxation is integrated exactly through matrix
exponentials of a1, so the step size never needs to resolve eps.

All steppers broadcast over leading replica axes; the experiment drivers
rely on this to advance thousands of coupled replicas per vector operation.
Reductions over replicas always happen on fully assembled arrays so results
do not depend on how the replicas were chunked.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import NoisePath, RngStream
from .toy import ToyInstance, ToyState, limit_velocity, corrector_velocity

__all__ = [
    "IntegratorSpec", "CoupledTrajectories",
    "step_limit", "step_eps_stiff", "step_corrector",
    "simulate_coupled", "sample_stationary",
]

SCHEMES = ("euler_maruyama", "stiff_exponential")


@dataclass(frozen=True)
class IntegratorSpec:
    """Scheme selection and time horizon.

    ``scheme`` controls the velocity update of eps-systems only:
    ``stiff_exponential`` (default elsewhere) integrates the relaxation
    exactly, ``euler_maruyama`` treats it explicitly and requires dt << eps.
    """

    scheme: str
    dt: float
    t_end: float

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


class _StepOps:
    """Per-(instance, dt[, eps]) dense operator cache."""

    def __init__(self, inst: ToyInstance, dt: float, eps: float | None = None):
        self.inst = inst
        self.dt = float(dt)
        self.eps = None if eps is None else float(eps)
        m2 = inst.m2
        theta_lhs = np.eye(m2) + dt * inst.a2.entries
        self.minv = np.linalg.inv(theta_lhs)
        self.k_lim = inst.limit_gain()
        self.ra_e = inst.ra * inst.e
        if eps is not None:
            w1, v1 = inst.a1.eigh()
            self.lam = w1 / eps           # relaxation rates of the velocity
            self.v1 = v1
            decay = np.exp(-self.lam * dt)
            self.expm = (v1 * decay) @ v1.T
            self.gain = (v1 * ((1.0 - decay) / w1)) @ v1.T   # (I - E) a1^{-1}

    # -- velocity transient of the corrector ---------------------------------
    def transient_point(self, t: float, w0: np.ndarray) -> np.ndarray:
        return (w0 @ self.v1) * np.exp(-self.lam * t) @ self.v1.T

    def transient_step_mean(self, t: float, w0: np.ndarray) -> np.ndarray:
        """Average of exp(-a1 s/eps) w0 over s in [t, t+dt].

        Using the step average rather than the left endpoint keeps the
        integrated transient forcing exact for any dt/eps ratio.
        """
        x = self.lam * self.dt
        ratio = np.where(x > 1e-12, -np.expm1(-x) / np.where(x > 0, x, 1.0),
                         1.0 - x / 2.0)
        coeff = np.exp(-self.lam * t) * ratio
        return ((w0 @ self.v1) * coeff) @ self.v1.T

    # -- array-level steps ----------------------------------------------------
    def theta_step(self, u: np.ndarray, th: np.ndarray, noise: np.ndarray) -> np.ndarray:
        rhs = th - self.dt * self.inst.b2_apply(u, th) + noise
        return rhs @ self.minv.T

    def limit_u(self, th: np.ndarray) -> np.ndarray:
        return th @ self.k_lim.T

    def eps_u_step(self, u: np.ndarray, th: np.ndarray) -> np.ndarray:
        g = th @ self.ra_e.T - self.eps * self.inst.b1_apply(u, u)
        return u @ self.expm + g @ self.gain

    def eps_u_step_explicit(self, u: np.ndarray, th: np.ndarray) -> np.ndarray:
        du = (th @ self.ra_e.T - u @ self.inst.a1.entries) / self.eps \
            - self.inst.b1_apply(u, u)
        return u + self.dt * du


def _ops(inst: ToyInstance, dt: float, eps: float | None = None) -> _StepOps:
    key = ("step_ops", dt, eps)
    if key not in inst._caches:
        inst._caches[key] = _StepOps(inst, dt, eps)
    return inst._caches[key]


def _noise_term(inst: ToyInstance, dW: np.ndarray) -> np.ndarray:
    return np.asarray(dW, dtype=float) @ inst.sigma.T


def step_limit(inst: ToyInstance, s: ToyState, dW: np.ndarray, dt: float) -> ToyState:
    """One semi-implicit step of the limit system.

    The advecting velocity is slaved to the current temperature; the output
    velocity is slaved to the updated one.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ops = _ops(inst, dt)
    u = ops.limit_u(s.theta)
    th_new = ops.theta_step(u, s.theta, _noise_term(inst, dW))
    return ToyState(u=ops.limit_u(th_new), theta=th_new, t=s.t + dt)


def step_eps_stiff(inst: ToyInstance, s: ToyState, eps: float, dW: np.ndarray,
                   dt: float) -> ToyState:
    """One step of the eps-system with the exponential velocity update.

    u+ = exp(-a1 dt/eps) u + (I - exp(-a1 dt/eps)) a1^{-1}(ra e theta
    - eps b1(u,u)); the temperature then advances with u+.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    ops = _ops(inst, dt, eps)
    u_new = ops.eps_u_step(s.u, s.theta)
    th_new = ops.theta_step(u_new, s.theta, _noise_term(inst, dW))
    return ToyState(u=u_new, theta=th_new, t=s.t + dt)


def step_corrector(inst: ToyInstance, s: ToyState, eps: float, t: float,
                   dW: np.ndarray, dt: float, u0: np.ndarray,
                   theta0: np.ndarray) -> ToyState:
    """One step of the corrector system.

    The temperature drift uses the corrector velocity with its transient
    averaged over the step; the returned velocity is the corrector velocity
    at t + dt.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    ops = _ops(inst, dt, eps)
    w0 = np.asarray(u0, dtype=float) - limit_velocity(inst, theta0)
    u_drift = ops.limit_u(s.theta) + ops.transient_step_mean(t, w0)
    th_new = ops.theta_step(u_drift, s.theta, _noise_term(inst, dW))
    u_out = ops.limit_u(th_new) + ops.transient_point(t + dt, w0)
    return ToyState(u=u_out, theta=th_new, t=t + dt)


@dataclass
class CoupledTrajectories:
    """Trajectories of several systems driven by one shared noise path.

    ``eps_values`` may contain 0, meaning the limit system.  ``theta`` and
    ``u`` map eps -> array of shape (n_saves, dim); ``corrector_theta`` and
    ``corrector_u`` are populated for eps > 0 when requested.
    """

    eps_values: tuple
    times: np.ndarray
    theta: dict
    u: dict
    corrector_theta: dict = field(default_factory=dict)
    corrector_u: dict = field(default_factory=dict)
    path: NoisePath | None = None


def simulate_coupled(inst: ToyInstance, eps_values, init: ToyState,
                     spec: IntegratorSpec, path: NoisePath,
                     include_corrector: bool = False) -> CoupledTrajectories:
    """Advance every requested system with the identical noise increments."""
    eps_values = tuple(float(e) for e in eps_values)
    if len(set(eps_values)) != len(eps_values):
        raise ValueError("eps_values must be distinct")
    if any(e < 0 for e in eps_values):
        raise ValueError("eps_values must be >= 0 (0 selects the limit system)")
    if abs(path.dt - spec.dt) > 1e-12 * max(path.dt, spec.dt):
        raise ValueError("path.dt must equal spec.dt; use refine_path to match")
    n = spec.n_steps
    if path.n_steps < n:
        raise ValueError("noise path too short for the requested horizon")
    if path.dim != inst.n_forced:
        raise ValueError("path dimension must equal the number of forcing directions")

    times = spec.dt * np.arange(n + 1)
    theta_series: dict = {}
    u_series: dict = {}
    cor_theta: dict = {}
    cor_u: dict = {}

    for eps in eps_values:
        th = np.array(init.theta, dtype=float)
        if eps == 0.0:
            u = limit_velocity(inst, th)
        else:
            u = np.array(init.u, dtype=float)
        th_hist = np.empty((n + 1,) + th.shape)
        u_hist = np.empty((n + 1,) + u.shape)
        th_hist[0], u_hist[0] = th, u
        state = ToyState(u=u, theta=th, t=0.0)
        for k in range(n):
            dW = path.increments[k]
            if eps == 0.0:
                state = step_limit(inst, state, dW, spec.dt)
            elif spec.scheme == "stiff_exponential":
                state = step_eps_stiff(inst, state, eps, dW, spec.dt)
            else:
                ops = _ops(inst, spec.dt, eps)
                u_new = ops.eps_u_step_explicit(state.u, state.theta)
                th_new = ops.theta_step(u_new, state.theta, _noise_term(inst, dW))
                state = ToyState(u=u_new, theta=th_new, t=state.t + spec.dt)
            th_hist[k + 1], u_hist[k + 1] = state.theta, state.u
        theta_series[eps] = th_hist
        u_series[eps] = u_hist

        if include_corrector and eps > 0.0:
            cth = np.empty_like(th_hist)
            cu = np.empty_like(u_hist)
            cth[0] = init.theta
            cu[0] = init.u
            cstate = ToyState(u=np.array(init.u, dtype=float),
                              theta=np.array(init.theta, dtype=float), t=0.0)
            for k in range(n):
                cstate = step_corrector(inst, cstate, eps, times[k],
                                        path.increments[k], spec.dt,
                                        init.u, init.theta)
                cth[k + 1], cu[k + 1] = cstate.theta, cstate.u
            cor_theta[eps] = cth
            cor_u[eps] = cu

    return CoupledTrajectories(eps_values=eps_values, times=times,
                               theta=theta_series, u=u_series,
                               corrector_theta=cor_theta, corrector_u=cor_u,
                               path=path)


def sample_stationary(inst: ToyInstance, eps: float, spec: IntegratorSpec,
                      burn_in: float, n_samples: int, thin: float,
                      stream: RngStream):
    """Harvest approximately stationary samples along a single trajectory.

    After ``burn_in`` time units the state is recorded every ``thin`` units.
    For eps = 0 only the temperature is stored; otherwise the flattened
    (u, theta) pair.  Weights are uniform.
    """
    from .transport import EmpiricalMeasure

    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    if thin < spec.dt:
        raise ValueError("thin must be at least spec.dt")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    dt = spec.dt
    steps_burn = int(round(burn_in / dt))
    steps_thin = int(round(thin / dt))
    g = stream.generator()
    sqdt = np.sqrt(dt)

    th = np.zeros(inst.m2)
    u = np.zeros(inst.m1)
    state = ToyState(u=u, theta=th, t=0.0)
    samples = []

    def advance(n_adv, st):
        for _ in range(n_adv):
            dW = g.standard_normal(inst.n_forced) * sqdt
            if eps == 0.0:
                st = step_limit(inst, st, dW, dt)
            elif spec.scheme == "stiff_exponential":
                st = step_eps_stiff(inst, st, eps, dW, dt)
            else:
                ops = _ops(inst, dt, eps)
                u_new = ops.eps_u_step_explicit(st.u, st.theta)
                th_new = ops.theta_step(u_new, st.theta, _noise_term(inst, dW))
                st = ToyState(u=u_new, theta=th_new, t=st.t + dt)
        return st

    state = advance(steps_burn, state)
    for _ in range(n_samples):
        state = advance(steps_thin, state)
        if eps == 0.0:
            samples.append(state.theta.copy())
        else:
            samples.append(np.concatenate([state.u, state.theta]))

    samples = np.array(samples)
    weights = np.full(n_samples, 1.0 / n_samples)
    meta = dict(kind="toy_stationary", eps=float(eps), dt=dt,
                burn_in=float(burn_in), thin=float(thin),
                root_seed=stream.root_seed, stream_id=stream.stream_id,
                recipe=inst.recipe)
    return EmpiricalMeasure(samples=samples, weights=weights, meta=meta)


# ---------------------------------------------------------------------------
# Batched drivers used by the experiment studies.


class ReplicaNoise:
    """Per-replica generators producing increments in time blocks.

    Each replica owns its own stream, so results are independent of how
    replicas are chunked across workers.
    """

    def __init__(self, streams):
        self._gens = [s.generator() for s in streams]

    def __len__(self):
        return len(self._gens)

    def block(self, n_steps: int, dim: int, dt: float) -> np.ndarray:
        out = np.empty((len(self._gens), n_steps, dim))
        for i, g in enumerate(self._gens):
            out[i] = g.standard_normal((n_steps, dim))
        out *= np.sqrt(dt)
        return out


def advance_batch(inst: ToyInstance, eps: float, u: np.ndarray, th: np.ndarray,
                  noise: np.ndarray, dt: float):
    """Advance a replica batch through noise of shape (R, n_steps, N)."""
    ops = _ops(inst, dt, eps if eps > 0 else None)
    for k in range(noise.shape[1]):
        w = noise[:, k, :] @ inst.sigma.T
        if eps == 0.0:
            u_adv = ops.limit_u(th)
            th = ops.theta_step(u_adv, th, w)
            u = ops.limit_u(th)
        else:
            u = ops.eps_u_step(u, th)
            th = ops.theta_step(u, th, w)
    return u, th


def stationary_batch(inst: ToyInstance, eps: float, dt: float, burn_in: float,
                     noise: ReplicaNoise, block_steps: int = 512,
                     fine_stage: bool = True):
    """Burn in a replica batch toward stationarity.

    For eps > 0 smaller than dt, a short trailing stage at dt = eps/2
    re-equilibrates the velocity's deviation from the slaved state, which
    otherwise carries an O(dt) bias instead of its O(eps) stationary size.
    """
    r = len(noise)
    u = np.zeros((r, inst.m1))
    th = np.zeros((r, inst.m2))
    steps = int(round(burn_in / dt))
    done = 0
    while done < steps:
        m = min(block_steps, steps - done)
        u, th = advance_batch(inst, eps, u, th,
                              noise.block(m, inst.n_forced, dt), dt)
        done += m
    if fine_stage and 0.0 < eps < dt:
        dt_f = eps / 2.0
        u, th = advance_batch(inst, eps, u, th,
                              noise.block(64, inst.n_forced, dt_f), dt_f)
    return u, th
