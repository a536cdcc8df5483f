"""Finite-dimensional coupled velocity/temperature model.

The model couples a stiff velocity equation, relaxing at rate 1/eps toward a
buoyancy-slaved state, to a dissipative stochastic temperature equation.  The
linear operators a1, a2 are coercive (smallest eigenvalue >= 1) and the
bilinear terms are skew actions, so the energy cancellations
<b1(v,u), u> = 0 and <b2(v,theta), theta> = 0 hold identically.

All evaluation functions broadcast over leading batch axes: states may be
single vectors (m,) or replica batches (R, m).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import RngStream, SymMatrix

__all__ = [
    "ToyInstance", "ToyState", "make_instance",
    "drift_eps", "limit_velocity", "corrector_velocity",
]


@dataclass
class ToyInstance:
    """One realization of the coupled model's operators.

    b1 and b2 are stored as stacks of skew matrices: b1[v-index] is the skew
    (m1, m1) action and b2[v-index] the skew (m2, m2) action, both linear in
    the velocity argument.
    """

    a1: SymMatrix
    a2: SymMatrix
    e: np.ndarray          # (m1, m2)
    b1: np.ndarray         # (m1, m1, m1), b1[k] skew
    b2: np.ndarray         # (m1, m2, m2), b2[k] skew
    sigma: np.ndarray      # (m2, n_forced), columns are forcing directions
    ra: float
    recipe: dict = field(default_factory=dict)

    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m1(self) -> int:
        return self.a1.n

    @property
    def m2(self) -> int:
        return self.a2.n

    @property
    def n_forced(self) -> int:
        return self.sigma.shape[1]

    @property
    def sigma_sq(self) -> float:
        """Squared Hilbert-Schmidt norm sum_k |sigma_k|^2."""
        return float(np.sum(self.sigma ** 2))

    @property
    def e_norm(self) -> float:
        return float(np.linalg.norm(self.e, 2))

    def b1_apply(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.einsum("...k,kij,...j->...i", v, self.b1, u)

    def b2_apply(self, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.einsum("...k,kij,...j->...i", v, self.b2, theta)

    def limit_gain(self) -> np.ndarray:
        """Matrix K with u0 = K theta, i.e. K = ra * a1^{-1} e."""
        key = "limit_gain"
        if key not in self._caches:
            self._caches[key] = self.ra * self.a1.solve(self.e.T).T
        return self._caches[key]

    def to_recipe(self) -> dict:
        if not self.recipe:
            raise ValueError("instance was not built from a recipe")
        return dict(self.recipe)


@dataclass
class ToyState:
    """Model state; u and theta may carry leading replica axes."""

    u: np.ndarray
    theta: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.theta))):
            raise ValueError("state entries must be finite")
        if self.t < 0:
            raise ValueError("t must be nonnegative")


def _skew_stack(g: np.random.Generator, n_slots: int, n: int) -> np.ndarray:
    raw = g.standard_normal((n_slots, n, n))
    return (raw - raw.transpose(0, 2, 1)) / (2.0 * np.sqrt(n_slots))


def make_instance(m1: int, m2: int, n_forced: int, ra: float,
                  noise_scale: float, stream: RngStream) -> ToyInstance:
    """Draw a random instance satisfying coercivity and cancellation.

    a_i = I + R_i R_i^T gives smallest eigenvalue >= 1 exactly; the bilinear
    terms are skew actions so cancellation holds by construction; sigma is
    rescaled so that sum_k |sigma_k|^2 = noise_scale^2.

    The draw order (R1, R2, e, b1, b2, sigma) is fixed; together with the
    stream key it makes instances exactly reconstructible from the recipe.
    """
    if min(m1, m2, n_forced) < 1:
        raise ValueError("m1, m2, n_forced must be >= 1")
    if n_forced > m2:
        raise ValueError("n_forced must not exceed m2 "
                         "(forcing directions are independent columns)")
    if ra <= 0:
        raise ValueError("ra must be positive")
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")

    g = stream.generator()
    r1 = g.standard_normal((m1, m1)) / np.sqrt(m1)
    a1 = SymMatrix.from_raw(np.eye(m1) + r1 @ r1.T, elliptic=True)
    r2 = g.standard_normal((m2, m2)) / np.sqrt(m2)
    a2 = SymMatrix.from_raw(np.eye(m2) + r2 @ r2.T, elliptic=True)
    e = g.standard_normal((m1, m2)) / np.sqrt(m2)
    b1 = _skew_stack(g, m1, m1)
    b2 = _skew_stack(g, m1, m2)
    sigma = g.standard_normal((m2, n_forced))
    if noise_scale == 0.0:
        sigma = np.zeros((m2, n_forced))
    else:
        sigma *= noise_scale / np.linalg.norm(sigma)

    recipe = dict(m1=m1, m2=m2, n_forced=n_forced, ra=float(ra),
                  noise_scale=float(noise_scale),
                  root_seed=stream.root_seed, stream_id=stream.stream_id)
    return ToyInstance(a1=a1, a2=a2, e=e, b1=b1, b2=b2, sigma=sigma,
                       ra=float(ra), recipe=recipe)


def instance_from_recipe(recipe: dict) -> ToyInstance:
    return make_instance(recipe["m1"], recipe["m2"], recipe["n_forced"],
                         recipe["ra"], recipe["noise_scale"],
                         RngStream(recipe["root_seed"], recipe["stream_id"]))


def drift_eps(inst: ToyInstance, s: ToyState, eps: float):
    """Drift of the eps-system.

    du = (ra e theta - a1 u)/eps - b1(u, u); the deterministic part of the
    temperature drift is -b2(u, theta) - a2 theta (noise is added by the
    integrator).
    """
    if eps <= 0:
        raise ValueError("eps must be positive; use limit_velocity for the limit")
    u, th = s.u, s.theta
    du = (th @ (inst.ra * inst.e).T - u @ inst.a1.entries) / eps \
        - inst.b1_apply(u, u)
    dth = -inst.b2_apply(u, th) - th @ inst.a2.entries
    return du, dth


def limit_velocity(inst: ToyInstance, theta: np.ndarray) -> np.ndarray:
    """Velocity slaved to the temperature: solves a1 u = ra e theta."""
    return np.asarray(theta, dtype=float) @ inst.limit_gain().T


def corrector_velocity(inst: ToyInstance, theta_tilde: np.ndarray, t: float,
                       eps: float, u0: np.ndarray, theta0: np.ndarray) -> np.ndarray:
    """Velocity of the intermediate system at time t.

    exp(-a1 t/eps) u0 + a1^{-1}(ra e theta_tilde)
    - exp(-a1 t/eps) a1^{-1}(ra e theta0): the slaved state plus a decaying
    transient carrying the mismatch of the initial data.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    w0 = np.asarray(u0, dtype=float) - limit_velocity(inst, theta0)
    transient = inst.a1.exp_action(-t / eps, w0)
    return limit_velocity(inst, theta_tilde) + transient
