"""Deterministic random streams, Brownian paths, and symmetric-matrix kernels.

Every object here is a pure function of its inputs: the same (root_seed,
stream_id) key reproduces bit-identical draws on any platform with the same
numpy build.  Gaussian variates come from numpy's ziggurat sampler on top of
the counter-based Philox engine; this choice is fixed and relied upon by the
reproducibility contract of the whole package.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
# Tag mixed into stream ids when deriving the auxiliary stream used for
# Brownian-bridge refinement fills.
_REFINE_TAG = 0xB5297A4D


def _splitmix64(x: int) -> int:
    x = (x + _SPLITMIX_GAMMA) & _U64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _U64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (root_seed, stream_id).

    Distinct stream ids select distinct Philox keys, so their output
    sequences never overlap and are statistically independent.
    """

    root_seed: int
    stream_id: int

    def __post_init__(self):
        for name in ("root_seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= _U64:
                raise ValueError(f"{name} must be an integer in [0, 2^64)")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.root_seed & _U64, self.stream_id & _U64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, *indices: int) -> "RngStream":
        """Child stream obtained by mixing indices into the stream id.

        Used to hand out replica/purpose substreams without bookkeeping a
        global counter; the SplitMix64 chain makes collisions negligible.
        """
        sid = self.stream_id
        for ix in indices:
            sid = _splitmix64(sid ^ (int(ix) & _U64))
        return RngStream(self.root_seed, sid)


def make_stream(root_seed: int, stream_id: int) -> RngStream:
    """Create the stream keyed by (root_seed, stream_id)."""
    return RngStream(int(root_seed), int(stream_id))


@dataclass(frozen=True)
class NoisePath:
    """Discretized Brownian path: i.i.d. N(0, dt) increments per component.

    ``increments`` has shape (n_steps, dim).  ``origin`` records the
    (root_seed, stream_id) key that produced the path.
    """

    dt: float
    increments: np.ndarray
    origin: tuple

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def brownian_path(stream: RngStream, dt: float, n_steps: int, dim: int) -> NoisePath:
    """Sample a Brownian path with ``n_steps`` increments of step ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    g = stream.generator()
    increments = g.standard_normal((n_steps, dim)) * np.sqrt(dt)
    return NoisePath(dt=float(dt), increments=increments,
                     origin=(stream.root_seed, stream.stream_id))


def refine_path(path: NoisePath, factor: int) -> NoisePath:
    """Refine a path by an integer factor using Brownian-bridge fills.

    The partial sums of the fine increments over each coarse interval
    reproduce the coarse increments exactly (up to the single rounding of
    the final subtraction), so refinement never changes the coarse path.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 2:
        raise ValueError("factor must be an integer >= 2")
    factor = int(factor)
    dt_f = path.dt / factor
    n, dim = path.increments.shape
    g = RngStream(*path.origin).derive(_REFINE_TAG, factor).generator()
    fine = np.empty((n, factor, dim))
    remaining = path.increments.copy()
    # Conditional sampling: given the remaining increment over m sub-steps,
    # the next sub-increment is N(remaining/m, dt_f*(m-1)/m).
    for s in range(factor - 1):
        m = factor - s
        z = g.standard_normal((n, dim))
        fine[:, s, :] = remaining / m + np.sqrt(dt_f * (m - 1) / m) * z
        remaining -= fine[:, s, :]
    fine[:, factor - 1, :] = remaining
    return NoisePath(dt=dt_f, increments=fine.reshape(n * factor, dim),
                     origin=path.origin)


class SymMatrix:
    """Real symmetric matrix with cached eigendecomposition and solves.

    Symmetry is enforced exactly at construction.  When ``elliptic`` is set
    the smallest eigenvalue must be >= 1 (the coercivity normalization used
    by the model operators).
    """

    def __init__(self, entries: np.ndarray, elliptic: bool = False):
        a = np.asarray(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("entries must be a square matrix")
        if not np.array_equal(a, a.T):
            raise ValueError("entries must be exactly symmetric")
        self.entries = a
        self.elliptic = bool(elliptic)
        self._eig = None
        self._cho = None
        if self.elliptic and self.min_eigenvalue() < 1.0 - 1e-12:
            raise ValueError("elliptic matrix must have smallest eigenvalue >= 1")

    @classmethod
    def from_raw(cls, m: np.ndarray, elliptic: bool = False) -> "SymMatrix":
        """Symmetrize (m + m.T)/2, which is exact in floating point."""
        m = np.asarray(m, dtype=float)
        return cls((m + m.T) / 2.0, elliptic=elliptic)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def eigh(self):
        if self._eig is None:
            self._eig = np.linalg.eigh(self.entries)
        return self._eig

    def min_eigenvalue(self) -> float:
        w, _ = self.eigh()
        return float(w[0])

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve a x = b for SPD a; b may carry leading batch axes."""
        from scipy.linalg import cho_factor, cho_solve
        if self._cho is None:
            self._cho = cho_factor(self.entries, lower=True)
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            return cho_solve(self._cho, b)
        flat = b.reshape(-1, b.shape[-1])
        out = cho_solve(self._cho, flat.T).T
        return out.reshape(b.shape)

    def exp_action(self, scale: float, v: np.ndarray) -> np.ndarray:
        """exp(scale * a) applied to v via the symmetric eigendecomposition."""
        w, vec = self.eigh()
        v = np.asarray(v, dtype=float)
        return ((v @ vec) * np.exp(scale * w)) @ vec.T

    def exp_matrix(self, scale: float) -> np.ndarray:
        """Dense exp(scale * a); symmetric by construction of the formula."""
        w, vec = self.eigh()
        return (vec * np.exp(scale * w)) @ vec.T


def matrix_exp_action(a: SymMatrix, scale: float, v: np.ndarray) -> np.ndarray:
    """Return exp(scale * a) v; rejects non-symmetric input at construction."""
    if not isinstance(a, SymMatrix):
        a = SymMatrix(np.asarray(a))
    if not np.isfinite(scale):
        raise ValueError("scale must be finite")
    return a.exp_action(float(scale), v)


@lru_cache(maxsize=8)
def gauss_legendre_01(n: int):
    """Gauss-Legendre nodes/weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0
