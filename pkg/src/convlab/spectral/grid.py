"""Grid, field containers, forcing basis, and field diagnostics.

Conventions
-----------
The domain is [0, L) x (0, 1), periodic in x with ``nx`` collocation points
x_i = i L/nx, Dirichlet walls at z = 0, 1 with ``nz`` interior levels
z_j = (j+1) dz, dz = 1/(nz+1).  Fields store interior values only, shape
(nx, nz); wall values are identically zero.  Array helpers broadcast over
leading batch axes, with x on axis -2 and z on axis -1.

Discrete calculus: x derivatives act spectrally through the real FFT;
z derivatives are centered differences with zero ghost values.  The L^2
inner product is the collocation quadrature dx dz sum (trapezoid in z is
exact here because wall values vanish).
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid2D", "ThetaField", "VelocityField", "ForcingSet", "SpdeParams",
    "forcing_basis", "diagnostics", "dimensionless_from_physical",
]


@dataclass(frozen=True)
class Grid2D:
    length: float
    nx: int
    nz: int

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("length must be positive")
        if self.nx < 8 or self.nx % 2:
            raise ValueError("nx must be an even count >= 8")
        if self.nz < 8:
            raise ValueError("nz must be >= 8")

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def dz(self) -> float:
        return 1.0 / (self.nz + 1)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dz

    def x(self) -> np.ndarray:
        return self.dx * np.arange(self.nx)

    def z(self) -> np.ndarray:
        return self.dz * np.arange(1, self.nz + 1)

    def wavenumbers(self) -> np.ndarray:
        """Physical wavenumbers 2 pi m / L of the rfft bins."""
        return 2.0 * np.pi * np.arange(self.nx // 2 + 1) / self.length

    @property
    def m_keep(self) -> int:
        """Largest retained x mode index; chosen so that triple products of
        retained modes cannot alias back into the retained band."""
        return (self.nx - 1) // 3

    def sin_eigenvalue(self, j: int) -> float:
        """Discrete Dirichlet Laplacian eigenvalue of sin(j pi z)."""
        return (2.0 - 2.0 * np.cos(j * np.pi * self.dz)) / self.dz ** 2


# -- array helpers (batched over leading axes) --------------------------------

def rfftx(values: np.ndarray) -> np.ndarray:
    return np.fft.rfft(values, axis=-2)


def irfftx(hat: np.ndarray, nx: int) -> np.ndarray:
    return np.fft.irfft(hat, n=nx, axis=-2)


def dealias(values: np.ndarray, grid: Grid2D) -> np.ndarray:
    hat = rfftx(values)
    hat[..., grid.m_keep + 1:, :] = 0.0
    return irfftx(hat, grid.nx)


def ddx(values: np.ndarray, grid: Grid2D) -> np.ndarray:
    hat = rfftx(values)
    k = grid.wavenumbers()
    hat *= 1j * k[:, None]
    if grid.nx % 2 == 0:
        hat[..., -1, :] = 0.0
    return irfftx(hat, grid.nx)


def ddz(values: np.ndarray, grid: Grid2D) -> np.ndarray:
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2])
    out[..., 0] = values[..., 1]
    out[..., -1] = -values[..., -2]
    return out / (2.0 * grid.dz)


def inner(a: np.ndarray, b: np.ndarray, grid: Grid2D) -> float:
    return float(np.sum(a * b) * grid.cell_area)


def l2norm(values: np.ndarray, grid: Grid2D):
    return np.sqrt(np.sum(values ** 2, axis=(-2, -1)) * grid.cell_area)


def lpnorm(values: np.ndarray, grid: Grid2D, p: float):
    return (np.sum(np.abs(values) ** p, axis=(-2, -1)) * grid.cell_area) ** (1.0 / p)


def grad_norm(values: np.ndarray, grid: Grid2D):
    gx = ddx(values, grid)
    gz = ddz(values, grid)
    return np.sqrt(np.sum(gx ** 2 + gz ** 2, axis=(-2, -1)) * grid.cell_area)


def divergence(u1: np.ndarray, u3: np.ndarray, grid: Grid2D) -> np.ndarray:
    return ddx(u1, grid) + ddz(u3, grid)


# -- field containers ----------------------------------------------------------

@dataclass
class ThetaField:
    values: np.ndarray
    grid: Grid2D

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-2:] != (self.grid.nx, self.grid.nz):
            raise ValueError("values shape must be (nx, nz)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def l2(self) -> float:
        return float(l2norm(self.values, self.grid))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ThetaField":
        return cls(np.zeros((grid.nx, grid.nz)), grid)


@dataclass
class VelocityField:
    u1: np.ndarray
    u3: np.ndarray
    grid: Grid2D
    psi_hat: np.ndarray | None = None   # rfft-x streamfunction, if known

    def __post_init__(self):
        self.u1 = np.asarray(self.u1, dtype=float)
        self.u3 = np.asarray(self.u3, dtype=float)
        shape = (self.grid.nx, self.grid.nz)
        if self.u1.shape[-2:] != shape or self.u3.shape[-2:] != shape:
            raise ValueError("velocity components must have shape (nx, nz)")

    def l2(self) -> float:
        s = np.sum(self.u1 ** 2 + self.u3 ** 2) * self.grid.cell_area
        return float(np.sqrt(s))

    def divergence_residual(self) -> float:
        d = divergence(self.u1, self.u3, self.grid)
        return float(l2norm(d, self.grid))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "VelocityField":
        z = np.zeros((grid.nx, grid.nz))
        return cls(z, z.copy(), grid)


@dataclass(frozen=True)
class SpdeParams:
    """Dimensionless parameters of one run.

    ``eps`` = 0 selects the velocity-slaved limit dynamics.  ``lambda_damp``
    is the damping strength of the damped/controlled variants and ``n_proj``
    the number of low modes they act on.
    """

    ra: float
    ratilde: float
    eps: float
    n_forced: int
    lambda_damp: float = 0.0
    n_proj: int = 0

    def __post_init__(self):
        if self.ra <= 0 or self.ratilde <= 0:
            raise ValueError("ra and ratilde must be positive")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.n_forced < 1:
            raise ValueError("n_forced must be >= 1")
        if self.lambda_damp < 0:
            raise ValueError("lambda_damp must be >= 0")


@dataclass
class ForcingSet:
    """First n Laplacian eigenmodes, globally normalized to unit total power.

    ``unit_modes`` have unit discrete L^2 norm; the forcing directions are
    unit_modes * norm_constant with norm_constant = 1/sqrt(n), so the total
    squared amplitude is exactly 1.  ``kappa_discrete`` holds the discrete
    symbol k_m^2 + mu_j of each mode under the implicit diffusion operator
    (the modes are exact eigenvectors of it, which the damped and controlled
    steps exploit).
    """

    grid: Grid2D
    unit_modes: np.ndarray       # (n, nx, nz)
    eigenvalues: np.ndarray      # (n,) continuum eigenvalues, nondecreasing
    kappa_discrete: np.ndarray   # (n,)
    mode_index: list             # (m, j, trig) per mode, trig in {"cos","sin"}
    norm_constant: float

    @property
    def n(self) -> int:
        return self.unit_modes.shape[0]

    @property
    def sigma_modes(self) -> np.ndarray:
        return self.unit_modes * self.norm_constant

    def noise_field(self, dW: np.ndarray) -> np.ndarray:
        """sum_k sigma_k dW_k for increments of shape (..., n)."""
        return np.einsum("...n,nxz->...xz", np.asarray(dW, dtype=float),
                         self.sigma_modes)

    def coefficients(self, values: np.ndarray, n: int | None = None) -> np.ndarray:
        """Inner products with the first n unit modes, shape (..., n)."""
        modes = self.unit_modes if n is None else self.unit_modes[:n]
        return np.einsum("...xz,nxz->...n", values, modes) * self.grid.cell_area

    def project(self, values: np.ndarray, n: int | None = None) -> np.ndarray:
        modes = self.unit_modes if n is None else self.unit_modes[:n]
        coef = self.coefficients(values, n)
        return np.einsum("...n,nxz->...xz", coef, modes)


def forcing_basis(grid: Grid2D, n: int) -> ForcingSet:
    """First n eigenmodes of the Laplacian, ordered by eigenvalue.

    Modes are cos/sin(2 pi m x / L) sin(j pi z) with eigenvalue
    (2 pi m / L)^2 + (j pi)^2; only x modes inside the dealias band are
    offered so forcing never excites truncated wavenumbers.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    entries = []
    for j in range(1, grid.nz + 1):
        lam_z = (j * np.pi) ** 2
        entries.append((lam_z, 0, j, "cos"))
        for m in range(1, grid.m_keep + 1):
            lam = (2.0 * np.pi * m / grid.length) ** 2 + lam_z
            entries.append((lam, m, j, "cos"))
            entries.append((lam, m, j, "sin"))
    entries.sort(key=lambda t: (t[0], t[1], t[2], t[3]))
    if n > len(entries):
        raise ValueError(f"grid offers only {len(entries)} forcing modes")

    x = grid.x()[:, None]
    z = grid.z()[None, :]
    modes = np.empty((n, grid.nx, grid.nz))
    eigen = np.empty(n)
    kappa = np.empty(n)
    index = []
    for i, (lam, m, j, trig) in enumerate(entries[:n]):
        zpart = np.sin(j * np.pi * z)
        if m == 0:
            shape = np.broadcast_to(zpart, (grid.nx, grid.nz)).copy()
        elif trig == "cos":
            shape = np.cos(2.0 * np.pi * m * x / grid.length) * zpart
        else:
            shape = np.sin(2.0 * np.pi * m * x / grid.length) * zpart
        shape /= l2norm(shape, grid)
        modes[i] = shape
        eigen[i] = lam
        kappa[i] = (2.0 * np.pi * m / grid.length) ** 2 + grid.sin_eigenvalue(j)
        index.append((m, j, trig))
    return ForcingSet(grid=grid, unit_modes=modes, eigenvalues=eigen,
                      kappa_discrete=kappa, mode_index=index,
                      norm_constant=1.0 / np.sqrt(n))


def diagnostics(theta: ThetaField, u: VelocityField | None = None,
                p: float = 3.0) -> dict:
    """Standard scalar diagnostics of a state snapshot."""
    g = theta.grid
    out = {
        "l2_theta": float(l2norm(theta.values, g)),
        "l3_theta": float(lpnorm(theta.values, g, 3.0)),
        f"l{p:g}_theta": float(lpnorm(theta.values, g, p)),
        "grad_theta": float(grad_norm(theta.values, g)),
    }
    if u is None:
        out.update(l2_u=0.0, grad_u=0.0, div_resid=0.0)
        return out
    l2u = u.l2()
    gu = np.sqrt(grad_norm(u.u1, g) ** 2 + grad_norm(u.u3, g) ** 2)
    div = u.divergence_residual()
    out.update(l2_u=l2u, grad_u=float(gu),
               div_resid=float(div / l2u) if l2u > 0 else float(div))
    return out


def dimensionless_from_physical(nu: float, kappa: float, g: float, alpha: float,
                                gamma: float, h: float, t1: float):
    """Map physical parameters to (Pr, Ra, Ra-tilde)."""
    vals = dict(nu=nu, kappa=kappa, g=g, alpha=alpha, gamma=gamma, h=h, t1=t1)
    for name, v in vals.items():
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    pr = nu / kappa
    ra = g * alpha * gamma * h ** 2.5 / (nu * kappa ** 1.5)
    ratilde = np.sqrt(kappa * h) * t1 / gamma
    return float(pr), float(ra), float(ratilde)
