"""No-slip Stokes solves in streamfunction form, plus the Stokes eigenbasis.

Per horizontal wavenumber k the velocity u = (dz psi, -dx psi) turns the
steady Stokes problem with buoyancy ra * theta into the clamped biharmonic
system

    (D2 - k^2)^2 psi_hat = i k ra theta_hat,   psi_hat = dz psi_hat = 0 at walls,

discretized with second-order differences in z (ghost reflection encodes the
clamped condition).  Incompressibility is exact by construction: the discrete
divergence of (dz psi, -dx psi) cancels to rounding because the centered z
difference commutes with the spectral x derivative.

The eigenbasis of the pencil A psi = lambda B psi (A the clamped biharmonic,
B = k^2 - D2) discretizes the Stokes operator's spectrum; it provides the
exact semigroup used by the corrector's transient velocity.
"""

import numpy as np

from ..errors import NumericalError
from .grid import Grid2D, ThetaField, VelocityField, rfftx, irfftx, ddz

__all__ = ["StokesOperator", "StokesEigenbasis", "stokes_solve"]


def _lap_z(values: np.ndarray, dz: float) -> np.ndarray:
    """Dirichlet second difference along the last axis (any dtype)."""
    out = -2.0 * values.copy()
    out[..., 1:] += values[..., :-1]
    out[..., :-1] += values[..., 1:]
    return out / dz ** 2


def _d2_matrix(nz: int, dz: float) -> np.ndarray:
    d2 = np.zeros((nz, nz))
    idx = np.arange(nz)
    d2[idx, idx] = -2.0
    d2[idx[:-1], idx[:-1] + 1] = 1.0
    d2[idx[1:], idx[1:] - 1] = 1.0
    return d2 / dz ** 2


def _d4_clamped_matrix(nz: int, dz: float) -> np.ndarray:
    """Fourth difference with psi = psi' = 0 walls via ghost reflection."""
    d4 = np.zeros((nz, nz))
    stencil = np.array([1.0, -4.0, 6.0, -4.0, 1.0])
    for i in range(nz):
        for s, c in zip(range(-2, 3), stencil):
            j = i + s
            if 0 <= j < nz:
                d4[i, j] += c
    # ghost reflection psi(-dz) = psi(dz) and psi(1+dz) = psi(1-dz)
    d4[0, 0] += 1.0
    d4[nz - 1, nz - 1] += 1.0
    return d4 / dz ** 4


class StokesOperator:
    """Per-grid cache of biharmonic and evolution solves for each x mode."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        nz, dz = grid.nz, grid.dz
        self.k = grid.wavenumbers()
        self.d2 = _d2_matrix(nz, dz)
        self.d4 = _d4_clamped_matrix(nz, dz)
        eye = np.eye(nz)
        self.a_mats = np.stack([
            self.d4 - 2.0 * k2 * self.d2 + k2 ** 2 * eye
            for k2 in self.k ** 2])
        self.b_mats = np.stack([k2 * eye - self.d2 for k2 in self.k ** 2])
        try:
            self.a_inv = np.linalg.inv(self.a_mats)
            self.b_inv = np.linalg.inv(self.b_mats)
        except np.linalg.LinAlgError as exc:   # clamped walls keep these regular
            raise NumericalError(f"singular wall-bounded solve: {exc}") from exc
        self._evol_inv = {}
        self._basis = None

    # -- solves, all batched over leading axes with x-bin axis at -2 ----------
    def _apply_binwise(self, mats: np.ndarray, rhs_hat: np.ndarray) -> np.ndarray:
        return np.einsum("kij,...kj->...ki", mats, rhs_hat)

    def apply_b(self, psi_hat: np.ndarray) -> np.ndarray:
        """B psi = (k^2 - D2) psi, the spectral negative Laplacian."""
        return self.k[:, None] ** 2 * psi_hat - _lap_z(psi_hat, self.grid.dz)

    def stream_from_theta(self, theta_values: np.ndarray, ra: float) -> np.ndarray:
        th_hat = rfftx(theta_values)
        rhs = (1j * self.k[:, None] * ra) * th_hat
        rhs[..., -1, :] = 0.0
        return self._apply_binwise(self.a_inv, rhs)

    def stream_from_velocity(self, u1: np.ndarray, u3: np.ndarray) -> np.ndarray:
        """Recover psi from a discretely divergence-free field via B psi = curl u."""
        curl_hat = 1j * self.k[:, None] * rfftx(u3) - ddz(rfftx(u1), self.grid)
        curl_hat[..., -1, :] = 0.0
        return self._apply_binwise(self.b_inv, curl_hat)

    def velocity_from_stream(self, psi_hat: np.ndarray):
        u1 = irfftx(ddz(psi_hat, self.grid), self.grid.nx)
        u3 = irfftx(-1j * self.k[:, None] * psi_hat, self.grid.nx)
        return u1, u3

    def evolution_inverse(self, eps: float, dt: float) -> np.ndarray:
        """Inverse of (eps B + dt A): one implicit step of the stiff velocity."""
        key = (float(eps), float(dt))
        if key not in self._evol_inv:
            self._evol_inv[key] = np.linalg.inv(
                eps * self.b_mats + dt * self.a_mats)
        return self._evol_inv[key]

    def eigenbasis(self) -> "StokesEigenbasis":
        if self._basis is None:
            self._basis = StokesEigenbasis(self)
        return self._basis


class StokesEigenbasis:
    """Generalized eigenpairs A psi = lambda B psi per x bin (Nyquist excluded).

    Eigenvectors are B-orthonormal, so squared coefficients measure velocity
    energy and lambda-weighted squares measure enstrophy (the squared
    velocity gradient), both up to the collocation prefactor.
    """

    def __init__(self, op: StokesOperator):
        from scipy.linalg import eigh
        self.grid = op.grid
        self.n_bins = op.a_mats.shape[0] - 1   # drop the Nyquist bin
        self.evals = []
        self.vecs = []
        self.proj = []
        for k in range(self.n_bins):
            w, v = eigh(op.a_mats[k], op.b_mats[k])
            self.evals.append(w)
            self.vecs.append(v)
            self.proj.append((op.b_mats[k] @ v).T)
        self._prefactor = self.grid.length * self.grid.dz / self.grid.nx ** 2
        self._bin_weight = np.ones(self.n_bins)
        self._bin_weight[1:] = 2.0   # rfft bins m>0 carry cos and sin pairs

    def lambda_min(self) -> float:
        return float(min(w[0] for w in self.evals))

    def retained_masks(self, eps: float):
        """Masks selecting modes with eps * lambda^2 <= 1 (the low modes whose
        initial data the corrector keeps)."""
        return [eps * w ** 2 <= 1.0 for w in self.evals]

    def retained_count(self, eps: float) -> int:
        masks = self.retained_masks(eps)
        return int(sum(int(m.sum()) * int(w) for m, w in
                       zip(masks, self._bin_weight)))

    def project(self, psi_hat: np.ndarray) -> list:
        """Complex coefficients per bin, shape (..., n_modes_bin)."""
        return [np.einsum("jz,...z->...j", self.proj[k], psi_hat[..., k, :])
                for k in range(self.n_bins)]

    def reconstruct(self, coeffs: list) -> np.ndarray:
        lead = coeffs[0].shape[:-1]
        nz = self.grid.nz
        psi_hat = np.zeros(lead + (self.grid.nx // 2 + 1, nz), dtype=complex)
        for k in range(self.n_bins):
            psi_hat[..., k, :] = np.einsum("...j,zj->...z", coeffs[k],
                                           self.vecs[k])
        return psi_hat

    def energy_from_coeffs(self, coeffs: list):
        """Velocity L^2 energy ||w||^2 of the field with these coefficients."""
        total = 0.0
        for k in range(self.n_bins):
            total = total + self._bin_weight[k] * np.sum(
                np.abs(coeffs[k]) ** 2, axis=-1)
        return self._prefactor * total

    def enstrophy_from_coeffs(self, coeffs: list):
        """Gradient energy ||grad w||^2 of the field with these coefficients."""
        total = 0.0
        for k in range(self.n_bins):
            total = total + self._bin_weight[k] * np.sum(
                self.evals[k] * np.abs(coeffs[k]) ** 2, axis=-1)
        return self._prefactor * total


def stokes_solve(grid: Grid2D, theta: ThetaField, ra: float) -> VelocityField:
    """Velocity slaved to the temperature by the no-slip Stokes problem."""
    from .steppers import spectral_ops
    op = spectral_ops(grid).stokes
    psi_hat = op.stream_from_theta(theta.values, ra)
    u1, u3 = op.velocity_from_stream(psi_hat)
    return VelocityField(u1=u1, u3=u3, grid=grid, psi_hat=psi_hat)
