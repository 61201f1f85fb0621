"""ARD Matern-5/2 covariance with analytic gradients in log-hyperparameter space.

All hyperparameters are stored in the log domain so that plain unconstrained
gradient steps keep them strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelParams:
    """Log-domain hyperparameters of one ARD Matern-5/2 GP layer.

    log_output_var: log of the kernel output variance.
    log_lengthscales: per-dimension log lengthscales, length d.
    log_noise_var: log of the Gaussian likelihood noise variance.
    """

    log_output_var: float
    log_lengthscales: np.ndarray
    log_noise_var: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=np.float64))
        if ls.ndim != 1:
            raise ValueError("log_lengthscales must be one-dimensional")
        object.__setattr__(self, "log_lengthscales", ls)
        vals = np.concatenate(([self.log_output_var], ls, [self.log_noise_var]))
        if not np.all(np.isfinite(np.exp(vals))) or not np.all(np.isfinite(vals)):
            raise ValueError("kernel parameters must exponentiate to finite positive values")

    @property
    def output_var(self) -> float:
        return float(np.exp(self.log_output_var))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def noise_var(self) -> float:
        return float(np.exp(self.log_noise_var))

    @property
    def dim(self) -> int:
        return self.log_lengthscales.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            ([self.log_output_var], self.log_lengthscales, [self.log_noise_var])
        )

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "KernelParams":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(float(theta[0]), theta[1:-1].copy(), float(theta[-1]))


def matern52_profile(s):
    """Correlation profile as a function of squared scaled distance s = r^2."""
    r = np.sqrt(s)
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * s) * np.exp(-SQRT5 * r)


def matern52_dlambda_factor(s):
    """Factor F(s) with d k / d log(lambda_d) = sigma^2 F(s) u_d, u_d the scaled
    squared difference in dimension d.  Smooth at s = 0 (F(0) = 5/3)."""
    r = np.sqrt(s)
    return (5.0 / 3.0) * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def _check_dim(x: np.ndarray, p: KernelParams):
    if x.shape[-1] != p.dim:
        raise ValueError(
            f"input dimension {x.shape[-1]} does not match {p.dim} lengthscales"
        )


def k(x: np.ndarray, x2: np.ndarray, p: KernelParams) -> float:
    """Kernel value sigma^2 (1 + sqrt5 r + 5/3 r^2) exp(-sqrt5 r) for one pair."""
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    _check_dim(x, p)
    _check_dim(x2, p)
    u = ((x - x2) / p.lengthscales) ** 2
    return p.output_var * float(matern52_profile(u.sum()))


def gram(
    A: np.ndarray,
    B: np.ndarray | None = None,
    p: KernelParams | None = None,
    add_noise_diag: bool = False,
) -> np.ndarray:
    """Pairwise kernel matrix between row sets A and B.

    B = None means B is A; only then may add_noise_diag add tau^2 to the
    diagonal.  Squared distances are accumulated pairwise (no GEMM expansion)
    so the matrix is exactly symmetric with an exact sigma^2 diagonal.
    """
    if p is None:
        raise ValueError("kernel parameters required")
    A = np.asarray(A, dtype=np.float64)
    _check_dim(A, p)
    ls = p.lengthscales
    if B is None:
        if A.shape[0] == 0:
            return np.zeros((0, 0))
        S = cdist(A / ls, A / ls, "sqeuclidean")
        np.fill_diagonal(S, 0.0)
        K = p.output_var * matern52_profile(S)
        if add_noise_diag:
            K[np.diag_indices_from(K)] += p.noise_var
        return K
    if add_noise_diag:
        raise ValueError("add_noise_diag requires B to be A (pass B=None)")
    B = np.asarray(B, dtype=np.float64)
    _check_dim(B, p)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    S = cdist(A / ls, B / ls, "sqeuclidean")
    return p.output_var * matern52_profile(S)


def grad_logparams(x: np.ndarray, x2: np.ndarray, p: KernelParams) -> np.ndarray:
    """Gradient of k(x, x2) with respect to (log sigma^2, log lambda_1..d, log tau^2).

    The log tau^2 component is identically zero: noise enters only through
    likelihood diagonals, never the cross-covariance.
    """
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    _check_dim(x, p)
    _check_dim(x2, p)
    u = ((x - x2) / p.lengthscales) ** 2
    s = u.sum()
    g = np.empty(p.dim + 2)
    g[0] = p.output_var * matern52_profile(s)
    g[1:-1] = p.output_var * matern52_dlambda_factor(s) * u
    g[-1] = 0.0
    return g
