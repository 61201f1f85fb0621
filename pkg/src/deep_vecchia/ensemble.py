"""Generalized product-of-experts combination of per-layer Gaussian predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("uniform", "posterior_variance", "differential_entropy", "wasserstein")
SPACES = ("y", "f")

_WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class EnsembleConfig:
    """How per-layer Gaussians are merged.

    The default (y-space posterior-variance weighting, no softmax) is the
    configuration that behaves best when members carry different noise terms.
    temperature only matters when use_softmax is set.
    """

    scheme: str = "posterior_variance"
    space: str = "y"
    use_softmax: bool = False
    temperature: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {self.space!r}")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass
class CombinedPrediction:
    mean: float
    variance: float
    weights: np.ndarray
    member_means: np.ndarray
    member_vars: np.ndarray  # in the combining space (observation or latent)
    uniform_fallback: bool = False


def _members_array(members) -> np.ndarray:
    arr = np.asarray(members, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("members must be (mean, var, prior_var) triples")
    if arr.shape[0] < 1:
        raise ValueError("at least one member required")
    if np.any(arr[:, 1] <= 0.0):
        raise ValueError("member variances must be positive")
    return arr


def _uncertainty_scores(arr: np.ndarray, scheme: str) -> np.ndarray:
    """Scores u_k where exp(-T u_k) upweights confident members."""
    mean, var, prior = arr[:, 0], arr[:, 1], arr[:, 2]
    if scheme == "uniform":
        return np.zeros_like(var)
    if scheme == "posterior_variance":
        return var
    if scheme == "differential_entropy":
        return -0.5 * (np.log(prior) - np.log(var))
    return -(mean**2 + (prior - var) ** 2)  # wasserstein


def _raw_weights(arr: np.ndarray, scheme: str) -> np.ndarray:
    mean, var, prior = arr[:, 0], arr[:, 1], arr[:, 2]
    if scheme == "uniform":
        return np.ones_like(var)
    if scheme == "posterior_variance":
        return 1.0 / var
    if scheme == "differential_entropy":
        return 0.5 * (np.log(prior) - np.log(var))
    return mean**2 + (prior - var) ** 2  # wasserstein, taken verbatim


def weights(members, cfg: EnsembleConfig):
    """Normalized combination weights.

    Returns (weights, uniform_fallback); the flag is set when every raw
    weight is non-positive (or non-finite) and uniform weights are used.
    """
    arr = _members_array(members)
    L = arr.shape[0]
    if cfg.use_softmax:
        u = cfg.temperature * _uncertainty_scores(arr, cfg.scheme)
        raw = np.exp(-(u - u.min()))  # shift-invariant, overflow-safe
    else:
        raw = _raw_weights(arr, cfg.scheme)
    if not np.all(np.isfinite(raw)) or np.all(raw <= 0.0):
        return np.full(L, 1.0 / L), True
    raw = np.maximum(raw, _WEIGHT_FLOOR)
    return raw / raw.sum(), False


def combine(members, w: np.ndarray, space: str, noise_vars) -> CombinedPrediction:
    """Precision-weighted Gaussian product.

    In y-space the member variances are observation variances and the
    formulas apply directly; in f-space they are latent variances and the
    averaged per-layer noise is added to the combined variance afterwards.
    """
    arr = _members_array(members)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (arr.shape[0],):
        raise ValueError("one weight per member required")
    if space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}, got {space!r}")
    mean_k, var_k = arr[:, 0], arr[:, 1]
    prec = (w / var_k).sum()
    variance = 1.0 / prec
    mean = variance * (w * mean_k / var_k).sum()
    if space == "f":
        variance = variance + float(np.mean(np.asarray(noise_vars, dtype=np.float64)))
    return CombinedPrediction(
        mean=float(mean),
        variance=float(variance),
        weights=w.copy(),
        member_means=mean_k.copy(),
        member_vars=var_k.copy(),
    )
