"""Gaussian KL arithmetic for comparing an uninformed prior with a prior informed by
micro-level learning, and the resulting macro sample counts."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np


@dataclass(frozen=True)
class GaussianSpec:
    """N(mean, cov) where ``cov`` is a scalar variance, a vector of variances, or a full matrix."""

    mean: np.ndarray
    cov: Union[float, np.ndarray]

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        d = mean.shape[0]
        if cov.ndim == 0:
            if not cov > 0:
                raise ValueError("variance must be positive")
        elif cov.ndim == 1:
            if cov.shape != (d,) or np.any(cov <= 0):
                raise ValueError("diagonal covariance needs d positive variances")
        elif cov.ndim == 2:
            if cov.shape != (d, d) or not np.allclose(cov, cov.T):
                raise ValueError("full covariance must be a symmetric d x d matrix")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("covariance is not positive definite") from None
        else:
            raise ValueError("covariance must be a scalar, vector or matrix")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def isotropic(cls, mean, variance: float) -> "GaussianSpec":
        return cls(mean, float(variance))

    @classmethod
    def diagonal(cls, mean, variances) -> "GaussianSpec":
        return cls(mean, np.asarray(variances, dtype=float))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def kind(self) -> str:
        return ("isotropic", "diagonal", "full")[self.cov.ndim]

    def variances(self) -> np.ndarray:
        """Diagonal of the covariance (no factorization needed)."""
        if self.cov.ndim == 0:
            return np.full(self.dim, float(self.cov))
        return self.cov if self.cov.ndim == 1 else np.diag(self.cov)

    def matrix(self) -> np.ndarray:
        return self.cov if self.cov.ndim == 2 else np.diag(self.variances())


def _check_dims(*specs: GaussianSpec) -> None:
    if len({s.dim for s in specs}) != 1:
        raise ValueError(f"dimension mismatch: {[s.dim for s in specs]}")


def mahalanobis_sq(theta_a, theta_b, cov) -> float:
    """(a - b)^T cov^{-1} (a - b) for a scalar, diagonal or full covariance."""
    diff = np.atleast_1d(np.asarray(theta_a, dtype=float) - np.asarray(theta_b, dtype=float))
    spec = GaussianSpec(np.zeros_like(diff), cov)
    if spec.cov.ndim < 2:
        return float(np.sum(diff**2 / spec.variances()))
    L = np.linalg.cholesky(spec.cov)
    z = np.linalg.solve(L, diff)
    return float(z @ z)


def gaussian_kl(Q: GaussianSpec, P: GaussianSpec) -> float:
    """KL(Q || P) = 1/2 [log|S_P|/|S_Q| - d + tr(S_P^-1 S_Q) + (m_P - m_Q)^T S_P^-1 (m_P - m_Q)]."""
    _check_dims(Q, P)
    d = Q.dim
    dist = mahalanobis_sq(P.mean, Q.mean, P.cov)
    if Q.cov.ndim < 2 and P.cov.ndim < 2:
        vq, vp = Q.variances(), P.variances()
        return float(0.5 * (np.sum(np.log(vp) - np.log(vq)) - d + np.sum(vq / vp) + dist))
    Sq, Sp = Q.matrix(), P.matrix()
    Lq = np.linalg.cholesky(Sq)
    Lp = np.linalg.cholesky(Sp)
    logdet = 2 * (np.sum(np.log(np.diag(Lp))) - np.sum(np.log(np.diag(Lq))))
    trace = np.trace(np.linalg.solve(Sp, Sq))
    return float(0.5 * (logdet - d + trace + dist))


@dataclass
class SampleSavings:
    n0: float
    n_l2: float
    kl_uninformed: float
    kl_informed: float
    mahalanobis_form: Optional[float] = None

    @property
    def absolute(self) -> float:
        return self.n0 - self.n_l2

    @property
    def relative(self) -> float:
        return self.absolute / self.n0 if self.n0 else 0.0


def _shared_covariance(a: GaussianSpec, b: GaussianSpec) -> bool:
    return a.cov.shape == b.cov.shape and np.array_equal(a.cov, b.cov)


def sample_savings(Q: GaussianSpec, P0: GaussianSpec, P_L1: GaussianSpec, c: float) -> SampleSavings:
    """Samples c * KL(Q || prior) for the uninformed and the informed prior.

    When both priors share a covariance, the savings also equal
    c/2 * [M(m_Q, m_P0) - M(m_Q, m_PL1)] with M the squared Mahalanobis distance
    under that covariance; this value is returned as ``mahalanobis_form``.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    _check_dims(Q, P0, P_L1)
    kl0, kl1 = gaussian_kl(Q, P0), gaussian_kl(Q, P_L1)
    maha = None
    if _shared_covariance(P0, P_L1):
        maha = c * 0.5 * (mahalanobis_sq(Q.mean, P0.mean, P0.cov) - mahalanobis_sq(Q.mean, P_L1.mean, P_L1.cov))
    return SampleSavings(c * kl0, c * kl1, kl0, kl1, maha)


@dataclass
class NumericalExample:
    d: int
    learned: int
    sigma0_sq: float
    sigma_sq: float
    c: float
    T: int
    n0: float
    n_l2: float
    n_l1: float
    reduction: float
    reduction_with_l1: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_text(self) -> str:
        rows = [
            ("parameters d", f"{self.d}"),
            ("pre-learned at micro level", f"{self.learned}"),
            ("uninformed prior variance", f"{self.sigma0_sq:g}"),
            ("posterior variance", f"{self.sigma_sq:g}"),
            ("constant c", f"{self.c:g}"),
            ("horizon T", f"{self.T}"),
            ("n0 (uninformed prior)", f"{self.n0:,.1f}"),
            ("n_L2 (informed prior)", f"{self.n_l2:,.1f}"),
            ("n_L1 (micro samples)", f"{self.n_l1:,.1f}"),
            ("reduction", f"{100 * self.reduction:.1f}%"),
            ("reduction counting n_L1 / T", f"{100 * self.reduction_with_l1:.1f}%"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def reproduce_numerical_example(
    d: int = 50, learned: int = 49, sigma0_sq: float = 200.0, sigma_sq: float = 1.0, c: float = 5000.0, T: int = 10
) -> NumericalExample:
    """Sample counts when ``learned`` of ``d`` parameters are pinned down by micro learning.

    The target posterior has variance ``sigma_sq`` in every coordinate and the same
    mean as the uninformed prior. The informed prior matches the posterior on the
    learned coordinates and the uninformed prior elsewhere. Micro samples n_L1 are
    c * KL(Q_L1 || P0) for the micro posterior Q_L1, built like the informed prior;
    they are shared by T macro steps.
    """
    if not 0 <= learned <= d:
        raise ValueError("learned must be in [0, d]")
    mean = np.zeros(d)
    Q = GaussianSpec.isotropic(mean, sigma_sq)
    P0 = GaussianSpec.isotropic(mean, sigma0_sq)
    partial = np.where(np.arange(d) < learned, sigma_sq, sigma0_sq)
    P_L1 = GaussianSpec.diagonal(mean, partial)
    Q_L1 = GaussianSpec.diagonal(mean, partial)
    s = sample_savings(Q, P0, P_L1, c)
    n_l1 = c * gaussian_kl(Q_L1, P0)
    return NumericalExample(
        d, learned, sigma0_sq, sigma_sq, c, T, s.n0, s.n_l2, n_l1, s.relative, (s.n0 - s.n_l2 - n_l1 / T) / s.n0
    )
