"""Quantification baseline: 0/1 dummies treated as continuous, Gaussian FA.

The baseline uses the same norm constraint as the proposed model, i.e. the
special case without binary variables, and is expressed through scaled
loadings ``W_bar = sqrt(c^2 / (1 + c^2)) W_hat`` so that the implied
covariance keeps its diagonal fixed at ``sigma_diag``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import CONTINUOUS, LOG_2PI, Dataset, ModelParams, Schema, cov_to_corr, model_moments
from .fit import FitConfig, FitResult, fit


@dataclass(frozen=True, eq=False)
class QuantModel:
    mu: np.ndarray
    sigma_diag: np.ndarray
    W_bar: np.ndarray
    fit_result: FitResult | None = None

    def __post_init__(self):
        norms = np.linalg.norm(self.W_bar, axis=1)
        if np.any(norms > 1.0 + 1e-12):
            raise ValueError("rows of W_bar must have norm at most 1")
        if np.any(self.sigma_diag <= 0):
            raise ValueError("variances must be positive")

    @property
    def p(self) -> int:
        return self.mu.size

    @property
    def p_z(self) -> int:
        return self.W_bar.shape[1]

    @property
    def covariance(self) -> np.ndarray:
        sd = np.sqrt(self.sigma_diag)
        WW = self.W_bar @ self.W_bar.T
        cov = np.diag((1.0 - np.diag(WW)) * self.sigma_diag) + sd[:, None] * WW * sd[None, :]
        cov = 0.5 * (cov + cov.T)
        np.fill_diagonal(cov, self.sigma_diag)  # equal by construction; drop rounding
        return cov

    @property
    def correlation(self) -> np.ndarray:
        return cov_to_corr(self.covariance)

    def log_likelihood(self, dataset: Dataset) -> float:
        X = np.asarray(quantify(dataset).x)
        chol = linalg.cholesky(self.covariance, lower=True)
        sol = linalg.solve_triangular(chol, (X - self.mu).T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        rows = -0.5 * (self.p * LOG_2PI + logdet + np.sum(sol * sol, axis=0))
        return math.fsum(rows)

    @classmethod
    def from_params(cls, params: ModelParams, fit_result: FitResult | None = None) -> "QuantModel":
        if params.q:
            raise ValueError("quantified model has no binary block")
        c2 = params.c ** 2
        return cls(
            params.mu_x.copy(),
            (1.0 + c2) * params.psi,
            math.sqrt(c2 / (1.0 + c2)) * params.W_hat,
            fit_result,
        )


def quantify(dataset: Dataset) -> Dataset:
    """Reinterpret binary columns as real-valued 0/1 columns, order preserved."""
    if not dataset.is_complete:
        raise ValueError("quantification baseline does not support missing cells")
    schema = Schema(tuple((name, CONTINUOUS) for name in dataset.schema.names))
    return Dataset(schema, np.hstack([dataset.x, dataset.y]), np.zeros((dataset.n, 0)))


def fit_quant(dataset: Dataset, p_z: int, config: FitConfig | None = None) -> QuantModel:
    res = fit(quantify(dataset), p_z, config)
    return QuantModel.from_params(res.params, res)


def reduce_dims(model: QuantModel, d: int) -> QuantModel:
    """Keep the top-d singular directions of W_bar; the covariance diagonal is unchanged."""
    if not 1 <= d <= model.p_z:
        raise ValueError(f"target dimension {d} outside 1..{model.p_z}")
    if d == model.p_z:
        return model
    U, s, _ = np.linalg.svd(model.W_bar, full_matrices=False)
    return QuantModel(model.mu, model.sigma_diag, U[:, :d] * s[:d], model.fit_result)


def r_squared(empirical_corr, model_corr) -> float:
    r = np.asarray(empirical_corr, dtype=float)
    rhat = np.asarray(model_corr, dtype=float)
    if r.shape != rhat.shape or r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
        raise ValueError("need matching square matrices of size >= 2")
    i, j = np.tril_indices(r.shape[0], k=-1)
    a, b = r[i, j], rhat[i, j]
    denom = np.sum((a - a.mean()) ** 2)
    if denom == 0:
        raise ValueError("R^2 undefined: all empirical correlations are equal")
    return float(1.0 - np.sum((a - b) ** 2) / denom)


def reproduced_corr(model) -> np.ndarray:
    if isinstance(model, QuantModel):
        return model.correlation
    if isinstance(model, ModelParams):
        return model_moments(model).corr
    raise TypeError(f"unsupported model type {type(model).__name__}")


def empirical_corr(dataset: Dataset) -> np.ndarray:
    """Pearson correlation of the data with binary columns as 0/1 dummies."""
    Z = np.hstack([dataset.x, dataset.y])
    return np.corrcoef(Z, rowvar=False)
