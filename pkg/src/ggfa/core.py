"""Exact probabilistic core of the mixed continuous/binary factor model.

The model couples ``p_x`` continuous and ``q`` binary observed variables
through ``p_z`` continuous latent factors.  Marginalizing the latent space
gives a location model: the binary block follows an Ising distribution and,
conditional on the binary pattern ``y``, the continuous block is Gaussian
with mean ``mu_x + W G^T y`` and shared covariance ``Psi + W W^T``.

All sums over binary patterns are exact enumerations over the ``2**q``
states, so ``q`` is capped at :data:`MAX_BINARY`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

MAX_BINARY = 20
LOG_2PI = float(np.log(2.0 * np.pi))
ROW_NORM_TOL = 1e-10

CONTINUOUS = "continuous"
BINARY = "binary"


class CapacityError(ValueError):
    """Raised when an exact enumeration over 2**q binary states is too large."""


class DegenerateCorrelationError(ValueError):
    """Raised when a correlation involves a variable with zero variance."""


# --------------------------------------------------------------------------
# data containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    """Ordered column names and kinds.

    Internally the continuous block always precedes the binary block; use
    :meth:`from_columns` to build a schema from an arbitrary column order.
    """

    columns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        cols = tuple((str(n), str(k)) for n, k in self.columns)
        object.__setattr__(self, "columns", cols)
        if not cols:
            raise ValueError("schema needs at least one column")
        names = [n for n, _ in cols]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        kinds = [k for _, k in cols]
        for name, kind in cols:
            if kind not in (CONTINUOUS, BINARY):
                raise ValueError(f"column {name!r}: unknown kind {kind!r}")
        n_cont = kinds.count(CONTINUOUS)
        if any(k == BINARY for k in kinds[:n_cont]):
            raise ValueError("continuous columns must precede binary columns")

    @classmethod
    def from_columns(cls, columns: Sequence[tuple[str, str]]) -> "Schema":
        cont = [c for c in columns if c[1] == CONTINUOUS]
        binary = [c for c in columns if c[1] == BINARY]
        other = [c for c in columns if c[1] not in (CONTINUOUS, BINARY)]
        if other:
            raise ValueError(f"column {other[0][0]!r}: unknown kind {other[0][1]!r}")
        return cls(tuple(cont) + tuple(binary))

    @classmethod
    def simple(cls, p_x: int, q: int) -> "Schema":
        return cls(
            tuple((f"x{j + 1}", CONTINUOUS) for j in range(p_x))
            + tuple((f"y{j + 1}", BINARY) for j in range(q))
        )

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @property
    def continuous_names(self) -> list[str]:
        return [n for n, k in self.columns if k == CONTINUOUS]

    @property
    def binary_names(self) -> list[str]:
        return [n for n, k in self.columns if k == BINARY]

    @property
    def p_x(self) -> int:
        return len(self.continuous_names)

    @property
    def q(self) -> int:
        return len(self.binary_names)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Mixed-type rows.  Missing cells are NaN in either block.

    ``x`` has shape (N, p_x) and ``y`` has shape (N, q); observed binary
    cells are exactly 0.0 or 1.0.
    """

    schema: Schema
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        n = x.shape[0] if x.ndim == 2 else y.shape[0]
        x = x.reshape(n, self.schema.p_x)
        y = y.reshape(n, self.schema.q)
        if x.shape[0] != y.shape[0]:
            raise ValueError("continuous and binary blocks have different row counts")
        yo = y[~np.isnan(y)]
        if np.any((yo != 0.0) & (yo != 1.0)):
            raise ValueError("binary cells must be 0 or 1")
        if np.any(np.isinf(x)):
            raise ValueError("continuous cells must be finite or missing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_rows(cls, schema: Schema, rows: Sequence[tuple[Sequence, Sequence]]) -> "Dataset":
        def conv(v):
            return np.nan if v is None else float(v)

        x = np.array([[conv(v) for v in r[0]] for r in rows], dtype=float)
        y = np.array([[conv(v) for v in r[1]] for r in rows], dtype=float)
        return cls(schema, x.reshape(len(rows), schema.p_x), y.reshape(len(rows), schema.q))

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def x_mask(self) -> np.ndarray:
        """True where a continuous cell is observed."""
        return ~np.isnan(self.x)

    @property
    def y_mask(self) -> np.ndarray:
        return ~np.isnan(self.y)

    @property
    def is_complete(self) -> bool:
        return bool(self.x_mask.all() and self.y_mask.all())

    def rows(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for i in range(self.n):
            yield self.x[i], self.y[i]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.schema, self.x[idx], self.y[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        if other.schema != self.schema:
            raise ValueError("schemas differ")
        return Dataset(self.schema, np.vstack([self.x, other.x]), np.vstack([self.y, other.y]))


# --------------------------------------------------------------------------
# binary states
# --------------------------------------------------------------------------


def check_capacity(q: int) -> None:
    if q < 0:
        raise ValueError("number of binary variables must be nonnegative")
    if q > MAX_BINARY:
        raise CapacityError(
            f"exact enumeration over 2**{q} = {2 ** q} binary states exceeds the "
            f"cap of q <= {MAX_BINARY}"
        )


def enumerate_states(q: int) -> np.ndarray:
    """All binary patterns as a (2**q, q) array; row k holds the bits of k.

    Element 0 is the least significant bit.
    """
    check_capacity(q)
    k = np.arange(2 ** q)
    return ((k[:, None] >> np.arange(q)[None, :]) & 1).astype(np.uint8)


def state_index(bits) -> int:
    bits = np.asarray(bits).astype(np.int64).ravel()
    return int(np.sum(bits << np.arange(bits.size)))


def state_indices(y: np.ndarray) -> np.ndarray:
    """Integer index of every row of a complete (N, q) bit matrix."""
    y = np.asarray(y)
    return (y.astype(np.int64) << np.arange(y.shape[1])[None, :]).sum(axis=1)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def normalize_rows(V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero loading row")
    return V / norms


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Norm-constrained parameters ``(mu_x, psi, b, c, W_hat, G_hat)``.

    Every row of ``W_hat`` and ``G_hat`` has unit norm, so the combined
    dimensionless loading matrix ``M = c [W_hat; G_hat]`` has row norm ``c``.
    The latent covariance is fixed to the identity and ``mu_z`` is derived.
    """

    mu_x: np.ndarray
    psi: np.ndarray
    b: np.ndarray
    c: float
    W_hat: np.ndarray
    G_hat: np.ndarray

    def __post_init__(self):
        mu_x = np.atleast_1d(np.asarray(self.mu_x, dtype=float))
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        p_x, q = mu_x.size, b.size
        W_hat = np.asarray(self.W_hat, dtype=float)
        G_hat = np.asarray(self.G_hat, dtype=float)
        p_z = W_hat.shape[1] if W_hat.ndim == 2 and W_hat.shape[0] else G_hat.shape[-1]
        W_hat = W_hat.reshape(p_x, p_z)
        G_hat = G_hat.reshape(q, p_z)
        c = float(self.c)
        if psi.size != p_x:
            raise ValueError("psi and mu_x lengths differ")
        if p_x + q < 1:
            raise ValueError("model needs at least one observed variable")
        if not 1 <= p_z <= p_x + q:
            raise ValueError(f"latent dimension {p_z} outside 1..{p_x + q}")
        if np.any(~np.isfinite(psi)) or np.any(psi <= 0):
            raise ValueError("unique variances must be positive")
        if not np.isfinite(c) or c < 0:
            raise ValueError("c must be a finite nonnegative number")
        for name, arr in (("mu_x", mu_x), ("b", b), ("W_hat", W_hat), ("G_hat", G_hat)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        for name, mat in (("W_hat", W_hat), ("G_hat", G_hat)):
            norms = np.linalg.norm(mat, axis=1)
            if np.any(np.abs(norms - 1.0) > ROW_NORM_TOL):
                raise ValueError(f"rows of {name} must have unit norm")
        check_capacity(q)
        for name, arr in (("mu_x", mu_x), ("psi", psi), ("b", b), ("W_hat", W_hat), ("G_hat", G_hat)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "c", c)

    @classmethod
    def from_loadings(cls, mu_x, psi, b, c, W, G) -> "ModelParams":
        """Build params from unnormalized loading rows (normalized here)."""
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        W = np.asarray(W, dtype=float)
        G = np.asarray(G, dtype=float)
        p_z = W.shape[1] if W.ndim == 2 and W.shape[0] else G.shape[-1]
        W = W.reshape(psi.size, p_z)
        G = G.reshape(b.size, p_z)
        return cls(mu_x, psi, b, c, normalize_rows(W), normalize_rows(G))

    @classmethod
    def random(cls, p_x: int, q: int, p_z: int, rng, c=None, scale: float = 1.0) -> "ModelParams":
        rng = np.random.default_rng(rng)
        return cls.from_loadings(
            mu_x=rng.normal(0, scale, p_x),
            psi=np.exp(rng.normal(0, 0.5, p_x)),
            b=rng.normal(0, scale, q),
            c=float(rng.uniform(0.3, 1.5)) if c is None else c,
            W=rng.normal(size=(p_x, p_z)),
            G=rng.normal(size=(q, p_z)),
        )

    def replace(self, **changes) -> "ModelParams":
        fields_ = dict(
            mu_x=self.mu_x, psi=self.psi, b=self.b, c=self.c, W_hat=self.W_hat, G_hat=self.G_hat
        )
        fields_.update(changes)
        return ModelParams(**fields_)

    # dimensions
    @property
    def p_x(self) -> int:
        return self.mu_x.size

    @property
    def q(self) -> int:
        return self.b.size

    @property
    def p_z(self) -> int:
        return self.W_hat.shape[1]

    # derived quantities
    @cached_property
    def W(self) -> np.ndarray:
        return np.sqrt(self.psi)[:, None] * self.c * self.W_hat

    @cached_property
    def G(self) -> np.ndarray:
        return self.c * self.G_hat

    @cached_property
    def M(self) -> np.ndarray:
        return self.c * np.vstack([self.W_hat, self.G_hat])

    @cached_property
    def mu_z(self) -> np.ndarray:
        return -0.5 * self.G.sum(axis=0)

    @cached_property
    def WGt(self) -> np.ndarray:
        """Shift of the continuous mean per unit of each binary variable."""
        return self.W @ self.G.T

    @cached_property
    def sigma_x(self) -> np.ndarray:
        return np.diag(self.psi) + self.W @ self.W.T

    @cached_property
    def _chol_sigma_x(self) -> np.ndarray:
        return linalg.cholesky(self.sigma_x, lower=True)

    @cached_property
    def _logdet_sigma_x(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol_sigma_x))))

    @cached_property
    def _states(self) -> np.ndarray:
        return enumerate_states(self.q).astype(float)

    @cached_property
    def mixing(self) -> "MixingTable":
        return mixing_table(self)

    @cached_property
    def posterior_cov(self) -> np.ndarray:
        A = np.eye(self.p_z) + self.c ** 2 * self.W_hat.T @ self.W_hat
        cov = linalg.solve(A, np.eye(self.p_z), assume_a="pos")
        return 0.5 * (cov + cov.T)


# --------------------------------------------------------------------------
# mixing weights
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixingTable:
    """Log weights over the 2**q binary states, indexed by state integer."""

    log_pi: np.ndarray
    log_partition: float

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)


def state_energies(params: ModelParams, states: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized log weights ``1^T b + 1/2 |G^T 1|^2`` per state."""
    S = params._states if states is None else np.asarray(states, dtype=float)
    proj = S @ params.G
    return S @ params.b + 0.5 * np.sum(proj * proj, axis=1)


def mixing_table(params: ModelParams) -> MixingTable:
    e = state_energies(params)
    log_z = float(logsumexp(e))
    return MixingTable(e - log_z, log_z)


# --------------------------------------------------------------------------
# densities
# --------------------------------------------------------------------------


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs must be finite")


def _as_bits(params: ModelParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(params.q)
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("binary values must be 0 or 1")
    return y


def _gauss_logpdf_chol(r: np.ndarray, chol: np.ndarray, logdet: float) -> np.ndarray:
    """Log N(r | 0, L L^T) for r of shape (..., d)."""
    d = chol.shape[0]
    if d == 0:
        return np.zeros(r.shape[:-1])
    flat = r.reshape(-1, d)
    sol = linalg.solve_triangular(chol, flat.T, lower=True)
    quad = np.sum(sol * sol, axis=0).reshape(r.shape[:-1])
    return -0.5 * (d * LOG_2PI + logdet + quad)


def _as_blocks(params: ModelParams, X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[0] if X.ndim == 2 else Y.shape[0]
    return X.reshape(n, params.p_x), Y.reshape(n, params.q)


def complete_row_logdensity(params: ModelParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Vectorized ``log p(x_i, y_i)`` for complete rows."""
    X, Y = _as_blocks(params, X, Y)
    out = params.mixing.log_pi[state_indices(Y)] if params.q else np.zeros(X.shape[0])
    if params.p_x:
        r = X - params.mu_x - Y @ params.WGt.T
        out = out + _gauss_logpdf_chol(r, params._chol_sigma_x, params._logdet_sigma_x)
    return out


def log_joint_observed(params: ModelParams, x, y) -> float:
    """``log pi_y + log N(x | mu_x + W G^T y, Psi + W W^T)``."""
    x = np.asarray(x, dtype=float).reshape(params.p_x)
    y = _as_bits(params, y)
    _check_finite(x)
    return float(complete_row_logdensity(params, x[None], y[None])[0])


def _log_sigmoid_terms(y: np.ndarray, eta: np.ndarray) -> np.ndarray:
    # y*eta - log(1 + e^eta), overflow safe
    return y * eta - np.logaddexp(0.0, eta)


def log_conditional_given_z(params: ModelParams, x, y, z) -> float:
    """Gaussian-times-Bernoulli conditional density of (x, y) given z."""
    x = np.asarray(x, dtype=float).reshape(params.p_x)
    y = _as_bits(params, y)
    z = np.asarray(z, dtype=float).reshape(params.p_z)
    dz = z - params.mu_z
    out = 0.0
    if params.p_x:
        r = x - params.mu_x - params.W @ dz
        out += -0.5 * float(np.sum(LOG_2PI + np.log(params.psi) + r * r / params.psi))
    if params.q:
        eta = params.b + params.G @ dz
        out += float(np.sum(_log_sigmoid_terms(y, eta)))
    return out


def _std_normal_logpdf(r: np.ndarray) -> np.ndarray:
    d = r.shape[-1]
    return -0.5 * (d * LOG_2PI + np.sum(r * r, axis=-1))


def log_prior_z(params: ModelParams, z) -> float:
    """Log density of the Ising-weighted Gaussian mixture prior of z."""
    z = np.asarray(z, dtype=float).reshape(params.p_z)
    centers = params.mu_z + params._states @ params.G
    comps = params.mixing.log_pi + _std_normal_logpdf(z - centers)
    return float(logsumexp(comps))


@dataclass(frozen=True, eq=False)
class PosteriorResult:
    m: np.ndarray
    cov: np.ndarray

    def logpdf(self, z) -> float:
        z = np.asarray(z, dtype=float).reshape(self.m.size)
        chol = linalg.cholesky(self.cov, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return float(_gauss_logpdf_chol((z - self.m)[None], chol, logdet)[0])


def factor_scores(params: ModelParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Posterior means for complete rows, shape (N, p_z)."""
    X, Y = _as_blocks(params, X, Y)
    rhs = ((X - params.mu_x) / params.psi) @ params.W + Y @ params.G
    return params.mu_z + rhs @ params.posterior_cov


def posterior(params: ModelParams, x, y) -> PosteriorResult:
    """Gaussian posterior of z given a complete row."""
    x = np.asarray(x, dtype=float).reshape(params.p_x)
    y = _as_bits(params, y)
    _check_finite(x)
    m = factor_scores(params, x[None], y[None])[0]
    return PosteriorResult(m, params.posterior_cov)


def log_joint_full(params: ModelParams, x, z, y) -> float:
    """``log pi_y + log N(x | mu_x + W(z - mu_z), Psi) + log N(z | mu_z + G^T y, I)``."""
    x = np.asarray(x, dtype=float).reshape(params.p_x)
    y = _as_bits(params, y)
    z = np.asarray(z, dtype=float).reshape(params.p_z)
    out = float(params.mixing.log_pi[state_index(y)]) if params.q else 0.0
    if params.p_x:
        r = x - params.mu_x - params.W @ (z - params.mu_z)
        out += -0.5 * float(np.sum(LOG_2PI + np.log(params.psi) + r * r / params.psi))
    out += float(_std_normal_logpdf(z - params.mu_z - params.G.T @ y))
    return out


def log_marginal_partial(params: ModelParams, x, y) -> float:
    """Log density of the observed cells of a row; NaN marks a missing cell.

    Unobserved binary cells are summed out exactly and unobserved
    continuous cells are integrated out of the Gaussian.
    """
    x = np.asarray(x, dtype=float).reshape(params.p_x)
    y = np.asarray(y, dtype=float).reshape(params.q)
    xo = ~np.isnan(x)
    yo = ~np.isnan(y)
    if not xo.any() and not yo.any():
        raise ValueError("row has no observed cells")
    if np.any((y[yo] != 0.0) & (y[yo] != 1.0)):
        raise ValueError("binary values must be 0 or 1")
    S = params._states
    compatible = np.all(S[:, yo] == y[yo], axis=1)
    Sc = S[compatible]
    terms = params.mixing.log_pi[compatible] if params.q else np.zeros(1)
    if xo.any():
        K = np.flatnonzero(xo)
        sigma_kk = params.sigma_x[np.ix_(K, K)]
        chol = linalg.cholesky(sigma_kk, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        means = params.mu_x[K] + Sc @ params.WGt[K].T
        terms = terms + _gauss_logpdf_chol(x[K] - means, chol, logdet)
    return float(logsumexp(terms))


# --------------------------------------------------------------------------
# moments and sampling
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentSummary:
    """Model-implied means, covariance and correlation.

    Continuous variables come first, then binary variables as 0/1 dummies.
    ``corr`` is ``None`` when some variable has zero variance; call
    :meth:`correlation` to get the explicit error.
    """

    mean: np.ndarray
    cov: np.ndarray
    _corr: np.ndarray | None = field(default=None, repr=False)
    _degenerate: tuple[int, ...] = ()

    @property
    def corr(self) -> np.ndarray:
        return self.correlation()

    def correlation(self) -> np.ndarray:
        if self._degenerate:
            raise DegenerateCorrelationError(
                f"correlation undefined for variables {list(self._degenerate)} (zero variance)"
            )
        return self._corr


def cov_to_corr(cov: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return 0.5 * (corr + corr.T)


def model_moments(params: ModelParams) -> MomentSummary:
    p_x, q = params.p_x, params.q
    pi = params.mixing.pi
    S = params._states
    ey = pi @ S
    cov_y = (S * pi[:, None]).T @ S - np.outer(ey, ey)
    A = params.WGt
    ex = params.mu_x + A @ ey
    cov_x = params.sigma_x + A @ cov_y @ A.T
    cov_xy = A @ cov_y
    cov = np.block([[cov_x, cov_xy], [cov_xy.T, cov_y]]) if q and p_x else (cov_x if p_x else cov_y)
    cov = 0.5 * (cov + cov.T)
    mean = np.concatenate([ex, ey])
    var = np.diag(cov)
    degenerate = tuple(int(i) for i in np.flatnonzero(var <= 0))
    corr = None if degenerate else cov_to_corr(cov)
    return MomentSummary(mean, cov, corr, degenerate)


def sample(params: ModelParams, n: int, seed, schema: Schema | None = None) -> Dataset:
    """Draw a complete dataset of n rows from the observed distribution."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    schema = schema or Schema.simple(params.p_x, params.q)
    if params.q:
        cdf = np.cumsum(params.mixing.pi)
        u = rng.random(n) * cdf[-1]
        k = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
        y = params._states[k]
    else:
        y = np.zeros((n, 0))
    if params.p_x:
        eps = rng.standard_normal((n, params.p_x))
        x = params.mu_x + y @ params.WGt.T + eps @ params._chol_sigma_x.T
    else:
        x = np.zeros((n, 0))
    return Dataset(schema, x, y)


def sample_given_scores(params: ModelParams, z: np.ndarray, seed, schema: Schema | None = None) -> Dataset:
    """Draw one (x, y) per latent vector from the conditional given z."""
    rng = np.random.default_rng(seed)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = z.shape[0]
    dz = z - params.mu_z
    x = params.mu_x + dz @ params.W.T + rng.standard_normal((n, params.p_x)) * np.sqrt(params.psi)
    eta = params.b + dz @ params.G.T
    y = (rng.random((n, params.q)) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return Dataset(schema or Schema.simple(params.p_x, params.q), x, y)
