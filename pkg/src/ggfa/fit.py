"""Norm-constrained maximum-likelihood estimation.

The constrained parameters are reached through an unconstrained
reparameterization (:class:`FreeParams`): positive quantities are
exponentiated and loading rows are normalized, so every point of the free
space maps to a valid :class:`~ggfa.core.ModelParams`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .core import (
    LOG_2PI,
    Dataset,
    ModelParams,
    check_capacity,
    complete_row_logdensity,
    enumerate_states,
    log_marginal_partial,
)
from .optim import minimize_lbfgs

PSI_FLOOR_FACTOR = 1e-8
MIN_ROW_NORM = 1e-8


class FitError(RuntimeError):
    """Raised when every restart of an optimization failed."""


# --------------------------------------------------------------------------
# free parameterization
# --------------------------------------------------------------------------


@dataclass
class FreeParams:
    mu_x: np.ndarray
    log_psi: np.ndarray
    b: np.ndarray
    rho: float
    V_w: np.ndarray
    V_g: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.mu_x.size, self.b.size, self.V_w.shape[1]

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.mu_x, self.log_psi, self.b, [self.rho], self.V_w.ravel(), self.V_g.ravel()]
        )

    @classmethod
    def unpack(cls, theta: np.ndarray, p_x: int, q: int, p_z: int) -> "FreeParams":
        theta = np.asarray(theta, dtype=float)
        i = 0

        def take(n):
            nonlocal i
            out = theta[i : i + n]
            i += n
            return out

        mu_x, log_psi, b = take(p_x), take(p_x), take(q)
        rho = float(take(1)[0])
        V_w = take(p_x * p_z).reshape(p_x, p_z)
        V_g = take(q * p_z).reshape(q, p_z)
        if i != theta.size:
            raise ValueError("parameter vector has the wrong length")
        return cls(mu_x.copy(), log_psi.copy(), b.copy(), rho, V_w.copy(), V_g.copy())

    @classmethod
    def from_model(cls, params: ModelParams) -> "FreeParams":
        return cls(
            params.mu_x.copy(),
            np.log(params.psi),
            params.b.copy(),
            math.log(params.c) if params.c > 0 else -50.0,
            params.W_hat.copy(),
            params.G_hat.copy(),
        )

    def to_model(self) -> ModelParams:
        V = np.vstack([self.V_w, self.V_g])
        norms = np.linalg.norm(V, axis=1)
        if np.any(norms < MIN_ROW_NORM):
            raise ValueError("a loading row has collapsed to zero norm")
        p_x = self.mu_x.size
        Vn = V / norms[:, None]
        return ModelParams(
            self.mu_x, np.exp(self.log_psi), self.b, math.exp(self.rho), Vn[:p_x], Vn[p_x:]
        )


def n_free_coords(p_x: int, q: int, p_z: int) -> int:
    return 2 * p_x + q + 1 + (p_x + q) * p_z


# --------------------------------------------------------------------------
# configuration and results
# --------------------------------------------------------------------------


@dataclass
class FitConfig:
    n_restarts: int = 100
    seed: int = 0
    max_iters: int = 2000
    grad_tol: float = 1e-6
    rel_ll_tol: float = 1e-9
    init_scale: float = 0.5

    def __post_init__(self):
        for name in ("n_restarts", "max_iters", "grad_tol", "rel_ll_tol", "init_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FitResult:
    params: ModelParams
    log_lik: float
    bic: float
    n_params: int
    restart_logliks: np.ndarray
    best_restart: int
    iterations: int
    converged: bool
    traces: list = field(default_factory=list, repr=False)
    floor_active: bool = False
    n_obs: int = 0
    seed: int = 0


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------


@dataclass
class _Group:
    rows: np.ndarray
    K: np.ndarray
    X: np.ndarray
    states: np.ndarray  # (n_g, m) state indices compatible with each row


class Objective:
    """Log-likelihood and its gradient over :class:`FreeParams` coordinates.

    Rows are grouped by missing-data pattern; each row contributes a
    log-sum-exp over the binary completions compatible with its observed
    cells.
    """

    def __init__(self, dataset: Dataset, p_z: int):
        self.p_x, self.q = dataset.schema.p_x, dataset.schema.q
        self.p_z = p_z
        self.n = dataset.n
        check_capacity(self.q)
        self.S = enumerate_states(self.q).astype(float)
        self.groups = self._build_groups(dataset)
        var = np.nanvar(dataset.x, axis=0) if self.p_x else np.zeros(0)
        var = np.where(np.isfinite(var) & (var > 0), var, 1.0)
        self.col_var = var
        self.log_psi_floor = np.log(PSI_FLOOR_FACTOR * var)

    def _build_groups(self, dataset: Dataset) -> list[_Group]:
        xm, ym = dataset.x_mask, dataset.y_mask
        if np.any(~xm.any(axis=1) & ~ym.any(axis=1)):
            raise ValueError("dataset contains a row with no observed cells")
        keys = np.hstack([xm, ym]).astype(np.uint8)
        patterns, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        weights = 1 << np.arange(self.q)
        groups = []
        for gi, pat in enumerate(patterns):
            rows = np.flatnonzero(inverse == gi)
            K = np.flatnonzero(pat[: self.p_x])
            T = np.flatnonzero(pat[self.p_x :])
            U = np.setdiff1d(np.arange(self.q), T)
            yT = dataset.y[np.ix_(rows, T)].astype(np.int64)
            base = (yT * weights[T]).sum(axis=1) if T.size else np.zeros(rows.size, np.int64)
            fill = enumerate_states(U.size).astype(np.int64) @ weights[U] if U.size else np.zeros(1, np.int64)
            states = base[:, None] + fill[None, :]
            groups.append(_Group(rows, K, dataset.x[np.ix_(rows, K)], states))
        return groups

    @property
    def size(self) -> int:
        return n_free_coords(self.p_x, self.q, self.p_z)

    def lower_bounds(self) -> np.ndarray:
        lo = np.full(self.size, -np.inf)
        lo[self.p_x : 2 * self.p_x] = self.log_psi_floor
        return lo

    def value_and_grad(self, theta: np.ndarray, need_grad: bool = True):
        p_x, q, p_z = self.p_x, self.q, self.p_z
        fp = FreeParams.unpack(theta, p_x, q, p_z)
        psi = np.exp(fp.log_psi)
        sqpsi = np.sqrt(psi)
        c = math.exp(fp.rho)
        nw = np.linalg.norm(fp.V_w, axis=1, keepdims=True)
        ng = np.linalg.norm(fp.V_g, axis=1, keepdims=True)
        What = fp.V_w / nw
        Ghat = fp.V_g / ng
        W = sqpsi[:, None] * c * What
        G = c * Ghat
        A = W @ G.T
        Sigma = np.diag(psi) + W @ W.T

        S = self.S
        SG = S @ G
        energy = S @ fp.b + 0.5 * np.sum(SG * SG, axis=1)
        log_z = logsumexp(energy)
        log_pi = energy - log_z

        ll = 0.0
        w_state = np.zeros(S.shape[0])
        d_mu = np.zeros(p_x)
        d_A = np.zeros((p_x, q))
        d_Sigma = np.zeros((p_x, p_x))

        for g in self.groups:
            n_g, m = g.states.shape
            lp = log_pi[g.states]
            nk = g.K.size
            if nk:
                sig_kk = Sigma[np.ix_(g.K, g.K)]
                chol = linalg.cholesky(sig_kk, lower=True)
                inv_kk = linalg.cho_solve((chol, True), np.eye(nk))
                logdet = 2.0 * np.sum(np.log(np.diag(chol)))
                A_k = A[g.K]
                if m == 1:
                    Yg = S[g.states[:, 0]]
                    r = g.X - fp.mu_x[g.K] - Yg @ A_k.T
                    u = r @ inv_kk
                    quad = np.sum(r * u, axis=1)
                    lp = lp - 0.5 * (quad + logdet + nk * LOG_2PI)[:, None]
                else:
                    Yg = S[g.states]
                    r = g.X[:, None, :] - fp.mu_x[g.K] - Yg @ A_k.T
                    u = r @ inv_kk
                    quad = np.sum(r * u, axis=2)
                    lp = lp - 0.5 * (quad + logdet + nk * LOG_2PI)
            if m == 1:
                row_ll = lp[:, 0]
                gam = np.ones((n_g, 1))
            else:
                row_ll = logsumexp(lp, axis=1)
                gam = np.exp(lp - row_ll[:, None])
            ll += float(np.sum(row_ll))
            if not need_grad:
                continue
            w_state += np.bincount(g.states.ravel(), weights=gam.ravel(), minlength=S.shape[0])
            if nk:
                if m == 1:
                    d_mu[g.K] += u.sum(axis=0)
                    d_A[g.K] += u.T @ Yg
                    d_Sigma[np.ix_(g.K, g.K)] += -0.5 * n_g * inv_kk + 0.5 * (u.T @ u)
                else:
                    gu = gam[:, :, None] * u
                    d_mu[g.K] += gu.sum(axis=(0, 1))
                    d_A[g.K] += np.einsum("nmk,nmq->kq", gu, Yg)
                    d_Sigma[np.ix_(g.K, g.K)] += -0.5 * n_g * inv_kk + 0.5 * np.einsum(
                        "nmk,nml->kl", gu, u
                    )
        if not need_grad:
            return ll

        delta = w_state - self.n * np.exp(log_pi)
        d_b = S.T @ delta
        d_G = (S * delta[:, None]).T @ SG + d_A.T @ W
        d_W = d_A @ G + 2.0 * d_Sigma @ W
        d_psi = np.diag(d_Sigma) + np.sum(d_W * c * What, axis=1) * 0.5 / sqpsi
        d_c = np.sum(d_W * sqpsi[:, None] * What) + np.sum(d_G * Ghat)
        d_What = d_W * (sqpsi[:, None] * c)
        d_Ghat = d_G * c
        d_Vw = (d_What - What * np.sum(d_What * What, axis=1, keepdims=True)) / nw
        d_Vg = (d_Ghat - Ghat * np.sum(d_Ghat * Ghat, axis=1, keepdims=True)) / ng
        grad = np.concatenate(
            [d_mu, d_psi * psi, d_b, [d_c * c], d_Vw.ravel(), d_Vg.ravel()]
        )
        return ll, grad


# --------------------------------------------------------------------------
# likelihood API
# --------------------------------------------------------------------------


def _check_dims(dataset: Dataset, params: ModelParams) -> None:
    if dataset.schema.p_x != params.p_x or dataset.schema.q != params.q:
        raise ValueError(
            f"dataset has (p_x={dataset.schema.p_x}, q={dataset.schema.q}) but model has "
            f"(p_x={params.p_x}, q={params.q})"
        )


def row_log_likelihoods(dataset: Dataset, params: ModelParams) -> np.ndarray:
    _check_dims(dataset, params)
    complete = dataset.x_mask.all(axis=1) & dataset.y_mask.all(axis=1)
    out = np.empty(dataset.n)
    if complete.any():
        out[complete] = complete_row_logdensity(params, dataset.x[complete], dataset.y[complete])
    for i in np.flatnonzero(~complete):
        out[i] = log_marginal_partial(params, dataset.x[i], dataset.y[i])
    return out


def log_likelihood(dataset: Dataset, params: ModelParams) -> float:
    """Sum of per-row log densities (compensated summation, input order)."""
    return math.fsum(row_log_likelihoods(dataset, params))


def grad_log_likelihood(dataset: Dataset, free: FreeParams) -> np.ndarray:
    """Gradient of the log-likelihood with respect to packed free coordinates."""
    p_x, q, p_z = free.shape
    obj = Objective(dataset, p_z)
    if (obj.p_x, obj.q) != (p_x, q):
        raise ValueError("free parameters do not match the dataset")
    return obj.value_and_grad(free.pack())[1]


def count_free_params(p_x: int, q: int, p_z: int) -> int:
    """Parameter count used by BIC: means, variances, biases, c, unit rows, minus rotations."""
    return p_x + p_x + q + 1 + (p_x + q) * p_z - (p_x + q) - p_z * (p_z - 1) // 2


def bic(log_lik: float, n_params: int, n: int) -> float:
    if n < 1:
        raise ValueError("N must be at least 1")
    return -2.0 * log_lik + n_params * math.log(n)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def validate_for_fit(dataset: Dataset, p_z: int) -> None:
    p_x, q = dataset.schema.p_x, dataset.schema.q
    if not 1 <= p_z <= p_x + q:
        raise ValueError(f"latent dimension {p_z} outside 1..{p_x + q}")
    if dataset.n < p_x + q:
        raise ValueError(f"need at least {p_x + q} rows, got {dataset.n}")
    names = dataset.schema.binary_names
    for j in range(q):
        col = dataset.y[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0 or np.all(col == col[0]):
            raise ValueError(f"binary column {names[j]!r} is constant across observed cells")
    for j, name in enumerate(dataset.schema.continuous_names):
        if not np.any(~np.isnan(dataset.x[:, j])):
            raise ValueError(f"continuous column {name!r} has no observed cells")


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(restart)]))


def initial_free_params(obj: Objective, dataset: Dataset, rng: np.random.Generator, scale: float) -> FreeParams:
    p_x, q, p_z = obj.p_x, obj.q, obj.p_z
    rho = float(rng.normal(0.0, scale))
    c2 = math.exp(2 * rho)
    mu = np.nanmean(dataset.x, axis=0) if p_x else np.zeros(0)
    log_psi = np.maximum(np.log(obj.col_var) - math.log1p(c2), obj.log_psi_floor)
    b = rng.normal(0.0, scale, q)
    V = rng.normal(0.0, scale, (p_x + q, p_z))
    for i in range(V.shape[0]):
        while np.linalg.norm(V[i]) < MIN_ROW_NORM:
            V[i] = rng.normal(0.0, scale, p_z)
    return FreeParams(mu, log_psi, b, rho, V[:p_x], V[p_x:])


@dataclass
class RestartOutcome:
    free: FreeParams | None
    log_lik: float
    trace: np.ndarray
    iterations: int
    converged: bool
    message: str


SIGN_PROBE_ITERS = 50
PROBE_MIN_RHO = math.log(0.5)


def _sign_search(obj: Objective, res, minimize):
    """Greedy row-sign flips for one latent dimension.

    With p_z = 1 every loading row is +-1 and the projected gradient
    vanishes, so the optimizer alone cannot change a row's sign.  Each
    candidate flip gets a short re-optimization (means and biases must
    adapt before a flip can pay off); the best improving one is kept.
    Probes restart c from at least 0.5, since a flip is invisible at c = 0
    and c collapses towards 0 under a poor sign pattern.
    """
    i_rho = 2 * obj.p_x + obj.q
    start = i_rho + 1
    traces = [res.trace]
    iterations = res.iterations
    for _ in range(2 * (obj.p_x + obj.q)):
        best = None
        for j in range(obj.p_x + obj.q):
            theta = res.x.copy()
            theta[start + j] = -theta[start + j]
            theta[i_rho] = max(theta[i_rho], PROBE_MIN_RHO)
            probe = minimize(theta, SIGN_PROBE_ITERS)
            if probe.fun < res.fun - 1e-10 * max(1.0, abs(res.fun)) and (best is None or probe.fun < best.fun):
                best = probe
        if best is None:
            break
        res = minimize(best.x, None)
        traces.append(res.trace)  # starts below the previous optimum
        iterations += best.iterations + res.iterations
    res.trace = np.concatenate(traces)
    res.iterations = iterations
    return res


def run_restart(obj: Objective, dataset: Dataset, config: FitConfig, restart: int, start: FreeParams | None = None) -> RestartOutcome:
    rng = restart_rng(config.seed, restart)
    free0 = start or initial_free_params(obj, dataset, rng, config.init_scale)
    n = obj.n

    def fun(theta):
        try:
            ll, g = obj.value_and_grad(theta)
        except (OverflowError, FloatingPointError, linalg.LinAlgError, ValueError):
            # trial point outside the representable region; the line search backs off
            return np.inf, np.full(theta.size, np.nan)
        return -ll / n, -g / n

    def minimize(theta0, max_iters=None):
        return minimize_lbfgs(
            fun,
            theta0,
            lower=obj.lower_bounds(),
            max_iters=min(max_iters or config.max_iters, config.max_iters),
            grad_tol=config.grad_tol,
            rel_tol=config.rel_ll_tol,
        )

    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            res = minimize(free0.pack())
            if obj.p_z == 1 and obj.p_x + obj.q > 1:
                res = _sign_search(obj, res, minimize)
    except (FloatingPointError, linalg.LinAlgError, ValueError) as exc:
        return RestartOutcome(None, -np.inf, np.zeros(0), 0, False, f"diverged: {exc}")
    free = FreeParams.unpack(res.x, obj.p_x, obj.q, obj.p_z)
    return RestartOutcome(free, -res.fun * n, -res.trace * n, res.iterations, res.converged, res.message)


def fit(dataset: Dataset, p_z: int, config: FitConfig | None = None, start: ModelParams | None = None) -> FitResult:
    """Multi-start maximum likelihood; returns the best restart (not canonicalized).

    With ``start`` given, restart 0 begins from those parameters instead of
    a random draw.
    """
    config = config or FitConfig()
    validate_for_fit(dataset, p_z)
    obj = Objective(dataset, p_z)
    outcomes = []
    for r in range(config.n_restarts):
        init = FreeParams.from_model(start) if (start is not None and r == 0) else None
        outcomes.append(run_restart(obj, dataset, config, r, init))

    logliks = np.full(len(outcomes), -np.inf)
    models: list[ModelParams | None] = []
    for r, out in enumerate(outcomes):
        model = None
        if out.free is not None:
            try:
                model = out.free.to_model()
            except ValueError:
                model = None
            else:
                logliks[r] = log_likelihood(dataset, model)
        if model is not None and not np.isfinite(logliks[r]):
            model = None
            logliks[r] = -np.inf
        models.append(model)
    if not np.any(np.isfinite(logliks)):
        reasons = sorted({o.message for o in outcomes})
        raise FitError(f"all {len(outcomes)} restarts failed: {'; '.join(reasons)}")

    best = int(np.argmax(logliks))
    params = models[best]
    floor_active = bool(np.any(np.log(params.psi) <= obj.log_psi_floor + 1e-9)) if params.p_x else False
    if floor_active:
        warnings.warn("unique-variance floor is active in the best solution", RuntimeWarning, stacklevel=2)
    k = count_free_params(dataset.schema.p_x, dataset.schema.q, p_z)
    return FitResult(
        params=params,
        log_lik=float(logliks[best]),
        bic=bic(float(logliks[best]), k, dataset.n),
        n_params=k,
        restart_logliks=logliks,
        best_restart=best,
        iterations=outcomes[best].iterations,
        converged=outcomes[best].converged,
        traces=[o.trace for o in outcomes],
        floor_active=floor_active,
        n_obs=dataset.n,
        seed=config.seed,
    )


@dataclass
class BicRow:
    p_z: int
    log_lik: float
    bic: float
    n_params: int
    error: str = ""


@dataclass
class BicScan:
    rows: list[BicRow]
    best_p_z: int | None
    fits: dict = field(default_factory=dict, repr=False)


def bic_scan(dataset: Dataset, p_z_range, config: FitConfig | None = None) -> BicScan:
    """Fit each latent dimension; argmin BIC with ties going to the smaller p_z."""
    rows = []
    fits = {}
    for p_z in p_z_range:
        try:
            res = fit(dataset, int(p_z), config)
        except (ValueError, FitError) as exc:
            rows.append(BicRow(int(p_z), float("nan"), float("nan"), 0, str(exc)))
            continue
        fits[int(p_z)] = res
        rows.append(BicRow(int(p_z), res.log_lik, res.bic, res.n_params))
    ok = [r for r in rows if not r.error]
    best = min(ok, key=lambda r: (r.bic, r.p_z)).p_z if ok else None
    return BicScan(rows, best, fits)
