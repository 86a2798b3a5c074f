"""Synthetic mixed data and the experiment harnesses built on it.

Datasets are dichotomized multivariate normals whose correlation matrix is
drawn through a random spectral decomposition (Gamma eigenvalues and a
Gram-Schmidt orthonormal basis).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .baseline import empirical_corr, fit_quant, r_squared, reduce_dims, reproduced_corr
from .canon import canonicalize
from .core import Dataset, ModelParams, Schema, sample
from .fit import FitConfig, fit

MAX_RETRIES = 1000


class RetryLimitError(RuntimeError):
    pass


@dataclass
class SynthSpec:
    p_cont: int = 5
    p_bin: int = 5
    n: int = 1000
    n_datasets: int = 500
    gamma_shape: float = 1.0
    gamma_rate: float = 1.0
    seed: int = 0
    min_xy_corr: float = 0.5
    min_yy_corr: float = 0.5

    def __post_init__(self):
        if self.p_cont < 0 or self.p_bin < 0 or self.p_cont + self.p_bin < 1:
            raise ValueError("need at least one variable")
        if self.n < 1 or self.n_datasets < 1:
            raise ValueError("counts must be positive")
        if self.gamma_shape <= 0 or self.gamma_rate <= 0:
            raise ValueError("gamma parameters must be positive")
        for t in (self.min_xy_corr, self.min_yy_corr):
            if not 0 <= t < 1:
                raise ValueError("correlation thresholds must lie in [0, 1)")


@dataclass
class SamplingDistSpec:
    truth: ModelParams
    sizes: tuple[int, ...] = (1000, 3000, 9000)
    replicates: int = 1000
    seed: int = 0
    config: FitConfig = field(default_factory=lambda: FitConfig(n_restarts=5))

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if list(self.sizes) != sorted(self.sizes):
            raise ValueError("sizes must be ascending")


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def gram_schmidt(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormalize the columns of A (modified Gram-Schmidt)."""
    Q = np.array(A, dtype=float)
    for j in range(Q.shape[1]):
        for i in range(j):
            Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
        nrm = np.linalg.norm(Q[:, j])
        if nrm < tol:
            raise np.linalg.LinAlgError("Gram-Schmidt breakdown on a rank-deficient draw")
        Q[:, j] /= nrm
    return Q


def gen_correlation_matrix(p: int, rng, shape: float = 1.0, rate: float = 1.0) -> np.ndarray:
    if p < 1:
        raise ValueError("p must be positive")
    rng = np.random.default_rng(rng)
    for _ in range(MAX_RETRIES):
        lam = rng.gamma(shape, 1.0 / rate, size=p)
        if np.min(lam) < 1e-10:
            continue
        try:
            Q = gram_schmidt(rng.standard_normal((p, p)))
        except np.linalg.LinAlgError:
            continue
        S = (Q * lam) @ Q.T
        d = np.sqrt(np.diag(S))
        R = S / np.outer(d, d)
        R = 0.5 * (R + R.T)
        np.fill_diagonal(R, 1.0)
        if np.linalg.eigvalsh(R)[0] > 1e-10:
            return R
    raise RetryLimitError("could not draw a positive definite correlation matrix")


@dataclass
class MixedDataTruth:
    corr: np.ndarray
    quantiles: np.ndarray
    thresholds: np.ndarray
    attempts: int


def _rejection_reason(data: Dataset, spec: SynthSpec) -> str:
    ym = data.y.mean(axis=0)
    if np.any((ym == 0) | (ym == 1)):
        return "binary column with mean 0 or 1"
    if spec.p_bin == 0:
        return ""
    R = empirical_corr(data)
    pc = spec.p_cont
    xy = np.abs(R[:pc, pc:]).max(initial=0.0)
    yy_block = np.abs(R[pc:, pc:] - np.eye(spec.p_bin))
    yy = yy_block.max(initial=0.0)
    if not (xy > spec.min_xy_corr and yy > spec.min_yy_corr):
        return f"max |corr(x,y)|={xy:.3f}, max |corr(y,y)|={yy:.3f} below thresholds"
    return ""


def gen_mixed_dataset(spec: SynthSpec, rng, quantiles=None) -> tuple[Dataset, MixedDataTruth]:
    """Draw one accepted dataset: the last p_bin columns are dichotomized.

    ``quantiles`` fixes the threshold quantile levels instead of drawing
    them from Unif(0, 1).
    """
    if quantiles is not None:
        quantiles = np.broadcast_to(np.asarray(quantiles, dtype=float), (spec.p_bin,))
        if np.any((quantiles <= 0) | (quantiles >= 1)):
            raise ValueError("quantile levels must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    p = spec.p_cont + spec.p_bin
    schema = Schema.simple(spec.p_cont, spec.p_bin)
    reason = ""
    for attempt in range(1, MAX_RETRIES + 1):
        R = gen_correlation_matrix(p, rng, spec.gamma_shape, spec.gamma_rate)
        Z = rng.standard_normal((spec.n, p)) @ np.linalg.cholesky(R).T
        u = rng.uniform(0.0, 1.0, spec.p_bin) if quantiles is None else quantiles.copy()
        thr = norm.ppf(u)
        Y = (Z[:, spec.p_cont :] > thr).astype(float)
        data = Dataset(schema, Z[:, : spec.p_cont], Y)
        reason = _rejection_reason(data, spec)
        if not reason:
            return data, MixedDataTruth(R, u, thr, attempt)
    raise RetryLimitError(f"no dataset accepted after {MAX_RETRIES} draws; last rejection: {reason}")


def iter_mixed_datasets(spec: SynthSpec):
    for d in range(spec.n_datasets):
        yield d, gen_mixed_dataset(spec, _rng(spec.seed, d))


def planted_truth(
    p_x: int,
    q: int,
    p_z: int,
    c: float,
    seed: int = 0,
    min_gap: float = 0.2,
    bias_scale: float = 0.5,
    min_marginal: float = 0.05,
) -> ModelParams:
    """Random canonical model with a clear eigengap, for recovery experiments.

    Relative gaps between consecutive eigenvalues of ``M_hat^T M_hat`` are at
    least ``min_gap`` and every column sum of ``M_hat`` is at least 0.5, so
    the canonical form is stable under estimation noise. Every binary
    marginal P(y_j = 1) lies in ``[min_marginal, 1 - min_marginal]`` so that
    moderate samples do not produce constant columns.
    """
    rng = _rng(seed, p_x, q, p_z)
    for _ in range(MAX_RETRIES):
        params = ModelParams.from_loadings(
            mu_x=rng.normal(0.0, 1.0, p_x),
            psi=np.exp(rng.normal(0.0, 0.3, p_x)),
            b=rng.normal(0.0, bias_scale, q),
            c=c,
            W=rng.normal(size=(p_x, p_z)),
            G=rng.normal(size=(q, p_z)),
        )
        cm = canonicalize(params)
        w = cm.omega_sq
        gaps = -np.diff(w) / w[:-1] if p_z > 1 else np.ones(1)
        sums = np.vstack([cm.params.W_hat, cm.params.G_hat]).sum(axis=0)
        ey = cm.params.mixing.pi @ cm.params._states if q else np.full(0, 0.5)
        balanced = np.all((ey >= min_marginal) & (ey <= 1 - min_marginal))
        if np.all(gaps >= min_gap) and np.all(sums >= 0.5) and balanced:
            return cm.params
    raise RetryLimitError("no truth model met the eigengap and column-sum guards")


# --------------------------------------------------------------------------
# correlation reproducibility
# --------------------------------------------------------------------------


@dataclass
class ReproReport:
    summary: list[dict]
    pairs: list[dict]
    failures: list[dict]

    def mean_r2(self, model: str, p_z: int) -> float:
        vals = [r["r2"] for r in self.summary if r["model"] == model and r["p_z"] == p_z]
        return float(np.mean(vals)) if vals else float("nan")


def _pair_type(i: int, j: int, p_cont: int) -> str:
    kinds = sorted("bin" if k >= p_cont else "cont" for k in (i, j))
    return "-".join(("cont", "bin") if kinds == ["bin", "cont"] else kinds)


MODELS = ("proposed", "quant", "quant_reduced")


def run_reproducibility_experiment(
    spec: SynthSpec,
    p_z_list=(1, 2, 3),
    config: FitConfig | None = None,
    full_dims: int | None = None,
    keep_pairs: bool = True,
) -> ReproReport:
    """Fit the proposed and quantified models per dataset and compare R^2.

    ``full_dims`` is the latent dimension of the quantified fit that gets
    reduced (default: all variables).
    """
    config = config or FitConfig(n_restarts=5)
    p = spec.p_cont + spec.p_bin
    full = p if full_dims is None else full_dims
    summary, pairs, failures = [], [], []
    ii, jj = np.tril_indices(p, k=-1)
    for d in range(spec.n_datasets):
        try:
            data, _ = gen_mixed_dataset(spec, _rng(spec.seed, d))
        except RetryLimitError as exc:
            failures.append({"dataset": d, "model": "", "p_z": 0, "error": str(exc)})
            continue
        r_emp = empirical_corr(data)
        ymean = data.y.mean(axis=0)
        var = np.concatenate([np.full(spec.p_cont, np.nan), ymean * (1 - ymean)])
        low = np.concatenate([np.zeros(spec.p_cont, bool), (ymean < 0.1) | (ymean > 0.9)])
        try:
            full_model = fit_quant(data, full, config)
        except Exception as exc:  # recorded, experiment continues
            full_model = None
            failures.append({"dataset": d, "model": "quant_full", "p_z": full, "error": str(exc)})
        for p_z in p_z_list:
            for model in MODELS:
                try:
                    if model == "proposed":
                        corr = reproduced_corr(fit(data, p_z, config).params)
                    elif model == "quant":
                        corr = reproduced_corr(fit_quant(data, p_z, config))
                    else:
                        if full_model is None:
                            raise RuntimeError("full quantified fit failed")
                        corr = reproduced_corr(reduce_dims(full_model, min(p_z, full_model.p_z)))
                    r2 = r_squared(r_emp, corr)
                except Exception as exc:  # recorded, experiment continues
                    failures.append({"dataset": d, "model": model, "p_z": p_z, "error": str(exc)})
                    continue
                summary.append({"dataset": d, "model": model, "p_z": p_z, "r2": r2})
                if not keep_pairs:
                    continue
                for i, j in zip(ii, jj):
                    pv = var[[i, j]]
                    pv = pv[~np.isnan(pv)]
                    pairs.append(
                        {
                            "dataset": d,
                            "model": model,
                            "p_z": p_z,
                            "i": int(i),
                            "j": int(j),
                            "pair_type": _pair_type(int(i), int(j), spec.p_cont),
                            "binary_variance": float(pv.min()) if pv.size else float("nan"),
                            "low_variance": bool(low[i] or low[j]),
                            "r_empirical": float(r_emp[i, j]),
                            "r_model": float(corr[i, j]),
                        }
                    )
    return ReproReport(summary, pairs, failures)


# --------------------------------------------------------------------------
# sampling distribution of the estimates
# --------------------------------------------------------------------------


def param_names(p_x: int, q: int, p_z: int) -> list[str]:
    names = [f"mu_x[{j}]" for j in range(p_x)] + [f"psi[{j}]" for j in range(p_x)]
    names += [f"b[{j}]" for j in range(q)] + ["c"]
    names += [f"W_hat[{j},{k}]" for j in range(p_x) for k in range(p_z)]
    names += [f"G_hat[{j},{k}]" for j in range(q) for k in range(p_z)]
    return names


def param_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate(
        [params.mu_x, params.psi, params.b, [params.c], params.W_hat.ravel(), params.G_hat.ravel()]
    )


@dataclass
class SamplingDistResult:
    names: list[str]
    truth: np.ndarray
    sizes: tuple[int, ...]
    estimates: dict  # size -> (replicates, n_params), NaN rows for failures
    failures: list[dict]

    def median_abs_error(self) -> np.ndarray:
        """Shape (len(sizes), n_params)."""
        return np.array(
            [np.nanmedian(np.abs(self.estimates[s] - self.truth), axis=0) for s in self.sizes]
        )


def run_sampling_distribution(spec: SamplingDistSpec) -> SamplingDistResult:
    truth = canonicalize(spec.truth).params
    tvec = param_vector(truth)
    estimates = {}
    failures = []
    for si, n in enumerate(spec.sizes):
        est = np.full((spec.replicates, tvec.size), np.nan)
        for rep in range(spec.replicates):
            data = sample(truth, n, _rng(spec.seed, si, rep))
            cfg = FitConfig(**{**spec.config.__dict__, "seed": int(_rng(spec.seed, si, rep, 1).integers(2**31))})
            try:
                res = fit(data, truth.p_z, cfg)
                est[rep] = param_vector(canonicalize(res.params).params)
            except Exception as exc:  # recorded, experiment continues
                failures.append({"size": n, "replicate": rep, "error": str(exc)})
        estimates[n] = est
    return SamplingDistResult(param_names(truth.p_x, truth.q, truth.p_z), tvec, spec.sizes, estimates, failures)
