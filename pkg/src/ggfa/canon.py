"""Canonical rotation of the loadings, contribution ratios and communalities.

The likelihood is invariant under ``M -> M R`` for orthogonal ``R``.  The
canonical gauge picks the rotation that diagonalizes ``M^T M`` with
eigenvalues in descending order and makes every column sum of ``M``
nonnegative; for nondegenerate eigenvalues that choice is unique.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ModelParams

DEGENERACY_RTOL = 1e-8
ZERO_SUM_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class CanonicalModel:
    params: ModelParams
    omega_sq: np.ndarray
    P: np.ndarray
    C: np.ndarray
    h: np.ndarray
    rotation: np.ndarray
    unique: bool = True
    notes: tuple[str, ...] = ()


def _resolve_sign(col: np.ndarray) -> tuple[float, bool]:
    """Sign making the column sum nonnegative; flags a zero-sum tie."""
    s = col.sum()
    scale = max(1.0, float(np.abs(col).sum()))
    if abs(s) > ZERO_SUM_ATOL * scale:
        return (1.0 if s > 0 else -1.0), False
    big = col[np.argmax(np.abs(col))] if col.size else 1.0
    return (1.0 if big >= 0 else -1.0), True


def canonical_rotation(M_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Rotation R and eigenvalues of ``M_hat^T M_hat`` (descending) for the canonical gauge."""
    p_z = M_hat.shape[1]
    evals, evecs = np.linalg.eigh(M_hat.T @ M_hat)
    order = np.argsort(-evals, kind="stable")
    evals = np.clip(evals[order], 0.0, None)
    R = evecs[:, order]
    notes = []

    top = evals[0] if p_z else 0.0
    # tie-break inside (near-)degenerate blocks: first row of M.v descending
    i = 0
    while i < p_z:
        j = i + 1
        while j < p_z and evals[j - 1] - evals[j] < DEGENERACY_RTOL * max(top, 1e-300):
            j += 1
        if j - i > 1:
            if evals[i] > DEGENERACY_RTOL * max(top, 1e-300):
                notes.append("canonical form not unique: degenerate eigenvalues")
            else:
                notes.append("canonical form not unique: zero eigenvalues")
            block = R[:, i:j].copy()
            signs = np.array([_resolve_sign(M_hat @ block[:, k])[0] for k in range(j - i)])
            block = block * signs
            key = (M_hat[:1] @ block).ravel() if M_hat.shape[0] else np.zeros(j - i)
            R[:, i:j] = block[:, np.argsort(-key, kind="stable")]
        i = j

    for k in range(p_z):
        sign, tie = _resolve_sign(M_hat @ R[:, k])
        if tie:
            notes.append(f"column {k + 1} has zero sum; sign fixed by largest entry")
        R[:, k] *= sign
    return R, evals, notes


def rotate(params: ModelParams, R: np.ndarray) -> ModelParams:
    """Apply a latent rotation to the normalized loadings."""
    R = np.asarray(R, dtype=float)
    W = params.W_hat @ R
    G = params.G_hat @ R
    # rotations preserve row norms; renormalize to scrub rounding
    if W.size:
        W = W / np.linalg.norm(W, axis=1, keepdims=True)
    if G.size:
        G = G / np.linalg.norm(G, axis=1, keepdims=True)
    return params.replace(W_hat=W, G_hat=G)


def contribution_ratios(omega_sq) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(omega_sq, dtype=float)
    if np.any(w < 0):
        raise ValueError("eigenvalues must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("contribution ratios undefined when all eigenvalues are zero")
    P = w / total
    C = np.cumsum(P)
    return P, C


def communalities_from_norms(row_norms) -> np.ndarray:
    """``h = sqrt(C^2 / (1 + C^2))`` for dimensionless loading row norms C."""
    c2 = np.asarray(row_norms, dtype=float) ** 2
    return np.sqrt(c2 / (1.0 + c2))


def communalities(params: ModelParams) -> np.ndarray:
    """Per continuous feature; constant under the norm constraint."""
    if params.p_x < 1:
        raise ValueError("communalities need at least one continuous variable")
    Wt = params.W / np.sqrt(params.psi)[:, None]
    return communalities_from_norms(np.linalg.norm(Wt, axis=1))


def canonicalize(params: ModelParams) -> CanonicalModel:
    M_hat = np.vstack([params.W_hat, params.G_hat])
    R, evals, notes = canonical_rotation(M_hat)
    rotated = rotate(params, R)
    omega_sq = params.c ** 2 * evals
    if omega_sq.sum() > 0:
        P, C = contribution_ratios(omega_sq)
    else:
        P = C = np.full(params.p_z, np.nan)
        notes.append("contribution ratios undefined for c = 0")
    h = communalities(rotated) if params.p_x else np.zeros(0)
    unique = not any(n.startswith("canonical form not unique") or "zero sum" in n for n in notes)
    if not unique:
        warnings.warn("; ".join(notes), RuntimeWarning, stacklevel=2)
    return CanonicalModel(rotated, omega_sq, P, C, h, R, unique, tuple(notes))


def pca_limit_scores(params: ModelParams, x) -> np.ndarray:
    """Zero-noise limit of the factor score: a projection onto W_hat's columns."""
    if params.q:
        raise ValueError("projection limit is defined for continuous-only models")
    x = np.asarray(x, dtype=float).reshape(params.p_x)
    Wh = params.W_hat
    gram = Wh.T @ Wh
    if np.linalg.matrix_rank(gram) < params.p_z:
        raise ValueError("W_hat is rank deficient; projection limit undefined")
    sd = np.sqrt(np.diag(params.sigma_x))
    return params.mu_z + np.linalg.solve(gram, Wh.T @ ((x - params.mu_x) / sd))


@dataclass(frozen=True)
class IdentifiabilityReport:
    latent_dim_ok: bool
    equal_row_norms: bool
    diagonal_gram: bool
    nonzero_eigenvalues: bool
    descending_nondegenerate: bool
    sign_rule: bool
    smallest_eigenvalue: float | None
    smallest_eigenvalue_ok: bool | None

    @property
    def all_ok(self) -> bool:
        flags = [
            self.latent_dim_ok,
            self.equal_row_norms,
            self.diagonal_gram,
            self.nonzero_eigenvalues,
            self.descending_nondegenerate,
            self.sign_rule,
        ]
        if self.smallest_eigenvalue_ok is not None:
            flags.append(self.smallest_eigenvalue_ok)
        return all(flags)


def verify_identifiability_conditions(params: ModelParams, tol: float = 1e-8) -> IdentifiabilityReport:
    M = params.M
    n_obs, p_z = M.shape
    c2 = params.c ** 2
    scale = max(c2, 1.0)
    gram = M.T @ M
    off = gram - np.diag(np.diag(gram))
    w = np.diag(gram)
    nonzero = bool(np.all(w > tol * scale))
    desc = bool(np.all(np.diff(w) < -DEGENERACY_RTOL * max(w.max(initial=0.0), 1e-300)))
    smallest = ok = None
    if p_z < n_obs:
        smallest = float(np.linalg.eigvalsh(M @ M.T - c2 * np.eye(n_obs))[0])
        ok = abs(smallest + c2) <= tol * scale
    return IdentifiabilityReport(
        latent_dim_ok=p_z <= n_obs,
        equal_row_norms=bool(np.all(np.abs(np.sum(M * M, axis=1) - c2) <= tol * scale)),
        diagonal_gram=bool(np.max(np.abs(off), initial=0.0) <= tol * scale),
        nonzero_eigenvalues=nonzero,
        descending_nondegenerate=desc,
        sign_rule=bool(np.all(M.sum(axis=0) >= -1e-9)),
        smallest_eigenvalue=smallest,
        smallest_eigenvalue_ok=ok,
    )
