"""Regularized two-view linear CCA baseline.

Solves the canonical correlation problem via the singular directions of
the whitened cross-covariance. The baseline has no wildcard handling:
language inputs are the zero-filled structured embeddings, and retrieval
over CCA outputs uses plain (unstructured) distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SingularCovariance, ValidationError
from .validation import as_matrix, as_vector

_EIG_TOL = 1e-10

VISUAL = "visual"
LANGUAGE = "language"


@dataclass(frozen=True)
class CcaModel:
    """Fitted projections into the shared canonical space."""

    proj_visual: np.ndarray  # (d_visual, k)
    proj_language: np.ndarray  # (d_language, k)
    correlations: np.ndarray  # (k,) descending, in [0, 1 + tol]
    regularizer: float
    mean_visual: np.ndarray
    mean_language: np.ndarray

    def __post_init__(self):
        if self.proj_visual.shape[1] != self.proj_language.shape[1]:
            raise ShapeError("projection column counts differ between views")
        corr = np.asarray(self.correlations, dtype=np.float64)
        if np.any(corr[:-1] < corr[1:] - 1e-12):
            raise ValidationError("canonical correlations must be non-increasing")


def _inv_sqrt(cov: np.ndarray, reg: float, view: str) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov + reg * np.eye(cov.shape[0]))
    if np.min(eigvals) <= _EIG_TOL * max(np.max(eigvals), 1.0):
        raise SingularCovariance(
            f"{view} covariance is rank deficient; increase reg (min eig {np.min(eigvals):.3e})"
        )
    return eigvecs @ ((eigvecs / np.sqrt(eigvals)).T)


def cca_fit(X, Y, dim: int | None = None, reg: float = 0.0) -> CcaModel:
    """Fit regularized CCA on visual rows X and language rows Y.

    ``dim`` defaults to the largest possible number of canonical pairs.
    The solution is deterministic: each language direction is flipped so
    its first component of non-trivial magnitude is positive, with the
    visual direction flipped alongside it.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if reg < 0:
        raise ValidationError("reg must be non-negative")
    n = X.shape[0]
    max_dim = min(X.shape[1], Y.shape[1])
    if dim is None:
        dim = max_dim
    if not 1 <= dim <= max_dim:
        raise ValidationError(f"dim must lie in [1, {max_dim}], got {dim}")
    if n < dim:
        raise ValidationError(f"need at least {dim} rows, got {n}")

    mean_x = X.mean(axis=0)
    mean_y = Y.mean(axis=0)
    Xc = X - mean_x
    Yc = Y - mean_y
    denom = max(n - 1, 1)
    cxx = Xc.T @ Xc / denom
    cyy = Yc.T @ Yc / denom
    cxy = Xc.T @ Yc / denom

    isqrt_x = _inv_sqrt(cxx, reg, "visual view")
    isqrt_y = _inv_sqrt(cyy, reg, "language view")
    u, singvals, vt = np.linalg.svd(isqrt_x @ cxy @ isqrt_y, full_matrices=False)

    proj_x = isqrt_x @ u[:, :dim]
    proj_y = isqrt_y @ vt[:dim].T
    correlations = singvals[:dim].copy()

    # Sign convention: first non-trivial component of each language
    # direction positive; the paired visual direction flips with it.
    for j in range(dim):
        col = proj_y[:, j]
        nonzero = np.nonzero(np.abs(col) > 1e-12 * max(np.max(np.abs(col)), 1e-300))[0]
        if len(nonzero) and col[nonzero[0]] < 0:
            proj_y[:, j] = -proj_y[:, j]
            proj_x[:, j] = -proj_x[:, j]

    return CcaModel(proj_x, proj_y, correlations, reg, mean_x, mean_y)


def cca_embed(model: CcaModel, row, view: str) -> np.ndarray:
    """Project a row (or rows) of the given view into the canonical space."""
    if view == VISUAL:
        proj, mean = model.proj_visual, model.mean_visual
    elif view == LANGUAGE:
        proj, mean = model.proj_language, model.mean_language
    else:
        raise ValidationError(f"view must be 'visual' or 'language', got {view!r}")
    arr = np.asarray(row, dtype=np.float64)
    if arr.ndim == 1:
        vec = as_vector(arr, "row", dim=proj.shape[0])
        return (vec - mean) @ proj
    mat = as_matrix(arr, "rows", cols=proj.shape[0])
    return (mat - mean) @ proj
