"""Correlation and PCA of the (v, v_dot, v_ddot, P) data matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .errors import DegenerateColumn, MissingDerivatives, TooFewSamples

COLUMNS = ("v", "v_dot", "v_ddot", "p")


def build_data_matrix(ds: Dataset) -> np.ndarray:
    """N x 4 matrix with columns [v, v_dot, v_ddot, P], rows in (trajectory, time) order."""
    if not ds.has_derivatives:
        raise MissingDerivatives("build_data_matrix needs v_dot and v_ddot on every trajectory")
    return np.column_stack([ds.column(c) for c in COLUMNS])


def _check(X: np.ndarray, min_rows: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 4:
        raise ValueError(f"expected an N x 4 matrix, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise TooFewSamples(f"need at least {min_rows} rows, got {X.shape[0]}")
    return X


def _centered(X):
    mu = X.mean(axis=0)
    D = X - mu
    ss = np.einsum("ij,ij->j", D, D)
    if np.any(ss == 0):
        bad = [COLUMNS[i] for i in np.flatnonzero(ss == 0)]
        raise DegenerateColumn(f"zero variance in column(s): {', '.join(bad)}")
    return mu, D, ss


def correlations(X: np.ndarray) -> dict:
    """Pearson correlation of P with v, v_dot and v_ddot (two-pass)."""
    X = _check(X, 3)
    _, D, ss = _centered(X)
    p = D[:, 3]
    out = {}
    for i, name in enumerate(COLUMNS[:3]):
        r = float(D[:, i] @ p / np.sqrt(ss[i] * ss[3]))
        out[name] = min(1.0, max(-1.0, r))
    return out


@dataclass(frozen=True, eq=False)
class PcaResult:
    eigenvectors: np.ndarray  # columns are principal components
    lambda_norm: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    eigenvalues: np.ndarray

    def scores(self, X: np.ndarray) -> np.ndarray:
        return ((np.asarray(X, dtype=float) - self.mu) / self.sigma) @ self.eigenvectors

    def to_dict(self) -> dict:
        return {
            "columns": list(COLUMNS),
            "eigenvectors": self.eigenvectors.tolist(),
            "lambda_norm": self.lambda_norm.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    def table(self) -> str:
        labels = ("v(t)", "vdot(t)", "vddot(t)", "P(t)")
        head = f"{'':>10} |" + "".join(f"{'PC' + str(i + 1):>9}" for i in range(4))
        rule = "-" * len(head)
        rows = [head, rule]
        for r, lab in enumerate(labels):
            rows.append(f"{'V ' + lab:>10} |" + "".join(f"{x:9.2f}" for x in self.eigenvectors[r]))
        rows.append(rule)
        rows.append(f"{'lambda_norm':>10} |" + "".join(f"{x:9.2f}" for x in self.lambda_norm))
        return "\n".join(rows)


def pca(X: np.ndarray) -> PcaResult:
    """PCA of the z-scored matrix.

    Eigenvectors are sorted by descending eigenvalue and signed so that each
    one's largest-magnitude component is positive.
    """
    X = _check(X, 5)
    n = X.shape[0]
    mu, D, ss = _centered(X)
    sigma = np.sqrt(ss / (n - 1))
    Z = D / sigma
    S = Z.T @ Z / (n - 1)
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    V = V[:, order]
    for c in range(4):
        if V[np.argmax(np.abs(V[:, c])), c] < 0:
            V[:, c] = -V[:, c]
    total = lam.sum()
    return PcaResult(eigenvectors=V, lambda_norm=lam / total, mu=mu, sigma=sigma, eigenvalues=lam)
