"""Gaussian mixture over feature vectors, defining a discrete symbol alphabet.

Each mixture component is one observation symbol. Component responsibilities
are computed in log space, and components are kept sorted by a designated
feature coordinate so symbol indices are stable across fits.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._cluster import kmeans
from .errors import DataError, NumericalError

log = logging.getLogger(__name__)

_WEIGHT_FLOOR = 1e-12


@dataclass
class GmmConfig:
    n_components: int
    covariance: str = "full"        # "full" or "diag"
    max_iters: int = 200
    tol: float = 1e-6               # relative loglik change
    ridge: float = 1e-6
    sort_key: int = 0
    seed: int = 0


@dataclass
class GmmModel:
    weights: np.ndarray             # (k,)
    means: np.ndarray               # (k, d)
    covariances: np.ndarray         # (k, d, d)
    sort_key: int = 0
    covariance_type: str = "full"
    loglik_trace: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "sort_key": self.sort_key,
            "covariance_type": self.covariance_type,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        if d.get("kind") != "gmm":
            raise DataError(f"not a gmm model file (kind={d.get('kind')!r})")
        return cls(
            weights=np.asarray(d["weights"], dtype=float),
            means=np.asarray(d["means"], dtype=float),
            covariances=np.asarray(d["covariances"], dtype=float),
            sort_key=int(d["sort_key"]),
            covariance_type=str(d["covariance_type"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GmmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def gaussian_logpdf(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Multivariate normal log density of rows of X, via Cholesky."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(cov + 1e-10 * np.trace(cov) / d * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance matrix is not positive definite") from exc
    dev = X - mean
    sol = np.linalg.solve(chol, dev.T)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + (sol ** 2).sum(axis=0))


def _component_logdensities(model: GmmModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([
        gaussian_logpdf(X, model.means[j], model.covariances[j])
        for j in range(model.n_components)
    ])


def responsibilities(model: GmmModel, X: np.ndarray) -> np.ndarray:
    """Posterior symbol probabilities, rows summing to 1; log-sum-exp throughout."""
    log_joint = _component_logdensities(model, X) + np.log(model.weights)[None, :]
    return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def loglik(model: GmmModel, X: np.ndarray) -> float:
    log_joint = _component_logdensities(model, X) + np.log(model.weights)[None, :]
    return float(logsumexp(log_joint, axis=1).sum())


def discretize(model: GmmModel, X: np.ndarray) -> np.ndarray:
    """Hard symbol labels: argmax responsibility, ties resolved to the lower index."""
    return responsibilities(model, X).argmax(axis=1)


def fit_gmm(X: np.ndarray, config: GmmConfig) -> GmmModel:
    """EM fit. Components come back sorted ascending on the sort-key coordinate."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    k = config.n_components
    if config.covariance not in ("full", "diag"):
        raise DataError(f"unknown covariance type {config.covariance!r}")
    rng = np.random.default_rng(config.seed)
    centroids, labels = kmeans(X, k, rng)
    global_cov = np.cov(X.T, bias=True).reshape(d, d) + config.ridge * np.eye(d)
    covs = np.empty((k, d, d))
    weights = np.empty(k)
    for j in range(k):
        members = labels == j
        weights[j] = max(members.sum(), 1) / n
        dev = X[members] - centroids[j] if members.any() else np.zeros((1, d))
        covs[j] = dev.T @ dev / max(members.sum(), 1) + config.ridge * np.eye(d)
    weights /= weights.sum()
    model = GmmModel(weights, centroids.copy(), covs,
                     sort_key=config.sort_key, covariance_type=config.covariance)

    trace: list[float] = []
    prev = None
    for it in range(config.max_iters):
        lg = _component_logdensities(model, X) + np.log(model.weights)[None, :]
        norm = logsumexp(lg, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if np.isnan(ll):
            raise DataError("mixture loglik became nan")
        if prev is not None and abs(ll - prev) < config.tol * max(1.0, abs(prev)):
            break
        prev = ll
        resp = np.exp(lg - norm[:, None])
        nk = resp.sum(axis=0)
        model.weights = nk / n
        collapsed = np.flatnonzero(model.weights < _WEIGHT_FLOOR)
        for j in range(k):
            if j in collapsed:
                continue
            model.means[j] = resp[:, j] @ X / nk[j]
            dev = X - model.means[j]
            cov = (resp[:, j][:, None] * dev).T @ dev / nk[j] + config.ridge * np.eye(d)
            model.covariances[j] = np.diag(np.diag(cov)) if config.covariance == "diag" else cov
        if collapsed.size:
            _reseed_collapsed(model, X, collapsed, global_cov)
            prev = None  # re-seeding breaks the monotone guarantee; reset the gate
    _sort_components(model)
    model.loglik_trace = trace
    return model


def _reseed_collapsed(model: GmmModel, X: np.ndarray, collapsed: np.ndarray,
                      global_cov: np.ndarray) -> None:
    """Move starved components to the worst-explained data point (deterministic)."""
    for j in collapsed:
        lg = _component_logdensities(model, X) + np.log(np.maximum(model.weights, _WEIGHT_FLOOR))
        worst = int(logsumexp(lg, axis=1).argmin())
        model.means[j] = X[worst]
        model.covariances[j] = (np.diag(np.diag(global_cov))
                                if model.covariance_type == "diag" else global_cov.copy())
        model.weights[j] = 1.0 / X.shape[0]
        log.warning("re-seeded collapsed mixture component %d at data point %d", j, worst)
    model.weights /= model.weights.sum()


def _sort_components(model: GmmModel) -> None:
    order = np.argsort(model.means[:, model.sort_key], kind="stable")
    model.weights = model.weights[order]
    model.means = model.means[order]
    model.covariances = model.covariances[order]
