"""Left-to-right input-output HMM for degradation modeling.

States are latent degradation levels, inputs are the operating actions
chosen each epoch, and observations are feature vectors with Gaussian
emissions. The transition matrix for each action is row-stochastic over
(from, to) pairs and constrained so a worse state is never followed by a
better one; training is generalized EM with a projection step that zeroes
backward transitions and a sorting step that keeps state indices ordered
by emission mean.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._cluster import TooFewObservations, kmeans
from .errors import DataError, NumericalError
from .gmm import gaussian_logpdf

log = logging.getLogger(__name__)

__all__ = [
    "Sequence", "Dataset", "IohmmModel", "Posteriors", "GemConfig",
    "RulForecast", "SelectionReport", "InvalidAction", "NoProgress",
    "NoFailureState", "TooFewObservations", "forward_backward",
    "forward_filter", "init_kmeans", "gem_fit", "enforce_left_to_right",
    "decode_states", "loglik", "n_parameters", "aic", "bic", "select_k",
    "predict_rul", "sample_sequence",
]


class InvalidAction(DataError):
    pass


class NoProgress(NumericalError):
    pass


class NoFailureState(DataError):
    pass


@dataclass
class Sequence:
    """One unit's run: observations (T, d) and the action taken each epoch (T,).

    actions[t] drives the transition into epoch t (and the emission at t in
    action-dependent mode); actions[0] is unused by transitions because the
    initial state is fixed. failed marks run-to-failure sequences whose last
    epoch is known to be the terminal state.
    """
    obs: np.ndarray
    actions: np.ndarray
    failed: bool = False

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        self.actions = np.asarray(self.actions, dtype=int)
        if self.actions.shape != (self.obs.shape[0],):
            raise DataError(
                f"actions shape {self.actions.shape} does not match {self.obs.shape[0]} epochs")


@dataclass
class Dataset:
    sequences: list
    action_labels: list

    @property
    def n_actions(self) -> int:
        return len(self.action_labels)

    def validate(self) -> "Dataset":
        for i, seq in enumerate(self.sequences):
            bad = (seq.actions < 0) | (seq.actions >= self.n_actions)
            if bad.any():
                raise InvalidAction(
                    f"sequence {i} uses action id {int(seq.actions[bad][0])}, "
                    f"only {self.n_actions} actions are defined")
        return self

    def pooled_obs(self) -> np.ndarray:
        return np.vstack([s.obs for s in self.sequences])


@dataclass
class IohmmModel:
    """Model parameters.

    transitions[a][i, j] is P(next=j | current=i, action=a). means/covariances
    are (K, d)/(K, d, d) when emissions are shared across actions, or
    (A, K, d)/(A, K, d, d) in action-dependent mode.
    """
    action_labels: tuple
    transitions: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    initial: np.ndarray
    emission_mode: str = "shared"
    sort_key: int = 0

    def __post_init__(self):
        self.action_labels = tuple(self.action_labels)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[-1]

    def emission_params(self, action: int) -> tuple[np.ndarray, np.ndarray]:
        if self.emission_mode == "shared":
            return self.means, self.covariances
        return self.means[action], self.covariances[action]

    def to_dict(self) -> dict:
        return {
            "kind": "iohmm",
            "action_labels": list(self.action_labels),
            "transitions": self.transitions.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "initial": self.initial.tolist(),
            "emission_mode": self.emission_mode,
            "sort_key": self.sort_key,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IohmmModel":
        if d.get("kind") != "iohmm":
            raise DataError(f"not an iohmm model file (kind={d.get('kind')!r})")
        return cls(
            action_labels=tuple(d["action_labels"]),
            transitions=np.asarray(d["transitions"], dtype=float),
            means=np.asarray(d["means"], dtype=float),
            covariances=np.asarray(d["covariances"], dtype=float),
            initial=np.asarray(d["initial"], dtype=float),
            emission_mode=str(d["emission_mode"]),
            sort_key=int(d["sort_key"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "IohmmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Posteriors:
    gamma: np.ndarray        # (T, K) state marginals
    xi: np.ndarray           # (T-1, K, K) pairwise (from, to) marginals
    loglik: float


@dataclass
class GemConfig:
    n_states: int
    emission_mode: str = "shared"
    max_iters: int = 200
    tol: float = 1e-6        # relative loglik change
    ridge: float = 1e-6
    sort_key: int = 0
    seed: int = 0
    constrained: bool = True  # False gives the classical unconstrained baseline


def _log_emission_matrix(seq: Sequence, model: IohmmModel) -> np.ndarray:
    K = model.n_states
    T = seq.obs.shape[0]
    logb = np.empty((T, K))
    if model.emission_mode == "shared":
        for k in range(K):
            logb[:, k] = gaussian_logpdf(seq.obs, model.means[k], model.covariances[k])
    else:
        for a in range(model.n_actions):
            rows = seq.actions == a
            if not rows.any():
                continue
            for k in range(K):
                logb[rows, k] = gaussian_logpdf(seq.obs[rows],
                                                model.means[a, k], model.covariances[a, k])
    return logb


def _check_actions(seq: Sequence, model: IohmmModel) -> None:
    bad = (seq.actions < 0) | (seq.actions >= model.n_actions)
    if bad.any():
        raise InvalidAction(f"unknown action id {int(seq.actions[bad][0])}")


def forward_backward(seq: Sequence, model: IohmmModel) -> Posteriors:
    """Scaled forward-backward pass for one input-driven sequence.

    Every step is renormalized, with the per-step log scale folded into the
    returned loglik, so underflow cannot occur regardless of sequence length.
    """
    _check_actions(seq, model)
    T, K = seq.obs.shape[0], model.n_states
    logb = _log_emission_matrix(seq, model)
    shift = logb.max(axis=1)
    p = np.exp(logb - shift[:, None])

    alpha = np.empty((T, K))
    scale = np.empty(T)
    cur = model.initial * p[0]
    scale[0] = cur.sum()
    if scale[0] <= 0:
        raise NumericalError("sequence has zero probability under the model at epoch 0")
    alpha[0] = cur / scale[0]
    for t in range(1, T):
        cur = (alpha[t - 1] @ model.transitions[seq.actions[t]]) * p[t]
        scale[t] = cur.sum()
        if scale[t] <= 0:
            raise NumericalError(f"sequence has zero probability under the model at epoch {t}")
        alpha[t] = cur / scale[t]
    total = float(np.log(scale).sum() + shift.sum())

    beta = np.empty((T, K))
    beta[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (model.transitions[seq.actions[t + 1]] @ (p[t + 1] * beta[t + 1])) / scale[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    xi = np.empty((max(T - 1, 0), K, K))
    for t in range(1, T):
        slab = (alpha[t - 1][:, None]
                * model.transitions[seq.actions[t]]
                * (p[t] * beta[t])[None, :]) / scale[t]
        xi[t - 1] = slab / slab.sum()
    return Posteriors(gamma=gamma, xi=xi, loglik=total)


def forward_filter(seq: Sequence, model: IohmmModel) -> np.ndarray:
    """Filtered state beliefs P(S_t | O_1..t, A_1..t), one row per epoch."""
    _check_actions(seq, model)
    T, K = seq.obs.shape[0], model.n_states
    logb = _log_emission_matrix(seq, model)
    p = np.exp(logb - logb.max(axis=1)[:, None])
    out = np.empty((T, K))
    cur = model.initial * p[0]
    if cur.sum() <= 0:
        raise NumericalError("sequence has zero probability under the model at epoch 0")
    out[0] = cur / cur.sum()
    for t in range(1, T):
        cur = (out[t - 1] @ model.transitions[seq.actions[t]]) * p[t]
        if cur.sum() <= 0:
            raise NumericalError(f"sequence has zero probability under the model at epoch {t}")
        out[t] = cur / cur.sum()
    return out


def loglik(dataset: Dataset, model: IohmmModel) -> float:
    return float(sum(forward_backward(s, model).loglik for s in dataset.sequences))


def decode_states(seq: Sequence, model: IohmmModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-epoch MAP state labels (ties to the lower index) and the smoothed gamma."""
    post = forward_backward(seq, model)
    return post.gamma.argmax(axis=1), post.gamma


def init_kmeans(dataset: Dataset, config: GemConfig) -> IohmmModel:
    """Cluster-based starting point.

    Emission means are k-means centroids sorted on the sort-key coordinate,
    covariances are within-cluster covariances with a ridge, transitions are
    uniform over the allowed entries of each row, and the initial distribution
    is a point mass on state 0 (units enter service as new).
    """
    dataset.validate()
    K, A = config.n_states, dataset.n_actions
    X = dataset.pooled_obs()
    d = X.shape[1]
    rng = np.random.default_rng(config.seed)

    def cluster_stats(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        centroids, labels = kmeans(points, K, rng)
        order = np.argsort(centroids[:, config.sort_key], kind="stable")
        centroids = centroids[order]
        covs = np.empty((K, d, d))
        for rank, j in enumerate(order):
            members = points[labels == j]
            dev = members - centroids[rank] if members.size else np.zeros((1, d))
            covs[rank] = dev.T @ dev / max(len(members), 1) + config.ridge * np.eye(d)
        return centroids, covs

    if config.emission_mode == "shared":
        means, covs = cluster_stats(X)
    elif config.emission_mode == "action":
        means = np.empty((A, K, d))
        covs = np.empty((A, K, d, d))
        for a in range(A):
            rows = np.vstack([s.obs[s.actions == a] for s in dataset.sequences])
            if rows.shape[0] < K:
                rows = X  # too few epochs under this action; borrow the pooled data
            means[a], covs[a] = cluster_stats(rows)
    else:
        raise DataError(f"unknown emission mode {config.emission_mode!r}")

    transitions = np.zeros((A, K, K))
    if config.constrained:
        for row in range(K):
            transitions[:, row, row:] = 1.0 / (K - row)
    else:
        transitions[:] = 1.0 / K
    initial = np.zeros(K)
    initial[0] = 1.0
    return IohmmModel(list(dataset.action_labels), transitions, means, covs, initial,
                      emission_mode=config.emission_mode, sort_key=config.sort_key)


def enforce_left_to_right(model: IohmmModel) -> IohmmModel:
    """Canonicalize in place: sort states by emission mean, then project.

    Sorting applies one permutation to means, covariances, the initial
    distribution, and both axes of every transition matrix. Projection then
    zeroes backward entries and renormalizes each row; a row left empty
    becomes a self point mass. Projection runs after sorting so the returned
    model always satisfies the constraint.
    """
    if model.emission_mode == "shared":
        keys = model.means[:, model.sort_key]
    else:
        keys = model.means[:, :, model.sort_key].mean(axis=0)
    order = np.argsort(keys, kind="stable")
    if not np.array_equal(order, np.arange(model.n_states)):
        if model.emission_mode == "shared":
            model.means = model.means[order]
            model.covariances = model.covariances[order]
        else:
            model.means = model.means[:, order]
            model.covariances = model.covariances[:, order]
        model.initial = model.initial[order]
        model.transitions = model.transitions[:, order][:, :, order]

    K = model.n_states
    backward = np.tril(np.ones((K, K)), k=-1).astype(bool)
    for a in range(model.n_actions):
        model.transitions[a][backward] = 0.0
        sums = model.transitions[a].sum(axis=1)
        for row in range(K):
            if sums[row] <= 0:
                model.transitions[a][row] = 0.0
                model.transitions[a][row, row] = 1.0
            else:
                model.transitions[a][row] /= sums[row]
    return model


def _m_step(dataset: Dataset, posteriors: list, model: IohmmModel,
            config: GemConfig) -> IohmmModel:
    K, A = model.n_states, model.n_actions
    d = model.n_features

    trans_num = np.zeros((A, K, K))
    for seq, post in zip(dataset.sequences, posteriors):
        for a in range(A):
            steps = np.flatnonzero(seq.actions[1:] == a)
            if steps.size:
                trans_num[a] += post.xi[steps].sum(axis=0)
    transitions = model.transitions.copy()
    for a in range(A):
        row_tot = trans_num[a].sum(axis=1)
        visited = row_tot > 0
        transitions[a][visited] = trans_num[a][visited] / row_tot[visited, None]

    ridge_eye = config.ridge * np.eye(d)

    def weighted_gaussian(W: np.ndarray, X: np.ndarray,
                          old_mean: np.ndarray, old_cov: np.ndarray):
        nk = W.sum(axis=0)
        means = old_mean.copy()
        covs = old_cov.copy()
        for k in range(K):
            if nk[k] <= 0:
                continue
            means[k] = W[:, k] @ X / nk[k]
            dev = X - means[k]
            covs[k] = (W[:, k][:, None] * dev).T @ dev / nk[k] + ridge_eye
        return means, covs

    if model.emission_mode == "shared":
        X = dataset.pooled_obs()
        W = np.vstack([p.gamma for p in posteriors])
        means, covs = weighted_gaussian(W, X, model.means, model.covariances)
    else:
        means = model.means.copy()
        covs = model.covariances.copy()
        all_actions = np.concatenate([s.actions for s in dataset.sequences])
        X = dataset.pooled_obs()
        W = np.vstack([p.gamma for p in posteriors])
        for a in range(A):
            rows = all_actions == a
            if rows.any():
                means[a], covs[a] = weighted_gaussian(W[rows], X[rows], means[a], covs[a])

    return IohmmModel(model.action_labels, transitions, means, covs,
                      model.initial.copy(), emission_mode=model.emission_mode,
                      sort_key=model.sort_key)


def gem_fit(dataset: Dataset, config: GemConfig,
            init: IohmmModel | None = None) -> tuple[IohmmModel, list]:
    """Generalized EM training loop.

    Returns the fitted model and the per-iteration loglik trace (each entry
    evaluates the parameters entering that iteration). Sequences flagged as
    run-to-failure have their final-epoch gamma clamped to the last state
    before the M-step. The initial distribution stays a point mass on state 0.
    """
    dataset.validate()
    model = init if init is not None else init_kmeans(dataset, config)
    trace: list[float] = []
    prev = None
    for it in range(config.max_iters):
        posteriors = [forward_backward(s, model) for s in dataset.sequences]
        total = float(sum(p.loglik for p in posteriors))
        if np.isnan(total):
            raise NoProgress(f"loglik became nan at iteration {it}")
        trace.append(total)
        if prev is not None and abs(total - prev) < config.tol * max(1.0, abs(prev)):
            break
        prev = total
        for seq, post in zip(dataset.sequences, posteriors):
            if seq.failed:
                post.gamma[-1] = 0.0
                post.gamma[-1, -1] = 1.0
        model = _m_step(dataset, posteriors, model, config)
        if config.constrained:
            model = enforce_left_to_right(model)
    else:
        log.info("gem_fit stopped at max_iters=%d without converging", config.max_iters)
    return model, trace


def n_parameters(n_states: int, n_features: int, n_actions: int,
                 emission_mode: str = "shared", constrained: bool = True) -> int:
    """Free parameter count: transition entries net of row constraints,
    emission means and covariance entries, and the initial distribution
    minus one."""
    K, d = n_states, n_features
    per_action = K * (K + 1) // 2 - K if constrained else K * K - K
    trans = n_actions * per_action
    emis_sets = 1 if emission_mode == "shared" else n_actions
    emis = emis_sets * (K * d + K * d * (d + 1) // 2)
    return trans + emis + (K - 1)


def aic(loglik_value: float, n_params: int) -> float:
    return 2.0 * n_params - 2.0 * loglik_value


def bic(loglik_value: float, n_params: int, n_obs: int) -> float:
    return n_params * float(np.log(n_obs)) - 2.0 * loglik_value


@dataclass
class SelectionReport:
    rows: list
    best_aic: int
    best_bic: int


def select_k(dataset: Dataset, k_values, config: GemConfig) -> SelectionReport:
    """Fit one model per candidate state count and score AIC/BIC."""
    n_obs = sum(s.obs.shape[0] for s in dataset.sequences)
    d = dataset.pooled_obs().shape[1]
    rows = []
    for K in k_values:
        cfg = GemConfig(n_states=K, emission_mode=config.emission_mode,
                        max_iters=config.max_iters, tol=config.tol,
                        ridge=config.ridge, sort_key=config.sort_key,
                        seed=config.seed, constrained=config.constrained)
        start = time.perf_counter()
        _, trace = gem_fit(dataset, cfg)
        elapsed = time.perf_counter() - start
        ll = trace[-1]
        p = n_parameters(K, d, dataset.n_actions, config.emission_mode, config.constrained)
        rows.append({"K": K, "loglik": ll, "p": p,
                     "aic": aic(ll, p), "bic": bic(ll, p, n_obs),
                     "train_sec": elapsed})
    best_aic = min(rows, key=lambda r: r["aic"])["K"]
    best_bic = min(rows, key=lambda r: r["bic"])["K"]
    return SelectionReport(rows=rows, best_aic=best_aic, best_bic=best_bic)


@dataclass
class RulForecast:
    quantiles: tuple
    values: tuple            # cycles until the failure mass reaches each quantile
    censored: bool

    def _at(self, q: float) -> int:
        return self.values[self.quantiles.index(q)]

    @property
    def lower(self) -> int:
        return self.values[int(np.argmin(self.quantiles))]

    @property
    def upper(self) -> int:
        return self.values[int(np.argmax(self.quantiles))]

    @property
    def median(self) -> int:
        mid = int(np.argmin(np.abs(np.asarray(self.quantiles) - 0.5)))
        return self.values[mid]


def predict_rul(belief: np.ndarray, model: IohmmModel, action,
                horizon: int = 10000,
                quantiles: tuple = (0.025, 0.5, 0.975)) -> RulForecast:
    """Remaining-useful-life quantiles, in cycles, from a state belief.

    The last state is treated as the absorbing failure state; the belief is
    propagated through the transition matrix of the given action (an index,
    a label, or a callable belief -> action index) and each quantile is the
    first step at which the accumulated failure mass reaches it. Quantiles
    not reached within the horizon report the horizon and set censored.
    """
    K = model.n_states
    for a in range(model.n_actions):
        if model.transitions[a][K - 1, K - 1] < 1.0 - 1e-9:
            raise NoFailureState(
                f"last state is not absorbing under action {model.action_labels[a]!r}")
    if isinstance(action, str):
        if action not in model.action_labels:
            raise InvalidAction(f"unknown action label {action!r}")
        action = model.action_labels.index(action)
    pick = action if callable(action) else (lambda _b: action)

    b = np.asarray(belief, dtype=float).copy()
    if b.shape != (K,):
        raise DataError(f"belief shape {b.shape} does not match {K} states")
    b /= b.sum()

    todo = sorted(quantiles)
    values: dict[float, int] = {}
    cdf = b[-1]
    for q in list(todo):
        if cdf >= q - 1e-12:
            values[q] = 0
            todo.remove(q)
    step = 0
    while todo and step < horizon:
        a = int(pick(b))
        if not 0 <= a < model.n_actions:
            raise InvalidAction(f"action index {a} out of range")
        b = b @ model.transitions[a]
        step += 1
        cdf = b[-1]
        for q in list(todo):
            if cdf >= q - 1e-12:
                values[q] = step
                todo.remove(q)
    censored = bool(todo)
    for q in todo:
        values[q] = horizon
    ordered = tuple(values[q] for q in quantiles)
    return RulForecast(quantiles=tuple(quantiles), values=ordered, censored=censored)


def sample_sequence(model: IohmmModel, actions, rng: np.random.Generator,
                    start_state: int | None = None) -> tuple[Sequence, np.ndarray]:
    """Draw one trajectory and its observations under a fixed action plan."""
    actions = np.asarray(actions, dtype=int)
    K = model.n_states
    chols = {}

    def emit(state: int, action: int) -> np.ndarray:
        means, covs = model.emission_params(action)
        key = (action if model.emission_mode == "action" else -1, state)
        if key not in chols:
            chols[key] = np.linalg.cholesky(covs[state])
        return means[state] + chols[key] @ rng.standard_normal(model.n_features)

    if start_state is None:
        state = int(rng.choice(K, p=model.initial))
    else:
        state = start_state
    states = [state]
    obs = [emit(state, int(actions[0]))]
    for t in range(1, actions.shape[0]):
        state = int(rng.choice(K, p=model.transitions[actions[t]][state]))
        states.append(state)
        obs.append(emit(state, int(actions[t])))
    return Sequence(np.array(obs), actions), np.array(states, dtype=int)
