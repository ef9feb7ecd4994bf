"""Discrete POMDP over degradation states and point-based value iteration.

The model couples per-action transition matrices (capacity choices plus a
preventive-maintenance action that returns the machine to the best state),
a state-to-symbol observation matrix, and a per-(action, state) reward
table. The solver is point-based value iteration: backups over a growing
set of belief points, with pointwise-dominance pruning and farthest-point
belief expansion.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError
from .gmm import GmmModel, responsibilities

log = logging.getLogger(__name__)


class ZeroProbabilityObservation(NumericalError):
    pass


@dataclass(frozen=True)
class CostTable:
    """Reward structure: production reward per capacity while operating,
    a preventive-maintenance cost, and a corrective (failure) cost."""
    capacity_rewards: tuple
    pm_cost: float
    failure_cost: float

    def matrix(self, n_operating: int) -> np.ndarray:
        rows = [[c] * n_operating + [self.failure_cost] for c in self.capacity_rewards]
        rows.append([self.pm_cost] * n_operating + [self.failure_cost])
        return np.array(rows, dtype=float)


@dataclass
class PomdpModel:
    """(A, S, S) transitions, (A, S, O) observation rows per arrival state,
    (A, S) rewards, and a discount in [0, 1)."""
    action_labels: tuple
    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        self.action_labels = tuple(self.action_labels)

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def n_obs(self) -> int:
        return self.observation.shape[2]

    def validate(self) -> "PomdpModel":
        A, S, O = self.n_actions, self.n_states, self.n_obs
        if len(self.action_labels) != A:
            raise DataError(f"{len(self.action_labels)} labels for {A} actions")
        if self.transition.shape != (A, S, S):
            raise DataError(f"transition shape {self.transition.shape}")
        if self.observation.shape != (A, S, O):
            raise DataError(f"observation shape {self.observation.shape}")
        if self.reward.shape != (A, S):
            raise DataError(f"reward shape {self.reward.shape}")
        if not np.isfinite(self.reward).all():
            raise DataError("non-finite rewards")
        if not (0.0 <= self.discount < 1.0):
            raise DataError(f"discount {self.discount} outside [0, 1)")
        for name, tensor in (("transition", self.transition), ("observation", self.observation)):
            if (tensor < -1e-12).any():
                raise DataError(f"negative entries in {name} matrix")
            sums = tensor.sum(axis=2)
            if np.abs(sums - 1.0).max() > 1e-9:
                raise DataError(f"{name} rows must sum to 1 (max deviation "
                                f"{np.abs(sums - 1.0).max():.3e})")
        return self

    def action_index(self, action) -> int:
        if isinstance(action, str):
            if action not in self.action_labels:
                raise DataError(f"unknown action label {action!r}")
            return self.action_labels.index(action)
        a = int(action)
        if not 0 <= a < self.n_actions:
            raise DataError(f"action index {a} out of range")
        return a

    def to_dict(self) -> dict:
        return {
            "kind": "pomdp",
            "action_labels": list(self.action_labels),
            "transition": self.transition.tolist(),
            "observation": self.observation.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PomdpModel":
        if d.get("kind") != "pomdp":
            raise DataError(f"not a pomdp model file (kind={d.get('kind')!r})")
        return cls(
            action_labels=tuple(d["action_labels"]),
            transition=np.asarray(d["transition"], dtype=float),
            observation=np.asarray(d["observation"], dtype=float),
            reward=np.asarray(d["reward"], dtype=float),
            discount=float(d["discount"]),
        ).validate()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PomdpModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def expected_reward(belief: np.ndarray, action, model: PomdpModel) -> float:
    return float(model.reward[model.action_index(action)] @ belief)


def observation_prob(belief: np.ndarray, action, obs: int, model: PomdpModel) -> float:
    a = model.action_index(action)
    return float((belief @ model.transition[a]) @ model.observation[a][:, obs])


def belief_update(belief: np.ndarray, action, obs: int, model: PomdpModel) -> np.ndarray:
    """Bayes filter step: predict through the action's transitions, weight by
    the observation likelihood of the arrival state, renormalize."""
    a = model.action_index(action)
    num = model.observation[a][:, obs] * (belief @ model.transition[a])
    denom = num.sum()
    if denom <= 1e-300:
        raise ZeroProbabilityObservation(
            f"observation {obs} has zero probability under action "
            f"{model.action_labels[a]!r} at this belief")
    return num / denom


# ---------------------------------------------------------------------------
# Point-based value iteration


@dataclass
class PbviConfig:
    improve_tol: float = 1e-4
    max_improve_sweeps: int = 100
    max_expansions: int = 6
    seed: int = 0


@dataclass
class Policy:
    """Max-plane value function: value(b) = max_i alphas[i] . b, and the
    action attached to the maximizing vector (ties to the lowest index)."""
    alphas: np.ndarray           # (n, S)
    alpha_actions: np.ndarray    # (n,)
    action_labels: tuple
    discount: float
    beliefs: np.ndarray | None = None
    iterations: int = 0
    residual: float = float("nan")

    def __post_init__(self):
        self.action_labels = tuple(self.action_labels)

    def value(self, belief: np.ndarray) -> tuple[float, int]:
        scores = self.alphas @ np.asarray(belief, dtype=float)
        best = int(np.argmax(scores))
        return float(scores[best]), int(self.alpha_actions[best])

    def action_label(self, action_idx: int) -> str:
        return self.action_labels[action_idx]

    def to_dict(self) -> dict:
        return {
            "kind": "policy",
            "alphas": self.alphas.tolist(),
            "alpha_actions": self.alpha_actions.tolist(),
            "action_labels": list(self.action_labels),
            "discount": self.discount,
            "beliefs": None if self.beliefs is None else self.beliefs.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        if d.get("kind") != "policy":
            raise DataError(f"not a policy file (kind={d.get('kind')!r})")
        return cls(
            alphas=np.asarray(d["alphas"], dtype=float),
            alpha_actions=np.asarray(d["alpha_actions"], dtype=int),
            action_labels=tuple(d["action_labels"]),
            discount=float(d["discount"]),
            beliefs=None if d["beliefs"] is None else np.asarray(d["beliefs"], dtype=float),
            iterations=int(d["iterations"]),
            residual=float(d["residual"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def policy_value(policy: Policy, belief: np.ndarray) -> tuple[float, int]:
    return policy.value(belief)


def backup(belief: np.ndarray, alphas: np.ndarray, model: PomdpModel) -> tuple[np.ndarray, int]:
    """One point-based Bellman backup at a belief.

    For each action, the best current alpha is chosen per reachable
    observation (unreachable observations contribute zero), the discounted
    expectations are folded back through transition and observation
    likelihoods, and the action whose backed-up vector scores highest at
    the belief wins. Returns (vector (S,), action index).
    """
    b = np.asarray(belief, dtype=float)
    best_val, best_vec, best_a = -np.inf, None, 0
    for a in range(model.n_actions):
        X = model.transition[a]
        Z = model.observation[a]
        pred = b @ X
        vec = model.reward[a].astype(float).copy()
        if model.discount > 0.0:
            for o in range(model.n_obs):
                if pred @ Z[:, o] <= 0.0:
                    continue
                G = X @ (Z[:, o][:, None] * alphas.T)   # (S, n): candidate continuations
                vec = vec + model.discount * G[:, int(np.argmax(b @ G))]
        val = float(vec @ b)
        if val > best_val:
            best_val, best_vec, best_a = val, vec, a
    return best_vec, best_a


def prune_alphas(alphas: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop pointwise-dominated vectors (and duplicates, keeping the first)."""
    n = alphas.shape[0]
    if n <= 1:
        return alphas, actions
    ge = (alphas[:, None, :] >= alphas[None, :, :]).all(axis=2)
    eq = ge & ge.T
    dominated = np.zeros(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if j != i and ge[j, i] and (not eq[j, i] or j < i):
                dominated[i] = True
                break
    keep = ~dominated
    return alphas[keep], actions[keep]


def expand(beliefs: list, model: PomdpModel, rng_seed: int = 0) -> list:
    """Grow the belief set: for each point, add its one-step successor that
    lies farthest (Euclidean) from everything already kept. Successors closer
    than 1e-9 are duplicates and are skipped. Deterministic for a given seed
    (ties go to the first candidate in action-then-observation order)."""
    del rng_seed  # candidate generation enumerates all successors; nothing is sampled
    out = [np.asarray(b, dtype=float) for b in beliefs]
    for b in beliefs:
        candidates = []
        for a in range(model.n_actions):
            pred = b @ model.transition[a]
            for o in range(model.n_obs):
                num = model.observation[a][:, o] * pred
                denom = num.sum()
                if denom > 1e-300:
                    candidates.append(num / denom)
        if not candidates:
            continue
        dists = np.array([min(np.linalg.norm(c - kept) for kept in out) for c in candidates])
        pick = int(np.argmax(dists))
        if dists[pick] > 1e-9:
            out.append(candidates[pick])
    return out


def pbvi_solve(model: PomdpModel, b0: np.ndarray | None = None,
               config: PbviConfig | None = None) -> Policy:
    """Point-based value iteration from an initial belief (default: state 0).

    Alternates improvement sweeps (a backup at every belief point, keeping
    the union of old and new vectors, pruned) with belief-set expansion.
    Sweeps stop when the value at every belief point moves less than
    improve_tol. The single starting vector min(R)/(1-gamma) keeps the value
    function a lower bound, so sweeps never decrease it.
    """
    model.validate()
    config = config or PbviConfig()
    if b0 is None:
        b0 = np.zeros(model.n_states)
        b0[0] = 1.0
    beliefs = [np.asarray(b0, dtype=float)]

    floor = model.reward.min() / (1.0 - model.discount)
    alphas = np.full((1, model.n_states), floor)
    actions = np.zeros(1, dtype=int)

    sweeps = 0
    residual = float("inf")
    for round_idx in range(config.max_expansions + 1):
        for _ in range(config.max_improve_sweeps):
            values = np.array([np.max(alphas @ b) for b in beliefs])
            new_vecs, new_acts = [], []
            for b in beliefs:
                vec, act = backup(b, alphas, model)
                new_vecs.append(vec)
                new_acts.append(act)
            alphas = np.vstack([alphas, np.array(new_vecs)])
            actions = np.concatenate([actions, np.array(new_acts, dtype=int)])
            alphas, actions = prune_alphas(alphas, actions)
            sweeps += 1
            residual = float(np.max(np.abs(
                np.array([np.max(alphas @ b) for b in beliefs]) - values)))
            if residual < config.improve_tol:
                break
        if round_idx < config.max_expansions:
            beliefs = expand(beliefs, model, rng_seed=config.seed)
    log.info("pbvi: %d alpha vectors, %d belief points, %d sweeps, residual %.3g",
             alphas.shape[0], len(beliefs), sweeps, residual)
    return Policy(alphas=alphas, alpha_actions=actions,
                  action_labels=list(model.action_labels), discount=model.discount,
                  beliefs=np.array(beliefs), iterations=sweeps, residual=residual)


# ---------------------------------------------------------------------------
# Assembly from learned components


def build_pomdp_from_matrices(capacity_transitions, obs_matrix, costs,
                              discount: float = 0.95,
                              action_labels: list | None = None,
                              include_pm: bool = True,
                              pm_label: str = "PM") -> PomdpModel:
    """Assemble a maintenance POMDP from explicit matrices.

    capacity_transitions: per-capacity (S, S) matrices whose last state is
    failure. obs_matrix: (S, O) symbol probabilities per state. costs: a
    CostTable or a ready (A_cap + include_pm, S) reward matrix. The failure
    row of every action is replaced by a return to state 0 (corrective
    maintenance happens within one epoch), and the PM action sends every
    state to 0. Rows are renormalized, so lightly rounded inputs are fine.
    """
    X_cap = np.asarray(capacity_transitions, dtype=float)
    if X_cap.ndim != 3 or X_cap.shape[1] != X_cap.shape[2]:
        raise DataError(f"capacity transitions must be (A, S, S), got {X_cap.shape}")
    n_cap, S = X_cap.shape[0], X_cap.shape[1]
    obs = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
    if obs.shape[0] != S:
        raise DataError(f"observation matrix has {obs.shape[0]} rows for {S} states")

    n_actions = n_cap + (1 if include_pm else 0)
    if action_labels is None:
        action_labels = [f"a{i}" for i in range(n_cap)]
    else:
        action_labels = list(action_labels)
    if len(action_labels) != n_cap:
        raise DataError(f"{len(action_labels)} labels for {n_cap} capacity actions")
    if include_pm:
        action_labels = action_labels + [pm_label]

    X = np.zeros((n_actions, S, S))
    X[:n_cap] = X_cap
    for a in range(n_cap):
        X[a, S - 1] = 0.0
        X[a, S - 1, 0] = 1.0
    if include_pm:
        X[n_cap, :, 0] = 1.0

    if isinstance(costs, CostTable):
        reward = costs.matrix(S - 1)
    else:
        reward = np.asarray(costs, dtype=float)
    if reward.shape != (n_actions, S):
        raise DataError(f"reward shape {reward.shape}, expected {(n_actions, S)}")

    row_sums = X.sum(axis=2)
    if np.abs(row_sums - 1.0).max() > 0.02:
        raise DataError("transition rows are too far from stochastic to renormalize")
    X /= row_sums[:, :, None]
    obs_sums = obs.sum(axis=1)
    if np.abs(obs_sums - 1.0).max() > 0.02 or (obs < -1e-12).any():
        raise DataError("observation rows are too far from stochastic to renormalize")
    obs = obs / obs_sums[:, None]
    Z = np.broadcast_to(obs, (n_actions,) + obs.shape).copy()

    return PomdpModel(action_labels=action_labels, transition=X, observation=Z,
                      reward=reward, discount=float(discount)).validate()


def estimate_observation_rows(means, covariances, gmm: GmmModel,
                              n_samples: int = 4096, seed: int = 0) -> np.ndarray:
    """Monte-Carlo estimate of symbol probabilities per state: average GMM
    responsibilities over fixed-seed draws from each state's emission."""
    rng = np.random.default_rng(seed)
    K = means.shape[0]
    rows = np.empty((K, gmm.n_components))
    for k in range(K):
        chol = np.linalg.cholesky(covariances[k])
        draws = means[k] + rng.standard_normal((n_samples, means.shape[1])) @ chol.T
        rows[k] = responsibilities(gmm, draws).mean(axis=0)
    return rows / rows.sum(axis=1, keepdims=True)


def build_pomdp(iohmm_model, gmm: GmmModel | None, costs,
                discount: float = 0.95,
                failure_hazard=None,
                obs_matrix=None,
                n_obs_samples: int = 4096,
                seed: int = 0,
                include_pm: bool = True,
                pm_label: str = "PM",
                failure_obs_row=None) -> PomdpModel:
    """Assemble the decision model from a trained degradation model.

    Without failure_hazard the degradation model's last state must already
    be absorbing and is taken as the failure state. With failure_hazard
    (per-state or (A, K) probabilities of jumping to failure) a fresh failure
    state is appended; its observation row defaults to the last operating
    state's row unless failure_obs_row is given. Symbol probabilities come
    from obs_matrix when given, otherwise they are estimated from the GMM
    against each state's emission distribution (fixed-seed sampling; in
    action-dependent emission mode the first action's emissions are used).
    """
    K = iohmm_model.n_states
    A_cap = iohmm_model.n_actions
    trans = iohmm_model.transitions

    if failure_hazard is None:
        for a in range(A_cap):
            if trans[a][K - 1, K - 1] < 1.0 - 1e-9:
                raise DataError(
                    "last state is not absorbing; pass failure_hazard to append a failure state")
        X_cap = trans.copy()
        S = K
        emit_means, emit_covs = iohmm_model.emission_params(0)
    else:
        hazard = np.asarray(failure_hazard, dtype=float)
        if hazard.ndim == 1:
            hazard = np.broadcast_to(hazard, (A_cap, K)).copy()
        if hazard.shape != (A_cap, K) or (hazard < 0).any() or (hazard > 1).any():
            raise DataError(f"failure hazard must be probabilities shaped ({A_cap}, {K})")
        S = K + 1
        X_cap = np.zeros((A_cap, S, S))
        X_cap[:, :K, :K] = trans * (1.0 - hazard)[:, :, None]
        X_cap[:, :K, K] = hazard
        X_cap[:, K, K] = 1.0
        emit_means, emit_covs = iohmm_model.emission_params(0)

    if obs_matrix is not None:
        obs = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
    else:
        if gmm is None:
            raise DataError("either a gmm or an explicit observation matrix is required")
        obs = estimate_observation_rows(emit_means, emit_covs, gmm,
                                        n_samples=n_obs_samples, seed=seed)
    if obs.shape[0] == S - 1 and failure_hazard is not None:
        fail_row = np.asarray(failure_obs_row, dtype=float) if failure_obs_row is not None \
            else obs[-1]
        obs = np.vstack([obs, fail_row])
    if obs.shape[0] != S:
        raise DataError(f"observation matrix has {obs.shape[0]} rows for {S} states")

    return build_pomdp_from_matrices(
        X_cap, obs, costs, discount=discount,
        action_labels=list(iohmm_model.action_labels),
        include_pm=include_pm, pm_label=pm_label)
