"""Monte-Carlo policy evaluation and model diagnostics."""
from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .gmm import GmmConfig, fit_gmm
from .iohmm import (Dataset, GemConfig, IohmmModel, decode_states,
                    forward_filter, gem_fit, predict_rul)
from .pomdp import PbviConfig, Policy, PomdpModel, build_pomdp, pbvi_solve

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    horizon: int = 10000
    n_runs: int = 100
    seed: int = 0


@dataclass
class SimReport:
    totals: np.ndarray
    discounted: np.ndarray
    pm_ratio: float
    failure_rate: float
    action_counts: dict
    horizon: int
    n_runs: int
    seed: int

    @property
    def mean(self) -> float:
        return float(self.totals.mean())

    @property
    def std(self) -> float:
        return float(self.totals.std(ddof=1)) if self.totals.size > 1 else 0.0

    @property
    def discounted_mean(self) -> float:
        return float(self.discounted.mean())

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "discounted_mean": self.discounted_mean,
            "pm_ratio": self.pm_ratio,
            "failure_rate": self.failure_rate,
            "action_counts": dict(self.action_counts),
            "horizon": self.horizon,
            "n_runs": self.n_runs,
            "seed": self.seed,
            "totals": self.totals.tolist(),
            "discounted": self.discounted.tolist(),
        }


def _as_action_picker(model: PomdpModel, policy_source):
    """Normalize a policy source to (picker(belief) -> action index, needs_belief)."""
    if isinstance(policy_source, Policy):
        alphas = policy_source.alphas
        acts = policy_source.alpha_actions

        def pick(belief):
            return int(acts[int(np.argmax(alphas @ belief))])

        return pick, True
    if isinstance(policy_source, (int, np.integer, str)):
        fixed = model.action_index(policy_source)
        return (lambda _b: fixed), False
    if callable(policy_source):
        return (lambda b: model.action_index(policy_source(b))), True
    raise DataError(f"unsupported policy source {type(policy_source).__name__}")


def simulate(model: PomdpModel, policy_source, config: SimConfig) -> SimReport:
    """Roll out trajectories of the true state chain under a policy.

    Run i draws from a generator seeded with seed XOR i, so per-run streams
    are reproducible and shared across policy variants. Each epoch accrues
    reward r(state, action); hitting the failure state costs one epoch there
    before the built-in corrective reset row takes effect. Reported totals
    are undiscounted; a discounted accumulation is kept alongside.
    """
    model.validate()
    pick, needs_belief = _as_action_picker(model, policy_source)
    S = model.n_states
    failure_state = S - 1
    gamma = model.discount
    cum_X = [[list(np.cumsum(model.transition[a][s])) for s in range(S)]
             for a in range(model.n_actions)]
    cum_Z = [[list(np.cumsum(model.observation[a][s])) for s in range(S)]
             for a in range(model.n_actions)]
    reward = [[float(v) for v in row] for row in model.reward]

    totals = np.empty(config.n_runs)
    discounted = np.empty(config.n_runs)
    action_counts = np.zeros(model.n_actions, dtype=np.int64)
    failures = 0

    # Belief transitions are deterministic given (belief, action, symbol), so
    # repeated visits are served from a memo keyed on exact belief bytes.
    next_belief: dict = {}
    chosen: dict = {}

    for i in range(config.n_runs):
        rng = np.random.default_rng(config.seed ^ i)
        u = rng.random(2 * config.horizon)
        state = 0
        total = 0.0
        disc = 0.0
        g = 1.0
        belief = np.zeros(S)
        belief[0] = 1.0
        key = belief.tobytes()
        for t in range(config.horizon):
            if needs_belief:
                a = chosen.get(key)
                if a is None:
                    a = pick(belief)
                    chosen[key] = a
            else:
                a = pick(None)
            action_counts[a] += 1
            total += reward[a][state]
            disc += g * reward[a][state]
            g *= gamma
            if state == failure_state:
                failures += 1
            state = bisect_right(cum_X[a][state], u[2 * t])
            if needs_belief:
                o = bisect_right(cum_Z[a][state], u[2 * t + 1])
                nxt = next_belief.get((key, a, o))
                if nxt is None:
                    num = model.observation[a][:, o] * (belief @ model.transition[a])
                    denom = num.sum()
                    if denom <= 1e-300:
                        nxt = belief @ model.transition[a]
                        nxt = nxt / nxt.sum()
                        log.warning("run %d epoch %d: zero-probability symbol %d, "
                                    "using predicted belief", i, t, o)
                    else:
                        nxt = num / denom
                    next_belief[(key, a, o)] = nxt
                belief = nxt
                key = belief.tobytes()
        totals[i] = total
        discounted[i] = disc

    n_epochs = config.n_runs * config.horizon
    counts = {model.action_labels[a]: int(action_counts[a]) for a in range(model.n_actions)}
    pm_epochs = sum(c for lbl, c in counts.items() if lbl == "PM")
    return SimReport(totals=totals, discounted=discounted,
                     pm_ratio=pm_epochs / n_epochs,
                     failure_rate=failures / n_epochs,
                     action_counts=counts,
                     horizon=config.horizon, n_runs=config.n_runs, seed=config.seed)


def transition_diagnostics(model_or_transitions) -> dict:
    """Average self, forward, and backward transition mass across actions and rows."""
    if isinstance(model_or_transitions, IohmmModel):
        trans = model_or_transitions.transitions
    else:
        trans = np.asarray(model_or_transitions, dtype=float)
    A, K = trans.shape[0], trans.shape[1]
    stay = np.mean([np.diag(trans[a]) for a in range(A)])
    forward = np.mean([[trans[a][r, r + 1:].sum() for r in range(K)] for a in range(A)])
    backward = np.mean([[trans[a][r, :r].sum() for r in range(K)] for a in range(A)])
    return {"avg_stay": float(stay), "avg_forward": float(forward),
            "avg_backward": float(backward)}


def decoded_reverse_steps(dataset: Dataset, model: IohmmModel) -> dict:
    """Decoded-path regressions: mean per-sequence count of epochs whose MAP
    state is lower than the previous one, plus the model's summed
    lower-triangular transition mass."""
    total_reverse = 0
    for seq in dataset.sequences:
        labels, _ = decode_states(seq, model)
        total_reverse += int(np.sum(np.diff(labels) < 0))
    K = model.n_states
    back_mass = float(sum(model.transitions[a][np.tril_indices(K, k=-1)].sum()
                          for a in range(model.n_actions)))
    return {"reverse_steps": total_reverse / len(dataset.sequences),
            "total_reverse": total_reverse,
            "backward_prob": back_mass}


def compare_classical(dataset: Dataset, config: GemConfig) -> list:
    """Fit the constrained model and the unconstrained classical baseline on
    the same data and report loglik plus decoded-regression diagnostics."""
    rows = []
    for variant, constrained in (("constrained", True), ("classical", False)):
        cfg = replace(config, constrained=constrained)
        model, trace = gem_fit(dataset, cfg)
        diag = decoded_reverse_steps(dataset, model)
        rows.append({"variant": variant, "loglik": trace[-1],
                     "reverse_steps": diag["reverse_steps"],
                     "backward_prob": diag["backward_prob"]})
    return rows


def k_sweep(dataset: Dataset, k_values, gmm_components: int, costs, discount: float,
            sim_config: SimConfig, gem_config: GemConfig,
            pbvi_config: PbviConfig | None = None) -> list:
    """Robustness of the closed-loop pipeline to the state-count choice.

    For each K: train the degradation model, fit the symbol mixture, assemble
    and solve the POMDP, and simulate the policy. Returns one row per K with
    undiscounted and discounted mean returns and the PM ratio.
    """
    rows = []
    for K in k_values:
        cfg = replace(gem_config, n_states=K)
        model, _ = gem_fit(dataset, cfg)
        mixture = fit_gmm(dataset.pooled_obs(),
                          GmmConfig(n_components=gmm_components, ridge=cfg.ridge,
                                    sort_key=cfg.sort_key, seed=cfg.seed))
        pomdp = build_pomdp(model, mixture, costs, discount=discount, seed=cfg.seed)
        policy = pbvi_solve(pomdp, config=pbvi_config)
        report = simulate(pomdp, policy, sim_config)
        rows.append({"K": K, "mean_total": report.mean,
                     "mean_discounted": report.discounted_mean,
                     "pm_ratio": report.pm_ratio,
                     "failure_rate": report.failure_rate})
    return rows


def rul_experiment(dataset: Dataset, model: IohmmModel, action,
                   horizon: int = 10000,
                   quantiles: tuple = (0.025, 0.5, 0.975)) -> dict:
    """Remaining-useful-life calibration on run-to-failure sequences.

    At every epoch of every failed sequence the filtered state belief feeds
    predict_rul, and the resulting band is compared with the known remaining
    life. Censored forecasts are counted but excluded from coverage.
    """
    rows = []
    covered = 0
    evaluated = 0
    censored = 0
    for idx, seq in enumerate(dataset.sequences):
        if not seq.failed:
            log.info("sequence %d has no failure time; skipped", idx)
            continue
        beliefs = forward_filter(seq, model)
        fail_epoch = seq.obs.shape[0] - 1
        for t in range(seq.obs.shape[0]):
            fc = predict_rul(beliefs[t], model, action, horizon=horizon,
                             quantiles=quantiles)
            true_rul = fail_epoch - t
            row = {"sequence": idx, "epoch": t, "true_rul": true_rul,
                   "lower": fc.lower, "median": fc.median, "upper": fc.upper,
                   "censored": fc.censored}
            rows.append(row)
            if fc.censored:
                censored += 1
            else:
                evaluated += 1
                if fc.lower <= true_rul <= fc.upper:
                    covered += 1
    if evaluated == 0:
        raise DataError("no uncensored forecasts; nothing to calibrate")
    return {"rows": rows, "coverage": covered / evaluated,
            "n_evaluated": evaluated, "n_censored": censored}
