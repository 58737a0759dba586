"""Experiment drivers: consensus task, training runs, equivalence suite.

A trace is a pure function of (configuration, seed); divergent runs are
truncated and flagged rather than raised.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import algorithms, models
from .algorithms import AlgorithmSpec, DivergenceError, comm_cost, init_states, run_round
from .topology import MixingMatrix

__all__ = [
    "TraceRow",
    "MetricTrace",
    "TrainingResult",
    "EquivalenceReport",
    "CSV_HEADER",
    "consensus_error",
    "average_model",
    "run_consensus",
    "run_training",
    "check_equivalence",
    "decayed_schedule",
]

CSV_HEADER = (
    "round,consensus_error,mean_loss,avg_model_loss,avg_model_accuracy,eta,comm_scalars"
)

CONSENSUS_METHODS = ("gossip", "gut", "qg-gossip", "qg-gutm")


@dataclass
class TraceRow:
    round: int
    consensus_error: float
    mean_loss: float | None = None
    avg_model_loss: float | None = None
    avg_model_accuracy: float | None = None
    eta: float | None = None
    comm_scalars: int = 0


@dataclass
class MetricTrace:
    """Per-round metric records plus run metadata."""

    rows: list[TraceRow]
    meta: dict
    divergent: bool = False

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return format(float(v), ".17g")

        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                ",".join(
                    fmt(v)
                    for v in (
                        r.round,
                        r.consensus_error,
                        r.mean_loss,
                        r.avg_model_loss,
                        r.avg_model_accuracy,
                        r.eta,
                        r.comm_scalars,
                    )
                )
            )
        return "\n".join(lines) + "\n"

    def final_row(self) -> TraceRow:
        return self.rows[-1]


def consensus_error(X: np.ndarray) -> float:
    """(1/n) * squared Frobenius distance of the rows from their mean."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    centered = X - X.mean(axis=0)
    return float(np.sum(centered * centered) / X.shape[0])


def average_model(states) -> np.ndarray:
    if not states:
        raise ValueError("average_model needs at least one agent state")
    return np.mean([st.x for st in states], axis=0)


def run_consensus(
    W: MixingMatrix,
    X0: np.ndarray,
    method: str,
    mu: float = 0.9,
    beta: float = 0.9,
    T: int = 100,
    on_round=None,
) -> MetricTrace:
    """Gradient-free averaging with tracked updates and/or momentum.

    ``gut``: X' = X + Y with Y = (W-I)X + mu*[W Y_prev - (W-I)(X_prev - X)].
    ``qg-gutm`` additionally filters the applied update through a
    momentum buffer built from realized displacements.  ``gossip`` and
    ``qg-gossip`` are the mu = 0 special cases.  Each round the agents
    exchange one d-vector per neighbor.
    """
    if method not in CONSENSUS_METHODS:
        raise ValueError(f"unknown consensus method {method!r}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if method in ("gossip", "qg-gossip"):
        mu = 0.0
    w = W.weights
    X = np.asarray(X0, dtype=float).copy()
    n, d = X.shape
    per_round_scalars = comm_cost(AlgorithmSpec(kind="DSGD", eta=1.0), d, W)
    rows = [TraceRow(round=0, consensus_error=consensus_error(X), comm_scalars=0)]
    meta = {"task": "consensus", "method": method, "mu": mu, "beta": beta, "n": n, "d": d, "rounds": T}
    if on_round is not None:
        on_round(0, X)
    Xp = X.copy()
    Yp = np.zeros_like(X)
    M = np.zeros_like(X)
    Mhat = np.zeros_like(X)
    divergent = False
    use_momentum = method in ("qg-gossip", "qg-gutm")
    # divergence at aggressive mu is an intended experimental condition;
    # it is detected via the finiteness check, not reported as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, T + 1):
            WX = w @ X
            mix_prev = (w @ Xp - Xp) - (WX - X)  # (W - I)(X_prev - X)
            if not use_momentum:
                bracket = w @ Yp - mix_prev
                Y = (WX - X) + mu * bracket
                Xn = WX + mu * bracket
                Yp = Y
            else:
                M = beta * M + (1.0 - beta) * (X - Xp)
                inner = (WX - X) + mu * (w @ Mhat - mix_prev)
                Mhat = beta * M + (1.0 - beta) * inner
                Xn = X + Mhat
            if not np.all(np.isfinite(Xn)):
                divergent = True
                break
            Xp, X = X, Xn
            rows.append(
                TraceRow(
                    round=t,
                    consensus_error=consensus_error(X),
                    comm_scalars=per_round_scalars * t,
                )
            )
            if on_round is not None:
                on_round(t, X)
    return MetricTrace(rows=rows, meta=meta, divergent=divergent)


def decayed_schedule(eta: float, T: int, factor: float = 0.1):
    """Step schedule with a ``factor`` drop at 50% and 75% of T."""
    first, second = T // 2, (3 * T) // 4

    def schedule(t: int) -> float:
        if t >= second:
            return eta * factor * factor
        if t >= first:
            return eta * factor
        return eta

    return schedule


@dataclass
class TrainingResult:
    traces: list[MetricTrace]
    summary: dict


def run_training(
    W: MixingMatrix,
    problem: models.Problem,
    spec: AlgorithmSpec,
    T: int,
    batch_size: int | None = 32,
    seeds=(1, 2, 3),
    eval_every: int = 10,
    decay: bool = True,
    x0_scale: float = 0.1,
) -> TrainingResult:
    """Synchronous decentralized training, repeated per seed.

    All agents start from one shared parameter vector.  The averaged
    (consensus) model is evaluated every ``eval_every`` rounds; the step
    size drops 10x at 50% and 75% of T when ``decay`` is set.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    if decay and spec.eta_schedule is None:
        spec = dataclasses.replace(spec, eta_schedule=decayed_schedule(spec.eta, T))
    d = problem.dim
    scalars_per_round = comm_cost(spec, d, W)
    traces = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x0 = x0_scale * rng.standard_normal(d)
        X0 = np.tile(x0, (W.n, 1))
        base_oracle = models.make_oracle(problem, batch_size, seed=seed)
        round_losses: list[float] = []

        def oracle(agent, params, rnd):
            loss, grad = base_oracle(agent, params, rnd)
            round_losses.append(loss)
            return loss, grad

        states = init_states(X0, W, spec)
        rows: list[TraceRow] = []
        divergent = False
        # overflow on a diverging run is expected and surfaces as the
        # divergent flag, not as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(T):
                round_losses.clear()
                try:
                    states = run_round(states, W, spec, oracle)
                except DivergenceError:
                    divergent = True
                    break
                X = np.stack([st.x for st in states])
                row = TraceRow(
                    round=t,
                    consensus_error=consensus_error(X),
                    mean_loss=float(np.mean(round_losses)) if round_losses else None,
                    eta=spec.lr(t),
                    comm_scalars=scalars_per_round * (t + 1),
                )
                if (t + 1) % eval_every == 0 or t == T - 1:
                    loss, acc = problem.evaluate(average_model(states))
                    row.avg_model_loss = loss
                    row.avg_model_accuracy = acc
                rows.append(row)
        meta = {
            "task": "train",
            "algorithm": spec.kind,
            "eta": spec.eta,
            "mu": spec.mu,
            "beta": spec.beta,
            "nesterov": spec.nesterov,
            "n": W.n,
            "d": d,
            "rounds": T,
            "batch": batch_size,
            "seed": seed,
            "problem": problem.kind,
        }
        traces.append(MetricTrace(rows=rows, meta=meta, divergent=divergent))
    finals_loss = [
        tr.final_row().avg_model_loss
        for tr in traces
        if not tr.divergent and tr.rows and tr.final_row().avg_model_loss is not None
    ]
    finals_acc = [
        tr.final_row().avg_model_accuracy
        for tr in traces
        if not tr.divergent and tr.rows and tr.final_row().avg_model_accuracy is not None
    ]
    summary = {
        "seeds": list(seeds),
        "divergent": [tr.divergent for tr in traces],
        "final_loss_mean": float(np.mean(finals_loss)) if finals_loss else math.nan,
        "final_loss_std": float(np.std(finals_loss)) if finals_loss else math.nan,
        "final_accuracy_mean": float(np.mean(finals_acc)) if finals_acc else None,
        "final_accuracy_std": float(np.std(finals_acc)) if finals_acc else None,
    }
    return TrainingResult(traces=traces, summary=summary)


@dataclass
class EquivalenceReport:
    """Cross-formulation deviation of the tracked-update trajectories."""

    max_deviation: float
    per_form: dict
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def check_equivalence(
    W: MixingMatrix,
    problem: models.Problem,
    spec: AlgorithmSpec,
    T: int = 100,
    tol: float = 1e-8,
    seed: int = 0,
) -> EquivalenceReport:
    """Run all four tracked-update formulations on one gradient stream.

    Agents start from a shared parameter vector; the report carries the
    max relative parameter deviation of each formulation from the
    per-agent reference over all rounds.
    """
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(problem.dim)
    X0 = np.tile(x0, (W.n, 1))
    oracle = models.make_oracle(problem, batch_size=None, seed=seed)
    forms = ("GUT", "GUT-matrix", "GUT-bias", "GUT-memeff")
    trajectories: dict[str, list[np.ndarray]] = {}
    for kind in forms:
        form_spec = dataclasses.replace(spec, kind=kind)
        states = init_states(X0, W, form_spec)
        traj = []
        for _ in range(T):
            states = run_round(states, W, form_spec, oracle)
            traj.append(np.stack([st.x for st in states]))
        trajectories[kind] = traj
    ref = trajectories["GUT"]
    per_form = {}
    for kind in forms[1:]:
        dev = max(
            float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))
            for a, b in zip(trajectories[kind], ref)
        )
        per_form[kind] = dev
    max_dev = max(per_form.values())
    return EquivalenceReport(max_deviation=max_dev, per_form=per_form, tol=tol)
