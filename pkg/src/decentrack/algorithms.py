"""Synchronous-round update rules for decentralized optimization.

Every rule is a pure transition ``(states, W, spec, oracle) -> states'``
over the full agent population.  The update-tracking family (GUT and its
momentum variants) evaluates gradients at the gossip-mixed point
``s_i = sum_j w_ij x_j`` and transmits a single tracked update per round;
the baselines evaluate at the local parameters.  Four algebraically
equivalent formulations of the tracked update are provided so that their
trajectories can be cross-checked:

* ``GUT``         per-agent recursion with neighbor copies,
* ``GUT-matrix``  the stacked two-line recursion X' = X - eta*Y,
* ``GUT-bias``    the bias-correction form X' = WX - eta*(G + mu*B),
* ``GUT-memeff``  O(1) extra memory, keeping only the running aggregate s.

The gradient oracle is ``oracle(agent, params, round) -> (loss, grad)``
and must be deterministic in (agent, round) so trajectories can be
replayed across formulations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .topology import MixingMatrix

__all__ = [
    "KINDS",
    "AgentState",
    "AlgorithmSpec",
    "DivergenceError",
    "HyperparameterCheck",
    "init_states",
    "run_round",
    "gut_round",
    "qg_gutm_round",
    "baseline_round",
    "gradient_tracking_round",
    "rule_round",
    "gut_form_round",
    "validate_hyperparameters",
    "comm_cost",
]

KINDS = (
    "DSGD", "DSGDm", "DSGDmN", "QG-DSGDm", "QG-DSGDmN",
    "GT",
    "GUT", "GUTm", "GUTmN", "QG-GUTm", "QG-GUTmN", "QG-GUTm-impl",
    "GUT-matrix", "GUT-bias", "GUT-memeff",
    "RuleA", "RuleB",
)

GUT_FAMILY = ("GUT", "GUT-matrix", "GUT-bias", "GUT-memeff")


class DivergenceError(RuntimeError):
    """Raised when a round produces non-finite parameters."""

    def __init__(self, agent: int, rnd: int):
        super().__init__(f"non-finite parameters at agent {agent}, round {rnd}")
        self.agent = agent
        self.round = rnd


@dataclass
class AgentState:
    """One agent's buffers at a round boundary.

    ``s`` is the weighted neighborhood aggregate sum_j w_ij x_j, ``y_prev``
    and ``delta_prev`` the tracking history (GT reuses ``delta_prev`` for
    its previous gradient), ``m`` the momentum buffer, ``bias`` the B
    column of the bias-correction form and ``x_prev`` the previous
    parameters (initialized to x itself).
    """

    x: np.ndarray
    s: np.ndarray
    y_prev: np.ndarray
    delta_prev: np.ndarray
    m: np.ndarray
    bias: np.ndarray
    x_prev: np.ndarray
    round: int = 0


@dataclass
class AlgorithmSpec:
    """Update rule selection plus its hyperparameters."""

    kind: str
    eta: float
    mu: float = 0.0
    beta: float = 0.0
    nesterov: bool = False
    eta_schedule: Callable[[int], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown algorithm kind {self.kind!r}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0 <= self.mu < 1:
            raise ValueError(f"mu must lie in [0, 1), got {self.mu}")
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")

    def lr(self, rnd: int) -> float:
        eta = self.eta_schedule(rnd) if self.eta_schedule is not None else self.eta
        if eta <= 0:
            raise ValueError(f"eta schedule produced non-positive step at t={rnd}")
        return eta

    def effective_kind(self) -> str:
        kind = self.kind
        if self.nesterov and kind in ("DSGDm", "QG-DSGDm", "GUTm", "QG-GUTm"):
            kind += "N"
        return kind


def _stack(states: list[AgentState], attr: str) -> np.ndarray:
    return np.stack([getattr(st, attr) for st in states])


def _rebuild(states, *, X, S, Y, D, M=None, B=None, Xp=None) -> list[AgentState]:
    rnd = states[0].round + 1
    out = []
    for i, st in enumerate(states):
        if not np.all(np.isfinite(X[i])):
            raise DivergenceError(i, states[0].round)
        out.append(
            AgentState(
                x=X[i],
                s=S[i],
                y_prev=Y[i],
                delta_prev=D[i],
                m=M[i] if M is not None else st.m,
                bias=B[i] if B is not None else st.bias,
                x_prev=Xp[i] if Xp is not None else st.x,
                round=rnd,
            )
        )
    return out


def init_states(X0: np.ndarray, W: MixingMatrix, spec: AlgorithmSpec) -> list[AgentState]:
    """Initial agent states: s = W X0 rows, all auxiliary buffers zero."""
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim != 2 or X0.shape[0] != W.n:
        raise ValueError(f"X0 must be ({W.n}, d), got shape {X0.shape}")
    if not np.all(np.isfinite(X0)):
        raise ValueError("X0 must be finite")
    S = W.weights @ X0
    d = X0.shape[1]
    return [
        AgentState(
            x=X0[i].copy(),
            s=S[i],
            y_prev=np.zeros(d),
            delta_prev=np.zeros(d),
            m=np.zeros(d),
            bias=np.zeros(d),
            x_prev=X0[i].copy(),
        )
        for i in range(W.n)
    ]


def _gradients(oracle, points: np.ndarray, rnd: int) -> np.ndarray:
    return np.stack([oracle(i, points[i], rnd)[1] for i in range(len(points))])


def gut_round(states, W, spec, oracle) -> list[AgentState]:
    """One tracked-update round (per-agent recursion with neighbor copies).

    g is taken at the mixed point s_i; the transmitted update is
    y = delta + mu * [W y_prev - (s - x)/eta - delta_prev] with
    delta = g - (s - x)/eta, and x steps by -eta*y.
    """
    w = W.weights
    eta = spec.lr(states[0].round)
    mu = spec.mu
    X = _stack(states, "x")
    Yp = _stack(states, "y_prev")
    Dp = _stack(states, "delta_prev")
    S = w @ X
    G = _gradients(oracle, S, states[0].round)
    disp = S - X
    delta = G - disp / eta
    corr = w @ Yp - disp / eta - Dp
    Y = delta + mu * corr
    # x - eta*y rearranged around the mixed point; reduces to W x - eta g
    # exactly when mu = 0
    Xn = S - eta * (G + mu * corr)
    Sn = w @ Xn
    return _rebuild(states, X=Xn, S=Sn, Y=Y, D=delta, Xp=X)


def gut_form_round(states, W, spec, oracle, form: str) -> list[AgentState]:
    """Alternative GUT formulations: ``matrix``, ``bias`` or ``memeff``."""
    w = W.weights
    rnd = states[0].round
    eta = spec.lr(rnd)
    mu = spec.mu
    X = _stack(states, "x")
    if form == "matrix":
        Yp = _stack(states, "y_prev")
        Dp = _stack(states, "delta_prev")
        S = w @ X
        G = _gradients(oracle, S, rnd)
        delta = G - (w @ X - X) / eta
        Y = delta + mu * (w @ Yp - (w @ X - X) / eta - Dp)
        Xn = X - eta * Y
        return _rebuild(states, X=Xn, S=w @ Xn, Y=Y, D=delta, Xp=X)
    if form == "bias":
        B = _stack(states, "bias")
        S = w @ X
        G = _gradients(oracle, S, rnd)
        Xn = S - eta * (G + mu * B)
        Bn = -((2.0 * w @ (Xn - X) - (Xn - X)) + eta * G) / eta
        Y = (X - Xn) / eta
        delta = G - (S - X) / eta
        return _rebuild(states, X=Xn, S=w @ Xn, Y=Y, D=delta, B=Bn, Xp=X)
    if form == "memeff":
        Yp = _stack(states, "y_prev")
        Dp = _stack(states, "delta_prev")
        S = _stack(states, "s")  # incrementally maintained aggregate
        G = _gradients(oracle, S, rnd)
        disp = S - X
        delta = G - disp / eta
        Y = delta + mu * (w @ Yp - disp / eta - Dp)
        Xn = X - eta * Y
        Sn = S - eta * (w @ Y)
        return _rebuild(states, X=Xn, S=Sn, Y=Y, D=delta, Xp=X)
    raise ValueError(f"unknown GUT form {form!r}")


def qg_gutm_round(states, W, spec, oracle) -> list[AgentState]:
    """Tracked update combined with a momentum buffer.

    Variants: QG-GUTm (exponential buffer, transmits m), QG-GUTm-impl
    (accumulating buffer with a (1+beta)/eta correction scale), GUTm
    (heavy-ball on the tracked update) and the Nesterov look-ahead
    versions of the latter two.
    """
    kind = spec.effective_kind()
    w = W.weights
    rnd = states[0].round
    eta = spec.lr(rnd)
    mu, beta = spec.mu, spec.beta
    X = _stack(states, "x")
    Mp = _stack(states, "m")
    Dp = _stack(states, "delta_prev")
    S = w @ X
    G = _gradients(oracle, S, rnd)
    disp = S - X
    delta = G - disp / eta
    scale = (1.0 + beta) if kind == "QG-GUTm-impl" else 1.0
    corr = w @ Mp - scale * disp / eta - Dp
    Y = delta + mu * corr
    tracked_step = S - eta * (G + mu * corr)  # equals x - eta*y
    if kind == "QG-GUTm":
        M = beta * Mp + (1.0 - beta) * Y
        Xn = beta * X + (1.0 - beta) * tracked_step - eta * beta * Mp
    elif kind == "QG-GUTmN":
        M = beta * Mp + (1.0 - beta) * Y
        Xn = beta * X + (1.0 - beta) * tracked_step - eta * beta * M
    elif kind in ("GUTm", "QG-GUTm-impl"):
        M = beta * Mp + Y
        Xn = tracked_step - eta * beta * Mp
    elif kind == "GUTmN":
        M = beta * Mp + Y
        Xn = tracked_step - eta * beta * M
    else:
        raise ValueError(f"qg_gutm_round cannot run kind {spec.kind!r}")
    return _rebuild(states, X=Xn, S=w @ Xn, Y=Y, D=delta, M=M, Xp=X)


def baseline_round(states, W, spec, oracle) -> list[AgentState]:
    """Gossip baselines with gradients at the local parameters."""
    kind = spec.effective_kind()
    w = W.weights
    rnd = states[0].round
    eta = spec.lr(rnd)
    beta = spec.beta
    X = _stack(states, "x")
    Mp = _stack(states, "m")
    G = _gradients(oracle, X, rnd)
    if kind == "DSGD":
        M = Mp
        Xn = w @ (X - eta * G)
    elif kind == "DSGDm":
        M = beta * Mp + G
        Xn = w @ (X - eta * M)
    elif kind == "DSGDmN":
        M = beta * Mp + G
        Xn = w @ (X - eta * (G + beta * M))
    elif kind == "QG-DSGDm":
        Xn = w @ (X - eta * (G + beta * Mp))
        M = beta * Mp + (1.0 - beta) * (X - Xn) / eta
    elif kind == "QG-DSGDmN":
        look = beta * Mp + (1.0 - beta) * G
        Xn = w @ (X - eta * (G + beta * look))
        M = beta * Mp + (1.0 - beta) * (X - Xn) / eta
    else:
        raise ValueError(f"baseline_round cannot run kind {spec.kind!r}")
    Y = (X - Xn) / eta
    return _rebuild(states, X=Xn, S=w @ Xn, Y=Y, D=G, M=M, Xp=X)


def gradient_tracking_round(states, W, spec, oracle) -> list[AgentState]:
    """Gradient tracking: y accumulates g - g_prev through the gossip mix.

    Both x and y are exchanged (2x communication).  y is initialized to
    the first local gradient.
    """
    w = W.weights
    rnd = states[0].round
    eta = spec.lr(rnd)
    X = _stack(states, "x")
    G = _gradients(oracle, X, rnd)
    if rnd == 0:
        Y = G
    else:
        Yp = _stack(states, "y_prev")
        Gp = _stack(states, "delta_prev")
        Y = w @ Yp - Gp + G
    Xn = w @ (X - eta * Y)
    return _rebuild(states, X=Xn, S=w @ Xn, Y=Y, D=G, Xp=X)


def rule_round(states, W, spec, oracle) -> list[AgentState]:
    """Naive tracking ablations (Rule-a, Rule-b).

    Both share the tracked first term G - (W - I)X/eta and transmit only
    Y; they differ in the mu-scaled correction.
    """
    w = W.weights
    rnd = states[0].round
    eta = spec.lr(rnd)
    mu = spec.mu
    X = _stack(states, "x")
    S = w @ X
    G = _gradients(oracle, S, rnd)
    disp = S - X
    delta = G - disp / eta
    if spec.kind == "RuleA":
        Yp = _stack(states, "y_prev")
        Dp = _stack(states, "delta_prev")
        corr = w @ Yp - Dp
    elif spec.kind == "RuleB":
        dx = X - _stack(states, "x_prev")
        corr = -(w @ dx - dx) / eta
    else:
        raise ValueError(f"rule_round cannot run kind {spec.kind!r}")
    Y = delta + mu * corr
    Xn = S - eta * (G + mu * corr)
    return _rebuild(states, X=Xn, S=w @ Xn, Y=Y, D=delta, Xp=X)


_DISPATCH = {
    "DSGD": baseline_round,
    "DSGDm": baseline_round,
    "DSGDmN": baseline_round,
    "QG-DSGDm": baseline_round,
    "QG-DSGDmN": baseline_round,
    "GT": gradient_tracking_round,
    "GUT": gut_round,
    "GUTm": qg_gutm_round,
    "GUTmN": qg_gutm_round,
    "QG-GUTm": qg_gutm_round,
    "QG-GUTmN": qg_gutm_round,
    "QG-GUTm-impl": qg_gutm_round,
    "RuleA": rule_round,
    "RuleB": rule_round,
}


def run_round(states, W, spec, oracle) -> list[AgentState]:
    """Dispatch one synchronous round for spec.kind.

    Overflow is not a warning here: divergence is an intended experimental
    condition, detected and raised as DivergenceError.
    """
    kind = spec.kind
    with np.errstate(over="ignore", invalid="ignore"):
        if kind.startswith("GUT-"):
            return gut_form_round(states, W, spec, oracle, form=kind.split("-", 1)[1].lower())
        return _DISPATCH[kind](states, W, spec, oracle)


@dataclass
class HyperparameterCheck:
    """Convergence-regime bounds; advisory, runs outside them are allowed."""

    eta_ok: bool
    mu_ok: bool
    eta_max: float
    mu_max: float


def validate_hyperparameters(eta: float, mu: float, rho: float, L: float) -> HyperparameterCheck:
    """Check eta <= rho/(7L) and mu/(1-mu) <= rho/42."""
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if L <= 0:
        raise ValueError(f"L must be positive, got {L}")
    eta_max = rho / (7.0 * L)
    mu_max = rho / (42.0 + rho)
    return HyperparameterCheck(
        eta_ok=eta <= eta_max,
        mu_ok=mu <= mu_max,
        eta_max=eta_max,
        mu_max=mu_max,
    )


def comm_cost(spec: AlgorithmSpec, d: int, W: MixingMatrix) -> int:
    """Scalars transmitted per agent per round: degree * d, doubled for GT."""
    mult = 2 if spec.kind == "GT" else 1
    degrees = [W.degree(i) for i in range(W.n)]
    deg = degrees[0] if len(set(degrees)) == 1 else sum(degrees) / len(degrees)
    return int(deg * d * mult)
