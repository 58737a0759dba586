"""Desk-scale differentiable problems with controllable heterogeneity.

Three problem families share one gradient-oracle interface:

* quadratic  - f_i(x) = 0.5 ||x - b_i||^2 with analytically known optimum,
  exact inter-agent gradient deviation (zeta) and injected Gaussian
  gradient noise (sigma).
* softmax    - multinomial logistic regression on Gaussian class clusters.
* mlp        - one hidden tanh layer, hand-written backpropagation.

All stochastic draws are keyed by (seed, agent, round) substreams, so a
trajectory is a pure function of its configuration and independent of
evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SyntheticProblemSpec",
    "Batch",
    "Problem",
    "QuadraticProblem",
    "SoftmaxProblem",
    "MlpProblem",
    "make_problem",
    "make_quadratic",
    "loss_and_grad",
    "finite_diff_check",
    "evaluate",
    "make_oracle",
]


@dataclass(frozen=True)
class SyntheticProblemSpec:
    """Configuration of a synthetic per-agent objective family."""

    kind: str  # quadratic | softmax | mlp
    d: int
    n_agents: int
    zeta: float = 0.0
    sigma: float = 0.0
    L: float = 1.0
    seed: int = 0
    n_classes: int = 10
    n_samples: int = 2000
    hidden: int = 16
    separation: float = 3.0

    def __post_init__(self):
        if self.zeta < 0 or self.sigma < 0 or self.L <= 0:
            raise ValueError("require zeta >= 0, sigma >= 0, L > 0")
        if self.kind not in ("quadratic", "softmax", "mlp"):
            raise ValueError(f"unknown problem kind {self.kind!r}")


@dataclass(frozen=True)
class Batch:
    """Sample indices plus the (seed, agent, round) RNG substream key."""

    indices: np.ndarray | None
    substream: tuple[int, int, int]


def _substream_rng(substream: tuple[int, int, int]) -> np.random.Generator:
    seed, *key = substream
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    )


class Problem:
    """Common interface: per-agent stochastic losses over shared parameters."""

    kind: str
    dim: int  # parameter dimension
    n_agents: int
    seed: int

    def draw_batch(
        self, agent: int, rnd: int, batch_size: int | None, seed: int | None = None
    ) -> Batch:
        raise NotImplementedError

    def loss_and_grad(
        self, agent: int, params: np.ndarray, batch: Batch
    ) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def exact_loss_and_grad(
        self, agent: int, params: np.ndarray
    ) -> tuple[float, np.ndarray]:
        """Full-data, noise-free local objective (for checks and references)."""
        raise NotImplementedError

    def global_loss(self, params: np.ndarray) -> float:
        return float(
            np.mean([self.exact_loss_and_grad(i, params)[0] for i in range(self.n_agents)])
        )

    def evaluate(self, params: np.ndarray) -> tuple[float, float | None]:
        raise NotImplementedError


class QuadraticProblem(Problem):
    """f_i(x) = 0.5 ||x - b_i||^2 with b_i = b_bar + zeta * u_i.

    The direction vectors u_i sum to zero and have unit mean squared norm,
    so the inter-agent gradient deviation (1/n) sum ||grad_i - grad||^2
    equals zeta^2 at every x.  L = 1, x* = b_bar, f* = zeta^2 / 2.
    """

    kind = "quadratic"

    def __init__(self, spec: SyntheticProblemSpec):
        if spec.zeta > 0 and spec.n_agents < 2:
            raise ValueError("zeta > 0 requires at least 2 agents")
        self.spec = spec
        self.dim = spec.d
        self.n_agents = spec.n_agents
        self.seed = spec.seed
        self.sigma = spec.sigma
        rng = np.random.default_rng(spec.seed)
        b_bar = rng.normal(size=spec.d)
        if spec.zeta > 0:
            u = rng.normal(size=(spec.n_agents, spec.d))
            u -= u.mean(axis=0)
            u /= np.sqrt(np.mean(np.sum(u * u, axis=1)))
        else:
            u = np.zeros((spec.n_agents, spec.d))
        self.b = b_bar + spec.zeta * u
        self.x_star = b_bar
        self.f_star = 0.5 * spec.zeta**2

    def draw_batch(self, agent, rnd, batch_size=None, seed=None):
        return Batch(
            indices=None,
            substream=(self.seed if seed is None else seed, agent, rnd),
        )

    def loss_and_grad(self, agent, params, batch):
        if not np.all(np.isfinite(params)):
            raise ValueError(f"non-finite parameters supplied to agent {agent}")
        diff = params - self.b[agent]
        loss = 0.5 * float(diff @ diff)
        grad = diff
        if self.sigma > 0:
            rng = _substream_rng(batch.substream)
            grad = grad + self.sigma * rng.standard_normal(self.dim)
        return loss, grad

    def exact_loss_and_grad(self, agent, params):
        diff = params - self.b[agent]
        return 0.5 * float(diff @ diff), diff.copy()

    def global_loss(self, params):
        diff = params - self.x_star
        return 0.5 * float(diff @ diff) + self.f_star

    def evaluate(self, params):
        return self.global_loss(params), None


def _make_clusters(spec: SyntheticProblemSpec, rng: np.random.Generator, n: int):
    means = spec.separation * rng.normal(size=(spec.n_classes, spec.d))
    labels = np.arange(n) % spec.n_classes
    rng.shuffle(labels)
    feats = means[labels] + rng.normal(size=(n, spec.d))
    return feats, labels, means


class _ClassificationProblem(Problem):
    """Shared dataset/partition plumbing for softmax and mlp problems."""

    def __init__(self, spec: SyntheticProblemSpec, assignments=None):
        self.spec = spec
        self.n_agents = spec.n_agents
        self.seed = spec.seed
        rng = np.random.default_rng(spec.seed)
        self.features, self.labels, self._means = _make_clusters(
            spec, rng, spec.n_samples
        )
        n_test = max(spec.n_classes, spec.n_samples // 5)
        self.test_features = (
            self._means[np.arange(n_test) % spec.n_classes]
            + rng.normal(size=(n_test, spec.d))
        )
        self.test_labels = np.arange(n_test) % spec.n_classes
        if assignments is None:
            idx = rng.permutation(spec.n_samples)
            assignments = [a for a in np.array_split(idx, spec.n_agents)]
        self.assignments = [np.asarray(a) for a in assignments]

    def draw_batch(self, agent, rnd, batch_size=None, seed=None):
        key = (self.seed if seed is None else seed, agent, rnd)
        local = self.assignments[agent]
        if batch_size is None or batch_size >= len(local):
            return Batch(indices=local, substream=key)
        rng = _substream_rng(key)
        picked = local[rng.integers(0, len(local), size=batch_size)]
        return Batch(indices=picked, substream=key)

    def _batch_loss_grad(self, feats, labels, params):
        raise NotImplementedError

    def _predict(self, feats, params):
        raise NotImplementedError

    def loss_and_grad(self, agent, params, batch):
        if not np.all(np.isfinite(params)):
            raise ValueError(f"non-finite parameters supplied to agent {agent}")
        idx = batch.indices
        return self._batch_loss_grad(self.features[idx], self.labels[idx], params)

    def exact_loss_and_grad(self, agent, params):
        idx = self.assignments[agent]
        return self._batch_loss_grad(self.features[idx], self.labels[idx], params)

    def evaluate(self, params):
        if len(self.test_labels) == 0:
            raise ValueError("empty test set")
        loss, _ = self._batch_loss_grad(self.test_features, self.test_labels, params)
        pred = self._predict(self.test_features, params)
        return loss, float(np.mean(pred == self.test_labels))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxProblem(_ClassificationProblem):
    """Multinomial logistic regression; parameters are the k x d weight matrix."""

    kind = "softmax"

    def __init__(self, spec, assignments=None):
        super().__init__(spec, assignments)
        self.dim = spec.n_classes * spec.d

    def _unpack(self, params):
        return params.reshape(self.spec.n_classes, self.spec.d)

    def _batch_loss_grad(self, feats, labels, params):
        w = self._unpack(params)
        probs = _softmax(feats @ w.T)
        m = len(labels)
        loss = float(-np.mean(np.log(probs[np.arange(m), labels] + 1e-300)))
        probs[np.arange(m), labels] -= 1.0
        grad = (probs.T @ feats) / m
        return loss, grad.ravel()

    def _predict(self, feats, params):
        return np.argmax(feats @ self._unpack(params).T, axis=1)


class MlpProblem(_ClassificationProblem):
    """One hidden tanh layer classifier with hand-written backpropagation."""

    kind = "mlp"

    def __init__(self, spec, assignments=None):
        super().__init__(spec, assignments)
        d, h, k = spec.d, spec.hidden, spec.n_classes
        self._shapes = [(h, d), (h,), (k, h), (k,)]
        self.dim = h * d + h + k * h + k

    def _unpack(self, params):
        out, pos = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            out.append(params[pos : pos + size].reshape(shape))
            pos += size
        return out

    def _batch_loss_grad(self, feats, labels, params):
        w1, b1, w2, b2 = self._unpack(params)
        m = len(labels)
        a1 = np.tanh(feats @ w1.T + b1)
        probs = _softmax(a1 @ w2.T + b2)
        loss = float(-np.mean(np.log(probs[np.arange(m), labels] + 1e-300)))
        dz2 = probs
        dz2[np.arange(m), labels] -= 1.0
        dz2 /= m
        dw2 = dz2.T @ a1
        db2 = dz2.sum(axis=0)
        da1 = dz2 @ w2
        dz1 = da1 * (1.0 - a1 * a1)
        dw1 = dz1.T @ feats
        db1 = dz1.sum(axis=0)
        return loss, np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])

    def _predict(self, feats, params):
        w1, b1, w2, b2 = self._unpack(params)
        return np.argmax(np.tanh(feats @ w1.T + b1) @ w2.T + b2, axis=1)


def make_quadratic(spec: SyntheticProblemSpec) -> QuadraticProblem:
    if spec.kind != "quadratic":
        raise ValueError(f"make_quadratic got kind {spec.kind!r}")
    return QuadraticProblem(spec)


def make_problem(spec: SyntheticProblemSpec, assignments=None) -> Problem:
    if spec.kind == "quadratic":
        return QuadraticProblem(spec)
    if spec.kind == "softmax":
        return SoftmaxProblem(spec, assignments)
    return MlpProblem(spec, assignments)


def loss_and_grad(problem: Problem, agent: int, params: np.ndarray, batch: Batch):
    return problem.loss_and_grad(agent, params, batch)


def finite_diff_check(
    problem: Problem, params: np.ndarray, eps: float = 1e-5, agent: int = 0
) -> float:
    """Max per-coordinate relative error of analytic vs central-difference grad.

    Runs on the noise-free full-data local objective.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    _, grad = problem.exact_loss_and_grad(agent, params)
    worst = 0.0
    for j in range(len(params)):
        step = np.zeros_like(params)
        step[j] = eps
        fp, _ = problem.exact_loss_and_grad(agent, params + step)
        fm, _ = problem.exact_loss_and_grad(agent, params - step)
        fd = (fp - fm) / (2 * eps)
        rel = abs(grad[j] - fd) / max(1.0, abs(grad[j]), abs(fd))
        worst = max(worst, rel)
    return worst


def evaluate(problem: Problem, params: np.ndarray) -> tuple[float, float | None]:
    """Deterministic test-set loss (and accuracy for classification kinds)."""
    return problem.evaluate(params)


def make_oracle(problem: Problem, batch_size: int | None = None, seed: int | None = None):
    """Gradient oracle (agent, params, round) -> (loss, grad).

    Batches and noise are keyed by (seed, agent, round) substreams, with
    ``seed`` defaulting to the problem seed, so replaying the same
    configuration reproduces the gradient stream exactly.
    """

    def oracle(agent: int, params: np.ndarray, rnd: int):
        batch = problem.draw_batch(agent, rnd, batch_size, seed=seed)
        return problem.loss_and_grad(agent, params, batch)

    return oracle
