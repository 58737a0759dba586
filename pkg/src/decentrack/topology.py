"""Communication graphs as doubly stochastic mixing matrices.

Builds the ring, Dyck and torus gossip topologies with uniform weights
(1 / peers-including-self) and computes their spectral statistics.  The
spectral gap ``rho = 1 - max(|lambda2|, |lambdaN|)`` controls how fast
gossip averaging contracts toward consensus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MixingMatrix",
    "SpectralStats",
    "ValidationReport",
    "build_topology",
    "spectral_stats",
    "validate_mixing",
    "as_mixing",
    "matrix_csv",
]

STOCHASTIC_TOL = 1e-12

# Chords of the Dyck graph on 32 vertices (0-indexed endpoint pairs),
# added on top of the 32-cycle.  Every vertex sits on exactly one chord,
# so the graph is 3-regular before self-loops.
_DYCK_CHORDS = [
    (0, 19), (3, 16), (8, 27), (11, 24),
    (4, 23), (7, 20), (12, 31), (15, 28),
    (1, 6), (5, 10), (9, 14), (13, 18),
    (17, 22), (21, 26), (25, 30), (2, 29),
]


@dataclass
class SpectralStats:
    """Second-largest / smallest eigenvalues of W and the spectral gap."""

    lambda2: float
    lambda_n: float
    rho: float


@dataclass
class MixingMatrix:
    """Doubly stochastic gossip weight matrix over ``n`` agents.

    ``weights[i, j] > 0`` iff ``{i, j}`` is an edge or ``i == j``;
    all built-in topologies include a positive self-loop.
    """

    n: int
    weights: np.ndarray
    edges: list[tuple[int, int]]
    spectral: SpectralStats | None = field(default=None, compare=False)

    def degree(self, i: int) -> int:
        """Number of neighbors of agent ``i``, excluding itself."""
        return sum(1 for a, b in self.edges if i in (a, b))

    def neighbors(self, i: int) -> list[int]:
        out = [b if a == i else a for a, b in self.edges if i in (a, b)]
        return sorted(out)


@dataclass
class ValidationReport:
    """List of violated mixing-matrix invariants; empty means compliant."""

    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def _ring_edges(n: int) -> list[tuple[int, int]]:
    return [(i, (i + 1) % n) for i in range(n)]


def _matrix_from_edges(n: int, edges: list[tuple[int, int]], peers: int) -> np.ndarray:
    w = np.zeros((n, n))
    v = 1.0 / peers
    np.fill_diagonal(w, v)
    for a, b in edges:
        w[a, b] = v
        w[b, a] = v
    return w


def _square_grid(n: int) -> tuple[int, int]:
    """Most-square factorization rows * cols == n with rows <= cols."""
    best = None
    for r in range(1, int(np.sqrt(n)) + 1):
        if n % r == 0:
            best = (r, n // r)
    assert best is not None
    return best


def build_topology(kind: str, n: int, grid: tuple[int, int] | None = None) -> MixingMatrix:
    """Build a uniform-weight mixing matrix for the given graph family.

    kind: ``ring`` (3 peers per agent including self, weight 1/3),
    ``dyck`` (n=32 fixed, 4 peers, weight 1/4) or ``torus``
    (rows x cols wraparound grid, 5 peers, weight 1/5).
    """
    if kind == "ring":
        if n < 3:
            raise ValueError(f"ring topology requires n >= 3, got n={n}")
        edges = _ring_edges(n)
        if n == 3:
            # ring of 3 is the complete graph; drop duplicate edges
            edges = [(0, 1), (1, 2), (0, 2)]
        weights = _matrix_from_edges(n, edges, peers=3)
    elif kind == "dyck":
        if n != 32:
            raise ValueError(f"dyck topology is a fixed graph on 32 agents, got n={n}")
        edges = _ring_edges(32) + list(_DYCK_CHORDS)
        weights = _matrix_from_edges(n, edges, peers=4)
    elif kind == "torus":
        rows, cols = grid if grid is not None else _square_grid(n)
        if rows * cols != n:
            raise ValueError(f"torus grid {rows}x{cols} does not factor n={n}")
        if rows < 3 or cols < 3:
            raise ValueError(
                f"torus requires both grid dimensions >= 3, got {rows}x{cols}"
            )
        edges = []
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c
                edges.append((i, r * cols + (c + 1) % cols))
                edges.append((i, ((r + 1) % rows) * cols + c))
        edges = sorted({(min(a, b), max(a, b)) for a, b in edges})
        weights = _matrix_from_edges(n, edges, peers=5)
    else:
        raise ValueError(f"unknown topology kind {kind!r}; expected ring, dyck or torus")
    edges = sorted({(min(a, b), max(a, b)) for a, b in edges})
    return MixingMatrix(n=n, weights=weights, edges=edges)


def as_mixing(weights: np.ndarray) -> MixingMatrix:
    """Wrap a raw weight matrix, deriving edges from positive off-diagonals."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    edges = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if w[i, j] > 0 or w[j, i] > 0
    ]
    return MixingMatrix(n=n, weights=w, edges=edges)


def spectral_stats(mixing: MixingMatrix) -> SpectralStats:
    """Eigen-statistics of W: lambda2, lambdaN and rho = 1 - max(|l2|, |lN|).

    Uses a full symmetric eigendecomposition; matrices here are small.
    The result is cached on the mixing matrix.
    """
    if mixing.spectral is not None:
        return mixing.spectral
    try:
        eigs = np.linalg.eigvalsh(mixing.weights)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy rarely fails here
        raise RuntimeError(f"eigendecomposition failed for n={mixing.n} matrix: {exc}")
    eigs = np.sort(eigs)[::-1]
    lambda2 = float(eigs[1])
    lambda_n = float(eigs[-1])
    rho = 1.0 - max(abs(lambda2), abs(lambda_n))
    stats = SpectralStats(lambda2=lambda2, lambda_n=lambda_n, rho=rho)
    mixing.spectral = stats
    return stats


def _connected(w: np.ndarray) -> bool:
    n = w.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in range(n):
            if j not in seen and (w[i, j] > 0 or w[j, i] > 0):
                seen.add(j)
                frontier.append(j)
    return len(seen) == n


def validate_mixing(mixing: MixingMatrix | np.ndarray) -> ValidationReport:
    """Check the doubly stochastic mixing-matrix invariants.

    Returns a report listing every violation (row sums, column sums,
    symmetry, nonnegativity, connectivity) instead of raising.
    """
    w = mixing.weights if isinstance(mixing, MixingMatrix) else np.asarray(mixing, float)
    violations: list[str] = []
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        return ValidationReport([f"matrix is not square: shape {w.shape}"])
    row = np.abs(w.sum(axis=1) - 1.0)
    if row.max() > STOCHASTIC_TOL:
        bad = int(np.argmax(row))
        violations.append(f"row sums deviate from 1 (row {bad}: {w[bad].sum():.6g})")
    col = np.abs(w.sum(axis=0) - 1.0)
    if col.max() > STOCHASTIC_TOL:
        bad = int(np.argmax(col))
        violations.append(
            f"column sums deviate from 1 (column {bad}: {w[:, bad].sum():.6g})"
        )
    if not np.array_equal(w, w.T):
        violations.append("matrix is not symmetric")
    if w.min() < 0:
        i, j = np.unravel_index(np.argmin(w), w.shape)
        violations.append(f"negative weight at ({i}, {j}): {w[i, j]:.6g}")
    if not _connected(w):
        violations.append("graph induced by positive weights is not connected")
    return ValidationReport(violations)


def matrix_csv(mixing: MixingMatrix) -> str:
    """Render the weight matrix as CSV with 17 significant digits."""
    lines = [
        ",".join(format(v, ".17g") for v in row) for row in mixing.weights
    ]
    return "\n".join(lines) + "\n"
