"""Directed relatedness networks: representation, row normalization, and
the three random designs used in the simulation studies (independent dyads,
power-law in-degrees, stochastic block model).

Conventions: entries a_ij in {0,1} with zero diagonal; a_ij = 1 means node j
influences node i's volatility through the network term.  The normalized
form W = D^{-1} A divides each row by its out-degree d_i = sum_j a_ij, with
rows of isolated nodes (d_i = 0) left identically zero so the network term
simply vanishes for them.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidInputError
from .rng import as_generator


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Binary directed adjacency matrix with zero diagonal."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"adjacency matrix must be square, got shape {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise InvalidInputError("adjacency entries must be 0 or 1")
        if np.diag(a).any():
            raise InvalidInputError("adjacency diagonal must be zero")
        a = a.astype(np.int64, copy=True)
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def to_json(self) -> str:
        edges = np.argwhere(self.entries == 1)
        return json.dumps({"n": self.n, "edges": edges.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "AdjacencyMatrix":
        try:
            obj = json.loads(text)
            n = int(obj["n"])
            edges = obj["edges"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad network JSON: {exc}") from exc
        return _from_edges(n, edges)


@dataclass(frozen=True)
class NormalizedNetwork:
    """Row-normalized network W = D^{-1} A together with the out-degrees."""

    w: np.ndarray
    degrees: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).copy()
        d = np.asarray(self.degrees, dtype=np.int64).copy()
        w.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "degrees", d)

    @property
    def n(self) -> int:
        return self.w.shape[0]


def out_degrees(a: AdjacencyMatrix) -> np.ndarray:
    """Out-degree d_i = sum_j a_ij for each node."""
    return a.entries.sum(axis=1)


def normalize(a: AdjacencyMatrix) -> NormalizedNetwork:
    """Row-stochastic form: W[i, j] = a_ij / d_i, zero rows for d_i = 0."""
    d = out_degrees(a)
    denom = np.where(d > 0, d, 1).astype(float)
    w = a.entries / denom[:, None]
    return NormalizedNetwork(w=w, degrees=d)


def density(a: AdjacencyMatrix) -> float:
    """Network density: realized fraction of the N(N-1) possible edges."""
    n = a.n
    if n < 2:
        raise InvalidInputError("density requires at least 2 nodes")
    return float(a.entries.sum()) / (n * (n - 1))


def _dyad_probs(n: int):
    p_mutual = 20.0 / n
    p_oneway = 0.5 * n ** -0.8
    p_none = 1.0 - p_mutual - 2.0 * p_oneway
    for name, p in (("mutual", p_mutual), ("one-way", p_oneway), ("empty", p_none)):
        if not 0.0 <= p <= 1.0:
            raise InvalidInputError(
                f"dyad {name} probability {p:.4f} outside [0,1] at n={n}; increase n"
            )
    return p_mutual, p_oneway


def gen_dyad(n: int, seed=None) -> AdjacencyMatrix:
    """Independent-dyad design: each unordered pair (i, j) is mutual with
    probability 20/n, one-way (either direction) with probability 0.5 n^-0.8
    each, and unconnected with the remaining mass."""
    p_mutual, p_oneway = _dyad_probs(n)
    rng = as_generator(seed)
    iu, ju = np.triu_indices(n, k=1)
    u = rng.random(iu.size)
    a = np.zeros((n, n), dtype=np.int64)
    mutual = u < p_mutual
    fwd = (u >= p_mutual) & (u < p_mutual + p_oneway)
    bwd = (u >= p_mutual + p_oneway) & (u < p_mutual + 2 * p_oneway)
    a[iu[mutual], ju[mutual]] = 1
    a[ju[mutual], iu[mutual]] = 1
    a[iu[fwd], ju[fwd]] = 1
    a[ju[bwd], iu[bwd]] = 1
    return AdjacencyMatrix(a)


def powerlaw_pmf(n: int, alpha: float) -> np.ndarray:
    """Normalized pmf of the in-degree law P(d = k) = c k^-alpha on
    k = 1, ..., n-1."""
    if alpha < 1:
        raise InvalidInputError(f"power-law exponent must be >= 1, got {alpha}")
    if n < 2:
        raise InvalidInputError("power-law design requires at least 2 nodes")
    k = np.arange(1, n, dtype=float)
    pmf = k ** -alpha
    return pmf / pmf.sum()


def gen_powerlaw(n: int, alpha: float, seed=None) -> AdjacencyMatrix:
    """Power-law design: node i's in-degree k_i is drawn from c k^-alpha on
    {1, ..., n-1}, then k_i distinct followers of i are chosen uniformly."""
    pmf = powerlaw_pmf(n, alpha)
    rng = as_generator(seed)
    degrees = rng.choice(np.arange(1, n), size=n, p=pmf)
    a = np.zeros((n, n), dtype=np.int64)
    others = np.arange(n)
    for i in range(n):
        candidates = others[others != i]
        followers = rng.choice(candidates, size=degrees[i], replace=False)
        a[followers, i] = 1
    return AdjacencyMatrix(a)


def gen_sbm(n: int, k: int, seed=None) -> AdjacencyMatrix:
    """Stochastic block design: uniform block labels 1..k; a directed edge
    appears with probability 0.3 n^-0.3 within a block and 0.3/n across."""
    if not 1 <= k <= n:
        raise InvalidInputError(f"block count must satisfy 1 <= k <= n, got k={k}, n={n}")
    rng = as_generator(seed)
    labels = rng.integers(0, k, size=n)
    p_in = 0.3 * n ** -0.3
    p_out = 0.3 / n
    same = labels[:, None] == labels[None, :]
    p = np.where(same, p_in, p_out)
    a = (rng.random((n, n)) < p).astype(np.int64)
    np.fill_diagonal(a, 0)
    return AdjacencyMatrix(a)


def analytic_density(kind: str, n: int, alpha: float = None, k: int = None) -> float:
    """Expected network density of each generator, for reporting alongside
    the empirical value."""
    if kind == "dyad":
        p_mutual, p_oneway = _dyad_probs(n)
        return p_mutual + p_oneway
    if kind == "powerlaw":
        pmf = powerlaw_pmf(n, alpha)
        mean_degree = float(np.arange(1, n) @ pmf)
        return mean_degree / (n - 1)
    if kind == "sbm":
        if not 1 <= k <= n:
            raise InvalidInputError(f"block count must satisfy 1 <= k <= n, got k={k}, n={n}")
        p_in = 0.3 * n ** -0.3
        p_out = 0.3 / n
        return p_in / k + (1.0 - 1.0 / k) * p_out
    raise InvalidInputError(f"unknown generator kind {kind!r}")


def _from_edges(n: int, edges) -> AdjacencyMatrix:
    a = np.zeros((n, n), dtype=np.int64)
    for src, dst in edges:
        src, dst = int(src), int(dst)
        if not (0 <= src < n and 0 <= dst < n):
            raise DataError(f"edge ({src},{dst}) out of bounds for n={n}")
        if src == dst:
            raise DataError(f"self-loop ({src},{dst}) not allowed")
        a[src, dst] = 1
    return AdjacencyMatrix(a)


def save_edges_csv(a: AdjacencyMatrix, path) -> None:
    """Write the edge list as CSV with header ``src,dst`` (0-based)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        for src, dst in np.argwhere(a.entries == 1):
            writer.writerow([int(src), int(dst)])


def load_edges_csv(path, n: int = None) -> AdjacencyMatrix:
    """Read an edge-list CSV (header ``src,dst``).  If n is not given it is
    inferred as 1 + the largest index present."""
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["src", "dst"]:
            raise DataError(f"{path}: expected header 'src,dst', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                edges.append((int(row[0]), int(row[1])))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad edge row {row}") from exc
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
        if n < 1:
            raise DataError(f"{path}: empty edge list and no n given")
    return _from_edges(n, edges)
