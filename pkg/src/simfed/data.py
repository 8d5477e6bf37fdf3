"""Synthetic datasets and client partitioning.

A federated dataset is a fixed list of clients, each holding a private
(x, y) block and an aggregation weight proportional to its sample count.
Inputs are kept inside the unit ball so the feature maps in
:mod:`simfed.models` see bounded activations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, SchemaError

__all__ = [
    "ClientDataset",
    "FederatedDataset",
    "LabeledPool",
    "gen_toy_sine",
    "toy_sine_truth",
    "gen_synthetic_classification",
    "split_pool",
    "partition_iid",
    "partition_by_label",
    "save_dataset_csv",
    "load_dataset_csv",
]


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's private block. ``weight`` is its share of the global objective."""

    client_id: int
    x: np.ndarray
    y: np.ndarray
    weight: float

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", np.ascontiguousarray(np.asarray(self.y).ravel()))
        if self.x.shape[0] != self.y.shape[0]:
            raise ContractError("x and y row counts differ")
        if self.x.shape[0] == 0:
            raise ContractError("client datasets must be non-empty")

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    clients: tuple[ClientDataset, ...]
    task: str = "regression"
    n_classes: int | None = None

    def __post_init__(self):
        clients = tuple(self.clients)
        if not clients:
            raise ContractError("need at least one client")
        for i, c in enumerate(clients):
            if c.client_id != i:
                raise ContractError("client ids must be 0..n_clients-1 in order")
        total = sum(c.weight for c in clients)
        if not np.isclose(total, 1.0, rtol=0, atol=1e-9):
            raise ContractError(f"client weights sum to {total}, expected 1")
        if any(c.weight <= 0 for c in clients):
            raise ContractError("client weights must be positive")
        object.__setattr__(self, "clients", clients)

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def n_total(self) -> int:
        return sum(c.n for c in self.clients)

    @property
    def d_in(self) -> int:
        return self.clients[0].x.shape[1]

    def union_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """All points concatenated in client-id order."""
        x = np.concatenate([c.x for c in self.clients], axis=0)
        y = np.concatenate([c.y for c in self.clients])
        return np.ascontiguousarray(x), np.ascontiguousarray(y)


@dataclass(frozen=True, eq=False)
class LabeledPool:
    """Un-partitioned labelled points, later dealt out to clients."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "x", np.ascontiguousarray(np.asarray(self.x, dtype=np.float64)))
        object.__setattr__(self, "y", np.ascontiguousarray(np.asarray(self.y, dtype=np.int64).ravel()))
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ContractError("pool x must be (n, d) aligned with y")

    @property
    def n(self) -> int:
        return self.x.shape[0]


def _sized_clients(blocks: list[tuple[np.ndarray, np.ndarray]]) -> tuple[ClientDataset, ...]:
    total = sum(x.shape[0] for x, _ in blocks)
    return tuple(
        ClientDataset(client_id=i, x=x, y=y, weight=x.shape[0] / total)
        for i, (x, y) in enumerate(blocks)
    )


def gen_toy_sine(
    n_clients: int = 50,
    pts_per_client: int = 2,
    *,
    a_mean: float = 1.0,
    a_std: float = 0.2,
    noise_std: float = 0.2,
    x_design: str = "uniform",
    seed: int | np.random.Generator = 0,
) -> FederatedDataset:
    """Sine-wave regression clients: ``y = a_i sin(2 pi x) + eps``.

    Each client gets its own amplitude ``a_i ~ N(a_mean, a_std^2)`` (the
    heterogeneity) and observation noise ``eps ~ N(0, noise_std^2)``.
    ``x_design='uniform'`` draws inputs uniformly on [-1, 1];
    ``'equispaced'`` lays all points on a fixed grid over [-1, 1] and hands
    each client a contiguous block, which keeps inputs well separated (no
    near-duplicate rows in the Gram matrix, so closed-form comparisons stay
    well conditioned). Per client the draw order is amplitude, then inputs
    (uniform design only), then noise, so the dataset is a pure function of
    the seed.
    """
    if n_clients < 1 or pts_per_client < 1:
        raise ConfigError("n_clients and pts_per_client must be >= 1")
    if a_std < 0 or noise_std < 0:
        raise ConfigError("a_std and noise_std must be non-negative")
    if x_design not in ("uniform", "equispaced"):
        raise ConfigError("x_design must be 'uniform' or 'equispaced'")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    total = n_clients * pts_per_client
    grid = -1.0 + 2.0 * (np.arange(total) + 0.5) / total
    blocks = []
    for i in range(n_clients):
        a = rng.normal(a_mean, a_std)
        if x_design == "uniform":
            x = rng.uniform(-1.0, 1.0, size=pts_per_client)
        else:
            x = grid[i * pts_per_client:(i + 1) * pts_per_client]
        eps = rng.normal(0.0, noise_std, size=pts_per_client)
        blocks.append((x[:, None], a * np.sin(2.0 * np.pi * x) + eps))
    return FederatedDataset(clients=_sized_clients(blocks), task="regression")


def toy_sine_truth(x: np.ndarray, a_mean: float = 1.0) -> np.ndarray:
    """Noiseless population target of the sine task (amplitude at its mean)."""
    x = np.asarray(x, dtype=np.float64)
    return a_mean * np.sin(2.0 * np.pi * np.ravel(x))


def gen_synthetic_classification(
    n_classes: int = 10,
    n_per_class: int = 100,
    d_in: int = 10,
    *,
    cluster_spread: float = 0.35,
    seed: int | np.random.Generator = 0,
) -> LabeledPool:
    """Gaussian blobs around unit-norm class centroids, rescaled into the unit ball.

    Centroids are drawn first (one pass), then per-class point noise, so a
    given seed pins the whole pool. The final rescale divides every point by
    the max norm only when that exceeds 1, keeping relative geometry intact.
    """
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    if n_per_class < 1 or d_in < 1:
        raise ConfigError("n_per_class and d_in must be >= 1")
    if cluster_spread <= 0:
        raise ConfigError("cluster_spread must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, d_in))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    xs, ys = [], []
    for c in range(n_classes):
        pts = centers[c] + cluster_spread * rng.normal(size=(n_per_class, d_in))
        xs.append(pts)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    x = np.concatenate(xs, axis=0)
    max_norm = float(np.linalg.norm(x, axis=1).max())
    if max_norm > 1.0:
        x = x / max_norm
    return LabeledPool(x=x, y=np.concatenate(ys), n_classes=n_classes)


def split_pool(pool: LabeledPool, test_fraction: float,
               seed: int | np.random.Generator = 0) -> tuple[LabeledPool, LabeledPool]:
    """Stratified train/test split; every class contributes the same fraction."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(pool.n_classes):
        idx = np.flatnonzero(pool.y == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(test_fraction * idx.size))
        if idx.size > 1:
            k = min(max(k, 1), idx.size - 1)
        test_idx.append(idx[:k])
        train_idx.append(idx[k:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return (LabeledPool(pool.x[tr], pool.y[tr], pool.n_classes),
            LabeledPool(pool.x[te], pool.y[te], pool.n_classes))


def partition_iid(pool: LabeledPool, n_clients: int,
                  seed: int | np.random.Generator = 0) -> FederatedDataset:
    """Shuffle the pool once and cut it into near-equal contiguous blocks."""
    if n_clients < 1 or n_clients > pool.n:
        raise ConfigError("n_clients must be in [1, pool size]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(pool.n)
    blocks = [(pool.x[part], pool.y[part]) for part in np.array_split(perm, n_clients)]
    return FederatedDataset(clients=_sized_clients(blocks), task="classification",
                            n_classes=pool.n_classes)


def partition_by_label(pool: LabeledPool, n_clients: int, noc: int,
                       seed: int | np.random.Generator = 0) -> FederatedDataset:
    """Heterogeneous split where each client sees at most ``noc`` distinct labels.

    The pool is cut into ``n_clients * noc`` label-pure shards (shard counts
    per class allocated proportionally by largest remainder, at least one per
    class), the shard list is shuffled, and shards are dealt round-robin so
    every client receives exactly ``noc`` of them. Label-pure shards make the
    <= noc guarantee structural rather than probabilistic.
    """
    if not 1 <= noc <= pool.n_classes:
        raise ConfigError(f"noc must be in [1, {pool.n_classes}]")
    if n_clients < 1:
        raise ConfigError("n_clients must be >= 1")
    n_shards = n_clients * noc
    if n_shards < pool.n_classes:
        raise ConfigError("n_clients * noc must be >= n_classes so every class is placed")
    counts = np.bincount(pool.y, minlength=pool.n_classes)
    if np.any(counts == 0):
        raise ConfigError("every class needs at least one point")
    shards_per_class = _largest_remainder(counts, n_shards)
    if np.any(shards_per_class > counts):
        raise ConfigError("too many shards for the smallest class; lower n_clients or noc")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shards: list[np.ndarray] = []
    for c in range(pool.n_classes):
        idx = np.flatnonzero(pool.y == c)
        idx = idx[rng.permutation(idx.size)]
        shards.extend(np.array_split(idx, shards_per_class[c]))
    order = rng.permutation(len(shards))
    blocks = []
    for j in range(n_clients):
        mine = np.concatenate([shards[order[s]] for s in range(j, n_shards, n_clients)])
        mine.sort()
        blocks.append((pool.x[mine], pool.y[mine]))
    return FederatedDataset(clients=_sized_clients(blocks), task="classification",
                            n_classes=pool.n_classes)


def _largest_remainder(counts: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` shards proportional to ``counts``, min 1 each."""
    quota = total * counts / counts.sum()
    out = np.maximum(np.floor(quota).astype(np.int64), 1)
    leftover = total - int(out.sum())
    if leftover < 0:
        # the min-1 floor over-allocated; claw back from the largest allocations
        for c in np.argsort(quota - out):
            if leftover == 0:
                break
            if out[c] > 1:
                out[c] -= 1
                leftover += 1
        if leftover < 0:
            raise ConfigError("cannot place at least one shard per class")
    else:
        frac = quota - np.floor(quota)
        for c in np.argsort(-frac)[:leftover]:
            out[c] += 1
    return out


# ---------------------------------------------------------------------------
# CSV round-trip: header client_id,y,x_0..x_{d-1}; float columns use repr so
# values survive the trip bit-for-bit.

def save_dataset_csv(fed: FederatedDataset, path) -> None:
    d = fed.d_in
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "y"] + [f"x_{j}" for j in range(d)])
        for c in fed.clients:
            for i in range(c.n):
                yv = int(c.y[i]) if fed.task == "classification" else repr(float(c.y[i]))
                writer.writerow([c.client_id, yv] + [repr(float(v)) for v in c.x[i]])


def load_dataset_csv(path, task: str = "regression",
                     n_classes: int | None = None) -> FederatedDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["client_id", "y"]:
            raise SchemaError(f"{path}: expected header client_id,y,x_0..")
        d = len(header) - 2
        if [f"x_{j}" for j in range(d)] != header[2:]:
            raise SchemaError(f"{path}: malformed feature columns {header[2:]}")
        rows: dict[int, list[tuple[float, list[float]]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 + d:
                raise SchemaError(f"{path}:{lineno}: expected {2 + d} fields, got {len(row)}")
            try:
                cid = int(row[0])
                yv = float(row[1])
                xv = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            rows.setdefault(cid, []).append((yv, xv))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    ids = sorted(rows)
    if ids != list(range(len(ids))):
        raise SchemaError(f"{path}: client ids must be contiguous from 0, got {ids[:5]}..")
    blocks = []
    for cid in ids:
        ys = np.array([r[0] for r in rows[cid]])
        xs = np.array([r[1] for r in rows[cid]])
        blocks.append((xs, ys.astype(np.int64) if task == "classification" else ys))
    if task == "classification" and n_classes is None:
        n_classes = int(max(b[1].max() for b in blocks)) + 1
    return FederatedDataset(clients=_sized_clients(blocks), task=task, n_classes=n_classes)
