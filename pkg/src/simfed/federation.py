"""Federated training loop with an ensemble of K server modes.

The algorithm keeps K independent weight vectors ("modes") on the server.
Clients are split once into Q fixed strata. Training proceeds in ages of K
rounds each: at the start of an age every stratum draws a random permutation
of the modes, and in round r of the age stratum q trains mode
``perm[q][r]``. Over one age every (mode, stratum) pair therefore meets
exactly once, so all modes see all data at the same rate while staying
decoupled: the server only ever averages updates belonging to the same mode.

``fedavg`` and ``fedprox`` are the K=1 degenerate cases of the same loop
(fedprox additionally anchors local steps to the broadcast weights), so
comparisons across algorithms share every code path except the proximal
term.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import models
from ._accel import ops
from .data import FederatedDataset
from .errors import ConfigError, ContractError, DivergenceError, ProtocolError
from .models import InitSpec, MlpModel, RbfFeatureModel
from .seeds import stream

__all__ = [
    "ALGORITHMS",
    "Strata",
    "PermutationSchedule",
    "Ensemble",
    "RoundPlan",
    "ClientUpdate",
    "ClientEvent",
    "RunRecord",
    "LocalHyper",
    "TrainingRun",
    "build_strata",
    "new_schedule",
    "plan_round",
    "server_update",
    "run_round",
    "run_training",
]

ALGORITHMS = ("fed_ensemble", "fedavg", "fedprox")


@dataclass(frozen=True, eq=False)
class Strata:
    """Fixed partition of client ids into Q groups of near-equal size."""

    assignment: np.ndarray  # (n_clients,) stratum index per client
    n_strata: int

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.assignment, dtype=np.int64))
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1 or self.n_strata < 1:
            raise ContractError("bad strata assignment")
        present = np.unique(a)
        if present.min() < 0 or present.max() >= self.n_strata or present.size != self.n_strata:
            raise ContractError("every stratum must be non-empty")

    @property
    def n_clients(self) -> int:
        return self.assignment.shape[0]

    def members(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == q)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_strata)


def build_strata(n_clients: int, n_strata: int,
                 rng: np.random.Generator | int = 0) -> Strata:
    """Randomly assign clients to strata; sizes differ by at most one."""
    if not 1 <= n_strata <= n_clients:
        raise ConfigError("need 1 <= n_strata <= n_clients")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    perm = rng.permutation(n_clients)
    assignment = np.empty(n_clients, dtype=np.int64)
    for q, part in enumerate(np.array_split(perm, n_strata)):
        assignment[part] = q
    return Strata(assignment=assignment, n_strata=n_strata)


@dataclass(frozen=True, eq=False)
class PermutationSchedule:
    """(Q, K) table for one age; row q is a permutation of the K mode indices."""

    modes: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.modes, dtype=np.int64))
        object.__setattr__(self, "modes", m)
        if m.ndim != 2:
            raise ContractError("schedule must be a (n_strata, n_modes) table")
        k = m.shape[1]
        for row in m:
            if not np.array_equal(np.sort(row), np.arange(k)):
                raise ContractError("each schedule row must be a permutation of the modes")

    @property
    def n_strata(self) -> int:
        return self.modes.shape[0]

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]


def new_schedule(n_strata: int, n_modes: int,
                 rng: np.random.Generator | int = 0) -> PermutationSchedule:
    """Independent uniform mode permutation per stratum, drawn in stratum order."""
    if n_strata < 1 or n_modes < 1:
        raise ConfigError("n_strata and n_modes must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    modes = np.stack([rng.permutation(n_modes) for _ in range(n_strata)])
    return PermutationSchedule(modes=modes)


class Ensemble:
    """The K server weight vectors. Mutated in place by :func:`server_update`."""

    def __init__(self, modes: list[np.ndarray]):
        if not modes:
            raise ContractError("ensemble needs at least one mode")
        sizes = {m.shape for m in modes}
        if len(sizes) != 1:
            raise ContractError("all modes must share one weight shape")
        self.modes = [np.ascontiguousarray(np.asarray(m, dtype=np.float64).ravel())
                      for m in modes]

    @classmethod
    def from_init(cls, model, n_modes: int, init: InitSpec,
                  master_seed: int, repeat_index: int = 0) -> "Ensemble":
        """K independent draws, one seed stream per mode index."""
        if n_modes < 1:
            raise ConfigError("n_modes must be >= 1")
        return cls([
            models.init_weights(model, init, stream(master_seed, "init", repeat_index, k))
            for k in range(n_modes)
        ])

    @property
    def k(self) -> int:
        return len(self.modes)

    def copy(self) -> "Ensemble":
        return Ensemble([m.copy() for m in self.modes])


@dataclass(frozen=True, eq=False)
class RoundPlan:
    """Who trains what in one round: per-stratum mode and selected client ids."""

    age: int
    round_in_age: int
    global_round: int
    mode_of_stratum: np.ndarray          # (Q,)
    selected: tuple[np.ndarray, ...]     # client ids per stratum, ascending


def plan_round(strata: Strata, schedule: PermutationSchedule, age: int,
               round_in_age: int, global_round: int,
               clients_per_stratum: int | None = None,
               rng: np.random.Generator | int = 0) -> RoundPlan:
    """Fix this round's assignments. ``clients_per_stratum=None`` means full
    participation; otherwise that many clients are sampled without replacement
    from each stratum (capped at the stratum size)."""
    if schedule.n_strata != strata.n_strata:
        raise ContractError("schedule and strata disagree on n_strata")
    if not 0 <= round_in_age < schedule.n_modes:
        raise ContractError("round_in_age outside the age")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    selected = []
    for q in range(strata.n_strata):
        members = strata.members(q)
        if clients_per_stratum is not None and clients_per_stratum < members.size:
            if clients_per_stratum < 1:
                raise ConfigError("clients_per_stratum must be >= 1")
            members = rng.choice(members, size=clients_per_stratum, replace=False)
        selected.append(np.sort(members))
    return RoundPlan(age=age, round_in_age=round_in_age, global_round=global_round,
                     mode_of_stratum=schedule.modes[:, round_in_age].copy(),
                     selected=tuple(selected))


@dataclass(frozen=True)
class ClientUpdate:
    """One client's trained weights headed back to the server."""

    client_id: int
    mode_index: int
    n_points: int
    weights: np.ndarray


@dataclass(frozen=True)
class ClientEvent:
    """Bookkeeping for one local training call."""

    client_id: int
    stratum: int
    mode_index: int
    n_points: int
    local_loss_before: float
    local_loss_after: float


@dataclass(frozen=True)
class RunRecord:
    """Everything recorded about one round. ``mode_train_loss`` is an in-memory
    extra (per-mode union loss); the serialized form keeps only the scalar
    ensemble loss."""

    age: int
    round_index: int
    events: tuple[ClientEvent, ...]
    global_train_loss: float
    wallclock_ms: float
    mode_train_loss: tuple[float, ...] | None = None


@dataclass(frozen=True)
class LocalHyper:
    """Per-round local optimizer settings (lr already decayed by the caller)."""

    epochs: int
    lr: float
    prox_mu: float = 0.0
    l2_prior: float = 0.0
    batch_size: int | None = None


def server_update(ensemble: Ensemble, updates: list[ClientUpdate],
                  weighting: str = "size") -> None:
    """Replace each touched mode by the weighted mean of its client updates.

    Updates are grouped strictly by mode index; modes nobody trained keep
    their weights. ``size`` weighting uses the clients' point counts,
    ``uniform`` counts every update equally. Within a mode the reduction runs
    in ascending client id so the float result is reproducible.
    """
    if weighting not in ("size", "uniform"):
        raise ConfigError("weighting must be 'size' or 'uniform'")
    if not updates:
        raise ProtocolError("server_update received no client updates")
    by_mode: dict[int, list[ClientUpdate]] = {}
    for u in updates:
        if not 0 <= u.mode_index < ensemble.k:
            raise ProtocolError(f"update for unknown mode {u.mode_index}")
        if u.weights.shape != ensemble.modes[u.mode_index].shape:
            raise ProtocolError("update weight shape does not match the mode")
        if u.n_points < 1:
            raise ProtocolError("updates must carry a positive point count")
        by_mode.setdefault(u.mode_index, []).append(u)
    for k in sorted(by_mode):
        acc = np.zeros_like(ensemble.modes[k])
        denom = 0.0
        for u in sorted(by_mode[k], key=lambda u: u.client_id):
            share = float(u.n_points) if weighting == "size" else 1.0
            acc += share * u.weights
            denom += share
        ensemble.modes[k] = acc / denom


@dataclass(frozen=True, eq=False)
class ClientCache:
    """Canonicalized per-client arrays so the round loop can call training
    kernels directly instead of re-validating every round."""

    x: np.ndarray
    y: np.ndarray
    features: np.ndarray | None
    n: int


def prepare_clients(model, fed: FederatedDataset) -> list[ClientCache]:
    """Validate and canonicalize every client's data once per run. For the
    RBF model this also precomputes the fixed design matrices."""
    caches = []
    rbf = isinstance(model, RbfFeatureModel)
    for c in fed.clients:
        x, y = models._check_batch(model, c.x, c.y)
        feats = model.features(x) if rbf else None
        caches.append(ClientCache(x=x, y=y, features=feats, n=c.n))
    return caches


def _fit_client(model, cache: ClientCache, w0: np.ndarray, hyper: LocalHyper,
                prox_mu: float, batch_rng):
    """One local training call on canonical arrays; returns
    (weights, loss_before, loss_after, first_bad_epoch)."""
    if hyper.batch_size is not None and hyper.batch_size < cache.n:
        w, lb, la = models.local_training(
            model, w0, cache.x, cache.y, epochs=hyper.epochs, lr=hyper.lr,
            prox_mu=prox_mu, l2_prior=hyper.l2_prior, batch_size=hyper.batch_size,
            rng=batch_rng, features=cache.features, return_losses=True)
        return w, lb, la, -1
    if cache.features is not None:
        return ops().linear_gd(cache.features, cache.y, w0, hyper.epochs, hyper.lr,
                               prox_mu, w0, hyper.l2_prior)
    if model.task == "regression":
        return ops().mlp_gd_sq(w0, model._sizes_arr, model._act_id, cache.x, cache.y,
                               hyper.epochs, hyper.lr, prox_mu, w0, hyper.l2_prior)
    return ops().mlp_gd_xent(w0, model._sizes_arr, model._act_id, cache.x, cache.y,
                             hyper.epochs, hyper.lr, prox_mu, w0, hyper.l2_prior)


def run_round(model, ensemble: Ensemble, fed: FederatedDataset, plan: RoundPlan,
              hyper: LocalHyper, *, weighting: str = "size", prox: bool = False,
              caches: list[ClientCache] | None = None,
              batch_rng: np.random.Generator | None = None,
              union: tuple[np.ndarray, np.ndarray] | None = None,
              union_features: np.ndarray | None = None,
              collect_events: bool = True, track_losses: bool = True) -> RunRecord:
    """Execute one planned round: local training on every selected client,
    then the per-mode server aggregation, then a union-train-loss snapshot.

    ``prox`` switches on the proximal anchor (the broadcast weights) with
    strength ``hyper.prox_mu``. ``collect_events=False`` and
    ``track_losses=False`` skip the per-client bookkeeping and the loss
    snapshot for hot sweeps that only need final weights.
    """
    t0 = time.perf_counter()
    if caches is None:
        caches = prepare_clients(model, fed)
    updates: list[ClientUpdate] = []
    events: list[ClientEvent] = []
    eff_prox = hyper.prox_mu if prox else 0.0
    for q in range(len(plan.selected)):
        k = int(plan.mode_of_stratum[q])
        broadcast = ensemble.modes[k]
        for cid in plan.selected[q]:
            cid = int(cid)
            cache = caches[cid]
            try:
                w_new, lb, la, bad = _fit_client(model, cache, broadcast, hyper,
                                                 eff_prox, batch_rng)
            except DivergenceError as exc:
                raise DivergenceError(
                    f"client {cid} diverged in round {plan.global_round}: {exc}",
                    epoch=exc.epoch, round_index=plan.global_round, client_id=cid,
                ) from exc
            if bad >= 0:
                raise DivergenceError(
                    f"client {cid} hit a non-finite loss at epoch {bad} "
                    f"in round {plan.global_round}",
                    epoch=int(bad), round_index=plan.global_round, client_id=cid)
            updates.append(ClientUpdate(cid, k, cache.n, w_new))
            if collect_events:
                events.append(ClientEvent(cid, q, k, cache.n, float(lb), float(la)))
    server_update(ensemble, updates, weighting)
    mode_losses = None
    global_loss = float("nan")
    if track_losses:
        if union is None:
            union = fed.union_xy()
            if isinstance(model, RbfFeatureModel):
                union_features = model.features(union[0])
        mode_losses = tuple(
            models.loss(model, m, union[0], union[1], features=union_features)
            for m in ensemble.modes
        )
        global_loss = _ensemble_union_loss(model, ensemble, union, union_features)
    wallclock_ms = (time.perf_counter() - t0) * 1000.0
    return RunRecord(age=plan.age, round_index=plan.global_round, events=tuple(events),
                     global_train_loss=global_loss, wallclock_ms=wallclock_ms,
                     mode_train_loss=mode_losses)


def _ensemble_union_loss(model, ensemble: Ensemble,
                         union: tuple[np.ndarray, np.ndarray],
                         union_features: np.ndarray | None) -> float:
    """Loss of the ensemble-averaged prediction on the pooled training data."""
    x, y = union
    if getattr(model, "task", "regression") == "classification":
        probs = np.mean([models.predict_proba(model, m, x) for m in ensemble.modes], axis=0)
        picked = probs[np.arange(y.shape[0]), y.astype(np.int64)]
        return float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    if union_features is not None:
        preds = np.mean([union_features @ m for m in ensemble.modes], axis=0)
    else:
        preds = np.mean([models.predict(model, m, x) for m in ensemble.modes], axis=0)
    r = preds - y
    return float(0.5 * np.mean(r * r))


@dataclass(eq=False)
class TrainingRun:
    """Return value of :func:`run_training`."""

    ensemble: Ensemble
    records: list[RunRecord]
    mode_losses: np.ndarray      # (rounds, K) union train loss per mode
    ensemble_losses: np.ndarray  # (rounds,) union train loss of the averaged prediction
    strata: Strata

    @property
    def n_rounds(self) -> int:
        return len(self.records)

    @property
    def final_train_loss(self) -> float:
        return float(self.ensemble_losses[-1]) if self.ensemble_losses.size else float("nan")


def run_training(
    model,
    fed: FederatedDataset,
    *,
    algo: str = "fed_ensemble",
    n_modes: int = 5,
    ages: int = 10,
    n_strata: int | None = None,
    clients_per_stratum: int | None = None,
    local_epochs: int = 5,
    lr: float = 0.1,
    lr_decay_factor: float = 1.0,
    lr_decay_interval: int = 10,
    prox_mu: float = 0.0,
    l2_prior: float = 0.0,
    batch_size: int | None = None,
    weighting: str = "size",
    init: InitSpec | None = None,
    master_seed: int = 0,
    repeat_index: int = 0,
    initial_ensemble: Ensemble | None = None,
    collect_records: bool = True,
    track_losses: bool = True,
) -> TrainingRun:
    """Full training loop: ``ages`` ages of K rounds each.

    ``fedavg`` and ``fedprox`` force K=1 (one stratum unless given) and only
    ``fedprox`` applies the proximal term. Every random choice draws from a
    purpose-labelled stream of ``master_seed``; ``repeat_index`` perturbs the
    init, schedule, selection and batch streams but not the strata, so
    repeated runs retrain the same client split from fresh randomness.
    ``ages=0`` returns the untouched initial ensemble. Repeat-sweep callers
    that only need final weights can drop per-client bookkeeping with
    ``collect_records=False`` and the loss snapshots with
    ``track_losses=False``.
    """
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}; pick one of {ALGORITHMS}")
    if ages < 0:
        raise ConfigError("ages must be >= 0")
    if lr_decay_interval < 1:
        raise ConfigError("lr_decay_interval must be >= 1")
    if not 0.0 < lr_decay_factor <= 1.0:
        raise ConfigError("lr_decay_factor must be in (0, 1]")
    k = n_modes
    if algo in ("fedavg", "fedprox"):
        k = 1
    if k < 1:
        raise ConfigError("K must be >= 1")
    q = n_strata if n_strata is not None else min(k, fed.n_clients)
    prox = algo == "fedprox"
    if prox and prox_mu < 0:
        raise ConfigError("prox_mu must be non-negative")
    init = init if init is not None else InitSpec()

    strata = build_strata(fed.n_clients, q, stream(master_seed, "strata"))
    if initial_ensemble is not None:
        if initial_ensemble.k != k:
            raise ConfigError(f"initial ensemble has {initial_ensemble.k} modes, need {k}")
        ensemble = initial_ensemble.copy()
    else:
        ensemble = Ensemble.from_init(model, k, init, master_seed, repeat_index)

    caches = prepare_clients(model, fed)
    union = fed.union_xy()
    union_features = model.features(union[0]) if isinstance(model, RbfFeatureModel) else None

    records: list[RunRecord] = []
    mode_rows: list[tuple[float, ...]] = []
    ens_rows: list[float] = []
    global_round = 0
    for age in range(ages):
        schedule = new_schedule(q, k, stream(master_seed, "schedule", repeat_index, age))
        for r in range(k):
            lr_r = lr * lr_decay_factor ** (global_round // lr_decay_interval)
            sel_rng = None
            if clients_per_stratum is not None:
                sel_rng = stream(master_seed, "selection", repeat_index, age, r)
            plan = plan_round(strata, schedule, age, r, global_round,
                              clients_per_stratum, sel_rng)
            batch_rng = None
            if batch_size is not None:
                batch_rng = stream(master_seed, "batch", repeat_index, age, r)
            hyper = LocalHyper(epochs=local_epochs, lr=lr_r, prox_mu=prox_mu,
                               l2_prior=l2_prior, batch_size=batch_size)
            record = run_round(model, ensemble, fed, plan, hyper,
                               weighting=weighting, prox=prox, caches=caches,
                               batch_rng=batch_rng, union=union,
                               union_features=union_features,
                               collect_events=collect_records,
                               track_losses=track_losses)
            if collect_records:
                records.append(record)
            if track_losses:
                mode_rows.append(record.mode_train_loss)
                ens_rows.append(record.global_train_loss)
            global_round += 1

    mode_losses = np.array(mode_rows, dtype=np.float64) if mode_rows else np.zeros((0, k))
    return TrainingRun(ensemble=ensemble, records=records, mode_losses=mode_losses,
                       ensemble_losses=np.array(ens_rows, dtype=np.float64), strata=strata)
