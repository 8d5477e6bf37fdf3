"""Persistence for per-round training records.

One CSV row per client event; rows of one round share the round-level
columns. The first line is a schema-version comment so readers can refuse
files written by a different layout. Floats are serialized with ``repr`` so
values survive the round trip bit-for-bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import SchemaError
from .federation import ClientEvent, RunRecord

__all__ = [
    "METRICS_VERSION_LINE",
    "write_metrics",
    "read_metrics",
    "records_equivalent",
    "file_sha256",
    "RunManifest",
]

METRICS_VERSION_LINE = "# simfed-metrics v1"
_COLUMNS = ["age", "round", "mode_k", "stratum", "client_id",
            "local_loss_before", "local_loss_after", "global_train_loss", "wallclock_ms"]


def _rows_of(record: RunRecord):
    for ev in record.events:
        yield [record.age, record.round_index, ev.mode_index, ev.stratum, ev.client_id,
               repr(ev.local_loss_before), repr(ev.local_loss_after),
               repr(record.global_train_loss), repr(record.wallclock_ms)]


def write_metrics(records, path, *, append: bool = False) -> None:
    """Write (or append) records as CSV. Appending validates that the existing
    file carries the same schema version and header before adding rows."""
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    if exists:
        with open(path, newline="") as fh:
            first = fh.readline().rstrip("\r\n")
            second = fh.readline().rstrip("\r\n")
        if first != METRICS_VERSION_LINE:
            raise SchemaError(f"{path}: version line {first!r} does not match "
                              f"{METRICS_VERSION_LINE!r}")
        if second != ",".join(_COLUMNS):
            raise SchemaError(f"{path}: header does not match the current schema")
    mode = "a" if exists else "w"
    with open(path, mode, newline="") as fh:
        if not exists:
            fh.write(METRICS_VERSION_LINE + "\n")
            writer = csv.writer(fh)
            writer.writerow(_COLUMNS)
        else:
            writer = csv.writer(fh)
        for rec in records:
            writer.writerows(_rows_of(rec))


def read_metrics(path) -> list[RunRecord]:
    """Parse a metrics CSV back into records (one per round, events grouped).

    The in-memory-only ``mode_train_loss`` extra is not serialized and comes
    back as ``None``.
    """
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != METRICS_VERSION_LINE:
            raise SchemaError(f"{path}: version line {first!r} does not match "
                              f"{METRICS_VERSION_LINE!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _COLUMNS:
            raise SchemaError(f"{path}: header {header} does not match the current schema")
        grouped: dict[tuple[int, int], dict] = {}
        order: list[tuple[int, int]] = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(_COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(_COLUMNS)} fields")
            try:
                age, rnd, mode_k, stratum, cid = (int(v) for v in row[:5])
                lb, la, gl, wc = (float(v) for v in row[5:])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            key = (age, rnd)
            if key not in grouped:
                grouped[key] = {"events": [], "global": gl, "wallclock": wc}
                order.append(key)
            elif grouped[key]["global"] != gl or grouped[key]["wallclock"] != wc:
                raise SchemaError(f"{path}:{lineno}: round-level columns disagree within "
                                  f"round {rnd}")
            grouped[key]["events"].append(
                ClientEvent(client_id=cid, stratum=stratum, mode_index=mode_k,
                            n_points=0, local_loss_before=lb, local_loss_after=la))
    records = []
    for age, rnd in order:
        g = grouped[(age, rnd)]
        records.append(RunRecord(age=age, round_index=rnd, events=tuple(g["events"]),
                                 global_train_loss=g["global"], wallclock_ms=g["wallclock"]))
    return records


def records_equivalent(a: list[RunRecord], b: list[RunRecord], *,
                       ignore_wallclock: bool = True,
                       ignore_n_points: bool = True) -> bool:
    """Equality on the serialized view of two record lists.

    Wallclock differs across executions by nature, and per-event point
    counts are not part of the CSV schema, so both default to ignored.
    """
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if (ra.age, ra.round_index, ra.global_train_loss) != \
           (rb.age, rb.round_index, rb.global_train_loss):
            return False
        if not ignore_wallclock and ra.wallclock_ms != rb.wallclock_ms:
            return False
        if len(ra.events) != len(rb.events):
            return False
        for ea, eb in zip(ra.events, rb.events):
            ka = (ea.client_id, ea.stratum, ea.mode_index,
                  ea.local_loss_before, ea.local_loss_after)
            kb = (eb.client_id, eb.stratum, eb.mode_index,
                  eb.local_loss_before, eb.local_loss_after)
            if ka != kb:
                return False
            if not ignore_n_points and ea.n_points != eb.n_points:
                return False
    return True


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Sidecar JSON describing one run directory.

    Written once at run start with ``status='incomplete'``, then finalized
    in place with wallclock and per-file checksums once all outputs are
    flushed.
    """

    config: dict
    master_seed: int
    config_dialect: str = "yaml"
    schema: str = "simfed-manifest v1"
    status: str = "incomplete"
    seed_labels: dict = field(default_factory=dict)
    wallclock_s: float | None = None
    files: dict = field(default_factory=dict)

    PATH = "manifest.json"

    def write(self, run_dir) -> str:
        path = os.path.join(run_dir, self.PATH)
        payload = {
            "schema": self.schema,
            "status": self.status,
            "config_dialect": self.config_dialect,
            "master_seed": self.master_seed,
            "seed_labels": self.seed_labels,
            "config": self.config,
            "wallclock_s": self.wallclock_s,
            "files": self.files,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def finalize(self, run_dir, wallclock_s: float, file_names) -> str:
        """Checksum the named files and rewrite the manifest as complete."""
        self.wallclock_s = wallclock_s
        self.files = {}
        for name in sorted(file_names):
            full = os.path.join(run_dir, name)
            self.files[name] = {"sha256": file_sha256(full),
                                "bytes": os.path.getsize(full)}
        self.status = "complete"
        return self.write(run_dir)

    @classmethod
    def read(cls, run_dir) -> "RunManifest":
        path = os.path.join(run_dir, cls.PATH)
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("schema") != "simfed-manifest v1":
            raise SchemaError(f"{path}: unknown manifest schema {payload.get('schema')!r}")
        return cls(config=payload["config"], master_seed=payload["master_seed"],
                   config_dialect=payload["config_dialect"], status=payload["status"],
                   seed_labels=payload.get("seed_labels", {}),
                   wallclock_s=payload.get("wallclock_s"), files=payload.get("files", {}))

    def verify_files(self, run_dir) -> list[str]:
        """Names whose on-disk checksum or size no longer matches."""
        bad = []
        for name, meta in self.files.items():
            full = os.path.join(run_dir, name)
            if not os.path.exists(full) or os.path.getsize(full) != meta["bytes"] \
                    or file_sha256(full) != meta["sha256"]:
                bad.append(name)
        return bad
