"""Durable single-file persistence: append-only mutation log, periodic
snapshots, and crash recovery by replay.

Each committed batch is a single JSON line, so a batch is either fully on disk
or absent; a torn trailing line (crash mid-write) is detected and dropped on
recovery. The external transition log (`transitions.ndjson`, one record per
entry transition) is a projection of the main log and is rebuilt on recovery
so the two can never disagree.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping

from conductor.errors import CorruptLog, CrashInjected, StoreUnavailable

LOG_FILE = "log.ndjson"
SNAPSHOT_FILE = "snapshot.json"
TRANSITIONS_FILE = "transitions.ndjson"


class Store:
    """Single durable writer; snapshot-isolated readers.

    Fault injection: set ``crash_after_commits`` to make the Nth commit raise
    CrashInjected; ``crash_partial`` additionally leaves a torn half-line on
    disk, simulating a kill mid-write.
    """

    def __init__(self, data_dir: str | Path, fsync: bool = True):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._seq = self._last_seq_on_disk()
        self.crash_after_commits: int | None = None
        self.crash_partial = False
        self._commit_count = 0

    @property
    def log_path(self) -> Path:
        return self.data_dir / LOG_FILE

    @property
    def snapshot_path(self) -> Path:
        return self.data_dir / SNAPSHOT_FILE

    @property
    def transitions_path(self) -> Path:
        return self.data_dir / TRANSITIONS_FILE

    def _last_seq_on_disk(self) -> int:
        last = 0
        for seq, _, _ in self.read_batches():
            last = seq
        snap = self.read_snapshot()
        if snap is not None:
            last = max(last, snap["seq"])
        return last

    # --- write path ----------------------------------------------------------

    def commit(self, muts: list[Mapping[str, Any]], event_id: str | None = None) -> int:
        """Append one atomic batch; returns its strictly increasing seq."""
        self._commit_count += 1
        line = None
        seq = self._seq + 1
        record = {"seq": seq, "ts": time.time(), "event_id": event_id, "muts": list(muts)}
        line = json.dumps(record, separators=(",", ":")) + "\n"

        if (
            self.crash_after_commits is not None
            and self._commit_count >= self.crash_after_commits
        ):
            if self.crash_partial:
                self._append(self.log_path, line[: max(1, len(line) // 2)])
            raise CrashInjected(f"injected crash at commit {self._commit_count}")

        try:
            self._append(self.log_path, line)
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc
        self._seq = seq

        for mut in muts:
            if mut.get("kind") == "entry.transition":
                self._append(self.transitions_path, self._transition_line(seq, record["ts"], mut))
        return seq

    @staticmethod
    def _transition_line(seq: int, ts: float, mut: Mapping[str, Any]) -> str:
        d = mut["data"]
        return json.dumps(
            {
                "seq": seq,
                "ts": ts,
                "event_id": d["event_id"],
                "entry_id": d["entry_id"],
                "from": d["from"],
                "to": d["to"],
                "reason": d.get("reason", ""),
            },
            separators=(",", ":"),
        ) + "\n"

    def _append(self, path: Path, text: str) -> None:
        with open(path, "a", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            if self._fsync:
                os.fsync(f.fileno())

    def write_snapshot(self, state: Mapping[str, Any]) -> None:
        tmp = self.snapshot_path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"seq": self._seq, "state": state}))
        os.replace(tmp, self.snapshot_path)

    # --- read path -----------------------------------------------------------

    def read_snapshot(self) -> dict[str, Any] | None:
        if not self.snapshot_path.exists():
            return None
        try:
            return json.loads(self.snapshot_path.read_text())
        except json.JSONDecodeError:
            return None  # torn snapshot: fall back to full replay

    def _read_records(self) -> list[dict]:
        if not self.log_path.exists():
            return []
        lines = self.log_path.read_text(encoding="utf-8", errors="replace").splitlines()
        parsed: list[dict] = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                parsed.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    break  # torn tail from a crash mid-write
                raise CorruptLog(parsed[-1]["seq"] if parsed else 0) from None
        return parsed

    def read_batches(self, after_seq: int = 0) -> Iterator[tuple[int, str | None, list[dict]]]:
        """Yield (seq, event_id, muts); a torn final line is dropped, torn
        interior lines mean real corruption."""
        prev_seq = None
        for record in self._read_records():
            seq = record["seq"]
            if prev_seq is not None and seq <= prev_seq:
                raise CorruptLog(seq)
            prev_seq = seq
            if seq > after_seq:
                yield seq, record.get("event_id"), record["muts"]

    def rebuild_transition_projection(self) -> None:
        """Rewrite transitions.ndjson from the authoritative log."""
        out: list[str] = []
        for record in self._read_records():
            for mut in record["muts"]:
                if mut.get("kind") == "entry.transition":
                    out.append(self._transition_line(record["seq"], record["ts"], mut))
        tmp = self.transitions_path.with_suffix(".tmp")
        tmp.write_text("".join(out))
        os.replace(tmp, self.transitions_path)

    def read_transitions(self) -> list[dict[str, Any]]:
        if not self.transitions_path.exists():
            return []
        out = []
        for line in self.transitions_path.read_text().splitlines():
            if line.strip():
                out.append(json.loads(line))
        return out
