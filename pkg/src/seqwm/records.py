"""
Run records: metrics rows, timing rows and per-step episode logs.

Metrics and timing are CSV files with a header, appended and flushed one row
at a time. Episode logs are JSON lines, one :class:`StepRecord` per step.
"""

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

logger = logging.getLogger(__name__)


def obs_digest(obs) -> str:
    """SHA-1 of an observation's float64 little-endian bytes."""
    return hashlib.sha1(np.ascontiguousarray(obs, dtype="<f8").tobytes()).hexdigest()


class StepRecord:
    """One logged environment step, with dictionary-like access and typed getters."""

    data: dict

    def __init__(self, data: dict):
        self.data = dict(data)

    @classmethod
    def from_step(cls, t: int, observations, actions, reward: float, done: bool, positions=None, episode: int = 0):
        data = {
            "episode": episode,
            "t": t,
            "obs": [obs_digest(o) for o in observations],
            "actions": [np.asarray(a, dtype=np.float64).round(6).tolist() for a in actions],
            "reward": float(reward),
            "done": bool(done),
        }
        if positions is not None:
            data["positions"] = positions
        return cls(data)

    @classmethod
    def from_dict(cls, data: dict) -> "StepRecord":
        return cls(data)

    def __repr__(self):
        return f"StepRecord({self.data})"

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True)

    # -----------------------------
    # Typed getter helpers below
    # -----------------------------

    def get_int(self, key: str, raise_error: bool = False) -> Optional[int]:
        value = self.data.get(key)
        if value is None:
            return None
        try:
            return int(value)
        except (TypeError, ValueError):
            if raise_error:
                raise TypeError(f"Value for '{key}' is not int-convertible: {value}")
            return None

    def get_float(self, key: str, raise_error: bool = False) -> Optional[float]:
        value = self.data.get(key)
        if value is None:
            return None
        try:
            return float(value)
        except (TypeError, ValueError):
            if raise_error:
                raise TypeError(f"Value for '{key}' is not float-convertible: {value}")
            return None

    def get_bool(self, key: str, raise_error: bool = False) -> Optional[bool]:
        value = self.data.get(key)
        if value is None:
            return None
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in ("true", "1", "yes", "false", "0", "no"):
            return value.strip().lower() in ("true", "1", "yes")
        if raise_error:
            raise TypeError(f"Value for '{key}' is not bool-convertible: {value}")
        return None

    def get_actions(self) -> list[np.ndarray]:
        return [np.asarray(a, dtype=np.float64) for a in self.data.get("actions", [])]


class EpisodeLogWriter:
    def __init__(self, path, fresh: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w" if fresh else "a", encoding="utf-8")

    def write(self, record: StepRecord) -> None:
        self._handle.write(record.to_json() + "\n")
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_episode_log(path) -> list[StepRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            records.append(StepRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError:
            logger.warning("skipping unreadable episode log line in %s", path)
    return records


# ------------------- METRICS -------------------
@dataclass
class MetricsRow:
    step: int
    episode: int
    episode_return: float
    success: bool
    dynamics_loss: float = 0.0
    reward_loss: float = 0.0
    q_loss: float = 0.0
    actor_loss: float = 0.0
    entropy: float = 0.0
    planner_iterations: float = 0.0
    scale: float = 1.0


@dataclass
class TimingRow:
    step: int
    episode: int
    seconds_per_step: float


class CsvAppender:
    """
    Append dataclass rows to a CSV file, writing the header once.

    ``fresh`` truncates an existing file first.
    """

    def __init__(self, path, row_type, fresh: bool = False):
        self.path = Path(path)
        self.fields = [f.name for f in dataclasses.fields(row_type)]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        new_file = fresh or not self.path.exists() or self.path.stat().st_size == 0
        self._handle = open(self.path, "w" if fresh else "a", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._handle, fieldnames=self.fields)
        if new_file:
            self._writer.writeheader()
            self._handle.flush()
        self.last_step = -1

    def append(self, row) -> None:
        if row.step < self.last_step:
            raise ValueError(f"rows must be appended in step order ({row.step} < {self.last_step})")
        self.last_step = row.step
        self._writer.writerow(_format_row(dataclasses.asdict(row)))
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MetricsWriter(CsvAppender):
    def __init__(self, path, fresh: bool = False):
        super().__init__(path, MetricsRow, fresh)


class TimingWriter(CsvAppender):
    def __init__(self, path, fresh: bool = False):
        super().__init__(path, TimingRow, fresh)


def _format_row(row: dict) -> dict:
    # repr keeps floats round-trippable, so reruns compare byte for byte
    return {k: (repr(float(v)) if isinstance(v, float) else int(v) if isinstance(v, bool) else v) for k, v in row.items()}


def _parse(value: str, kind) -> Any:
    if kind is bool:
        return value.strip() in ("1", "True", "true")
    return kind(value)


def read_metrics(path) -> list[MetricsRow]:
    """Read metrics rows; a trailing line cut off mid-write is ignored."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if lines and not text.endswith("\n"):
        logger.warning("ignoring partial last line in %s", path)
        lines = lines[:-1]
    if not lines:
        return []
    kinds = {f.name: f.type for f in dataclasses.fields(MetricsRow)}
    rows = []
    for record in csv.DictReader(lines):
        try:
            values = {k: _parse(v, kinds[k]) for k, v in record.items()}
            rows.append(MetricsRow(**values))
        except (KeyError, TypeError, ValueError):
            logger.warning("ignoring malformed metrics line in %s", path)
    return rows
