"""Metrics log: one JSON object per line, append-only.

A record has ``step``, the four loss components, ``wall_time`` (seconds since
the run started) and an optional ``eval`` mapping ``{"E": report, "H": report}``
where each report is ``{"recall_at": {k: value}, "map_at_r": value}``.
Evaluation-only records (from ``chest eval``) carry ``null`` loss fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import NonFiniteError, ParseError

LOSS_FIELDS = ("l_hyperbolic", "l_euclidean", "l_hyphc", "total")


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    l_hyperbolic: float | None = None
    l_euclidean: float | None = None
    l_hyphc: float | None = None
    total: float | None = None
    wall_time: float = 0.0
    eval: dict | None = None

    def to_dict(self) -> dict:
        d = {"step": self.step}
        for name in LOSS_FIELDS:
            d[name] = getattr(self, name)
        d["wall_time"] = self.wall_time
        if self.eval is not None:
            d["eval"] = {space: {"recall_at": {str(k): v for k, v in rep["recall_at"].items()},
                                 "map_at_r": rep["map_at_r"]}
                         for space, rep in self.eval.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsRecord":
        ev = d.get("eval")
        if ev is not None:
            ev = {space: {"recall_at": {int(k): v for k, v in rep["recall_at"].items()},
                          "map_at_r": rep["map_at_r"]}
                  for space, rep in ev.items()}
        return cls(step=d["step"], wall_time=d.get("wall_time", 0.0), eval=ev,
                   **{name: d.get(name) for name in LOSS_FIELDS})

    def without_time(self) -> "MetricsRecord":
        return MetricsRecord(**{**self.__dict__, "wall_time": 0.0})


def eval_fields(rep_E, rep_H) -> dict:
    """Build the ``eval`` mapping from two :class:`~chest.retrieval.MetricsReport`."""
    return {rep.space: {"recall_at": dict(rep.recall_at), "map_at_r": rep.map_at_r} for rep in (rep_E, rep_H)}


def _check_finite(record: MetricsRecord):
    for name in LOSS_FIELDS:
        v = getattr(record, name)
        if v is not None and not math.isfinite(v):
            raise NonFiniteError(f"refusing to log {name}={v} at step {record.step}", name=name)
    if record.eval:
        for space, rep in record.eval.items():
            values = list(rep["recall_at"].values()) + [rep["map_at_r"]]
            if not all(math.isfinite(v) for v in values):
                raise NonFiniteError(f"refusing to log non-finite {space} metrics at step {record.step}", name=space)


def format_record(record: MetricsRecord) -> str:
    _check_finite(record)
    return json.dumps(record.to_dict(), allow_nan=False, separators=(",", ":"))


def parse_record(line: str) -> MetricsRecord:
    return MetricsRecord.from_dict(json.loads(line))


def emit_metrics(record: MetricsRecord, sink):
    """Append one line to ``sink`` (an open text file or a path)."""
    line = format_record(record) + "\n"
    if hasattr(sink, "write"):
        sink.write(line)
        sink.flush()
    else:
        with open(sink, "a") as fh:
            fh.write(line)


def read_metrics(path) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line))
            except (ValueError, KeyError, TypeError, AttributeError) as e:
                raise ParseError(f"{path}: bad metrics record: {e}", line=lineno) from e
    return records
