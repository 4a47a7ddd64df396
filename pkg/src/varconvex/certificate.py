"""Verdicts and certificates shared by every checker."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class Verdict(str, enum.Enum):
    HOLDS = "Holds"
    FAILS = "FailsWithWitness"
    INCONCLUSIVE = "Inconclusive"

    @property
    def symbol(self) -> str:
        return {"Holds": "✓", "FailsWithWitness": "✗", "Inconclusive": "?"}[self.value]


def jsonable(obj: Any) -> Any:
    """Convert numpy data and non-finite floats into plain JSON values.

    ``+inf`` becomes the string ``"+inf"`` so output stays strict JSON.
    """
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            raise ValueError("NaN cannot be serialized")
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return v
    if hasattr(obj, "to_json"):
        return jsonable(obj.to_json())
    return obj


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class Certificate:
    verdict: Verdict
    criterion: str
    witness: dict | None = None
    window: Any = None
    params: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.verdict is Verdict.FAILS and not self.witness:
            raise ValueError("a failing certificate must carry a witness")
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def holds(self) -> bool:
        return self.verdict is Verdict.HOLDS

    @property
    def fails(self) -> bool:
        return self.verdict is Verdict.FAILS

    def with_notes(self, *notes: str, **params: Any) -> Certificate:
        return Certificate(
            self.verdict, self.criterion, self.witness, self.window,
            {**self.params, **params}, self.notes + tuple(notes),
        )

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "criterion": self.criterion,
            "witness": jsonable(self.witness),
            "window": jsonable(self.window),
            "params": jsonable(self.params),
            "notes": list(self.notes),
        }


def holds(criterion: str, **kw: Any) -> Certificate:
    return Certificate(Verdict.HOLDS, criterion, **kw)


def fails(criterion: str, witness: dict, **kw: Any) -> Certificate:
    return Certificate(Verdict.FAILS, criterion, witness, **kw)


def inconclusive(criterion: str, reason: str, **kw: Any) -> Certificate:
    notes = tuple(kw.pop("notes", ())) + (reason,)
    return Certificate(Verdict.INCONCLUSIVE, criterion, notes=notes, **kw)


def lexicographic_first(rows: np.ndarray) -> int:
    """Index of the lexicographically smallest row of a 2D array."""
    rows = np.atleast_2d(rows)
    order = np.lexsort(rows.T[::-1])
    return int(order[0])
