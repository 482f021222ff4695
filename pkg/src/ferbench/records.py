"""Trial records exchanged between the experiment service and analytics.

The service journals one TrialRecord per completed trial as a JSON line;
the analytics side loads those lines back.  Keeping the types and the
serialization here means both ends share a single schema definition.
"""

import json
from dataclasses import dataclass

from .labels import validate_label


@dataclass(frozen=True)
class ClickEvent:
    """One reveal click, timed in milliseconds from trial start.

    `ms_since_trial_start` is the server clock; `client_ms` is whatever the
    client reported alongside the click and is kept for diagnostics only.
    """

    x: int
    y: int
    ms_since_trial_start: float
    client_ms: float | None = None

    def __post_init__(self):
        if self.ms_since_trial_start < 0:
            raise ValueError(f"click timestamp must be >= 0, got {self.ms_since_trial_start}")

    def to_json_dict(self) -> dict:
        return {
            "x": int(self.x),
            "y": int(self.y),
            "ms_since_trial_start": float(self.ms_since_trial_start),
            "client_ms": None if self.client_ms is None else float(self.client_ms),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ClickEvent":
        return cls(
            x=int(_require(d, "x")),
            y=int(_require(d, "y")),
            ms_since_trial_start=float(_require(d, "ms_since_trial_start")),
            client_ms=None if d.get("client_ms") is None else float(d["client_ms"]),
        )


@dataclass(frozen=True)
class TrialRecord:
    """One finished 2AFC trial: the clicks made and the label chosen.

    `duration_ms` runs from the first click to the choice.  A choice made
    without any reveal is legal but flagged by `duration_ms is None`, so the
    two fields must agree: no clicks, no duration.
    """

    session_id: str
    stimulus_id: str
    true_label: str
    false_label: str
    clicks: tuple  # of ClickEvent, in presentation order
    choice: str
    correct: bool
    duration_ms: float | None

    def __post_init__(self):
        validate_label(self.true_label)
        validate_label(self.false_label)
        if self.true_label == self.false_label:
            raise ValueError(f"true and false labels must differ, got {self.true_label!r} twice")
        if self.choice not in (self.true_label, self.false_label):
            raise ValueError(
                f"choice {self.choice!r} is not one of the offered labels "
                f"({self.true_label!r}, {self.false_label!r})")
        if self.correct != (self.choice == self.true_label):
            raise ValueError("correct flag contradicts choice vs true label")
        object.__setattr__(self, "clicks", tuple(self.clicks))
        for ev in self.clicks:
            if not isinstance(ev, ClickEvent):
                raise TypeError(f"clicks must be ClickEvent instances, got {type(ev).__name__}")
        if self.duration_ms is None:
            if self.clicks:
                raise ValueError("a trial with clicks must carry a duration")
        else:
            if not self.clicks:
                raise ValueError("duration without clicks; zero-click trials use duration None")
            if self.duration_ms < 0:
                raise ValueError(f"duration must be >= 0, got {self.duration_ms}")

    def to_json_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "stimulus_id": self.stimulus_id,
            "true_label": self.true_label,
            "false_label": self.false_label,
            "clicks": [ev.to_json_dict() for ev in self.clicks],
            "choice": self.choice,
            "correct": bool(self.correct),
            "duration_ms": None if self.duration_ms is None else float(self.duration_ms),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrialRecord":
        return cls(
            session_id=str(_require(d, "session_id")),
            stimulus_id=str(_require(d, "stimulus_id")),
            true_label=_require(d, "true_label"),
            false_label=_require(d, "false_label"),
            clicks=tuple(ClickEvent.from_json_dict(c) for c in _require(d, "clicks")),
            choice=_require(d, "choice"),
            correct=bool(_require(d, "correct")),
            duration_ms=None if d.get("duration_ms") is None else float(d["duration_ms"]),
        )


def _require(d: dict, key: str):
    if key not in d:
        raise ValueError(f"trial record missing field {key!r}")
    return d[key]


def write_trials_jsonl(path, trials) -> None:
    """Write one TrialRecord per line; the loadable inverse of read_trials_jsonl."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(json.dumps(t.to_json_dict()) + "\n")


def read_trials_jsonl(path) -> list:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad JSON: {exc}") from None
            trials.append(TrialRecord.from_json_dict(d))
    return trials
