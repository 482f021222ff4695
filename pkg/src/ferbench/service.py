"""HTTP service running the click-to-reveal 2AFC experiment.

The protocol enforces the psychophysical contract server-side: clients only
ever receive the blurred-grayscale rendition plus circular full-color
patches for the clicks they made, so unrevealed original pixels never cross
the wire.  Every state change is appended to a per-session JSON-lines
journal and can be replayed after a crash.

Image payloads are PNG bytes, base64-wrapped inside the JSON envelopes so
the whole API stays on five endpoints.
"""

import base64
import io
import json
import math
import os
import secrets
import threading
import time
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .datasets import _to_uint8, load_stimulus_set
from .records import ClickEvent, TrialRecord
from .stimuli import blurred_grayscale, scaled_blur_k


class UnknownResourceError(KeyError):
    """Session or stimulus set that the service does not know about."""


class InactiveTrialError(RuntimeError):
    """Click or choice aimed at a trial that is not currently active."""


@dataclass(frozen=True)
class ServiceConfig:
    """Deployment knobs, loadable from a single TOML or JSON file."""

    stimulus_path: str
    results_dir: str
    stimulus_set_id: str = None  # defaults to the stimulus directory's name
    port: int = 8765
    reveal_radius: float = 20.0
    blur_k: int = None           # None: reference kernel rescaled to image size
    block_count: int = 4

    def __post_init__(self):
        if self.stimulus_set_id is None:
            object.__setattr__(self, "stimulus_set_id", Path(self.stimulus_path).name)
        if self.reveal_radius <= 0:
            raise ValueError(f"reveal_radius must be positive, got {self.reveal_radius}")
        if self.block_count < 1:
            raise ValueError(f"block_count must be >= 1, got {self.block_count}")
        if self.blur_k is not None and self.blur_k < 1:
            raise ValueError(f"blur_k must be >= 1, got {self.blur_k}")


def load_service_config(path) -> ServiceConfig:
    """Read a ServiceConfig from one .toml or .json file."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(raw.decode("utf-8"))
    elif path.suffix == ".json":
        data = json.loads(raw.decode("utf-8"))
    else:
        raise ValueError(f"config must be .toml or .json, got {path.suffix!r}")
    return ServiceConfig(**data)


@dataclass(frozen=True)
class Session:
    """One participant's pass through the stimulus set."""

    session_id: str
    participant_code: str
    trial_order: tuple          # permutation of stimulus ids
    block_boundaries: tuple     # cursor values where a new block begins
    created_at: float           # epoch seconds
    entropy: int                # seeds per-trial display-order draws

    def __post_init__(self):
        if len(set(self.trial_order)) != len(self.trial_order):
            raise ValueError("trial_order contains repeated stimulus ids")

    @property
    def n_trials(self) -> int:
        return len(self.trial_order)

    def block_index(self, cursor: int) -> int:
        return bisect_right(self.block_boundaries, cursor)


def block_boundaries(n_trials: int, block_count: int) -> tuple:
    """Cursor positions starting each block after the first: ceil(N/k) sizing."""
    size = math.ceil(n_trials / block_count) if n_trials else 1
    return tuple(range(size, n_trials, size))


@dataclass
class _SessionState:
    """Server-side mutable companion to a Session."""

    session: Session
    cursor: int = 0
    served: bool = False        # current trial handed out at least once
    trial_t0_ms: float = None   # server clock when the current trial was served
    pending_clicks: list = field(default_factory=list)
    completed: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(payload: str) -> np.ndarray:
    """Inverse of the service's image encoding; used by clients and tests."""
    return np.asarray(Image.open(io.BytesIO(base64.b64decode(payload))))


class ExperimentService:
    """Transport-independent core: sessions, trials, clicks, choices, export.

    All mutating calls take the per-session lock, so request handlers may run
    concurrently; distinct sessions share nothing but the stimulus set.
    """

    def __init__(self, config: ServiceConfig, clock=None):
        self.config = config
        self._clock = clock if clock is not None else (lambda: time.time() * 1000.0)
        images = load_stimulus_set(config.stimulus_path)
        if not images:
            raise ValueError(f"stimulus set at {config.stimulus_path} is empty")
        self._stimuli = {im.id: im for im in images}
        self._blurred_u8 = {}
        self._sessions = {}
        self._registry_lock = threading.Lock()
        self._results_dir = Path(config.results_dir)
        self._results_dir.mkdir(parents=True, exist_ok=True)
        self._replay_journals()

    # -- stimulus renditions -------------------------------------------------

    def _blur_k_for(self, im) -> int:
        if self.config.blur_k is not None:
            return self.config.blur_k
        return scaled_blur_k(min(im.pixels.shape[:2]))

    def blurred_uint8(self, stimulus_id: str) -> np.ndarray:
        """The only wholesale rendition ever served: blurred grayscale."""
        if stimulus_id not in self._blurred_u8:
            im = self._stimuli[stimulus_id]
            self._blurred_u8[stimulus_id] = _to_uint8(
                blurred_grayscale(im.pixels, self._blur_k_for(im)))
        return self._blurred_u8[stimulus_id]

    def _patch(self, im, x: int, y: int):
        """Full-color circular reveal: RGBA with zeroed pixels outside the disk."""
        r = self.config.reveal_radius
        ri = int(math.ceil(r))
        h, w = im.pixels.shape[:2]
        x0, x1 = max(0, x - ri), min(w, x + ri + 1)
        y0, y1 = max(0, y - ri), min(h, y + ri + 1)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        disk = (xx - x) ** 2 + (yy - y) ** 2 <= r * r
        rgba = np.zeros((y1 - y0, x1 - x0, 4), dtype=np.uint8)
        rgba[..., :3] = np.where(disk[..., None], _to_uint8(im.pixels[y0:y1, x0:x1]), 0)
        rgba[..., 3] = np.where(disk, 255, 0)
        return rgba, x0, y0

    # -- journal -------------------------------------------------------------

    def _journal_path(self, session_id: str) -> Path:
        return self._results_dir / f"{session_id}.journal.jsonl"

    def _append(self, session_id: str, entry: dict) -> None:
        with open(self._journal_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay_journals(self) -> None:
        for path in sorted(self._results_dir.glob("*.journal.jsonl")):
            state = None
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    kind = entry["event"]
                    if kind == "session":
                        session = Session(
                            session_id=entry["session_id"],
                            participant_code=entry["participant_code"],
                            trial_order=tuple(entry["trial_order"]),
                            block_boundaries=tuple(entry["block_boundaries"]),
                            created_at=entry["created_at"],
                            entropy=entry["entropy"],
                        )
                        state = _SessionState(session=session)
                    elif kind == "served":
                        state.served = True
                        state.trial_t0_ms = entry["t0_ms"]
                        state.pending_clicks = []
                    elif kind == "click":
                        state.pending_clicks.append(ClickEvent(
                            x=entry["x"], y=entry["y"],
                            ms_since_trial_start=entry["ms_since_trial_start"],
                            client_ms=entry["client_ms"]))
                    elif kind == "choice":
                        state.completed.append(TrialRecord.from_json_dict(entry["record"]))
                        state.cursor += 1
                        state.served = False
                        state.trial_t0_ms = None
                        state.pending_clicks = []
                    else:
                        raise ValueError(f"{path}: unknown journal event {kind!r}")
            if state is not None:
                self._sessions[state.session.session_id] = state

    # -- session registry ----------------------------------------------------

    def _state(self, session_id: str) -> _SessionState:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownResourceError(f"unknown session {session_id!r}") from None

    def create_session(self, participant_code: str, stimulus_set_id: str,
                       seed: int = None) -> Session:
        if stimulus_set_id != self.config.stimulus_set_id:
            raise UnknownResourceError(
                f"unknown stimulus set {stimulus_set_id!r}; "
                f"this service hosts {self.config.stimulus_set_id!r}")
        entropy = int(seed) if seed is not None else secrets.randbits(63)
        order = tuple(np.random.default_rng(entropy).permutation(
            sorted(self._stimuli)).tolist())
        session = Session(
            session_id=secrets.token_urlsafe(12),
            participant_code=participant_code,
            trial_order=order,
            block_boundaries=block_boundaries(len(order), self.config.block_count),
            created_at=time.time(),
            entropy=entropy,
        )
        with self._registry_lock:
            self._sessions[session.session_id] = _SessionState(session=session)
        self._append(session.session_id, {
            "event": "session",
            "session_id": session.session_id,
            "participant_code": session.participant_code,
            "stimulus_set_id": stimulus_set_id,
            "trial_order": list(session.trial_order),
            "block_boundaries": list(session.block_boundaries),
            "created_at": session.created_at,
            "entropy": session.entropy,
        })
        return session

    # -- trial flow ----------------------------------------------------------

    def next_trial(self, session_id: str) -> dict:
        """The current trial (idempotent), or an end marker once exhausted."""
        state = self._state(session_id)
        with state.lock:
            session = state.session
            if state.cursor >= session.n_trials:
                return {"status": "done", "completed": len(state.completed)}
            stimulus_id = session.trial_order[state.cursor]
            im = self._stimuli[stimulus_id]
            if not state.served:
                state.served = True
                state.trial_t0_ms = self._clock()
                state.pending_clicks = []
                self._append(session_id, {"event": "served", "cursor": state.cursor,
                                          "stimulus_id": stimulus_id,
                                          "t0_ms": state.trial_t0_ms})
            # display order is a deterministic per-trial draw so that repeated
            # reads of the same trial never reshuffle the options
            flip = np.random.default_rng(
                np.random.SeedSequence((session.entropy, state.cursor))).integers(0, 2)
            pair = (im.true_label, im.false_label)
            blurred = self.blurred_uint8(stimulus_id)
            return {
                "status": "trial",
                "stimulus_id": stimulus_id,
                "option_pair": [pair[flip], pair[1 - flip]],
                "block_index": session.block_index(state.cursor),
                "cursor": state.cursor,
                "n_trials": session.n_trials,
                "height": int(blurred.shape[0]),
                "width": int(blurred.shape[1]),
                "image_png_b64": _png_b64(blurred),
            }

    def record_click(self, session_id: str, stimulus_id: str, x: int, y: int,
                     client_ms: float = None) -> dict:
        state = self._state(session_id)
        with state.lock:
            session = state.session
            if state.cursor >= session.n_trials or not state.served \
                    or session.trial_order[state.cursor] != stimulus_id:
                raise InactiveTrialError(
                    f"stimulus {stimulus_id!r} is not the active trial")
            im = self._stimuli[stimulus_id]
            h, w = im.pixels.shape[:2]
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"click ({x},{y}) outside {w}x{h} image")
            event = ClickEvent(x=int(x), y=int(y),
                               ms_since_trial_start=self._clock() - state.trial_t0_ms,
                               client_ms=client_ms)
            state.pending_clicks.append(event)
            self._append(session_id, {"event": "click", "stimulus_id": stimulus_id,
                                      **event.to_json_dict()})
            patch, x0, y0 = self._patch(im, int(x), int(y))
            return {
                "x": int(x), "y": int(y),
                "patch_x0": x0, "patch_y0": y0,
                "radius": self.config.reveal_radius,
                "ms_since_trial_start": event.ms_since_trial_start,
                "click_count": len(state.pending_clicks),
                "patch_png_b64": _png_b64(patch),
            }

    def submit_choice(self, session_id: str, stimulus_id: str, choice: str) -> TrialRecord:
        state = self._state(session_id)
        with state.lock:
            session = state.session
            if state.cursor >= session.n_trials or not state.served \
                    or session.trial_order[state.cursor] != stimulus_id:
                raise InactiveTrialError(
                    f"stimulus {stimulus_id!r} is not the active trial")
            im = self._stimuli[stimulus_id]
            if choice not in (im.true_label, im.false_label):
                raise ValueError(
                    f"choice {choice!r} is not one of the offered labels "
                    f"({im.true_label!r}, {im.false_label!r}); trial stays open")
            clicks = tuple(state.pending_clicks)
            if clicks:
                duration = (self._clock() - state.trial_t0_ms) - clicks[0].ms_since_trial_start
                duration = max(0.0, duration)
            else:
                duration = None  # zero-click choice, flagged by the null duration
            record = TrialRecord(
                session_id=session_id,
                stimulus_id=stimulus_id,
                true_label=im.true_label,
                false_label=im.false_label,
                clicks=clicks,
                choice=choice,
                correct=choice == im.true_label,
                duration_ms=duration,
            )
            state.completed.append(record)
            state.cursor += 1
            state.served = False
            state.trial_t0_ms = None
            state.pending_clicks = []
            self._append(session_id, {"event": "choice", "record": record.to_json_dict()})
            return record

    # -- export --------------------------------------------------------------

    def export_results(self, session_id: str = None) -> str:
        """JSON-lines export, one TrialRecord per line; all sessions if None."""
        if session_id is None:
            states = [self._sessions[k] for k in sorted(self._sessions)]
        else:
            states = [self._state(session_id)]
        lines = []
        for state in states:
            with state.lock:
                lines.extend(json.dumps(r.to_json_dict()) for r in state.completed)
        return "".join(line + "\n" for line in lines)

    def session_summary(self, session_id: str) -> dict:
        state = self._state(session_id)
        session = state.session
        return {
            "session_id": session.session_id,
            "participant_code": session.participant_code,
            "n_trials": session.n_trials,
            "block_boundaries": list(session.block_boundaries),
            "block_count": self.config.block_count,
            "created_at": session.created_at,
            "cursor": state.cursor,
        }


def build_app(service: ExperimentService):
    """FastAPI wrapper mapping domain errors onto HTTP status codes."""
    from fastapi import FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import PlainTextResponse
    from pydantic import BaseModel

    class CreateSessionBody(BaseModel):
        participant_code: str
        stimulus_set_id: str
        seed: int | None = None

    class ClickBody(BaseModel):
        stimulus_id: str
        x: int
        y: int
        client_ms: float | None = None

    class ChoiceBody(BaseModel):
        stimulus_id: str
        choice: str

    app = FastAPI(title="click-to-reveal 2AFC experiment")
    app.state.service = service
    # The browser frontend is served as a static page from an arbitrary
    # origin, so the API must answer preflighted cross-origin requests.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def run(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UnknownResourceError as exc:
            raise HTTPException(status_code=404, detail=str(exc.args[0])) from None
        except InactiveTrialError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        session = run(service.create_session, body.participant_code,
                      body.stimulus_set_id, seed=body.seed)
        return service.session_summary(session.session_id)

    @app.get("/sessions/{session_id}/trial")
    def next_trial(session_id: str):
        return run(service.next_trial, session_id)

    @app.post("/sessions/{session_id}/clicks")
    def record_click(session_id: str, body: ClickBody):
        return run(service.record_click, session_id, body.stimulus_id,
                   body.x, body.y, client_ms=body.client_ms)

    @app.post("/sessions/{session_id}/choice")
    def submit_choice(session_id: str, body: ChoiceBody):
        record = run(service.submit_choice, session_id, body.stimulus_id, body.choice)
        return record.to_json_dict()

    @app.get("/sessions/{session_id}/export")
    def export_results(session_id: str):
        text = run(service.export_results, session_id)
        return PlainTextResponse(text, media_type="application/x-ndjson")

    return app


def serve(config: ServiceConfig) -> None:
    """Blocking entry point used by the CLI's serve command."""
    import uvicorn

    uvicorn.run(build_app(ExperimentService(config)), host="0.0.0.0", port=config.port)
