"""Visual discrimination test protocol: trial plans, sessions, scoring.

A session shows a rater windowed CT slices, half real-tumor and half
synthetic-tumor by default, and records forced real/synthetic verdicts.
Truth labels stay server-side until the session completes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..grids import Volume3
from ..nifti import load_nifti
from ..seeds import derive_seed, rng_for

REAL = "real"
SYNTHETIC = "synthetic"
VERDICTS = (REAL, SYNTHETIC)

DEFAULT_TRIALS = 50
DEFAULT_REAL_RATIO = 0.5


class ProtocolError(ValueError):
    """Invalid request against the session protocol."""


@dataclass(frozen=True)
class PoolCase:
    name: str
    image_path: Path
    label_path: Path


class VolumePool:
    """Directory of image/label NIfTI pairs, loaded lazily and cached."""

    IMAGE_SUFFIXES = ("_image.nii.gz", "_image.nii", "_ct.nii.gz", "_ct.nii")
    LABEL_SUFFIXES = ("_label.nii.gz", "_label.nii")

    def __init__(self, directory):
        directory = Path(directory)
        self.cases: List[PoolCase] = []
        for path in sorted(directory.iterdir()) if directory.is_dir() else []:
            for suffix in self.IMAGE_SUFFIXES:
                if path.name.endswith(suffix):
                    stem = path.name[:-len(suffix)]
                    for label_suffix in self.LABEL_SUFFIXES:
                        label = directory / f"{stem}{label_suffix}"
                        if label.exists():
                            self.cases.append(PoolCase(stem, path, label))
                            break
                    break
        self._images: Dict[str, Volume3] = {}
        self._tumor_slices: Dict[str, List[int]] = {}

    def __len__(self) -> int:
        return len(self.cases)

    def image(self, name: str) -> Volume3:
        if name not in self._images:
            case = self._case(name)
            self._images[name] = load_nifti(case.image_path)
        return self._images[name]

    def tumor_slices(self, name: str) -> List[int]:
        """Axial slice indices intersecting at least one labeled tumor voxel."""
        if name not in self._tumor_slices:
            case = self._case(name)
            label = load_nifti(case.label_path, as_mask=True)
            hits = np.nonzero(label.data.any(axis=(0, 1)))[0]
            self._tumor_slices[name] = [int(z) for z in hits]
        return self._tumor_slices[name]

    def _case(self, name: str) -> PoolCase:
        for case in self.cases:
            if case.name == name:
                return case
        raise ProtocolError(f"unknown case {name!r}")


@dataclass(frozen=True)
class Trial:
    case_id: str
    axis: int
    slice_index: int
    truth: str  # never serialized toward an active client


@dataclass(frozen=True)
class TrialPlan:
    trials: Tuple[Trial, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.trials)


@dataclass
class Answer:
    trial_index: int
    verdict: str
    timestamp: float


@dataclass
class TuringSession:
    """Mutable server-side state of one rater session."""

    session_id: str
    plan: TrialPlan
    level_hu: float
    width_hu: float
    answers: List[Answer] = field(default_factory=list)

    @property
    def n_trials(self) -> int:
        return len(self.plan)

    @property
    def complete(self) -> bool:
        return len(self.answers) == self.n_trials

    @property
    def state(self) -> str:
        return "complete" if self.complete else "active"


def _pick_tumor_trial(pool: VolumePool, truth: str, rng: np.random.Generator
                      ) -> Trial:
    eligible = [c for c in pool.cases if pool.tumor_slices(c.name)]
    if not eligible:
        raise ProtocolError(f"{truth} pool has no tumor-bearing slices")
    case = eligible[int(rng.integers(len(eligible)))]
    slices = pool.tumor_slices(case.name)
    index = slices[int(rng.integers(len(slices)))]
    return Trial(case_id=case.name, axis=2, slice_index=index, truth=truth)


def create_session(real_pool: VolumePool, synthetic_pool: VolumePool,
                   n_trials: int = DEFAULT_TRIALS,
                   ratio: float = DEFAULT_REAL_RATIO,
                   seed: int = 0, session_id: str = "session",
                   level_hu: float = 40.0, width_hu: float = 400.0
                   ) -> TuringSession:
    """Build a deterministic shuffled trial plan over the two pools.

    Every trial's slice intersects a labeled tumor, so raters never see a
    trivially lesion-free image.
    """
    if n_trials < 1:
        raise ProtocolError(f"n_trials must be >= 1, got {n_trials}")
    if not 0.0 <= ratio <= 1.0:
        raise ProtocolError(f"ratio must be in [0, 1], got {ratio}")
    if len(real_pool) == 0:
        raise ProtocolError("real pool is empty")
    if len(synthetic_pool) == 0:
        raise ProtocolError("synthetic pool is empty")

    n_real = int(round(n_trials * ratio))
    truths = [REAL] * n_real + [SYNTHETIC] * (n_trials - n_real)
    rng = rng_for(seed, "plan")
    rng.shuffle(truths)
    trials = tuple(
        _pick_tumor_trial(real_pool if truth == REAL else synthetic_pool,
                          truth, rng)
        for truth in truths)
    return TuringSession(session_id=session_id,
                         plan=TrialPlan(trials=trials, seed=seed),
                         level_hu=level_hu, width_hu=width_hu)


def image_token(session: TuringSession, trial_index: int) -> str:
    """Opaque per-trial image token; carries no truth information."""
    return format(derive_seed(session.plan.seed, "token", session.session_id,
                              trial_index), "016x")


def next_trial(session: TuringSession) -> dict:
    """Payload for the first unanswered trial; idempotent until answered.

    Never includes the truth label.
    """
    if session.complete:
        raise ProtocolError("no trials remaining: session is complete")
    index = len(session.answers)
    return {
        "trial_index": index,
        "n_trials": session.n_trials,
        "answered": index,
        "image_token": image_token(session, index),
        "level_hu": session.level_hu,
        "width_hu": session.width_hu,
    }


def submit_answer(session: TuringSession, trial_index: int, verdict: str) -> dict:
    """Record one forced-choice verdict for the first unanswered trial."""
    if verdict not in VERDICTS:
        raise ProtocolError(f"invalid verdict {verdict!r}; expected one of "
                            f"{VERDICTS}")
    expected = len(session.answers)
    if session.complete:
        raise ProtocolError("session is already complete")
    if trial_index != expected:
        raise ProtocolError(f"out-of-order answer: expected trial {expected}, "
                            f"got {trial_index}")
    session.answers.append(Answer(trial_index=trial_index, verdict=verdict,
                                  timestamp=time.time()))
    return {"accepted": True, "answered": len(session.answers),
            "n_trials": session.n_trials, "state": session.state}


def score(session: TuringSession, allow_partial: bool = False) -> dict:
    """Accuracy and confusion counts; reveals truth labels per trial.

    Requires a complete session unless allow_partial is set.
    """
    if not session.complete and not allow_partial:
        raise ProtocolError("session is still active; pass allow_partial to "
                            "score anyway")
    confusion = {"real_real": 0, "real_synthetic": 0,
                 "synthetic_real": 0, "synthetic_synthetic": 0}
    reveal = []
    for answer in session.answers:
        truth = session.plan.trials[answer.trial_index].truth
        confusion[f"{truth}_{answer.verdict}"] += 1
        reveal.append({"trial_index": answer.trial_index, "truth": truth,
                       "verdict": answer.verdict,
                       "correct": truth == answer.verdict})
    answered = len(session.answers)
    correct = confusion["real_real"] + confusion["synthetic_synthetic"]

    def rate(hit, miss):
        total = confusion[hit] + confusion[miss]
        return confusion[hit] / total if total else None

    return {
        "session_id": session.session_id,
        "state": session.state,
        "answered": answered,
        "n_trials": session.n_trials,
        "correct": correct,
        "accuracy": correct / answered if answered else 0.0,
        "confusion": confusion,
        "class_rates": {
            "real": rate("real_real", "real_synthetic"),
            "synthetic": rate("synthetic_synthetic", "synthetic_real"),
        },
        "trials": reveal,
    }


class SessionStore:
    """Sessions with an append-only event log, replayable on restart."""

    def __init__(self, real_pool: VolumePool, synthetic_pool: VolumePool,
                 event_log: Optional[Path] = None, server_seed: int = 0):
        self.real_pool = real_pool
        self.synthetic_pool = synthetic_pool
        self.event_log = Path(event_log) if event_log else None
        self.server_seed = server_seed
        self.sessions: Dict[str, TuringSession] = {}
        self._tokens: Dict[str, Tuple[str, int]] = {}
        self._counter = 0
        if self.event_log and self.event_log.exists():
            self._replay()

    def _index_tokens(self, session: TuringSession) -> None:
        for index in range(session.n_trials):
            self._tokens[image_token(session, index)] = (session.session_id,
                                                         index)

    def create(self, n_trials: int = DEFAULT_TRIALS,
               ratio: float = DEFAULT_REAL_RATIO,
               seed: Optional[int] = None,
               level_hu: float = 40.0, width_hu: float = 400.0
               ) -> TuringSession:
        session_id = f"s{self._counter:05d}"
        if seed is None:
            seed = derive_seed(self.server_seed, "session", session_id)
        session = create_session(self.real_pool, self.synthetic_pool,
                                 n_trials=n_trials, ratio=ratio, seed=seed,
                                 session_id=session_id, level_hu=level_hu,
                                 width_hu=width_hu)
        self._counter += 1
        self.sessions[session_id] = session
        self._index_tokens(session)
        self._append({"event": "created", "session_id": session_id,
                      "n_trials": n_trials, "ratio": ratio, "seed": seed,
                      "level_hu": level_hu, "width_hu": width_hu})
        return session

    def get(self, session_id: str) -> TuringSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise ProtocolError(f"unknown session {session_id!r}") from None

    def answer(self, session_id: str, trial_index: int, verdict: str) -> dict:
        session = self.get(session_id)
        ack = submit_answer(session, trial_index, verdict)
        self._append({"event": "answer", "session_id": session_id,
                      "trial_index": trial_index, "verdict": verdict})
        return ack

    def resolve_token(self, token: str) -> Tuple[TuringSession, Trial]:
        try:
            session_id, index = self._tokens[token]
        except KeyError:
            raise ProtocolError("unknown image token") from None
        session = self.sessions[session_id]
        return session, session.plan.trials[index]

    def _append(self, event: dict) -> None:
        if self.event_log is None:
            return
        with open(self.event_log, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self) -> None:
        for line in self.event_log.read_text().splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            if event["event"] == "created":
                session = create_session(
                    self.real_pool, self.synthetic_pool,
                    n_trials=event["n_trials"], ratio=event["ratio"],
                    seed=event["seed"], session_id=event["session_id"],
                    level_hu=event["level_hu"], width_hu=event["width_hu"])
                self.sessions[event["session_id"]] = session
                self._index_tokens(session)
                self._counter = max(self._counter,
                                    int(event["session_id"][1:]) + 1)
            elif event["event"] == "answer":
                submit_answer(self.sessions[event["session_id"]],
                              event["trial_index"], event["verdict"])
