from .render import SliceRender, render_slice, slice_png, window_u8
from .session import (ProtocolError, SessionStore, TuringSession, VolumePool,
                      create_session, next_trial, score, submit_answer)

__all__ = [
    "SliceRender", "render_slice", "slice_png", "window_u8",
    "ProtocolError", "SessionStore", "TuringSession", "VolumePool",
    "create_session", "next_trial", "score", "submit_answer",
]
