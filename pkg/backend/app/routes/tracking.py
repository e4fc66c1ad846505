"""
Tracking Routes - API endpoints for frame-by-frame tracking sessions
"""
import logging
import os
import uuid
from typing import Dict, List, Optional

from fastapi import APIRouter, File, Form, HTTPException, UploadFile
from pydantic import BaseModel

from app.config import Variant, load_config
from app.services.errors import TrackingError
from app.services.imaging import BBox, decode_frame
from app.services.tracker import Tracker, configure_variant

logger = logging.getLogger(__name__)

router = APIRouter()

# In-memory session storage, one tracker per session
sessions: Dict[str, Tracker] = {}
base_config = load_config(os.getenv("AUTOTRACK_CONFIG"))


class SessionResponse(BaseModel):
    session_id: str
    variant: str
    bbox: List[float]


class FrameResponse(BaseModel):
    frame: int
    bbox: List[float]
    pi_norm: float
    theta: float
    learned: bool


class SessionState(BaseModel):
    session_id: str
    variant: str
    frames: int
    bbox: Optional[List[float]] = None
    trace: List[FrameResponse] = []


def _get_session(session_id: str) -> Tracker:
    if session_id not in sessions:
        raise HTTPException(status_code=404, detail="Session not found")
    return sessions[session_id]


@router.post("/sessions", response_model=SessionResponse)
async def create_session(
    file: UploadFile = File(...),
    x: float = Form(...),
    y: float = Form(...),
    w: float = Form(...),
    h: float = Form(...),
    variant: Variant = Form(Variant.AUTOTRACK),
):
    """Start a tracking session on the first frame and its target box"""
    try:
        frame = decode_frame(await file.read())
        tracker = Tracker(configure_variant(base_config, variant))
        bbox = tracker.init(frame, BBox(x, y, w, h))
    except TrackingError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to start session: {str(e)}")

    session_id = str(uuid.uuid4())
    sessions[session_id] = tracker
    logger.info("Session %s started (%s) on %s", session_id, variant.value, bbox.as_list())
    return SessionResponse(session_id=session_id, variant=variant.value, bbox=bbox.as_list())


@router.post("/sessions/{session_id}/frames", response_model=FrameResponse)
async def track_frame(session_id: str, file: UploadFile = File(...)):
    """Track the target into the uploaded frame"""
    tracker = _get_session(session_id)
    try:
        frame = decode_frame(await file.read())
        tracker.update(frame)
    except TrackingError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Tracking failed: {str(e)}")
    return FrameResponse(**tracker.records[-1].trace_line())


@router.get("/sessions/{session_id}", response_model=SessionState)
async def get_session(session_id: str):
    """Current box and per-frame trace of a session"""
    tracker = _get_session(session_id)
    state = tracker.state
    return SessionState(
        session_id=session_id,
        variant=tracker.cfg.variant.value,
        frames=len(tracker.records),
        bbox=state.bbox.as_list() if state is not None else None,
        trace=[FrameResponse(**r.trace_line()) for r in tracker.records],
    )


@router.delete("/sessions/{session_id}")
async def delete_session(session_id: str):
    _get_session(session_id)
    del sessions[session_id]
    return {"session_id": session_id, "deleted": True}
