"""Local HTTP service exposing augmentation, reward scoring, signal
assembly, and episode runs.

Every response repeats the caller's request_id. Application failures come
back as HTTP 400 with a structured {error: {code, message}} envelope whose
codes mirror the library's error codes; transport-level retries on the
client side must never fire for these. Images cross the wire as base64 PNG
(lossless, so the bit-exact invariants survive the round trip).

Endpoint schemas are documented in docs/service_api.md and versioned under
the /v1 prefix.
"""

from __future__ import annotations

import os
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .episode import (
    EpisodeConfig,
    SamplingParams,
    ScriptedBackend,
    Query,
    run_episode,
    trace_from_dict,
    trace_to_dict,
)
from .errors import AugLoopError, BindFailure
from .grpo import DEFAULT_KL_BETA, RolloutGroup, ScoredTrace, assemble_batch
from .image import ImageBuffer
from .ops import AugmentationOp, apply_op
from .rewards import DEFAULT_WEIGHTS, RuleJudge, score_trace

AUTH_HEADER = "x-augloop-auth"


class OpSpec(BaseModel):
    kind: str
    params: dict = Field(default_factory=dict)


class AugmentRequest(BaseModel):
    request_id: str
    image_png_b64: str
    op: OpSpec
    original_png_b64: Optional[str] = None
    max_pixels: int = 4_194_304
    source_generation: int = 0


class RewardsRequest(BaseModel):
    request_id: str
    trace: dict
    ground_truth: str
    max_calls: int = 8
    weights: Optional[list[float]] = None


class GroupTraceSpec(BaseModel):
    trace_id: str
    trace: dict
    reward: float
    logp_policy: Optional[list[float]] = None
    logp_ref: Optional[list[float]] = None


class GroupSpec(BaseModel):
    group_id: str
    traces: list[GroupTraceSpec]


class GrpoBatchRequest(BaseModel):
    request_id: str
    groups: list[GroupSpec]
    beta: float = DEFAULT_KL_BETA
    mode: str = "zscore"


class BackendSpec(BaseModel):
    type: str = "scripted"
    spans: list[str] = Field(default_factory=list)


class EpisodeRequest(BaseModel):
    request_id: str
    question: str
    image_png_b64: str
    backend: BackendSpec
    max_calls: int = 8
    include_images: bool = True


def _ok(request_id: str, result: dict) -> JSONResponse:
    return JSONResponse({"request_id": request_id, "result": result, "error": None})


def _fail(request_id: str, code: str, message: str, status: int = 400) -> JSONResponse:
    return JSONResponse(
        {"request_id": request_id, "result": None,
         "error": {"code": code, "message": message}},
        status_code=status)


def create_app(auth_token: Optional[str] = None) -> FastAPI:
    """Build the service; auth is an optional shared secret header, off by
    default for local use (set via argument or AUGLOOP_SERVICE_TOKEN)."""
    token = auth_token if auth_token is not None else os.environ.get("AUGLOOP_SERVICE_TOKEN", "")
    app = FastAPI(title="augloop service", version=__version__)

    @app.middleware("http")
    async def check_auth(request: Request, call_next):
        if token and request.headers.get(AUTH_HEADER) != token:
            return _fail("", "unauthorized", "missing or invalid auth token", status=401)
        return await call_next(request)

    @app.exception_handler(AugLoopError)
    async def handle_augloop_error(request: Request, exc: AugLoopError):
        return _fail("", exc.code, str(exc))

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/augment")
    async def augment(req: AugmentRequest):
        try:
            image = ImageBuffer.from_png_base64(req.image_png_b64)
            original = (ImageBuffer.from_png_base64(req.original_png_b64)
                        if req.original_png_b64 else image)
            op = AugmentationOp(req.op.kind, dict(req.op.params))
        except (AugLoopError, ValueError) as exc:
            code = getattr(exc, "code", "param_invalid")
            return _fail(req.request_id, code, str(exc))
        outcome = apply_op(image, op, original, max_pixels=req.max_pixels,
                           source_generation=req.source_generation)
        if outcome.ok:
            return _ok(req.request_id, {
                "image_png_b64": outcome.image.to_png_base64(),
                "error": None,
                "source_generation": outcome.source_generation,
            })
        return _ok(req.request_id, {
            "image_png_b64": None,
            "error": {"code": outcome.error.code, "message": outcome.error.human_text},
            "source_generation": outcome.source_generation,
        })

    @app.post("/v1/rewards")
    async def rewards(req: RewardsRequest):
        try:
            trace = trace_from_dict(req.trace)
            weights = tuple(req.weights) if req.weights else DEFAULT_WEIGHTS
            breakdown = score_trace(trace, req.ground_truth, RuleJudge(),
                                    max_calls=req.max_calls, weights=weights)
        except (AugLoopError, ValueError, KeyError) as exc:
            return _fail(req.request_id, getattr(exc, "code", "param_invalid"), str(exc))
        return _ok(req.request_id, breakdown.as_dict())

    @app.post("/v1/grpo/batch")
    async def grpo_batch(req: GrpoBatchRequest):
        try:
            groups = [
                RolloutGroup(
                    group_id=g.group_id,
                    traces=tuple(
                        ScoredTrace(
                            trace_id=t.trace_id,
                            trace=trace_from_dict(t.trace),
                            reward=t.reward,
                            logp_policy=tuple(t.logp_policy) if t.logp_policy else None,
                            logp_ref=tuple(t.logp_ref) if t.logp_ref else None,
                        ) for t in g.traces
                    ),
                ) for g in req.groups
            ]
            records = assemble_batch(groups, beta=req.beta, mode=req.mode)
        except (AugLoopError, ValueError, KeyError) as exc:
            return _fail(req.request_id, getattr(exc, "code", "param_invalid"), str(exc))
        return _ok(req.request_id, {"records": records})

    @app.post("/v1/episode")
    async def episode(req: EpisodeRequest):
        if req.backend.type != "scripted":
            return _fail(req.request_id, "param_invalid",
                         f"unsupported backend type {req.backend.type!r}; the service "
                         "runs only scripted backends (model endpoints stay client-side)")
        try:
            image = ImageBuffer.from_png_base64(req.image_png_b64)
            backend = ScriptedBackend(req.backend.spans)
            config = EpisodeConfig(max_calls=req.max_calls)
            trace = run_episode(backend, Query(image=image, question=req.question), config)
        except (AugLoopError, ValueError) as exc:
            return _fail(req.request_id, getattr(exc, "code", "param_invalid"), str(exc))
        return _ok(req.request_id, {"trace": trace_to_dict(trace, include_images=req.include_images)})

    return app


def serve(host: str = "127.0.0.1", port: int = 8777,
          auth_token: Optional[str] = None) -> None:
    import uvicorn

    try:
        uvicorn.run(create_app(auth_token=auth_token), host=host, port=port,
                    log_level="warning")
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
