"""HTTP surface: /embed, /mlm_fill, /nll, /info, /healthz.

JSON over HTTP, UTF-8, no streaming.  Float values serialize through
Python's repr, which round-trips float64 exactly.  The service keeps no
per-request state, so any request order yields identical responses.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .model import EncoderBackend, ServiceConfig


class EmbedRequest(BaseModel):
    texts: list[str]


class MlmFillRequest(BaseModel):
    text: str
    tail_len: int
    top_k: int


class NllRequest(BaseModel):
    texts: list[str]


def create_app(config: ServiceConfig | None = None, backend: EncoderBackend | None = None) -> FastAPI:
    config = config or ServiceConfig()
    if backend is None:
        backend = EncoderBackend(config)

    app = FastAPI(title="derag-encoder-service")
    app.state.backend = backend
    app.state.config = config

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request body"})

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.get("/info")
    def info():
        return backend.info()

    @app.post("/embed")
    def embed(req: EmbedRequest):
        if len(req.texts) > config.max_batch:
            return JSONResponse(
                status_code=413,
                content={"error": f"batch of {len(req.texts)} exceeds max_batch {config.max_batch}"},
            )
        vectors = backend.embed(req.texts)
        return {"dim": backend.dim, "embeddings": [[float(x) for x in row] for row in vectors]}

    @app.post("/mlm_fill")
    def mlm_fill(req: MlmFillRequest):
        try:
            candidates = backend.mlm_fill(req.text, req.tail_len, req.top_k)
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        return {"candidates": candidates}

    @app.post("/nll")
    def nll(req: NllRequest):
        if len(req.texts) > config.max_batch:
            return JSONResponse(
                status_code=413,
                content={"error": f"batch of {len(req.texts)} exceeds max_batch {config.max_batch}"},
            )
        nlls, ppls = [], []
        for text in req.texts:
            try:
                value, ppl = backend.nll(text)
            except ValueError as exc:
                return JSONResponse(status_code=400, content={"error": f"{text[:40]!r}: {exc}"})
            nlls.append(value)
            ppls.append(ppl)
        return {"nll": nlls, "ppl": ppls}

    return app
