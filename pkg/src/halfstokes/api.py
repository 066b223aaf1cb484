"""HTTP service wrapping the command runner.

Run with ``uvicorn halfstokes.api:app``.  Each command is a POST taking the
same flat/nested config object the CLI reads from disk, plus ``--set`` style
overrides; artifacts come back inline (text as UTF-8, field files as base64).
"""
from __future__ import annotations

import base64
import os
import tempfile
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .cli import COMMANDS, EXIT_CONFIG, RunResult, execute

app = FastAPI(title="halfstokes", version=__version__)


class RunRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    overrides: list[str] = Field(default_factory=list)
    # base64 file contents addressed by config key, e.g. {"norm.field": "..."}
    inputs: dict[str, str] = Field(default_factory=dict)


class Artifact(BaseModel):
    name: str
    encoding: Literal["utf-8", "base64"]
    data: str


class RunResponse(BaseModel):
    command: str
    exit_code: int
    failures: list
    summary: dict
    artifacts: list[Artifact]


def encode_artifacts(artifacts: dict) -> list[Artifact]:
    out = []
    for name in sorted(artifacts):
        data = artifacts[name]
        if name.endswith((".json", ".csv")):
            out.append(Artifact(name=name, encoding="utf-8", data=data.decode()))
        else:
            out.append(Artifact(name=name, encoding="base64", data=base64.b64encode(data).decode()))
    return out


def decode_artifacts(items) -> dict:
    out = {}
    for a in items:
        name, enc, data = a["name"], a["encoding"], a["data"]
        out[name] = data.encode() if enc == "utf-8" else base64.b64decode(data)
    return out


def to_response(result: RunResult) -> RunResponse:
    return RunResponse(command=result.command, exit_code=result.exit_code, failures=result.failures,
                       summary=result.summary, artifacts=encode_artifacts(result.artifacts))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__, "commands": list(COMMANDS)}


@app.post("/run/{command}", response_model=RunResponse)
def run_command(command: str, req: RunRequest) -> RunResponse:
    if command not in COMMANDS:
        raise HTTPException(status_code=404, detail=f"unknown command {command!r}")
    with tempfile.TemporaryDirectory() as tmp:
        overrides = list(req.overrides)
        for key, blob in req.inputs.items():
            path = Path(tmp) / f"input-{len(overrides)}.hsf1"
            path.write_bytes(base64.b64decode(blob))
            overrides.append(f"{key}={os.fspath(path)}")
        result = execute(command, req.config, overrides)
    if result.exit_code == EXIT_CONFIG:
        raise HTTPException(status_code=422, detail=result.failures[0])
    return to_response(result)
