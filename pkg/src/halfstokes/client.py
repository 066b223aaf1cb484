"""Thin HTTP client used by ``halfstokes --server URL``."""
from __future__ import annotations

import base64
from pathlib import Path
from typing import Sequence

import httpx

from .cli import EXIT_CONFIG, RunResult, error_result, flatten, parse_override

TIMEOUT = httpx.Timeout(30.0, read=None)


def _local_inputs(raw: dict, overrides: Sequence[str]) -> tuple[dict, list[str], dict]:
    """Move local field files named in the config into the request body."""
    flat = flatten(raw)
    keep = []
    for text in overrides:
        k, v = parse_override(text)
        if k == "norm.field":
            flat[k] = v
        else:
            keep.append(text)
    inputs = {}
    path = flat.pop("norm.field", None)
    if path is not None and Path(path).is_file():
        inputs["norm.field"] = base64.b64encode(Path(path).read_bytes()).decode()
    elif path is not None:
        flat["norm.field"] = path
    return flat, keep, inputs


def remote_execute(url: str, command: str, raw: dict, overrides: Sequence[str] = (), client: httpx.Client | None = None) -> RunResult:
    from .api import decode_artifacts

    cfg, keep, inputs = _local_inputs(raw, overrides)
    body = {"config": cfg, "overrides": keep, "inputs": inputs}
    own = client is None
    client = client or httpx.Client(base_url=url, timeout=TIMEOUT)
    try:
        resp = client.post(f"/run/{command}", json=body)
    finally:
        if own:
            client.close()
    if resp.status_code == 422:
        detail = resp.json().get("detail", {})
        if isinstance(detail, dict):
            return error_result(command, EXIT_CONFIG, "ConfigError", detail.get("message", ""), detail.get("path"))
        return error_result(command, EXIT_CONFIG, "ConfigError", str(detail))
    resp.raise_for_status()
    data = resp.json()
    return RunResult(data["command"], data["exit_code"], data["failures"], data["summary"], decode_artifacts(data["artifacts"]))
