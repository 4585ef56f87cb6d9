"""Deterministic stub evaluator speaking ``mles-eval/1`` over stdio.

Scores every policy as ``1 / (1 + |len(code) - target|)`` on the normalized
code length, emits lander- or racing-shaped per-instance metrics whose
aggregation reproduces that score exactly, and attaches tiny deterministic
evidence artifacts. Run as ``python -m mles.stub_evaluator`` (the engine's
``--stub-eval`` path) or embed via :func:`handle_frame` in tests.

Policies whose code contains the token ``RAISE_IN_EPISODE`` simulate a
runtime failure (status ``policy_error``), which lets engine tests drive the
failure path without a real environment.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import json
import sys

from mles import _png
from mles.evalbridge import PROTOCOL_VERSION, aggregate_for_task, metrics_report_frame
from mles.model import InstanceMetrics, normalize_code

DEFAULT_TARGET_LEN = 1200
FAILURE_TOKEN = "RAISE_IN_EPISODE"


def stub_score(code: str, target_len: int = DEFAULT_TARGET_LEN) -> float:
    return 1.0 / (1.0 + abs(len(normalize_code(code)) - target_len))


def _instance(task: str, instance_id: str, score: float, code_hash: str) -> InstanceMetrics:
    steps = 100 + int(code_hash[:4], 16) % 100
    if task == "car_racing":
        return InstanceMetrics(
            instance_id=instance_id,
            reward=score * 900.0 - 100.0 * 0.1,
            steps=steps,
            completion=score * 100.0,
        )
    # lander-shaped: fuel term and success term zeroed so NWS == score exactly
    return InstanceMetrics(
        instance_id=instance_id,
        reward=score * 1000.0 / 3.0,
        steps=steps,
        fuel=100.0,
        success=False,
    )


def _ibe_payloads(task: str, instance_ids: list[str], kinds: list[str], code_hash: str) -> list[dict]:
    payloads = []
    for instance_id in instance_ids:
        salt = hashlib.sha256(f"{code_hash}:{instance_id}".encode()).digest()
        for kind in kinds:
            if kind == "text_state_trace":
                text = "\n".join(
                    f"step {i * 30}: state {salt[i % len(salt)] / 255.0:.4f}" for i in range(4)
                )
                payloads.append(
                    {
                        "kind": kind,
                        "instance_id": instance_id,
                        "media_type": "text/plain",
                        "content_b64": base64.b64encode(text.encode()).decode("ascii"),
                    }
                )
            else:
                rgb = (salt[0], salt[1], salt[2])
                png = _png.solid_tile(48, 32, rgb)
                payloads.append(
                    {
                        "kind": kind,
                        "instance_id": instance_id,
                        "media_type": "image/png",
                        "content_b64": base64.b64encode(png).decode("ascii"),
                    }
                )
    return payloads


def handle_frame(frame: dict, target_len: int = DEFAULT_TARGET_LEN) -> dict | None:
    """Process one request frame; None means shutdown."""
    kind = frame.get("type")
    if kind == "shutdown":
        return None
    request_id = frame.get("request_id", "")
    if kind not in ("evaluate", "ensemble_evaluate"):
        return {
            "type": "response",
            "request_id": request_id,
            "status": "protocol_error",
            "error_detail": f"unknown frame type {kind!r}",
            "resets_performed": 0,
        }
    try:
        task = frame["task"]
        instance_ids = [str(i) for i in frame["instance_ids"]]
        if kind == "evaluate":
            code = frame["code"]
        else:
            code = "\n".join(frame["codes"])
        ibe_kinds = [str(k) for k in frame.get("ibe_kinds", [])]
    except (KeyError, TypeError) as exc:
        return {
            "type": "response",
            "request_id": request_id,
            "status": "protocol_error",
            "error_detail": f"malformed request: {exc}",
            "resets_performed": 0,
        }

    if FAILURE_TOKEN in code:
        return {
            "type": "response",
            "request_id": request_id,
            "status": "policy_error",
            "error_detail": "stub policy raised during episode",
            "resets_performed": len(instance_ids),
        }

    score = stub_score(code, target_len)
    code_hash = hashlib.sha256(code.encode()).hexdigest()
    per_instance = [_instance(task, i, score, code_hash) for i in instance_ids]
    metrics = aggregate_for_task(task, per_instance)
    return {
        "type": "response",
        "request_id": request_id,
        "status": "ok",
        "report": metrics_report_frame(metrics),
        "ibe_payloads": _ibe_payloads(task, instance_ids, ibe_kinds, code_hash),
        "resets_performed": len(instance_ids),
    }


def serve(stdin=None, stdout=None, target_len: int = DEFAULT_TARGET_LEN) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    hello = {
        "type": "hello",
        "schema": PROTOCOL_VERSION,
        "tasks": ["lunar_lander", "car_racing", "stub"],
        "ibe_kinds": ["frame_stack_image", "trajectory_map_image", "text_state_trace"],
        "capabilities": ["evaluate", "ensemble_evaluate"],
        "versions": {"backend": "stub-1"},
    }
    stdout.write(json.dumps(hello, sort_keys=True) + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            frame = json.loads(line)
            if not isinstance(frame, dict):
                raise ValueError("frame is not an object")
        except ValueError as exc:
            frame = {"type": "__malformed__", "error": str(exc)}
            response = {
                "type": "response",
                "request_id": "",
                "status": "protocol_error",
                "error_detail": f"not a JSON object: {exc}",
                "resets_performed": 0,
            }
            stdout.write(json.dumps(response, sort_keys=True) + "\n")
            stdout.flush()
            continue
        response = handle_frame(frame, target_len)
        if response is None:
            return
        stdout.write(json.dumps(response, sort_keys=True) + "\n")
        stdout.flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Deterministic stub evaluator (mles-eval/1)")
    parser.add_argument("--stub", action="store_true", help="accepted for interface parity")
    parser.add_argument("--target-len", type=int, default=DEFAULT_TARGET_LEN)
    args = parser.parse_args(argv)
    serve(target_len=args.target_len)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
