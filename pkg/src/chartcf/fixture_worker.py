"""Protocol-conformant stand-in worker for offline runs and tests.

Speaks the same line protocol as the real render worker but never executes
plotting code.  parse_only genuinely compiles the script; render obeys a
scripted directive comment instead of running anything:

    # fixture-render: status=ok copy=/abs/prerendered.png
    # fixture-render: status=runtime_error
    # fixture-render: status=no_output
    # fixture-render: status=timeout
    # fixture-render: status=hang seconds=30

Without a directive, render writes a tiny built-in PNG at the declared
save path.  Run with ``python -m chartcf.fixture_worker``.
"""

from __future__ import annotations

import json
import re
import shutil
import sys
import time
from pathlib import Path

from .sandbox import (
    HANDSHAKE,
    MODE_PARSE_ONLY,
    MODE_RENDER,
    STATUS_NO_OUTPUT,
    STATUS_OK,
    STATUS_PARSE_ERROR,
    STATUS_PROTOCOL_ERROR,
    STATUS_RUNTIME_ERROR,
    STATUS_TIMEOUT,
)
from .testing import make_png
from .validator import SAVE_PATH_RE

_DIRECTIVE_RE = re.compile(r"#\s*fixture-render:\s*(.+)")


def _reply(req_id, status, image_path=None, stderr="", wall=0.0) -> dict:
    return {
        "id": req_id,
        "status": status,
        "image_path": str(image_path) if image_path else None,
        "stderr": stderr,
        "wall_time_s": wall,
    }


def _parse_directive(code: str) -> dict[str, str]:
    match = _DIRECTIVE_RE.search(code)
    if not match:
        return {}
    return dict(token.split("=", 1) for token in match.group(1).split() if "=" in token)


def _handle_render(req_id: str, code: str, out_dir: str) -> dict:
    directive = _parse_directive(code)
    status = directive.get("status", STATUS_OK)
    if status == "hang":
        time.sleep(float(directive.get("seconds", 30)))
        return _reply(req_id, STATUS_OK)
    if status == STATUS_RUNTIME_ERROR:
        return _reply(req_id, STATUS_RUNTIME_ERROR, stderr="fixture: scripted runtime error")
    if status == STATUS_NO_OUTPUT:
        return _reply(req_id, STATUS_NO_OUTPUT)
    if status == STATUS_TIMEOUT:
        return _reply(req_id, STATUS_TIMEOUT, stderr="fixture: scripted overrun")
    declared = SAVE_PATH_RE.search(code)
    if not declared:
        return _reply(req_id, STATUS_NO_OUTPUT, stderr="fixture: no declared save path")
    dest = Path(out_dir) / declared.group(0)
    dest.parent.mkdir(parents=True, exist_ok=True)
    source = directive.get("copy")
    if source:
        shutil.copyfile(source, dest)
    else:
        dest.write_bytes(make_png())
    return _reply(req_id, STATUS_OK, image_path=dest)


def handle_request(req: dict) -> dict:
    req_id = req.get("id")
    mode = req.get("mode")
    code = req.get("code", "")
    started = time.monotonic()
    if mode == MODE_PARSE_ONLY:
        try:
            compile(code, "<fixture>", "exec")
            out = _reply(req_id, STATUS_OK)
        except SyntaxError as exc:
            out = _reply(req_id, STATUS_PARSE_ERROR, stderr=str(exc))
    elif mode == MODE_RENDER:
        out = _handle_render(req_id, code, req.get("out_dir", "."))
    else:
        out = _reply(req_id, STATUS_PROTOCOL_ERROR, stderr=f"unknown mode {mode!r}")
    out["wall_time_s"] = round(time.monotonic() - started, 6)
    return out


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    print(json.dumps(HANDSHAKE), file=stdout, flush=True)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except ValueError:
            print(json.dumps(_reply(None, STATUS_PROTOCOL_ERROR, stderr="bad request line")),
                  file=stdout, flush=True)
            continue
        print(json.dumps(handle_request(req)), file=stdout, flush=True)


if __name__ == "__main__":
    serve()
