"""Render worker: executes plotting scripts behind the line protocol.

Reads one JSON request per stdin line and writes exactly one JSON reply per
request, in order, after an initial handshake line.  parse_only compiles
without executing; render executes the script in a fresh namespace with the
working directory moved into the request's scratch dir, so relative save
paths land there.  Rendering is always headless and, by default, sockets
are disabled before any script runs (set CHARTCF_WORKER_ALLOW_NETWORK=1 to
opt out).  stdout is the protocol channel; scripts' prints and our logs go
to stderr.
"""

from __future__ import annotations

import contextlib
import glob
import json
import os
import signal
import socket
import sys
import time
import traceback

# Must win over any backend a script might otherwise pick up.
os.environ["MPLBACKEND"] = "Agg"

HANDSHAKE = {"hello": "chartcf-worker", "version": 1}

STDERR_EXCERPT_LIMIT = 4096
ALLOW_NETWORK_ENV = "CHARTCF_WORKER_ALLOW_NETWORK"


class _ScriptTimeout(BaseException):
    """Raised by SIGALRM; BaseException so bare `except Exception` in a
    script cannot swallow it."""


def _alarm(signum, frame):
    raise _ScriptTimeout()


def deny_network() -> None:
    """Best-effort socket lockdown for everything exec'd afterwards."""

    def _denied(*args, **kwargs):
        raise OSError("network access denied by render worker")

    socket.socket = _denied  # type: ignore[misc]
    socket.create_connection = _denied  # type: ignore[assignment]
    socket.getaddrinfo = _denied  # type: ignore[assignment]
    socket.gethostbyname = _denied  # type: ignore[assignment]


def _reply(req_id, status, image_path=None, stderr="", wall=0.0) -> dict:
    return {
        "id": req_id,
        "status": status,
        "image_path": image_path,
        "stderr": stderr[-STDERR_EXCERPT_LIMIT:],
        "wall_time_s": round(wall, 6),
    }


def _close_figures() -> None:
    plt = sys.modules.get("matplotlib.pyplot")
    if plt is not None:
        plt.close("all")


def _find_output(out_dir: str) -> str | None:
    produced = sorted(glob.glob(os.path.join(out_dir, "rendered_images", "*.png")))
    for path in produced:
        if os.path.getsize(path) > 0:
            return os.path.abspath(path)
    return None


def handle_parse_only(req_id, code: str, started: float) -> dict:
    try:
        compile(code, "<script>", "exec")
    except SyntaxError:
        return _reply(req_id, "parse_error",
                      stderr=traceback.format_exc(limit=0), wall=time.monotonic() - started)
    return _reply(req_id, "ok", wall=time.monotonic() - started)


def handle_render(req_id, code: str, out_dir: str, timeout_s: float, started: float) -> dict:
    try:
        compiled = compile(code, "<script>", "exec")
    except SyntaxError:
        return _reply(req_id, "parse_error",
                      stderr=traceback.format_exc(limit=0), wall=time.monotonic() - started)

    os.makedirs(os.path.join(out_dir, "rendered_images"), exist_ok=True)
    previous_dir = os.getcwd()
    previous_handler = signal.signal(signal.SIGALRM, _alarm)
    # Fresh namespace per script; interpreter-level state is reset where it
    # bites in practice (matplotlib rc, open figures).
    namespace: dict = {"__name__": "__main__", "__builtins__": __builtins__}
    status, stderr = "ok", ""
    try:
        import matplotlib

        os.chdir(out_dir)
        signal.setitimer(signal.ITIMER_REAL, max(timeout_s, 0.001))
        with matplotlib.rc_context(), contextlib.redirect_stdout(sys.stderr):
            exec(compiled, namespace)
    except _ScriptTimeout:
        status, stderr = "timeout", f"script exceeded {timeout_s}s"
    except SystemExit as exc:
        if exc.code not in (None, 0):
            status, stderr = "runtime_error", f"script exited with code {exc.code}"
    except BaseException:
        status, stderr = "runtime_error", traceback.format_exc()
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous_handler)
        os.chdir(previous_dir)
        _close_figures()

    wall = time.monotonic() - started
    if status != "ok":
        return _reply(req_id, status, stderr=stderr, wall=wall)
    image_path = _find_output(out_dir)
    if image_path is None:
        return _reply(req_id, "no_output", stderr="script wrote no PNG under rendered_images/",
                      wall=wall)
    return _reply(req_id, "ok", image_path=image_path, wall=wall)


def handle_request(req: dict) -> dict:
    started = time.monotonic()
    req_id = req.get("id")
    mode = req.get("mode")
    code = req.get("code")
    if not isinstance(code, str):
        return _reply(req_id, "protocol_error", stderr="request has no code string")
    if mode == "parse_only":
        return handle_parse_only(req_id, code, started)
    if mode == "render":
        out_dir = req.get("out_dir")
        if not out_dir:
            return _reply(req_id, "protocol_error", stderr="render request has no out_dir")
        return handle_render(req_id, code, out_dir, float(req.get("timeout_s", 60.0)), started)
    return _reply(req_id, "protocol_error", stderr=f"unknown mode {mode!r}")


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    if os.environ.get(ALLOW_NETWORK_ENV, "") != "1":
        deny_network()
    print(json.dumps(HANDSHAKE), file=stdout, flush=True)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except ValueError:
            print(json.dumps(_reply(None, "protocol_error", stderr="unparseable request line")),
                  file=stdout, flush=True)
            continue
        try:
            out = handle_request(req)
        except Exception:  # never crash the loop; report and keep serving
            out = _reply(req.get("id"), "protocol_error", stderr=traceback.format_exc())
        print(json.dumps(out), file=stdout, flush=True)
