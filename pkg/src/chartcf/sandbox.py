"""Worker-pool driver for parse-checking and rendering plotting code.

All script execution happens in worker subprocesses reached over a
one-JSON-object-per-line protocol on stdin/stdout; this module never
interprets plotting code in-process.  Each worker serves one in-flight
request; parallelism comes from pool size.

Wire format (also implemented by the standalone worker package and the
fixture worker):

  handshake  {"hello": "chartcf-worker", "version": 1}
  request    {"id", "mode": "parse_only"|"render", "code", "out_dir", "timeout_s"}
  reply      {"id", "status", "image_path", "stderr", "wall_time_s"}
"""

from __future__ import annotations

import json
import os
import queue
import shutil
import subprocess
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import PathMismatchError, WorkerDeadError

HANDSHAKE = {"hello": "chartcf-worker", "version": 1}

MODE_PARSE_ONLY = "parse_only"
MODE_RENDER = "render"

STATUS_OK = "ok"
STATUS_PARSE_ERROR = "parse_error"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_TIMEOUT = "timeout"
STATUS_NO_OUTPUT = "no_output"
STATUS_PROTOCOL_ERROR = "protocol_error"

STDERR_EXCERPT_LIMIT = 4096

DEFAULT_PARSE_TIMEOUT_S = 10.0
DEFAULT_RENDER_TIMEOUT_S = 60.0


@dataclass(frozen=True)
class RenderRequest:
    request_id: str
    mode: str
    code: str
    output_dir: str
    timeout_s: float


@dataclass(frozen=True)
class RenderResult:
    request_id: str
    status: str
    image_path: str | None
    stderr_excerpt: str
    wall_time_s: float


class _EndOfStream:
    pass


_EOF = _EndOfStream()


class _WorkerHandle:
    """One subprocess plus a reader thread feeding its stdout lines to a queue."""

    def __init__(self, cmd: Sequence[str], handshake_timeout_s: float = 30.0):
        self.cmd = list(cmd)
        self.proc = subprocess.Popen(
            self.cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self.lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        hello = self._next_line(handshake_timeout_s)
        if hello != HANDSHAKE:
            self.kill()
            raise WorkerDeadError(f"bad worker handshake: {hello!r}")

    def _read_loop(self) -> None:
        assert self.proc.stdout is not None
        for raw in self.proc.stdout:
            try:
                self.lines.put(json.loads(raw))
            except ValueError:
                self.lines.put({"_garbled": raw.decode("utf-8", "replace")})
        self.lines.put(_EOF)

    def _next_line(self, timeout_s: float):
        try:
            item = self.lines.get(timeout=timeout_s)
        except queue.Empty:
            raise TimeoutError from None
        if item is _EOF:
            raise WorkerDeadError(f"worker exited (cmd={self.cmd})")
        return item

    def send(self, request: dict) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write((json.dumps(request) + "\n").encode())
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise WorkerDeadError(f"worker pipe closed: {exc}") from exc

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        try:
            self.proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            pass
        if self.proc.stdin is not None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass


class WorkerPool:
    """Hands out exclusive worker leases; respawns workers that die or stall."""

    def __init__(
        self,
        worker_cmd: Sequence[str],
        size: int | None = None,
        scratch_root: str | Path | None = None,
        parse_timeout_s: float = DEFAULT_PARSE_TIMEOUT_S,
        render_timeout_s: float = DEFAULT_RENDER_TIMEOUT_S,
        reply_grace_s: float = 5.0,
    ):
        self.worker_cmd = list(worker_cmd)
        self.size = size or os.cpu_count() or 1
        self._own_scratch = scratch_root is None
        self.scratch_root = Path(scratch_root or tempfile.mkdtemp(prefix="chartcf-scratch-"))
        self.scratch_root.mkdir(parents=True, exist_ok=True)
        self.parse_timeout_s = parse_timeout_s
        self.render_timeout_s = render_timeout_s
        self.reply_grace_s = reply_grace_s
        self._free: queue.Queue = queue.Queue()
        self._closed = False
        for _ in range(self.size):
            self._free.put(_WorkerHandle(self.worker_cmd))

    # -- lifecycle ---------------------------------------------------------

    def shutdown(self) -> None:
        self._closed = True
        while True:
            try:
                handle = self._free.get_nowait()
            except queue.Empty:
                break
            handle.kill()
        if self._own_scratch:
            shutil.rmtree(self.scratch_root, ignore_errors=True)

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def _respawn(self) -> "_WorkerHandle":
        return _WorkerHandle(self.worker_cmd)

    # -- request plumbing ----------------------------------------------------

    def _roundtrip(self, req: RenderRequest) -> dict:
        """Send one request on a leased worker and wait for its reply.

        Raises WorkerDeadError on crash and TimeoutError when no reply
        lands within timeout_s + grace; either way the worker is replaced
        before the error propagates.
        """
        handle = self._free.get()
        replace = False
        try:
            try:
                handle.send(
                    {
                        "id": req.request_id,
                        "mode": req.mode,
                        "code": req.code,
                        "out_dir": req.output_dir,
                        "timeout_s": req.timeout_s,
                    }
                )
                reply = handle._next_line(req.timeout_s + self.reply_grace_s)
            except TimeoutError:
                replace = True
                raise
            except WorkerDeadError:
                replace = True
                raise
            if reply.get("id") != req.request_id:
                replace = True
                raise WorkerDeadError(
                    f"reply id {reply.get('id')!r} does not match request {req.request_id!r}"
                )
            # A timeout status means the script overran; the worker state is
            # suspect, so it is force-replaced like an unresponsive one.
            if reply.get("status") == STATUS_TIMEOUT:
                replace = True
            return reply
        finally:
            if replace:
                handle.kill()
                handle = self._respawn()
            self._free.put(handle)

    def _result_from_reply(self, req: RenderRequest, reply: dict) -> RenderResult:
        return RenderResult(
            request_id=req.request_id,
            status=str(reply.get("status", STATUS_PROTOCOL_ERROR)),
            image_path=reply.get("image_path"),
            stderr_excerpt=str(reply.get("stderr", ""))[-STDERR_EXCERPT_LIMIT:],
            wall_time_s=float(reply.get("wall_time_s", 0.0)),
        )

    # -- operations ----------------------------------------------------------

    def parse_only(self, code: str) -> RenderResult:
        """Compile-without-execute check; never writes files."""
        req = RenderRequest(
            request_id=uuid.uuid4().hex,
            mode=MODE_PARSE_ONLY,
            code=code,
            output_dir=str(self.scratch_root),
            timeout_s=self.parse_timeout_s,
        )
        started = time.monotonic()
        try:
            reply = self._roundtrip(req)
        except TimeoutError:
            return RenderResult(req.request_id, STATUS_TIMEOUT, None, "", time.monotonic() - started)
        return self._result_from_reply(req, reply)

    def render(self, code: str, expected_path_suffix: str) -> RenderResult:
        """Execute code in a fresh per-request scratch dir and verify output.

        On any non-ok status the scratch directory is removed before the
        result is returned; on ok the image stays in the scratch dir until
        the caller copies it out and calls cleanup_render().
        """
        scratch = Path(tempfile.mkdtemp(prefix="req-", dir=self.scratch_root))
        req = RenderRequest(
            request_id=uuid.uuid4().hex,
            mode=MODE_RENDER,
            code=code,
            output_dir=str(scratch),
            timeout_s=self.render_timeout_s,
        )
        started = time.monotonic()
        try:
            reply = self._roundtrip(req)
        except TimeoutError:
            shutil.rmtree(scratch, ignore_errors=True)
            return RenderResult(req.request_id, STATUS_TIMEOUT, None, "", time.monotonic() - started)
        except WorkerDeadError:
            shutil.rmtree(scratch, ignore_errors=True)
            raise
        result = self._result_from_reply(req, reply)
        if result.status != STATUS_OK:
            shutil.rmtree(scratch, ignore_errors=True)
            return result
        image = Path(result.image_path) if result.image_path else None
        if image is None or not image.is_file() or image.stat().st_size == 0:
            shutil.rmtree(scratch, ignore_errors=True)
            return RenderResult(req.request_id, STATUS_NO_OUTPUT, None, result.stderr_excerpt, result.wall_time_s)
        if not str(image).endswith(expected_path_suffix):
            shutil.rmtree(scratch, ignore_errors=True)
            raise PathMismatchError(
                f"rendered {image} but the declared save path is {expected_path_suffix}"
            )
        return result

    def cleanup_render(self, result: RenderResult) -> None:
        """Remove the scratch directory of a successful render result."""
        if not result.image_path:
            return
        scratch = Path(result.image_path).parent.parent
        if scratch != self.scratch_root and scratch.parent == self.scratch_root:
            shutil.rmtree(scratch, ignore_errors=True)
