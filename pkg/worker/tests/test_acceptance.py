"""Worker conformance acceptance: the full criterion driven end to end,
partly over the raw protocol and partly through the orchestrator's pool
(which supplies the replacement-worker semantics)."""

import sys
import time
from contextlib import contextmanager
from time import perf_counter

from chartcf.sandbox import STATUS_OK, STATUS_PARSE_ERROR, STATUS_TIMEOUT, WorkerPool

from test_worker import GOOD_SCRIPT, WorkerProc, render_req

REAL_WORKER_CMD = [sys.executable, "-m", "chartcf_worker"]

ALARM_PROOF_SCRIPT = """\
import signal
import time

signal.signal(signal.SIGALRM, signal.SIG_IGN)
time.sleep(600)
"""


@contextmanager
def criterion(name: str, budget_s: float):
    start = perf_counter()
    yield
    elapsed = perf_counter() - start
    assert elapsed < budget_s, f"{name} overran its {budget_s}s budget ({elapsed:.2f}s)"
    print(f"\nACCEPTANCE {name}: PASS ({elapsed:.2f}s < {budget_s:g}s)")


def test_worker_conformance(tmp_path):
    with criterion("worker-conformance", 120.0):
        # handshake + syntax fixtures over the raw protocol
        worker = WorkerProc()
        try:
            assert worker.handshake == {"hello": "chartcf-worker", "version": 1}
            accept = worker.request({"id": "p1", "mode": "parse_only", "code": "x = 1",
                                     "out_dir": str(tmp_path), "timeout_s": 5})
            reject = worker.request({"id": "p2", "mode": "parse_only", "code": "x = (",
                                     "out_dir": str(tmp_path), "timeout_s": 5})
            assert accept["status"] == "ok" and reject["status"] == "parse_error"

            # known-good fixture renders a non-empty PNG at the declared path
            started = time.monotonic()
            rendered = worker.request(render_req("r1", GOOD_SCRIPT, tmp_path / "raw"))
            assert time.monotonic() - started < 60
            assert rendered["status"] == "ok"
            assert rendered["image_path"].endswith("rendered_images/000002.png")
            png = tmp_path / "raw" / "rendered_images" / "000002.png"
            assert png.stat().st_size > 0 and png.read_bytes().startswith(b"\x89PNG")

            # socket probe fails under the default network denial
            probe = worker.request(render_req(
                "r2", "import socket\nsocket.create_connection(('127.0.0.1', 9))",
                tmp_path / "raw"))
            assert probe["status"] == "runtime_error"
            assert "network access denied" in probe["stderr"]
        finally:
            worker.close()

        # forced timeout through the pool: timeout status plus a replacement
        pool = WorkerPool(REAL_WORKER_CMD, size=1, scratch_root=tmp_path / "scratch",
                          render_timeout_s=3.0, reply_grace_s=2.0)
        try:
            first_pid = pool._free.queue[0].proc.pid

            sleepy = pool.render("import time\ntime.sleep(600)\n", "never.png")
            assert sleepy.status == STATUS_TIMEOUT
            second_pid = pool._free.queue[0].proc.pid
            assert second_pid != first_pid  # replaced after worker-side timeout

            stuck = pool.render(ALARM_PROOF_SCRIPT, "never.png")
            assert stuck.status == STATUS_TIMEOUT
            third_pid = pool._free.queue[0].proc.pid
            assert third_pid != second_pid  # replaced after orchestrator kill

            assert pool.parse_only("x = 1\n").status == STATUS_OK
            assert pool.parse_only("x = (\n").status == STATUS_PARSE_ERROR
            revived = pool.render(GOOD_SCRIPT, "rendered_images/000002.png")
            assert revived.status == STATUS_OK
            pool.cleanup_render(revived)
        finally:
            pool.shutdown()
