"""Persistent cell interpreter that runs inside the sandbox.

Standalone and stdlib-only so it can be copied into any Python container.
It speaks length-prefixed JSON frames over stdio: each frame is a 4-byte
big-endian length followed by that many bytes of UTF-8 JSON.  Requests are
``{"id": n, "source": "..."}``; replies are ``{"id": n, "status":
"success"|"error", "stdout": "...", "stderr": "..."}``.

All cells share one module scope, so variables and imports persist across
cells like in a notebook.  Real file descriptors 0/1/2 are reserved for the
frame protocol and detached from cell code: stdout/stderr of a cell
(including output of subprocesses it spawns) are captured per cell via
``dup2`` onto temp files, and stdin reads see EOF instead of protocol bytes.
"""

import io
import json
import os
import struct
import sys
import tempfile
import traceback

MAX_FRAME_BYTES = 256 * 1024 * 1024


def read_frame(stream):
    header = stream.read(4)
    if header is None or len(header) < 4:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise ValueError("frame too large")
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            return None
        body += chunk
    return json.loads(body.decode("utf-8"))


def write_frame(stream, obj):
    body = json.dumps(obj, ensure_ascii=False).encode("utf-8")
    stream.write(struct.pack(">I", len(body)))
    stream.write(body)
    stream.flush()


def main():
    proto_in = os.fdopen(os.dup(0), "rb")
    proto_out = os.fdopen(os.dup(1), "wb")
    devnull = os.open(os.devnull, os.O_RDWR)
    os.dup2(devnull, 0)
    os.dup2(devnull, 1)
    os.dup2(devnull, 2)
    os.close(devnull)
    scope = {"__name__": "__main__"}
    while True:
        try:
            frame = read_frame(proto_in)
        except Exception:
            break
        if frame is None:
            break
        out_file = tempfile.TemporaryFile()
        err_file = tempfile.TemporaryFile()
        os.dup2(out_file.fileno(), 1)
        os.dup2(err_file.fileno(), 2)
        sys.stdout = io.TextIOWrapper(
            io.FileIO(1, "w", closefd=False), encoding="utf-8", errors="replace", write_through=True
        )
        sys.stderr = io.TextIOWrapper(
            io.FileIO(2, "w", closefd=False), encoding="utf-8", errors="replace", write_through=True
        )
        status = "success"
        try:
            code = compile(frame.get("source", ""), "<cell>", "exec")
            exec(code, scope)
        # BaseException on purpose: sys.exit() in a cell must not kill the
        # interpreter, it is just a failed cell.
        except BaseException:
            status = "error"
            sys.stderr.write(traceback.format_exc())
        finally:
            try:
                sys.stdout.flush()
                sys.stderr.flush()
            except Exception:
                pass
        out_file.seek(0)
        err_file.seek(0)
        stdout = out_file.read().decode("utf-8", "replace")
        stderr = err_file.read().decode("utf-8", "replace")
        out_file.close()
        err_file.close()
        write_frame(
            proto_out,
            {"id": frame.get("id"), "status": status, "stdout": stdout, "stderr": stderr},
        )


if __name__ == "__main__":
    main()
