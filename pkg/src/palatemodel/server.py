"""HTTP endpoints backing the landmark annotation UI.

One volume per server instance. Endpoints:

    GET /meta                    volume dims/spacing/origin as JSON
    GET /slice/{axis}/{index}    lossless grayscale PNG of one plane
    GET /landmarks               current world-coordinate .lmk text
    PUT /landmarks               replace the .lmk file (validated first)

GETs are served concurrently; PUTs are serialized and written atomically
(temp file + rename), last writer wins.
"""

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from PIL import Image

from .mesh import LandmarkSet, save_landmark_set
from .volume import slice_image


def _parse_landmark_text(text):
    """Validate PUT bodies: exactly the 7 canonical names, finite coordinates."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 'name x y z'")
        pairs.append((parts[0], [float(parts[1]), float(parts[2]), float(parts[3])]))
    return LandmarkSet.from_pairs(pairs)


def make_handler(vol, lmk_path):
    lock = threading.Lock()
    lmk_path = Path(lmk_path)

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status, body, content_type="text/plain; charset=utf-8"):
            if isinstance(body, str):
                body = body.encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            if parts == ["meta"]:
                meta = {
                    "dims": list(vol.dims),
                    "spacing": [float(s) for s in vol.spacing],
                    "origin": [float(o) for o in vol.origin],
                }
                self._send(200, json.dumps(meta), "application/json")
            elif len(parts) == 3 and parts[0] == "slice":
                try:
                    sl = slice_image(vol, parts[1], int(parts[2]))
                except (ValueError, IndexError):
                    self._send(404, "unknown slice")
                    return
                buf = io.BytesIO()
                Image.fromarray(sl.pixels, mode="L").save(buf, format="PNG")
                self._send(200, buf.getvalue(), "image/png")
            elif parts == ["landmarks"]:
                with lock:
                    if not lmk_path.exists():
                        self._send(404, "no landmarks saved")
                        return
                    self._send(200, lmk_path.read_text(encoding="utf-8"))
            else:
                self._send(404, "not found")

        def do_PUT(self):
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            if parts != ["landmarks"]:
                self._send(404, "not found")
                return
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length).decode("utf-8")
            try:
                landmarks = _parse_landmark_text(body)
            except ValueError as e:
                self._send(422, f"invalid landmark set: {e}")
                return
            with lock:
                tmp = lmk_path.with_suffix(".lmk.tmp")
                save_landmark_set(landmarks, tmp)
                tmp.replace(lmk_path)
            self._send(200, "saved")

    return Handler


def make_server(vol, lmk_path, port=0):
    """ThreadingHTTPServer bound to localhost; port 0 picks a free port."""
    return ThreadingHTTPServer(("127.0.0.1", port), make_handler(vol, lmk_path))


def serve(vol, lmk_path, port):
    server = make_server(vol, lmk_path, port=port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
