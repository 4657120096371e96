"""Minimal HTTP service answering 200 with a small JSON body on every path.

Listens on $PORT (default 8000).
"""

from __future__ import annotations

import json
import os
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class EchoHandler(BaseHTTPRequestHandler):
    def _respond(self) -> None:
        body = json.dumps(
            {
                "service": "echo",
                "path": self.path,
                "method": self.command,
            }
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    do_GET = do_POST = do_PUT = do_DELETE = do_HEAD = _respond

    def log_message(self, fmt, *args):  # keep stdout clean
        pass


def main() -> None:
    port = int(os.environ.get("PORT", "8000"))
    server = ThreadingHTTPServer(("127.0.0.1", port), EchoHandler)
    server.serve_forever()


if __name__ == "__main__":
    main()
