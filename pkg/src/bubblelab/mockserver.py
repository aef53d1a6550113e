"""Built-in mock chat-completions endpoint for hermetic tests and dry runs.

A real localhost HTTP server that speaks the same wire format as the client:
request {model, temperature, seed?, messages[]}, response with
choices[0].message.content. Replies are driven by a JSON script:

    {
      "default": {"value": 60.0, "reasoning": "hold at fair value"},
      "models": {
        "capster": {"values": [1200, 980], "repeat_last": true},
        "chaos":   {"raw": ["not json at all", "{\\"reasoning\\": \\"r\\", \\"predictedValue\\": 61}"]},
        "pairy":   {"value": 55.0, "pair": [50.0, 52.0]}
      }
    }

Per-model entries are consumed in request order ("values"/"raw" sequences
advance one per request; "repeat_last" keeps serving the final entry). A
request whose last user message is the first-step prompt gets the
predictedValue1/predictedValue2 shape automatically.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional


class _ModelScript:
    def __init__(self, entry: dict):
        self.entry = entry
        self.index = 0

    def next_content(self, first_step: bool) -> str:
        entry = self.entry
        if "raw" in entry:
            seq = entry["raw"]
            item = seq[min(self.index, len(seq) - 1)] if entry.get("repeat_last", True) \
                else seq[self.index]
            self.index += 1
            return item
        if "values" in entry:
            seq = entry["values"]
            pos = min(self.index, len(seq) - 1) if entry.get("repeat_last", True) else self.index
            value = seq[pos]
            self.index += 1
        else:
            value = entry.get("value", 60.0)
        reasoning = entry.get("reasoning", "scripted response")
        if first_step:
            pair = entry.get("pair")
            v1, v2 = pair if pair is not None else (value, value)
            return json.dumps({"reasoning": reasoning, "predictedValue1": v1, "predictedValue2": v2})
        return json.dumps({"reasoning": reasoning, "predictedValue": value})


class MockChatServer:
    """Scripted chat endpoint bound to 127.0.0.1 on an ephemeral port."""

    def __init__(self, script: dict, port: int = 0):
        self.script = script
        self._model_state: dict[str, _ModelScript] = {}
        self._lock = threading.Lock()
        self.requests: list[dict] = []
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length))
                except (ValueError, UnicodeDecodeError):
                    self.send_error(400, "request body is not JSON")
                    return
                if "model" not in body or "messages" not in body:
                    self.send_error(400, "request needs model and messages")
                    return
                content = server._respond(body)
                payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]})
                data = payload.encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args) -> None:  # silence per-request noise
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def _respond(self, body: dict) -> str:
        model = body["model"]
        messages = body["messages"]
        # the current prompt is the last user message that is not a cap
        # rejection notice (cap re-queries append the notice after the prompt)
        first_step = False
        for message in reversed(messages):
            if message.get("role") != "user":
                continue
            content = message.get("content", "")
            if "not accepted" in content and "Predictions above" in content:
                continue
            first_step = "This is the first time step" in content
            break
        with self._lock:
            self.requests.append(body)
            if model not in self._model_state:
                entry = self.script.get("models", {}).get(model)
                if entry is None:
                    entry = self.script.get("default", {"value": 60.0})
                self._model_state[model] = _ModelScript(dict(entry))
            return self._model_state[model].next_content(first_step)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def start(self) -> "MockChatServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "MockChatServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def load_script(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
