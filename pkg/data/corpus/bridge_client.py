import json
import socket


class BridgeClient:
    """Tiny blocking client for a line-based JSON bridge."""

    def __init__(self, host="127.0.0.1", port=54321, timeout=3.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock = None
        self._next_id = 1

    def connect(self):
        self._sock = socket.create_connection((self.host, self.port), self.timeout)
        return self

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def request(self, method, payload=None):
        if self._sock is None:
            raise RuntimeError("not connected")
        message = {"id": self._next_id, "method": method, "payload": payload or {}}
        self._next_id += 1
        self._sock.sendall((json.dumps(message) + "\n").encode("utf-8"))
        reply = self._read_line()
        data = json.loads(reply)
        if data.get("id") != message["id"]:
            raise RuntimeError(f"id mismatch: {data.get('id')} != {message['id']}")
        if "error" in data:
            raise RuntimeError(data["error"])
        return data["result"]

    def _read_line(self):
        chunks = []
        while True:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("bridge closed")
            chunks.append(chunk)
            if chunk.endswith(b"\n"):
                return b"".join(chunks).decode("utf-8")
