"""HTTP inference service backing the preference explorer.

Solve requests read an immutable parameter snapshot; adaptation runs on a
copy under a lock and swaps the snapshot atomically on completion, so solves
are never blocked by a running adaptation.  Instance embeddings are cached
after the first encode and invalidated when the snapshot version changes.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .adapt import AdaptConfig, adapt
from .errors import ConfigurationError, DomainError
from .model import ModelConfig, decoder_params, encode, load_checkpoint, rollout_batch
from .problems import instance_from_dict
from .scalarize import ScalarizationSpec, as_preference, training_spec
from .solve import front_metrics, scalarized_cost_of, solve_instance


@dataclass
class Snapshot:
    params: dict
    version: int


@dataclass
class InstanceSlot:
    instance: object
    encodings: dict[int, object] = field(default_factory=dict)  # version -> encoding
    adapting: bool = False


class ModelService:
    def __init__(self, ckpt_path: str):
        params, meta = load_checkpoint(ckpt_path)
        params = {k: v for k, v in params.items() if not k.startswith("adam.")}
        self.meta = meta
        self.cfg = ModelConfig.from_dict(meta["model_config"])
        self.spec = (ScalarizationSpec.from_dict(meta["scalarization"])
                     if meta.get("scalarization")
                     else training_spec(meta["kind"], int(meta["m"])))
        self.snapshot = Snapshot(params=params, version=0)
        self.instances: dict[int, InstanceSlot] = {}
        self._next_id = 0
        self._adapt_lock = threading.Lock()
        self._reg_lock = threading.Lock()

    # -- instance registry ---------------------------------------------------

    def add_instance(self, record: dict) -> int:
        inst = instance_from_dict(record)
        if inst.kind != self.meta["kind"] or inst.m != int(self.meta["m"]):
            raise ConfigurationError(
                f"checkpoint serves {self.meta['kind']}/m={self.meta['m']}, "
                f"got {inst.kind}/m={inst.m}")
        with self._reg_lock:
            iid = self._next_id
            self._next_id += 1
            self.instances[iid] = InstanceSlot(instance=inst)
        return iid

    def _slot(self, iid: int) -> InstanceSlot:
        try:
            return self.instances[iid]
        except KeyError:
            raise KeyError(f"unknown instance id {iid}")

    def _encoding(self, slot: InstanceSlot, snap: Snapshot):
        enc = slot.encodings.get(snap.version)
        if enc is None:
            enc = encode(slot.instance, snap.params, self.cfg)
            slot.encodings = {snap.version: enc}  # drop stale versions
        return enc

    # -- operations ------------------------------------------------------------

    def solve(self, iid: int, lam, mode: str = "greedy", use_aug: bool = False) -> dict:
        t0 = time.perf_counter()
        slot = self._slot(iid)
        snap = self.snapshot
        inst = slot.instance
        lam = as_preference(lam, m=inst.m)
        if use_aug:
            res = solve_instance(inst, snap.params, self.cfg, lam[None, :], self.spec,
                                 use_aug=True, mode="greedy")
            best = res.per_preference[0]
            sol, cost = best.solution, best.scalarized_cost
        else:
            enc = self._encoding(slot, snap)
            bundle = decoder_params(lam, snap.params, self.cfg)
            rng = np.random.default_rng(0) if mode == "sample" else None
            routs, _ = rollout_batch([inst], enc, bundle, snap.params, self.cfg,
                                     mode=mode, starts=inst.n, rng=rng)
            objs = np.stack([r.solution.objectives for r in routs])
            costs = [scalarized_cost_of(inst, self.spec, lam, o) for o in objs]
            best_i = int(np.argmin(costs))
            sol, cost = routs[best_i].solution, float(costs[best_i])
        return {
            "solution": sol.flat(),
            "objectives": sol.objectives.tolist(),
            "scalarized_cost": cost,
            "latency_ms": (time.perf_counter() - t0) * 1e3,
            "snapshot_version": snap.version,
        }

    def front(self, iid: int, weights_spec: dict) -> dict:
        slot = self._slot(iid)
        snap = self.snapshot
        inst = slot.instance
        if "grid" in weights_spec:
            if inst.m != 2:
                raise DomainError("grid weights apply to two objectives; use dasdennis")
            from .scalarize import preference_grid
            prefs = preference_grid(int(weights_spec["grid"]))
        elif "dasdennis" in weights_spec:
            from .scalarize import das_dennis_weights
            prefs = das_dennis_weights(inst.m, int(weights_spec["dasdennis"]))
        else:
            raise DomainError('weights must be {"grid": K} or {"dasdennis": P}')
        res = solve_instance(inst, snap.params, self.cfg, prefs, self.spec, mode="greedy")
        entries = [{"lambda": pr.lam.tolist(), "objectives": pr.solution.objectives.tolist()}
                   for pr in res.per_preference]
        summary = front_metrics(inst, res.archive)
        return {
            "entries": entries,
            "normalized_hv": summary["normalized_hv"],
            "reference_point": summary["reference_point"],
            "snapshot_version": snap.version,
        }

    def adapt_instance(self, iid: int, steps: int, lr: float) -> dict:
        slot = self._slot(iid)
        if not self._adapt_lock.acquire(blocking=False):
            raise RuntimeError("another adaptation is already running")
        try:
            slot.adapting = True
            snap = self.snapshot
            config = AdaptConfig(steps=int(steps), lr=float(lr), seed=0,
                                 front_prefs=33 if slot.instance.m == 2 else 15)
            result = adapt(snap.params, slot.instance, config, self.cfg)
            self.snapshot = Snapshot(params=result.params, version=snap.version + 1)
            return {"hv_curve": [p.hypervolume for p in result.curve],
                    "snapshot_version": self.snapshot.version}
        finally:
            slot.adapting = False
            self._adapt_lock.release()

    def health(self) -> dict:
        return {"checkpoint_meta": {k: v for k, v in self.meta.items()},
                "snapshot_version": self.snapshot.version,
                "instances": len(self.instances)}


# ---------------------------------------------------------------------------
# HTTP plumbing


def make_handler(service: ModelService, static_dir: str | None):
    static_root = Path(static_dir).resolve() if static_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, code: int, payload: dict | bytes, ctype="application/json"):
            body = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _error(self, code: int, message: str):
            self._send(code, {"error": message})

        def _json_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if not length:
                return {}
            return json.loads(self.rfile.read(length).decode())

        def do_GET(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            try:
                if url.path == "/health":
                    return self._send(200, service.health())
                if len(parts) == 3 and parts[0] == "instances" and parts[2] == "solve":
                    qs = parse_qs(url.query)
                    if "lambda" not in qs:
                        return self._error(400, "missing lambda query parameter")
                    lam = [float(v) for v in qs["lambda"][0].split(",")]
                    mode = qs.get("mode", ["greedy"])[0]
                    if mode not in ("greedy", "sample"):
                        return self._error(400, f"mode must be greedy|sample, got {mode!r}")
                    use_aug = qs.get("aug", ["0"])[0] in ("1", "true")
                    out = service.solve(int(parts[1]), lam, mode=mode, use_aug=use_aug)
                    return self._send(200, out)
                if static_root is not None:
                    return self._static(url.path)
                return self._error(404, f"no route for GET {url.path}")
            except (DomainError, ConfigurationError, ValueError) as exc:
                return self._error(400, str(exc))
            except KeyError as exc:
                return self._error(404, str(exc))

        def do_POST(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            try:
                body = self._json_body()
                if url.path == "/instances":
                    iid = service.add_instance(body)
                    return self._send(200, {"id": iid})
                if len(parts) == 3 and parts[0] == "instances":
                    iid = int(parts[1])
                    if parts[2] == "front":
                        return self._send(200, service.front(iid, body.get("weights", {})))
                    if parts[2] == "adapt":
                        out = service.adapt_instance(iid, body.get("steps", 50),
                                                     body.get("lr", 1e-4))
                        return self._send(200, out)
                return self._error(404, f"no route for POST {url.path}")
            except (DomainError, ConfigurationError, ValueError) as exc:
                return self._error(400, str(exc))
            except KeyError as exc:
                return self._error(404, str(exc))
            except RuntimeError as exc:
                return self._error(409, str(exc))

        def _static(self, path: str):
            target = (static_root / path.lstrip("/")).resolve()
            if path in ("", "/"):
                target = static_root / "index.html"
            if not str(target).startswith(str(static_root)) or not target.is_file():
                return self._error(404, f"no such asset {path}")
            ctype = {"html": "text/html", "js": "text/javascript", "css": "text/css",
                     "svg": "image/svg+xml", "json": "application/json"}.get(
                         target.suffix.lstrip("."), "application/octet-stream")
            self._send(200, target.read_bytes(), ctype=ctype)

    return Handler


def run_server(ckpt_path: str, port: int, static_dir: str | None = None,
               ready_event: threading.Event | None = None):
    service = ModelService(ckpt_path)
    httpd = ThreadingHTTPServer(("0.0.0.0", port), make_handler(service, static_dir))
    if ready_event is not None:
        ready_event.set()
    print(f"serving {service.meta.get('kind')} checkpoint on port {httpd.server_address[1]}",
          flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()


def start_background(ckpt_path: str, port: int, static_dir: str | None = None) -> ThreadingHTTPServer:
    """Start the service on a daemon thread (used by tests and the explorer)."""
    service = ModelService(ckpt_path)
    httpd = ThreadingHTTPServer(("127.0.0.1", port), make_handler(service, static_dir))
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    httpd.service = service  # type: ignore[attr-defined]
    return httpd
