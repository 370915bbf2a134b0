"""Local HTTP service for interactive segmentation.

Sessions hold an uploaded mesh (or cloud), its sampled points, cached
features, and the latest annotation. All endpoints live under /v1 and speak
JSON; point masks travel run-length encoded. Feature extraction happens at
most once per (mesh, weights) session and never blocks other sessions.
"""

import io
import json
import re
import threading
import time
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import autoseg
from .errors import PartSegError, ParseError, EmptyMesh
from .geometry import SampledCloud, sample_surface
from .mesh_io import parse_mesh_bytes
from .network import extract_features, predict, prepare_cache

API_VERSION = "v1"


def rle_encode(mask):
    """Binary mask -> [[start, length], ...] over point indices."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    idx = np.flatnonzero(mask)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return [[int(s), int(e - s + 1)] for s, e in zip(starts, ends)]


def rle_decode(runs, n):
    mask = np.zeros(n, dtype=bool)
    for start, length in runs:
        mask[start:start + length] = True
    return mask


class Session:
    def __init__(self, sid, geometry, n_points, seed=0):
        self.sid = sid
        self.lock = threading.RLock()
        self.is_mesh = not isinstance(geometry, SampledCloud)
        self.mesh = geometry if self.is_mesh else None
        if self.is_mesh:
            self.cloud = sample_surface(geometry, n_points, seed=seed)
        else:
            self.cloud = geometry
        self.features = None
        self.cache = None
        self.feature_extractions = 0
        self.feature_ms = None
        self.annotation = None      # latest PartAnnotation (faces or points)
        self.working = np.zeros(self.cloud.n_points, dtype=np.int64)
        self.prompts = []           # history of (point, triple) for /select

    def info(self):
        return {
            "session_id": self.sid,
            "n_faces": int(self.mesh.n_faces) if self.is_mesh else 0,
            "n_points": int(self.cloud.n_points),
            "features_ready": self.features is not None,
            "feature_extractions": self.feature_extractions,
        }


class SegService:
    """State and handlers behind the HTTP routes; usable directly in tests."""

    def __init__(self, weights, n_points=16384, max_sessions=8, dtype="float32", seed=0):
        self.weights = weights
        self.n_points = n_points
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.max_sessions = max_sessions
        self.sessions = OrderedDict()
        self.sessions_lock = threading.Lock()
        self.counter = 0

    # -- session management -------------------------------------------------
    def create_session(self, body, content_type):
        geometry = parse_mesh_bytes(body, content_type)
        with self.sessions_lock:
            self.counter += 1
            sid = f"s{self.counter}"
            session = Session(sid, geometry, self.n_points, seed=self.seed)
            self.sessions[sid] = session
            while len(self.sessions) > self.max_sessions:
                self.sessions.popitem(last=False)
        return session.info()

    def _session(self, sid):
        with self.sessions_lock:
            session = self.sessions.get(sid)
            if session is not None:
                self.sessions.move_to_end(sid)
        if session is None:
            raise KeyError(sid)
        return session

    # -- handlers ------------------------------------------------------------
    def compute_features(self, sid):
        session = self._session(sid)
        with session.lock:
            if session.features is None:
                t0 = time.perf_counter()
                session.features = extract_features(session.cloud, self.weights,
                                                    dtype=self.dtype)
                session.cache = prepare_cache(session.features, session.cloud,
                                              self.weights, dtype=self.dtype)
                session.feature_extractions += 1
                session.feature_ms = (time.perf_counter() - t0) * 1000.0
                computed = True
            else:
                computed = False
        return {"computed": computed, "timing_ms": session.feature_ms,
                "feature_extractions": session.feature_extractions}

    def _require_features(self, session):
        if session.features is None:
            raise FeaturesPending(session.sid)

    def prompt(self, sid, payload):
        session = self._session(sid)
        self._require_features(session)
        point = np.array([payload["x"], payload["y"], payload["z"]], dtype=np.float64)
        # Clicks come from rendered geometry; snap to the nearest sampled point.
        snapped_idx = int(np.argmin(np.einsum(
            "ij,ij->i", session.cloud.points - point, session.cloud.points - point)))
        snapped = session.cloud.points[snapped_idx]
        t0 = time.perf_counter()
        triple = predict(session.features, session.cloud, snapped, self.weights,
                         cache=session.cache)
        ms = (time.perf_counter() - t0) * 1000.0
        with session.lock:
            session.prompts.append((snapped, triple))
            prompt_id = len(session.prompts) - 1
        masks = [rle_encode(m > 0.5) for m in triple.stage2]
        return {
            "prompt_id": prompt_id,
            "snapped_index": snapped_idx,
            "point": [float(c) for c in snapped],
            "masks": masks,
            "ious": [float(v) for v in triple.ious],
            "argmax": triple.best_head,
            "timing_ms": ms,
        }

    def select(self, sid, payload):
        session = self._session(sid)
        self._require_features(session)
        ref = int(payload["prompt_ref"])
        head = int(payload["head"])
        if not 0 <= head < 3:
            raise ValueError("head must be 0, 1, or 2")
        with session.lock:
            if not 0 <= ref < len(session.prompts):
                raise ValueError(f"unknown prompt_ref {ref}")
            _, triple = session.prompts[ref]
            mask = triple.stage2[head] > 0.5
            label = int(session.working.max()) + 1
            session.working[mask] = label
            session.annotation = None     # working overlay supersedes it
            n_parts = len(np.unique(session.working[session.working > 0]))
        return {"label": label, "n_parts": n_parts}

    def autoseg(self, sid, payload):
        session = self._session(sid)
        self._require_features(session)
        config = autoseg.AutoSegConfig(
            n_points=session.cloud.n_points,
            n_prompts=int(payload.get("n_prompts", 400)),
            t_nms=float(payload.get("t_nms", 0.9)),
            seed=int(payload.get("seed", self.seed)),
            dtype=str(self.dtype),
        )
        with session.lock:
            annotation = autoseg.auto_segment(
                session.mesh if session.is_mesh else session.cloud,
                self.weights, config,
                cloud=session.cloud, features=session.features, cache=session.cache)
            session.annotation = annotation
            session.working = self._annotation_point_labels(session, annotation)
        return {"n_parts": annotation.n_parts, "part_areas": annotation.part_areas.tolist()}

    def multiprompt(self, sid, payload):
        session = self._session(sid)
        self._require_features(session)
        points = np.array(payload["points"], dtype=np.float64).reshape(-1, 3)
        config = autoseg.AutoSegConfig(n_points=session.cloud.n_points,
                                       seed=self.seed, dtype=str(self.dtype))
        with session.lock:
            annotation = autoseg.multi_prompt_segment(
                session.mesh if session.is_mesh else session.cloud,
                self.weights, points, config,
                cloud=session.cloud, features=session.features, cache=session.cache)
            session.annotation = annotation
            session.working = self._annotation_point_labels(session, annotation)
        return {"n_parts": annotation.n_parts, "part_areas": annotation.part_areas.tolist()}

    def _annotation_point_labels(self, session, annotation):
        if session.is_mesh:
            return annotation.labels[session.cloud.source_face]
        return annotation.labels

    def hierarchy(self, sid, level):
        session = self._session(sid)
        self._require_features(session)
        if session.annotation is None:
            raise ValueError("no annotation yet; run autoseg or multiprompt first")
        if session.annotation.n_parts < 2:
            raise ValueError("hierarchy needs at least two parts")
        with session.lock:
            point_labels = self._annotation_point_labels(session, session.annotation)
            tree = autoseg.hierarchical_segment(session.cloud, session.features,
                                                point_labels)
            level = max(0, min(int(level), len(tree.merges)))
            labels = tree.cut(level, session.annotation.labels)
        return {"level": level, "max_level": len(tree.merges),
                "labels": [int(l) for l in labels]}

    def colors(self, sid):
        session = self._session(sid)
        self._require_features(session)
        rgb = autoseg.feature_colors(session.features)
        return {"colors": np.round(rgb, 4).tolist()}

    def points(self, sid):
        """Sampled cloud positions; the viewer renders mask overlays on these."""
        session = self._session(sid)
        return {"points": np.round(session.cloud.points, 5).tolist()}

    def labels(self, sid):
        session = self._session(sid)
        with session.lock:
            if session.annotation is not None:
                return {"n_parts": int(session.annotation.n_parts),
                        "labels": [int(l) for l in session.annotation.labels],
                        "per": "face" if session.is_mesh else "point"}
            if session.is_mesh:
                labels = autoseg.vote_faces(session.cloud, session.working,
                                            session.mesh.n_faces)
            else:
                labels = session.working
            n = len(np.unique(labels[labels > 0]))
            return {"n_parts": int(n), "labels": [int(l) for l in labels],
                    "per": "face" if session.is_mesh else "point"}

    def session_info(self, sid):
        return self._session(sid).info()


class FeaturesPending(Exception):
    """Prompt-family route called before features were computed (HTTP 409)."""


_ROUTES = [
    ("POST", re.compile(r"^/v1/meshes$"), "route_upload"),
    ("POST", re.compile(r"^/v1/sessions/([^/]+)/features$"), "compute_features"),
    ("POST", re.compile(r"^/v1/sessions/([^/]+)/prompt$"), "prompt"),
    ("POST", re.compile(r"^/v1/sessions/([^/]+)/select$"), "select"),
    ("POST", re.compile(r"^/v1/sessions/([^/]+)/autoseg$"), "autoseg"),
    ("POST", re.compile(r"^/v1/sessions/([^/]+)/multiprompt$"), "multiprompt"),
    ("GET", re.compile(r"^/v1/sessions/([^/]+)/hierarchy$"), "hierarchy"),
    ("GET", re.compile(r"^/v1/sessions/([^/]+)/colors$"), "colors"),
    ("GET", re.compile(r"^/v1/sessions/([^/]+)/points$"), "points"),
    ("GET", re.compile(r"^/v1/sessions/([^/]+)/labels$"), "labels"),
    ("GET", re.compile(r"^/v1/sessions/([^/]+)$"), "session_info"),
]


def make_handler(service, static_dir=None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _send(self, code, payload):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _body(self):
            length = int(self.headers.get("Content-Length") or 0)
            return self.rfile.read(length)

        def _dispatch(self, method):
            from urllib.parse import urlparse, parse_qs
            parsed = urlparse(self.path)
            for verb, pattern, name in _ROUTES:
                if verb != method:
                    continue
                match = pattern.match(parsed.path)
                if not match:
                    continue
                try:
                    if name == "route_upload":
                        out = service.create_session(self._body(),
                                                     self.headers.get("Content-Type"))
                    elif name == "compute_features":
                        out = service.compute_features(match.group(1))
                    elif name in ("prompt", "select", "autoseg", "multiprompt"):
                        try:
                            payload = json.loads(self._body() or b"{}")
                        except json.JSONDecodeError:
                            return self._send(400, {"error": "invalid JSON body"})
                        out = getattr(service, name)(match.group(1), payload)
                    elif name == "hierarchy":
                        level = parse_qs(parsed.query).get("level", ["0"])[0]
                        out = service.hierarchy(match.group(1), level)
                    else:
                        out = getattr(service, name)(match.group(1))
                    return self._send(200, out)
                except KeyError as exc:
                    return self._send(404, {"error": f"unknown session {exc}"})
                except FeaturesPending:
                    return self._send(409, {"error": "features not computed yet"})
                except (ParseError, EmptyMesh, ValueError) as exc:
                    return self._send(400, {"error": str(exc)})
                except PartSegError as exc:
                    return self._send(400, {"error": str(exc)})
            if method == "GET" and static_dir:
                return self._static(parsed.path)
            self._send(404, {"error": f"no route for {method} {parsed.path}"})

        def _static(self, path):
            import os
            rel = "index.html" if path in ("", "/") else path.lstrip("/")
            full = os.path.realpath(os.path.join(static_dir, rel))
            if not full.startswith(os.path.realpath(static_dir)) or not os.path.isfile(full):
                return self._send(404, {"error": "not found"})
            ctype = {"html": "text/html", "js": "text/javascript", "css": "text/css",
                     "map": "application/json"}.get(full.rsplit(".", 1)[-1],
                                                    "application/octet-stream")
            with open(full, "rb") as fh:
                data = fh.read()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

    return Handler


def make_server(weights, host="127.0.0.1", port=0, n_points=16384,
                dtype="float32", static_dir=None, max_sessions=8):
    """ThreadingHTTPServer wired to a SegService; port 0 binds an ephemeral port."""
    service = SegService(weights, n_points=n_points, dtype=dtype,
                         max_sessions=max_sessions)
    server = ThreadingHTTPServer((host, port), make_handler(service, static_dir))
    server.service = service
    return server
