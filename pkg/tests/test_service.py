import json
import threading
import urllib.request

import numpy as np
import pytest

from partseg.network import SegmentorWeights
from partseg.service import make_server, rle_decode, rle_encode

from conftest import make_box


@pytest.fixture(scope="module")
def server():
    weights = SegmentorWeights.create(d=8, seed=2, dtype=np.float32)
    srv = make_server(weights, port=0, n_points=400)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def call(srv, method, path, body=None, content_type="application/json"):
    host, port = srv.server_address[:2]
    data = body if isinstance(body, (bytes, type(None))) else json.dumps(body).encode()
    req = urllib.request.Request(f"http://{host}:{port}{path}", data=data, method=method)
    if data is not None:
        req.add_header("Content-Type", content_type)
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


def obj_bytes():
    v, f = make_box([0, 0, 0], 0.4)
    lines = [f"v {x} {y} {z}" for x, y, z in v]
    lines += [f"f {a+1} {b+1} {c+1}" for a, b, c in f]
    return ("\n".join(lines) + "\n").encode()


class TestRle:
    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mask = rng.random(200) > 0.7
            assert (rle_decode(rle_encode(mask), 200) == mask).all()

    def test_empty(self):
        assert rle_encode(np.zeros(5, bool)) == []
        assert not rle_decode([], 5).any()


class TestRoutes:
    def upload(self, server):
        status, out = call(server, "POST", "/v1/meshes", obj_bytes(), "model/obj")
        assert status == 200
        return out

    def test_upload_reports_sizes(self, server):
        out = self.upload(server)
        assert out["n_faces"] == 12 and out["n_points"] == 400
        assert out["session_id"].startswith("s")

    def test_prompt_before_features_409(self, server):
        sid = self.upload(server)["session_id"]
        status, out = call(server, "POST", f"/v1/sessions/{sid}/prompt",
                           {"x": 0, "y": 0, "z": 0.4})
        assert status == 409

    def test_features_idempotent_and_counted(self, server):
        sid = self.upload(server)["session_id"]
        s1, first = call(server, "POST", f"/v1/sessions/{sid}/features")
        s2, second = call(server, "POST", f"/v1/sessions/{sid}/features")
        assert s1 == s2 == 200
        assert first["computed"] and not second["computed"]
        assert second["feature_extractions"] == 1
        _, info = call(server, "GET", f"/v1/sessions/{sid}")
        assert info["feature_extractions"] == 1

    def test_prompt_deterministic_and_rle(self, server):
        sid = self.upload(server)["session_id"]
        call(server, "POST", f"/v1/sessions/{sid}/features")
        payload = {"x": 0.1, "y": 0.0, "z": 0.4}
        s1, a = call(server, "POST", f"/v1/sessions/{sid}/prompt", payload)
        s2, b = call(server, "POST", f"/v1/sessions/{sid}/prompt", payload)
        assert s1 == s2 == 200
        assert a["ious"] == b["ious"] and a["masks"] == b["masks"]
        assert a["argmax"] == int(np.argmax(a["ious"]))
        assert len(a["masks"]) == 3
        mask = rle_decode(a["masks"][a["argmax"]], 400)
        assert mask.shape == (400,)

    def test_select_merges_mask(self, server):
        sid = self.upload(server)["session_id"]
        call(server, "POST", f"/v1/sessions/{sid}/features")
        _, pr = call(server, "POST", f"/v1/sessions/{sid}/prompt",
                     {"x": 0, "y": 0, "z": 0.4})
        status, out = call(server, "POST", f"/v1/sessions/{sid}/select",
                           {"prompt_ref": pr["prompt_id"], "head": 2})
        assert status == 200 and out["n_parts"] >= 1
        _, labels = call(server, "GET", f"/v1/sessions/{sid}/labels")
        assert labels["per"] == "face" and len(labels["labels"]) == 12

    def test_autoseg_then_labels_hierarchy_colors(self, server):
        sid = self.upload(server)["session_id"]
        call(server, "POST", f"/v1/sessions/{sid}/features")
        status, out = call(server, "POST", f"/v1/sessions/{sid}/autoseg",
                           {"n_prompts": 12, "seed": 0})
        assert status == 200 and out["n_parts"] >= 1
        _, labels = call(server, "GET", f"/v1/sessions/{sid}/labels")
        assert len(labels["labels"]) == 12
        assert min(labels["labels"]) >= 1          # total after flood fill
        status, colors = call(server, "GET", f"/v1/sessions/{sid}/colors")
        assert status == 200 and len(colors["colors"]) == 400
        status, hier = call(server, "GET", f"/v1/sessions/{sid}/hierarchy?level=0")
        if out["n_parts"] >= 2:
            assert status == 200
            assert sorted(set(hier["labels"])) == sorted(set(labels["labels"]))
        else:
            assert status == 400

    def test_multiprompt_exact_parts(self, server):
        sid = self.upload(server)["session_id"]
        call(server, "POST", f"/v1/sessions/{sid}/features")
        status, out = call(server, "POST", f"/v1/sessions/{sid}/multiprompt",
                           {"points": [[0, 0, 0.4], [0, 0, -0.4]]})
        assert status == 200 and out["n_parts"] == 2

    def test_unknown_session_404(self, server):
        status, _ = call(server, "GET", "/v1/sessions/nope")
        assert status == 404

    def test_bad_geometry_400(self, server):
        status, _ = call(server, "POST", "/v1/meshes", b"\x00\xff garbage",
                         "application/octet-stream")
        assert status == 400

    def test_bad_json_400(self, server):
        sid = self.upload(server)["session_id"]
        call(server, "POST", f"/v1/sessions/{sid}/features")
        status, _ = call(server, "POST", f"/v1/sessions/{sid}/prompt",
                         b"{not json", "application/json")
        assert status == 400

    def test_unknown_route_404(self, server):
        status, _ = call(server, "GET", "/v1/frobnicate")
        assert status == 404

    def test_ephemeral_port_bound(self, server):
        assert server.server_address[1] > 0


class TestConcurrency:
    def test_parallel_prompts_consistent(self, server):
        sid = call(server, "POST", "/v1/meshes", obj_bytes(), "model/obj")[1]["session_id"]
        call(server, "POST", f"/v1/sessions/{sid}/features")
        results = []

        def hit():
            results.append(call(server, "POST", f"/v1/sessions/{sid}/prompt",
                                {"x": 0.2, "y": 0.1, "z": 0.4}))

        threads = [threading.Thread(target=hit) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(status == 200 for status, _ in results)
        ious = {tuple(out["ious"]) for _, out in results}
        assert len(ious) == 1
