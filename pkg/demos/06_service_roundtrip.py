"""
The annotation service, end to end
==================================

Create a task over HTTP, run a scripted annotator through the question
stream, and fetch the merged importance map. Uses the in-process ASGI
test client, so no port is opened; `punchhole serve` exposes the same
API over a real socket.
"""

import io
import tempfile

import numpy as np
from fastapi.testclient import TestClient
from PIL import Image

from punchhole import GroundTruthMask, PixelRect
from punchhole.service import create_app

rng = np.random.default_rng(4)
image = rng.integers(0, 255, size=(64, 64, 3), dtype=np.uint8)
buf = io.BytesIO()
Image.fromarray(image).save(buf, format="PNG")

pixels = np.zeros((64, 64), dtype=bool)
pixels[20:40, 20:40] = True
mask = GroundTruthMask(pixels)  # what our scripted annotator "knows"

with tempfile.TemporaryDirectory() as data_dir:
    client = TestClient(create_app(data_dir))

    created = client.post(
        "/v1/tasks",
        data={"question": "Where is the anomaly?", "patch_size": "16", "max_level": "1"},
        files={"image": ("chart.png", buf.getvalue(), "image/png")},
    )
    task_id = created.json()["task_id"]
    print(f"created task {task_id}")

    opened = client.post(f"/v1/tasks/{task_id}/sessions", json={"worker_id": "demo"}).json()
    session_id = opened["session_id"]
    payload = {"status": "active", "stimulus": opened["stimulus"]}
    print(f"opened session {session_id}; first stimulus hides "
          f"{len(payload['stimulus']['hidden'])} rect(s)")

    while payload["status"] != "done":
        stim = payload["stimulus"]
        hit = any(
            mask.count_in(PixelRect(r["x"], r["y"], r["w"], r["h"])) > 0
            for r in stim["hidden"]
        )
        payload = client.post(
            f"/v1/sessions/{session_id}/answer",
            json={
                "response": "cannot" if hit else "can",
                "latency_s": 0.2,
                "punch_seq": stim["punch_seq"],
            },
        ).json()
        if payload["status"] == "level_complete":
            print("level complete, auto-advanced to the finer grid")
    print(f"session done after {payload['questions']} questions")

    served = client.get(f"/v1/tasks/{task_id}/map", params={"tau": 0.8}).json()
    marked = [s for s in served["scores"] if s["score"] > 0.5]
    print(f"map at level {served['grid']['level']}: {len(marked)} patches marked important")
    for s in marked:
        print(f"  patch ({s['row']},{s['col']}) rect {s['rect']}")
