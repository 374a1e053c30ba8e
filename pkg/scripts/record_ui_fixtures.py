"""Record HTTP API request/response fixtures for the frontend contract tests.

Drives scripted conducts against an in-process service and writes the raw
response bodies (exact bytes the UI would receive) to
frontend/tests/fixtures/. Run from the repository root:

    python3 scripts/record_ui_fixtures.py
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from ewoc.api import create_app
from ewoc.configs import load_builtin
from ewoc.store import TrialStore
from ewoc.trial import config_to_dict

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"

# deterministic 10-patient outcome script (patient 1 resolves first, then
# enroll/resolve alternate)
CONDUCT_OUTCOMES = [0, 0, 0, 1, 0, 1, 0, 0, 1, 0]


class Recorder:
    def __init__(self, client: TestClient):
        self.client = client
        self.entries: list[dict] = []

    def call(self, method: str, path: str, body=None):
        if method == "GET":
            resp = self.client.get(path)
        else:
            resp = self.client.post(path, json=body)
        self.entries.append({
            "request": {"method": method, "path": path, "body": body},
            "response": {"status": resp.status_code, "text": resp.text},
        })
        return resp.json()


def fresh_client() -> TestClient:
    tmp = tempfile.mkdtemp(prefix="ewoc-fixtures-")
    return TestClient(create_app(TrialStore(tmp)))


def record_conduct() -> None:
    rec = Recorder(fresh_client())
    config = config_to_dict(load_builtin("r115777"))
    created = rec.call("POST", "/api/trials", config)
    tid = created["id"]
    for dlt in CONDUCT_OUTCOMES:
        view = rec.call("GET", f"/api/trials/{tid}")
        pending = [p for p in view["patients"] if p["status"] == "pending"]
        rec.call("POST", f"/api/trials/{tid}/patients/{pending[0]['patient_id']}/outcome",
                 {"dlt": dlt, "expected_version": view["version"]})
        view = rec.call("GET", f"/api/trials/{tid}")
        rec.call("POST", f"/api/trials/{tid}/patients",
                 {"expected_version": view["version"]})
    rec.call("GET", f"/api/trials/{tid}/posterior?samples=101")
    (FIXTURE_DIR / "conduct10.json").write_text(json.dumps(rec.entries, indent=1))


def record_halt() -> None:
    rec = Recorder(fresh_client())
    config = config_to_dict(load_builtin("r115777"))
    created = rec.call("POST", "/api/trials", config)
    tid = created["id"]
    rec.call("POST", f"/api/trials/{tid}/patients/p1/outcome",
             {"dlt": 1, "expected_version": 1})
    rec.call("GET", f"/api/trials/{tid}/recommendation")  # 409 trial_halted
    (FIXTURE_DIR / "halt.json").write_text(json.dumps(rec.entries, indent=1))


def record_whatif() -> None:
    rec = Recorder(fresh_client())
    config = config_to_dict(load_builtin("abr217620"))
    config["resolution"] = [41, 41, 41]
    created = rec.call("POST", "/api/trials", {"config": config, "covariates": [80.0]})
    tid = created["id"]
    rec.call("POST", f"/api/trials/{tid}/patients/p1/outcome",
             {"dlt": 0, "expected_version": 1})
    rec.call("GET", f"/api/trials/{tid}/recommendation?covariates=0")
    rec.call("GET", f"/api/trials/{tid}/recommendation?covariates=200")
    rec.call("GET", f"/api/trials/{tid}/recommendation?covariates=250")  # 400
    rec.call("GET", f"/api/trials/{tid}/posterior?samples=61&curve_samples=9")
    (FIXTURE_DIR / "whatif.json").write_text(json.dumps(rec.entries, indent=1))


def record_stale_version() -> None:
    rec = Recorder(fresh_client())
    config = config_to_dict(load_builtin("r115777"))
    created = rec.call("POST", "/api/trials", config)
    tid = created["id"]
    rec.call("POST", f"/api/trials/{tid}/patients/p1/outcome",
             {"dlt": 0, "expected_version": 1})
    # double submit with the same version: second one must conflict
    rec.call("POST", f"/api/trials/{tid}/patients/p1/outcome",
             {"dlt": 0, "expected_version": 1})
    (FIXTURE_DIR / "stale.json").write_text(json.dumps(rec.entries, indent=1))


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    record_conduct()
    record_halt()
    record_whatif()
    record_stale_version()
    print(f"fixtures written to {FIXTURE_DIR}")


if __name__ == "__main__":
    main()
