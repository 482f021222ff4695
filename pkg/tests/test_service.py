"""Experiment service protocol: sessions, trials, clicks, choices, export."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from ferbench.datasets import _to_uint8, load_stimulus_set, save_stimulus_set
from ferbench.records import read_trials_jsonl
from ferbench.service import (
    ExperimentService,
    ServiceConfig,
    Session,
    block_boundaries,
    build_app,
    decode_png_b64,
    load_service_config,
)
from ferbench.synthetic import generate_synthetic_dataset

N_PER_CLASS = 2  # 16 stimuli, 4 blocks of 4
SIZE = 32


@pytest.fixture(scope="module")
def stimulus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("stimuli") / "toyset"
    save_stimulus_set(generate_synthetic_dataset(N_PER_CLASS, size=SIZE, seed=3), root)
    return root


@pytest.fixture()
def service(stimulus_dir, tmp_path):
    cfg = ServiceConfig(stimulus_path=str(stimulus_dir), results_dir=str(tmp_path / "res"),
                        reveal_radius=5.0, block_count=4)
    return ExperimentService(cfg)


@pytest.fixture()
def client(service):
    return TestClient(build_app(service))


def start_session(client, seed=17, code="p01"):
    resp = client.post("/sessions", json={"participant_code": code,
                                          "stimulus_set_id": "toyset", "seed": seed})
    assert resp.status_code == 200
    return resp.json()


def run_trial(client, sid, n_clicks=1, pick_first=True):
    trial = client.get(f"/sessions/{sid}/trial").json()
    assert trial["status"] == "trial"
    for i in range(n_clicks):
        r = client.post(f"/sessions/{sid}/clicks",
                        json={"stimulus_id": trial["stimulus_id"],
                              "x": 5 + 3 * i, "y": 7, "client_ms": 10.0 * i})
        assert r.status_code == 200
    options = trial["option_pair"]
    # the true label is not exposed by the trial payload; pick by display slot
    choice = options[0] if pick_first else options[1]
    resp = client.post(f"/sessions/{sid}/choice",
                       json={"stimulus_id": trial["stimulus_id"], "choice": choice})
    assert resp.status_code == 200
    return trial, resp.json()


class TestSessionCreation:
    def test_summary_fields_and_blocks(self, client):
        out = start_session(client)
        assert out["n_trials"] == 16
        assert out["block_boundaries"] == [4, 8, 12]
        assert out["cursor"] == 0
        assert isinstance(out["session_id"], str) and len(out["session_id"]) >= 8

    def test_unknown_stimulus_set_is_404(self, client):
        resp = client.post("/sessions", json={"participant_code": "p",
                                              "stimulus_set_id": "nope"})
        assert resp.status_code == 404

    def test_seeded_sessions_replay_the_same_permutation(self, service):
        a = service.create_session("p", "toyset", seed=99)
        b = service.create_session("p", "toyset", seed=99)
        c = service.create_session("p", "toyset", seed=100)
        assert a.trial_order == b.trial_order
        assert a.session_id != b.session_id
        assert c.trial_order != a.trial_order

    def test_permutation_covers_every_stimulus_once(self, service, stimulus_dir):
        session = service.create_session("p", "toyset", seed=1)
        expected = sorted(im.id for im in load_stimulus_set(stimulus_dir))
        assert sorted(session.trial_order) == expected

    def test_duplicate_trial_order_rejected(self):
        with pytest.raises(ValueError, match="repeated"):
            Session(session_id="s", participant_code="p",
                    trial_order=("a", "a"), block_boundaries=(), created_at=0.0,
                    entropy=0)


class TestBlockBoundaries:
    def test_reference_protocol_280_in_4x70(self):
        assert block_boundaries(280, 4) == (70, 140, 210)

    def test_ceil_sizing_for_other_counts(self):
        assert block_boundaries(10, 4) == (3, 6, 9)
        assert block_boundaries(16, 4) == (4, 8, 12)
        assert block_boundaries(4, 8) == (1, 2, 3)

    def test_block_index_increments_at_boundary(self, client):
        sid = start_session(client)["session_id"]
        for i in range(16):
            trial = client.get(f"/sessions/{sid}/trial").json()
            assert trial["block_index"] == i // 4
            client.post(f"/sessions/{sid}/choice",
                        json={"stimulus_id": trial["stimulus_id"],
                              "choice": trial["option_pair"][0]})


class TestTrialFlow:
    def test_repeated_read_is_idempotent(self, client):
        sid = start_session(client)["session_id"]
        first = client.get(f"/sessions/{sid}/trial").json()
        again = client.get(f"/sessions/{sid}/trial").json()
        assert first == again

    def test_exhausted_session_returns_end_marker(self, client):
        sid = start_session(client)["session_id"]
        for _ in range(16):
            run_trial(client, sid, n_clicks=0)
        done = client.get(f"/sessions/{sid}/trial").json()
        assert done == {"status": "done", "completed": 16}
        # and the cursor cannot advance past the end
        resp = client.post(f"/sessions/{sid}/choice",
                           json={"stimulus_id": "anything", "choice": "happy"})
        assert resp.status_code == 409

    def test_served_image_is_the_blurred_grayscale(self, client, service):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        img = decode_png_b64(trial["image_png_b64"])
        np.testing.assert_array_equal(img, service.blurred_uint8(trial["stimulus_id"]))
        # grayscale: all three channels identical
        np.testing.assert_array_equal(img[..., 0], img[..., 1])
        np.testing.assert_array_equal(img[..., 0], img[..., 2])

    def test_option_pair_is_the_trial_labels(self, client, service):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        im = service._stimuli[trial["stimulus_id"]]
        assert sorted(trial["option_pair"]) == sorted([im.true_label, im.false_label])

    def test_unknown_session_is_404(self, client):
        assert client.get("/sessions/ghost/trial").status_code == 404
        assert client.get("/sessions/ghost/export").status_code == 404


class TestClicks:
    def test_click_returns_disk_patch(self, client, service):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        out = client.post(f"/sessions/{sid}/clicks",
                          json={"stimulus_id": trial["stimulus_id"],
                                "x": 10, "y": 12}).json()
        patch = decode_png_b64(out["patch_png_b64"])
        assert patch.shape[2] == 4
        im = service._stimuli[trial["stimulus_id"]]
        x0, y0 = out["patch_x0"], out["patch_y0"]
        yy, xx = np.mgrid[y0:y0 + patch.shape[0], x0:x0 + patch.shape[1]]
        disk = (xx - 10) ** 2 + (yy - 12) ** 2 <= 5.0 ** 2
        np.testing.assert_array_equal(patch[..., 3] == 255, disk)
        orig = _to_uint8(im.pixels[y0:y0 + patch.shape[0], x0:x0 + patch.shape[1]])
        np.testing.assert_array_equal(patch[disk][:, :3], orig[disk])
        # outside the disk the patch must carry no image information at all
        assert (patch[~disk] == 0).all()

    def test_corner_click_accepted_with_quarter_patch(self, client):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        out = client.post(f"/sessions/{sid}/clicks",
                          json={"stimulus_id": trial["stimulus_id"], "x": 0, "y": 0})
        assert out.status_code == 200
        patch = decode_png_b64(out.json()["patch_png_b64"])
        assert patch.shape[:2] == (6, 6)  # radius 5 clipped at the corner

    def test_duplicate_clicks_both_recorded(self, client):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        for expect in (1, 2):
            out = client.post(f"/sessions/{sid}/clicks",
                              json={"stimulus_id": trial["stimulus_id"],
                                    "x": 9, "y": 9}).json()
            assert out["click_count"] == expect

    def test_out_of_bounds_rejected_and_not_recorded(self, client):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        resp = client.post(f"/sessions/{sid}/clicks",
                           json={"stimulus_id": trial["stimulus_id"],
                                 "x": SIZE, "y": 0})
        assert resp.status_code == 400
        out = client.post(f"/sessions/{sid}/clicks",
                          json={"stimulus_id": trial["stimulus_id"],
                                "x": 1, "y": 1}).json()
        assert out["click_count"] == 1

    def test_click_before_trial_served_rejected(self, service):
        session = service.create_session("p", "toyset", seed=5)
        with pytest.raises(Exception, match="not the active trial"):
            service.record_click(session.session_id, session.trial_order[0], 1, 1)

    def test_click_on_inactive_stimulus_rejected(self, client):
        sid = start_session(client)["session_id"]
        trial, _ = run_trial(client, sid)
        # the previous trial is finished; clicking it again must 409
        resp = client.post(f"/sessions/{sid}/clicks",
                           json={"stimulus_id": trial["stimulus_id"], "x": 2, "y": 2})
        next_id = client.get(f"/sessions/{sid}/trial").json()["stimulus_id"]
        assert next_id != trial["stimulus_id"] or resp.status_code == 200
        if next_id != trial["stimulus_id"]:
            assert resp.status_code == 409


class TestChoices:
    def test_choice_outside_pair_rejected_trial_stays_open(self, client, service):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        im = service._stimuli[trial["stimulus_id"]]
        outside = next(lab for lab in ("neutral", "happy", "sad")
                       if lab not in (im.true_label, im.false_label))
        resp = client.post(f"/sessions/{sid}/choice",
                           json={"stimulus_id": trial["stimulus_id"], "choice": outside})
        assert resp.status_code == 400
        again = client.get(f"/sessions/{sid}/trial").json()
        assert again["stimulus_id"] == trial["stimulus_id"]
        ok = client.post(f"/sessions/{sid}/choice",
                         json={"stimulus_id": trial["stimulus_id"],
                               "choice": im.true_label})
        assert ok.status_code == 200

    def test_correct_iff_choice_is_true_label(self, client, service):
        sid = start_session(client)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        im = service._stimuli[trial["stimulus_id"]]
        record = client.post(f"/sessions/{sid}/choice",
                             json={"stimulus_id": trial["stimulus_id"],
                                   "choice": im.true_label}).json()
        assert record["correct"] is True
        trial2 = client.get(f"/sessions/{sid}/trial").json()
        im2 = service._stimuli[trial2["stimulus_id"]]
        record2 = client.post(f"/sessions/{sid}/choice",
                              json={"stimulus_id": trial2["stimulus_id"],
                                    "choice": im2.false_label}).json()
        assert record2["correct"] is False

    def test_zero_click_choice_flagged_with_null_duration(self, client):
        sid = start_session(client)["session_id"]
        _, record = run_trial(client, sid, n_clicks=0)
        assert record["duration_ms"] is None
        assert record["clicks"] == []

    def test_duration_runs_from_first_click_to_choice(self, stimulus_dir, tmp_path):
        ticks = iter([1000.0, 1250.0, 1900.0, 2400.0])  # serve, click, click, choice
        cfg = ServiceConfig(stimulus_path=str(stimulus_dir),
                            results_dir=str(tmp_path / "res"), reveal_radius=5.0)
        svc = ExperimentService(cfg, clock=lambda: next(ticks))
        session = svc.create_session("p", "toyset", seed=8)
        trial = svc.next_trial(session.session_id)
        svc.record_click(session.session_id, trial["stimulus_id"], 3, 3, client_ms=240.0)
        svc.record_click(session.session_id, trial["stimulus_id"], 8, 8)
        record = svc.submit_choice(session.session_id, trial["stimulus_id"],
                                   trial["option_pair"][0])
        assert record.clicks[0].ms_since_trial_start == 250.0
        assert record.clicks[1].ms_since_trial_start == 900.0
        assert record.duration_ms == (2400.0 - 1000.0) - 250.0
        assert record.clicks[0].client_ms == 240.0


class TestExport:
    def test_round_trip_reproduces_records(self, client, tmp_path):
        sid = start_session(client)["session_id"]
        for n in (2, 0, 1):
            run_trial(client, sid, n_clicks=n)
        text = client.get(f"/sessions/{sid}/export").text
        path = tmp_path / "export.jsonl"
        path.write_text(text)
        records = read_trials_jsonl(path)
        assert len(records) == 3
        assert [len(r.clicks) for r in records] == [2, 0, 1]
        assert all(r.session_id == sid for r in records)
        # writing the loaded records back yields the identical file
        assert "".join(json.dumps(r.to_json_dict()) + "\n" for r in records) == text

    def test_empty_session_exports_empty_file(self, client):
        sid = start_session(client)["session_id"]
        assert client.get(f"/sessions/{sid}/export").text == ""

    def test_all_sessions_export_concatenates(self, service):
        a = service.create_session("p1", "toyset", seed=1)
        b = service.create_session("p2", "toyset", seed=2)
        for sess in (a, b):
            trial = service.next_trial(sess.session_id)
            service.submit_choice(sess.session_id, trial["stimulus_id"],
                                  trial["option_pair"][0])
        lines = service.export_results().strip().split("\n")
        assert len(lines) == 2
        assert {json.loads(x)["session_id"] for x in lines} == {a.session_id, b.session_id}


class TestIsolationAndReplay:
    def test_concurrent_sessions_do_not_share_state(self, client):
        sid_a = start_session(client, seed=31, code="pa")["session_id"]
        sid_b = start_session(client, seed=32, code="pb")["session_id"]
        trial_a = client.get(f"/sessions/{sid_a}/trial").json()
        trial_b = client.get(f"/sessions/{sid_b}/trial").json()
        client.post(f"/sessions/{sid_a}/clicks",
                    json={"stimulus_id": trial_a["stimulus_id"], "x": 4, "y": 4})
        client.post(f"/sessions/{sid_a}/choice",
                    json={"stimulus_id": trial_a["stimulus_id"],
                          "choice": trial_a["option_pair"][0]})
        # B's trial is untouched by A's progress
        again_b = client.get(f"/sessions/{sid_b}/trial").json()
        assert again_b == trial_b
        record_b = client.post(f"/sessions/{sid_b}/choice",
                               json={"stimulus_id": trial_b["stimulus_id"],
                                     "choice": trial_b["option_pair"][0]}).json()
        assert record_b["clicks"] == []  # A's click did not bleed over

    def test_journal_replay_restores_mid_trial_state(self, stimulus_dir, tmp_path):
        cfg = ServiceConfig(stimulus_path=str(stimulus_dir),
                            results_dir=str(tmp_path / "res"), reveal_radius=5.0)
        svc = ExperimentService(cfg)
        session = svc.create_session("p", "toyset", seed=12)
        sid = session.session_id
        for _ in range(2):
            trial = svc.next_trial(sid)
            svc.record_click(sid, trial["stimulus_id"], 6, 6)
            svc.submit_choice(sid, trial["stimulus_id"], trial["option_pair"][0])
        open_trial = svc.next_trial(sid)
        svc.record_click(sid, open_trial["stimulus_id"], 2, 9)

        revived = ExperimentService(cfg)  # crash: rebuild purely from the journal
        state = revived._state(sid)
        assert state.cursor == 2
        assert state.session.trial_order == session.trial_order
        assert len(state.pending_clicks) == 1
        resumed = revived.next_trial(sid)
        assert resumed["stimulus_id"] == open_trial["stimulus_id"]
        record = revived.submit_choice(sid, open_trial["stimulus_id"],
                                       open_trial["option_pair"][0])
        assert len(record.clicks) == 1  # the pre-crash click survived
        assert revived.export_results(sid).count("\n") == 3


class TestServiceConfig:
    def test_toml_round_trip(self, tmp_path, stimulus_dir):
        cfg_path = tmp_path / "svc.toml"
        cfg_path.write_text(
            f'stimulus_path = "{stimulus_dir}"\n'
            f'results_dir = "{tmp_path / "r"}"\n'
            "port = 9000\nreveal_radius = 7.5\nblur_k = 9\nblock_count = 2\n")
        cfg = load_service_config(cfg_path)
        assert cfg.port == 9000
        assert cfg.reveal_radius == 7.5
        assert cfg.blur_k == 9
        assert cfg.block_count == 2
        assert cfg.stimulus_set_id == "toyset"

    def test_json_config(self, tmp_path, stimulus_dir):
        cfg_path = tmp_path / "svc.json"
        cfg_path.write_text(json.dumps({"stimulus_path": str(stimulus_dir),
                                        "results_dir": str(tmp_path / "r")}))
        cfg = load_service_config(cfg_path)
        assert cfg.port == 8765
        assert cfg.blur_k is None

    def test_unknown_suffix_rejected(self, tmp_path):
        path = tmp_path / "svc.yaml"
        path.write_text("x: 1")
        with pytest.raises(ValueError, match="toml or .json"):
            load_service_config(path)

    def test_validation(self, stimulus_dir):
        with pytest.raises(ValueError, match="reveal_radius"):
            ServiceConfig(stimulus_path=str(stimulus_dir), results_dir="r",
                          reveal_radius=0.0)
        with pytest.raises(ValueError, match="block_count"):
            ServiceConfig(stimulus_path=str(stimulus_dir), results_dir="r",
                          block_count=0)


class TestNoPixelLeak:
    def test_client_side_replay_leaks_nothing(self, client, service):
        """Composite everything a client ever receives; outside the disk union
        it must equal the blurred rendition bit for bit."""
        sid = start_session(client, seed=77)["session_id"]
        trial = client.get(f"/sessions/{sid}/trial").json()
        im = service._stimuli[trial["stimulus_id"]]
        canvas = decode_png_b64(trial["image_png_b64"]).copy()
        blurred = canvas.copy()
        clicks = [(6, 6), (20, 25), (6, 6), (0, 31)]
        for x, y in clicks:
            out = client.post(f"/sessions/{sid}/clicks",
                              json={"stimulus_id": trial["stimulus_id"],
                                    "x": x, "y": y}).json()
            patch = decode_png_b64(out["patch_png_b64"])
            x0, y0 = out["patch_x0"], out["patch_y0"]
            ph, pw = patch.shape[:2]
            region = canvas[y0:y0 + ph, x0:x0 + pw]
            alpha = patch[..., 3] == 255
            region[alpha] = patch[alpha][:, :3]
        yy, xx = np.mgrid[0:SIZE, 0:SIZE]
        union = np.zeros((SIZE, SIZE), dtype=bool)
        for x, y in clicks:
            union |= (xx - x) ** 2 + (yy - y) ** 2 <= 5.0 ** 2
        np.testing.assert_array_equal(canvas[~union], blurred[~union])
        np.testing.assert_array_equal(canvas[union], _to_uint8(im.pixels)[union])
