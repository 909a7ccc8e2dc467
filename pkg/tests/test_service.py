import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from pam_curator.al import ALConfig
from pam_curator.audio_io import AudioSegment, write_wav
from pam_curator.errors import ServiceError
from pam_curator.pool import dump_pool, load_pool, snapshot_path
from pam_curator.render import IMAGE_HEIGHT, IMAGE_WIDTH, render_spectrogram_png
from pam_curator.service import CurationService, create_app, replay_wal
from pam_curator.synth import make_synthetic_pool

RATE = 32000


class FakeClock:
    def __init__(self):
        self.now = 1000.0

    def __call__(self):
        return self.now


def make_service(tmp_path, n=300, batch=20, clock=None, oracle_mode=True,
                 strategy="entropy", audio_dir=None):
    records, features, oracle = make_synthetic_pool(
        n=n, positive_fraction=0.05, seed=21, n_seed_labels=5)
    cfg = ALConfig(strategy=strategy, batch_size=batch, seeds=(0,))
    return CurationService(
        records, features, cfg, seed=0,
        oracle=oracle if oracle_mode else None,
        state_dir=tmp_path / "state",
        audio_dir=audio_dir,
        clock=clock or FakeClock(),
    ), records, features, oracle


class TestTaskLeases:
    def test_tasks_granted_up_to_n(self, tmp_path):
        service, *_ = make_service(tmp_path)
        tasks = service.get_next_tasks("sess1", 5)
        assert len(tasks) == 5
        assert all(t.status == "pending" for t in tasks)

    def test_n_larger_than_remaining_returns_all(self, tmp_path):
        service, *_ = make_service(tmp_path, batch=4)
        tasks = service.get_next_tasks("sess1", 50)
        assert len(tasks) == 4

    def test_two_sessions_get_disjoint_tasks(self, tmp_path):
        service, *_ = make_service(tmp_path)
        a = {t.task_id for t in service.get_next_tasks("sess-a", 8)}
        b = {t.task_id for t in service.get_next_tasks("sess-b", 8)}
        assert a and b and not (a & b)

    def test_expired_lease_returns_to_pending(self, tmp_path):
        clock = FakeClock()
        service, *_ = make_service(tmp_path, clock=clock)
        first = service.get_next_tasks("sess-a", 1)
        assert first
        # Immediately: another session cannot grab the same task.
        other = service.get_next_tasks("sess-b", 20)
        assert first[0].task_id not in {t.task_id for t in other}
        clock.now += service.lease_seconds + 1
        regrant = service.get_next_tasks("sess-b", 50)
        assert first[0].task_id in {t.task_id for t in regrant}

    def test_empty_pool_gives_empty_batch(self, tmp_path):
        service, records, features, oracle = make_service(tmp_path, n=40,
                                                          batch=50)
        # Label everything in the training split.
        while True:
            tasks = service.get_next_tasks("s", 50)
            if not tasks:
                break
            for t in tasks:
                service.submit_label(t.task_id,
                                     "positive" if oracle[t.sample_id] else "negative")
        assert service.get_next_tasks("s", 5) == []


class TestSubmitLabel:
    def test_positive_with_ecotype_updates_pool(self, tmp_path):
        service, *_ = make_service(tmp_path)
        task = service.get_next_tasks("s", 1)[0]
        ack = service.submit_label(task.task_id, "positive",
                                   species="orca", ecotype="SRKW")
        assert ack["status"] == "accepted"
        rec = service.engine.records[task.sample_id]
        assert rec.label_state == "positive"
        assert rec.label_source == "human"
        assert rec.ecotype == "SRKW"

    def test_duplicate_submission_idempotent(self, tmp_path):
        service, *_ = make_service(tmp_path)
        task = service.get_next_tasks("s", 1)[0]
        first = service.submit_label(task.task_id, "positive")
        counts_after_first = service.engine.pool_counts()
        second = service.submit_label(task.task_id, "negative")
        assert second == first
        assert service.engine.pool_counts() == counts_after_first

    def test_skip_returns_task_to_pending_tail(self, tmp_path):
        service, *_ = make_service(tmp_path)
        tasks = service.get_next_tasks("s", 2)
        skipped = service.submit_label(tasks[0].task_id, "skip")
        assert skipped["status"] == "skipped"
        assert service.tasks[tasks[0].task_id].status == "pending"
        assert service.queue[-1] == tasks[0].task_id

    def test_unknown_task_explicit_code(self, tmp_path):
        service, *_ = make_service(tmp_path)
        with pytest.raises(ServiceError) as exc:
            service.submit_label("bogus", "positive")
        assert exc.value.code == "unknown_task"

    def test_every_ack_logged_exactly_once(self, tmp_path):
        service, records, features, oracle = make_service(tmp_path)
        tasks = service.get_next_tasks("s", 10)
        for t in tasks:
            service.submit_label(t.task_id,
                                 "positive" if oracle[t.sample_id] else "negative")
        wal_lines = [json.loads(l) for l in
                     (tmp_path / "state" / "wal.jsonl").read_text().splitlines()]
        label_events = [e for e in wal_lines if e["event"] == "label"]
        assert len(label_events) == 10
        assert len({e["task_id"] for e in label_events}) == 10


class TestRetrain:
    def test_stats_rows_track_iterations(self, tmp_path):
        service, records, features, oracle = make_service(tmp_path)
        for _ in range(2):
            tasks = service.get_next_tasks("s", 20)
            for t in tasks:
                service.submit_label(t.task_id,
                                     "positive" if oracle[t.sample_id] else "negative")
            service.trigger_retrain()
        stats = service.get_run_stats()
        assert stats["iteration"] == 3  # initial training + 2 triggered
        assert len(stats["history"]) == 3

    def test_retrain_during_retrain_is_busy(self, tmp_path):
        service, *_ = make_service(tmp_path)
        service.retraining = True
        with pytest.raises(ServiceError) as exc:
            service.trigger_retrain()
        assert exc.value.code == "retrain_busy"
        service.retraining = False
        assert service.trigger_retrain()["status"] == "completed"

    def test_stats_match_offline_recomputation(self, tmp_path):
        service, records, features, oracle = make_service(tmp_path)
        tasks = service.get_next_tasks("s", 20)
        for t in tasks:
            service.submit_label(t.task_id,
                                 "positive" if oracle[t.sample_id] else "negative")
        service.trigger_retrain()
        last = service.get_run_stats()["history"][-1]
        snapshot = load_pool(snapshot_path(
            tmp_path / "state" / "pool.jsonl", service.engine.iteration))
        n_pos = sum(1 for r in snapshot
                    if r.label_state == "positive" and r.label_source == "human")
        assert last["n_pos_found"] == n_pos
        labeled = last["n_labeled"]
        if labeled:
            assert last["positivity_rate"] == pytest.approx(n_pos / labeled)


class TestWalReplay:
    def test_replay_reconstructs_pool_byte_identical(self, tmp_path):
        service, records, features, oracle = make_service(tmp_path,
                                                          strategy="mixed")
        rng = np.random.default_rng(0)
        for _ in range(3):
            tasks = service.get_next_tasks("s", 12)
            for t in tasks:
                if rng.random() < 0.1:
                    service.submit_label(t.task_id, "skip")
                else:
                    service.submit_label(
                        t.task_id,
                        "positive" if oracle[t.sample_id] else "negative",
                        species="orca" if oracle[t.sample_id] else None)
            service.trigger_retrain()

        fresh_records, fresh_features, _ = make_synthetic_pool(
            n=300, positive_fraction=0.05, seed=21, n_seed_labels=5)
        replayed = replay_wal(fresh_records, fresh_features, service.cfg,
                              seed=0, wal_path=tmp_path / "state" / "wal.jsonl")
        a = tmp_path / "live.jsonl"
        b = tmp_path / "replayed.jsonl"
        dump_pool(list(service.engine.records.values()), a)
        dump_pool(list(replayed.records.values()), b)
        assert a.read_bytes() == b.read_bytes()
        assert replayed.iteration == service.engine.iteration


class TestRender:
    def silence_segment(self):
        return AudioSegment("silence", np.zeros(2 * RATE, dtype=np.float32), RATE)

    def sine_segment(self, freq):
        t = np.arange(2 * RATE) / RATE
        return AudioSegment(f"sine{freq}",
                            (0.5 * np.sin(2 * np.pi * freq * t)).astype(np.float32),
                            RATE)

    def test_silence_uniform_above_tick_strip(self):
        from PIL import Image
        import io
        png = render_spectrogram_png(self.silence_segment())
        img = np.asarray(Image.open(io.BytesIO(png)))
        body = img[:IMAGE_HEIGHT - 16]
        assert (body == body[0, 0]).all()

    def test_sine_line_at_expected_height(self):
        from PIL import Image
        import io
        png = render_spectrogram_png(self.sine_segment(5000.0))
        img = np.asarray(Image.open(io.BytesIO(png))).astype(int)
        body = img[:IMAGE_HEIGHT - 16]
        # Brightest row = line position; expected at 5/16 from the bottom.
        background = np.median(body, axis=(0, 1))
        row_energy = np.abs(body - background).sum(axis=(1, 2))
        line_row = int(np.argmax(row_energy))
        expected = round((1 - 5000 / 16000) * (IMAGE_HEIGHT - 1))
        assert abs(line_row - expected) <= 2

    def test_byte_identical_rendering(self):
        seg = self.sine_segment(3000.0)
        assert render_spectrogram_png(seg) == render_spectrogram_png(seg)

    def test_dimensions_and_format(self):
        from PIL import Image
        import io
        png = render_spectrogram_png(self.silence_segment(), style="gray")
        img = Image.open(io.BytesIO(png))
        assert img.size == (IMAGE_WIDTH, IMAGE_HEIGHT)
        assert png[:8] == b"\x89PNG\r\n\x1a\n"


class TestHttpApi:
    @pytest.fixture()
    def client(self, tmp_path):
        audio_dir = tmp_path / "audio"
        audio_dir.mkdir()
        service, records, features, oracle = make_service(
            tmp_path, audio_dir=audio_dir)
        first_task = service.get_next_tasks("warm", 1)[0]
        t = np.arange(RATE) / RATE
        write_wav(audio_dir / f"{first_task.sample_id}.wav",
                  (0.2 * np.sin(2 * np.pi * 4000 * t)).astype(np.float32), RATE)
        self.first_task = first_task
        self.oracle = oracle
        return TestClient(create_app(service))

    def test_healthz_carries_run_id_and_iteration(self, client):
        doc = client.get("/healthz").json()
        assert doc["status"] == "ok"
        assert "run_id" in doc and doc["iteration"] == 1

    def test_task_label_stats_flow(self, client):
        tasks = client.get("/tasks", params={"n": 3, "session": "u1"}).json()["tasks"]
        assert len(tasks) == 3
        ack = client.post("/labels", json={
            "task_id": tasks[0]["task_id"], "label": "positive",
            "species": "orca", "ecotype": "SRKW"}).json()
        assert ack["ack"]["status"] == "accepted"
        retrain = client.post("/retrain").json()
        assert retrain["status"] == "completed"
        stats = client.get("/stats").json()
        assert stats["iteration"] == 2
        assert len(stats["history"]) == 2
        assert stats["history"][-1]["n_pos_found"] >= 1

    def test_unknown_task_is_404(self, client):
        resp = client.post("/labels", json={"task_id": "zzz", "label": "positive"})
        assert resp.status_code == 404
        assert resp.json()["error"] == "unknown_task"

    def test_spectrogram_and_audio_endpoints(self, client):
        sid = self.first_task.sample_id
        png = client.get(f"/spectrogram/{sid}.png")
        assert png.status_code == 200
        assert png.headers["content-type"] == "image/png"
        wav = client.get(f"/audio/{sid}.wav")
        assert wav.status_code == 200
        missing = client.get("/spectrogram/nope.png")
        assert missing.status_code == 404

    def test_vocab_endpoint(self, client):
        vocab = client.get("/vocab").json()["vocab"]
        assert "SRKW" in vocab["ecotypes"]
        assert "S01" in vocab["call_codes"]
