import json

from diarlab.manifest import (
    DONE,
    FAILED,
    PENDING,
    RUNNING,
    SKIPPED,
    STAGES,
    ClipRecord,
    LabelVersion,
    Manifest,
    ManifestEntry,
)


def entry(item_id="item1", **kw):
    return ManifestEntry(item_id=item_id, source=f"/src/{item_id}.rawav", **kw)


class TestManifestEntry:
    def test_fresh_entry_all_pending(self):
        e = entry()
        assert all(e.stage(s).state == PENDING for s in STAGES)

    def test_stage_transitions_record_timestamps(self):
        e = entry()
        e.set_stage("shots", RUNNING)
        e.set_stage("shots", DONE)
        assert "started" in e.timestamps["shots"]
        assert "finished" in e.timestamps["shots"]

    def test_round_trip(self):
        e = entry()
        e.set_stage("acquire", DONE)
        e.set_stage("shots", FAILED, "boom")
        e.add_artifact("shots/boundaries", "items/x/b.json", "ab" * 32)
        e.clips["c1"] = ClipRecord("c1", 0, 10, 5.0, 2.0, label_versions=[LabelVersion(0, "l.rttm", None)])
        restored = ManifestEntry.from_dict(e.to_dict())
        assert restored.to_dict() == e.to_dict()

    def test_state_view_hides_timestamps(self):
        e = entry()
        e.set_stage("acquire", DONE)
        assert "timestamps" not in e.state_view()

    def test_stage_artifacts_prefix_filter(self):
        e = entry()
        e.add_artifact("shots/a", "a", "1")
        e.add_artifact("extract/b", "b", "2")
        assert list(e.stage_artifacts("shots")) == ["shots/a"]
        e.drop_stage_artifacts("shots")
        assert list(e.artifacts) == ["extract/b"]


class TestManifestStore:
    def test_record_and_reload(self, tmp_path):
        m = Manifest(tmp_path)
        e = entry()
        e.set_stage("acquire", DONE)
        m.record(e)
        e.set_stage("shots", DONE)
        m.record(e)

        m2 = Manifest(tmp_path)
        assert set(m2.entries) == {"item1"}
        assert m2.entries["item1"].stage("shots").state == DONE

    def test_last_event_wins(self, tmp_path):
        m = Manifest(tmp_path)
        e = entry()
        m.record(e)
        e.set_stage("acquire", FAILED, "net down")
        m.record(e)
        e.set_stage("acquire", DONE)
        m.record(e)
        m2 = Manifest(tmp_path)
        assert m2.entries["item1"].stage("acquire").state == DONE

    def test_torn_trailing_line_ignored(self, tmp_path):
        m = Manifest(tmp_path)
        e = entry()
        e.set_stage("acquire", DONE)
        m.record(e)
        with open(m.events_path, "a", encoding="utf-8") as f:
            f.write('{"entry": {"item_id": "item2", "source"')  # torn write
        m2 = Manifest(tmp_path)
        assert set(m2.entries) == {"item1"}

    def test_compaction_plus_later_events(self, tmp_path):
        m = Manifest(tmp_path)
        e = entry()
        m.record(e)
        m.compact()
        e.set_stage("acquire", SKIPPED, "duplicate")
        m.record(e)
        m2 = Manifest(tmp_path)
        assert m2.entries["item1"].stage("acquire").state == SKIPPED
        snap = json.loads(m.snapshot_path.read_text())
        assert snap["applied_events"] == 1

    def test_state_view_sorted_and_stable(self, tmp_path):
        m = Manifest(tmp_path)
        for item in ("b", "a"):
            m.record(entry(item))
        assert list(m.state_view()) == ["a", "b"]
