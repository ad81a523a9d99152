import math

import numpy as np
import pytest

from diarlab.annotation import Annotation, SpeechTurn, relabel
from diarlab.metrics import UNMAPPED, der, optimal_mapping
from tests.oracles import frame_der
from tests.support import random_annotation


def ann(rec, *triples):
    return Annotation(rec, tuple(SpeechTurn(rec, o, d, s) for o, d, s in triples))


class TestOptimalMapping:
    def test_identity_like(self):
        a = ann("r", (0.0, 2.0, "a"), (3.0, 2.0, "b"))
        h = ann("r", (0.0, 2.0, "x"), (3.0, 2.0, "y"))
        assert optimal_mapping(a, h) == {"x": "a", "y": "b"}

    def test_extra_hyp_speaker_unmapped(self):
        ref = ann("r", (0.0, 10.0, "A"))
        hyp = ann("r", (0.0, 9.0, "X"), (9.0, 1.0, "Y"))
        assert optimal_mapping(ref, hyp) == {"X": "A", "Y": UNMAPPED}

    def test_swapped_in_time(self):
        ref = ann("r", (0.0, 5.0, "A"), (5.0, 5.0, "B"))
        hyp = ann("r", (0.0, 5.0, "B"), (5.0, 5.0, "A"))
        assert optimal_mapping(ref, hyp) == {"B": "A", "A": "B"}

    def test_zero_overlap_is_unmapped(self):
        ref = ann("r", (0.0, 1.0, "A"))
        hyp = ann("r", (5.0, 1.0, "X"))
        assert optimal_mapping(ref, hyp) == {"X": UNMAPPED}

    def test_recording_mismatch(self):
        with pytest.raises(ValueError):
            optimal_mapping(ann("a", (0, 1, "x")), ann("b", (0, 1, "x")))


class TestDerBasics:
    def test_identical_is_zero(self):
        a = ann("r", (0.0, 2.0, "a"), (1.0, 3.0, "b"))
        for collar in (0.0, 0.25, 1.0):
            report = der(a, a, collar=collar)
            assert report.der == 0.0
            assert report.total_error == 0.0

    def test_empty_hyp_all_missed(self):
        a = ann("r", (0.0, 2.0, "a"), (1.0, 3.0, "b"))
        report = der(a, Annotation("r", ()), collar=0.0)
        assert report.missed == pytest.approx(5.0)
        assert report.reference_total == pytest.approx(5.0)
        assert report.der == 1.0

    def test_empty_ref_empty_hyp(self):
        report = der(Annotation("r", ()), Annotation("r", ()))
        assert report.der == 0.0
        assert report.degenerate

    def test_empty_ref_nonempty_hyp(self):
        report = der(Annotation("r", ()), ann("r", (0.0, 1.0, "x")), collar=0.0)
        assert math.isinf(report.der)
        assert report.degenerate
        assert report.false_alarm == pytest.approx(1.0)

    def test_negative_collar_rejected(self):
        a = ann("r", (0.0, 1.0, "a"))
        with pytest.raises(ValueError):
            der(a, a, collar=-0.1)

    def test_pure_confusion(self):
        ref = ann("r", (0.0, 10.0, "A"), (10.0, 10.0, "B"))
        hyp = ann("r", (0.0, 10.0, "X"), (10.0, 15.0, "X"))
        # X maps to whichever half wins; the other half is confusion (5s FA tail).
        report = der(ref, hyp, collar=0.0)
        assert report.confusion == pytest.approx(10.0)
        assert report.false_alarm == pytest.approx(5.0)
        assert report.der == pytest.approx(15.0 / 20.0)

    def test_collar_excludes_boundary_error(self):
        ref = ann("r", (0.0, 10.0, "A"))
        hyp = ann("r", (0.2, 9.6, "A"))  # covers [0.2, 9.8): 0.2s missed at each edge
        strict = der(ref, hyp, collar=0.0)
        assert strict.missed == pytest.approx(0.4)
        relaxed = der(ref, hyp, collar=0.25)
        assert relaxed.missed == pytest.approx(0.0)
        assert relaxed.der == 0.0

    def test_no_overlap_scoring_excludes_ref_overlap(self):
        ref = ann("r", (0.0, 4.0, "A"), (2.0, 4.0, "B"))
        hyp = ann("r", (0.0, 4.0, "A"))
        scored = der(ref, hyp, collar=0.0, score_overlap=True)
        no_ovl = der(ref, hyp, collar=0.0, score_overlap=False)
        assert scored.missed == pytest.approx(4.0)  # B missing: [2,4) x2 counts... B active 4s, A covers
        assert no_ovl.missed == pytest.approx(2.0)  # only non-overlap part of B
        assert no_ovl.reference_total == pytest.approx(4.0)


class TestDerProperties:
    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            ref = random_annotation(rng)
            hyp = random_annotation(rng)
            a = der(ref, hyp)
            spk = hyp.speakers
            perm = [f"z{i}" for i in range(len(spk))]
            rng.shuffle(perm)
            hyp2 = relabel(hyp, dict(zip(spk, perm)))
            b = der(ref, hyp2)
            assert a.der == pytest.approx(b.der, abs=1e-9)
            assert a.confusion == pytest.approx(b.confusion, abs=1e-9)

    def test_collar_monotonicity(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            ref = random_annotation(rng)
            hyp = random_annotation(rng)
            errors = [
                der(ref, hyp, collar=c).total_error for c in (0.0, 0.1, 0.25, 0.5, 1.0)
            ]
            for e1, e2 in zip(errors, errors[1:]):
                assert e2 <= e1 + 1e-9

    def test_der_componentwise_consistent(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            ref = random_annotation(rng)
            hyp = random_annotation(rng)
            r = der(ref, hyp)
            if r.reference_total > 0:
                assert r.der == pytest.approx(r.total_error / r.reference_total, abs=1e-9)


class TestDerOracle:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_frame_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        for _ in range(25):
            ref = random_annotation(rng, max_speakers=4, max_turns=20, max_time_s=60.0)
            hyp = random_annotation(rng, max_speakers=4, max_turns=20, max_time_s=60.0)
            collar = float(rng.choice([0.0, 0.25, 0.5]))
            score_overlap = bool(rng.integers(0, 2))
            got = der(ref, hyp, collar=collar, score_overlap=score_overlap)
            m, fa, cf, total, expected = frame_der(
                ref, hyp, collar=collar, score_overlap=score_overlap
            )
            assert got.missed == pytest.approx(m, abs=1e-6)
            assert got.false_alarm == pytest.approx(fa, abs=1e-6)
            assert got.confusion == pytest.approx(cf, abs=1e-6)
            assert got.reference_total == pytest.approx(total, abs=1e-6)
            if math.isinf(expected):
                assert math.isinf(got.der)
            else:
                assert got.der == pytest.approx(expected, abs=1e-6)
