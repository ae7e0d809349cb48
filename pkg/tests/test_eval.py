import numpy as np
import pytest

from helpers import oracle_average_map, oracle_map
from spotnet import GroundTruthSpot, ap_at_delta, average_map, map_at_delta
from spotnet.errors import ConfigError
from spotnet.evaluate import default_delta_grid, export_curves, read_map_curve, trapezoid_mean
from spotnet.infer import SpotPrediction


def pred(match_id, seconds, label, confidence):
    return SpotPrediction(match_id=match_id, frame=int(round(seconds * 2)),
                          seconds=seconds, label=label,
                          class_name=f"class{label}", confidence=confidence)


def gt(match_id, seconds, label):
    return GroundTruthSpot(match_id, seconds, label)


class TestApAtDelta:
    def test_exact_hits_score_one(self):
        gts = [gt("m", 100.0, 0), gt("m", 200.0, 0)]
        preds = [pred("m", 100.0, 0, 0.9), pred("m", 200.0, 0, 0.8)]
        assert ap_at_delta(preds, gts, 5.0, 0) == pytest.approx(1.0)

    def test_no_predictions_scores_zero(self):
        assert ap_at_delta([], [gt("m", 100.0, 0)], 5.0, 0) == 0.0

    def test_hand_traced_pr_curve(self):
        # ranked TP then FP: recall reaches 1 at precision 1, AP = 1
        gts = [gt("m", 100.0, 0)]
        preds = [pred("m", 95.0, 0, 0.9), pred("m", 300.0, 0, 0.8)]
        assert ap_at_delta(preds, gts, 10.0, 0) == pytest.approx(1.0)

    def test_fp_ranked_first_halves_ap(self):
        gts = [gt("m", 100.0, 0)]
        preds = [pred("m", 300.0, 0, 0.9), pred("m", 95.0, 0, 0.8)]
        assert ap_at_delta(preds, gts, 10.0, 0) == pytest.approx(0.5)

    def test_nonpositive_delta_rejected(self):
        with pytest.raises(ConfigError):
            ap_at_delta([], [], 0.0, 0)

    def test_one_to_one_matching_consumes_gt(self):
        gts = [gt("m", 100.0, 0)]
        preds = [pred("m", 100.0, 0, 0.9), pred("m", 101.0, 0, 0.8)]
        flagsum = ap_at_delta(preds, gts, 10.0, 0)
        # second prediction is a duplicate: FP after full recall, AP stays 1
        assert flagsum == pytest.approx(1.0)

    def test_matching_is_per_match(self):
        gts = [gt("a", 100.0, 0)]
        preds = [pred("b", 100.0, 0, 0.9)]
        assert ap_at_delta(preds, gts, 10.0, 0) == 0.0

    def test_monotone_in_delta(self):
        rng = np.random.default_rng(0)
        gts = [gt("m", float(s), 0) for s in rng.uniform(0, 600, 5)]
        preds = [pred("m", float(s), 0, float(c))
                 for s, c in zip(rng.uniform(0, 600, 8), rng.random(8))]
        values = [ap_at_delta(preds, gts, d, 0) for d in default_delta_grid()]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_rank_invariant_to_confidence_scale(self):
        rng = np.random.default_rng(1)
        gts = [gt("m", float(s), 0) for s in rng.uniform(0, 600, 4)]
        base_conf = rng.random(6)
        times = rng.uniform(0, 600, 6)
        a = [pred("m", float(s), 0, float(c)) for s, c in zip(times, base_conf)]
        b = [pred("m", float(s), 0, float(0.1 + 0.5 * c))
             for s, c in zip(times, base_conf)]
        for d in (5.0, 30.0):
            assert ap_at_delta(a, gts, d, 0) == ap_at_delta(b, gts, d, 0)


class TestMapAtDelta:
    def test_perfect_all_classes(self):
        gts = [gt("m", 100.0 * (c + 1), c) for c in range(3)]
        preds = [pred("m", 100.0 * (c + 1), c, 0.9) for c in range(3)]
        assert map_at_delta(preds, gts, 5.0, 3) == pytest.approx(1.0)

    def test_one_of_three(self):
        gts = [gt("m", 100.0 * (c + 1), c) for c in range(3)]
        preds = [pred("m", 100.0, 0, 0.9)]
        assert map_at_delta(preds, gts, 5.0, 3) == pytest.approx(1.0 / 3.0)

    def test_recomposition(self):
        rng = np.random.default_rng(2)
        gts = [gt("m", float(s), int(c))
               for s, c in zip(rng.uniform(0, 600, 9), rng.integers(0, 3, 9))]
        preds = [pred("m", float(s), int(c), float(v)) for s, c, v in
                 zip(rng.uniform(0, 600, 12), rng.integers(0, 3, 12), rng.random(12))]
        per_class = [ap_at_delta(preds, gts, 20.0, c) for c in range(3)]
        assert map_at_delta(preds, gts, 20.0, 3) == pytest.approx(np.mean(per_class))


class TestAverageMap:
    def test_perfect_predictions_score_one(self):
        gts = [gt("m", 60.0 * (i + 1), i % 3) for i in range(6)]
        preds = [pred("m", g.seconds, g.label, 0.9) for g in gts]
        report = average_map(preds, gts, num_classes=3)
        assert report.average_map == pytest.approx(1.0)

    def test_closed_form_step_curve(self):
        # single class, GT at 100 s, prediction at 107 s: a miss at
        # delta=5 only; trapezoid over 5..60 = 1 - (0.5*5)/55
        gts = [gt("m", 100.0, 0)]
        preds = [pred("m", 107.0, 0, 0.9)]
        report = average_map(preds, gts, num_classes=1)
        assert report.map_curve[0] == 0.0
        assert all(v == 1.0 for v in report.map_curve[1:])
        assert report.average_map == pytest.approx(1.0 - 2.5 / 55.0, abs=1e-9)

    def test_grid_must_increase(self):
        with pytest.raises(ConfigError):
            average_map([], [], deltas=[5.0, 5.0], num_classes=1)

    def test_matches_exhaustive_oracle_bit_equal(self):
        rng = np.random.default_rng(99)
        deltas = default_delta_grid()
        for _ in range(200):
            num_classes = int(rng.integers(1, 4))
            n_gt = int(rng.integers(1, 6))
            n_pred = int(rng.integers(0, 11))
            gts = [gt("m", float(rng.uniform(0, 300)), int(rng.integers(num_classes)))
                   for _ in range(n_gt)]
            preds = [pred("m", float(rng.uniform(0, 300)), int(rng.integers(num_classes)),
                          float(rng.random())) for _ in range(n_pred)]
            report = average_map(preds, gts, deltas, num_classes)
            tuples = [(p.match_id, p.seconds, p.label, p.confidence) for p in preds]
            gt_tuples = [(g.match_id, g.seconds, g.label) for g in gts]
            expected = oracle_average_map(tuples, gt_tuples, deltas, num_classes)
            assert report.average_map == expected

    def test_multi_match_instances_match_oracle(self):
        rng = np.random.default_rng(7)
        deltas = [5.0, 20.0, 60.0]
        for _ in range(50):
            gts, preds = [], []
            for mid in ("a", "b"):
                for _ in range(int(rng.integers(1, 4))):
                    gts.append(gt(mid, float(rng.uniform(0, 200)), int(rng.integers(2))))
                for _ in range(int(rng.integers(0, 5))):
                    preds.append(pred(mid, float(rng.uniform(0, 200)),
                                      int(rng.integers(2)), float(rng.random())))
            report = average_map(preds, gts, deltas, 2)
            expected = oracle_map(
                [(p.match_id, p.seconds, p.label, p.confidence) for p in preds],
                [(g.match_id, g.seconds, g.label) for g in gts], 20.0, 2)
            assert report.map_curve[1] == expected


class TestTrapezoid:
    def test_flat_curve(self):
        assert trapezoid_mean([5.0, 10.0, 15.0], [0.5, 0.5, 0.5]) == pytest.approx(0.5)

    def test_step_curve(self):
        deltas = [float(d) for d in range(5, 61, 5)]
        values = [0.0] + [1.0] * 11
        assert trapezoid_mean(deltas, values) == pytest.approx(1.0 - 2.5 / 55.0)


class TestExportCurves:
    def _report(self):
        gts = [gt("m", 100.0, 0), gt("m", 200.0, 1), gt("m", 300.0, 2)]
        preds = [pred("m", 101.0, 0, 0.9), pred("m", 207.0, 1, 0.8)]
        return average_map(preds, gts, num_classes=3)

    def test_row_per_grid_point(self, tmp_path):
        report = self._report()
        paths = export_curves(report, tmp_path)
        lines = paths["map_curve"].read_text().strip().splitlines()
        assert len(lines) == 1 + 12

    def test_round_trip_reproduces_values(self, tmp_path):
        report = self._report()
        paths = export_curves(report, tmp_path)
        rows = read_map_curve(paths["map_curve"])
        assert [d for d, _ in rows] == report.deltas
        assert [v for _, v in rows] == report.map_curve

    def test_exported_map_column_monotone(self, tmp_path):
        report = self._report()
        paths = export_curves(report, tmp_path)
        rows = read_map_curve(paths["map_curve"])
        values = [v for _, v in rows]
        assert all(b >= a for a, b in zip(values, values[1:]))
