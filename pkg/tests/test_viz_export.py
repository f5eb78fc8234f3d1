import csv

import numpy as np
import pytest

from hypo.core_math import HyperParams
from hypo.datagen import sample_preferences
from hypo.metrics import ref_margin_stats
from hypo.objectives import ObjectiveKind
from hypo.trainer import LogEntry, RunLog
from hypo.viz_export import (
    GridSpec,
    export_curves,
    export_heatmap_csv,
    export_margin_histogram,
    read_heatmap_csv,
    read_margin_histogram,
    weight_heatmap,
)


class TestGrid:
    def test_axes(self):
        g = GridSpec((-1.0, 1.0, 5), (0.0, 2.0, 3))
        np.testing.assert_allclose(g.theta_axis, [-1, -0.5, 0, 0.5, 1])
        np.testing.assert_allclose(g.ref_axis, [0, 1, 2])

    @pytest.mark.parametrize("bad", [(1.0, 0.0, 5), (0.0, 1.0, 1), (0.0, 1.0, 2.5)])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            GridSpec(theta_range=bad)


class TestHeatmap:
    def test_orientation(self):
        g = GridSpec((-2.0, 2.0, 5), (-1.0, 1.0, 3))
        w = weight_heatmap(ObjectiveKind.DPO, HyperParams(beta=1.0), g)
        assert w.shape == (5, 3)
        # weight decreases down a column (larger delta_theta) and increases along a row
        assert (np.diff(w, axis=0) < 0).all()
        assert (np.diff(w, axis=1) > 0).all()

    def test_roundtrip(self, tmp_path):
        g = GridSpec((-3.0, 3.0, 7), (-2.0, 2.0, 9))
        w = weight_heatmap(ObjectiveKind.HYPO_SOFT, HyperParams(beta=1.0, alpha=10.0), g)
        theta, ref, back = read_heatmap_csv(export_heatmap_csv(w, g, tmp_path / "h.csv"))
        np.testing.assert_allclose(theta, g.theta_axis, rtol=1e-11)
        np.testing.assert_allclose(ref, g.ref_axis, rtol=1e-11)
        np.testing.assert_allclose(back, w, rtol=1e-11)

    def test_header(self, tmp_path):
        g = GridSpec((-1.0, 1.0, 2), (-1.0, 1.0, 2))
        path = export_heatmap_csv(np.zeros((2, 2)), g, tmp_path / "h.csv")
        assert path.read_text().splitlines()[0] == "delta_theta\\delta_ref,-1,1"

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            export_heatmap_csv(np.zeros((3, 3)), GridSpec((-1.0, 1.0, 2), (-1.0, 1.0, 2)), tmp_path / "h.csv")


class TestCurves:
    def test_long_format(self, tmp_path):
        log = RunLog("dpo-seed0")
        log.append(LogEntry(0, 0.0, 0.69, 0.5, None, 0.0))
        log.append(LogEntry(10, 0.01, 0.6, 0.6, -0.2, 1.0))
        with open(export_curves([log], tmp_path / "c.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        assert rows[0] == {"run_name": "dpo-seed0", "step": "0", "metric": "learning_rate", "value": "0"}
        pess = [r["value"] for r in rows if r["metric"] == "pessimistic_margin"]
        assert pess == ["", "-0.2"]

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            export_curves([], tmp_path / "c.csv")


class TestHistogram:
    def test_counts_and_footer(self, tmp_path, small_world):
        ds = sample_preferences(small_world, 400, seed=0)
        bins, footer = read_margin_histogram(
            export_margin_histogram(small_world.ref_policy, ds, 12, tmp_path / "m.csv"))
        assert len(bins) == 12
        assert sum(c for _, _, c in bins) == 400
        stats = ref_margin_stats(small_world.ref_policy, ds)
        for key in stats:
            assert footer[key] == pytest.approx(stats[key], rel=1e-11)
