import csv

import numpy as np
import pytest

from hypo.datagen import PreferenceDataset, SyntheticWorld
from hypo.metrics import (
    agreement_rate,
    pessimistic_margin,
    ref_margin_stats,
    reports_to_csv,
    reports_to_jsonl,
    win_matrix,
    win_matrix_to_csv,
)
from hypo.policies import TabularPolicy


@pytest.fixture
def toy():
    # one prompt, four responses; the policy margins are fixed by the logits
    policy = TabularPolicy(np.array([[3.0, 2.0, 1.0, 1.0]]))
    ds = PreferenceDataset(
        prompt_ids=[0, 0, 0, 0],
        chosen_ids=[0, 1, 3, 2],
        rejected_ids=[1, 0, 2, 3],
        ref_margins=[-1.0, 0.5, -2.0, 0.0],
    )
    return policy, ds


class TestAgreement:
    def test_ties_count_as_misses(self, toy):
        policy, ds = toy
        # margins: +1, -1, 0, 0
        rep = agreement_rate(policy, ds, step=7)
        assert rep.agree_rate == 0.25
        assert (rep.step, rep.n_pairs) == (7, 4)

    def test_empty(self, toy):
        policy, ds = toy
        with pytest.raises(ValueError):
            agreement_rate(policy, ds.subset([]))


class TestPessimisticMargin:
    def test_subset_from_cache(self, toy):
        policy, ds = toy
        rep = pessimistic_margin(policy, ds)
        # records 0 and 2 have negative cached reference margins; margins +1 and 0
        assert rep.subset_size == 2
        assert rep.mean_margin == pytest.approx(0.5)

    def test_zero_reference_margin_excluded(self, toy):
        policy, ds = toy
        rep = pessimistic_margin(policy, ds.subset([3]))
        assert rep.mean_margin is None and rep.subset_size == 0

    def test_membership_ignores_current_policy(self, toy):
        policy, ds = toy
        flipped = TabularPolicy(-policy.logits())
        assert pessimistic_margin(flipped, ds).subset_size == 2


class TestRefStats:
    def test_lower_median(self):
        ref = TabularPolicy(np.array([[0.0, 1.0, 3.0, 6.0]]))
        ds = PreferenceDataset([0] * 4, [1, 2, 3, 0], [0, 0, 0, 3], [0.0] * 4)
        stats = ref_margin_stats(ref, ds)
        # margins 1, 3, 6, -6 -> sorted -6, 1, 3, 6; lower median 1
        assert stats["median"] == 1.0
        assert stats["mean"] == pytest.approx(1.0)
        assert stats["fraction_pessimistic"] == 0.25


class TestWinMatrix:
    def _world(self):
        return SyntheticWorld.from_rewards(np.array([[0.0, 1.0, 2.0], [2.0, 1.0, 0.0]]))

    def test_greedy_entries(self):
        world = self._world()
        best = TabularPolicy(np.array([[0.0, 0.0, 5.0], [5.0, 0.0, 0.0]]))
        worst = TabularPolicy(np.array([[5.0, 0.0, 0.0], [0.0, 0.0, 5.0]]))
        wm = win_matrix({"best": best, "worst": worst, "best2": best.copy()}, world, 200)
        assert wm.entries[0, 1] == 100.0 and wm.entries[1, 0] == 0.0
        assert wm.entries[0, 2] == 50.0 and wm.tie_mass[0, 2] == 100.0
        assert wm.strict_wins[0, 2] == 0.0
        assert np.isnan(np.diag(wm.entries)).all()

    def test_complementary(self, rng):
        world = self._world()
        pols = [(f"p{i}", TabularPolicy(rng.normal(size=(2, 3)))) for i in range(3)]
        for mode in ("greedy", "sampled"):
            wm = win_matrix(pols, world, 500, mode=mode, seed=3)
            off = ~np.eye(3, dtype=bool)
            np.testing.assert_allclose((wm.entries + wm.entries.T)[off], 100.0)

    def test_sampled_is_seeded(self, rng):
        world = self._world()
        pols = [("a", TabularPolicy(rng.normal(size=(2, 3)))), ("b", TabularPolicy.uniform(2, 3))]
        a = win_matrix(pols, world, 300, mode="sampled", seed=1)
        b = win_matrix(pols, world, 300, mode="sampled", seed=1)
        np.testing.assert_array_equal(a.entries, b.entries)

    def test_sampled_rate_matches_probabilities(self):
        world = SyntheticWorld.from_rewards(np.array([[1.0, 0.0]]))
        p = TabularPolicy(np.log(np.array([[0.7, 0.3]])))
        q = TabularPolicy(np.log(np.array([[0.5, 0.5]])))
        wm = win_matrix([("p", p), ("q", q)], world, 100_000, mode="sampled", seed=0)
        # P(p wins) + P(tie)/2 = 0.35 + (0.35 + 0.15)/2 = 0.6
        assert wm.entries[0, 1] == pytest.approx(60.0, abs=0.7)

    def test_validation(self):
        world = self._world()
        pol = TabularPolicy.uniform(2, 3)
        with pytest.raises(ValueError):
            win_matrix([("a", pol)], world, 10)
        with pytest.raises(ValueError):
            win_matrix([("a", pol), ("b", pol)], world, 10, mode="beam")
        with pytest.raises(ValueError):
            win_matrix([("a", pol), ("b", TabularPolicy.uniform(2, 4))], world, 10)


class TestExport:
    def test_reports(self, tmp_path, toy):
        policy, ds = toy
        reps = [pessimistic_margin(policy, ds, 0), pessimistic_margin(policy, ds.subset([3]), 5)]
        lines = reports_to_jsonl(reps, tmp_path / "r.jsonl").read_text().splitlines()
        assert len(lines) == 2 and '"mean_margin": null' in lines[1]
        with open(reports_to_csv(reps, tmp_path / "r.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert rows[1]["mean_margin"] == ""

    def test_win_csv(self, tmp_path):
        world = SyntheticWorld.from_rewards(np.array([[0.0, 1.0]]))
        wm = win_matrix([("a", TabularPolicy.uniform(1, 2)), ("b", TabularPolicy.uniform(1, 2))], world, 10)
        with open(win_matrix_to_csv(wm, tmp_path / "w.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert [(r["row"], r["column"]) for r in rows] == [("a", "b"), ("b", "a")]
        assert float(rows[0]["win_rate_pct"]) == 50.0
