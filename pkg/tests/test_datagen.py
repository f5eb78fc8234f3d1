import math

import numpy as np
import pytest

from hypo.datagen import (
    PreferenceDataset,
    SyntheticWorld,
    WorldConfig,
    build_world,
    calibrate_pessimism,
    config_hash,
    exhaustive_pairs,
    pessimism_fraction,
    probe_pessimism,
    sample_preferences,
)
from hypo.errors import CalibrationError, DomainError, ParameterError


class TestWorld:
    def test_deterministic(self):
        a = build_world(5, 4, 0.7, seed=3)
        b = build_world(5, 4, 0.7, seed=3)
        np.testing.assert_array_equal(a.true_reward, b.true_reward)
        np.testing.assert_array_equal(a.ref_policy.logits(), b.ref_policy.logits())

    def test_aligned_reference_is_gibbs_of_reward(self):
        w = build_world(3, 5, 0.0, seed=1)
        expected = np.exp(w.true_reward)
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(w.ref_policy.probs(), expected, rtol=1e-12)

    def test_shared_rewards_across_misalignment(self):
        a = build_world(4, 4, 0.0, seed=9)
        b = build_world(4, 4, 5.0, seed=9)
        np.testing.assert_array_equal(a.true_reward, b.true_reward)

    @pytest.mark.parametrize("kwargs", [
        {"n_responses": 1}, {"n_prompts": 0}, {"n_responses": 65},
        {"ref_misalignment": -1.0}, {"ref_temperature": 0.0},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(ParameterError):
            WorldConfig(**kwargs)

    def test_save_load(self, tmp_path, small_world):
        loaded = SyntheticWorld.load(small_world.save(tmp_path / "w.json"))
        np.testing.assert_array_equal(loaded.true_reward, small_world.true_reward)
        np.testing.assert_array_equal(loaded.ref_policy.logits(), small_world.ref_policy.logits())
        assert loaded.config == small_world.config

    def test_config_hash_stable(self):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
        assert len(config_hash({})) == 16


class TestSampling:
    def test_seeded(self, small_world):
        a = sample_preferences(small_world, 300, 0.1, seed=4)
        b = sample_preferences(small_world, 300, 0.1, seed=4)
        assert a.records == b.records

    def test_pairs_are_distinct_and_margins_cached(self, small_world):
        ds = sample_preferences(small_world, 500, seed=0)
        assert (ds.chosen_ids != ds.rejected_ids).all()
        np.testing.assert_array_equal(
            ds.ref_margins, small_world.ref_policy.margins(ds.prompt_ids, ds.chosen_ids, ds.rejected_ids))

    def test_bradley_terry_rate(self):
        # two responses with reward gap 1: P(better chosen) = sigmoid(1)
        world = SyntheticWorld.from_rewards(np.array([[1.0, 0.0]]))
        ds = sample_preferences(world, 200_000, seed=7)
        rate = np.mean(ds.chosen_ids == 0)
        assert rate == pytest.approx(0.73105857863000488, abs=4 * math.sqrt(0.2 / 200_000))

    def test_label_noise_rate(self):
        world = SyntheticWorld.from_rewards(np.array([[50.0, 0.0]]))
        ds = sample_preferences(world, 100_000, label_noise=0.2, seed=1)
        assert np.mean(ds.chosen_ids == 1) == pytest.approx(0.2, abs=0.006)

    def test_clean_orders_by_reward(self, small_world):
        ds = sample_preferences(small_world, 1000, seed=2, clean=True)
        r = small_world.true_reward
        assert (r[ds.prompt_ids, ds.chosen_ids] > r[ds.prompt_ids, ds.rejected_ids]).all()

    def test_bad_arguments(self, small_world):
        with pytest.raises(ParameterError):
            sample_preferences(small_world, 0)
        with pytest.raises(ParameterError):
            sample_preferences(small_world, 10, label_noise=1.0)


class TestDataset:
    def test_rejects_identical_pair(self):
        with pytest.raises(ValueError):
            PreferenceDataset([0], [1], [1], [0.0])

    def test_rejects_nan_margin(self):
        with pytest.raises(DomainError):
            PreferenceDataset([0], [0], [1], [np.nan])

    def test_split_sizes_and_disjoint(self, small_world):
        ds = sample_preferences(small_world, 1000, seed=0)
        train, ev = ds.train_eval_split(5)
        assert (len(train), len(ev)) == (900, 100)
        assert train.split == "train" and ev.split == "eval"
        assert sorted(train.records + ev.records) == sorted(ds.records)

    def test_jsonl_roundtrip(self, tmp_path, small_world):
        ds = sample_preferences(small_world, 50, seed=0)
        path = ds.save(tmp_path / "d.jsonl")
        back = PreferenceDataset.load(path)
        assert back.records == ds.records
        assert back.meta == ds.meta
        assert path.read_bytes() == back.save(tmp_path / "e.jsonl").read_bytes()

    def test_load_checks_count(self, tmp_path, small_world):
        path = sample_preferences(small_world, 5, seed=0).save(tmp_path / "d.jsonl")
        path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
        with pytest.raises(ParameterError):
            PreferenceDataset.load(path)

    def test_swapped_negates_margins(self, small_world):
        ds = sample_preferences(small_world, 40, seed=0)
        sw = ds.swapped()
        np.testing.assert_array_equal(sw.ref_margins, -ds.ref_margins)
        np.testing.assert_array_equal(sw.chosen_ids, ds.rejected_ids)


class TestExhaustive:
    def test_weights_pair_up(self, small_world):
        ds = exhaustive_pairs(small_world)
        n_p, n_r = small_world.n_prompts, small_world.n_responses
        assert len(ds) == n_p * n_r * (n_r - 1)
        key = {(x, c, r): w for (x, c, r, _), w in zip(ds.records, ds.weights)}
        for (x, c, r), w in key.items():
            assert w + key[(x, r, c)] == pytest.approx(1.0, abs=1e-15)


class TestPessimism:
    def test_aligned_clean_world_has_none(self):
        w = build_world(16, 8, 0.0, seed=0)
        assert probe_pessimism(w, seed=1, probe_pairs=2000) == 0.0

    @pytest.mark.parametrize("m", [0.5, 1.0, 3.0])
    def test_matches_arctan_law(self, m):
        # clean pairs, reward and noise gaps both N(0, 2): P(flip) = arctan(m) / pi
        fracs = [probe_pessimism(build_world(64, 64, m, seed=s), seed=100 + s, probe_pairs=20_000)
                 for s in range(4)]
        assert np.mean(fracs) == pytest.approx(math.atan(m) / math.pi, abs=0.015)

    def test_empty(self, small_world):
        ds = sample_preferences(small_world, 10, seed=0).subset([])
        with pytest.raises(ValueError):
            pessimism_fraction(ds, small_world.ref_policy)

    def test_calibration_hits_target(self):
        world = calibrate_pessimism(WorldConfig(32, 8), 0.3, 0.02, seed=0)
        assert probe_pessimism(world, seed=1) == pytest.approx(0.3, abs=0.02)

    def test_calibration_unreachable(self):
        with pytest.raises(CalibrationError) as info:
            calibrate_pessimism(WorldConfig(8, 4), 0.95, 0.01, seed=0, bounds=(0.0, 5.0))
        assert 0.0 <= info.value.best_fraction <= 1.0
