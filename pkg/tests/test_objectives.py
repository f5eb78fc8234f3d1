import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypo.core_math import HyperParams, MarginPair
from hypo.errors import DomainError, ParameterError
from hypo.objectives import (
    ObjectiveKind,
    absolute_loss,
    attenuation_bound,
    batch_loss,
    batch_terms,
    dpo_loss,
    dpo_plus_sft_loss,
    evaluate,
    hypo_loss,
)

mpmath = pytest.importorskip("mpmath")

margins = st.floats(-20, 20, allow_nan=False, allow_infinity=False)
betas = st.floats(0.01, 5, allow_nan=False, allow_infinity=False)


def mp_loss(arg, beta):
    with mpmath.workdps(50):
        return float(mpmath.log1p(mpmath.exp(-mpmath.mpf(beta) * mpmath.mpf(arg))))


def mp_weight(arg, beta):
    with mpmath.workdps(50):
        return float(1 / (1 + mpmath.exp(mpmath.mpf(beta) * mpmath.mpf(arg))))


class TestDPO:
    def test_on_policy_start(self):
        out = dpo_loss(MarginPair(0.0, 0.0), HyperParams(beta=0.1))
        assert out.loss == pytest.approx(math.log(2), abs=1e-15)
        assert out.weight == 0.5

    def test_worked_example(self):
        out = dpo_loss(MarginPair(1.0, 0.0), HyperParams(beta=0.1))
        assert out.loss == pytest.approx(0.64439666007357089, rel=1e-14)
        assert out.loss == pytest.approx(mp_loss(1.0, 0.1), rel=1e-14)

    def test_premature_satisfaction(self):
        # dtheta < 0 yet the pair looks "won" because dref is lower still
        out = dpo_loss(MarginPair(-1.0, -3.0), HyperParams(beta=1.0))
        assert out.weight == pytest.approx(0.11920292202211755, rel=1e-14)
        assert out.weight < 0.5

    def test_h_shifts_argument(self):
        hp = HyperParams(beta=0.5, h=0.4)
        assert dpo_loss(MarginPair(1.4, 0.0), hp).loss == pytest.approx(
            dpo_loss(MarginPair(1.0, 0.0), HyperParams(beta=0.5)).loss, rel=1e-14)

    @given(margins, margins, betas)
    def test_matches_extended_precision(self, dt, dr, beta):
        out = dpo_loss(MarginPair(dt, dr), HyperParams(beta=beta))
        assert out.loss == pytest.approx(mp_loss(dt - dr, beta), rel=1e-12, abs=1e-300)
        assert out.weight == pytest.approx(mp_weight(dt - dr, beta), rel=1e-12, abs=1e-300)

    @given(margins, margins, betas)
    def test_loss_nonnegative_weight_in_unit_interval(self, dt, dr, beta):
        out = dpo_loss(MarginPair(dt, dr), HyperParams(beta=beta))
        assert out.loss >= 0.0
        assert 0.0 <= out.weight <= 1.0


class TestRefFree:
    def test_worked_example(self):
        out = absolute_loss(6.0, HyperParams(beta=1.0))
        assert out.loss == pytest.approx(0.0024756851377304495, rel=1e-14)
        assert out.effective_ref_margin == 0.0

    @given(margins, margins, betas)
    def test_equals_dpo_with_zero_ref(self, dt, dr, beta):
        hp = HyperParams(beta=beta)
        assert absolute_loss(dt, hp) == dpo_loss(MarginPair(dt, 0.0), hp)

    def test_rejects_nan(self):
        with pytest.raises(DomainError):
            absolute_loss(math.nan, HyperParams())


class TestHyPO:
    def test_pessimistic_pair_uses_threshold(self):
        hp = HyperParams(beta=1.0, gamma=0.0)
        out = hypo_loss(MarginPair(-1.0, -3.0), hp)
        assert out.effective_ref_margin == 0.0
        assert out.weight == pytest.approx(0.73105857863000488, rel=1e-14)

    @given(margins, st.floats(0, 20), betas)
    def test_optimistic_pairs_match_dpo(self, dt, dr, beta):
        hp = HyperParams(beta=beta, gamma=0.0)
        assert hypo_loss(MarginPair(dt, dr), hp) == dpo_loss(MarginPair(dt, dr), hp)

    @given(margins, margins, betas)
    def test_never_easier_than_dpo(self, dt, dr, beta):
        hp = HyperParams(beta=beta)
        pair = MarginPair(dt, dr)
        assert hypo_loss(pair, hp).loss >= dpo_loss(pair, hp).loss
        assert hypo_loss(pair, hp).weight >= dpo_loss(pair, hp).weight

    @given(margins, margins, betas, st.floats(0.5, 50))
    def test_soft_clip_dominates_hard(self, dt, dr, beta, alpha):
        hp = HyperParams(beta=beta, alpha=alpha)
        pair = MarginPair(dt, dr)
        soft, hard = hypo_loss(pair, hp, hard=False), hypo_loss(pair, hp, hard=True)
        assert soft.effective_ref_margin >= hard.effective_ref_margin
        assert soft.effective_ref_margin - hard.effective_ref_margin <= math.log(2) / alpha + 1e-12
        assert soft.loss >= hard.loss - 1e-15

    def test_soft_requires_alpha(self):
        with pytest.raises(ParameterError):
            hypo_loss(MarginPair(0.0, 0.0), HyperParams(), hard=False)

    def test_h_subtracts(self):
        hp = HyperParams(beta=1.0, h=1.0)
        out = hypo_loss(MarginPair(1.0, -3.0), hp)
        assert out.loss == pytest.approx(math.log(2), rel=1e-15)


class TestDPOPlusSFT:
    def test_zero_lambda_is_dpo(self):
        pair = MarginPair(0.3, -0.2)
        hp = HyperParams(beta=0.7)
        assert dpo_plus_sft_loss(pair, -1.5, hp) == dpo_loss(pair, hp)

    def test_adds_nll(self):
        pair = MarginPair(0.3, -0.2)
        hp = HyperParams(beta=0.7, lambda_sft=0.25)
        out = dpo_plus_sft_loss(pair, -1.5, hp)
        assert out.loss == pytest.approx(dpo_loss(pair, hp).loss + 0.375, rel=1e-15)
        assert out.weight == dpo_loss(pair, hp).weight

    def test_rejects_positive_logp(self):
        with pytest.raises(DomainError):
            dpo_plus_sft_loss(MarginPair(0, 0), 0.1, HyperParams(lambda_sft=1.0))


class TestAttenuation:
    @pytest.mark.parametrize("z", [0.0, 0.5, 1.0, 2.0, 10.0, 50.0])
    def test_bound_holds(self, z):
        with mpmath.workdps(50):
            exact_weight = 1 / (1 + mpmath.exp(z))
            assert exact_weight <= mpmath.exp(-z)
        # float bound may round onto the weight when the two agree to an ulp
        assert float(exact_weight) <= attenuation_bound(z) * (1 + 1e-15)

    def test_bound_is_tight_for_large_z(self):
        with mpmath.workdps(50):
            ratio = float(mpmath.exp(-10) / (1 / (1 + mpmath.exp(10))))
        assert ratio == pytest.approx(4.5399929762484852e-5 / 4.5397868702434395e-5, rel=1e-14)
        assert attenuation_bound(10.0) == pytest.approx(4.5399929762484852e-5, rel=1e-14)


class TestEvaluate:
    @pytest.mark.parametrize("kind", [k for k in ObjectiveKind if k is not ObjectiveKind.DPO_PLUS_SFT])
    def test_rejects_stray_logp(self, kind):
        with pytest.raises(ParameterError):
            evaluate(kind, MarginPair(0, 0), -1.0, HyperParams(alpha=1.0))

    def test_sft_requires_logp(self):
        with pytest.raises(ParameterError):
            evaluate(ObjectiveKind.DPO_PLUS_SFT, MarginPair(0, 0), None, HyperParams())

    def test_string_kind(self):
        assert evaluate("dpo", MarginPair(1, 0), None, HyperParams()) == dpo_loss(MarginPair(1, 0), HyperParams())


class TestBatch:
    @pytest.mark.parametrize("kind", list(ObjectiveKind))
    def test_matches_scalar_path(self, kind, rng):
        hp = HyperParams(beta=0.8, gamma=0.2, alpha=3.0, h=0.1)
        dt = rng.normal(0, 3, 200)
        dr = rng.normal(0, 3, 200)
        loss, weight, eff = batch_terms(kind, dt, dr, hp)
        logp = -1.0 if kind is ObjectiveKind.DPO_PLUS_SFT else None
        for i in range(200):
            ref = evaluate(kind, MarginPair(dt[i], dr[i]), logp, hp)
            assert weight[i] == pytest.approx(ref.weight, rel=1e-13, abs=1e-300)
            assert eff[i] == pytest.approx(ref.effective_ref_margin, rel=1e-13, abs=1e-15)
            if logp is None:
                assert loss[i] == pytest.approx(ref.loss, rel=1e-13)

    def test_shape_preserved(self):
        loss, weight, eff = batch_terms("dpo", np.zeros((3, 4)), np.ones((3, 4)), HyperParams())
        assert loss.shape == weight.shape == eff.shape == (3, 4)

    def test_rejects_nan(self):
        with pytest.raises(DomainError):
            batch_terms("dpo", [0.0, np.nan], [0.0, 0.0], HyperParams())

    def test_weighted_mean(self):
        hp = HyperParams(beta=1.0)
        loss, _, _ = batch_terms("dpo", [0.0, 2.0], [0.0, 0.0], hp)
        got = batch_loss("dpo", [0.0, 2.0], [0.0, 0.0], hp, weights=[1.0, 3.0])
        assert got == pytest.approx((loss[0] + 3 * loss[1]) / 4, rel=1e-15)

    def test_sft_batch(self):
        hp = HyperParams(beta=1.0, lambda_sft=2.0)
        got = batch_loss("dpo_sft", [0.0], [0.0], hp, logp_chosen=[-0.5])
        assert got == pytest.approx(math.log(2) + 1.0, rel=1e-15)
