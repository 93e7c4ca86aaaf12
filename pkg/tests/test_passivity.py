from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pdmlab.closedloop import integrate
from pdmlab.edm import best_response_set, bnn_protocol, logit_choice, logit_protocol, smith_protocol
from pdmlab.errors import InvalidArgumentError
from pdmlab.games import congestion_example, demand_response_example, task_allocation_example
from pdmlab.pdm import PdmModel, pdm_output
from pdmlab.passivity import (
    StorageFunction,
    affine_quadratic_antistorage,
    anticipatory_antistorage_scale,
    antistorage_eval,
    antistorage_for,
    certify,
    check_delta_antipassivity,
    check_delta_passivity,
    check_storage_gradient,
    lambda_star,
    legendre_antistorage,
    memoryless_deficit,
    pbr_surplus_bound,
    quadratic_potential,
    storage_eval,
    storage_for,
    zero_antistorage,
)

CONGESTION_M = np.array([[-3.0, 0.0, -1.0], [0.0, -2.0, -1.0], [-1.0, -1.0, -3.0]])
STORAGES = [StorageFunction("bnn"), StorageFunction("smith"), StorageFunction("pbr_logit", eta=0.8)]

payoffs = arrays(np.float64, 3, elements=st.floats(-5, 5))


@st.composite
def states(draw):
    w = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3)))
    return w / w.sum() if w.sum() > 1e-6 else np.full(3, 1 / 3)


class TestStorageExamples:
    def test_bnn_values(self):
        assert storage_eval(StorageFunction("bnn"), [1, 0, 0], [1, 0, 0]) == 0
        assert storage_eval(StorageFunction("bnn"), [0, 1, 0], [1, 0, 0]) == pytest.approx(0.5)

    def test_logit_zero_at_uniform(self):
        assert abs(storage_eval(StorageFunction("pbr_logit", eta=1.0), [1 / 3] * 3, [0, 0, 0])) < 1e-14

    def test_smith_closed_form(self):
        z = np.array([0.2, 0.3, 0.5])
        r = np.array([1.0, -0.5, 2.0])
        d = np.maximum(r[None, :] - r[:, None], 0)
        assert storage_eval(StorageFunction("smith"), z, r) == pytest.approx(0.5 * np.sum(z[:, None] * d**2))

    def test_numeric_kinds_match_closed_forms(self):
        bnn, smith = bnn_protocol(3), smith_protocol(3)
        sep = StorageFunction("separable_ept", scalar_maps=bnn.scalar_maps)
        ipc = StorageFunction("ipc_numeric", scalar_maps=smith.scalar_maps)
        rng = np.random.default_rng(4)
        for _ in range(10):
            z, r = rng.dirichlet(np.ones(3)), rng.normal(size=3)
            assert storage_eval(sep, z, r) == pytest.approx(storage_eval(StorageFunction("bnn"), z, r), abs=1e-9)
            assert storage_eval(ipc, z, r) == pytest.approx(storage_eval(StorageFunction("smith"), z, r), abs=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgumentError):
            StorageFunction("nope")

    def test_logit_boundary_state(self):
        value = storage_eval(StorageFunction("pbr_logit", eta=1.0), [1, 0, 0], [0, 0, 0])
        assert np.isfinite(value) and value == pytest.approx(np.log(3))


class TestStorageInvariants:
    @settings(max_examples=300)
    @given(states(), payoffs, st.sampled_from(STORAGES))
    def test_nonnegative(self, z, r, sf):
        assert storage_eval(sf, z, r) >= -1e-9

    @settings(max_examples=200)
    @given(states(), payoffs, st.floats(-20, 20), st.sampled_from(STORAGES))
    def test_shift_invariance(self, z, r, c, sf):
        assert storage_eval(sf, z, r + c) == pytest.approx(storage_eval(sf, z, r), abs=1e-9)

    @pytest.mark.parametrize("sf", STORAGES[:2], ids=["bnn", "smith"])
    def test_informative(self, sf):
        positive = [([1, 0, 0], [1, 0, 0]), ([0.5, 0.5, 0], [2, 2, 0]), ([0.3, 0.3, 0.4], [1, 1, 1])]
        negative = [([0, 1, 0], [1, 0, 0]), ([0.5, 0.5, 0], [2, 1.9, 0]), ([0.3, 0.3, 0.4], [1, 1, 0.999])]
        for z, r in positive + negative:
            z, r = np.array(z, float), np.array(r, float)
            at_best = set(np.flatnonzero(z > 0)) <= best_response_set(r)
            assert (storage_eval(sf, z, r) <= 1e-9) == at_best

    @settings(max_examples=200)
    @given(payoffs, st.floats(0.0, 1.0))
    def test_logit_informative(self, r, lam):
        eta = 0.8
        sf = StorageFunction("pbr_logit", eta=eta)
        target = logit_choice(r, eta)
        z = (1 - lam) * target + lam * np.full(3, 1 / 3)
        near = np.max(np.abs(z - target)) <= 1e-6
        small = storage_eval(sf, z, r) <= 1e-9
        if near:
            assert small
        if not small:
            assert not near
        if np.max(np.abs(z - target)) > 1e-3:
            assert not small

    @pytest.mark.parametrize("proto", [bnn_protocol(3), smith_protocol(3), logit_protocol(3, 1.0)], ids=lambda p: p.name)
    def test_gradient_identity(self, proto):
        rep = check_storage_gradient(storage_for(proto), proto, samples=200)
        assert rep.passed, rep.max_violation


class TestAntistorage:
    def test_zero(self):
        assert antistorage_eval(zero_antistorage(), [0.2, 0.3, 0.5], [9, 9, 9]) == 0

    def test_affine_zero_at_stationary(self):
        g = congestion_example()
        af = affine_quadratic_antistorage(g.matrix, g.offset)
        z = np.array([0.2, 0.3, 0.5])
        assert abs(antistorage_eval(af, z, g(z))) < 1e-14

    def test_affine_value_against_linear_solve(self):
        g = congestion_example()
        af = affine_quadratic_antistorage(g.matrix, g.offset)
        v = np.array([-3.0, 0.0, -1.0])
        expected = -v @ np.linalg.solve(CONGESTION_M, v)
        assert expected > 0
        assert antistorage_eval(af, [1, 0, 0], np.zeros(3)) == pytest.approx(expected)

    def test_affine_needs_negative_definite(self):
        with pytest.raises(InvalidArgumentError):
            affine_quadratic_antistorage(np.eye(3), np.zeros(3))

    def test_legendre_closed_form_equals_half_alpha_quadratic(self):
        g = demand_response_example()
        alpha = 2.5
        L = legendre_antistorage(alpha, g.matrix, g.offset)
        Q = affine_quadratic_antistorage(g.matrix, g.offset, alpha / 2)
        rng = np.random.default_rng(5)
        for _ in range(20):
            z, s = rng.dirichlet(np.ones(3)), rng.normal(size=3) - 2
            assert antistorage_eval(L, z, s) == pytest.approx(antistorage_eval(Q, z, s), rel=1e-10, abs=1e-12)

    def test_legendre_numeric_fallback(self):
        g = demand_response_example()
        f, fg = quadratic_potential(g.matrix, g.offset)
        exact = legendre_antistorage(1.0, g.matrix, g.offset)
        numeric = legendre_antistorage(1.0, potential=f, potential_grad=fg, box=1.0)
        z = np.array([0.2, 0.3, 0.5])
        for s in (g(z) + 0.01, g(np.array([0.3, 0.3, 0.4]))):
            assert antistorage_eval(numeric, z, s) == pytest.approx(antistorage_eval(exact, z, s), abs=1e-8)

    @pytest.mark.parametrize("alpha,mu2", [(1.0, 5.0), (0.3, 1.0), (2.0, 0.5)])
    def test_anticipatory_scale_in_valid_interval(self, alpha, mu2):
        pdm = PdmModel.anticipatory(congestion_example(), alpha, mu2)
        c = anticipatory_antistorage_scale(pdm)
        g = pdm.output_gain
        assert (2 * c + alpha * (g - 1)) ** 2 <= 8 * c * alpha * g + 1e-12

    def test_smoothing_scale_is_half_alpha(self):
        assert anticipatory_antistorage_scale(PdmModel.smoothing(congestion_example(), 3.0)) == 1.5

    def test_antistorage_for(self):
        assert antistorage_for(PdmModel.memoryless(task_allocation_example())).kind == "zero_memoryless"
        assert antistorage_for(PdmModel.smoothing(congestion_example(), 1.0)).kind == "affine_quadratic"
        assert antistorage_for(PdmModel.smoothing(task_allocation_example(), 1.0)) is None

    @settings(max_examples=200)
    @given(states(), arrays(np.float64, 3, elements=st.floats(-1, 1)), st.one_of(st.just(0.0), st.floats(1e-3, 2.0)))
    def test_zero_set_matches_stationarity(self, z, direction, size):
        g = congestion_example()
        pdm = PdmModel.anticipatory(g, 1.0, 5.0)
        af = antistorage_for(pdm)
        norm = np.max(np.abs(direction))
        offset = 0.0 if norm == 0 else size * direction / norm
        s = g(z) + offset
        L = antistorage_eval(af, z, s)
        assert L >= -1e-9
        stationary = np.max(np.abs(pdm_output(pdm, s, z) - g(z))) <= 1e-8
        assert (abs(L) <= 1e-12) == stationary


class TestCertificates:
    def test_lambda_star_examples(self):
        assert lambda_star(np.zeros((3, 3))) == 0
        assert lambda_star(np.eye(3)) == pytest.approx(1.0)
        assert abs(lambda_star(CONGESTION_M)) <= 1e-10

    @settings(max_examples=50)
    @given(arrays(np.float64, 3, elements=st.floats(-5, 5)))
    def test_lambda_star_ignores_ones_direction(self, w):
        ones = np.ones(3)
        shifted = CONGESTION_M + np.outer(ones, w) + np.outer(w, ones)
        assert lambda_star(shifted) == pytest.approx(lambda_star(CONGESTION_M), abs=1e-9)

    def test_lambda_star_asymmetric_rejected(self):
        with pytest.raises(InvalidArgumentError):
            lambda_star(np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 0]], float))

    def test_deficits(self):
        assert memoryless_deficit(congestion_example()) == 0
        assert memoryless_deficit(demand_response_example()) == 0
        assert 24.5 < memoryless_deficit(task_allocation_example()) < 25

    def test_surplus_bounds(self):
        assert pbr_surplus_bound(1.0, 50) >= 1
        assert pbr_surplus_bound(25.0) >= 25
        assert pbr_surplus_bound(25.0) > memoryless_deficit(task_allocation_example())
        assert pbr_surplus_bound(50.0) == pytest.approx(2 * pbr_surplus_bound(25.0))

    def test_certify_theorems(self):
        c1 = certify(PdmModel.memoryless(congestion_example()), bnn_protocol(3))
        assert (c1["theorem_applied"], c1["conclusion"]) == ("Thm1", "GAS")
        c2 = certify(PdmModel.smoothing(demand_response_example(), 1.0), smith_protocol(3))
        assert (c2["theorem_applied"], c2["conclusion"]) == ("Thm2", "GAS")
        c3 = certify(PdmModel.memoryless(task_allocation_example()), logit_protocol(3, 25.0))
        assert c3["theorem_applied"] == "Thm3-II"
        assert c3["conclusion"] in ("GAS", "globally_attractive")
        assert c3["surplus_bound"] > c3["deficit"]

    def test_certify_inconclusive(self):
        c = certify(PdmModel.memoryless(task_allocation_example()), smith_protocol(3))
        assert (c["theorem_applied"], c["conclusion"], c["lyapunov_stability"]) == ("none", "inconclusive", "not claimed")
        c = certify(PdmModel.memoryless(task_allocation_example()), logit_protocol(3, 1.0))
        assert c["theorem_applied"] == "none"


class TestTrajectoryChecks:
    def test_bnn_memoryless_congestion(self):
        tr = integrate(PdmModel.memoryless(congestion_example()), bnn_protocol(3), [0.8, 0.1, 0.1], T=20.0)
        assert check_delta_passivity(tr, StorageFunction("bnn")).passed
        assert check_delta_antipassivity(tr, zero_antistorage()).passed

    def test_smith_smoothing_demand_response(self):
        pdm = PdmModel.smoothing(demand_response_example(), 1.0)
        tr = integrate(pdm, smith_protocol(3), [1, 0, 0], T=20.0)
        assert check_delta_passivity(tr, StorageFunction("smith")).passed
        assert check_delta_antipassivity(tr, antistorage_for(pdm)).passed

    def test_smoothing_congestion_quadratic_antistorage(self):
        pdm = PdmModel.smoothing(congestion_example(), 1.0)
        tr = integrate(pdm, bnn_protocol(3), [0.1, 0.1, 0.8], [0.0, 0.0, 0.0], T=20.0)
        assert check_delta_antipassivity(tr, antistorage_for(pdm), 0.0).passed

    def test_logit_task_allocation_with_surplus(self):
        tr = integrate(PdmModel.memoryless(task_allocation_example()), logit_protocol(3, 25.0), [0.7, 0.2, 0.1], T=20.0)
        assert check_delta_passivity(tr, StorageFunction("pbr_logit", eta=25.0), pbr_surplus_bound(25.0)).passed
        assert check_delta_antipassivity(tr, zero_antistorage(), memoryless_deficit(task_allocation_example())).passed

    def test_violation_detected(self):
        # a growing-payoff loop is not antipassive with zero deficit
        tr = integrate(PdmModel.memoryless(task_allocation_example()), smith_protocol(3), [0.18, 0.18, 0.64], T=5.0)
        rep = check_delta_antipassivity(tr, zero_antistorage(), 0.0)
        assert not rep.passed and rep.max_violation > rep.tolerance

    def test_missing_derivatives(self):
        tr = integrate(PdmModel.memoryless(congestion_example()), bnn_protocol(3), [0.8, 0.1, 0.1], T=1.0)
        tr.pdot = None
        with pytest.raises(InvalidArgumentError):
            check_delta_passivity(tr, StorageFunction("bnn"))
