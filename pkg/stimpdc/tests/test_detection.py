from itertools import combinations

import numpy as np
import pytest

from stimpdc import detection as dt
from stimpdc import state_engine as se


def truncated_state(tau, tail_tol=None):
    tail_tol = tail_tol or se.default_tail_tol(tau)
    return se.build_pdc_state(tau, se.select_n_max(tau, tail_tol))


@pytest.fixture()
def state_08():
    return truncated_state(0.8)


def test_click_probability_single():
    assert dt.click_probability_single(0, 0.3) == 0
    assert dt.click_probability_single(5, 1.0) == 1
    assert dt.click_probability_single(3, 0.5) == 0.875


def test_efficiencies():
    etas = dt.Efficiencies.from_values([0.1, 0.2, 0.3, 0.4])
    assert etas.eta_bh == 0.3
    assert np.all(dt.Efficiencies.from_values(0.02).as_array() == 0.02)
    with pytest.raises(ValueError):
        dt.Efficiencies.uniform(1.2)
    with pytest.raises(ValueError):
        dt.Efficiencies.from_values([0.1, 0.2])


def test_pattern_masks():
    assert dt.pattern_index("1001") == 9
    assert dt.pattern_mask(6) == "0110"
    with pytest.raises(ValueError):
        dt.pattern_index("12ab")


def test_vacuum_never_clicks():
    distribution = dt.click_distribution(se.build_pdc_state(0, 3), 0.5)
    assert distribution["0000"] == 1


def test_single_pair_perfect_detection():
    # |1>_ah |1>_bv
    state = se.PairBlockState(
        n_max=1,
        blocks=(np.zeros((1, 1), complex), np.array([[1, 0], [0, 0]], complex)),
        tail_mass=0.0,
    )
    distribution = dt.click_distribution(state, 1.0)
    assert distribution["1001"] == 1
    assert distribution.total() == 1


def test_single_detector_prob_closed():
    assert dt.single_detector_prob_closed(0, 0.3) == 0
    assert np.isclose(dt.single_detector_prob_closed(1.1, 1.0), np.tanh(1.1) ** 2)
    assert abs(dt.single_detector_prob_closed(2.30, 0.019) - 0.3165) < 1e-3


def test_marginal_matches_closed_form():
    state = truncated_state(0.2)
    distribution = dt.click_distribution(state, 0.019)
    closed = dt.single_detector_prob_closed(0.2, 0.019)
    for detector in dt.DETECTORS:
        assert abs(distribution.marginal(detector) - closed) <= state.tail_mass + 1e-10


def test_distribution_normalized():
    for tau in (0.3, 1.3, 2.0):
        state = truncated_state(tau)
        distribution = dt.click_distribution(state, [0.1, 0.3, 0.05, 0.6])
        assert abs(distribution.total() - 1) <= state.tail_mass + 1e-10
        assert np.all(distribution.probs >= -1e-15)


@pytest.mark.parametrize("tau", [0.2, 0.5, 1.0, 1.3, 1.85])
@pytest.mark.parametrize("eta", [0.019, 0.09, 0.5, 1.0])
def test_closed_distribution_matches_blocks(tau, eta):
    state = truncated_state(tau)
    exact = dt.click_distribution(state, eta)
    closed = dt.click_distribution_closed(tau, eta)
    assert np.max(np.abs(exact.probs - closed.probs)) <= state.tail_mass + 1e-9
    assert abs(
        exact.marginal("ah") - dt.single_detector_prob_closed(tau, eta)
    ) <= state.tail_mass + 1e-9


def test_silent_probability_matches_closed_form(state_08):
    etas = dt.Efficiencies(0.1, 0.4, 0.25, 0.7)
    for size in range(5):
        for subset in combinations(dt.DETECTORS, size):
            exact = dt.silent_probability(state_08, etas, set(subset))
            closed = dt.silent_probability_closed(0.8, etas, set(subset))
            assert abs(exact - closed) <= state_08.tail_mass + 1e-12


def test_inclusion_exclusion_identity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        tau = rng.uniform(0.05, 1.5)
        etas = dt.Efficiencies.from_values(rng.uniform(0.01, 1.0, size=4))
        state = truncated_state(tau)
        direct = dt.click_distribution(state, etas).probs
        signed = dt._inclusion_exclusion(lambda S: dt.silent_probability(state, etas, S))
        assert np.allclose(direct, signed, atol=1e-10, rtol=0)


def test_same_basis_invariance(state_08):
    etas = dt.Efficiencies(0.3, 0.2, 0.25, 0.4)
    reference = dt.rotated_click_distribution(state_08, etas, "hv", "hv")
    for basis in ("pm", "rl"):
        rotated = dt.rotated_click_distribution(state_08, etas, basis, basis)
        assert np.allclose(rotated.probs, reference.probs, atol=1e-9, rtol=0)
        probs = dt.SubspaceProbs.from_distribution(rotated, basis, basis)
        assert abs(probs.P_11 - dt.SubspaceProbs.from_distribution(reference, "hv", "hv").P_11) < 1e-9


def test_pdc_click_distribution_mixed_bases(state_08):
    etas = dt.Efficiencies(0.3, 0.2, 0.25, 0.4)
    for a, b in [("hv", "pm"), ("pm", "hv"), ("hv", "rl"), ("rl", "hv"), ("pm", "rl"), ("rl", "pm")]:
        streamed = dt.pdc_click_distribution(0.8, etas, a, b)
        rotated = dt.rotated_click_distribution(state_08, etas, a, b)
        assert np.allclose(streamed.probs, rotated.probs, atol=1e-10, rtol=0), f"{a}/{b}"
    closed = dt.click_distribution_closed(0.8, etas)
    assert np.array_equal(dt.pdc_click_distribution(0.8, etas, "pm", "pm").probs, closed.probs)


def test_monotone_in_efficiency_and_tau():
    low = dt.click_distribution_closed(0.8, 0.1)
    high = dt.click_distribution_closed(0.8, 0.2)
    stronger = dt.click_distribution_closed(1.2, 0.1)
    for detector in dt.DETECTORS:
        assert high.marginal(detector) >= low.marginal(detector)
        assert stronger.marginal(detector) >= low.marginal(detector)
    assert high.fire_all(("ah", "bv")) >= low.fire_all(("ah", "bv"))


def test_subspace_singlet_limit():
    probs = dt.subspace_probs(truncated_state(0.001), 1.0, "hv", "hv")
    assert abs(probs.p_hv - 0.5) < 1e-5 and abs(probs.p_vh - 0.5) < 1e-5
    assert probs.p_hh < 1e-5 and probs.p_vv < 1e-5
    assert abs(probs.normalized().sum() - 1) < 1e-10


def test_subspace_empty_at_vacuum():
    with pytest.raises(dt.EmptySubspaceError):
        dt.subspace_probs(se.build_pdc_state(0, 2), 0.5, "hv", "hv")


def test_multi_pair_correlated_events():
    probs = dt.subspace_probs(truncated_state(1.85), 0.019, "hv", "hv")
    assert probs.p_hh > 0.05 and probs.p_vv > 0.05
    assert abs(probs.p_hh - probs.p_vv) < 1e-9


def test_complementary_bases_uncorrelated():
    probs = dt.subspace_probs(truncated_state(0.5), 0.1, "hv", "pm")
    assert np.allclose(probs.normalized(), 0.25, atol=0.05)


def test_subspace_grid_matches_single_pairs():
    state = truncated_state(0.6)
    etas = dt.Efficiencies(0.1, 0.15, 0.2, 0.12)
    grid = dt.subspace_probs_grid(state, etas)
    assert len(grid) == 9
    for key in [("hv", "hv"), ("pm", "rl"), ("rl", "hv")]:
        single = dt.subspace_probs(state, etas, *key)
        assert np.allclose(grid[key].normalized(), single.normalized(), atol=1e-12)
        assert abs(grid[key].P_11 - single.P_11) < 1e-14


def test_subspace_ratio():
    ratio = dt.subspace_ratio(truncated_state(1.3), 0.02)
    assert abs(ratio - 0.06) <= 0.015, f"Subspace ratio at tau=1.3 is {ratio}"
    assert dt.subspace_ratio(truncated_state(1.3), 0.5) > ratio
    assert dt.subspace_ratio(truncated_state(0.001), 0.02) < 1e-5


def test_subspace_ratio_is_share_of_two_sided_events():
    state = truncated_state(1.3)
    probs = dt.click_distribution(state, 0.02).probs
    higher = p11 = 0.0
    for i in range(16):
        ah, av, bh, bv = map(int, dt.pattern_mask(i))
        if not (ah or av) or not (bh or bv):
            continue
        if (ah and av) or (bh and bv):
            higher += probs[i]
        else:
            p11 += probs[i]
    assert np.isclose(dt.subspace_ratio(state, 0.02), higher / (p11 + higher), rtol=1e-12)
    assert higher / p11 > dt.subspace_ratio(state, 0.02)


def test_coincidences():
    one_pair = dt.coincidence_probability_closed(0.3, 0.1, ("ah", "bv"))
    two_pair = dt.coincidence_probability_closed(0.3, 0.1, ("ah", "bh"))
    assert one_pair > two_pair > 0


def test_fanout_matches_blocks():
    state = truncated_state(1.0)
    exact = dt.fanout_distribution(state, 0.2)
    closed = dt.fanout_distribution_closed(1.0, 0.2)
    assert np.max(np.abs(exact.probs - closed.probs)) <= state.tail_mass + 1e-10
    assert abs(closed.total() - 1) < 1e-12
    four_fold = closed.fire_all(("ah1", "ah2", "bh1", "bh2"))
    assert 0 < four_fold < closed.fire_all(("ah1", "ah2", "bh1"))


def test_singlet_correlations():
    assert np.allclose(dt.singlet_correlations("hv", "hv"), dt.SINGLET_SAME_BASIS)
    assert np.allclose(dt.singlet_correlations("pm", "pm"), dt.SINGLET_SAME_BASIS)
    assert np.allclose(dt.singlet_correlations("hv", "rl"), 0.25)


def test_ansatz_visibility_limits():
    assert abs(dt.ansatz_visibility(0.01, 0.09) - 1) < 1e-3
    assert abs(dt.ideal_visibility_closed(0.01, 0.09) - 1) < 1e-3
    with pytest.raises(ValueError):
        dt.ansatz_visibility(0.5, 0.0)


def test_ansatz_visibility_at_zero_gain():
    assert dt.ansatz_visibility(0.0, 0.09) == 1.0


@pytest.mark.parametrize("tau", [0.25, 0.5, 1.0, 1.5, 2.0])
def test_ansatz_below_pdc(tau):
    assert dt.ansatz_visibility(tau, 0.09) < dt.ideal_visibility_closed(tau, 0.09)


def test_ansatz_mixed_basis_uncorrelated():
    table = dt.singlet_correlations("hv", "pm")
    distribution = dt.ansatz_click_distribution(1.0, 0.09, table)
    assert abs(dt.visibility_from_distribution(distribution)) < 1e-12
