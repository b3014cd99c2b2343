import numpy as np
import pytest

from stimpdc import detection as dt
from stimpdc import montecarlo as mc
from stimpdc import state_engine as se
from stimpdc.criteria import BASIS_PAIRS
from stimpdc.run_config import ConfigError


def within_statistics(counts, probs, n_pulses):
    """Per-pattern agreement within 4 standard deviations plus a 5-count floor."""
    observed = np.asarray(counts) / n_pulses
    sigma = np.sqrt(probs * (1 - probs) / n_pulses)
    return np.abs(observed - probs) <= 4 * sigma + 5 / n_pulses


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)


def test_sample_pair_number_vacuum(rng):
    assert mc.sample_pair_number(0, rng) == 0
    assert np.all(mc.sample_pair_number(0.0, rng, 10) == 0)


def test_sample_pair_number_mean(rng):
    n = mc.sample_pair_number(1.3, rng, 1_000_000)
    x = np.tanh(1.3) ** 2
    sigma = np.sqrt(2 * x / (1 - x) ** 2 / len(n))
    assert abs(n.mean() - se.mean_pairs(1.3)) < 4 * sigma, f"Mean pair number {n.mean()}"


def test_sample_pair_number_vacuum_probability(rng):
    n = mc.sample_pair_number(0.8, rng, 1_000_000)
    p0 = 1 / np.cosh(0.8) ** 4
    assert abs(np.mean(n == 0) - p0) < 4 * np.sqrt(p0 * (1 - p0) / len(n))


def test_sample_occupation_diagonal_block(rng):
    block = se.build_pdc_state(0.8, 6).blocks[6]
    occupations = mc.sample_occupation(np.abs(block) ** 2, rng, 1000)
    assert np.all(occupations[:, 1] == occupations[:, 2]), "PDC pairs give m_a = m_b"
    assert np.all(occupations.sum(axis=1) == 12)


def test_sample_occupation_rotated_singlet(rng):
    Da, Db = se.block_representations(se.PM, 1)
    singlet = np.diag([1, -1]) / np.sqrt(2)
    block = se.rotate_block(singlet, Da, Db, diagonal=True)
    occupations = mc.sample_occupation(np.abs(block) ** 2, rng, 100_000)
    # one photon per side, always in opposite analysis modes
    assert np.all(occupations[:, 0] == occupations[:, 3])
    assert abs(np.mean(occupations[:, 0]) - 0.5) < 0.01


def test_no_clicks_without_efficiency():
    config = mc.PulseConfig(tau=1.0, etas=0.0, seed=1)
    counts = mc.pattern_counts(config, 5000)
    assert counts[0] == 5000


def test_seed_determinism():
    config = mc.PulseConfig(tau=1.0, etas=0.2, basis_a="hv", basis_b="pm", seed=99)
    first = mc.pattern_counts(config, 20_000)
    assert np.array_equal(first, mc.pattern_counts(config, 20_000))
    other = mc.PulseConfig(tau=1.0, etas=0.2, basis_a="hv", basis_b="pm", seed=100)
    assert not np.array_equal(first, mc.pattern_counts(other, 20_000))


def test_seed_sequence_reuse():
    seed = np.random.SeedSequence(5).spawn(1)[0]
    config = mc.PulseConfig(tau=0.5, etas=0.3, seed=seed)
    assert np.array_equal(mc.pattern_counts(config, 1000), mc.pattern_counts(config, 1000))


def test_workers_split_pulses():
    config = mc.PulseConfig(tau=0.5, etas=0.3, seed=3, workers=3)
    counts = mc.pattern_counts(config, 10_000)
    assert counts.sum() == 10_000


def test_singles_fraction_high_gain():
    config = mc.PulseConfig(tau=2.30, etas=0.019, seed=11)
    dataset = mc.simulate_pulses(config, 100_000)
    (row,) = dataset.select(pattern="ah")
    assert abs(row.fraction - 0.3165) < 0.007, f"a_h fires in {row.fraction} of pulses"


def test_rows_layout():
    config = mc.PulseConfig(tau=0.5, etas=0.3, seed=3, pulse_energy=1.5)
    dataset = mc.simulate_pulses(config, 1000)
    assert len(dataset) == 20
    assert dataset.energies() == [1.5]
    assert dataset.basis_pairs() == [("hv", "hv")]
    patterns = [row.counts for row in dataset.rows if len(row.pattern) == 4]
    assert sum(patterns) == 1000


@pytest.mark.slow
@pytest.mark.parametrize(
    "tau, etas, basis_a, basis_b",
    [
        (0.5, 0.1, "hv", "hv"),
        (1.3, 0.02, "hv", "hv"),
        (1.0, [0.1, 0.2, 0.3, 0.4], "pm", "pm"),
        (0.8, 0.2, "hv", "pm"),
        (1.0, 0.1, "pm", "rl"),
    ],
)
def test_monte_carlo_matches_exact(tau, etas, basis_a, basis_b):
    n_pulses = 1_000_000
    config = mc.PulseConfig(tau=tau, etas=etas, basis_a=basis_a, basis_b=basis_b, seed=42)
    counts = mc.pattern_counts(config, n_pulses)
    probs = mc.expected_distribution(config).probs
    agree = within_statistics(counts, probs, n_pulses)
    assert np.all(agree), f"Patterns {np.nonzero(~agree)[0]} outside statistical error"


def test_fanout_matches_closed_form():
    n_pulses = 200_000
    config = mc.PulseConfig(tau=1.0, etas=0.2, seed=8, pulse_energy=2.0)
    dataset = mc.simulate_fanout(config, n_pulses)
    assert {row.basis_a for row in dataset.rows} == {mc.FANOUT_BASIS}
    counts = [row.counts for row in dataset.rows]
    probs = dt.fanout_distribution_closed(1.0, 0.2).probs
    assert np.all(within_statistics(counts, probs, n_pulses))


@pytest.mark.slow
def test_ansatz_pulses_match_closed_form():
    n_pulses = 200_000
    config = mc.PulseConfig(tau=1.2, etas=0.1, seed=21)
    counts = mc.sample_ansatz_pulses(config, n_pulses)
    probs = dt.ansatz_click_distribution(1.2, 0.1).probs
    assert np.all(within_statistics(counts, probs, n_pulses))


def test_background_weight_lowers_visibility():
    visibilities = [
        dt.visibility_from_distribution(
            mc.expected_distribution(mc.PulseConfig(tau=1.0, etas=0.09, weight=w))
        )
        for w in (0.0, 0.5, 1.0)
    ]
    assert visibilities[0] > visibilities[1] > visibilities[2]
    assert np.isclose(visibilities[2], dt.ansatz_visibility(1.0, 0.09), atol=1e-12)


def test_invalid_pulse_config():
    with pytest.raises(ValueError):
        mc.PulseConfig(tau=1.0, etas=0.1, weight=1.5)
    with pytest.raises(ValueError):
        mc.PulseConfig(tau=1.0, etas=0.1, rep_rate=0)


def test_csv_round_trip(tmp_path):
    dataset = mc.synthesize_dataset(1.0, 0.1, [0.5, 1.0], 2000, seed=4)
    path = tmp_path / "counts.csv"
    dataset.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(mc.CSV_HEADER)
    loaded = mc.CountDataset.from_csv(path)
    assert loaded.rows == dataset.rows
    assert loaded.energies() == [0.5, 1.0]
    assert (mc.FANOUT_BASIS, mc.FANOUT_BASIS) in loaded.basis_pairs()


def test_synthesize_all_basis_pairs():
    dataset = mc.synthesize_dataset(1.0, 0.1, [0.5, 1.0], 2000, seed=4, basis_pairs=BASIS_PAIRS)
    assert set(dataset.basis_pairs()) == set(BASIS_PAIRS) | {(mc.FANOUT_BASIS, mc.FANOUT_BASIS)}
    assert len(dataset.select(basis_a=mc.FANOUT_BASIS)) == 2 * 16, "One fan-out run per energy"
    for a, b in BASIS_PAIRS:
        for energy in (0.5, 1.0):
            rows = dataset.select(a, b, energy=energy)
            assert sum(r.counts for r in rows if len(r.pattern) == 4) == 2000

    first = dataset.select("hv", "pm")
    again = mc.synthesize_dataset(1.0, 0.1, [0.5, 1.0], 2000, seed=4, basis_pairs=BASIS_PAIRS)
    assert again.select("hv", "pm") == first


def test_csv_bad_input(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("energy,a,b,pattern,counts,n\n")
    with pytest.raises(ConfigError):
        mc.CountDataset.from_csv(path)
    path.write_text(",".join(mc.CSV_HEADER) + "\n1.0,hv,hv,1001,abc,10\n")
    with pytest.raises(ConfigError):
        mc.CountDataset.from_csv(path)
    with pytest.raises(ConfigError):
        mc.CountDataset.from_csv(tmp_path / "missing.csv")


def test_count_row_validation():
    with pytest.raises(ConfigError):
        mc.CountRow(1.0, "hv", "hv", "1001", 11, 10)
    with pytest.raises(ConfigError):
        mc.CountRow(1.0, "hv", "hv", "ax", 1, 10)


def test_dataset_subspace_probs():
    dataset = mc.expected_dataset(1.3, 0.02, [0.5, 3.0], 10**9, fanout=False)
    probs = dataset.subspace_probs("hv", "hv")
    expected = dt.SubspaceProbs.from_distribution(
        dt.click_distribution_closed(1.3, 0.02), "hv", "hv"
    )
    assert np.allclose(probs.normalized(), expected.normalized(), atol=1e-6)
    with pytest.raises(ConfigError):
        dataset.subspace_probs("pm", "pm")


def test_count_rates():
    dataset = mc.CountDataset([mc.CountRow(1.0, "hv", "hv", "ah", 10, 100)])
    assert np.allclose(mc.count_rates(dataset, 20000.0), [2000.0])


def test_loglog_slopes_order():
    energies = np.array([1e-3, 2e-3, 4e-3])
    taus = 0.1 * np.sqrt(energies / energies.max())
    curves = {
        "single": [dt.single_detector_prob_closed(t, 1.0) for t in taus],
        "one_pair": [dt.coincidence_probability_closed(t, 1.0, ("ah", "bv")) for t in taus],
        "two_pair": [dt.coincidence_probability_closed(t, 1.0, ("ah", "bh")) for t in taus],
        "three_fold": [
            dt.fanout_distribution_closed(t, 1.0).fire_all(("ah1", "ah2", "bh1")) for t in taus
        ],
        "four_fold": [
            dt.fanout_distribution_closed(t, 1.0).fire_all(("ah1", "ah2", "bh1", "bh2"))
            for t in taus
        ],
    }
    slopes = {name: np.mean(mc.loglog_slopes(energies, c)) for name, c in curves.items()}
    for name, expected in [
        ("single", 1), ("one_pair", 1), ("two_pair", 2), ("three_fold", 3), ("four_fold", 4)
    ]:
        assert abs(slopes[name] - expected) < 0.1, f"{name} slope {slopes[name]}"
    assert slopes["four_fold"] > slopes["three_fold"] > slopes["two_pair"] > slopes["one_pair"]


def test_loglog_slopes_zero_counts():
    slopes = mc.loglog_slopes([1.0, 2.0, 4.0], [0, 10, 40])
    assert np.isnan(slopes[0])
