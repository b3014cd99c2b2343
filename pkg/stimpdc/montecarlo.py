"""
Pulse-by-pulse Monte Carlo of the detection experiment and the count-dataset
format shared by simulation, fitting and tomography.

Copyright 2026 The StimPDC Authors, as per the README file.

This file is part of StimPDC.

StimPDC is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
GNU Lesser General Public License for more details.

StimPDC is free software: you can redistribute it and/or modify
it under the terms of the GNU Lesser General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

You should have received a copy of the GNU Lesser General Public License
along with StimPDC.  If not, see <http://www.gnu.org/licenses/>.
"""

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .criteria import probs_from_counts
from .detection import (
    DETECTORS,
    ClickDistribution,
    Efficiencies,
    ansatz_click_distribution,
    fanout_distribution_closed,
    pattern_mask,
    pdc_click_distribution,
    singlet_correlations,
)
from .run_config import ConfigError
from .state_engine import (
    InteractionParams,
    build_pdc_state,
    default_tail_tol,
    get_basis,
    iter_block_representations,
    pair_number_distribution,
    relative_rotation,
    rotate_block,
    select_n_max,
)

CSV_HEADER = ["pulse_energy_uJ", "basis_a", "basis_b", "pattern", "counts", "n_pulses"]
RATES_HEADER = ["pulse_energy_uJ", "basis_a", "basis_b", "pattern", "rate_per_s"]
# basis label of the beam-splitter fan-out rows, masks ordered (a_h1, a_h2, b_h1, b_h2)
FANOUT_BASIS = "hsplit"

# bit weights turning fire flags (a_h, a_v, b_h, b_v) into a pattern index
_bits = np.array([8, 4, 2, 1])


@dataclass(frozen=True)
class PulseConfig:
    """Settings of one simulated pulse train.

    `weight` is the fraction of pulses drawn from the distinguishable-pairs
    ansatz instead of the PDC state. `workers` sets how many independent
    sub-streams the seed is split into; results are reproducible for a fixed
    worker count.
    """

    tau: float
    etas: Efficiencies
    basis_a: str = "hv"
    basis_b: str = "hv"
    rep_rate: float = 20000.0
    seed: object = 0
    weight: float = 0.0
    tail_tol: float = None
    pulse_energy: float = None
    workers: int = 1

    def __post_init__(self):
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be positive.")
        if not 0 <= self.weight <= 1:
            raise ValueError("weight must lie in [0, 1].")
        object.__setattr__(self, "etas", Efficiencies.from_values(self.etas))

    def resolved_tail_tol(self):
        return self.tail_tol if self.tail_tol is not None else default_tail_tol(self.tau)

    def same_basis(self):
        return get_basis(self.basis_a).name == get_basis(self.basis_b).name


@dataclass(frozen=True)
class CountRow:
    pulse_energy_uJ: float
    basis_a: str
    basis_b: str
    pattern: str
    counts: int
    n_pulses: int

    def __post_init__(self):
        if not 0 <= self.counts <= self.n_pulses:
            raise ConfigError(
                f"counts={self.counts} must lie in [0, n_pulses={self.n_pulses}]."
            )
        if self.pattern not in DETECTORS and not (
            len(self.pattern) == 4 and set(self.pattern) <= {"0", "1"}
        ):
            raise ConfigError(f"Unknown pattern {self.pattern!r}.")

    @property
    def fraction(self):
        return self.counts / self.n_pulses


@dataclass
class CountDataset:
    """Experiment-like count records, one row per (energy, bases, pattern)."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def extend(self, other):
        self.rows.extend(other.rows)
        return self

    def energies(self):
        return sorted({row.pulse_energy_uJ for row in self.rows})

    def basis_pairs(self):
        return sorted({(row.basis_a, row.basis_b) for row in self.rows})

    def select(self, basis_a=None, basis_b=None, pattern=None, energy=None):
        return [
            row
            for row in self.rows
            if (basis_a is None or row.basis_a == basis_a)
            and (basis_b is None or row.basis_b == basis_b)
            and (pattern is None or row.pattern == pattern)
            and (energy is None or row.pulse_energy_uJ == energy)
        ]

    def subspace_probs(self, basis_a, basis_b, energy=None):
        """(1,1)-subspace probabilities estimated from the coincidence rows of
        one basis pair, at `energy` (default: the highest energy present)."""
        rows = self.select(basis_a, basis_b)
        if not rows:
            raise ConfigError(f"No rows for the {basis_a}/{basis_b} basis pair.")
        if energy is None:
            energy = max(row.pulse_energy_uJ for row in rows)
        rows = [row for row in rows if row.pulse_energy_uJ == energy]
        n_pulses = {row.n_pulses for row in rows}
        if len(n_pulses) != 1:
            raise ConfigError(f"Inconsistent n_pulses for {basis_a}/{basis_b} at {energy} uJ.")
        counts = {row.pattern: row.counts for row in rows}
        return probs_from_counts(counts, n_pulses.pop(), basis_a, basis_b)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                writer.writerow(
                    [
                        repr(float(row.pulse_energy_uJ)),
                        row.basis_a,
                        row.basis_b,
                        row.pattern,
                        int(row.counts),
                        int(row.n_pulses),
                    ]
                )

    @classmethod
    def from_csv(cls, path):
        try:
            with open(path, "r", newline="") as f:
                reader = csv.reader(f)
                header = next(reader, None)
                if header != CSV_HEADER:
                    raise ConfigError(
                        f"{path}: expected header {','.join(CSV_HEADER)}, got {header}."
                    )
                rows = [
                    CountRow(float(e), a, b, p, int(c), int(n))
                    for e, a, b, p, c, n in reader
                ]
        except FileNotFoundError:
            raise ConfigError(f"Dataset {path} not found.")
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: malformed row ({e}).")
        return cls(rows)


def _seed_sequence(seed):
    # fresh copy, so that spawning is repeatable for the same config
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(seed)


def _rows_from_counts(config, counts, n_pulses, basis_a=None, basis_b=None, singles=True):
    basis_a = basis_a or get_basis(config.basis_a).name
    basis_b = basis_b or get_basis(config.basis_b).name
    energy = np.nan if config.pulse_energy is None else config.pulse_energy
    rows = []
    if singles:
        fires = (np.arange(16)[:, np.newaxis] & _bits) > 0
        for k, detector in enumerate(DETECTORS):
            rows.append(
                CountRow(
                    energy, basis_a, basis_b, detector,
                    int(np.sum(counts[fires[:, k]])), n_pulses,
                )
            )
    for index in range(16):
        rows.append(
            CountRow(
                energy, basis_a, basis_b, pattern_mask(index),
                int(counts[index]), n_pulses,
            )
        )
    return rows


@lru_cache(maxsize=64)
def _pair_number_cdf(tau, tail_tol):
    n_max = select_n_max(tau, tail_tol)
    return np.cumsum(pair_number_distribution(tau, n_max))


def sample_pair_number(tau, rng, size=None, tail_tol=None):
    """Pair numbers drawn from P(n) = (n+1)(1-x)^2 x^n by inverse CDF.

    The cumulative table runs up to the truncation chosen by select_n_max;
    the (tail_tol sized) remainder is folded into the last entry.
    """
    if tau == 0:
        return 0 if size is None else np.zeros(size, dtype=int)
    if tail_tol is None:
        tail_tol = default_tail_tol(tau)
    cdf = _pair_number_cdf(float(tau), float(tail_tol))
    n = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(n, len(cdf) - 1)


def sample_occupation(block_weights, rng, size=None):
    """Occupations (n-m_a, m_a, m_b, n-m_b) drawn with probability
    |B_n[m_a, m_b]|^2 / |B_n|^2.

    Parameters
    ----------
    block_weights : np.ndarray
        (n+1)x(n+1) array of |B_n[m_a, m_b]|^2.
    rng : np.random.Generator

    Returns
    -------
    np.ndarray
        Shape (4,) or (size, 4) integer occupations of a_h, a_v, b_h, b_v.
    """
    weights = np.asarray(block_weights, dtype=float)
    n = weights.shape[0] - 1
    p = weights.ravel() / np.sum(weights)
    index = rng.choice(p.size, size=size, p=p)
    m_a, m_b = np.divmod(index, n + 1)
    return np.stack([n - m_a, m_a, m_b, n - m_b], axis=-1)


def _occupations(config, ns, rng):
    """Occupation of every pulse given its pair number."""
    if config.same_basis():
        # jointly rotated PDC state equals the unrotated one: m_a = m_b uniform in 0..n
        m = rng.integers(0, ns + 1)
        return np.stack([ns - m, m, m, ns - m], axis=-1)

    # the PDC state in (a, b) has the statistics of (hv, relative rotation)
    rotation = relative_rotation(config.basis_a, config.basis_b)
    n_top = int(ns.max())
    state = build_pdc_state(config.tau, n_top)
    wanted = set(np.unique(ns).tolist())
    occupations = np.empty((len(ns), 4), dtype=int)
    for n, (_, Db) in enumerate(iter_block_representations(rotation, n_top)):
        if n not in wanted:
            continue
        block = rotate_block(state.blocks[n], None, Db, diagonal=True)
        where = np.nonzero(ns == n)[0]
        occupations[where] = sample_occupation(np.abs(block) ** 2, rng, len(where))
    return occupations


def _thin_and_count(occupations, etas, rng):
    detected = rng.binomial(occupations, etas)
    index = (detected > 0).astype(int) @ _bits
    return np.bincount(index, minlength=16)


def sample_ansatz_pulses(config, n_pulses, rng=None):
    """Pattern counts of the distinguishable-pairs process.

    Each of the n pairs (n drawn as for PDC) independently sends its photons
    to outcome (i, j) with the singlet probabilities of the configured bases.

    Returns
    -------
    np.ndarray
        Length 16 vector of pattern counts.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if n_pulses == 0:
        return np.zeros(16, dtype=int)
    ns = sample_pair_number(config.tau, rng, n_pulses, config.resolved_tail_tol())
    table = singlet_correlations(config.basis_a, config.basis_b)
    # pairs per outcome (hh, hv, vh, vv)
    k = rng.multinomial(ns, table.ravel())
    occupations = np.stack(
        [k[:, 0] + k[:, 1], k[:, 2] + k[:, 3], k[:, 0] + k[:, 2], k[:, 1] + k[:, 3]],
        axis=-1,
    )
    return _thin_and_count(occupations, config.etas.as_array(), rng)


def _simulate_batch(config, n_pulses, rng):
    n_ansatz = rng.binomial(n_pulses, config.weight) if config.weight > 0 else 0
    n_pdc = n_pulses - n_ansatz
    counts = np.zeros(16, dtype=np.int64)
    if n_pdc:
        ns = sample_pair_number(config.tau, rng, n_pdc, config.resolved_tail_tol())
        counts += _thin_and_count(_occupations(config, ns, rng), config.etas.as_array(), rng)
    if n_ansatz:
        counts += sample_ansatz_pulses(config, n_ansatz, rng)
    return counts


def _batches(config, n_pulses):
    """Splits the pulses over `workers` independent generators."""
    seeds = _seed_sequence(config.seed).spawn(config.workers)
    sizes = np.full(config.workers, n_pulses // config.workers)
    sizes[: n_pulses % config.workers] += 1
    return [(int(size), np.random.default_rng(seed)) for size, seed in zip(sizes, seeds)]


def pattern_counts(config, n_pulses, verbose=False):
    """Length 16 vector of pattern counts over n_pulses pulses."""
    counts = np.zeros(16, dtype=np.int64)
    for k, (size, rng) in enumerate(_batches(config, n_pulses)):
        counts += _simulate_batch(config, size, rng)
        if verbose:
            print(f"tau={config.tau:.4f}: batch {k + 1}/{config.workers} done")
    return counts


def simulate_pulses(config, n_pulses, verbose=False):
    """Simulates n_pulses pulses and aggregates their click patterns.

    Per pulse: the pair number is drawn, then the occupation of the analysis
    modes, every mode is thinned binomially with its efficiency and each
    detector fires when at least one photon survives.

    Parameters
    ----------
    config : PulseConfig
    n_pulses : int
    verbose : bool
        Prints a line per finished batch.

    Returns
    -------
    CountDataset
        Four single-detector rows and sixteen pattern rows.
    """
    counts = pattern_counts(config, n_pulses, verbose)
    return CountDataset(
        _rows_from_counts(config, counts, n_pulses),
        {"workers": config.workers, "weight": config.weight},
    )


def simulate_fanout(config, n_pulses):
    """Counts of the beam-splitter fan-out patterns.

    Only the h mode of each side is collected, attenuated by eta_ah (eta_bh)
    and split by a lossless 50/50 beam splitter onto two threshold detectors.
    Masks are ordered (a_h1, a_h2, b_h1, b_h2).
    """
    seed = _seed_sequence(config.seed).spawn(config.workers + 1)[-1]
    rng = np.random.default_rng(seed)
    eta = config.etas.as_array()
    ns = sample_pair_number(config.tau, rng, n_pulses, config.resolved_tail_tol())
    m = rng.integers(0, ns + 1)
    detected_a = rng.binomial(ns - m, eta[0])
    detected_b = rng.binomial(m, eta[2])
    split_a = rng.binomial(detected_a, 0.5)
    split_b = rng.binomial(detected_b, 0.5)
    fires = np.stack([split_a, detected_a - split_a, split_b, detected_b - split_b], axis=-1)
    counts = np.bincount((fires > 0).astype(int) @ _bits, minlength=16)
    return CountDataset(
        _rows_from_counts(config, counts, n_pulses, FANOUT_BASIS, FANOUT_BASIS, singles=False)
    )


def _pump_configs(tau_max, etas, energies, seed, basis_pairs, **kwargs):
    """PulseConfig of every (energy, basis pair), energy-major, each with its
    own child seed."""
    energies = np.asarray(energies, dtype=float)
    if len(energies) == 0 or np.any(energies <= 0):
        raise ValueError("Pulse energies must be positive.")
    max_energy = energies.max()
    seeds = iter(np.random.SeedSequence(seed).spawn(len(energies) * len(basis_pairs)))
    for energy in energies:
        params = InteractionParams.from_pump(tau_max, energy, max_energy)
        for basis_a, basis_b in basis_pairs:
            yield PulseConfig(
                tau=params.tau,
                etas=etas,
                basis_a=basis_a,
                basis_b=basis_b,
                seed=next(seeds),
                pulse_energy=params.pulse_energy,
                **kwargs,
            )


def _resolve_pairs(basis_a, basis_b, basis_pairs):
    if basis_pairs is None:
        return [(basis_a, basis_b)]
    basis_pairs = [tuple(pair) for pair in basis_pairs]
    if not basis_pairs:
        raise ValueError("At least one basis pair is needed.")
    return basis_pairs


def synthesize_dataset(
    tau_max,
    etas,
    energies,
    n_pulses,
    seed=0,
    basis_a="hv",
    basis_b="hv",
    weight=0.0,
    fanout=True,
    workers=1,
    basis_pairs=None,
    verbose=False,
):
    """Pump-energy scan: tau = tau_max sqrt(E / E_max) for each energy, the
    largest energy taken as E_max.

    Parameters
    ----------
    tau_max : float
        Interaction parameter at the largest energy.
    etas : Efficiencies or float or sequence
        Channel efficiencies.
    energies : sequence of float
        Pulse energies in uJ, all positive.
    n_pulses : int
        Pulses per energy and basis pair.
    seed : int
        Root seed; every (energy, basis pair) draws from its own child stream.
    basis_a, basis_b : str
        Analysis bases, used when `basis_pairs` is not given.
    weight : float
        Background weight of distinguishable-pair pulses.
    fanout : bool
        Also simulate the beam-splitter fan-out once per energy.
    workers : int
        Independent generators per configuration.
    basis_pairs : sequence of (str, str), optional
        Basis pairs to simulate at every energy, e.g. criteria.BASIS_PAIRS
        for a tomography data set.

    Returns
    -------
    CountDataset
        Single, pattern and (optionally) fan-out rows for every energy.
    """
    basis_pairs = _resolve_pairs(basis_a, basis_b, basis_pairs)
    dataset = CountDataset(
        metadata={"seed": int(seed), "workers": workers, "weight": weight}
    )
    configs = _pump_configs(
        tau_max, etas, energies, seed, basis_pairs, weight=weight, workers=workers
    )
    for k, config in enumerate(configs):
        if verbose:
            print(
                f"Simulating {n_pulses} pulses at {config.pulse_energy} uJ "
                f"(tau={config.tau:.4f}, {config.basis_a}/{config.basis_b})"
            )
        dataset.extend(simulate_pulses(config, n_pulses))
        if fanout and k % len(basis_pairs) == 0:
            dataset.extend(simulate_fanout(config, n_pulses))
    return dataset


def expected_distribution(config):
    """Exact pattern distribution for the config, mixing PDC and ansatz
    pulses with the background weight."""
    pdc = pdc_click_distribution(
        config.tau, config.etas, config.basis_a, config.basis_b, config.resolved_tail_tol()
    )
    if config.weight == 0:
        return pdc
    table = singlet_correlations(config.basis_a, config.basis_b)
    ansatz = ansatz_click_distribution(config.tau, config.etas, table)
    return ClickDistribution(
        (1 - config.weight) * pdc.probs + config.weight * ansatz.probs, pdc.tail_mass
    )


def expected_dataset(
    tau_max, etas, energies, n_pulses, basis_a="hv", basis_b="hv", fanout=True,
    basis_pairs=None,
):
    """Noiseless counterpart of synthesize_dataset: counts are the rounded
    expectations n_pulses * P."""
    basis_pairs = _resolve_pairs(basis_a, basis_b, basis_pairs)
    dataset = CountDataset(metadata={"noiseless": True})
    for k, config in enumerate(_pump_configs(tau_max, etas, energies, 0, basis_pairs)):
        counts = np.rint(n_pulses * expected_distribution(config).probs).astype(np.int64)
        dataset.rows.extend(_rows_from_counts(config, counts, n_pulses))
        if fanout and k % len(basis_pairs) == 0:
            probs = fanout_distribution_closed(config.tau, config.etas).probs
            dataset.rows.extend(
                _rows_from_counts(
                    config, np.rint(n_pulses * probs).astype(np.int64), n_pulses,
                    FANOUT_BASIS, FANOUT_BASIS, singles=False,
                )
            )
    return dataset


def count_rates(dataset, rep_rate=20000.0):
    """Counts per second of every row, counts / n_pulses * rep_rate."""
    return np.array([row.fraction * rep_rate for row in dataset.rows])


def loglog_slopes(energies, counts):
    """Local slope d log(counts) / d log(energy) of one count curve.

    Points with zero counts give nan.
    """
    energies = np.asarray(energies, dtype=float)
    counts = np.asarray(counts, dtype=float)
    with np.errstate(divide="ignore"):
        log_counts = np.where(counts > 0, np.log(counts), np.nan)
    return np.gradient(log_counts, np.log(energies))
