"""
Lossy threshold-detector model: exact click-pattern probabilities of the four
detectors (a_h, a_v, b_h, b_v), the closed-form rates of the ideal PDC state,
(1,1)-subspace probabilities and the distinguishable-pairs ansatz.

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

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .state_engine import (
    HV,
    build_pdc_state,
    default_tail_tol,
    get_basis,
    iter_block_representations,
    iter_rotated_blocks,
    pair_ratio,
    relative_rotation,
    rotate_block,
    select_n_max,
)

# detector order used by patterns, masks and efficiency vectors
DETECTORS = ("ah", "av", "bh", "bv")
# detectors of the beam-splitter fan-out on the first analysis mode of each side
FANOUT_DETECTORS = ("ah1", "ah2", "bh1", "bh2")


class EmptySubspaceError(ValueError):
    """Raised when no exactly-one-click-per-side event is possible (P_11 = 0)."""


@dataclass(frozen=True)
class Efficiencies:
    """Collection efficiencies of the four detection channels."""

    eta_ah: float
    eta_av: float
    eta_bh: float
    eta_bv: float

    def __post_init__(self):
        for name, value in zip(DETECTORS, self.as_array()):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"Efficiency of {name} must lie in [0, 1], got {value}.")

    @classmethod
    def uniform(cls, eta):
        return cls(eta, eta, eta, eta)

    @classmethod
    def from_values(cls, values):
        """Builds from a scalar, a length-4 sequence or an Efficiencies object."""
        if isinstance(values, cls):
            return values
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if len(values) == 1:
            return cls.uniform(float(values[0]))
        if len(values) != 4:
            raise ValueError("Provide one efficiency or four (a_h, a_v, b_h, b_v).")
        return cls(*(float(v) for v in values))

    def as_array(self):
        return np.array([self.eta_ah, self.eta_av, self.eta_bh, self.eta_bv])

    def as_dict(self):
        return dict(zip(["eta_" + d for d in DETECTORS], self.as_array().tolist()))


def pattern_index(mask):
    """Index 0..15 of a 4-character firing mask such as '1001'."""
    if len(mask) != 4 or set(mask) - {"0", "1"}:
        raise ValueError(f"Invalid click mask {mask!r}.")
    return int(mask, 2)


def pattern_mask(index):
    return format(index, "04b")


@dataclass(frozen=True, eq=False)
class ClickDistribution:
    """Probabilities of the 16 fire/silent patterns.

    Pattern index i has bits (a_h, a_v, b_h, b_v) from most to least
    significant, i.e. i = 4 * side_a + side_b with side = 2 * h + v.
    `tail_mass` is the truncation error bound inherited from the state.
    """

    probs: np.ndarray
    tail_mass: float = 0.0
    detectors: tuple = DETECTORS

    def __getitem__(self, mask):
        return float(self.probs[pattern_index(mask)])

    def side_matrix(self):
        """4x4 array indexed by [side_a pattern, side_b pattern]."""
        return self.probs.reshape(4, 4)

    def total(self):
        return float(np.sum(self.probs))

    def marginal(self, detector):
        """Probability that a given detector fires, whatever the others do."""
        bit = 3 - self.detectors.index(detector)
        fires = (np.arange(16) >> bit) & 1
        return float(np.sum(self.probs[fires == 1]))

    def fire_all(self, detectors):
        """Probability that all listed detectors fire."""
        need = sum(1 << (3 - self.detectors.index(d)) for d in detectors)
        idx = np.arange(16)
        return float(np.sum(self.probs[(idx & need) == need]))


def click_probability_single(m, eta):
    """Probability that a threshold detector fires on m photons: 1 - (1-eta)^m."""
    return 1.0 - (1.0 - eta) ** m


def _side_factors(n, eta_first, eta_second, second_count):
    """Fire/silent factors F[pattern, k] of one side of block n.

    `second_count` gives the photon count of the second mode as a function of
    the block index k (k itself on side a, n - k on side b).
    """
    k = np.arange(n + 1)
    c_second = second_count(k)
    s_first = 1.0 - click_probability_single(n - c_second, eta_first)
    s_second = 1.0 - click_probability_single(c_second, eta_second)
    return np.array(
        [
            s_first * s_second,
            s_first * (1 - s_second),
            (1 - s_first) * s_second,
            (1 - s_first) * (1 - s_second),
        ]
    )


def _accumulate(weights, Fa, Fb, diagonal):
    if diagonal:
        return (Fa * np.diag(weights)[np.newaxis, :]) @ Fb.T
    return Fa @ weights @ Fb.T


def _side_pattern_matrix(blocks, etas, diagonal):
    eta = etas.as_array()
    total = np.zeros((4, 4))
    for n, block in blocks:
        Fa = _side_factors(n, eta[0], eta[1], lambda k: k)
        Fb = _side_factors(n, eta[2], eta[3], lambda k: n - k)
        total += _accumulate(np.abs(block) ** 2, Fa, Fb, diagonal)
    return total


def click_distribution(state, etas):
    """Exact 16-pattern distribution of a block state.

    Each occupation (n-m_a, m_a, m_b, n-m_b) contributes with weight
    |B_n[m_a, m_b]|^2, the four detectors firing independently with
    probabilities 1 - (1 - eta_i)^count_i.

    Parameters
    ----------
    state : PairBlockState
        State expressed in the analysis bases.
    etas : Efficiencies
        Channel efficiencies.

    Returns
    -------
    ClickDistribution
    """
    etas = Efficiencies.from_values(etas)
    matrix = _side_pattern_matrix(enumerate(state.blocks), etas, state.diagonal)
    return ClickDistribution(matrix.reshape(16), tail_mass=state.tail_mass)


def rotated_click_distribution(state, etas, rotation_a, rotation_b):
    """click_distribution of the state rotated to (rotation_a, rotation_b),
    streamed block by block."""
    etas = Efficiencies.from_values(etas)
    rotation_a, rotation_b = get_basis(rotation_a), get_basis(rotation_b)
    diagonal = state.diagonal and rotation_a.is_identity() and rotation_b.is_identity()
    matrix = _side_pattern_matrix(
        iter_rotated_blocks(state, rotation_a, rotation_b), etas, diagonal
    )
    return ClickDistribution(matrix.reshape(16), tail_mass=state.tail_mass)


def _inclusion_exclusion(silent_probability, detectors=DETECTORS):
    """16-pattern distribution from the probabilities that a set of detectors
    is all silent.

    P(exactly F fire) = sum over T subset of F of (-1)^|T| P(complement(F) u T silent).
    """
    cache = {}

    def silent(subset):
        key = frozenset(subset)
        if key not in cache:
            cache[key] = silent_probability(key)
        return cache[key]

    probs = np.zeros(16)
    for index in range(16):
        mask = pattern_mask(index)
        firing = [d for d, bit in zip(detectors, mask) if bit == "1"]
        quiet = [d for d, bit in zip(detectors, mask) if bit == "0"]
        for size in range(len(firing) + 1):
            for subset in combinations(firing, size):
                probs[index] += (-1) ** size * silent(quiet + list(subset))
    return probs


def silent_probability_closed(tau, etas, silent_set):
    """Probability that every detector in `silent_set` stays silent, for the
    ideal PDC state analysed in any common basis on both sides.

    Summing the pair-number series gives (1-x)^2 / ((1 - x u)(1 - x v)) with
    x = tanh^2(tau), u = s_ah s_bv and v = s_av s_bh, where s_i = 1 - eta_i
    for detectors in the set and 1 otherwise. No truncation is involved.
    """
    etas = Efficiencies.from_values(etas)
    s = dict(zip(DETECTORS, 1.0 - etas.as_array()))
    s = {d: (s[d] if d in silent_set else 1.0) for d in DETECTORS}
    x, one_minus_x = pair_ratio(tau)
    u = s["ah"] * s["bv"]
    v = s["av"] * s["bh"]
    return one_minus_x**2 / ((1 - x * u) * (1 - x * v))


def click_distribution_closed(tau, etas):
    """Exact 16-pattern distribution of the ideal (untruncated) PDC state in
    any same-basis setting, by inclusion-exclusion over silent sets."""
    probs = _inclusion_exclusion(lambda S: silent_probability_closed(tau, etas, S))
    return ClickDistribution(np.clip(probs, 0.0, 1.0), tail_mass=0.0)


def pdc_click_distribution(tau, etas, basis_a="hv", basis_b="hv", tail_tol=None):
    """Pattern distribution of the ideal PDC state analysed in (basis_a, basis_b).

    Same-basis settings use the closed form. Mixed settings stream the
    truncated state in (hv, relative rotation), which only rotates side b.

    Parameters
    ----------
    tau : float
        Interaction parameter.
    etas : Efficiencies or float or sequence
        Channel efficiencies.
    basis_a, basis_b : str or PolarizationRotation
        Analysis bases.
    tail_tol : float, optional
        Truncation tolerance of the mixed-basis state, `default_tail_tol(tau)`
        when omitted.

    Returns
    -------
    ClickDistribution
    """
    rotation = relative_rotation(basis_a, basis_b)
    if rotation.is_identity():
        return click_distribution_closed(tau, etas)
    if tail_tol is None:
        tail_tol = default_tail_tol(tau)
    state = build_pdc_state(tau, select_n_max(tau, tail_tol))
    return rotated_click_distribution(state, etas, HV, rotation)


def silent_probability(state, etas, silent_set):
    """Block-state counterpart of silent_probability_closed, valid for any
    (rotated) state."""
    etas = Efficiencies.from_values(etas)
    s = np.where([d in silent_set for d in DETECTORS], 1.0 - etas.as_array(), 1.0)
    return _silent_from_survival(state, s)


def _silent_from_survival(state, s):
    total = 0.0
    for n, block in enumerate(state.blocks):
        k = np.arange(n + 1)
        side_a = s[0] ** (n - k) * s[1] ** k
        side_b = s[2] ** k * s[3] ** (n - k)
        weights = np.abs(block) ** 2
        if state.diagonal:
            total += np.sum(np.diag(weights) * side_a * side_b)
        else:
            total += side_a @ weights @ side_b
    return float(total)


def single_detector_prob_closed(tau, eta):
    """Probability per pulse that one detector fires:
    eta tanh^2(tau) / (1 - (1 - eta) tanh^2(tau))."""
    x, _ = pair_ratio(tau)
    return eta * x / (1.0 - (1.0 - eta) * x)


def coincidence_probability_closed(tau, etas, detectors):
    """Probability that all listed detectors fire (others unconstrained),
    e.g. ('ah', 'bv') for one-pair and ('ah', 'bh') for two-pair coincidences."""
    return click_distribution_closed(tau, etas).fire_all(detectors)


def _fanout_silent(etas, silent_set):
    """Survival factors of the h modes when the listed split detectors are silent."""
    eta = Efficiencies.from_values(etas).as_array()
    frac_a = sum(d in silent_set for d in ("ah1", "ah2")) / 2
    frac_b = sum(d in silent_set for d in ("bh1", "bh2")) / 2
    return np.array([1 - eta[0] * frac_a, 1.0, 1 - eta[2] * frac_b, 1.0])


def fanout_distribution_closed(tau, etas):
    """Pattern distribution over (a_h1, a_h2, b_h1, b_h2): only the first
    analysis mode of each side is collected and split by a lossless 50/50
    beam splitter onto two threshold detectors. Same-basis analysis."""

    def silent(S):
        s = _fanout_silent(etas, S)
        x, one_minus_x = pair_ratio(tau)
        return one_minus_x**2 / ((1 - x * s[0] * s[3]) * (1 - x * s[1] * s[2]))

    probs = _inclusion_exclusion(silent, FANOUT_DETECTORS)
    return ClickDistribution(np.clip(probs, 0.0, 1.0), 0.0, FANOUT_DETECTORS)


def fanout_distribution(state, etas):
    """Block-state version of fanout_distribution_closed."""
    probs = _inclusion_exclusion(
        lambda S: _silent_from_survival(state, _fanout_silent(etas, S)),
        FANOUT_DETECTORS,
    )
    return ClickDistribution(probs, state.tail_mass, FANOUT_DETECTORS)


@dataclass(frozen=True)
class SubspaceProbs:
    """Exactly-one-click-per-side probabilities for one pair of analysis bases.

    P_hh, P_hv, P_vh, P_vv refer to the (first, first), (first, second), ...
    outcomes of (basis_a, basis_b); for pm they read (p, p), (p, m), ...
    """

    basis_a: str
    basis_b: str
    P_hh: float
    P_hv: float
    P_vh: float
    P_vv: float
    tail_mass: float = 0.0

    def __post_init__(self):
        if min(self.P_hh, self.P_hv, self.P_vh, self.P_vv) < 0:
            raise ValueError("Subspace probabilities must be non-negative.")

    @property
    def P_11(self):
        return self.P_hh + self.P_hv + self.P_vh + self.P_vv

    def _normalized(self, value):
        if self.P_11 <= 0:
            raise EmptySubspaceError(
                f"No (1,1) events in the {self.basis_a}/{self.basis_b} setting."
            )
        return value / self.P_11

    @property
    def p_hh(self):
        return self._normalized(self.P_hh)

    @property
    def p_hv(self):
        return self._normalized(self.P_hv)

    @property
    def p_vh(self):
        return self._normalized(self.P_vh)

    @property
    def p_vv(self):
        return self._normalized(self.P_vv)

    def normalized(self):
        """Normalized probabilities as a 2x2 array [outcome_a, outcome_b]."""
        return np.array([[self.p_hh, self.p_hv], [self.p_vh, self.p_vv]])

    @classmethod
    def from_distribution(cls, distribution, basis_a, basis_b):
        return cls(
            basis_a=basis_a,
            basis_b=basis_b,
            P_hh=distribution["1010"],
            P_hv=distribution["1001"],
            P_vh=distribution["0110"],
            P_vv=distribution["0101"],
            tail_mass=distribution.tail_mass,
        )


def subspace_probs(state, etas, rotation_a, rotation_b):
    """(1,1)-subspace probabilities of the state analysed in (rotation_a, rotation_b).

    Raises
    ------
    EmptySubspaceError
        If no exactly-one-click-per-side event can occur.
    """
    rotation_a, rotation_b = get_basis(rotation_a), get_basis(rotation_b)
    distribution = rotated_click_distribution(state, etas, rotation_a, rotation_b)
    probs = SubspaceProbs.from_distribution(distribution, rotation_a.name, rotation_b.name)
    if probs.P_11 <= 0:
        raise EmptySubspaceError(
            f"P_11 vanishes for the {rotation_a.name}/{rotation_b.name} setting."
        )
    return probs


def subspace_probs_grid(state, etas, bases=("hv", "pm", "rl"), verbose=False):
    """SubspaceProbs for every (basis_a, basis_b) combination in one pass
    over the blocks, computing each block representation only once.

    Returns
    -------
    dict
        {(name_a, name_b): SubspaceProbs}
    """
    etas = Efficiencies.from_values(etas)
    eta = etas.as_array()
    rotations = [get_basis(b) for b in bases]
    totals = {(ra.name, rb.name): np.zeros((4, 4)) for ra in rotations for rb in rotations}

    sweeps = [iter_block_representations(r, state.n_max) for r in rotations]
    for n, block in enumerate(state.blocks):
        reps = [next(sweep) for sweep in sweeps]
        Fa = _side_factors(n, eta[0], eta[1], lambda k: k)
        Fb = _side_factors(n, eta[2], eta[3], lambda k: n - k)
        for ra, (Da, _) in zip(rotations, reps):
            left = rotate_block(block, Da, None, diagonal=state.diagonal)
            left_diagonal = state.diagonal and Da is None
            for rb, (_, Db) in zip(rotations, reps):
                rotated = rotate_block(left, None, Db)
                diagonal = left_diagonal and Db is None
                totals[(ra.name, rb.name)] += _accumulate(
                    np.abs(rotated) ** 2, Fa, Fb, diagonal
                )
        if verbose and n % 50 == 0:
            print(f"subspace_probs_grid: block {n} of {state.n_max}")

    grid = {}
    for key, matrix in totals.items():
        distribution = ClickDistribution(matrix.reshape(16), state.tail_mass)
        grid[key] = SubspaceProbs.from_distribution(distribution, *key)
    return grid


def _higher_order_mask():
    side = np.arange(4)
    pa, pb = np.meshgrid(side, side, indexing="ij")
    return ((pa > 0) & (pb > 0) & ((pa == 3) | (pb == 3))).reshape(16)


def subspace_ratio(state, etas):
    """Share of two-sided detections that come from a higher photon-number
    subspace.

    Higher-order events have at least one click on each side and both
    detectors firing on at least one side; they are divided by all events
    with at least one click per side, i.e. P_higher / (P_11 + P_higher).
    """
    distribution = click_distribution(state, etas)
    probs = SubspaceProbs.from_distribution(distribution, "hv", "hv")
    if probs.P_11 <= 0:
        raise EmptySubspaceError("P_11 vanishes, the subspace ratio is undefined.")
    higher = float(np.sum(distribution.probs[_higher_order_mask()]))
    return higher / (probs.P_11 + higher)


def visibility_from_distribution(distribution):
    """One-pair visibility (anti-correlated minus correlated over their sum)."""
    anti = distribution["1001"] + distribution["0110"]
    corr = distribution["1010"] + distribution["0101"]
    if anti + corr <= 0:
        raise EmptySubspaceError("No (1,1) events, visibility undefined.")
    return (anti - corr) / (anti + corr)


def ideal_visibility_closed(tau, etas):
    """Same-basis one-pair visibility of the ideal PDC model."""
    return visibility_from_distribution(click_distribution_closed(tau, etas))


# one-pair singlet over |hh>, |hv>, |vh>, |vv>
SINGLET = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2)


def singlet_correlations(basis_a="hv", basis_b="hv"):
    """Outcome table pi[i, j] of one singlet pair analysed in (basis_a, basis_b)."""
    rotation_a, rotation_b = get_basis(basis_a), get_basis(basis_b)
    table = np.empty((2, 2))
    for i, e_a in enumerate(rotation_a.outcome_states()):
        for j, e_b in enumerate(rotation_b.outcome_states()):
            table[i, j] = abs(np.kron(e_a, e_b).conj() @ SINGLET) ** 2
    return table


# same basis on both sides: perfectly anti-correlated
SINGLET_SAME_BASIS = np.array([[0.0, 0.5], [0.5, 0.0]])


def ansatz_silent_probability(tau, etas, silent_set, correlations=SINGLET_SAME_BASIS):
    """Silent-set probability for independent, distinguishable singlet pairs
    with the PDC pair-number distribution.

    Each pair sends its a photon to outcome i and its b photon to outcome j
    with probability correlations[i, j]; every photon survives independently.
    The per-pair silent probability q_S turns the pair-number series into
    (1-x)^2 / (1 - x q_S)^2.
    """
    eta = Efficiencies.from_values(etas).as_array()
    loss = np.where([d in silent_set for d in DETECTORS], eta, 0.0)
    a_silent = 1.0 - loss[:2]
    b_silent = 1.0 - loss[2:]
    q = float(a_silent @ np.asarray(correlations) @ b_silent)
    x, one_minus_x = pair_ratio(tau)
    return one_minus_x**2 / (1.0 - x * q) ** 2


def ansatz_click_distribution(tau, etas, correlations=SINGLET_SAME_BASIS):
    probs = _inclusion_exclusion(
        lambda S: ansatz_silent_probability(tau, etas, S, correlations)
    )
    return ClickDistribution(np.clip(probs, 0.0, 1.0), tail_mass=0.0)


def ansatz_visibility(tau, eta):
    """One-pair visibility of the distinguishable-pairs ansatz.

    Parameters
    ----------
    tau : float
        Interaction parameter, sets the pair-number distribution. At tau = 0
        the one-pair limit 1 is returned.
    eta : float or Efficiencies
        Collection efficiency, in (0, 1].

    Returns
    -------
    float
    """
    etas = Efficiencies.from_values(eta)
    if np.any(etas.as_array() <= 0):
        raise ValueError("The ansatz visibility needs non-zero efficiencies.")
    if tau == 0:
        # tau -> 0 limit: only single pairs survive, one singlet at a time
        return 1.0
    return visibility_from_distribution(ansatz_click_distribution(tau, etas))
