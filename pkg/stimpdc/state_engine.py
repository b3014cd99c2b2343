"""
Builds, truncates and rotates the photon state produced by stimulated parametric
down-conversion, stored in a block-Fock representation (one amplitude matrix per
pair number n).

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

import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm, schur

# hard cap on the pair-number truncation
# can be raised through the environment for very large interaction parameters
default_n_max_cap = int(os.environ.get("STIMPDC_NMAX_CAP", 2000))


class InfeasibleTruncationError(ValueError):
    """Raised when the requested tail tolerance needs more pair blocks
    than the configured hard cap allows."""


def default_tail_tol(tau):
    """Default truncation tolerance: 1e-9 up to tau=1.5, 1e-6 above."""
    return 1e-9 if tau <= 1.5 else 1e-6


def _log_cosh(tau):
    return tau + np.log1p(np.exp(-2.0 * tau)) - np.log(2.0)


def pair_ratio(tau):
    """Returns x = tanh^2(tau) together with 1 - x = 1/cosh^2(tau),
    the latter computed without cancellation."""
    one_minus_x = np.exp(-2.0 * _log_cosh(tau))
    return np.tanh(tau) ** 2, one_minus_x


def pair_number_distribution(tau, n_max):
    """Probabilities P(n) = (n+1)(1-x)^2 x^n for n = 0..n_max.

    Parameters
    ----------
    tau : float
        Interaction parameter.
    n_max : int
        Last pair number included.

    Returns
    -------
    np.ndarray
        Length n_max+1 vector of pair-number probabilities.
    """
    n = np.arange(n_max + 1)
    if tau == 0:
        return (n == 0).astype(float)
    x, one_minus_x = pair_ratio(tau)
    log_p = np.log(n + 1.0) + 2 * np.log(one_minus_x) + n * np.log(x)
    return np.exp(log_p)


def tail_mass(tau, n_max):
    """Probability carried by pair numbers n > n_max.

    Uses the closed form x^(N+1) ((N+2)(1-x) + x) of the sum over
    (n+1)(1-x)^2 x^n for n > N.
    """
    if tau == 0:
        return 0.0
    x, one_minus_x = pair_ratio(tau)
    return float(x ** (n_max + 1) * ((n_max + 2) * one_minus_x + x))


def select_n_max(tau, tail_tol, cap=None):
    """Smallest truncation N whose analytic tail does not exceed tail_tol.

    Parameters
    ----------
    tau : float
        Interaction parameter, tau >= 0.
    tail_tol : float
        Target tail probability, 0 < tail_tol < 1.
    cap : int, optional
        Hard cap on N. Defaults to `default_n_max_cap` (2000, or the value of
        the STIMPDC_NMAX_CAP environment variable).

    Returns
    -------
    int
        The truncation N.
    """
    if tau < 0:
        raise ValueError(f"Interaction parameter must be non-negative, got {tau}.")
    if not 0 < tail_tol < 1:
        raise ValueError(f"tail_tol must lie in (0, 1), got {tail_tol}.")
    if cap is None:
        cap = default_n_max_cap
    if tau == 0:
        return 0

    x, one_minus_x = pair_ratio(tau)
    if x >= 1.0:
        raise InfeasibleTruncationError(
            f"tau={tau} is numerically indistinguishable from tanh(tau)=1, "
            "no finite truncation exists."
        )
    N = np.arange(cap + 1)
    log_tail = (N + 1) * np.log(x) + np.log((N + 2) * one_minus_x + x)
    feasible = np.nonzero(log_tail <= np.log(tail_tol))[0]
    if len(feasible) == 0:
        raise InfeasibleTruncationError(
            f"Reaching a tail of {tail_tol} at tau={tau} needs more than {cap} "
            "pair blocks. Increase STIMPDC_NMAX_CAP or loosen tail_tol."
        )
    return int(feasible[0])


def mean_pairs(tau):
    """Average photon-pair number 2 sinh^2(tau)."""
    return 2.0 * np.sinh(tau) ** 2


@dataclass(frozen=True)
class InteractionParams:
    """Interaction parameter together with the pump mapping
    tau = tau_max * sqrt(pulse_energy / max_energy). Energies in uJ."""

    tau: float
    tau_max: float
    pulse_energy: float
    max_energy: float

    def __post_init__(self):
        if self.max_energy <= 0:
            raise ValueError("max_energy must be positive.")
        if min(self.tau, self.tau_max, self.pulse_energy) < 0:
            raise ValueError("Interaction parameters and energies must be non-negative.")

    @classmethod
    def from_pump(cls, tau_max, pulse_energy, max_energy):
        tau = tau_max * np.sqrt(pulse_energy / max_energy)
        return cls(float(tau), float(tau_max), float(pulse_energy), float(max_energy))


@dataclass(frozen=True, eq=False)
class PairBlockState:
    """Truncated stimulated-PDC state.

    blocks[n][m_a, m_b] is the amplitude of
    |n-m_a>_{a_h} |m_a>_{a_v} |m_b>_{b_h} |n-m_b>_{b_v},
    so that every block conserves the photon number n on each side.

    Attributes
    ----------
    n_max : int
        Last pair number kept.
    blocks : tuple of np.ndarray
        (n+1)x(n+1) complex amplitude matrices, n = 0..n_max.
    tail_mass : float
        Upper bound on the probability discarded beyond n_max.
    diagonal : bool
        True when all blocks are known to be diagonal (unrotated state),
        which lets downstream code skip the off-diagonal entries.
    """

    n_max: int
    blocks: tuple
    tail_mass: float
    diagonal: bool = False
    tau: float = field(default=None, compare=False)

    def block_norms(self):
        """Squared norm of each block."""
        return np.array([np.sum(np.abs(b) ** 2) for b in self.blocks])

    def norm2(self):
        return float(np.sum(self.block_norms()))


def build_pdc_state(tau, n_max):
    """Builds the stimulated PDC state truncated at n_max pairs.

    Amplitudes (-1)^m tanh^n(tau) / cosh^2(tau) on the block diagonals are
    evaluated in log space so that large n does not underflow prematurely.

    Parameters
    ----------
    tau : float
        Interaction parameter, tau >= 0.
    n_max : int
        Truncation in pair number, n_max >= 0.

    Returns
    -------
    PairBlockState
    """
    if tau < 0 or n_max < 0:
        raise ValueError("tau and n_max must be non-negative.")
    log_cosh2 = 2.0 * _log_cosh(tau)
    if not np.isfinite(log_cosh2):
        raise OverflowError(f"cosh^2(tau) is not finite for tau={tau}.")

    blocks = []
    for n in range(n_max + 1):
        if tau == 0:
            amplitude = 1.0 if n == 0 else 0.0
        else:
            amplitude = np.exp(n * np.log(np.tanh(tau)) - log_cosh2)
        signs = (-1.0) ** np.arange(n + 1)
        blocks.append(np.diag(amplitude * signs).astype(complex))

    return PairBlockState(
        n_max=n_max,
        blocks=tuple(blocks),
        tail_mass=tail_mass(tau, n_max),
        diagonal=True,
        tau=tau,
    )


@dataclass(frozen=True, eq=False)
class PolarizationRotation:
    """Analysis basis of one spatial mode.

    Row k of `matrix` holds the (h, v) components of the k-th analysis mode,
    so the first row of PM is the +45 mode (h+v)/sqrt(2) and the first row of
    RL is (h - i v)/sqrt(2). Outcomes are labelled by `labels`, first outcome
    counted as +1 in visibilities and correlations.
    """

    name: str
    matrix: np.ndarray
    labels: tuple = ("h", "v")

    def __post_init__(self):
        U = np.asarray(self.matrix, dtype=complex)
        if U.shape != (2, 2):
            raise ValueError("A polarization rotation is a 2x2 matrix.")
        if not np.allclose(U.conj().T @ U, np.eye(2), atol=1e-12, rtol=0):
            raise ValueError(f"Rotation {self.name} is not unitary.")
        object.__setattr__(self, "matrix", U)

    def is_identity(self):
        return np.allclose(self.matrix, np.eye(2), atol=1e-15, rtol=0)

    def outcome_states(self):
        """Single-photon polarization kets of the two analysis outcomes."""
        return self.matrix[0], self.matrix[1]

    def observable(self):
        """+1/-1 valued observable |first><first| - |second><second|."""
        first, second = self.outcome_states()
        return np.outer(first, first.conj()) - np.outer(second, second.conj())


_s2 = 1 / np.sqrt(2)
HV = PolarizationRotation("hv", np.eye(2), ("h", "v"))
PM = PolarizationRotation("pm", _s2 * np.array([[1, 1], [1, -1]]), ("p", "m"))
RL = PolarizationRotation("rl", _s2 * np.array([[1, -1j], [1, 1j]]), ("r", "l"))

BASES = {"hv": HV, "pm": PM, "rl": RL}


def get_basis(basis):
    """Accepts a basis name ('hv', 'pm', 'rl') or a PolarizationRotation."""
    if isinstance(basis, PolarizationRotation):
        return basis
    try:
        return BASES[basis]
    except KeyError:
        raise ValueError(
            f"Unknown analysis basis {basis!r}, expected one of {list(BASES)}."
        )


def symmetric_power(matrix, n):
    """Representation of a 2x2 unitary on the n-photon space of two modes.

    The basis is ordered as |n-k, k>, k = 0..n (k photons in the second mode).
    The unitary is written as exp(L) through its Schur form, L is promoted to
    the n-photon generator sum_ij L_ij a_i^dag a_j and exponentiated.

    Parameters
    ----------
    matrix : np.ndarray
        2x2 unitary acting on the single-photon amplitudes.
    n : int
        Photon number.

    Returns
    -------
    np.ndarray
        (n+1)x(n+1) unitary; equals `matrix` for n=1.
    """
    matrix = np.asarray(matrix, dtype=complex)
    if n == 0:
        return np.ones((1, 1), dtype=complex)

    # unitaries are normal, so the complex Schur form is diagonal
    T, Z = schur(matrix, output="complex")
    generator = Z @ np.diag(np.log(np.diag(T))) @ Z.conj().T

    k = np.arange(n + 1)
    lifted = np.diag(generator[0, 0] * (n - k) + generator[1, 1] * k)
    # a_2^dag a_1 |n-k, k> = sqrt((n-k)(k+1)) |n-k-1, k+1>
    lifted[k[1:], k[:-1]] += generator[1, 0] * np.sqrt((n - k[:-1]) * (k[:-1] + 1))
    # a_1^dag a_2 |n-k, k> = sqrt(k(n-k+1)) |n-k+1, k-1>
    lifted[k[:-1], k[1:]] += generator[0, 1] * np.sqrt(k[1:] * (n - k[1:] + 1))
    return expm(lifted)


def iter_symmetric_powers(matrix, n_max):
    """Yields symmetric_power(matrix, n) for n = 0..n_max.

    Each representation follows from the previous one by one creation
    operator, |n-l, l> = a_2^dag |n-l, l-1> / sqrt(l) and
    |n, 0> = a_1^dag |n-1, 0> / sqrt(n), so a whole sweep costs one
    (n+1)x(n) update per block instead of a matrix exponential.
    """
    U = np.asarray(matrix, dtype=complex)
    current = np.ones((1, 1), dtype=complex)
    yield current
    for n in range(1, n_max + 1):
        k = np.arange(n)
        raised_first = np.zeros((n + 1, n), dtype=complex)
        raised_second = np.zeros((n + 1, n), dtype=complex)
        # a_1^dag |n-1-k, k> = sqrt(n-k) |n-k, k>
        raised_first[:n] = np.sqrt(n - k)[:, np.newaxis] * current
        # a_2^dag |n-1-k, k> = sqrt(k+1) |n-1-k, k+1>
        raised_second[1:] = np.sqrt(k + 1)[:, np.newaxis] * current

        following = np.empty((n + 1, n + 1), dtype=complex)
        following[:, 0] = (
            U[0, 0] * raised_first[:, 0] + U[1, 0] * raised_second[:, 0]
        ) / np.sqrt(n)
        following[:, 1:] = (U[0, 1] * raised_first + U[1, 1] * raised_second) / np.sqrt(
            np.arange(1, n + 1)
        )
        current = following
        yield current


@lru_cache(maxsize=256)
def _cached_representation(name, entries, n):
    Da = symmetric_power(np.array(entries, dtype=complex).reshape(2, 2).conj(), n)
    Da.setflags(write=False)
    Db = Da[::-1, ::-1]
    return Da, Db


def block_representations(rotation, n):
    """Matrices (D_a, D_b) acting on the row and column index of block n.

    Amplitudes transform with the complex conjugate of the analysis matrix.
    Side b is indexed by its horizontal photon count, hence the reversal.
    Returns (None, None) for the identity rotation. Results are memoized
    per rotation and n and returned read-only.
    """
    if rotation.is_identity():
        return None, None
    return _cached_representation(rotation.name, tuple(rotation.matrix.ravel()), n)


def iter_block_representations(rotation, n_max):
    """Yields block_representations(rotation, n) for n = 0..n_max in order."""
    if rotation.is_identity():
        for _ in range(n_max + 1):
            yield None, None
        return
    for Da in iter_symmetric_powers(rotation.matrix.conj(), n_max):
        yield Da, Da[::-1, ::-1]


def relative_rotation(rotation_a, rotation_b):
    """Rotation R_b R_a^dag of mode b seen from the analysis basis of mode a.

    The PDC blocks obey S Q S^T = lambda Q for every rotation S of both modes,
    with Q the sign-alternating anti-diagonal and |lambda| = 1. Measuring the
    PDC state in (rotation_a, rotation_b) thus gives the same click statistics
    as measuring it in (hv, relative_rotation(rotation_a, rotation_b)).
    """
    rotation_a, rotation_b = get_basis(rotation_a), get_basis(rotation_b)
    return PolarizationRotation(
        f"{rotation_b.name}/{rotation_a.name}",
        rotation_b.matrix @ rotation_a.matrix.conj().T,
        rotation_b.labels,
    )


def rotate_block(block, Da, Db, diagonal=False):
    """B_n -> D_a B_n D_b^T, with None standing for the identity."""
    if diagonal and Da is None and Db is not None:
        return np.diag(block)[:, np.newaxis] * Db.T
    if Da is not None:
        # Da @ diag(b) for the unrotated (diagonal) state
        block = Da * np.diag(block)[np.newaxis, :] if diagonal else Da @ block
    if Db is not None:
        block = block @ Db.T
    return block


def iter_rotated_blocks(state, rotation_a, rotation_b):
    """Yields (n, rotated block) without holding the whole rotated state,
    which keeps memory bounded for large truncations."""
    rotation_a = get_basis(rotation_a)
    rotation_b = get_basis(rotation_b)
    representations = zip(
        iter_block_representations(rotation_a, state.n_max),
        iter_block_representations(rotation_b, state.n_max),
    )
    for (n, block), ((Da, _), (_, Db)) in zip(enumerate(state.blocks), representations):
        for D in (Da, Db):
            if D is not None and D.shape[0] != block.shape[0]:
                raise ValueError(
                    f"Block {n} has shape {block.shape}, representation has {D.shape}."
                )
        yield n, rotate_block(block, Da, Db, diagonal=state.diagonal)


def rotate(state, rotation_a, rotation_b):
    """Changes the analysis bases of both spatial modes.

    Parameters
    ----------
    state : PairBlockState
        State to rotate.
    rotation_a, rotation_b : PolarizationRotation or str
        Analysis bases of modes a and b.

    Returns
    -------
    PairBlockState
        Rotated state. Block norms are preserved.
    """
    rotation_a = get_basis(rotation_a)
    rotation_b = get_basis(rotation_b)
    if rotation_a.is_identity() and rotation_b.is_identity():
        return state
    blocks = tuple(block for _, block in iter_rotated_blocks(state, rotation_a, rotation_b))
    return PairBlockState(
        n_max=state.n_max,
        blocks=blocks,
        tail_mass=state.tail_mass,
        diagonal=False,
        tau=state.tau,
    )
