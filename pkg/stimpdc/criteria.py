"""
Entanglement analysis in the (1,1) subspace: visibilities, spin correlations,
linear-inversion tomography, the partial-transpose test and the C1 and C2
criteria.

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

import warnings
from dataclasses import dataclass

import numpy as np

from .detection import EmptySubspaceError, SubspaceProbs
from .run_config import ConfigError
from .state_engine import BASES, get_basis

BASIS_NAMES = ("hv", "pm", "rl")
BASIS_PAIRS = tuple((x, y) for x in BASIS_NAMES for y in BASIS_NAMES)

# min PT eigenvalue below -ppt_tol declares entanglement
ppt_tol = 1e-10
hermitian_tol = 1e-8
# data-quality thresholds for tomographic input
normalization_tol = 0.05
single_side_tol = 0.01
# C1 is undefined once its denominator is at rounding level
c1_denominator_tol = 1e-12
# largest gap allowed between the two same-basis visibility forms
spin_identity_tol = 1e-12


def visibility(probs):
    """(P_anti - P_corr) / (P_anti + P_corr), first outcomes (h, p, r) counted
    as +1 on both sides."""
    anti = probs.P_hv + probs.P_vh
    corr = probs.P_hh + probs.P_vv
    if anti + corr <= 0:
        raise EmptySubspaceError(
            f"Visibility undefined for {probs.basis_a}/{probs.basis_b}: no (1,1) events."
        )
    return (anti - corr) / (anti + corr)


def visibility_as_spin_correlation(probs):
    """Same-basis visibility written as p_hv + p_vh - p_hh - p_vv, i.e. minus
    the spin correlation along the analysis axis."""
    if probs.basis_a != probs.basis_b:
        raise ValueError(
            "Visibility as spin anti-correlation needs the same basis on both "
            f"sides, got {probs.basis_a}/{probs.basis_b}."
        )
    value = probs.p_hv + probs.p_vh - probs.p_hh - probs.p_vv
    if not np.isclose(value, visibility(probs), rtol=0, atol=spin_identity_tol):
        raise ValueError(
            f"Spin anti-correlation {value} and visibility {visibility(probs)} disagree "
            f"for {probs.basis_a}/{probs.basis_b}; probabilities are not finite."
        )
    return value


@dataclass(frozen=True)
class VisibilitySet:
    """Visibilities V[X, Y] for analysis bases X (side a) and Y (side b)."""

    values: dict

    def __post_init__(self):
        for key, value in self.values.items():
            if abs(value) > 1 + 1e-10:
                raise ValueError(f"|V{key}| = {abs(value)} exceeds 1.")

    def __getitem__(self, key):
        if isinstance(key, str):
            key = (key[:2], key[2:])
        return self.values[key]

    @classmethod
    def from_subspace_probs(cls, grid):
        """Builds from a {(X, Y): SubspaceProbs} mapping."""
        return cls({key: visibility(probs) for key, probs in grid.items()})

    def diagonal(self):
        missing = [x for x in BASIS_NAMES if (x, x) not in self.values]
        if missing:
            raise ConfigError(f"Missing same-basis visibilities for {missing}.")
        return tuple(self.values[(x, x)] for x in BASIS_NAMES)

    def as_row(self):
        """The nine visibilities in the order hvhv, hvpm, ..., rlrl."""
        return [self.values.get(key, np.nan) for key in BASIS_PAIRS]


def total_spin_correlation(vis):
    """<sigma_a . sigma_b> = -(V_pm,pm + V_rl,rl + V_hv,hv)."""
    return -float(np.sum(vis.diagonal()))


def c2(vis):
    """|V_pm,pm + V_rl,rl + V_hv,hv|, exceeding 1 only for entangled states."""
    return abs(float(np.sum(vis.diagonal())))


def c1(probs_hvhv, vis):
    """Partial-transpose criterion in its six-term form,
    16 p_hh p_vv / ((V_pm,pm + V_rl,rl)^2 + (V_pm,rl - V_rl,pm)^2).
    Values below 1 certify entanglement.

    Parameters
    ----------
    probs_hvhv : SubspaceProbs
        Probabilities measured in hv on both sides.
    vis : VisibilitySet
        Needs the pm/pm, rl/rl, pm/rl and rl/pm entries.

    Returns
    -------
    float
    """
    numerator = 16 * probs_hvhv.p_hh * probs_hvhv.p_vv
    denominator = (vis["pmpm"] + vis["rlrl"]) ** 2 + (vis["pmrl"] - vis["rlpm"]) ** 2
    if denominator <= c1_denominator_tol:
        raise ValueError("C1 is not applicable: its denominator vanishes.")
    return numerator / denominator


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Two-qubit density matrix over |hh>, |hv>, |vh>, |vv> (side a first)."""

    matrix: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=complex)
        if rho.shape != (4, 4):
            raise ValueError(f"Expected a 4x4 matrix, got shape {rho.shape}.")
        object.__setattr__(self, "matrix", rho)

    def element(self, row, column):
        """Element by labels, e.g. element('hv', 'vh')."""
        index = {"hh": 0, "hv": 1, "vh": 2, "vv": 3}
        return self.matrix[index[row], index[column]]

    def trace(self):
        return float(np.real(np.trace(self.matrix)))

    def is_hermitian(self, tol=1e-10):
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T)) <= tol)


def _correlators(probs):
    """(<O_a x O_b>, <O_a x 1>, <1 x O_b>) from normalized probabilities."""
    p = probs.normalized()
    signs = np.array([1.0, -1.0])
    return (
        float(signs @ p @ signs),
        float(signs @ p.sum(axis=1)),
        float(p.sum(axis=0) @ signs),
    )


def _check_normalizations(grid):
    same_basis = np.array([grid[(x, x)].P_11 for x in BASIS_NAMES])
    if np.all(same_basis > 0):
        spread = (same_basis.max() - same_basis.min()) / same_basis.mean()
        if spread > normalization_tol:
            warnings.warn(
                f"(1,1) normalizations of the same-basis settings differ by {spread:.1%}, "
                "beyond the 5% expected for a rotation-invariant source."
            )


def tomography(grid):
    """Linear-inversion reconstruction of the (1,1)-subspace density matrix.

    Each basis pair (X, Y) gives <O_X x O_Y> with O the +1/-1 observable of
    the analysis basis. Single-side expectations are measured by three basis
    pairs each and are averaged. rho = 1/4 sum_ij <O_i x O_j> O_i x O_j, with
    O_0 the identity.

    Parameters
    ----------
    grid : dict
        {(X, Y): SubspaceProbs} for all nine pairs of hv, pm, rl.

    Returns
    -------
    DensityMatrix
    """
    missing = [key for key in BASIS_PAIRS if key not in grid]
    if missing:
        raise ConfigError(f"Tomography needs all nine basis pairs, missing {missing}.")
    _check_normalizations(grid)

    correlations = {}
    side_a = {x: [] for x in BASIS_NAMES}
    side_b = {y: [] for y in BASIS_NAMES}
    for x, y in BASIS_PAIRS:
        both, only_a, only_b = _correlators(grid[(x, y)])
        correlations[(x, y)] = both
        side_a[x].append(only_a)
        side_b[y].append(only_b)

    for side, values in (("a", side_a), ("b", side_b)):
        for basis, estimates in values.items():
            if np.ptp(estimates) > single_side_tol:
                warnings.warn(
                    f"Side {side} expectation in {basis} varies by {np.ptp(estimates):.3g} "
                    "across the basis pairs that measure it."
                )

    identity = np.eye(2)
    observables = {x: BASES[x].observable() for x in BASIS_NAMES}
    rho = np.kron(identity, identity).astype(complex)
    for x in BASIS_NAMES:
        rho += np.mean(side_a[x]) * np.kron(observables[x], identity)
        rho += np.mean(side_b[x]) * np.kron(identity, observables[x])
    for (x, y), value in correlations.items():
        rho += value * np.kron(observables[x], observables[y])
    return DensityMatrix(rho / 4)


def subspace_probs_from_density(rho, basis_a, basis_b):
    """Exact normalized (1,1)-subspace probabilities <e_i e_j| rho |e_i e_j>."""
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    rotation_a, rotation_b = get_basis(basis_a), get_basis(basis_b)
    probs = np.zeros((2, 2))
    for i, e_a in enumerate(rotation_a.outcome_states()):
        for j, e_b in enumerate(rotation_b.outcome_states()):
            ket = np.kron(e_a, e_b)
            probs[i, j] = np.real(ket.conj() @ rho @ ket)
    probs = np.clip(probs, 0.0, None)
    return SubspaceProbs(
        rotation_a.name, rotation_b.name, probs[0, 0], probs[0, 1], probs[1, 0], probs[1, 1]
    )


def probs_from_counts(counts, n_pulses, basis_a, basis_b):
    """SubspaceProbs estimated from coincidence counts.

    Parameters
    ----------
    counts : dict
        Counts keyed by 4-character firing mask ('1010', '1001', '0110', '0101').
    n_pulses : int
        Number of pulses the counts were collected over.
    """
    if n_pulses <= 0:
        raise ValueError("n_pulses must be positive.")
    return SubspaceProbs(
        basis_a,
        basis_b,
        counts.get("1010", 0) / n_pulses,
        counts.get("1001", 0) / n_pulses,
        counts.get("0110", 0) / n_pulses,
        counts.get("0101", 0) / n_pulses,
    )


def _partial_transpose(rho):
    # rho_{ij,kl} -> rho_{il,kj}
    return rho.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)


def partial_transpose_spectrum(rho):
    """Ascending eigenvalues of rho with the side-b indices transposed."""
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if np.max(np.abs(rho - rho.conj().T)) > hermitian_tol:
        raise ValueError("Partial-transpose test needs a Hermitian matrix.")
    return np.linalg.eigvalsh(_partial_transpose(rho))


def partial_transpose_min_eigenvalue(rho):
    """Smallest partial-transpose eigenvalue; negative values certify entanglement."""
    return float(partial_transpose_spectrum(rho)[0])


def ppt_status(min_eigenvalue, tol=ppt_tol):
    if min_eigenvalue < -tol:
        return "entangled"
    if min_eigenvalue <= 0:
        return "boundary"
    return "separable"


def physicality(rho, tol=ppt_tol):
    """Eigenvalues of rho and whether none is below -tol.

    Linear inversion of noisy counts can give small negative eigenvalues;
    they are reported, not projected away.
    """
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    eigenvalues = np.linalg.eigvalsh(rho)
    return eigenvalues, bool(eigenvalues[0] >= -tol)


@dataclass(frozen=True)
class CriteriaResult:
    c1: float
    c2: float
    min_pt_eigenvalue: float
    total_spin_correlation: float

    @property
    def entangled_by_c1(self):
        return bool(self.c1 < 1)

    @property
    def entangled_by_c2(self):
        return bool(self.c2 > 1)

    @property
    def entangled_by_ppt(self):
        return bool(self.min_pt_eigenvalue < -ppt_tol)

    @property
    def ppt_status(self):
        return ppt_status(self.min_pt_eigenvalue)

    def as_dict(self):
        return {
            "C1": self.c1,
            "C2": self.c2,
            "min_pt_eig": self.min_pt_eigenvalue,
            "total_spin_correlation": self.total_spin_correlation,
            "entangled_by_c1": self.entangled_by_c1,
            "entangled_by_c2": self.entangled_by_c2,
            "entangled_by_ppt": self.entangled_by_ppt,
            "ppt_status": self.ppt_status,
        }


def evaluate_criteria(grid):
    """Runs tomography and both criteria on the nine-basis probabilities.

    C1 is reported as nan when its denominator vanishes (e.g. fully
    dephased input).

    Returns
    -------
    CriteriaResult, DensityMatrix, VisibilitySet
    """
    rho = tomography(grid)
    vis = VisibilitySet.from_subspace_probs(grid)
    _, physical = physicality(rho)
    if not physical:
        warnings.warn("Reconstructed density matrix has negative eigenvalues.")
    try:
        c1_value = c1(grid[("hv", "hv")], vis)
    except ValueError:
        c1_value = np.nan
    result = CriteriaResult(
        c1=c1_value,
        c2=c2(vis),
        min_pt_eigenvalue=partial_transpose_min_eigenvalue(rho),
        total_spin_correlation=total_spin_correlation(vis),
    )
    return result, rho, vis
