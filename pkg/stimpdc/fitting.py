"""
Recovers the maximum interaction parameter and the collection efficiencies
from count datasets by Poisson-weighted nonlinear least squares.

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
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import approx_fprime, brentq, least_squares, minimize
from scipy.special import expit, logit

from .detection import (
    DETECTORS,
    Efficiencies,
    fanout_distribution_closed,
    pattern_index,
    pdc_click_distribution,
    single_detector_prob_closed,
)
from .montecarlo import FANOUT_BASIS
from .state_engine import InteractionParams

# warn when the Fisher matrix at the optimum is this badly conditioned
max_condition_number = 1e12
fallback_guess = (1.0, 0.05)


class UnidentifiableError(ValueError):
    """Raised when a dataset cannot constrain the fit parameters."""


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with one standard error each.

    `residual` is the Poisson-weighted sum of squares at the optimum and
    `objective_history` the best objective after every simplex iteration.
    """

    tau_max: float
    etas: Efficiencies
    tau_max_err: float
    eta_errs: tuple
    residual: float
    n_points: int
    converged: bool
    condition_number: float = np.nan
    n_iterations: int = 0
    weighting: str = "poisson"
    objective_history: tuple = field(default=(), repr=False)

    def as_dict(self):
        report = {
            "tau_max": self.tau_max,
            "tau_max_err": self.tau_max_err,
            "residual": self.residual,
            "n_points": self.n_points,
            "converged": self.converged,
            "condition_number": self.condition_number,
            "n_iterations": self.n_iterations,
            "weighting": self.weighting,
        }
        for name, value, err in zip(DETECTORS, self.etas.as_array(), self.eta_errs):
            report["eta_" + name] = float(value)
            report["eta_" + name + "_err"] = float(err)
        return report


def _interaction(tau_max, energy, max_energy):
    if max_energy <= 0 or not 0 <= energy <= max_energy * (1 + 1e-12):
        raise ValueError(f"Pulse energy {energy} outside [0, max_energy={max_energy}].")
    return InteractionParams.from_pump(tau_max, min(energy, max_energy), max_energy).tau


@lru_cache(maxsize=1024)
def _cached_probs(tau, eta, basis_a, basis_b):
    if basis_a == FANOUT_BASIS:
        probs = fanout_distribution_closed(tau, eta).probs
    else:
        probs = pdc_click_distribution(tau, eta, basis_a, basis_b).probs
    probs.setflags(write=False)
    return probs


def _distribution_probs(tau, etas, basis_a, basis_b):
    """Read-only pattern probabilities, memoized per (tau, etas, basis pair)."""
    eta = tuple(float(e) for e in Efficiencies.from_values(etas).as_array())
    return _cached_probs(float(tau), eta, basis_a, basis_b)


def predict_rate(tau_max, etas, energy, max_energy, pattern, basis_a="hv", basis_b="hv"):
    """Expected fraction of pulses showing `pattern` at a pulse energy.

    Parameters
    ----------
    tau_max : float
        Interaction parameter at max_energy.
    etas : Efficiencies or float
        Channel efficiencies.
    energy, max_energy : float
        Pulse energies in uJ; tau = tau_max sqrt(energy / max_energy).
    pattern : str
        A detector name ('ah', 'av', 'bh', 'bv') or a 4-character firing mask.
    basis_a, basis_b : str
        Analysis bases, or 'hsplit' for the fan-out masks.

    Returns
    -------
    float
        Probability per pulse, in [0, 1].
    """
    etas = Efficiencies.from_values(etas)
    tau = _interaction(tau_max, energy, max_energy)
    if pattern in DETECTORS:
        # single-side marginals are basis independent
        eta = etas.as_array()[DETECTORS.index(pattern)]
        return float(single_detector_prob_closed(tau, eta))
    probs = _distribution_probs(tau, etas, basis_a, basis_b)
    return float(np.clip(probs[pattern_index(pattern)], 0.0, 1.0))


def predict_dataset(tau_max, etas, dataset):
    """predict_rate for every row, sharing one distribution per
    (energy, basis pair)."""
    etas = Efficiencies.from_values(etas)
    max_energy = max(dataset.energies())
    groups = defaultdict(list)
    for i, row in enumerate(dataset.rows):
        groups[(row.pulse_energy_uJ, row.basis_a, row.basis_b)].append(i)

    predicted = np.empty(len(dataset.rows))
    for (energy, basis_a, basis_b), indices in groups.items():
        tau = _interaction(tau_max, energy, max_energy)
        distribution = None
        for i in indices:
            pattern = dataset.rows[i].pattern
            if pattern in DETECTORS:
                eta = etas.as_array()[DETECTORS.index(pattern)]
                predicted[i] = single_detector_prob_closed(tau, eta)
                continue
            if distribution is None:
                distribution = _distribution_probs(tau, etas, basis_a, basis_b)
            predicted[i] = distribution[pattern_index(pattern)]
    return np.clip(predicted, 0.0, 1.0)


def _informed_detectors(dataset):
    informed = set()
    for row in dataset.rows:
        if row.pattern in DETECTORS:
            informed.add(row.pattern)
        elif row.basis_a == FANOUT_BASIS:
            informed.update(("ah", "bh"))
        else:
            informed.update(DETECTORS)
    return informed


def _check_identifiable(dataset, shared_eta):
    energies = dataset.energies()
    if len(energies) < 2:
        raise UnidentifiableError("Fitting needs at least two distinct pulse energies.")
    if not any(row.counts > 0 for row in dataset.rows):
        raise UnidentifiableError("The dataset holds no counts.")
    patterns = {(row.basis_a, row.pattern) for row in dataset.rows}
    if len(patterns) < 2 and not shared_eta:
        raise UnidentifiableError(
            "A single pattern cannot constrain four efficiencies; use shared_eta."
        )
    if not shared_eta:
        missing = set(DETECTORS) - _informed_detectors(dataset)
        if missing:
            raise UnidentifiableError(
                f"No data constrain the efficiencies of {sorted(missing)}; use shared_eta."
            )


def _low_energy_point(dataset):
    """Mean single-detector fraction at the lowest and highest energies."""
    singles = [row for row in dataset.rows if row.pattern in DETECTORS]
    if not singles:
        return None
    energies = sorted({row.pulse_energy_uJ for row in singles})
    mean = lambda e: np.mean([r.fraction for r in singles if r.pulse_energy_uJ == e])
    return energies[0], mean(energies[0]), energies[-1], mean(energies[-1])


def initial_guess(dataset):
    """Heuristic starting point (tau_max, eta).

    tau_max follows from the saturation level of the single counts at the
    highest energy once eta is fixed, and eta is then chosen so that the
    lowest-energy single counts are reproduced. Falls back to
    (1.0, 0.05) when the single counts do not allow this.
    """
    point = _low_energy_point(dataset)
    if point is None:
        return fallback_guess
    e_min, f_min, e_max, f_max = point
    if not (0 < f_min < f_max < 1) or e_min >= e_max:
        return fallback_guess

    def tau_max_for(eta):
        x = f_max / (eta + (1 - eta) * f_max)
        return np.arctanh(np.sqrt(min(x, 1 - 1e-15)))

    def mismatch(log_eta):
        eta = np.exp(log_eta)
        tau = tau_max_for(eta) * np.sqrt(e_min / e_max)
        return single_detector_prob_closed(tau, eta) - f_min

    try:
        log_eta = brentq(mismatch, np.log(1e-6), 0.0, xtol=1e-12)
    except ValueError:
        return fallback_guess
    eta = float(np.exp(log_eta))
    return float(tau_max_for(eta)), eta


def _unpack(theta, shared_eta):
    tau_max = float(np.exp(theta[0]))
    etas = expit(theta[1:])
    if shared_eta:
        etas = np.repeat(etas, 4)
    return tau_max, Efficiencies(*(float(e) for e in etas))


def fit(
    dataset,
    initial=None,
    shared_eta=False,
    refine=True,
    max_iter=4000,
    verbose=False,
):
    """Fits (tau_max, eta_ah, eta_av, eta_bh, eta_bv) to a count dataset.

    Minimizes sum (counts - n_pulses P)^2 / max(counts, 1) in the coordinates
    (log tau_max, logit eta), first with a Nelder-Mead simplex and then with a
    Levenberg-Marquardt refinement of the weighted residuals. Standard errors
    come from the Jacobian of the weighted residuals at the optimum.

    Parameters
    ----------
    dataset : CountDataset
        Count rows, at least two distinct energies.
    initial : tuple, optional
        (tau_max, eta) or (tau_max, Efficiencies). Defaults to initial_guess.
    shared_eta : bool
        Fit a single efficiency for all four channels.
    refine : bool
        Run the Levenberg-Marquardt refinement after the simplex.
    max_iter : int
        Iteration cap of the simplex.
    verbose : bool
        Prints the objective at the start and end.

    Returns
    -------
    FitResult
    """
    _check_identifiable(dataset, shared_eta)
    if initial is None:
        initial = initial_guess(dataset)
    tau0, eta0 = initial
    eta0 = Efficiencies.from_values(eta0).as_array()
    eta0 = np.clip(eta0[:1] if shared_eta else eta0, 1e-9, 1 - 1e-9)
    theta0 = np.concatenate([[np.log(tau0)], logit(eta0)])

    counts = np.array([row.counts for row in dataset.rows], dtype=float)
    n_pulses = np.array([row.n_pulses for row in dataset.rows], dtype=float)
    weights = 1.0 / np.sqrt(np.maximum(counts, 1.0))

    def residuals(theta):
        tau_max, etas = _unpack(theta, shared_eta)
        return (counts - n_pulses * predict_dataset(tau_max, etas, dataset)) * weights

    def objective(theta):
        return float(np.sum(residuals(theta) ** 2))

    history = [objective(theta0)]
    if verbose:
        print(f"Initial objective {history[0]:.6g} at tau_max={tau0:.4f}")

    simplex = minimize(
        objective,
        theta0,
        method="Nelder-Mead",
        callback=lambda xk: history.append(objective(xk)),
        options={"maxiter": max_iter, "xatol": 1e-10, "fatol": 1e-12},
    )
    theta = simplex.x
    converged = bool(simplex.success)
    n_iterations = int(simplex.nit)

    jacobian = None
    if refine:
        refined = least_squares(residuals, theta, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        # a rejected refinement says nothing about the simplex point
        if objective(refined.x) <= objective(theta):
            theta = refined.x
            converged = converged or refined.status > 0
            jacobian = refined.jac
        elif verbose:
            print("Levenberg-Marquardt refinement rejected, keeping the simplex optimum")
    if jacobian is None:
        jacobian = approx_fprime(theta, residuals, 1e-7)

    tau_max, etas = _unpack(theta, shared_eta)
    # d(natural)/d(transformed): tau for the log, eta (1 - eta) for the logit
    eta_free = etas.as_array()[:1] if shared_eta else etas.as_array()
    scale = np.concatenate([[tau_max], eta_free * (1 - eta_free)])
    natural_jacobian = jacobian / scale[np.newaxis, :]
    fisher = natural_jacobian.T @ natural_jacobian
    condition_number = float(np.linalg.cond(fisher))
    if condition_number > max_condition_number:
        warnings.warn(
            f"Fit Hessian is ill conditioned (condition number {condition_number:.3g})."
        )
    errors = np.sqrt(np.abs(np.diag(np.linalg.pinv(fisher))))
    eta_errs = np.repeat(errors[1:], 4) if shared_eta else errors[1:]

    if not converged:
        warnings.warn(f"Fit did not converge within {max_iter} iterations.")
    residual = objective(theta)
    if verbose:
        print(f"Final objective {residual:.6g} at tau_max={tau_max:.4f}, etas={etas.as_array()}")

    return FitResult(
        tau_max=tau_max,
        etas=etas,
        tau_max_err=float(errors[0]),
        eta_errs=tuple(float(e) for e in eta_errs),
        residual=residual,
        n_points=len(dataset.rows),
        converged=converged,
        condition_number=condition_number,
        n_iterations=n_iterations,
        objective_history=tuple(history),
    )
