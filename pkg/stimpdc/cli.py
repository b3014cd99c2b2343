"""
Command-line entry point: parameter sweeps, Monte Carlo count datasets,
parameter fits, tomography and the closed-form cross-checks.

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

import argparse
import csv
import json
import sys

import numpy as np

from .criteria import (
    BASIS_PAIRS,
    evaluate_criteria,
    partial_transpose_spectrum,
)
from .detection import (
    EmptySubspaceError,
    Efficiencies,
    ansatz_visibility,
    click_distribution,
    click_distribution_closed,
    fanout_distribution,
    fanout_distribution_closed,
    rotated_click_distribution,
    single_detector_prob_closed,
    subspace_probs_grid,
    subspace_ratio,
)
from .fitting import UnidentifiableError, fit
from .montecarlo import RATES_HEADER, CountDataset, count_rates, synthesize_dataset
from .run_config import SCHEMA_VERSION, ConfigError, load_config, write_config_echo
from .state_engine import (
    InfeasibleTruncationError,
    build_pdc_state,
    default_tail_tol,
    mean_pairs,
    select_n_max,
)

EXIT_OK = 0
EXIT_ORACLE_FAILED = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NOT_CONVERGED = 4

SWEEP_HEADER = [
    "tau",
    "mean_pairs",
    "p_single_eq4",
    "p11",
    "subspace_ratio",
    *["V_" + a + b for a, b in BASIS_PAIRS],
    "C1",
    "C2",
    "min_pt_eig",
    "ansatz_visibility",
    "tail_mass",
]
ORACLE_HEADER = ["tau", "eta", "quantity", "discrepancy", "bound", "passed"]


def _truncated_state(tau, tail_tol):
    tail_tol = tail_tol if tail_tol is not None else default_tail_tol(tau)
    return build_pdc_state(tau, select_n_max(tau, tail_tol))


def cmd_sweep(config):
    """One row of SWEEP_HEADER values per tau in the config grid."""
    etas = Efficiencies.from_values(config.etas)
    rows = []
    for tau in config.tau:
        if config.verbose:
            print(f"sweep: tau={tau}", file=sys.stderr)
        state = _truncated_state(tau, config.tail_tol)
        grid = subspace_probs_grid(state, etas)
        if grid[("hv", "hv")].P_11 <= 0:
            raise EmptySubspaceError(f"No (1,1) events at tau={tau}.")
        result, _, vis = evaluate_criteria(grid)
        rows.append(
            [
                tau,
                mean_pairs(tau),
                single_detector_prob_closed(tau, etas.eta_ah),
                grid[("hv", "hv")].P_11,
                subspace_ratio(state, etas),
                *vis.as_row(),
                result.c1,
                result.c2,
                result.min_pt_eigenvalue,
                ansatz_visibility(tau, etas),
                state.tail_mass,
            ]
        )
    return rows


def cmd_simulate(config):
    """Pump-energy scan of the Monte Carlo, including the fan-out rows.
    With `all_bases` every energy is simulated in all nine basis pairs."""
    return synthesize_dataset(
        config.tau_max,
        config.etas,
        config.energies,
        config.n_pulses,
        seed=config.seed,
        basis_a=config.basis_a,
        basis_b=config.basis_b,
        weight=config.weight,
        basis_pairs=BASIS_PAIRS if config.all_bases else None,
        verbose=config.verbose,
    )


def cmd_fit(config, dataset_path, shared_eta=False, initial=None):
    """Fits a count dataset; `initial` is an optional (tau_max, etas) guess."""
    dataset = CountDataset.from_csv(dataset_path)
    return fit(dataset, initial=initial, shared_eta=shared_eta, verbose=config.verbose)


def cmd_tomo(dataset_path, energy=None):
    """Density matrix, partial-transpose spectrum and criteria from the
    coincidence counts of all nine basis pairs."""
    dataset = CountDataset.from_csv(dataset_path)
    grid = {key: dataset.subspace_probs(*key, energy=energy) for key in BASIS_PAIRS}
    result, rho, vis = evaluate_criteria(grid)
    return {
        "schema_version": SCHEMA_VERSION,
        "probabilities": {
            a + b: {
                "p_hh": probs.p_hh,
                "p_hv": probs.p_hv,
                "p_vh": probs.p_vh,
                "p_vv": probs.p_vv,
                "P_11": probs.P_11,
            }
            for (a, b), probs in grid.items()
        },
        "visibilities": {a + b: vis[(a, b)] for a, b in BASIS_PAIRS},
        "rho_real": np.real(rho.matrix).tolist(),
        "rho_imag": np.imag(rho.matrix).tolist(),
        "pt_spectrum": partial_transpose_spectrum(rho).tolist(),
        "criteria": result.as_dict(),
    }


def _oracle_point(tau, eta, tail_tol):
    state = _truncated_state(tau, tail_tol)
    etas = Efficiencies.uniform(eta)
    exact = click_distribution(state, etas)
    closed = click_distribution_closed(tau, etas)
    checks = {
        "single_detector": abs(exact.marginal("ah") - single_detector_prob_closed(tau, eta)),
        "click_distribution": np.max(np.abs(exact.probs - closed.probs)),
        "fanout": np.max(
            np.abs(fanout_distribution(state, etas).probs - fanout_distribution_closed(tau, etas).probs)
        ),
    }
    for basis in ("pm", "rl"):
        rotated = rotated_click_distribution(state, etas, basis, basis)
        checks["joint_rotation_" + basis] = np.max(np.abs(rotated.probs - closed.probs))
    bound = state.tail_mass + 1e-9
    return [
        [tau, eta, name, float(value), bound, bool(value <= bound)]
        for name, value in checks.items()
    ]


def cmd_oracle_check(config):
    """Compares the closed forms with the exact block computation on the
    (tau, eta) grid of the config; a row fails when the discrepancy exceeds
    tail_mass + 1e-9."""
    rows = []
    for tau in config.tau:
        for eta in config.etas:
            if config.verbose:
                print(f"oracle: tau={tau}, eta={eta}", file=sys.stderr)
            rows.extend(_oracle_point(tau, eta, config.tail_tol))
    return rows


def _write_table(header, rows, path, fmt):
    stream = open(path, "w", newline="") if path else sys.stdout
    try:
        if fmt == "json":
            records = [dict(zip(header, row)) for row in rows]
            json.dump({"schema_version": SCHEMA_VERSION, "rows": records}, stream, indent=2)
            stream.write("\n")
        else:
            writer = csv.writer(stream)
            writer.writerow(header)
            writer.writerows(rows)
    finally:
        if path:
            stream.close()


def _write_json(report, path):
    if path:
        with open(path, "w") as f:
            json.dump(report, f, indent=2)
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _write_dataset(dataset, config):
    if not config.output_path:
        raise ConfigError("simulate needs --out for the count dataset.")
    dataset.to_csv(config.output_path)
    rates = count_rates(dataset, config.rep_rate)
    with open(config.output_path + ".rates.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RATES_HEADER)
        for row, rate in zip(dataset.rows, rates):
            writer.writerow([row.pulse_energy_uJ, row.basis_a, row.basis_b, row.pattern, rate])


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or name of a stored config")
    common.add_argument("--tau", type=_float_list, help="interaction parameter grid")
    common.add_argument("--tau-max", type=float, help="interaction parameter at the largest energy")
    common.add_argument("--eta", type=_float_list, help="one efficiency or four (a_h,a_v,b_h,b_v)")
    common.add_argument("--basis-a", choices=["hv", "pm", "rl"])
    common.add_argument("--basis-b", choices=["hv", "pm", "rl"])
    common.add_argument("--energies", type=_float_list, help="pulse energies in uJ")
    common.add_argument("--pulses", type=int, help="pulses per energy and basis pair")
    common.add_argument("--seed", type=int)
    common.add_argument("--tail-tol", type=float, help="truncation tail tolerance")
    common.add_argument("--weight", type=float, help="fraction of ansatz (background) pulses")
    common.add_argument("--rep-rate", type=float, help="pulse repetition rate in Hz")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--verbose", action="store_true", default=None)

    parser = argparse.ArgumentParser(
        prog="stimpdc",
        description="Multiphoton polarization entanglement from stimulated PDC.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("sweep", parents=[common], help="criteria and visibilities versus tau")
    simulate_parser = commands.add_parser("simulate", parents=[common], help="Monte Carlo count dataset")
    simulate_parser.add_argument(
        "--all-bases",
        action="store_true",
        default=None,
        help="simulate all nine basis pairs, the input of tomo",
    )
    fit_parser = commands.add_parser("fit", parents=[common], help="fit tau_max and efficiencies")
    fit_parser.add_argument("dataset", help="count dataset CSV")
    fit_parser.add_argument("--shared-eta", action="store_true", help="one efficiency for all channels")
    tomo_parser = commands.add_parser("tomo", parents=[common], help="tomography from counts")
    tomo_parser.add_argument("dataset", help="count dataset CSV with all nine basis pairs")
    tomo_parser.add_argument("--energy", type=float, help="pulse energy to analyse (default: highest)")
    commands.add_parser("oracle", parents=[common], help="closed forms versus exact blocks")
    return parser


def _overrides(args):
    bases = None
    if args.basis_a or args.basis_b:
        bases = [args.basis_a or "hv", args.basis_b or "hv"]
    return {
        "tau": args.tau,
        "tau_max": args.tau_max,
        "etas": args.eta,
        "bases": bases,
        "energies": args.energies,
        "n_pulses": args.pulses,
        "seed": args.seed,
        "tail_tol": args.tail_tol,
        "output_path": args.out,
        "format": args.format,
        "weight": args.weight,
        "rep_rate": args.rep_rate,
        "all_bases": getattr(args, "all_bases", None),
        "verbose": args.verbose,
    }


def run(args):
    config = load_config(args.config, _overrides(args))

    if args.command == "sweep":
        _write_table(SWEEP_HEADER, cmd_sweep(config), config.output_path, config.format)
    elif args.command == "simulate":
        _write_dataset(cmd_simulate(config), config)
    elif args.command == "fit":
        initial = None
        # fit starts from the command-line tau_max/eta only when both are given
        if args.tau_max is not None and args.eta is not None:
            initial = (config.tau_max, config.etas)
        result = cmd_fit(config, args.dataset, args.shared_eta, initial)
        _write_json({"schema_version": SCHEMA_VERSION, **result.as_dict()}, config.output_path)
        if not result.converged:
            return EXIT_NOT_CONVERGED
    elif args.command == "tomo":
        _write_json(cmd_tomo(args.dataset, args.energy), config.output_path)
    elif args.command == "oracle":
        rows = cmd_oracle_check(config)
        _write_table(ORACLE_HEADER, rows, config.output_path, config.format)
        if not all(row[-1] for row in rows):
            return EXIT_ORACLE_FAILED

    if config.output_path:
        write_config_echo(config, config.output_path)
    return EXIT_OK


def main(argv=None):
    """Runs the command line and returns its exit code."""
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, UnidentifiableError) as e:
        print(f"stimpdc: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleTruncationError, EmptySubspaceError) as e:
        print(f"stimpdc: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
