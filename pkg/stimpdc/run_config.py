"""
Loads, validates and echoes the run configuration shared by all commands.

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

import json
import math
import numbers
import os
import warnings
from dataclasses import asdict, dataclass, field, fields

from deepdiff import DeepDiff

SCHEMA_VERSION = 1

# directory holding the named configurations (run_configs/ in the repository)
run_configs_path = os.environ.get(
    "STIMPDC_RUN_CONFIGS",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "run_configs"),
)

VALID_BASES = ("hv", "pm", "rl")
VALID_FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Invalid configuration or missing input data."""


@dataclass
class RunConfig:
    """Parameters shared by the command-line tools.

    `tau` is the sweep grid, `tau_max` with `energies` defines the pump
    scan of simulate, and `etas` holds one or four efficiencies
    (a_h, a_v, b_h, b_v).
    """

    tau: list = field(default_factory=lambda: [0.2, 0.5, 1.0, 1.3, 1.85, 2.3])
    tau_max: float = 2.30
    etas: list = field(default_factory=lambda: [0.019])
    bases: list = field(default_factory=lambda: ["hv", "hv"])
    energies: list = field(default_factory=lambda: [0.25 * k for k in range(1, 13)])
    n_pulses: int = 1_000_000
    seed: int = 20060101
    tail_tol: float = None
    output_path: str = None
    format: str = "csv"
    weight: float = 0.0
    rep_rate: float = 20000.0
    all_bases: bool = False
    verbose: bool = False

    @property
    def basis_a(self):
        return self.bases[0]

    @property
    def basis_b(self):
        return self.bases[1]

    def validate(self):
        """Checks every field, raising ConfigError on the first problem."""
        self.tau = _as_float_list(self.tau, "tau")
        self.etas = _as_float_list(self.etas, "etas")
        self.energies = _as_float_list(self.energies, "energies")
        self.tau_max = _as_float(self.tau_max, "tau_max")
        self.weight = _as_float(self.weight, "weight")
        self.rep_rate = _as_float(self.rep_rate, "rep_rate")
        if self.tail_tol is not None:
            self.tail_tol = _as_float(self.tail_tol, "tail_tol")
        self.n_pulses = _as_int(self.n_pulses, "n_pulses")
        self.seed = _as_int(self.seed, "seed")
        for name in ("all_bases", "verbose"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be true or false, got {getattr(self, name)!r}.")

        if not self.tau or min(self.tau) < 0:
            raise ConfigError("tau must be a non-empty list of non-negative values.")
        if self.tau_max <= 0:
            raise ConfigError(f"tau_max must be positive, got {self.tau_max}.")
        if len(self.etas) not in (1, 4):
            raise ConfigError("etas takes one value or four (a_h, a_v, b_h, b_v).")
        if not all(0 <= eta <= 1 for eta in self.etas):
            raise ConfigError(f"Efficiencies must lie in [0, 1], got {self.etas}.")
        if len(self.bases) != 2 or not set(self.bases) <= set(VALID_BASES):
            raise ConfigError(f"bases must be two of {VALID_BASES}, got {self.bases}.")
        if not self.energies or min(self.energies) <= 0:
            raise ConfigError("energies must be a non-empty list of positive values (uJ).")
        if self.n_pulses <= 0:
            raise ConfigError(f"n_pulses must be a positive integer, got {self.n_pulses}.")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer.")
        if self.tail_tol is not None and not 0 < self.tail_tol < 1:
            raise ConfigError(f"tail_tol must lie in (0, 1), got {self.tail_tol}.")
        if self.format not in VALID_FORMATS:
            raise ConfigError(f"format must be one of {VALID_FORMATS}, got {self.format}.")
        if not 0 <= self.weight <= 1:
            raise ConfigError(f"weight must lie in [0, 1], got {self.weight}.")
        if self.rep_rate <= 0:
            raise ConfigError(f"rep_rate must be positive, got {self.rep_rate}.")
        return self

    def to_dict(self):
        config = asdict(self)
        config["schema_version"] = SCHEMA_VERSION
        return config


def _is_number(value):
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _as_float(value, name):
    if not _is_number(value) or not math.isfinite(value):
        raise ConfigError(f"{name} must be a finite number, got {value!r}.")
    return float(value)


def _as_int(value, name):
    if not _is_number(value) or not math.isfinite(value) or int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}.")
    return int(value)


def _as_float_list(values, name):
    if _is_number(values):
        values = [values]
    if not isinstance(values, (list, tuple)) or not all(_is_number(v) for v in values):
        raise ConfigError(f"{name} must be a number or a list of numbers, got {values!r}.")
    return [float(v) for v in values]


def config_path(name):
    """Resolves a config argument: an existing file, or the name of a
    configuration stored in run_configs/."""
    if os.path.exists(name):
        return name
    candidate = os.path.join(run_configs_path, name + ".json")
    if os.path.exists(candidate):
        return candidate
    raise ConfigError(f"No configuration file or named configuration {name!r}.")


def load_config(path=None, overrides=None):
    """Builds a validated RunConfig.

    Parameters
    ----------
    path : str, optional
        JSON file (or named configuration) supplying the base values.
    overrides : dict, optional
        Values set on the command line. Entries that are None are ignored,
        so flags only override what they actually set.

    Returns
    -------
    RunConfig
    """
    values = {}
    if path is not None:
        try:
            with open(config_path(path), "r") as f:
                values = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Cannot parse config file {path}: {e}")
    values.pop("schema_version", None)

    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"Unknown config keys {sorted(unknown)}.")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()


def write_config_echo(config, output_path):
    """Writes the resolved configuration next to an output file.

    An echo left by an earlier run is compared first and any difference is
    reported as a warning before it is overwritten.
    """
    echo_path = output_path + ".config.json"
    resolved = config.to_dict()
    if os.path.exists(echo_path):
        with open(echo_path, "r") as f:
            previous = json.load(f)
        difference = DeepDiff(previous, resolved, ignore_order=False)
        if difference:
            warnings.warn(
                f"Overwriting {echo_path}, which was written with a different "
                f"configuration: {difference}"
            )
    with open(echo_path, "w") as f:
        json.dump(resolved, f, indent=2)
    return echo_path
