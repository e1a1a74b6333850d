"""Python access to the vcl-lab core: moment formulas, mixture kurtosis and the lab commands."""

import json

from ._vcl_lab import (
    ConfigError,
    Gmm2,
    SampleMoments,
    axial_angle_deg,
    batchnorm_stability_bound,
    chebyshev_bound_rhs,
    command_names,
    compute_moments,
    default_config,
    mc_var_of_sample_variance,
    phase_regime,
    population_vcl,
    projection_kurtosis,
    projection_kurtosis_exact,
    var_of_sample_variance,
)
from ._vcl_lab import run_command as _run_command

__all__ = [
    "ConfigError",
    "Gmm2",
    "SampleMoments",
    "axial_angle_deg",
    "batchnorm_stability_bound",
    "chebyshev_bound_rhs",
    "command_names",
    "compute_moments",
    "default_config",
    "mc_var_of_sample_variance",
    "phase_regime",
    "population_vcl",
    "projection_kurtosis",
    "projection_kurtosis_exact",
    "run",
    "var_of_sample_variance",
]


def run(command, config=None, out_dir="vcl_out", seed=None):
    """Run a lab command. `config` may be a dict or a JSON string.

    Returns (exit_code, report_dict, summary).
    """
    if isinstance(config, dict):
        config = json.dumps(config)
    code, report, summary = _run_command(command, config or "", str(out_dir), seed)
    return code, json.loads(report), summary
