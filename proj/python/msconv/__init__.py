"""Multi-scale convolution toolkit: pyramid gather/scatter, scale alignment,
context attention, detection-head assembly, gradient checks, and analytic
parameter/MAC accounting. The heavy lifting lives in the C++ core; configs may
be passed as dicts or JSON strings."""

import json as _json

from ._core import (
    IoError,
    NumericalError,
    SchemaError,
    connection_cost,
    gradcheck,
    gradcheck_ops,
    read_tensor,
    write_tensor,
)
from . import _core


def _config_str(config):
    return config if isinstance(config, str) else _json.dumps(config)


def run(config, inputs, params=None, seed=None):
    """Run the configured forward pass (msconv | baseline_head | msconv_head).

    inputs maps canonical names ("x1".."xL") to float64 arrays; returns a dict
    of output arrays ("y1".. or "cls1"../"reg1"..).
    """
    return _core.run(_config_str(config), inputs, params, seed)


def seeded_params(config, seed):
    """Parameters from the documented seeded init, keyed by canonical name."""
    return _core.seeded_params(_config_str(config), seed)


def param_names(config):
    return _core.param_names(_config_str(config))


def count_params(config, variant):
    return _core.count_params(_config_str(config), variant)


def count_macs(config, variant):
    return _core.count_macs(_config_str(config), variant)


__all__ = [
    "IoError",
    "NumericalError",
    "SchemaError",
    "connection_cost",
    "count_macs",
    "count_params",
    "gradcheck",
    "gradcheck_ops",
    "param_names",
    "read_tensor",
    "run",
    "seeded_params",
    "write_tensor",
]
