"""Input validation helpers and the package's exception types."""

import numbers

import numpy as np


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in a meta-gradient quantity.

    Signals divergence of a lifetime; callers abort the lifetime and count it.
    """


class WindowOutOfRange(IndexError):
    pass


class BucketMismatch(ValueError):
    pass


class DegenerateCosine(ValueError):
    pass


class ConfigError(ValueError):
    pass


def check_finite(x, name="array"):
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return x


def finite_rows(x):
    """Boolean mask over the leading axis: True where every entry is finite."""
    x = np.asarray(x)
    return np.isfinite(x.reshape(x.shape[0], -1)).all(axis=1)


def check_unit_interval(value, name):
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must be a real number in [0, 1], got {value!r}")
    return float(value)


def check_positive(value, name, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind) or not value > 0:
        what = "a positive integer" if integer else "a positive number"
        raise ConfigError(f"{name} must be {what}, got {value!r}")
    return int(value) if integer else float(value)


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_eta(eta, dim=None):
    """Coerce meta-parameters to a float64 array of shape (B, d_eta)."""
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 1:
        eta = eta[None, :]
    if eta.ndim != 2 or eta.shape[1] < 1:
        raise ValueError(f"meta-parameters must be 1-d or 2-d, got shape {eta.shape}")
    if dim is not None and eta.shape[1] != dim:
        raise ValueError(f"expected {dim} meta-parameters, got {eta.shape[1]}")
    return check_finite(eta, "meta-parameters")
