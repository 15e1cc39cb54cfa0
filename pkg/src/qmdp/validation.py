"""Input validation helpers shared by the functional core and the estimators."""

import numbers

import numpy as np

from .exceptions import DomainError, ModelValidationError


def check_tau(tau, *, open_interval=False, name="tau"):
    """Validate a quantile level and return it as a float.

    With ``open_interval=True`` the endpoints 0 and 1 are rejected, as CVaR
    levels require.
    """
    if isinstance(tau, bool) or not isinstance(tau, (numbers.Real, np.floating)):
        raise DomainError(f"{name} must be a real number, got {tau!r}")
    tau = float(tau)
    if not np.isfinite(tau):
        raise DomainError(f"{name} must be finite, got {tau}")
    if open_interval:
        if not 0.0 < tau < 1.0:
            raise DomainError(f"{name} must lie in (0, 1), got {tau}")
    elif not 0.0 <= tau <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {tau}")
    return tau


def check_tau_array(taus, *, name="tau"):
    arr = np.asarray(taus, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
        raise DomainError(f"{name} values must lie in [0, 1]")
    return arr


def check_mdp(spec, *, horizon=None):
    """Raise ``ModelValidationError`` unless ``spec`` validates.

    ``horizon`` optionally restricts the horizon kind: ``"finite"`` or
    ``"discounted"``.
    """
    from .model import MdpSpec, validate

    if not isinstance(spec, MdpSpec):
        raise TypeError(f"expected an MdpSpec, got {type(spec).__name__}")
    violations = validate(spec)
    if violations:
        raise ModelValidationError(violations)
    if horizon == "finite" and not spec.is_finite:
        raise DomainError("this solver needs a finite-horizon model")
    if horizon == "discounted" and spec.is_finite:
        raise DomainError("this solver needs a discounted (infinite-horizon) model")
    return spec


def check_queries(X, n_states, *, open_interval=False):
    """Split an (n, 2) array of ``(state index, tau)`` rows into validated columns."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.size == 2:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != 2:
        raise DomainError(f"expected rows of (state, tau), got shape {X.shape}")
    states = X[:, 0]
    if np.any(states != np.round(states)) or np.any(states < 0) or np.any(states >= n_states):
        raise DomainError(f"state indices must be integers in [0, {n_states})")
    taus = check_tau_array(X[:, 1])
    if open_interval and taus.size and (taus.min() <= 0.0 or taus.max() >= 1.0):
        raise DomainError("tau values must lie in (0, 1)")
    return states.astype(int), taus
