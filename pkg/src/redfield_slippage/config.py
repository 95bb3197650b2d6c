"""Flat dotted-key run configuration.

Config files are plain text, one `key = value` per line, `#` starting a
comment. Every key has a typed default below; unknown keys and values
that fail validation raise ConfigError, which the command line maps to
exit code 2. The same keys can be overridden with repeated --set
options, applied after the file in order.
"""

from __future__ import annotations

import numpy as np

from .bath import (
    DiscreteModes,
    LorentzDrudeBath,
    discrete_kernel,
    fit_exponential_mixture,
)
from .master import SystemModel


class ConfigError(Exception):
    pass


DEFAULTS = {
    "model.epsilon": 1.0,
    "bath.type": "lorentz_drude",
    "bath.omega_cutoff": 1.0,
    "bath.beta": 1.0,
    "bath.matsubara_k_max": 4000,
    "bath.modes": "",
    "bath.fock_cutoff": 5,
    "lambda": 0.5,
    "quadrature.rel_tol": 1e-10,
    "quadrature.t_min": 1e-3,
    "quadrature.t_max": 50.0,
    "quadrature.n_points": 200,
    "scan.grid_n": 201,
    "scan.z": 0.0,
    "scan.t_window": 50.0,
    "scan.refine_iters": 32,
    "propagation.t_end": 20.0,
    "propagation.n_points": 200,
    "oracle.beta": 12.0,
    "oracle.n_modes": 3,
    "oracle.omega_max": 1.8,
    "oracle.fock_cutoff": 5,
    "oracle.t_star": 2.0,
    "oracle.lambdas": "0.04,0.08,0.16",
    "oracle.cancellation_lambda": 0.08,
    "oracle.n_times": 32,
    "output.directory": ".",
    "output.format": "csv",
}


def _coerce(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


class RunConfig:
    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                if k not in DEFAULTS:
                    raise ConfigError(f"unknown config key: {k}")
                self.values[k] = v
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def load(cls, path=None, overrides=()):
        values = {}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc}") from exc
            for lineno, raw in enumerate(text.splitlines(), start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, val = line.partition("=")
                key = key.strip()
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key: {key}")
                values[key] = _coerce(key, val)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = _coerce(key, val)
        return cls(values)

    def validate(self):
        v = self.values
        if v["model.epsilon"] <= 0.0:
            raise ConfigError("model.epsilon must be positive")
        if v["bath.type"] not in ("lorentz_drude", "discrete"):
            raise ConfigError("bath.type must be lorentz_drude or discrete")
        if v["bath.omega_cutoff"] <= 0.0 or v["bath.beta"] <= 0.0:
            raise ConfigError("bath.omega_cutoff and bath.beta must be positive")
        if v["bath.matsubara_k_max"] < 1:
            raise ConfigError("bath.matsubara_k_max must be at least 1")
        if v["lambda"] < 0.0:
            raise ConfigError("lambda must be non-negative")
        if not (0.0 < v["quadrature.t_min"] <= v["quadrature.t_max"]):
            raise ConfigError("need 0 < quadrature.t_min <= quadrature.t_max")
        if v["quadrature.n_points"] < 1:
            raise ConfigError("quadrature.n_points must be at least 1")
        n = v["scan.grid_n"]
        if n < 3 or n % 2 == 0:
            raise ConfigError("scan.grid_n must be an odd integer >= 3")
        if abs(v["scan.z"]) > 1.0:
            raise ConfigError("scan.z must lie in [-1, 1]")
        if v["scan.t_window"] <= 0.0 or v["scan.refine_iters"] < 1:
            raise ConfigError("scan.t_window and scan.refine_iters must be positive")
        if v["propagation.t_end"] <= 0.0 or v["propagation.n_points"] < 2:
            raise ConfigError("propagation needs t_end > 0 and n_points >= 2")
        if v["oracle.n_modes"] < 1 or v["oracle.fock_cutoff"] < 1:
            raise ConfigError("oracle.n_modes and oracle.fock_cutoff must be >= 1")
        if v["oracle.beta"] <= 0.0 or v["oracle.omega_max"] <= 0.0:
            raise ConfigError("oracle.beta and oracle.omega_max must be positive")
        if v["oracle.t_star"] <= 0.0:
            raise ConfigError("oracle.t_star must be positive")
        for lam in self.oracle_lambdas():
            if lam <= 0.0:
                raise ConfigError("oracle.lambdas must be positive")
        if v["oracle.cancellation_lambda"] <= 0.0:
            raise ConfigError("oracle.cancellation_lambda must be positive")
        if v["oracle.n_times"] < 1:
            raise ConfigError("oracle.n_times must be at least 1")
        if v["output.format"] != "csv":
            raise ConfigError("output.format supports only csv")

    def oracle_lambdas(self):
        try:
            return [float(tok) for tok in str(self.values["oracle.lambdas"]).split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError("oracle.lambdas must be a comma list of floats") from exc

    def parsed_modes(self):
        """bath.modes format: 'omega:nu,omega:nu,...'."""
        text = str(self.values["bath.modes"]).strip()
        if not text:
            raise ConfigError("bath.type=discrete needs bath.modes entries")
        modes = []
        for tok in text.split(","):
            if ":" not in tok:
                raise ConfigError(f"bad mode entry {tok!r}, expected omega:nu")
            w, _, nu = tok.partition(":")
            try:
                modes.append((float(w), float(nu)))
            except ValueError as exc:
                raise ConfigError(f"bad mode entry {tok!r}") from exc
        return tuple(modes)

    def model(self) -> SystemModel:
        return SystemModel(epsilon=float(self.values["model.epsilon"]))

    def bath_spec(self):
        if self.values["bath.type"] == "lorentz_drude":
            return LorentzDrudeBath(
                omega_c=float(self.values["bath.omega_cutoff"]),
                beta=float(self.values["bath.beta"]),
            )
        return DiscreteModes(
            self.parsed_modes(),
            beta=float(self.values["bath.beta"]),
            fock_cutoff=int(self.values["bath.fock_cutoff"]),
        )

    def kernel(self):
        spec = self.bath_spec()
        if isinstance(spec, LorentzDrudeBath):
            return fit_exponential_mixture(spec, int(self.values["bath.matsubara_k_max"]))
        return discrete_kernel(spec)

    def propagation_times(self):
        return np.linspace(
            0.0,
            float(self.values["propagation.t_end"]),
            int(self.values["propagation.n_points"]),
        )

    def to_metadata(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}
