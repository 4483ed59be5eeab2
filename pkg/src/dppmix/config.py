"""INI run configuration and data ingestion for the command line tool.

Sections and keys (all optional unless stated)::

    [data]        path (required for fit), response, covariates, delimiter
    [model]       kind = nocov | cov, family, a0, b0, delta, a_rho, b_rho,
                  epsilon, s, nu (one value or a comma list), rho, alpha
    [covariates]  g, zeta, beta0, lambda0, aux_gamma0, aux_xi0, aux_nu0
    [window]      lo, hi  or  expand; truncation
    [mcmc]        burnin, thin, keep, seed, chains, adapt_target
    [output]      dir, grid_points, grid_lo, grid_hi, level, fitted, ordinate
    [prior]       draws

``path`` may be a file (relative to the config file) or one of the
bundled sources ``builtin:galaxy``, ``builtin:eight`` and
``builtin:covariate3`` (the last two accept ``:seed``).
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets
from .dpp import DEFAULT_TRUNCATION
from .model import ConfigError, CovHyperparams, Hyperparams, NuPrior
from .sampler import McmcSchedule
from .spectral import Family, ParameterError


class DataError(ValueError):
    """Unreadable or malformed input data."""


@dataclass(frozen=True)
class DataSpec:
    path: str | None = None
    response: str | None = None
    covariates: tuple = ()
    delimiter: str = ","
    base_dir: str = "."


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "dppmix-out"
    grid_points: int = 200
    grid_lo: float | None = None
    grid_hi: float | None = None
    level: float = 0.9
    fitted: str = "allocated"
    ordinate: str = "allocated"


@dataclass(frozen=True)
class RunConfig:
    kind: str
    data: DataSpec
    hyper: Hyperparams
    cov: CovHyperparams | None
    schedule: McmcSchedule
    chains: int = 1
    window: tuple | None = None
    expand: float = 0.2
    n_trunc: int = DEFAULT_TRUNCATION
    output: OutputSpec = field(default_factory=OutputSpec)
    prior_draws: int = 100_000
    source: dict = field(default_factory=dict)


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _matrix(text, size):
    """A scalar (times the identity) or ``;``-separated rows."""
    if text is None:
        return None
    rows = [r for r in text.split(";") if r.strip()]
    if len(rows) == 1 and len(_floats(rows[0])) == 1:
        return _floats(rows[0])[0] * np.eye(size) if size else None
    mat = np.array([_floats(r) for r in rows])
    return mat


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section.name}.{key}: {raw!r}") from exc


def parse_config(text, base_dir=".", overrides=None):
    """Build a :class:`RunConfig` from INI text (or a section dict).

    ``overrides`` maps command line flags to values.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if isinstance(text, dict):
            parser.read_dict(text)
        else:
            parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparsable config: {exc}".replace("\n", " ")) from exc
    known = {"data", "model", "covariates", "window", "mcmc", "output", "prior"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sec = {name: (parser[name] if parser.has_section(name) else None) for name in known}
    overrides = overrides or {}

    d = sec["data"]
    covs = tuple(c.strip() for c in _get(d, "covariates", str, "").split(",") if c.strip())
    data = DataSpec(
        path=_get(d, "path", str, None),
        response=_get(d, "response", str, None),
        covariates=covs,
        delimiter=_get(d, "delimiter", str, ","),
        base_dir=str(base_dir),
    )

    m = sec["model"]
    kind = _get(m, "kind", str, "cov" if covs else "nocov")
    if kind not in ("nocov", "cov"):
        raise ConfigError(f"model.kind must be nocov or cov, got {kind!r}")
    try:
        family = Family(_get(m, "family", str, Family.POWER_EXPONENTIAL.value))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    nu_values = _get(m, "nu", _floats, [2.0])
    try:
        hyper = Hyperparams(
            delta=_get(m, "delta", float, 1.0),
            a0=_get(m, "a0", float, 3.0),
            b0=_get(m, "b0", float, 3.0),
            a_rho=_get(m, "a_rho", float, 1.0),
            b_rho=_get(m, "b_rho", float, 1.0),
            epsilon=_get(m, "epsilon", float, 0.05),
            s=_get(m, "s", float, 0.5),
            nu=NuPrior(tuple(nu_values)),
            rho_fixed=_get(m, "rho", float, None),
            family=family,
            alpha=_get(m, "alpha", float, 1.0),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc

    cov = None
    if kind == "cov":
        c = sec["covariates"]
        p = len(covs) if covs else None
        beta0 = _get(c, "beta0", _floats, None)
        lam = _get(c, "lambda0", lambda t: _matrix(t, p or 0), None)
        aux = _get(c, "aux_gamma0", lambda t: _matrix(t, (p or 0) + 1), None)
        cov = CovHyperparams(
            base=hyper,
            g=_get(c, "g", float, 400.0),
            beta0=None if beta0 is None else np.asarray(beta0),
            lambda0=lam,
            zeta=_get(c, "zeta", float, 0.1),
            aux_gamma0=aux,
            aux_xi0=_get(c, "aux_xi0", float, None),
            aux_nu0=_get(c, "aux_nu0", float, None),
        )
        if p is not None:
            cov.resolve(p)

    w = sec["window"]
    lo, hi = _get(w, "lo", float, None), _get(w, "hi", float, None)
    if (lo is None) != (hi is None):
        raise ConfigError("window needs both lo and hi")
    if lo is not None and not hi > lo:
        raise ConfigError("window.hi must exceed window.lo")
    expand = _get(w, "expand", float, 0.2)
    if not expand >= 0:
        raise ConfigError("window.expand must be nonnegative")
    n_trunc = _get(w, "truncation", int, DEFAULT_TRUNCATION)
    if n_trunc < 1:
        raise ConfigError("window.truncation must be >= 1")

    mc = sec["mcmc"]
    seed = overrides.get("seed")
    schedule = McmcSchedule(
        n_burnin=_get(mc, "burnin", int, 5000),
        n_thin=_get(mc, "thin", int, 10),
        n_keep=_get(mc, "keep", int, 5000),
        seed=int(seed) if seed is not None else _get(mc, "seed", int, 0),
        adapt_target=_get(mc, "adapt_target", float, 0.234),
    )
    chains = overrides.get("chains") or _get(mc, "chains", int, 1)
    if chains < 1:
        raise ConfigError("mcmc.chains must be >= 1")

    o = sec["output"]
    output = OutputSpec(
        dir=_get(o, "dir", str, "dppmix-out"),
        grid_points=_get(o, "grid_points", int, 200),
        grid_lo=_get(o, "grid_lo", float, None),
        grid_hi=_get(o, "grid_hi", float, None),
        level=_get(o, "level", float, 0.9),
        fitted=_get(o, "fitted", str, "allocated"),
        ordinate=_get(o, "ordinate", str, "allocated"),
    )
    if output.grid_points < 2:
        raise ConfigError("output.grid_points must be >= 2")
    if not 0 < output.level < 1:
        raise ConfigError("output.level must lie in (0, 1)")
    if output.fitted not in ("allocated", "marginal"):
        raise ConfigError("output.fitted must be allocated or marginal")
    if output.ordinate not in ("allocated", "mixture"):
        raise ConfigError("output.ordinate must be allocated or mixture")

    draws = _get(sec["prior"], "draws", int, 100_000)
    if draws < 1:
        raise ConfigError("prior.draws must be >= 1")
    source = {s: dict(parser[s]) for s in parser.sections()}
    return RunConfig(
        kind=kind, data=data, hyper=hyper, cov=cov, schedule=schedule, chains=int(chains),
        window=None if lo is None else (lo, hi), expand=expand, n_trunc=n_trunc,
        output=output, prior_draws=draws, source=source,
    )


def load_config(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, base_dir=path.parent, overrides=overrides)


def load_data(spec):
    """Return ``(y, X)`` with ``X`` ``None`` when no covariates are configured."""
    if spec.path is None:
        raise DataError("no data path configured")
    if spec.path.startswith("builtin:"):
        return _builtin(spec)
    path = Path(spec.path)
    if not path.is_absolute():
        path = Path(spec.base_dir) / path
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter=spec.delimiter))
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc.strerror}") from exc
    if not rows:
        raise DataError(f"data file {path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    response = spec.response or header[0]
    cols = (response,) + tuple(spec.covariates)
    missing = [c for c in cols if c not in header]
    if missing:
        raise DataError(f"columns not found in {path.name}: {missing}")
    idx = [header.index(c) for c in cols]
    try:
        table = np.array([[float(r[i]) for i in idx] for r in body], dtype=float).reshape(len(body), len(cols))
    except (ValueError, IndexError) as exc:
        raise DataError(f"non-numeric or missing entry in {path.name}") from exc
    if not np.all(np.isfinite(table)):
        raise DataError(f"non-finite entry in {path.name}")
    y = table[:, 0]
    X = table[:, 1:] if spec.covariates else None
    return y, X


def _builtin(spec):
    name, _, arg = spec.path[len("builtin:"):].partition(":")
    seed = int(arg) if arg else 0
    if name == "galaxy":
        return datasets.load_galaxy(), None
    if name == "eight":
        return datasets.simulate_eight(seed).y, None
    if name == "covariate3":
        sim = datasets.simulate_covariate_mixture(seed)
        return sim.y, sim.X
    raise DataError(f"unknown builtin dataset {name!r}")


def resolve_window(cfg, y):
    """Explicit window, or the data range widened by ``cfg.expand`` per side."""
    from .sampler import default_window

    if cfg.window is not None:
        lo, hi = cfg.window
        if y.size and (y.min() < lo or y.max() > hi):
            raise ConfigError("the window must contain all observations")
        return float(lo), float(hi)
    if y.size == 0:
        raise ConfigError("an explicit window is required without data")
    return default_window(y, cfg.expand)


def grid_for(cfg, window):
    lo = cfg.output.grid_lo if cfg.output.grid_lo is not None else window[0]
    hi = cfg.output.grid_hi if cfg.output.grid_hi is not None else window[1]
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise ConfigError("invalid predictive grid bounds")
    return np.linspace(lo, hi, cfg.output.grid_points)
