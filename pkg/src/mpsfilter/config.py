"""Experiment configuration: flat key-value files, schedule resolution,
and manifest round-tripping.

A config file is plain text, one ``key = value`` per line, with ``#``
comments.  Example::

    model = ising
    J = 1.0
    g = -1.05
    h = 0.5
    N = 16,20,24
    schedule = 2*N
    d_max = 256
    E0 = 0.0
    initial_state = Y+
    backend = mps
    seed = 7
"""

from __future__ import annotations

import dataclasses
import math
import re

__all__ = [
    "ExperimentConfig",
    "MODEL_PARAM_KEYS",
    "config_from_manifest",
    "load_config",
    "manifest_from_config",
    "parse_config",
    "resolve_schedule",
]

MODEL_PARAM_KEYS = {
    "ising": ("J", "g", "h"),
    "xyz": ("Jx", "Jy", "Jz", "h"),
}

_BACKENDS = ("mps", "exact")

# largest chain the dense backend will accept
EXACT_N_MAX = 24


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description.

    Attributes
    ----------
    model : str
        "ising" or "xyz".
    params : tuple
        Model coupling values, ordered as in MODEL_PARAM_KEYS.
    ns : tuple of int
        Chain lengths to sweep.
    schedule : str
        Filter-order rule, resolved per N by resolve_schedule.
    d_max : int
        Bond-dimension cap for the mps backend.
    e0 : float
        Filter center energy.
    initial_state : str
        One of Y+, Z_st2, step, step(e), energy_target(E0).
    backend : str
        "mps" or "exact" (dense; N capped at EXACT_N_MAX).
    output : str or None
        Artifact directory; resolvable later by the runner.
    seed : int
        Seed for every stochastic ingredient of the run.
    log2 : bool
        Use base-2 logs in N*log(N) schedules (natural log otherwise).
    record_every : int or None
        Trace cadence override.
    workers : int
        Worker-pool width for independent chain lengths.
    alpha : float or None
        Rescaling-margin override passed to the filter.
    """

    model: str
    params: tuple
    ns: tuple
    schedule: str
    d_max: int
    e0: float
    initial_state: str
    backend: str = "mps"
    output: str | None = None
    seed: int = 0
    log2: bool = False
    record_every: int | None = None
    workers: int = 1
    alpha: float | None = None

    def __post_init__(self):
        if self.model not in MODEL_PARAM_KEYS:
            raise ValueError(f"unknown model {self.model!r}")
        if len(self.params) != len(MODEL_PARAM_KEYS[self.model]):
            raise ValueError(f"model {self.model!r} takes params "
                             f"{MODEL_PARAM_KEYS[self.model]}")
        if not self.ns:
            raise ValueError("at least one chain length required")
        if any(int(n) != n or n < 2 for n in self.ns):
            raise ValueError("chain lengths must be integers >= 2")
        if self.backend not in _BACKENDS:
            raise ValueError(f"backend must be one of {_BACKENDS}")
        if self.backend == "exact" and max(self.ns) > EXACT_N_MAX:
            raise ValueError(f"exact backend requires N <= {EXACT_N_MAX}")
        if self.d_max < 1:
            raise ValueError("d_max must be a positive integer")
        if self.workers < 1:
            raise ValueError("workers must be a positive integer")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be a positive integer")
        for n in self.ns:
            resolve_schedule(self, n)

    @property
    def param_dict(self) -> dict:
        return dict(zip(MODEL_PARAM_KEYS[self.model], self.params))


# ---------------------------------------------------------------------------
# schedule resolution

_FLOAT = r"([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)"
_SQRT_RE = re.compile(rf"^(?:{_FLOAT}\*)?sqrt\(n\)$")
_NLOGN_RE = re.compile(rf"^(?:{_FLOAT}\*)?n\*log\(n\)$")
_NSQ_RE = re.compile(rf"^(?:{_FLOAT}\*)?n\^2$")
_LINEAR_RE = re.compile(rf"^(?:{_FLOAT}\*)?n$")
_LIST_RE = re.compile(r"^\d+(?:,\d+)*$")


def _nearest_int(x: float) -> int:
    return int(math.floor(x + 0.5))


def resolve_schedule(cfg: ExperimentConfig, n: int) -> list:
    """Filter orders to run at chain length n.

    Formula schedules ("5*sqrt(N)", "2*N", "N*log(N)", "0.1*N^2") resolve
    to a single order, rounded to the nearest integer; an explicit comma
    list passes through unchanged and applies to every N.  Orders must be
    positive.
    """
    s = cfg.schedule.replace(" ", "").lower()
    if _LIST_RE.match(s):
        orders = [int(tok) for tok in s.split(",")]
    else:
        for rx, f in ((_SQRT_RE, math.sqrt),
                      (_NLOGN_RE, lambda x: x * (math.log2(x) if cfg.log2
                                                 else math.log(x))),
                      (_NSQ_RE, lambda x: x * x),
                      (_LINEAR_RE, lambda x: x)):
            m = rx.match(s)
            if m:
                c = float(m.group(1)) if m.group(1) else 1.0
                orders = [_nearest_int(c * f(n))]
                break
        else:
            raise ValueError(f"unparseable schedule {cfg.schedule!r}")
    if any(m < 1 for m in orders):
        raise ValueError(f"schedule {cfg.schedule!r} yields a nonpositive "
                         f"order at N={n}")
    return orders


# ---------------------------------------------------------------------------
# flat key-value parsing

_REQUIRED = ("model", "N", "schedule", "d_max", "E0", "initial_state")
_OPTIONAL = ("backend", "output", "seed", "log2", "record_every",
             "workers", "alpha")


def _parse_bool(v: str) -> bool:
    if v == "true":
        return True
    if v == "false":
        return False
    raise ValueError(f"expected true or false, got {v!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key = value config text into an ExperimentConfig."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got "
                             f"{raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or key in entries:
            raise ValueError(f"line {lineno}: bad or duplicate key {key!r}")
        entries[key] = value

    missing = [k for k in _REQUIRED if k not in entries]
    if missing:
        raise ValueError(f"missing required keys: {', '.join(missing)}")
    model = entries.pop("model")
    if model not in MODEL_PARAM_KEYS:
        raise ValueError(f"unknown model {model!r}")
    param_keys = MODEL_PARAM_KEYS[model]
    missing = [k for k in param_keys if k not in entries]
    if missing:
        raise ValueError(f"model {model!r} needs params: "
                         f"{', '.join(missing)}")
    try:
        params = tuple(float(entries.pop(k)) for k in param_keys)
        ns = tuple(int(tok) for tok in entries.pop("N").split(","))
        kwargs = {
            "schedule": entries.pop("schedule"),
            "d_max": int(entries.pop("d_max")),
            "e0": float(entries.pop("E0")),
            "initial_state": entries.pop("initial_state"),
        }
        if "backend" in entries:
            kwargs["backend"] = entries.pop("backend")
        if "output" in entries:
            kwargs["output"] = entries.pop("output")
        if "seed" in entries:
            kwargs["seed"] = int(entries.pop("seed"))
        if "log2" in entries:
            kwargs["log2"] = _parse_bool(entries.pop("log2"))
        if "record_every" in entries:
            kwargs["record_every"] = int(entries.pop("record_every"))
        if "workers" in entries:
            kwargs["workers"] = int(entries.pop("workers"))
        if "alpha" in entries:
            kwargs["alpha"] = float(entries.pop("alpha"))
    except ValueError as err:
        raise ValueError(f"bad config value: {err}") from None
    if entries:
        raise ValueError(f"unknown keys: {', '.join(sorted(entries))}")
    return ExperimentConfig(model=model, params=params, ns=ns, **kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# manifest round-trip

def manifest_from_config(cfg: ExperimentConfig) -> dict:
    """JSON-ready dict capturing the config exactly; inverse of
    config_from_manifest."""
    manifest = {
        "model": cfg.model,
        "params": cfg.param_dict,
        "N": list(cfg.ns),
        "schedule": cfg.schedule,
        "d_max": cfg.d_max,
        "E0": cfg.e0,
        "initial_state": cfg.initial_state,
        "backend": cfg.backend,
        "output": cfg.output,
        "seed": cfg.seed,
        "log2": cfg.log2,
        "record_every": cfg.record_every,
        "workers": cfg.workers,
        "alpha": cfg.alpha,
    }
    manifest["resolved_orders"] = {
        str(n): resolve_schedule(cfg, n) for n in cfg.ns}
    return manifest


def config_from_manifest(manifest: dict) -> ExperimentConfig:
    """Rebuild the ExperimentConfig recorded by manifest_from_config."""
    param_keys = MODEL_PARAM_KEYS[manifest["model"]]
    return ExperimentConfig(
        model=manifest["model"],
        params=tuple(float(manifest["params"][k]) for k in param_keys),
        ns=tuple(int(n) for n in manifest["N"]),
        schedule=manifest["schedule"],
        d_max=int(manifest["d_max"]),
        e0=float(manifest["E0"]),
        initial_state=manifest["initial_state"],
        backend=manifest.get("backend", "mps"),
        output=manifest.get("output"),
        seed=int(manifest.get("seed", 0)),
        log2=bool(manifest.get("log2", False)),
        record_every=manifest.get("record_every"),
        workers=int(manifest.get("workers", 1)),
        alpha=manifest.get("alpha"),
    )
