"""Command-line interface: ``fluidq <command> --config model.json [options]``.

Exit codes: 0 success, 1 invalid model/config/arguments, 2 numerical failure,
3 a ``*-check`` command returned a FAIL verdict.

Every artifact written to ``--out`` carries the model fingerprint and seed
(a ``#`` comment line in CSV files, keys in JSON files). A run report is
printed and saved as ``run_report.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .busy import busy_density, solve_busy_lt
from .exceptions import FluidQError, ModelError, NumericalError
from .model import (
    HyperExp,
    MarkovFluidModel,
    OnOffModel,
    OnOffSource,
    markov_stability,
    markov_stationary,
    onoff_stability,
)
from .reliability import dfr_check, hazard_estimate, ifr_check, tp2_check
from .sim import (
    SampleSet,
    discretize_chain,
    fingerprint,
    first_passage_discrete,
    first_passage_samples,
    simulate_busy,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_FAIL = 0, 1, 2, 3
U64 = 2**64

_NUMBER_LIST = {"type": "array", "items": {"type": "number"}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "onoff": {
            "type": "object",
            "additionalProperties": False,
            "required": ["sources"],
            "properties": {
                "sources": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["lambda", "rate", "activity"],
                        "properties": {
                            "lambda": {"type": "number", "exclusiveMinimum": 0},
                            "rate": {"type": "number", "exclusiveMinimum": 1},
                            "activity": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["weights", "rates"],
                                "properties": {
                                    "weights": {**_NUMBER_LIST, "minItems": 1,
                                                "items": {"type": "number", "exclusiveMinimum": 0}},
                                    "rates": {**_NUMBER_LIST, "minItems": 1,
                                              "items": {"type": "number", "exclusiveMinimum": 0}},
                                },
                            },
                        },
                    },
                }
            },
        },
        "markov": {
            "type": "object",
            "additionalProperties": False,
            "required": ["generator", "rates"],
            "properties": {
                "generator": {"type": "array", "minItems": 1, "items": {**_NUMBER_LIST, "minItems": 1}},
                "rates": {**_NUMBER_LIST, "minItems": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": U64 - 1},
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"theta": _NUMBER_LIST, "t": _NUMBER_LIST},
        },
    },
    "oneOf": [{"required": ["onoff"]}, {"required": ["markov"]}],
}


class ConfigError(ModelError):
    """Invalid configuration; ``pointer`` is a JSON pointer to the offending field."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} is not allowed", "/")


def _finite_int(text):
    value = int(text)
    if abs(value) > 1e308:
        raise ConfigError(f"integer {text[:20]}... is too large")
    return value


def _finite_float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ConfigError(f"number {text} overflows to a non-finite value")
    return value


@dataclass(frozen=True)
class ModelConfig:
    """A validated configuration: the model plus optional seed and grids."""

    model: OnOffModel | MarkovFluidModel
    seed: int | None = None
    grids: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "onoff" if isinstance(self.model, OnOffModel) else "markov"

    def serialize(self) -> dict:
        doc = {self.kind: self.model.to_dict()}
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.grids:
            doc["grids"] = {k: list(map(float, v)) for k, v in self.grids.items()}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.serialize(), sort_keys=True, indent=2) + "\n"

    @property
    def fingerprint(self) -> str:
        """Fingerprint of the model (the same one sample sets carry)."""
        return fingerprint(self.model)


def config_from_dict(doc) -> ModelConfig:
    """Validate a decoded JSON document and build the model."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigError(err.message, _pointer(err.absolute_path) or "/")
    if "onoff" in doc:
        sources = []
        for k, src in enumerate(doc["onoff"]["sources"]):
            act = src["activity"]
            base = f"/onoff/sources/{k}"
            if len(act["weights"]) != len(act["rates"]):
                raise ConfigError("weights and rates differ in length", base + "/activity")
            try:
                dist = HyperExp(tuple(act["weights"]), tuple(act["rates"]))
            except ModelError as exc:
                raise ConfigError(str(exc), base + "/activity") from None
            sources.append(OnOffSource(src["lambda"], dist, src["rate"]))
        model = OnOffModel(tuple(sources))
    else:
        mk = doc["markov"]
        gen = mk["generator"]
        n = len(mk["rates"])
        if len(gen) != n or any(len(row) != n for row in gen):
            raise ConfigError(f"generator must be {n} x {n} to match rates", "/markov/generator")
        try:
            model = MarkovFluidModel(np.array(gen, dtype=float), np.array(mk["rates"], dtype=float))
        except ModelError as exc:
            where = "/markov/rates" if "ordered by" in str(exc) else "/markov/generator"
            raise ConfigError(str(exc), where) from None
    grids = {k: tuple(v) for k, v in doc.get("grids", {}).items()}
    return ModelConfig(model, doc.get("seed"), grids)


def parse_config(path) -> ModelConfig:
    """Read and validate a JSON model configuration.

    Raises
    ------
    ConfigError
        With a JSON pointer to the offending field.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = json.loads(text, parse_constant=_reject_constant, parse_float=_finite_float,
                         parse_int=_finite_int)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return config_from_dict(doc)


def bundled_config(name: str) -> Path:
    """Path of an example configuration shipped with the package."""
    return Path(str(resources.files("fluidq") / "data" / name))


def _resolve_config(path: str) -> Path:
    p = Path(path)
    if not p.exists() and p.parent == Path(".") and bundled_config(p.name).exists():
        return bundled_config(p.name)
    return p


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"argument error: {message}")


def _grid(text: str) -> np.ndarray:
    """``a:b:n`` (n points from a to b) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            out = np.linspace(float(a), float(b), int(n))
        else:
            out = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use a:b:n or a comma list") from None
    if out.size == 0 or not np.all(np.isfinite(out)):
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    return out


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


COMMANDS = ("stability", "busy-lt", "busy-density", "simulate-busy", "hazard", "dfr-check",
            "ifr-check", "first-passage", "discretize", "tp2-check")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="model configuration (JSON)")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=_seed, help="RNG seed (overrides the config; default 0)")
    common.add_argument("--theta", type=float, action="append", help="transform argument (repeatable)")
    common.add_argument("--theta-grid", type=_grid, help="theta grid, a:b:n or comma list")
    common.add_argument("--t-grid", type=_grid, help="time grid, a:b:n or comma list")
    common.add_argument("--n", type=int, default=100_000, help="number of samples")
    common.add_argument("--m", type=float, help="discretization steps per unit time")
    common.add_argument("--level", type=float, default=1.0, help="first-passage level x")
    common.add_argument("--q0", type=float, default=0.0, help="initial level")
    common.add_argument("--phase", type=int, help="initial phase (0-based); default stationary")
    common.add_argument("--source", type=int, default=0, help="busy-period source index (0-based)")
    common.add_argument("--tol", type=float, help="solver / check tolerance")
    common.add_argument("--method", choices=("gs", "euler"), default="euler", help="inversion backend")
    common.add_argument("--threads", type=int, help="worker threads (fallback: FLUIDQ_THREADS)")
    common.add_argument("--samples", help="read samples from a CSV written by this tool")
    common.add_argument("--bandwidth", type=float, help="hazard kernel bandwidth")
    common.add_argument("--delta", type=float, help="level grid spacing of the discretization")
    common.add_argument("--cap", type=float, help="level cap of the discretization")
    common.add_argument("--mode", choices=("exhaustive", "brute", "sampled"), default="exhaustive",
                        help="TP2 scan mode")
    common.add_argument("--allow-unstable", action="store_true", help="skip the stability refusal")

    parser = _Parser(prog="fluidq", description="Busy periods and first passage in fluid queues.")
    parser.add_argument("--version", action="version", version=f"fluidq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "stability": "utilization (on-off) or drift (Markov) and the stable flag",
        "busy-lt": "busy-period transforms pi_i(theta)",
        "busy-density": "density, CDF and hazard of a busy period by inversion",
        "simulate-busy": "Monte Carlo busy periods",
        "hazard": "kernel hazard estimate with bootstrap bands",
        "dfr-check": "DFR verdict for simulated busy periods",
        "ifr-check": "IFR verdict for first-passage times (exact with --m)",
        "first-passage": "first-passage samples (and exact lattice law with --m)",
        "discretize": "transition kernel of the discretized chain",
        "tp2-check": "TP2 verdict for the discretized kernel",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


# --------------------------------------------------------------------------
# artifacts


class _Run:
    def __init__(self, args, config: ModelConfig):
        self.args = args
        self.config = config
        self.seed = args.seed if args.seed is not None else (config.seed or 0)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.result: dict = {}

    @property
    def header(self) -> str:
        return (f"# fluidq {__version__} command={self.args.command} "
                f"fingerprint={self.config.fingerprint} seed={self.seed}\n")

    def write_csv(self, name, columns, rows):
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.header)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.outputs.append(name)

    def write_json(self, name, payload):
        doc = {"fingerprint": self.config.fingerprint, "seed": self.seed, **payload}
        (self.out / name).write_text(json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n",
                                     encoding="utf-8")
        self.outputs.append(name)

    def adopt(self, name):
        self.outputs.append(name)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _need(config: ModelConfig, kind: str, command: str):
    if config.kind != kind:
        raise ConfigError(f"command {command!r} needs an {kind!r} model, config has {config.kind!r}")


def _thetas(run: _Run):
    a = run.args
    if a.theta_grid is not None:
        return a.theta_grid
    if a.theta:
        return np.array(a.theta)
    if "theta" in run.config.grids:
        return np.array(run.config.grids["theta"])
    return np.linspace(0.0, 10.0, 101)


def _times(run: _Run, default_stop=10.0):
    a = run.args
    if a.t_grid is not None:
        return a.t_grid
    if "t" in run.config.grids:
        return np.array(run.config.grids["t"])
    return np.linspace(default_stop / 100, default_stop, 100)


def _samples(run: _Run, kind_needed=None) -> SampleSet:
    a = run.args
    if a.samples:
        s = SampleSet.from_csv(a.samples)
        if s.fingerprint != run.config.fingerprint:
            raise ConfigError(f"samples were drawn from model {s.fingerprint}, config is {run.config.fingerprint}")
        return s
    if run.config.kind == "onoff":
        if kind_needed not in (None, "busy-period"):
            raise ConfigError(f"{a.command} needs first-passage samples of a Markov model")
        s = simulate_busy(run.config.model, a.source, a.n, run.seed, allow_unstable=a.allow_unstable,
                          n_jobs=a.threads)
        name = "busy_samples.csv"
    else:
        if kind_needed not in (None, "first-passage"):
            raise ConfigError(f"{a.command} needs busy-period samples of an on-off model")
        s = first_passage_samples(run.config.model, a.level, a.q0, a.phase, a.n, run.seed, n_jobs=a.threads)
        name = "first_passage_samples.csv"
    s.to_csv(run.out / name)
    run.adopt(name)
    return s


def _kernel(run: _Run):
    a = run.args
    if a.m is None:
        raise ConfigError("--m is required for this command")
    cap = a.cap if a.cap is not None else max(a.level, 1.0)
    return discretize_chain(run.config.model, a.m, delta=a.delta, cap=cap)


# --------------------------------------------------------------------------
# commands


def _cmd_stability(run: _Run):
    model = run.config.model
    if run.config.kind == "onoff":
        rho, stable = onoff_stability(model)
        run.result = {"utilization": rho, "stable": stable}
    else:
        drift, stable = markov_stability(model)
        run.result = {"drift": drift, "stable": stable, "stationary": markov_stationary(model).tolist()}
    run.write_json("stability.json", run.result)
    return EXIT_OK


def _cmd_busy_lt(run: _Run):
    _need(run.config, "onoff", "busy-lt")
    a = run.args
    theta = _thetas(run)
    tol = a.tol if a.tol is not None else 1e-12
    sol = solve_busy_lt(run.config.model, theta, tol=tol, allow_unstable=a.allow_unstable)
    N = run.config.model.n_sources
    run.write_csv("busy_lt.csv", ["theta"] + [f"pi_{i}" for i in range(N)] + ["iterations", "residual"],
                  ([t, *p, int(it), float(r.max())] for t, p, it, r in zip(theta, sol.pi, sol.iterations, sol.residual)))
    run.result = {"theta": theta.tolist(), "pi": sol.pi.tolist(), "max_residual": float(sol.residual.max())}
    return EXIT_OK


def _cmd_busy_density(run: _Run):
    _need(run.config, "onoff", "busy-density")
    a = run.args
    t = _times(run)
    tol = a.tol if a.tol is not None else 1e-12
    bd = busy_density(run.config.model, a.source, t, method=a.method, tol=tol, allow_unstable=a.allow_unstable)
    run.write_csv("busy_density.csv", ["t", "density", "cdf", "hazard", "untrusted"],
                  zip(bd.t, bd.density, bd.cdf, bd.hazard, bd.untrusted))
    run.result = {"source": a.source, "method": bd.method, "n_points": int(t.size),
                  "n_untrusted": int(bd.untrusted.sum())}
    return EXIT_OK


def _cmd_simulate_busy(run: _Run):
    _need(run.config, "onoff", "simulate-busy")
    s = _samples(run, "busy-period")
    run.result = {"n": len(s), "mean": s.mean(), "standard_error": s.standard_error(),
                  "n_censored": s.n_censored}
    return EXIT_OK


def _cmd_hazard(run: _Run):
    s = _samples(run)
    a = run.args
    t = a.t_grid if a.t_grid is not None else None
    curve = hazard_estimate(s, a.bandwidth, t_grid=t, seed=run.seed)
    run.write_csv("hazard.csv", ["t", "hazard", "half_width", "survival"],
                  zip(curve.t, curve.hazard, curve.half_width, curve.survival))
    run.result = {"method": curve.method, "bandwidth": curve.bandwidth, "n_points": int(curve.t.size)}
    return EXIT_OK


def _verdict(run: _Run, verdict):
    run.write_json("verdict.json", verdict.to_dict())
    run.result = verdict.to_dict()
    return EXIT_OK if verdict.passed else EXIT_FAIL


def _cmd_dfr_check(run: _Run):
    s = _samples(run)
    return _verdict(run, dfr_check(s, seed=run.seed))


def _cmd_ifr_check(run: _Run):
    a = run.args
    if a.m is not None:
        _need(run.config, "markov", "ifr-check")
        passage = _passage(run)
        tol = a.tol if a.tol is not None else 1e-12
        return _verdict(run, ifr_check(survival=passage, tol=tol))
    return _verdict(run, ifr_check(_samples(run), seed=run.seed))


def _passage(run: _Run):
    a = run.args
    kernel = _kernel(run)
    if a.phase is None:
        init = np.zeros(kernel.n_states)
        s0 = kernel.state(kernel.level_index(a.q0), 0)
        init[s0: s0 + kernel.n_phases] = markov_stationary(run.config.model)
    else:
        init = (a.q0, a.phase)
    passage = first_passage_discrete(kernel, a.level, init)
    run.write_csv("first_passage_discrete.csv", ["n", "t", "survival"],
                  ((k, k / passage.m, v) for k, v in enumerate(passage.survival)))
    return passage


def _cmd_first_passage(run: _Run):
    _need(run.config, "markov", "first-passage")
    s = _samples(run, "first-passage")
    run.result = {"n": len(s), "mean": s.mean(), "censored_fraction": s.censored_fraction}
    if run.args.m is not None:
        passage = _passage(run)
        run.result["discrete_truncated_mass"] = passage.truncated_mass
    return EXIT_OK


def _cmd_discretize(run: _Run):
    _need(run.config, "markov", "discretize")
    kernel = _kernel(run)
    path = run.out / "kernel.csv"
    kernel.to_csv(path)
    # prepend provenance to the kernel's own header
    body = path.read_text(encoding="utf-8")
    path.write_text(run.header + body, encoding="utf-8")
    run.adopt("kernel.csv")
    run.result = {"n_states": kernel.n_states, "n_levels": kernel.n_levels, "delta": kernel.delta,
                  "nnz": int(kernel.matrix.nnz)}
    return EXIT_OK


def _cmd_tp2_check(run: _Run):
    _need(run.config, "markov", "tp2-check")
    a = run.args
    tol = a.tol if a.tol is not None else 1e-12
    return _verdict(run, tp2_check(_kernel(run), mode=a.mode, tol=tol, seed=run.seed))


_HANDLERS = {
    "stability": _cmd_stability,
    "busy-lt": _cmd_busy_lt,
    "busy-density": _cmd_busy_density,
    "simulate-busy": _cmd_simulate_busy,
    "hazard": _cmd_hazard,
    "dfr-check": _cmd_dfr_check,
    "ifr-check": _cmd_ifr_check,
    "first-passage": _cmd_first_passage,
    "discretize": _cmd_discretize,
    "tp2-check": _cmd_tp2_check,
}


def run_command(argv=None, stdout=None, stderr=None) -> int:
    """Run one command; returns the exit code (see module docstring)."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    start = time.perf_counter()
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        config = parse_config(_resolve_config(args.config))
        run = _Run(args, config)
        code = _HANDLERS[command](run)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except NumericalError as exc:
        print(f"fluidq: numerical failure: {exc}", file=stderr)
        return EXIT_NUMERICAL
    except (FluidQError, ValueError, IndexError) as exc:
        print(f"fluidq: error: {exc}", file=stderr)
        return EXIT_INVALID
    report = {
        "command": command,
        "config_fingerprint": run.config.fingerprint,
        "seed": run.seed,
        "outputs": list(run.outputs),
        "exit_code": code,
        "result": run.result,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - start, 6),
    }
    text = json.dumps(report, sort_keys=True, indent=2, default=_jsonable) + "\n"
    (run.out / "run_report.json").write_text(text, encoding="utf-8")
    stdout.write(text)
    return code


def main(argv=None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
