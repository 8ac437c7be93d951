"""
CLI Module
Handles config ingestion, subcommand dispatch and result emission

Usage:
    python cli.py simulate --config configs/benchmark_h1.cfg --out results/
    python cli.py verify T3_2_MOMENT_ENVELOPE --config configs/benchmark_h1.cfg --paths 10000
"""

import argparse
import csv
import hashlib
import io
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from dotenv.parser import parse_stream

from integrate import (
    BrownianDriver,
    IntegrationError,
    InvalidConfigError,
    Mode,
    Scheme,
    SimConfig,
    estimate_strong_order,
    simulate_path,
)
from model import (
    COEFFICIENT_NAMES,
    NOISE_NAMES,
    CoefficientError,
    CoefficientFn,
    CoefficientKind,
    CoefficientSet,
    MomentSpec,
    ModelError,
    Species,
    validate_coefficients,
)
from montecarlo import EstimationError, moment_functional, moment_series, run_ensemble
from verify import (
    TheoremId,
    TheoremReport,
    Verdict,
    VerificationError,
    check_loggrowth,
    check_moment_bound,
    check_moment_envelope,
    check_positivity,
    check_predator_extinction,
    check_prey_solo,
)

logger = logging.getLogger(__name__)

__version__ = "1.0.0"

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2
EXIT_ERROR = 3

VERDICT_EXIT = {
    Verdict.PASS: EXIT_PASS,
    Verdict.FAIL: EXIT_FAIL,
    Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


class ConfigError(Exception):
    """Base class for config errors"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ParseError(ConfigError):
    pass


class SemanticError(ConfigError):
    pass


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class HarnessParams:
    n_paths: int = 1000
    master_seed: int = 0
    theta1: float = 1.0
    theta2: float = 1.0
    varsigma1: float = 1.0
    varsigma2: float = 1.0
    varrho1: float = 0.5
    varrho2: float = 0.5
    dt_coarse: float = 2.0 ** -6
    levels: int = 4
    validation: str = "strict"

    @property
    def strict(self) -> bool:
        return self.validation == "strict"

    @property
    def moment_spec(self) -> MomentSpec:
        return MomentSpec(self.theta1, self.theta2, self.varsigma1, self.varsigma2, self.varrho1, self.varrho2)

    def validate(self) -> None:
        if self.n_paths < 1:
            raise SemanticError(f"paths={self.n_paths} must be positive")
        if not 0 <= self.master_seed < 2 ** 64:
            raise SemanticError(f"seed={self.master_seed} outside [0, 2^64)")
        if self.validation not in ("strict", "relaxed"):
            raise SemanticError(f"validation={self.validation!r} must be strict or relaxed")
        if not self.dt_coarse > 0:
            raise SemanticError(f"dt_coarse={self.dt_coarse} must be positive")


# config key -> (attribute, parser)
SIM_KEYS = {
    "t_end": ("t_end", float),
    "dt": ("dt", float),
    "save_every": ("save_every", int),
    "x0": ("x0", float),
    "y0": ("y0", float),
    "scheme": ("scheme", Scheme),
    "mode": ("mode", Mode),
    "blowup_guard": ("blowup_guard", float),
}
HARNESS_KEYS = {
    "paths": ("n_paths", int),
    "seed": ("master_seed", int),
    "theta1": ("theta1", float),
    "theta2": ("theta2", float),
    "varsigma1": ("varsigma1", float),
    "varsigma2": ("varsigma2", float),
    "varrho1": ("varrho1", float),
    "varrho2": ("varrho2", float),
    "dt_coarse": ("dt_coarse", float),
    "levels": ("levels", int),
    "validation": ("validation", str),
}
KIND_FIELDS = {
    CoefficientKind.CONSTANT: ("value",),
    CoefficientKind.PIECEWISE: ("breakpoints", "values"),
    CoefficientKind.SINUSOIDAL: ("mean", "amplitude", "period", "phase"),
}
LIST_FIELDS = ("breakpoints", "values")


@dataclass(frozen=True)
class RunManifest:
    sim: SimConfig
    coefficients: CoefficientSet
    harness: HarnessParams
    config_path: str = ""
    out_dir: str = "."
    threads: int = 1
    version: str = __version__

    @property
    def fingerprint(self) -> str:
        return fingerprint(self)


def _known_key(key: str) -> bool:
    if key in SIM_KEYS or key in HARNESS_KEYS:
        return True
    name, _, part = key.partition(".")
    return name in COEFFICIENT_NAMES and part in ("kind",) + tuple(f for group in KIND_FIELDS.values() for f in group)


def _binding_line(binding) -> int:
    # a binding's original text starts with any blank lines absorbed before it
    text = binding.original.string
    leading = text[: len(text) - len(text.lstrip())]
    return binding.original.line + leading.count("\n")


def _read_entries(text: str) -> Dict[str, Tuple[str, int]]:
    entries: Dict[str, Tuple[str, int]] = {}
    for binding in parse_stream(io.StringIO(text)):
        line = _binding_line(binding)
        if binding.error:
            raise ParseError(f"cannot parse {binding.original.string.strip()!r}", line)
        if binding.key is None:
            continue
        key = binding.key.strip()
        if binding.value is None:
            raise ParseError(f"expected 'key = value', got {key!r}", line)
        if key in entries:
            raise ParseError(f"duplicate key {key!r} (first on line {entries[key][1]}, again on line {line})", line)
        if not _known_key(key):
            raise ParseError(f"unknown key {key!r}", line)
        entries[key] = (binding.value.strip(), line)
    return entries


def _convert(key: str, raw: str, parser, line: int):
    try:
        if parser is int:
            return int(raw)
        if parser is float:
            return float(raw)
        if parser is str:
            return raw
        return parser(raw.upper())
    except ValueError:
        raise ParseError(f"{key}: cannot read {raw!r}", line)


def _coefficient(name: str, entries: Dict[str, Tuple[str, int]]) -> CoefficientFn:
    parts = {key.partition(".")[2]: value for key, value in entries.items() if key.partition(".")[0] == name}
    if not parts:
        if name in NOISE_NAMES:
            return CoefficientFn.constant(0.0)
        raise SemanticError(f"missing coefficient {name}")

    first_line = min(line for _, line in parts.values())
    if "kind" in parts:
        raw_kind, kind_line = parts.pop("kind")
        try:
            kind = CoefficientKind(raw_kind.lower())
        except ValueError:
            raise ParseError(f"{name}.kind: unknown kind {raw_kind!r}", kind_line)
    elif "value" in parts:
        kind = CoefficientKind.CONSTANT
    elif "breakpoints" in parts or "values" in parts:
        kind = CoefficientKind.PIECEWISE
    else:
        kind = CoefficientKind.SINUSOIDAL

    arguments = {}
    for part, (raw, line) in parts.items():
        if part not in KIND_FIELDS[kind]:
            raise SemanticError(f"{name}.{part} does not apply to a {kind.value} coefficient", line)
        if part in LIST_FIELDS:
            items = [item.strip() for item in raw.split(",") if item.strip()]
            arguments[part] = tuple(_convert(f"{name}.{part}", item, float, line) for item in items)
        else:
            arguments[part] = _convert(f"{name}.{part}", raw, float, line)
    if kind is CoefficientKind.CONSTANT and "value" not in arguments:
        raise SemanticError(f"{name} is constant but has no value", first_line)
    try:
        return CoefficientFn(kind, **arguments)
    except CoefficientError as e:
        raise SemanticError(f"{name}: {e}", first_line)


def parse_config(text: str) -> Tuple[SimConfig, CoefficientSet, HarnessParams]:
    """
    Read a key = value config.

    Returns:
        (SimConfig, CoefficientSet, HarnessParams)

    Raises:
        ParseError: malformed line, unknown or duplicate key, unreadable value
        SemanticError: missing or out-of-range settings
    """
    entries = _read_entries(text)

    sim_arguments = {}
    for key, (attribute, parser) in SIM_KEYS.items():
        if key in entries:
            raw, line = entries[key]
            sim_arguments[attribute] = _convert(key, raw, parser, line)
    if "t_end" not in sim_arguments:
        raise SemanticError("missing t_end")

    harness_arguments = {}
    for key, (attribute, parser) in HARNESS_KEYS.items():
        if key in entries:
            raw, line = entries[key]
            harness_arguments[attribute] = _convert(key, raw, parser, line)

    coefficient_entries = {key: value for key, value in entries.items() if "." in key}
    coefficients = CoefficientSet(**{name: _coefficient(name, coefficient_entries) for name in COEFFICIENT_NAMES})

    sim = SimConfig(**sim_arguments)
    try:
        sim.validate()
    except InvalidConfigError as e:
        raise SemanticError(str(e))
    harness = HarnessParams(**harness_arguments)
    harness.validate()

    report = validate_coefficients(coefficients)
    if not report.ok:
        if harness.strict:
            raise SemanticError(f"coefficients violate standing assumptions: {report.summary()}")
        logger.warning("[Config] relaxed validation: %s", report.summary())
    return sim, coefficients, harness


def _number(value: float) -> str:
    return format(float(value), ".17g")


def emit_config(manifest: RunManifest) -> str:
    """Canonical text of a manifest: one key per line, sorted, numbers with 17 significant digits."""
    lines = {}
    for key, (attribute, parser) in SIM_KEYS.items():
        value = getattr(manifest.sim, attribute)
        if parser is float:
            lines[key] = _number(value)
        elif parser is int:
            lines[key] = str(int(value))
        else:
            lines[key] = value.value
    for key, (attribute, parser) in HARNESS_KEYS.items():
        value = getattr(manifest.harness, attribute)
        lines[key] = _number(value) if parser is float else str(value)
    for name, fn in manifest.coefficients.items():
        lines[f"{name}.kind"] = fn.kind.value
        for part in KIND_FIELDS[fn.kind]:
            value = getattr(fn, part)
            if part in LIST_FIELDS:
                lines[f"{name}.{part}"] = ",".join(_number(v) for v in value)
            else:
                lines[f"{name}.{part}"] = _number(value)
    return "".join(f"{key}={lines[key]}\n" for key in sorted(lines))


def fingerprint(manifest: RunManifest) -> str:
    return hashlib.sha256(emit_config(manifest).encode()).hexdigest()


def format_number(value) -> str:
    """17 significant digits, fixed notation."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return np.format_float_positional(float(value), precision=17, unique=False, fractional=False)


def write_csv(path: Path, digest: str, header: Sequence[str], rows: Iterable[Sequence], footer: Sequence[str] = ()) -> Path:
    with open(path, "w", newline="") as handle:
        handle.write(f"# fingerprint={digest}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(value) for value in row])
        for line in footer:
            handle.write(f"# {line}\n")
    return path


def _prepare_out(manifest: RunManifest) -> Path:
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.cfg"
    with open(manifest_path, "w") as handle:
        handle.write(f"# fingerprint={manifest.fingerprint}\n# version={manifest.version}\n")
        handle.write(emit_config(manifest))
    return out


def cmd_simulate(manifest: RunManifest) -> List[Path]:
    out = _prepare_out(manifest)
    sim = manifest.sim
    driver = None
    if sim.scheme is not Scheme.RK4_DETERMINISTIC:
        driver = BrownianDriver(manifest.harness.master_seed, 0, sim.dt)
    path = simulate_path(sim, manifest.coefficients, driver, strict=manifest.harness.strict)
    header, columns = ["t"], [path.times]
    for name, species in (("x", Species.PREY), ("y", Species.PREDATOR)):
        if sim.present(species):
            header.append(name)
            columns.append(path.density(species))
    written = write_csv(out / "path.csv", manifest.fingerprint, header, zip(*columns))
    logger.info("[CLI] wrote %s", written)
    return [out / "manifest.cfg", written]


def cmd_ensemble(manifest: RunManifest) -> List[Path]:
    out = _prepare_out(manifest)
    harness = manifest.harness
    wanted = [(harness.theta1, harness.theta2), (1.0, 0.0), (0.0, 1.0)]
    functionals = [moment_functional(t1, t2) for t1, t2 in wanted]
    summary = run_ensemble(
        manifest.sim,
        manifest.coefficients,
        harness.n_paths,
        functionals,
        harness.master_seed,
        manifest.threads,
        strict=harness.strict,
        keep_paths=False,
    )
    moment, mean_x, mean_y = (moment_series(summary, t1, t2) for t1, t2 in wanted)
    rows = [
        (est.time, mx.point_estimate, my.point_estimate, est.point_estimate, est.standard_error, est.ci_low, est.ci_high, summary.n_blowups)
        for est, mx, my in zip(moment, mean_x, mean_y)
    ]
    header = ("t", "mean_x", "mean_y", "moment", "se", "ci_low", "ci_high", "n_blowups")
    written = write_csv(out / "moments.csv", manifest.fingerprint, header, rows)
    logger.info("[CLI] wrote %s", written)
    return [out / "manifest.cfg", written]


def render_report(report: TheoremReport) -> str:
    """key = value text of a TheoremReport."""
    data = report.to_dict()
    lines = [f"# fingerprint={report.fingerprint}"]
    for key in ("theorem_id", "verdict", "n_paths", "n_blowups"):
        lines.append(f"{key} = {data[key]}")
    if report.window is not None:
        lines.append(f"window = {format_number(report.window[0])},{format_number(report.window[1])}")
    lines.append(f"runtime_seconds = {report.runtime:.3f}")

    def describe(prefix: str, entry: dict) -> None:
        for key, value in entry.items():
            if value is None or value == "":
                continue
            text = format_number(value) if isinstance(value, float) else value
            lines.append(f"{prefix}.{key} = {text}")

    for index, check in enumerate(data["checks"]):
        describe(f"check.{index}", check)
    if data["offending"]:
        describe("offending", data["offending"])
    for index, note in enumerate(report.notes):
        lines.append(f"note.{index} = {note}")
    return "\n".join(lines) + "\n"


def run_theorem(manifest: RunManifest, theorem_id: TheoremId) -> TheoremReport:
    sim, c, harness = manifest.sim, manifest.coefficients, manifest.harness
    common = dict(
        master_seed=harness.master_seed,
        n_jobs=manifest.threads,
        strict=harness.strict,
        fingerprint=manifest.fingerprint,
    )
    if theorem_id is TheoremId.T2_1_POSITIVITY:
        return check_positivity(sim, c, harness.n_paths, **common)
    if theorem_id is TheoremId.T3_2_MOMENT_ENVELOPE:
        return check_moment_envelope(sim, c, harness.theta1, harness.theta2, harness.n_paths, **common)
    if theorem_id is TheoremId.T3_3_MOMENT_BOUND:
        return check_moment_bound(sim, c, harness.moment_spec, harness.n_paths, **common)
    if theorem_id is TheoremId.T4_1_LOGGROWTH:
        return check_loggrowth(
            sim,
            c,
            harness.theta1,
            harness.theta2,
            harness.n_paths,
            weights=(harness.varsigma1, harness.varsigma2),
            average_exponents=(harness.varrho1, harness.varrho2),
            **common,
        )
    if theorem_id is TheoremId.T4_3_PREDATOR_EXTINCTION:
        return check_predator_extinction(sim, c, harness.n_paths, **common)
    return check_prey_solo(sim, c, harness.n_paths, **common)


def cmd_verify(manifest: RunManifest, theorem_id: TheoremId) -> Tuple[List[Path], int]:
    out = _prepare_out(manifest)
    report = run_theorem(manifest, TheoremId(theorem_id))
    report_path = out / f"report_{report.theorem_id.value}.txt"
    with open(report_path, "w") as handle:
        handle.write(render_report(report))
    written = [out / "manifest.cfg", report_path]
    if report.envelope_rows:
        written.append(write_csv(out / "envelope.csv", manifest.fingerprint, report.envelope_header, report.envelope_rows))
    logger.info("[CLI] %s verdict %s", report.theorem_id.value, report.verdict.value)
    return written, VERDICT_EXIT[report.verdict]


def cmd_convergence(manifest: RunManifest) -> List[Path]:
    out = _prepare_out(manifest)
    harness = manifest.harness
    estimate = estimate_strong_order(
        manifest.sim,
        manifest.coefficients,
        harness.n_paths,
        harness.dt_coarse,
        harness.levels,
        harness.master_seed,
        strict=harness.strict,
    )
    footer = (f"slope={format_number(estimate.order)} residual={format_number(estimate.residual)}",)
    written = write_csv(out / "order.csv", manifest.fingerprint, ("dt", "strong_error"), zip(estimate.dts, estimate.errors), footer)
    logger.info("[CLI] strong order %.4f (residual %.4f)", estimate.order, estimate.residual)
    return [out / "manifest.cfg", written]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cli.py", description="Stochastic predator-prey simulator and theorem checks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", required=True, help="key = value config file")
        command.add_argument("--out", default="results", help="output directory")
        command.add_argument("--seed", type=int, help="override the config seed")
        command.add_argument("--paths", type=int, help="override the config path count")
        command.add_argument("--threads", type=int, default=1, help="joblib workers, 0 for every core")
        command.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        return command

    add("simulate", "simulate one path")
    add("ensemble", "simulate an ensemble and write moment estimates")
    verify = add("verify", "run a theorem harness")
    verify.add_argument("theorem", choices=[t.value for t in TheoremId])
    add("convergence", "estimate the strong order of the configured scheme")
    return parser


def load_manifest(args: argparse.Namespace) -> RunManifest:
    config_path = Path(args.config)
    try:
        text = config_path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {config_path}: {e}")
    sim, coefficients, harness = parse_config(text)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.paths is not None:
        overrides["n_paths"] = args.paths
    if overrides:
        harness = replace(harness, **overrides)
        harness.validate()
    return RunManifest(
        sim=sim,
        coefficients=coefficients,
        harness=harness,
        config_path=str(config_path),
        out_dir=args.out,
        threads=args.threads,
    )


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_ERROR
    configure_logging(args.verbose)

    try:
        manifest = load_manifest(args)
        logger.info("[CLI] %s with %s (fingerprint %s)", args.command, manifest.config_path, manifest.fingerprint[:12])
        if args.command == "simulate":
            cmd_simulate(manifest)
        elif args.command == "ensemble":
            cmd_ensemble(manifest)
        elif args.command == "convergence":
            cmd_convergence(manifest)
        else:
            _, status = cmd_verify(manifest, TheoremId(args.theorem))
            return status
    except (ConfigError, ModelError, IntegrationError, EstimationError, VerificationError, OSError) as e:
        logger.error("[CLI] %s: %s", type(e).__name__, e)
        return EXIT_ERROR
    return EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())
