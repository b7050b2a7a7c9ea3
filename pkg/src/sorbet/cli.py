"""Command-line entry point: ``sorbet {verify,bench-ops,demo,spike-report}``.

Settings come from built-in defaults, then an optional flat ``key = value``
file (``--config``), then explicit flags.  Exit status: 0 when every check
passes, 1 on a property failure, 2 on a usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .counters import counting
from .energy import (
    MULT_ADD_RATIO,
    EnergyModel,
    TABLE_KERNELS,
    break_even_rate,
    cost_report,
    energy_favorable,
    measure_block_spike_rates,
    measure_kernel,
    multiplier_free,
    spike_rates_csv,
)
from .kernels import DEFAULT_CLAMP_MAX
from .model import ModelConfig, build_toy, forward, random_ids, transform_pipeline
from .spiking import DEFAULT_TIMESTEPS
from .verify import SUITES, SuiteConfig, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
K_MODES = {"ceil": "ceil", "round": "round_nearest"}
COMMANDS = ("verify", "bench-ops", "demo", "spike-report")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    timesteps: int = DEFAULT_TIMESTEPS
    blocks: int = 2
    dim: int = 32
    heads: int = 2
    seq: int = 16
    clamp_max: float | None = DEFAULT_CLAMP_MAX
    k_mode: str = "round"
    pow2_norm: bool = True
    out: str | None = None
    checkpoint: str | None = None
    suites: tuple[str, ...] = tuple(SUITES)
    samples: int = 100_000
    instances: int = 1000
    sizes: tuple[int, ...] = (1, 8, 64, 512)
    batch: int = 4

    def __post_init__(self):
        if self.k_mode not in K_MODES:
            raise ConfigError(f"k_mode must be one of {sorted(K_MODES)}")
        for name in ("timesteps", "blocks", "dim", "heads", "seq", "samples", "instances", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.clamp_max is not None and self.clamp_max != self.clamp_max:
            raise ConfigError("clamp_max must be a number or 'none'")
        if any(n < 1 for n in self.sizes):
            raise ConfigError("sizes must be positive")
        bad = [s for s in self.suites if s not in SUITES]
        if bad:
            raise ConfigError(f"unknown suites {bad}; choose from {list(SUITES)}")
        try:
            self.model_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.dim, heads=self.heads, blocks=self.blocks, seq=self.seq,
                           T=self.timesteps, clamp_max=self.clamp_max,
                           k_mode=K_MODES[self.k_mode], pow2_norm=self.pow2_norm)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_clamp(text: str) -> float | None:
    if text.strip().lower() == "none":
        return None
    return float(text)


def _parse_list(kind):
    def parse(text: str) -> tuple:
        return tuple(kind(v.strip()) for v in text.split(",") if v.strip())
    return parse


_FIELD_PARSERS = {
    "seed": int, "timesteps": int, "blocks": int, "dim": int, "heads": int, "seq": int,
    "clamp_max": _parse_clamp, "k_mode": str.strip, "pow2_norm": _parse_bool,
    "out": str.strip, "checkpoint": str.strip, "suites": _parse_list(str),
    "samples": int, "instances": int, "sizes": _parse_list(int), "batch": int,
}


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys may use ``-`` or ``_``."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _FIELD_PARSERS[key](value)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from None
    return values


def _typed(parser):
    """Wrap a field parser so argparse reports its failures as usage errors."""
    def conv(text):
        try:
            return parser(text)
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return conv


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--config", metavar="FILE", help="flat key = value file; flags override it")
    g.add_argument("--seed", type=int)
    g.add_argument("--timesteps", type=int, help="spike window T")
    g.add_argument("--blocks", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--seq", type=int)
    g.add_argument("--clamp-max", type=_typed(_parse_clamp), help="score clamp, or 'none' to disable")
    g.add_argument("--k-mode", choices=sorted(K_MODES))
    g.add_argument("--pow2-norm", action=argparse.BooleanOptionalAction, default=None,
                   help="power-of-two scale in BSPN inference")
    g.add_argument("--out", metavar="DIR", help="write report.json / spikes.csv / checkpoint here")
    g.add_argument("--checkpoint", metavar="DIR", help="spike-report: load a stage-S checkpoint")
    g.add_argument("--suites", type=_typed(_parse_list(str)), help="comma list of verify suites")
    g.add_argument("--samples", type=int, help="score vectors for the bound suites")
    g.add_argument("--instances", type=int, help="random blocks for the equivalence suite")
    g.add_argument("--sizes", type=_typed(_parse_list(int)), help="comma list of vector lengths")
    g.add_argument("--batch", type=int, help="sequences per demo/spike-report batch")

    ap = argparse.ArgumentParser(prog="sorbet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="run the seeded property suites")
    sub.add_parser("bench-ops", parents=[common], help="tabulated vs measured operation counts")
    sub.add_parser("demo", parents=[common], help="toy model through every stage, with reports")
    sub.add_parser("spike-report", parents=[common], help="per-block spike rates of a stage-S model")
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in _FIELD_PARSERS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(cfg: RunConfig, files: dict[str, str], out=None) -> None:
    if cfg.out is None:
        (out or sys.stdout).write(files["report.json"])
        return
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (root / name).write_text(text)


def cmd_verify(cfg: RunConfig, out=None) -> int:
    sc = SuiteConfig(seed=cfg.seed, suites=cfg.suites, lemma_samples=cfg.samples,
                     k_mode=K_MODES[cfg.k_mode], equivalence_instances=cfg.instances,
                     op_count_sizes=cfg.sizes, model=cfg.model_config())
    report = run_suite(sc)
    doc = json.loads(report.to_json())
    doc["run_config"] = cfg.as_dict()
    _emit(cfg, {"report.json": _dump(doc)}, out)
    for r in report.results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.failures}/{r.samples} failing",
              file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_bench_ops(cfg: RunConfig, out=None) -> int:
    model = EnergyModel(MULT_ADD_RATIO, cfg.timesteps)
    rows = []
    for n in cfg.sizes:
        for kernel in TABLE_KERNELS:
            measured = measure_kernel(kernel, n, cfg.seed) if kernel in ("ptsoftmax", "bspn") else None
            rows.append(cost_report(kernel, n, model, measured))
    ok = all(r.get("measured_matches_table", True) for r in rows)
    doc = {"run_config": cfg.as_dict(), "rows": rows, "measured_matches_table": ok}
    _emit(cfg, {"report.json": _dump(doc)}, out)
    return EXIT_OK if ok else EXIT_FAIL


def _pipeline(cfg: RunConfig):
    mc = cfg.model_config()
    m0 = build_toy(mc, cfg.seed)
    calib = random_ids(mc, 4 * cfg.batch, cfg.seed + 1)
    battery = random_ids(mc, cfg.batch, cfg.seed + 2)
    return transform_pipeline(m0, calib, battery)


def _break_even(rates: list[float], T: int) -> dict:
    threshold = break_even_rate(T, MULT_ADD_RATIO)
    return {
        "T": T,
        "mult_add_ratio": MULT_ADD_RATIO,
        "break_even_rate": threshold,
        "blocks": [{"block": i, "rate": r, "energy_favorable": energy_favorable(r, T)}
                   for i, r in enumerate(rates)],
    }


def cmd_demo(cfg: RunConfig, out=None) -> int:
    from .checkpoint import save_checkpoint

    stages, reports = _pipeline(cfg)
    s = stages[-1]
    ids = random_ids(s.config, cfg.batch, cfg.seed + 3)
    with counting() as c:
        forward(s, ids)
    rates = measure_block_spike_rates(s, ids)
    free = multiplier_free(c)
    doc = {
        "run_config": cfg.as_dict(),
        "stages": [r.as_dict() for r in reports],
        "stage_s_counts": c.as_dict(),
        "stage_s_multiplier_free": free,
        "spike_rates": rates,
        "break_even": _break_even(rates, cfg.timesteps),
    }
    _emit(cfg, {"report.json": _dump(doc), "spikes.csv": spike_rates_csv(rates)}, out)
    if cfg.out is not None:
        save_checkpoint(s, Path(cfg.out) / "checkpoint")
    print(f"stage S: {c.mul} mul, {c.div} div, {c.exp} exp, {c.sqrt} sqrt "
          f"({'multiplier-free' if free else 'NOT multiplier-free'})", file=sys.stderr)
    return EXIT_OK if free else EXIT_FAIL


def cmd_spike_report(cfg: RunConfig, out=None) -> int:
    if cfg.checkpoint:
        from .checkpoint import load_checkpoint

        s = load_checkpoint(cfg.checkpoint)
    else:
        s = _pipeline(cfg)[0][-1]
    ids = random_ids(s.config, cfg.batch, cfg.seed + 3)
    rates = measure_block_spike_rates(s, ids)
    doc = {"run_config": cfg.as_dict(), "spike_rates": rates,
           "break_even": _break_even(rates, s.config.T)}
    _emit(cfg, {"report.json": _dump(doc), "spikes.csv": spike_rates_csv(rates)}, out)
    return EXIT_OK


_COMMANDS = {"verify": cmd_verify, "bench-ops": cmd_bench_ops, "demo": cmd_demo,
             "spike-report": cmd_spike_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError) as e:
        print(f"sorbet: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return _COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
