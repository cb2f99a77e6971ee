"""Command-line front end: run experiments, cross-check the oracle, analyze runs.

Subcommands::

    ratiosim run          --config cfg.toml --out outdir [--seed-override N]
    ratiosim oracle-check --config cfg.toml [--seed-override N]
    ratiosim analyze      --config cfg.toml [--out outdir] [--seed-override N]

Exit codes: 0 success, 1 runtime failure, 2 config error, 3 check failure,
4 configuration not checkable against the oracle. Config files are TOML;
the full schema is documented in the project README. Every run is a pure
function of the config file plus its seed: reruns produce byte-identical
trace files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import analysis as analysis_mod
from . import augmented as augmented_mod
from . import baseline as baseline_mod
from . import engine as engine_mod
from . import weights as weights_mod
from .engine import DelaySchedule, RunSpec, SwitchPlan, TerminationEvent
from .graph import Digraph, DigraphSequence, GraphError, random_geometric_digraph, random_digraph
from .weights import WeightMatrix

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_NOT_CHECKABLE = 4

ORACLE_TOL = 1e-12

PROTOCOLS = ("ratio", "single", "baseline")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


def _req(doc: Mapping[str, Any], key: str, kind, path: str):
    if key not in doc:
        raise ConfigError(f"{path}{key}", "missing required field")
    value = doc[key]
    if kind in (int, float) and isinstance(value, bool):
        raise ConfigError(f"{path}{key}", f"expected {kind.__name__}, got bool")
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{path}{key}",
                          f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _opt(doc: Mapping[str, Any], key: str, kind, default, path: str):
    if key not in doc:
        return default
    return _req(doc, key, kind, path)


def _edge_pairs(raw, field: str) -> list[tuple[int, int]]:
    pairs = []
    for item in raw:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or not all(isinstance(v, int) for v in item)):
            raise ConfigError(field, f"expected [receiver, sender] int pairs, got {item!r}")
        pairs.append((item[0], item[1]))
    return pairs


def _build_topology(sec: Mapping[str, Any], seed: int) -> DigraphSequence:
    kind = _req(sec, "kind", str, "graph.")
    n = _req(sec, "n", int, "graph.")
    try:
        if kind == "explicit":
            edges = _edge_pairs(_req(sec, "edges", list, "graph."), "graph.edges")
            return DigraphSequence.static(Digraph(n, frozenset(edges)))
        if kind == "random":
            p = _req(sec, "p", float, "graph.")
            return DigraphSequence.static(random_digraph(n, p, seed))
        if kind == "geometric":
            radius = _req(sec, "radius", float, "graph.")
            require_sc = _opt(sec, "require_strongly_connected", bool, True, "graph.")
            return DigraphSequence.static(random_geometric_digraph(
                n, radius, seed, require_strongly_connected=require_sc))
        if kind == "random_each_step":
            p = _req(sec, "p", float, "graph.")
            return DigraphSequence.random_each_step(n, p, seed)
        if kind == "periodic":
            phases = _req(sec, "phases", list, "graph.")
            graphs = [Digraph(n, frozenset(_edge_pairs(ph, "graph.phases")))
                      for ph in phases]
            return DigraphSequence.from_list(graphs, repeat=True)
    except GraphError as exc:
        raise ConfigError("graph", str(exc)) from exc
    raise ConfigError("graph.kind", f"unknown kind {kind!r}")


def _build_delays(sec: Mapping[str, Any], seed: int, n: int) -> DelaySchedule:
    tau_bar = _opt(sec, "tau_bar", int, 0, "delays.")
    source = _opt(sec, "source", str, "zero", "delays.")
    bounds = None
    if "per_link_bounds" in sec:
        bounds = {}
        for item in _req(sec, "per_link_bounds", list, "delays."):
            if len(item) != 3:
                raise ConfigError("delays.per_link_bounds",
                                  f"expected [receiver, sender, bound] rows, got {item!r}")
            bounds[(item[0], item[1])] = item[2]
    try:
        if source == "zero":
            if tau_bar == 0:
                return DelaySchedule.none()
            return DelaySchedule(tau_bar=tau_bar, source="zero",
                                 per_link_bounds=bounds)
        if source == "uniform":
            return DelaySchedule.uniform(tau_bar, seed, n, per_link_bounds=bounds)
        if source == "table":
            table = {}
            for item in _req(sec, "table", list, "delays."):
                if len(item) != 4:
                    raise ConfigError("delays.table",
                                      f"expected [k, receiver, sender, delay] rows, got {item!r}")
                table[(item[0], item[1], item[2])] = item[3]
            return DelaySchedule.from_table(tau_bar, table, per_link_bounds=bounds)
        if source == "constant":
            const = {}
            for item in _req(sec, "constant", list, "delays."):
                if len(item) != 3:
                    raise ConfigError("delays.constant",
                                      f"expected [receiver, sender, delay] rows, got {item!r}")
                const[(item[0], item[1])] = item[2]
            if tau_bar < max(const.values(), default=0):
                raise ConfigError("delays.tau_bar", "smaller than a constant delay")
            return DelaySchedule(tau_bar=tau_bar, source="constant", constant=const,
                                 per_link_bounds=bounds)
    except engine_mod.ScheduleError as exc:
        raise ConfigError("delays", str(exc)) from exc
    raise ConfigError("delays.source", f"unknown source {source!r}")


def _build_plan(doc: Mapping[str, Any], topology: DigraphSequence) -> SwitchPlan:
    sec = doc.get("termination")
    if sec is None:
        return SwitchPlan(topology)
    bound = _req(sec, "ack_delay_bound", int, "termination.")
    events = []
    for item in _req(sec, "events", list, "termination."):
        if len(item) != 4:
            raise ConfigError("termination.events",
                              f"expected [step, sender, receiver, ack_delay] rows, got {item!r}")
        events.append(TerminationEvent(step=item[0], sender=item[1],
                                       receiver=item[2], ack_delay=item[3]))
    try:
        return SwitchPlan(topology, ack_delay_bound=bound,
                          termination_events=tuple(events))
    except engine_mod.ScheduleError as exc:
        raise ConfigError("termination", str(exc)) from exc


@dataclass
class ExperimentConfig:
    path: Path
    protocol: str
    seed: int
    horizon: int
    epsilon: float
    y0: tuple[float, ...]
    topology: DigraphSequence
    delays: DelaySchedule
    plan: SwitchPlan
    weights_mode: str
    explicit_weights: WeightMatrix | None
    analysis_window: int

    @classmethod
    def from_file(cls, path: str | Path,
                  seed_override: int | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"no such file: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"invalid TOML: {exc}")

        protocol = _opt(doc, "protocol", str, "ratio", "")
        if protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"must be one of {PROTOCOLS}, got {protocol!r}")
        seed = _req(doc, "seed", int, "")
        if seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        if seed_override is not None:
            seed = seed_override
        horizon = _req(doc, "horizon", int, "")
        if horizon < 0:
            raise ConfigError("horizon", "must be nonnegative")
        epsilon = _opt(doc, "epsilon", float, 1e-6, "")
        y0_raw = _req(doc, "y0", list, "")
        if not y0_raw or not all(isinstance(v, (int, float)) for v in y0_raw):
            raise ConfigError("y0", "expected a nonempty list of numbers")
        y0 = tuple(float(v) for v in y0_raw)

        graph_sec = doc.get("graph")
        if graph_sec is None:
            raise ConfigError("graph", "missing required section")
        topology = _build_topology(graph_sec, seed)
        if len(y0) != topology.n:
            raise ConfigError("y0", f"has {len(y0)} entries but graph.n={topology.n}")

        delays = _build_delays(doc.get("delays", {}), seed, topology.n)
        plan = _build_plan(doc, topology)

        wsec = doc.get("weights", {})
        weights_mode = _opt(wsec, "mode", str, "out_degree", "weights.")
        explicit = None
        if weights_mode == "explicit":
            if "file" in wsec:
                mpath = path.parent / _req(wsec, "file", str, "weights.")
                try:
                    text = mpath.read_text()
                except OSError as exc:
                    raise ConfigError("weights.file", str(exc)) from exc
            else:
                text = "\n".join(_req(wsec, "rows", list, "weights."))
            try:
                explicit = weights_mod.parse_matrix_text(text)
            except weights_mod.WeightError as exc:
                raise ConfigError("weights.rows", str(exc)) from exc
        elif weights_mode not in ("out_degree", "doubly_stochastic"):
            raise ConfigError("weights.mode", f"unknown mode {weights_mode!r}")

        asec = doc.get("analysis", {})
        window = _opt(asec, "window", int, 1, "analysis.")
        if window < 1:
            raise ConfigError("analysis.window", "must be >= 1")

        cfg = cls(path=path, protocol=protocol, seed=seed, horizon=horizon,
                  epsilon=epsilon, y0=y0, topology=topology, delays=delays,
                  plan=plan, weights_mode=weights_mode,
                  explicit_weights=explicit, analysis_window=window)
        cfg._validate_protocol()
        return cfg

    def _validate_protocol(self) -> None:
        if self.protocol == "baseline":
            if not self.topology.is_static:
                raise ConfigError("graph.kind", "baseline protocol needs a static graph")
            if self.plan.termination_events:
                raise ConfigError("termination", "baseline protocol has no termination handling")
            if self.weights_mode == "out_degree":
                raise ConfigError("weights.mode",
                                  "baseline protocol needs doubly_stochastic or explicit weights")

    def engine_weights(self) -> engine_mod.WeightsSpec:
        if self.weights_mode == "out_degree":
            return "out_degree"
        if self.weights_mode == "doubly_stochastic":
            g = self.topology.graph_at(0)
            try:
                return weights_mod.doubly_stochastic_weights(g)
            except weights_mod.WeightError as exc:
                raise ConfigError("weights.mode", str(exc)) from exc
        assert self.explicit_weights is not None
        return self.explicit_weights

    def to_run_spec(self) -> RunSpec:
        try:
            return RunSpec(plan=self.plan, delays=self.delays, y0=self.y0,
                           horizon=self.horizon, weights=self.engine_weights(),
                           epsilon=self.epsilon)
        except engine_mod.EngineError as exc:
            raise ConfigError("run", str(exc)) from exc

    def baseline_weights(self) -> WeightMatrix:
        w = self.engine_weights()
        if not isinstance(w, WeightMatrix):
            raise ConfigError("weights.mode", "baseline protocol needs an "
                              "explicit or doubly_stochastic weight matrix")
        return w


# ---------------------------------------------------------------------------
# commands


def _fmt(value: float) -> str:
    return repr(float(value))


def _write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content)


def _run_ratio(cfg: ExperimentConfig):
    return engine_mod.run(cfg.to_run_spec())


def cmd_run(config_path: str, out_dir: str,
            seed_override: int | None = None) -> int:
    cfg = ExperimentConfig.from_file(config_path, seed_override)
    out = Path(out_dir)
    summary = [f"config: {cfg.path.name}", f"protocol: {cfg.protocol}",
               f"n: {cfg.topology.n}", f"horizon: {cfg.horizon}",
               f"seed: {cfg.seed}", f"epsilon: {_fmt(cfg.epsilon)}"]

    if cfg.protocol == "ratio":
        result = _run_ratio(cfg)
        trace = result.trace_csv()
        spread_csv = result.spread_csv()
        final = result.final_ratios()
        mu_star = result.spec.mu_star
        summary.append(f"mu_star: {_fmt(mu_star)}")
        for j, v in enumerate(final):
            summary.append(f"final_ratio_{j}: {_fmt(v)}")
        summary.append(f"max_final_deviation: {_fmt(np.abs(final - mu_star).max())}")
        steps = result.steps_to_epsilon()
        summary.append(f"steps_to_epsilon: {steps if steps is not None else 'none'}")
    elif cfg.protocol == "single":
        result = _run_ratio(cfg)
        xs = np.stack([st.y for st in result.states])
        trace = _single_trace_csv(xs)
        spread_csv = _series_csv("spread", xs.max(axis=1) - xs.min(axis=1))
        final = xs[-1]
        for j, v in enumerate(final):
            summary.append(f"final_value_{j}: {_fmt(v)}")
        summary.append(f"final_spread: {_fmt(final.max() - final.min())}")
        last_move = float(np.abs(xs[-1] - xs[-2]).max()) if len(xs) > 1 else 0.0
        summary.append(f"last_step_movement: {_fmt(last_move)}")
    else:  # baseline
        bres = baseline_mod.run_baseline(cfg.y0, cfg.baseline_weights(),
                                         cfg.delays, cfg.horizon)
        trace = bres.trace_csv()
        spread_csv = _series_csv("spread", bres.spread_series())
        final = bres.final_values()
        average = float(np.mean(cfg.y0))
        for j, v in enumerate(final):
            summary.append(f"final_value_{j}: {_fmt(v)}")
        summary.append(f"final_spread: {_fmt(final.max() - final.min())}")
        summary.append(f"average: {_fmt(average)}")
        summary.append(f"consensus_minus_average: {_fmt(float(np.mean(final)) - average)}")

    _write(out / "trace.csv", trace)
    _write(out / "spread.csv", spread_csv)
    _write(out / "summary.txt", "\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def _single_trace_csv(xs: np.ndarray) -> str:
    lines = ["k,node,y"]
    for k, row in enumerate(xs):
        for j, v in enumerate(row):
            lines.append(f"{k},{j},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def _series_csv(name: str, values: np.ndarray) -> str:
    lines = [f"k,{name}"]
    for k, v in enumerate(values):
        lines.append(f"{k},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def cmd_oracle_check(config_path: str, seed_override: int | None = None) -> int:
    cfg = ExperimentConfig.from_file(config_path, seed_override)
    if cfg.protocol != "ratio":
        print(f"not checkable: protocol {cfg.protocol!r} has no augmented-matrix oracle")
        return EXIT_NOT_CHECKABLE
    spec = cfg.to_run_spec()
    result = engine_mod.run(spec)
    oracle = augmented_mod.oracle_run(spec)
    devs = augmented_mod.compare_with_engine(result, oracle)
    max_dev = float(devs.max())
    print(f"steps: {spec.horizon}")
    print(f"augmented_dimension: {oracle.layout.dim}")
    print(f"max_deviation: {_fmt(max_dev)}")
    print(f"tolerance: {_fmt(ORACLE_TOL)}")
    if max_dev <= ORACLE_TOL:
        print("oracle_check: PASS")
        return EXIT_OK
    print("oracle_check: FAIL")
    return EXIT_CHECK


def _trace_only_report(path: Path) -> list[str]:
    rows = path.read_text().strip().splitlines()
    header = rows[0].split(",")
    if header[:3] != ["k", "node", "y"]:
        raise ConfigError("trace", f"unrecognized trace header {rows[0]!r}")
    has_mu = "mu" in header
    col = header.index("mu") if has_mu else header.index("y")
    by_step: dict[int, list[float]] = {}
    for ln in rows[1:]:
        parts = ln.split(",")
        by_step.setdefault(int(parts[0]), []).append(float(parts[col]))
    ks = sorted(by_step)
    spreads = [max(by_step[k]) - min(by_step[k]) for k in ks]
    lines = [f"trace: {path.name}",
             f"steps: {ks[-1] if ks else 0}",
             f"tracked_column: {'mu' if has_mu else 'y'}",
             f"final_spread: {_fmt(spreads[-1])}",
             f"initial_spread: {_fmt(spreads[0])}"]
    return lines


def cmd_analyze(input_path: str, out_dir: str | None = None,
                seed_override: int | None = None) -> int:
    path = Path(input_path)
    if path.suffix == ".csv":
        lines = _trace_only_report(path)
        report = "\n".join(lines) + "\n"
        print(report, end="")
        if out_dir:
            _write(Path(out_dir) / "analysis.txt", report)
        return EXIT_OK

    cfg = ExperimentConfig.from_file(path, seed_override)
    if cfg.protocol != "ratio":
        raise ConfigError("protocol", "analysis needs a ratio-protocol config")
    spec = cfg.to_run_spec()
    result = engine_mod.run(spec)
    oracle = augmented_mod.oracle_run(spec)
    mats = oracle.matrices
    n = spec.n
    window = cfg.analysis_window

    lines = [f"config: {cfg.path.name}", f"n: {n}",
             f"tau_bar: {spec.delays.tau_bar}", f"horizon: {spec.horizon}",
             f"seed: {cfg.seed}", f"mu_star: {_fmt(spec.mu_star)}"]

    deviations = result.deviation_series()
    lines.append(f"final_max_deviation: {_fmt(deviations[-1])}")
    steps = result.steps_to_epsilon()
    lines.append(f"steps_to_epsilon: {steps if steps is not None else 'none'}")

    # ergodicity decay of the running backward product
    deltas = analysis_mod.delta_decay_profile(mats, window)
    lines.append(f"delta_window: {window}")
    if deltas.size:
        lines.append(f"delta_first: {_fmt(deltas[0])}")
        lines.append(f"delta_last: {_fmt(deltas[-1])}")
        below = np.nonzero(deltas < 1e-6)[0]
        at = (below[0] + 1) * window if below.size else None
        lines.append(f"delta_below_1e-06_at: {at if at is not None else 'none'}")
        lines.append(f"no_mixing: {bool(deltas[-1] > 1.0 - 1e-9)}")

    # SIA classification of window products
    classes = []
    for start in range(0, len(mats) - window + 1, window):
        block = mats[start:start + window]
        product = block[0]
        for m in block[1:]:
            product = m @ product
        classes.append(analysis_mod.classify_sia(product))
    if classes:
        all_sia = all(c is analysis_mod.SiaClass.SIA for c in classes)
        lines.append(f"window_products_classified: {len(classes)}")
        lines.append(f"window_products_all_sia: {all_sia}")

    # positivity of one full-length word
    word_len = n * (spec.delays.tau_bar + 1)
    if len(mats) >= word_len and not spec.plan.termination_events:
        word = [augmented_mod.AugmentedMatrix(n, spec.delays.tau_bar, m)
                for m in mats[:word_len]]
        rep = analysis_mod.word_positivity_check(word)
        lines.append(f"word_length_checked: {word_len}")
        lines.append(f"first_rows_positive: {rep.first_rows_positive}")
        lines.append(f"min_first_rows_entry: {_fmt(rep.min_first_rows_entry)}")
        lines.append(f"c_min_optimistic: {_fmt(rep.bounds.optimistic)}")
        lines.append(f"c_min_conservative: {_fmt(rep.bounds.conservative)}")
        lines.append(f"meets_conservative_bound: {rep.meets_conservative_bound}")

    # error envelope from measured per-step e_max
    envelope_rows = []
    holds = True
    measurable_from = None
    sum_y = float(sum(spec.y0))
    sum_abs = float(sum(abs(v) for v in spec.y0))
    if sum_y != 0.0:
        product = None
        for k, m in enumerate(mats, start=1):
            product = m if product is None else m @ product
            first = product[:n, :]
            if (first <= 0).any():
                continue
            e_max = analysis_mod.observed_e_max(product, rows=n)
            if e_max >= 1.0:
                continue
            if measurable_from is None:
                measurable_from = k
            env = analysis_mod.error_envelope(sum_y, sum_abs, n, e_max)
            observed = float(deviations[k])
            envelope_rows.append((k, e_max, env.bound, observed))
            if observed > env.bound + 1e-12:
                holds = False
        lines.append(f"envelope_measurable_from: "
                     f"{measurable_from if measurable_from is not None else 'none'}")
        lines.append(f"envelope_points: {len(envelope_rows)}")
        lines.append(f"envelope_holds: {holds}")
    else:
        lines.append("envelope_measurable_from: none (initial values sum to zero)")

    report = "\n".join(lines) + "\n"
    print(report, end="")
    if out_dir:
        outp = Path(out_dir)
        _write(outp / "analysis.txt", report)
        _write(outp / "delta_decay.csv", _series_csv("delta", deltas))
        env_lines = ["k,e_max,bound,observed"]
        for k, e, b, o in envelope_rows:
            env_lines.append(f"{k},{_fmt(e)},{_fmt(b)},{_fmt(o)}")
        _write(outp / "envelope.csv", "\n".join(env_lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratiosim",
        description="Delay-robust ratio consensus: simulate, verify, analyze.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment and write trace files")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed-override", type=int, default=None)

    p_check = sub.add_parser("oracle-check",
                             help="compare the simulator against the augmented-matrix recursion")
    p_check.add_argument("--config", required=True)
    p_check.add_argument("--seed-override", type=int, default=None)

    p_an = sub.add_parser("analyze",
                          help="ergodicity/envelope report for a config (or summary of a trace CSV)")
    p_an.add_argument("--config", required=True,
                      help="config TOML, or a trace CSV for a reduced report")
    p_an.add_argument("--out", default=None)
    p_an.add_argument("--seed-override", type=int, default=None)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed_override)
        if args.command == "oracle-check":
            return cmd_oracle_check(args.config, args.seed_override)
        if args.command == "analyze":
            return cmd_analyze(args.config, args.out, args.seed_override)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
