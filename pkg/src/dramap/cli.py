"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 I/O or parse error, 4 single latency
distribution (closed page), 5 insufficient data or no quorum, 6 more
measurements needed (probe-request file written).
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys

import click

from . import bank_solver, mapping, metrics, oracles, pipeline, row_solver, simulator, traces
from .bounds import BoundParams, bank_sample_bound, row_sample_bound
from .errors import (
    InfeasibleConstraint,
    InsufficientData,
    NoBimodalDistribution,
    NoRowBasis,
    OracleUnusable,
    PairNotInTrace,
    SpecError,
    TraceFormatError,
    WidthMismatch,
)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NO_BIMODAL = 4
EXIT_INSUFFICIENT = 5
EXIT_NEEDS_DATA = 6


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, pipeline.StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, (NoBimodalDistribution, OracleUnusable)):
        return EXIT_NO_BIMODAL
    if isinstance(exc, PairNotInTrace):
        return EXIT_NEEDS_DATA
    if isinstance(exc, (InsufficientData, NoRowBasis, InfeasibleConstraint)):
        return EXIT_INSUFFICIENT
    if isinstance(exc, (OSError, TraceFormatError, SpecError, WidthMismatch, json.JSONDecodeError)):
        return EXIT_IO
    return 1


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.exceptions.ClickException:
            raise
        except (pipeline.StageError, NoBimodalDistribution, OracleUnusable, PairNotInTrace,
                InsufficientData, NoRowBasis, InfeasibleConstraint, OSError, TraceFormatError,
                SpecError, WidthMismatch, json.JSONDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exit_code_for(exc))
    return wrapper


def _load_config(ctx, param, value):
    if value is None:
        return None
    try:
        with open(value) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: config {value}: {exc}", err=True)
        ctx.exit(EXIT_IO)
    if not isinstance(doc, dict):
        raise click.BadParameter("config must be a key/value document", param=param)
    # keys are subcommand names holding option maps; option names use underscores
    ctx.default_map = {cmd: opts for cmd, opts in doc.items() if isinstance(opts, dict)}
    return value


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", type=click.Path(dir_okay=False), callback=_load_config, is_eager=True,
              expose_value=False, help="JSON file of per-subcommand defaults; flags take precedence.")
@click.option("-v", "--verbose", count=True, help="More progress output on stderr.")
@click.pass_context
def cli(ctx, verbose):
    """Recover DRAM bank and row parity masks from timed address pairs."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


# -- shared option groups ----------------------------------------------------------


def spec_options(required=True):
    def deco(fn):
        fn = click.option("--spec", "spec_path", type=click.Path(dir_okay=False), help="Mapping spec JSON file.")(fn)
        fn = click.option("--preset", help="Built-in platform preset (see `presets`).")(fn)
        return fn
    return deco


def resolve_spec(preset, spec_path, what="--preset or --spec", required=True):
    if preset and spec_path:
        raise click.UsageError(f"give only one of {what}")
    if preset:
        return mapping.load_preset(preset)
    if spec_path:
        return mapping.load_spec(spec_path)
    if required:
        raise click.UsageError(f"one of {what} is required")
    return None


def model_options(fn):
    fn = click.option("--closed-page", is_flag=True, help="Every access draws from the slow mode.")(fn)
    fn = click.option("--high-std", type=float, default=5.0, show_default=True)(fn)
    fn = click.option("--high-mean", type=float, default=230.0, show_default=True)(fn)
    fn = click.option("--low-std", type=float, default=3.0, show_default=True)(fn)
    fn = click.option("--low-mean", type=float, default=175.0, show_default=True)(fn)
    fn = click.option("--theta", type=float, default=0.0, show_default=True,
                      help="Probability a latency comes from the wrong mode.")(fn)
    return fn


def make_model(theta, low_mean, low_std, high_mean, high_std, closed_page):
    try:
        return simulator.LatencyModel(low_mean, low_std, high_mean, high_std, theta, closed_page)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


def search_options(fn):
    fn = click.option("--node-budget", type=click.IntRange(1), default=200_000, show_default=True)(fn)
    fn = click.option("--base-count", type=click.IntRange(1), default=9, show_default=True)(fn)
    fn = click.option("--trials", type=click.IntRange(1), default=15, show_default=True,
                      help="Timed repetitions per oracle query (odd).")(fn)
    fn = click.option("--weight-max", type=click.IntRange(1), default=6, show_default=True)(fn)
    fn = click.option("--combo-max", type=click.IntRange(1), default=3, show_default=True)(fn)
    return fn


def make_search(combo_max, weight_max, trials, base_count, node_budget, alignment, seed):
    try:
        return row_solver.SearchConfig(combo_max, weight_max, trials, base_count, node_budget, alignment, seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


def write_json(doc, path):
    text = json.dumps(doc, indent=2) + "\n"
    if path in (None, "-"):
        click.echo(text, nl=False)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def dump_histogram(latencies, path):
    lat = latencies[latencies >= 0]
    cycles, counts = traces.latency_histogram(lat)
    lines = ["# cycles count"] + [f"{c} {n}" for c, n in zip(cycles.tolist(), counts.tolist())]
    text = "\n".join(lines) + "\n"
    if path == "-":
        click.echo(text, nl=False)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def info(ctx, msg):
    if ctx.obj.get("verbose"):
        click.echo(msg, err=True)


# -- subcommands -------------------------------------------------------------------


@cli.command()
@spec_options()
@model_options
@click.option("--pairs", type=click.IntRange(1), default=5000, show_default=True)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--alignment", type=click.IntRange(0), default=6, show_default=True,
              help="Low address bits forced to zero.")
@click.option("--constraint", type=click.Choice(["any-pair", "same-bank"]), default="any-pair", show_default=True)
@click.option("--bank-report", type=click.Path(dir_okay=False),
              help="Build same-bank pairs from the masks in this solve-banks report.")
@click.option("--with-labels", is_flag=True, help="Also write ground-truth C/N labels.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@click.pass_context
@handle_errors
def simulate(ctx, preset, spec_path, theta, low_mean, low_std, high_mean, high_std, closed_page,
             pairs, seed, alignment, constraint, bank_report, with_labels, output):
    """Write a simulated latency trace."""
    spec = resolve_spec(preset, spec_path)
    model = make_model(theta, low_mean, low_std, high_mean, high_std, closed_page)
    try:
        cfg = simulator.GenConfig(pairs, seed, alignment, constraint.replace("-", "_"), spec.address_bits)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    masks = None
    if bank_report:
        masks = _read_bank_report(bank_report).masks
    tr = simulator.generate_trace(spec, model, cfg, bank_masks=masks)
    truth = simulator.true_labels(spec, tr)
    if with_labels:
        tr = traces.Trace(tr.width, tr.addr_a, tr.addr_b, tr.latency, truth)
    traces.write_trace(tr, output)
    write_json({
        "output": output,
        "pairs": len(tr),
        "conflict_fraction": float(truth.mean()),
        "sha256": file_digest(output),
    }, "-")


@cli.command()
@click.argument("trace_path", type=click.Path(dir_okay=False))
@click.option("--min-separation", type=float, default=traces.DEFAULT_MIN_SEPARATION, show_default=True)
@click.option("--min-class-fraction", type=float, default=traces.DEFAULT_MIN_CLASS_FRACTION, show_default=True)
@click.option("--report-histogram", type=click.Path(dir_okay=False), help="Two-column histogram table ('-' for stdout).")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write the classified trace here.")
@handle_errors
def threshold(trace_path, min_separation, min_class_fraction, report_histogram, output):
    """Detect the conflict latency threshold of a trace."""
    tr = traces.read_trace(trace_path)
    if report_histogram:
        dump_histogram(tr.latency, report_histogram)
    rep = traces.find_threshold(tr.latency, min_separation, min_class_fraction)
    if output:
        if output == trace_path:
            raise click.UsageError("output must differ from the input trace")
        traces.write_trace(traces.classify(tr, rep.threshold, relabel=True), output)
    write_json({
        "threshold": rep.threshold,
        "low_mode": rep.low_mode,
        "high_mode": rep.high_mode,
        "separation_score": rep.separation_score,
        "low_fraction": rep.low_fraction,
        "samples": rep.samples,
    }, "-")


def oracle_options(fn):
    fn = click.option("--oracle-theta", type=float, default=0.0, show_default=True,
                      help="Mislabel rate of the simulator oracle.")(fn)
    fn = click.option("--oracle-spec", type=click.Path(dir_okay=False), help="Simulator oracle from a spec file.")(fn)
    fn = click.option("--oracle-preset", help="Simulator oracle from a preset.")(fn)
    return fn


def make_sim_oracle(oracle_preset, oracle_spec, oracle_theta, trials, seed):
    spec = resolve_spec(oracle_preset, oracle_spec, "--oracle-preset or --oracle-spec", required=False)
    if spec is None:
        return None
    if trials % 2 == 0:
        raise click.UsageError("--trials must be odd")
    return oracles.SimulatorOracle(spec, make_model(oracle_theta, 175.0, 3.0, 230.0, 5.0, False), trials, seed)


@cli.command("solve-banks")
@click.argument("trace_path", type=click.Path(dir_okay=False))
@click.option("--threshold", "threshold_value", type=float,
              help="Use this latency threshold instead of detecting one.")
@click.option("--min-separation", type=float, default=traces.DEFAULT_MIN_SEPARATION, show_default=True)
@click.option("--q", type=click.IntRange(3), default=5, show_default=True, help="Subsample count (odd).")
@click.option("--quorum", type=click.FloatRange(0.5, 1.0), default=0.6, show_default=True)
@click.option("--no-vote", is_flag=True, help="Solve the full difference matrix once.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--trials", type=click.IntRange(1), default=15, show_default=True)
@oracle_options
@click.option("--report-histogram", type=click.Path(dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Report file (default stdout).")
@click.pass_context
@handle_errors
def solve_banks(ctx, trace_path, threshold_value, min_separation, q, quorum, no_vote, seed, trials,
                oracle_preset, oracle_spec, oracle_theta, report_histogram, output):
    """Recover bank/channel masks from a random-pair trace."""
    if q % 2 == 0:
        raise click.UsageError("--q must be odd")
    tr = traces.read_trace(trace_path)
    if report_histogram:
        dump_histogram(tr.latency, report_histogram)
    oracle = make_sim_oracle(oracle_preset, oracle_spec, oracle_theta, trials, seed)
    phase = pipeline.bank_phase(tr, oracle, q, quorum, seed, threshold_value, min_separation, vote=not no_vote)
    doc = bank_solver.bank_report(phase.recovery)
    doc["threshold"] = phase.threshold_value
    if phase.threshold is not None:
        doc["separation_score"] = phase.threshold.separation_score
    doc["conflicts_labeled"] = phase.conflicts_labeled
    doc["conflicts_confirmed"] = phase.conflicts_confirmed
    write_json(doc, output)
    if output:
        click.echo(f"k={phase.recovery.k} masks={' '.join(doc['bank_masks'])} "
                   f"explain_fraction={phase.recovery.explain_fraction}")


def _read_bank_report(path) -> bank_solver.BankRecovery:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        n = doc["address_bits"]
        masks = [int(m, 16) for m in doc["bank_masks"]]
        dark = list(doc["undetermined_bits"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"bank report {path}: missing or malformed field ({exc})") from None
    from .gf2 import BitMatrix
    return bank_solver.BankRecovery(BitMatrix(n, tuple(masks)), dark, len(masks),
                                    doc.get("rank_D", 0), doc.get("pairs_used", 0),
                                    None, doc.get("explain_fraction"))


@cli.command("solve-rows")
@click.argument("trace_path", type=click.Path(dir_okay=False))
@click.option("--bank-report", type=click.Path(dir_okay=False), required=True)
@click.option("--threshold", "threshold_value", type=float,
              help="Latency threshold (default: the one stored in the bank report).")
@search_options
@click.option("--alignment", type=click.IntRange(0), default=6, show_default=True)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@oracle_options
@click.option("--replay", type=click.Path(dir_okay=False), help="Answer flip tests from this measured trace.")
@click.option("--replay-threshold", type=float, help="Threshold for unlabeled replay records.")
@click.option("--probe-out", type=click.Path(dir_okay=False), default="probe-request.trace", show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False))
@handle_errors
def solve_rows(trace_path, bank_report, threshold_value, combo_max, weight_max, trials, base_count,
               node_budget, alignment, seed, oracle_preset, oracle_spec, oracle_theta, replay,
               replay_threshold, probe_out, output):
    """Recover row masks from a same-bank trace."""
    bank = _read_bank_report(bank_report)
    if threshold_value is None:
        with open(bank_report) as fh:
            threshold_value = json.load(fh).get("threshold")
    tr = traces.read_trace(trace_path)
    if threshold_value is None and not tr.has_label.all():
        raise click.UsageError("no --threshold given and the bank report stores none")
    cfg = make_search(combo_max, weight_max, trials, base_count, node_budget, alignment, seed)
    oracle = make_sim_oracle(oracle_preset, oracle_spec, oracle_theta, trials, seed)
    confirm = oracle is not None
    if replay:
        if oracle is not None:
            raise click.UsageError("use either a simulator oracle or --replay")
        oracle = oracles.ReplayOracle(traces.read_trace(replay), replay_threshold)
    try:
        rec = pipeline.row_phase(tr, bank, threshold_value, oracle, cfg, confirm=confirm)
    except PairNotInTrace as exc:
        traces.write_probe_request(exc.pairs, tr.width, probe_out, trials)
        click.echo(f"error: {exc}; probe request written to {probe_out}", err=True)
        sys.exit(EXIT_NEEDS_DATA)
    write_json(row_solver.row_report(rec), output)
    if output:
        click.echo(f"k'={rec.k_prime} weight={rec.total_weight} masks={' '.join(rec.row_basis.hex_rows())}")


@cli.command()
@click.option("--n", "n", type=int, required=True, help="Address bits.")
@click.option("--k", "k", type=int, required=True, help="Bank mask count.")
@click.option("--k-prime", type=int, help="Row mask count; selects the row bound.")
@click.option("--theta", type=float, default=0.0, show_default=True)
@click.option("--epsilon", type=float, default=0.01, show_default=True)
def bound(n, k, k_prime, theta, epsilon):
    """Print the sample bound m (bank) or m' (row) as one JSON line."""
    try:
        if k_prime is None:
            m = bank_sample_bound(BoundParams(n, k, 0, theta, epsilon))
            doc = {"m": m, "n": n, "k": k, "theta": theta, "epsilon": epsilon}
        else:
            m = row_sample_bound(BoundParams(n, k, k_prime, theta, epsilon))
            doc = {"m_prime": m, "n": n, "k": k, "k_prime": k_prime, "theta": theta, "epsilon": epsilon}
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    click.echo(json.dumps(doc))


@cli.command()
@click.option("--recovered", type=click.Path(dir_okay=False), help="Recovered mapping spec JSON.")
@click.option("--bank-report", type=click.Path(dir_okay=False))
@click.option("--row-report", type=click.Path(dir_okay=False))
@click.option("--pairs-trace", type=click.Path(dir_okay=False), help="Trace with ground-truth labels.")
@click.option("--truth-preset", help="Simulate fresh labeled pairs from this preset.")
@click.option("--truth-spec", type=click.Path(dir_okay=False))
@click.option("--pairs", type=click.IntRange(1), default=10_000, show_default=True)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--alignment", type=click.IntRange(0), default=6, show_default=True)
@click.option("--theta", type=float, default=0.0, show_default=True)
@click.option("--noisy-labels", is_flag=True, help="Label fresh pairs by thresholding noisy latencies.")
@click.option("-o", "--output", type=click.Path(dir_okay=False))
@handle_errors
def evaluate(recovered, bank_report, row_report, pairs_trace, truth_preset, truth_spec, pairs, seed,
             alignment, theta, noisy_labels, output):
    """Precision/recall of a recovered mapping on labeled pairs."""
    if recovered:
        rec_spec = mapping.load_spec(recovered)
    elif bank_report and row_report:
        bank = _read_bank_report(bank_report)
        with open(row_report) as fh:
            rows = [int(m, 16) for m in json.load(fh)["row_masks"]]
        rec_spec = mapping.make_spec(bank.width, bank.masks, rows, "recovered")
    else:
        raise click.UsageError("give --recovered or both --bank-report and --row-report")
    truth = resolve_spec(truth_preset, truth_spec, "--truth-preset or --truth-spec", required=False)
    observed = None
    if bank_report:
        observed = _read_bank_report(bank_report).observed_mask
    if pairs_trace:
        labeled = traces.read_trace(pairs_trace)
    elif truth is not None:
        model = make_model(theta, 175.0, 3.0, 230.0, 5.0, False)
        labeled = pipeline.fresh_pairs(truth, model, pairs, seed, alignment, noisy_labels)
    else:
        raise click.UsageError("give --pairs-trace or a truth spec to simulate fresh pairs")
    rep = metrics.evaluate(rec_spec, labeled, truth, observed)
    write_json(rep.to_dict(), output)
    click.echo(metrics.summary_table(rep), err=output is None)


@cli.command()
@spec_options()
@model_options
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--pairs", type=click.IntRange(1), help="Phase-1 pairs (default 4x the bank bound).")
@click.option("--row-pairs", type=click.IntRange(1), help="Phase-2 pairs (default 2x the row bound).")
@click.option("--alignment", type=click.IntRange(0), default=6, show_default=True)
@click.option("--q", type=click.IntRange(3), default=5, show_default=True)
@click.option("--quorum", type=click.FloatRange(0.5, 1.0), default=0.6, show_default=True)
@click.option("--confirm-trials", type=click.IntRange(0), default=15, show_default=True,
              help="Re-time labeled pairs through the oracle (0 disables).")
@click.option("--threshold", "threshold_value", type=float, help="Skip threshold detection.")
@click.option("--eval-pairs", type=click.IntRange(1), default=10_000, show_default=True)
@click.option("--eval-noisy", is_flag=True, help="Evaluate against thresholded noisy labels.")
@search_options
@click.option("-o", "--output", type=click.Path(dir_okay=False))
@handle_errors
def e2e(preset, spec_path, theta, low_mean, low_std, high_mean, high_std, closed_page, seed, pairs,
        row_pairs, alignment, q, quorum, confirm_trials, threshold_value, eval_pairs, eval_noisy,
        combo_max, weight_max, trials, base_count, node_budget, output):
    """Simulate and solve both phases, then evaluate on fresh pairs."""
    spec = resolve_spec(preset, spec_path)
    model = make_model(theta, low_mean, low_std, high_mean, high_std, closed_page)
    cfg = make_search(combo_max, weight_max, trials, base_count, node_budget, alignment, seed)
    if confirm_trials and confirm_trials % 2 == 0:
        raise click.UsageError("--confirm-trials must be odd")
    doc = pipeline.run_e2e(spec, model, seed, pairs, row_pairs, alignment, q, quorum, confirm_trials,
                           threshold_value, eval_pairs, eval_noisy, cfg)
    write_json(doc, output)
    ev = doc["evaluation"]
    click.echo(
        f"bank_match={doc['bank_match']} basis_match={ev['basis_match']} "
        f"precision={ev['precision']} recall={ev['recall']}",
        err=output is None,
    )


@cli.command()
@click.option("--show", help="Print one preset as a mapping spec document.")
@handle_errors
def presets(show):
    """List the built-in platform presets."""
    if show:
        click.echo(mapping.serialize_spec(mapping.load_preset(show)), nl=False)
        return
    for name in mapping.preset_names():
        s = mapping.load_preset(name)
        click.echo(f"{name:<16} n={s.address_bits:<3} k={s.k:<3} k'={s.k_prime:<3} {s.label}")


def main(argv=None):
    cli.main(args=argv, prog_name="dramap")


if __name__ == "__main__":
    main()
