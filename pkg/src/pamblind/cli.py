"""Command-line front end.

Exit codes: 0 success, 1 I/O or verification failure, 2 configuration or
argument error, 3 numeric failure, 4 sweep finished with failed points.
"""
from dataclasses import dataclass, replace
import functools
import json
import logging
import os
import sys

import click

from .channel import NumericInstabilityError
from .complexity import catalog_reports, measured_rvms
from .config import dump_config, load_config
from .evaluation import (
    DIVERGED_BER,
    HoldoutEvaluator,
    ber_seq_mean,
    rows_to_csv,
    rows_to_svg,
    run_sweep,
    sweep_rows,
)
from .experiment import ConfigError, init_networks, simulate_sequence
from .formats import (
    FormatError,
    read_waveform,
    read_weights,
    write_log,
    write_manifest,
    write_trace,
    write_waveform,
    write_weights,
)
from .networks import EQUALIZERS, Network
from .signal_core import SampledWaveform
from .training import MODES, train

EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 1, 2, 3, 4

log = logging.getLogger("pamblind")


@dataclass
class _State:
    cfg: object
    out: str
    threads: int


def _guarded(fn):
    """Map library errors to the documented exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericInstabilityError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (ConfigError, FormatError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            sys.exit(EXIT_IO)
    return wrapper


def _split(text, cast=str):
    return tuple(cast(v.strip()) for v in text.split(",") if v.strip()) if text else ()


def _outdir(state, *parts):
    path = os.path.join(state.out, *parts)
    os.makedirs(path, exist_ok=True)
    return path


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="YAML experiment config (PAMBLIND_CONFIG overrides this path).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Override the master seed.")
@click.option("--out", type=click.Path(file_okay=False), help="Override the output directory.")
@click.option("--threads", type=click.IntRange(1), default=1, show_default=True,
              help="Worker processes for sweeps.")
@click.option("--verbose", "-v", count=True, help="More logging (repeatable).")
@click.pass_context
def main(ctx, config_path, seed, out, threads, verbose):
    """Simulate PAM4 links and train blind or supervised equalizers."""
    logging.basicConfig(level=max(logging.DEBUG, logging.WARNING - 10 * verbose), stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.with_(seed=seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        ctx.exit(EXIT_CONFIG)
    ctx.obj = _State(cfg, out or cfg.output.directory, threads)


# ---------------------------------------------------------------- simulate

@main.command()
@click.option("--rop", "rops", type=float, multiple=True, help="ROP in dBm (repeatable); default from config.")
@click.option("--sequences", type=click.IntRange(1), help="Sequences per ROP; default from config.")
@click.pass_obj
@_guarded
def simulate(state, rops, sequences):
    """Write transmitted symbols, drive and received 2-sps waveforms."""
    cfg = state.cfg
    rops = rops or cfg.rops
    n = sequences or cfg.evaluation.n_sequences
    target = _outdir(state, "simulate")
    written = []
    cfg_path = os.path.join(target, "config.yaml")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    written.append(cfg_path)
    for rop in rops:
        for i in range(n):
            try:
                data = simulate_sequence(cfg, rop, i)
            except ValueError as exc:
                raise ValueError(f"simulate ROP {rop:+g} dBm, sequence {i}: {exc}") from None
            stem = os.path.join(target, f"rop{rop:+.2f}_seq{i:03d}")
            items = {
                "tx_symbols": SampledWaveform(data.symbols, cfg.signal.baud, 1),
                "tx_drive": data.drive,
                "rx": data.received.replace(data.y),
            }
            for kind, wf in items.items():
                path = f"{stem}_{kind}.pbw"
                write_waveform(path, wf)
                written.append(path)
            log.info("simulated ROP %+g dBm sequence %d", rop, i)
    manifest = write_manifest(target, written)
    click.echo(f"wrote {len(written)} artifacts; manifest {manifest}")


# ---------------------------------------------------------------- inputs

def _load_inputs(cfg, waveform, truth, simulate_flag, rop, sequence):
    if simulate_flag:
        data = simulate_sequence(cfg, cfg.rops[0] if rop is None else rop, sequence)
        return data.y, data.symbols
    if waveform is None:
        raise ValueError("give --waveform PATH or --simulate")
    wf = read_waveform(waveform)
    if wf.is_complex or abs(wf.sps - 2) > 1e-9:
        raise ValueError(f"{waveform}: expected a real 2-sps received waveform")
    x = read_waveform(truth).values if truth else None
    return wf.values, x


def _evaluator(cfg, y, x):
    if x is None:
        return None
    n_test = min(cfg.evaluation.test_symbols, y.size // 2)
    return HoldoutEvaluator(y, x, n_test, cfg.evaluation.max_delay)


_input_options = [
    click.option("--waveform", type=click.Path(exists=True, dir_okay=False), help="Received 2-sps waveform file."),
    click.option("--truth", type=click.Path(exists=True, dir_okay=False), help="Transmitted symbol file."),
    click.option("--simulate", "simulate_flag", is_flag=True, help="Simulate the input from the config."),
    click.option("--rop", type=float, help="ROP for --simulate (default: first configured)."),
    click.option("--sequence", type=click.IntRange(0), default=0, show_default=True,
                 help="Sequence index for --simulate."),
    click.option("--topology", help="Equalizer name (default: first configured)."),
]


def _with_inputs(fn):
    for opt in reversed(_input_options):
        fn = opt(fn)
    return fn


# ---------------------------------------------------------------- train

@main.command("train")
@_with_inputs
@click.option("--mode", type=click.Choice(MODES), help="Loss mode (default: first configured).")
@click.option("--iterations", type=click.IntRange(1), help="Override the iteration count.")
@click.pass_obj
@_guarded
def train_cmd(state, waveform, truth, simulate_flag, rop, sequence, topology, mode, iterations):
    """Train one equalizer; write weights, telemetry and a summary."""
    cfg = state.cfg
    mode = mode or cfg.modes[0]
    topology = topology or cfg.equalizer.topologies[0]
    y, x = _load_inputs(cfg, waveform, truth, simulate_flag, rop, sequence)
    if mode == "supervised" and x is None:
        raise ValueError("supervised training needs transmitted symbols (--truth or --simulate)")
    tcfg = cfg.training if iterations is None else replace(cfg.training, iterations=iterations)
    eq, est = init_networks(cfg, topology, sequence)
    evaluator = _evaluator(cfg, y, x)

    def monitor(i, net):
        ber = evaluator(i, net)
        log.info("iteration %d: BER %.3e", i, ber)
        return ber

    _, _, tel = train(y, mode, eq, est if mode == "blind" else None, tcfg,
                      x_true=x if mode == "supervised" else None,
                      monitor=monitor if evaluator is not None else None)

    target = _outdir(state, "train", f"{topology}_{mode}")
    paths = {name: os.path.join(target, name) for name in
             ("equalizer.pbwt", "telemetry.log", "trace.pbtr", "summary.json")}
    write_weights(paths["equalizer.pbwt"], eq)
    if mode == "blind":
        paths["estimator.pbwt"] = os.path.join(target, "estimator.pbwt")
        write_weights(paths["estimator.pbwt"], est)
    write_log(paths["telemetry.log"], tel)
    write_trace(paths["trace.pbtr"], tel)
    seq_mean = ber_seq_mean(tel.ber, cfg.evaluation.last_estimates) \
        if len(tel.ber) >= cfg.evaluation.last_estimates else None
    summary = {
        "topology": topology, "mode": mode, "iterations": len(tel),
        "loss": tel.loss[-1], "commitment": tel.commitment[-1], "reconstruction": tel.reconstruction[-1],
        "ber_seq_mean": seq_mean, "n_params": eq.n_params,
    }
    with open(paths["summary.json"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, allow_nan=True)
        fh.write("\n")
    write_manifest(target, paths.values())
    ber_text = "n/a" if seq_mean is None else f"{seq_mean:.4e}"
    click.echo(f"{topology} {mode}: iterations {len(tel)} loss {tel.loss[-1]:.4e} "
               f"commitment {tel.commitment[-1]:.4e} reconstruction {tel.reconstruction[-1]:.4e} "
               f"ber_seq_mean {ber_text}")


# ---------------------------------------------------------------- evaluate

@main.command()
@_with_inputs
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Equalizer weight file.")
@click.pass_obj
@_guarded
def evaluate(state, waveform, truth, simulate_flag, rop, sequence, topology, weights):
    """BER of stored equalizer weights on a received sequence."""
    cfg = state.cfg
    topology = topology or cfg.equalizer.topologies[0]
    spec = cfg.equalizer.spec(topology)
    net = Network(spec, read_weights(weights, spec))
    y, x = _load_inputs(cfg, waveform, truth, simulate_flag, rop, sequence)
    if x is None:
        raise ValueError("evaluation needs transmitted symbols (--truth or --simulate)")
    ev = _evaluator(cfg, y, x)
    ber, al = ev.evaluate(net)
    result = {"topology": topology, "ber": ber, "n_test_symbols": ev.n_test,
              "delay": None if al is None else al.delay,
              "polarity": None if al is None else al.polarity,
              "peak": None if al is None else al.peak,
              "aligned": al is not None}
    click.echo(json.dumps(result))
    if al is None:
        sys.exit(EXIT_PARTIAL)


# ---------------------------------------------------------------- sweep

@main.command()
@click.option("--rops", help="Comma-separated ROPs in dBm; default from config.")
@click.option("--topologies", help="Comma-separated equalizer names; default from config.")
@click.option("--modes", help="Comma-separated loss modes; default from config.")
@click.option("--sequences", type=click.IntRange(1), help="Sequences per working point.")
@click.pass_obj
@_guarded
def sweep(state, rops, topologies, modes, sequences):
    """Median BER over sequences for every (ROP, topology, mode)."""
    cfg = state.cfg
    if sequences:
        cfg = cfg.with_(evaluation=replace(cfg.evaluation, n_sequences=sequences))
    modes = _split(modes)
    bad = set(modes) - set(MODES)
    if bad:
        raise ValueError(f"unknown modes {sorted(bad)}")
    topologies = _split(topologies)
    for t in topologies:
        _check_topology(cfg, t)
    points = run_sweep(cfg, _split(rops, float) or None, topologies or None, modes or None, threads=state.threads)
    rows = sweep_rows(cfg, points)
    target = _outdir(state, "sweep")
    written = []
    formats = set(cfg.output.formats) | {"csv"}
    if "csv" in formats:
        written.append(os.path.join(target, "sweep.csv"))
        with open(written[-1], "w", encoding="utf-8", newline="") as fh:
            fh.write(rows_to_csv(rows))
    if "svg" in formats:
        written.append(os.path.join(target, "sweep.svg"))
        with open(written[-1], "w", encoding="utf-8") as fh:
            fh.write(rows_to_svg(rows))
    if "json" in formats:
        written.append(os.path.join(target, "sweep.json"))
        doc = [{**row, "diverged": p.diverged,
                "sequences": [{"index": r.sequence, "ber_seq_mean": r.ber_seq_mean,
                               "diverged": r.diverged, "y_sha256": r.checksum} for r in p.reports]}
               for row, p in zip(rows, points)]
        with open(written[-1], "w", encoding="utf-8") as fh:
            json.dump({"seed": cfg.seed, "points": doc}, fh, indent=1)
            fh.write("\n")
    write_manifest(target, written)
    failed = [p for p in points if p.diverged]
    for p in points:
        flag = "  DIVERGED" if p.diverged else ""
        click.echo(f"{p.rop:+7.2f} dBm  {p.topology:<14} {p.mode:<10} median {p.median:.3e}{flag}")
    if failed:
        click.echo(f"{len(failed)} of {len(points)} working points had sequences scored {DIVERGED_BER}",
                   err=True)
        sys.exit(EXIT_PARTIAL)


def _check_topology(cfg, name):
    known = set(EQUALIZERS) | {c.name for c in cfg.equalizer.custom}
    if name not in known:
        raise ValueError(f"unknown equalizer {name!r}; choose from {sorted(known)}")


# ---------------------------------------------------------------- reports

@main.command("rvm-report")
@click.option("--csv", "as_csv", is_flag=True, help="Machine-readable CSV output.")
@click.option("--verify", is_flag=True, help="Compare against the instrumented multiply count.")
def rvm_report(as_csv, verify):
    """Parameter count and multiplications per received sample of every catalog network."""
    header = ["name", "role", "kind", "params", "rvms", "rvms_exact"] + (["measured", "match"] if verify else [])
    rows, ok = [], True
    for spec, rep, n_params in catalog_reports():
        row = [spec.name, spec.role, spec.kind, n_params, rep.rvms, repr(rep.rvms_exact)]
        if verify:
            measured = measured_rvms(spec, n_symbols=2000)
            match = abs(measured - rep.rvms_exact) <= 1e-9 * max(1.0, rep.rvms_exact)
            ok &= match
            row += [repr(measured), "yes" if match else "NO"]
        rows.append(row)
    if as_csv:
        click.echo(",".join(header))
        for row in rows:
            click.echo(",".join(str(v) for v in row))
    else:
        widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(len(header))]
        for r in [header] + rows:
            click.echo("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
    if not ok:
        sys.exit(EXIT_IO)


@main.command()
def verify():
    """Run the built-in oracle checks."""
    from .selfcheck import run_all
    results = run_all()
    for r in results:
        click.echo(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<18} {r.detail}")
    if not all(r.passed for r in results):
        sys.exit(EXIT_IO)


if __name__ == "__main__":
    main()
