"""BER measurement, periodic evaluation protocol, working points and sweeps."""
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field
import io
import math

import numpy as np

from .channel import NumericInstabilityError
from .complexity import count_rvms
from .experiment import init_networks, simulate_sequence
from .signal_core import demap_pam4
from .training import hard_decide, train

CSV_HEADER = ("rop_dbm", "length_km", "topology", "loss_mode", "ber_median",
              "ber_best", "ber_worst", "rvms", "seed_group")
DIVERGED_BER = 0.5


class AlignmentFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class AlignmentResult:
    """``x_soft[m]`` estimates ``polarity * x_true[m - delay]``."""

    delay: int
    polarity: int
    peak: float


def _overlap(n_soft, n_true, delay):
    lo = max(0, delay)
    hi = min(n_soft, n_true + delay)
    return lo, hi


def align(x_soft, x_true, max_delay=64, min_overlap=1000, threshold=0.2):
    x_soft = np.asarray(x_soft, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    best = None
    for d in sorted(range(-max_delay, max_delay + 1), key=lambda d: (abs(d), d)):
        lo, hi = _overlap(x_soft.size, x_true.size, d)
        if hi - lo < min_overlap:
            continue
        a = x_soft[lo:hi] - x_soft[lo:hi].mean()
        b = x_true[lo - d:hi - d] - x_true[lo - d:hi - d].mean()
        den = math.sqrt(float(a @ a) * float(b @ b))
        c = float(a @ b) / den if den > 0 else 0.0
        if best is None or abs(c) > abs(best[1]):
            best = (d, c)
    if best is None:
        raise ValueError(f"no candidate delay leaves {min_overlap} overlapping symbols")
    d, c = best
    if abs(c) < threshold:
        raise AlignmentFailed(f"correlation peak {abs(c):.3f} below {threshold}")
    return AlignmentResult(d, 1 if c >= 0 else -1, abs(c))


def measure_ber(x_soft, x_true, alignment):
    x_soft = np.asarray(x_soft, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    lo, hi = _overlap(x_soft.size, x_true.size, alignment.delay)
    if hi <= lo:
        raise ValueError("no overlap between equalized and reference symbols")
    decided = hard_decide(alignment.polarity * x_soft[lo:hi])
    ref = x_true[lo - alignment.delay:hi - alignment.delay]
    return float(np.mean(demap_pam4(decided) != demap_pam4(ref)))


def ber_seq_mean(trace, last=10):
    if len(trace) < last:
        raise ValueError(f"need at least {last} periodic estimates, got {len(trace)}")
    # correctly rounded sum: a constant trace returns exactly that constant
    return math.fsum(float(v) for v in trace[-last:]) / last


def aggregate(values):
    """(median, best, worst) over per-sequence values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    return float(np.median(v)), float(v.min()), float(v.max())


class HoldoutEvaluator:
    """BER of an equalizer on the first ``n_test`` symbols of a cyclic sequence."""

    def __init__(self, y, x_true, n_test=50_000, max_delay=64, sps=2):
        self.y = np.asarray(y, dtype=np.float64)
        self.x_true = np.asarray(x_true, dtype=np.float64)
        self.n_sym = self.y.size // sps
        if n_test > self.n_sym:
            raise ValueError("test set larger than the sequence")
        self.n_test, self.max_delay, self.sps = n_test, max_delay, sps

    def __call__(self, iteration, equalizer):
        return self.evaluate(equalizer)[0]

    def evaluate(self, equalizer):
        """(BER, alignment or None); a failed alignment scores 0.5."""
        spec = equalizer.spec
        window = spec.advance * spec.window_steps if spec.kind == "gru" else spec.total_stride
        pad = self.max_delay + (spec.receptive_field + window) // self.sps + 8
        idx = np.arange(-pad * self.sps, (self.n_test + pad) * self.sps) % (self.n_sym * self.sps)
        x_soft = equalizer.apply(self.y[idx])
        nominal = np.arange(x_soft.size) - pad + equalizer.symbol_offset
        ref = self.x_true[nominal % self.n_sym]
        try:
            al = align(x_soft, ref, self.max_delay)
        except AlignmentFailed:
            return DIVERGED_BER, None
        keep = (nominal - al.delay >= 0) & (nominal - al.delay < self.n_test)
        if keep.sum() != self.n_test:
            raise RuntimeError("test set not fully covered; padding too small")
        ber = measure_ber(x_soft[keep], self.x_true[:self.n_test], AlignmentResult(0, al.polarity, al.peak))
        return ber, al


@dataclass
class BerReport:
    ber_seq_mean: float
    trace: list
    eval_iterations: list
    diverged: bool
    n_test_symbols: int
    rop: float = math.nan
    topology: str = ""
    mode: str = ""
    sequence: int = 0
    checksum: str = ""


def run_sequence(cfg, rop, index, topology, mode, data=None):
    """Simulate (unless ``data`` is given), train and evaluate one sequence."""
    data = data if data is not None else simulate_sequence(cfg, rop, index)
    ev = cfg.evaluation
    evaluator = HoldoutEvaluator(data.y, data.symbols, ev.test_symbols, ev.max_delay)
    eq, est = init_networks(cfg, topology, index)
    diverged = False
    try:
        if mode == "blind":
            _, _, tel = train(data.y, "blind", eq, est, cfg.training, monitor=evaluator)
        else:
            _, _, tel = train(data.y, "supervised", eq, None, cfg.training,
                              x_true=data.symbols, monitor=evaluator)
        trace = tel.ber
        if len(trace) < ev.last_estimates:
            raise ValueError(f"only {len(trace)} periodic estimates; need {ev.last_estimates}")
        value = ber_seq_mean(trace, ev.last_estimates)
        diverged = any(b == DIVERGED_BER for b in trace[-ev.last_estimates:])
    except NumericInstabilityError:
        trace, value, diverged = [], DIVERGED_BER, True
    return BerReport(value, trace, list(range(ev.eval_period, ev.eval_period * (len(trace) + 1), ev.eval_period)),
                     diverged, ev.test_symbols, rop, topology, mode, index, data.checksum())


@dataclass
class WorkingPoint:
    rop: float
    topology: str
    mode: str
    median: float
    best: float
    worst: float
    reports: list = field(default_factory=list)

    @property
    def diverged(self):
        return any(r.diverged for r in self.reports)


def run_working_point(cfg, rop, topology, mode, n_sequences=None, sequence_ids=None):
    ids = list(sequence_ids) if sequence_ids is not None else list(range(n_sequences or cfg.evaluation.n_sequences))
    if not ids:
        raise ValueError("n_sequences must be >= 1")
    reports = [run_sequence(cfg, rop, i, topology, mode) for i in ids]
    med, best, worst = aggregate([r.ber_seq_mean for r in reports])
    return WorkingPoint(rop, topology, mode, med, best, worst, reports)


def _sequence_task(args):
    cfg, rop, index, topologies, modes = args
    data = simulate_sequence(cfg, rop, index)
    return [(rop, t, m, index, run_sequence(cfg, rop, index, t, m, data=data))
            for t in topologies for m in modes]


def run_sweep(cfg, rops=None, topologies=None, modes=None, threads=1):
    """All (rop, topology, mode) working points; every sequence is simulated once and shared."""
    rops = tuple(cfg.rops if rops is None else rops)
    topologies = tuple(cfg.equalizer.topologies if topologies is None else topologies)
    modes = tuple(cfg.modes if modes is None else modes)
    if not (rops and topologies and modes):
        raise ValueError("rops, topologies and modes must be non-empty")
    tasks = [(cfg, rop, i, topologies, modes) for rop in rops for i in range(cfg.evaluation.n_sequences)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = [r for batch in pool.map(_sequence_task, tasks) for r in batch]
    else:
        results = [r for t in tasks for r in _sequence_task(t)]
    points = []
    for rop in rops:
        for t in topologies:
            for m in modes:
                reports = sorted((r for (rr, tt, mm, _, r) in results if (rr, tt, mm) == (rop, t, m)),
                                 key=lambda r: r.sequence)
                med, best, worst = aggregate([r.ber_seq_mean for r in reports])
                points.append(WorkingPoint(rop, t, m, med, best, worst, reports))
    return points


def sweep_rows(cfg, points):
    rows = []
    for p in points:
        rows.append({
            "rop_dbm": p.rop,
            "length_km": cfg.link.fiber.length_L,
            "topology": p.topology,
            "loss_mode": p.mode,
            "ber_median": p.median,
            "ber_best": p.best,
            "ber_worst": p.worst,
            "rvms": count_rvms(cfg.equalizer.spec(p.topology)).rvms,
            "seed_group": cfg.seed,
        })
    return rows


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in CSV_HEADER])
    return buf.getvalue()


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
_MARKERS = {"blind": "circle", "supervised": "square"}


def rows_to_svg(rows, width=640, height=420):
    """Log-scale BER versus ROP; one color per topology, one marker per loss mode."""
    m = dict(left=70, right=160, top=20, bottom=50)
    pw, ph = width - m["left"] - m["right"], height - m["top"] - m["bottom"]
    rops = sorted({r["rop_dbm"] for r in rows})
    bers = [max(r["ber_median"], 1e-6) for r in rows]
    lo_exp = math.floor(math.log10(min(bers)))
    hi_exp = max(math.ceil(math.log10(max(bers))), lo_exp + 1)
    x0, x1 = rops[0], rops[-1] if rops[-1] > rops[0] else rops[0] + 1

    def sx(v):
        return m["left"] + (v - x0) / (x1 - x0) * pw

    def sy(b):
        b = max(b, 1e-6)
        return m["top"] + (hi_exp - math.log10(b)) / (hi_exp - lo_exp) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{m["left"]}" y="{m["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for e in range(lo_exp, hi_exp + 1):
        y = sy(10.0**e)
        out.append(f'<line x1="{m["left"]}" y1="{y:.2f}" x2="{m["left"] + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{m["left"] - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    for r in rops:
        out.append(f'<text x="{sx(r):.2f}" y="{m["top"] + ph + 16}" text-anchor="middle">{r:g}</text>')
    out.append(f'<text x="{m["left"] + pw / 2}" y="{height - 10}" text-anchor="middle">ROP (dBm)</text>')
    out.append(f'<text x="16" y="{m["top"] + ph / 2}" transform="rotate(-90 16 {m["top"] + ph / 2})" '
               f'text-anchor="middle">median BER</text>')
    series = []
    for r in rows:
        key = (r["topology"], r["loss_mode"])
        if key not in series:
            series.append(key)
    topologies = list(dict.fromkeys(t for t, _ in series))
    for n, (topo, mode) in enumerate(series):
        color = _COLORS[topologies.index(topo) % len(_COLORS)]
        pts = sorted((r["rop_dbm"], r["ber_median"]) for r in rows
                     if (r["topology"], r["loss_mode"]) == (topo, mode))
        dash = "" if mode == "blind" else ' stroke-dasharray="5,3"'
        path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}"{dash}/>')
        for a, b in pts:
            if _MARKERS.get(mode) == "square":
                out.append(f'<rect x="{sx(a) - 3:.2f}" y="{sy(b) - 3:.2f}" width="6" height="6" fill="{color}"/>')
            else:
                out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3.5" fill="{color}"/>')
        ly = m["top"] + 14 + 16 * n
        lx = m["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}"{dash}/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{topo} ({mode})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
