"""Plain-text trace files.

``trace.csv`` has one row per (chain, iteration, component) so that chains
with varying ``K`` need no ragged rows; ``labels.csv`` has one row per
(chain, iteration) with 1-based labels.  Floats are written with ``repr``
and therefore read back exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .analysis import Trace
from .model import CovMixtureState, MixtureState

FORMAT_VERSION = 1


class TraceFormatError(ValueError):
    """Trace files missing, truncated or written by another format version."""


def _fmt(x):
    return repr(float(x))


def trace_header(kind, p=0):
    head = ["chain", "iteration", "k", "rho", "nu", "component"]
    if kind == "nocov":
        return head + ["w", "mu", "sigma2"]
    return head + ["mu", "sigma2"] + [f"gamma_{j + 1}" for j in range(p)] + [f"beta_{j + 1}" for j in range(p)]


def write_traces(directory, traces, p=0):
    """Write ``trace.csv`` and ``labels.csv`` for a list of per-chain traces."""
    directory = Path(directory)
    kind = traces[0].kind
    with open(directory / "trace.csv", "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(trace_header(kind, p))
        for c, tr in enumerate(traces):
            for it, s in zip(tr.iterations, tr.states):
                lead = [c, it, s.k, _fmt(s.rho), _fmt(s.nu)]
                for k in range(s.k):
                    if kind == "nocov":
                        row = [_fmt(s.w[k]), _fmt(s.mu[k]), _fmt(s.sigma2[k])]
                    else:
                        row = [_fmt(s.mu[k]), _fmt(s.sigma2[k])]
                        row += [_fmt(v) for v in s.gamma[k]] + [_fmt(v) for v in s.beta[k]]
                    out.writerow(lead + [k + 1] + row)
    with open(directory / "labels.csv", "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        n = traces[0].n
        out.writerow(["chain", "iteration"] + [f"s_{i + 1}" for i in range(n)])
        for c, tr in enumerate(traces):
            for it, s in zip(tr.iterations, tr.states):
                out.writerow([c, it] + (s.labels + 1).tolist())


def read_traces(directory, kind, n, p=0):
    """Inverse of :func:`write_traces`; returns one :class:`Trace` per chain."""
    directory = Path(directory)
    try:
        with open(directory / "trace.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        with open(directory / "labels.csv", newline="") as fh:
            lab_rows = list(csv.reader(fh))
    except OSError as exc:
        raise TraceFormatError(f"cannot read trace files in {directory}: {exc.strerror}") from exc
    if not rows or rows[0] != trace_header(kind, p):
        raise TraceFormatError("trace.csv header does not match the recorded model")
    if not lab_rows or len(lab_rows[0]) != n + 2:
        raise TraceFormatError("labels.csv does not match the data size")
    labels = {}
    for r in lab_rows[1:]:
        labels[(int(r[0]), int(r[1]))] = np.array(r[2:], dtype=np.int64) - 1

    traces = {}
    pending = {}
    for r in rows[1:]:
        key = (int(r[0]), int(r[1]))
        pending.setdefault(key, []).append(r)
    for (c, it), comp_rows in pending.items():
        k = int(comp_rows[0][2])
        if len(comp_rows) != k:
            raise TraceFormatError(f"chain {c} iteration {it}: expected {k} component rows")
        rho, nu = float(comp_rows[0][3]), float(comp_rows[0][4])
        vals = np.array([[float(v) for v in cr[6:]] for cr in comp_rows]).reshape(k, -1)
        if (c, it) not in labels:
            raise TraceFormatError(f"labels missing for chain {c} iteration {it}")
        lab = labels[(c, it)]
        if kind == "nocov":
            state = MixtureState(vals[:, 1].copy(), vals[:, 2].copy(), vals[:, 0].copy(), lab, rho, nu)
        else:
            state = CovMixtureState(
                vals[:, 0].copy(), vals[:, 1].copy(), vals[:, 2:2 + p].copy(), vals[:, 2 + p:].copy(),
                lab, rho, nu,
            )
        tr = traces.setdefault(c, Trace(n=n, kind=kind))
        tr.append(state, it)
    return [traces[c] for c in sorted(traces)]
