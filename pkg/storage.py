"""CSV persistence for records, trajectories, plants, gains and run logs.

Floats are written with 17 significant digits so a write/read cycle is
bit-exact and repeated runs produce byte-identical files.
"""

import csv
import logging
import os

import numpy as np

from hankel import DataRecord
from lti import LtiSystem, Trajectory

logger = logging.getLogger(__name__)

TRAINING_LOG_HEADER = ("episode", "mean_cost", "sigma", "physical_samples", "generated_samples", "wall_ms")
REPORT_HEADER = (
    "method", "mode", "batch_q", "status", "final_train_cost", "final_test_cost",
    "physical_samples", "generated_samples", "wall_s",
)


def fmt(value):
    return format(float(value), ".17g")


def _writer(f):
    return csv.writer(f, lineterminator="\n")


def _signal_header(m, q, prefix=("k",)):
    return list(prefix) + [f"u_{i}" for i in range(m)] + [f"y_{i}" for i in range(q)]


def _widths(header):
    m = sum(1 for name in header if name.startswith("u_"))
    q = sum(1 for name in header if name.startswith("y_"))
    if m + q == 0:
        raise ValueError(f"header has no u_/y_ columns: {header}")
    return m, q


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = [row for row in csv.reader(f) if row]
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def write_signals(path, u_seq, y_seq):
    """Write ``k,u_0..,y_0..`` rows."""
    u_seq = np.asarray(u_seq, dtype=float)
    y_seq = np.asarray(y_seq, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(_signal_header(u_seq.shape[1], y_seq.shape[1]))
        for k in range(u_seq.shape[0]):
            w.writerow([k] + [fmt(v) for v in u_seq[k]] + [fmt(v) for v in y_seq[k]])


def read_signals(path):
    """Read a ``k,u_0..,y_0..`` file back as ``(u_seq, y_seq)`` arrays."""
    header, rows = _read_rows(path)
    m, q = _widths(header)
    data = np.array([[float(v) for v in row[1:]] for row in rows]).reshape(len(rows), m + q)
    return data[:, :m], data[:, m:]


def write_data_record(data, path):
    write_signals(path, data.u_d, data.y_d)
    logger.debug(f"Wrote {data.sample_count} samples to {path}")


def read_data_record(path):
    u_d, y_d = read_signals(path)
    return DataRecord(u_d, y_d)


def write_trajectory(traj, path):
    write_signals(path, traj.u_seq, traj.y_seq)


def read_trajectory(path):
    u_seq, y_seq = read_signals(path)
    return Trajectory(u_seq, y_seq)


def write_trajectory_batch(trajs, path):
    """Write ``traj,k,u_0..,y_0..`` rows, one block per trajectory."""
    if not trajs:
        raise ValueError("no trajectories to write")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(_signal_header(trajs[0].m, trajs[0].q, prefix=("traj", "k")))
        for i, traj in enumerate(trajs):
            for k in range(traj.t_len):
                w.writerow([i, k] + [fmt(v) for v in traj.u_seq[k]] + [fmt(v) for v in traj.y_seq[k]])


def read_trajectory_batch(path):
    header, rows = _read_rows(path)
    m, _ = _widths(header)
    grouped = {}
    for row in rows:
        grouped.setdefault(int(row[0]), []).append([float(v) for v in row[2:]])
    trajs = []
    for index in sorted(grouped):
        block = np.array(grouped[index])
        trajs.append(Trajectory(block[:, :m], block[:, m:]))
    return trajs


def write_matrix(matrix, path):
    """Plain CSV, one matrix row per line."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        for row in matrix:
            w.writerow([fmt(v) for v in row])


def read_matrix(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = [row for row in csv.reader(f) if row and not row[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path} holds no matrix rows")
    try:
        return np.array([[float(v) for v in row] for row in rows])
    except ValueError as e:
        raise ValueError(f"{path}: malformed matrix ({e})")


def write_system(sys, path):
    """Write a plant as ``name=``/``sampling_period=`` lines followed by [A], [B], [C] sections."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"name={sys.name}\n")
        f.write(f"sampling_period={fmt(sys.sampling_period)}\n")
        w = _writer(f)
        for label, matrix in (("A", sys.a_matrix), ("B", sys.b_matrix), ("C", sys.c_matrix)):
            f.write(f"[{label}]\n")
            for row in matrix:
                w.writerow([fmt(v) for v in row])


def read_system(path):
    """Read a plant file written by :func:`write_system`.

    Raises:
        ValueError: On a missing section or malformed row.
    """
    meta = {"name": os.path.splitext(os.path.basename(path))[0], "sampling_period": "1.0"}
    sections = {}
    current = None
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            if text.startswith("[") and text.endswith("]"):
                current = text[1:-1].strip().upper()
                sections[current] = []
            elif current is None:
                key, sep, value = text.partition("=")
                if not sep:
                    raise ValueError(f"{path} line {line_no}: expected key=value, got {text!r}")
                meta[key.strip()] = value.strip()
            else:
                try:
                    sections[current].append([float(v) for v in text.split(",")])
                except ValueError:
                    raise ValueError(f"{path} line {line_no}: malformed matrix row {text!r}")
    missing = [s for s in ("A", "B", "C") if not sections.get(s)]
    if missing:
        raise ValueError(f"{path}: missing matrix section(s) {missing}")
    return LtiSystem(np.array(sections["A"]), np.array(sections["B"]), np.array(sections["C"]),
                     name=meta["name"], sampling_period=float(meta["sampling_period"]))


def is_network_file(path):
    """True when the first non-comment line is a ``buses=`` feeder header."""
    with open(path, encoding="utf-8") as f:
        for raw in f:
            text = raw.strip()
            if text and not text.startswith("#"):
                return text.startswith("buses=")
    return False


def write_extended_state(chi, t0, m, q, path):
    """Header ``t0=..,m=..,q=..`` followed by the flattened window on one line."""
    chi = np.asarray(chi, dtype=float).reshape(-1)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"t0={t0},m={m},q={q}\n")
        _writer(f).writerow([fmt(v) for v in chi])


def read_extended_state(path):
    """Return ``(chi, t0, m, q)``."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        body = f.readline().strip()
    try:
        fields = dict(part.split("=", 1) for part in header.split(","))
        t0, m, q = int(fields["t0"]), int(fields["m"]), int(fields["q"])
    except (KeyError, ValueError):
        raise ValueError(f"{path}: expected header 't0=..,m=..,q=..', got {header!r}")
    chi = np.array([float(v) for v in body.split(",")]) if body else np.zeros(0)
    if chi.shape[0] != t0 * q + (t0 - 1) * m:
        raise ValueError(f"{path}: extended state has {chi.shape[0]} values, expected {t0 * q + (t0 - 1) * m}")
    return chi, t0, m, q


def write_training_log(log, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(TRAINING_LOG_HEADER)
        for rec in log.episodes:
            w.writerow([rec.episode, fmt(rec.mean_cost), fmt(rec.sigma), rec.physical_samples,
                        rec.generated_samples, f"{rec.wall_ms:.3f}"])


def read_training_log(path):
    """Return the rows of a TrainingLog CSV as a list of dicts with typed values."""
    header, rows = _read_rows(path)
    if tuple(header) != TRAINING_LOG_HEADER:
        raise ValueError(f"{path}: unexpected training log header {header}")
    out = []
    for row in rows:
        out.append({
            "episode": int(row[0]),
            "mean_cost": float(row[1]),
            "sigma": float(row[2]),
            "physical_samples": int(row[3]),
            "generated_samples": int(row[4]),
            "wall_ms": float(row[5]),
        })
    return out


def write_theta_history(thetas, path):
    """One row per episode: ``episode,theta_0_0,theta_0_1,..`` with θ flattened row-major."""
    if not thetas:
        raise ValueError("no gains to write")
    m, q = np.shape(thetas[0])
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(["episode"] + [f"theta_{i}_{j}" for i in range(m) for j in range(q)])
        for e, theta in enumerate(thetas):
            w.writerow([e] + [fmt(v) for v in np.ravel(theta)])


def read_theta_history(path):
    """Return the gains of :func:`write_theta_history` as a list of (m, q) arrays."""
    header, rows = _read_rows(path)
    names = header[1:]
    m = 1 + max(int(name.split("_")[1]) for name in names)
    q = len(names) // m
    return [np.array([float(v) for v in row[1:]]).reshape(m, q) for row in rows]


def write_comparison_report(report, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(REPORT_HEADER)
        for arm in report.arms:
            w.writerow([
                arm.method, arm.mode, arm.batch_q, arm.status,
                fmt(arm.final_train_cost), fmt(arm.final_test_cost),
                arm.physical_samples, arm.generated_samples, f"{arm.wall_s:.3f}",
            ])


def write_loss_curves(curves, path):
    """Whitespace-separated columns ``episode <method>...`` for gnuplot.

    Args:
        curves: Mapping of method name to per-episode mean costs. Shorter
            curves (diverged arms) are padded with NaN.
    """
    names = list(curves)
    length = max((len(c) for c in curves.values()), default=0)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# episode " + " ".join(names) + "\n")
        for e in range(length):
            values = [fmt(curves[n][e]) if e < len(curves[n]) else "NaN" for n in names]
            f.write(f"{e} " + " ".join(values) + "\n")


def write_offender(generated, oracle, path):
    """Per-entry comparison of a generated trajectory against its oracle rollout.

    Columns ``k,signal,index,generated,oracle,abs_error``; ``signal`` is ``u`` or ``y``.
    """
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(("k", "signal", "index", "generated", "oracle", "abs_error"))
        for k in range(generated.t_len):
            for signal, gen_row, ref_row in (("u", generated.u_seq[k], oracle.u_seq[k]),
                                             ("y", generated.y_seq[k], oracle.y_seq[k])):
                for i, (g, r) in enumerate(zip(gen_row, ref_row)):
                    w.writerow([k, signal, i, fmt(g), fmt(r), fmt(abs(g - r))])
