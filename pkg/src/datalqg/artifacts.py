"""Versioned, self-describing text artifacts for the pipeline stages.

Every file starts with a format line and a header of key/value pairs
(including dimensions and a provenance hash of the config), followed by
labeled numeric blocks. Floats are written with repr (shortest round-trip),
so write -> read -> write is byte-identical. All writes are atomic
(temp file + rename).
"""

import csv
import io
import os
import tempfile

import numpy as np

from .dynamics import Trajectory
from .errors import ArtifactError
from .feedback import FeedbackPolicy, KalmanGains
from .sysid import LtvRom

TRAJECTORY_FORMAT = "nominal-trajectory v1"
ROM_FORMAT = "ltv-rom v1"
POLICY_FORMAT = "feedback-policy v1"
SUMMARY_FORMAT = "pipeline-summary v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_matrix(out, name: str, m: np.ndarray):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    out.write(f"{name} {m.shape[0]} {m.shape[1]}\n")
    for row in m:
        out.write(" ".join(_fmt(v) for v in row) + "\n")


def atomic_write(path: str, text: str):
    """Write text to path atomically (temp file in the same directory + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


class _Reader:
    """Line reader that tracks position for parse diagnostics."""

    def __init__(self, path: str):
        self.path = path
        try:
            with open(path) as f:
                self.lines = f.read().splitlines()
        except OSError as exc:
            raise ArtifactError(f"cannot read artifact: {exc.strerror}", path=path)
        self.pos = 0

    def error(self, message: str):
        raise ArtifactError(message, path=self.path, line=self.pos)

    def next_line(self) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line.strip():
                return line
        self.error("unexpected end of file")

    def expect_format(self, fmt: str):
        line = self.next_line()
        if line.strip() != f"# format: {fmt}":
            self.error(f"expected '# format: {fmt}', found {line.strip()!r}")

    def header(self) -> dict:
        """Consume '# key: value' lines until the first non-comment line."""
        out = {}
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            if not line.startswith("#"):
                break
            self.pos += 1
            body = line[1:].strip()
            if ":" not in body:
                self.error(f"malformed header line {line!r}")
            key, value = body.split(":", 1)
            out[key.strip()] = value.strip()
        return out

    def matrix(self, name: str) -> np.ndarray:
        line = self.next_line().split()
        if len(line) != 3 or line[0] != name:
            self.error(f"expected block '{name} <rows> <cols>', found {' '.join(line)!r}")
        try:
            rows, cols = int(line[1]), int(line[2])
        except ValueError:
            self.error(f"malformed dimensions in block {name!r}")
        out = np.empty((rows, cols))
        for i in range(rows):
            parts = self.next_line().split()
            if len(parts) != cols:
                self.error(f"expected {cols} values in block {name!r}, found {len(parts)}")
            try:
                out[i] = [float(v) for v in parts]
            except ValueError:
                self.error(f"non-numeric value in block {name!r}")
        return out


def _require(header: dict, key: str, reader: _Reader, conv=str):
    if key not in header:
        reader.error(f"missing header field {key!r}")
    try:
        return conv(header[key])
    except ValueError:
        reader.error(f"malformed header field {key!r} = {header[key]!r}")


def write_trajectory(path: str, traj: Trajectory, benchmark: str, dt: float,
                     config_hash: str, converged: bool = True,
                     rollouts: int = 0, cost: float = float("nan")):
    out = io.StringIO()
    out.write(f"# format: {TRAJECTORY_FORMAT}\n")
    out.write(f"# benchmark: {benchmark}\n")
    out.write(f"# dt: {_fmt(dt)}\n")
    out.write(f"# n_x: {traj.states.shape[1]}\n")
    out.write(f"# n_u: {traj.controls.shape[1]}\n")
    out.write(f"# horizon: {traj.horizon}\n")
    out.write(f"# cost: {_fmt(cost)}\n")
    out.write(f"# converged: {str(converged).lower()}\n")
    out.write(f"# rollouts: {rollouts}\n")
    out.write(f"# config_hash: {config_hash}\n")
    _write_matrix(out, "states", traj.states)
    _write_matrix(out, "controls", traj.controls)
    atomic_write(path, out.getvalue())


def read_trajectory(path: str):
    """Returns (Trajectory, header dict)."""
    r = _Reader(path)
    r.expect_format(TRAJECTORY_FORMAT)
    header = r.header()
    n_x = _require(header, "n_x", r, int)
    n_u = _require(header, "n_u", r, int)
    horizon = _require(header, "horizon", r, int)
    states = r.matrix("states")
    controls = r.matrix("controls")
    if states.shape != (horizon + 1, n_x):
        r.error(f"states shape {states.shape} does not match header "
                f"({horizon + 1}, {n_x})")
    if controls.shape != (horizon, n_u):
        r.error(f"controls shape {controls.shape} does not match header "
                f"({horizon}, {n_u})")
    return Trajectory(states=states, controls=controls), header


def write_rom(path: str, rom: LtvRom, benchmark: str, config_hash: str,
              rollouts: int = 0):
    out = io.StringIO()
    out.write(f"# format: {ROM_FORMAT}\n")
    out.write(f"# benchmark: {benchmark}\n")
    out.write(f"# horizon: {rom.horizon}\n")
    out.write(f"# order: {rom.order}\n")
    out.write(f"# n_y: {rom.n_y}\n")
    out.write(f"# n_u: {rom.n_u}\n")
    out.write(f"# window: {rom.k_lo} {rom.k_hi}\n")
    out.write(f"# p: {rom.p}\n")
    out.write(f"# q: {rom.q}\n")
    out.write(f"# rollouts: {rollouts}\n")
    out.write(f"# config_hash: {config_hash}\n")
    for i, k in enumerate(range(rom.k_lo, rom.k_hi + 1)):
        _write_matrix(out, f"A_{k}", rom.a_seq[i])
    for i, k in enumerate(range(rom.k_lo - 1, rom.k_hi + 1)):
        _write_matrix(out, f"B_{k}", rom.b_seq[i])
    for i, k in enumerate(range(rom.k_lo, rom.k_hi + 2)):
        _write_matrix(out, f"C_{k}", rom.c_seq[i])
    _write_matrix(out, "singular_values", rom.singular_values)
    atomic_write(path, out.getvalue())


def read_rom(path: str):
    """Returns (LtvRom, header dict)."""
    r = _Reader(path)
    r.expect_format(ROM_FORMAT)
    header = r.header()
    horizon = _require(header, "horizon", r, int)
    order = _require(header, "order", r, int)
    n_y = _require(header, "n_y", r, int)
    n_u = _require(header, "n_u", r, int)
    window = _require(header, "window", r).split()
    if len(window) != 2:
        r.error("window header must hold two indices")
    k_lo, k_hi = int(window[0]), int(window[1])
    p = _require(header, "p", r, int)
    q = _require(header, "q", r, int)
    n_steps = k_hi - k_lo + 1
    a_seq = np.empty((n_steps, order, order))
    b_seq = np.empty((n_steps + 1, order, n_u))
    c_seq = np.empty((n_steps + 1, n_y, order))
    for i, k in enumerate(range(k_lo, k_hi + 1)):
        a_seq[i] = r.matrix(f"A_{k}")
    for i, k in enumerate(range(k_lo - 1, k_hi + 1)):
        b_seq[i] = r.matrix(f"B_{k}")
    for i, k in enumerate(range(k_lo, k_hi + 2)):
        c_seq[i] = r.matrix(f"C_{k}")
    sv = r.matrix("singular_values")
    rom = LtvRom(order=order, horizon=horizon, n_y=n_y, n_u=n_u,
                 k_lo=k_lo, k_hi=k_hi, a_seq=a_seq, b_seq=b_seq, c_seq=c_seq,
                 singular_values=sv, p=p, q=q)
    return rom, header


def write_policy(path: str, policy: FeedbackPolicy, benchmark: str,
                 config_hash: str):
    out = io.StringIO()
    N = policy.horizon
    rom = policy.rom
    out.write(f"# format: {POLICY_FORMAT}\n")
    out.write(f"# benchmark: {benchmark}\n")
    out.write(f"# horizon: {N}\n")
    out.write(f"# order: {rom.order}\n")
    out.write(f"# n_x: {policy.x_nominal.shape[1]}\n")
    out.write(f"# n_u: {policy.u_nominal.shape[1]}\n")
    out.write(f"# n_y: {rom.n_y}\n")
    out.write(f"# window: {rom.k_lo} {rom.k_hi}\n")
    out.write(f"# p: {rom.p}\n")
    out.write(f"# q: {rom.q}\n")
    out.write(f"# config_hash: {config_hash}\n")
    _write_matrix(out, "x_nominal", policy.x_nominal)
    _write_matrix(out, "u_nominal", policy.u_nominal)
    for k in range(N):
        _write_matrix(out, f"L_{k}", policy.gains[k])
    for k in range(N):
        _write_matrix(out, f"K_{k}", policy.kalman.gains[k])
    for k in range(N + 1):
        _write_matrix(out, f"P_{k}", policy.kalman.cov_predicted[k])
    for i, k in enumerate(range(rom.k_lo, rom.k_hi + 1)):
        _write_matrix(out, f"A_{k}", rom.a_seq[i])
    for i, k in enumerate(range(rom.k_lo - 1, rom.k_hi + 1)):
        _write_matrix(out, f"B_{k}", rom.b_seq[i])
    for i, k in enumerate(range(rom.k_lo, rom.k_hi + 2)):
        _write_matrix(out, f"C_{k}", rom.c_seq[i])
    _write_matrix(out, "singular_values", rom.singular_values)
    atomic_write(path, out.getvalue())


def read_policy(path: str):
    """Returns (FeedbackPolicy, header dict)."""
    r = _Reader(path)
    r.expect_format(POLICY_FORMAT)
    header = r.header()
    N = _require(header, "horizon", r, int)
    order = _require(header, "order", r, int)
    n_x = _require(header, "n_x", r, int)
    n_u = _require(header, "n_u", r, int)
    n_y = _require(header, "n_y", r, int)
    window = _require(header, "window", r).split()
    k_lo, k_hi = int(window[0]), int(window[1])
    p = _require(header, "p", r, int)
    q = _require(header, "q", r, int)
    x_nominal = r.matrix("x_nominal")
    u_nominal = r.matrix("u_nominal")
    if x_nominal.shape != (N + 1, n_x) or u_nominal.shape != (N, n_u):
        r.error("nominal trajectory blocks do not match the header dimensions")
    gains = np.empty((N, n_u, order))
    for k in range(N):
        gains[k] = r.matrix(f"L_{k}")
    kgains = np.empty((N, order, n_y))
    for k in range(N):
        kgains[k] = r.matrix(f"K_{k}")
    cov_pred = np.empty((N + 1, order, order))
    for k in range(N + 1):
        cov_pred[k] = r.matrix(f"P_{k}")
    n_steps = k_hi - k_lo + 1
    a_seq = np.empty((n_steps, order, order))
    b_seq = np.empty((n_steps + 1, order, n_u))
    c_seq = np.empty((n_steps + 1, n_y, order))
    for i, k in enumerate(range(k_lo, k_hi + 1)):
        a_seq[i] = r.matrix(f"A_{k}")
    for i, k in enumerate(range(k_lo - 1, k_hi + 1)):
        b_seq[i] = r.matrix(f"B_{k}")
    for i, k in enumerate(range(k_lo, k_hi + 2)):
        c_seq[i] = r.matrix(f"C_{k}")
    sv = r.matrix("singular_values")
    rom = LtvRom(order=order, horizon=N, n_y=n_y, n_u=n_u, k_lo=k_lo,
                 k_hi=k_hi, a_seq=a_seq, b_seq=b_seq, c_seq=c_seq,
                 singular_values=sv, p=p, q=q)
    kalman = KalmanGains(gains=kgains, cov_predicted=cov_pred,
                         cov_filtered=np.zeros((N, order, order)))
    policy = FeedbackPolicy(u_nominal=u_nominal, x_nominal=x_nominal,
                            gains=gains, kalman=kalman, rom=rom)
    return policy, header


def write_csv(path: str, fieldnames, rows):
    """CSV with a header row; floats via repr for byte-stable reruns."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    atomic_write(path, out.getvalue())
