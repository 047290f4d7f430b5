"""CSV ingestion, volume differentiation, phase segmentation and splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import savgol_filter

from .core import DEFAULT_SAMPLE_RATE, Dataset, Phase, Trajectory
from .errors import InsufficientTrajectories, InvariantError, ParseError, SchemaError, TooShort
from .io import atomic_write_text

CANONICAL_COLUMNS = ("t", "v", "vdot", "vddot", "p")
REQUIRED_COLUMNS = ("t", "v", "p")
CYCLE_COLUMN = "cycle"
SG_WINDOW = 5
SG_ORDER = 2
# |v_dot| below this (mm^3/s) continues the current phase
PHASE_BAND = 1.0


@dataclass(frozen=True)
class CsvSchema:
    columns: tuple
    has_vdot: bool
    has_vddot: bool

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        missing = [c for c in REQUIRED_COLUMNS if c not in cols]
        if missing:
            raise SchemaError(f"CSV schema is missing required column(s): {', '.join(missing)}")
        if self.has_vdot and "vdot" not in cols:
            raise SchemaError("schema declares vdot but has no vdot column")
        if self.has_vddot and "vddot" not in cols:
            raise SchemaError("schema declares vddot but has no vddot column")

    @classmethod
    def from_header(cls, header: Sequence[str]) -> "CsvSchema":
        cols = tuple(h.strip() for h in header)
        return cls(columns=cols, has_vdot="vdot" in cols, has_vddot="vddot" in cols)

    @classmethod
    def canonical(cls) -> "CsvSchema":
        return cls(columns=CANONICAL_COLUMNS, has_vdot=True, has_vddot=True)


def load_csv(
    path,
    schema: Optional[CsvSchema] = None,
    *,
    sample_rate_hz: Optional[float] = None,
    derivatives: str = "file",
    chamber_id: int = 0,
) -> Dataset:
    """Read a header-row CSV into a :class:`Dataset`.

    Columns are matched by name and may come in any order.  An optional
    ``cycle`` column splits rows into one trajectory per consecutive run of
    equal ids; without it the file is a single trajectory.

    ``derivatives`` is ``"file"`` (use vdot/vddot columns when present) or
    ``"differentiate"`` (always recompute them from v).  The sample rate is
    inferred from the median time step when not given.
    """
    if derivatives not in ("file", "differentiate"):
        raise ValueError(f"derivatives must be 'file' or 'differentiate', not {derivatives!r}")
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        file_schema = CsvSchema.from_header(header)
        if schema is not None:
            missing = [c for c in schema.columns if c not in file_schema.columns]
            if missing:
                raise SchemaError(f"{path.name}: missing column(s) {', '.join(missing)}")
        use = schema or file_schema
        wanted = [c for c in use.columns if c in CANONICAL_COLUMNS or c == CYCLE_COLUMN]
        if CYCLE_COLUMN in file_schema.columns and CYCLE_COLUMN not in wanted:
            wanted.append(CYCLE_COLUMN)
        index = {c: file_schema.columns.index(c) for c in wanted}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(file_schema.columns):
                raise ParseError(f"expected {len(file_schema.columns)} fields, got {len(row)}", line=lineno)
            try:
                rows.append([float(row[index[c]]) for c in wanted])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
    if not rows:
        raise ParseError("no data rows", line=2)
    data = np.array(rows, dtype=np.float64)
    col = {c: data[:, i] for i, c in enumerate(wanted)}

    t = col["t"]
    dt = np.diff(t)
    if np.any(dt <= 0):
        # rows are 1-based data rows (header excluded)
        raise InvariantError("time is not strictly increasing", row=int(np.flatnonzero(dt <= 0)[0]) + 2)
    if sample_rate_hz is None:
        sample_rate_hz = 1.0 / float(np.median(dt)) if dt.size else DEFAULT_SAMPLE_RATE

    if CYCLE_COLUMN in col:
        cyc = col[CYCLE_COLUMN]
        cuts = np.flatnonzero(np.diff(cyc) != 0) + 1
        bounds = list(zip(np.r_[0, cuts], np.r_[cuts, len(t)]))
    else:
        bounds = [(0, len(t))]

    use_file = derivatives == "file" and "vdot" in col and "vddot" in col
    trajectories = []
    for idx, (a, b) in enumerate(bounds):
        cycle_id = int(col[CYCLE_COLUMN][a]) if CYCLE_COLUMN in col else idx
        tr = Trajectory(
            t=t[a:b], v=col["v"][a:b], p=col["p"][a:b],
            v_dot=col["vdot"][a:b] if use_file else None,
            v_ddot=col["vddot"][a:b] if use_file else None,
            sample_rate_hz=sample_rate_hz, cycle_id=cycle_id,
        )
        if not use_file:
            tr = differentiate(tr)
        trajectories.append(tr)
    return Dataset(trajectories=tuple(trajectories), chamber_id=chamber_id, metadata={"source": path.name})


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(ds: Dataset, path) -> None:
    """Write ``ds`` in the canonical column order plus a ``cycle`` column."""
    lines = [",".join(CANONICAL_COLUMNS + (CYCLE_COLUMN,))]
    for tr in ds.trajectories:
        if not tr.has_derivatives:
            tr = differentiate(tr)
        cid = str(int(tr.cycle_id))
        for row in zip(tr.t, tr.v, tr.v_dot, tr.v_ddot, tr.p):
            lines.append(",".join(map(_fmt, row)) + "," + cid)
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def smoothed_derivative(y: np.ndarray, dt: float, order: int = 1) -> np.ndarray:
    """5-point quadratic Savitzky-Golay derivative; edges use the edge-window fit."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < SG_WINDOW:
        raise TooShort(f"need at least {SG_WINDOW} samples to differentiate, got {y.size}")
    return savgol_filter(y, SG_WINDOW, SG_ORDER, deriv=order, delta=dt, mode="interp")


def differentiate(traj: Trajectory) -> Trajectory:
    dt = 1.0 / traj.sample_rate_hz
    return traj.replace(
        v_dot=smoothed_derivative(traj.v, dt, 1),
        v_ddot=smoothed_derivative(traj.v, dt, 2),
    )


def segment_cycles(traj: Trajectory, band: float = PHASE_BAND) -> list[Trajectory]:
    """Split a trajectory at sign changes of v_dot.

    Samples with ``|v_dot| < band`` continue whichever phase is current, so a
    dwell sticks to the segment before it; leading in-band samples join the
    first signed segment.  A trajectory with no sample outside the band comes
    back whole as a single Mixed segment.

    Segment ``cycle_id`` counts full inflation/deflation cycles starting from
    the parent's id: it increments each time a new Inflation segment begins.
    """
    if traj.v_dot is None:
        raise InvariantError("segment_cycles needs v_dot")
    vd = traj.v_dot
    signs = np.where(vd >= band, 1, np.where(vd <= -band, -1, 0))
    active = np.flatnonzero(signs)
    if active.size == 0:
        return [traj.replace(phase=Phase.MIXED)]

    starts = [0]
    phases = [signs[active[0]]]
    current = phases[0]
    for i in active[1:]:
        if signs[i] != current:
            current = signs[i]
            starts.append(int(i))
            phases.append(current)
    starts.append(len(traj))

    out = []
    cycle = traj.cycle_id
    for s, (a, b) in enumerate(zip(starts[:-1], starts[1:])):
        phase = Phase.INFLATION if phases[s] > 0 else Phase.DEFLATION
        if phase is Phase.INFLATION and s > 0:
            cycle += 1
        out.append(traj.slice(a, b, phase=phase, cycle_id=cycle))
    return out


def split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random split at trajectory granularity.

    The first part gets ``floor(ratio * n)`` trajectories, clamped to
    ``[1, n - 1]``; both parts keep the original trajectory order.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(ds)
    if n < 2:
        raise InsufficientTrajectories(f"need at least 2 trajectories to split, got {n}")
    n_first = min(max(math.floor(ratio * n + 1e-9), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    first = sorted(order[:n_first].tolist())
    second = sorted(order[n_first:].tolist())
    pick = lambda idx: ds.replace(trajectories=tuple(ds.trajectories[i] for i in idx))  # noqa: E731
    return pick(first), pick(second)
