"""Hidden-state, cell-state and neuron coverage over state traces.

Counts accumulate over a whole test run: every processed state adds to the
denominator. A separate per-position map, with the batch dimension folded
out, records which structural positions ``(t, l, e)`` have ever been
covered; target selection works from that map.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from rnntest import kernels
from rnntest.errors import ConfigurationError, CoverageMismatchError

METRICS = ("HS_C", "CS_C", "NC")


def equal_edges(num_sections):
    edges = np.linspace(-1.0, 1.0, num_sections + 1)
    edges[0], edges[-1] = -1.0, 1.0
    return tuple(float(v) for v in edges)


@dataclass(frozen=True)
class CoverageConfig:
    metric: str = "HS_C"
    num_sections: int = 5
    section_edges: Optional[Tuple[float, ...]] = None
    nc_threshold: float = 0.5

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown coverage metric {self.metric!r}")
        if self.num_sections < 1:
            raise ConfigurationError("num_sections must be positive")
        if self.section_edges is None:
            object.__setattr__(self, "section_edges", equal_edges(self.num_sections))
        edges = np.asarray(self.section_edges, dtype=np.float64)
        if len(edges) != self.num_sections + 1:
            raise ConfigurationError("section_edges needs num_sections + 1 values")
        if edges[0] != -1.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
            raise ConfigurationError("section_edges must ascend strictly from -1 to +1")

    @property
    def edges(self):
        return np.asarray(self.section_edges, dtype=np.float64)


class StateRef(NamedTuple):
    t: int
    l: int
    b: int
    e: int
    which: str  # "hidden" or "cell"


def _valid_rows(trace):
    """(T, L, B) mask broadcast from the (T, B) step mask."""
    t, l, b, _ = trace.hidden.shape
    return np.broadcast_to(trace.valid_mask()[:, None, :], (t, l, b))


@dataclass
class CoverageTracker:
    config: CoverageConfig
    covered_count: int = 0
    total_count: int = 0
    section_counts: np.ndarray = None
    position_map: np.ndarray = None

    def __post_init__(self):
        if self.section_counts is None:
            self.section_counts = np.zeros(self.config.num_sections, dtype=np.int64)
        if self.position_map is None:
            trailing = (self.config.num_sections,) if self.config.metric == "CS_C" else ()
            self.position_map = np.zeros((0, 0, 0) + trailing, dtype=bool)

    @property
    def metric(self):
        return self.config.metric

    def _grow(self, steps, layers, size):
        cur = self.position_map.shape
        shape = (max(cur[0], steps), max(cur[1], layers), max(cur[2], size)) + cur[3:]
        if shape != cur:
            grown = np.zeros(shape, dtype=bool)
            grown[:cur[0], :cur[1], :cur[2]] = self.position_map
            self.position_map = grown

    def covered_at(self, steps, layers, size):
        """Position map cropped/padded to the given extents."""
        self._grow(steps, layers, size)
        return self.position_map[:steps, :layers, :size]

    def update(self, trace):
        return UPDATERS[self.metric](self, trace)

    def ratio(self):
        return self.covered_count / self.total_count if self.total_count else 0.0

    def section_ratios(self):
        if self.total_count == 0:
            return [0.0] * self.config.num_sections
        return [int(c) / self.total_count for c in self.section_counts]

    def positions_covered(self):
        if self.metric == "CS_C":
            return int(self.position_map.any(axis=-1).sum())
        return int(self.position_map.sum())

    def fully_cover(self, steps, layers, size):
        """Mark every position up to the given extents as covered."""
        self._grow(steps, layers, size)
        self.position_map[:steps, :layers, :size] = True

    def merge(self, other):
        """Combined tracker; order of merging does not matter."""
        if other.config != self.config:
            raise ConfigurationError("cannot merge trackers with different configs")
        out = CoverageTracker(self.config, self.covered_count + other.covered_count,
                              self.total_count + other.total_count,
                              self.section_counts + other.section_counts)
        a, b = self.position_map, other.position_map
        out._grow(*(max(x, y) for x, y in zip(a.shape[:3], b.shape[:3])))
        out.position_map[:a.shape[0], :a.shape[1], :a.shape[2]] |= a
        out.position_map[:b.shape[0], :b.shape[1], :b.shape[2]] |= b
        return out

    def copy(self):
        return CoverageTracker(self.config, self.covered_count, self.total_count,
                               self.section_counts.copy(), self.position_map.copy())

    def report(self):
        rec = {
            "metric": self.metric,
            "ratio": self.ratio(),
            "covered": int(self.covered_count),
            "total": int(self.total_count),
            "positions_covered": self.positions_covered(),
        }
        if self.metric == "CS_C":
            rec["section_ratios"] = self.section_ratios()
            rec["section_counts"] = [int(c) for c in self.section_counts]
        return rec


def hs_update(tracker, trace):
    """A hidden state is covered when it equals the maximum of its vector."""
    t, l, b, e = trace.hidden.shape
    valid = _valid_rows(trace)
    covered = kernels.max_mask(trace.hidden.reshape(-1, e), valid.reshape(-1)).reshape(t, l, b, e)
    tracker.covered_count += int(covered.sum())
    tracker.total_count += int(valid.sum()) * e
    tracker.covered_at(t, l, e)[...] |= covered.any(axis=2)
    return tracker


def cs_update(tracker, trace):
    """Assign each valid cell state to the section holding tanh(c).

    ``covered_count`` counts states landing in either boundary section.
    """
    if trace.cell is None:
        raise CoverageMismatchError("CS_C needs cell states (LSTM model)")
    t, l, b, e = trace.cell.shape
    sec = tracker.config.num_sections
    valid = _valid_rows(trace)
    idx = np.full((t, l, b, e), -1, dtype=np.int64)
    u = np.tanh(trace.cell[valid])
    idx[valid] = kernels.section_index(u.reshape(-1), tracker.config.edges).reshape(u.shape)
    counts = np.bincount(idx[valid].reshape(-1), minlength=sec)
    tracker.section_counts = tracker.section_counts + counts
    tracker.total_count += int(counts.sum())
    boundary = counts[0] + (counts[-1] if sec > 1 else 0)
    tracker.covered_count += int(boundary)
    pos = tracker.covered_at(t, l, e)
    for s in range(sec):
        pos[..., s] |= (idx == s).any(axis=2)
    return tracker


def nc_update(tracker, trace):
    """A hidden state is covered when it exceeds the neuron threshold."""
    t, l, b, e = trace.hidden.shape
    valid = _valid_rows(trace)
    covered = (trace.hidden > tracker.config.nc_threshold) & valid[..., None]
    tracker.covered_count += int(covered.sum())
    tracker.total_count += int(valid.sum()) * e
    tracker.covered_at(t, l, e)[...] |= covered.any(axis=2)
    return tracker


UPDATERS = {"HS_C": hs_update, "CS_C": cs_update, "NC": nc_update}


def target_gaps(trace, tracker, metric=None):
    """Gap-to-coverage for every candidate state, +inf where not a candidate.

    Returns ``(gaps, which)`` with ``gaps`` shaped (T, L, B, E).
    """
    metric = metric or tracker.metric
    if metric != tracker.metric:
        raise ConfigurationError(f"tracker measures {tracker.metric}, not {metric}")
    cfg = tracker.config
    t, l, b, e = trace.hidden.shape
    valid = _valid_rows(trace)[..., None]
    if metric == "CS_C":
        if trace.cell is None:
            raise CoverageMismatchError("CS_C guidance needs cell states")
        # only the upper boundary section: the objective can only push values up
        upper = cfg.edges[-2]
        u = np.tanh(trace.cell)
        uncovered = ~tracker.covered_at(t, l, e)[..., -1]
        gaps = upper - u
        ok = valid & uncovered[:, :, None, :] & (u < upper)
        return np.where(ok, gaps, np.inf), "cell"
    uncovered = ~tracker.covered_at(t, l, e)[:, :, None, :]
    h = trace.hidden
    if metric == "HS_C":
        gaps = h.max(axis=3, keepdims=True) - h
        ok = valid & uncovered
    elif metric == "NC":
        gaps = cfg.nc_threshold - h
        ok = valid & uncovered & (gaps > 0)
    else:
        raise ConfigurationError(f"unknown coverage metric {metric!r}")
    return np.where(ok, gaps, np.inf), "hidden"


def select_targets(trace, tracker, m, metric=None):
    """The ``m`` uncovered states closest to becoming covered.

    Ties are broken by ascending ``(t, l, b, e)``. An empty list means
    nothing is left to cover.
    """
    if m < 1:
        raise ConfigurationError("m must be at least 1")
    gaps, which = target_gaps(trace, tracker, metric)
    flat = gaps.reshape(-1)
    order = np.argsort(flat, kind="stable")
    n = min(m, int(np.isfinite(flat).sum()))
    picked = order[:n]
    shape = gaps.shape
    return [StateRef(*(int(i) for i in np.unravel_index(k, shape)), which) for k in picked]
