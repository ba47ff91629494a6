"""Gait recording preprocessing and device transparency metrics.

Recordings are cut into strides at left heel strike, time-normalized for
ensemble statistics, cleaned with an interquartile-range outlier rule, and
compared between walking with and without the device. Perturbed strides
are paired with the most similar unperturbed stride and averaged into the
data an identification run needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from .dynamics import Trajectory, lowpass
from .model import JOINTS, segment_angles
from .tables import read_table, write_table

RECORDING_COLUMNS = (
    "time", "grf_vertical",
    "hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r",
    "pelvis_angle", "pelvis_x", "force_x", "force_y", "perturbation",
)
RECORDING_UNITS = {
    "time": "s", "grf_vertical": "N", "hip_l": "rad", "knee_l": "rad",
    "ankle_l": "rad", "hip_r": "rad", "knee_r": "rad", "ankle_r": "rad",
    "pelvis_angle": "rad", "pelvis_x": "m", "force_x": "N", "force_y": "N",
    "perturbation": "N",
}

GRF_THRESHOLD = 20.0
DEBOUNCE = 0.050
N_NORMALIZED = 500
IQR_FACTOR = 1.5
OUTLIER_FRACTION = 0.20
MATCH_WINDOW = 0.025


class EventError(ValueError):
    """Gait events missing or out of order."""


class StrideError(ValueError):
    """Not enough (valid) strides for the requested operation."""


@dataclass
class GaitRecording:
    """Left-leg gait data on one uniform grid.

    ``angles`` holds left hip, knee and ankle angles (flexion and
    dorsiflexion positive); ``force`` the device force (x forward, y up);
    ``perturbation`` the commanded pulse amplitude, zero between pulses.
    """

    t: np.ndarray
    grf_vertical: np.ndarray
    angles: np.ndarray
    pelvis_angle: np.ndarray
    pelvis_x: np.ndarray
    force: np.ndarray
    perturbation: np.ndarray
    angles_right: np.ndarray | None = None

    @property
    def fs(self) -> float:
        return float((len(self.t) - 1) / (self.t[-1] - self.t[0]))

    @classmethod
    def from_columns(cls, cols):
        return cls(
            t=cols["time"],
            grf_vertical=cols["grf_vertical"],
            angles=np.column_stack([cols["hip_l"], cols["knee_l"], cols["ankle_l"]]),
            pelvis_angle=cols["pelvis_angle"],
            pelvis_x=cols["pelvis_x"],
            force=np.column_stack([cols["force_x"], cols["force_y"]]),
            perturbation=cols["perturbation"],
            angles_right=np.column_stack([cols["hip_r"], cols["knee_r"], cols["ankle_r"]]),
        )

    def to_columns(self):
        right = self.angles_right if self.angles_right is not None else np.zeros_like(
            self.angles)
        return {
            "time": self.t, "grf_vertical": self.grf_vertical,
            "hip_l": self.angles[:, 0], "knee_l": self.angles[:, 1],
            "ankle_l": self.angles[:, 2], "hip_r": right[:, 0],
            "knee_r": right[:, 1], "ankle_r": right[:, 2],
            "pelvis_angle": self.pelvis_angle, "pelvis_x": self.pelvis_x,
            "force_x": self.force[:, 0], "force_y": self.force[:, 1],
            "perturbation": self.perturbation,
        }

    def filtered_forces(self, cutoff=40.0) -> "GaitRecording":
        """Copy with the force channels zero-phase low-passed."""
        return GaitRecording(self.t, self.grf_vertical, self.angles, self.pelvis_angle,
                             self.pelvis_x, lowpass(self.force, self.fs, cutoff),
                             self.perturbation, self.angles_right)


def read_recording(path) -> GaitRecording:
    cols, _ = read_table(path, required=RECORDING_COLUMNS)
    if cols["time"].shape[0] < 3:
        raise StrideError(f"{path}: recording holds fewer than 3 samples")
    dt = np.diff(cols["time"])
    if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
        raise StrideError(f"{path}: time column is not uniformly increasing")
    return GaitRecording.from_columns(cols)


def _crossings(contact):
    up = np.flatnonzero(~contact[:-1] & contact[1:]) + 1
    down = np.flatnonzero(contact[:-1] & ~contact[1:]) + 1
    kinds = np.concatenate([np.ones(up.size, int), np.zeros(down.size, int)])
    idx = np.concatenate([up, down])
    order = np.argsort(idx, kind="stable")
    return idx[order], kinds[order]


def pair_events(heel_strikes, toe_offs):
    """Pair each heel strike with the toe-off that follows it.

    A toe-off before the first heel strike is dropped, and so is a final
    heel strike without a toe-off.

    Raises
    ------
    EventError
        Two events of one kind in a row, or no complete pair.
    """
    hs = np.asarray(heel_strikes, dtype=int).ravel()
    to = np.asarray(toe_offs, dtype=int).ravel()
    idx = np.concatenate([hs, to])
    kinds = np.concatenate([np.ones(hs.size, int), np.zeros(to.size, int)])
    order = np.argsort(idx, kind="stable")
    idx, kinds = idx[order], kinds[order]
    if idx.size and kinds[0] == 0:
        idx, kinds = idx[1:], kinds[1:]
    repeated = np.flatnonzero(kinds[1:] == kinds[:-1])
    if repeated.size:
        bad = [(int(idx[k]), int(idx[k + 1])) for k in repeated]
        raise EventError(f"gait events do not alternate at sample indices {bad}")
    pairs = [(int(idx[k]), int(idx[k + 1])) for k in range(0, idx.size - 1, 2)]
    if not pairs:
        raise EventError("no heel strike / toe-off pair found in the GRF signal")
    return np.array(pairs, dtype=int)


def _threshold_events(grf_vertical, threshold, fs, debounce):
    grf = np.asarray(grf_vertical, dtype=float)
    contact = grf >= threshold
    idx, kinds = _crossings(contact)
    gap = 0 if fs is None else int(round(debounce * fs))
    if gap > 0:
        # drop pairs of opposite crossings closer than the debounce gap
        changed = True
        while changed and idx.size > 1:
            changed = False
            close = np.flatnonzero((np.diff(idx) < gap) & (kinds[1:] != kinds[:-1]))
            if close.size:
                k = close[0]
                idx = np.delete(idx, [k, k + 1])
                kinds = np.delete(kinds, [k, k + 1])
                changed = True
    return idx[kinds == 1], idx[kinds == 0]


def detect_events(grf_vertical, threshold=GRF_THRESHOLD, fs=None, debounce=DEBOUNCE):
    """Heel strikes and toe-offs from the vertical ground reaction force.

    A heel strike is the first sample at or above ``threshold`` after a
    swing, a toe-off the first sample below it after a stance. Excursions
    across the threshold shorter than ``debounce`` seconds (needs ``fs``)
    are treated as noise and removed.

    Returns
    -------
    (k, 2) int array
        ``(heel_strike, toe_off)`` pairs, see :func:`pair_events`.
    """
    return pair_events(*_threshold_events(grf_vertical, threshold, fs, debounce))


@dataclass
class Stride:
    """One gait cycle, heel strike to the next heel strike (inclusive)."""

    t: np.ndarray
    angles: np.ndarray
    pelvis_angle: np.ndarray
    pelvis_x: np.ndarray
    force: np.ndarray
    toe_off: int
    fs: float
    perturbed: bool = False
    onset: float | None = None
    start_index: int = 0
    angles_right: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.toe_off < len(self.t) - 1:
            raise StrideError("toe-off must lie inside the stride, before its last sample")

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def swing_duration(self) -> float:
        return float(self.t[-1] - self.t[self.toe_off])

    def swing_index(self, time_from_toe_off) -> int:
        return self.toe_off + int(round(time_from_toe_off * self.fs))

    def swing(self) -> Trajectory:
        """Swing phase as model input, time zero at toe-off."""
        sl = slice(self.toe_off, None)
        seg = segment_angles(self.angles[sl], self.pelvis_angle[sl])
        q = np.column_stack([self.pelvis_x[sl], seg])
        t = np.arange(q.shape[0]) / self.fs
        return Trajectory(t, q, self.pelvis_angle[sl], self.force[sl])


def segment_strides(rec: GaitRecording, events=None, threshold=GRF_THRESHOLD,
                    debounce=DEBOUNCE):
    """Cut a recording into strides and flag the perturbed ones.

    A stride is perturbed when the perturbation channel rises during its
    swing; ``onset`` is then the rise time relative to toe-off. With
    detected events, a last heel strike that has no toe-off yet still
    closes the final stride.
    """
    fs = rec.fs
    closing = None
    if events is None:
        hs, to = _threshold_events(rec.grf_vertical, threshold, fs, debounce)
        events = pair_events(hs, to)
        if hs.size and hs[-1] > events[-1, 1]:
            # final heel strike without toe-off still closes the last stride
            closing = int(hs[-1])
    events = np.asarray(events, dtype=int)
    bounds = list(events[:, 0]) + ([closing] if closing is not None else [])
    pert = np.asarray(rec.perturbation) > 0
    rises = np.flatnonzero(~pert[:-1] & pert[1:]) + 1
    if pert.size and pert[0]:
        rises = np.concatenate([[0], rises])
    strides = []
    for (hs, to), hs_next in zip(events, bounds[1:]):
        sl = slice(hs, hs_next + 1)
        inside = rises[(rises >= to) & (rises <= hs_next)]
        onset = float((inside[0] - to) / fs) if inside.size else None
        strides.append(Stride(
            t=rec.t[sl] - rec.t[hs], angles=rec.angles[sl],
            pelvis_angle=rec.pelvis_angle[sl], pelvis_x=rec.pelvis_x[sl],
            force=rec.force[sl], toe_off=int(to - hs), fs=fs,
            perturbed=onset is not None, onset=onset, start_index=int(hs),
            angles_right=None if rec.angles_right is None else rec.angles_right[sl],
        ))
    if not strides:
        raise StrideError("recording holds no complete stride")
    return strides


@dataclass
class StrideEnsemble:
    """Time-normalized strides, shape (n_strides, n_points, n_channels)."""

    data: np.ndarray
    percent: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError("ensemble data must be (strides, points[, channels])")
        if self.percent is None:
            self.percent = np.linspace(0.0, 100.0, self.data.shape[1])

    def __len__(self):
        return self.data.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.data.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.data.std(axis=0, ddof=1) if len(self) > 1 else np.zeros(
            self.data.shape[1:])

    def quartiles(self):
        return np.percentile(self.data, [25, 75], axis=0)

    def subset(self, mask) -> "StrideEnsemble":
        return StrideEnsemble(self.data[np.asarray(mask)], self.percent)


def normalize(strides, n_points=N_NORMALIZED, channel="angles") -> StrideEnsemble:
    """Resample each stride to ``n_points`` over 0-100 % of the gait cycle."""
    out = []
    for s in strides:
        y = getattr(s, channel)
        y = y if y.ndim == 2 else y[:, None]
        u = (s.t - s.t[0]) / s.duration
        out.append(CubicSpline(u, y, axis=0)(np.linspace(0.0, 1.0, n_points)))
    return StrideEnsemble(np.array(out))


class IQROutlierFilter(OutlierMixin, BaseEstimator):
    """Flag strides with too many points outside the Tukey fences.

    The fences ``[Q1 - k IQR, Q3 + k IQR]`` are computed per normalized
    time point (and channel) across the strides seen in ``fit``. A stride
    is an outlier when more than ``max_fraction`` of its points fall
    outside the fences in any channel. ``predict`` returns 1 for kept and
    -1 for discarded strides, like other scikit-learn outlier detectors.
    """

    def __init__(self, factor=IQR_FACTOR, max_fraction=OUTLIER_FRACTION, min_strides=4):
        self.factor = factor
        self.max_fraction = max_fraction
        self.min_strides = min_strides

    def _check(self, X):
        X = X.data if isinstance(X, StrideEnsemble) else np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3:
            raise ValueError("expected (strides, points[, channels]) data")
        return X

    def fit(self, X, y=None):
        X = self._check(X)
        if X.shape[0] < self.min_strides:
            raise StrideError(
                f"outlier rule needs at least {self.min_strides} strides, got {X.shape[0]}"
            )
        q1, q3 = np.percentile(X, [25, 75], axis=0)
        iqr = q3 - q1
        self.lower_ = q1 - self.factor * iqr
        self.upper_ = q3 + self.factor * iqr
        return self

    def outside_fraction(self, X):
        check_is_fitted(self, "lower_")
        X = self._check(X)
        outside = (X < self.lower_) | (X > self.upper_)
        return outside.mean(axis=1).max(axis=1)

    def predict(self, X):
        return np.where(self.outside_fraction(X) > self.max_fraction, -1, 1)


def outlier_filter(ensemble, factor=IQR_FACTOR, max_fraction=OUTLIER_FRACTION):
    """Single-pass IQR outlier rule; returns a boolean keep mask."""
    return IQROutlierFilter(factor, max_fraction).fit_predict(ensemble) == 1


def swing_filter(strides, onset, window=0.250):
    """Keep strides whose swing lasts at least ``onset + window`` seconds."""
    if onset < 0:
        raise ValueError("onset must be non-negative")
    need = onset + window - 1e-9
    return [s for s in strides if s.swing_duration >= need]


def _pre_onset(stride, onset, pre):
    a = stride.swing_index(onset - pre)
    b = stride.swing_index(onset)
    if a < stride.toe_off or b >= len(stride.t):
        raise StrideError(
            f"matching window [{onset - pre:.3f}, {onset:.3f}] s falls outside the swing"
        )
    return stride.angles[a:b + 1]


def match_unperturbed(perturbed: Stride, pool, onset, pre=MATCH_WINDOW):
    """Pool stride closest to ``perturbed`` just before the onset.

    Similarity is the joint-angle RMSE over the last ``pre`` seconds before
    ``onset`` (time from toe-off). Ties go to the earliest pool stride.

    Returns
    -------
    (int, Stride)
        Pool index and the matched stride.
    """
    if not pool:
        raise StrideError("no unperturbed strides to match against")
    target = _pre_onset(perturbed, onset, pre)
    best, best_rmse = 0, np.inf
    for i, s in enumerate(pool):
        seg = _pre_onset(s, onset, pre)
        rmse = float(np.sqrt(np.mean((seg - target) ** 2)))
        if rmse < best_rmse:
            best, best_rmse = i, rmse
    return best, pool[best]


@dataclass
class TransparencyReport:
    """Per-joint comparison of walking with and without the device."""

    rmse: np.ndarray
    rmse_sd: np.ndarray
    isv_ave: np.ndarray
    force_rms: float
    force_rms_sd: float
    force_max: float
    force_max_sd: float
    n_participants: int

    @property
    def passed(self) -> np.ndarray:
        return self.rmse < self.isv_ave

    def as_dict(self) -> dict:
        out = {}
        for j, name in enumerate(JOINTS):
            out[f"{name}.rmse"] = float(self.rmse[j])
            out[f"{name}.rmse_sd"] = float(self.rmse_sd[j])
            out[f"{name}.isv_ave"] = float(self.isv_ave[j])
            out[f"{name}.pass"] = bool(self.passed[j])
        out["force.rms"] = self.force_rms
        out["force.rms_sd"] = self.force_rms_sd
        out["force.max_abs"] = self.force_max
        out["force.max_abs_sd"] = self.force_max_sd
        out["participants"] = self.n_participants
        return out


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def transparency_metrics(no_device, min_impedance, forces) -> TransparencyReport:
    """RMSE between condition means against the average intra-subject variability.

    Parameters
    ----------
    no_device, min_impedance : StrideEnsemble or list of StrideEnsemble
        Joint-angle ensembles, one per participant.
    forces : StrideEnsemble or list of StrideEnsemble
        Device force ensembles (one channel) in the device condition.

    Notes
    -----
    ``ISV_ave`` is twice the across-participant mean of each participant's
    between-stride standard deviation, itself averaged over the cycle.
    """
    nd, mi, fc = _as_list(no_device), _as_list(min_impedance), _as_list(forces)
    if not nd or len(nd) != len(mi) or len(fc) != len(nd):
        raise StrideError("need one ensemble per participant for every condition")
    rmse = np.array([np.sqrt(np.mean((a.mean - b.mean) ** 2, axis=0))
                     for a, b in zip(nd, mi)])
    sigma = np.array([a.std.mean(axis=0) for a in nd])
    isv = 2.0 * sigma.mean(axis=0)
    profiles = [f.mean[:, 0] for f in fc]
    f_rms = np.array([np.sqrt(np.mean(p ** 2)) for p in profiles])
    f_max = np.array([np.max(np.abs(p)) for p in profiles])
    sd = (lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
    return TransparencyReport(
        rmse=rmse.mean(axis=0),
        rmse_sd=rmse.std(axis=0, ddof=1) if len(nd) > 1 else np.zeros(rmse.shape[1]),
        isv_ave=isv,
        force_rms=float(f_rms.mean()),
        force_rms_sd=sd(f_rms),
        force_max=float(f_max.mean()),
        force_max_sd=sd(f_max),
        n_participants=len(nd),
    )


@dataclass
class PerturbationSet:
    """Averaged, matched data for one onset plus what was used."""

    unperturbed: Trajectory
    perturbed: Trajectory
    onset: float
    n_perturbed: int
    n_discarded_swing: int
    n_outliers: int
    matches: list


def prepare_perturbation(strides, onset, pre=MATCH_WINDOW, post=0.250, onset_tol=None):
    """Average perturbed strides and their matched unperturbed partners.

    Perturbed strides are those whose onset is within one sample of
    ``onset``. Short swings are removed, each survivor is paired with its
    most similar unperturbed stride, outliers are dropped using only the
    analysis window, and both sets are averaged on the swing-aligned grid.
    """
    if not strides:
        raise StrideError("no strides given")
    fs = strides[0].fs
    tol = 1.0 / fs + 1e-9 if onset_tol is None else onset_tol
    perturbed = [s for s in strides if s.perturbed and abs(s.onset - onset) <= tol]
    pool = [s for s in strides if not s.perturbed]
    kept_p = swing_filter(perturbed, onset, post)
    pool = swing_filter(pool, onset, post)
    if not kept_p:
        raise StrideError(f"no valid strides: no perturbed swing long enough for "
                          f"onset {onset:.3f} s plus a {post:.3f} s window")
    if not pool:
        raise StrideError("no valid strides: no unperturbed swing long enough")
    matched = [match_unperturbed(s, pool, onset, pre) for s in kept_p]
    a = int(round((onset - pre) * fs))
    b = int(round((onset + post) * fs))
    n_outliers = 0
    if len(kept_p) >= 4:
        win = np.array([s.angles[s.toe_off + a: s.toe_off + b + 1] for s in kept_p])
        keep = outlier_filter(win)
        n_outliers = int((~keep).sum())
        kept_p = [s for s, k in zip(kept_p, keep) if k]
        matched = [m for m, k in zip(matched, keep) if k]
    n = min(min(len(s.t) - s.toe_off for s in kept_p),
            min(len(m.t) - m.toe_off for _, m in matched))
    pert_avg = _average([s.swing() for s in kept_p], n)
    unp_avg = _average([m.swing() for _, m in matched], n)
    return PerturbationSet(unp_avg, pert_avg, onset, len(kept_p),
                           len(perturbed) - len(swing_filter(perturbed, onset, post)),
                           n_outliers, [i for i, _ in matched])


def _average(trajs, n):
    t = trajs[0].t[:n]
    q = np.mean([tr.q[:n] for tr in trajs], axis=0)
    pelvis = np.mean([tr.pelvis_angle[:n] for tr in trajs], axis=0)
    force = np.mean([tr.force[:n] for tr in trajs], axis=0)
    return Trajectory(t, q, pelvis, force)


SWING_COLUMNS = ("stride", "perturbed", "onset", "t", "hip", "knee", "ankle",
                 "pelvis_angle", "pelvis_x", "force_x", "force_y")
SWING_UNITS = {"onset": "s", "t": "s", "hip": "rad", "knee": "rad", "ankle": "rad",
               "pelvis_angle": "rad", "pelvis_x": "m", "force_x": "N", "force_y": "N"}


def write_swing_table(path, strides, fmt=".12g"):
    """Swing phases of ``strides``, toe-off to next heel strike, in long format.

    ``onset`` is NaN for unperturbed strides.
    """
    cols = {name: [] for name in SWING_COLUMNS}
    for k, s in enumerate(strides):
        sl = slice(s.toe_off, None)
        n = len(s.t) - s.toe_off
        cols["stride"].extend([k] * n)
        cols["perturbed"].extend([int(s.perturbed)] * n)
        cols["onset"].extend([s.onset if s.perturbed else np.nan] * n)
        cols["t"].extend(np.arange(n) / s.fs)
        for j, name in enumerate(JOINTS):
            cols[name].extend(s.angles[sl, j])
        cols["pelvis_angle"].extend(s.pelvis_angle[sl])
        cols["pelvis_x"].extend(s.pelvis_x[sl])
        cols["force_x"].extend(s.force[sl, 0])
        cols["force_y"].extend(s.force[sl, 1])
    return write_table(path, cols, SWING_UNITS, fmt=fmt)


def read_swing_table(path):
    """Strides written by :func:`write_swing_table` (toe-off at index 0)."""
    cols, _ = read_table(path, required=SWING_COLUMNS)
    ids = cols["stride"]
    if ids.size == 0:
        raise StrideError(f"{path}: no stride rows")
    strides = []
    for k in np.unique(ids):
        sel = ids == k
        t = cols["t"][sel]
        if t.size < 3:
            raise StrideError(f"{path}: stride {int(k)} has fewer than 3 samples")
        fs = (t.size - 1) / (t[-1] - t[0])
        pert = bool(cols["perturbed"][sel][0])
        onset = float(cols["onset"][sel][0]) if pert else None
        if pert and not np.isfinite(onset):
            raise StrideError(f"{path}: perturbed stride {int(k)} has no onset")
        strides.append(Stride(
            t=t, angles=np.column_stack([cols[j][sel] for j in JOINTS]),
            pelvis_angle=cols["pelvis_angle"][sel], pelvis_x=cols["pelvis_x"][sel],
            force=np.column_stack([cols["force_x"][sel], cols["force_y"][sel]]),
            toe_off=0, fs=fs, perturbed=pert, onset=onset,
        ))
    return strides
