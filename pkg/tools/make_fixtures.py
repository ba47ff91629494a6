"""Regenerate the shipped sample recordings and the test fixtures.

sample_baseline.csv / sample_device.csv (package data)
    Treadmill trials without and with the device. Every stride is a smooth
    template plus a stride-specific deviation proportional to sin(pi u),
    u being the gait-cycle fraction, so the between-stride standard
    deviation averaged over the cycle is known exactly. The device trial
    adds a mean shift A sin(2 pi u) per joint and a bell-shaped interaction
    force. By construction the normalized ensembles give

        joint   RMSE    ISV_ave
        hip     0.030   0.047
        knee    0.052   0.086
        ankle   0.026   0.048

    and a stride-mean force with RMS 2.00 N and peak 4.63 N.

tests/data/ident_recording.csv
    Walking with forward pulses (40 N, 100 ms, 175 ms after toe-off) every
    fourth stride. Swing phases are forward simulations of the default
    model with known impedance; stance phases are smooth bridges.

Run from the repository root::

    python tools/make_fixtures.py
"""

from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from swing_impedance.config import package_data
from swing_impedance.dynamics import ImpedanceParams
from swing_impedance.gaitproc import RECORDING_COLUMNS, RECORDING_UNITS
from swing_impedance.synthval import Scenario
from swing_impedance.tables import write_table

FS = 128.0
STRIDE = 213
STANCE = 0.6
N_STRIDES = 40
LEAD = 10
RMSE = np.array([0.030, 0.052, 0.026])
ISV = np.array([0.047, 0.086, 0.048])
FORCE_RMS, FORCE_MAX = 2.00, 4.63
IDENT_TRUTH = ImpedanceParams(60.0, 5.0, 10.0, 3.0, 0.5, 1.0)
TESTS = Path(__file__).resolve().parents[1] / "tests" / "data"


def template(u):
    hip = 0.15 + 0.35 * np.cos(2 * np.pi * (u - 0.85))
    knee = (0.08 + 0.95 * np.exp(-(((u - 0.72) / 0.11) ** 2))
            + 0.25 * np.exp(-(((u - 0.15) / 0.07) ** 2)))
    ankle = 0.05 * np.sin(2 * np.pi * u) - 0.3 * np.exp(-(((u - 0.62) / 0.06) ** 2))
    return np.stack([hip, knee, ankle], axis=-1)


def grid_mean(f):
    u = np.linspace(0.0, 1.0, 500)
    return float(np.mean(f(u)))


def force_shape():
    def rms(w):
        return np.sqrt(grid_mean(lambda u: np.exp(-2 * ((u - 0.62) / w) ** 2)))
    w = brentq(lambda w: FORCE_MAX * rms(w) - FORCE_RMS, 0.01, 0.5)
    return lambda u: FORCE_MAX * np.exp(-(((u - 0.62) / w) ** 2))


def standardized(n, rng):
    z = np.linspace(-1.0, 1.0, n)
    z = (z - z.mean()) / z.std(ddof=1)
    return rng.permutation(z)


def gait_recording(device, rng):
    n = LEAD + N_STRIDES * STRIDE + 20
    i = np.arange(n)
    t = i / FS
    u = ((i - LEAD) % STRIDE) / STRIDE
    stride = (i - LEAD) // STRIDE
    # sigma scaled so that 2 * mean_u(sigma * sin(pi u)) equals ISV
    sigma = ISV / 2 / grid_mean(lambda u: np.sin(np.pi * u))
    z = standardized(N_STRIDES, rng)[np.clip(stride, 0, N_STRIDES - 1)]
    angles = template(u) + np.outer(z * np.sin(np.pi * u), sigma)
    if device:
        amp = RMSE / np.sqrt(grid_mean(lambda u: np.sin(2 * np.pi * u) ** 2))
        angles += np.outer(np.sin(2 * np.pi * u), amp)
    right = template((u + 0.5) % 1.0)
    grf = np.where((u < STANCE) & (i >= LEAD), 600.0, 0.0)
    force_x = force_shape()(u) if device else np.zeros(n)
    cols = dict(zip(RECORDING_COLUMNS, [
        t, grf, angles[:, 0], angles[:, 1], angles[:, 2],
        right[:, 0], right[:, 1], right[:, 2],
        0.12 + 0.03 * np.sin(2 * np.pi * u), 0.015 * np.sin(4 * np.pi * u),
        force_x, np.zeros(n), np.zeros(n),
    ]))
    return cols


def ident_recording(n_strides=20, every=4):
    sc = Scenario.default()
    ref = sc.reference()
    pert = sc.perturbed(IDENT_TRUTH)
    pulse = sc.pulse()[:, 0]
    n_sw = len(ref)
    n_st = 124
    length = n_st + n_sw - 1

    def chans(tr):
        return np.column_stack([tr.joint_angles(), tr.pelvis_angle, tr.q[:, 0]])

    sw_ref, sw_pert = chans(ref), chans(pert)
    total = n_strides * length + 1
    data = np.zeros((total, 5))
    grf = np.zeros(total)
    force = np.zeros(total)
    marker = np.zeros(total)
    prev_end = sw_ref[-1]
    for k in range(n_strides):
        b = k * length
        perturbed = k % every == every - 1
        sw = sw_pert if perturbed else sw_ref
        # stance: smooth bridge from the last swing end to toe-off
        h = CubicHermiteSpline([0, n_st], np.vstack([prev_end, sw[0]]),
                               np.zeros((2, 5)))
        data[b:b + n_st] = h(np.arange(n_st))
        data[b + n_st:b + n_st + n_sw] = sw
        grf[b:b + n_st] = 600.0
        if perturbed:
            force[b + n_st:b + n_st + n_sw] = pulse
            marker[b + n_st:b + n_st + n_sw] = pulse
        prev_end = sw[-1]
    grf[-1] = 600.0
    t = np.arange(total) / FS
    zeros = np.zeros(total)
    return dict(zip(RECORDING_COLUMNS, [
        t, grf, data[:, 0], data[:, 1], data[:, 2], zeros, zeros, zeros,
        data[:, 3], data[:, 4], force, zeros, marker,
    ]))


def main():
    rng = np.random.default_rng(20)
    for name, device in (("sample_baseline.csv", False), ("sample_device.csv", True)):
        write_table(package_data(name), gait_recording(device, rng), RECORDING_UNITS,
                    comments=["synthetic treadmill trial, left leg, 128 Hz"])
    TESTS.mkdir(parents=True, exist_ok=True)
    write_table(TESTS / "ident_recording.csv", ident_recording(), RECORDING_UNITS,
                fmt=".17g", comments=["synthetic perturbed walking, known impedance",
                                      "truth " + " ".join(
                                          f"{v:g}" for v in IDENT_TRUTH.as_array())])


if __name__ == "__main__":
    main()
