"""Regenerate the shipped swing scenario (data/swing_template.csv).

The swing is designed in joint space with smooth closed-form curves that
resemble slow treadmill walking (0.5 m/s): hip flexing through swing, knee
flexion peaking early, the ankle recovering from push-off plantarflexion.
The feed-forward template is the exact inverse dynamics of that motion on
a 1 kHz grid, so forward-simulating it reproduces the designed swing.

Run from the repository root::

    python tools/make_scenario.py
"""

import numpy as np

from swing_impedance import _kernels
from swing_impedance.config import package_data
from swing_impedance.model import default_model, segment_angles
from swing_impedance.tables import write_table

DURATION = 0.70
FS_TEMPLATE = 1000.0
STRIDE = 60.0 / 36.0


def design(t):
    hip = 0.10 - 0.25 * np.cos(np.pi * t / 0.75)
    knee = 0.575 + 0.475 * np.cos(np.pi * (t - 0.2) / 0.5)
    ankle = -0.25 + 0.27 * (1.0 - np.exp(-t / 0.1))
    pelvis = 0.12 + 0.03 * np.sin(2 * np.pi * t / STRIDE)
    cart = 0.015 * np.sin(4 * np.pi * t / STRIDE)
    seg = segment_angles(np.stack([hip, knee, ankle], axis=-1), pelvis)
    return np.column_stack([cart, seg]), pelvis


def main():
    model = default_model()
    t = np.arange(int(round(DURATION * FS_TEMPLATE)) + 1) / FS_TEMPLATE
    h = 1e-4
    q, pelvis = design(t)
    qp, _ = design(t + h)
    qm, _ = design(t - h)
    qd = (qp - qm) / (2 * h)
    qdd = (qp - 2 * q + qm) / h**2
    u = _kernels.inverse_dynamics_k(model.as_vector(), q, qd, qdd)
    cols = {
        "t": t,
        "u_pelvis": u[:, 0], "u_thigh": u[:, 1], "u_shank": u[:, 2], "u_foot": u[:, 3],
        "pelvis_angle": pelvis,
    }
    units = {"t": "s", "u_pelvis": "N", "u_thigh": "N m", "u_shank": "N m",
             "u_foot": "N m", "pelvis_angle": "rad"}
    write_table(package_data("swing_template.csv"), cols, units, fmt=".17g",
                comments=["feed-forward template for the default swing scenario"])
    state = ", ".join(format(v, ".17g") for v in np.concatenate([q[0], qd[0]]))
    package_data("swing_scenario.cfg").write_text(
        "# Default synthetic swing: toe-off at t = 0, one forward pulse.\n"
        "scenario.template = swing_template.csv\n"
        f"scenario.initial_state = {state}\n"
        "scenario.fs = 128\n"
        f"scenario.duration = {DURATION}\n"
        "scenario.onset = 0.175\n"
        "scenario.pulse_amplitude = 40\n"
        "scenario.pulse_width = 0.1\n"
    )


if __name__ == "__main__":
    main()
