"""Planar triple pendulum on a horizontal cart.

The cart carries the reflected mass of the rest of the body; thigh, shank
and foot hang from it. Generalized coordinates are ordered
``(q_pelvis, q_thigh, q_shank, q_foot)``: cart position in metres followed
by global segment angles in radians, zero when hanging straight down.
Joint angles follow the flexion/dorsiflexion sign of the gait data, which
fixes the segment angles as clockwise-positive with walking direction +x.

All dynamics quantities are closed-form; the heavy lifting is compiled in
:mod:`swing_impedance._kernels`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as _k

GRAVITY = 9.81

PELVIS, THIGH, SHANK, FOOT = range(4)
JOINTS = ("hip", "knee", "ankle")
COORDS = ("q_pelvis", "q_thigh", "q_shank", "q_foot")


@dataclass(frozen=True)
class SegmentParams:
    """Inertial and geometric properties of one leg segment.

    Parameters
    ----------
    mass : float
        Segment mass in kg.
    inertia_com : float
        Moment of inertia about the centre of mass (out-of-plane axis),
        kg m^2.
    length : float
        Proximal to distal joint distance in m.
    com_offset : float
        Distance from the proximal joint to the centre of mass, m.
    """

    mass: float
    inertia_com: float
    length: float
    com_offset: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"segment mass must be positive, got {self.mass}")
        if not self.inertia_com >= 0:
            raise ValueError(f"inertia must be non-negative, got {self.inertia_com}")
        if not self.length > 0:
            raise ValueError(f"segment length must be positive, got {self.length}")
        if not 0 <= self.com_offset <= self.length:
            raise ValueError(
                f"com_offset {self.com_offset} outside [0, length={self.length}]"
            )


@dataclass(frozen=True)
class BodyModel:
    """Swing-leg model: three segments plus the cart (pelvis) mass.

    ``interaction_offset`` is the distance from the hip along the thigh to
    the point where the perturbation force is applied.
    """

    thigh: SegmentParams
    shank: SegmentParams
    foot: SegmentParams
    cart_mass: float
    interaction_offset: float
    gravity: float = GRAVITY
    _vector: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.cart_mass > 0:
            raise ValueError(f"cart_mass must be positive, got {self.cart_mass}")
        if not 0 < self.interaction_offset <= self.thigh.length:
            raise ValueError(
                "interaction_offset must lie on the thigh, "
                f"got {self.interaction_offset} for length {self.thigh.length}"
            )
        segs = (self.thigh, self.shank, self.foot)
        vec = np.array(
            [self.cart_mass]
            + [s.mass for s in segs]
            + [s.inertia_com for s in segs]
            + [s.length for s in segs]
            + [s.com_offset for s in segs]
            + [self.interaction_offset, self.gravity],
            dtype=float,
        )
        vec.setflags(write=False)
        object.__setattr__(self, "_vector", vec)

    @classmethod
    def from_subject(cls, total_mass, thigh, shank, foot, interaction_offset,
                     gravity=GRAVITY):
        """Build a model whose cart mass is body mass minus one swing leg."""
        leg = thigh.mass + shank.mass + foot.mass
        return cls(thigh, shank, foot, total_mass - leg, interaction_offset,
                   gravity)

    @property
    def leg_mass(self) -> float:
        return self.thigh.mass + self.shank.mass + self.foot.mass

    @property
    def total_mass(self) -> float:
        return self.cart_mass + self.leg_mass

    def as_vector(self) -> np.ndarray:
        """Flat parameter vector in the kernel layout."""
        return self._vector

    def to_dict(self) -> dict:
        out = {}
        for name in ("thigh", "shank", "foot"):
            for key, val in asdict(getattr(self, name)).items():
                out[f"model.{name}.{key}"] = val
        out["model.cart_mass"] = self.cart_mass
        out["model.interaction_offset"] = self.interaction_offset
        out["model.gravity"] = self.gravity
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "BodyModel":
        """Build from flat ``model.*`` keys (see ``data/default_model.cfg``).

        ``model.total_mass`` may replace ``model.cart_mass``; the cart then
        gets the body mass minus one swing leg.
        """
        def seg(name):
            try:
                return SegmentParams(
                    mass=float(cfg[f"model.{name}.mass"]),
                    inertia_com=float(cfg[f"model.{name}.inertia_com"]),
                    length=float(cfg[f"model.{name}.length"]),
                    com_offset=float(cfg[f"model.{name}.com_offset"]),
                )
            except KeyError as exc:
                raise KeyError(f"missing model key {exc.args[0]!r}") from None

        thigh, shank, foot = seg("thigh"), seg("shank"), seg("foot")
        gravity = float(cfg.get("model.gravity", GRAVITY))
        try:
            offset = float(cfg["model.interaction_offset"])
        except KeyError:
            raise KeyError("missing model key 'model.interaction_offset'") from None
        if "model.cart_mass" in cfg:
            return cls(thigh, shank, foot, float(cfg["model.cart_mass"]), offset,
                       gravity)
        if "model.total_mass" in cfg:
            return cls.from_subject(float(cfg["model.total_mass"]), thigh, shank,
                                    foot, offset, gravity)
        raise KeyError("model config needs 'model.cart_mass' or 'model.total_mass'")


def default_model() -> BodyModel:
    """Anthropometric swing leg for a 65 kg adult (Winter's proportions)."""
    from .config import load_config, package_data

    return BodyModel.from_dict(load_config(package_data("default_model.cfg")))


def _as_q(q):
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"expected 4 generalized coordinates, got shape {q.shape}")
    return q


def mass_matrix(model: BodyModel, q) -> np.ndarray:
    """Mass matrix M(q), 4x4, symmetric positive definite."""
    out = np.empty((4, 4))
    _k.mass_matrix_k(model.as_vector(), _as_q(q), out)
    return out


def bias_forces(model: BodyModel, q, qdot):
    """Coriolis/centrifugal vector C and gravity vector G.

    Signs follow ``M q'' = -C + G + u + J^T F``.
    """
    C = np.empty(4)
    G = np.empty(4)
    _k.bias_k(model.as_vector(), _as_q(q), _as_q(qdot), C, G)
    return C, G


def interaction_point(model: BodyModel, q) -> np.ndarray:
    """Global (x, y) of the thigh attachment point; hip at (q_pelvis, 0)."""
    q = _as_q(q)
    d = model.interaction_offset
    return np.array([q[PELVIS] - d * np.sin(q[THIGH]), -d * np.cos(q[THIGH])])


def interaction_jacobian(model: BodyModel, q) -> np.ndarray:
    """2x4 Jacobian of the attachment point with respect to q."""
    q = _as_q(q)
    d = model.interaction_offset
    J = np.zeros((2, 4))
    J[0, PELVIS] = 1.0
    J[0, THIGH] = -d * np.cos(q[THIGH])
    J[1, THIGH] = d * np.sin(q[THIGH])
    return J


def joint_angles(q, pelvis_angle) -> np.ndarray:
    """Relative hip, knee and ankle angles.

    Works on a single sample (``q`` of shape ``(4,)``) or on series of
    shape ``(n, 4)`` with ``pelvis_angle`` of shape ``(n,)``.
    """
    q = np.asarray(q, dtype=float)
    pelvis_angle = np.asarray(pelvis_angle, dtype=float)
    return np.stack(
        [
            pelvis_angle - q[..., THIGH],
            q[..., THIGH] - q[..., SHANK],
            q[..., SHANK] - q[..., FOOT],
        ],
        axis=-1,
    )


def segment_angles(angles, pelvis_angle) -> np.ndarray:
    """Inverse of :func:`joint_angles`: global thigh, shank and foot angles."""
    angles = np.asarray(angles, dtype=float)
    thigh = np.asarray(pelvis_angle, dtype=float) - angles[..., 0]
    shank = thigh - angles[..., 1]
    foot = shank - angles[..., 2]
    return np.stack([thigh, shank, foot], axis=-1)


def torques_to_genforce(torques) -> np.ndarray:
    """Map (hip, knee, ankle) joint torques to generalized forces u."""
    T = np.asarray(torques, dtype=float)
    t_hip, t_knee, t_ankle = T[..., 0], T[..., 1], T[..., 2]
    return np.stack(
        [np.zeros_like(t_hip), t_knee - t_hip, t_ankle - t_knee, -t_ankle], axis=-1
    )
