"""
Experiment Service

Closed-form problem data for the five reference experiments and the
post-processing of a run: trapezoidal-in-time error norms, total mass and
observed convergence orders.

The sphere experiments (1-3) measure errors against the normal extension
u_e(x, t) = u(p(x, t), t) of the exact solution, where p is the closest point
on the exact sphere; its gradient is tangential to the sphere.
"""

import logging
import math
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from app.config.experiments import EXPERIMENTS
from app.models.response import ErrorReport
from app.services.assembly_service import integrate_over_surface
from app.services.level_set_service import SurfaceTriangulation
from app.services.mesh_service import BackgroundMesh
from app.services.time_integrator_service import StepRecord, TransportProblem

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Floors keeping the merging-spheres level set finite at the centres
CENTRE_DISTANCE_FLOOR = 1e-8
GRADIENT_NORM_FLOOR = 1e-14


class ExperimentError(ValueError):
    """Raised for unknown experiments or unavailable experiment data."""
    pass


class ExperimentFields(NamedTuple):
    """Problem data frozen at one time instant; callables take points (n, 3)."""
    phi: Callable[[np.ndarray], np.ndarray]
    velocity: Callable[[np.ndarray], np.ndarray]
    exact: Optional[Callable[[np.ndarray], np.ndarray]]
    initial: Callable[[np.ndarray], np.ndarray]
    source: Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Moving spheres
# ---------------------------------------------------------------------------

class MovingSphere:
    """
    Sphere |x - c(t)| = R(t) with a solution u(x, t) = a(t) + g(t) . (x - c(t)) s(t).

    Subclasses give the centre, the radius and the ambient formula of u and its
    gradient; this class supplies the level set, the closest-point map and the
    normal extension of u used as the reference solution.
    """

    def centre(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def radius(self, t: float) -> float:
        return 1.0

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def ambient(self, x: np.ndarray, t: float) -> np.ndarray:
        """Exact solution formula evaluated at points of the sphere."""
        raise NotImplementedError

    def ambient_gradient(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def source(self, x: np.ndarray, t: float) -> np.ndarray:
        return np.zeros(len(x))

    def phi(self, x: np.ndarray, t: float) -> np.ndarray:
        return np.linalg.norm(np.asarray(x) - self.centre(t), axis=1) - self.radius(t)

    def _offsets(self, x: np.ndarray, t: float):
        offset = np.asarray(x, dtype=float) - self.centre(t)
        r = np.maximum(np.linalg.norm(offset, axis=1), CENTRE_DISTANCE_FLOOR)
        return offset, r

    def closest_point(self, x: np.ndarray, t: float) -> np.ndarray:
        offset, r = self._offsets(x, t)
        return self.centre(t) + self.radius(t) * offset / r[:, None]

    def exact(self, x: np.ndarray, t: float) -> np.ndarray:
        """Normal extension u(p(x, t), t)."""
        return self.ambient(self.closest_point(x, t), t)

    def exact_gradient(self, x: np.ndarray, t: float) -> np.ndarray:
        """(R / r) (I - n n^T) grad u(p(x))."""
        offset, r = self._offsets(x, t)
        n = offset / r[:, None]
        g = self.ambient_gradient(self.centre(t) + self.radius(t) * n, t)
        tangential = g - np.einsum("ij,ij->i", g, n)[:, None] * n
        return (self.radius(t) / r)[:, None] * tangential

    def initial(self, x: np.ndarray) -> np.ndarray:
        return self.exact(x, 0.0)

    def extended_source(self, x: np.ndarray, t: float) -> np.ndarray:
        """Source term evaluated at the closest point."""
        return self.source(self.closest_point(x, t), t)

    def problem(self) -> TransportProblem:
        return TransportProblem(
            phi=self.phi,
            velocity=self.velocity,
            initial=self.initial,
            source=self.extended_source,
            exact=self.exact,
            exact_gradient=self.exact_gradient,
        )


class TranslatingSphere(MovingSphere):
    """Unit sphere moving with w = (0.2, 0, 0); u = 1 + (x1 + x2 + x3 - 0.2t) e^{-2t}."""

    speed = 0.2

    def centre(self, t):
        return np.array([self.speed * t, 0.0, 0.0])

    def velocity(self, x, t):
        w = np.zeros((len(x), 3))
        w[:, 0] = self.speed
        return w

    def ambient(self, x, t):
        return 1.0 + (x[:, 0] + x[:, 1] + x[:, 2] - self.speed * t) * math.exp(-2.0 * t)

    def ambient_gradient(self, x, t):
        return np.full((len(x), 3), math.exp(-2.0 * t))


class RotatingSphere(MovingSphere):
    """
    Unit sphere centred at 0.5 (cos 2 pi t, sin 2 pi t, 0), rotated by
    w = (-2 pi x2, 2 pi x1, 0). The constant mode is conserved and the linear
    mode g(t) . (x - c) with g(t) = (cos - sin, cos + sin, 1) decays as e^{-2t}.
    """

    offset = 0.5

    def centre(self, t):
        angle = TWO_PI * t
        return np.array([self.offset * math.cos(angle), self.offset * math.sin(angle), 0.0])

    def velocity(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.column_stack([-TWO_PI * x[:, 1], TWO_PI * x[:, 0], np.zeros(len(x))])

    def _direction(self, t):
        c, s = math.cos(TWO_PI * t), math.sin(TWO_PI * t)
        return np.array([c - s, c + s, 1.0])

    def ambient(self, x, t):
        return 1.0 + ((x - self.centre(t)) @ self._direction(t)) * math.exp(-2.0 * t)

    def ambient_gradient(self, x, t):
        return np.tile(self._direction(t) * math.exp(-2.0 * t), (len(x), 1))


class ShrinkingSphere(MovingSphere):
    """
    Sphere |x| = e^{-t/2} with normal velocity w = -(1/2) e^{-t/2} n,
    u = (1 + x1 x2 x3) e^t and f = (-1.5 e^t + 12 e^{2t}) x1 x2 x3.
    """

    def centre(self, t):
        return np.zeros(3)

    def radius(self, t):
        return math.exp(-0.5 * t)

    def velocity(self, x, t):
        offset, r = self._offsets(x, t)
        return -0.5 * math.exp(-0.5 * t) * offset / r[:, None]

    def ambient(self, x, t):
        return (1.0 + x[:, 0] * x[:, 1] * x[:, 2]) * math.exp(t)

    def ambient_gradient(self, x, t):
        return math.exp(t) * np.column_stack([x[:, 1] * x[:, 2], x[:, 0] * x[:, 2], x[:, 0] * x[:, 1]])

    def source(self, x, t):
        return (-1.5 * math.exp(t) + 12.0 * math.exp(2.0 * t)) * x[:, 0] * x[:, 1] * x[:, 2]


# ---------------------------------------------------------------------------
# Deforming manifold
# ---------------------------------------------------------------------------

def _deforming_reference_point(x: np.ndarray, t: float) -> np.ndarray:
    """Backward characteristic X_0(x, t) of w = (0.1 x1 cos t, 0.2 x2 sin t, 0.2 x3 cos t)."""
    x = np.asarray(x, dtype=float)
    return np.column_stack([
        x[:, 0] * math.exp(-0.1 * math.sin(t)),
        x[:, 1] * math.exp(-0.2 * (1.0 - math.cos(t))),
        x[:, 2] * math.exp(-0.2 * math.sin(t)),
    ])


def _deforming_phi0(y: np.ndarray) -> np.ndarray:
    return (y[:, 0] - y[:, 2] ** 2) ** 2 + y[:, 1] ** 2 + y[:, 2] ** 2 - 1.0


def deforming_phi(x: np.ndarray, t: float) -> np.ndarray:
    return _deforming_phi0(_deforming_reference_point(x, t))


def deforming_velocity(x: np.ndarray, t: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.column_stack([
        0.1 * x[:, 0] * math.cos(t),
        0.2 * x[:, 1] * math.sin(t),
        0.2 * x[:, 2] * math.cos(t),
    ])


def deforming_phi_gradient(x: np.ndarray, t: float) -> np.ndarray:
    y = _deforming_reference_point(x, t)
    a = y[:, 0] - y[:, 2] ** 2
    scale = np.array([math.exp(-0.1 * math.sin(t)), math.exp(-0.2 * (1.0 - math.cos(t))), math.exp(-0.2 * math.sin(t))])
    dy = np.column_stack([2.0 * a, 2.0 * y[:, 1], -4.0 * a * y[:, 2] + 2.0 * y[:, 2]])
    return dy * scale


def deforming_phi_time_derivative(x: np.ndarray, t: float) -> np.ndarray:
    """Closed-form partial derivative of phi in t."""
    x = np.asarray(x, dtype=float)
    y = _deforming_reference_point(x, t)
    a = y[:, 0] - y[:, 2] ** 2
    dy_dt = np.column_stack([
        -0.1 * math.cos(t) * y[:, 0],
        -0.2 * math.sin(t) * y[:, 1],
        -0.2 * math.cos(t) * y[:, 2],
    ])
    dphi_dy = np.column_stack([2.0 * a, 2.0 * y[:, 1], -4.0 * a * y[:, 2] + 2.0 * y[:, 2]])
    return np.einsum("ij,ij->i", dphi_dy, dy_dt)


def deforming_initial(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 1.0 + x[:, 0] * x[:, 1] * x[:, 2]


# ---------------------------------------------------------------------------
# Merging spheres
# ---------------------------------------------------------------------------

MERGE_SPEED = 1.5


def _merge_centres(t: float):
    c_plus = np.array([MERGE_SPEED * (t - 1.0), 0.0, 0.0])
    return c_plus, -c_plus


def _merge_terms(x: np.ndarray, t: float):
    x = np.asarray(x, dtype=float)
    terms = []
    for sign, centre in zip((1.0, -1.0), _merge_centres(t)):
        offset = x - centre
        r = np.maximum(np.linalg.norm(offset, axis=1), CENTRE_DISTANCE_FLOOR)
        terms.append((sign, offset, r))
    return terms


def merging_phi(x: np.ndarray, t: float) -> np.ndarray:
    return 1.0 - sum(r ** -3 for _, _, r in _merge_terms(x, t))


def merging_phi_gradient(x: np.ndarray, t: float) -> np.ndarray:
    return sum(3.0 * (r ** -5)[:, None] * offset for _, offset, r in _merge_terms(x, t))


def merging_phi_time_derivative(x: np.ndarray, t: float) -> np.ndarray:
    # c_plus moves with +MERGE_SPEED e_1, c_minus with -MERGE_SPEED e_1
    return sum(-3.0 * r ** -5 * offset[:, 0] * sign * MERGE_SPEED for sign, offset, r in _merge_terms(x, t))


def merging_velocity(x: np.ndarray, t: float) -> np.ndarray:
    """Normal velocity w = -(d_t phi / |grad phi|^2) grad phi."""
    grad = merging_phi_gradient(x, t)
    norm2 = np.maximum(np.einsum("ij,ij->i", grad, grad), GRADIENT_NORM_FLOOR)
    return -(merging_phi_time_derivative(x, t) / norm2)[:, None] * grad


def merging_initial(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x[:, 0] >= 0.0, 3.0 - x[:, 0], 0.0)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_SPHERES = {1: TranslatingSphere(), 2: RotatingSphere(), 3: ShrinkingSphere()}


def get_problem(experiment_id: int) -> TransportProblem:
    """
    Time-dependent problem data of one experiment.

    Args:
        experiment_id (int): Experiment number 1..5

    Returns:
        TransportProblem: level set, velocity, initial data, source and exact solution

    Raises:
        ExperimentError: If the experiment id is unknown
    """
    if experiment_id in _SPHERES:
        return _SPHERES[experiment_id].problem()
    if experiment_id == 4:
        return TransportProblem(phi=deforming_phi, velocity=deforming_velocity, initial=deforming_initial)
    if experiment_id == 5:
        return TransportProblem(phi=merging_phi, velocity=merging_velocity, initial=merging_initial)
    raise ExperimentError(f"Unknown experiment id: {experiment_id}; known ids are {sorted(EXPERIMENTS)}")


def experiment_fields(experiment_id: int, t: float) -> ExperimentFields:
    """Problem data of one experiment frozen at time t."""
    problem = get_problem(experiment_id)

    def at(func):
        return None if func is None else (lambda x: func(np.atleast_2d(np.asarray(x, dtype=float)), t))

    def zero_source(x):
        return np.zeros(len(np.atleast_2d(x)))

    return ExperimentFields(
        phi=at(problem.phi),
        velocity=at(problem.velocity),
        exact=at(problem.exact),
        initial=lambda x: problem.initial(np.atleast_2d(np.asarray(x, dtype=float))),
        source=at(problem.source) or zero_source,
    )


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------

def _trapezoid(values: Sequence[float], dt: float) -> float:
    if len(values) == 1:
        return 0.0
    weights = np.full(len(values), dt)
    weights[0] = weights[-1] = 0.5 * dt
    return float(np.dot(weights, values))


def compute_error_norms(records: Sequence[StepRecord], dt: float) -> ErrorReport:
    """
    Trapezoidal-in-time L2(H1) and L2(L2) error norms of a run.

    Half weights go to n = 0 (the interpolated initial data) and n = N, full
    weights to the steps in between. Without an exact solution only the mass
    series is reported.

    Args:
        records: one StepRecord per level n = 0..N
        dt (float): time step

    Returns:
        ErrorReport: norms, mass series and per-step errors
    """
    mass = [r.mass for r in records]
    if not records or any(r.err_l2_sq is None for r in records):
        logger.info("ℹ️ No exact solution; reporting mass diagnostics only")
        return ErrorReport(mass=mass, step_l2=[None] * len(records), step_h1=[None] * len(records))
    err_l2 = math.sqrt(_trapezoid([r.err_l2_sq for r in records], dt))
    err_h1 = math.sqrt(_trapezoid([r.err_h1_sq for r in records], dt))
    return ErrorReport(
        err_l2_l2=err_l2,
        err_l2_h1=err_h1,
        mass=mass,
        step_l2=[r.err_l2 for r in records],
        step_h1=[r.err_h1 for r in records],
    )


def compute_total_mass(surface: SurfaceTriangulation, mesh: BackgroundMesh, u_field: np.ndarray) -> float:
    """M_h = integral of the P1 field u_h over Gamma_h."""
    if surface.is_empty:
        return 0.0
    return integrate_over_surface(u_field, surface, mesh)


def observed_orders(errors: Sequence[float], factor: float = 2.0) -> List[float]:
    """log(e_k / e_{k+1}) / log(factor) for consecutive refinements."""
    errors = np.asarray(errors, dtype=float)
    return [float(math.log(a / b) / math.log(factor)) for a, b in zip(errors[:-1], errors[1:])]
