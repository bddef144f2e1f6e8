"""
Experiment Configuration

Static defaults for the five reference experiments: computational box,
final time, diffusion coefficient and a short description. The analytic
fields themselves live in ``app.services.experiment_service``.
"""

from typing import Any, Dict, List, Tuple

Box = Tuple[Tuple[float, float], Tuple[float, float], Tuple[float, float]]

UNIT_BOX: Box = ((-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0))
MERGE_BOX: Box = ((-3.0, 3.0), (-2.0, 2.0), (-2.0, 2.0))

# Experiment defaults
EXPERIMENTS: Dict[int, Dict[str, Any]] = {
    1: {
        "name": "translating_sphere",
        "description": "Unit sphere translated with constant velocity (0.2, 0, 0)",
        "box": UNIT_BOX,
        "T": 1.0,
        "nu": 1.0,
    },
    2: {
        "name": "rotating_sphere",
        "description": "Off-centre unit sphere revolving about the x3 axis",
        "box": UNIT_BOX,
        "T": 1.0,
        "nu": 1.0,
    },
    3: {
        "name": "shrinking_sphere",
        "description": "Sphere shrinking with radius exp(-t/2), with a source term",
        "box": UNIT_BOX,
        "T": 1.0,
        "nu": 1.0,
    },
    4: {
        "name": "deforming_manifold",
        "description": "Non-convex manifold deformed by a time-periodic velocity; mass conserved",
        "box": UNIT_BOX,
        "T": 6.0,
        "nu": 1.0,
    },
    5: {
        "name": "merging_spheres",
        "description": "Two spheres merging into one (topology change)",
        "box": MERGE_BOX,
        "T": 1.0,
        "nu": 1.0,
    },
}


def get_experiment_ids() -> List[int]:
    """
    Get the ids of all configured experiments.

    Returns:
        List[int]: Sorted experiment ids
    """
    return sorted(EXPERIMENTS)


def get_experiment_defaults(experiment_id: int) -> Dict[str, Any]:
    """
    Get the default settings of one experiment.

    Args:
        experiment_id (int): Experiment number (1..5)

    Returns:
        Dict[str, Any]: Copy of the experiment defaults

    Raises:
        KeyError: If the experiment id is unknown
    """
    if experiment_id not in EXPERIMENTS:
        raise KeyError(f"Unknown experiment id: {experiment_id}")
    return dict(EXPERIMENTS[experiment_id])


def get_experiment_box(experiment_id: int) -> Box:
    """Axis-aligned bounds of the computational domain of an experiment."""
    return get_experiment_defaults(experiment_id)["box"]
