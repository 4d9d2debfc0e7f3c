"""Numerical laboratory for Denjoy-type rigidity of torus diffeomorphisms."""

__version__ = "0.1.0"

from .confspace import (  # noqa: F401
    ConformalStructure,
    act,
    base_point,
    beltrami,
    conf_dist,
    dilatation,
    dist_to_base,
    normalize,
)
from .dynamics import (  # noqa: F401
    cocycle,
    denjoy_circle,
    iterate,
    rotation_vector,
    translation_map,
)
from .blowup import (  # noqa: F401
    BallSystem,
    DistortionProfile,
    build_ball_system,
    chord_half_length,
    collapse,
    similarity_map,
    synthetic_jacobian_field,
)
from .distortion import (  # noqa: F401
    fit_per_ball_constant,
    trace_cocycle_distortion,
    verify_lemma1_bound,
    volume_sum,
)
from .trap import (  # noqa: F401
    TrapParams,
    contradiction_report,
    estimate_lambda_prime,
    find_trap_time,
    locate_fixed_point,
    verify_inclusion,
)
