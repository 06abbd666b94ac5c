"""Concentrated steady vortex flows in bounded planar domains.

Modules:

- ``geometry``: domains, grids, fields, Green/Robin functions and the Green operator.
- ``rearrangement``: radial profiles, quantized rearrangement classes, bathtub maximizer.
- ``pointvortex``: Kirchhoff-Routh function, its minimizers and point-vortex dynamics.
- ``steady``: energy-maximizing steady states and their diagnostics.
- ``dynamics``: semi-Lagrangian vorticity evolution and stability runs.
- ``cli``: configuration files, sweeps and the ``vortexcore`` command.
"""
from .geometry import (
    DomainSpec,
    Grid,
    GreenSolveError,
    ScalarField,
    VectorField,
    apply_green,
    build_grid,
    green,
    kinetic_energy,
    read_vxf,
    robin,
    robin_fd,
    velocity,
    write_vxf,
)
from .rearrangement import (
    ParcelList,
    RadialProfile,
    bathtub_maximize,
    quantize_profile,
    same_rearrangement,
    symmetric_decreasing,
)
from .pointvortex import (
    KR_NORMALIZATION,
    KRDescentError,
    VortexConfiguration,
    kr_gradient,
    kr_local_min,
    kr_value,
    pv_integrate,
)
from .steady import (
    Blob,
    ProblemSpec,
    ProfileFunction,
    SteadySolution,
    lagrange_multiplier,
    separation_check,
    solve_profile_steady,
    solve_steady,
    steadiness_residual,
    vortex_core,
)
from .dynamics import (
    CFLError,
    EvolutionConfig,
    conservation_report,
    evolve,
    perturb,
    stability_experiment,
)

__version__ = "0.1.0"
