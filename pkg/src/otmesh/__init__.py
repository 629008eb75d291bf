"""otmesh: meshes and polylines as probability measures, compared with
sliced-Wasserstein, Chamfer and Sinkhorn discrepancies (with analytic
gradients) and deformed by vertex displacements or a diffeomorphic ODE
flow."""

from .deform import (
    DisplacementModel,
    DivergenceError,
    FlowConfig,
    LossSpec,
    OptimizerConfig,
    RBFVelocityField,
    farthest_point_subset,
    flow_gradient,
    integrate_flow,
    integrate_flow_with_tape,
    optimize,
)
from .intersect import (
    contour_crossing_count,
    polyline_crossing_count,
    self_intersecting_faces,
    self_intersection_ratio,
    triangles_intersect,
)
from .measures import (
    DiscreteMeasure,
    SamplerState,
    derive_seed,
    load_measure_csv,
    mesh_to_varifold,
    sample_mesh,
    sample_polyline,
    save_measure_csv,
    varifold_vertex_grad,
)
from .mesh import (
    FaceGeometry,
    MeshError,
    MeshParseError,
    Polyline2D,
    TriangleMesh,
    face_geometry,
    load_mesh,
    save_mesh,
    validate,
)
from .metrics import MetricReport, evaluate
from .transport import (
    LossValueGrad,
    ProjectionSet,
    SinkhornWarning,
    chamfer,
    regularizer_suite,
    sample_directions,
    sinkhorn_divergence,
    sliced_wasserstein,
    wasserstein_1d,
)

__version__ = "0.1.0"
