"""polymicro: 2D micromechanics on polygonal meshes.

Lowest-order virtual elements on arbitrary polygons, a collocation
boundary-element solver for inclusions condensed to super-elements,
stochastic microstructure generators, computational homogenization with
analytic bounds, and damage/crack-growth drivers with crack-band and
nonlocal regularization.
"""

from polymicro.mesh import (
    ElementGeometry,
    PolyElement,
    PolygonalMesh,
    Region,
    boundary_extract,
    field_error_metrics,
    polygon_geometry,
    read_pmesh,
    validate_mesh,
    write_pmesh,
)
from polymicro.materials import (
    DamageParams,
    DamageState,
    ReducedElasticity,
    cubic_plane_strain,
    damage_law,
    damage_update,
    equivalent_strain,
    isotropic_matrix,
    rotate_reduced,
)
from polymicro.vem import (
    consistency_stiffness,
    element_stiffness,
    element_stress,
    load_vectors,
    projector_matrix,
    stability_matrix,
)

__version__ = "0.1.0"
