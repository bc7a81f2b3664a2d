"""Meshfree incompressible flow solver on scattered nodes.

Local moving-least-squares fits supply derivative rows, a virtual staggered
stencil supplies conservative convection, divergence and pressure gradient,
and a second-order fractional-step scheme advances the flow.
"""

from .mls import MlsParams, ShapeRow, apply, build_shape_row, neighbor_query, select_dilation, weight
from .nodes import (
    BumpyBody,
    DomainSpec,
    NodeSet,
    Tag,
    bumpy_radius,
    gen_cylinder_domain,
    gen_rectangle_nodes,
    gen_triangle_nodes,
)
from .solver import (
    BcSpec,
    Discretization,
    FlowState,
    NsSolver,
    SolverError,
    SparseOperator,
    ZeroGradient,
    assemble_helmholtz,
    assemble_laplacian,
    apply_bcs,
    bc_cavity,
    bc_cylinder,
    bc_profiles,
    bc_wedge,
    boundary_values,
    compute_rhs,
    linear_solve,
)
from .stencil import (
    StencilTable,
    VipStencil,
    build_stencil,
    convection,
    divergence_star,
    gradient_phi,
    interp_at_vips,
)

__version__ = "0.1.0"
