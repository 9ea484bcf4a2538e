import numpy as np

from ddcre.elasticity import assemble_system, solve_monolithic
from ddcre.mesh import build_gamma_mesh, partition_mesh
from ddcre.substructuring import build_subdomains, operators_for


def local_dofs(sd):
    """Global dof of every free local dof of a subdomain."""
    return (2 * sd.nodes[:, None] + np.arange(2)).ravel()[sd.free]


def relative_energy_error(subs, u_loc, u_global):
    """Broken energy distance between local fields and a global field."""
    num = den = 0.0
    for sd, x in zip(subs, u_loc):
        ref = u_global[local_dofs(sd)]
        d = x - ref
        num += d @ (sd.K @ d)
        den += ref @ (sd.K @ ref)
    return float(np.sqrt(num / den))


def gamma_case(m, nsd, hooke, loads):
    mesh = build_gamma_mesh(m)
    system = assemble_system(mesh, hooke, loads)
    u = solve_monolithic(system)
    part = partition_mesh(mesh, nsd)
    subs = build_subdomains(mesh, part, hooke, loads)
    return mesh, part, subs, operators_for(subs), u
