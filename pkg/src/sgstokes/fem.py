"""Taylor-Hood P2/P1 assembly on structured meshes.

Velocity dofs are blocked by component: all interior x-components first, then
all interior y-components. Boundary velocity dofs are eliminated; their
Dirichlet values enter the right-hand side through a lifting.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# 7-point symmetric rule on the triangle, exact for degree 5
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def p2_values(bary):
    """P2 shape functions at barycentric points, shape (nq, 6)."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.column_stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ])


def _bary_gradients(coords):
    """Gradients of the barycentric coordinates and areas for (nt, 3, 2) vertex arrays."""
    x0, x1, x2 = coords[:, 0], coords[:, 1], coords[:, 2]
    d1 = x1 - x0
    d2 = x2 - x0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1), 0.5 * det


def p2_gradients(bary, grad_l):
    """P2 shape-function gradients, shape (nt, nq, 6, 2)."""
    l = bary[None, :, :, None]                      # (1, nq, 3, 1)
    g = grad_l[:, None, :, :]                       # (nt, 1, 3, 2)
    verts = (4 * l - 1) * g                         # (nt, nq, 3, 2)
    e = lambda i, j: 4 * (l[:, :, i] * g[:, :, j] + l[:, :, j] * g[:, :, i])
    edges = np.stack([e(1, 2), e(2, 0), e(0, 1)], axis=2)
    return np.concatenate([verts, edges], axis=2)


def _eval_coeff(coeff, pts):
    if callable(coeff):
        vals = np.asarray(coeff(pts[..., 0], pts[..., 1]), dtype=float)
        vals = np.broadcast_to(vals, pts.shape[:-1])
    else:
        vals = np.full(pts.shape[:-1], float(coeff))
    if not np.all(np.isfinite(vals)):
        raise ValueError("coefficient evaluates to a non-finite value at a quadrature point")
    return vals


def element_stiffness(coords, coeff=1.0, degree=2):
    """Element stiffness matrices int c grad(phi_i).grad(phi_j) for P1 or P2.

    coords has shape (nt, 3, 2) or (3, 2); returns (nt, nloc, nloc).
    """
    coords = np.asarray(coords, dtype=float)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
    grad_l, area = _bary_gradients(coords)
    pts = np.einsum("qk,tkd->tqd", QUAD_BARY, coords)
    c = _eval_coeff(coeff, pts)                     # (nt, nq)
    if degree == 1:
        wc = c @ QUAD_WEIGHTS
        ke = np.einsum("tid,tjd->tij", grad_l, grad_l) * (area * wc)[:, None, None]
    elif degree == 2:
        gp = p2_gradients(QUAD_BARY, grad_l)        # (nt, nq, 6, 2)
        ke = np.einsum("q,tq,tqid,tqjd->tij", QUAD_WEIGHTS, c, gp, gp) * area[:, None, None]
    else:
        raise ValueError("degree must be 1 or 2")
    # exact symmetry of every element block makes the assembled matrix symmetric bitwise
    ke = 0.5 * (ke + np.swapaxes(ke, 1, 2))
    return ke[0] if single else ke


def assemble_scalar_stiffness(mesh, coeff=1.0):
    """Full scalar P2 stiffness over all lattice nodes (boundary included)."""
    coords = mesh.vertices[mesh.triangles]
    ke = element_stiffness(coords, coeff, degree=2)
    cells = mesh.p2_cells
    rows = np.repeat(cells, 6, axis=1).ravel()
    cols = np.tile(cells, (1, 6)).ravel()
    ns = len(mesh.p2_nodes)
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(ns, ns)).tocsr()
    K.sum_duplicates()
    return K


def _vector_block(K):
    return sp.block_diag([K, K], format="csr")


def assemble_weighted_vector_laplacian(mesh, coeff=1.0):
    """Reduced N_u x N_u vector Laplacian int c grad(u):grad(v) on interior dofs."""
    K = assemble_scalar_stiffness(mesh, coeff)
    idx = mesh.interior
    return _vector_block(K[idx][:, idx].tocsr())


def assemble_divergence_full(mesh):
    """N_p x 2*Ns matrix of -int q div(v) over all velocity nodes."""
    coords = mesh.vertices[mesh.triangles]
    grad_l, area = _bary_gradients(coords)
    gp = p2_gradients(QUAD_BARY, grad_l)            # (nt, nq, 6, 2)
    psi = QUAD_BARY                                 # P1 values at quadrature points
    # be[t, c, a, i] = -int psi_a d_c phi_i
    be = -np.einsum("q,qa,tqic->tcai", QUAD_WEIGHTS, psi, gp) * area[:, None, None, None]
    ns = len(mesh.p2_nodes)
    tri = mesh.triangles
    cells = mesh.p2_cells
    mats = []
    for c in range(2):
        rows = np.repeat(tri, 6, axis=1).ravel()
        cols = np.tile(cells, (1, 3)).ravel()
        mats.append(sp.coo_matrix((be[:, c].ravel(), (rows, cols)), shape=(mesh.n_p, ns)))
    B = sp.hstack(mats).tocsr()
    B.sum_duplicates()
    return B


def velocity_interior_index(mesh):
    ns = len(mesh.p2_nodes)
    return np.concatenate([mesh.interior, mesh.interior + ns])


def velocity_boundary_index(mesh):
    ns = len(mesh.p2_nodes)
    b = np.flatnonzero(mesh.boundary)
    return np.concatenate([b, b + ns])


def assemble_divergence(mesh):
    """Reduced N_p x N_u divergence matrix B (boundary velocity columns removed)."""
    return assemble_divergence_full(mesh)[:, velocity_interior_index(mesh)].tocsr()


def assemble_pressure_mass(mesh):
    """P1 mass matrix M_p and its diagonal D_p (returned as a 1-D array)."""
    coords = mesh.vertices[mesh.triangles]
    _, area = _bary_gradients(coords)
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = area[:, None, None] * local[None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    Mp = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(mesh.n_p, mesh.n_p)).tocsr()
    Mp.sum_duplicates()
    return Mp, Mp.diagonal().copy()


def lid_profile(x1):
    """Regularised lid velocity (1 - 16 x1^4, 0)."""
    x1 = np.asarray(x1, dtype=float)
    return np.stack([1.0 - 16.0 * x1 ** 4, np.zeros_like(x1)], axis=-1)


def boundary_lifting(mesh, profile=lid_profile):
    """Nodal lifting over all 2*Ns velocity nodes: lid data on top, zero elsewhere."""
    corners = np.asarray(profile(np.array([-0.5, 0.5])), dtype=float)
    if not np.allclose(corners, 0.0, atol=1e-12):
        raise ValueError("lid profile must vanish at the top corners to match the no-slip walls")
    ns = len(mesh.p2_nodes)
    u0 = np.zeros(2 * ns)
    x = mesh.p2_nodes
    top = mesh.boundary & np.isclose(x[:, 1], 0.5)
    vals = np.asarray(profile(x[top, 0]), dtype=float)
    u0[np.flatnonzero(top)] = vals[:, 0]
    u0[np.flatnonzero(top) + ns] = vals[:, 1]
    return u0


@dataclass
class FeMatrices:
    """Deterministic FE blocks of the SGFE system (reduced to interior velocity dofs)."""
    A_unweighted: sp.csr_matrix
    A0: sp.csr_matrix
    A_fluct: list
    B: sp.csr_matrix
    M_p: sp.csr_matrix
    D_p: np.ndarray
    rhs_f: np.ndarray = None
    rhs_t: np.ndarray = None
    lifting_u0: np.ndarray = None
    # load contributions -A_m[int, bdry] u0 of the fluctuation terms
    rhs_f_fluct: list = field(default_factory=list)
    # scalar (single component) blocks, used by the multigrid hierarchy
    K_unweighted: sp.csr_matrix = None
    K0: sp.csr_matrix = None

    @property
    def n_u(self):
        return self.A0.shape[0]

    @property
    def n_p(self):
        return self.M_p.shape[0]

    @property
    def M(self):
        return len(self.A_fluct)


def build_cavity_rhs(mesh, fem, profile=lid_profile, *, A0_full=None, A_fluct_full=(), B_full=None):
    """Right-hand sides of the homogenised cavity problem.

    Returns (rhs_f, rhs_t, lifting_u0) where rhs_f = -A0[int, :] u0 and
    rhs_t = -B u0 with B over all velocity nodes. The fluctuation loads
    -A_m[int, :] u0 are stored on ``fem.rhs_f_fluct`` when the full matrices
    are supplied.
    """
    u0 = boundary_lifting(mesh, profile)
    if A0_full is None or B_full is None:
        raise ValueError("full (unreduced) A0 and B are required to lift the boundary data")
    iu = velocity_interior_index(mesh)
    rhs_f = -(A0_full @ u0)[iu]
    rhs_t = -(B_full @ u0)
    fem.rhs_f_fluct = [-(Am @ u0)[iu] for Am in A_fluct_full]
    return rhs_f, rhs_t, u0


def assemble_fe_matrices(mesh, kle=None, profile=lid_profile):
    """Assemble A, A0, A_m, B, M_p, D_p and the cavity right-hand sides.

    ``kle`` supplies the mean viscosity and the weighted fluctuation fields;
    without it the viscosity is the constant 1 and there are no fluctuations.
    """
    iu = velocity_interior_index(mesh)
    idx = mesh.interior

    K1 = assemble_scalar_stiffness(mesh, 1.0)
    if kle is None:
        mean_coeff, fluct = 1.0, []
    else:
        mean_coeff, fluct = kle.mean_field, kle.fluctuation_fields()
    K0 = assemble_scalar_stiffness(mesh, mean_coeff)
    Km = [assemble_scalar_stiffness(mesh, f) for f in fluct]

    A0_full = _vector_block(K0)
    Am_full = [_vector_block(K) for K in Km]
    B_full = assemble_divergence_full(mesh)
    Mp, Dp = assemble_pressure_mass(mesh)

    reduce = lambda K: K[idx][:, idx].tocsr()
    fem = FeMatrices(
        A_unweighted=_vector_block(reduce(K1)),
        A0=_vector_block(reduce(K0)),
        A_fluct=[_vector_block(reduce(K)) for K in Km],
        B=B_full[:, iu].tocsr(),
        M_p=Mp,
        D_p=Dp,
        K_unweighted=reduce(K1),
        K0=reduce(K0),
    )
    fem.rhs_f, fem.rhs_t, fem.lifting_u0 = build_cavity_rhs(
        mesh, fem, profile, A0_full=A0_full, A_fluct_full=Am_full, B_full=B_full
    )
    return fem
