"""Structured tetrahedral beam mesh and P1 elasticity assembly."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# release of the ramp load is detected with this relative slack so that
# accumulated n*dt rounding does not shift it by one step
RELEASE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class BeamMesh:
    Lx: float
    Ly: float
    Lz: float
    nx: int
    ny: int
    nz: int
    nodes: np.ndarray          # (n_nodes, 3)
    tets: np.ndarray           # (n_tets, 4)
    dirichlet_facets: np.ndarray  # (n, 3) node triples on x = 0
    neumann_facets: np.ndarray    # (n, 3) node triples on x = Lx
    dirichlet_owner: np.ndarray   # owning tet of each facet
    neumann_owner: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    def volumes(self) -> np.ndarray:
        x = self.nodes[self.tets]
        d = x[:, 1:] - x[:, :1]
        return np.linalg.det(d) / 6.0

    def to_dict(self) -> dict:
        return {
            "dimensions": [self.Lx, self.Ly, self.Lz],
            "subdivisions": [self.nx, self.ny, self.nz],
            "nodes": self.nodes.tolist(),
            "tets": self.tets.tolist(),
            "facets": {
                "dirichlet": self.dirichlet_facets.tolist(),
                "neumann": self.neumann_facets.tolist(),
            },
        }


def _kuhn_tets() -> list[tuple[int, ...]]:
    """Six tets of the unit cube, one per axis ordering of the 000->111 path.
    Corners are numbered i + 2j + 4k."""
    out = []
    for perm in itertools.permutations(range(3)):
        c = np.zeros(3, dtype=int)
        path = [0]
        for ax in perm:
            c[ax] = 1
            path.append(int(c[0] + 2 * c[1] + 4 * c[2]))
        out.append(tuple(path))
    return out


def build_mesh(Lx: float, Ly: float, Lz: float, nx: int, ny: int, nz: int) -> BeamMesh:
    if min(Lx, Ly, Lz) <= 0:
        raise ValueError("beam dimensions must be positive")
    if min(nx, ny, nz) < 1:
        raise ValueError("subdivisions must be >= 1")
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    zs = np.linspace(0.0, Lz, nz + 1)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(order="F"), J.ravel(order="F"), K.ravel(order="F")
    corners = np.stack([nid(I + a, J + b, K + c) for c in (0, 1) for b in (0, 1) for a in (0, 1)], axis=1)
    local = np.array(_kuhn_tets())
    tets = corners[:, local].reshape(-1, 4)
    # fix orientation so every signed volume is positive
    x = nodes[tets]
    vol = np.linalg.det(x[:, 1:] - x[:, :1])
    neg = vol < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()

    faces = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])

    def facets_on(mask_nodes):
        tri, owner = [], []
        for f in faces:
            cand = tets[:, f]
            hit = np.all(mask_nodes[cand], axis=1)
            tri.append(cand[hit])
            owner.append(np.nonzero(hit)[0])
        tri = np.concatenate(tri)
        owner = np.concatenate(owner)
        order = np.argsort(owner, kind="stable")
        return tri[order], owner[order]

    tol = 1e-12 * Lx
    dtri, down = facets_on(np.abs(nodes[:, 0]) <= tol)
    ntri, nown = facets_on(np.abs(nodes[:, 0] - Lx) <= tol)
    return BeamMesh(Lx, Ly, Lz, nx, ny, nz, nodes, tets, dtri, ntri, down, nown)


@dataclass(frozen=True)
class MaterialParams:
    young_E: float = 1e3
    poisson_nu: float = 0.3
    rho: float = 1.0

    def __post_init__(self):
        if not self.young_E > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson_nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if not self.rho > 0:
            raise ValueError("density must be positive")

    @property
    def mu(self) -> float:
        return self.young_E / (2.0 * (1.0 + self.poisson_nu))

    @property
    def lam(self) -> float:
        nu = self.poisson_nu
        return self.young_E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


@dataclass(frozen=True)
class LoadSpec:
    kind: str = "bending"       # bending | extension
    magnitude: float = 1.0
    t_load: float = 0.8

    def __post_init__(self):
        if self.kind not in ("bending", "extension"):
            raise ValueError(f"unknown load kind {self.kind!r}")
        if not self.t_load > 0:
            raise ValueError("t_load must be positive")

    @property
    def direction(self) -> int:
        return 1 if self.kind == "bending" else 0

    def profile(self, t: float) -> float:
        if t < 0:
            raise ValueError("time must be non-negative")
        if t >= self.t_load * (1.0 - RELEASE_RTOL):
            return 0.0
        return self.magnitude * t / self.t_load


def isotropic_tensor(mu: float, lam: float, d: int = 3) -> np.ndarray:
    I = np.eye(d)
    return (lam * np.einsum("ij,kl->ijkl", I, I)
            + mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I)))


def _gradients(mesh: BeamMesh):
    x = mesh.nodes[mesh.tets]                    # (ne, 4, 3)
    A = np.concatenate([np.ones((mesh.n_tets, 4, 1)), x], axis=2)
    vol = np.linalg.det(A) / 6.0
    if np.any(vol <= 0):
        raise ValueError("inverted or degenerate element")
    G = np.linalg.inv(A)[:, 1:, :].transpose(0, 2, 1)  # (ne, 4 nodes, 3 dims)
    return G, vol


def _scatter(mesh: BeamMesh, Ke: np.ndarray) -> sp.csr_matrix:
    """Ke: (ne, 4, 3, 4, 3) element blocks -> global sparse (node*3+comp)."""
    n = 3 * mesh.n_nodes
    dof = (3 * mesh.tets[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    K = sp.coo_matrix((Ke.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def element_blocks(mesh: BeamMesh):
    """Per-element (sym-gradient, trace) stiffness blocks and volumes."""
    G, vol = _gradients(mesh)
    I3 = np.eye(3)
    GG = np.einsum("eak,ebk->eab", G, G)
    # eps(phi_a e_i) : eps(phi_b e_j) = 1/2 (delta_ij Ga.Gb + G_aj G_bi)
    Ksym = 0.5 * (np.einsum("eab,ij->eaibj", GG, I3) + np.einsum("eaj,ebi->eaibj", G, G))
    Ktr = np.einsum("eai,ebj->eaibj", G, G)
    return Ksym * vol[:, None, None, None, None], Ktr * vol[:, None, None, None, None], G, vol


def assemble_elastic_from_tensor(mesh: BeamMesh, C: np.ndarray) -> sp.csr_matrix:
    """K_C directly from the fourth-order tensor (independent of the split)."""
    G, vol = _gradients(mesh)
    Ke = np.einsum("eak,ikjl,ebl->eaibj", G, C, G) * vol[:, None, None, None, None]
    return _scatter(mesh, Ke)


@dataclass(eq=False)
class BeamAssembly:
    mesh: BeamMesh
    material: MaterialParams
    viscous: str
    viscous_scaling: str
    M: sp.csr_matrix
    K_C: sp.csr_matrix
    K_sym: sp.csr_matrix
    K_dev: sp.csr_matrix
    K_tr: sp.csr_matrix
    Obs: np.ndarray              # (3, n_free)
    face_load: np.ndarray        # (3, n_free): unit traction in each direction
    free: np.ndarray             # kept full DOF indices
    full: dict = field(default_factory=dict)

    @property
    def n_dof(self) -> int:
        return self.free.size

    @property
    def scale_eps(self) -> float:
        return 2.0 * self.material.mu if self.viscous_scaling == "moduli" else 1.0

    @property
    def scale_tr(self) -> float:
        return self.material.lam if self.viscous_scaling == "moduli" else 1.0

    @property
    def K_eps(self) -> sp.csr_matrix:
        """Operator paired with k_eps (deviatoric or full strain, times its modulus)."""
        K = self.K_dev if self.viscous == "deviatoric" else self.K_sym
        return K if self.scale_eps == 1.0 else (self.scale_eps * K).tocsr()

    @property
    def K_trace(self) -> sp.csr_matrix:
        """Operator paired with k_treps."""
        return self.K_tr if self.scale_tr == 1.0 else (self.scale_tr * self.K_tr).tocsr()

    def load_vector(self, spec: LoadSpec, t: float) -> np.ndarray:
        return spec.profile(t) * self.face_load[spec.direction]

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Reduced DOF vector -> full (n_nodes, 3) nodal field, zero on x = 0."""
        out = np.zeros(3 * self.mesh.n_nodes)
        out[self.free] = u_free
        return out.reshape(-1, 3)


def _face_weights(mesh: BeamMesh) -> tuple[np.ndarray, float]:
    """Nodal integration weights of the x = Lx face (area/3 per facet node)."""
    tri = mesh.neumann_facets
    x = mesh.nodes[tri]
    area = 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, tri.ravel(), np.repeat(area / 3.0, 3))
    return w, float(area.sum())


def assemble(mesh: BeamMesh, mat: MaterialParams, viscous: str = "deviatoric",
             viscous_scaling: str = "moduli") -> BeamAssembly:
    """P1 assembly with Dirichlet elimination on x = 0.

    ``viscous_scaling="moduli"`` weights the memory terms by the Lame moduli,
    sigma_visc = 2 mu k_eps * eps_d(u_t) + lam k_treps * I tr eps(u_t);
    ``"unit"`` leaves them unweighted.
    """
    if viscous not in ("deviatoric", "identity"):
        raise ValueError("viscous must be 'deviatoric' or 'identity'")
    if viscous_scaling not in ("moduli", "unit"):
        raise ValueError("viscous_scaling must be 'moduli' or 'unit'")
    Ksym_e, Ktr_e, G, vol = element_blocks(mesh)
    K_sym = _scatter(mesh, Ksym_e)
    K_tr = _scatter(mesh, Ktr_e)
    K_dev = (K_sym - K_tr / 3.0).tocsr()
    K_C = (2.0 * mat.mu * K_sym + mat.lam * K_tr).tocsr()
    # consistent P1 mass, rho V / 20 (1 + delta_ab) per component
    Mab = (np.ones((4, 4)) + np.eye(4)) / 20.0
    Me = np.einsum("e,ab,ij->eaibj", mat.rho * vol, Mab, np.eye(3))
    M = _scatter(mesh, Me)

    fixed_nodes = np.unique(mesh.dirichlet_facets)
    is_fixed = np.zeros(3 * mesh.n_nodes, dtype=bool)
    is_fixed[(3 * fixed_nodes[:, None] + np.arange(3)).ravel()] = True
    free = np.nonzero(~is_fixed)[0]

    def reduce(A):
        return A[free][:, free].tocsr()

    w, area = _face_weights(mesh)
    face_load = np.zeros((3, 3 * mesh.n_nodes))
    Obs = np.zeros((3, 3 * mesh.n_nodes))
    for c in range(3):
        face_load[c, c::3] = w
        Obs[c, c::3] = w / area
    full = {"M": M, "K_C": K_C, "K_sym": K_sym, "K_dev": K_dev, "K_tr": K_tr,
            "Obs": Obs, "face_load": face_load}
    return BeamAssembly(mesh, mat, viscous, viscous_scaling, reduce(M), reduce(K_C), reduce(K_sym),
                        reduce(K_dev), reduce(K_tr), Obs[:, free], face_load[:, free],
                        free, full)


def load_vector(asm: BeamAssembly, spec: LoadSpec, t: float) -> np.ndarray:
    return asm.load_vector(spec, t)


def boundary_nodes(mesh: BeamMesh) -> np.ndarray:
    x = mesh.nodes
    tol = 1e-12 * max(mesh.Lx, mesh.Ly, mesh.Lz)
    on = np.zeros(mesh.n_nodes, dtype=bool)
    for ax, L in enumerate((mesh.Lx, mesh.Ly, mesh.Lz)):
        on |= (np.abs(x[:, ax]) <= tol) | (np.abs(x[:, ax] - L) <= tol)
    return np.nonzero(on)[0]
