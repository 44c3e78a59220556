"""Saddle-point solvers and stability estimators.

MINRES follows the short-recurrence preconditioned Lanczos/Givens scheme and
tracks the preconditioned residual norm |eta| at every step.
"""
from dataclasses import asdict, dataclass, field
import json
import logging
import time
import warnings

import numpy as np
import pymetis
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .spaces import FieldCoefficients, shift_pressure_mean

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DIRECT_LIMIT = 20_000


class SolverError(RuntimeError):
    pass


class PreconditionerBreakdown(SolverError):
    """The preconditioner produced a non-positive inner product."""


# ---------------------------------------------------------------------------
# operators

class SaddleOperator(spla.LinearOperator):
    """Action of [[A, B^T], [B, 0]] on stacked (velocity, pressure) vectors."""

    def __init__(self, A, B):
        self.A = sp.csr_matrix(A)
        self.B = sp.csr_matrix(B)
        self.BT = self.B.T.tocsr()
        self.nu_ = A.shape[0]
        n = A.shape[0] + B.shape[0]
        super().__init__(dtype=float, shape=(n, n))

    def _matvec(self, x):
        x = np.ravel(x)
        u, p = x[:self.nu_], x[self.nu_:]
        return np.concatenate([self.A @ u + self.BT @ p, self.B @ u])

    def tocsr(self):
        return sp.bmat([[self.A, self.BT], [self.B, None]], format="csr")


def spd_factor(A):
    """Sparse factorization of a symmetric positive definite matrix.

    A METIS nested-dissection ordering with symmetric-mode SuperLU (no
    pivoting) keeps the fill close to that of a Cholesky factorization.
    Returns a callable solving A x = b.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if n == 0:
        return lambda b: np.zeros(0)
    G = A.copy()
    G.setdiag(0)
    G.eliminate_zeros()
    G = (G + G.T).tocsr()
    if G.nnz:
        perm, _ = pymetis.nested_dissection(pymetis.CSRAdjacency(G.indptr, G.indices))
        perm = np.asarray(perm)
    else:
        perm = np.arange(n)
    lu = spla.splu(sp.csc_matrix(A[perm][:, perm]), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})

    def solve(b):
        x = np.empty_like(b, dtype=float)
        x[perm] = lu.solve(np.asarray(b, dtype=float)[perm])
        return x

    solve.fill = lu.L.nnz + lu.U.nnz
    return solve


@dataclass
class PreconditionerConfig:
    """Block-diagonal preconditioner diag(A_hat, M_p / nu).

    velocity_block : "exact" (sparse factorization of A), "jacobi", or
        "inner-cg" (CG on A to ``inner_tol``; non-linear unless converged tightly)
    pressure_block : "mass-matrix-inner-cg" (exact solve with the block-diagonal
        pressure mass matrix) or "mass-matrix-diagonal"
    """
    velocity_block: str = "exact"
    pressure_block: str = "mass-matrix-inner-cg"
    inner_tol: float = 1e-2
    inner_max_iters: int = 50
    nu_scaling: bool = True

    def __post_init__(self):
        if self.velocity_block not in ("exact", "jacobi", "inner-cg"):
            raise ValueError(f"unknown velocity block {self.velocity_block!r}")
        if self.pressure_block not in ("mass-matrix-inner-cg", "mass-matrix-diagonal"):
            raise ValueError(f"unknown pressure block {self.pressure_block!r}")


class BlockPreconditioner(spla.LinearOperator):
    def __init__(self, A, Mp, config, nu=1.0):
        self.config = config
        self.n_u = A.shape[0]
        n = A.shape[0] + Mp.shape[0]
        super().__init__(dtype=float, shape=(n, n))
        vb = config.velocity_block
        if vb == "exact":
            self._solve_u = spd_factor(A)
        elif vb == "jacobi":
            d = A.diagonal()
            if np.any(d <= 0):
                raise PreconditionerBreakdown("non-positive diagonal in velocity block")
            self._solve_u = lambda r: r / d
        else:
            def _cg(r, A=A, cfg=config):
                x, _ = spla.cg(A, r, rtol=cfg.inner_tol, maxiter=cfg.inner_max_iters)
                return x
            self._solve_u = _cg
        scale = nu if config.nu_scaling else 1.0
        Mp = sp.csr_matrix(Mp)
        if config.pressure_block == "mass-matrix-diagonal":
            dp = Mp.diagonal()
            self._solve_p = lambda r: scale * r / dp
        else:
            self._solve_p = _block_diagonal_solver(Mp, scale)

    def _matvec(self, r):
        r = np.ravel(r)
        return np.concatenate([self._solve_u(r[:self.n_u]), self._solve_p(r[self.n_u:])])


def _block_diagonal_solver(M, scale):
    """Exact inverse of a matrix that is block diagonal with equal block sizes."""
    n = M.shape[0]
    M = M.tocsr()
    bs = int(np.diff(M.indptr).max()) if n else 1
    if n % bs:
        lu = spla.splu(sp.csc_matrix(M))
        return lambda r: scale * lu.solve(r)
    dense = np.zeros((n // bs, bs, bs))
    rows, cols = M.nonzero()
    blk = rows // bs
    if np.any(cols // bs != blk):
        lu = spla.splu(sp.csc_matrix(M))
        return lambda r: scale * lu.solve(r)
    dense[blk, rows % bs, cols % bs] = np.asarray(M[rows, cols]).ravel()
    inv = np.linalg.inv(dense)
    return lambda r: scale * np.einsum("eab,eb->ea", inv, r.reshape(-1, bs)).ravel()


def probe_spd(P, n_samples=100, seed=0):
    """min over random x of <Px, x>/<x, x>; positive for an SPD preconditioner."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_samples):
        x = rng.standard_normal(P.shape[0])
        worst = min(worst, float(x @ (P @ x)) / float(x @ x))
    return worst


# ---------------------------------------------------------------------------
# MINRES

@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    seconds: float
    div_norm: float = float("nan")
    converged: bool = True
    residual_history: list = field(default_factory=list)
    method: str = "minres"

    def to_json(self, path=None):
        data = asdict(self)
        text = json.dumps(data, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def minres(K, b, M=None, tol=DEFAULT_TOL, max_iters=1000, x0=None):
    """Preconditioned MINRES for symmetric K and SPD preconditioner action M.

    Returns (x, history, converged) where history holds |eta_j| / |eta_0|,
    the relative residual in the M-norm.
    """
    n = len(b)
    applyK = K.matvec if hasattr(K, "matvec") else (lambda v: K @ v)
    applyM = (lambda v: v) if M is None else (M.matvec if hasattr(M, "matvec") else M)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    v_old = np.zeros(n)
    v = b - applyK(x) if x0 is not None else np.array(b, dtype=float)
    z = applyM(v)
    g2 = float(z @ v)
    if g2 < 0:
        raise PreconditionerBreakdown("preconditioner is not positive definite")
    gamma = np.sqrt(g2)
    history = [1.0]
    if gamma == 0.0:
        return x, history, True
    gamma_old = 1.0
    eta0 = eta = gamma
    c_old = c = 1.0
    s_old = s = 0.0
    w_old = np.zeros(n)
    w = np.zeros(n)
    for _ in range(max_iters):
        z = z / gamma
        Kz = applyK(z)
        delta = float(Kz @ z)
        v_new = Kz - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = applyM(v_new)
        g2 = float(z_new @ v_new)
        if g2 < -1e-14 * abs(delta) * gamma:
            raise PreconditionerBreakdown("preconditioner is not positive definite")
        gamma_new = np.sqrt(max(g2, 0.0))
        a0 = c * delta - c_old * s * gamma
        a1 = np.hypot(a0, gamma_new)
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        c_new, s_new = a0 / a1, gamma_new / a1
        w_new = (z - a3 * w_old - a2 * w) / a1
        x = x + c_new * eta * w_new
        eta = -s_new * eta
        history.append(abs(eta) / eta0)
        v_old, v, z = v, v_new, z_new
        w_old, w = w, w_new
        gamma_old, gamma = gamma, gamma_new
        c_old, c, s_old, s = c, c_new, s, s_new
        if history[-1] <= tol or gamma == 0.0:
            return x, history, True
    return x, history, False


def _reduced_rhs(system):
    A, B, rf, rp = system.reduced()
    c = system.dofmap.constant_pressure_vector()
    # the constant pressure mode is in the kernel of B_f^T; keep rhs consistent
    rp = rp - c * (c @ rp) / (c @ c)
    return A, B, rf, rp


def _finish(system, uf, p):
    u = system.constraints.expand(uf)
    p = shift_pressure_mean(p, system.cmesh, system.dofmap)
    return FieldCoefficients(u, p)


def minres_solve(system, precond=None, tol=DEFAULT_TOL, max_iters=2000):
    """Solve the constrained Stokes system with block-preconditioned MINRES."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    precond = precond or PreconditionerConfig()
    t0 = time.perf_counter()
    A, B, rf, rp = _reduced_rhs(system)
    K = SaddleOperator(A, B)
    P = BlockPreconditioner(A, system.pressure_mass, precond, system.viscosity)
    rhs = np.concatenate([rf, rp])
    x, hist, ok = minres(K, rhs, P, tol=tol, max_iters=max_iters)
    if np.any(np.diff(hist) > 1e-12):
        warnings.warn("MINRES residual history is not monotone", RuntimeWarning)
    n = A.shape[0]
    sol = _finish(system, x[:n], x[n:])
    report = SolveReport(len(hist) - 1, hist[-1], time.perf_counter() - t0,
                         converged=ok, residual_history=hist)
    if not ok:
        logger.warning("MINRES stopped after %d iterations at %.2e", report.iterations, hist[-1])
    return sol, report


def direct_solve(system):
    """Dense symmetric-indefinite solve with a bordering row fixing the pressure mode."""
    A, B, rf, rp = _reduced_rhs(system)
    n, m = A.shape[0], B.shape[0]
    if n + m > DIRECT_LIMIT:
        raise ValueError(f"direct_solve is limited to {DIRECT_LIMIT} unknowns, got {n + m}")
    t0 = time.perf_counter()
    c = system.pressure_mass @ system.dofmap.constant_pressure_vector()
    K = np.zeros((n + m + 1, n + m + 1))
    K[:n, :n] = A.toarray()
    K[n:n + m, :n] = B.toarray()
    K[:n, n:n + m] = K[n:n + m, :n].T
    K[n:n + m, -1] = c
    K[-1, n:n + m] = c
    rhs = np.concatenate([rf, rp, [0.0]])
    try:
        x = sla.solve(K, rhs, assume_a="sym")
    except (sla.LinAlgError, ValueError) as exc:
        raise SolverError(f"singular saddle system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("singular saddle system (missing constraints?)")
    sol = _finish(system, x[:n], x[n:n + m])
    res = np.linalg.norm(K @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return sol, SolveReport(0, float(res), time.perf_counter() - t0, method="direct")


def sparse_direct_solve(system):
    """Sparse LU of the bordered system; used when the dense oracle is too large."""
    A, B, rf, rp = _reduced_rhs(system)
    n, m = A.shape[0], B.shape[0]
    t0 = time.perf_counter()
    c = system.pressure_mass @ system.dofmap.constant_pressure_vector()
    K = sp.bmat([[A, B.T, None], [B, None, sp.csr_matrix(c[:, None])],
                 [None, sp.csr_matrix(c[None, :]), None]], format="csc")
    x = spla.spsolve(K, np.concatenate([rf, rp, [0.0]]))
    sol = _finish(system, x[:n], x[n:n + m])
    return sol, SolveReport(0, float("nan"), time.perf_counter() - t0, method="sparse-direct")


# ---------------------------------------------------------------------------
# estimators

def _block_cholesky(M):
    """Cholesky factors of the diagonal blocks of a block-diagonal matrix."""
    M = sp.csr_matrix(M)
    n = M.shape[0]
    bs = int(np.diff(M.indptr).max())
    rows, cols = M.nonzero()
    if n % bs or np.any(rows // bs != cols // bs):
        raise ValueError("matrix is not block diagonal with uniform blocks")
    dense = np.zeros((n // bs, bs, bs))
    dense[rows // bs, rows % bs, cols % bs] = np.asarray(M[rows, cols]).ravel()
    return np.linalg.cholesky(dense)


def estimate_inf_sup(B, E, Mp, constant=None, dense_limit=2500, null_tol=1e-8):
    """Discrete inf-sup constant: sqrt of the smallest eigenvalue of B E^{-1} B^T vs M_p.

    B, E : divergence block and energy Gram on the velocity space in use;
    Mp : pressure mass matrix; ``constant`` : coefficients of the constant
    pressure, excluded from the minimum (it lies in the kernel of B^T on the
    zero-normal-trace space).
    """
    m = B.shape[0]
    if m <= dense_limit:
        Bd = B.toarray()
        S = Bd @ sla.solve(E.toarray(), Bd.T, assume_a="pos")
        S = 0.5 * (S + S.T)
        lam = sla.eigh(S, Mp.toarray(), eigvals_only=True)
        pos = lam[lam > null_tol * max(lam.max(), 1.0)]
        if not pos.size:
            raise SolverError("no positive inf-sup eigenvalue")
        return float(np.sqrt(pos.min()))
    # symmetric form L^{-1} B E^{-1} B^T L^{-T} with M_p = L L^T block by block
    L = _block_cholesky(Mp)
    bs = L.shape[1]
    solveE = spd_factor(E)
    BT = sp.csr_matrix(B.T)

    def linv(y):
        return np.linalg.solve(L, y.reshape(-1, bs)[..., None])[..., 0].ravel()

    def linvT(y):
        return np.linalg.solve(np.transpose(L, (0, 2, 1)), y.reshape(-1, bs)[..., None])[..., 0].ravel()

    shift = None
    if constant is not None:
        yc = np.einsum("eba,eb->ea", L, np.asarray(constant).reshape(-1, bs)).ravel()  # L^T c
        yc /= np.linalg.norm(yc)
        shift = (yc, 100.0)

    def matvec(y):
        y = np.ravel(y)
        out = linv(B @ solveE(BT @ linvT(y)))
        if shift is not None:
            out = out + shift[1] * shift[0] * (shift[0] @ y)
        return out

    op = spla.LinearOperator((m, m), matvec=matvec, dtype=float)
    try:
        vals = spla.eigsh(op, k=2, which="SA", tol=1e-8, ncv=40, return_eigenvectors=False)
    except Exception as exc:  # pragma: no cover - ARPACK failures
        raise SolverError(f"eigensolve failed: {exc}") from exc
    pos = vals[vals > null_tol]
    if not pos.size:
        raise SolverError("no positive inf-sup eigenvalue")
    return float(np.sqrt(pos.min()))


def estimate_coercivity(A_dg, E, dense_limit=4000, shift=-1.0):
    """min over v of a_DG(v, v) / ||v||^2, the smallest generalized eigenvalue.

    Large problems use shift-invert Lanczos about ``shift``, which returns the
    eigenvalue nearest the shift; the shift is pushed down until it lies below
    the value found, so the result is the bottom of the spectrum.
    """
    n = A_dg.shape[0]
    if n <= dense_limit:
        lam = sla.eigh(A_dg.toarray(), E.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(lam[0])
    A_dg = sp.csr_matrix(A_dg)
    E = sp.csr_matrix(E)
    sigma = float(shift)
    for _ in range(6):
        solve = spd_factor(A_dg - sigma * E)
        op = spla.LinearOperator((n, n), matvec=solve, dtype=float)
        v0 = np.random.default_rng(0).standard_normal(n)
        lam = spla.eigsh(A_dg, k=1, M=E, sigma=sigma, which="LM", OPinv=op, v0=v0,
                         return_eigenvectors=False)
        lam = float(lam[0])
        if lam > sigma:
            return lam
        sigma = 2.0 * lam
    return lam
