"""Staggered-grid fields, masks and discrete operators.

The flow lives on a MAC layout over the square [-R, R]^2: u2 on faces normal
to x2 (shape (n+1, n)), u3 on faces normal to x3 (shape (n, n+1)), pressure
at cell centers (n, n).  Index 0 of every array runs along x2.

Only the disk |x| < R is computational: cells whose center lies outside are
"outer" and every face touching them is pinned to zero, which turns the
square array into a stairstep disk.  The body is a second stairstep region
*inside* the active disk; it is never excluded from the solves (the
penalization stage, elsewhere, softly enforces rigid motion there).

Operator conventions that the rest of the package relies on:

* divergence and gradient are exact negative adjoints on pinned fields,
* the u2<->u3 four-point interpolations are exact transposes of each other,
* 2||D(u)||^2 = ||grad u||^2 + ||div u||^2 exactly on pinned fields,
* the perp-gradient of any corner scalar is exactly divergence-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError


# ---------------------------------------------------------------------------
# grid and masks
# ---------------------------------------------------------------------------

class Grid:
    """Geometry-carrying MAC grid over [-R, R]^2 with n cells per side."""

    def __init__(self, R, n):
        if n < 32:
            raise ConfigError("grid must have at least 32 cells per side")
        if not R > 0:
            raise ConfigError("grid radius must be positive")
        self.R = float(R)
        self.n = int(n)
        self.h = 2.0 * self.R / self.n
        r, h = self.R, self.h
        self.xc = -r + (np.arange(n) + 0.5) * h        # cell centers (1d)
        self.xf = -r + np.arange(n + 1) * h            # face/corner lines

        cc2, cc3 = np.meshgrid(self.xc, self.xc, indexing="ij")
        self.cell_x2, self.cell_x3 = cc2, cc3
        self.active_c = cc2 ** 2 + cc3 ** 2 < r * r    # inside outer disk
        self.outer_c = ~self.active_c

        # face activity: both adjacent cells active (array edge counts as
        # inactive); pinned faces hold u = 0 for the whole run
        a = self.active_c
        self.active_u2 = np.zeros((n + 1, n), dtype=bool)
        self.active_u2[1:n, :] = a[:-1, :] & a[1:, :]
        self.active_u3 = np.zeros((n, n + 1), dtype=bool)
        self.active_u3[:, 1:n] = a[:, :-1] & a[:, 1:]

        # coordinates of face centers and corners
        self.u2_x2, self.u2_x3 = np.meshgrid(self.xf, self.xc, indexing="ij")
        self.u3_x2, self.u3_x3 = np.meshgrid(self.xc, self.xf, indexing="ij")
        self.corner_x2, self.corner_x3 = np.meshgrid(self.xf, self.xf,
                                                     indexing="ij")

        self.geometry = None
        self.body_c = np.zeros((n, n), dtype=bool)
        self.body_u2 = np.zeros((n + 1, n), dtype=bool)
        self.body_u3 = np.zeros((n, n + 1), dtype=bool)
        self._poisson = None
        self._diffusion = {}

    # -- body ---------------------------------------------------------------

    def attach_body(self, geometry):
        """Rasterize the body onto cell and face masks (stairstep)."""
        if geometry.bounding_radius() >= self.R:
            raise ConfigError("body crosses the outer disk boundary")
        if not self.R > 3.0 * geometry.cutoff_radius:
            raise ConfigError(
                "outer radius must exceed three cutoff radii "
                f"(R={self.R}, cutoff={geometry.cutoff_radius})")
        self.geometry = geometry
        self.body_c = geometry.contains(self.cell_x2, self.cell_x3)
        self.body_u2 = geometry.contains(self.u2_x2, self.u2_x3)
        self.body_u3 = geometry.contains(self.u3_x2, self.u3_x3)
        if not self.body_c.any():
            raise ConfigError("body rasterizes to an empty cell set")
        got = self.body_c.sum() * self.h ** 2
        want = geometry.area()
        if abs(got - want) > 6.0 * self.h * np.sqrt(want):
            raise ConfigError(
                f"rasterized body area {got:.4g} is too far from "
                f"geometric area {want:.4g}; grid too coarse for the body")
        return self

    @property
    def fluid_c(self):
        return self.active_c & ~self.body_c

    @property
    def fluid_u2(self):
        return self.active_u2 & ~self.body_u2

    @property
    def fluid_u3(self):
        return self.active_u3 & ~self.body_u3

    @property
    def corner_fluid(self):
        r2 = self.corner_x2 ** 2 + self.corner_x3 ** 2
        mask = r2 < self.R ** 2
        if self.geometry is not None:
            mask &= ~self.geometry.contains(self.corner_x2, self.corner_x3)
        return mask

    # -- cached solvers -----------------------------------------------------

    def poisson(self):
        if self._poisson is None:
            self._poisson = PoissonSolver(self)
        return self._poisson

    def diffusion(self, dt):
        key = float(dt)
        if key not in self._diffusion:
            self._diffusion[key] = DiffusionSolver(self, key)
        return self._diffusion[key]


def make_grid(R, n, geometry=None):
    """Build a grid; optionally rasterize a body onto it."""
    g = Grid(R, n)
    if geometry is not None:
        g.attach_body(geometry)
    return g


@dataclass
class FlowField:
    """Velocity/pressure snapshot on a grid."""

    grid: Grid
    u2: np.ndarray
    u3: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, grid):
        n = grid.n
        return cls(grid, np.zeros((n + 1, n)), np.zeros((n, n + 1)),
                   np.zeros((n, n)))

    def copy(self):
        return FlowField(self.grid, self.u2.copy(), self.u3.copy(),
                         self.p.copy())

    def pin(self):
        """Zero the velocity on pinned (non-active) faces, in place."""
        self.u2[~self.grid.active_u2] = 0.0
        self.u3[~self.grid.active_u3] = 0.0
        return self


# ---------------------------------------------------------------------------
# basic difference operators
# ---------------------------------------------------------------------------

def divergence(grid, u2, u3):
    """Cell divergence (d2 u2 + d3 u3); meaningful on active cells."""
    return ((u2[1:, :] - u2[:-1, :]) + (u3[:, 1:] - u3[:, :-1])) / grid.h


def max_divergence(grid, u2, u3, relative=True):
    """Max |div u| over fluid cells, optionally relative to max|u|/h."""
    d = np.abs(divergence(grid, u2, u3))[grid.fluid_c]
    raw = float(d.max()) if d.size else 0.0
    if not relative:
        return raw
    scale = max(np.abs(u2).max(), np.abs(u3).max(), 1e-300) / grid.h
    return raw / scale


def gradient_faces(grid, phi):
    """Face gradients of a cell scalar; zero on pinned faces."""
    n, h = grid.n, grid.h
    g2 = np.zeros((n + 1, n))
    g2[1:n, :] = (phi[1:, :] - phi[:-1, :]) / h
    g3 = np.zeros((n, n + 1))
    g3[:, 1:n] = (phi[:, 1:] - phi[:, :-1]) / h
    g2[~grid.active_u2] = 0.0
    g3[~grid.active_u3] = 0.0
    return g2, g3


def velocity_gradients(grid, u2, u3):
    """The four first derivatives: cell-centered normal ones, corner shears.

    Returns (d2u2, d3u3, d3u2, d2u3); the last two live on corners and use
    zero extension beyond the array (consistent with pinned fields).
    """
    h, n = grid.h, grid.n
    d2u2 = (u2[1:, :] - u2[:-1, :]) / h
    d3u3 = (u3[:, 1:] - u3[:, :-1]) / h
    u2p = np.zeros((n + 1, n + 2))
    u2p[:, 1:-1] = u2
    d3u2 = (u2p[:, 1:] - u2p[:, :-1]) / h
    u3p = np.zeros((n + 2, n + 1))
    u3p[1:-1, :] = u3
    d2u3 = (u3p[1:, :] - u3p[:-1, :]) / h
    return d2u2, d3u3, d3u2, d2u3


def dissipation_norms(grid, u2, u3, region="fluid"):
    """(2||D(u)||^2, ||grad u||^2) as area-weighted sums.

    region="fluid" restricts cells/corners to the fluid part; "all" sums the
    whole box (on pinned fields the two regions differ only by the body
    interior, where a rigid field contributes nothing).
    """
    d2u2, d3u3, d3u2, d2u3 = velocity_gradients(grid, u2, u3)
    if region == "fluid":
        cm = grid.fluid_c
        km = grid.corner_fluid
    elif region == "all":
        cm = slice(None)
        km = slice(None)
    else:
        raise ValueError(f"unknown region {region!r}")
    shear = d3u2 + d2u3
    two_dsq = (np.sum(2.0 * (d2u2[cm] ** 2 + d3u3[cm] ** 2))
               + np.sum(shear[km] ** 2)) * grid.h ** 2
    gradsq = (np.sum(d2u2[cm] ** 2 + d3u3[cm] ** 2)
              + np.sum(d3u2[km] ** 2 + d2u3[km] ** 2)) * grid.h ** 2
    return float(two_dsq), float(gradsq)


def face_inner(grid, a2, a3, b2, b3, region="fluid"):
    """L2 inner product of two staggered vector fields."""
    if region == "fluid":
        m2, m3 = grid.fluid_u2, grid.fluid_u3
    elif region == "active":
        m2, m3 = grid.active_u2, grid.active_u3
    elif region == "all":
        m2 = slice(None)
        m3 = slice(None)
    else:
        raise ValueError(f"unknown region {region!r}")
    return float((np.sum(a2[m2] * b2[m2]) + np.sum(a3[m3] * b3[m3]))
                 * grid.h ** 2)


def rigid_field(grid, xi, omega):
    """Rigid velocity xi + omega * x_perp sampled on both face lattices."""
    v2 = xi[0] - omega * grid.u2_x3
    v3 = xi[1] + omega * grid.u3_x2
    return v2, v3


def perp_gradient(grid, phi_corners):
    """Perp gradient (d3 phi, -d2 phi) of a corner scalar; exactly div-free."""
    h = grid.h
    f2 = (phi_corners[:, 1:] - phi_corners[:, :-1]) / h
    f3 = -(phi_corners[1:, :] - phi_corners[:-1, :]) / h
    return f2, f3


# ---------------------------------------------------------------------------
# interpolation between the two face lattices
# ---------------------------------------------------------------------------

def avg_u3_to_u2(grid, u3):
    """Four-point average of u3 onto the u2 lattice (zero extension)."""
    n = grid.n
    p = np.zeros((n + 2, n + 1))
    p[1:-1, :] = u3
    return 0.25 * (p[:-1, :-1] + p[:-1, 1:] + p[1:, :-1] + p[1:, 1:])


def avg_u2_to_u3(grid, u2):
    """Transpose partner of ``avg_u3_to_u2``."""
    n = grid.n
    p = np.zeros((n + 1, n + 2))
    p[:, 1:-1] = u2
    return 0.25 * (p[:-1, :-1] + p[:-1, 1:] + p[1:, :-1] + p[1:, 1:])


# ---------------------------------------------------------------------------
# skew-symmetric advection
# ---------------------------------------------------------------------------

def _advect_axis(f, w, h, axis):
    """Half divergence-form, half flux-difference-form transport term.

    The average of the two forms produces exactly zero energy
    (sum f * term = 0) for any advecting samples w on the lattice of f,
    provided f vanishes at the array edge — which pinned fields do.
    """
    f = np.moveaxis(f, axis, 0)
    w = np.moveaxis(w, axis, 0)
    npts = f.shape[0]
    fp = np.zeros((npts + 2,) + f.shape[1:])
    fp[1:-1] = f
    wp = np.zeros((npts + 2,) + w.shape[1:])
    wp[1:-1] = w
    wh = 0.5 * (wp[:-1] + wp[1:])          # npts+1 half-points
    df = fp[1:] - fp[:-1]
    favg = 0.5 * (fp[1:] + fp[:-1])
    flux = wh * favg
    divp = (flux[1:] - flux[:-1]) / h
    advp = (wh[1:] * df[1:] + wh[:-1] * df[:-1]) / (2.0 * h)
    return np.moveaxis(0.5 * (divp + advp), 0, axis)


def advect(grid, f, w_axis0, w_axis1):
    """(w . grad) f in energy-neutral skew form, on f's own lattice."""
    return (_advect_axis(f, w_axis0, grid.h, 0)
            + _advect_axis(f, w_axis1, grid.h, 1))


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------

class MollifierKernel:
    """Discrete compact bump kernel exp(-1/(1-|x/eta|^2)), normalized.

    The stencil samples the kernel at grid offsets strictly inside the
    support radius and rescales so the weights sum to one (constants are
    preserved exactly).  ``c_eta`` is the discrete L2 norm of the kernel,
    giving the a-priori bound sup|u_eta| <= c_eta * ||u||_2.
    """

    def __init__(self, eta, h, eta_max=None):
        if eta < 2.0 * h - 1e-12 * h:
            raise ConfigError(
                f"mollifier width eta={eta:.4g} must be at least 2h={2*h:.4g}")
        if eta_max is not None and eta >= eta_max:
            raise ConfigError(
                f"mollifier width eta={eta:.4g} must stay below {eta_max:.4g} "
                "(the body must keep an eta-interior)")
        self.eta = float(eta)
        self.h = float(h)
        m = int(np.ceil(eta / h))
        off = np.arange(-m, m + 1)
        ox, oy = np.meshgrid(off, off, indexing="ij")
        rsq = (ox ** 2 + oy ** 2) * (h / eta) ** 2
        w = np.zeros_like(rsq, dtype=float)
        inside = rsq < 1.0
        w[inside] = np.exp(-1.0 / (1.0 - rsq[inside]))
        self.weights = w / w.sum()
        self.c_eta = float(np.linalg.norm(self.weights) / h)

    def apply(self, field):
        """Convolve one staggered component (zero extension past the edge)."""
        return scipy.ndimage.convolve(field, self.weights,
                                      mode="constant", cval=0.0)


# ---------------------------------------------------------------------------
# pressure projection
# ---------------------------------------------------------------------------

class PoissonSolver:
    """Cell Poisson solve with no-flux walls at pinned faces.

    The masked five-point Laplacian is factorized once (direct sparse LU);
    the constant nullspace is fixed by pinning one reference cell and the
    mean-zero gauge is restored afterwards.
    """

    def __init__(self, grid):
        self.grid = grid
        n, h = grid.n, grid.h
        act = grid.active_c
        idx = -np.ones((n, n), dtype=np.int64)
        nact = int(act.sum())
        idx[act] = np.arange(nact)
        self.idx = idx
        self.nact = nact

        rows, cols, vals = [], [], []
        ii, jj = np.nonzero(act)
        coef = 1.0 / h ** 2
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = ii + di, jj + dj
            inb = (ni >= 0) & (ni < n) & (nj >= 0) & (nj < n)
            nb_ok = np.zeros(len(ii), dtype=bool)
            nb_ok[inb] = act[ni[inb], nj[inb]]
            r = idx[ii[nb_ok], jj[nb_ok]]
            c = idx[ni[nb_ok], nj[nb_ok]]
            rows.append(r)
            cols.append(c)
            vals.append(np.full(len(r), coef))
            rows.append(r)
            cols.append(r)
            vals.append(np.full(len(r), -coef))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        # pin the gauge at the last active cell
        self.pin = nact - 1
        keep = rows != self.pin
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        rows = np.append(rows, self.pin)
        cols = np.append(cols, self.pin)
        vals = np.append(vals, 1.0)
        mat = sp.csc_matrix((vals, (rows, cols)), shape=(nact, nact))
        self.lu = spla.splu(mat)

    def solve(self, rhs_cells):
        """Solve laplace(phi) = rhs on active cells; returns a full array."""
        b = rhs_cells[self.grid.active_c].astype(float)
        b[self.pin] = 0.0
        x = self.lu.solve(b)
        if not np.isfinite(x).all():
            raise NumericalError("pressure solve produced non-finite values")
        phi = np.zeros_like(rhs_cells, dtype=float)
        phi[self.grid.active_c] = x
        return phi


def project(grid, u2, u3):
    """Make the face field divergence-free on active cells.

    Returns (u2, u3, phi) with u pinned, u - grad(phi) divergence-free and
    phi mean-zero over active cells.  The input arrays are not modified.
    """
    u2 = u2.copy()
    u3 = u3.copy()
    u2[~grid.active_u2] = 0.0
    u3[~grid.active_u3] = 0.0
    rhs = divergence(grid, u2, u3)
    rhs[~grid.active_c] = 0.0
    phi = grid.poisson().solve(rhs)
    g2, g3 = gradient_faces(grid, phi)
    u2 -= g2
    u3 -= g3
    phi = phi - phi[grid.active_c].mean()
    phi[~grid.active_c] = 0.0
    return u2, u3, phi


# ---------------------------------------------------------------------------
# implicit diffusion
# ---------------------------------------------------------------------------

class DiffusionSolver:
    """Backward-Euler heat solve (I - dt lap) on each face lattice.

    Pinned faces are Dirichlet-zero; the body is plain interior (rigidly
    moving fluid diffuses to itself harmlessly).  One LU per (grid, dt).
    """

    def __init__(self, grid, dt):
        self.grid = grid
        self.dt = float(dt)
        self.lu2, self.m2idx = self._build(grid.active_u2)
        self.lu3, self.m3idx = self._build(grid.active_u3)

    def _build(self, active):
        a = self.dt / self.grid.h ** 2
        idx = -np.ones(active.shape, dtype=np.int64)
        nact = int(active.sum())
        idx[active] = np.arange(nact)
        ii, jj = np.nonzero(active)
        rows = [np.arange(nact)]
        cols = [np.arange(nact)]
        vals = [np.full(nact, 1.0 + 4.0 * a)]
        ni_max, nj_max = active.shape
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = ii + di, jj + dj
            inb = (ni >= 0) & (ni < ni_max) & (nj >= 0) & (nj < nj_max)
            nb_ok = np.zeros(len(ii), dtype=bool)
            nb_ok[inb] = active[ni[inb], nj[inb]]
            rows.append(idx[ii[nb_ok], jj[nb_ok]])
            cols.append(idx[ni[nb_ok], nj[nb_ok]])
            vals.append(np.full(int(nb_ok.sum()), -a))
        mat = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows),
                                    np.concatenate(cols))),
            shape=(nact, nact))
        return spla.splu(mat), idx

    def solve(self, u2, u3):
        out2 = np.zeros_like(u2)
        act2 = self.grid.active_u2
        out2[act2] = self.lu2.solve(u2[act2])
        out3 = np.zeros_like(u3)
        act3 = self.grid.active_u3
        out3[act3] = self.lu3.solve(u3[act3])
        if not (np.isfinite(out2).all() and np.isfinite(out3).all()):
            raise NumericalError("diffusion solve produced non-finite values")
        return out2, out3


# ---------------------------------------------------------------------------
# resampling between grids (refinement / radius sweeps)
# ---------------------------------------------------------------------------

def resample_flow(src_grid, u2, u3, dst_grid):
    """Bilinear transfer of a staggered field onto another grid.

    Used to warm-start orbit searches across resolutions; the result is
    pinned and projected so it is admissible on the target grid.
    """
    def interp(arr, x2_line, x3_line, src_x2_0, src_x3_0):
        i = (x2_line - src_x2_0) / src_grid.h
        j = (x3_line - src_x3_0) / src_grid.h
        ii, jj = np.meshgrid(i, j, indexing="ij")
        return scipy.ndimage.map_coordinates(
            arr, [ii, jj], order=1, mode="constant", cval=0.0)

    r_s = src_grid.R
    nu2 = interp(u2, dst_grid.xf, dst_grid.xc, -r_s, -r_s + src_grid.h / 2)
    nu3 = interp(u3, dst_grid.xc, dst_grid.xf, -r_s + src_grid.h / 2, -r_s)
    nu2[~dst_grid.active_u2] = 0.0
    nu3[~dst_grid.active_u3] = 0.0
    return project(dst_grid, nu2, nu3)[:2]
