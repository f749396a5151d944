"""Dense SE(3) field fitting and camera/deformation decomposition.

The field ``T[u]`` moves the back-projected point of pixel ``u`` into the
second camera. It is fitted to target flow and inverse depth with damped
Gauss-Newton in three passes: one rigid update for the whole image, one rigid
update per ``segment_grid`` block, then per-pixel updates coupled by a
smoothness penalty ``w_s * ||S log(T[u]^-1 T[v])||^2`` over 4-neighbours, where
``S`` scales the rotational part by ``rotation_scale`` metres per radian.
All updates are left-multiplied twists, ``T <- exp(d) T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .camera import (
    BEHIND_EPS,
    DepthMap,
    FlowField,
    Intrinsics,
    InverseDepthMap,
    backproject_depth,
    check_same_domain,
)
from .geometry import (
    RigidTransform,
    TransformField,
    adjoint,
    hat,
    se3_compose,
    se3_exp,
    se3_inverse,
    quat_rotate,
    se3_log,
)


class SolverDivergenceError(RuntimeError):
    """Non-finite cost; ``last_field`` holds the last finite iterate."""

    def __init__(self, message, last_field=None):
        super().__init__(message)
        self.last_field = last_field


class DegenerateInputError(ValueError):
    pass


@dataclass
class SolverConfig:
    max_gn_iters: int = 10
    damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.5
    huber_delta: float = 1.0  # pixels, flow channels
    huber_delta_invdepth: float = 0.05  # 1/m
    smoothness_weight: float = 100.0
    segment_grid: int = 8
    convergence_tol: float = 1e-4
    sweeps: int = 4  # two-grid cycles per pixel-pass linear solve
    rotation_scale: float = 10.0  # m/rad, weights rotation in the smoothness term

    def validate(self, width: int | None = None, height: int | None = None) -> None:
        for name in ("max_gn_iters", "damping", "huber_delta", "huber_delta_invdepth", "segment_grid",
                     "convergence_tol", "sweeps", "rotation_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SolverConfig.{name} must be positive")
        if not self.smoothness_weight > 0:
            raise ValueError("SolverConfig.smoothness_weight must be positive")
        if self.damping_up <= 1 or not 0 < self.damping_down < 1:
            raise ValueError("damping factors must satisfy up > 1 and 0 < down < 1")
        if width is not None and (width % self.segment_grid or height % self.segment_grid):
            raise ValueError(f"segment_grid {self.segment_grid} does not divide {width}x{height}")

    @property
    def rigid(self) -> bool:
        return math.isinf(self.smoothness_weight)


class WeightMap:
    """Per-pixel confidences for the (flow u, flow v, inverse depth) residuals."""

    def __init__(self, data):
        data = np.array(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"WeightMap expects (H, W, 3) data, got {data.shape}")
        if np.any(~np.isfinite(data)) or np.any(data < 0):
            raise ValueError("weights must be finite and non-negative")
        data.setflags(write=False)
        self.data = data

    @classmethod
    def from_validity(cls, flow: FlowField | None = None, invdepth: InverseDepthMap | None = None,
                      shape=None, depth_weight: float = 1.0) -> WeightMap:
        if shape is None:
            shape = (flow or invdepth).shape
        w = np.zeros(tuple(shape) + (3,))
        if flow is not None:
            w[..., 0] = w[..., 1] = flow.valid
        if invdepth is not None:
            w[..., 2] = depth_weight * invdepth.valid
        return cls(w)

    @classmethod
    def isotropic(cls, intr: Intrinsics, depth1: DepthMap, flow: FlowField | None = None,
                  invdepth: InverseDepthMap | None = None) -> WeightMap:
        """Validity weights with the inverse-depth channel scaled by ``(f z)^2``.

        A small displacement ``d`` of a point at depth ``z`` moves its flow by
        about ``f d / z`` pixels sideways but its inverse depth only by
        ``d / z^2`` along the ray; the scaling makes both cost the same.
        """
        base = cls.from_validity(flow, invdepth, shape=intr.shape).data.copy()
        f = 0.5 * (intr.fx + intr.fy)
        z = np.where(depth1.valid, depth1.values, 0.0)
        base[..., 2] *= (f * z) ** 2
        return cls(base)

    @classmethod
    def ones(cls, width: int, height: int) -> WeightMap:
        return cls(np.ones((height, width, 3)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def pixel_weights(self) -> np.ndarray:
        """Flat scalar weight per pixel (channel sum)."""
        return self.data.sum(axis=2).ravel()


@dataclass
class Decomposition:
    camera: RigidTransform
    deformation: TransformField
    residual_stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# residuals and Jacobians
# ---------------------------------------------------------------------------


@dataclass
class _Problem:
    intr: Intrinsics
    points: np.ndarray  # (n, 3) back-projected source points
    pix: np.ndarray  # (n, 2) source pixel coordinates
    target: np.ndarray  # (n, 3) target flow u, v and inverse depth (0 where unused)
    weights: np.ndarray  # (n, 3) zero on invalid channels
    deltas: np.ndarray  # (3,) Huber thresholds per channel


def _make_problem(intr, depth1, target_flow, target_invdepth, weights, cfg) -> _Problem:
    check_same_domain(intr, depth1, target_flow, target_invdepth)
    if weights is None:
        weights = WeightMap.from_validity(target_flow, target_invdepth, shape=intr.shape)
    if weights.shape != intr.shape:
        raise ValueError(f"weight map is {weights.width}x{weights.height}, expected {intr.width}x{intr.height}")
    P, valid = backproject_depth(intr, depth1)
    w = weights.data.reshape(-1, 3).copy()
    w[~valid] = 0.0
    n = P.shape[0]
    target = np.zeros((n, 3))
    if target_flow is not None:
        fv = target_flow.valid.ravel()
        target[:, :2] = np.where(fv[:, None], target_flow.flat(), 0.0)
        w[~fv, :2] = 0.0
    else:
        w[:, :2] = 0.0
    if target_invdepth is not None:
        iv = target_invdepth.valid.ravel()
        target[:, 2] = np.where(iv, target_invdepth.flat()[:, 0], 0.0)
        w[~iv, 2] = 0.0
    else:
        w[:, 2] = 0.0
    u, v = intr.pixel_grid()
    deltas = np.array([cfg.huber_delta, cfg.huber_delta, cfg.huber_delta_invdepth])
    return _Problem(intr, P, np.stack([u, v], axis=1), target, w, deltas)


def pixel_residuals(intr: Intrinsics, points, pix, target, quats, trans, jacobian: bool = False):
    """Residuals (n, 3) of moved points against targets, optionally with d r / d twist (n, 3, 6).

    The Jacobian is taken with respect to a left-multiplied twist ``(omega, rho)``
    at zero, i.e. ``T <- exp(d) T``. Rows whose moved point is behind the
    camera come back with ``ok`` False.
    """
    Q = quat_rotate(quats, points) + trans
    z = Q[:, 2]
    ok = z > BEHIND_EPS
    zs = np.where(ok, z, 1.0)
    iz = 1.0 / zs
    r = np.empty((Q.shape[0], 3))
    r[:, 0] = intr.fx * Q[:, 0] * iz + intr.cx - pix[:, 0] - target[:, 0]
    r[:, 1] = intr.fy * Q[:, 1] * iz + intr.cy - pix[:, 1] - target[:, 1]
    r[:, 2] = iz - target[:, 2]
    if not jacobian:
        return r, ok
    dres_dQ = np.zeros((Q.shape[0], 3, 3))
    dres_dQ[:, 0, 0] = intr.fx * iz
    dres_dQ[:, 0, 2] = -intr.fx * Q[:, 0] * iz * iz
    dres_dQ[:, 1, 1] = intr.fy * iz
    dres_dQ[:, 1, 2] = -intr.fy * Q[:, 1] * iz * iz
    dres_dQ[:, 2, 2] = -iz * iz
    dQ = np.concatenate([-hat(Q), np.broadcast_to(np.eye(3), Q.shape[:1] + (3, 3))], axis=2)
    return r, ok, dres_dQ @ dQ


def _huber(r: np.ndarray, delta: np.ndarray) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def _irls(r: np.ndarray, delta: np.ndarray) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def _data_cost_per_pixel(prob: _Problem, quats, trans) -> np.ndarray:
    r, ok = pixel_residuals(prob.intr, prob.points, prob.pix, prob.target, quats, trans)
    w = prob.weights * ok[:, None]
    r = np.where(w > 0, r, 0.0)
    return np.sum(w * _huber(r, prob.deltas), axis=1)


def residuals(intr: Intrinsics, depth1: DepthMap, field: TransformField, target_flow: FlowField,
              target_invdepth: InverseDepthMap, weights: WeightMap | None = None,
              cfg: SolverConfig | None = None):
    """Robust cost and per-pixel (flow u, flow v, inverse depth) residuals.

    Residual channels that carry no weight (invalid pixels, unused targets)
    are returned as NaN and contribute nothing to the cost.
    """
    cfg = cfg or SolverConfig()
    check_same_domain(intr, field)
    prob = _make_problem(intr, depth1, target_flow, target_invdepth, weights, cfg)
    r, ok = pixel_residuals(intr, prob.points, prob.pix, prob.target, field.quats, field.trans)
    w = prob.weights * ok[:, None]
    used = w > 0
    cost = float(np.sum(np.where(used, w * _huber(np.where(used, r, 0.0), prob.deltas), 0.0)))
    r = np.where(used, r, np.nan)
    return cost, r.reshape(intr.shape + (3,))


# ---------------------------------------------------------------------------
# normal equations
# ---------------------------------------------------------------------------

_COST_FLOOR = 1e-24  # per unit of total weight; below this the fit is exact to rounding


def _check_finite(cost, quats, trans, intr):
    if not np.all(np.isfinite(cost)):
        raise SolverDivergenceError(
            "non-finite cost in field solver", TransformField(intr.width, intr.height, quats, trans)
        )


class _Grid:
    """4-neighbour edges of an ``h x w`` raster: horizontal first, then vertical."""

    def __init__(self, h: int, w: int):
        self.h, self.w = h, w
        idx = np.arange(h * w).reshape(h, w)
        self.a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        self.b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
        self.nh = h * (w - 1)

    def gather(self, at_a, at_b) -> np.ndarray:
        """Per-pixel sums of edge values assigned to the first / second endpoint."""
        h, w, nh = self.h, self.w, self.nh
        tail = at_a.shape[1:]
        out = np.zeros((h, w) + tail)
        out[:, :-1] += at_a[:nh].reshape((h, w - 1) + tail)
        out[:, 1:] += at_b[:nh].reshape((h, w - 1) + tail)
        out[:-1, :] += at_a[nh:].reshape((h - 1, w) + tail)
        out[1:, :] += at_b[nh:].reshape((h - 1, w) + tail)
        return out.reshape((h * w,) + tail)


def _mv(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (M @ x[..., None])[..., 0]


def _smooth_scale(cfg: SolverConfig) -> np.ndarray:
    return np.array([cfg.rotation_scale] * 3 + [1.0] * 3)


def _smooth_residuals(quats, trans, grid: _Grid, scale) -> np.ndarray:
    qi, ti = se3_inverse(quats[grid.a], trans[grid.a])
    q, t = se3_compose(qi, ti, quats[grid.b], trans[grid.b])
    return se3_log(q, t, check_branch=False) * scale


def _objective(prob, quats, trans, grid: _Grid, ws, scale) -> float:
    data = _data_cost_per_pixel(prob, quats, trans).sum()
    if ws == 0:
        return float(data)
    e = _smooth_residuals(quats, trans, grid, scale)
    return float(data + ws * np.sum(e * e))


def _linearize(prob, quats, trans, grid: _Grid, ws, scale):
    """Gauss-Newton pieces at the current field.

    Returns per-pixel data Hessians and gradients (IRLS-weighted) and, per
    edge, the scaled smoothness residual ``e`` with its Jacobian ``A`` with
    respect to ``d_b - d_a``.
    """
    r, ok, J = pixel_residuals(prob.intr, prob.points, prob.pix, prob.target, quats, trans, jacobian=True)
    wt = prob.weights * ok[:, None] * _irls(np.where(ok[:, None], r, 0.0), prob.deltas)
    r = np.where(wt > 0, r, 0.0)
    JtW = np.swapaxes(J, 1, 2) * wt[:, None, :]
    Hd = JtW @ J
    gd = _mv(JtW, r)
    if ws == 0:
        return Hd, gd, None, None
    e = _smooth_residuals(quats, trans, grid, scale)
    qi, ti = se3_inverse(quats[grid.a], trans[grid.a])
    A = adjoint(qi, ti) * scale[None, :, None]
    return Hd, gd, e, A


def _smooth_gradient(grid: _Grid, e, A, ws) -> np.ndarray:
    Ate = 2.0 * ws * _mv(np.swapaxes(A, 1, 2), e)
    return grid.gather(-Ate, Ate)


class _Blocks:
    """Block-constant prolongation of per-pixel updates.

    Projecting the pixel normal equations onto updates shared by each
    ``gh x gw`` block gives a small coupled system: edges inside a block
    drop out, edges across block borders couple neighbouring blocks.
    """

    def __init__(self, grid: _Grid, gh: int, gw: int):
        h, w = grid.h, grid.w
        self.h, self.w, self.gh, self.gw = h, w, gh, gw
        rows, cols = h // gh, w // gw
        v, u = np.divmod(np.arange(h * w), w)
        self.index = (v // gh) * cols + (u // gw)
        self.nb = rows * cols
        ba, bb = self.index[grid.a], self.index[grid.b]
        self.cross = np.nonzero(ba != bb)[0]
        self.ba, self.bb = ba[self.cross], bb[self.cross]
        # sparsity pattern of 6x6 blocks: diagonal, then (ba, bb), then (bb, ba)
        pairs = np.concatenate([np.stack([np.arange(self.nb)] * 2, 1),
                                np.stack([self.ba, self.bb], 1), np.stack([self.bb, self.ba], 1)])
        ii, jj = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
        self._rows = (pairs[:, 0, None, None] * 6 + ii).ravel()
        self._cols = (pairs[:, 1, None, None] * 6 + jj).ravel()

    def restrict(self, x: np.ndarray) -> np.ndarray:
        h, w, gh, gw = self.h, self.w, self.gh, self.gw
        tail = x.shape[1:]
        y = x.reshape((h // gh, gh, w // gw, gw) + tail).sum(axis=(1, 3))
        return y.reshape((-1,) + tail)

    def prolong(self, y: np.ndarray) -> np.ndarray:
        return y[self.index]

    def matrix(self, Hpix: np.ndarray, S=None):
        """Sparse Galerkin matrix for pixel blocks ``Hpix`` and edge couplings ``S``."""
        H = self.restrict(Hpix)
        blocks = [H]
        if S is not None and self.cross.size:
            Sc = S[self.cross]
            Hc = np.zeros_like(H)
            np.add.at(Hc, self.ba, Sc)
            np.add.at(Hc, self.bb, Sc)
            blocks = [H + Hc, -Sc, -Sc]
        data = np.concatenate(blocks).ravel()
        n6 = 6 * self.nb
        return sparse.csc_matrix((data, (self._rows[: data.size], self._cols[: data.size])), shape=(n6, n6))


def _solve_sparse(M, rhs: np.ndarray) -> np.ndarray:
    if M.shape[0] == 6:
        return np.linalg.solve(M.toarray(), rhs.ravel()).reshape(-1, 6)
    return splinalg.spsolve(M, rhs.ravel()).reshape(-1, 6)


# ---------------------------------------------------------------------------
# passes
# ---------------------------------------------------------------------------


def _block_pass(prob: _Problem, quats, trans, blocks: _Blocks, grid: _Grid, ws, cfg: SolverConfig,
                history: list, name: str, floor: float):
    """Levenberg-Marquardt on one left update per block, blocks coupled by smoothness."""
    scale = _smooth_scale(cfg)
    lam = cfg.damping
    cost = _objective(prob, quats, trans, grid, ws, scale)
    _check_finite(cost, quats, trans, prob.intr)
    history.append((name, 0, cost))
    for it in range(1, cfg.max_gn_iters + 1):
        if cost <= floor:
            break
        Hd, gd, e, A = _linearize(prob, quats, trans, grid, ws, scale)
        if e is None:
            g, S = gd, None
        else:
            g = gd + _smooth_gradient(grid, e, A, ws)
            S = 2.0 * ws * (np.swapaxes(A, 1, 2) @ A)
        H = blocks.matrix(Hd, S)
        gb = blocks.restrict(g)
        dg = H.diagonal()
        if not np.any(dg > 0):
            break
        accepted = False
        for _ in range(10):
            M = H + sparse.diags(lam * dg + 1e-12)
            step = -_solve_sparse(M, gb)
            dq, dt = se3_exp(blocks.prolong(step))
            nq, nt = se3_compose(dq, dt, quats, trans)
            new_cost = _objective(prob, nq, nt, grid, ws, scale)
            if np.isfinite(new_cost) and new_cost < cost:
                rel = (cost - new_cost) / cost
                quats, trans, cost = nq, nt, new_cost
                lam *= cfg.damping_down
                accepted = True
                break
            lam *= cfg.damping_up
        history.append((name, it, cost))
        if not accepted or rel < cfg.convergence_tol:
            break
    return quats, trans


def _pixel_pass(prob: _Problem, quats, trans, blocks: _Blocks, grid: _Grid, cfg: SolverConfig,
                history: list, floor: float):
    """Per-pixel Levenberg-Marquardt with smoothness.

    Each linear system is solved approximately by two-grid cycles: red-black
    Gauss-Seidel sweeps over pixels, with a block-level correction in between
    that removes the slowly converging smooth error modes.
    """
    h, w = grid.h, grid.w
    ws = cfg.smoothness_weight
    scale = _smooth_scale(cfg)
    red = (np.add.outer(np.arange(h), np.arange(w)) % 2).ravel() == 0
    colors = (np.nonzero(red)[0], np.nonzero(~red)[0])
    lam = cfg.damping
    cost = _objective(prob, quats, trans, grid, ws, scale)
    _check_finite(cost, quats, trans, prob.intr)
    history.append(("pixel", 0, cost))
    a, b = grid.a, grid.b
    for it in range(1, cfg.max_gn_iters + 1):
        if cost <= floor:
            break
        Hd, gd, e, A = _linearize(prob, quats, trans, grid, ws, scale)
        rhs = -(gd + _smooth_gradient(grid, e, A, ws))
        S = 2.0 * ws * (np.swapaxes(A, 1, 2) @ A)
        M0 = Hd + grid.gather(S, S)
        diag = np.einsum("nii->ni", M0)

        def coupling(x):
            # off-diagonal part of the pixel matrix applied to x, negated
            return grid.gather(_mv(S, x[b]), _mv(S, x[a]))

        accepted = False
        for _ in range(10):
            damp = lam * (np.eye(6) * diag[:, None, :]) + 1e-12 * np.eye(6)
            M = M0 + damp
            Minv = np.linalg.inv(M)
            # Galerkin projection: smoothness inside a block cancels out
            lu = splinalg.splu(blocks.matrix(Hd + damp, S))
            delta = np.zeros_like(rhs)
            for cycle in range(cfg.sweeps + 1):
                for sel in colors + colors:
                    t = rhs[sel] + coupling(delta)[sel]
                    delta[sel] = _mv(Minv[sel], t)
                if cycle == cfg.sweeps:
                    break
                res = rhs + coupling(delta) - _mv(M, delta)
                delta += blocks.prolong(lu.solve(blocks.restrict(res).ravel()).reshape(-1, 6))
            dq, dt = se3_exp(delta)
            nq, nt = se3_compose(dq, dt, quats, trans)
            new_cost = _objective(prob, nq, nt, grid, ws, scale)
            if np.isfinite(new_cost) and new_cost < cost:
                rel = (cost - new_cost) / cost
                quats, trans, cost = nq, nt, new_cost
                lam *= cfg.damping_down
                accepted = True
                break
            lam *= cfg.damping_up
        history.append(("pixel", it, cost))
        if not accepted or rel < cfg.convergence_tol:
            break
    return quats, trans


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def solve_field(intr: Intrinsics, depth1: DepthMap, target_flow: FlowField, target_invdepth: InverseDepthMap,
                weights: WeightMap | None = None, init: TransformField | None = None,
                cfg: SolverConfig | None = None, history: list | None = None) -> TransformField:
    """Fit a dense SE(3) field to target flow and inverse depth.

    ``history`` (if given) receives ``(pass, iteration, objective)`` tuples;
    within a pass the objective never increases.
    """
    cfg = cfg or SolverConfig()
    cfg.validate(intr.width, intr.height)
    if init is None:
        init = TransformField.identity(intr.width, intr.height)
    check_same_domain(intr, init)
    prob = _make_problem(intr, depth1, target_flow, target_invdepth, weights, cfg)
    if not np.any(prob.weights > 0):
        return init
    history = [] if history is None else history
    quats, trans = np.array(init.quats), np.array(init.trans)
    h, w = intr.height, intr.width
    grid = _Grid(h, w)
    floor = _COST_FLOOR * float(prob.weights.sum())
    ws = 0.0 if cfg.rigid else cfg.smoothness_weight
    quats, trans = _block_pass(prob, quats, trans, _Blocks(grid, h, w), grid, ws, cfg, history, "rigid", floor)
    if not cfg.rigid:
        g = cfg.segment_grid
        blocks = _Blocks(grid, g, g)
        if g < max(h, w):
            quats, trans = _block_pass(prob, quats, trans, blocks, grid, ws, cfg, history, "block", floor)
        quats, trans = _pixel_pass(prob, quats, trans, blocks, grid, cfg, history, floor)
    return TransformField(w, h, quats, trans)


def _log_rel(q, t, quats, trans) -> np.ndarray:
    qi, ti = se3_inverse(q, t)
    rq, rt = se3_compose(qi, ti, quats, trans)
    return se3_log(rq, rt, check_branch=False)


def estimate_camera(field: TransformField, weights=None, max_iters: int = 500) -> RigidTransform:
    """Weighted geometric median of the field in se(3).

    Minimises ``sum_u w(u) ||log(T^-1 field[u])||`` with Weiszfeld iterations
    seeded from the weighted Karcher mean. Whenever the nearest field element
    satisfies the vertex optimality condition it is returned exactly.
    """
    if weights is None:
        wpix = np.ones(len(field))
    elif isinstance(weights, WeightMap):
        wpix = weights.pixel_weights()
    else:
        wpix = np.asarray(weights, dtype=np.float64).ravel()
    if wpix.shape[0] != len(field):
        raise ValueError("weights do not match the field size")
    sel = np.nonzero(wpix > 0)[0]
    if sel.size == 0:
        raise DegenerateInputError("all weights are zero; camera motion is undetermined")
    wq = np.array(field.quats[sel])
    wt = np.array(field.trans[sel])
    w = wpix[sel]
    wsum = w.sum()

    q, t = wq[0], wt[0]
    for _ in range(50):
        xi = _log_rel(q, t, wq, wt)
        step = (w[:, None] * xi).sum(axis=0) / wsum
        dq, dt = se3_exp(step)
        q, t = se3_compose(q, t, dq, dt)
        if np.linalg.norm(step) < 1e-14:
            break

    for _ in range(max_iters):
        xi = _log_rel(q, t, wq, wt)
        d = np.linalg.norm(xi, axis=1)
        j = int(np.argmin(d))
        xj = _log_rel(wq[j], wt[j], wq, wt)
        dj = np.linalg.norm(xj, axis=1)
        same = dj <= 1e-12
        eta = w[same].sum()
        R = (w[~same, None] * xj[~same] / dj[~same, None]).sum(axis=0)
        if np.linalg.norm(R) <= eta:
            return RigidTransform(wq[j], wt[j])
        coincident = d <= 1e-15
        inv_d = np.where(coincident, 0.0, w / np.where(coincident, 1.0, d))
        step = (inv_d[:, None] * xi).sum(axis=0) / inv_d.sum()
        eta0 = w[coincident].sum()
        if eta0 > 0:
            Rn = np.linalg.norm((inv_d[:, None] * xi).sum(axis=0))
            step *= max(0.0, 1.0 - eta0 / Rn) if Rn > 0 else 0.0
        dq, dt = se3_exp(step)
        q, t = se3_compose(q, t, dq, dt)
        if np.linalg.norm(step) < 1e-13:
            break
    return RigidTransform(q, t)


def decompose(field: TransformField, camera: RigidTransform) -> Decomposition:
    """Split ``field[u] = camera o deformation[u]``."""
    qi, ti = se3_inverse(camera.rotation, camera.translation)
    dq, dt = se3_compose(qi, ti, field.quats, field.trans)
    deformation = TransformField(field.width, field.height, dq, dt)
    mags = np.linalg.norm(se3_log(dq, dt, check_branch=False), axis=1)
    stats = {f"p{p}": float(np.percentile(mags, p)) for p in (50, 90, 99)}
    stats["max"] = float(mags.max())
    stats["mean"] = float(mags.mean())
    return Decomposition(camera, deformation, stats)
