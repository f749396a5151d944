"""scikit-learn style wrappers around the solver, the pair odometry and alignment.

The functional API stays the primary surface; these classes give it the
usual ``fit`` / ``predict`` / ``transform`` shape with hyper-parameters
as constructor arguments, so they clone and compare like other estimators.
"""
from __future__ import annotations

from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pair, check_trajectory
from .camera import DepthMap, FlowField, Intrinsics, InverseDepthMap, correspondence_map
from .evaluation import align, apply_alignment
from .flowsolver import SolverConfig, WeightMap, decompose, estimate_camera, residuals, solve_field
from .odometry import LossWeights, OdometryConfig, estimate_pair


@dataclass
class FramePair:
    """One input sample: frame one's depth plus targets towards frame two."""

    intrinsics: Intrinsics
    depth1: DepthMap
    flow: FlowField
    invdepth: InverseDepthMap | None = None
    depth2: DepthMap | None = None
    weights: WeightMap | None = None


class _SolverParams:
    def _solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_gn_iters=self.max_gn_iters,
            damping=self.damping,
            huber_delta=self.huber_delta,
            huber_delta_invdepth=self.huber_delta_invdepth,
            smoothness_weight=self.smoothness_weight,
            segment_grid=self.segment_grid,
            convergence_tol=self.convergence_tol,
            rotation_scale=self.rotation_scale,
        )


class SceneFlowSolver(_SolverParams, BaseEstimator):
    """Fit a dense SE(3) field to one :class:`FramePair`.

    Fitted attributes: ``field_``, ``camera_``, ``deformation_``,
    ``residual_stats_``, ``cost_`` and ``history_``.
    """

    def __init__(self, smoothness_weight=100.0, huber_delta=1.0, huber_delta_invdepth=0.05,
                 segment_grid=8, max_gn_iters=10, damping=1e-4, convergence_tol=1e-4,
                 rotation_scale=10.0):
        self.smoothness_weight = smoothness_weight
        self.huber_delta = huber_delta
        self.huber_delta_invdepth = huber_delta_invdepth
        self.segment_grid = segment_grid
        self.max_gn_iters = max_gn_iters
        self.damping = damping
        self.convergence_tol = convergence_tol
        self.rotation_scale = rotation_scale

    def fit(self, X: FramePair, y=None, init=None):
        check_pair(X)
        cfg = self._solver_config()
        weights = X.weights
        if weights is None:
            weights = WeightMap.from_validity(X.flow, X.invdepth, shape=X.intrinsics.shape)
        history = []
        F = solve_field(X.intrinsics, X.depth1, X.flow, X.invdepth, weights=weights, init=init,
                        cfg=cfg, history=history)
        self.field_ = F
        self.camera_ = estimate_camera(F, weights)
        dec = decompose(F, self.camera_)
        self.deformation_ = dec.deformation
        self.residual_stats_ = dec.residual_stats
        self.cost_, _ = residuals(X.intrinsics, X.depth1, F, X.flow, X.invdepth, weights, cfg)
        self.history_ = history
        return self

    def predict(self, X: FramePair):
        """Flow and inverse depth induced by the fitted field on ``X.depth1``."""
        check_is_fitted(self, "field_")
        check_pair(X)
        return correspondence_map(X.intrinsics, X.depth1, self.field_)

    def score(self, X: FramePair, y=None) -> float:
        """Negative robust cost of the fitted field against ``X``'s targets."""
        check_is_fitted(self, "field_")
        check_pair(X)
        cost, _ = residuals(X.intrinsics, X.depth1, self.field_, X.flow, X.invdepth, X.weights,
                            self._solver_config())
        return -cost


class PairOdometry(_SolverParams, BaseEstimator):
    """Camera motion between two frames from depth and flow.

    ``fit`` needs ``depth2``; ``predict`` returns the camera-``t`` to
    camera-``t+1`` transform.
    """

    def __init__(self, iterations=12, depth_weight=1e-3, stop_tol=1e-4, smoothness_weight=100.0,
                 huber_delta=1.0, huber_delta_invdepth=0.05, segment_grid=8, max_gn_iters=10,
                 damping=1e-4, convergence_tol=1e-4, rotation_scale=10.0):
        self.iterations = iterations
        self.depth_weight = depth_weight
        self.stop_tol = stop_tol
        self.smoothness_weight = smoothness_weight
        self.huber_delta = huber_delta
        self.huber_delta_invdepth = huber_delta_invdepth
        self.segment_grid = segment_grid
        self.max_gn_iters = max_gn_iters
        self.damping = damping
        self.convergence_tol = convergence_tol
        self.rotation_scale = rotation_scale

    def _config(self) -> OdometryConfig:
        return OdometryConfig(iterations=self.iterations, depth_weight=self.depth_weight,
                              stop_tol=self.stop_tol, solver=self._solver_config(),
                              loss_weights=LossWeights())

    def fit(self, X: FramePair, y=None, init=None):
        check_pair(X, need_depth2=True)
        est = estimate_pair(X.intrinsics, X.depth1, X.depth2, X.flow, self._config(), init=init)
        self.estimate_ = est
        self.relative_pose_ = est.relative_pose
        self.deformation_ = est.deformation
        self.n_iter_ = est.iterations_run
        return self

    def predict(self, X=None):
        check_is_fitted(self, "relative_pose_")
        return self.relative_pose_


class TrajectoryAligner(TransformerMixin, BaseEstimator):
    """Umeyama alignment of an estimated trajectory onto ground truth."""

    def __init__(self, mode="sim3"):
        self.mode = mode

    def fit(self, X, y):
        check_trajectory(X, "estimated trajectory")
        check_trajectory(y, "ground-truth trajectory")
        res = align(X, y, self.mode)
        self.transform_ = res.transform
        self.scale_ = res.scale
        self.residual_rmse_ = res.residual_rmse
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        check_trajectory(X, "trajectory")
        return apply_alignment(X, self.transform_)

    def score(self, X, y) -> float:
        """Negative ATE of ``X`` against ``y`` under the fitted transform."""
        check_is_fitted(self, "transform_")
        aligned = self.transform(X)
        ids = [f for f in aligned.frame_ids if f in set(y.frame_ids.tolist())]
        a, b = aligned.subset(ids).positions, y.subset(ids).positions
        return -float(((a - b) ** 2).sum(axis=1).mean() ** 0.5)
