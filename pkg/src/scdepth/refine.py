"""Network-free direct refinement of poses and depths against the total loss.

The search direction is a preconditioned L-BFGS direction (steepest descent
on the first iteration and after any reset); step lengths come from Armijo
backtracking, so accepted losses never increase. Poses are updated by left
multiplication with ``exp(step)``, depths through their logarithm.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyValidSetError
from .geometry import as_depth, as_image, compose, exp_twist, log_pose
from .gradients import loss_gradients
from .losses import LossWeights, evaluate_direction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineConfig:
    max_iters: int = 500
    step_twist: float = 1e-2
    step_logdepth: float = 1e-2
    tol_loss: float = 1e-12
    optimize_depth: bool = True
    optimize_pose: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    memory: int = 10
    armijo_c: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.step_twist > 0 and self.step_logdepth > 0):
            raise ValueError("step sizes must be positive")


@dataclass
class TraceRecord:
    iteration: int
    l_p_masked: float
    l_s: float
    l_gc: float
    total: float
    twists: list
    depth_rms_change: float
    step: float
    status: str


@dataclass
class RefineTrace:
    records: list = field(default_factory=list)
    status: str = "running"

    @property
    def totals(self):
        return np.array([r.total for r in self.records])

    def to_rows(self):
        return [{"iter": r.iteration, "l_p_masked": r.l_p_masked, "l_s": r.l_s,
                 "l_gc": r.l_gc, "total": r.total} for r in self.records]


class _Problem:
    """Chain of consecutive pairs ``(k, k+1)`` sharing per-frame depths."""

    def __init__(self, images, depths, poses, K, cfg, depth_vars):
        self.images = [as_image(I) for I in images]
        self.K = K
        self.cfg = cfg
        self.depth_vars = list(depth_vars) if cfg.optimize_depth else []
        self.n_pose = len(poses) if cfg.optimize_pose else 0
        self.shape = self.images[0].shape[1:]
        self.poses = list(poses)
        self.logd = [np.log(as_depth(D)) for D in depths]

    def depths(self, logd=None):
        return [np.exp(l) for l in (logd or self.logd)]

    def evaluate(self, poses, logd):
        D = self.depths(logd)
        terms = np.zeros(4)
        for k, P in enumerate(poses):
            r = evaluate_direction(self.images[k], self.images[k + 1], D[k], D[k + 1], P,
                                   self.K, self.cfg.weights).report
            terms += (r.l_p_masked, r.l_s, r.l_gc, r.total)
        return terms

    def gradient(self):
        D = self.depths()
        g_pose = []
        g_depth = [np.zeros(self.shape) for _ in D]
        for k, P in enumerate(self.poses):
            g = loss_gradients(self.images[k], self.images[k + 1], D[k], D[k + 1], P,
                               self.K, self.cfg.weights)
            g_pose.append(g.d_loss_d_twist)
            g_depth[k] += g.d_loss_d_depth
            g_depth[k + 1] += g.d_loss_d_depth_b
        parts = g_pose[:self.n_pose]
        parts += [(g_depth[i] * D[i]).ravel() for i in self.depth_vars]
        return np.concatenate(parts) if parts else np.zeros(0)

    def scaling(self):
        n_d = len(self.depth_vars) * int(np.prod(self.shape))
        return np.concatenate([np.full(6 * self.n_pose, self.cfg.step_twist),
                               np.full(n_d, self.cfg.step_logdepth)])

    def moved(self, d):
        poses = list(self.poses)
        for k in range(self.n_pose):
            poses[k] = compose(poses[k], exp_twist(d[6 * k:6 * k + 6]))
        logd = list(self.logd)
        off = 6 * self.n_pose
        n = int(np.prod(self.shape))
        for j, i in enumerate(self.depth_vars):
            logd[i] = logd[i] + d[off + j * n: off + (j + 1) * n].reshape(self.shape)
        return poses, logd


def _lbfgs_direction(g, pre, mem):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        gamma = (s @ y) / (y @ (pre * y))
    else:
        gamma = 1.0
    r = gamma * pre * q
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return -r


def _run(problem, cfg):
    trace = RefineTrace()
    terms = problem.evaluate(problem.poses, problem.logd)
    twists = lambda poses: [log_pose(P).as_vector().tolist() for P in poses]
    trace.records.append(TraceRecord(0, *terms, twists(problem.poses), 0.0, 0.0, "init"))
    if problem.scaling().size == 0:
        trace.status = "converged"
        return trace

    pre = problem.scaling()
    mem = []
    g = problem.gradient()
    f = terms[3]
    for it in range(1, cfg.max_iters + 1):
        d = _lbfgs_direction(g, pre, mem)
        slope = g @ d
        if not slope < 0:
            mem.clear()
            d = -pre * g
            slope = g @ d
        if slope == 0.0:
            trace.status = "converged"
            break
        a = 1.0
        accepted = None
        for _ in range(cfg.max_backtracks):
            poses, logd = problem.moved(a * d)
            try:
                new_terms = problem.evaluate(poses, logd)
            except EmptyValidSetError:
                new_terms = None
            if new_terms is not None and new_terms[3] <= f + cfg.armijo_c * a * slope:
                accepted = (poses, logd, new_terms)
                break
            a *= 0.5
        if accepted is None:
            trace.status = "stalled"
            log.info("line search failed at iteration %d (loss %.3e)", it, f)
            break
        poses, logd, new_terms = accepted
        old_d = problem.depths()
        problem.poses, problem.logd = poses, logd
        new_d = problem.depths()
        rms = float(np.sqrt(np.mean([np.mean((x - y) ** 2) for x, y in zip(new_d, old_d)])))
        g_new = problem.gradient()
        s, yv = a * d, g_new - g
        if s @ yv > 1e-300:
            mem.append((s, yv, 1.0 / (s @ yv)))
            if len(mem) > cfg.memory:
                mem.pop(0)
        decrease = f - new_terms[3]
        f, g = new_terms[3], g_new
        trace.records.append(TraceRecord(it, *new_terms, twists(poses), rms, a, "accepted"))
        if decrease <= cfg.tol_loss * max(1.0, f):
            trace.status = "converged"
            break
    else:
        trace.status = "max_iters"
    return trace


def refine_pair(I_a, I_b, D_a_init, D_b_init, P_init, K, cfg=None):
    """Descend the objective of one pair from an initial pose and depth.

    Only ``D_a`` is refined; ``D_b`` stays fixed. Returns the final pose,
    the refined ``D_a`` and the trace.
    """
    cfg = cfg or RefineConfig()
    prob = _Problem([I_a, I_b], [D_a_init, D_b_init], [P_init], K, cfg, depth_vars=[0])
    trace = _run(prob, cfg)
    return prob.poses[0], prob.depths()[0], trace


def refine_sequence(images, depths_init, poses_init, K, cfg=None):
    """Joint refinement of a chain of consecutive pairs with shared depths.

    ``poses_init[k]`` maps frame k to frame k+1. Every depth map is a
    variable when ``cfg.optimize_depth`` is set. Returns
    ``(poses, depths, trace)``.
    """
    cfg = cfg or RefineConfig()
    if len(images) != len(depths_init) or len(poses_init) != len(images) - 1:
        raise ValueError("need N images, N depths and N-1 poses")
    prob = _Problem(images, depths_init, poses_init, K, cfg, depth_vars=range(len(images)))
    trace = _run(prob, cfg)
    return prob.poses, prob.depths(), trace
