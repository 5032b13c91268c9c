"""The half-physics stepper.

The articulated body lives in reduced coordinates: a generalized velocity
``u = [root linear, root angular (world), joint omegas (parent frame)]`` drives
the root pose and the joint quaternions, and link poses always come from
forward kinematics. Joints therefore never drift apart, and collisions act on
the body through its joint-space mass matrix. Objects are free rigid bodies.

Each frame the enforced velocities from :func:`frame_velocities` overwrite
``u``; then ``substeps`` substeps of ``dt / substeps`` each run:

1. gravity on objects (and on the body root when ``human_gravity`` is set);
2. implicit joint drives (PJSC, PD, damping) when active;
3. contact detection with a speculative margin and a projected Gauss-Seidel
   solve of non-penetration, restitution and Coulomb friction;
4. exact position update (exponential map for every rotation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numba import njit

from .body import (
    ArticulatedBodySpec,
    JointSpaceState,
    LinkSpaceState,
    Pose,
    SpatialVelocity,
    fk_kernel,
    forward_velocity,
    ik_kernel,
    velocity_kernel,
)
from .collision import (
    MAX_PAIR_CONTACTS,
    Contact,
    _any_perp,
    aabb_kernel,
    collide,
    kernel_shape,
    sweep_and_prune,
)
from .kinematics import FrameVelocities, MotionSequence, frame_velocities
from .mathcore import cross, expmap, logmap, quat_conj, quat_mul, quat_mul_raw, quat_rotate, quat_to_matrix
from .scene import RigidObjectSpec, SceneSpec
from .shapes import BOX, CAPSULE, SPHERE, TRIMESH

MODE_HP, MODE_PD, MODE_TELEPORT = 0, 1, 2
# approach speed (m/s) below which restitution is ignored
RESTITUTION_THRESHOLD = 0.1
_CONTACT_CAP = 4096
# a contact inherits the previous substep's impulse from a same-pair contact within this distance (m)
WARM_START_RADIUS = 0.01


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class HalfPhysics:
    pjsc_lambda: float = 0.0

    def __post_init__(self):
        if self.pjsc_lambda < 0:
            raise ValueError("pjsc_lambda must be non-negative")


@dataclass(frozen=True)
class TorquePD:
    kp: float = 300.0
    kd: float = 10.0

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("PD gains must be non-negative")


@dataclass(frozen=True)
class PositionTeleport:
    pass


ControlMode = Union[HalfPhysics, TorquePD, PositionTeleport]


@dataclass(frozen=True)
class SimConfig:
    gravity: tuple = (0.0, 0.0, -9.81)
    substeps: int = 8
    solver_iterations: int = 16
    slop: float = 0.002
    baumgarte_beta: float = 0.2
    joint_damping: float = 0.0
    human_gravity: bool = False
    max_angular_speed: Optional[float] = None
    recompute_root_from_actual: bool = False

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.solver_iterations < 1:
            raise ValueError("solver_iterations must be >= 1")
        if self.slop < 0:
            raise ValueError("slop must be non-negative")
        if not 0.0 <= self.baumgarte_beta <= 1.0:
            raise ValueError("baumgarte_beta must lie in [0, 1]")
        if self.joint_damping < 0:
            raise ValueError("joint_damping must be non-negative")
        if len(self.gravity) != 3:
            raise ValueError("gravity must have three components")


# ---------------------------------------------------------------------------
# state records


@dataclass
class RigidObjectState:
    pose: Pose
    velocity: SpatialVelocity
    spec: RigidObjectSpec


@dataclass
class SimState:
    links: LinkSpaceState
    joint_state: JointSpaceState
    objects: list[RigidObjectState]
    time: float
    frame: int
    generalized_velocity: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class FrameRecord:
    frame: int
    time: float
    root_pos: np.ndarray
    root_quat: np.ndarray
    joints: np.ndarray
    link_pos: np.ndarray
    link_quat: np.ndarray
    obj_pos: np.ndarray
    obj_quat: np.ndarray
    obj_lin: np.ndarray
    obj_ang: np.ndarray


@dataclass
class Trajectory:
    object_names: list[str]
    records: list[FrameRecord]

    def __len__(self) -> int:
        return len(self.records)

    def link_positions(self) -> np.ndarray:
        return np.array([r.link_pos for r in self.records])

    def object_positions(self, index: int) -> np.ndarray:
        return np.array([r.obj_pos[index] for r in self.records])


@dataclass
class StepDiagnostics:
    contacts: int = 0
    min_separation: float = math.inf
    impulses: Optional[np.ndarray] = None  # (k, 3) impulse on body a, last substep
    impulse_pairs: Optional[np.ndarray] = None  # (k, 2) collidable ids


# ---------------------------------------------------------------------------
# small operations


def expected_joint_pose(q_hat_t: np.ndarray, omega_joint: np.ndarray, k: int, d_eta: float) -> np.ndarray:
    """Collision-free joint pose after ``k`` substeps of length ``d_eta``."""
    if k < 0 or not d_eta > 0:
        raise ValueError("need k >= 0 and d_eta > 0")
    return quat_mul(expmap(np.asarray(omega_joint, dtype=float) * (k * d_eta)), np.asarray(q_hat_t, dtype=float))


def pjsc_torque(lam: float, q_actual: np.ndarray, q_expected: np.ndarray) -> np.ndarray:
    """Restorative joint torque rotating the actual pose toward the expected one."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return lam * logmap(quat_mul_raw(np.asarray(q_expected, dtype=float), quat_conj(np.asarray(q_actual, dtype=float))))


def enforce_frame_velocities(state: SimState, fv: FrameVelocities, spec: ArticulatedBodySpec) -> SimState:
    """Overwrite link velocities with those implied by ``fv``; objects untouched."""
    root_vel = SpatialVelocity(np.asarray(fv.root_linear, dtype=float), np.asarray(fv.root_angular, dtype=float))
    vels = forward_velocity(spec, state.links.poses, root_vel, fv.joint_omegas)
    return SimState(
        LinkSpaceState(list(state.links.poses), vels),
        state.joint_state,
        state.objects,
        state.time,
        state.frame,
        fv.generalized(),
    )


# ---------------------------------------------------------------------------
# linear algebra kernels (plain loops keep BLAS out of the dependency set)


@njit(cache=True)
def _cholesky(A):
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            s = 1e-300
        L[j, j] = math.sqrt(s)
        inv = 1.0 / L[j, j]
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s * inv
    return L


@njit(cache=True)
def _chol_solve(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _joint_col(j):
    return 6 + 3 * (j - 1)


@njit(cache=True)
def mass_matrix_kernel(parent, anchor_c, mass, inertia, pos, quat):
    """Joint-space mass matrix of the articulated body (link frames at the COM)."""
    nl = parent.shape[0]
    nh = 6 + 3 * (nl - 1)
    M = np.zeros((nh, nh))
    cols = np.empty(nh, dtype=np.int64)
    jc = np.empty((nl, 3))
    for j in range(1, nl):
        jc[j] = pos[j] + quat_rotate(quat[j], anchor_c[j])
    for i in range(nl):
        depth = 0
        j = i
        while j != 0:
            depth += 1
            j = parent[j]
        k = 6 + 3 * depth
        Jv = np.zeros((3, k))
        Jw = np.zeros((3, k))
        for c in range(6):
            cols[c] = c
        r = pos[i] - pos[0]
        for a in range(3):
            Jv[a, a] = 1.0
            Jw[a, 3 + a] = 1.0
        # v = w x r  ->  Jv = -[r]x
        Jv[0, 4] = r[2]
        Jv[0, 5] = -r[1]
        Jv[1, 3] = -r[2]
        Jv[1, 5] = r[0]
        Jv[2, 3] = r[1]
        Jv[2, 4] = -r[0]
        c = 6
        j = i
        while j != 0:
            A = quat_to_matrix(quat[parent[j]])
            d = pos[i] - jc[j]
            for a in range(3):
                ax = A[:, a].copy()
                v = cross(ax, d)
                for row in range(3):
                    Jv[row, c + a] = v[row]
                    Jw[row, c + a] = ax[row]
                cols[c + a] = _joint_col(j) + a
            c += 3
            j = parent[j]
        R = quat_to_matrix(quat[i])
        Iw = np.zeros((3, 3))
        for a in range(3):
            for b in range(3):
                s = 0.0
                for m in range(3):
                    s += R[a, m] * inertia[i, m] * R[b, m]
                Iw[a, b] = s
        IJ = np.zeros((3, k))
        for a in range(3):
            for col in range(k):
                IJ[a, col] = Iw[a, 0] * Jw[0, col] + Iw[a, 1] * Jw[1, col] + Iw[a, 2] * Jw[2, col]
        m_i = mass[i]
        for p in range(k):
            cp = cols[p]
            for q in range(k):
                s = m_i * (Jv[0, p] * Jv[0, q] + Jv[1, p] * Jv[1, q] + Jv[2, p] * Jv[2, q])
                s += Jw[0, p] * IJ[0, q] + Jw[1, p] * IJ[1, q] + Jw[2, p] * IJ[2, q]
                M[cp, cols[q]] += s
    return M


@njit(cache=True)
def _link_row(parent, anchor_c, pos, quat, link, p, d, sign, out):
    """Add sign * (d . velocity of world point p on ``link``) as a row over u."""
    for a in range(3):
        out[a] += sign * d[a]
    w = cross(p - pos[0], d)
    for a in range(3):
        out[3 + a] += sign * w[a]
    j = link
    while j != 0:
        A = quat_to_matrix(quat[parent[j]])
        cj = pos[j] + quat_rotate(quat[j], anchor_c[j])
        w = cross(p - cj, d)
        base = _joint_col(j)
        for a in range(3):
            out[base + a] += sign * (A[0, a] * w[0] + A[1, a] * w[1] + A[2, a] * w[2])
        j = parent[j]


@njit(cache=True)
def _inv_inertia_world(quat, principal):
    R = quat_to_matrix(quat)
    out = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            s = 0.0
            for m in range(3):
                s += R[a, m] * R[b, m] / principal[m]
            out[a, b] = s
    return out


@njit(cache=True)
def _bound_radius(stype, params):
    if stype == SPHERE:
        return params[0]
    if stype == CAPSULE:
        return params[0] + params[1]
    if stype == BOX:
        return math.sqrt(params[0] ** 2 + params[1] ** 2 + params[2] ** 2)
    return 0.0


# ---------------------------------------------------------------------------
# projected Gauss-Seidel over contact rows


@njit(cache=True)
def pgs_solve(
    n_contacts, row_h, w_h, has_h, obj_a, j_oa, w_oa, obj_b, j_ob, w_ob,
    target, mu, u_h, obj_vel, iterations, lam,
):
    """Sequential impulses; row 3c is the normal of contact c, 3c+1/3c+2 its tangents.

    ``lam`` (3 * n_contacts) holds the warm-start impulses on entry, which are
    applied before iterating, and the accumulated impulses on exit.
    """
    nh = u_h.shape[0]
    nrows = 3 * n_contacts
    diag = np.zeros(nrows)
    for r in range(nrows):
        s = 0.0
        if has_h[r]:
            for i in range(nh):
                s += row_h[r, i] * w_h[r, i]
        if obj_a[r] >= 0:
            for i in range(6):
                s += j_oa[r, i] * w_oa[r, i]
        if obj_b[r] >= 0:
            for i in range(6):
                s += j_ob[r, i] * w_ob[r, i]
        diag[r] = s
    for r in range(nrows):
        if lam[r] != 0.0:
            _apply(r, lam[r], has_h, w_h, obj_a, w_oa, obj_b, w_ob, u_h, obj_vel)

    for _ in range(iterations):
        for c in range(n_contacts):
            r = 3 * c
            if diag[r] > 1e-14:
                v = _row_velocity(r, row_h, has_h, obj_a, j_oa, obj_b, j_ob, u_h, obj_vel)
                new = max(lam[r] + (target[c] - v) / diag[r], 0.0)
                _apply(r, new - lam[r], has_h, w_h, obj_a, w_oa, obj_b, w_ob, u_h, obj_vel)
                lam[r] = new
            if diag[r + 1] <= 1e-14 or mu[c] == 0.0:
                continue
            # both tangent rows at once, clamped to the circular friction cone
            v1 = _row_velocity(r + 1, row_h, has_h, obj_a, j_oa, obj_b, j_ob, u_h, obj_vel)
            v2 = _row_velocity(r + 2, row_h, has_h, obj_a, j_oa, obj_b, j_ob, u_h, obj_vel)
            t1 = lam[r + 1] - v1 / diag[r + 1]
            t2 = lam[r + 2] - v2 / diag[r + 2]
            limit = mu[c] * lam[r]
            mag = math.sqrt(t1 * t1 + t2 * t2)
            if mag > limit:
                scale = limit / mag
                t1 *= scale
                t2 *= scale
            _apply(r + 1, t1 - lam[r + 1], has_h, w_h, obj_a, w_oa, obj_b, w_ob, u_h, obj_vel)
            _apply(r + 2, t2 - lam[r + 2], has_h, w_h, obj_a, w_oa, obj_b, w_ob, u_h, obj_vel)
            lam[r + 1] = t1
            lam[r + 2] = t2


@njit(cache=True)
def _row_velocity(r, row_h, has_h, obj_a, j_oa, obj_b, j_ob, u_h, obj_vel):
    v = 0.0
    if has_h[r]:
        for i in range(u_h.shape[0]):
            v += row_h[r, i] * u_h[i]
    if obj_a[r] >= 0:
        for i in range(6):
            v += j_oa[r, i] * obj_vel[obj_a[r], i]
    if obj_b[r] >= 0:
        for i in range(6):
            v += j_ob[r, i] * obj_vel[obj_b[r], i]
    return v


@njit(cache=True)
def _apply(r, delta, has_h, w_h, obj_a, w_oa, obj_b, w_ob, u_h, obj_vel):
    if delta == 0.0:
        return
    if has_h[r]:
        for i in range(u_h.shape[0]):
            u_h[i] += w_h[r, i] * delta
    if obj_a[r] >= 0:
        for i in range(6):
            obj_vel[obj_a[r], i] += w_oa[r, i] * delta
    if obj_b[r] >= 0:
        for i in range(6):
            obj_vel[obj_b[r], i] += w_ob[r, i] * delta


@njit(cache=True)
def _object_row(pos, p, d, sign, out):
    w = cross(p - pos, d)
    for a in range(3):
        out[a] = sign * d[a]
        out[3 + a] = sign * w[a]


@njit(cache=True)
def _object_w(jrow, inv_m, inv_I, out):
    for a in range(3):
        out[a] = jrow[a] * inv_m
    for a in range(3):
        out[3 + a] = inv_I[a, 0] * jrow[3] + inv_I[a, 1] * jrow[4] + inv_I[a, 2] * jrow[5]


@njit(cache=True)
def contact_target(sep, vn, h, slop, beta, restitution):
    """Lower bound on the post-solve normal velocity of a contact.

    Contacts are driven to a rest separation of ``slop / 2``: a wider gap may
    close by exactly the excess within one substep, a narrower one (or overlap)
    is pushed open at ``beta * deficit / h``.
    """
    rest = 0.5 * slop
    if sep >= rest:
        t = -(sep - rest) / h
    else:
        t = beta * (rest - sep) / h
    if restitution > 0.0 and vn < -RESTITUTION_THRESHOLD and sep - rest + vn * h <= 0.0:
        t = max(t, -restitution * vn)
    return t


@njit(cache=True)
def _warm_start(k, cpa, cpt, cnm, mu, ws_pairs, ws_pts, ws_imp, n_prev, lam):
    """Seed each contact with the impulse of the nearest previous contact of the same pair.

    Stored impulses are world vectors, re-projected onto the current normal and
    tangents and clamped back into the friction cone.
    """
    for ci in range(k):
        best = -1
        best_d = WARM_START_RADIUS * WARM_START_RADIUS
        for j in range(n_prev):
            if ws_pairs[j, 0] != cpa[ci, 0] or ws_pairs[j, 1] != cpa[ci, 1]:
                continue
            d = 0.0
            for a in range(3):
                d += (ws_pts[j, a] - cpt[ci, a]) ** 2
            if d < best_d:
                best_d = d
                best = j
        if best < 0:
            continue
        n = cnm[ci]
        t1 = _any_perp(n)
        t2 = cross(n, t1)
        P = ws_imp[best]
        ln = P[0] * n[0] + P[1] * n[1] + P[2] * n[2]
        if ln <= 0.0:
            continue
        l1 = P[0] * t1[0] + P[1] * t1[1] + P[2] * t1[2]
        l2 = P[0] * t2[0] + P[1] * t2[1] + P[2] * t2[2]
        mag = math.sqrt(l1 * l1 + l2 * l2)
        limit = mu[ci] * ln
        if mag > limit:
            l1 *= limit / mag
            l2 *= limit / mag
        lam[3 * ci] = ln
        lam[3 * ci + 1] = l1
        lam[3 * ci + 2] = l2


@njit(cache=True)
def _local_drive(parent, l_inertia, quat, jq, u_h, drive_base, drive_omega, k, h, step):
    """Implicit per-joint spring toward the expected pose at the end of this substep.

    The torque ``k * err`` acts on the child link and, reversed, on the parent;
    each responds with its own world inertia only, so the joint rate sees the
    inverse inertia ``R_p^T (I_c^-1 + I_p^-1) R_p``. Joints already moving
    exactly onto the expected pose are left untouched. Returns True when any
    joint rate changed.
    """
    changed = False
    for j in range(1, parent.shape[0]):
        exp_q = quat_mul(expmap(drive_omega[j - 1] * ((step + 1) * h)), drive_base[j - 1])
        err = logmap(quat_mul_raw(exp_q, quat_conj(jq[j - 1])))
        base = _joint_col(j)
        on_track = True
        for a in range(3):
            if abs(err[a] - h * u_h[base + a]) > 1e-13:
                on_track = False
        if on_track:
            continue
        p = parent[j]
        Rp = quat_to_matrix(quat[p])
        S = _inv_inertia_world(quat[j], l_inertia[j]) + _inv_inertia_world(quat[p], l_inertia[p])
        W = np.zeros((3, 3))
        for r in range(3):
            for c in range(3):
                v = 0.0
                for m in range(3):
                    for n in range(3):
                        v += Rp[m, r] * S[m, n] * Rp[n, c]
                W[r, c] = v
        A = np.eye(3) + (h * h * k) * W
        rhs = np.empty(3)
        for a in range(3):
            rhs[a] = u_h[base + a] + h * k * (W[a, 0] * err[0] + W[a, 1] * err[1] + W[a, 2] * err[2])
        sol = _chol_solve(_cholesky(A), rhs)
        for a in range(3):
            u_h[base + a] = sol[a]
        changed = True
    return changed


# ---------------------------------------------------------------------------
# the substep kernel


@njit(cache=True)
def simulate_substeps(
    # body
    parent, anchor_p, anchor_c, l_mass, l_inertia, l_type, l_params, l_collide, l_friction, l_restitution,
    # objects
    o_mass, o_inertia, o_type, o_params, o_friction, o_restitution,
    # statics (world-encoded)
    s_type, s_params, s_pos, s_quat, s_friction, tris,
    # state, updated in place
    root_pos, root_quat, jq, u_h, o_pos, o_quat, o_vel,
    # parameters
    dt, substeps, gravity, human_gravity, slop, beta, iterations,
    kinematic_body, drive_k, drive_d, drive_base, drive_omega, drive_local,
    # diagnostics out
    rec_pairs, rec_imp,
    # warm-start cache: previous substep's contacts, updated in place
    ws_pairs, ws_pts, ws_imp, ws_count,
):
    nl = parent.shape[0]
    no = o_mass.shape[0]
    ns = s_type.shape[0]
    nc = nl + no + ns
    nh = u_h.shape[0]
    h = dt / substeps

    c_type = np.empty(nc, dtype=np.int64)
    c_params = np.empty((nc, 4))
    c_pos = np.zeros((nc, 3))
    c_quat = np.zeros((nc, 4))
    c_fric = np.empty(nc)
    c_rest = np.zeros(nc)
    c_margin = np.zeros(nc)
    for i in range(nl):
        c_type[i] = l_type[i]
        c_params[i] = l_params[i]
        c_fric[i] = l_friction[i]
        c_rest[i] = l_restitution[i]
    for i in range(no):
        c_type[nl + i] = o_type[i]
        c_params[nl + i] = o_params[i]
        c_fric[nl + i] = o_friction[i]
        c_rest[nl + i] = o_restitution[i]
    for i in range(ns):
        c = nl + no + i
        c_type[c] = s_type[i]
        c_params[c] = s_params[i]
        c_pos[c] = s_pos[i]
        c_quat[c] = s_quat[i]
        c_fric[c] = s_friction[i]

    cap = rec_pairs.shape[0]
    cpt = np.empty((cap, 3))
    cnm = np.empty((cap, 3))
    csp = np.empty(cap)
    cpa = np.empty((cap, 2), dtype=np.int64)
    lo = np.empty((nc, 3))
    hi = np.empty((nc, 3))
    drive_active = (drive_k > 0.0 or drive_d > 0.0) and not kinematic_body
    # stiffness carried by the joint-space mass matrix; a local drive is solved per joint instead
    k_full = 0.0 if drive_local else drive_k
    n_rec = 0
    min_sep = np.inf
    status = 0

    for step in range(substeps):
        # 1. external accelerations
        for i in range(no):
            for a in range(3):
                o_vel[i, a] += gravity[a] * h
        if human_gravity and not kinematic_body:
            for a in range(3):
                u_h[a] += gravity[a] * h

        pos, quat = fk_kernel(parent, anchor_p, anchor_c, root_pos, root_quat, jq)
        if kinematic_body:
            lin = np.zeros((nl, 3))
            ang = np.zeros((nl, 3))
        else:
            lin, ang = velocity_kernel(parent, anchor_p, anchor_c, quat, u_h)

        # 2. implicit joint drives
        L = np.zeros((1, 1))
        have_L = False
        if drive_active:
            rhs_extra = np.zeros(nh)
            need = drive_d > 0.0
            if k_full > 0.0:
                for j in range(1, nl):
                    exp_q = quat_mul(expmap(drive_omega[j - 1] * ((step + 1) * h)), drive_base[j - 1])
                    err = logmap(quat_mul_raw(exp_q, quat_conj(jq[j - 1])))
                    base = _joint_col(j)
                    for a in range(3):
                        rhs_extra[base + a] = h * k_full * err[a]
                        if abs(err[a] - h * u_h[base + a]) > 1e-13:
                            need = True
            if need:
                A = mass_matrix_kernel(parent, anchor_c, l_mass, l_inertia, pos, quat)
                rhs = np.zeros(nh)
                for r in range(nh):
                    s = 0.0
                    for c in range(nh):
                        s += A[r, c] * u_h[c]
                    rhs[r] = s + rhs_extra[r]
                for r in range(6, nh):
                    A[r, r] += h * drive_d + h * h * k_full
                L = _cholesky(A)
                have_L = True
                sol = _chol_solve(L, rhs)
                for r in range(nh):
                    u_h[r] = sol[r]
                lin, ang = velocity_kernel(parent, anchor_p, anchor_c, quat, u_h)
            if drive_local and drive_k > 0.0:
                if _local_drive(parent, l_inertia, quat, jq, u_h, drive_base, drive_omega, drive_k, h, step):
                    lin, ang = velocity_kernel(parent, anchor_p, anchor_c, quat, u_h)

        # 3. collision detection
        for i in range(nl):
            c_pos[i] = pos[i]
            c_quat[i] = quat[i]
            sp = math.sqrt(lin[i, 0] ** 2 + lin[i, 1] ** 2 + lin[i, 2] ** 2)
            wp = math.sqrt(ang[i, 0] ** 2 + ang[i, 1] ** 2 + ang[i, 2] ** 2)
            c_margin[i] = (sp + wp * _bound_radius(l_type[i], l_params[i])) * h
        for i in range(no):
            c_pos[nl + i] = o_pos[i]
            c_quat[nl + i] = o_quat[i]
            sp = math.sqrt(o_vel[i, 0] ** 2 + o_vel[i, 1] ** 2 + o_vel[i, 2] ** 2)
            wp = math.sqrt(o_vel[i, 3] ** 2 + o_vel[i, 4] ** 2 + o_vel[i, 5] ** 2)
            c_margin[nl + i] = (sp + wp * _bound_radius(o_type[i], o_params[i])) * h
        for c in range(nc):
            l_, h_ = aabb_kernel(c_type[c], c_params[c], c_pos[c], c_quat[c], tris, c_margin[c] + slop)
            lo[c] = l_
            hi[c] = h_
        pairs = sweep_and_prune(lo, hi)
        k = 0
        for pi in range(pairs.shape[0]):
            a = pairs[pi, 0]
            b = pairs[pi, 1]
            if b < nl:
                continue  # no self-collision
            if a >= nl + no:
                continue  # static-static
            if a < nl and not l_collide[a]:
                continue
            if k + MAX_PAIR_CONTACTS > cap and c_type[b] != TRIMESH:
                break
            k0 = k
            margin = slop + c_margin[a] + c_margin[b]
            k = collide(c_type[a], c_params[a], c_pos[a], c_quat[a], c_type[b], c_params[b], c_pos[b], c_quat[b],
                        tris, margin, cpt, cnm, csp, k)
            if k < 0:
                return -1, 0, 0.0
            if k > cap:
                k = cap
            for i in range(k0, k):
                cpa[i, 0] = a
                cpa[i, 1] = b

        # 4. contact solve
        if k > 0:
            nrows = 3 * k
            has_h = np.zeros(nrows, dtype=np.bool_)
            row_h = np.zeros((nrows, nh))
            w_h = np.zeros((nrows, nh))
            obj_a = -np.ones(nrows, dtype=np.int64)
            obj_b = -np.ones(nrows, dtype=np.int64)
            j_oa = np.zeros((nrows, 6))
            j_ob = np.zeros((nrows, 6))
            w_oa = np.zeros((nrows, 6))
            w_ob = np.zeros((nrows, 6))
            target = np.zeros(k)
            mu = np.zeros(k)
            body_rows = False
            for ci in range(k):
                a = cpa[ci, 0]
                b = cpa[ci, 1]
                if a < nl and not kinematic_body:
                    body_rows = True
                    break
            if body_rows and not have_L:
                A = mass_matrix_kernel(parent, anchor_c, l_mass, l_inertia, pos, quat)
                if drive_active:
                    for r in range(6, nh):
                        A[r, r] += h * drive_d + h * h * k_full
                L = _cholesky(A)
                have_L = True
            for ci in range(k):
                a = cpa[ci, 0]
                b = cpa[ci, 1]
                n = cnm[ci]
                pa = cpt[ci]
                pb = pa - n * csp[ci]
                t1 = _any_perp(n)
                t2 = cross(n, t1)
                mu[ci] = c_fric[a] * c_fric[b]
                for sub in range(3):
                    r = 3 * ci + sub
                    d = n if sub == 0 else (t1 if sub == 1 else t2)
                    # body a (links or objects; a < b so a is never static)
                    if a < nl:
                        if not kinematic_body:
                            _link_row(parent, anchor_c, pos, quat, a, pa, d, 1.0, row_h[r])
                            has_h[r] = True
                    else:
                        oa = a - nl
                        obj_a[r] = oa
                        _object_row(o_pos[oa], pa, d, 1.0, j_oa[r])
                        _object_w(j_oa[r], 1.0 / o_mass[oa], _inv_inertia_world(o_quat[oa], o_inertia[oa]), w_oa[r])
                    if nl <= b < nl + no:
                        ob = b - nl
                        if obj_a[r] >= 0:
                            obj_b[r] = ob
                            _object_row(o_pos[ob], pb, d, -1.0, j_ob[r])
                            _object_w(j_ob[r], 1.0 / o_mass[ob], _inv_inertia_world(o_quat[ob], o_inertia[ob]), w_ob[r])
                        else:
                            obj_a[r] = ob
                            _object_row(o_pos[ob], pb, d, -1.0, j_oa[r])
                            _object_w(j_oa[r], 1.0 / o_mass[ob], _inv_inertia_world(o_quat[ob], o_inertia[ob]), w_oa[r])
                    if has_h[r]:
                        sol = _chol_solve(L, row_h[r])
                        for i in range(nh):
                            w_h[r, i] = sol[i]
                # pre-solve normal velocity for restitution and speculative bound
                vn = 0.0
                r = 3 * ci
                if has_h[r]:
                    for i in range(nh):
                        vn += row_h[r, i] * u_h[i]
                if obj_a[r] >= 0:
                    for i in range(6):
                        vn += j_oa[r, i] * o_vel[obj_a[r], i]
                if obj_b[r] >= 0:
                    for i in range(6):
                        vn += j_ob[r, i] * o_vel[obj_b[r], i]
                target[ci] = contact_target(csp[ci], vn, h, slop, beta, max(c_rest[a], c_rest[b]))
            lam = np.zeros(nrows)
            _warm_start(k, cpa, cpt, cnm, mu, ws_pairs, ws_pts, ws_imp, ws_count[0], lam)
            pgs_solve(k, row_h, w_h, has_h, obj_a, j_oa, w_oa, obj_b, j_ob, w_ob, target, mu, u_h, o_vel,
                      iterations, lam)
            ws_count[0] = min(k, ws_pairs.shape[0])
            for ci in range(ws_count[0]):
                n = cnm[ci]
                t1 = _any_perp(n)
                t2 = cross(n, t1)
                for a in range(3):
                    ws_imp[ci, a] = lam[3 * ci] * n[a] + lam[3 * ci + 1] * t1[a] + lam[3 * ci + 2] * t2[a]
                    ws_pts[ci, a] = cpt[ci, a]
                ws_pairs[ci, 0] = cpa[ci, 0]
                ws_pairs[ci, 1] = cpa[ci, 1]
            if step == substeps - 1:
                n_rec = min(k, cap)
                for ci in range(n_rec):
                    n = cnm[ci]
                    t1 = _any_perp(n)
                    t2 = cross(n, t1)
                    for a in range(3):
                        rec_imp[ci, a] = lam[3 * ci] * n[a] + lam[3 * ci + 1] * t1[a] + lam[3 * ci + 2] * t2[a]
                    rec_pairs[ci, 0] = cpa[ci, 0]
                    rec_pairs[ci, 1] = cpa[ci, 1]
            for ci in range(k):
                if csp[ci] < min_sep:
                    min_sep = csp[ci]
        else:
            ws_count[0] = 0
            if step == substeps - 1:
                n_rec = 0

        # 5. integrate positions
        if not kinematic_body:
            for a in range(3):
                root_pos[a] += u_h[a] * h
            root_quat[:] = quat_mul(expmap(u_h[3:6] * h), root_quat)
            for j in range(jq.shape[0]):
                base = 6 + 3 * j
                jq[j] = quat_mul(expmap(u_h[base:base + 3] * h), jq[j])
        for i in range(no):
            for a in range(3):
                o_pos[i, a] += o_vel[i, a] * h
            o_quat[i] = quat_mul(expmap(o_vel[i, 3:6] * h), o_quat[i])

        for i in range(nh):
            if not np.isfinite(u_h[i]):
                status = 3
        for i in range(no):
            for a in range(6):
                if not np.isfinite(o_vel[i, a]):
                    status = 3
        if status != 0:
            return status, n_rec, min_sep
    return status, n_rec, min_sep


# ---------------------------------------------------------------------------
# simulator


def _mode_code(mode: ControlMode) -> int:
    if isinstance(mode, HalfPhysics):
        return MODE_HP
    if isinstance(mode, TorquePD):
        return MODE_PD
    if isinstance(mode, PositionTeleport):
        return MODE_TELEPORT
    raise TypeError(f"unknown control mode {mode!r}")


class Simulator:
    """Stateful half-physics world: one articulated body, rigid objects, static scene."""

    def __init__(
        self,
        spec: ArticulatedBodySpec,
        scene: Optional[SceneSpec] = None,
        config: Optional[SimConfig] = None,
        mode: Optional[ControlMode] = None,
    ):
        self.spec = spec
        self.scene = scene or SceneSpec()
        self.config = config or SimConfig()
        self.mode = mode or HalfPhysics()
        self._mode = _mode_code(self.mode)
        self.body = spec.arrays
        objs = self.scene.objects
        self.o_mass = np.array([o.mass for o in objs], dtype=float)
        self.o_inertia = np.array([o.inertia.principal for o in objs], dtype=float).reshape(-1, 3)
        enc = [kernel_shape(o.shape, o.initial_pose) for o in objs]
        self.o_type = np.array([e[0] for e in enc], dtype=np.int64)
        self.o_params = np.array([e[1] for e in enc], dtype=float).reshape(-1, 4)
        self.o_friction = np.array([o.friction for o in objs], dtype=float)
        self.o_restitution = np.array([o.restitution for o in objs], dtype=float)
        s_type, s_params, s_pos, s_quat, s_fric, tris = [], [], [], [], [], []
        n_tri = 0
        for s in self.scene.static:
            tid, params, pos, quat, tr = kernel_shape(s.shape, s.pose, n_tri)
            n_tri += len(tr)
            tris.append(tr)
            s_type.append(tid)
            s_params.append(params)
            s_pos.append(pos)
            s_quat.append(quat)
            s_fric.append(s.friction)
        self.s_type = np.array(s_type, dtype=np.int64)
        self.s_params = np.array(s_params, dtype=float).reshape(-1, 4)
        self.s_pos = np.array(s_pos, dtype=float).reshape(-1, 3)
        self.s_quat = np.array(s_quat, dtype=float).reshape(-1, 4)
        self.s_friction = np.array(s_fric, dtype=float)
        self.tris = np.ascontiguousarray(np.concatenate(tris)) if n_tri else np.zeros((1, 3, 3))
        self.gravity = np.asarray(self.config.gravity, dtype=float)
        self.rec_pairs = np.zeros((_CONTACT_CAP, 2), dtype=np.int64)
        self.rec_imp = np.zeros((_CONTACT_CAP, 3))
        self.diagnostics = StepDiagnostics()
        self.frame = 0
        self.time = 0.0

    # -- state -------------------------------------------------------------
    def reset(self, js0: JointSpaceState, object_states: Optional[list[tuple[Pose, SpatialVelocity]]] = None):
        self.root_pos = np.array(js0.root_pose.position, dtype=float)
        self.root_quat = np.array(js0.root_pose.orientation, dtype=float)
        self.jq = np.ascontiguousarray(js0.joint_quats, dtype=float).reshape(-1, 4).copy()
        self.u = np.zeros(6 + 3 * self.jq.shape[0])
        objs = self.scene.objects
        if object_states is None:
            object_states = [(o.initial_pose, o.initial_velocity) for o in objs]
        self.o_pos = np.array([p.position for p, _ in object_states], dtype=float).reshape(-1, 3)
        self.o_quat = np.array([p.orientation for p, _ in object_states], dtype=float).reshape(-1, 4)
        self.o_vel = np.array(
            [np.concatenate([v.linear, v.angular]) for _, v in object_states], dtype=float
        ).reshape(-1, 6)
        self.ws_pairs = np.zeros((_CONTACT_CAP, 2), dtype=np.int64)
        self.ws_pts = np.zeros((_CONTACT_CAP, 3))
        self.ws_imp = np.zeros((_CONTACT_CAP, 3))
        self.ws_count = np.zeros(1, dtype=np.int64)
        self.frame = 0
        self.time = 0.0

    def joint_state(self) -> JointSpaceState:
        return JointSpaceState(Pose(self.root_pos.copy(), self.root_quat.copy()), self.jq.copy())

    def link_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.body
        return fk_kernel(a.parent, a.anchor_p, a.anchor_c, self.root_pos, self.root_quat, self.jq)

    def state(self) -> SimState:
        a = self.body
        pos, quat = self.link_arrays()
        lin, ang = velocity_kernel(a.parent, a.anchor_p, a.anchor_c, quat, self.u)
        jq, residual = ik_kernel(a.parent, a.anchor_p, a.anchor_c, pos, quat)
        links = LinkSpaceState(
            [Pose(pos[i], quat[i]) for i in range(len(pos))],
            [SpatialVelocity(lin[i], ang[i]) for i in range(len(pos))],
        )
        js = JointSpaceState(Pose(pos[0].copy(), quat[0].copy()), jq, float(residual))
        objects = [
            RigidObjectState(
                Pose(self.o_pos[i].copy(), self.o_quat[i].copy()),
                SpatialVelocity(self.o_vel[i, :3].copy(), self.o_vel[i, 3:].copy()),
                spec,
            )
            for i, spec in enumerate(self.scene.objects)
        ]
        return SimState(links, js, objects, self.time, self.frame, self.u.copy())

    def record(self) -> FrameRecord:
        pos, quat = self.link_arrays()
        return FrameRecord(
            self.frame, self.time, self.root_pos.copy(), self.root_quat.copy(), self.jq.copy(), pos, quat,
            self.o_pos.copy(), self.o_quat.copy(), self.o_vel[:, :3].copy(), self.o_vel[:, 3:].copy(),
        )

    # -- stepping ----------------------------------------------------------
    def _substeps(self, dt, kinematic, drive_k, drive_d, drive_base, drive_omega, drive_local=False):
        a = self.body
        cfg = self.config
        status, n_rec, min_sep = simulate_substeps(
            a.parent, a.anchor_p, a.anchor_c, a.mass, a.inertia, a.shape_type, a.shape_params, a.collide,
            a.friction, a.restitution,
            self.o_mass, self.o_inertia, self.o_type, self.o_params, self.o_friction, self.o_restitution,
            self.s_type, self.s_params, self.s_pos, self.s_quat, self.s_friction, self.tris,
            self.root_pos, self.root_quat, self.jq, self.u, self.o_pos, self.o_quat, self.o_vel,
            float(dt), int(cfg.substeps), self.gravity, bool(cfg.human_gravity), float(cfg.slop),
            float(cfg.baumgarte_beta), int(cfg.solver_iterations),
            bool(kinematic), float(drive_k), float(drive_d), drive_base, drive_omega, bool(drive_local),
            self.rec_pairs, self.rec_imp,
            self.ws_pairs, self.ws_pts, self.ws_imp, self.ws_count,
        )
        if status == -1:
            raise SimulationError("unsupported collider pair in scene")
        self.diagnostics = StepDiagnostics(
            n_rec, float(min_sep), self.rec_imp[:n_rec].copy(), self.rec_pairs[:n_rec].copy()
        )
        if status != 0:
            raise SimulationError(f"solver diverged (non-finite velocity) at frame {self.frame + 1}")

    def step_frame(self, seq: MotionSequence, t: int) -> FrameRecord:
        if not 1 <= t <= seq.frame_count - 1:
            raise SimulationError(f"frame index {t} outside 1..{seq.frame_count - 1}")
        cfg = self.config
        dt = seq.dt
        J = self.jq.shape[0]
        zero_w = np.zeros((J, 3))
        if self._mode == MODE_TELEPORT:
            self.root_pos = seq.root_pos[t].copy()
            self.root_quat = seq.root_quat[t].copy()
            self.jq = seq.joint_quats[t].copy()
            self.u[:] = 0.0
            self._substeps(dt, True, 0.0, 0.0, self.jq.copy(), zero_w)
        else:
            fv = frame_velocities(
                seq, t, self.joint_state(),
                root_from_actual=cfg.recompute_root_from_actual, max_angular_speed=cfg.max_angular_speed,
            )
            if self._mode == MODE_HP:
                self.u[:] = fv.generalized()
                lam = self.mode.pjsc_lambda
                self._substeps(dt, False, lam, cfg.joint_damping, self.jq.copy(), fv.joint_omegas.copy(), True)
            else:
                self.u[0:3] = fv.root_linear
                self.u[3:6] = fv.root_angular
                self._substeps(
                    dt, False, self.mode.kp, self.mode.kd + cfg.joint_damping, seq.joint_quats[t].copy(), zero_w
                )
        self.frame = t
        self.time = t * dt
        return self.record()


def run(
    spec: ArticulatedBodySpec,
    seq: MotionSequence,
    scene: Optional[SceneSpec] = None,
    config: Optional[SimConfig] = None,
    mode: Optional[ControlMode] = None,
) -> Trajectory:
    """Initialize from frame 0 and the objects' initial states, then step every frame."""
    if seq.joint_count != spec.joint_count:
        raise SimulationError(f"motion has {seq.joint_count} joints, body has {spec.joint_count}")
    sim = Simulator(spec, scene, config, mode)
    sim.reset(seq.frame(0))
    records = [sim.record()]
    for t in range(1, seq.frame_count):
        records.append(sim.step_frame(seq, t))
    return Trajectory([o.name for o in sim.scene.objects], records)


# ---------------------------------------------------------------------------
# free rigid bodies: direct access to the contact solver


@dataclass
class RigidBody:
    """A free rigid body for :func:`solve_constraints`; ``mass = inf`` means static."""

    pose: Pose
    velocity: SpatialVelocity
    mass: float
    inertia: np.ndarray = field(default_factory=lambda: np.ones(3))


def solve_constraints(
    bodies: list[RigidBody], contacts: list[Contact], dt_sub: float, config: Optional[SimConfig] = None
) -> np.ndarray:
    """Run the contact solver on free rigid bodies, updating their velocities in place.

    Returns the per-contact impulse applied to ``body_a`` (``body_b`` receives
    the negation).
    """
    cfg = config or SimConfig()
    dyn = [i for i, b in enumerate(bodies) if math.isfinite(b.mass)]
    slot = {i: s for s, i in enumerate(dyn)}
    vel = np.array([np.concatenate([bodies[i].velocity.linear, bodies[i].velocity.angular]) for i in dyn],
                   dtype=float).reshape(-1, 6)
    k = len(contacts)
    nrows = 3 * k
    row_h = np.zeros((nrows, 0))
    has_h = np.zeros(nrows, dtype=np.bool_)
    obj_a = -np.ones(nrows, dtype=np.int64)
    obj_b = -np.ones(nrows, dtype=np.int64)
    j_oa, j_ob, w_oa, w_ob = (np.zeros((nrows, 6)) for _ in range(4))
    target = np.zeros(k)
    mu = np.zeros(k)
    frames = []
    for ci, c in enumerate(contacts):
        n = np.asarray(c.normal, dtype=float)
        t1 = _any_perp(n)
        t2 = np.cross(n, t1)
        frames.append((n, t1, t2))
        pa = np.asarray(c.point, dtype=float)
        pb = pa - n * c.separation
        mu[ci] = c.friction
        for sub, d in enumerate((n, t1, t2)):
            r = 3 * ci + sub
            slots = []
            for body, point, sign in ((c.body_a, pa, 1.0), (c.body_b, pb, -1.0)):
                if body in slot:
                    b = bodies[body]
                    jrow = np.zeros(6)
                    _object_row(np.asarray(b.pose.position, dtype=float), point, d, sign, jrow)
                    wrow = np.zeros(6)
                    _object_w(jrow, 1.0 / b.mass, _inv_inertia_world(np.asarray(b.pose.orientation, dtype=float),
                                                                     np.asarray(b.inertia, dtype=float)), wrow)
                    slots.append((slot[body], jrow, wrow))
            for (s, jrow, wrow), (oidx, jarr, warr) in zip(slots, ((obj_a, j_oa, w_oa), (obj_b, j_ob, w_ob))):
                oidx[r] = s
                jarr[r] = jrow
                warr[r] = wrow
        vn = 0.0
        r = 3 * ci
        for oidx, jarr in ((obj_a, j_oa), (obj_b, j_ob)):
            if oidx[r] >= 0:
                vn += float(jarr[r] @ vel[oidx[r]])
        target[ci] = contact_target(c.separation, vn, dt_sub, cfg.slop, cfg.baumgarte_beta, c.restitution)
    lam = np.zeros(nrows)
    pgs_solve(k, row_h, row_h.copy(), has_h, obj_a, j_oa, w_oa, obj_b, j_ob, w_ob, target, mu, np.zeros(0), vel,
              cfg.solver_iterations, lam)
    for s, i in enumerate(dyn):
        bodies[i].velocity = SpatialVelocity(vel[s, :3].copy(), vel[s, 3:].copy())
    out = np.zeros((k, 3))
    for ci, (n, t1, t2) in enumerate(frames):
        out[ci] = lam[3 * ci] * n + lam[3 * ci + 1] * t1 + lam[3 * ci + 2] * t2
    return out


def kinematic_replay(spec: ArticulatedBodySpec, seq: MotionSequence, scene: Optional[SceneSpec] = None) -> Trajectory:
    """Pure kinematic playback: the body sits exactly on its targets, objects stay put."""
    scene = scene or SceneSpec()
    a = spec.arrays
    objs = scene.objects
    o_pos = np.array([o.initial_pose.position for o in objs], dtype=float).reshape(-1, 3)
    o_quat = np.array([o.initial_pose.orientation for o in objs], dtype=float).reshape(-1, 4)
    zeros = np.zeros((len(objs), 3))
    records = []
    for t in range(seq.frame_count):
        pos, quat = fk_kernel(a.parent, a.anchor_p, a.anchor_c, seq.root_pos[t], seq.root_quat[t], seq.joint_quats[t])
        records.append(FrameRecord(
            t, t * seq.dt, seq.root_pos[t].copy(), seq.root_quat[t].copy(), seq.joint_quats[t].copy(), pos, quat,
            o_pos.copy(), o_quat.copy(), zeros.copy(), zeros.copy(),
        ))
    return Trajectory([o.name for o in objs], records)
