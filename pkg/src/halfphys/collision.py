"""Broadphase, narrowphase contact generation, surface sampling and signed distance.

Kernel conventions: a contact between collidables a and b carries a point on
a's surface, a unit normal pointing from b toward a and a signed separation
``sep`` (negative when overlapping). Contacts are produced for every feature
pair whose separation is at most the supplied margin, so callers can treat
near-touching pairs speculatively. Triangle meshes are passed as a shared
world-space ``(T, 3, 3)`` buffer indexed by ``(offset, count)`` parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .body import Pose
from .mathcore import cross, quat_rotate, quat_to_matrix
from .shapes import (
    BOX,
    CAPSULE,
    HALFSPACE,
    SPHERE,
    TRIMESH,
    Box,
    Capsule,
    HalfSpace,
    Shape,
    ShapeError,
    Sphere,
    TriMesh,
    encode_shape,
)

MAX_PAIR_CONTACTS = 64
_GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)
_GS_ITERS = 60
# an edge axis must beat the best face axis by this much to be chosen (box-box)
_EDGE_BIAS = 1e-5
UNSUPPORTED = -1


class UnsupportedPairError(ShapeError):
    pass


@dataclass
class Aabb:
    min: np.ndarray
    max: np.ndarray


@dataclass
class Contact:
    body_a: int
    body_b: int
    point: np.ndarray
    normal: np.ndarray
    depth: float
    friction: float = 1.0
    restitution: float = 0.0
    separation: float = 0.0


def combine_friction(mu_a: float, mu_b: float) -> float:
    return mu_a * mu_b


def combine_restitution(e_a: float, e_b: float) -> float:
    return max(e_a, e_b)


# ---------------------------------------------------------------------------
# small geometry helpers


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def _norm(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit(cache=True)
def _push(cp, cn, cs, k, p, n, s):
    if k < cp.shape[0]:
        cp[k] = p
        cn[k] = n
        cs[k] = s
    return k + 1


@njit(cache=True)
def _any_perp(n):
    if abs(n[0]) < 0.9:
        v = cross(n, np.array([1.0, 0.0, 0.0]))
    else:
        v = cross(n, np.array([0.0, 1.0, 0.0]))
    return v / _norm(v)


@njit(cache=True)
def closest_on_segment(p, a, b):
    ab = b - a
    denom = _dot(ab, ab)
    if denom < 1e-300:
        return a.copy(), 0.0
    t = _dot(p - a, ab) / denom
    t = min(max(t, 0.0), 1.0)
    return a + t * ab, t


@njit(cache=True)
def segment_segment(p1, q1, p2, q2):
    """Closest points between segments [p1,q1] and [p2,q2] (returns c1, c2, s, t)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    eps = 1e-300
    if a <= eps and e <= eps:
        return p1.copy(), p2.copy(), 0.0, 0.0
    if a <= eps:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = _dot(d1, r)
        if e <= eps:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = _dot(d1, d2)
            denom = a * e - b * b
            if denom > 1e-14 * a * e:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    return p1 + d1 * s, p2 + d2 * t, s, t


@njit(cache=True)
def closest_on_triangle(p, a, b, c):
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp_ = p - c
    d5 = _dot(ab, cp_)
    d6 = _dot(ac, cp_)
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@njit(cache=True)
def box_sdf_local(p, he):
    """Signed distance of local point ``p`` to a box and the outward unit normal."""
    q = np.abs(p) - he
    out = np.empty(3)
    for i in range(3):
        out[i] = max(q[i], 0.0)
    lo = _norm(out)
    n = np.zeros(3)
    if lo > 0.0:
        for i in range(3):
            n[i] = math.copysign(out[i], p[i]) / lo
        return lo, n
    k = 0
    for i in range(1, 3):
        if q[i] > q[k]:
            k = i
    n[k] = 1.0 if p[k] >= 0.0 else -1.0
    return q[k], n


@njit(cache=True)
def capsule_segment(pos, quat, hl):
    ax = quat_rotate(quat, np.array([0.0, 0.0, hl]))
    return pos - ax, pos + ax


# ---------------------------------------------------------------------------
# primitive pairs; "a" is always the lower-ranked shape


@njit(cache=True)
def _sphere_sphere(ca, ra, cb, rb, margin, cp, cn, cs, k):
    d = ca - cb
    L = _norm(d)
    if L - ra - rb > margin:
        return k
    if L > 1e-12:
        n = d / L
    else:
        n = np.array([0.0, 0.0, 1.0])
    return _push(cp, cn, cs, k, ca - n * ra, n, L - ra - rb)


@njit(cache=True)
def _sphere_halfspace(ca, ra, hn, off, margin, cp, cn, cs, k):
    s = _dot(hn, ca) - off - ra
    if s > margin:
        return k
    return _push(cp, cn, cs, k, ca - hn * ra, hn.copy(), s)


@njit(cache=True)
def _sphere_box_sep(ca, ra, pb, qb, he):
    local = quat_rotate(np.array([qb[0], -qb[1], -qb[2], -qb[3]]), ca - pb)
    d, nl = box_sdf_local(local, he)
    return d - ra, quat_rotate(qb, nl)


@njit(cache=True)
def _sphere_box(ca, ra, pb, qb, he, margin, cp, cn, cs, k):
    s, n = _sphere_box_sep(ca, ra, pb, qb, he)
    if s > margin:
        return k
    return _push(cp, cn, cs, k, ca - n * ra, n, s)


@njit(cache=True)
def _sphere_triangle_sep(ca, ra, t0, t1, t2):
    q = closest_on_triangle(ca, t0, t1, t2)
    d = ca - q
    L = _norm(d)
    if L > 1e-12:
        n = d / L
    else:
        n = cross(t1 - t0, t2 - t0)
        n = n / _norm(n)
    return L - ra, n


@njit(cache=True)
def _sphere_triangle(ca, ra, t0, t1, t2, margin, cp, cn, cs, k):
    s, n = _sphere_triangle_sep(ca, ra, t0, t1, t2)
    if s > margin:
        return k
    return _push(cp, cn, cs, k, ca - n * ra, n, s)


@njit(cache=True)
def _seg_box_min(e0, e1, pb, qb, he):
    # box SDF is convex, so its restriction to a segment is unimodal
    lo, hi = 0.0, 1.0
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, _ = _sphere_box_sep(e0 + x1 * (e1 - e0), 0.0, pb, qb, he)
    f2, _ = _sphere_box_sep(e0 + x2 * (e1 - e0), 0.0, pb, qb, he)
    for _ in range(_GS_ITERS):
        if f1 <= f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1, _ = _sphere_box_sep(e0 + x1 * (e1 - e0), 0.0, pb, qb, he)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2, _ = _sphere_box_sep(e0 + x2 * (e1 - e0), 0.0, pb, qb, he)
    return 0.5 * (lo + hi)


@njit(cache=True)
def _seg_tri_min(e0, e1, t0, t1, t2):
    lo, hi = 0.0, 1.0
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, _ = _sphere_triangle_sep(e0 + x1 * (e1 - e0), 0.0, t0, t1, t2)
    f2, _ = _sphere_triangle_sep(e0 + x2 * (e1 - e0), 0.0, t0, t1, t2)
    for _ in range(_GS_ITERS):
        if f1 <= f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1, _ = _sphere_triangle_sep(e0 + x1 * (e1 - e0), 0.0, t0, t1, t2)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2, _ = _sphere_triangle_sep(e0 + x2 * (e1 - e0), 0.0, t0, t1, t2)
    return 0.5 * (lo + hi)


@njit(cache=True)
def _segment_box_sat(e0, e1, pb, qb, he):
    """Minimum-overlap separating axis of a segment that crosses a box.

    Returns the unit direction that pushes the segment out and the box's
    support extent along it (``max n.x`` over the box).
    """
    axes = np.empty((6, 3))
    for i in range(3):
        u = np.zeros(3)
        u[i] = 1.0
        axes[i] = quat_rotate(qb, u)
    d = e1 - e0
    n_ax = 3
    for i in range(3):
        c = cross(d, axes[i])
        L = _norm(c)
        if L > 1e-9 * max(_norm(d), 1e-300):
            axes[n_ax] = c / L
            n_ax += 1
    best = np.inf
    best_n = axes[0].copy()
    best_h = 0.0
    for a in range(n_ax):
        n = axes[a]
        ext = 0.0
        for i in range(3):
            ext += he[i] * abs(_dot(axes[i], n))
        c = _dot(n, pb)
        p0 = _dot(n, e0)
        p1 = _dot(n, e1)
        lo = min(p0, p1)
        hi = max(p0, p1)
        up = c + ext - lo  # push along +n
        down = hi - (c - ext)  # push along -n
        if up < best:
            best = up
            best_n = n.copy()
            best_h = c + ext
        if down < best:
            best = down
            best_n = -n
            best_h = -(c - ext)
    return best_n, best_h


@njit(cache=True)
def _capsule_box(e0, e1, r, pb, qb, he, margin, cp, cn, cs, k):
    t = _seg_box_min(e0, e1, pb, qb, he)
    inner, _ = _sphere_box_sep(e0 + t * (e1 - e0), 0.0, pb, qb, he)
    if inner < 0.0:
        # the core segment passes through the box: per-end closest faces disagree,
        # so both ends share the minimum-translation axis instead
        n, h = _segment_box_sat(e0, e1, pb, qb, he)
        for e in (e0, e1):
            s = _dot(n, e) - r - h
            if s <= margin:
                k = _push(cp, cn, cs, k, e - n * r, n, s)
        return k
    s0, n0 = _sphere_box_sep(e0, r, pb, qb, he)
    s1, n1 = _sphere_box_sep(e1, r, pb, qb, he)
    if s0 <= margin:
        k = _push(cp, cn, cs, k, e0 - n0 * r, n0, s0)
    if s1 <= margin:
        k = _push(cp, cn, cs, k, e1 - n1 * r, n1, s1)
    if 1e-3 < t < 1.0 - 1e-3:
        c = e0 + t * (e1 - e0)
        sm, nm = _sphere_box_sep(c, r, pb, qb, he)
        if sm <= margin and sm < min(s0, s1) - 1e-9:
            k = _push(cp, cn, cs, k, c - nm * r, nm, sm)
    return k


@njit(cache=True)
def _capsule_triangle(e0, e1, r, t0, t1, t2, margin, cp, cn, cs, k):
    s0, n0 = _sphere_triangle_sep(e0, r, t0, t1, t2)
    s1, n1 = _sphere_triangle_sep(e1, r, t0, t1, t2)
    if s0 <= margin:
        k = _push(cp, cn, cs, k, e0 - n0 * r, n0, s0)
    if s1 <= margin:
        k = _push(cp, cn, cs, k, e1 - n1 * r, n1, s1)
    t = _seg_tri_min(e0, e1, t0, t1, t2)
    if 1e-3 < t < 1.0 - 1e-3:
        c = e0 + t * (e1 - e0)
        sm, nm = _sphere_triangle_sep(c, r, t0, t1, t2)
        if sm <= margin and sm < min(s0, s1) - 1e-9:
            k = _push(cp, cn, cs, k, c - nm * r, nm, sm)
    return k


@njit(cache=True)
def _capsule_capsule(a0, a1, ra, b0, b1, rb, margin, cp, cn, cs, k):
    da = a1 - a0
    db = b1 - b0
    la = _norm(da)
    lb = _norm(db)
    cr = _norm(cross(da, db))
    if cr < 1e-6 * la * lb:
        # parallel segments: contact at both ends of the overlapping interval
        u = da / la
        tb0 = _dot(b0 - a0, u)
        tb1 = _dot(b1 - a0, u)
        lo = max(0.0, min(tb0, tb1))
        hi = min(la, max(tb0, tb1))
        if hi > lo + 1e-9:
            for tt in (lo, hi):
                pa = a0 + u * tt
                qb, _ = closest_on_segment(pa, b0, b1)
                k = _sphere_sphere(pa, ra, qb, rb, margin, cp, cn, cs, k)
            return k
    c1, c2, _, _ = segment_segment(a0, a1, b0, b1)
    return _sphere_sphere(c1, ra, c2, rb, margin, cp, cn, cs, k)


@njit(cache=True)
def _box_corners(pos, quat, he):
    out = np.empty((8, 3))
    i = 0
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                out[i] = pos + quat_rotate(quat, np.array([sx * he[0], sy * he[1], sz * he[2]]))
                i += 1
    return out


@njit(cache=True)
def _keep_deepest(seps, limit):
    order = np.argsort(seps, kind="mergesort")
    return order[:limit]


@njit(cache=True)
def _box_halfspace(pa, qa, he, hn, off, margin, cp, cn, cs, k):
    corners = _box_corners(pa, qa, he)
    seps = np.empty(8)
    for i in range(8):
        seps[i] = _dot(hn, corners[i]) - off
    order = _keep_deepest(seps, 4)
    for i in order:
        if seps[i] <= margin:
            k = _push(cp, cn, cs, k, corners[i], hn.copy(), seps[i])
    return k


@njit(cache=True)
def _clip_polygon(poly, m, pn, pd):
    """Keep the part of polygon ``poly[:m]`` with pn . x <= pd."""
    out = np.empty((16, 3))
    cnt = 0
    for i in range(m):
        a = poly[i]
        b = poly[(i + 1) % m]
        da = _dot(pn, a) - pd
        db = _dot(pn, b) - pd
        if da <= 0.0:
            out[cnt] = a
            cnt += 1
        if (da < 0.0 and db > 0.0) or (da > 0.0 and db < 0.0):
            out[cnt] = a + (b - a) * (da / (da - db))
            cnt += 1
    return out, cnt


@njit(cache=True)
def _reduce_manifold(pts, seps, m):
    """Choose at most 4 points: deepest, farthest, widest triangle, opposite side."""
    if m <= 4:
        return np.arange(m)
    chosen = np.empty(4, dtype=np.int64)
    i0 = 0
    for i in range(m):
        if seps[i] < seps[i0]:
            i0 = i
    i1 = -1
    best = -1.0
    for i in range(m):
        d = _norm(pts[i] - pts[i0])
        if d > best:
            best = d
            i1 = i
    i2 = -1
    best = -1.0
    ref = np.zeros(3)
    for i in range(m):
        c = cross(pts[i1] - pts[i0], pts[i] - pts[i0])
        a = _norm(c)
        if a > best:
            best = a
            i2 = i
            ref = c
    i3 = -1
    best = 0.0
    for i in range(m):
        c = cross(pts[i1] - pts[i0], pts[i] - pts[i0])
        side = -_dot(c, ref)
        if side > best:
            best = side
            i3 = i
    chosen[0], chosen[1], chosen[2] = i0, i1, i2
    if i3 < 0:
        return chosen[:3]
    chosen[3] = i3
    return chosen


@njit(cache=True)
def _face_vertices(c, R, he, axis, sign):
    # the 4 corners of the face of a box with outward normal sign * R[:, axis]
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    center = c + sign * he[axis] * R[:, axis]
    du = he[u] * R[:, u]
    dv = he[v] * R[:, v]
    out = np.empty((4, 3))
    out[0] = center + du + dv
    out[1] = center - du + dv
    out[2] = center - du - dv
    out[3] = center + du - dv
    return out


@njit(cache=True)
def _box_face_contacts(c_ref, R_ref, he_ref, axis, ref_n, c_inc, R_inc, he_inc, margin, pts, seps):
    """Clip the incident face against the reference face with outward normal ``ref_n``."""
    best = 0
    bsign = 1.0
    bdot = 2.0
    for i in range(3):
        d = _dot(R_inc[:, i], ref_n)
        if d < bdot:
            bdot = d
            best = i
            bsign = 1.0
        if -d < bdot:
            bdot = -d
            best = i
            bsign = -1.0
    poly = np.empty((16, 3))
    poly[:4] = _face_vertices(c_inc, R_inc, he_inc, best, bsign)
    m = 4
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    for ax in (u, v):
        for sgn in (1.0, -1.0):
            pn = sgn * R_ref[:, ax]
            pd = _dot(pn, c_ref) + he_ref[ax]
            poly, m = _clip_polygon(poly, m, pn, pd)
            if m == 0:
                return 0
    face_d = _dot(ref_n, c_ref) + he_ref[axis]
    cnt = 0
    for i in range(m):
        s = _dot(ref_n, poly[i]) - face_d
        if s <= margin:
            pts[cnt] = poly[i]
            seps[cnt] = s
            cnt += 1
    return cnt


@njit(cache=True)
def _box_box(pa, qa, ha, pb, qb, hb, margin, cp, cn, cs, k):
    Ra = quat_to_matrix(qa)
    Rb = quat_to_matrix(qb)
    d = pa - pb
    best_face = -1e300
    face_axis = -1
    face_n = np.zeros(3)
    best_edge = -1e300
    edge_i = -1
    edge_j = -1
    edge_n = np.zeros(3)
    for idx in range(15):
        if idx < 3:
            L = Ra[:, idx].copy()
        elif idx < 6:
            L = Rb[:, idx - 3].copy()
        else:
            i = (idx - 6) // 3
            j = (idx - 6) % 3
            L = cross(Ra[:, i], Rb[:, j])
            ln = _norm(L)
            if ln < 1e-6:
                continue
            L = L / ln
        ra = 0.0
        rb = 0.0
        for m in range(3):
            ra += ha[m] * abs(_dot(L, Ra[:, m]))
            rb += hb[m] * abs(_dot(L, Rb[:, m]))
        dl = _dot(L, d)
        s = abs(dl) - ra - rb
        if s > margin:
            return k
        if dl < 0.0:
            L = -L
        if idx < 6:
            if s > best_face:
                best_face = s
                face_axis = idx
                face_n = L
        else:
            if s > best_edge:
                best_edge = s
                edge_i = (idx - 6) // 3
                edge_j = (idx - 6) % 3
                edge_n = L
    if best_edge > best_face + _EDGE_BIAS:
        n = edge_n
        # supporting edges of a (toward b) and of b (toward a)
        ea = pa.copy()
        for m in range(3):
            if m != edge_i:
                sg = 1.0 if _dot(Ra[:, m], -n) >= 0.0 else -1.0
                ea += sg * ha[m] * Ra[:, m]
        eb = pb.copy()
        for m in range(3):
            if m != edge_j:
                sg = 1.0 if _dot(Rb[:, m], n) >= 0.0 else -1.0
                eb += sg * hb[m] * Rb[:, m]
        a0 = ea - ha[edge_i] * Ra[:, edge_i]
        a1 = ea + ha[edge_i] * Ra[:, edge_i]
        b0 = eb - hb[edge_j] * Rb[:, edge_j]
        b1 = eb + hb[edge_j] * Rb[:, edge_j]
        c1, c2, _, _ = segment_segment(a0, a1, b0, b1)
        return _push(cp, cn, cs, k, c1, n, best_edge)
    pts = np.empty((16, 3))
    seps = np.empty(16)
    n = face_n
    if face_axis >= 3:
        # reference face on b (outward normal n), incident points lie on a
        cnt = _box_face_contacts(pb, Rb, hb, face_axis - 3, n, pa, Ra, ha, margin, pts, seps)
        keep = _reduce_manifold(pts, seps, cnt)
        for i in keep:
            k = _push(cp, cn, cs, k, pts[i], n, seps[i])
    else:
        # reference face on a (outward normal -n), incident points lie on b
        cnt = _box_face_contacts(pa, Ra, ha, face_axis, -n, pb, Rb, hb, margin, pts, seps)
        keep = _reduce_manifold(pts, seps, cnt)
        for i in keep:
            k = _push(cp, cn, cs, k, pts[i] + n * seps[i], n, seps[i])
    return k


@njit(cache=True)
def _box_triangle(pa, qa, he, t0, t1, t2, margin, cp, cn, cs, k):
    corners = _box_corners(pa, qa, he)
    for i in range(8):
        k = _sphere_triangle(corners[i], 0.0, t0, t1, t2, margin, cp, cn, cs, k)
    tri = (t0, t1, t2)
    for e in range(3):
        v0 = tri[e]
        v1 = tri[(e + 1) % 3]
        for tt in (0.0, -1.0):
            if tt == 0.0:
                p = v0
            else:
                t = _seg_box_min(v0, v1, pa, qa, he)
                if not (1e-3 < t < 1.0 - 1e-3):
                    continue
                p = v0 + t * (v1 - v0)
            s, g = _sphere_box_sep(p, 0.0, pa, qa, he)
            if s <= margin:
                # g points out of the box, i.e. from a toward b
                k = _push(cp, cn, cs, k, p + g * s, -g, s)
    return k


@njit(cache=True)
def _tri_overlaps(tri, lo, hi):
    for ax in range(3):
        mn = min(tri[0, ax], min(tri[1, ax], tri[2, ax]))
        mx = max(tri[0, ax], max(tri[1, ax], tri[2, ax]))
        if mn > hi[ax] or mx < lo[ax]:
            return False
    return True


@njit(cache=True)
def _ordered(ta, pa_, posa, qa, tb, pb_, posb, qb, tris, margin, cp, cn, cs, k):
    """Contacts for ta <= tb (a first in the canonical shape order)."""
    if ta == SPHERE:
        ra = pa_[0]
        if tb == SPHERE:
            return _sphere_sphere(posa, ra, posb, pb_[0], margin, cp, cn, cs, k)
        if tb == CAPSULE:
            b0, b1 = capsule_segment(posb, qb, pb_[1])
            q, _ = closest_on_segment(posa, b0, b1)
            return _sphere_sphere(posa, ra, q, pb_[0], margin, cp, cn, cs, k)
        if tb == BOX:
            return _sphere_box(posa, ra, posb, qb, pb_[:3], margin, cp, cn, cs, k)
        if tb == HALFSPACE:
            return _sphere_halfspace(posa, ra, pb_[:3], pb_[3], margin, cp, cn, cs, k)
        if tb == TRIMESH:
            off = int(pb_[0])
            lo = posa - (ra + margin)
            hi = posa + (ra + margin)
            for t in range(off, off + int(pb_[1])):
                if _tri_overlaps(tris[t], lo, hi):
                    k = _sphere_triangle(posa, ra, tris[t, 0], tris[t, 1], tris[t, 2], margin, cp, cn, cs, k)
            return k
    elif ta == CAPSULE:
        ra = pa_[0]
        a0, a1 = capsule_segment(posa, qa, pa_[1])
        if tb == CAPSULE:
            b0, b1 = capsule_segment(posb, qb, pb_[1])
            return _capsule_capsule(a0, a1, ra, b0, b1, pb_[0], margin, cp, cn, cs, k)
        if tb == BOX:
            return _capsule_box(a0, a1, ra, posb, qb, pb_[:3], margin, cp, cn, cs, k)
        if tb == HALFSPACE:
            k = _sphere_halfspace(a0, ra, pb_[:3], pb_[3], margin, cp, cn, cs, k)
            return _sphere_halfspace(a1, ra, pb_[:3], pb_[3], margin, cp, cn, cs, k)
        if tb == TRIMESH:
            off = int(pb_[0])
            lo = np.minimum(a0, a1) - (ra + margin)
            hi = np.maximum(a0, a1) + (ra + margin)
            for t in range(off, off + int(pb_[1])):
                if _tri_overlaps(tris[t], lo, hi):
                    k = _capsule_triangle(a0, a1, ra, tris[t, 0], tris[t, 1], tris[t, 2], margin, cp, cn, cs, k)
            return k
    elif ta == BOX:
        he = pa_[:3]
        if tb == BOX:
            return _box_box(posa, qa, he, posb, qb, pb_[:3], margin, cp, cn, cs, k)
        if tb == HALFSPACE:
            return _box_halfspace(posa, qa, he, pb_[:3], pb_[3], margin, cp, cn, cs, k)
        if tb == TRIMESH:
            off = int(pb_[0])
            r = _norm(he) + margin
            lo = posa - r
            hi = posa + r
            for t in range(off, off + int(pb_[1])):
                if _tri_overlaps(tris[t], lo, hi):
                    k = _box_triangle(posa, qa, he, tris[t, 0], tris[t, 1], tris[t, 2], margin, cp, cn, cs, k)
            return k
    return UNSUPPORTED


@njit(cache=True)
def _a_after_b(ta, pa_, posa, qa, tb, pb_, posb, qb):
    # lexicographic order used to canonicalize same-type pairs
    if ta != tb:
        return ta > tb
    for arr_a, arr_b in ((posa, posb), (pa_, pb_)):
        for i in range(arr_a.shape[0]):
            if arr_a[i] != arr_b[i]:
                return arr_a[i] > arr_b[i]
    for i in range(4):
        if qa[i] != qb[i]:
            return qa[i] > qb[i]
    return False


@njit(cache=True)
def collide(ta, pa_, posa, qa, tb, pb_, posb, qb, tris, margin, cp, cn, cs, k):
    """Append contacts for the pair (a, b) to the buffers; returns the new count or -1."""
    if _a_after_b(ta, pa_, posa, qa, tb, pb_, posb, qb):
        k0 = k
        k = _ordered(tb, pb_, posb, qb, ta, pa_, posa, qa, tris, margin, cp, cn, cs, k)
        if k < 0:
            return k
        for i in range(k0, min(k, cp.shape[0])):
            nb = cn[i].copy()
            cn[i] = -nb
            cp[i] = cp[i] - nb * cs[i]
        return k
    return _ordered(ta, pa_, posa, qa, tb, pb_, posb, qb, tris, margin, cp, cn, cs, k)


# ---------------------------------------------------------------------------
# bounds and broadphase


@njit(cache=True)
def aabb_kernel(stype, params, pos, quat, tris, margin):
    lo = np.empty(3)
    hi = np.empty(3)
    if stype == SPHERE:
        r = params[0] + margin
        lo[:] = pos - r
        hi[:] = pos + r
    elif stype == CAPSULE:
        e0, e1 = capsule_segment(pos, quat, params[1])
        r = params[0] + margin
        lo[:] = np.minimum(e0, e1) - r
        hi[:] = np.maximum(e0, e1) + r
    elif stype == BOX:
        R = quat_to_matrix(quat)
        for i in range(3):
            ext = abs(R[i, 0]) * params[0] + abs(R[i, 1]) * params[1] + abs(R[i, 2]) * params[2]
            lo[i] = pos[i] - ext - margin
            hi[i] = pos[i] + ext + margin
    elif stype == HALFSPACE:
        lo[:] = -np.inf
        hi[:] = np.inf
        for i in range(3):
            if params[i] == 1.0:
                hi[i] = params[3] + margin
            elif params[i] == -1.0:
                lo[i] = -params[3] - margin
    else:
        lo[:] = np.inf
        hi[:] = -np.inf
        off = int(params[0])
        for t in range(off, off + int(params[1])):
            for v in range(3):
                for i in range(3):
                    lo[i] = min(lo[i], tris[t, v, i])
                    hi[i] = max(hi[i], tris[t, v, i])
        lo -= margin
        hi += margin
    return lo, hi


@njit(cache=True)
def sweep_and_prune(lo, hi):
    """All overlapping index pairs (i < j), sorted by (i, j)."""
    n = lo.shape[0]
    order = np.argsort(lo[:, 0], kind="mergesort")
    cap = 64
    out = np.empty((cap, 2), dtype=np.int64)
    m = 0
    for oi in range(n):
        i = order[oi]
        for oj in range(oi + 1, n):
            j = order[oj]
            if lo[j, 0] > hi[i, 0]:
                break
            if lo[i, 1] <= hi[j, 1] and lo[j, 1] <= hi[i, 1] and lo[i, 2] <= hi[j, 2] and lo[j, 2] <= hi[i, 2]:
                if m == cap:
                    cap *= 2
                    grown = np.empty((cap, 2), dtype=np.int64)
                    grown[:m] = out[:m]
                    out = grown
                out[m, 0] = min(i, j)
                out[m, 1] = max(i, j)
                m += 1
    out = out[:m]
    key = out[:, 0] * n + out[:, 1]
    return out[np.argsort(key, kind="mergesort")]


# ---------------------------------------------------------------------------
# signed distance (metrics)


@njit(cache=True)
def _winding_number(p, tris, off, cnt):
    total = 0.0
    for t in range(off, off + cnt):
        a = tris[t, 0] - p
        b = tris[t, 1] - p
        c = tris[t, 2] - p
        la, lb, lc = _norm(a), _norm(b), _norm(c)
        num = _dot(a, cross(b, c))
        den = la * lb * lc + _dot(a, b) * lc + _dot(b, c) * la + _dot(c, a) * lb
        total += 2.0 * math.atan2(num, den)
    return total / (4.0 * math.pi)


@njit(cache=True)
def point_sdf(p, stype, params, pos, quat, tris, closed):
    """Signed distance from world point ``p`` to a shape (negative inside)."""
    if stype == SPHERE:
        return _norm(p - pos) - params[0]
    if stype == CAPSULE:
        e0, e1 = capsule_segment(pos, quat, params[1])
        q, _ = closest_on_segment(p, e0, e1)
        return _norm(p - q) - params[0]
    if stype == BOX:
        s, _ = _sphere_box_sep(p, 0.0, pos, quat, params[:3])
        return s
    if stype == HALFSPACE:
        return _dot(params[:3], p) - params[3]
    off = int(params[0])
    cnt = int(params[1])
    best = np.inf
    for t in range(off, off + cnt):
        q = closest_on_triangle(p, tris[t, 0], tris[t, 1], tris[t, 2])
        best = min(best, _norm(p - q))
    if closed and abs(_winding_number(p, tris, off, cnt)) > 0.5:
        return -best
    return best


# ---------------------------------------------------------------------------
# surface sampling


def _fibonacci_sphere(n: int) -> np.ndarray:
    # the lattice includes both poles so extreme points are always sampled
    i = np.arange(n)
    z = 1.0 - 2.0 * i / (n - 1)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _fibonacci_hemisphere(n: int) -> np.ndarray:
    # upper hemisphere (z > 0) including the pole, equal-area spacing in z
    i = np.arange(n)
    z = 1.0 - i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sample_surface_points(shape: Shape, n: int) -> np.ndarray:
    """Deterministic quasi-uniform surface points in the shape's local frame."""
    if n < 4:
        raise ValueError("need at least 4 samples")
    if isinstance(shape, Sphere):
        return shape.radius * _fibonacci_sphere(n)
    if isinstance(shape, Capsule):
        r, hl = shape.radius, shape.half_length
        area_cap = 4.0 * math.pi * r * r
        area_cyl = 2.0 * math.pi * r * 2.0 * hl
        n_caps = max(2, int(round(n * area_cap / (area_cap + area_cyl))))
        n_caps += n_caps % 2
        n_caps = min(n_caps, n - (n % 2))
        n_cyl = n - n_caps
        top = r * _fibonacci_hemisphere(n_caps // 2)
        bot = top * np.array([1.0, 1.0, -1.0])
        top = top + np.array([0.0, 0.0, hl])
        bot = bot - np.array([0.0, 0.0, hl])
        i = np.arange(n_cyl) + 0.5
        z = -hl + 2.0 * hl * i / max(n_cyl, 1)
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i
        cyl = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        return np.concatenate([top, cyl, bot])[:n]
    if isinstance(shape, Box):
        return _box_samples(shape.half_extents, n)
    raise ShapeError(f"cannot sample {type(shape).__name__}")


def _box_samples(he: np.ndarray, n: int) -> np.ndarray:
    # faces in pairs (+/- axis); each face gets a share proportional to its area
    areas = np.array([he[1] * he[2], he[0] * he[2], he[0] * he[1]])
    share = np.repeat(areas, 2)
    counts = np.floor(n * share / share.sum()).astype(int)
    rem = n - counts.sum()
    frac = n * share / share.sum() - counts
    for idx in np.argsort(-frac, kind="stable")[:rem]:
        counts[idx] += 1
    pts = []
    for f in range(6):
        axis, sign = f // 2, (1.0 if f % 2 == 0 else -1.0)
        c = counts[f]
        if c == 0:
            continue
        u, v = (axis + 1) % 3, (axis + 2) % 3
        aspect = he[u] / he[v]
        nu = max(1, int(round(math.sqrt(c * aspect))))
        nv = int(math.ceil(c / nu))
        grid = []
        for a in range(nu):
            for b in range(nv):
                grid.append(((a + 0.5) / nu * 2.0 - 1.0, (b + 0.5) / nv * 2.0 - 1.0))
        for gu, gv in grid[:c]:
            p = np.zeros(3)
            p[axis] = sign * he[axis]
            p[u] = gu * he[u]
            p[v] = gv * he[v]
            pts.append(p)
    return np.array(pts)


# ---------------------------------------------------------------------------
# Python API


def _pose_arrays(pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(pose.position, dtype=float), np.asarray(pose.orientation, dtype=float)


def world_triangles(mesh: TriMesh, pose: Pose) -> np.ndarray:
    pos, quat = _pose_arrays(pose)
    R = quat_to_matrix(quat)
    verts = mesh.vertices @ R.T + pos
    return np.ascontiguousarray(verts[mesh.triangles])


def world_halfspace(hs: HalfSpace, pose: Pose) -> tuple[np.ndarray, float]:
    pos, quat = _pose_arrays(pose)
    n = quat_rotate(quat, hs.normal)
    return n, float(hs.offset + np.dot(n, pos))


def mesh_is_closed(mesh: TriMesh) -> bool:
    """Every undirected edge shared by exactly two triangles."""
    edges: dict[tuple[int, int], int] = {}
    for tri in mesh.triangles:
        for e in range(3):
            a, b = int(tri[e]), int(tri[(e + 1) % 3])
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    return bool(edges) and all(c == 2 for c in edges.values())


def kernel_shape(shape: Shape, pose: Pose, tri_offset: int = 0):
    """World-space kernel encoding ``(type, params, pos, quat, triangles)``."""
    tid, params = encode_shape(shape, tri_offset)
    pos, quat = _pose_arrays(pose)
    tris = np.zeros((0, 3, 3))
    if tid == HALFSPACE:
        n, off = world_halfspace(shape, pose)
        params[:3] = n
        params[3] = off
        pos, quat = np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0])
    elif tid == TRIMESH:
        tris = world_triangles(shape, pose)
        params[0] = tri_offset
        pos, quat = np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0])
    return tid, params, pos, quat, tris


def compute_aabb(shape: Shape, pose: Pose, margin: float = 0.0) -> Aabb:
    if margin < 0:
        raise ValueError("margin must be non-negative")
    tid, params, pos, quat, tris = kernel_shape(shape, pose)
    lo, hi = aabb_kernel(tid, params, pos, quat, tris, float(margin))
    return Aabb(lo, hi)


def broadphase(aabbs: Sequence[Aabb]) -> list[tuple[int, int]]:
    if not aabbs:
        return []
    lo = np.array([a.min for a in aabbs], dtype=float)
    hi = np.array([a.max for a in aabbs], dtype=float)
    return [(int(i), int(j)) for i, j in sweep_and_prune(lo, hi)]


def narrowphase(
    shape_a: Shape,
    pose_a: Pose,
    shape_b: Shape,
    pose_b: Pose,
    margin: float = 0.0,
    *,
    ids: tuple[int, int] = (0, 1),
    friction: tuple[float, float] = (1.0, 1.0),
    restitution: tuple[float, float] = (0.0, 0.0),
) -> list[Contact]:
    """Contacts between two shapes; normals point from b toward a."""
    ta, pa_, posa, qa, tris_a = kernel_shape(shape_a, pose_a, 0)
    tb, pb_, posb, qb, tris_b = kernel_shape(shape_b, pose_b, len(tris_a))
    if ta >= HALFSPACE and tb >= HALFSPACE:
        raise UnsupportedPairError(f"unsupported pair {type(shape_a).__name__}-{type(shape_b).__name__}")
    tris = np.ascontiguousarray(np.concatenate([tris_a, tris_b]) if len(tris_a) + len(tris_b) else np.zeros((1, 3, 3)))
    cap = MAX_PAIR_CONTACTS * max(1, len(tris))
    cp = np.empty((cap, 3))
    cn = np.empty((cap, 3))
    cs = np.empty(cap)
    k = collide(ta, pa_, posa, qa, tb, pb_, posb, qb, tris, float(margin), cp, cn, cs, 0)
    if k < 0:
        raise UnsupportedPairError(f"unsupported pair {type(shape_a).__name__}-{type(shape_b).__name__}")
    mu = combine_friction(*friction)
    e = combine_restitution(*restitution)
    return [
        Contact(ids[0], ids[1], cp[i].copy(), cn[i].copy(), max(0.0, -float(cs[i])), mu, e, float(cs[i]))
        for i in range(min(k, cap))
    ]


def signed_distance(shape: Shape, pose: Pose, points: np.ndarray) -> np.ndarray:
    """Signed distance of world points to a shape; negative inside."""
    tid, params, pos, quat, tris = kernel_shape(shape, pose)
    if len(tris) == 0:
        tris = np.zeros((1, 3, 3))
    closed = isinstance(shape, TriMesh) and mesh_is_closed(shape)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return np.array([point_sdf(p, tid, params, pos, quat, tris, closed) for p in pts])
