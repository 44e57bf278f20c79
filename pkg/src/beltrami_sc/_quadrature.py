"""Quadrature of ``exp(int zeta)`` along polylines.

Internal helpers shared by :mod:`transport` and :mod:`uniformize`.  For a
path starting at a basepoint b the integrand is

    E(z) = prod_k ((z - z_k)/(b - z_k))**res_k

with the branch continued along the path.  On a straight segment the
ratio ``(z - z_k)/(v - z_k)`` never crosses the negative axis, so the
principal logarithm of that ratio gives the continuous branch.

A path may end at a pole p with Re res > -1.  On the last segment
``z = p - u (p - q)`` the integrand is ``u**res * G(u)`` with G smooth;
panels are graded geometrically (ratio 1/2) toward u = 0 and the last
piece ``[0, delta]`` is integrated from the two-term expansion of G.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_HALF_PI = 0.5 * math.pi


class PathClearanceError(ValueError):
    """A pole lies on (or too close to) a path segment."""


@lru_cache(maxsize=None)
def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_distance(points: np.ndarray, a: complex, b: complex) -> np.ndarray:
    """Distance from each point to the closed segment [a, b]."""
    d = b - a
    t = np.clip(((points - a) * np.conj(d)).real / (abs(d) ** 2), 0.0, 1.0)
    return np.abs(points - (a + t * d))


def segment_log_increments(a: complex, b: complex, poles: np.ndarray) -> tuple[np.ndarray, int]:
    """Continuous-branch increments of ``log(z - z_k)`` from a to b.

    Pieces subtending an angle of pi/2 or more at some pole are bisected
    for that pole.  Returns the increments and the number of pieces used.
    """
    inc = np.log((b - poles) / (a - poles))
    bad = np.abs(inc.imag) >= _HALF_PI
    pieces = 1
    if np.any(bad):
        mid = 0.5 * (a + b)
        left, n1 = segment_log_increments(a, mid, poles[bad])
        right, n2 = segment_log_increments(mid, b, poles[bad])
        inc[bad] = left + right
        pieces = n1 + n2
    return inc, pieces


@dataclass
class PathRule:
    """Quadrature nodes along a polyline.

    ``weights`` already contain dz.  Nodes on a segment ending at a
    terminal pole carry their parameter ``u`` (distance to the end in
    units of the segment); other nodes have ``u = nan``.
    """

    vertices: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    segment: np.ndarray
    u: np.ndarray
    t: np.ndarray
    tail_delta: float
    terminal: int | None


def _split_panels(a: complex, b: complex, lo: float, hi: float, others: np.ndarray,
                  ratio: float, out: list, depth: int = 0) -> None:
    za = a + lo * (b - a)
    zb = a + hi * (b - a)
    length = abs(zb - za)
    if others.size and depth < 50:
        dist = segment_distance(others, za, zb).min()
        if length > ratio * dist:
            mid = 0.5 * (lo + hi)
            _split_panels(a, b, lo, mid, others, ratio, out, depth + 1)
            _split_panels(a, b, mid, hi, others, ratio, out, depth + 1)
            return
    out.append((lo, hi))


def tail_depth(residue: complex, tol: float) -> int:
    """Number of halvings so that the neglected tail term is below ``0.1 tol``."""
    exponent = residue.real + 3.0
    k = math.ceil(math.log2(10.0 / tol) / exponent)
    return int(min(max(k, 4), 60))


def build_path_rule(vertices, poles: np.ndarray, terminal: int | None = None,
                    terminal_residue: complex = 0j, tol: float = 1e-14,
                    clearance: float = 0.0, nodes_per_panel: int = 12,
                    ratio: float = 1.0) -> PathRule:
    """Composite Gauss-Legendre rule for a polyline.

    ``terminal`` is the index (into ``poles``) of the pole at which the path
    ends, if any.  Other poles closer than ``clearance`` to a segment raise
    :class:`PathClearanceError`.
    """
    verts = np.asarray(vertices, dtype=complex)
    if len(verts) < 2:
        raise ValueError("a path needs at least two vertices")
    poles = np.asarray(poles, dtype=complex)
    mask = np.ones(len(poles), bool)
    if terminal is not None:
        mask[terminal] = False
    others = poles[mask]
    xg, wg = gauss_legendre01(nodes_per_panel)
    nodes, weights, segs, us, ts = [], [], [], [], []
    n_seg = len(verts) - 1
    delta = 0.0
    for i in range(n_seg):
        a, b = verts[i], verts[i + 1]
        if a == b:
            raise ValueError("consecutive path vertices coincide")
        last = i == n_seg - 1 and terminal is not None
        near = others if last else poles
        if near.size and clearance > 0:
            if segment_distance(near, a, b).min() <= clearance:
                raise PathClearanceError("pole within clearance of a path segment")
        if not last:
            panels: list = []
            _split_panels(a, b, 0.0, 1.0, poles, ratio, panels)
            for lo, hi in panels:
                t = lo + (hi - lo) * xg
                nodes.append(a + t * (b - a))
                weights.append((hi - lo) * wg * (b - a))
                segs.append(np.full(len(t), i))
                us.append(np.full(len(t), np.nan))
                ts.append(t)
            continue
        # graded toward the terminal pole, parametrized by u = 1 - t
        depth = tail_depth(complex(terminal_residue), tol)
        delta = 2.0**-depth
        bounds = [(0.5, 1.0)] + [(2.0 ** -(k + 1), 2.0**-k) for k in range(1, depth)]
        for ulo, uhi in bounds:
            sub: list = []
            # the reversed segment b -> a is parametrized by u directly
            _split_panels(b, a, ulo, uhi, others, ratio, sub)
            for lo_u, hi_u in sub:
                u = lo_u + (hi_u - lo_u) * xg
                nodes.append(b - u * (b - a))
                weights.append((hi_u - lo_u) * wg * (b - a))
                segs.append(np.full(len(u), i))
                us.append(u)
                ts.append(1.0 - u)
    return PathRule(
        vertices=verts,
        nodes=np.concatenate(nodes),
        weights=np.concatenate(weights),
        segment=np.concatenate(segs),
        u=np.concatenate(us),
        t=np.concatenate(ts),
        tail_delta=delta,
        terminal=terminal,
    )


@dataclass
class Development:
    """Result of integrating ``exp(int zeta)`` along a path rule.

    ``vertex_logs[i, k]`` is the continuous ``log((v_i - z_k)/(b - z_k))``;
    ``node_values`` is E at the nodes; ``vertex_integrals[i]`` is
    ``int_b^{v_i} E dz`` and ``total`` the integral to the path end
    (including the analytic tail when the path ends at a pole).
    """

    rule: PathRule
    vertex_logs: np.ndarray
    node_values: np.ndarray
    vertex_integrals: np.ndarray
    total: complex
    end_log: complex
    tail: complex
    tail_g0: complex


# Poles farther than FAR_RATIO segment lengths from a segment contribute a
# function analytic on a Bernstein ellipse with parameter > 6 around it, so
# CHEB_POINTS Chebyshev samples reproduce it to rounding.
FAR_RATIO = 1.5
CHEB_POINTS = 24


@lru_cache(maxsize=None)
def _chebyshev01(n: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(n)
    theta = (2 * j + 1) * math.pi / (2 * n)
    return 0.5 * (1.0 - np.cos(theta)), (-1.0) ** j * np.sin(theta)


def chebyshev_interpolation(t: np.ndarray, n: int = CHEB_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev points on [0, 1] and the barycentric matrix interpolating from them to t."""
    c, w = _chebyshev01(n)
    diff = t[:, None] - c[None, :]
    hit = diff == 0
    diff[hit] = 1.0
    mat = w[None, :] / diff
    mat /= mat.sum(axis=1, keepdims=True)
    rows = np.any(hit, axis=1)
    mat[rows] = hit[rows].astype(float)
    return c, mat


def far_poles(poles: np.ndarray, a: complex, b: complex) -> np.ndarray:
    """Mask of poles far enough from [a, b] for Chebyshev interpolation."""
    if poles.size == 0:
        return np.zeros(0, bool)
    return segment_distance(poles, a, b) > FAR_RATIO * abs(b - a)


def develop_rule(rule: PathRule, poles: np.ndarray, residues: np.ndarray) -> Development:
    verts = rule.vertices
    n_v = len(verts)
    term = rule.terminal
    vlogs = np.zeros((n_v, len(poles)), complex)
    stop = n_v - 1 if term is not None else n_v
    for i in range(1, stop):
        inc, _ = segment_log_increments(verts[i - 1], verts[i], poles)
        vlogs[i] = vlogs[i - 1] + inc
    seg = rule.segment
    total_log = np.empty(len(rule.nodes), complex)
    for i in range(n_v - 1):
        idx = np.flatnonzero(seg == i)
        a, b = verts[i], verts[i + 1]
        z = rule.nodes[idx]
        far = far_poles(poles, a, b)
        if term is not None:
            far[term] = False
        near = ~far
        acc = np.full(len(idx), complex(vlogs[i] @ residues))
        if np.any(far):
            cheb, interp = chebyshev_interpolation(rule.t[idx])
            fp = poles[far]
            samples = np.log((a + cheb[:, None] * (b - a) - fp) / (a - fp)) @ residues[far]
            acc += interp @ samples
        if np.any(near):
            npole = poles[near]
            nres = residues[near]
            ratio = (z[:, None] - npole) / (a - npole)
            if term is not None and near[term]:
                k = int(np.flatnonzero(np.flatnonzero(near) == term)[0])
                on_last = ~np.isnan(rule.u[idx])
                ratio[on_last, k] = 1.0
                acc[on_last] += residues[term] * np.log(rule.u[idx][on_last])
            acc += np.log(ratio) @ nres
        total_log[idx] = acc
    values = np.exp(total_log)
    contrib = rule.weights * values
    per_seg = np.bincount(seg, weights=contrib.real, minlength=n_v - 1) + 1j * np.bincount(
        seg, weights=contrib.imag, minlength=n_v - 1)
    tail = 0j
    g0 = 0j
    end_log = 0j
    if term is not None:
        q, p = verts[-2], verts[-1]
        r = residues[term]
        mask = np.ones(len(poles), bool)
        mask[term] = False
        inc_p = np.log((p - poles[mask]) / (q - poles[mask]))
        lp = vlogs[-2, mask] + inc_p
        g0 = np.exp(lp @ residues[mask] + r * vlogs[-2, term])
        g1 = g0 * np.sum(residues[mask] * (-(p - q)) / (p - poles[mask]))
        d = rule.tail_delta
        tail = (p - q) * (g0 * d ** (r + 1) / (r + 1) + g1 * d ** (r + 2) / (r + 2))
        per_seg[-1] += tail
        vlogs[-1, mask] = lp
        vlogs[-1, term] = np.nan
        end_log = complex(np.nan)
    else:
        end_log = complex(vlogs[-1] @ residues)
    vint = np.concatenate([[0j], np.cumsum(per_seg)])
    return Development(
        rule=rule,
        vertex_logs=vlogs,
        node_values=values,
        vertex_integrals=vint,
        total=complex(vint[-1]),
        end_log=end_log,
        tail=complex(tail),
        tail_g0=complex(g0),
    )


@dataclass
class SegmentIntegral:
    """``I = int_b^p E dz`` along the segment [b, p] and its pole derivatives.

    ``d_end`` is dI/dp (p moving with the endpoint); ``d_others[k]`` is
    dI/dz_k for the other poles.  All derivatives are complex (I depends
    holomorphically on the pole positions) with the basepoint held fixed.
    """

    value: complex
    d_end: complex
    d_others: np.ndarray


def segment_integral(b: complex, p: complex, r_end: complex, others: np.ndarray,
                     other_res: np.ndarray, tol: float = 1e-14, clearance: float = 0.0,
                     jacobian: bool = True, nodes_per_panel: int = 12) -> SegmentIntegral:
    """Integral of E from b to p, where p may carry the residue ``r_end``.

    ``others`` lists the remaining poles (zero residues may be omitted).
    """
    if r_end != 0:
        poles = np.append(others, p)
        res = np.append(other_res, r_end)
        rule = build_path_rule([b, p], poles, len(others), r_end, tol=tol, clearance=clearance,
                               nodes_per_panel=nodes_per_panel)
    else:
        poles, res = others, other_res
        rule = build_path_rule([b, p], poles, None, tol=tol, clearance=clearance,
                               nodes_per_panel=nodes_per_panel)
    dev = develop_rule(rule, poles, res)
    value = dev.total
    if not jacobian:
        return SegmentIntegral(value, 0j, np.zeros(0, complex))
    if len(others) == 0:
        d_end = value / (p - b) if r_end != 0 else 1.0 + 0j
        return SegmentIntegral(value, complex(d_end), np.zeros(0, complex))
    we = rule.weights * dev.node_values
    far = far_poles(others, b, p)
    near = ~far
    k_int = np.empty(len(others), complex)
    s_int = np.empty(len(others), complex)
    inv = 1.0 / (rule.nodes[:, None] - others[near][None, :])
    k_int[near] = we @ inv
    if r_end != 0:
        s_int[near] = (we * rule.t) @ inv
    if np.any(far):
        # moments of the weights against the Chebyshev cardinal functions
        cheb, interp = chebyshev_interpolation(rule.t)
        inv_c = 1.0 / ((b + cheb * (p - b))[:, None] - others[far][None, :])
        k_int[far] = (we @ interp) @ inv_c
        if r_end != 0:
            s_int[far] = ((we * rule.t) @ interp) @ inv_c
    if r_end != 0:
        # two-term tails on [0, delta] in u = 1 - t
        d = rule.tail_delta
        r = r_end
        h = p - b
        g0 = dev.tail_g0
        inv_p = 1.0 / (p - others)
        sigma0 = np.sum(other_res * inv_p)
        g1 = -g0 * h * sigma0
        m1 = d ** (r + 1) / (r + 1)
        m2 = d ** (r + 2) / (r + 2)
        # E/(z - z_k) ~ u^r [g0 c0 + u (g1 c0 + g0 c1)], c0 = 1/(p - z_k), c1 = h/(p - z_k)^2
        k_int = k_int + h * (g0 * inv_p * m1 + (g1 * inv_p + g0 * h * inv_p**2) * m2)
        # s = 1 - u
        s_int = s_int + h * (g0 * inv_p * m1 + (g1 * inv_p + g0 * h * inv_p**2 - g0 * inv_p) * m2)
        d_end = value / (p - b) + np.sum(other_res * s_int)
    else:
        d_end = cmath.exp(dev.end_log)
    d_others = other_res * (value / (b - others) - k_int)
    return SegmentIntegral(value, complex(d_end), d_others)
