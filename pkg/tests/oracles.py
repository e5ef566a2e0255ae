"""Independent dense reference implementations used to pin expected values.

Everything here is deliberately built from different parts than the package:
explicit per-cell Python loops, dense numpy arrays, a 4-point Gauss rule,
and hand-written shape functions. Agreement between these oracles and the
package is therefore a genuine dual-route check, not a tautology.
"""

import numpy as np

# shape functions on the unit reference cell, order SW SE NW NE
PHI = (
    lambda s, t: (1 - s) * (1 - t),
    lambda s, t: s * (1 - t),
    lambda s, t: (1 - s) * t,
    lambda s, t: s * t,
)
GRAD_PHI = (
    lambda s, t: np.array([-(1 - t), -(1 - s)]),
    lambda s, t: np.array([1 - t, -s]),
    lambda s, t: np.array([-t, 1 - s]),
    lambda s, t: np.array([t, s]),
)


def gauss_rule(npts=4):
    pts, wts = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (pts + 1.0), 0.5 * wts


def node_id(n, ix, iy):
    return iy * (n + 1) + ix


def interior_ids(n):
    return np.array(
        [
            node_id(n, ix, iy)
            for iy in range(1, n)
            for ix in range(1, n)
        ]
    )


def cell_corner_ids(n, cx, cy):
    return [
        node_id(n, cx, cy),
        node_id(n, cx + 1, cy),
        node_id(n, cx, cy + 1),
        node_id(n, cx + 1, cy + 1),
    ]


def dense_form(n, w_nodal, form):
    """Dense (N, N) matrix of int w u v ("mass") or int w grad u grad v ("grad").

    The weight is the bilinear interpolant of its nodal values, matching the
    package's definition of weighted forms.
    """
    h = 1.0 / n
    npts = (n + 1) ** 2
    out = np.zeros((npts, npts))
    pts, wts = gauss_rule()
    for cy in range(n):
        for cx in range(n):
            ids = cell_corner_ids(n, cx, cy)
            wloc = np.array([w_nodal[i] for i in ids])
            for s, ws in zip(pts, wts):
                for t, wt in zip(pts, wts):
                    gw = ws * wt
                    wval = sum(wloc[l] * PHI[l](s, t) for l in range(4))
                    for a in range(4):
                        for b in range(4):
                            if form == "mass":
                                val = PHI[a](s, t) * PHI[b](s, t) * h * h
                            else:
                                val = GRAD_PHI[a](s, t) @ GRAD_PHI[b](s, t)
                            out[ids[a], ids[b]] += gw * wval * val
    return out


def dense_mass(n):
    return dense_form(n, np.ones((n + 1) ** 2), "mass")


def dense_stiffness(n):
    return dense_form(n, np.ones((n + 1) ** 2), "grad")


def dense_b_matrix(n, kind, u_full):
    """Dense (N, N) matrix with entry (i, j) = int phi_j u phi_i (reaction)
    or int phi_j grad u . grad phi_i (diffusion)."""
    h = 1.0 / n
    npts = (n + 1) ** 2
    out = np.zeros((npts, npts))
    pts, wts = gauss_rule()
    for cy in range(n):
        for cx in range(n):
            ids = cell_corner_ids(n, cx, cy)
            uloc = np.array([u_full[i] for i in ids])
            for s, ws in zip(pts, wts):
                for t, wt in zip(pts, wts):
                    gw = ws * wt
                    if kind == "reaction":
                        uval = sum(uloc[l] * PHI[l](s, t) for l in range(4))
                        for i in range(4):
                            for j in range(4):
                                out[ids[i], ids[j]] += (
                                    gw * h * h * uval * PHI[i](s, t) * PHI[j](s, t)
                                )
                    else:
                        ugrad = sum(
                            uloc[l] * GRAD_PHI[l](s, t) for l in range(4)
                        )
                        for i in range(4):
                            gi = GRAD_PHI[i](s, t) @ ugrad
                            for j in range(4):
                                out[ids[i], ids[j]] += gw * PHI[j](s, t) * gi
    return out


def dense_system(n, kind, q_full):
    """Dense interior-restricted system matrix A(q)."""
    if kind == "reaction":
        full = dense_stiffness(n) + dense_form(n, q_full, "mass")
    else:
        full = dense_form(n, q_full, "grad")
    ids = interior_ids(n)
    return full[np.ix_(ids, ids)]


def dense_state(n, kind, q_full, f_full=None):
    """Dense Dirichlet solve; returns the state on all nodes."""
    npts = (n + 1) ** 2
    if f_full is None:
        f_full = np.ones(npts)
    ids = interior_ids(n)
    load = (dense_mass(n) @ f_full)[ids]
    u_int = np.linalg.solve(dense_system(n, kind, q_full), load)
    out = np.zeros(npts)
    out[ids] = u_int
    return out


def dense_q_metric(n, kind):
    if kind == "reaction":
        return dense_mass(n)
    return dense_stiffness(n) + dense_mass(n)


def dense_fprime(n, kind, q_full, f_full=None):
    """Dense linearization F'(q) as an (N, N) map: parameter perturbation
    (all nodes) to observed state perturbation (all nodes, zero boundary)."""
    npts = (n + 1) ** 2
    u_full = dense_state(n, kind, q_full, f_full)
    ids = interior_ids(n)
    a_int = dense_system(n, kind, q_full)
    b_full = dense_b_matrix(n, kind, u_full)
    out = np.zeros((npts, npts))
    du = np.linalg.solve(a_int, -b_full[ids, :])
    out[ids, :] = du
    return out


def dense_tikhonov_step(n, kind, q_full, q_prior, y_full, alpha, f_full=None):
    """Exact minimizer of the Tikhonov-regularized linearized problem.

    Solves (F'^T M F' + alpha Q)(q - q_k) = F'^T M (y - F(q_k)) - alpha Q (q_k - q_prior)
    densely and returns the step q - q_k.
    """
    mass = dense_mass(n)
    qmat = dense_q_metric(n, kind)
    fp = dense_fprime(n, kind, q_full, f_full)
    u_full = dense_state(n, kind, q_full, f_full)
    lhs = fp.T @ mass @ fp + alpha * qmat
    rhs = fp.T @ (mass @ (y_full - u_full)) - alpha * (qmat @ (q_full - q_prior))
    return np.linalg.solve(lhs, rhs)


def dense_gram_schmidt(vectors, metric):
    """Orthonormal basis of span(vectors) in the given dense metric."""
    basis = []
    for v in vectors:
        w = np.array(v, dtype=float)
        for _ in range(2):
            for b in basis:
                w = w - (b @ (metric @ w)) * b
        norm = np.sqrt(w @ (metric @ w))
        if norm > 1e-10 * max(np.sqrt(v @ (metric @ v)), 1e-300):
            basis.append(w / norm)
    return basis


def fourier_center_value(terms=499):
    """u(1/2, 1/2) for -Laplace(u) = 1 on the unit square, Dirichlet zero."""
    total = 0.0
    for m in range(1, terms + 1, 2):
        for k in range(1, terms + 1, 2):
            total += (
                16.0
                * np.sin(m * np.pi / 2)
                * np.sin(k * np.pi / 2)
                / (np.pi**4 * m * k * (m * m + k * k))
            )
    return total


def dense_jhat(n, kind, q_full, y_full, f_full=None):
    res = dense_state(n, kind, q_full, f_full) - y_full
    return 0.5 * float(res @ (dense_mass(n) @ res))


def dense_irgnm_step(n, kind, q_full, q_prior, y_full, alpha0,
                     theta=0.4, big_theta=0.9, factor=2.0, max_tries=60,
                     f_full=None):
    """One dense Gauss-Newton step with the bracket rule for the weight.

    Doubles alpha while the linearized discrepancy squared sits below
    theta * jhat, halves it above big_theta * jhat, stops on a revisit.
    Returns (q_next, accepted_alpha).
    """
    mass = dense_mass(n)
    u_full = dense_state(n, kind, q_full, f_full)
    fp = dense_fprime(n, kind, q_full, f_full)
    res = u_full - y_full
    jhat = 0.5 * float(res @ (mass @ res))
    alpha = float(alpha0)
    seen = set()
    best = None
    for _ in range(max_tries):
        seen.add(alpha)
        step = dense_tikhonov_step(n, kind, q_full, q_prior, y_full, alpha,
                                   f_full)
        lin = res + fp @ step
        lin2 = float(lin @ (mass @ lin))
        if theta * jhat <= lin2 <= big_theta * jhat:
            return q_full + step, alpha
        violation = (theta * jhat - lin2) if lin2 < theta * jhat \
            else lin2 - big_theta * jhat
        if best is None or violation < best[0]:
            best = (violation, q_full + step, alpha)
        alpha_next = alpha * factor if lin2 < theta * jhat else alpha / factor
        if alpha_next in seen:
            break
        alpha = alpha_next
    return best[1], best[2]
