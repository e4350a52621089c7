"""Numerical checks of the coordinate-transform identities and of model gradients.

Kernels, input functions and coordinate maps come from small registries of
closed forms so Jacobians are exact. Discrepancies are reported relative to
the largest magnitude of the reference side over the probe set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, max_relative_error, tsum
from .autodiff import ops as _ops
from .act import bound_displacement
from .fno import ActFno, tiny_config


# ---------------------------------------------------------------- quadrature

@dataclass
class QuadratureRule:
    """Composite Gauss-Legendre rule: ``order`` nodes on each of ``panels`` panels."""

    order: int = 32
    panels: int = 4

    def nodes(self, lo, hi):
        x, w = np.polynomial.legendre.leggauss(self.order)
        edges = np.linspace(lo, hi, self.panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return nodes, weights

    def box(self, lo, hi):
        """Tensor-product nodes ``(n, d)`` and weights ``(n,)`` on a box."""
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        axes = [self.nodes(a, b) for a, b in zip(lo, hi)]
        grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        return pts, wts

    def doubled(self):
        return QuadratureRule(2 * self.order, self.panels)


# ---------------------------------------------------------------- registries

@dataclass
class KernelSpec:
    name: str
    fn: object  # (x (..., d), y (..., d)) -> (...)


@dataclass
class FunctionSpec:
    name: str
    fn: object  # x (..., d) -> (...)
    grad: object  # x (..., d) -> (..., d)


@dataclass
class TransformSpec:
    """Coordinate map ``x = phi(xi)`` with analytic Jacobian ``J[..., i, j] = d phi_i / d xi_j``.

    ``preimage`` is the box that ``phi`` maps bijectively onto the unit box,
    or None for maps used only in chain-rule checks.
    """

    name: str
    dim: int
    fn: object
    jac: object
    preimage: tuple | None = None


KERNELS = {
    "separable-poly": KernelSpec("separable-poly", lambda x, y: np.sum(x * y, axis=-1)),
    "gaussian": KernelSpec("gaussian", lambda x, y: np.exp(-np.sum((x - y) ** 2, axis=-1) / 0.18)),
    "cosine": KernelSpec("cosine", lambda x, y: np.cos(np.pi * np.sum(x - y, axis=-1))),
}

FUNCTIONS = {
    "linear": FunctionSpec("linear", lambda x: np.sum(x, axis=-1),
                           lambda x: np.ones_like(x)),
    "quadratic": FunctionSpec("quadratic", lambda x: np.sum(x * x, axis=-1),
                              lambda x: 2.0 * x),
    "sine": FunctionSpec("sine", lambda x: np.sin(2.0 * np.sum(x, axis=-1)) + 1.5,
                         lambda x: 2.0 * np.cos(2.0 * np.sum(x, axis=-1))[..., None] * np.ones_like(x)),
    "bump": FunctionSpec("bump", lambda x: np.exp(-np.sum((x - 0.3) ** 2, axis=-1) / 0.1),
                         lambda x: (-2.0 * (x - 0.3) / 0.1)
                         * np.exp(-np.sum((x - 0.3) ** 2, axis=-1) / 0.1)[..., None]),
}

_PERTURB = 0.2  # |a * pi| < 1 keeps xi + a sin(pi xi) monotone


def _diag_jac(d):
    def jac(xi):
        out = np.zeros(xi.shape + (xi.shape[-1],))
        idx = np.arange(xi.shape[-1])
        out[..., idx, idx] = d(xi)
        return out
    return jac


def _separable(name, dim, f, df, lo, hi):
    return TransformSpec(name, dim, f, _diag_jac(df), (np.full(dim, lo), np.full(dim, hi)))


def _shear_fn(xi):
    a = _PERTURB
    out = xi.copy()
    out[..., 0] = xi[..., 0] + a * np.sin(np.pi * xi[..., 0]) * np.sin(np.pi * xi[..., 1])
    return out


def _shear_jac(xi):
    a = _PERTURB
    j = np.zeros(xi.shape + (2,))
    j[..., 0, 0] = 1 + a * np.pi * np.cos(np.pi * xi[..., 0]) * np.sin(np.pi * xi[..., 1])
    j[..., 0, 1] = a * np.pi * np.sin(np.pi * xi[..., 0]) * np.cos(np.pi * xi[..., 1])
    j[..., 1, 1] = 1.0
    return j


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    r = np.array([[c, -s], [s, c]])
    return TransformSpec("rotation", 2, lambda xi: xi @ r.T,
                         lambda xi: np.broadcast_to(r, xi.shape + (2,)).copy())


def make_transforms(dim):
    t = {
        "identity": _separable("identity", dim, lambda z: z.copy(), np.ones_like, 0.0, 1.0),
        "affine": _separable("affine", dim, lambda z: 2.0 * z - 0.5, lambda z: np.full_like(z, 2.0),
                             0.25, 0.75),
        "monomial": _separable("monomial", dim, lambda z: z ** 2, lambda z: 2.0 * z, 0.0, 1.0),
        "periodic-perturbation": _separable(
            "periodic-perturbation", dim, lambda z: z + _PERTURB * np.sin(np.pi * z),
            lambda z: 1.0 + _PERTURB * np.pi * np.cos(np.pi * z), 0.0, 1.0),
    }
    if dim == 2:
        t["shear"] = TransformSpec("shear", 2, _shear_fn, _shear_jac,
                                   (np.zeros(2), np.ones(2)))
    return t


TRANSFORMS = {1: make_transforms(1), 2: make_transforms(2)}


def scaling_transform(factor, dim=1):
    return TransformSpec("scale", dim, lambda z: factor * z,
                         _diag_jac(lambda z: np.full_like(z, float(factor))))


def reflection_transform(dim=1):
    return TransformSpec("reflection", dim, lambda z: -z, _diag_jac(lambda z: -np.ones_like(z)))


def rotation_transform(theta=0.7):
    return _rotation(theta)


# ---------------------------------------------------------------- identities

def _relative(lhs, rhs):
    lhs, rhs = np.asarray(lhs), np.asarray(rhs)
    scale = max(np.max(np.abs(lhs)), 1e-300)
    return float(np.max(np.abs(lhs - rhs)) / scale)


def _det(j):
    return np.linalg.det(j) if j.shape[-1] > 1 else j[..., 0, 0]


def apply_operator(kernel, u, x_probe, rule, dim):
    """v(x) = int_[0,1]^d K(x, y) u(y) dy at each probe point."""
    y, w = rule.box(np.zeros(dim), np.ones(dim))
    k = kernel.fn(x_probe[:, None, :], y[None, :, :])
    return k @ (u.fn(y) * w)


def verify_input_side(kernel, u, transform, x_probe, rule, jacobian=True):
    """Compare the operator against its input-transformed form.

    Right side: int K(x, phi(xi)) u(phi(xi)) |det grad phi(xi)| dxi over the
    preimage box. With ``jacobian=False`` the volume factor is dropped (a
    negative control that should fail for non-unit Jacobians).
    """
    dim = transform.dim
    x_probe = np.asarray(x_probe, dtype=np.float64).reshape(-1, dim)
    lhs = apply_operator(kernel, u, x_probe, rule, dim)
    lo, hi = transform.preimage
    xi, w = rule.box(lo, hi)
    det = np.abs(_det(transform.jac(xi)))
    if np.min(det) < 1e-12:
        raise ValueError(f"Jacobian of {transform.name} is near-singular on the quadrature nodes")
    y = transform.fn(xi)
    factor = det if jacobian else np.ones_like(det)
    k = kernel.fn(x_probe[:, None, :], y[None, :, :])
    rhs = k @ (u.fn(y) * factor * w)
    return _relative(lhs, rhs)


def verify_output_side(kernel, u, transform, xi_probe, rule, jacobian=False):
    """Compare v(phi(xi)) with int K(phi(xi), y) u(y) dy (no Jacobian factor).

    The left side evaluates the operator at the mapped points with a doubled
    quadrature order. ``jacobian=True`` multiplies the right side by
    ``|det grad phi|`` as a negative control.
    """
    dim = transform.dim
    xi_probe = np.asarray(xi_probe, dtype=np.float64).reshape(-1, dim)
    x = transform.fn(xi_probe)
    lhs = apply_operator(kernel, u, x, rule.doubled(), dim)
    y, w = rule.box(np.zeros(dim), np.ones(dim))
    k = kernel.fn(x[:, None, :], y[None, :, :])
    rhs = k @ (u.fn(y) * w)
    if jacobian:
        rhs = rhs * np.abs(_det(transform.jac(xi_probe)))
    return _relative(lhs, rhs)


def composed_gradient_fd(v, transform, xi, h=1e-3):
    """Fourth-order central differences of ``v(phi(xi))``."""
    xi = np.asarray(xi, dtype=np.float64).reshape(-1, transform.dim)
    out = np.zeros_like(xi)
    for j in range(transform.dim):
        e = np.zeros(transform.dim)
        e[j] = h
        f = [v.fn(transform.fn(xi + s * e)) for s in (2, 1, -1, -2)]
        out[:, j] = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * h)
    return out


def chain_rule_rhs(v, transform, xi):
    """grad phi(xi)^T grad_x v(phi(xi))."""
    xi = np.asarray(xi, dtype=np.float64).reshape(-1, transform.dim)
    j = transform.jac(xi)
    g = v.grad(transform.fn(xi))
    return np.einsum("nij,ni->nj", j, g)


def verify_gradient_chain(v, transform, xi_probe, h=1e-3):
    lhs = composed_gradient_fd(v, transform, xi_probe, h)
    return _relative(lhs, chain_rule_rhs(v, transform, xi_probe))


def _probes(dim, n=7, lo=0.05, hi=0.95):
    pts = np.linspace(lo, hi, n)
    if dim == 1:
        return pts[:, None]
    a, b = np.meshgrid(pts[::2], pts[1::2], indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


def appendix_c_suite(rule=None):
    """Run input/output-side identities and negative controls over the registries.

    Returns a list of ``(case, discrepancy, passed)``.
    """
    rule = rule or QuadratureRule(32, 4)
    rows = []
    for dim in (1, 2):
        for tname, t in TRANSFORMS[dim].items():
            unit_jacobian = tname == "identity"
            for kname, k in KERNELS.items():
                for uname, u in FUNCTIONS.items():
                    tag = f"{dim}d/{kname}/{uname}/{tname}"
                    d_in = verify_input_side(k, u, t, _probes(dim), rule)
                    rows.append((f"input/{tag}", d_in, d_in < 1e-8))
                    xi = _probes(dim, lo=0.1, hi=0.9)
                    d_out = verify_output_side(k, u, t, xi, rule)
                    rows.append((f"output/{tag}", d_out, d_out < 1e-8))
                    if not unit_jacobian:
                        n_in = verify_input_side(k, u, t, _probes(dim), rule, jacobian=False)
                        rows.append((f"control-input/{tag}", n_in, n_in >= 1e-2))
                        n_out = verify_output_side(k, u, t, xi, rule, jacobian=True)
                        rows.append((f"control-output/{tag}", n_out, n_out >= 1e-2))
    return rows


def chain_rule_suite():
    rows = []
    square = FUNCTIONS["quadratic"]
    one = np.array([[1.0]])
    lhs = composed_gradient_fd(square, scaling_transform(2.0), one)[0, 0]
    rhs = chain_rule_rhs(square, scaling_transform(2.0), one)[0, 0]
    rows.append(("symbolic/x^2/scale2/xi=1/lhs", lhs, abs(lhs - 8.0) < 1e-8))
    rows.append(("symbolic/x^2/scale2/xi=1/rhs", rhs, abs(rhs - 8.0) < 1e-12))
    extra = {1: {"scale": scaling_transform(2.0), "reflection": reflection_transform(1)},
             2: {"rotation": rotation_transform(0.7), "scale": scaling_transform(0.5, 2)}}
    for dim in (1, 2):
        transforms = dict(TRANSFORMS[dim], **extra[dim])
        for tname, t in transforms.items():
            for vname, v in FUNCTIONS.items():
                d = verify_gradient_chain(v, t, _probes(dim))
                rows.append((f"chain/{dim}d/{vname}/{tname}", d, d < 1e-8))
    rot = rotation_transform(0.7)
    xi = _probes(2)
    gx = FUNCTIONS["bump"].grad(rot.fn(xi))
    gxi = chain_rule_rhs(FUNCTIONS["bump"], rot, xi)
    d = _relative(np.linalg.norm(gx, axis=1), np.linalg.norm(gxi, axis=1))
    rows.append(("chain/2d/rotation-preserves-norm", d, d < 1e-10))
    return rows


# ---------------------------------------------------------------- model gradients

def _sampling_margin(model, u):
    """Smallest distance of any sampling coordinate to a fold boundary or cell edge."""
    model.eval()
    x = model.lifting(Tensor(u))
    margin = np.inf
    for block, act in zip(model.blocks, model.acts):
        x = block(x)
        if act is None:
            continue
        values = act.value_proj(x)
        delta = bound_displacement(act.predict_displacement(values), act.config.alpha)
        h, w = x.shape[2:]
        raw = act._grid.get(h, w)[None] + delta.data
        odd = np.abs(raw - (2 * np.floor(raw / 2) + 1))
        margin = min(margin, float(odd.min()))
        folded = np.where(np.abs(raw) <= 1, raw, np.mod(raw + 1, 2) - 1)
        for axis, n in ((0, w), (1, h)):
            pix = (folded[..., axis] + 1) * 0.5 * (n - 1)
            margin = min(margin, float(np.abs(pix - np.rint(pix)).min()) * 2 / (n - 1))
        x, _ = act(x)
    return margin


def model_grad_check(config=None, seed=0, step=1e-6, batch=1, max_tries=20):
    """Reverse-mode vs central differences for every parameter tensor and the input.

    The fuse layers are re-drawn away from zero so displacements are generic,
    and the probe is re-drawn until every sampling coordinate keeps a margin of
    ``10 * step`` from fold boundaries and interpolation cell edges.
    Returns ``{name: max relative error}`` with the input under ``"input"``.
    """
    config = config or tiny_config()
    h = w = max(8, config.modes[0])
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        model = ActFno(config, seed=int(rng.integers(2**31)))
        for act in model.act_blocks():
            act.disp.fuse.weight.data = rng.normal(scale=0.5, size=act.disp.fuse.weight.shape)
            act.disp.fuse.bias.data = rng.normal(scale=0.5, size=act.disp.fuse.bias.shape)
        u = rng.normal(size=(batch, config.in_channels, h, w))
        probe = rng.normal(size=(batch, config.out_channels, h, w))
        if not model.act_blocks() or _sampling_margin(model, u) > 10 * step:
            break
    else:
        raise RuntimeError("could not find a probe away from non-smooth points")

    model.train()
    named = list(model.named_parameters())
    inp = Tensor(u, requires_grad=True)
    backward(tsum(_ops.mul(model(inp), probe)), inputs=[p for _, p in named])

    def loss():
        return float(np.sum(model(inp).data * probe))

    report = {}
    for name, p in named + [("input", inp)]:
        analytic = p.grad.copy()
        numeric = np.zeros(p.data.size)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss()
            flat[i] = orig - step
            fm = loss()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * step)
        report[name] = max_relative_error(analytic, numeric.reshape(p.shape))
    return report
