"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

import svlab.tensor as tg


def fd_vs_analytic(make_loss, params, n_coords=4, eps=1e-5, rtol=1e-6,
                   seed=0):
    """Compare tape gradients of make_loss against central differences.

    make_loss receives a dict of Tensors (requires_grad) keyed like params
    and must return a scalar Tensor. A handful of coordinates per parameter
    is probed. Returns the worst relative error seen.
    """
    rng = np.random.default_rng(seed)
    with tg.tape() as t:
        tens = {k: tg.Tensor(v, requires_grad=True) for k, v in params.items()}
        loss = make_loss(tens)
        t.backward(loss)
    analytic = {k: tens[k].grad for k in params}

    def eval_loss(vals):
        consts = {k: tg.Tensor(v) for k, v in vals.items()}
        return make_loss(consts).item()

    worst = 0.0
    for k, v in params.items():
        assert analytic[k] is not None, f"no gradient for {k}"
        # near-zero components are dominated by finite-difference roundoff;
        # floor the denominator at a fraction of the gradient's scale
        scale = 1e-3 * max(float(np.abs(analytic[k]).max()), 1e-3)
        flat = v.ravel()
        coords = rng.choice(flat.size, size=min(n_coords, flat.size),
                            replace=False)
        for c in coords:
            vp = {kk: vv.copy() for kk, vv in params.items()}
            vp[k].ravel()[c] += eps
            lp = eval_loss(vp)
            vm = {kk: vv.copy() for kk, vv in params.items()}
            vm[k].ravel()[c] -= eps
            lm = eval_loss(vm)
            fd = (lp - lm) / (2.0 * eps)
            an = analytic[k].ravel()[c]
            err = abs(fd - an) / max(abs(fd), abs(an), scale)
            worst = max(worst, err)
            assert err <= rtol, (
                f"grad mismatch {k}[{c}]: fd={fd!r} analytic={an!r} rel={err:.2e}")
    return worst
