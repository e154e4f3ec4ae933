"""Check the hand-written backward pass against finite differences.

Every gradient in the network, through the per-asset recurrent encoder,
the latent bottleneck and the fully connected action-value head, is
derived and coded by hand. This script builds a small random network,
picks random directions in parameter space and compares the analytic
directional derivative of the masked TD loss with a central difference.

Relative errors around 1e-8 are the float64 noise floor for this
scheme; anything much bigger would mean a wrong derivative.

Run: python3 demos/gradient_check.py
"""

import numpy as np

from qtrader.qnet import (Dims, QNetwork, masked_td_loss, pack_params,
                          unpack_params)

DIMS = Dims(n_assets=2, window=6, hidden=10, latent=5, h1=12, h2=8)
EPS = 1e-5


def loss_at(params, dims, X4, weights, targets, mask):
    net = QNetwork.from_params(dims, params)
    q = net.forward(X4, weights)
    loss, _ = masked_td_loss(q, targets, mask)
    return loss


def main():
    rng = np.random.default_rng(42)
    net = QNetwork(DIMS, rng)

    B = 4
    X4 = rng.normal(scale=0.1, size=(B, DIMS.n_assets, DIMS.window, 5))
    weights = rng.dirichlet(np.ones(DIMS.n_assets + 1), size=B)
    targets = rng.normal(size=(B, DIMS.n_actions))
    mask = rng.random((B, DIMS.n_actions)) < 0.7

    q, cache = net.forward(X4, weights, want_cache=True)
    loss, dq = masked_td_loss(q, targets, mask)
    grads = net.backward(cache, dq)
    gvec, spec = pack_params(grads)
    pvec, _ = pack_params(net.params)
    print(f"network has {pvec.size} parameters, batch of {B}, loss {loss:.6f}")
    print(f"\n{'direction':>9} {'analytic':>15} {'numeric':>15} {'rel error':>12}")

    worst = 0.0
    for k in range(10):
        d = rng.normal(size=pvec.size)
        d /= np.linalg.norm(d)
        analytic = float(gvec @ d)

        plus = loss_at(unpack_params(pvec + EPS * d, spec), DIMS,
                       X4, weights, targets, mask)
        minus = loss_at(unpack_params(pvec - EPS * d, spec), DIMS,
                        X4, weights, targets, mask)
        numeric = (plus - minus) / (2 * EPS)

        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, rel)
        print(f"{k:>9} {analytic:>15.9f} {numeric:>15.9f} {rel:>12.2e}")

    print(f"\nworst relative error over 10 random directions: {worst:.2e}")
    if worst > 1e-6:
        raise SystemExit("gradient check failed")
    print("analytic gradients agree with finite differences")


if __name__ == "__main__":
    main()
