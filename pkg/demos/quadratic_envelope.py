"""Walk through the envelope machinery on two scalar quadratic clients.

Client i has f_i(t) = 0.5 * (t - a_i)^2 with a_1 = 1 and a_2 = -1. Every
quantity below has a closed form, so the printed numbers can be checked by
hand.

    python demos/quadratic_envelope.py
"""
import numpy as np

from moreau_fl.data import placeholder_clients
from moreau_fl.federation import Federation, PFedMe
from moreau_fl.models import Quadratic
from moreau_fl.prox import ProxOptions, closed_form_prox, envelope_grad, prox_solve

lam = 1.0
clients = [Quadratic(np.ones(1), np.array([1.0])), Quadratic(np.ones(1), np.array([-1.0]))]
w = np.array([3.0])

# The personalized model sits between w and the client's own optimum.
for i, spec in enumerate(clients):
    exact = closed_form_prox(spec, w, lam)
    approx = prox_solve(spec, w, None, ProxOptions(lam=lam, K=50, inner_lr=0.5)).theta
    grad = envelope_grad(w, exact, lam)
    print(f"client {i}: prox {exact[0]:+.4f}  (50 GD steps: {approx[0]:+.4f})  envelope grad {grad[0]:+.4f}")

# The envelope of a 1-strongly convex client is lam/(lam+1) = 0.5 strongly convex,
# so each exact-prox round with eta = 0.5 shrinks w by 1 - 0.25.
fed = Federation(PFedMe(lam=lam, eta=0.5, method="closed_form"), clients, placeholder_clients(2),
                 S=2, T=1, R=1, batch_size=1, beta=1.0, w0=w)
print("\nround   w")
for t in range(12):
    print(f"{t:5d}   {fed.server.global_w[0]:+.6f}")
    fed.step(t)
