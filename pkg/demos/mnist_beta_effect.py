"""How the aggregation weight beta changes convergence speed on MNIST MLR.

Needs the MNIST IDX files (see README). With beta > 1 the server overshoots
the client average in its direction, which acts like a larger global step.
Each run takes a couple of minutes on one core.

    python demos/mnist_beta_effect.py
"""
import numpy as np

from moreau_fl import config as cfg
from moreau_fl import experiment as ex
from moreau_fl import models
from moreau_fl.federation import build_federation

base = cfg.load_preset("mnist_mlr_sweep").with_updates(lazy_clients=True)
data = ex.build_dataset(base.dataset)
tx = np.concatenate([c.test_x for c in data.clients])
ty = np.concatenate([c.test_y for c in data.clients])

for beta in (1.0, 2.0, 4.0):
    fed = build_federation(base.with_updates(beta=beta), data, record_time=False)
    spec = fed.specs[0]
    marks = dict.fromkeys((0.85, 0.88, 0.90))
    for t in range(base.T):
        acc = float(np.mean(models.predict(spec, fed.server.global_w, tx) == ty))
        for target in marks:
            if marks[target] is None and acc >= target:
                marks[target] = t
        if acc >= 0.90:
            break
        fed.step(t)
    print(f"beta={beta:g}: rounds to 85% / 88% / 90% global accuracy: "
          + " / ".join(str(v) for v in marks.values()))
