"""
Gaussian matches of transformed densities
=========================================

Approximate the log of a Gamma variable, and the logit of a Beta variable,
by a Gaussian in three ways and compare each against the exact density.
"""

import numpy as np

from glik.matching import BetaLogit, GammaLog, MatchMethod, kl_q_to_p, match

# the log of a Gamma(alpha, 1) draw is the pseudo-observation for one softmax output
for alpha in (0.1, 1.0, 10.0):
    d = GammaLog(alpha, 1.0)
    print(f"log Gamma({alpha}, 1)")
    for method in MatchMethod:
        q = match(d, method)
        print(f"  {method.value:12s} mean {q.mean:9.4f}  variance {q.variance:9.4f}  KL(q||p) {kl_q_to_p(q, d):.4f}")

# Laplace is centred on the mode, moment matching on the mean
d = BetaLogit(2.0, 5.0)
psi = np.linspace(-6, 3, 7)
print("\nlogit Beta(2, 5): exact vs approximate log-density")
print("  psi     exact   " + "  ".join(f"{m.value:>11s}" for m in (MatchMethod.LAPLACE, MatchMethod.VARIATIONAL, MatchMethod.MOMENT)))
approx = [match(d, m) for m in (MatchMethod.LAPLACE, MatchMethod.VARIATIONAL, MatchMethod.MOMENT)]
for x, exact in zip(psi, d.log_pdf(psi)):
    print(f"  {x:5.1f} {exact:8.3f}   " + "  ".join(f"{q.log_pdf(x):11.3f}" for q in approx))
