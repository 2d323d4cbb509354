"""The low-rank bilinear combiner is a rank-D third-order tensor in disguise.

Builds random factors, evaluates the combiner through the Hadamard route,
then again through the explicit tensor, and prints the gap.
"""

import numpy as np

from cvec import numerics as nx
from cvec.combination import bilinear_combine, bilinear_full_oracle, tied_low_rank_tensor
from cvec.params import ParamStore

rng = np.random.default_rng(1)
M, N, O, D = 5, 4, 3, 2
e1, e2 = rng.standard_normal(M), rng.standard_normal(N)

p = ParamStore()
U1, U2, P, b = rng.standard_normal((M, D)), rng.standard_normal((N, D)), rng.standard_normal((O, D)), rng.standard_normal(O)
for name, value in {"U1": U1, "U2": U2, "P": P, "b": b, "V1": np.zeros((O, M)), "V2": np.zeros((O, N))}.items():
    p.add(f"demo.{name}", value)

with nx.no_grad():
    fast = bilinear_combine(e1, e2, "identity", p, "demo").data
W = tied_low_rank_tensor(U1, U2, P)
slow = bilinear_full_oracle(e1, e2, W, b)

print("tensor shape", W.shape, "rank", D)
print("Hadamard route ", np.round(fast, 6))
print("explicit tensor", np.round(slow, 6))
print("max gap", np.max(np.abs(fast - slow)))
