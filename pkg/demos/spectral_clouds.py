"""Cluster Gaussian clouds and show where the eigengap lands.

    python3 demos/spectral_clouds.py [k]
"""

import sys

import numpy as np

from cvec.clustering import choose_k_and_cluster, cosine_affinity, refine_affinity
from cvec.selftest import adjusted_rand_index, gaussian_clouds

k = int(sys.argv[1]) if len(sys.argv) > 1 else 3
X, truth = gaussian_clouds(k, np.random.default_rng(0))
res = choose_k_and_cluster(refine_affinity(cosine_affinity(X)), k_max=10, embeddings=X)

print(f"{len(X)} points in {X.shape[1]} dims, {k} clouds")
print("smallest Laplacian eigenvalues:", np.round(res.eigenvalues[: k + 3], 3))
print(f"eigengap picks k={res.k}, ARI against the truth {adjusted_rand_index(truth, res.labels):.3f}")
