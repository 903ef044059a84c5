"""Small builders shared by the test modules."""
import numpy as np

from tcreid.data import Dataset, FeatureStore, SampleMeta


def make_dataset(cams, frames, pids=None, dim=2, num_cameras=None, seed=0):
    n = len(cams)
    pids = [0] * n if pids is None else pids
    metas = [SampleMeta(i, int(pids[i]), int(cams[i]), int(frames[i])) for i in range(n)]
    raw = np.random.default_rng(seed).standard_normal((n, dim)).astype(np.float32)
    c = num_cameras if num_cameras is not None else int(max(cams)) + 1
    return Dataset(metas, FeatureStore(raw), c)
