from dataclasses import dataclass, replace
from time import perf_counter
from typing import List

import ppisvrg as pps
from ppisvrg.optim import Algorithm


@dataclass
class BenchSettings:
    n: int
    N: int
    dim: int
    eta: float
    m: int
    m0: int
    S: int

    def sample(self, seed: int) -> pps.SplitDataset:
        spec = pps.SyntheticSpec(
            n=self.n, N=self.N, outcome_kind="continuous", dim=self.dim,
            theta_star=[1.0] * self.dim, pred_noise_sigma=0.5, seed=seed)
        return pps.generate(spec)


def optimize(model: pps.LossModel, ds: pps.SplitDataset, cfg: pps.OptConfig) -> float:
    start = perf_counter()
    pps.run(model, ds, cfg)
    return perf_counter() - start


def benchmark():
    num_runs = 20
    settings = BenchSettings(n=1000, N=10000, dim=10, eta=0.005, m=1000, m0=64, S=10)
    model = pps.LossModel(kind="ridge", regularization=0.1)
    datasets = [settings.sample(seed) for seed in range(num_runs)]
    base = pps.OptConfig(eta=settings.eta, m=settings.m, m0=settings.m0, S=settings.S,
                         record_every=settings.m)

    # compile the kernels before timing
    optimize(model, datasets[0], replace(base, S=1))

    for algorithm in Algorithm:
        timings: List[float] = []
        for run_id, ds in enumerate(datasets):
            cfg = replace(base, algorithm=algorithm, seed=run_id)
            timings.append(optimize(model, ds, cfg))
        print(f'{algorithm.value:>12}: {sum(timings) / num_runs * 1000:8.2f} ms per run')


if __name__ == '__main__':
    benchmark()
