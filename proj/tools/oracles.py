"""Independent reference values frozen into the unit tests.

Run with python3 (needs torch and scipy); prints each value at full precision.
"""

import math

import torch
from scipy import stats


def adamw(lr, betas, eps, wd, start, grads):
    p = torch.tensor(start, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.AdamW([p], lr=lr, betas=betas, eps=eps, weight_decay=wd)
    out = []
    for g in grads:
        opt.zero_grad()
        p.grad = torch.tensor(g, dtype=torch.float64)
        opt.step()
        out.append(p.detach().tolist())
    return out


def main():
    print("adamw constant grad, wd 0.01:", adamw(0.1, (0.9, 0.999), 1e-8, 0.01, [1.0], [[0.5]] * 3))
    print("adamw constant grad, wd 0:   ", adamw(0.1, (0.9, 0.999), 1e-8, 0.0, [1.0], [[0.5]] * 3))
    print("adamw two params:            ",
          adamw(0.01, (0.8, 0.99), 1e-6, 0.1, [1.0, -2.0], [[0.3, -1.0], [-0.2, 0.5], [1.5, 0.0]])[-1])

    logits = torch.tensor([[math.log(3.0), 0.0, -math.inf]], dtype=torch.float64)
    print("cross entropy -ln(3/4):", torch.nn.functional.cross_entropy(logits[:, :2], torch.tensor([0])).item())

    print("ln 512:", math.log(512), " 0.7 ln 512:", 0.7 * math.log(512))

    x = [3.1, 2, 2, 5.5, 4.2, 1, 2]
    y = [0.1, 0.5, 0.3, 0.05, 0.2, 0.9, 0.3]
    print("spearman:", stats.spearmanr(x, y).statistic, " pearson:", stats.pearsonr(x, y).statistic)


if __name__ == "__main__":
    main()
