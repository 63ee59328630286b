import numpy as np

from budgetab.model import ProblemInstance, UtilityModel


def make_instance(costs, budgets, w0, w1, mu=None, sigma2=None):
    costs = np.asarray(costs, dtype=float)
    mu = np.ones_like(costs) if mu is None else np.asarray(mu, dtype=float)
    if sigma2 is None:
        util = UtilityModel.fixed(mu)
    else:
        util = UtilityModel(mu, np.asarray(sigma2, dtype=float), {"kind": "fixed", "U": mu},
                            "resample")
    return ProblemInstance(costs, np.asarray(budgets, dtype=float), np.asarray(w0),
                           np.asarray(w1), util)


def one_hot(idx, n):
    return np.eye(n, dtype=np.int8)[np.asarray(idx)]


def random_instance(rng, m, n, slack=None):
    """Lognormal costs/utilities, one-hot allocations; budgets fit both allocations."""
    w1 = one_hot(rng.integers(n, size=m), n)
    w0 = one_hot(rng.integers(n, size=m), n)
    C = rng.lognormal(0, 0.25, (m, n))
    U = rng.lognormal(0, 0.25, (m, n)) * (1 + w1)
    spend = np.maximum((C * w1).sum(0), (C * w0).sum(0))
    b = np.where(spend > 0, spend, C.max(0))
    if slack == "full":
        b = np.maximum(b, (C * (w0 + w1)).sum(0))
    return ProblemInstance(C, b, w0, w1, UtilityModel.fixed(U))




ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
