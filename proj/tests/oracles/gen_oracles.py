"""Independent high-precision evaluations frozen into the C++ unit tests.

Run with: python3 tests/oracles/gen_oracles.py
"""
from mpmath import mp, mpf, atan, exp, log, pi

mp.dps = 40

# S(y; eta) = exp(eta * atan(y))^2 at y = 1, eta = 0.5
print("S_atan(1, 0.5) =", mp.nstr(exp(2 * mpf("0.5") * atan(1)), 20))

# normalized generalized Weibull log-density, (gamma, sigma, lambda) = (3.447, 4.592, 3.699), tau = 8
g, s, l, tau = mpf("3.447"), mpf("4.592"), mpf("3.699"), mpf(8)
z = (tau - l) / s
logf = log(g) - log(s) + (g - 1) * log(z) - z**g
print("gw_logpdf(8) normalized =", mp.nstr(logf, 20))
print("gw_logpdf(8) as printed (no 1/sigma) =", mp.nstr(logf + log(s), 20))

# toy panel, c(y; eta) = exp(eta * atan(y)), h = 0.25
Y = [[mpf(x) for x in row] for row in (
    ["0.0", "0.3", "-0.1", "0.4", "0.2"],
    ["1.0", "0.7", "1.2", "1.1", "1.5"],
    ["-0.5", "-0.9", "-0.2", "-0.6", "-0.4"],
)]
h = mpf("0.25")
eta = mpf("0.3")
n = 4


def S(y, e):
    return exp(2 * e * atan(y))


H11 = mpf(0)
Q = mpf(0)
taus = []
for row in Y:
    sum_log_s = sum(log(S(row[j - 1], eta)) for j in range(1, n + 1))
    tau = sum((row[j] - row[j - 1]) ** 2 / h / S(row[j - 1], eta) for j in range(1, n + 1)) / n
    taus.append(tau)
    H11 += sum_log_s + n * log(tau)
    gs = [2 * atan(row[j - 1]) for j in range(1, n + 1)]
    m1 = sum(gs) / n
    m2 = sum(x * x for x in gs) / n
    Q += m2 - m1 * m1
H11 = -H11 / 2
Q = Q / (2 * len(Y))
print("toy tau_hat =", [mp.nstr(t, 20) for t in taus])
print("toy H11(0.3) =", mp.nstr(H11, 20))
print("toy Q11 =", mp.nstr(Q, 20))
