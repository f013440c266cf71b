#!/usr/bin/env python3
"""Regenerates dice2016.toml from the DICE-2016R recursions.

Units: carbon in GtC, output and consumption in trillions of 2010 USD per
5-year period, population in millions, temperature in degC above
preindustrial.
"""
import math

N = 300
TSTEP = 5

pop0, popadj, popasym = 7403.0, 0.134, 11500.0
a0, ga0, dela = 5.115, 0.076, 0.005
gama, dk = 0.300, 0.100
e0, q0, miu0 = 35.85, 105.5, 0.03
gsigma1, dsig = -0.0152, -0.001
eland0, deland = 2.6, 0.115
pback, gback, expcost2 = 550.0, 0.025, 2.6
fex0, fex1 = 0.5, 1.0
c1, c3, c4, fco22x, t2xco2 = 0.1005, 0.088, 0.025, 3.6813, 3.1
b12, b23 = 0.12, 0.007
mateq, mueq, mleq = 588.0, 360.0, 1720.0
CO2_PER_C = 3.666

L = [pop0]
for t in range(1, N):
    L.append(L[-1] * (popasym / L[-1]) ** popadj)

al = [a0]
for t in range(1, N):
    ga = ga0 * math.exp(-dela * TSTEP * (t - 1))
    al.append(al[-1] / (1.0 - ga))

sig = [e0 / (q0 * (1.0 - miu0))]
gsig = gsigma1
for t in range(1, N):
    sig.append(sig[-1] * math.exp(gsig * TSTEP))
    gsig *= (1.0 + dsig) ** TSTEP

A = [TSTEP * a * 1000.0 ** (-(1.0 - gama)) for a in al]
sigma = [s / CO2_PER_C for s in sig]
theta1 = [pback * (1.0 - gback) ** t * sig[t] / expcost2 / 1000.0 for t in range(N)]
e_land = [TSTEP * eland0 * (1.0 - deland) ** t / CO2_PER_C for t in range(N)]
f_ex = [fex0 + (fex1 - fex0) * t / 17.0 if t < 17 else fex1 for t in range(N)]

b11 = 1.0 - b12
b21 = b12 * mateq / mueq
b22 = 1.0 - b21 - b23
b32 = b23 * mueq / mleq
b33 = 1.0 - b32
phi_m = [[b11, b21, 0.0], [b12, b22, b32], [0.0, b23, b33]]
lam = fco22x / t2xco2
phi_t = [[1.0 - c1 * lam - c1 * c3, c1 * c3], [c4, 1.0 - c4]]


def fmt(x):
    return repr(float(x))


def arr(xs, per_line=4):
    lines = []
    for i in range(0, len(xs), per_line):
        lines.append("  " + ", ".join(fmt(x) for x in xs[i:i + per_line]) + ",")
    return "[\n" + "\n".join(lines) + "\n]"


out = []
out.append("# DICE-2016R calibration, 5-year periods.")
out.append("# Regenerate with gen_dice2016.py; do not edit the [paths] arrays by hand.")
out.append("")
out.append("[params]")
out.append("step_years = 5")
out.append("start_year = 2015")
out.append("beta_annual = 0.985")
out.append(f"psi = {fmt(1.0 / 1.45)}")
out.append(f"gamma = {fmt(1.45)}")
out.append(f"delta = {fmt(1.0 - (1.0 - dk) ** TSTEP)}")
out.append(f"alpha = {fmt(gama)}")
out.append("pi1 = 0.0")
out.append("pi2 = 0.00236")
out.append("# high-exponent damage term, active only when weitzman = true")
out.append(f"pi_hi = {fmt(6.081 ** -6.754)}")
out.append("exp_hi = 6.754")
out.append("weitzman = false")
out.append(f"theta2 = {fmt(expcost2)}")
out.append(f"eta = {fmt(fco22x)}")
out.append(f"m_at_star = {fmt(mateq)}")
out.append(f"xi1 = {fmt(c1)}")
out.append("phi_m = [")
for row in phi_m:
    out.append("  [" + ", ".join(fmt(v) for v in row) + "],")
out.append("]")
out.append("phi_t = [")
for row in phi_t:
    out.append("  [" + ", ".join(fmt(v) for v in row) + "],")
out.append("]")
out.append("mu_max = 1.0")
out.append("# trillion USD per GtC -> USD per tC")
out.append("scc_unit = 1000.0")
out.append("terminal_consumption_share = 0.78")
out.append("")
out.append("[initial]")
out.append("K = 223.0")
out.append("M = [851.0, 460.0, 1740.0]")
out.append("T = [0.85, 0.0068]")
out.append("")
out.append("[tipping]")
out.append("# hazard per degC per period")
out.append("lambda = 0.0175")
out.append("t_bar = 0.0")
out.append("gamma_bar = 50.0")
out.append("d_inf_bar = 0.1")
out.append("q = 0.25")
out.append("n_transient = 4")
out.append("levels = [0.025, 0.1, 0.175]")
out.append(f"weights = [{fmt(2/9)}, {fmt(5/9)}, {fmt(2/9)}]")
out.append("")
out.append("[lrr]")
out.append("varrho = 0.0172")
out.append("r = 0.28")
out.append("varsigma = 0.009")
out.append("n_zeta = 31")
out.append("n_chi = 7")
out.append("truncation_k = 3.0")
out.append("log_zeta_bound = 0.3")
out.append("")
out.append("[paths]")
for name, xs in [("A", A), ("L", L), ("sigma", sigma), ("theta1", theta1), ("E_land", e_land), ("F_ex", f_ex)]:
    out.append(f"{name} = {arr(xs)}")
print("\n".join(out))
