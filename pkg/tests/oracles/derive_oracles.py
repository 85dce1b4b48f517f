"""Regenerate the frozen oracle values in ``values.json``.

Every number here is computed without importing ``lattice_cavity``:
band edges come from Mathieu characteristic values, Im k from an adaptive
ODE integration of Hill's equation, cavity edges from root finding on the
Mathieu edges, unit conversions from CODATA constants.

Run from the repository root::

    python tests/oracles/derive_oracles.py
"""

import json
import math
from pathlib import Path

import numpy as np
from scipy import constants
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq
from scipy.special import mathieu_a, mathieu_b

RB87 = 86.909180531 * constants.physical_constants["atomic mass constant"][0]
P = 390e-9
K_L = math.pi / P
W_Z = 50e-6


def mathieu_edges(V0, n_bands=4):
    # -psi'' - V0 cos^2 z psi = E psi  <=>  Mathieu with a = E + V0/2, q = V0/4 after z -> z + pi/2
    q = V0 / 4.0
    return [[mathieu_a(n - 1, q) - V0 / 2.0, mathieu_b(n, q) - V0 / 2.0] for n in range(1, n_bands + 1)]


def half_trace(V0, E):
    def rhs(z, y):
        return [y[1], (-V0 * math.cos(z) ** 2 - E) * y[0], y[3], (-V0 * math.cos(z) ** 2 - E) * y[2]]
    sol = solve_ivp(rhs, (0.0, math.pi), [1.0, 0.0, 0.0, 1.0], method="DOP853", rtol=1e-13, atol=1e-14)
    y = sol.y[:, -1]
    return 0.5 * (y[0] + y[3]), y[0] * y[3] - y[1] * y[2]


def im_k(V0, E):
    h, _ = half_trace(V0, E)
    return math.acosh(abs(h)) / math.pi if abs(h) > 1 else 0.0


def edge_depth(E, band, top, d_hi=60.0):
    # depth where the band edge equals E (edges fall monotonically with depth)
    def f(d):
        q = d / 4.0
        a = mathieu_b(band, q) if top else mathieu_a(band - 1, q)
        return a - d / 2.0 - E
    return brentq(f, 1e-12, d_hi, xtol=1e-14)


def main():
    out = {}
    out["band_edges"] = {str(V): mathieu_edges(V) for V in (3.0, 9.0, 15.0)}
    # shallow gap law at V0 = 0.1
    e = mathieu_edges(0.1, 2)
    out["shallow_gap_0.1"] = e[1][0] - e[0][1]

    # gap I/II centre at depth 9 and its attenuation
    e9 = mathieu_edges(9.0)
    e_mid = 0.5 * (e9[0][1] + e9[1][0])
    h, det = half_trace(9.0, e_mid)
    out["gap12_center_9"] = {"energy": e_mid, "im_k": im_k(9.0, e_mid), "half_trace": h, "det": det}

    # units
    E_R = (constants.hbar * K_L) ** 2 / (2 * RB87)
    out["units"] = {
        "t_R": constants.hbar / E_R,
        "v_R": constants.hbar * K_L / RB87,
        "w_z_recoil": W_Z * K_L,
        "box_T_rev_20um": 4 * RB87 * (20e-6) ** 2 / (math.pi * constants.hbar),
    }

    # cavity at depth 15, p = 2.4: E = 5.76 sits in band IV at the centre; moving outwards the
    # bottom of band IV rises through E (inner mirror edge), then the top of band III (outer edge)
    E = 2.4**2
    w = W_Z * K_L
    V0 = 15.0
    d_top3 = edge_depth(E, 3, top=True)
    d_bot4 = edge_depth(E, 4, top=False)
    z_of = lambda d: w * math.sqrt(0.5 * math.log(V0 / d))
    out["cavity_15_p2.4"] = {"inner": z_of(d_bot4), "outer": z_of(d_top3), "d_top3": d_top3, "d_bot4": d_bot4}

    # one-sided transmission at p = 1.3, V0 = 9: integrate Im k over the gap depth intervals
    E = 1.3**2
    V0 = 9.0
    ivs = []
    for n in range(1, 4):
        if n * n <= E:
            continue
        try:
            a = edge_depth(E, n, top=True, d_hi=V0)
        except ValueError:
            continue
        try:
            b = edge_depth(E, n + 1, top=False, d_hi=V0)
        except ValueError:
            b = V0
        ivs.append((z_of_v(w, V0, b), z_of_v(w, V0, a)))
    total = 0.0
    for lo, hi in ivs:
        val, _ = quad(lambda z: im_k(V0 * math.exp(-2 * z * z / w / w), E), lo, hi, limit=200,
                      epsabs=1e-9, epsrel=1e-9)
        total += val
    out["T_plus_9_p1.3"] = {"exponent": total, "T_plus": math.exp(-2 * total), "intervals": ivs}

    # tight-binding estimate of m* at the bottom of band I, depth 15
    e15 = mathieu_edges(15.0, 1)[0]
    W = e15[1] - e15[0]
    out["tight_binding_mstar_15"] = 4.0 / (W * math.pi**2)

    path = Path(__file__).with_name("values.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2))


def z_of_v(w, V0, d):
    return w * math.sqrt(0.5 * math.log(V0 / d)) if d < V0 else 0.0


if __name__ == "__main__":
    main()
