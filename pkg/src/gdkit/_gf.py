"""GF(256) arithmetic tables shared by every kernel backend.

Field convention: primitive polynomial 0x11D (x^8+x^4+x^3+x^2+1), generator
element 2, first consecutive root alpha^0.  All wire-visible Reed-Solomon
data depends on this convention, so it is fixed here and nowhere else.
"""

PRIM_POLY = 0x11D
GENERATOR = 2
FIELD_CHARAC = 255


def _build_tables():
    exp = [0] * 510
    log = [0] * 256
    x = 1
    for i in range(FIELD_CHARAC):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIM_POLY
    for i in range(FIELD_CHARAC, 510):
        exp[i] = exp[i - FIELD_CHARAC]
    return exp, log


EXP, LOG = _build_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return EXP[LOG[a] + LOG[b]]


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("GF(256) division by zero")
    if a == 0:
        return 0
    return EXP[(LOG[a] - LOG[b]) % FIELD_CHARAC]


def gf_inv(a: int) -> int:
    return EXP[FIELD_CHARAC - LOG[a]]


def gf_pow(a: int, power: int) -> int:
    if a == 0:
        return 0
    return EXP[(LOG[a] * power) % FIELD_CHARAC]


def poly_mul(p, q):
    out = [0] * (len(p) + len(q) - 1)
    for i, pi in enumerate(p):
        if pi == 0:
            continue
        for j, qj in enumerate(q):
            out[i + j] ^= gf_mul(pi, qj)
    return out


def poly_eval(poly, x):
    """Evaluate poly (highest-degree coefficient first) at x via Horner."""
    acc = 0
    for coef in poly:
        acc = gf_mul(acc, x) ^ coef
    return acc


def generator_poly(nsym: int):
    """Monic generator polynomial with roots alpha^0 .. alpha^(nsym-1)."""
    g = [1]
    for i in range(nsym):
        g = poly_mul(g, [1, EXP[i]])
    return bytes(g)
