# Source template for per-model compiled kernels. ``integrator.compile_kernel``
# prepends the generated ``derivs`` function and the D/P constants, writes the
# result to the kernel cache directory and imports it. Not imported directly.

KERNEL_BODY = r'''

M = D + P

# Dormand-Prince 5(4) tableau
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
C2, C3, C4, C5 = 0.2, 0.3, 0.8, 8.0 / 9.0
E1 = 71.0 / 57600.0
E3 = -71.0 / 16695.0
E4 = 71.0 / 1920.0
E5 = -17253.0 / 339200.0
E6 = 22.0 / 525.0
E7 = -1.0 / 40.0

SAFE = 0.9
FAC_MIN = 0.2      # h_new / h is kept within [FAC_MIN, FAC_MAX]
FAC_MAX = 10.0
BETA = 0.04
EXPO1 = 0.2 - BETA * 0.75


@njit(cache=True, error_model="numpy")
def aug_rhs(t, y, p, mode, dy, F, Fx, Fp, Fxx, Fxp, Fpp):
    derivs(t, y, p, F, Fx, Fp, Fxx, Fxp, Fpp, mode)
    for j in range(D):
        dy[j] = F[j]
    if mode == 0:
        return
    # s[j, k] lives at D + j*M + k
    for j in range(D):
        for k in range(M):
            acc = 0.0
            for l in range(D):
                acc += Fx[j, l] * y[D + l * M + k]
            if k >= D:
                acc += Fp[j, k - D]
            dy[D + j * M + k] = acc
    if mode == 1:
        return
    # z[j, a, b] lives at D + D*M + j*M*M + a*M + b; symmetric in (a, b)
    zb = D + D * M
    for j in range(D):
        for a in range(M):
            for b in range(a, M):
                acc = 0.0
                for l in range(D):
                    acc += Fx[j, l] * y[zb + l * M * M + a * M + b]
                    sla = y[D + l * M + a]
                    slb = y[D + l * M + b]
                    if b >= D:
                        acc += Fxp[j, l, b - D] * sla
                    if a >= D:
                        acc += Fxp[j, l, a - D] * slb
                    for m in range(D):
                        acc += Fxx[j, l, m] * sla * y[D + m * M + b]
                if a >= D:
                    acc += Fpp[j, a - D, b - D]
                dy[zb + j * M * M + a * M + b] = acc
                dy[zb + j * M * M + b * M + a] = acc


@njit(cache=True, error_model="numpy")
def _err_norm(y, ynew, err, rtol, atol):
    n = y.shape[0]
    acc = 0.0
    for i in range(n):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        r = err[i] / sc
        acc += r * r
    return np.sqrt(acc / n)


@njit(cache=True, error_model="numpy")
def _all_finite(v):
    for i in range(v.shape[0]):
        if not np.isfinite(v[i]):
            return False
    return True


@njit(cache=True, error_model="numpy")
def solve(y0, p, times, mode, rtol, atol, max_steps, h_init, min_step, out):
    """Integrate from t=0, writing the state at each entry of ``times``.

    Returns (status, t_fail, n_accepted, n_rejected, n_rhs).
    status: 0 ok, 1 step underflow, 2 max steps, 3 non-finite values.
    """
    n = y0.shape[0]
    F = np.zeros(D)
    Fx = np.zeros((D, D))
    Fp = np.zeros((D, max(P, 1)))
    Fxx = np.zeros((D, D, D))
    Fxp = np.zeros((D, D, max(P, 1)))
    Fpp = np.zeros((D, max(P, 1), max(P, 1)))
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    ytmp = np.empty(n)
    ynew = np.empty(n)
    err = np.empty(n)
    y = y0.copy()

    t = 0.0
    nt = times.shape[0]
    n_acc = 0
    n_rej = 0
    n_rhs = 0
    last_nonfinite = False

    k = 0
    while k < nt and times[k] <= 0.0:
        out[k, :] = y
        k += 1
    if k == nt:
        return 0, 0.0, 0, 0, 0

    aug_rhs(t, y, p, mode, k1, F, Fx, Fp, Fxx, Fxp, Fpp)
    n_rhs += 1
    if not _all_finite(k1):
        return 3, t, 0, 0, n_rhs

    span = times[nt - 1]
    if h_init > 0.0:
        h = h_init
    else:
        # Hairer-Norsett-Wanner starting step
        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(y[i])
            d0 += (y[i] / sc) ** 2
            d1 += (k1[i] / sc) ** 2
        d0 = np.sqrt(d0 / n)
        d1 = np.sqrt(d1 / n)
        if d0 < 1e-5 or d1 < 1e-5:
            h0 = 1e-6
        else:
            h0 = 0.01 * d0 / d1
        h0 = min(h0, span)
        for i in range(n):
            ytmp[i] = y[i] + h0 * k1[i]
        aug_rhs(t + h0, ytmp, p, mode, k2, F, Fx, Fp, Fxx, Fxp, Fpp)
        n_rhs += 1
        d2 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(y[i])
            d2 += ((k2[i] - k1[i]) / sc) ** 2
        d2 = np.sqrt(d2 / n) / h0
        if not np.isfinite(d2):
            h = h0
        elif max(d1, d2) <= 1e-15:
            h = max(1e-6, h0 * 1e-3)
        else:
            h = (0.01 / max(d1, d2)) ** 0.2
        h = min(100.0 * h0, h)
    h = min(h, span)

    facold = 1e-4
    steps = 0
    while k < nt:
        target = times[k]
        if steps >= max_steps:
            return 2, t, n_acc, n_rej, n_rhs
        hit = False
        h_prop = h
        if t + h * 1.0001 >= target:
            h = target - t
            hit = True
        if h < min_step and not hit:
            if last_nonfinite:
                return 3, t, n_acc, n_rej, n_rhs
            return 1, t, n_acc, n_rej, n_rhs
        steps += 1

        for i in range(n):
            ytmp[i] = y[i] + h * A21 * k1[i]
        aug_rhs(t + C2 * h, ytmp, p, mode, k2, F, Fx, Fp, Fxx, Fxp, Fpp)
        for i in range(n):
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        aug_rhs(t + C3 * h, ytmp, p, mode, k3, F, Fx, Fp, Fxx, Fxp, Fpp)
        for i in range(n):
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        aug_rhs(t + C4 * h, ytmp, p, mode, k4, F, Fx, Fp, Fxx, Fxp, Fpp)
        for i in range(n):
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        aug_rhs(t + C5 * h, ytmp, p, mode, k5, F, Fx, Fp, Fxx, Fxp, Fpp)
        for i in range(n):
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
        aug_rhs(t + h, ytmp, p, mode, k6, F, Fx, Fp, Fxx, Fxp, Fpp)
        for i in range(n):
            ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
        tnew = target if hit else t + h
        aug_rhs(tnew, ynew, p, mode, k7, F, Fx, Fp, Fxx, Fxp, Fpp)
        n_rhs += 6
        for i in range(n):
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])

        if _all_finite(ynew) and _all_finite(k7):
            e = _err_norm(y, ynew, err, rtol, atol)
            last_nonfinite = False
        else:
            e = np.inf
            last_nonfinite = True

        if not np.isfinite(e):
            n_rej += 1
            h *= 0.1
            continue

        fac11 = e ** EXPO1
        if e <= 1.0:
            # PI controller (Gustafsson), as in DOPRI5
            fac = fac11 / facold ** BETA
            fac = max(1.0 / FAC_MAX, min(1.0 / FAC_MIN, fac / SAFE))
            hnew = h / fac
            facold = max(e, 1e-4)
            n_acc += 1
            t = tnew
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            if hit:
                out[k, :] = y
                k += 1
                while k < nt and times[k] <= t:
                    out[k, :] = y
                    k += 1
                # a clamped step says little about the natural step size
                h = max(hnew, h_prop)
            else:
                h = hnew
        else:
            n_rej += 1
            h = h / min(1.0 / FAC_MIN, fac11 / SAFE)
    return 0, t, n_acc, n_rej, n_rhs
'''
