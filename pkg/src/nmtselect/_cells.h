/* Single precision gate kernels for one batch row of H units.
 * Written as flat loops over restrict pointers so gcc vectorizes them
 * (needs -O3 -fno-trapping-math). The double precision path lives in
 * the .pyx and uses libm. */
#ifndef NMTSELECT_CELLS_H
#define NMTSELECT_CELLS_H
#include <stdint.h>
#include <string.h>

/* Cody-Waite reduction + degree-6 polynomial, ~1 ulp on the clamped
 * range. NaN and +-inf inputs give NaN so blow-ups stay visible. */
static inline float nms_expf(float x)
{
    float poison = x - x;
    float xc = x < -87.0f ? -87.0f : x;
    xc = xc > 88.0f ? 88.0f : xc;
    float kf = (xc * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
    float r = xc - kf * 0.693359375f + kf * 2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    union { int32_t i; float f; } s;
    s.i = ((int32_t)kf + 127) << 23;
    return p * s.f + poison;
}

static inline float nms_sigf(float x) { return 1.0f / (1.0f + nms_expf(-x)); }
static inline float nms_tanhf(float x) { return 2.0f * nms_sigf(2.0f * x) - 1.0f; }

/* a: 4H pre-activations in, activations out (i, f, g, o). */
static inline void nms_lstm_row_fwd(float *restrict a, const float *restrict cp,
                                    const float *restrict hp, float *restrict cout,
                                    float *restrict hout, intptr_t H, int live)
{
    for (intptr_t j = 0; j < H; j++) {
        float i = nms_sigf(a[j]);
        float f = nms_sigf(a[H + j]);
        float g = nms_tanhf(a[2 * H + j]);
        float o = nms_sigf(a[3 * H + j]);
        float c = f * cp[j] + i * g;
        a[j] = i;
        a[H + j] = f;
        a[2 * H + j] = g;
        a[3 * H + j] = o;
        cout[j] = c;
        hout[j] = o * nms_tanhf(c);
    }
    if (!live) {
        memcpy(cout, cp, H * sizeof(float));
        memcpy(hout, hp, H * sizeof(float));
    }
}

static inline void nms_lstm_row_bwd(const float *restrict a, const float *restrict c,
                                    const float *restrict cp, const float *restrict dhs,
                                    float *restrict dh, float *restrict dc,
                                    float *restrict dz, intptr_t H)
{
    for (intptr_t j = 0; j < H; j++) {
        float dhv = dh[j] + dhs[j];
        float i = a[j], f = a[H + j], g = a[2 * H + j], o = a[3 * H + j];
        float tc = nms_tanhf(c[j]);
        float dct = dc[j] + dhv * o * (1.0f - tc * tc);
        dz[j] = dct * g * i * (1.0f - i);
        dz[H + j] = dct * cp[j] * f * (1.0f - f);
        dz[2 * H + j] = dct * i * (1.0f - g * g);
        dz[3 * H + j] = dhv * tc * o * (1.0f - o);
        dc[j] = dct * f;
        dh[j] = 0.0f;
    }
}

static inline void nms_gru_row_fwd(const float *restrict zx, const float *restrict zh,
                                   float *restrict a, const float *restrict hp,
                                   float *restrict hout, intptr_t H, int live)
{
    for (intptr_t j = 0; j < H; j++) {
        float r = nms_sigf(zx[j] + zh[j]);
        float u = nms_sigf(zx[H + j] + zh[H + j]);
        float n = nms_tanhf(zx[2 * H + j] + r * zh[2 * H + j]);
        a[j] = r;
        a[H + j] = u;
        a[2 * H + j] = n;
        hout[j] = (1.0f - u) * n + u * hp[j];
    }
    if (!live)
        memcpy(hout, hp, H * sizeof(float));
}

static inline void nms_gru_row_bwd(const float *restrict a, const float *restrict zh,
                                   const float *restrict hp, const float *restrict dhs,
                                   float *restrict dh, float *restrict dzx,
                                   float *restrict dzh, intptr_t H)
{
    for (intptr_t j = 0; j < H; j++) {
        float dhv = dh[j] + dhs[j];
        float r = a[j], u = a[H + j], n = a[2 * H + j];
        float dan = dhv * (1.0f - u) * (1.0f - n * n);
        float dar = dan * zh[2 * H + j] * r * (1.0f - r);
        float dau = dhv * (hp[j] - n) * u * (1.0f - u);
        dzx[j] = dar;
        dzx[H + j] = dau;
        dzx[2 * H + j] = dan;
        dzh[j] = dar;
        dzh[H + j] = dau;
        dzh[2 * H + j] = dan * r;
        dh[j] = dhv * u;
    }
}

#endif
