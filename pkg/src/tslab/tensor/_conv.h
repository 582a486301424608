/* Direct stride-1 "valid" correlation kernels over 5-D NCTHW arrays.
 *
 * conv_fwd:  out[n,f,t,y,x] = sum_{c,a,i,j} w[f,c,a,i,j] * xp[n,c,t+a,y+i,x+j]
 * conv_gw:   gw[f,c,a,i,j] += sum_{n,t,y,x} g[n,f,t,y,x] * xp[n,c,t+a,y+i,x+j]
 *
 * 2-D convolution is the T=1, kt=1 case. All arrays are C-contiguous doubles.
 * Fast paths block 4 output channels x 8 output columns in registers; any
 * remainder falls through to a plain scalar loop.
 */
#ifndef TSLAB_CONV_H
#define TSLAB_CONV_H

#include <stddef.h>
#include <string.h>

typedef double v4d __attribute__((vector_size(32)));

static inline v4d ld4(const double *p) { v4d v; memcpy(&v, p, sizeof v); return v; }
static inline void st4(double *p, v4d v) { memcpy(p, &v, sizeof v); }
static inline v4d bc4(double s) { v4d v = {s, s, s, s}; return v; }
static inline double hsum4(v4d v) { return v[0] + v[1] + v[2] + v[3]; }

static void conv_fwd(const double *xp, const double *w, double *out,
                     ptrdiff_t N, ptrdiff_t C, ptrdiff_t Tp, ptrdiff_t Hp, ptrdiff_t Wp,
                     ptrdiff_t F, ptrdiff_t kt, ptrdiff_t kh, ptrdiff_t kw)
{
    const ptrdiff_t T = Tp - kt + 1, H = Hp - kh + 1, W = Wp - kw + 1;
    const ptrdiff_t xs_c = Tp * Hp * Wp, xs_n = C * xs_c;
    const ptrdiff_t os_f = T * H * W, os_n = F * os_f;
    const ptrdiff_t ws_c = kt * kh * kw, ws_f = C * ws_c;
    const ptrdiff_t F4 = F - F % 4, W8 = W - W % 8;

    for (ptrdiff_t n = 0; n < N; ++n) {
        const double *xn = xp + n * xs_n;
        double *on = out + n * os_n;
        for (ptrdiff_t t = 0; t < T; ++t)
        for (ptrdiff_t y = 0; y < H; ++y) {
            const ptrdiff_t orow = (t * H + y) * W;
            ptrdiff_t f = 0;
            for (; f < F4; f += 4) {
                const double *w0 = w + f * ws_f;
                ptrdiff_t x0 = 0;
                for (; x0 < W8; x0 += 8) {
                    v4d a00 = bc4(0), a01 = bc4(0), a10 = bc4(0), a11 = bc4(0);
                    v4d a20 = bc4(0), a21 = bc4(0), a30 = bc4(0), a31 = bc4(0);
                    for (ptrdiff_t c = 0; c < C; ++c)
                    for (ptrdiff_t a = 0; a < kt; ++a)
                    for (ptrdiff_t i = 0; i < kh; ++i) {
                        const double *xr = xn + c * xs_c + ((t + a) * Hp + y + i) * Wp + x0;
                        const double *wr = w0 + c * ws_c + (a * kh + i) * kw;
                        for (ptrdiff_t j = 0; j < kw; ++j) {
                            const v4d v0 = ld4(xr + j), v1 = ld4(xr + j + 4);
                            v4d s;
                            s = bc4(wr[j]);              a00 += s * v0; a01 += s * v1;
                            s = bc4(wr[j + ws_f]);       a10 += s * v0; a11 += s * v1;
                            s = bc4(wr[j + 2 * ws_f]);   a20 += s * v0; a21 += s * v1;
                            s = bc4(wr[j + 3 * ws_f]);   a30 += s * v0; a31 += s * v1;
                        }
                    }
                    double *o = on + f * os_f + orow + x0;
                    st4(o, a00);              st4(o + 4, a01);
                    st4(o + os_f, a10);       st4(o + os_f + 4, a11);
                    st4(o + 2 * os_f, a20);   st4(o + 2 * os_f + 4, a21);
                    st4(o + 3 * os_f, a30);   st4(o + 3 * os_f + 4, a31);
                }
                for (; x0 < W; ++x0)
                    for (ptrdiff_t ff = f; ff < f + 4; ++ff) {
                        double acc = 0.0;
                        for (ptrdiff_t c = 0; c < C; ++c)
                        for (ptrdiff_t a = 0; a < kt; ++a)
                        for (ptrdiff_t i = 0; i < kh; ++i) {
                            const double *xr = xn + c * xs_c + ((t + a) * Hp + y + i) * Wp + x0;
                            const double *wr = w + ff * ws_f + c * ws_c + (a * kh + i) * kw;
                            for (ptrdiff_t j = 0; j < kw; ++j) acc += wr[j] * xr[j];
                        }
                        on[ff * os_f + orow + x0] = acc;
                    }
            }
            for (; f < F; ++f) {
                double *o = on + f * os_f + orow;
                for (ptrdiff_t x = 0; x < W; ++x) o[x] = 0.0;
                for (ptrdiff_t c = 0; c < C; ++c)
                for (ptrdiff_t a = 0; a < kt; ++a)
                for (ptrdiff_t i = 0; i < kh; ++i) {
                    const double *xr = xn + c * xs_c + ((t + a) * Hp + y + i) * Wp;
                    const double *wr = w + f * ws_f + c * ws_c + (a * kh + i) * kw;
                    for (ptrdiff_t j = 0; j < kw; ++j) {
                        const double s = wr[j];
                        for (ptrdiff_t x = 0; x < W; ++x) o[x] += s * xr[x + j];
                    }
                }
            }
        }
    }
}

static void conv_gw(const double *xp, const double *g, double *gw,
                    ptrdiff_t N, ptrdiff_t C, ptrdiff_t Tp, ptrdiff_t Hp, ptrdiff_t Wp,
                    ptrdiff_t F, ptrdiff_t kt, ptrdiff_t kh, ptrdiff_t kw)
{
    const ptrdiff_t T = Tp - kt + 1, H = Hp - kh + 1, W = Wp - kw + 1;
    const ptrdiff_t xs_c = Tp * Hp * Wp, xs_n = C * xs_c;
    const ptrdiff_t gs_f = T * H * W, gs_n = F * gs_f;
    const ptrdiff_t ws_c = kt * kh * kw, ws_f = C * ws_c;
    const ptrdiff_t F4 = F - F % 4, W4 = W - W % 4;

    for (ptrdiff_t n = 0; n < N; ++n)
    for (ptrdiff_t t = 0; t < T; ++t)
    for (ptrdiff_t y = 0; y < H; ++y) {
        const double *gn = g + n * gs_n + (t * H + y) * W;
        for (ptrdiff_t c = 0; c < C; ++c)
        for (ptrdiff_t a = 0; a < kt; ++a)
        for (ptrdiff_t i = 0; i < kh; ++i) {
            const double *xr = xp + n * xs_n + c * xs_c + ((t + a) * Hp + y + i) * Wp;
            const ptrdiff_t wo = c * ws_c + (a * kh + i) * kw;
            ptrdiff_t f = 0;
            if (kw == 3) {
                for (; f < F4; f += 4) {
                    const double *g0 = gn + f * gs_f, *g1 = g0 + gs_f, *g2 = g1 + gs_f, *g3 = g2 + gs_f;
                    v4d s00 = bc4(0), s01 = bc4(0), s02 = bc4(0);
                    v4d s10 = bc4(0), s11 = bc4(0), s12 = bc4(0);
                    v4d s20 = bc4(0), s21 = bc4(0), s22 = bc4(0);
                    v4d s30 = bc4(0), s31 = bc4(0), s32 = bc4(0);
                    ptrdiff_t x = 0;
                    for (; x < W4; x += 4) {
                        const v4d x0 = ld4(xr + x), x1 = ld4(xr + x + 1), x2 = ld4(xr + x + 2);
                        v4d q;
                        q = ld4(g0 + x); s00 += q * x0; s01 += q * x1; s02 += q * x2;
                        q = ld4(g1 + x); s10 += q * x0; s11 += q * x1; s12 += q * x2;
                        q = ld4(g2 + x); s20 += q * x0; s21 += q * x1; s22 += q * x2;
                        q = ld4(g3 + x); s30 += q * x0; s31 += q * x1; s32 += q * x2;
                    }
                    double r[4][3] = {
                        {hsum4(s00), hsum4(s01), hsum4(s02)},
                        {hsum4(s10), hsum4(s11), hsum4(s12)},
                        {hsum4(s20), hsum4(s21), hsum4(s22)},
                        {hsum4(s30), hsum4(s31), hsum4(s32)}};
                    const double *gg[4] = {g0, g1, g2, g3};
                    for (; x < W; ++x)
                        for (int ff = 0; ff < 4; ++ff)
                            for (int j = 0; j < 3; ++j) r[ff][j] += gg[ff][x] * xr[x + j];
                    for (int ff = 0; ff < 4; ++ff) {
                        double *wd = gw + (f + ff) * ws_f + wo;
                        wd[0] += r[ff][0]; wd[1] += r[ff][1]; wd[2] += r[ff][2];
                    }
                }
            }
            for (; f < F; ++f) {
                const double *gr = gn + f * gs_f;
                double *wd = gw + f * ws_f + wo;
                for (ptrdiff_t j = 0; j < kw; ++j) {
                    double acc = 0.0;
                    for (ptrdiff_t x = 0; x < W; ++x) acc += gr[x] * xr[x + j];
                    wd[j] += acc;
                }
            }
        }
    }
}

#endif
