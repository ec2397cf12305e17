#include "mvrisk/core/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvrisk::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

int g_threads = 0;

// Output positions o in [0, n_out) whose input index o*stride + k - pad lies in [0, n_in).
struct Range {
    std::size_t lo, hi;
};

inline Range valid_range(std::size_t n_out, std::size_t n_in, std::size_t k, std::size_t stride, std::size_t pad) {
    std::size_t lo = 0;
    if (pad > k) lo = (pad - k + stride - 1) / stride;
    if (n_in + pad <= k) return {0, 0};
    std::size_t hi = (n_in - 1 + pad - k) / stride + 1;
    hi = std::min(hi, n_out);
    if (lo > hi) lo = hi;
    return {lo, hi};
}

}  // namespace

void set_num_threads(int n) {
    g_threads = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

namespace omp {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    const bool par = m * n * k >= kParallelWork && m > 1;
    const long mm = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (par)
    for (long il = 0; il < mm; ++il) {
        const auto i = static_cast<std::size_t>(il);
        T* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, T{0});
        if (!trans_b) {
            for (std::size_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * m + i] : a[i * k + p];
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        } else if (!trans_a) {
            const T* arow = a + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T sum = 0;
                for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
                crow[j] += sum;
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                T sum = 0;
                for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[j * k + p];
                crow[j] += sum;
            }
        }
    }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* w, const T* bias, T* out) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
    const std::size_t kk = g.kernel;
    const bool par = g.out_channels * ho * wo * cig * kk * kk >= kParallelWork;
    const long nco = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static) if (par)
    for (long col = 0; col < nco; ++col) {
        const auto co = static_cast<std::size_t>(col);
        const std::size_t grp = co / cog;
        T* o = out + co * ho * wo;
        std::fill(o, o + ho * wo, bias ? bias[co] : T{0});
        for (std::size_t cl = 0; cl < cig; ++cl) {
            const T* src = in + (grp * cig + cl) * g.height * g.width;
            for (std::size_t ky = 0; ky < kk; ++ky) {
                const Range ry = valid_range(ho, g.height, ky, g.stride, g.pad);
                for (std::size_t kx = 0; kx < kk; ++kx) {
                    const Range rx = valid_range(wo, g.width, kx, g.stride, g.pad);
                    const T wv = w[((co * cig + cl) * kk + ky) * kk + kx];
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        const T* srow = src + (oy * g.stride + ky - g.pad) * g.width;
                        T* orow = o + oy * wo;
                        if (g.stride == 1) {
                            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * srow[ox + kx - g.pad];
                        } else {
                            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                                orow[ox] += wv * srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* gout, const T* w, T* gin) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
    const std::size_t kk = g.kernel;
    const bool par = g.out_channels * ho * wo * cig * kk * kk >= kParallelWork;
    const long nci = static_cast<long>(g.in_channels);
#pragma omp parallel for schedule(static) if (par)
    for (long cil = 0; cil < nci; ++cil) {
        const auto ci = static_cast<std::size_t>(cil);
        const std::size_t grp = ci / cig, cl = ci % cig;
        T* dst = gin + ci * g.height * g.width;
        for (std::size_t col = 0; col < cog; ++col) {
            const std::size_t co = grp * cog + col;
            const T* go = gout + co * ho * wo;
            for (std::size_t ky = 0; ky < kk; ++ky) {
                const Range ry = valid_range(ho, g.height, ky, g.stride, g.pad);
                for (std::size_t kx = 0; kx < kk; ++kx) {
                    const Range rx = valid_range(wo, g.width, kx, g.stride, g.pad);
                    const T wv = w[((co * cig + cl) * kk + ky) * kk + kx];
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        T* drow = dst + (oy * g.stride + ky - g.pad) * g.width;
                        const T* grow = go + oy * wo;
                        for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                            drow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* gout, const T* in, T* gw, T* gb) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
    const std::size_t kk = g.kernel;
    const bool par = g.out_channels * ho * wo * cig * kk * kk >= kParallelWork;
    const long nco = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static) if (par)
    for (long col = 0; col < nco; ++col) {
        const auto co = static_cast<std::size_t>(col);
        const std::size_t grp = co / cog;
        const T* go = gout + co * ho * wo;
        if (gb) {
            T s = 0;
            for (std::size_t i = 0; i < ho * wo; ++i) s += go[i];
            gb[co] += s;
        }
        for (std::size_t cl = 0; cl < cig; ++cl) {
            const T* src = in + (grp * cig + cl) * g.height * g.width;
            for (std::size_t ky = 0; ky < kk; ++ky) {
                const Range ry = valid_range(ho, g.height, ky, g.stride, g.pad);
                for (std::size_t kx = 0; kx < kk; ++kx) {
                    const Range rx = valid_range(wo, g.width, kx, g.stride, g.pad);
                    T sum = 0;
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        const T* srow = src + (oy * g.stride + ky - g.pad) * g.width;
                        const T* grow = go + oy * wo;
                        for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                            sum += grow[ox] * srow[ox * g.stride + kx - g.pad];
                    }
                    gw[((co * cig + cl) * kk + ky) * kk + kx] += sum;
                }
            }
        }
    }
}

#define MVRISK_INSTANTIATE(T)                                                                                  \
    template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
    template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);                 \
    template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);                    \
    template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);

MVRISK_INSTANTIATE(float)
MVRISK_INSTANTIATE(double)
#undef MVRISK_INSTANTIATE

}  // namespace omp
}  // namespace mvrisk::kernels
