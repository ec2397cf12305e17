#include "mvrisk/core/kernels.hpp"

namespace mvrisk::kernels::serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T sum = 0;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * m + i] : a[i * k + p];
                const T bv = trans_b ? b[j * k + p] : b[p * n + j];
                sum += av * bv;
            }
            c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
        }
    }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* w, const T* bias, T* out) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
    const long h = static_cast<long>(g.height), wd = static_cast<long>(g.width);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const std::size_t grp = co / cog;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                T sum = bias ? bias[co] : T{0};
                for (std::size_t cl = 0; cl < cig; ++cl) {
                    const std::size_t ci = grp * cig + cl;
                    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                            sum += w[((co * cig + cl) * g.kernel + ky) * g.kernel + kx] *
                                   in[(ci * g.height + static_cast<std::size_t>(iy)) * g.width +
                                      static_cast<std::size_t>(ix)];
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = sum;
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* gout, const T* w, T* gin) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
    const long h = static_cast<long>(g.height), wd = static_cast<long>(g.width);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const std::size_t grp = co / cog;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const T go = gout[(co * ho + oy) * wo + ox];
                for (std::size_t cl = 0; cl < cig; ++cl) {
                    const std::size_t ci = grp * cig + cl;
                    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                            gin[(ci * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)] +=
                                go * w[((co * cig + cl) * g.kernel + ky) * g.kernel + kx];
                        }
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
    const long h = static_cast<long>(g.height), wd = static_cast<long>(g.width);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const std::size_t grp = co / cog;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const T go = gout[(co * ho + oy) * wo + ox];
                if (gb) gb[co] += go;
                for (std::size_t cl = 0; cl < cig; ++cl) {
                    const std::size_t ci = grp * cig + cl;
                    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                            gw[((co * cig + cl) * g.kernel + ky) * g.kernel + kx] +=
                                go * in[(ci * g.height + static_cast<std::size_t>(iy)) * g.width +
                                        static_cast<std::size_t>(ix)];
                        }
                    }
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

}  // namespace mvrisk::kernels::serial
