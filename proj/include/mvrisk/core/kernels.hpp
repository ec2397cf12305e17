#pragma once

// Dense compute kernels behind the autograd ops.
//
// Two implementations of every kernel are kept:
//   kernels::serial  - textbook loop nests, the reference used by tests
//   kernels::omp     - cache-friendly loop order with OpenMP work sharing
//
// The OpenMP kernels assign every output element to exactly one thread and
// accumulate in a fixed order, so their results are bit-identical for any
// thread count. They are not bit-identical to the serial reference (the
// summation order differs) and are compared against it with a tolerance.

#include <cstddef>

namespace mvrisk::kernels {

struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t groups = 1;

    std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t in_per_group() const { return in_channels / groups; }
    std::size_t out_per_group() const { return out_channels / groups; }
};

namespace serial {

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n]; all matrices row-major and dense.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

// out[Cout,Ho,Wo] = conv(in[Cin,H,W], w[Cout,Cin/g,K,K]) + bias; bias may be null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* w, const T* bias, T* out);

// gin += conv^T(gout, w)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* gout, const T* w, T* gin);

// gw += corr(gout, in); gb += sum(gout) when gb is non-null
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* gout, const T* in, T* gw, T* gb);

}  // namespace serial

namespace omp {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* w, const T* bias, T* out);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* gout, const T* w, T* gin);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* gout, const T* in, T* gw, T* gb);

}  // namespace omp

// Thread-count control shared by every OpenMP region in the library.
void set_num_threads(int n);
int num_threads();

}  // namespace mvrisk::kernels
