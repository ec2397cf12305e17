#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mvrisk/core/autograd.hpp"
#include "mvrisk/core/rng.hpp"
#include "mvrisk/imageprep/imageprep.hpp"

namespace testutil {

using mvrisk::Rng;
using mvrisk::Shape;
using mvrisk::Tensor;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data) v = static_cast<T>(u(rng));
    return t;
}

inline mvrisk::imageprep::ViewImage random_image(std::size_t h, std::size_t w, Rng& rng) {
    mvrisk::imageprep::ViewImage img(h, w);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

// Direct nested-loop convolution: out[co,y,x] = b[co] + sum w[co,ci,ky,kx] * in[g*cig+ci, y*s+ky-p, x*s+kx-p].
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>* b, std::size_t stride, std::size_t pad,
                      std::size_t groups) {
    const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    const std::size_t cig = cin / groups, cog = cout / groups;
    const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor<T> out({cout, ho, wo});
    for (std::size_t co = 0; co < cout; ++co) {
        const std::size_t g = co / cog;
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x) {
                long double acc = b ? (*b)[co] : 0;
                for (std::size_t ci = 0; ci < cig; ++ci)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                            const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                            acc += static_cast<long double>(w.data[((co * cig + ci) * k + ky) * k + kx]) *
                                   in.at(g * cig + ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                        }
                out.at(co, y, x) = static_cast<T>(acc);
            }
    }
    return out;
}

// Central-difference check of d(sum(f(x) * probe))/dx for every input entry.
// Returns the largest relative error.
inline double check_grad(const std::function<mvrisk::ag::Var<double>(const std::vector<mvrisk::ag::Var<double>>&)>& f,
                         std::vector<Tensor<double>> inputs, std::uint64_t seed = 3, double h = 1e-6) {
    using namespace mvrisk;
    Rng rng(seed);
    std::vector<ag::Var<double>> vars;
    for (auto& t : inputs) vars.push_back(ag::parameter(t));
    auto out = f(vars);
    auto probe = random_tensor<double>(out.shape(), rng);
    auto loss = ag::sum(ag::mul(out, ag::constant(probe)));
    loss.backward();
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
            auto eval = [&](double delta) {
                std::vector<ag::Var<double>> vs;
                for (std::size_t q = 0; q < inputs.size(); ++q) {
                    auto t = inputs[q];
                    if (q == i) t.data[j] += delta;
                    vs.push_back(ag::constant(t));
                }
                return ag::sum(ag::mul(f(vs), ag::constant(probe))).item();
            };
            const double num = (eval(h) - eval(-h)) / (2 * h);
            const double ana = vars[i].grad()[j];
            const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace testutil
