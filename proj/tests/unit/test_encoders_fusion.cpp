#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mvrisk/fusion/fusion.hpp"

using namespace mvrisk;
using namespace mvrisk::encoders;
using namespace mvrisk::fusion;
using testutil::random_tensor;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// x[C,H,W] gated per channel by sigmoid(We relu(Wr mean(x) + br) + be).
Tensor<double> se_oracle(const Tensor<double>& x, const SeWeights<double>& w) {
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> pooled(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i) pooled[ch] += x.data[ch * hw + i];
        pooled[ch] /= static_cast<double>(hw);
    }
    const auto& wr = w.reduce.weight.value();
    const auto& br = w.reduce.bias.value();
    const auto& we = w.expand.weight.value();
    const auto& be = w.expand.bias.value();
    std::vector<double> hidden(wr.dim(0));
    for (std::size_t j = 0; j < hidden.size(); ++j) {
        double s = br[j];
        for (std::size_t ch = 0; ch < c; ++ch) s += wr.at(j, ch) * pooled[ch];
        hidden[j] = std::max(0.0, s);
    }
    Tensor<double> out = x;
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = be[ch];
        for (std::size_t j = 0; j < hidden.size(); ++j) s += we.at(ch, j) * hidden[j];
        const double g = sigmoid(s);
        for (std::size_t i = 0; i < hw; ++i) out.data[ch * hw + i] *= g;
    }
    return out;
}

Tensor<double> relu(Tensor<double> t) {
    for (auto& v : t.data) v = std::max(0.0, v);
    return t;
}

void fill(ag::Var<double> v, double value) {
    for (auto& x : v.mutable_value().data) x = value;
}

void set(ag::Var<double> v, const Tensor<double>& t) { v.mutable_value() = t; }

EncoderConfig small_encoder(std::size_t res, std::size_t patch) {
    EncoderConfig cfg;
    cfg.height = cfg.width = res;
    cfg.global.patch_size = patch;
    cfg.global.token_dim = 8;
    cfg.global.num_heads = 2;
    cfg.local.widths = {4, 8};
    cfg.local.cardinality = 2;
    cfg.local.se_reduction = 2;
    return cfg;
}

}  // namespace

TEST_CASE("global encoder") {
    auto cfg = small_encoder(32, 16);
    SUBCASE("zero image with zero-bias embedding gives zero patch tokens") {
        cfg.global.zero_bias = true;
        ParamStore<double> store;
        GlobalEncoder<double> enc(cfg, store);
        auto e = enc.patch_embed(Tensor<double>({3, 32, 32}));
        for (double v : e.value().data) CHECK(v == 0.0);
    }
    SUBCASE("shape, determinism, frozen group and patch projection") {
        ParamStore<double> store;
        GlobalEncoder<double> enc(cfg, store);
        CHECK(store.group_frozen("global"));
        Rng rng(1);
        auto view = random_tensor<double>({3, 32, 32}, rng, 0.0, 1.0);
        auto a = enc.encode(view);
        auto b = enc.encode(view);
        CHECK(a.values.shape() == Shape{8, 2, 2});
        CHECK(a.values.value().data == b.values.value().data);
        CHECK_FALSE(a.values.requires_grad());

        // token for patch (row 1, col 0): W * flatten(view[:, 16:32, 0:16]) + b
        const auto& w = store.get("global.patch_embed.weight").value();
        const auto& bias = store.get("global.patch_embed.bias").value();
        auto tokens = enc.patch_embed(view).value();
        for (std::size_t d = 0; d < 8; ++d) {
            double s = bias[d];
            std::size_t idx = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < 16; ++y)
                    for (std::size_t x = 0; x < 16; ++x) s += w.at(d, idx++) * view.at(c, 16 + y, x);
            CHECK(tokens.at(2, d) == doctest::Approx(s));
        }
    }
    SUBCASE("seed fixes the stand-in weights") {
        ParamStore<double> s1, s2;
        GlobalEncoder<double> e1(cfg, s1), e2(cfg, s2);
        CHECK(s1.hash() == s2.hash());
    }
    SUBCASE("resolution must be divisible by the patch size") {
        auto bad = small_encoder(30, 16);
        ParamStore<double> store;
        CHECK_THROWS_AS(GlobalEncoder<double>(bad, store), ConfigError);
    }
}

TEST_CASE("squeeze-excitation gate") {
    ParamStore<double> store;
    Rng rng(2);
    SeWeights<double> se(store, "se", "local", 4, 2, rng);
    auto x = random_tensor<double>({4, 2, 2}, rng);
    FeatureGrid<double> g{ag::constant(x), Provenance::Local};
    SUBCASE("saturated open gate is the identity") {
        fill(se.expand.weight, 0.0);
        fill(se.expand.bias, 50.0);
        CHECK(se_gate(g, se).values.value().data == x.data);
    }
    SUBCASE("saturated closed gate zeroes the map") {
        fill(se.expand.weight, 0.0);
        fill(se.expand.bias, -50.0);
        const auto out = se_gate(g, se).values.value();
        for (double v : out.data) CHECK(std::abs(v) < 1e-6);
    }
    SUBCASE("random weights against pool -> MLP -> sigmoid -> scale") {
        auto want = se_oracle(x, se);
        auto got = se_gate(g, se).values.value();
        for (std::size_t i = 0; i < want.numel(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]));
    }
}

TEST_CASE("local encoder") {
    SUBCASE("view-specific weights are separate tensors") {
        auto cfg = small_encoder(16, 8);
        ParamStore<double> store;
        Rng rng(3);
        LocalEncoder<double> enc(cfg, store, rng);
        const auto& cc = enc.stages(ViewPosition::CC);
        const auto& mlo = enc.stages(ViewPosition::MLO);
        for (std::size_t i = 0; i < cc.size(); ++i) {
            CHECK(cc[i].down_w.node() != mlo[i].down_w.node());
            CHECK(cc[i].group_w.node() != mlo[i].group_w.node());
        }
        CHECK(store.contains("local.cc.stage0.down.weight"));
        CHECK(store.contains("local.mlo.stage0.down.weight"));
        cfg.view_specific_local = false;
        ParamStore<double> shared;
        LocalEncoder<double> tied(cfg, shared, rng);
        CHECK(tied.stages(ViewPosition::CC)[0].down_w.node() == tied.stages(ViewPosition::MLO)[0].down_w.node());
    }
    SUBCASE("1x1 identity stage without SE is the identity") {
        auto cfg = small_encoder(16, 8);
        cfg.local.stages = {{3, 1, 1, false, false}};
        ParamStore<double> store;
        Rng rng(4);
        LocalEncoder<double> enc(cfg, store, rng);
        Tensor<double> eye({3, 3, 1, 1});
        for (std::size_t i = 0; i < 3; ++i) eye.data[i * 3 + i] = 1.0;
        set(enc.stages(ViewPosition::CC)[0].down_w, eye);
        auto view = random_tensor<double>({3, 16, 16}, rng, 0.0, 1.0);
        CHECK(enc.encode(view, ViewPosition::CC).values.value().data == view.data);
    }
    SUBCASE("two stages against a direct convolution oracle") {
        auto cfg = small_encoder(16, 8);
        ParamStore<double> store;
        Rng rng(5);
        LocalEncoder<double> enc(cfg, store, rng);
        for (const auto& e : store.entries()) {
            ag::Var<double> v = e.var;
            v.mutable_value() = random_tensor<double>(v.shape(), rng, -0.5, 0.5);
        }
        auto view = random_tensor<double>({3, 16, 16}, rng, 0.0, 1.0);
        Tensor<double> x = view;
        for (const auto& st : enc.stages(ViewPosition::MLO)) {
            x = relu(testutil::conv_oracle(x, st.down_w.value(), &st.down_b.value(), 2, 1, 1));
            auto branch = testutil::conv_oracle(x, st.group_w.value(), &st.group_b.value(), 1, 1, st.groups);
            branch = se_oracle(branch, st.se);
            for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] += branch.data[i];
            x = relu(x);
        }
        auto got = enc.encode(view, ViewPosition::MLO).values.value();
        REQUIRE(got.shape == Shape{8, 4, 4});
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(got.data[i] == doctest::Approx(x.data[i]));
    }
}

TEST_CASE("resampling to the fusion grid") {
    Rng rng(6);
    FeatureGrid<double> f{ag::constant(random_tensor<double>({3, 4, 5}, rng)), Provenance::Local};
    CHECK(resample_to_grid(f, {4, 5}).values.value().data == f.values.value().data);
    FeatureGrid<double> c{ag::constant(Tensor<double>({2, 6, 3}, 0.8)), Provenance::Global};
    for (GridSize gs : {GridSize{3, 2}, GridSize{12, 7}, GridSize{4, 4}})
    {
        const auto out = resample_to_grid(c, gs).values.value();
        for (double v : out.data) CHECK(v == doctest::Approx(0.8));
    }
    FeatureGrid<double> q{ag::constant(Tensor<double>({1, 2, 2}, std::vector<double>{1, 2, 3, 4})), Provenance::Local};
    CHECK(resample_to_grid(q, {1, 1}).values.value()[0] == doctest::Approx(2.5));
}

TEST_CASE("1x1 latent projection") {
    ParamStore<double> store;
    Rng rng(7);
    Conv1x1<double> p(store, "p", "fusion", 3, 3, rng);
    auto x = random_tensor<double>({3, 2, 2}, rng);
    FeatureGrid<double> f{ag::constant(x), Provenance::Local};
    SUBCASE("identity") {
        Tensor<double> eye({3, 3});
        for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
        set(p.weight, eye);
        CHECK(project_latent(f, p).values.value().data == x.data);
    }
    SUBCASE("zero weights give the bias") {
        fill(p.weight, 0.0);
        set(p.bias, Tensor<double>({3}, std::vector<double>{0.1, -0.2, 0.3}));
        auto out = project_latent(f, p).values.value();
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 4; ++i) CHECK(out.data[c * 4 + i] == doctest::Approx(p.bias.value()[c]));
    }
    SUBCASE("random weights against a per-position product") {
        set(p.bias, random_tensor<double>({3}, rng));
        auto out = project_latent(f, p).values.value();
        for (std::size_t o = 0; o < 3; ++o)
            for (std::size_t y = 0; y < 2; ++y)
                for (std::size_t xx = 0; xx < 2; ++xx) {
                    double s = p.bias.value()[o];
                    for (std::size_t c = 0; c < 3; ++c) s += p.weight.value().at(o, c) * x.at(c, y, xx);
                    CHECK(out.at(o, y, xx) == doctest::Approx(s));
                }
    }
}

TEST_CASE("cross attention over constant context values returns that value") {
    ParamStore<double> store;
    Rng rng(8);
    CrossAttentionBlock<double> block(store, "x", "fusion", 4, 2, 8, rng);
    auto q = ag::constant(random_tensor<double>({5, 4}, rng));
    auto ctx = ag::constant(Tensor<double>({6, 4}, 0.3));
    auto res = block.attn(q, ctx);
    for (const auto& w : res.weights)
        for (double v : w.data) CHECK(v == doctest::Approx(1.0 / 6.0));
    // every row of the output is the same projection of the shared value
    const auto& out = res.output.value();
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)));
}

TEST_CASE("bridge mix") {
    ParamStore<double> store;
    Rng rng(9);
    const std::size_t d = 3;
    Conv1x1<double> compress(store, "c", "fusion", 2 * d, d, rng);
    auto lp = random_tensor<double>({d, 2, 2}, rng);
    auto at = random_tensor<double>({d, 2, 2}, rng);
    FeatureGrid<double> l{ag::constant(lp), Provenance::Local}, a{ag::constant(at), Provenance::Fused};
    SUBCASE("selector of the local half") {
        Tensor<double> sel({d, 2 * d});
        for (std::size_t i = 0; i < d; ++i) sel.at(i, i) = 1.0;
        set(compress.weight, sel);
        fill(compress.bias, 0.0);
        CHECK(bridge_mix(l, a, compress).values.value().data == lp.data);
    }
    SUBCASE("zero weights and bias") {
        fill(compress.weight, 0.0);
        fill(compress.bias, 0.0);
        const auto out = bridge_mix(l, a, compress).values.value();
        for (double v : out.data) CHECK(v == 0.0);
    }
    SUBCASE("random weights against concatenate-then-multiply") {
        set(compress.bias, random_tensor<double>({d}, rng));
        auto out = bridge_mix(l, a, compress).values.value();
        for (std::size_t o = 0; o < d; ++o)
            for (std::size_t y = 0; y < 2; ++y)
                for (std::size_t x = 0; x < 2; ++x) {
                    double s = compress.bias.value()[o];
                    for (std::size_t c = 0; c < d; ++c) {
                        s += compress.weight.value().at(o, c) * lp.at(c, y, x);
                        s += compress.weight.value().at(o, d + c) * at.at(c, y, x);
                    }
                    CHECK(out.at(o, y, x) == doctest::Approx(s));
                }
    }
    CHECK_THROWS_AS(bridge_mix(l, FeatureGrid<double>{ag::constant(Tensor<double>({d, 3, 2})), Provenance::Fused},
                               compress),
                    ShapeMismatch);
}

TEST_CASE("breast embedding") {
    FusionConfig cfg;
    cfg.latent_dim = 64;
    CHECK(cfg.embedding_length() == 512);

    FeatureGrid<double> a{ag::constant(Tensor<double>({4, 6, 6}, 0.25)), Provenance::Fused};
    FeatureGrid<double> b{ag::constant(Tensor<double>({4, 6, 6}, -1.5)), Provenance::Fused};
    auto e = breast_embed(a, b, {2, 2}, Laterality::Right);
    REQUIRE(e.size() == 32);
    CHECK(e.laterality == Laterality::Right);
    for (std::size_t i = 0; i < 16; ++i) CHECK(e.values.value()[i] == doctest::Approx(0.25));
    for (std::size_t i = 16; i < 32; ++i) CHECK(e.values.value()[i] == doctest::Approx(-1.5));

    Rng rng(10);
    auto cc = random_tensor<double>({3, 16, 16}, rng);
    auto mlo = random_tensor<double>({3, 16, 16}, rng);
    auto r = breast_embed(FeatureGrid<double>{ag::constant(cc), Provenance::Fused},
                          FeatureGrid<double>{ag::constant(mlo), Provenance::Fused}, {2, 2});
    std::size_t idx = 0;
    for (const auto* src : {&cc, &mlo})
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t by = 0; by < 2; ++by)
                for (std::size_t bx = 0; bx < 2; ++bx) {
                    double s = 0.0;
                    for (std::size_t y = 0; y < 8; ++y)
                        for (std::size_t x = 0; x < 8; ++x) s += src->at(c, by * 8 + y, bx * 8 + x);
                    CHECK(r.values.value()[idx++] == doctest::Approx(s / 64.0));
                }
}

TEST_CASE("bridge mixer output shape") {
    FusionConfig cfg;
    cfg.latent_dim = 8;
    cfg.grid = {4, 4};
    cfg.num_heads = 2;
    ParamStore<double> store;
    Rng rng(11);
    BridgeMixer<double> mixer(cfg, 6, 5, store, rng);
    FeatureGrid<double> g{ag::constant(random_tensor<double>({6, 2, 2}, rng)), Provenance::Global};
    FeatureGrid<double> l{ag::constant(random_tensor<double>({5, 8, 8}, rng)), Provenance::Local};
    auto out = mixer.forward(g, l);
    CHECK(out.values.shape() == Shape{8, 4, 4});
    CHECK(out.provenance == Provenance::Fused);
}
