#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mvrisk/heads/heads.hpp"

using namespace mvrisk;
using namespace mvrisk::heads;
using testutil::random_tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

// Plain row-major forward pass built from the parameter tensors by name.
struct Oracle {
    const ParamStore<double>& store;

    const Tensor<double>& p(const std::string& path) const { return store.get(path).value(); }

    Mat linear(const Mat& x, const std::string& prefix) const {
        const auto& w = p(prefix + ".weight");
        const auto& b = p(prefix + ".bias");
        Mat y(x.size(), std::vector<double>(w.dim(0)));
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t o = 0; o < w.dim(0); ++o) {
                double s = b[o];
                for (std::size_t j = 0; j < w.dim(1); ++j) s += w.at(o, j) * x[i][j];
                y[i][o] = s;
            }
        return y;
    }

    Mat layer_norm(const Mat& x, const std::string& prefix) const {
        const auto& g = p(prefix + ".gamma");
        const auto& b = p(prefix + ".beta");
        Mat y = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double n = static_cast<double>(x[i].size());
            double mean = 0.0, var = 0.0;
            for (double v : x[i]) mean += v / n;
            for (double v : x[i]) var += (v - mean) * (v - mean) / n;
            for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g[j] + b[j];
        }
        return y;
    }

    static Mat gelu(Mat x) {
        for (auto& r : x)
            for (auto& v : r) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        return x;
    }

    static Mat add(Mat a, const Mat& b) {
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
        return a;
    }

    Mat self_attention(const Mat& x, const std::string& prefix, std::size_t heads) const {
        auto q = linear(x, prefix + ".q"), k = linear(x, prefix + ".k"), v = linear(x, prefix + ".v");
        const std::size_t n = x.size(), d = q[0].size(), dh = d / heads;
        Mat out(n, std::vector<double>(d, 0.0));
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> s(n);
                double mx = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
                    s[j] = dot / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) out[i][c] += s[j] / z * v[j][c];
            }
        return linear(out, prefix + ".o");
    }

    Mat block(const Mat& x, const std::string& prefix, std::size_t heads) const {
        auto h = add(x, self_attention(layer_norm(x, prefix + ".ln1"), prefix + ".attn", heads));
        return add(h, linear(gelu(linear(layer_norm(h, prefix + ".ln2"), prefix + ".ffn.fc1")), prefix + ".ffn.fc2"));
    }

    std::array<double, 2> gate(const std::vector<double>& l, const std::vector<double>& r) const {
        auto score = [&](const std::vector<double>& a, const std::vector<double>& b) {
            std::vector<double> in = a;
            in.insert(in.end(), b.begin(), b.end());
            for (std::size_t i = 0; i < a.size(); ++i) in.push_back(std::abs(a[i] - b[i]));
            return linear(gelu(linear({in}, "bilateral.gate.fc1")), "bilateral.gate.fc2")[0][0];
        };
        const double sl = score(l, r), sr = score(r, l);
        const double m = std::max(sl, sr);
        const double el = std::exp(sl - m), er = std::exp(sr - m);
        return {el / (el + er), er / (el + er)};
    }

    // Returns the logit and the composed vector z.
    std::pair<double, std::vector<double>> bilateral(const std::vector<double>& el, const std::vector<double>& er,
                                                     std::size_t layers, std::size_t heads) const {
        auto l = linear({el}, "bilateral.input_proj")[0];
        auto r = linear({er}, "bilateral.input_proj")[0];
        const auto& cls = p("bilateral.cls");
        Mat tokens{std::vector<double>(cls.data.begin(), cls.data.end()), l, r};
        for (std::size_t i = 0; i < layers; ++i) tokens = block(tokens, "bilateral.block" + std::to_string(i), heads);
        auto a = gate(l, r);
        std::vector<double> z = tokens[0];
        for (std::size_t i = 0; i < l.size(); ++i) z.push_back(a[0] * l[i] + a[1] * r[i]);
        for (std::size_t i = 0; i < l.size(); ++i) z.push_back(std::abs(l[i] - r[i]));
        for (std::size_t i = 0; i < l.size(); ++i) z.push_back(l[i] * r[i]);
        auto h = gelu(linear(layer_norm({z}, "bilateral.head.norm"), "bilateral.head.fc1"));
        return {linear(h, "bilateral.head.fc2")[0][0], z};
    }
};

void randomize(ParamStore<double>& store, Rng& rng, double scale = 0.5) {
    for (const auto& e : store.entries()) {
        ag::Var<double> v = e.var;
        v.mutable_value() = random_tensor<double>(v.shape(), rng, -scale, scale);
    }
}

std::vector<double> to_vec(const Tensor<double>& t) { return {t.data.begin(), t.data.end()}; }

BilateralMixerConfig small_mixer(std::size_t embed) {
    BilateralMixerConfig cfg;
    cfg.embed_dim = embed;
    cfg.mixer_dim = 8;
    cfg.num_heads = 2;
    cfg.gate_hidden = 5;
    cfg.head_hidden = 6;
    cfg.num_layers = 2;
    return cfg;
}

}  // namespace

TEST_CASE("breast classifier") {
    Rng rng(1);
    ParamStore<double> store;
    BreastHeadConfig cfg;
    cfg.hidden = 3;
    BreastClassifier<double> head(4, cfg, store, rng);
    auto e = ag::constant(random_tensor<double>({4}, rng));
    SUBCASE("zero network returns the final bias") {
        for (const auto& en : store.entries()) {
            ag::Var<double> v = en.var;
            for (auto& x : v.mutable_value().data) x = 0.0;
        }
        ag::Var<double> b = store.get("breast_head.fc2.bias");
        b.mutable_value()[0] = 0.731;
        CHECK(head.logit(e, false, nullptr).item() == doctest::Approx(0.731));
    }
    SUBCASE("evaluation is deterministic and matches a layer-by-layer pass") {
        randomize(store, rng);
        const double a = head.logit(e, false, nullptr).item();
        CHECK(head.logit(e, false, nullptr).item() == a);
        Oracle o{store};
        auto h = Oracle::gelu(o.linear(o.layer_norm({to_vec(e.value())}, "breast_head.norm"), "breast_head.fc1"));
        CHECK(a == doctest::Approx(o.linear(h, "breast_head.fc2")[0][0]));
    }
    SUBCASE("train-mode dropout needs a random source") {
        CHECK_THROWS_AS(head.logit(e, true, nullptr), InvalidParameter);
    }
    SUBCASE("linear probe") {
        ParamStore<double> s2;
        BreastHeadConfig lin;
        lin.hidden = 0;
        BreastClassifier<double> probe(4, lin, s2, rng);
        CHECK(s2.contains("breast_head.fc.weight"));
        CHECK(probe.embed_dim() == 4);
    }
    CHECK_THROWS_AS(head.logit(ag::constant(Tensor<double>({5})), false, nullptr), ShapeMismatch);
}

TEST_CASE("max aggregation") {
    auto a = max_aggregate(0.2, 0.7);
    CHECK(a.probability == 0.7);
    CHECK(a.side == Laterality::Right);
    CHECK_FALSE(a.tie);
    auto t = max_aggregate(0.5, 0.5);
    CHECK(t.probability == 0.5);
    CHECK(t.tie);
    CHECK(max_aggregate(0.3, 1e-9).probability == 0.3);
    CHECK_THROWS_AS(max_aggregate(0.0, 0.5), InvalidParameter);
    CHECK_THROWS_AS(max_aggregate(0.5, 1.0), InvalidParameter);
}

TEST_CASE("asymmetry gate") {
    Rng rng(2);
    ParamStore<double> store;
    AsymmetryScorer<double> scorer(store, "bilateral.gate", "bilateral", 2, 3, GateMode::SharedScorer, rng);
    randomize(store, rng, 1.0);
    auto l = ag::constant(random_tensor<double>({1, 2}, rng));
    auto r = ag::constant(random_tensor<double>({1, 2}, rng));
    SUBCASE("equal inputs give equal weights") {
        auto a = asymmetry_gate(l, l, scorer).value();
        CHECK(a[0] == doctest::Approx(0.5));
        CHECK(a[1] == doctest::Approx(0.5));
    }
    SUBCASE("swapping inputs swaps the weights exactly") {
        auto a = asymmetry_gate(l, r, scorer).value();
        auto b = asymmetry_gate(r, l, scorer).value();
        CHECK(a[0] == b[1]);
        CHECK(a[1] == b[0]);
        CHECK(a[0] + a[1] == doctest::Approx(1.0));
    }
    SUBCASE("two-dimensional case against direct evaluation") {
        auto a = asymmetry_gate(l, r, scorer).value();
        Oracle o{store};
        auto want = o.gate(to_vec(l.value()), to_vec(r.value()));
        CHECK(a[0] == doctest::Approx(want[0]));
        CHECK(a[1] == doctest::Approx(want[1]));
    }
}

TEST_CASE("bilateral mixer") {
    Rng rng(3);
    ParamStore<double> store;
    auto cfg = small_mixer(6);
    BilateralMixer<double> mixer(cfg, store, rng);
    randomize(store, rng);
    Oracle o{store};
    SUBCASE("laterality swap leaves the logit unchanged") {
        for (int i = 0; i < 20; ++i) {
            auto l = ag::constant(random_tensor<double>({6}, rng));
            auto r = ag::constant(random_tensor<double>({6}, rng));
            CHECK(std::abs(mixer.logit(l, r, false, nullptr).item() - mixer.logit(r, l, false, nullptr).item()) < 1e-12);
        }
    }
    SUBCASE("identical breasts: zero difference block and oracle logit") {
        auto e = random_tensor<double>({6}, rng);
        auto t = mixer.forward(ag::constant(e), ag::constant(e), false, nullptr);
        for (double v : t.abs_diff.value().data) CHECK(v == 0.0);
        auto [logit, z] = o.bilateral(to_vec(e), to_vec(e), cfg.num_layers, cfg.num_heads);
        CHECK(t.logit.item() == doctest::Approx(logit));
        for (std::size_t i = 0; i < z.size(); ++i) CHECK(t.z.value()[i] == doctest::Approx(z[i]));
    }
    SUBCASE("zero embeddings") {
        Tensor<double> zero({6});
        auto t = mixer.forward(ag::constant(zero), ag::constant(zero), false, nullptr);
        CHECK(t.logit.item() == doctest::Approx(o.bilateral(to_vec(zero), to_vec(zero), 2, 2).first));
    }
    SUBCASE("distinct breasts against the oracle") {
        auto l = random_tensor<double>({6}, rng), r = random_tensor<double>({6}, rng);
        auto t = mixer.forward(ag::constant(l), ag::constant(r), false, nullptr);
        CHECK(t.logit.item() == doctest::Approx(o.bilateral(to_vec(l), to_vec(r), 2, 2).first));
        CHECK(t.z.dim(1) == 4 * cfg.mixer_dim);
    }
    CHECK_THROWS_AS(mixer.logit(ag::constant(Tensor<double>({5})), ag::constant(Tensor<double>({6})), false, nullptr),
                    ShapeMismatch);
}

TEST_CASE("bilateral mixer laterality invariance in single precision") {
    Rng rng(4);
    ParamStore<float> store;
    BilateralMixerConfig cfg;
    cfg.embed_dim = 128;
    BilateralMixer<float> mixer(cfg, store, rng);
    for (int i = 0; i < 50; ++i) {
        auto l = ag::constant(random_tensor<float>({128}, rng));
        auto r = ag::constant(random_tensor<float>({128}, rng));
        CHECK(std::abs(mixer.logit(l, r, false, nullptr).item() - mixer.logit(r, l, false, nullptr).item()) < 1e-5f);
    }
}

TEST_CASE("mixer configuration checks") {
    BilateralMixerConfig cfg;
    cfg.mixer_dim = 10;
    cfg.num_heads = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
