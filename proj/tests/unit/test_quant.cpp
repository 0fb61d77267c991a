#include <doctest.h>

#include <set>

#include "apprentice/models.hpp"
#include "support/testutil.hpp"

using namespace apprentice;
using testutil::project;
using testutil::rand_projection;
using testutil::rand_tensor;

namespace {

// Brute-force restatement of the ternary rule, kept independent of the
// implementation: threshold 0.7*mean(|w|), sign codes above it, scale =
// mean(|w|) over survivors. Accumulation in float, index order.
template <typename Real>
std::pair<std::vector<std::int8_t>, Real> ternary_oracle(const std::vector<Real>& w) {
    Real total = 0;
    for (std::size_t i = 0; i < w.size(); ++i) total += w[i] < 0 ? -w[i] : w[i];
    const Real delta = Real(0.7) * (total / Real(w.size()));
    std::vector<std::int8_t> codes(w.size(), 0);
    Real surv = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const Real mag = w[i] < 0 ? -w[i] : w[i];
        if (mag > delta) {
            codes[i] = w[i] < 0 ? -1 : 1;
            surv += mag;
            ++count;
        }
    }
    return {codes, count ? surv / Real(count) : Real(0)};
}

float kbit_weight_oracle(float v, int k) {
    const float s = float((1 << (k - 1)) - 1);
    float c = v;
    if (c > 1.0f) c = 1.0f;
    if (c < -1.0f) c = -1.0f;
    return std::round(c * s) / s;
}

float kbit_act_oracle(float v, int k) {
    const float s = float((1 << k) - 1);
    float c = v;
    if (c > 1.0f) c = 1.0f;
    if (c < 0.0f) c = 0.0f;
    return std::round(c * s) / s;
}

} // namespace

TEST_CASE("ternary_quantize hand example") {
    Tensor<float> w({4}, {-0.5f, 0.03f, 0.8f, -0.02f});
    const auto t = ternary_quantize(w);
    CHECK(t.codes == std::vector<std::int8_t>({-1, 0, 1, 0}));
    CHECK(t.scale == doctest::Approx(0.65f));
}

TEST_CASE("ternary_quantize of all zeros is all zeros with zero scale") {
    Tensor<float> w({5});
    const auto t = ternary_quantize(w);
    CHECK(t.scale == 0.0f);
    for (auto c : t.codes) CHECK(c == 0);
}

TEST_CASE("ternary_quantize rejects an empty tensor") {
    Tensor<float> w;
    CHECK_THROWS_AS(ternary_quantize(w), ShapeError);
}

TEST_CASE("ternary_quantize matches the brute-force oracle bitwise on 1000 tensors") {
    Rng rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(64);
        Tensor<float> w({n});
        for (auto& v : w.data) v = float(rng.uniform(-1.5, 1.5));
        const auto got = ternary_quantize(w);
        const auto [codes, scale] = ternary_oracle(w.data);
        REQUIRE(got.codes == codes);
        REQUIRE(got.scale == scale);
    }
}

TEST_CASE("k-bit weight quantizer examples and oracle equivalence") {
    Tensor<float> w({3}, {1.3f, 0.5f, 0.0f});
    const auto q = kbit_quantize_weights(w, 4);
    CHECK(q.data[0] == 1.0f);                      // clipped
    CHECK(q.data[1] == doctest::Approx(4.0f / 7)); // round(3.5) = 4, half away from zero
    CHECK(q.data[2] == 0.0f);

    Rng rng(103);
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = trial % 2 ? 4 : 8;
        Tensor<float> t({1 + rng.uniform_index(32)});
        for (auto& v : t.data) v = float(rng.uniform(-2.0, 2.0));
        const auto got = kbit_quantize_weights(t, k);
        for (std::size_t i = 0; i < t.numel(); ++i)
            REQUIRE(got.data[i] == kbit_weight_oracle(t.data[i], k));
    }
}

TEST_CASE("activation quantizer examples and oracle equivalence") {
    Tensor<float> a({3}, {0.5f, -0.2f, 1.0f});
    const auto q = kbit_quantize_acts(a, 8);
    CHECK(q.data[0] == doctest::Approx(128.0f / 255)); // round(127.5) = 128
    CHECK(q.data[1] == 0.0f);
    CHECK(q.data[2] == 1.0f);

    Rng rng(107);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor<float> t({1 + rng.uniform_index(32)});
        for (auto& v : t.data) v = float(rng.uniform(-0.5, 1.5));
        const auto got = kbit_quantize_acts(t, 8);
        for (std::size_t i = 0; i < t.numel(); ++i)
            REQUIRE(got.data[i] == kbit_act_oracle(t.data[i], 8));
    }
}

TEST_CASE("k-bit quantization is idempotent and error-bounded") {
    Rng rng(109);
    for (int k : {4, 8}) {
        Tensor<float> t({256});
        for (auto& v : t.data) v = float(rng.uniform(-2.0, 2.0));
        const auto q1 = kbit_quantize_weights(t, k);
        const auto q2 = kbit_quantize_weights(q1, k);
        const float s = float((1 << (k - 1)) - 1);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            REQUIRE(q2.data[i] == q1.data[i]); // exact idempotence
            const float clipped = std::clamp(t.data[i], -1.0f, 1.0f);
            REQUIRE(std::abs(q1.data[i] - clipped) <= 0.5f / s + 1e-7f);
        }
    }
}

TEST_CASE("dequantized ternary values take at most three distinct values") {
    Rng rng(113);
    Tensor<float> w({512});
    for (auto& v : w.data) v = float(rng.uniform(-1.0, 1.0));
    Tape<float> tape;
    auto wp = make_tensor<float>(w.shape, w.data, true);
    auto y = fake_quant_ternary(tape, wp);
    const auto t = ternary_quantize(w);
    std::set<float> distinct(y->data.begin(), y->data.end());
    CHECK(distinct.size() <= 3);
    for (float v : distinct)
        CHECK((v == 0.0f || v == t.scale || v == -t.scale));
}

TEST_CASE("straight-through gradients: clipped weights block, interior passes") {
    auto w = make_tensor<float>({2}, {1.3f, 0.5f}, true);
    Tape<float> tape;
    auto y = fake_quant_weights_kbit(tape, w, 4);
    auto r = std::make_shared<std::vector<float>>(std::vector<float>{1.0f, 2.5f});
    auto s = project(tape, y, r);
    tape.backward(s);
    CHECK(w->grad[0] == 0.0f); // latent weight 1.3 sits outside the clip range
    CHECK(w->grad[1] == 2.5f); // interior point passes the upstream value through
}

TEST_CASE("ternary STE passes gradients through everywhere") {
    Rng rng(127);
    auto w = rand_tensor<float>(rng, {16}, -1.0f, 1.0f, true);
    Tape<float> tape;
    auto y = fake_quant_ternary(tape, w);
    auto r = rand_projection<float>(rng, 16);
    auto s = project(tape, y, r);
    tape.backward(s);
    for (std::size_t i = 0; i < 16; ++i) CHECK(w->grad[i] == (*r)[i]);
}

TEST_CASE("full-network STE equals the clip-only network at on-grid interior points") {
    // two-layer net evaluated where layer-1 weights sit exactly on the 4-bit
    // grid inside (-1,1): quantization is value-preserving there, so forward
    // and gradients of the quantized net match the clip net bit for bit
    Rng rng(131);
    auto x = rand_tensor<double>(rng, {2, 4}, -1.0, 1.0, true);
    auto w1 = make_tensor<double>({4, 4}, false);
    for (auto& v : w1->data) v = double(int(rng.uniform_index(13)) - 6) / 7.0; // grid, interior
    w1->requires_grad = true;
    w1->ensure_grad();
    auto w2 = rand_tensor<double>(rng, {4, 3}, -1.0, 1.0, true);
    auto r = rand_projection<double>(rng, 2 * 3);

    auto run = [&](bool quantized) {
        Tape<double> tape;
        zero_grads<double>({x, w1, w2});
        auto w1_eff = quantized ? fake_quant_weights_kbit(tape, w1, 4)
                                : clip(tape, w1, -1.0, 1.0);
        auto h = relu(tape, matmul(tape, x, w1_eff));
        auto out = project(tape, matmul(tape, h, w2), r);
        tape.backward(out);
        return std::tuple{out->data[0], w1->grad, x->grad, w2->grad};
    };
    const auto [f_q, gw1_q, gx_q, gw2_q] = run(true);
    const auto [f_c, gw1_c, gx_c, gw2_c] = run(false);
    CHECK(f_q == f_c);
    CHECK(gw1_q == gw1_c);
    CHECK(gx_q == gx_c);
    CHECK(gw2_q == gw2_c);
}

TEST_CASE("QuantSpec parses and renders the A,W notation") {
    const QuantSpec q = QuantSpec::parse("8A,4W");
    CHECK(q.act_bits == 8);
    CHECK(q.weight_bits == 4);
    CHECK(q.str() == "8A,4W");
    CHECK(QuantSpec::parse("32A, 2W").weight_bits == 2);
    CHECK_THROWS_AS(QuantSpec::parse("9A,3W"), ConfigError);
    CHECK_THROWS_AS(QuantSpec::parse("8A4W"), ConfigError);
    CHECK_THROWS_AS(QuantSpec::parse("8W,4A"), ConfigError);
}

TEST_CASE("apply_policy on a 5-layer mlp exempts first and last") {
    ModelSpec spec;
    spec.family = "mnist_mlp";
    spec.widths = {16, 12, 12, 12, 12, 10};
    auto model = build_model(spec, 1);
    apply_policy(*model, QuantSpec::parse("8A,2W"));
    const auto layers = model->weight_layers();
    REQUIRE(layers.size() == 5);
    CHECK(layers[0]->quant == WeightQuant::None);
    CHECK(layers[1]->quant == WeightQuant::Ternary);
    CHECK(layers[2]->quant == WeightQuant::Ternary);
    CHECK(layers[3]->quant == WeightQuant::Ternary);
    CHECK(layers[4]->quant == WeightQuant::None);
    const auto sites = model->activation_sites();
    REQUIRE(sites.size() == 4); // relu after layers 1..4
    for (const auto* s : sites) CHECK(s->quant == ActQuant::Bits8);
    const auto count = count_quant_nodes(*model);
    CHECK(count.weight_nodes == 3);
    CHECK(count.act_nodes == 4);
}

TEST_CASE("apply_policy with 32A,32W inserts nothing") {
    ModelSpec spec;
    spec.family = "mnist_convnet";
    spec.widths = {4, 8, 16};
    auto model = build_model(spec, 1);
    apply_policy(*model, QuantSpec::parse("32A,32W"));
    CHECK(count_quant_nodes(*model).total() == 0);
}

TEST_CASE("apply_policy on the 6n+2 resnet (n=3) inserts exactly 18 weight nodes") {
    auto model = build_cifar_resnet(3, 10, 1);
    apply_policy(*model, QuantSpec::parse("8A,2W"));
    const auto count = count_quant_nodes(*model);
    CHECK(count.weight_nodes == 18); // 20 weight layers minus first conv and final fc
}

TEST_CASE("apply_policy rejects exemption on a model that is too shallow") {
    ModelSpec spec;
    spec.family = "mnist_mlp";
    spec.widths = {16, 10};
    auto model = build_model(spec, 1);
    QuantSpec q = QuantSpec::parse("8A,2W");
    REQUIRE(q.exempt_first_last);
    CHECK_THROWS_AS(apply_policy(*model, q), ConfigError);
}

TEST_CASE("apply_policy never alters parameter shapes or counts") {
    ModelSpec spec;
    spec.family = "mnist_convnet";
    spec.widths = {4, 8, 16};
    auto model = build_model(spec, 1);
    const auto before = count_params_and_layers(*model);
    apply_policy(*model, QuantSpec::parse("8A,2W"));
    const auto after = count_params_and_layers(*model);
    CHECK(before.param_count == after.param_count);
    CHECK(before.layer_shapes == after.layer_shapes);
}
