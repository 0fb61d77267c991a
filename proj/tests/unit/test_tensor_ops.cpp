#include <doctest.h>

#include "support/testutil.hpp"

using namespace apprentice;
using testutil::finite_diff_max_err;
using testutil::project;
using testutil::rand_projection;
using testutil::rand_tensor;

TEST_CASE("matmul identity and 1x1 product") {
    Tape<float> tape;
    auto eye = make_tensor<float>({2, 2}, {1, 0, 0, 1});
    auto m = make_tensor<float>({2, 2}, {1, 2, 3, 4});
    auto y = matmul(tape, eye, m);
    CHECK(y->data == std::vector<float>({1, 2, 3, 4}));

    auto a = make_tensor<float>({1, 2}, {1, 2});
    auto b = make_tensor<float>({2, 1}, {3, 4});
    CHECK(matmul(tape, a, b)->data[0] == doctest::Approx(11.0f));
}

TEST_CASE("matmul rejects mismatched shapes, reporting both") {
    Tape<float> tape;
    auto a = make_tensor<float>({2, 3});
    auto b = make_tensor<float>({4, 2});
    const std::string msg =
        testutil::catch_message<ShapeError>([&] { matmul(tape, a, b); });
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(11);
    auto a = rand_tensor<double>(rng, {5, 4}, -1.0, 1.0);
    auto b = rand_tensor<double>(rng, {4, 3}, -1.0, 1.0);
    auto r = rand_projection<double>(rng, 15);
    const double err = finite_diff_max_err({a, b}, [&](Tape<double>& t) {
        return project(t, matmul(t, a, b), r);
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("conv2d all-ones 3x3 kernel sums the window") {
    Tape<float> tape;
    auto x = make_tensor<float>({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    auto w = make_tensor<float>({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    auto y = conv2d(tape, x, w, 1, 0);
    CHECK(y->shape == std::vector<std::size_t>({1, 1, 1, 1}));
    CHECK(y->data[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d delta kernel with pad 1 is the identity") {
    Rng rng(3);
    Tape<float> tape;
    auto x = rand_tensor<float>(rng, {2, 1, 5, 5}, -1.0f, 1.0f, false);
    auto w = make_tensor<float>({1, 1, 3, 3});
    w->data[4] = 1.0f; // center tap
    auto y = conv2d(tape, x, w, 1, 1);
    for (std::size_t i = 0; i < x->numel(); ++i) CHECK(y->data[i] == x->data[i]);
}

namespace {

// independent six-loop reference for cross-correlation
std::vector<float> conv_reference(const Tensor<float>& x, const Tensor<float>& w,
                                  std::size_t stride, std::size_t pad) {
    const auto [n, c, h, ww] = std::tuple{x.shape[0], x.shape[1], x.shape[2], x.shape[3]};
    const auto [f, kc, kh, kw] = std::tuple{w.shape[0], w.shape[1], w.shape[2], w.shape[3]};
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (ww + 2 * pad - kw) / stride + 1;
    std::vector<float> y(n * f * oh * ow, 0.0f);
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t fi = 0; fi < f; ++fi)
            for (std::size_t oi = 0; oi < oh; ++oi)
                for (std::size_t oj = 0; oj < ow; ++oj) {
                    float acc = 0;
                    for (std::size_t ci = 0; ci < kc; ++ci)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const std::ptrdiff_t ii = std::ptrdiff_t(oi * stride + ki) -
                                                          std::ptrdiff_t(pad);
                                const std::ptrdiff_t jj = std::ptrdiff_t(oj * stride + kj) -
                                                          std::ptrdiff_t(pad);
                                if (ii < 0 || ii >= std::ptrdiff_t(h) || jj < 0 ||
                                    jj >= std::ptrdiff_t(ww))
                                    continue;
                                acc += x.data[((ni * c + ci) * h + ii) * ww + jj] *
                                       w.data[((fi * kc + ci) * kh + ki) * kw + kj];
                            }
                    y[((ni * f + fi) * oh + oi) * ow + oj] = acc;
                }
    return y;
}

} // namespace

TEST_CASE("conv2d matches the naive six-loop reference") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t stride = 1 + trial % 2;
        auto x = rand_tensor<float>(rng, {2, 3, 8, 8}, -1.0f, 1.0f, false);
        auto w = rand_tensor<float>(rng, {4, 3, 3, 3}, -1.0f, 1.0f, false);
        const std::size_t pad = 1 + trial % 2; // keep (8+2p-3)/s integral: p=1,s=1 / p=2,s=2
        if ((8 + 2 * pad - 3) % stride != 0) continue;
        Tape<float> tape;
        auto y = conv2d(tape, x, w, stride, pad);
        const auto ref = conv_reference(*x, *w, stride, pad);
        REQUIRE(y->data.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == ref[i]);
    }
}

TEST_CASE("conv2d rejects non-integral output extents") {
    Tape<float> tape;
    auto x = make_tensor<float>({1, 1, 28, 28});
    auto w = make_tensor<float>({1, 1, 3, 3});
    CHECK_THROWS_AS(conv2d(tape, x, w, 2, 1), ShapeError); // (28+2-3)/2 not integral
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(23);
    auto x = rand_tensor<double>(rng, {2, 2, 5, 5}, -1.0, 1.0);
    auto w = rand_tensor<double>(rng, {3, 2, 3, 3}, -1.0, 1.0);
    auto r = rand_projection<double>(rng, 2 * 3 * 5 * 5);
    const double err = finite_diff_max_err({x, w}, [&](Tape<double>& t) {
        return project(t, conv2d(t, x, w, 1, 1), r);
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("batchnorm passes through an already-normalized batch") {
    // +-1 pattern per channel: exactly zero mean, unit (biased) variance
    auto x = make_tensor<float>({2, 3, 2, 2});
    for (std::size_t i = 0; i < x->numel(); ++i) x->data[i] = (i % 2 == 0) ? 1.0f : -1.0f;
    auto gamma = make_tensor<float>({3}, {1, 1, 1});
    auto beta = make_tensor<float>({3});
    BatchNormState<float> st;
    st.running_mean = make_tensor<float>({3});
    st.running_var = make_tensor<float>({3});
    Tape<float> tape;
    auto y = batchnorm(tape, x, gamma, beta, st, Mode::Train);
    for (std::size_t i = 0; i < x->numel(); ++i)
        CHECK(std::abs(y->data[i] - x->data[i]) <= 1e-5f);
}

TEST_CASE("batchnorm with gamma=0 broadcasts beta") {
    Rng rng(5);
    auto x = rand_tensor<float>(rng, {2, 2, 3, 3}, -2.0f, 2.0f, false);
    auto gamma = make_tensor<float>({2});
    auto beta = make_tensor<float>({2}, {0.5f, -1.5f});
    BatchNormState<float> st;
    st.running_mean = make_tensor<float>({2});
    st.running_var = make_tensor<float>({2});
    Tape<float> tape;
    auto y = batchnorm(tape, x, gamma, beta, st, Mode::Train);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t j = 0; j < 9; ++j)
                CHECK(y->data[(n * 2 + c) * 9 + j] == beta->data[c]);
}

TEST_CASE("batchnorm training-mode gradients match finite differences") {
    Rng rng(29);
    auto x = rand_tensor<double>(rng, {4, 3, 2, 2}, -1.0, 1.0);
    auto gamma = rand_tensor<double>(rng, {3}, 0.5, 1.5);
    auto beta = rand_tensor<double>(rng, {3}, -0.5, 0.5);
    auto r = rand_projection<double>(rng, 4 * 3 * 2 * 2);
    BatchNormState<double> st;
    st.running_mean = make_tensor<double>({3});
    st.running_var = make_tensor<double>({3});
    const double err = finite_diff_max_err({x, gamma, beta}, [&](Tape<double>& t) {
        return project(t, batchnorm(t, x, gamma, beta, st, Mode::Train), r);
    });
    CHECK(err <= 1e-3);
}

TEST_CASE("batchnorm eval mode uses running stats") {
    auto x = make_tensor<float>({1, 1, 1, 2}, {3.0f, 5.0f});
    auto gamma = make_tensor<float>({1}, {2.0f});
    auto beta = make_tensor<float>({1}, {1.0f});
    BatchNormState<float> st;
    st.running_mean = make_tensor<float>({1}, {4.0f});
    st.running_var = make_tensor<float>({1}, {1.0f});
    Tape<float> tape;
    auto y = batchnorm(tape, x, gamma, beta, st, Mode::Eval);
    CHECK(y->data[0] == doctest::Approx(1.0f - 2.0f / std::sqrt(1.0f + 1e-5f)));
    CHECK(y->data[1] == doctest::Approx(1.0f + 2.0f / std::sqrt(1.0f + 1e-5f)));
}

TEST_CASE("softmax basics") {
    Tape<float> tape;
    auto z = make_tensor<float>({1, 2});
    auto p = softmax(tape, z);
    CHECK(p->data[0] == doctest::Approx(0.5f));
    CHECK(p->data[1] == doctest::Approx(0.5f));

    auto z2 = make_tensor<float>({1, 3}, {1, 2, 3});
    auto p2 = softmax(tape, z2);
    CHECK(std::abs(p2->data[0] - 0.09003f) <= 1e-5);
    CHECK(std::abs(p2->data[1] - 0.24473f) <= 1e-5);
    CHECK(std::abs(p2->data[2] - 0.66524f) <= 1e-5);
}

TEST_CASE("softmax is exactly shift invariant under max-subtraction") {
    Rng rng(31);
    Tape<float> tape;
    // lattice logits and a power-of-two shift keep z + c exact in float,
    // isolating the max-subtraction property itself
    auto z = rand_tensor<float>(rng, {4, 6}, -3.0f, 3.0f, false);
    for (auto& v : z->data) v = std::round(v * 1024.0f) / 1024.0f;
    auto zc = make_tensor<float>(z->shape, z->data);
    for (auto& v : zc->data) v += 8.0f;
    auto p = softmax(tape, z);
    auto pc = softmax(tape, zc);
    for (std::size_t i = 0; i < p->numel(); ++i) CHECK(p->data[i] == pc->data[i]);
}

TEST_CASE("softmax rows sum to one within 1e-6") {
    Rng rng(37);
    Tape<float> tape;
    auto z = rand_tensor<float>(rng, {8, 10}, -5.0f, 5.0f, false);
    auto p = softmax(tape, z);
    for (std::size_t r = 0; r < 8; ++r) {
        float sum = 0;
        for (std::size_t j = 0; j < 10; ++j) sum += p->data[r * 10 + j];
        CHECK(std::abs(sum - 1.0f) <= 1e-6f);
    }
}

TEST_CASE("softmax gradients match finite differences") {
    Rng rng(41);
    auto z = rand_tensor<double>(rng, {3, 5}, -2.0, 2.0);
    auto r = rand_projection<double>(rng, 15);
    const double err = finite_diff_max_err({z}, [&](Tape<double>& t) {
        return project(t, softmax(t, z), r);
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("cross_entropy trivial values") {
    Tape<float> tape;
    auto onehot = make_tensor<float>({1, 2}, {1, 0});
    auto same = make_tensor<float>({1, 2}, {1, 0});
    CHECK(cross_entropy(tape, onehot, same)->data[0] == doctest::Approx(0.0f));

    auto half = make_tensor<float>({1, 2}, {0.5f, 0.5f});
    CHECK(cross_entropy(tape, onehot, half)->data[0] == doctest::Approx(std::log(2.0f)).epsilon(1e-6));

    auto target = make_tensor<float>({1, 2}, {0.7f, 0.3f});
    auto pred = make_tensor<float>({1, 2}, {0.6f, 0.4f});
    const double expected = -(0.7 * std::log(0.6) + 0.3 * std::log(0.4));
    CHECK(cross_entropy(tape, target, pred)->data[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("cross_entropy rejects extent mismatch") {
    Tape<float> tape;
    auto t = make_tensor<float>({1, 2});
    auto p = make_tensor<float>({1, 3});
    CHECK_THROWS_AS(cross_entropy(tape, t, p), ShapeError);
}

TEST_CASE("cross_entropy gradients match finite differences") {
    Rng rng(43);
    auto target = rand_tensor<double>(rng, {4, 5}, 0.05, 0.95);
    auto pred = rand_tensor<double>(rng, {4, 5}, 0.05, 0.95);
    const double err = finite_diff_max_err({target, pred}, [&](Tape<double>& t) {
        return cross_entropy(t, target, pred);
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("relu, clip, bias_add, pooling and shortcut gradients") {
    Rng rng(47);
    auto r4 = rand_projection<double>(rng, 2 * 3 * 2 * 2);
    auto x4 = rand_tensor<double>(rng, {2, 3, 4, 4}, -1.0, 1.0);
    auto rp = rand_projection<double>(rng, 2 * 3);
    CHECK(finite_diff_max_err({x4}, [&](Tape<double>& t) {
              return project(t, global_avg_pool(t, x4), rp);
          }) <= 1e-4);

    auto rs = rand_projection<double>(rng, 2 * 5 * 2 * 2);
    CHECK(finite_diff_max_err({x4}, [&](Tape<double>& t) {
              return project(t, downsample_pad_channels(t, x4, 5), rs);
          }) <= 1e-4);

    auto x2 = rand_tensor<double>(rng, {3, 4}, -2.0, 2.0);
    auto b = rand_tensor<double>(rng, {4}, -1.0, 1.0);
    auto rb = rand_projection<double>(rng, 12);
    CHECK(finite_diff_max_err({x2, b}, [&](Tape<double>& t) {
              return project(t, bias_add(t, x2, b), rb);
          }) <= 1e-4);

    // keep relu/clip inputs away from their kinks
    auto xr = rand_tensor<double>(rng, {3, 4}, 0.1, 1.0);
    for (std::size_t i = 0; i < xr->numel(); i += 2) xr->data[i] = -xr->data[i];
    CHECK(finite_diff_max_err({xr}, [&](Tape<double>& t) {
              return project(t, relu(t, xr), rb);
          }) <= 1e-4);
    CHECK(finite_diff_max_err({xr}, [&](Tape<double>& t) {
              return project(t, clip(t, xr, -0.5, 0.5), rb);
          }) <= 1e-4);

    auto p1 = rand_tensor<double>(rng, {3, 3}, -1.0, 1.0);
    auto p2 = rand_tensor<double>(rng, {2, 2}, -1.0, 1.0);
    CHECK(finite_diff_max_err({p1, p2}, [&](Tape<double>& t) {
              return l2_penalty(t, {p1, p2}, 0.37);
          }) <= 1e-4);
}

TEST_CASE("gradients accumulate across multiple uses of a tensor") {
    auto x = make_tensor<double>({2, 2}, {1, 2, 3, 4}, true);
    Tape<double> tape;
    auto y = add(tape, x, x); // dy/dx should be 2 everywhere
    auto r = std::make_shared<std::vector<double>>(std::vector<double>{1, 1, 1, 1});
    auto s = project(tape, y, r);
    tape.backward(s);
    for (double g : x->grad) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("forward evaluation is bitwise deterministic") {
    auto run = [] {
        Rng rng(123);
        Tape<float> tape;
        auto a = rand_tensor<float>(rng, {6, 7}, -1.0f, 1.0f, false);
        auto b = rand_tensor<float>(rng, {7, 5}, -1.0f, 1.0f, false);
        return matmul(tape, a, b)->data;
    };
    CHECK(run() == run());
}

TEST_CASE("validation mode flags non-finite outputs") {
    validation_mode() = true;
    Tape<float> tape;
    auto a = make_tensor<float>({1, 1}, {std::numeric_limits<float>::max()});
    auto b = make_tensor<float>({1, 1}, {std::numeric_limits<float>::max()});
    CHECK_THROWS_WITH_AS(add(tape, a, b), doctest::Contains("non-finite"), std::runtime_error);
    validation_mode() = false;
}

TEST_CASE("sgd_step follows the momentum recurrence") {
    auto p = make_tensor<float>({1}, {1.0f}, true);
    p->grad = {1.0f};
    SgdState<float> st(0.1f, 0.0f);
    sgd_step<float>({p}, st);
    CHECK(p->data[0] == doctest::Approx(0.9f));

    auto q = make_tensor<float>({1}, {0.0f}, true);
    SgdState<float> st2(1.0f, 0.9f);
    q->grad = {1.0f};
    sgd_step<float>({q}, st2);
    CHECK(q->data[0] == doctest::Approx(-1.0f));
    q->grad = {1.0f};
    sgd_step<float>({q}, st2);
    CHECK(q->data[0] == doctest::Approx(-2.9f));
}

TEST_CASE("sgd_step leaves parameters alone with zero gradients") {
    auto p = make_tensor<float>({3}, {1, 2, 3}, true);
    p->grad = {0, 0, 0};
    SgdState<float> st(0.5f, 0.0f);
    sgd_step<float>({p}, st);
    CHECK(p->data == std::vector<float>({1, 2, 3}));
}

TEST_CASE("sgd_step rejects a trainable parameter without a gradient") {
    auto p = make_tensor<float>({2});
    p->requires_grad = true; // no grad buffer allocated
    SgdState<float> st(0.1f, 0.9f);
    CHECK_THROWS_WITH_AS(sgd_step<float>({p}, st), doctest::Contains("missing gradient"),
                         std::runtime_error);
}
