#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "stenoviz/nn/autograd.hpp"

using namespace stenoviz;
using namespace stenoviz::nn;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s);
    for (double& v : t.values())
        v = u(rng);
    return t;
}

ConvParams random_conv(int in, int out, int k, std::mt19937_64& rng) {
    auto p = make_conv_params(in, out, k);
    p.weight->value = random_tensor(p.weight->value.shape(), rng);
    p.bias->value = random_tensor(p.bias->value.shape(), rng);
    return p;
}

// Central differences of L(x) = sum(r * f(x)) against the tape gradient.
double max_gradient_error(const std::function<Var(Tape*, const Var&)>& f, Tensor x0, std::mt19937_64& rng,
                          double h = 1e-3) {
    auto x = make_var(x0, true);
    Tape tape;
    auto y = f(&tape, x);
    const Tensor r = random_tensor(y->value.shape(), rng);
    auto loss = weighted_sum(&tape, y, r);
    tape.backward(loss);
    double worst = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        Tensor xp = x0, xm = x0;
        xp.values()[i] += h;
        xm.values()[i] -= h;
        const double lp = weighted_sum(nullptr, f(nullptr, make_var(xp)), r)->value.values()[0];
        const double lm = weighted_sum(nullptr, f(nullptr, make_var(xm)), r)->value.values()[0];
        const double numeric = (lp - lm) / (2 * h);
        const double analytic = x->grad.values()[i];
        worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    }
    return worst;
}

}  // namespace

TEST_CASE("reflect_pad3d mirrors without repeating the edge") {
    auto row = make_var(Tensor({1, 1, 3, 1, 1}, std::vector<double>{1, 2, 3}));
    auto padded = reflect_pad3d(nullptr, row, {1, 0, 0});
    CHECK(padded->value.values()[0] == 2);
    CHECK(padded->value.values()[1] == 1);
    CHECK(padded->value.values()[2] == 2);
    CHECK(padded->value.values()[3] == 3);
    CHECK(padded->value.values()[4] == 2);

    std::mt19937_64 rng(1);
    auto x = make_var(random_tensor({2, 3, 4, 5, 6}, rng));
    CHECK(reflect_pad3d(nullptr, x, {0, 0, 0})->value == x->value);

    auto c = make_var(Tensor({1, 2, 4, 4, 4}, 0.75));
    const auto cp = reflect_pad3d(nullptr, c, {2, 3, 1});
    for (double v : cp->value.values())
        CHECK(v == 0.75);

    CHECK_THROWS_AS(reflect_pad3d(nullptr, x, {4, 0, 0}), ParameterError);
}

TEST_CASE("conv3d delta and box kernels") {
    std::mt19937_64 rng(2);
    auto x = make_var(random_tensor({1, 1, 6, 5, 7}, rng));
    auto p = make_conv_params(1, 1, 3);
    p.weight->value.at(0, 0, 1, 1, 1) = 1.0;
    auto y = conv3d(nullptr, x, p);
    REQUIRE(y->value.shape() == Shape{1, 1, 4, 3, 5});
    for (int z = 0; z < 5; ++z)
        for (int yy = 0; yy < 3; ++yy)
            for (int xx = 0; xx < 4; ++xx)
                CHECK(y->value.at(0, 0, xx, yy, z) == x->value.at(0, 0, xx + 1, yy + 1, z + 1));

    auto c = make_var(Tensor({1, 1, 5, 5, 5}, 0.5));
    auto ones = make_conv_params(1, 1, 3);
    ones.weight->value.fill(1.0);
    ones.bias->value.fill(0.25);
    const auto box = conv3d(nullptr, c, ones);
    for (double v : box->value.values())
        CHECK(v == doctest::Approx(27 * 0.5 + 0.25).epsilon(1e-12));
}

TEST_CASE("conv3d matches the nested-loop oracle") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> ch(1, 4), ext(3, 8), kern(0, 1);
    for (int seed = 0; seed < 40; ++seed) {
        const int k = kern(rng) ? 3 : 1;
        const int in = ch(rng), out = ch(rng);
        const Shape s{1 + seed % 2, in, ext(rng), ext(rng), ext(rng)};
        auto x = make_var(random_tensor(s, rng));
        auto p = random_conv(in, out, k, rng);
        const Tensor got = conv3d(nullptr, x, p)->value;
        const Tensor want = oracle::conv3d(x->value, p.weight->value, p.bias->value);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.size(); ++i)
            REQUIRE(std::abs(got.values()[i] - want.values()[i]) < 1e-6);
    }
    auto x = make_var(Tensor({1, 2, 4, 4, 4}));
    CHECK_THROWS_AS(conv3d(nullptr, x, make_conv_params(3, 1, 3)), ShapeError);
}

TEST_CASE("backward through a box kernel gives 27 on interior voxels") {
    auto x = make_var(Tensor({1, 1, 7, 7, 7}, 0.3), true);
    auto p = make_conv_params(1, 1, 3);
    p.weight->value.fill(1.0);
    Tape tape;
    auto y = conv3d(&tape, x, p);
    auto loss = weighted_sum(&tape, y, Tensor(y->value.shape(), 1.0));
    tape.backward(loss);
    for (int z = 2; z < 5; ++z)
        for (int yy = 2; yy < 5; ++yy)
            for (int xx = 2; xx < 5; ++xx)
                CHECK(x->grad.at(0, 0, xx, yy, z) == 27.0);
    CHECK(x->grad.at(0, 0, 0, 0, 0) == 1.0);
}

TEST_CASE("backward before forward is a state error") {
    Tape tape;
    auto loss = make_var(Tensor({1, 1, 1, 1, 1}, 1.0));
    CHECK_THROWS_AS(tape.backward(loss), StateError);
}

TEST_CASE("every differentiable op passes a central-difference check") {
    std::mt19937_64 rng(4);
    const Shape s{2, 2, 4, 4, 4};
    auto conv_params = random_conv(2, 3, 3, rng);
    auto conv_params1 = random_conv(2, 3, 1, rng);

    CHECK(max_gradient_error([&](Tape* t, const Var& x) { return conv3d(t, x, conv_params); },
                             random_tensor(s, rng), rng) < 1e-6);
    CHECK(max_gradient_error([&](Tape* t, const Var& x) { return conv3d(t, x, conv_params1); },
                             random_tensor(s, rng), rng) < 1e-6);
    CHECK(max_gradient_error([](Tape* t, const Var& x) { return reflect_pad3d(t, x, {1, 2, 3}); },
                             random_tensor(s, rng), rng) < 1e-6);
    CHECK(max_gradient_error([](Tape* t, const Var& x) { return upsample3d(t, x, {2, 1, 2}); },
                             random_tensor(s, rng), rng) < 1e-6);
    CHECK(max_gradient_error([](Tape* t, const Var& x) { return sigmoid(t, x); }, random_tensor(s, rng), rng) < 1e-6);

    // Keep ReLU inputs and max-pool candidates at least 0.01 away from ties.
    Tensor spaced(s);
    std::vector<double> levels(spaced.size());
    for (std::size_t i = 0; i < levels.size(); ++i)
        levels[i] = -1.0 + 0.02 * static_cast<double>(i % 100) + 0.01;
    std::shuffle(levels.begin(), levels.end(), rng);
    std::copy(levels.begin(), levels.end(), spaced.values().begin());
    CHECK(max_gradient_error([](Tape* t, const Var& x) { return relu(t, x); }, spaced, rng) < 1e-6);
    CHECK(max_gradient_error([](Tape* t, const Var& x) { return maxpool3d(t, x, {2, 2, 1}); }, spaced, rng) < 1e-6);

    auto other = make_var(random_tensor(s, rng));
    CHECK(max_gradient_error([&](Tape* t, const Var& x) { return add(t, x, other); }, random_tensor(s, rng), rng) <
          1e-6);
}

TEST_CASE("maxpool after nearest upsampling is the identity") {
    std::mt19937_64 rng(5);
    auto c = make_var(Tensor({1, 2, 3, 2, 2}, 1.5));
    CHECK(maxpool3d(nullptr, upsample3d(nullptr, c, {2, 2, 2}), {2, 2, 2})->value == c->value);
    auto r = make_var(random_tensor({2, 3, 3, 4, 2}, rng));
    CHECK(maxpool3d(nullptr, upsample3d(nullptr, r, {2, 1, 2}), {2, 1, 2})->value == r->value);
    CHECK_THROWS_AS(maxpool3d(nullptr, make_var(Tensor({1, 1, 3, 2, 2})), {2, 2, 2}), ShapeError);
}

TEST_CASE("masked_bce values") {
    const Shape s{1, 1, 4, 4, 4};
    Tensor mask(s, 0.0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            mask.at(0, 0, x, y, 2) = 1.0;

    std::mt19937_64 rng(6);
    Tensor labels(s);
    for (double& v : labels.values())
        v = rng() % 2 ? 1.0 : 0.0;

    SUBCASE("perfect prediction") {
        CHECK(masked_bce_value(labels, labels, mask) <= -std::log(1.0 - kBceEpsilon) + 1e-15);
    }
    SUBCASE("constant one half is ln 2") {
        CHECK(masked_bce_value(Tensor(s, 0.5), labels, mask) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
    SUBCASE("random case matches the scalar loop") {
        for (int trial = 0; trial < 20; ++trial) {
            Tensor p = random_tensor(s, rng, 0.0, 1.0);
            p.values()[3] = 0.0;  // exercises the clamp
            Tensor m = mask;
            m.values()[5] = 1.0;
            const double want = oracle::masked_bce({p.values().begin(), p.values().end()},
                                                   {labels.values().begin(), labels.values().end()},
                                                   {m.values().begin(), m.values().end()});
            CHECK(std::abs(masked_bce_value(p, labels, m) - want) < 1e-9);
        }
    }
    SUBCASE("empty mask") {
        CHECK_THROWS_AS(masked_bce_value(labels, labels, Tensor(s, 0.0)), ParameterError);
    }
    SUBCASE("masked-out logits receive exactly zero gradient") {
        auto logits = make_var(random_tensor(s, rng, -3, 3), true);
        Tape tape;
        auto loss = masked_bce(&tape, sigmoid(&tape, logits), labels, mask);
        tape.backward(loss);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask.values()[i] == 0.0)
                CHECK(logits->grad.values()[i] == 0.0);
            else
                CHECK(logits->grad.values()[i] != 0.0);
        }
    }
}

TEST_CASE("adam_step") {
    std::mt19937_64 rng(7);
    auto w = make_var(random_tensor({1, 2, 3, 3, 3}, rng), true);
    const Tensor before = w->value;
    w->grad_buffer();  // all-zero gradient
    AdamState state;
    std::vector<Var> params{w};
    for (int i = 0; i < 10; ++i)
        adam_step(params, state, {});
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(std::abs(w->value.values()[i] - before.values()[i]) < 1e-12);

    // First step moves each weight by lr against the gradient sign.
    w->grad.fill(0.5);
    AdamState fresh;
    const double w0 = w->value.values()[0];
    adam_step(params, fresh, {});
    CHECK(w->value.values()[0] == doctest::Approx(w0 - 1e-3).epsilon(1e-6));
}

TEST_CASE("UNet parameter gradients match central differences") {
    unet::UNetConfig cfg;
    cfg.levels = 2;
    cfg.base_channels = 4;
    cfg.pool_factors = {{2, 2, 2}};
    cfg.patch = {16, 16, 16};
    cfg.xy_multiple = 16;
    unet::UNet model(cfg);
    model.initialize(11);
    std::mt19937_64 rng(12);
    const auto problem = gradcheck::make_problem({1, 1, 16, 16, 16}, 7, rng);
    const auto r = gradcheck::check(model, problem, 100, 1e-3, rng);
    CHECK(r.checked == 100);
    CHECK(r.max_relative_error < 1e-4);
}
