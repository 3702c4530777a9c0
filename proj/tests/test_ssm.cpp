#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_support.hpp"
#include "tssm/ssm.hpp"

using namespace tssm;
using tssm::testing::bit_equal;
using tssm::testing::max_abs_diff;
using tssm::testing::random_tensor;

namespace {

// a layer with explicit effective decay: a_raw chosen so sigmoid(a_raw) = a
SsmLayerParams layer_with(float a, float b, float c, float d) {
    const float a_raw = std::log(a / (1.0f - a));
    SsmLayerParams layer;
    layer.a_raw = Tensor::full({1}, a_raw);
    layer.b = Tensor::full({1}, b);
    layer.c_out = Tensor::full({1}, c);
    layer.d = Tensor::full({1}, d);
    return layer;
}

SsmLayerParams random_layer(int channels, DetRng& rng) {
    SsmLayerParams layer;
    layer.a_raw = random_tensor({channels}, rng, -2.0f, 2.0f);
    layer.b = random_tensor({channels}, rng);
    layer.c_out = random_tensor({channels}, rng);
    layer.d = random_tensor({channels}, rng);
    return layer;
}

}  // namespace

TEST_CASE("hand-unrolled recurrence") {
    // a=0.5, b=1, c=1, d=0 on u = [1,1,1]:
    //   x1=1, x2=1.5, x3=1.75 and y = x
    SsmLayerParams layer = layer_with(0.5f, 1.0f, 1.0f, 0.0f);
    Tensor u = Tensor::from_data({3, 1}, {1, 1, 1});
    Tensor y = ssm_scan(u, layer);
    CHECK(y.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y.at({1, 0}) == doctest::Approx(1.5).epsilon(1e-6));
    CHECK(y.at({2, 0}) == doctest::Approx(1.75).epsilon(1e-6));

    // with d=1 the input is passed through on top of the state
    SsmLayerParams layer2 = layer_with(0.5f, 1.0f, 1.0f, 1.0f);
    Tensor y2 = ssm_scan(u, layer2);
    CHECK(y2.at({1, 0}) == doctest::Approx(2.5).epsilon(1e-6));
    CHECK(y2.at({2, 0}) == doctest::Approx(2.75).epsilon(1e-6));
}

TEST_CASE("identity and zero configurations") {
    DetRng rng(21);
    Tensor u = random_tensor({5, 3}, rng);

    SUBCASE("b=0, d=1 passes the input through unchanged") {
        CHECK(bit_equal(ssm_scan(u, identity_layer(3)), u));
        CHECK(bit_equal(ssm_scan_naive(u, identity_layer(3)), u));
    }

    SUBCASE("zero input stays zero") {
        SsmLayerParams layer = random_layer(3, rng);
        CHECK(bit_equal(ssm_scan(Tensor::zeros({7, 3}), layer), Tensor::zeros({7, 3})));
    }

    SUBCASE("single step reduces to (c*b + d) * u") {
        SsmLayerParams layer = layer_with(0.73f, 0.8f, -0.6f, 0.3f);
        Tensor u1 = Tensor::from_data({1, 1}, {2.0f});
        const float expected = (-0.6f * 0.8f + 0.3f) * 2.0f;
        CHECK(ssm_scan(u1, layer).at({0, 0}) == doctest::Approx(expected).epsilon(1e-6));
    }

    SUBCASE("channel mismatch rejected") {
        CHECK_THROWS_AS(ssm_scan(Tensor::zeros({4, 2}), identity_layer(3)), Error);
        CHECK_THROWS_AS(ssm_scan_naive(Tensor::zeros({4, 2}), identity_layer(3)), Error);
    }
}

TEST_CASE("scan matches the naive oracle on random cases") {
    DetRng rng(22);
    for (int trial = 0; trial < 100; ++trial) {
        const int length = 1 + static_cast<int>(rng.next_below(1024));
        const int channels = 1 + static_cast<int>(rng.next_below(32));
        Tensor u = random_tensor({length, channels}, rng);
        SsmLayerParams layer = random_layer(channels, rng);
        CHECK(max_abs_diff(ssm_scan(u, layer), ssm_scan_naive(u, layer)) <= 1e-6);
    }
}

TEST_CASE("stability: bounded input, bounded output over 10k steps") {
    DetRng rng(23);
    const int length = 10000, channels = 4;
    Tensor u = random_tensor({length, channels}, rng, -1.0f, 1.0f);
    SsmLayerParams layer = random_layer(channels, rng);
    Tensor y = ssm_scan(u, layer);

    for (int j = 0; j < channels; ++j) {
        const float a = 1.0f / (1.0f + std::exp(-layer.a_raw.data()[j]));
        const float bound = std::abs(layer.c_out.data()[j]) * std::abs(layer.b.data()[j]) /
                                (1.0f - a) +
                            std::abs(layer.d.data()[j]);
        for (int l = 0; l < length; ++l) {
            const float v = y.at({l, j});
            REQUIRE(std::isfinite(v));
            REQUIRE(std::abs(v) <= bound + 1e-4f);
        }
    }
}

TEST_CASE("scan gradients pass finite differences") {
    DetRng rng(24);
    const float eps = 1e-3f;
    Tensor u = random_tensor({6, 2}, rng);
    SsmLayerParams layer = random_layer(2, rng);
    Tensor w = random_tensor({6, 2}, rng);

    auto loss_of_u = [&](const Tensor& t) { return reduce_sum(mul(ssm_scan(t, layer), w)); };
    CHECK(finite_diff_check(loss_of_u, u, eps) < 1e-3);

    // and through each parameter vector
    auto check_param = [&](Tensor SsmLayerParams::* field) {
        return finite_diff_check(
            [&](const Tensor& t) {
                SsmLayerParams patched = layer;
                patched.*field = t;
                return reduce_sum(mul(ssm_scan(u, patched), w));
            },
            layer.*field, eps);
    };
    CHECK(check_param(&SsmLayerParams::a_raw) < 1e-3);
    CHECK(check_param(&SsmLayerParams::b) < 1e-3);
    CHECK(check_param(&SsmLayerParams::c_out) < 1e-3);
    CHECK(check_param(&SsmLayerParams::d) < 1e-3);
}

TEST_CASE("fuse") {
    DetRng rng(25);

    SUBCASE("alpha=1, identity layers carry the state exactly") {
        FusionParams params;
        params.alpha = Tensor::scalar(1.0f);
        params.beta = Tensor::scalar(0.0f);
        params.gamma = Tensor::scalar(0.0f);
        params.layers = {identity_layer(3), identity_layer(3), identity_layer(3)};
        Tensor h = random_tensor({2, 2, 3}, rng);
        Tensor f = random_tensor({2, 2, 3}, rng);
        Tensor s = random_tensor({2, 2, 3}, rng);
        CHECK(bit_equal(fuse(h, f, s, params), h));
    }

    SUBCASE("all zero scalars annihilate") {
        FusionParams params;
        params.alpha = Tensor::scalar(0.0f);
        params.beta = Tensor::scalar(0.0f);
        params.gamma = Tensor::scalar(0.0f);
        params.layers = {random_layer(3, rng)};
        Tensor h = random_tensor({2, 2, 3}, rng);
        CHECK(bit_equal(fuse(h, h, h, params), Tensor::zeros({2, 2, 3})));
    }

    SUBCASE("1x1 spatial single channel reduces to the scan") {
        FusionParams params;
        params.alpha = Tensor::scalar(0.25f);
        params.beta = Tensor::scalar(0.5f);
        params.gamma = Tensor::scalar(0.75f);
        params.layers = {layer_with(0.5f, 1.0f, 1.0f, 0.0f)};
        Tensor h = Tensor::from_data({1, 1, 1}, {1.0f});
        Tensor f = Tensor::from_data({1, 1, 1}, {2.0f});
        Tensor s = Tensor::from_data({1, 1, 1}, {3.0f});
        // z = 0.25 + 1.0 + 2.25 = 3.5; single-step scan: y = c*b*z = 3.5
        CHECK(fuse(h, f, s, params).at({0, 0, 0}) == doctest::Approx(3.5).epsilon(1e-6));
    }

    SUBCASE("shape mismatch rejected") {
        FusionParams params;
        params.alpha = Tensor::scalar(1.0f);
        params.beta = Tensor::scalar(1.0f);
        params.gamma = Tensor::scalar(1.0f);
        params.layers = {identity_layer(3)};
        CHECK_THROWS_AS(
            fuse(Tensor::zeros({2, 2, 3}), Tensor::zeros({2, 3, 3}), Tensor::zeros({2, 2, 3}),
                 params),
            Error);
    }

    SUBCASE("gradients through fuse pass finite differences") {
        FusionParams params;
        params.alpha = Tensor::scalar(0.5f);
        params.beta = Tensor::scalar(1.0f);
        params.gamma = Tensor::scalar(0.5f);
        params.layers = {random_layer(4, rng), random_layer(4, rng)};
        Tensor h = random_tensor({3, 4, 4}, rng);
        Tensor f = random_tensor({3, 4, 4}, rng);
        Tensor s = random_tensor({3, 4, 4}, rng);
        Tensor w = random_tensor({3, 4, 4}, rng);
        const float eps = 1e-3f;

        auto of_h = [&](const Tensor& t) { return reduce_sum(mul(fuse(t, f, s, params), w)); };
        auto of_f = [&](const Tensor& t) { return reduce_sum(mul(fuse(h, t, s, params), w)); };
        auto of_s = [&](const Tensor& t) { return reduce_sum(mul(fuse(h, f, t, params), w)); };
        CHECK(finite_diff_check(of_h, h, eps) < 1e-3);
        CHECK(finite_diff_check(of_f, f, eps) < 1e-3);
        CHECK(finite_diff_check(of_s, s, eps) < 1e-3);

        auto of_alpha = [&](const Tensor& t) {
            FusionParams patched = params;
            patched.alpha = t;
            return reduce_sum(mul(fuse(h, f, s, patched), w));
        };
        CHECK(finite_diff_check(of_alpha, params.alpha, eps) < 1e-3);

        auto of_layer_b = [&](const Tensor& t) {
            FusionParams patched = params;
            patched.layers[1].b = t;
            return reduce_sum(mul(fuse(h, f, s, patched), w));
        };
        CHECK(finite_diff_check(of_layer_b, params.layers[1].b, eps) < 1e-3);
    }
}

TEST_CASE("mix_output") {
    DetRng rng(26);
    Tensor h = random_tensor({2, 3, 2}, rng);
    Tensor f = random_tensor({2, 3, 2}, rng);
    CHECK(bit_equal(mix_output(Tensor::zeros({2, 3, 2}), f), f));
    CHECK(bit_equal(mix_output(h, Tensor::zeros({2, 3, 2})), h));
    CHECK(max_abs_diff(mix_output(h, mul(Tensor::scalar(-1.0f), h)), Tensor::zeros({2, 3, 2})) ==
          0.0);
    CHECK_THROWS_AS(mix_output(h, Tensor::zeros({3, 3, 2})), Error);
}
