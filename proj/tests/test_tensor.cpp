#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_support.hpp"
#include "tssm/tensor.hpp"

using namespace tssm;
using tssm::testing::bit_equal;
using tssm::testing::max_abs_diff;
using tssm::testing::random_tensor;

namespace {

Tensor vec(std::vector<float> values) {
    const int n = static_cast<int>(values.size());
    return Tensor::from_data({n}, std::move(values));
}

}  // namespace

TEST_CASE("construction and invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0f);
    CHECK(!t.tracked());

    CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1, 2, 3}), Error);
    CHECK_THROWS_AS(Tensor::from_data({0}, {}), Error);
    CHECK_THROWS_AS(Tensor::from_data({1}, {NAN}), Error);
    CHECK_THROWS_AS(Tensor::scalar(1.0f).at({0}), Error);
    CHECK(Tensor::scalar(4.5f).item() == 4.5f);
}

TEST_CASE("elementwise forward values") {
    CHECK(bit_equal(add(vec({1, 2}), vec({3, 4})), vec({4, 6})));
    CHECK(bit_equal(sub(vec({1, 2}), vec({3, 5})), vec({-2, -3})));
    CHECK(bit_equal(mul(vec({2, 3}), vec({4, 5})), vec({8, 15})));
    CHECK(bit_equal(div(vec({8, 9}), vec({2, 3})), vec({4, 3})));
    CHECK(bit_equal(relu(vec({-1, 0, 2})), vec({0, 0, 2})));
    CHECK(bit_equal(square(vec({-3, 2})), vec({9, 4})));
    CHECK(bit_equal(tssm::sqrt(vec({4, 9})), vec({2, 3})));
    CHECK(sigmoid(vec({0})).data()[0] == 0.5f);
    CHECK(tssm::exp(Tensor::scalar(0.0f)).item() == 1.0f);
    CHECK(bit_equal(clamp01(vec({-0.5f, 0.25f, 1.5f})), vec({0.0f, 0.25f, 1.0f})));

    SUBCASE("rank-0 broadcast on either side") {
        CHECK(bit_equal(add(Tensor::scalar(1.0f), vec({1, 2})), vec({2, 3})));
        CHECK(bit_equal(mul(vec({1, 2}), Tensor::scalar(3.0f)), vec({3, 6})));
        CHECK(bit_equal(sub(Tensor::scalar(1.0f), vec({1, 3})), vec({0, -2})));
    }

    SUBCASE("errors") {
        CHECK_THROWS_WITH_AS(div(vec({1}), vec({0})), doctest::Contains("div"), Error);
        CHECK_THROWS_WITH_AS(tssm::sqrt(vec({-1})), doctest::Contains("sqrt"), Error);
        CHECK_THROWS_AS(add(vec({1, 2}), vec({1, 2, 3})), Error);
        CHECK_THROWS_WITH_AS(tssm::exp(Tensor::scalar(200.0f)), doctest::Contains("exp"), Error);
    }
}

TEST_CASE("matmul") {
    Tensor identity = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(bit_equal(matmul(identity, m), m));

    // hand evaluation of the dot product
    Tensor row = Tensor::from_data({1, 2}, {1, 2});
    Tensor col = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(row, col).at({0, 0}) == 11.0f);

    Tensor zeros23 = Tensor::zeros({2, 3});
    Tensor any32 = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(bit_equal(matmul(zeros23, any32), Tensor::zeros({2, 2})));

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2}), Tensor::zeros({2, 3})), Error);
}

TEST_CASE("conv2d") {
    SUBCASE("1x1 identity channel map") {
        DetRng rng(11);
        Tensor img = random_tensor({4, 5, 2}, rng);
        Tensor kernel = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
        CHECK(bit_equal(conv2d(img, kernel), img));
    }

    SUBCASE("3x3 ones over constant image counts the padded window") {
        Tensor img = Tensor::full({5, 5, 1}, 1.0f);
        Tensor kernel = Tensor::full({3, 3, 1, 1}, 1.0f);
        Tensor out = conv2d(img, kernel);
        // overlap counts derived by summing the zero-padded window by hand
        const float expected[5][5] = {{4, 6, 6, 6, 4},
                                      {6, 9, 9, 9, 6},
                                      {6, 9, 9, 9, 6},
                                      {6, 9, 9, 9, 6},
                                      {4, 6, 6, 6, 4}};
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 5; ++x) {
                CHECK(out.at({y, x, 0}) == expected[y][x]);
            }
        }
    }

    SUBCASE("zero image stays zero") {
        DetRng rng(12);
        Tensor kernel = random_tensor({3, 3, 2, 4}, rng);
        CHECK(bit_equal(conv2d(Tensor::zeros({6, 6, 2}), kernel), Tensor::zeros({6, 6, 4})));
    }

    SUBCASE("even kernel rejected") {
        CHECK_THROWS_AS(conv2d(Tensor::zeros({4, 4, 1}), Tensor::zeros({2, 2, 1, 1})), Error);
        CHECK_THROWS_AS(conv2d(Tensor::zeros({4, 4, 2}), Tensor::zeros({3, 3, 1, 1})), Error);
    }
}

TEST_CASE("reductions") {
    CHECK(reduce_sum(vec({1, 2, 3})).item() == 6.0f);
    CHECK(reduce_mean(vec({2, 4})).item() == 3.0f);
    CHECK(reduce_sum(Tensor::zeros({3, 7})).item() == 0.0f);
}

TEST_CASE("structural ops") {
    DetRng rng(13);
    Tensor img = random_tensor({4, 6, 3}, rng);

    SUBCASE("reshape keeps data") {
        Tensor r = reshape(img, {24, 3});
        CHECK(r.shape() == Shape{24, 3});
        CHECK(std::equal(r.data().begin(), r.data().end(), img.data().begin()));
        CHECK_THROWS_AS(reshape(img, {5, 5}), Error);
    }

    SUBCASE("tile_spatial repeats the vector") {
        Tensor v = vec({1, 2, 3});
        Tensor t = tile_spatial(v, 2, 2);
        CHECK(t.shape() == Shape{2, 2, 3});
        CHECK(t.at({1, 0, 2}) == 3.0f);
    }

    SUBCASE("subsample2 and upsample2 shapes") {
        CHECK(subsample2(img).shape() == Shape{2, 3, 3});
        CHECK(subsample2(img).at({1, 2, 0}) == img.at({2, 4, 0}));
        CHECK(upsample2_nearest(img).shape() == Shape{8, 12, 3});
        CHECK(upsample2_nearest(img).at({7, 11, 1}) == img.at({3, 5, 1}));
        CHECK_THROWS_AS(subsample2(random_tensor({3, 4, 1}, rng)), Error);
    }

    SUBCASE("adaptive_avg_pool averages cells") {
        Tensor pooled = adaptive_avg_pool(img, 2, 3);
        CHECK(pooled.shape() == Shape{2, 3, 3});
        // first cell covers rows 0..1, cols 0..1
        double acc = 0;
        for (int y = 0; y < 2; ++y) {
            for (int x = 0; x < 2; ++x) acc += img.at({y, x, 0});
        }
        CHECK(pooled.at({0, 0, 0}) == doctest::Approx(acc / 4).epsilon(1e-6));
        // output larger than input still works (overlapping cells)
        CHECK(adaptive_avg_pool(random_tensor({6, 6, 3}, rng), 8, 8).shape() == Shape{8, 8, 3});
    }

    SUBCASE("spatial_gradient forward differences") {
        Tensor rowimg = Tensor::from_data({2, 3, 1}, {0, 1, 2, 0, 1, 2});
        Tensor g = spatial_gradient(rowimg);
        CHECK(g.shape() == Shape{2, 3, 1, 2});
        CHECK(g.at({0, 0, 0, 0}) == 1.0f);
        CHECK(g.at({0, 1, 0, 0}) == 1.0f);
        CHECK(g.at({0, 2, 0, 0}) == 0.0f);  // last column
        CHECK(g.at({1, 1, 0, 1}) == 0.0f);  // last row
        // constant image has zero gradients
        CHECK(max_abs_diff(spatial_gradient(Tensor::full({3, 3, 2}, 0.7f)),
                           Tensor::zeros({3, 3, 2, 2})) == 0.0);
        // shift invariance
        DetRng rng2(14);
        Tensor a = random_tensor({4, 4, 3}, rng2);
        Tensor shifted = add(a, Tensor::scalar(0.25f));
        CHECK(max_abs_diff(spatial_gradient(a), spatial_gradient(shifted)) < 1e-6);
        CHECK_THROWS_AS(spatial_gradient(Tensor::zeros({1, 5, 3})), Error);
    }
}

TEST_CASE("backward: hand-derived gradients") {
    SUBCASE("sum of squares") {
        Tape tape;
        Tensor x = tape.leaf(vec({1, -2, 3}));
        Tensor loss = reduce_sum(mul(x, x));
        auto grads = tape.backward(loss);
        CHECK(bit_equal(grads.at(x.id()), vec({2, -4, 6})));
    }

    SUBCASE("plain sum gives ones") {
        Tape tape;
        Tensor x = tape.leaf(Tensor::zeros({2, 2}));
        auto grads = tape.backward(reduce_sum(x));
        CHECK(bit_equal(grads.at(x.id()), Tensor::full({2, 2}, 1.0f)));
    }

    SUBCASE("untouched leaves get zeros") {
        Tape tape;
        Tensor x = tape.leaf(vec({1, 2}));
        Tensor y = tape.leaf(vec({3, 4}));
        auto grads = tape.backward(reduce_sum(x));
        CHECK(bit_equal(grads.at(y.id()), Tensor::zeros({2})));
    }

    SUBCASE("non-scalar loss rejected") {
        Tape tape;
        Tensor x = tape.leaf(vec({1, 2}));
        CHECK_THROWS_AS(tape.backward(x), Error);
    }

    SUBCASE("loss from another record rejected") {
        Tape tape;
        Tensor c = Tensor::scalar(1.0f);
        CHECK_THROWS_AS(tape.backward(c), Error);
    }

    SUBCASE("mixing operands from two records rejected") {
        Tape first, second;
        Tensor a = first.leaf(vec({1, 2}));
        Tensor b = second.leaf(vec({3, 4}));
        CHECK_THROWS_AS(add(a, b), Error);
        // re-registering a tracked tensor is also an error
        CHECK_THROWS_AS(second.leaf(a), Error);
    }
}

TEST_CASE("record structure") {
    Tape tape;
    Tensor x = tape.leaf(vec({1, 2}));
    Tensor y = reduce_sum(square(add(x, Tensor::scalar(1.0f))));
    (void)y;

    SUBCASE("topological: inputs precede outputs") {
        for (const auto& entry : tape.entries_view()) {
            for (ValueId input : entry.inputs) {
                CHECK(input < entry.out);  // 0 marks constants
            }
        }
        CHECK(tape.size() == 3);
    }

    SUBCASE("backward replay is deterministic") {
        auto first = tape.backward(y);
        auto second = tape.backward(y);
        CHECK(bit_equal(first.at(x.id()), second.at(x.id())));
    }
}

TEST_CASE("tracking does not change forward values") {
    DetRng rng(15);
    Tensor a = random_tensor({3, 4}, rng, 0.1f, 2.0f);
    Tensor b = random_tensor({3, 4}, rng, 0.1f, 2.0f);

    Tensor plain = reduce_sum(div(mul(sigmoid(a), tssm::exp(b)), add(square(a), b)));

    Tape tape;
    Tensor at = tape.leaf(a);
    Tensor bt = tape.leaf(b);
    Tensor tracked = reduce_sum(div(mul(sigmoid(at), tssm::exp(bt)), add(square(at), bt)));

    CHECK(plain.item() == tracked.item());
}

TEST_CASE("finite differences agree for every op") {
    DetRng rng(16);
    const float eps = 1e-3f;

    // scalarize op outputs against fixed random weights so that every
    // output coordinate receives a distinct gradient
    auto weighted_sum = [](const Tensor& out, const Tensor& weights) {
        return reduce_sum(mul(out, weights));
    };

    SUBCASE("unary elementwise") {
        Tensor x = random_tensor({2, 3}, rng, 0.2f, 0.9f);
        Tensor w = random_tensor({2, 3}, rng);
        auto check = [&](auto op) {
            return finite_diff_check(
                [&](const Tensor& t) { return weighted_sum(op(t), w); }, x, eps);
        };
        CHECK(check([](const Tensor& t) { return relu(t); }) < 1e-3);
        CHECK(check([](const Tensor& t) { return square(t); }) < 1e-3);
        CHECK(check([](const Tensor& t) { return tssm::sqrt(t); }) < 1e-3);
        CHECK(check([](const Tensor& t) { return tssm::exp(t); }) < 1e-3);
        CHECK(check([](const Tensor& t) { return sigmoid(t); }) < 1e-3);
        CHECK(check([](const Tensor& t) { return clamp01(t); }) < 1e-3);
    }

    SUBCASE("binary elementwise, including scalar broadcast") {
        Tensor x = random_tensor({2, 3}, rng, 0.3f, 1.0f);
        Tensor other = random_tensor({2, 3}, rng, 0.3f, 1.0f);
        Tensor w = random_tensor({2, 3}, rng);
        auto check = [&](auto f) { return finite_diff_check(f, x, eps); };
        CHECK(check([&](const Tensor& t) { return weighted_sum(add(t, other), w); }) < 1e-3);
        CHECK(check([&](const Tensor& t) { return weighted_sum(sub(other, t), w); }) < 1e-3);
        CHECK(check([&](const Tensor& t) { return weighted_sum(mul(t, other), w); }) < 1e-3);
        CHECK(check([&](const Tensor& t) { return weighted_sum(div(other, t), w); }) < 1e-3);
        CHECK(check([&](const Tensor& t) { return weighted_sum(div(t, other), w); }) < 1e-3);
        // gradient w.r.t. a broadcast scalar
        Tensor s = Tensor::scalar(0.6f);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return weighted_sum(mul(t, other), w); }, s, eps) < 1e-3);
    }

    SUBCASE("matmul both operands") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        Tensor w = random_tensor({3, 2}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(matmul(t, b), w)); }, a, eps) < 1e-3);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(matmul(a, t), w)); }, b, eps) < 1e-3);
    }

    SUBCASE("conv2d input and kernel") {
        Tensor img = random_tensor({5, 4, 2}, rng);
        Tensor kernel = random_tensor({3, 3, 2, 3}, rng);
        Tensor w = random_tensor({5, 4, 3}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(conv2d(t, kernel), w)); }, img,
                  eps) < 1e-3);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(conv2d(img, t), w)); }, kernel,
                  eps) < 1e-3);
    }

    SUBCASE("reductions and structure") {
        Tensor x = random_tensor({4, 4, 2}, rng);
        CHECK(finite_diff_check([](const Tensor& t) { return reduce_mean(t); }, x, eps) < 1e-3);
        Tensor w1 = random_tensor({32}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(reshape(t, {32}), w1)); }, x,
                  eps) < 1e-3);
        Tensor w2 = random_tensor({2, 2, 2}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(subsample2(t), w2)); }, x, eps) <
              1e-3);
        Tensor w3 = random_tensor({8, 8, 2}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(upsample2_nearest(t), w3)); }, x,
                  eps) < 1e-3);
        Tensor v = random_tensor({3}, rng);
        Tensor w4 = random_tensor({2, 5, 3}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(tile_spatial(t, 2, 5), w4)); }, v,
                  eps) < 1e-3);
        Tensor img = random_tensor({5, 6, 3}, rng);
        Tensor w5 = random_tensor({3, 3, 3}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) {
                      return reduce_sum(mul(adaptive_avg_pool(t, 3, 3), w5));
                  },
                  img, eps) < 1e-3);
        Tensor w6 = random_tensor({5, 6, 3, 2}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return reduce_sum(mul(spatial_gradient(t), w6)); }, img,
                  eps) < 1e-3);
    }
}

TEST_CASE("finite_diff_check contract") {
    DetRng rng(17);
    Tensor x = random_tensor({2, 3}, rng);

    // sum of squares against central differences
    CHECK(finite_diff_check([](const Tensor& t) { return reduce_sum(square(t)); }, x, 1e-4f) <=
          1e-3);
    // constant function: both gradients zero
    CHECK(finite_diff_check([](const Tensor&) { return Tensor::scalar(2.0f); }, x, 1e-4f) == 0.0);
    CHECK_THROWS_AS(finite_diff_check([](const Tensor& t) { return reduce_sum(t); }, x, 0.5f),
                    Error);
    CHECK_THROWS_AS(
        finite_diff_check([](const Tensor& t) { return square(t); }, x, 1e-4f), Error);
}
