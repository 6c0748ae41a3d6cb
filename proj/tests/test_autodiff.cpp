#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowmark/autodiff_spatial.hpp"
#include "test_util.hpp"

using namespace flowmark;
using testutil::grad_check;
using testutil::random_tensor;

using D = double;

TEST_CASE("elementwise and reduction gradients") {
    RngStream rng(1, "elem");
    auto x = random_tensor<D>({2, 4, 4}, rng.fork("x"), 0.5);
    auto y = random_tensor<D>({2, 4, 4}, rng.fork("y"), 0.5);
    Var<D> yv = Var<D>::constant(y);

    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(mul(add(v, yv), sub(v, yv))); }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return sum_all(mul_scalar(v, 0.37)); }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(div(v, add_scalar(mul(yv, yv), 1.0))); }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return mse(v, yv); }, x) < 1e-6);
}

TEST_CASE("nonlinearity gradients") {
    RngStream rng(2, "nl");
    auto x = random_tensor<D>({3, 3, 3}, rng.fork("x"), 0.8);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(tanh_op(v)); }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(sigmoid(v)); }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(leaky_relu(v)); }, x) < 1e-5);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(log_op(add_scalar(mul(v, v), 1.0))); }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(sqrt_op(add_scalar(mul(v, v), 0.5))); }, x) < 1e-6);
}

TEST_CASE("clamp passes gradient only strictly inside the bounds") {
    TensorT<D> x({4});
    x.data = {-2.0, -0.5, 0.5, 2.0};
    Var<D> leaf = Var<D>::leaf(x, true);
    backward(sum_all(clamp(leaf, -1.0, 1.0)));
    CHECK(leaf.grad()[0] == 0.0);
    CHECK(leaf.grad()[1] == 1.0);
    CHECK(leaf.grad()[2] == 1.0);
    CHECK(leaf.grad()[3] == 0.0);
}

TEST_CASE("conv2d gradients: stride, padding, dilation") {
    RngStream rng(3, "conv");
    auto x = random_tensor<D>({2, 6, 6}, rng.fork("x"), 0.5);
    auto w = random_tensor<D>({3, 2, 3, 3}, rng.fork("w"), 0.3);
    auto b = random_tensor<D>({3}, rng.fork("b"), 0.1);

    for (auto [stride, pad, dil] : {std::tuple{1, 1, 1}, {2, 1, 1}, {1, 2, 2}}) {
        Var<D> wv = Var<D>::constant(w), bv = Var<D>::constant(b);
        CHECK(grad_check<D>([&, s = stride, p = pad, d = dil](Var<D> v) {
                  return mean_all(tanh_op(conv2d(v, wv, bv, s, p, d)));
              }, x) < 1e-6);
        Var<D> xv = Var<D>::constant(x);
        CHECK(grad_check<D>([&, s = stride, p = pad, d = dil](Var<D> v) {
                  return mean_all(tanh_op(conv2d(xv, v, bv, s, p, d)));
              }, w) < 1e-6);
        CHECK(grad_check<D>([&, s = stride, p = pad, d = dil](Var<D> v) {
                  return mean_all(tanh_op(conv2d(xv, wv, v, s, p, d)));
              }, b) < 1e-6);
    }
}

TEST_CASE("spatial op gradients") {
    RngStream rng(4, "spatial");
    auto x = random_tensor<D>({2, 6, 6}, rng.fork("x"), 0.5);
    auto flow = random_tensor<D>({6, 6, 2}, rng.fork("f"), 0.6);
    Var<D> fv = Var<D>::constant(flow);

    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> w = warp_bilinear(v, fv);
              return mean_all(mul(w, w));
          }, x) < 1e-6);
    Var<D> xv = Var<D>::constant(x);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> w = warp_bilinear(xv, v);
              return mean_all(mul(w, w));
          }, flow) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> r = resize_bilinear(v, 9, 4);
              return mean_all(mul(r, r));
          }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> r = resize_nearest(v, 13, 7);
              return mean_all(mul(r, r));
          }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> r = gaussian_blur(v, 0.9);
              return mean_all(mul(r, r));
          }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(avg_pool2(v)); }, x) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(global_avg_pool(v)); }, x) < 1e-6);
}

TEST_CASE("shape op gradients") {
    RngStream rng(5, "shape");
    auto a = random_tensor<D>({2, 4, 4}, rng.fork("a"), 0.5);
    auto b = random_tensor<D>({3, 4, 4}, rng.fork("b"), 0.5);
    Var<D> bv = Var<D>::constant(b);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> c = concat_channels(v, bv);
              return mean_all(mul(c, c));
          }, a) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> s = slice_channels(v, 1, 1);
              return mean_all(mul(s, s));
          }, a) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> r = reshape(v, {16, 2});
              return mean_all(mul(r, r));
          }, a) < 1e-6);
}

TEST_CASE("linear and l2_normalize gradients") {
    RngStream rng(6, "vec");
    auto x = random_tensor<D>({5}, rng.fork("x"), 0.8);
    auto w = random_tensor<D>({4, 5}, rng.fork("w"), 0.4);
    auto b = random_tensor<D>({4}, rng.fork("b"), 0.1);
    Var<D> wv = Var<D>::constant(w), bv = Var<D>::constant(b);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(tanh_op(linear(v, wv, bv))); }, x) < 1e-6);
    Var<D> xv = Var<D>::constant(x);
    CHECK(grad_check<D>([&](Var<D> v) { return mean_all(tanh_op(linear(xv, v, bv))); }, w) < 1e-6);
    CHECK(grad_check<D>([&](Var<D> v) {
              Var<D> n = l2_normalize(v);
              return sum_all(mul(n, add_scalar(n, 0.3)));
          }, x) < 1e-6);
    TensorT<D> zero({3});
    CHECK_THROWS_AS((void)l2_normalize(Var<D>::constant(zero)), ContractError);
}

TEST_CASE("gradients accumulate across reused nodes") {
    TensorT<D> x({2});
    x.data = {0.7, -0.3};
    Var<D> leaf = Var<D>::leaf(x, true);
    Var<D> sq = mul(leaf, leaf);  // same parent twice
    backward(sum_all(sq));
    CHECK(leaf.grad()[0] == doctest::Approx(2 * 0.7));
    CHECK(leaf.grad()[1] == doctest::Approx(2 * -0.3));
}

TEST_CASE("backward zeroes stale gradients between passes") {
    TensorT<D> x({3}, 1.0);
    Var<D> leaf = Var<D>::leaf(x, true);
    backward(sum_all(mul_scalar(leaf, 2.0)));
    CHECK(leaf.grad()[0] == 2.0);
    backward(sum_all(mul_scalar(leaf, 3.0)));
    CHECK(leaf.grad()[0] == 3.0);  // not 5.0
}

TEST_CASE("frozen parents receive no gradient") {
    TensorT<D> x({2}, 1.0);
    Var<D> frozen = Var<D>::leaf(x, false);
    Var<D> live = Var<D>::leaf(x, true);
    backward(sum_all(mul(frozen, live)));
    CHECK(frozen.grad().data.empty());
    CHECK(live.grad()[0] == 1.0);
}
