// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "fbnet/error.hpp"
#include "fbnet/gradcheck.hpp"
#include "fbnet/ops.hpp"
#include "fbnet/tensor_io.hpp"
#include "test_util.hpp"

using namespace fbnet;
using fbnet::testing::random_tensor;
using fbnet::testing::weighted_sum;

namespace {

constexpr double kGradTol = 1e-4;

// Checks d(weighted_sum(op(x)))/dx for a freshly drawn weight tensor.
template <typename Op>
double op_grad_error(Op op, Tensor<double> x, std::mt19937_64& rng) {
  Tensor<double> probe = op(x);
  Tensor<double> weights = random_tensor(probe.shape(), rng);
  return finite_diff_check([&](const Tensor<double>& in) { return weighted_sum(op(in), weights); },
                           x);
}

// Independent reference for half-pixel bilinear sampling of one plane.
double bilinear_reference(const std::vector<double>& plane, int h, int w, int out_h, int out_w,
                          int y, int x) {
  auto source = [](int dst, int in, int out) {
    double s = (dst + 0.5) * in / static_cast<double>(out) - 0.5;
    return s < 0 ? 0.0 : s;
  };
  const double sy = source(y, h, out_h);
  const double sx = source(x, w, out_w);
  const int y0 = std::min(static_cast<int>(sy), h - 1), x0 = std::min(static_cast<int>(sx), w - 1);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int r, int c) { return plane[r * w + c]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

// Pixel loop reference for mean cross entropy.
double cross_entropy_reference(const Tensor<double>& logits, const IntTensor& labels) {
  const auto b = logits.dim(0), l = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  double total = 0;
  int count = 0;
  for (int n = 0; n < b; ++n) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const int y = labels.data()[(n * h + i) * w + j];
        if (y == ops::kIgnoreIndex) continue;
        double denom = 0;
        for (int c = 0; c < l; ++c) denom += std::exp(logits.data()[((n * l + c) * h + i) * w + j]);
        total += -std::log(std::exp(logits.data()[((n * l + y) * h + i) * w + j]) / denom);
        ++count;
      }
    }
  }
  return total / count;
}

}  // namespace

TEST_CASE("matmul examples") {
  std::mt19937_64 rng(1);
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto b = random_tensor({3, 2}, rng);
  auto out = ops::matmul(eye, b);
  for (int i = 0; i < 6; ++i) CHECK(out.data()[i] == b.data()[i]);

  Tensor<double> a2({2, 2}, {1, 2, 3, 4});
  Tensor<double> b2({2, 1}, {5, 6});
  auto p = ops::matmul(a2, b2);
  CHECK(p.shape() == Shape{2, 1});
  CHECK(p.data()[0] == 17);
  CHECK(p.data()[1] == 39);

  CHECK_THROWS_AS(ops::matmul(a2, Tensor<double>({3, 1})), ShapeError);
  try {
    ops::matmul(a2, Tensor<double>({3, 1}));
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
    CHECK(std::string(e.what()).find("[3x1]") != std::string::npos);
  }
}

TEST_CASE("matmul and batch_matmul gradients") {
  std::mt19937_64 rng(2);
  auto a = random_tensor({4, 5}, rng);
  auto b = random_tensor({5, 3}, rng);
  auto w = random_tensor({4, 3}, rng);
  auto report = gradient_check([&] { return weighted_sum(ops::matmul(a, b), w); }, {a, b});
  CHECK(report.max_relative_error < kGradTol);

  for (int trial = 0; trial < 12; ++trial) {
    const bool ta = trial & 1, tb = trial & 2;
    auto x = random_tensor(ta ? Shape{2, 3, 4} : Shape{2, 4, 3}, rng);
    auto y = random_tensor(tb ? Shape{2, 5, 3} : Shape{2, 3, 5}, rng);
    auto r = random_tensor({2, 4, 5}, rng);
    auto rep = gradient_check([&] { return weighted_sum(ops::batch_matmul(x, y, ta, tb), r); },
                              {x, y});
    CHECK(rep.max_relative_error < kGradTol);
  }
}

TEST_CASE("conv2d identity kernels") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 1, 5, 6}, rng);
  Tensor<double> one({1, 1, 1, 1}, 1.0);
  Tensor<double> zero_bias({1}, 0.0);
  auto y = ops::conv2d(x, one, zero_bias, {});
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor<double> delta({1, 1, 3, 3}, 0.0);
  delta.data()[4] = 1.0;
  auto z = ops::conv2d(x, delta, zero_bias, {1, 1, 1});
  CHECK(z.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(z.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d dilated footprint on an impulse") {
  const int n = 9, c = 4;
  Tensor<double> x({1, 1, n, n}, 0.0);
  x.data()[c * n + c] = 1.0;
  Tensor<double> ones({1, 1, 3, 3}, 1.0);
  auto y = ops::conv2d(x, ones, Tensor<double>(), {1, 2, 2});
  REQUIRE(y.shape() == Shape{1, 1, n, n});
  // Output (i, j) reads inputs (i + 2a, j + 2b) for a, b in {-1, 0, 1}, so the
  // impulse lands at every (c - 2a, c - 2b).
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const bool hit = std::abs(i - c) % 2 == 0 && std::abs(i - c) <= 2 &&
                       std::abs(j - c) % 2 == 0 && std::abs(j - c) <= 2;
      CHECK(y.data()[i * n + j] == (hit ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("conv2d geometry errors and output extent") {
  CHECK(ops::conv_output_extent(64, 3, {2, 1, 1}) == 32);
  CHECK(ops::conv_output_extent(8, 3, {1, 4, 4}) == 8);
  CHECK_THROWS_AS(ops::conv_output_extent(2, 3, {1, 2, 0}), ConfigError);
  CHECK_THROWS_AS(ops::conv_output_extent(5, 0, {}), ConfigError);
  Tensor<double> x({1, 1, 2, 2});
  CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>({1, 1, 3, 3}), Tensor<double>(), {1, 2, 0}),
                  ConfigError);
}

TEST_CASE("conv2d gradients across geometries") {
  std::mt19937_64 rng(4);
  const ops::ConvGeometry geos[] = {{1, 1, 0}, {1, 1, 1}, {2, 1, 1}, {1, 2, 2}, {2, 2, 1},
                                    {1, 4, 4}, {3, 1, 0}, {1, 1, 2}, {2, 1, 0}, {1, 3, 1}};
  for (const auto& g : geos) {
    const int k = (&g == &geos[0]) ? 1 : 3;
    auto x = random_tensor({2, 3, 7, 6}, rng);
    auto w = random_tensor({4, 3, k, k}, rng);
    auto bias = random_tensor({4}, rng);
    auto probe = ops::conv2d(x, w, bias, g);
    auto r = random_tensor(probe.shape(), rng);
    auto rep = gradient_check([&] { return weighted_sum(ops::conv2d(x, w, bias, g), r); },
                              {x, w, bias});
    CHECK(rep.max_relative_error < kGradTol);
  }
}

TEST_CASE("softmax examples and properties") {
  Tensor<double> c({1, 5}, 0.7);
  auto s = ops::softmax(c, 1);
  for (double v : s.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

  Tensor<double> two({2}, {0.0, std::log(3.0)});
  auto t = ops::softmax(two, 0);
  CHECK(t.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({2, 4, 3, 3}, rng, -10, 10);
    const int axis = trial % 4;
    auto y = ops::softmax(x, axis);
    auto shifted = ops::softmax(ops::add_scalar(x, 123.5), axis);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      CHECK(y.data()[i] > 0);
      CHECK(std::abs(y.data()[i] - shifted.data()[i]) < 1e-6);
    }
    // Sum along the axis via a strided walk.
    const auto& sh = x.shape();
    std::int64_t inner = 1;
    for (int a = axis + 1; a < 4; ++a) inner *= sh[a];
    for (std::int64_t base = 0; base < x.numel(); ++base) {
      if ((base / inner) % sh[axis] != 0) continue;
      double total = 0;
      for (std::int64_t k = 0; k < sh[axis]; ++k) total += y.data()[base + k * inner];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    CHECK(op_grad_error([axis](const Tensor<double>& in) { return ops::softmax(in, axis); },
                        random_tensor({2, 4, 3, 3}, rng, -2, 2), rng) < kGradTol);
  }
  CHECK_THROWS_AS(ops::softmax(two, 1), ShapeError);
}

TEST_CASE("bilinear upsampling") {
  std::mt19937_64 rng(6);
  auto x = random_tensor({1, 2, 3, 4}, rng);
  auto same = ops::upsample_bilinear(x, 1);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(same.data()[i] == x.data()[i]);

  Tensor<double> seven({1, 1, 3, 5}, 7.0);
  auto seven_up = ops::upsample_bilinear(seven, 2);
  CHECK(seven_up.shape() == Shape{1, 1, 6, 10});
  for (double v : seven_up.data()) CHECK(v == doctest::Approx(7.0));

  std::vector<double> plane = {0, 1, 2, 3};
  Tensor<double> small({1, 1, 2, 2}, plane);
  auto up = ops::upsample_bilinear(small, 2);
  REQUIRE(up.shape() == Shape{1, 1, 4, 4});
  // Frozen from bilinear_reference: the map 2y + x sampled at half-pixel
  // offsets {0, .25, .75, 1} per axis.
  const double expected[16] = {0,   0.25, 0.75, 1,   0.5, 0.75, 1.25, 1.5,
                               1.5, 1.75, 2.25, 2.5, 2,   2.25, 2.75, 3};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(bilinear_reference(plane, 2, 2, 4, 4, i, j) == doctest::Approx(expected[i * 4 + j]));
      CHECK(up.data()[i * 4 + j] == doctest::Approx(expected[i * 4 + j]).epsilon(1e-12));
    }
  }

  // Arbitrary output sizes agree with the scalar reference.
  auto src = random_tensor({1, 1, 5, 3}, rng);
  std::vector<double> p(src.data().begin(), src.data().end());
  auto resized = ops::resize_bilinear(src, 8, 7);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 7; ++j)
      CHECK(resized.data()[i * 7 + j] ==
            doctest::Approx(bilinear_reference(p, 5, 3, 8, 7, i, j)).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    const int f = 1 + trial % 3;
    CHECK(op_grad_error([f](const Tensor<double>& in) { return ops::upsample_bilinear(in, f); },
                        random_tensor({2, 2, 3, 4}, rng), rng) < kGradTol);
  }
  CHECK(op_grad_error([](const Tensor<double>& in) { return ops::resize_bilinear(in, 3, 2); },
                      random_tensor({1, 2, 7, 5}, rng), rng) < kGradTol);
  CHECK_THROWS_AS(ops::upsample_bilinear(x, 0), ConfigError);
}

TEST_CASE("relu, max_pool and batch_norm") {
  Tensor<double> r({3}, {-1, 0, 2});
  auto rr = ops::relu(r);
  CHECK(rr.data()[0] == 0);
  CHECK(rr.data()[1] == 0);
  CHECK(rr.data()[2] == 2);

  Tensor<double> m({1, 1, 2, 2}, {1, 2, 3, 4});
  auto mp = ops::max_pool2d(m, 2, 2);
  CHECK(mp.shape() == Shape{1, 1, 1, 1});
  CHECK(mp.item() == 4);

  std::mt19937_64 rng(7);
  auto x = random_tensor({4, 3, 5, 5}, rng, -3, 5);
  Tensor<double> gamma({3}, 1.0), beta({3}, 0.0), rm({3}, 0.0), rv({3}, 1.0);
  auto y = ops::batch_norm(x, gamma, beta, rm, rv, true);
  for (int c = 0; c < 3; ++c) {
    double mu = 0, var = 0;
    const int count = 4 * 25;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) mu += y.data()[(b * 3 + c) * 25 + i];
    mu /= count;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) var += std::pow(y.data()[(b * 3 + c) * 25 + i] - mu, 2);
    var /= count;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1) < 1e-4);
  }
  // Running statistics moved 10% of the way toward the batch statistics.
  double batch_mean0 = 0;
  for (int b = 0; b < 4; ++b)
    for (int i = 0; i < 25; ++i) batch_mean0 += x.data()[(b * 3) * 25 + i];
  batch_mean0 /= 100;
  CHECK(rm.data()[0] == doctest::Approx(0.1 * batch_mean0).epsilon(1e-12));

  // Eval mode uses the running statistics.
  auto e = ops::batch_norm(x, gamma, beta, rm, rv, false);
  CHECK(e.data()[0] ==
        doctest::Approx((x.data()[0] - rm.data()[0]) / std::sqrt(rv.data()[0] + 1e-5)));

  Tensor<double> single({1, 3, 1, 1});
  CHECK_THROWS_AS(ops::batch_norm(single, gamma, beta, rm, rv, true), NumericalError);
  CHECK_NOTHROW(ops::batch_norm(single, gamma, beta, rm, rv, false));

  for (int trial = 0; trial < 10; ++trial) {
    auto xin = random_tensor({3, 2, 3, 4}, rng, -2, 2);
    auto g = random_tensor({2}, rng, 0.5, 1.5);
    auto bt = random_tensor({2}, rng);
    Tensor<double> m0({2}, 0.0), v0({2}, 1.0);
    const bool training = trial % 2 == 0;
    auto probe = ops::batch_norm(xin, g, bt, m0, v0, training);
    auto w = random_tensor(probe.shape(), rng);
    auto rep = gradient_check(
        [&] { return weighted_sum(ops::batch_norm(xin, g, bt, m0, v0, training), w); },
        {xin, g, bt});
    CHECK(rep.max_relative_error < kGradTol);

    CHECK(op_grad_error([](const Tensor<double>& in) { return ops::relu(in); },
                        random_tensor({2, 3, 4}, rng), rng) < kGradTol);
    CHECK(op_grad_error([](const Tensor<double>& in) { return ops::max_pool2d(in, 2, 2); },
                        random_tensor({1, 2, 4, 6}, rng), rng) < kGradTol);
  }
}

TEST_CASE("cross_entropy") {
  Tensor<double> uniform({1, 4, 2, 3}, 0.3);
  IntTensor labels({1, 2, 3}, {0, 1, 2, 3, 0, 1});
  CHECK(ops::cross_entropy(uniform, labels).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(std::log(4.0) == doctest::Approx(1.3863).epsilon(1e-4));

  Tensor<double> confident({1, 4, 2, 3}, 0.0);
  for (int p = 0; p < 6; ++p) confident.data()[labels.data()[p] * 6 + p] = 20.0;
  CHECK(ops::cross_entropy(confident, labels).item() < 1e-6);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto logits = random_tensor({2, 3, 2, 2}, rng, -3, 3);
    IntTensor lbl({2, 2, 2});
    std::uniform_int_distribution<int> pick(0, 3);
    for (auto& v : lbl.data()) {
      const int p = pick(rng);
      v = p == 3 ? ops::kIgnoreIndex : p;
    }
    lbl.data()[0] = 1;
    CHECK(std::abs(ops::cross_entropy(logits, lbl).item() - cross_entropy_reference(logits, lbl)) <
          1e-6);
    CHECK(finite_diff_check([&](const Tensor<double>& z) { return ops::cross_entropy(z, lbl); },
                            logits) < kGradTol);
  }

  IntTensor ignored({1, 2, 3}, ops::kIgnoreIndex);
  CHECK_THROWS_AS(ops::cross_entropy(uniform, ignored), NumericalError);
  IntTensor bad({1, 2, 3}, 7);
  CHECK_THROWS_AS(ops::cross_entropy(uniform, bad), ContractError);
}

TEST_CASE("argmax prefers the lowest class index on ties") {
  Tensor<double> z({1, 3, 1, 2}, {1, 0, 1, 5, 0.5, 5});
  auto a = ops::argmax_channels(z);
  CHECK(a.data()[0] == 0);
  CHECK(a.data()[1] == 1);
}

TEST_CASE("backward on analytic functions and tape accumulation") {
  Tensor<double> x({2}, {1, 2});
  x.set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(&tape);
    auto f = ops::sum(ops::mul(x, x));
    backward(f);
  }
  CHECK(x.grad()[0] == 2);
  CHECK(x.grad()[1] == 4);
  CHECK(finite_diff_check([](const Tensor<double>& v) { return ops::sum(ops::mul(v, v)); },
                          Tensor<double>({2}, {1, 2})) < 1e-6);

  // f = g + g accumulates twice the gradient of g.
  std::mt19937_64 rng(9);
  auto v = random_tensor({3, 4}, rng);
  auto w = random_tensor({4, 2}, rng);
  auto r = random_tensor({3, 2}, rng);
  auto g_of = [&] { return weighted_sum(ops::relu(ops::matmul(v, w)), r); };
  v.set_requires_grad(true);
  std::vector<double> single, doubled;
  {
    Tape tape;
    TapeScope scope(&tape);
    auto g = g_of();
    tape.backward(g);
    single.assign(v.grad().begin(), v.grad().end());
  }
  v.zero_grad();
  {
    Tape tape;
    TapeScope scope(&tape);
    auto f = ops::add(g_of(), g_of());
    tape.backward(f);
    doubled.assign(v.grad().begin(), v.grad().end());
  }
  for (std::size_t i = 0; i < single.size(); ++i) CHECK(doubled[i] == doctest::Approx(2 * single[i]));

  CHECK(op_grad_error([](const Tensor<double>& in) { return ops::reshape(in, {6, 2}); },
                      random_tensor({3, 4}, rng), rng) < kGradTol);
  auto c1 = random_tensor({2, 2, 3, 3}, rng);
  auto c2 = random_tensor({2, 3, 3, 3}, rng);
  auto rc = random_tensor({2, 5, 3, 3}, rng);
  std::vector<Tensor<double>> parts{c1, c2};
  auto rep = gradient_check(
      [&] { return weighted_sum(ops::concat_channels<double>(parts), rc); }, {c1, c2});
  CHECK(rep.max_relative_error < kGradTol);

  std::mt19937_64 drop_seed(10);
  auto dx = random_tensor({2, 3, 4, 4}, rng);
  auto rd = random_tensor({2, 3, 4, 4}, rng);
  CHECK(finite_diff_check(
            [&](const Tensor<double>& in) {
              std::mt19937_64 local(77);
              return weighted_sum(ops::dropout(in, 0.3, local, true), rd);
            },
            dx) < kGradTol);
}

TEST_CASE("tape refuses foreign threads and needs a scalar loss") {
  Tape tape;
  bool threw = false;
  std::thread other([&] {
    try {
      TapeScope scope(&tape);
    } catch (const ContractError&) {
      threw = true;
    }
  });
  other.join();
  CHECK(threw);

  Tensor<double> v({2}, 1.0);
  CHECK_THROWS_AS(tape.backward(v), ShapeError);
  CHECK_THROWS_AS(backward(v), ContractError);
}

TEST_CASE("FBT1 round trip is bit exact") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto f = random_tensor<float>({2, 3, static_cast<std::int64_t>(trial + 1)}, rng, -1e3, 1e3);
    f.data()[0] = -0.0f;
    auto d = random_tensor<double>({static_cast<std::int64_t>(trial + 2)}, rng, -1e-300, 1e300);
    IntTensor i({4, 1}, {-7, 0, 255, 2147483647});
    std::stringstream ss;
    io::write_fbt(ss, f);
    io::write_fbt(ss, d);
    io::write_fbt(ss, i);
    const std::string bytes = ss.str();
    auto f2 = std::get<Tensor<float>>(io::read_fbt(ss));
    auto d2 = std::get<Tensor<double>>(io::read_fbt(ss));
    auto i2 = std::get<IntTensor>(io::read_fbt(ss));
    CHECK(f2.shape() == f.shape());
    CHECK(std::memcmp(f2.ptr(), f.ptr(), f.numel() * sizeof(float)) == 0);
    CHECK(std::memcmp(d2.ptr(), d.ptr(), d.numel() * sizeof(double)) == 0);
    CHECK(i2 == i);
    std::stringstream again;
    io::write_fbt(again, f2);
    io::write_fbt(again, d2);
    io::write_fbt(again, i2);
    CHECK(again.str() == bytes);
  }
  // Header layout.
  std::stringstream hs;
  io::write_fbt(hs, IntTensor({2, 1}, {1, 2}));
  const std::string h = hs.str();
  CHECK(h.substr(0, 4) == "FBT1");
  CHECK(h.size() == 4 + 4 + 8 + 1 + 8);
  CHECK(static_cast<int>(h[4]) == 2);
  CHECK(static_cast<int>(h[16]) == 2);

  std::stringstream junk("FBT2....");
  CHECK_THROWS_AS(io::read_fbt(junk), IoError);
}
