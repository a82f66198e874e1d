#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "pulmo/errors.hpp"
#include "pulmo/rng.hpp"
#include "pulmo/tensor.hpp"

using pulmo::Tensor;

namespace {

// ---------------------------------------------------------------------------
// Naive reference kernels. These stay loop-literal on purpose: the production
// kernels (im2col + GEMM) must agree with them, so they are never allowed to
// share code with the implementation.
// ---------------------------------------------------------------------------

Tensor conv2d_ref(const Tensor& in, const Tensor& ker, int stride, int pad) {
  const int C = (int)in.dim(0), H = (int)in.dim(1), W = (int)in.dim(2);
  const int F = (int)ker.dim(0), kh = (int)ker.dim(2), kw = (int)ker.dim(3);
  const int outH = (H + 2 * pad - kh) / stride + 1;
  const int outW = (W + 2 * pad - kw) / stride + 1;
  Tensor out({(std::size_t)F, (std::size_t)outH, (std::size_t)outW});
  for (int f = 0; f < F; ++f)
    for (int oy = 0; oy < outH; ++oy)
      for (int ox = 0; ox < outW; ++ox) {
        float acc = 0.0f;
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += in.at({(std::size_t)c, (std::size_t)iy, (std::size_t)ix}) *
                     ker.at({(std::size_t)f, (std::size_t)c, (std::size_t)ky,
                             (std::size_t)kx});
            }
        out.at({(std::size_t)f, (std::size_t)oy, (std::size_t)ox}) = acc;
      }
  return out;
}

Tensor conv3d_ref(const Tensor& in, const Tensor& ker, std::array<int, 3> st,
                  std::array<int, 3> pad) {
  const int C = (int)in.dim(0), T = (int)in.dim(1), H = (int)in.dim(2),
            W = (int)in.dim(3);
  const int F = (int)ker.dim(0), kt = (int)ker.dim(2), kh = (int)ker.dim(3),
            kw = (int)ker.dim(4);
  const int outT = (T + 2 * pad[0] - kt) / st[0] + 1;
  const int outH = (H + 2 * pad[1] - kh) / st[1] + 1;
  const int outW = (W + 2 * pad[2] - kw) / st[2] + 1;
  Tensor out({(std::size_t)F, (std::size_t)outT, (std::size_t)outH,
              (std::size_t)outW});
  for (int f = 0; f < F; ++f)
    for (int ot = 0; ot < outT; ++ot)
      for (int oy = 0; oy < outH; ++oy)
        for (int ox = 0; ox < outW; ++ox) {
          float acc = 0.0f;
          for (int c = 0; c < C; ++c)
            for (int kz = 0; kz < kt; ++kz)
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  const int it = ot * st[0] + kz - pad[0];
                  const int iy = oy * st[1] + ky - pad[1];
                  const int ix = ox * st[2] + kx - pad[2];
                  if (it < 0 || it >= T || iy < 0 || iy >= H || ix < 0 ||
                      ix >= W)
                    continue;
                  acc += in.at({(std::size_t)c, (std::size_t)it,
                                (std::size_t)iy, (std::size_t)ix}) *
                         ker.at({(std::size_t)f, (std::size_t)c,
                                 (std::size_t)kz, (std::size_t)ky,
                                 (std::size_t)kx});
                }
          out.at({(std::size_t)f, (std::size_t)ot, (std::size_t)oy,
                  (std::size_t)ox}) = acc;
        }
  return out;
}

Tensor random_tensor(std::vector<std::size_t> shape, pulmo::Rng& rng,
                     float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = (float)rng.uniform(lo, hi);
  return t;
}

// Relative comparison with the tensor's own magnitude as the floor, so
// cancellation-to-zero elements are judged against the result scale rather
// than their tiny own value.
void check_close(const Tensor& a, const Tensor& b, double rel_tol) {
  REQUIRE(a.same_shape(b));
  double scale = 1e-6;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max({scale, std::fabs((double)a[i]), std::fabs((double)b[i])});
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom =
        std::max({std::fabs((double)a[i]), std::fabs((double)b[i]),
                  scale * 1e-2});
    CHECK(std::fabs((double)a[i] - (double)b[i]) / denom <= rel_tol);
  }
}

}  // namespace

TEST_CASE("tensor basics and shape errors") {
  Tensor t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 1.5f);
  t.at({0, 1}) = 2.0f;
  CHECK(t[1] == 2.0f);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5, 0.f)),
                  pulmo::DimensionError);
  CHECK_THROWS_AS(t.at({2, 0}), pulmo::DimensionError);
  CHECK_THROWS_AS(t.reshaped({4}), pulmo::DimensionError);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
}

TEST_CASE("conv2d spec examples") {
  // zero input, any kernel -> all-zero output
  pulmo::Rng rng(11);
  Tensor zin({2, 5, 5}, 0.0f);
  Tensor k = random_tensor({3, 2, 3, 3}, rng);
  Tensor out = pulmo::conv2d(zin, k, 1, 1);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0f);

  // 1x1 identity kernel, stride 1, pad 0 -> output equals input
  Tensor in = random_tensor({1, 4, 6}, rng);
  Tensor id({1, 1, 1, 1}, std::vector<float>{1.0f});
  Tensor same = pulmo::conv2d(in, id, 1, 0);
  REQUIRE(same.same_shape(in));
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(same[i] == in[i]);

  // 3x3 ones input, single 2x2 ones kernel -> 2x2 of 4.0
  Tensor ones({1, 3, 3}, 1.0f);
  Tensor k22({1, 1, 2, 2}, 1.0f);
  Tensor four = pulmo::conv2d(ones, k22, 1, 0);
  REQUIRE(four.shape() == std::vector<std::size_t>{1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(four[i] == doctest::Approx(4.0f));
}

TEST_CASE("conv2d matches naive oracle on random cases") {
  pulmo::Rng rng(42);
  struct Case {
    std::size_t C, H, W, F, kh, kw;
    int stride, pad;
  };
  const Case cases[] = {
      {1, 7, 7, 2, 3, 3, 1, 0}, {3, 9, 8, 4, 3, 3, 2, 1},
      {2, 6, 6, 1, 5, 5, 1, 2}, {4, 11, 5, 3, 2, 4, 3, 0},
      {1, 4, 4, 2, 1, 1, 1, 0},
  };
  for (const auto& cs : cases) {
    Tensor in = random_tensor({cs.C, cs.H, cs.W}, rng);
    Tensor ker = random_tensor({cs.F, cs.C, cs.kh, cs.kw}, rng);
    Tensor got = pulmo::conv2d(in, ker, cs.stride, cs.pad);
    Tensor want = conv2d_ref(in, ker, cs.stride, cs.pad);
    check_close(got, want, 1e-5);
  }
}

TEST_CASE("conv2d delta kernel reproduces shifted input") {
  pulmo::Rng rng(7);
  Tensor in = random_tensor({1, 8, 8}, rng);
  // 3x3 delta at (ky,kx): output(y,x) = input(y+ky, x+kx) with pad 0.
  for (int ky = 0; ky < 3; ++ky) {
    for (int kx = 0; kx < 3; ++kx) {
      Tensor delta({1, 1, 3, 3}, 0.0f);
      delta.at({0, 0, (std::size_t)ky, (std::size_t)kx}) = 1.0f;
      Tensor out = pulmo::conv2d(in, delta, 1, 0);
      for (std::size_t y = 0; y < out.dim(1); ++y)
        for (std::size_t x = 0; x < out.dim(2); ++x)
          CHECK(out.at({0, y, x}) == in.at({0, y + ky, x + kx}));
    }
  }
}

TEST_CASE("conv2d/conv3d linearity") {
  pulmo::Rng rng(3);
  const float a = 0.7f, b = -1.3f;
  Tensor x = random_tensor({2, 6, 6}, rng);
  Tensor y = random_tensor({2, 6, 6}, rng);
  Tensor ker = random_tensor({3, 2, 3, 3}, rng);
  Tensor mix({2, 6, 6});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  Tensor lhs = pulmo::conv2d(mix, ker, 1, 1);
  Tensor cx = pulmo::conv2d(x, ker, 1, 1);
  Tensor cy = pulmo::conv2d(y, ker, 1, 1);
  Tensor rhs(lhs.shape());
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * cx[i] + b * cy[i];
  check_close(lhs, rhs, 1e-5);

  Tensor x3 = random_tensor({1, 4, 5, 5}, rng);
  Tensor y3 = random_tensor({1, 4, 5, 5}, rng);
  Tensor k3 = random_tensor({2, 1, 3, 3, 3}, rng);
  Tensor mix3({1, 4, 5, 5});
  for (std::size_t i = 0; i < mix3.size(); ++i)
    mix3[i] = a * x3[i] + b * y3[i];
  Tensor lhs3 = pulmo::conv3d(mix3, k3, {1, 1, 1}, {1, 1, 1});
  Tensor cx3 = pulmo::conv3d(x3, k3, {1, 1, 1}, {1, 1, 1});
  Tensor cy3 = pulmo::conv3d(y3, k3, {1, 1, 1}, {1, 1, 1});
  Tensor rhs3(lhs3.shape());
  for (std::size_t i = 0; i < rhs3.size(); ++i)
    rhs3[i] = a * cx3[i] + b * cy3[i];
  check_close(lhs3, rhs3, 1e-5);
}

TEST_CASE("conv3d spec examples and oracle") {
  pulmo::Rng rng(5);
  Tensor zin({1, 3, 4, 4}, 0.0f);
  Tensor k = random_tensor({2, 1, 2, 2, 2}, rng);
  Tensor out = pulmo::conv3d(zin, k, {1, 1, 1}, {0, 0, 0});
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0f);

  Tensor in = random_tensor({2, 3, 4, 5}, rng);
  Tensor id({2, 2, 1, 1, 1}, 0.0f);
  id.at({0, 0, 0, 0, 0}) = 1.0f;
  id.at({1, 1, 0, 0, 0}) = 1.0f;
  Tensor same = pulmo::conv3d(in, id, {1, 1, 1}, {0, 0, 0});
  REQUIRE(same.same_shape(in));
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(same[i] == in[i]);

  Tensor ones({1, 2, 2, 2}, 1.0f);
  Tensor kones({1, 1, 2, 2, 2}, 1.0f);
  Tensor scalar = pulmo::conv3d(ones, kones, {1, 1, 1}, {0, 0, 0});
  REQUIRE(scalar.size() == 1);
  CHECK(scalar[0] == doctest::Approx(8.0f));

  Tensor rin = random_tensor({2, 5, 6, 7}, rng);
  Tensor rk = random_tensor({3, 2, 3, 3, 3}, rng);
  check_close(pulmo::conv3d(rin, rk, {2, 1, 2}, {1, 1, 0}),
              conv3d_ref(rin, rk, {2, 1, 2}, {1, 1, 0}), 1e-5);
}

TEST_CASE("conv gradient kernels agree with finite differences") {
  pulmo::Rng rng(19);
  Tensor in = random_tensor({2, 5, 5}, rng);
  Tensor ker = random_tensor({2, 2, 3, 3}, rng);
  const int stride = 1, pad = 1;
  Tensor out = pulmo::conv2d(in, ker, stride, pad);
  Tensor gout = random_tensor(out.shape(), rng);

  // loss = sum(gout * conv2d(in, ker))
  auto loss = [&](const Tensor& i, const Tensor& k) {
    Tensor o = pulmo::conv2d(i, k, stride, pad);
    double s = 0.0;
    for (std::size_t j = 0; j < o.size(); ++j) s += (double)gout[j] * o[j];
    return s;
  };
  Tensor gin = pulmo::conv2d_grad_input(ker, gout, in.shape(), stride, pad);
  Tensor gker = pulmo::conv2d_grad_kernels(in, gout, ker.shape(), stride, pad);
  const float h = 1e-2f;
  for (std::size_t j = 0; j < in.size(); j += 7) {
    Tensor ip = in, im = in;
    ip[j] += h;
    im[j] -= h;
    const double fd = (loss(ip, ker) - loss(im, ker)) / (2.0 * h);
    CHECK(std::fabs(fd - gin[j]) <= 1e-2 * std::max(1.0, std::fabs(fd)));
  }
  for (std::size_t j = 0; j < ker.size(); j += 5) {
    Tensor kp = ker, km = ker;
    kp[j] += h;
    km[j] -= h;
    const double fd = (loss(in, kp) - loss(in, km)) / (2.0 * h);
    CHECK(std::fabs(fd - gker[j]) <= 1e-2 * std::max(1.0, std::fabs(fd)));
  }
}

TEST_CASE("maxpool2d examples and window property") {
  Tensor c({1, 4, 4}, 2.5f);
  Tensor pooled = pulmo::maxpool2d(c, 2, 2);
  for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == 2.5f);

  Tensor m({1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor one = pulmo::maxpool2d(m, 2, 2);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 4.0f);

  Tensor z({2, 3, 3}, 0.0f);
  Tensor pz = pulmo::maxpool2d(z, 3, 1);
  for (std::size_t i = 0; i < pz.size(); ++i) CHECK(pz[i] == 0.0f);

  // per-window exactness and global bound over random inputs
  pulmo::Rng rng(23);
  Tensor in = random_tensor({3, 9, 7}, rng);
  const int k = 3, stride = 2;
  Tensor out = pulmo::maxpool2d(in, k, stride);
  const float gmax = in.max();
  for (std::size_t ch = 0; ch < out.dim(0); ++ch)
    for (std::size_t oy = 0; oy < out.dim(1); ++oy)
      for (std::size_t ox = 0; ox < out.dim(2); ++ox) {
        float wmax = -1e30f;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            wmax = std::max(wmax, in.at({ch, oy * stride + ky,
                                         ox * stride + kx}));
        CHECK(out.at({ch, oy, ox}) == wmax);
        CHECK(out.at({ch, oy, ox}) <= gmax);
      }

  CHECK_THROWS_AS(pulmo::maxpool2d(m, 3, 1), pulmo::DimensionError);
}

TEST_CASE("linear examples") {
  pulmo::Rng rng(31);
  Tensor x = random_tensor({4}, rng);
  Tensor id({4, 4}, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) id.at({i, i}) = 1.0f;
  Tensor zb({4}, 0.0f);
  Tensor out = pulmo::linear(x, id, zb);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == x[i]);

  Tensor zx({4}, 0.0f);
  Tensor w = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor bias_only = pulmo::linear(zx, w, b);
  for (std::size_t i = 0; i < 3; ++i) CHECK(bias_only[i] == b[i]);

  Tensor w2({2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor x2({2}, std::vector<float>{1, 1});
  Tensor b2({2}, 0.0f);
  Tensor y2 = pulmo::linear(x2, w2, b2);
  CHECK(y2[0] == doctest::Approx(3.0f));
  CHECK(y2[1] == doctest::Approx(7.0f));

  CHECK_THROWS_AS(pulmo::linear(x2, w, b), pulmo::DimensionError);
}

TEST_CASE("softmax examples and shift invariance") {
  Tensor eq({5}, 0.3f);
  Tensor u = pulmo::softmax(eq);
  for (std::size_t i = 0; i < 5; ++i) CHECK(u[i] == doctest::Approx(0.2f));

  Tensor x({2}, std::vector<float>{0.0f, std::log(3.0f)});
  Tensor p = pulmo::softmax(x);
  CHECK(p[0] == doctest::Approx(0.25f).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.75f).epsilon(1e-6));

  Tensor single({1}, std::vector<float>{42.0f});
  CHECK(pulmo::softmax(single)[0] == doctest::Approx(1.0f));

  pulmo::Rng rng(13);
  Tensor r = random_tensor({8}, rng, -5.0f, 5.0f);
  Tensor base = pulmo::softmax(r);
  for (float c : {-100.0f, -1.0f, 0.5f, 30.0f}) {
    Tensor shifted(r.shape());
    for (std::size_t i = 0; i < r.size(); ++i) shifted[i] = r[i] + c;
    Tensor ps = pulmo::softmax(shifted);
    double sum = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(ps[i] > 0.0f);
      CHECK(std::fabs(ps[i] - base[i]) <= 1e-6);
      sum += ps[i];
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-6);
  }

  Tensor bad({2}, std::vector<float>{0.0f, std::nanf("")});
  CHECK_THROWS_AS(pulmo::softmax(bad), pulmo::NumericError);
}

TEST_CASE("kernels are finite on finite inputs") {
  pulmo::Rng rng(77);
  Tensor in = random_tensor({2, 8, 8}, rng, -100.0f, 100.0f);
  Tensor ker = random_tensor({4, 2, 3, 3}, rng, -10.0f, 10.0f);
  CHECK(pulmo::conv2d(in, ker, 1, 1).all_finite());
  CHECK(pulmo::maxpool2d(in, 2, 2).all_finite());
  CHECK(pulmo::softmax(random_tensor({16}, rng, -50.0f, 50.0f)).all_finite());
}

TEST_CASE("parallel_for covers the range and matches serial results") {
  std::vector<int> hits(257, 0);
  pulmo::set_threads(4);
  pulmo::parallel_for(0, hits.size(),
                      [&](std::size_t i) { hits[i] += 1; });
  pulmo::set_threads(1);
  for (int h : hits) CHECK(h == 1);

  // kernel results do not depend on the thread setting
  pulmo::Rng rng(101);
  Tensor in = random_tensor({3, 10, 10}, rng);
  Tensor ker = random_tensor({5, 3, 3, 3}, rng);
  pulmo::set_threads(1);
  Tensor serial = pulmo::conv2d(in, ker, 1, 1);
  pulmo::set_threads(4);
  Tensor threaded = pulmo::conv2d(in, ker, 1, 1);
  pulmo::set_threads(1);
  for (std::size_t i = 0; i < serial.size(); ++i)
    CHECK(serial[i] == threaded[i]);
}
