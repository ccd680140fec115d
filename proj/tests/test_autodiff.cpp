#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "wmage/error.hpp"
#include "wmage/nn/adam.hpp"
#include "wmage/nn/checkpoint.hpp"
#include "wmage/nn/gradcheck.hpp"
#include "wmage/nn/ops.hpp"

using namespace wmage;
using namespace wmage::nn;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng, bool grad = true, double scale = 1.0) {
  std::normal_distribution<double> n(0, scale);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(s), std::move(v), grad);
}

// Values bounded away from 0 so relu kinks stay out of reach of the step.
Tensor randn_off_zero(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(std::move(s), std::move(v), true);
}

// Fixed random projection, so the scalar has no symmetric cancellations.
struct Projection {
  Tensor w;
  Tensor operator()(const Tensor& y) const { return sum(mul(y, w)); }
};

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoFailure;
}

}  // namespace

TEST_CASE("dense") {
  Tensor x({1, 2}, {1, 2}), W({2, 1}, {1, 1}), b({1}, {0});
  CHECK(dense(x, W, b).data()[0] == 3);

  std::mt19937_64 rng(1);
  auto xi = randn({3, 4}, rng, false);
  Tensor I({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}), z = Tensor::zeros({4});
  auto y = dense(xi, I, z);
  for (std::size_t i = 0; i < 12; ++i) CHECK(y.data()[i] == xi.data()[i]);

  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 r(seed);
    auto X = randn({3, 5}, r), Wt = randn({5, 2}, r), bt = randn({2}, r);
    auto rep = gradcheck([&] { return sum(dense(X, Wt, bt)); }, {X, Wt, bt}, 1e-6);
    CHECK(rep.max_rel_error < 1e-4);
  }
  CHECK(code_of([&] { dense(randn({2, 3}, rng), randn({4, 1}, rng), randn({1}, rng)); }) == Errc::ShapeMismatch);
  CHECK(code_of([&] { dense(randn({2, 3}, rng), randn({3, 1}, rng), randn({2}, rng)); }) == Errc::ShapeMismatch);
}

TEST_CASE("relu") {
  Tensor x({3}, {-1, 0, 2}, true);
  auto y = relu(x);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 0, 2});
  backward(sum(y));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 1});

  std::mt19937_64 rng(2);
  Tensor pos({4}, {0.5, 1, 2, 3});
  auto id = relu(pos);
  for (int i = 0; i < 4; ++i) CHECK(id.data()[i] == pos.data()[i]);
  auto xr = randn_off_zero({4, 6}, rng);
  Projection proj{randn({4, 6}, rng, false)};
  CHECK(finite_diff_gradcheck([&](const Tensor& t) { return proj(relu(t)); }, xr, 1e-6) < 1e-4);
}

TEST_CASE("conv3d identity and hand cases") {
  std::mt19937_64 rng(3);
  auto x = randn({1, 1, 3, 4, 5}, rng, false);
  auto y = conv3d(x, Tensor({1, 1, 1, 1, 1}, {1}), Tensor({1}, {0}), 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  auto ones = conv3d(Tensor::full({1, 1, 3, 3, 3}, 1), Tensor::full({1, 1, 2, 2, 2}, 1), Tensor({1}, {0}), 1, 0);
  CHECK(ones.shape() == Shape{1, 1, 2, 2, 2});
  for (double v : ones.data()) CHECK(v == 8);

  CHECK(code_of([&] { conv3d(randn({1, 1, 2, 2, 2}, rng), randn({1, 1, 3, 3, 3}, rng), {}, 1, 0); }) ==
        Errc::EmptyOutput);
  CHECK(code_of([&] { conv3d(randn({1, 2, 4, 4, 4}, rng), randn({1, 3, 3, 3, 3}, rng), {}, 1, 0); }) ==
        Errc::ShapeMismatch);
  CHECK(code_of([&] { conv3d(randn({2, 4, 4, 4}, rng), randn({1, 2, 3, 3, 3}, rng), {}, 1, 0); }) ==
        Errc::ShapeMismatch);
}

TEST_CASE("conv3d matches direct loops and finite differences") {
  std::mt19937_64 rng(4);
  auto x = randn({1, 2, 8, 8, 8}, rng), k = randn({3, 2, 3, 3, 3}, rng), b = randn({3}, rng);
  auto y = conv3d(x, k, b, 2, 1);
  const int xs[5] = {1, 2, 8, 8, 8}, ks[5] = {3, 2, 3, 3, 3};
  int out[3];
  auto ref = oracle::conv3d_direct({x.data().begin(), x.data().end()}, xs, {k.data().begin(), k.data().end()}, ks,
                                   {b.data().begin(), b.data().end()}, 2, 1, out);
  CHECK(y.shape() == Shape{1, 3, std::size_t(out[0]), std::size_t(out[1]), std::size_t(out[2])});
  double worst = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.data()[i]));
  CHECK(worst <= 1e-9);

  auto w = randn(y.shape(), rng, false);
  auto rep = gradcheck([&] { return sum(mul(conv3d(x, k, b, 2, 1), w)); }, {x, k, b}, 1e-3, 60, 4);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("batchnorm") {
  Tensor x({2, 1, 1, 1, 1}, {1, 3}), g({1}, {1}), be({1}, {0});
  BatchNormStats st(1);
  auto y = batchnorm3d(x, g, be, Mode::Train, st);
  CHECK(y.data()[0] == doctest::Approx(-1).epsilon(1e-3));
  CHECK(y.data()[1] == doctest::Approx(1).epsilon(1e-3));
  // running stats: momentum 0.1 toward batch mean 2 and unbiased variance 2
  CHECK(st.running_mean[0] == doctest::Approx(0.2));
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 2.0));

  BatchNormStats fresh(1);
  std::mt19937_64 rng(5);
  auto xe = randn({2, 1, 2, 2, 2}, rng, false);
  auto ye = batchnorm3d(xe, g, be, Mode::Eval, fresh);
  for (std::size_t i = 0; i < xe.numel(); ++i) CHECK(ye.data()[i] == doctest::Approx(xe.data()[i] / std::sqrt(1 + 1e-5)));

  Tensor single({1, 1, 1, 1, 1}, {4});
  CHECK(code_of([&] { batchnorm3d(single, g, be, Mode::Train, fresh); }) == Errc::DegenerateBatch);
  CHECK_NOTHROW(batchnorm3d(single, g, be, Mode::Eval, fresh));

  for (int seed = 0; seed < 3; ++seed) {
    std::mt19937_64 r(seed);
    auto X = randn({3, 2, 2, 3, 2}, r), G = randn({2}, r), B = randn({2}, r);
    BatchNormStats s(2);
    auto w = randn({3, 2, 2, 3, 2}, r, false);
    auto rep = gradcheck([&] { return sum(mul(batchnorm3d(X, G, B, Mode::Train, s), w)); }, {X, G, B}, 1e-6);
    CHECK(rep.max_rel_error < 1e-3);
  }
}

TEST_CASE("pooling") {
  std::vector<double> v(8);
  for (int i = 0; i < 8; ++i) v[i] = i + 1;
  Tensor x({1, 1, 2, 2, 2}, v, true);
  auto p = global_avg_pool(x);
  CHECK(p.shape() == Shape{1, 1});
  CHECK(p.data()[0] == 4.5);
  backward(sum(p));
  for (double g : x.grad()) CHECK(g == 1.0 / 8);
  CHECK(global_avg_pool(Tensor::full({2, 3, 2, 1, 2}, 1.75)).data()[5] == 1.75);

  std::mt19937_64 rng(6);
  auto xr = randn({2, 3, 3, 2, 4}, rng);
  Projection pa{randn({2, 3}, rng, false)};
  CHECK(finite_diff_gradcheck([&](const Tensor& t) { return pa(global_avg_pool(t)); }, xr, 1e-6) < 1e-4);

  auto mp = max_pool3d(x, 2, 2, 0);
  CHECK(mp.data()[0] == 8);
  auto padded = max_pool3d(Tensor::full({1, 1, 2, 2, 2}, -5), 3, 2, 1);
  for (double m : padded.data()) CHECK(m == -5);
  auto xm = randn({1, 2, 5, 5, 5}, rng);
  Projection pm{randn({1, 2, 3, 3, 3}, rng, false)};
  CHECK(finite_diff_gradcheck([&](const Tensor& t) { return pm(max_pool3d(t, 3, 2, 1)); }, xm, 1e-6) < 1e-4);
}

TEST_CASE("losses") {
  Tensor p({2, 1}, {1, 2}, true), t({2, 1}, {2, 4});
  auto l = l1_loss(p, t);
  CHECK(l.item() == 1.5);
  backward(l);
  CHECK(p.grad()[0] == -0.5);
  CHECK(p.grad()[1] == -0.5);
  CHECK(l1_loss(t, t).item() == 0);
  Tensor tie({1, 1}, {3}, true);
  backward(l1_loss(tie, Tensor({1, 1}, {3})));
  CHECK(tie.grad()[0] == 0);
  CHECK(mse_loss(p, t).item() == 2.5);
  CHECK(code_of([&] { l1_loss(p, Tensor({1, 2}, {1, 1})); }) == Errc::ShapeMismatch);

  std::mt19937_64 rng(7);
  auto pr = randn({6, 1}, rng);
  auto tg = randn({6, 1}, rng, false);
  CHECK(finite_diff_gradcheck([&](const Tensor& q) { return l1_loss(q, tg); }, pr, 1e-6) < 1e-4);
  CHECK(finite_diff_gradcheck([&](const Tensor& q) { return mse_loss(q, tg); }, pr, 1e-6) < 1e-4);
}

TEST_CASE("backward contract") {
  Tensor x({3}, {1, 2, 3}, true);
  backward(sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});
  backward(sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 2, 2});
  x.zero_grad();
  CHECK(x.grad()[0] == 0);

  CHECK(code_of([] { backward(Tensor::scalar(1.0, true)); }) == Errc::NoTape);
  {
    NoGradGuard guard;
    auto y = sum(x);
    CHECK_FALSE(y.has_tape());
  }
  CHECK(sum(x).has_tape());

  std::mt19937_64 rng(8);
  auto X = randn({4, 3}, rng, false), W1 = randn({3, 5}, rng), b1 = randn({5}, rng), W2 = randn({5, 1}, rng),
       b2 = randn({1}, rng);
  auto net = [&] { return mse_loss(dense(relu(dense(X, W1, b1)), W2, b2), Tensor::full({4, 1}, 0.3)); };
  auto once = gradcheck(net, {W1, b1, W2, b2}, 1e-6);
  CHECK(once.max_rel_error < 1e-4);

  zero_grads(std::vector<Parameter>{{"W1", W1}});
  backward(net());
  std::vector<double> g1(W1.grad().begin(), W1.grad().end());
  backward(net());
  // equal up to the rounding of the fused accumulate
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(W1.grad()[i] == doctest::Approx(2 * g1[i]).epsilon(1e-13));
}

TEST_CASE("gradcheck itself") {
  Tensor x({2}, {1, 2});
  CHECK(finite_diff_gradcheck([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-4) < 1e-6);
  std::mt19937_64 rng(9);
  auto c = randn({5}, rng, false);
  auto lin = randn({5}, rng);
  CHECK(finite_diff_gradcheck([&](const Tensor& t) { return sum(mul(t, c)); }, lin, 1e-3) < 1e-10);
  CHECK(relative_error(2, 2) == 0);
  CHECK(relative_error(0, 1e-12) == doctest::Approx(1e-4));
}

TEST_CASE("adam") {
  for (double g : {3.0, -0.25}) {
    Tensor w({1}, {1.0}, true);
    w.grad_mut()[0] = g;
    std::vector<Parameter> ps{{"w", w}};
    OptimizerState st(0.1);
    adam_step(ps, st);
    CHECK(st.t == 1);
    CHECK(std::abs(w.data()[0] - (1.0 - 0.1 * g / (std::abs(g) + 1e-8))) < 1e-6);
  }
  Tensor z({2}, {1.0, -2.0}, true);
  z.grad_mut();
  std::vector<Parameter> zs{{"z", z}};
  OptimizerState st;
  adam_step(zs, st);
  CHECK(z.data()[0] == 1.0);
  CHECK(z.data()[1] == -2.0);

  Tensor no({1}, {1.0}, true);
  OptimizerState st2;
  CHECK(code_of([&] { adam_step(std::vector<Parameter>{{"no", no}}, st2); }) == Errc::MissingGrad);

  auto trajectory = [] {
    std::mt19937_64 rng(10);
    auto W = randn({3, 1}, rng), X = randn({8, 3}, rng, false), y = randn({8, 1}, rng, false);
    std::vector<Parameter> ps{{"W", W}};
    OptimizerState s(0.05);
    std::vector<double> out;
    for (int i = 0; i < 20; ++i) {
      zero_grads(ps);
      backward(mse_loss(dense(X, W, Tensor::zeros({1})), y));
      adam_step(ps, s);
      out.insert(out.end(), W.data().begin(), W.data().end());
    }
    return out;
  };
  CHECK(trajectory() == trajectory());

  Tensor d({1}, {2.0}, true);
  d.grad_mut();
  OptimizerState decay(0.1);
  decay.weight_decay = 0.5;
  adam_step(std::vector<Parameter>{{"d", d}}, decay);
  CHECK(d.data()[0] == doctest::Approx(2.0 * (1 - 0.05)));
}

TEST_CASE("checkpoint container") {
  Checkpoint c;
  c.metadata["model"] = "roi_mlp:5-1";
  c.arrays.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, 6.5}});
  c.arrays.push_back({"b", {1}, {-0.125}});
  auto bytes = encode_checkpoint(c);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "WMAGECKP");
  auto back = decode_checkpoint(bytes);
  CHECK(back.format_version == kCheckpointVersion);
  CHECK(back.metadata == c.metadata);
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.find("a")->values == c.arrays[0].values);
  CHECK(back.find("b")->shape == Shape{1});
  CHECK(back.find("zzz") == nullptr);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK(code_of([&] { decode_checkpoint(bad); }) == Errc::BadCheckpoint);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK(code_of([&] { decode_checkpoint(cut); }) == Errc::BadCheckpoint);

  Tensor w({2}, {1, 2}, true);
  w.grad_mut()[0] = 1;
  std::vector<Parameter> ps{{"w", w}};
  OptimizerState st(0.01);
  adam_step(ps, st);
  append_optimizer_state(c, ps, st);
  auto restored = read_optimizer_state(decode_checkpoint(encode_checkpoint(c)), ps);
  CHECK(restored.t == 1);
  CHECK(restored.lr == 0.01);
  CHECK(restored.m == st.m);
  CHECK(restored.v == st.v);
}

TEST_CASE("gradcheck re-steps across a kink") {
  Tensor x({2}, {3e-6, -0.5}, true);
  auto f = [&] { return sum(relu(x)); };
  auto plain = gradcheck(f, {x}, 1e-5);
  CHECK(plain.max_rel_error > 0.1);
  CHECK(plain.refined == 0);
  auto refined = gradcheck(f, {x}, 1e-5, 0, 0, 2);
  CHECK(refined.max_rel_error < 1e-6);
  CHECK(refined.refined == 1);
  // curvature alone does not count as a kink
  Tensor y({1}, {0.7}, true);
  auto smooth = gradcheck([&] { return sum(mul(mul(y, y), Tensor({1}, {1.0}))); }, {y}, 1e-5, 0, 0, 3);
  CHECK(smooth.max_rel_error < 1e-6);
  CHECK(smooth.refined == 0);
}
