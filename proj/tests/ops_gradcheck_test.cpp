#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "ptee/ops.hpp"
#include "ptee/rng.hpp"
#include "ptee/tensor.hpp"

namespace nn = ptee::nn;
using DTensor = nn::TensorT<double>;

namespace {

// Central finite differences against the recorded gradients, in double
// precision so the comparison noise floor sits far below the tolerance.
// `f` must rebuild its expression from the leaves on every call.
struct GradReport {
  double worst_rel = 0.0;
  std::size_t coords = 0;
};

GradReport check_gradients(std::vector<DTensor>& leaves, const std::function<DTensor()>& f,
                           double step = 1e-4) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  auto loss = f();
  nn::backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    if (leaf.has_grad())
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    else
      analytic.emplace_back(leaf.values().size(), 0.0);
  }

  GradReport report;
  nn::NoGradGuard guard;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto v = leaves[li].values_mut();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + step;
      const double fp = f().item();
      v[i] = saved - step;
      const double fm = f().item();
      v[i] = saved;
      const double fd = (fp - fm) / (2.0 * step);
      const double a = analytic[li][i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      report.worst_rel = std::max(report.worst_rel, rel);
      ++report.coords;
    }
  }
  return report;
}

DTensor random_tensor(nn::Shape shape, ptee::Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  std::vector<double> v(static_cast<std::size_t>(nn::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DTensor::from_values(std::move(shape), std::move(v));
}

// Fixed random linear functional; catches errors that a plain sum would
// cancel (e.g. softmax rows, transposed index maps).
DTensor project(const DTensor& out, const DTensor& weights) {
  auto flat = nn::reshape(out, {1, out.numel()});
  return nn::linear(flat, weights, DTensor());
}

DTensor projection_weights(std::int64_t n, ptee::Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0f, 1.0f);
  return DTensor::from_values({1, n}, std::move(v));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("conv2d gradients") {
  ptee::Rng rng(101);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  std::vector<DTensor> leaves{x, w, b};

  auto wp = projection_weights(2 * 4 * 5 * 5, rng);
  auto report = check_gradients(leaves, [&] { return project(nn::conv2d(x, w, b, 1, 1), wp); });
  CHECK(report.worst_rel < kTol);
  CHECK(report.coords == 2 * 3 * 5 * 5 + 4 * 3 * 3 * 3 + 4);

  auto wp2 = projection_weights(2 * 4 * 2 * 2, rng);
  auto report2 = check_gradients(leaves, [&] { return project(nn::conv2d(x, w, b, 2, 0), wp2); });
  CHECK(report2.worst_rel < kTol);
}

TEST_CASE("batchnorm gradients in both modes") {
  ptee::Rng rng(102);
  auto x = random_tensor({3, 2, 4, 4}, rng);
  auto gamma = random_tensor({2}, rng, 0.5f, 1.5f);
  auto beta = random_tensor({2}, rng);
  auto rm = random_tensor({2}, rng, -0.2f, 0.2f);
  auto rv = random_tensor({2}, rng, 0.8f, 1.2f);
  std::vector<DTensor> leaves{x, gamma, beta};
  auto wp = projection_weights(3 * 2 * 4 * 4, rng);

  // update_running=false keeps repeated evaluations pure for the difference
  // quotient.
  auto train_report = check_gradients(
      leaves, [&] { return project(nn::batchnorm2d(x, gamma, beta, rm, rv, true, false), wp); });
  CHECK(train_report.worst_rel < kTol);

  auto eval_report = check_gradients(
      leaves, [&] { return project(nn::batchnorm2d(x, gamma, beta, rm, rv, false, false), wp); });
  CHECK(eval_report.worst_rel < kTol);
}

TEST_CASE("relu gradients away from the kink") {
  ptee::Rng rng(103);
  std::vector<double> v(24);
  for (auto& x : v) {
    x = rng.uniform(0.1f, 1.0f);
    if (rng.uniform() < 0.5f) x = -x;  // both sides, noone near zero
  }
  auto x = DTensor::from_values({2, 12}, std::move(v));
  std::vector<DTensor> leaves{x};
  auto wp = projection_weights(24, rng);
  auto report = check_gradients(leaves, [&] { return project(nn::relu(x), wp); });
  CHECK(report.worst_rel < kTol);
}

TEST_CASE("maxpool gradients with well-separated values") {
  ptee::Rng rng(104);
  std::vector<int> perm(36);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<double> v(36);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * perm[i] - 0.9;  // distinct, gaps >> fd step
  auto x = DTensor::from_values({1, 1, 6, 6}, std::move(v));
  std::vector<DTensor> leaves{x};
  auto wp = projection_weights(9, rng);
  auto report = check_gradients(leaves, [&] { return project(nn::maxpool2d(x, 2, 2), wp); });
  CHECK(report.worst_rel < kTol);
}

TEST_CASE("pooling and reduction gradients") {
  ptee::Rng rng(105);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  std::vector<DTensor> leaves{x};
  auto wp = projection_weights(2 * 3, rng);
  CHECK(check_gradients(leaves, [&] { return project(nn::global_avgpool(x), wp); }).worst_rel < kTol);
  CHECK(check_gradients(leaves, [&] { return nn::sum_all(x); }).worst_rel < kTol);
  CHECK(check_gradients(leaves, [&] { return nn::mean_all(x); }).worst_rel < kTol);
}

TEST_CASE("linear gradients") {
  ptee::Rng rng(106);
  auto x = random_tensor({3, 5}, rng);
  auto w = random_tensor({4, 5}, rng);
  auto b = random_tensor({4}, rng);
  std::vector<DTensor> leaves{x, w, b};
  auto wp = projection_weights(3 * 4, rng);
  auto report = check_gradients(leaves, [&] { return project(nn::linear(x, w, b), wp); });
  CHECK(report.worst_rel < kTol);
}

TEST_CASE("softmax and sigmoid gradients") {
  ptee::Rng rng(107);
  auto z = random_tensor({3, 5}, rng, -2.0f, 2.0f);
  std::vector<DTensor> leaves{z};
  auto wp = projection_weights(3 * 5, rng);
  CHECK(check_gradients(leaves, [&] { return project(nn::softmax(z), wp); }).worst_rel < kTol);
  CHECK(check_gradients(leaves, [&] { return project(nn::sigmoid(z), wp); }).worst_rel < kTol);
}

TEST_CASE("elementwise and structural op gradients") {
  ptee::Rng rng(108);
  auto a = random_tensor({2, 6}, rng);
  auto b = random_tensor({2, 6}, rng);
  auto h = random_tensor({2, 1}, rng, 0.2f, 0.8f);
  auto ca = random_tensor({1, 2, 3, 3}, rng);
  auto cb = random_tensor({1, 3, 3, 3}, rng);
  auto wp12 = projection_weights(12, rng);
  auto wp45 = projection_weights(45, rng);

  {
    std::vector<DTensor> leaves{a, b};
    CHECK(check_gradients(leaves, [&] { return project(nn::add(a, b), wp12); }).worst_rel < kTol);
  }
  {
    std::vector<DTensor> leaves{a};
    CHECK(check_gradients(leaves, [&] { return project(nn::affine(a, -1.7, 0.3), wp12); }).worst_rel < kTol);
    CHECK(check_gradients(leaves, [&] { return project(nn::reshape(a, {3, 4}), wp12); }).worst_rel < kTol);
  }
  {
    std::vector<DTensor> leaves{h, a};
    CHECK(check_gradients(leaves, [&] { return project(nn::mul_rowvec(h, a), wp12); }).worst_rel < kTol);
  }
  {
    std::vector<DTensor> leaves{ca, cb};
    CHECK(check_gradients(leaves, [&] { return project(nn::concat_channels(ca, cb), wp45); }).worst_rel < kTol);
  }
}

TEST_CASE("log-likelihood gradients through softmax") {
  ptee::Rng rng(109);
  auto z = random_tensor({4, 6}, rng, -2.0f, 2.0f);
  const std::vector<std::int64_t> labels{0, 3, 5, 2};
  std::vector<DTensor> leaves{z};

  CHECK(check_gradients(leaves, [&] { return nn::cross_entropy(nn::softmax(z), labels); }).worst_rel < kTol);
  CHECK(check_gradients(leaves, [&] {
          return nn::mean_all(nn::pick_neglog(nn::softmax(z), labels));
        }).worst_rel < kTol);
}

TEST_CASE("composite stack gradients end to end") {
  // conv/bn/relu/pool -> heads: the shape of network the training loop builds.
  ptee::Rng rng(110);
  auto x = random_tensor({2, 2, 6, 6}, rng);
  auto cw = random_tensor({3, 2, 3, 3}, rng);
  auto gamma = random_tensor({3}, rng, 0.5f, 1.5f);
  auto beta = random_tensor({3}, rng);
  auto rm = random_tensor({3}, rng, -0.1f, 0.1f);
  auto rv = random_tensor({3}, rng, 0.9f, 1.1f);
  auto fw = random_tensor({4, 3}, rng);
  auto fb = random_tensor({4}, rng);
  const std::vector<std::int64_t> labels{1, 3};

  std::vector<DTensor> leaves{x, cw, gamma, beta, fw, fb};
  auto f = [&] {
    auto t = nn::conv2d(x, cw, DTensor(), 1, 1);
    t = nn::batchnorm2d(t, gamma, beta, rm, rv, true, false);
    t = nn::relu(t);
    t = nn::maxpool2d(t, 2, 2);
    auto pooled = nn::global_avgpool(t);
    auto probs = nn::softmax(nn::linear(pooled, fw, fb));
    return nn::cross_entropy(probs, labels);
  };
  auto report = check_gradients(leaves, f);
  CHECK(report.worst_rel < kTol);
  CHECK(report.coords > 100);
}
