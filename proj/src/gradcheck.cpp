#include "cdal/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cdal/rng.hpp"

namespace cdal {

double finite_diff_check(const LossBuilder& build, const std::vector<Tensor*>& wrt,
                         double eps) {
  // analytic pass: lift each value tensor onto a fresh tape
  std::vector<Tensor> originals;
  originals.reserve(wrt.size());
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> lifted;
    lifted.reserve(wrt.size());
    for (Tensor* t : wrt) {
      originals.push_back(*t);
      lifted.push_back(tape.leaf(*t));
      *t = lifted.back();
    }
    const Tensor loss = build(tape);
    tape.backward(loss);
    for (const Tensor& l : lifted) analytic.push_back(*l.grad());
    for (std::size_t i = 0; i < wrt.size(); ++i) *wrt[i] = originals[i];
  }

  const auto eval = [&]() {
    Tape tape;
    return build(tape).item();
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor work = originals[t].detached();
    *wrt[t] = work;
    for (std::size_t i = 0; i < work.data().size(); ++i) {
      const double v = work.data()[i];
      work.values()[i] = v + eps;
      const double fp = eval();
      work.values()[i] = v - eps;
      const double fm = eval();
      work.values()[i] = v;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    *wrt[t] = originals[t];
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor x,
                         double eps) {
  Tensor point = x.detached();
  return finite_diff_check([&](Tape& tape) { return f(tape, point); }, {&point}, eps);
}

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// keeps coordinates away from the kink at 0 so central differences stay valid
Tensor random_tensor_off_kink(std::vector<int> shape, Rng& rng, double margin = 1e-2) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& v : t.values()) {
    while (std::abs(v) < margin) v = rng.uniform(-1.0, 1.0);
  }
  return t;
}

using Unary = Tensor (*)(const Tensor&);

double check_unary(Unary op, bool kinky, std::uint64_t seed) {
  const std::vector<std::vector<int>> shapes = {{3}, {2, 3}, {5}, {2, 2, 2}, {4, 3}};
  double worst = 0.0;
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    Rng rng(Rng::derive(seed, "unary", k));
    Tensor x = kinky ? random_tensor_off_kink(shapes[k], rng) : random_tensor(shapes[k], rng);
    // weight the output so the loss mixes all coordinates unevenly
    Tensor w = random_tensor(shapes[k], rng);
    const double err = finite_diff_check(
        [&](Tape&, const Tensor& leaf) { return sum(elem_mul(op(leaf), w)); }, x);
    worst = std::max(worst, err);
  }
  return worst;
}

double check_binary(Tensor (*op)(const Tensor&, const Tensor&), std::uint64_t seed) {
  const std::vector<std::vector<int>> shapes = {{3}, {2, 3}, {5}, {2, 2, 2}, {4}};
  double worst = 0.0;
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    Rng rng(Rng::derive(seed, "binary", k));
    Tensor a = random_tensor(shapes[k], rng);
    Tensor b = random_tensor(shapes[k], rng);
    Tensor w = random_tensor(shapes[k], rng);
    const double err = finite_diff_check(
        [&](Tape&) { return sum(elem_mul(op(a, b), w)); }, {&a, &b});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

const std::vector<OpCheck>& registered_op_checks() {
  static const std::vector<OpCheck> checks = [] {
    std::vector<OpCheck> v;
    const std::uint64_t seed = 0x5eedull;

    v.push_back({"add", [=] { return check_binary(&add, Rng::derive(seed, "add")); }});
    v.push_back({"sub", [=] { return check_binary(&sub, Rng::derive(seed, "sub")); }});
    v.push_back(
        {"elem_mul", [=] { return check_binary(&elem_mul, Rng::derive(seed, "mul")); }});
    v.push_back({"scale", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "scale", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({2, 3}, rng);
                     const double c = rng.uniform(-2.0, 2.0);
                     worst = std::max(
                         worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                           return sum(scale(leaf, c));
                         }, x));
                   }
                   return worst;
                 }});
    v.push_back({"relu", [=] { return check_unary(&relu, true, Rng::derive(seed, "relu")); }});
    v.push_back(
        {"sigmoid", [=] { return check_unary(&sigmoid, false, Rng::derive(seed, "sig")); }});
    v.push_back({"softplus",
                 [=] { return check_unary(&softplus, false, Rng::derive(seed, "sp")); }});
    v.push_back(
        {"softmax", [=] { return check_unary(&softmax, false, Rng::derive(seed, "sm")); }});
    v.push_back({"log_softmax", [=] {
                   return check_unary(&log_softmax, false, Rng::derive(seed, "lsm"));
                 }});

    v.push_back({"conv2d", [=] {
                   const int ci[] = {1, 2, 3, 1, 2};
                   const int co[] = {2, 1, 2, 3, 2};
                   const int ks[] = {1, 3, 3, 1, 3};
                   const int hw[] = {3, 4, 3, 5, 4};
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "conv2d", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({ci[k], hw[k], hw[k]}, rng);
                     Tensor w = random_tensor({co[k], ci[k], ks[k], ks[k]}, rng);
                     Tensor m = random_tensor({co[k], hw[k], hw[k]}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return sum(elem_mul(conv2d(x, w), m));
                     }, {&x, &w}));
                   }
                   return worst;
                 }});
    v.push_back({"depthwise_conv2d", [=] {
                   const int cs[] = {1, 2, 3, 2, 4};
                   const int ks[] = {1, 3, 3, 3, 1};
                   const int hw[] = {3, 4, 3, 5, 4};
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "dwconv", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({cs[k], hw[k], hw[k]}, rng);
                     Tensor w = random_tensor({cs[k], ks[k], ks[k]}, rng);
                     Tensor m = random_tensor({cs[k], hw[k], hw[k]}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return sum(elem_mul(depthwise_conv2d(x, w), m));
                     }, {&x, &w}));
                   }
                   return worst;
                 }});
    v.push_back({"gap", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "gap", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k % 3 + 1, k + 2, 3}, rng);
                     Tensor m = random_tensor({k % 3 + 1}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                       return sum(elem_mul(gap(leaf), m));
                     }, x));
                   }
                   return worst;
                 }});
    v.push_back({"avg_pool2x2", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "pool", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k % 2 + 1, 4, 2 * (k % 3) + 2}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                       return mean_abs(avg_pool2x2(leaf));
                     }, x));
                   }
                   return worst;
                 }});
    v.push_back({"linear", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "linear", static_cast<std::uint64_t>(k)));
                     const int in = k % 3 + 2, out = k % 2 + 1;
                     Tensor x = random_tensor({in}, rng);
                     Tensor w = random_tensor({out, in}, rng);
                     Tensor b = random_tensor({out}, rng);
                     Tensor m = random_tensor({out}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return sum(elem_mul(linear(x, w, b), m));
                     }, {&x, &w, &b}));
                   }
                   return worst;
                 }});
    v.push_back({"concat_channels", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "concat", static_cast<std::uint64_t>(k)));
                     Tensor a = random_tensor({k % 2 + 1, 3, 2}, rng);
                     Tensor b = random_tensor({k % 3 + 1, 3, 2}, rng);
                     Tensor m = random_tensor({a.dim(0) + b.dim(0), 3, 2}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return sum(elem_mul(concat_channels(a, b), m));
                     }, {&a, &b}));
                   }
                   return worst;
                 }});
    v.push_back({"spatial_mul", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "spmul", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k % 3 + 1, 3, 2}, rng);
                     Tensor a = random_tensor({3, 2}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return mean_abs(spatial_mul(x, a));
                     }, {&x, &a}));
                   }
                   return worst;
                 }});
    v.push_back({"channel_slice", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "slice", static_cast<std::uint64_t>(k)));
                     const int M = k % 3 + 2;
                     Tensor x = random_tensor({M, 2, 3}, rng);
                     const int c = k % M;
                     worst = std::max(worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                       return mean_abs(channel_slice(leaf, c));
                     }, x));
                   }
                   return worst;
                 }});
    v.push_back({"channel_mean", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "chmean", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k % 3 + 1, 2, 3}, rng);
                     Tensor m = random_tensor({2, 3}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                       return sum(elem_mul(channel_mean(leaf), m));
                     }, x));
                   }
                   return worst;
                 }});
    v.push_back({"channel_sum", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "chsum", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k % 3 + 1, 2, 3}, rng);
                     Tensor m = random_tensor({2, 3}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                       return sum(elem_mul(channel_sum(leaf), m));
                     }, x));
                   }
                   return worst;
                 }});
    v.push_back({"sum", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "sum", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k + 1, 2}, rng);
                     worst = std::max(
                         worst, finite_diff_check(
                                    [&](Tape&, const Tensor& leaf) { return sum(leaf); }, x));
                   }
                   return worst;
                 }});
    v.push_back({"mean_abs", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "mabs", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor_off_kink({k + 2}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                       return mean_abs(leaf);
                     }, x));
                   }
                   return worst;
                 }});
    v.push_back({"vmax", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "vmax", static_cast<std::uint64_t>(k)));
                     // keep a clear gap between the top two entries
                     Tensor x = random_tensor({k + 3}, rng);
                     std::size_t arg = 0;
                     for (std::size_t i = 1; i < x.data().size(); ++i)
                       if (x.data()[i] > x.data()[arg]) arg = i;
                     x.values()[arg] += 0.5;
                     worst = std::max(
                         worst, finite_diff_check(
                                    [&](Tape&, const Tensor& leaf) { return vmax(leaf); }, x));
                   }
                   return worst;
                 }});
    v.push_back({"pick", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "pick", static_cast<std::uint64_t>(k)));
                     const int n = k + 2;
                     Tensor x = random_tensor({n}, rng);
                     const int i = k % n;
                     worst = std::max(worst, finite_diff_check([&](Tape&, const Tensor& leaf) {
                       return pick(leaf, i);
                     }, x));
                   }
                   return worst;
                 }});
    v.push_back({"mul_by_scalar", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "muls", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k + 2}, rng);
                     Tensor s = Tensor::scalar(rng.uniform(-2.0, 2.0));
                     Tensor m = random_tensor({k + 2}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return sum(elem_mul(mul_by_scalar(x, s), m));
                     }, {&x, &s}));
                   }
                   return worst;
                 }});
    v.push_back({"add_channel_bias", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "chbias", static_cast<std::uint64_t>(k)));
                     const int C = k % 3 + 1;
                     Tensor x = random_tensor({C, 2, 3}, rng);
                     Tensor b = random_tensor({C}, rng);
                     Tensor m = random_tensor({C, 2, 3}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return sum(elem_mul(add_channel_bias(x, b), m));
                     }, {&x, &b}));
                   }
                   return worst;
                 }});
    v.push_back({"div_by_scalar", [=] {
                   double worst = 0.0;
                   for (int k = 0; k < 5; ++k) {
                     Rng rng(Rng::derive(seed, "divs", static_cast<std::uint64_t>(k)));
                     Tensor x = random_tensor({k + 2}, rng);
                     Tensor s = Tensor::scalar(rng.uniform(0.5, 2.0));
                     Tensor m = random_tensor({k + 2}, rng);
                     worst = std::max(worst, finite_diff_check([&](Tape&) {
                       return sum(elem_mul(div_by_scalar(x, s), m));
                     }, {&x, &s}));
                   }
                   return worst;
                 }});
    return v;
  }();
  return checks;
}

}  // namespace cdal
