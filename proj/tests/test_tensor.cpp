#include <cmath>
#include <sstream>

#include "cdal/gradcheck.hpp"
#include "cdal/rng.hpp"
#include "cdal/serialize.hpp"
#include "cdal/tensor.hpp"
#include "doctest.h"
#include "test_oracles.hpp"

using namespace cdal;

TEST_CASE("conv2d identity kernel reproduces the input") {
  Tensor x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d(x, w);
  CHECK(y.shape() == std::vector<int>{1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d on zero input is zero") {
  Rng rng(7);
  Tensor x = Tensor::zeros({2, 4, 4});
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor y = conv2d(x, w);
  for (const double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches the naive nested-loop oracle") {
  Rng rng(11);
  Tensor x = oracle::random_tensor({2, 4, 4}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor got = conv2d(x, w);
  Tensor want = oracle::conv2d_naive(x, w);
  CHECK(oracle::max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("conv2d with a Dirac kernel is the identity, exactly") {
  Rng rng(13);
  Tensor x = oracle::random_tensor({2, 5, 5}, rng);
  Tensor w = Tensor::zeros({2, 2, 3, 3});
  // kernel c -> c with the center tap set, other channel zero
  w.values()[(0 * 2 + 0) * 9 + 4] = 1.0;
  w.values()[(1 * 2 + 1) * 9 + 4] = 1.0;
  Tensor y = conv2d(x, w);
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("depthwise_conv2d basics") {
  SUBCASE("per-channel 1x1 ones kernel is the identity") {
    Rng rng(17);
    Tensor x = oracle::random_tensor({3, 4, 4}, rng);
    Tensor w = Tensor::full({3, 1, 1}, 1.0);
    Tensor y = depthwise_conv2d(x, w);
    for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }
  SUBCASE("constant field times a kernel summing to 2 gives 10 at interior sites") {
    Tensor x = Tensor::full({1, 5, 5}, 5.0);
    Tensor w = Tensor::full({1, 3, 3}, 2.0 / 9.0);
    Tensor y = depthwise_conv2d(x, w);
    for (int h = 1; h < 4; ++h)
      for (int v = 1; v < 4; ++v) CHECK(y.at({0, h, v}) == doctest::Approx(10.0).epsilon(1e-12));
  }
  SUBCASE("random case matches the per-channel oracle") {
    Rng rng(19);
    Tensor x = oracle::random_tensor({3, 4, 5}, rng);
    Tensor w = oracle::random_tensor({3, 3, 3}, rng);
    CHECK(oracle::max_abs_diff(depthwise_conv2d(x, w), oracle::depthwise_naive(x, w)) < 1e-12);
  }
  SUBCASE("channel mismatch throws") {
    Tensor x = Tensor::zeros({2, 4, 4});
    Tensor w = Tensor::zeros({3, 3, 3});
    CHECK_THROWS(depthwise_conv2d(x, w));
  }
}

TEST_CASE("gap") {
  CHECK(gap(Tensor::full({2, 3, 3}, 3.0)).data() == std::vector<double>{3.0, 3.0});
  CHECK(gap(Tensor::zeros({1, 2, 2})).data() == std::vector<double>{0.0});
  // 2x2x2 hand sum
  Tensor x = Tensor::from({2, 2, 2}, {0.5, -1.0, 2.0, 0.25, 4.0, 4.0, -2.0, 1.0});
  Tensor y = gap(x);
  CHECK(y.data()[0] == doctest::Approx((0.5 - 1.0 + 2.0 + 0.25) / 4.0).epsilon(1e-15));
  CHECK(y.data()[1] == doctest::Approx((4.0 + 4.0 - 2.0 + 1.0) / 4.0).epsilon(1e-15));
}

TEST_CASE("activation and layout op examples") {
  SUBCASE("softmax of a constant row is uniform") {
    Tensor y = softmax(Tensor::from({3}, {0, 0, 0}));
    for (const double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("sigmoid(0) = 0.5") { CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5); }
  SUBCASE("softplus(0) = ln 2") {
    CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("concat_channels preserves blocks verbatim") {
    Rng rng(23);
    Tensor a = oracle::random_tensor({2, 3, 2}, rng);
    Tensor b = oracle::random_tensor({3, 3, 2}, rng);
    Tensor y = concat_channels(a, b);
    CHECK(y.shape() == std::vector<int>{5, 3, 2});
    for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(y.data()[i] == a.data()[i]);
    for (std::size_t i = 0; i < b.data().size(); ++i)
      CHECK(y.data()[a.data().size() + i] == b.data()[i]);
  }
  SUBCASE("softmax rows are non-negative and sum to one") {
    Rng rng(29);
    Tensor x = oracle::random_tensor({4, 5}, rng, -3.0, 3.0);
    Tensor y = softmax(x);
    for (int r = 0; r < 4; ++r) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) {
        const double v = y.at({r, k});
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("backward populates leaf gradients") {
  SUBCASE("loss = sum(x) gives an all-ones gradient") {
    Tape tape;
    Tensor x = tape.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    tape.backward(sum(x));
    for (const double g : *x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("loss = sum(x*x) gives 2x") {
    Tape tape;
    Tensor x = tape.leaf({4}, {1.0, -2.0, 0.5, 3.0});
    tape.backward(sum(elem_mul(x, x)));
    for (std::size_t i = 0; i < 4; ++i) CHECK((*x.grad())[i] == 2.0 * x.data()[i]);
  }
  SUBCASE("non-scalar loss throws") {
    Tape tape;
    Tensor x = tape.leaf({3}, {1, 2, 3});
    CHECK_THROWS(tape.backward(x));
  }
  SUBCASE("composite graph matches central finite differences") {
    Rng rng(31);
    Tensor x = oracle::random_tensor({2, 3}, rng);
    const double err = finite_diff_check(
        [](Tape&, const Tensor& leaf) {
          return sum(elem_mul(sigmoid(leaf), softplus(scale(leaf, 1.7))));
        },
        x);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("finite_diff_check reference cases") {
  Rng rng(37);
  SUBCASE("linear map") {
    Tensor x = oracle::random_tensor({4}, rng);
    Tensor w = oracle::random_tensor({2, 4}, rng);
    Tensor b = oracle::random_tensor({2}, rng);
    const double err = finite_diff_check(
        [&](Tape&, const Tensor& leaf) { return sum(linear(leaf, w, b)); }, x);
    CHECK(err < 1e-9);
  }
  SUBCASE("sigmoid chain") {
    Tensor x = oracle::random_tensor({3}, rng);
    const double err = finite_diff_check(
        [](Tape&, const Tensor& leaf) { return sum(sigmoid(sigmoid(leaf))); }, x, 1e-5);
    CHECK(err < 1e-5);
  }
  SUBCASE("softmax cross-entropy graph") {
    Tensor x = oracle::random_tensor({4}, rng);
    const double err = finite_diff_check(
        [](Tape&, const Tensor& leaf) { return scale(pick(log_softmax(leaf), 2), -1.0); }, x,
        1e-5);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("every registered op passes the finite-difference suite") {
  for (const auto& check : registered_op_checks()) {
    INFO(check.name);
    CHECK(check.run() < 1e-5);
  }
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(41);
  Tensor x = oracle::random_tensor({2, 6, 6}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor y1 = softplus(conv2d(x, w));
  Tensor y2 = softplus(conv2d(x, w));
  for (std::size_t i = 0; i < y1.data().size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("op error paths") {
  CHECK_THROWS(add(Tensor::zeros({2}), Tensor::zeros({3})));
  CHECK_THROWS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 3, 3, 3})));
  CHECK_THROWS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::from({1, 2, 2, 2},
                                                             std::vector<double>(8, 0.0))));
  CHECK_THROWS(pick(Tensor::zeros({3}), 5));
  CHECK_THROWS(spatial_mul(Tensor::zeros({2, 3, 3}), Tensor::zeros({2, 2})));
  Tape t1, t2;
  Tensor a = t1.leaf({2}, {1, 2});
  Tensor b = t2.leaf({2}, {3, 4});
  CHECK_THROWS(add(a, b));
}

TEST_CASE("CDT1 serialization") {
  SUBCASE("byte layout is pinned") {
    Tensor t = Tensor::from({2}, {1.0, -2.0});
    const auto bytes = cdt1_bytes(t);
    REQUIRE(bytes.size() == 4 + 4 + 4 + 16);
    CHECK(bytes[0] == 'C');
    CHECK(bytes[1] == 'D');
    CHECK(bytes[2] == 'T');
    CHECK(bytes[3] == '1');
    // rank 1, dim 2, little-endian
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 2);
    // 1.0 = 0x3FF0000000000000 little-endian
    CHECK(bytes[12 + 6] == 0xF0);
    CHECK(bytes[12 + 7] == 0x3F);
  }
  SUBCASE("round trip preserves shape and values, including rank 0") {
    Rng rng(43);
    for (const auto& shape :
         std::vector<std::vector<int>>{{}, {1}, {3}, {2, 3}, {2, 3, 4}, {1, 2, 1, 2}}) {
      Tensor t = oracle::random_tensor(shape, rng);
      std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
      write_cdt1(ss, t);
      Tensor u = read_cdt1(ss);
      CHECK(u.shape() == t.shape());
      for (std::size_t i = 0; i < t.data().size(); ++i) CHECK(u.data()[i] == t.data()[i]);
    }
  }
  SUBCASE("bad magic is a data error") {
    std::stringstream ss("XXXXgarbage");
    CHECK_THROWS(read_cdt1(ss));
  }
}

TEST_CASE("checkpoint container round trip") {
  Rng rng(47);
  Checkpoint ckpt;
  ckpt.tensors.emplace("layer.w", oracle::random_tensor({3, 2}, rng));
  ckpt.tensors.emplace("layer.b", oracle::random_tensor({3}, rng));
  ckpt.meta_json = "{\"format_version\":1,\"k\":4}";
  const std::string path = "ckpt_test.bin";
  save_checkpoint(path, ckpt);
  Checkpoint back = load_checkpoint(path);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors.at("layer.w").shape() == std::vector<int>{3, 2});
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(back.tensors.at("layer.w").data()[i] == ckpt.tensors.at("layer.w").data()[i]);
  CHECK(back.meta_json.find("format_version") != std::string::npos);
  std::remove(path.c_str());
}
