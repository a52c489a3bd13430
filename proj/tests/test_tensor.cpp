#include "doctest.h"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "airlab/tensor.hpp"

using namespace airlab;

namespace {

// Checks that `fn` throws `E` and the message mentions every fragment.
template <typename E, typename Fn>
void check_throws_mentioning(Fn&& fn, std::initializer_list<const char*> fragments) {
  bool threw = false;
  try {
    fn();
  } catch (const E& e) {
    threw = true;
    const std::string msg = e.what();
    for (const char* frag : fragments) {
      INFO("message: ", msg, " fragment: ", frag);
      CHECK(msg.find(frag) != std::string::npos);
    }
  }
  CHECK(threw);
}

TensorD random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  return TensorD::randn(std::move(shape), rng, scale);
}

// Probes the full Jacobian of op(x) by checking d/dx of sum(w * op(x)) for a
// fixed random weighting w.
double fd_weighted(const std::function<TensorD(const TensorD&)>& op, const TensorD& x, Rng& rng) {
  TensorD probe_out;
  {
    NoGradGuard ng;
    probe_out = op(x);
  }
  TensorD w = TensorD::randn(probe_out.shape, rng, 1.0);
  auto f = [&](const TensorD& in) { return sum(mul(op(in), w)); };
  return grad_check<double>(f, x, 1e-4);
}

TEST_SUITE("tensor") {

TEST_CASE("softmax of a uniform row is uniform") {
  TensorD x = TensorD::from_data({1, 4}, {0.7, 0.7, 0.7, 0.7});
  TensorD y = softmax_rows(x);
  for (int j = 0; j < 4; ++j) CHECK((*y.data)[j] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(11);
  TensorD x = random_tensor({7, 13}, rng, 5.0);
  TensorD y = softmax_rows(x);
  for (int i = 0; i < 7; ++i) {
    double s = 0;
    for (int j = 0; j < 13; ++j) s += (*y.data)[i * 13 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("matmul by identity is identity") {
  Rng rng(3);
  TensorD a = random_tensor({3, 5}, rng);
  TensorD eye = TensorD::zeros({3, 3});
  for (int i = 0; i < 3; ++i) (*eye.data)[i * 3 + i] = 1.0;
  TensorD c = matmul(eye, a);
  for (int i = 0; i < 15; ++i) CHECK((*c.data)[i] == doctest::Approx((*a.data)[i]).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits is log of vocab size") {
  TensorD logits = TensorD::from_data({1, 4}, {0.0, 0.0, 0.0, 0.0});
  TensorD loss = cross_entropy_rows(logits, {2});
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy is nonnegative and sum equals mean times count") {
  Rng rng(5);
  TensorD logits = random_tensor({6, 9}, rng, 2.0);
  std::vector<int> targets = {1, 0, 8, 3, 3, 7};
  std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1};
  TensorD lm = cross_entropy_rows(logits, targets, mask, Reduction::Mean);
  TensorD ls = cross_entropy_rows(logits, targets, mask, Reduction::Sum);
  CHECK(lm.item() >= 0.0);
  CHECK(ls.item() == doctest::Approx(lm.item() * 4.0).epsilon(1e-10));
}

TEST_CASE("causal mask plus softmax yields lower-triangular averaging") {
  TensorD x = TensorD::zeros({3, 3});
  TensorD y = softmax_rows(causal_mask_fill(x));
  const std::vector<double> want = {1, 0, 0, 0.5, 0.5, 0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
  for (int i = 0; i < 9; ++i) CHECK((*y.data)[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("rope is the identity at position zero and preserves pair norms") {
  Rng rng(7);
  TensorD x = random_tensor({4, 6}, rng);
  TensorD y = rope_rows(x);
  for (int j = 0; j < 6; ++j) CHECK((*y.data)[j] == doctest::Approx((*x.data)[j]).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) {
    for (int p = 0; p < 3; ++p) {
      const double x0 = (*x.data)[i * 6 + 2 * p], x1 = (*x.data)[i * 6 + 2 * p + 1];
      const double y0 = (*y.data)[i * 6 + 2 * p], y1 = (*y.data)[i * 6 + 2 * p + 1];
      CHECK(std::hypot(x0, x1) == doctest::Approx(std::hypot(y0, y1)).epsilon(1e-10));
    }
  }
}

TEST_CASE("forward passes are deterministic") {
  Rng rng1(99), rng2(99);
  TensorD a = random_tensor({5, 8}, rng1);
  TensorD b = random_tensor({5, 8}, rng2);
  CHECK(std::memcmp(a.ptr(), b.ptr(), sizeof(double) * 40) == 0);
  TensorD y1 = softmax_rows(a);
  TensorD y2 = softmax_rows(b);
  CHECK(std::memcmp(y1.ptr(), y2.ptr(), sizeof(double) * 40) == 0);
}

TEST_CASE("finite differences agree with backward for every primitive") {
  int probes = 0;
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(1000 + seed);
    const int m = 2 + rng.uniform_int(3);
    const int n = 2 + rng.uniform_int(3);

    auto check_op = [&](const char* name, const std::function<TensorD(const TensorD&)>& op,
                        const TensorD& x) {
      const double err = fd_weighted(op, x, rng);
      INFO("op: ", name, " seed: ", seed);
      CHECK(err < 1e-5);
      ++probes;
    };

    const TensorD x = random_tensor({m, n}, rng);
    const TensorD other = random_tensor({m, n}, rng);
    const TensorD rowvec = random_tensor({n}, rng);

    check_op("add", [&](const TensorD& t) { return add(t, other); }, x);
    check_op("add_bcast_lhs", [&](const TensorD& t) { return add(t, rowvec); }, x);
    check_op("add_bcast_rhs", [&](const TensorD& t) { return add(x, t); }, rowvec);
    check_op("sub", [&](const TensorD& t) { return sub(t, other); }, x);
    check_op("sub_rhs", [&](const TensorD& t) { return sub(other, t); }, x);
    check_op("mul", [&](const TensorD& t) { return mul(t, other); }, x);
    check_op("scale", [&](const TensorD& t) { return scale(t, -1.7); }, x);
    check_op("add_scalar", [&](const TensorD& t) { return add_scalar(t, 0.9); }, x);
    check_op("silu", [&](const TensorD& t) { return silu(t); }, x);
    check_op("softplus", [&](const TensorD& t) { return softplus(t); }, x);
    check_op("softmax", [&](const TensorD& t) { return softmax_rows(t); }, x);
    check_op("rmsnorm_x", [&](const TensorD& t) { return rmsnorm_rows(t, rowvec); }, x);
    check_op("rmsnorm_w", [&](const TensorD& t) { return rmsnorm_rows(x, t); }, rowvec);
    check_op("rope", [&](const TensorD& t) { return rope_rows(t); }, random_tensor({m, 4}, rng));
    check_op("slice", [&](const TensorD& t) { return slice_cols(t, 1, n - 1); }, x);
    check_op("sum", [&](const TensorD& t) { return sum(t); }, x);
    check_op("mean", [&](const TensorD& t) { return mean(t); }, x);

    const TensorD lhs = random_tensor({m, 4}, rng);
    const TensorD rhs = random_tensor({4, n}, rng);
    check_op("matmul_a", [&](const TensorD& t) { return matmul(t, rhs); }, lhs);
    check_op("matmul_b", [&](const TensorD& t) { return matmul(lhs, t); }, rhs);
    const TensorD rhs_t = random_tensor({n, 4}, rng);
    check_op("matmul_nt_a", [&](const TensorD& t) { return matmul_nt(t, rhs_t); }, lhs);
    check_op("matmul_nt_b", [&](const TensorD& t) { return matmul_nt(lhs, t); }, rhs_t);

    std::vector<int> ids;
    for (int i = 0; i < 5; ++i) ids.push_back(rng.uniform_int(m));
    check_op("embedding", [&](const TensorD& t) { return embedding_rows(t, ids); }, x);

    const TensorD parts_b = random_tensor({m, 3}, rng);
    check_op("concat", [&](const TensorD& t) { return concat_cols<double>({t, parts_b, t}); }, x);

    const TensorD square = random_tensor({m, m}, rng);
    check_op("causal_softmax", [&](const TensorD& t) { return softmax_rows(causal_mask_fill(t)); },
             square);

    std::vector<int> targets;
    std::vector<uint8_t> ce_mask;
    for (int i = 0; i < m; ++i) {
      targets.push_back(rng.uniform_int(n));
      ce_mask.push_back(static_cast<uint8_t>(rng.uniform_int(2)));
    }
    ce_mask[0] = 1;
    check_op("ce_mean",
             [&](const TensorD& t) { return cross_entropy_rows(t, targets, ce_mask, Reduction::Mean); },
             x);
    check_op("ce_sum",
             [&](const TensorD& t) { return cross_entropy_rows(t, targets, ce_mask, Reduction::Sum); },
             x);
  }
  CHECK(probes >= 100);
}

TEST_CASE("finite differences agree through a composite chain") {
  Rng rng(77);
  const TensorD x = random_tensor({4, 6}, rng);
  const TensorD w = random_tensor({6}, rng, 0.5);
  const TensorD proj = random_tensor({6, 5}, rng, 0.5);
  std::vector<int> targets = {4, 0, 2, 2};
  std::vector<uint8_t> mask = {0, 1, 1, 1};

  auto chain_x = [&](const TensorD& t) {
    return cross_entropy_rows(matmul(rmsnorm_rows(t, w), proj), targets, mask, Reduction::Mean);
  };
  CHECK(grad_check<double>(chain_x, x, 1e-4) < 1e-5);

  auto chain_proj = [&](const TensorD& t) {
    return cross_entropy_rows(matmul(rmsnorm_rows(x, w), t), targets, mask, Reduction::Mean);
  };
  CHECK(grad_check<double>(chain_proj, proj, 1e-4) < 1e-5);
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  TensorD x = TensorD::from_data({2}, {3.0, -1.0}, /*requires_grad=*/true);
  TensorD y = sum(mul(x, x));  // d/dx = 2x
  backward(y);
  CHECK((*x.grad)[0] == doctest::Approx(6.0));
  CHECK((*x.grad)[1] == doctest::Approx(-2.0));
}

TEST_CASE("grad_check on a quadratic is near machine precision") {
  Rng rng(21);
  TensorD x = random_tensor({3, 3}, rng);
  auto f = [](const TensorD& t) { return sum(mul(t, t)); };
  CHECK(grad_check<double>(f, x, 1e-4) < 1e-6);
}

TEST_CASE("grad_check reports zero for a constant function") {
  Rng rng(22);
  TensorD x = random_tensor({2, 2}, rng);
  auto f = [](const TensorD&) { return TensorD::scalar(3.5); };
  CHECK(grad_check<double>(f, x, 1e-4) == 0.0);
}

TEST_CASE("grad_check rejects out-of-range eps") {
  TensorD x = TensorD::from_data({1}, {1.0});
  auto f = [](const TensorD& t) { return sum(t); };
  check_throws_mentioning<std::invalid_argument>([&] { grad_check<double>(f, x, 0.0); }, {"eps"});
  check_throws_mentioning<std::invalid_argument>([&] { grad_check<double>(f, x, -1e-4); }, {"eps"});
  check_throws_mentioning<std::invalid_argument>([&] { grad_check<double>(f, x, 0.5); }, {"eps"});
}

TEST_CASE("grad_check rejects non-finite losses") {
  TensorD x = TensorD::from_data({1}, {1.0});
  auto f = [](const TensorD& t) { return scale(t, std::numeric_limits<double>::infinity()); };
  CHECK_THROWS_AS(grad_check<double>(f, x, 1e-4), std::runtime_error);
}

TEST_CASE("second backward through the same graph throws") {
  TensorD x = TensorD::from_data({2}, {1.0, 2.0}, /*requires_grad=*/true);
  TensorD y = sum(mul(x, x));
  backward(y);
  check_throws_mentioning<std::runtime_error>([&] { backward(y); }, {"already consumed"});
}

TEST_CASE("backward requires a scalar root") {
  TensorD x = TensorD::from_data({2}, {1.0, 2.0}, /*requires_grad=*/true);
  TensorD y = mul(x, x);
  check_throws_mentioning<std::invalid_argument>([&] { backward(y); }, {"scalar", "[2]"});
}

TEST_CASE("no-grad scope records no graph") {
  TensorD x = TensorD::from_data({2}, {1.0, 2.0}, /*requires_grad=*/true);
  NoGradGuard ng;
  TensorD y = mul(x, x);
  CHECK_FALSE(y.requires_grad);
  CHECK(y.node == nullptr);
}

TEST_CASE("shape mismatches name the op and both shapes") {
  TensorD a = TensorD::zeros({2, 3});
  TensorD b = TensorD::zeros({4, 5});
  check_throws_mentioning<std::invalid_argument>([&] { matmul(a, b); }, {"matmul", "[2,3]", "[4,5]"});
  check_throws_mentioning<std::invalid_argument>([&] { add(a, b); }, {"add", "[2,3]", "[4,5]"});
  check_throws_mentioning<std::invalid_argument>([&] { mul(a, b); }, {"mul", "[2,3]", "[4,5]"});
  check_throws_mentioning<std::invalid_argument>([&] { rmsnorm_rows(a, b); }, {"rmsnorm"});
  check_throws_mentioning<std::invalid_argument>([&] { matmul_nt(a, b); },
                                                 {"matmul_nt", "[2,3]", "[4,5]"});
}

TEST_CASE("embedding rejects out-of-range ids") {
  TensorD table = TensorD::zeros({4, 2});
  check_throws_mentioning<std::out_of_range>([&] { embedding_rows(table, {0, 4}); },
                                             {"embedding", "4"});
  check_throws_mentioning<std::out_of_range>([&] { embedding_rows(table, {-1}); }, {"embedding"});
}

TEST_CASE("cross entropy rejects bad targets and empty masks") {
  TensorD logits = TensorD::zeros({2, 3});
  check_throws_mentioning<std::out_of_range>(
      [&] { cross_entropy_rows(logits, {0, 3}); }, {"cross_entropy", "3"});
  check_throws_mentioning<std::invalid_argument>(
      [&] { cross_entropy_rows(logits, {0, 1}, {0, 0}, Reduction::Mean); }, {"cross_entropy", "mask"});
}

TEST_CASE("rng streams fork deterministically and independently") {
  Rng a(123), b(123);
  CHECK(a.next_u64() == b.next_u64());
  Rng fa = a.fork(7);
  Rng fb = b.fork(7);
  CHECK(fa.next_u64() == fb.next_u64());
  Rng fc = b.fork(8);
  CHECK(fa.next_u64() != fc.next_u64());
}

TEST_CASE("rng normal has roughly unit scale") {
  Rng rng(55);
  double s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s2 += v * v;
  }
  CHECK(std::sqrt(s2 / n) == doctest::Approx(1.0).epsilon(0.05));
}

}  // TEST_SUITE

}  // namespace
