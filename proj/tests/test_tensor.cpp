#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "hrformer/error.hpp"
#include "hrformer/init.hpp"
#include "hrformer/ops.hpp"
#include "hrformer/tensor_io.hpp"

using namespace hrformer;

TEST_CASE("tensor shape and element access") {
  Tensor t({2, 3, 4}, 1.5);
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(-1) == 4);
  CHECK(t.at({1, 2, 3}) == 1.5);
  t.at({1, 0, 2}) = 7.0;
  CHECK(t[1 * 12 + 0 * 4 + 2] == 7.0);
  CHECK_THROWS_AS(t.dim(3), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("copies share storage, clone does not") {
  Tensor a({3}, 1.0);
  Tensor b = a;
  b[0] = 5.0;
  CHECK(a[0] == 5.0);
  CHECK(a.same_storage(b));
  Tensor c = a.clone();
  c[1] = 9.0;
  CHECK(a[1] == 1.0);
  CHECK_FALSE(a.same_storage(c));
}

TEST_CASE("grad store takes the value shape") {
  Tensor t({2, 5});
  CHECK_FALSE(t.has_grad());
  t.mutable_grad()[3] = 1.0;
  CHECK(t.grad().size() == 10);
  CHECK(t.grad_tensor().shape() == t.shape());
  t.zero_grad();
  CHECK(t.grad()[3] == 0.0);
}

TEST_CASE("tape records only with an active scope and differentiable inputs") {
  Tensor a({2, 2}, 1.0), b({2, 2}, 2.0);
  CHECK(active_tape() == nullptr);
  add(a, b);
  GradTape tape;
  {
    TapeScope scope(tape);
    add(a, b);
    CHECK(tape.size() == 0);
    a.set_requires_grad(true);
    add(a, b);
    CHECK(tape.size() == 1);
  }
  CHECK(active_tape() == nullptr);
}

TEST_CASE("backward accumulates over shared uses and resets between calls") {
  Tensor x({3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad(true);
  for (int round = 0; round < 2; ++round) {
    GradTape tape;
    TapeScope scope(tape);
    // d/dx sum(x*x + x) = 2x + 1
    const Tensor loss = sum(add(mul(x, x), x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(x.grad()[2] == doctest::Approx(7.0));
  }
}

TEST_CASE("backward populates each leaf once per call") {
  Tensor x({2}, std::vector<double>{0.5, -1.0});
  x.set_requires_grad(true);
  GradTape tape;
  TapeScope scope(tape);
  const Tensor loss = sum(scale(x, 3.0));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == 3.0);
}

TEST_CASE("tensor dump layout") {
  Tensor t({2, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  std::ostringstream os;
  write_tensor(os, t);
  const std::string bytes = os.str();
  REQUIRE(bytes.size() == 4 + 4 + 3 * 8 + 6 * 8);
  CHECK(bytes.substr(0, 4) == "HRTN");
  CHECK(static_cast<unsigned char>(bytes[4]) == 3);
  CHECK(bytes[5] == 0);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[16]) == 1);
  CHECK(static_cast<unsigned char>(bytes[24]) == 3);
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 32, 8);
  CHECK(first == 1.0);
}

TEST_CASE("tensor dump roundtrip is bit exact") {
  Rng rng(3);
  const Tensor t = normal_tensor({2, 3, 4, 5}, rng);
  const auto path = std::filesystem::temp_directory_path() / "hrformer_roundtrip.bin";
  save_tensor(path, t);
  const Tensor back = load_tensor(path);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.raw(), t.raw(), static_cast<std::size_t>(t.size()) * sizeof(double)) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("tensor dump rejects bad input") {
  std::istringstream bad_magic(std::string("HRTX\0\0\0\0", 8));
  CHECK_THROWS(read_tensor(bad_magic));
  std::ostringstream os;
  write_tensor(os, Tensor({4}, 1.0));
  std::string truncated = os.str();
  truncated.resize(truncated.size() - 3);
  std::istringstream in(truncated);
  CHECK_THROWS(read_tensor(in));
}

TEST_CASE("seeded generators are reproducible") {
  Rng a(11), b(11), c(12);
  const Tensor x = normal_tensor({16}, a), y = normal_tensor({16}, b), z = normal_tensor({16}, c);
  CHECK(std::memcmp(x.raw(), y.raw(), 16 * sizeof(double)) == 0);
  CHECK(std::memcmp(x.raw(), z.raw(), 16 * sizeof(double)) != 0);
}

TEST_CASE("truncated normal stays within two standard deviations") {
  Rng rng(5);
  const Tensor t = truncated_normal({4000}, rng, 0.02);
  double sum2 = 0.0;
  for (double v : t.data()) {
    CHECK(std::abs(v) <= 0.04);
    sum2 += v * v;
  }
  // variance of a normal truncated at +-2 sigma is about 0.774 sigma^2
  CHECK(std::sqrt(sum2 / 4000) == doctest::Approx(0.02 * std::sqrt(0.774)).epsilon(0.05));
}

TEST_CASE("kaiming fan-out scale") {
  Rng rng(9);
  const Tensor w = kaiming_fan_out({64, 16, 3, 3}, rng);
  double sum2 = 0.0;
  for (double v : w.data()) sum2 += v * v;
  CHECK(std::sqrt(sum2 / static_cast<double>(w.size())) == doctest::Approx(std::sqrt(2.0 / (64 * 9))).epsilon(0.05));
  const Tensor dw = kaiming_fan_out({32, 1, 3, 3}, rng, 32);
  sum2 = 0.0;
  for (double v : dw.data()) sum2 += v * v;
  CHECK(std::sqrt(sum2 / static_cast<double>(dw.size())) == doctest::Approx(std::sqrt(2.0 / 9)).epsilon(0.15));
}
