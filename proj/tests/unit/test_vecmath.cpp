#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "glaff/random.hpp"
#include "vecmath.hpp"

namespace vec = glaff::vec;

TEST_CASE("erf agrees with the standard library") {
  glaff::Rng rng(5);
  std::vector<double> x;
  for (int i = 0; i < 20000; ++i) x.push_back(rng.uniform(-7.0, 7.0));
  for (int i = -2400; i <= 2400; ++i) x.push_back(i / 400.0);  // interval edges
  x.push_back(0.0);
  x.push_back(-0.0);
  x.push_back(1e-300);
  x.push_back(30.0);
  x.push_back(-30.0);
  std::vector<double> y(x.size());
  vec::erf(x.data(), y.data(), x.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(y[i] - std::erf(x[i])));
  CHECK(worst < 1e-15);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i]) <= 1.0);

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> special{inf, -inf, std::nan("")};
  vec::erf(special.data(), special.data(), special.size());
  CHECK(special[0] == 1.0);
  CHECK(special[1] == -1.0);
  CHECK(std::isnan(special[2]));
}

TEST_CASE("erf is odd and monotone") {
  std::vector<double> x, neg;
  for (int i = 0; i <= 6000; ++i) x.push_back(i / 1000.0);
  for (double v : x) neg.push_back(-v);
  std::vector<double> y(x.size()), z(x.size());
  vec::erf(x.data(), y.data(), x.size());
  vec::erf(neg.data(), z.data(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(z[i] == -y[i]);
  for (std::size_t i = 1; i < x.size(); ++i) CHECK(y[i] >= y[i - 1]);
}

TEST_CASE("exp agrees with the standard library") {
  glaff::Rng rng(6);
  std::vector<double> x;
  for (int i = 0; i < 10000; ++i) x.push_back(rng.uniform(-700.0, 700.0));
  for (int i = 0; i < 10000; ++i) x.push_back(rng.uniform(-5.0, 5.0));
  std::vector<double> y(x.size());
  vec::exp(x.data(), y.data(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(std::exp(x[i])).epsilon(1e-15));
  std::vector<double> special{-std::numeric_limits<double>::infinity(), -1000.0, 0.0};
  vec::exp(special.data(), special.data(), special.size());
  CHECK(special[0] == 0.0);
  CHECK(special[1] == 0.0);
  CHECK(special[2] == 1.0);
}

TEST_CASE("results do not depend on position or alignment") {
  glaff::Rng rng(7);
  std::vector<double> base(37);
  for (double& v : base) v = rng.uniform(-4.0, 4.0);
  std::vector<double> ref_exp(base.size()), ref_erf(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    vec::exp(&base[i], &ref_exp[i], 1);
    vec::erf(&base[i], &ref_erf[i], 1);
  }
  for (std::size_t offset = 0; offset < 5; ++offset) {
    std::vector<double> buf(offset + base.size());
    std::copy(base.begin(), base.end(), buf.begin() + static_cast<std::ptrdiff_t>(offset));
    std::vector<double> out(buf.size());
    vec::exp(buf.data() + offset, out.data() + offset, base.size());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(out[offset + i] == ref_exp[i]);
    vec::erf(buf.data() + offset, out.data() + offset, base.size());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(out[offset + i] == ref_erf[i]);
  }
}

TEST_CASE("hashed uniform stream") {
  double sum = 0.0;
  for (std::uint64_t i = 0; i < 100000; ++i) {
    const double u = vec::hashed_uniform(11, i);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(sum / 100000 == doctest::Approx(0.5).epsilon(0.01));
  CHECK(vec::hashed_uniform(11, 3) == vec::hashed_uniform(11, 3));
  CHECK(vec::hashed_uniform(11, 3) != vec::hashed_uniform(12, 3));
}
