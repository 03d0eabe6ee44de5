#include <set>

#include "doctest.h"
#include "fedda/rng.hpp"

using fedda::SeedStream;
using fedda::mix_seed;

TEST_CASE("same seed gives the same stream") {
  SeedStream a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  SeedStream c(8);
  CHECK(SeedStream(7).next_u64() != c.next_u64());
}

TEST_CASE("mix_seed is order sensitive") {
  CHECK(mix_seed({1, 2, 3}) == mix_seed({1, 2, 3}));
  CHECK(mix_seed({1, 2, 3}) != mix_seed({3, 2, 1}));
  CHECK(mix_seed({1, 2}) != mix_seed({1, 2, 0}));
}

TEST_CASE("uniform and below stay in range") {
  SeedStream r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7u);
  }
}

TEST_CASE("normal has roughly unit moments") {
  SeedStream r(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("shuffle is a permutation and reproducible") {
  std::vector<int> a(50), b;
  for (int i = 0; i < 50; ++i) a[i] = i;
  b = a;
  SeedStream r1(5), r2(5);
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
  CHECK(std::set<int>(a.begin(), a.end()).size() == 50u);
}

TEST_CASE("derived streams are independent of draws from the parent") {
  SeedStream p(9);
  SeedStream d1 = p.derive({1, 2});
  p.next_u64();
  SeedStream d2 = p.derive({1, 2});
  CHECK(d1 == d2);
  CHECK(!(p.derive({1, 3}) == d1));
}
