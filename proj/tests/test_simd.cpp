#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "paa/rng.hpp"
#include "paa/simd.hpp"

using paa::CounterRng;
namespace simd = paa::simd;

namespace {

std::vector<float> rand_vec(std::size_t n, std::uint64_t key) {
  CounterRng rng(key);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-3.0, 3.0));
  return v;
}

std::vector<double> rand_dvec(std::size_t n, std::uint64_t key) {
  CounterRng rng(key);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-3.0, 3.0);
  return v;
}

bool bytes_equal(const void* a, const void* b, std::size_t n) {
  return std::memcmp(a, b, n) == 0;
}

struct IsaGuard {
  simd::Isa saved = simd::active_isa();
  ~IsaGuard() { simd::force_isa(saved); }
};

}  // namespace

TEST_CASE("fma_row matches the std::fma reference definition") {
  IsaGuard guard;
  simd::force_isa(simd::Isa::Scalar);
  for (std::size_t n : {1u, 7u, 8u, 9u, 64u, 129u}) {
    auto acc = rand_vec(n, 1000 + n);
    auto b = rand_vec(n, 2000 + n);
    float a = 1.7f;
    auto expect = acc;
    for (std::size_t j = 0; j < n; ++j)
      expect[j] = std::fma(a, b[j], expect[j]);
    simd::fma_row(acc.data(), a, b.data(), n);
    CHECK(bytes_equal(acc.data(), expect.data(), n * sizeof(float)));
  }
}

TEST_CASE("fma_row4 equals four sequential fma_row calls") {
  IsaGuard guard;
  for (simd::Isa isa : {simd::Isa::Scalar, simd::Isa::Avx2Fma}) {
    if (isa == simd::Isa::Avx2Fma && !simd::avx2_supported()) continue;
    simd::force_isa(isa);
    for (std::size_t n : {1u, 5u, 8u, 17u, 96u}) {
      auto acc1 = rand_vec(n, 3000 + n);
      auto acc2 = acc1;
      auto a = rand_vec(4, 4000 + n);
      auto b0 = rand_vec(n, 5000 + n), b1 = rand_vec(n, 6000 + n);
      auto b2 = rand_vec(n, 7000 + n), b3 = rand_vec(n, 8000 + n);
      simd::fma_row(acc1.data(), a[0], b0.data(), n);
      simd::fma_row(acc1.data(), a[1], b1.data(), n);
      simd::fma_row(acc1.data(), a[2], b2.data(), n);
      simd::fma_row(acc1.data(), a[3], b3.data(), n);
      simd::fma_row4(acc2.data(), a.data(), b0.data(), b1.data(), b2.data(),
                     b3.data(), n);
      CHECK(bytes_equal(acc1.data(), acc2.data(), n * sizeof(float)));
    }
  }
}

TEST_CASE("AVX2 variants are bit-identical to the scalar reference") {
  if (!simd::avx2_supported()) {
    MESSAGE("AVX2 not available; skipping cross-ISA checks");
    return;
  }
  IsaGuard guard;
  for (std::size_t n : {1u, 3u, 8u, 15u, 16u, 17u, 255u, 1024u}) {
    auto a = rand_vec(n, 10 + n);
    auto b = rand_vec(n, 20 + n);

    // fma_row float
    auto acc_s = rand_vec(n, 30 + n);
    auto acc_v = acc_s;
    simd::force_isa(simd::Isa::Scalar);
    simd::fma_row(acc_s.data(), 0.37f, b.data(), n);
    simd::force_isa(simd::Isa::Avx2Fma);
    simd::fma_row(acc_v.data(), 0.37f, b.data(), n);
    CHECK(bytes_equal(acc_s.data(), acc_v.data(), n * sizeof(float)));

    // fma_row double
    auto dacc_s = rand_dvec(n, 40 + n);
    auto dacc_v = dacc_s;
    auto db = rand_dvec(n, 50 + n);
    simd::force_isa(simd::Isa::Scalar);
    simd::fma_row(dacc_s.data(), -1.1, db.data(), n);
    simd::force_isa(simd::Isa::Avx2Fma);
    simd::fma_row(dacc_v.data(), -1.1, db.data(), n);
    CHECK(bytes_equal(dacc_s.data(), dacc_v.data(), n * sizeof(double)));

    std::vector<float> out_s(n), out_v(n);
    simd::force_isa(simd::Isa::Scalar);
    simd::add(out_s.data(), a.data(), b.data(), n);
    simd::force_isa(simd::Isa::Avx2Fma);
    simd::add(out_v.data(), a.data(), b.data(), n);
    CHECK(bytes_equal(out_s.data(), out_v.data(), n * sizeof(float)));

    simd::force_isa(simd::Isa::Scalar);
    simd::mul(out_s.data(), a.data(), b.data(), n);
    simd::force_isa(simd::Isa::Avx2Fma);
    simd::mul(out_v.data(), a.data(), b.data(), n);
    CHECK(bytes_equal(out_s.data(), out_v.data(), n * sizeof(float)));

    simd::force_isa(simd::Isa::Scalar);
    simd::axpby(out_s.data(), 0.7f, a.data(), 0.3f, b.data(), n);
    simd::force_isa(simd::Isa::Avx2Fma);
    simd::axpby(out_v.data(), 0.7f, a.data(), 0.3f, b.data(), n);
    CHECK(bytes_equal(out_s.data(), out_v.data(), n * sizeof(float)));

    simd::force_isa(simd::Isa::Scalar);
    simd::relu(out_s.data(), a.data(), n);
    simd::force_isa(simd::Isa::Avx2Fma);
    simd::relu(out_v.data(), a.data(), n);
    CHECK(bytes_equal(out_s.data(), out_v.data(), n * sizeof(float)));

    simd::force_isa(simd::Isa::Scalar);
    simd::clamp(out_s.data(), a.data(), -0.5f, 0.5f, n);
    simd::force_isa(simd::Isa::Avx2Fma);
    simd::clamp(out_v.data(), a.data(), -0.5f, 0.5f, n);
    CHECK(bytes_equal(out_s.data(), out_v.data(), n * sizeof(float)));
  }
}

TEST_CASE("force_isa overrides and restores the active ISA") {
  IsaGuard guard;
  simd::force_isa(simd::Isa::Scalar);
  CHECK(simd::active_isa() == simd::Isa::Scalar);
  CHECK(simd::isa_name(simd::Isa::Scalar) == "scalar");
  CHECK(simd::isa_name(simd::Isa::Avx2Fma) == "avx2+fma");
}
