#pragma once

// Generic helpers over parameter structs. A parameter struct exposes
//   template <class F> void for_each(F&& f);        // f(std::string name, Mat|Vec&)
//   template <class F> void for_each(F&& f) const;
// visiting every array in a fixed order.

#include <bit>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "negtrain/common.hpp"
#include "negtrain/rng.hpp"

namespace negtrain {

template <class P>
std::vector<std::span<double>> flat_views(P& params) {
  std::vector<std::span<double>> out;
  params.for_each([&](const std::string&, auto& m) {
    out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  });
  return out;
}

template <class P>
std::vector<std::span<const double>> flat_views(const P& params) {
  std::vector<std::span<const double>> out;
  params.for_each([&](const std::string&, const auto& m) {
    out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  });
  return out;
}

template <class P>
P zeros_like(const P& params) {
  P out = params;
  out.for_each([](const std::string&, auto& m) { m.setZero(); });
  return out;
}

template <class P>
void set_zero(P& params) {
  params.for_each([](const std::string&, auto& m) { m.setZero(); });
}

// dst += scale * src
template <class P>
void axpy(P& dst, double scale, const P& src) {
  auto d = flat_views(dst);
  auto s = flat_views(src);
  for (std::size_t k = 0; k < d.size(); ++k) {
    for (std::size_t i = 0; i < d[k].size(); ++i) d[k][i] += scale * s[k][i];
  }
}

template <class P>
void scale_all(P& params, double scale) {
  params.for_each([&](const std::string&, auto& m) { m *= scale; });
}

template <class P>
double squared_norm(const P& params) {
  double total = 0.0;
  params.for_each([&](const std::string&, const auto& m) { total += m.squaredNorm(); });
  return total;
}

template <class P>
bool all_finite(const P& params) {
  bool ok = true;
  params.for_each([&](const std::string&, const auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <class P>
std::size_t parameter_count(const P& params) {
  std::size_t n = 0;
  params.for_each([&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

// Rescales grads so that their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <class P>
double clip_global_norm(P& grads, double max_norm) {
  const double norm = std::sqrt(squared_norm(grads));
  if (norm > max_norm && norm > 0.0) scale_all(grads, max_norm / norm);
  return norm;
}

template <class P>
void init_uniform(P& params, Rng& rng, double radius) {
  params.for_each([&](const std::string&, auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-radius, radius);
  });
}

template <class P>
bool bitwise_equal(const P& a, const P& b) {
  auto va = flat_views(a);
  auto vb = flat_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t k = 0; k < va.size(); ++k) {
    if (va[k].size() != vb[k].size()) return false;
    for (std::size_t i = 0; i < va[k].size(); ++i) {
      if (std::bit_cast<std::uint64_t>(va[k][i]) != std::bit_cast<std::uint64_t>(vb[k][i])) return false;
    }
  }
  return true;
}

}  // namespace negtrain
