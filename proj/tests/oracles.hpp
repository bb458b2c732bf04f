// Plain-loop reference implementations shared by the unit tests and the
// acceptance run. Nothing here touches the tape.

#pragma once

#include "support.hpp"

#include <cmath>
#include <vector>

namespace avasd::test {

inline double dot(const MatD& a, const MatD& b) {
  double s = 0.0;
  for (ad::Index j = 0; j < a.size(); ++j) s += a.data()[j] * b.data()[j];
  return s;
}

inline double cos_ref(const MatD& a, const MatD& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

struct RefCenters {
  MatD as, ans, vs, vns;
};

inline RefCenters centers_ref(const MatD& ea, const MatD& ev, const std::vector<int>& y) {
  const ad::Index e = ea.cols();
  RefCenters c{MatD::Zero(1, e), MatD::Zero(1, e), MatD::Zero(1, e), MatD::Zero(1, e)};
  int ns = 0, nn = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (ad::Index j = 0; j < e; ++j) {
      const auto r = static_cast<ad::Index>(i);
      if (y[i]) {
        c.as(0, j) += ea(r, j);
        c.vs(0, j) += ev(r, j);
      } else {
        c.ans(0, j) += ea(r, j);
        c.vns(0, j) += ev(r, j);
      }
    }
    (y[i] ? ns : nn)++;
  }
  c.as /= ns;
  c.vs /= ns;
  c.ans /= nn;
  c.vns /= nn;
  return c;
}

inline double l1_ref(const RefCenters& c) { return cos_ref(c.as, c.ans) + cos_ref(c.vs, c.vns); }

inline double l2_ref(const MatD& ea, const MatD& ev, const std::vector<int>& y,
                     const RefCenters& c) {
  double s = 0.0, n = 0.0, ks = 0.0, kn = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto r = static_cast<ad::Index>(i);
    if (y[i]) {
      s += cos_ref(c.as, ea.row(r)) + cos_ref(c.vs, ev.row(r));
      ks += 1;
    } else {
      n += cos_ref(c.ans, ea.row(r)) + cos_ref(c.vns, ev.row(r));
      kn += 1;
    }
  }
  return -(s / ks + n / kn);
}

inline double l3_ref(const RefCenters& c) {
  return -(cos_ref(c.as, c.vs) + cos_ref(c.ans, c.vns));
}

inline double l4_ref(const MatD& ea, const MatD& ev, const std::vector<int>& y) {
  double s = 0.0, n = 0.0, ks = 0.0, kn = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto r = static_cast<ad::Index>(i);
    double d = 0.0;
    for (ad::Index j = 0; j < ea.cols(); ++j) d += std::pow(ev(r, j) - ea(r, j), 2);
    (y[i] ? s : n) += std::sqrt(d);
    (y[i] ? ks : kn) += 1;
  }
  return s / ks + n / kn;
}

// Binary cross-entropy of probabilities, averaged over frames.
inline double bce_ref(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    total -= y[i] ? std::log(s[i]) : std::log(1.0 - s[i]);
  }
  return total / static_cast<double>(s.size());
}

// Ranks by descending score, ties by original position, with a selection
// sort; then averages precision at every positive rank.
inline double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<bool> used(s.size(), false);
  double hits = 0.0, sum = 0.0;
  for (std::size_t rank = 1; rank <= s.size(); ++rank) {
    std::size_t best = s.size();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!used[i] && (best == s.size() || s[i] > s[best])) best = i;
    }
    used[best] = true;
    if (y[best]) {
      hits += 1.0;
      sum += hits / static_cast<double>(rank);
    }
  }
  return sum / hits;
}

inline double ecr_ref(const MatD& clean, const MatD& adv) {
  double total = 0.0;
  for (ad::Index i = 0; i < clean.rows(); ++i) {
    double num = 0.0, den = 0.0;
    for (ad::Index j = 0; j < clean.cols(); ++j) {
      num += std::pow(clean(i, j) - adv(i, j), 2);
      den += std::pow(clean(i, j), 2);
    }
    total += std::sqrt(num) / std::sqrt(den);
  }
  return total / static_cast<double>(clean.rows());
}

inline std::vector<int> both_classes(Rng& rng, std::size_t k) {
  auto y = random_labels(rng, k);
  y[0] = 1;
  y[1] = 0;
  return y;
}

}  // namespace avasd::test
