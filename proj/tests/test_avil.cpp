#include "avasd/avil.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace avasd;
using namespace avasd::test;

namespace {

MatD rows(std::initializer_list<std::initializer_list<double>> r) {
  MatD m(static_cast<ad::Index>(r.size()), static_cast<ad::Index>(r.begin()->size()));
  ad::Index i = 0;
  for (const auto& row : r) {
    ad::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("centers of a single speech frame") {
  ad::Tape<double> t;
  const auto ea = t.constant(rows({{1, 2, 3}}));
  const auto ev = t.constant(rows({{4, 5, 6}}));
  const int y[] = {1};
  const auto c = compute_centers(ea, ev, y);
  CHECK(c.audio_speech->value() == ea.value());
  CHECK(c.video_speech->value() == ev.value());
  CHECK_FALSE(c.audio_nonspeech.has_value());
  CHECK_FALSE(c.video_nonspeech.has_value());
  CHECK_FALSE(c.has_nonspeech());
}

TEST_CASE("center of [1,0] and [0,1] is [0.5,0.5]") {
  ad::Tape<double> t;
  const auto ea = t.constant(rows({{1, 0}, {0, 1}}));
  const int y[] = {1, 1};
  const auto c = compute_centers(ea, ea, y);
  CHECK(c.audio_speech->value() == rows({{0.5, 0.5}}));
}

TEST_CASE("centers match per-class re-summation") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ad::Index k = trial == 0 ? 50 : rng.uniform_int(2, 64);
    const MatD ea = random_matrix(rng, k, 6), ev = random_matrix(rng, k, 6);
    const auto y = both_classes(rng, static_cast<std::size_t>(k));
    ad::Tape<double> t;
    const auto c = compute_centers(t.constant(ea), t.constant(ev), y);
    const auto r = centers_ref(ea, ev, y);
    CHECK((c.audio_speech->value() - r.as).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((c.audio_nonspeech->value() - r.ans).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((c.video_speech->value() - r.vs).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((c.video_nonspeech->value() - r.vns).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("compute_centers rejects bad batches") {
  ad::Tape<double> t;
  const auto a = t.constant(MatD::Ones(2, 3));
  const int one[] = {1};
  const int bad[] = {1, 2};
  CHECK_THROWS_AS(compute_centers(a, a, one), ad::ShapeError);
  CHECK_THROWS_AS(compute_centers(a, t.constant(MatD::Ones(2, 4)), std::span<const int>(bad)),
                  ad::ShapeError);
  CHECK_THROWS_AS(compute_centers(a, a, bad), std::invalid_argument);
}

TEST_CASE("L1 examples") {
  ad::Tape<double> t;
  const int y[] = {1, 0};
  // Same center in both classes.
  auto ea = t.constant(rows({{1, 2}, {1, 2}}));
  auto ev = t.constant(rows({{3, -1}, {3, -1}}));
  CHECK(loss_l1(compute_centers(ea, ev, y)).value->item() == doctest::Approx(2.0));
  // Antipodal.
  ea = t.constant(rows({{1, 2}, {-1, -2}}));
  ev = t.constant(rows({{3, -1}, {-3, 1}}));
  CHECK(loss_l1(compute_centers(ea, ev, y)).value->item() == doctest::Approx(-2.0));
}

TEST_CASE("L2 examples") {
  ad::Tape<double> t;
  const int y[] = {1, 0, 1, 0};
  const auto ea = t.constant(rows({{1, 2}, {0, 1}, {1, 2}, {0, 1}}));
  const auto ev = t.constant(rows({{5, 1}, {2, 2}, {5, 1}, {2, 2}}));
  CHECK(loss_l2(ea, ev, y, compute_centers(ea, ev, y)).value->item() ==
        doctest::Approx(-4.0));

  const int one[] = {1};
  const auto a1 = t.constant(rows({{0.3, -0.2}}));
  const auto v1 = t.constant(rows({{1, 1}}));
  const auto l = loss_l2(a1, v1, one, compute_centers(a1, v1, one));
  CHECK(l.value->item() == doctest::Approx(-2.0));
  CHECK(l.skipped == 1);
}

TEST_CASE("L3 examples") {
  ad::Tape<double> t;
  const int y[] = {1, 0};
  const auto e = t.constant(rows({{1, 2}, {-3, 1}}));
  CHECK(loss_l3(compute_centers(e, e, y)).value->item() == doctest::Approx(-2.0));
  const auto ea = t.constant(rows({{1, 0}, {0, 2}}));
  const auto ev = t.constant(rows({{0, 3}, {-1, 0}}));
  CHECK(loss_l3(compute_centers(ea, ev, y)).value->item() == doctest::Approx(0.0));
}

TEST_CASE("L4 examples") {
  ad::Tape<double> t;
  const int y[] = {1, 0};
  const auto e = t.constant(rows({{1, 2}, {-3, 1}}));
  CHECK(loss_l4(e, e, y).value->item() == 0.0);
  const auto ea = t.constant(rows({{0, 0}, {7, 7}}));
  const auto ev = t.constant(rows({{3, 4}, {7, 7}}));
  CHECK(loss_l4(ea, ev, y).value->item() == doctest::Approx(5.0));
}

TEST_CASE("all four losses match loop oracles on random batches") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const ad::Index k = rng.uniform_int(2, 64), e = rng.uniform_int(1, 8);
    const MatD ea = random_matrix(rng, k, e), ev = random_matrix(rng, k, e);
    const auto y = both_classes(rng, static_cast<std::size_t>(k));
    ad::Tape<double> t;
    const auto va = t.constant(ea), vv = t.constant(ev);
    const auto terms = avil_terms(va, vv, y);
    const auto r = centers_ref(ea, ev, y);
    CHECK(terms.skipped() == 0);
    CHECK(terms.terms[0].value->item() ==
          doctest::Approx(l1_ref(r)).epsilon(1e-6));
    CHECK(terms.terms[1].value->item() == doctest::Approx(l2_ref(ea, ev, y, r)).epsilon(1e-6));
    CHECK(terms.terms[2].value->item() ==
          doctest::Approx(l3_ref(r)).epsilon(1e-6));
    CHECK(terms.terms[3].value->item() == doctest::Approx(l4_ref(ea, ev, y)).epsilon(1e-6));

    CHECK(std::abs(terms.terms[0].value->item()) <= 2.0 + 1e-12);
    CHECK(std::abs(terms.terms[1].value->item()) <= 4.0 + 1e-12);
    CHECK(std::abs(terms.terms[2].value->item()) <= 2.0 + 1e-12);
    CHECK(terms.terms[3].value->item() >= 0.0);
  }
}

TEST_CASE("losses are permutation invariant and scale as documented") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const ad::Index k = rng.uniform_int(2, 20);
    const MatD ea = random_matrix(rng, k, 4), ev = random_matrix(rng, k, 4);
    const auto y = both_classes(rng, static_cast<std::size_t>(k));
    std::vector<ad::Index> perm(static_cast<std::size_t>(k));
    for (ad::Index i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    MatD pa(k, 4), pv(k, 4);
    std::vector<int> py(y.size());
    for (ad::Index i = 0; i < k; ++i) {
      const auto src = perm[static_cast<std::size_t>(i)];
      pa.row(i) = ea.row(src);
      pv.row(i) = ev.row(src);
      py[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(src)];
    }
    const double s = rng.uniform(0.1, 10);

    ad::Tape<double> t;
    const auto base = avil_terms(t.constant(ea), t.constant(ev), y);
    const auto permuted = avil_terms(t.constant(pa), t.constant(pv), py);
    const auto global = avil_terms(t.constant(MatD(s * ea)), t.constant(MatD(s * ev)), y);
    for (int j = 0; j < 4; ++j) {
      CHECK(permuted.terms[j].value->item() ==
            doctest::Approx(base.terms[j].value->item()).epsilon(1e-10));
    }
    // Centers are means, so rescaling individual rows moves them; only a
    // global scale leaves the cosine terms fixed.
    CHECK(global.terms[0].value->item() == doctest::Approx(base.terms[0].value->item()));
    CHECK(global.terms[1].value->item() == doctest::Approx(base.terms[1].value->item()));
    CHECK(global.terms[2].value->item() == doctest::Approx(base.terms[2].value->item()));
    CHECK(global.terms[3].value->item() ==
          doctest::Approx(s * base.terms[3].value->item()).epsilon(1e-10));
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(4);
  for (int j = 0; j < 4; ++j) {
    CAPTURE(j);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const ad::Index k = rng.uniform_int(2, 10);
      const auto y = both_classes(rng, static_cast<std::size_t>(k));
      const auto fn = [y, j](ad::Tape<double>&, const std::vector<VarD>& x) {
        return *avil_terms(x[0], x[1], y).terms[static_cast<std::size_t>(j)].value;
      };
      worst = std::max(worst, gradient_error(fn, {random_away_from_zero(rng, k, 4),
                                                  random_away_from_zero(rng, k, 4)},
                                             1e-5, 1e-6));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("a one-class batch skips the center terms") {
  Rng rng(5);
  ad::Tape<double> t;
  const auto ea = t.constant(random_matrix(rng, 4, 3));
  const auto ev = t.constant(random_matrix(rng, 4, 3));
  const int y[] = {0, 0, 0, 0};
  const auto terms = avil_terms(ea, ev, y);
  CHECK_FALSE(terms.terms[0].value.has_value());
  CHECK_FALSE(terms.terms[2].value.has_value());
  CHECK(terms.terms[1].value.has_value());
  CHECK(terms.terms[3].value.has_value());
  CHECK(terms.skipped() == 4);
  const double p = avil_penalty(t, terms, AvilWeights::uniform(0.1)).item();
  CHECK(std::isfinite(p));
  CHECK(p == doctest::Approx(0.1 * (terms.terms[1].value->item() +
                                    terms.terms[3].value->item())));
}

TEST_CASE("combined objective sums its parts") {
  Rng rng(6);
  const auto p = init_params<double>(ModelDims{3, 5, 4}, 7);
  for (int trial = 0; trial < 10; ++trial) {
    const ad::Index k = rng.uniform_int(2, 12);
    const MatD xa = random_matrix(rng, k, 3), xv = random_matrix(rng, k, 5);
    const auto y = both_classes(rng, static_cast<std::size_t>(k));
    AvilWeights w;
    for (auto& l : w.lambda) l = rng.uniform(0, 1);
    for (const auto source : {AvilSource::kFrontEnd, AvilSource::kCrossAttended}) {
      ad::Tape<double> t;
      const auto tr = forward(bind(t, p, false), t.constant(xa), t.constant(xv));
      const auto parts = combined_objective(tr, y, w, source);
      const bool front = source == AvilSource::kFrontEnd;
      const auto terms = avil_terms(front ? tr.e_a : tr.z_a, front ? tr.e_v : tr.z_v,
                                    std::span<const int>(y));
      double expect = combined_ce_loss(tr, y).item();
      for (int j = 0; j < 4; ++j) expect += w.lambda[j] * terms.terms[j].value->item();
      CHECK(parts.total.item() == doctest::Approx(expect).epsilon(1e-12));
    }
    ad::Tape<double> t;
    const auto tr = forward(bind(t, p, false), t.constant(xa), t.constant(xv));
    CHECK(combined_objective(tr, y, AvilWeights{}).total.item() ==
          combined_ce_loss(tr, y).item());
  }
}

TEST_CASE("weights must be finite and non-negative") {
  CHECK_NOTHROW(AvilWeights::uniform(0.1).validate());
  CHECK_THROWS_AS((AvilWeights{{0.1, -0.1, 0, 0}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AvilWeights{{0.1, NAN, 0, 0}}.validate()), std::invalid_argument);
}

TEST_CASE("source names round-trip") {
  for (const auto s : {AvilSource::kFrontEnd, AvilSource::kCrossAttended}) {
    CHECK(avil_source_from_string(to_string(s)) == s);
  }
  CHECK_THROWS(avil_source_from_string("z"));
}
