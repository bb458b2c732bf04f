#include "avasd/attack.hpp"
#include "avasd/model.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace avasd;
using namespace avasd::test;

namespace {

const ModelDims kSmall{3, 5, 4};

struct Input {
  MatD x_a, x_v;
  std::vector<int> y;
};

Input random_input(Rng& rng, const ModelDims& d, ad::Index k) {
  return {random_matrix(rng, k, d.audio_dim), random_matrix(rng, k, d.video_dim, 0, 1),
          random_labels(rng, static_cast<std::size_t>(k))};
}

ForwardTrace<double> run(ad::Tape<double>& t, const ModelParams<double>& p, const Input& in) {
  return forward(bind(t, p, false), t.constant(in.x_a), t.constant(in.x_v));
}

std::vector<double> column(const MatD& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

TEST_CASE("trace shapes for E = 8, K = 5") {
  Rng rng(1);
  const ModelDims d{16, 64, 8};
  const auto p = init_params<double>(d, 3);
  ad::Tape<double> t;
  const auto tr = run(t, p, random_input(rng, d, 5));
  for (const auto* v : {&tr.e_a, &tr.e_v, &tr.z_a, &tr.z_v}) {
    CHECK(v->rows() == 5);
    CHECK(v->cols() == 8);
  }
  for (const auto* v : {&tr.s_av, &tr.s_a, &tr.s_v}) {
    CHECK(v->rows() == 5);
    CHECK(v->cols() == 1);
  }
}

TEST_CASE("zero-weight heads emit sigmoid(bias)") {
  Rng rng(2);
  auto p = init_params<double>(kSmall, 4);
  p[Param::kHeadAvW].setZero();
  p[Param::kHeadAudioW].setZero();
  p[Param::kHeadVideoW].setZero();
  p[Param::kHeadAvB](0, 0) = 0.3;
  p[Param::kHeadAudioB](0, 0) = -1.2;
  p[Param::kHeadVideoB](0, 0) = 2.0;
  ad::Tape<double> t;
  const auto tr = run(t, p, random_input(rng, kSmall, 6));
  auto sig = [](double b) { return 1.0 / (1.0 + std::exp(-b)); };
  for (ad::Index k = 0; k < 6; ++k) {
    CHECK(tr.s_av.value()(k, 0) == sig(0.3));
    CHECK(tr.s_a.value()(k, 0) == sig(-1.2));
    CHECK(tr.s_v.value()(k, 0) == sig(2.0));
  }
}

TEST_CASE("a single frame attends only to itself") {
  Rng rng(3);
  const auto p = init_params<double>(kSmall, 5);
  const auto in = random_input(rng, kSmall, 1);
  ad::Tape<double> t;
  const auto tr = run(t, p, in);

  // With one key, every attention output is that key's value row.
  MatD za = tr.e_a.value() + tr.e_v.value() * p[Param::kCrossAudioValue];
  MatD zv = tr.e_v.value() + tr.e_a.value() * p[Param::kCrossVideoValue];
  auto norm = [](MatD z) {
    const double mu = z.mean();
    const double var = (z.array() - mu).square().mean();
    return MatD((z.array() - mu) / std::sqrt(var + 1e-5));
  };
  za = norm(za);
  zv = norm(zv);
  MatD joint(1, 8);
  joint << za, zv;
  const MatD temporal = joint + joint * p[Param::kSelfValue];
  const double logit = (temporal * p[Param::kHeadAvW])(0, 0) + p[Param::kHeadAvB](0, 0);
  CHECK(tr.logit_av.value()(0, 0) == doctest::Approx(logit).epsilon(1e-12));

  // Appending another frame leaves the first frame's front-end untouched.
  Input two = in;
  two.x_a.conservativeResize(2, Eigen::NoChange);
  two.x_v.conservativeResize(2, Eigen::NoChange);
  two.x_a.row(1) = random_matrix(rng, 1, kSmall.audio_dim);
  two.x_v.row(1) = random_matrix(rng, 1, kSmall.video_dim);
  ad::Tape<double> t2;
  const auto tr2 = run(t2, p, two);
  CHECK(tr2.e_a.value().row(0) == tr.e_a.value().row(0));
}

TEST_CASE("forward rejects mismatched inputs") {
  const auto p = init_params<double>(kSmall, 1);
  ad::Tape<double> t;
  const auto b = bind(t, p, false);
  CHECK_THROWS_AS(forward(b, t.constant(MatD::Zero(3, 3)), t.constant(MatD::Zero(4, 5))),
                  ad::ShapeError);
  CHECK_THROWS_AS(forward(b, t.constant(MatD::Zero(3, 2)), t.constant(MatD::Zero(3, 5))),
                  ad::ShapeError);
  CHECK_THROWS_AS(forward(b, t.constant(MatD::Zero(0, 3)), t.constant(MatD::Zero(0, 5))),
                  ad::ShapeError);
}

TEST_CASE("ce_loss examples") {
  const double half[] = {0.5, 0.5};
  const int y10[] = {1, 0};
  CHECK(ce_loss(half, y10) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const double perfect[] = {1.0, 0.0, 1.0};
  const int y101[] = {1, 0, 1};
  CHECK(ce_loss(perfect, y101) < 1e-6);

  const double s[] = {0.9, 0.2, 0.7};
  const double oracle = -(std::log(0.9) + std::log(1.0 - 0.2) + std::log(0.7)) / 3.0;
  CHECK(ce_loss(s, y101) == doctest::Approx(oracle).epsilon(1e-12));

  CHECK_THROWS_AS(ce_loss(s, y10), ad::ShapeError);
}

TEST_CASE("combined loss weights the heads 1.0 / 0.4 / 0.4") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = init_params<double>(kSmall, 100 + trial);
    const auto in = random_input(rng, kSmall, 7);
    ad::Tape<double> t;
    const auto tr = run(t, p, in);
    const double l_av = ce_loss(column(tr.s_av.value()), in.y);
    const double l_a = ce_loss(column(tr.s_a.value()), in.y);
    const double l_v = ce_loss(column(tr.s_v.value()), in.y);
    CHECK(combined_ce_loss(tr, in.y).item() ==
          doctest::Approx(l_av + 0.4 * l_a + 0.4 * l_v).epsilon(1e-10));
  }
}

TEST_CASE("identical heads give 1.8 times the head loss") {
  Rng rng(7);
  auto p = init_params<double>(kSmall, 8);
  for (auto w : {Param::kHeadAvW, Param::kHeadAudioW, Param::kHeadVideoW}) p[w].setZero();
  for (auto b : {Param::kHeadAvB, Param::kHeadAudioB, Param::kHeadVideoB}) p[b](0, 0) = 0.7;
  const auto in = random_input(rng, kSmall, 5);
  ad::Tape<double> t;
  const auto tr = run(t, p, in);
  const double l = head_loss(tr.logit_av, in.y).item();
  CHECK(combined_ce_loss(tr, in.y).item() == doctest::Approx(1.8 * l).epsilon(1e-12));
}

TEST_CASE("zero auxiliary losses leave the audio-visual term") {
  Rng rng(8);
  auto p = init_params<double>(kSmall, 9);
  p[Param::kHeadAudioW].setZero();
  p[Param::kHeadVideoW].setZero();
  // All-speaking labels and a saturated positive bias drive both heads to zero loss.
  p[Param::kHeadAudioB](0, 0) = 60.0;
  p[Param::kHeadVideoB](0, 0) = 60.0;
  auto in = random_input(rng, kSmall, 4);
  std::fill(in.y.begin(), in.y.end(), 1);
  ad::Tape<double> t;
  const auto tr = run(t, p, in);
  CHECK(combined_ce_loss(tr, in.y).item() ==
        doctest::Approx(head_loss(tr.logit_av, in.y).item()).epsilon(1e-12));
}

TEST_CASE("parameter gradients of the training loss match finite differences") {
  Rng rng(9);
  for (const bool cross : {true, false}) {
    CAPTURE(cross);
    const auto p = init_params<double>(kSmall, 11, cross);
    const auto in = random_input(rng, kSmall, 4);
    std::vector<MatD> blocks;
    std::vector<int> index;
    for (int i = 0; i < kParamCount; ++i) {
      if (!is_trainable(static_cast<Param>(i))) continue;
      blocks.push_back(p.blocks[i]);
      index.push_back(i);
    }
    const auto fn = [&](ad::Tape<double>& t, const std::vector<VarD>& vars) {
      BoundParams<double> b = bind(t, p, false);
      for (std::size_t k = 0; k < index.size(); ++k) b.vars[index[k]] = vars[k];
      return combined_ce_loss(forward(b, t.constant(in.x_a), t.constant(in.x_v)), in.y);
    };
    CHECK(gradient_error(fn, blocks, 1e-5, 1e-6) < 1e-3);
  }
}

TEST_CASE("end-to-end input gradients match finite differences") {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = init_params<double>(kSmall, 20 + trial);
    const auto in = random_input(rng, kSmall, 5);
    for (const auto scenario : {Scenario::kTrainingAware, Scenario::kInferenceAware}) {
      const auto obj = model_objective(p, in.y, scenario);
      const auto fn = [&](ad::Tape<double>& t, const std::vector<VarD>& x) {
        return obj(t, x[0], x[1]);
      };
      CHECK(gradient_error(fn, {in.x_a, in.x_v}, 1e-5, 1e-6) < 1e-3);
    }
  }
}

TEST_CASE("grad_wrt_input on simple losses") {
  Rng rng(12);
  const MatD xa = random_matrix(rng, 3, 2), xv = random_matrix(rng, 3, 4);
  const Objective<double> linear = [](ad::Tape<double>&, const VarD& a, const VarD& v) {
    return ad::sum(a) + ad::scale(ad::sum(v), 0.0);
  };
  const auto g1 = grad_wrt_input(linear, xa, xv);
  CHECK(g1.grad_a == MatD::Ones(3, 2));
  CHECK(g1.grad_v == MatD::Zero(3, 4));

  const Objective<double> separable = [](ad::Tape<double>&, const VarD& a, const VarD& v) {
    return ad::sum(ad::mul(a, a)) + ad::sum(v);
  };
  const auto g2 = grad_wrt_input(separable, xa, xv);
  CHECK(g2.grad_a == 2.0 * xa);
  CHECK(g2.grad_v == MatD::Ones(3, 4));
}

TEST_CASE("permuting frames permutes the front-end embeddings") {
  Rng rng(13);
  const auto p = init_params<double>(kSmall, 14);
  const auto in = random_input(rng, kSmall, 6);
  std::vector<ad::Index> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  Input shuffled = in;
  for (ad::Index k = 0; k < 6; ++k) {
    shuffled.x_a.row(k) = in.x_a.row(perm[k]);
    shuffled.x_v.row(k) = in.x_v.row(perm[k]);
  }
  ad::Tape<double> t1, t2;
  const auto a = run(t1, p, in);
  const auto b = run(t2, p, shuffled);
  for (ad::Index k = 0; k < 6; ++k) {
    CHECK(b.e_a.value().row(k) == a.e_a.value().row(perm[k]));
    CHECK(b.e_v.value().row(k) == a.e_v.value().row(perm[k]));
  }
}

TEST_CASE("scores stay in [0, 1] for extreme inputs") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = init_params<float>(kSmall, 30 + trial);
    const double mag = std::pow(10.0, rng.uniform(-3, 6));
    const auto in = random_input(rng, kSmall, rng.uniform_int(1, 20));
    ad::Tape<float> t;
    const auto tr = forward(bind(t, p, false), t.constant((mag * in.x_a).cast<float>()),
                            t.constant((mag * in.x_v).cast<float>()));
    for (const auto* s : {&tr.s_av, &tr.s_a, &tr.s_v}) {
      CHECK(s->value().allFinite());
      CHECK(s->value().minCoeff() >= 0.0f);
      CHECK(s->value().maxCoeff() <= 1.0f);
    }
  }
}

TEST_CASE("every trainable block receives a gradient at initialization") {
  Rng rng(16);
  const auto p = init_params<double>(ModelDims{}, 17);
  const auto in = random_input(rng, ModelDims{}, 12);
  ad::Tape<double> t;
  const auto b = bind(t, p, true);
  t.backward(combined_ce_loss(forward(b, t.constant(in.x_a), t.constant(in.x_v)), in.y));
  for (int i = 0; i < kParamCount; ++i) {
    if (!is_trainable(static_cast<Param>(i))) continue;
    CAPTURE(kParamNames[i]);
    CHECK(b.vars[i].grad().cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("cast to double and back is lossless") {
  const auto p = init_params<float>(ModelDims{}, 18);
  const auto q = p.cast<double>().cast<float>();
  for (int i = 0; i < kParamCount; ++i) CHECK(q.blocks[i] == p.blocks[i]);
}
