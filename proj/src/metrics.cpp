#include "avasd/metrics.hpp"

#include "avasd/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace avasd {

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw MetricError("average_precision: " + std::to_string(scores.size()) + " scores vs " +
                      std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double positives = 0.0, precision_sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      positives += 1.0;
      precision_sum += positives / static_cast<double>(rank + 1);
    }
  }
  if (positives == 0.0) throw MetricError("average_precision: no positive labels");
  return precision_sum / positives;
}

EcrResult ecr(const ad::Matrix<float>& z_clean, const ad::Matrix<float>& z_adv) {
  if (z_clean.rows() != z_adv.rows() || z_clean.cols() != z_adv.cols()) {
    throw MetricError("ecr: shape mismatch");
  }
  EcrResult r;
  double total = 0.0;
  for (ad::Index i = 0; i < z_clean.rows(); ++i) {
    const Eigen::RowVectorXd c = z_clean.row(i).cast<double>();
    const double norm = c.norm();
    if (norm <= 1e-8) {
      ++r.rows_skipped;
      continue;
    }
    total += (c - z_adv.row(i).cast<double>()).norm() / norm;
    ++r.rows_used;
  }
  if (r.rows_used == 0) throw MetricError("ecr: every clean embedding row is degenerate");
  r.ratio = total / static_cast<double>(r.rows_used);
  return r;
}

namespace {

struct SampleResult {
  std::vector<double> scores;
  ad::Matrix<float> z_a_clean, z_v_clean, z_a_adv, z_v_adv;
};

struct Scored {
  std::vector<double> scores;
  ad::Matrix<float> z_a, z_v;
};

Scored score(const ModelParams<float>& params, const ad::Matrix<float>& x_a,
             const ad::Matrix<float>& x_v) {
  ad::Tape<float> tape;
  const auto bound = bind(tape, params, false);
  const auto tr = forward(bound, tape.constant(x_a), tape.constant(x_v));
  Scored s;
  const auto& v = tr.s_av.value();
  s.scores.assign(v.data(), v.data() + v.size());
  s.z_a = tr.z_a.value();
  s.z_v = tr.z_v.value();
  return s;
}

ad::Matrix<float> stack_rows(const std::vector<SampleResult>& results,
                             ad::Matrix<float> SampleResult::*field) {
  ad::Index rows = 0, cols = 0;
  for (const auto& r : results) {
    rows += (r.*field).rows();
    cols = (r.*field).cols();
  }
  ad::Matrix<float> out(rows, cols);
  ad::Index at = 0;
  for (const auto& r : results) {
    out.middleRows(at, (r.*field).rows()) = r.*field;
    at += (r.*field).rows();
  }
  return out;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

std::vector<double> predict(const ModelParams<float>& params, const AVSample& sample) {
  return score(params, sample.audio, sample.video).scores;
}

EvalReport evaluate(const ModelParams<float>& params, std::span<const AVSample> samples,
                    const std::optional<AttackConfig>& attack, const EvalOptions& options) {
  if (samples.empty()) throw MetricError("evaluate: empty dataset");
  if (attack) attack->validate();
  const ModelParams<float>& crafter = options.crafting_model ? *options.crafting_model : params;
  if (crafter.dims != params.dims) {
    throw ad::ShapeError("substitute and target models take different input shapes");
  }

  std::vector<SampleResult> results(samples.size());
  parallel_for(samples.size(), options.jobs, [&](std::size_t i) {
    const AVSample& s = samples[i];
    auto clean = score(params, s.audio, s.video);
    SampleResult& r = results[i];
    if (!attack) {
      r.scores = std::move(clean.scores);
      return;
    }
    AttackConfig cfg = *attack;
    cfg.seed = derive_seed(attack->seed, i);
    const auto pair = run_attack(crafter, s.audio, s.video, s.labels, cfg);
    auto adv = score(params, pair.x_a, pair.x_v);
    r.scores = std::move(adv.scores);
    r.z_a_clean = std::move(clean.z_a);
    r.z_v_clean = std::move(clean.z_v);
    r.z_a_adv = std::move(adv.z_a);
    r.z_v_adv = std::move(adv.z_v);
  });

  EvalReport report;
  std::vector<double> all_scores;
  std::vector<int> all_labels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    all_scores.insert(all_scores.end(), results[i].scores.begin(), results[i].scores.end());
    all_labels.insert(all_labels.end(), samples[i].labels.begin(), samples[i].labels.end());
    report.traces.push_back({i, results[i].scores, samples[i].labels});
  }
  report.samples = samples.size();
  report.frames = all_scores.size();
  report.map = average_precision(all_scores, all_labels);
  if (attack) {
    const auto ea = ecr(stack_rows(results, &SampleResult::z_a_clean),
                        stack_rows(results, &SampleResult::z_a_adv));
    const auto ev = ecr(stack_rows(results, &SampleResult::z_v_clean),
                        stack_rows(results, &SampleResult::z_v_adv));
    report.ecr_a = ea.ratio;
    report.ecr_v = ev.ratio;
    report.ecr_rows_skipped = ea.rows_skipped + ev.rows_skipped;
  }

  Dataset view;
  view.samples.assign(samples.begin(), samples.end());
  std::ostringstream fp;
  fp << "model=" << hex(params_hash(params)) << ";data=" << hex(dataset_hash(view))
     << ";attack=" << (attack ? attack->fingerprint() : std::string("none"));
  if (options.crafting_model) fp << ";crafting_model=" << hex(params_hash(crafter));
  report.fingerprint = fp.str();
  return report;
}

EvalReport transfer_attack(const ModelParams<float>& substitute,
                           const ModelParams<float>& target, std::span<const AVSample> samples,
                           const AttackConfig& attack, int jobs) {
  EvalOptions options;
  options.jobs = jobs;
  options.crafting_model = &substitute;
  return evaluate(target, samples, attack, options);
}

double frame_accuracy(const ModelParams<float>& params, std::span<const AVSample> samples) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : samples) {
    const auto scores = predict(params, s);
    for (std::size_t t = 0; t < scores.size(); ++t) {
      correct += (scores[t] >= 0.5) == (s.labels[t] == 1) ? 1 : 0;
    }
    total += scores.size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

std::vector<std::size_t> correctly_predicted(std::span<const ModelParams<float>* const> models,
                                             std::span<const AVSample> samples, int jobs) {
  std::vector<char> ok(samples.size(), 1);
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    for (const auto* m : models) {
      const auto scores = predict(*m, samples[i]);
      for (std::size_t t = 0; t < scores.size(); ++t) {
        if ((scores[t] >= 0.5) != (samples[i].labels[t] == 1)) {
          ok[i] = 0;
          return;
        }
      }
    }
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (ok[i]) out.push_back(i);
  }
  return out;
}

std::vector<AVSample> select(std::span<const AVSample> samples,
                             std::span<const std::size_t> indices) {
  std::vector<AVSample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(samples[i]);
  return out;
}

std::uint64_t params_hash(const ModelParams<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(params.cross_attention ? 1 : 0);
  for (const auto& block : params.blocks) {
    mix(static_cast<std::uint64_t>(block.rows()));
    mix(static_cast<std::uint64_t>(block.cols()));
    for (ad::Index i = 0; i < block.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, block.data() + i, sizeof bits);
      mix(bits);
    }
  }
  return h;
}

}  // namespace avasd
