#include "avasd/data.hpp"

#include "avasd/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace avasd {
namespace {

// Sample records keep float32 precision end to end: dumped with the shortest
// round-trip float representation and parsed with strtof.
using FloatJson = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t,
                                       std::uint64_t, float>;

constexpr std::array<CaseTag, 4> kCases = {
    CaseTag::kSpeechWithSpeaker, CaseTag::kSpeechWithoutSpeaker, CaseTag::kNoAudibleSpeaker,
    CaseTag::kSpeakerWithoutSpeech};

constexpr std::uint64_t kPatternStream = 0xa0d10ULL;

Eigen::VectorXd unit_direction(Rng& rng, int dim) {
  Eigen::VectorXd d(dim);
  for (int i = 0; i < dim; ++i) d(i) = rng.normal();
  return d / d.norm();
}

int sample_case(Rng& rng, const std::array<double, 4>& mix) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    acc += mix[i];
    if (u < acc) return i;
  }
  for (int i = 3; i >= 0; --i) {
    if (mix[i] > 0.0) return i;
  }
  return 0;
}

FloatJson matrix_to_json(const ad::Matrix<float>& m) {
  FloatJson rows = FloatJson::array();
  for (ad::Index r = 0; r < m.rows(); ++r) {
    FloatJson row = FloatJson::array();
    for (ad::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

ad::Matrix<float> matrix_from_json(const FloatJson& j, int cols, const std::string& where) {
  if (!j.is_array()) throw DataFormatError(where + ": expected an array of frames");
  ad::Matrix<float> m(static_cast<ad::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != static_cast<std::size_t>(cols)) {
      throw DataFormatError(where + ": frame " + std::to_string(r) + " must have " +
                            std::to_string(cols) + " values");
    }
    for (int c = 0; c < cols; ++c) {
      if (!row[c].is_number()) {
        throw DataFormatError(where + ": frame " + std::to_string(r) + " value " +
                              std::to_string(c) + " is not a number");
      }
      m(static_cast<ad::Index>(r), c) = row[c].get<float>();
    }
  }
  return m;
}

std::vector<int> binary_from_json(const FloatJson& j, const std::string& where) {
  if (!j.is_array()) throw DataFormatError(where + ": expected an array");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw DataFormatError(where + ": values must be 0 or 1");
    }
    out.push_back(v.get<int>());
  }
  return out;
}

nlohmann::json header_to_json(const GeneratorOptions& o, std::size_t n) {
  return {{"format", "avasd-dataset"},
          {"version", kGeneratorVersion},
          {"seed", o.seed},
          {"first_index", o.first_index},
          {"n", n},
          {"audio_dim", o.audio_dim},
          {"video_dim", o.video_dim},
          {"case_mix", o.case_mix},
          {"min_frames", o.min_frames},
          {"max_frames", o.max_frames},
          {"stay_probability", o.stay_probability},
          {"start_active_probability", o.start_active_probability},
          {"signal_amplitude", o.signal_amplitude},
          {"amplitude_jitter", o.amplitude_jitter},
          {"audio_scale", o.audio_scale}};
}

}  // namespace

std::string_view to_string(CaseTag tag) {
  switch (tag) {
    case CaseTag::kSpeechWithSpeaker: return "speech-with-speaker";
    case CaseTag::kSpeechWithoutSpeaker: return "speech-without-speaker";
    case CaseTag::kNoAudibleSpeaker: return "no-audible-speaker";
    case CaseTag::kSpeakerWithoutSpeech: return "speaker-without-speech";
  }
  return "unknown";
}

CaseTag case_from_string(std::string_view s) {
  for (CaseTag t : kCases) {
    if (to_string(t) == s) return t;
  }
  throw DataFormatError("unknown case tag '" + std::string(s) + "'");
}

void GeneratorOptions::validate() const {
  double total = 0.0;
  for (double f : case_mix) {
    if (!std::isfinite(f) || f < 0.0) throw std::invalid_argument("case-mix fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("case-mix fractions must sum to 1 (got " + std::to_string(total) +
                                ")");
  }
  if (n_samples < 0) throw std::invalid_argument("n_samples must be non-negative");
  if (audio_dim < 1 || video_dim < 1) throw std::invalid_argument("feature dims must be positive");
  if (min_frames < 1 || max_frames < min_frames) {
    throw std::invalid_argument("frame range must satisfy 1 <= min_frames <= max_frames");
  }
  if (stay_probability < 0.0 || stay_probability > 1.0 || start_active_probability < 0.0 ||
      start_active_probability > 1.0) {
    throw std::invalid_argument("chain probabilities must lie in [0, 1]");
  }
  if (!(audio_scale > 0.0)) throw std::invalid_argument("audio_scale must be positive");
}

Dataset generate_dataset(const GeneratorOptions& options) {
  options.validate();
  if (options.n_samples < 1) throw std::invalid_argument("n_samples must be at least 1");
  Dataset ds;
  ds.options = options;

  Rng pattern_rng(derive_seed(options.seed, kPatternStream));
  const Eigen::VectorXd audio_dir = unit_direction(pattern_rng, options.audio_dim);
  const Eigen::VectorXd video_dir = unit_direction(pattern_rng, options.video_dim);

  ds.samples.reserve(static_cast<std::size_t>(options.n_samples));
  for (int i = 0; i < options.n_samples; ++i) {
    AVSample s;
    s.seed = derive_seed(options.seed, options.first_index + static_cast<std::uint64_t>(i));
    Rng rng(s.seed);
    const int frames = rng.uniform_int(options.min_frames, options.max_frames);
    s.tag = kCases[sample_case(rng, options.case_mix)];
    const bool audio_on = s.tag == CaseTag::kSpeechWithSpeaker ||
                          s.tag == CaseTag::kSpeechWithoutSpeaker;
    const bool video_on = s.tag == CaseTag::kSpeechWithSpeaker ||
                          s.tag == CaseTag::kSpeakerWithoutSpeech;

    s.active.resize(frames);
    bool state = rng.bernoulli(options.start_active_probability);
    for (int t = 0; t < frames; ++t) {
      if (t > 0 && !rng.bernoulli(options.stay_probability)) state = !state;
      s.active[t] = state ? 1 : 0;
    }

    s.audio.resize(frames, options.audio_dim);
    s.video.resize(frames, options.video_dim);
    s.labels.assign(frames, 0);
    for (int t = 0; t < frames; ++t) {
      const double amplitude =
          options.signal_amplitude * std::max(0.0, 1.0 + options.amplitude_jitter * rng.normal());
      const bool on = s.active[t] != 0;
      for (int c = 0; c < options.audio_dim; ++c) {
        const double signal = on && audio_on ? amplitude * audio_dir(c) : 0.0;
        s.audio(t, c) = static_cast<float>(options.audio_scale * (rng.normal() + signal));
      }
      for (int c = 0; c < options.video_dim; ++c) {
        const double signal = on && video_on ? amplitude * video_dir(c) : 0.0;
        s.video(t, c) = static_cast<float>(rng.normal() + signal);
      }
      s.labels[t] = on && s.tag == CaseTag::kSpeechWithSpeaker ? 1 : 0;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << header_to_json(ds.options, ds.samples.size()).dump() << '\n';
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const AVSample& s = ds.samples[i];
    FloatJson rec;
    rec["index"] = i;
    rec["case"] = std::string(to_string(s.tag));
    rec["seed"] = s.seed;
    rec["frames"] = s.frames();
    rec["labels"] = s.labels;
    rec["active"] = s.active;
    rec["audio"] = matrix_to_json(s.audio);
    rec["video"] = matrix_to_json(s.video);
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError(path.string() + ": cannot open");
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return path.string() + ":" + std::to_string(line_no); };

  if (!std::getline(in, line)) throw DataFormatError(path.string() + ":1: missing header");
  ++line_no;
  Dataset ds;
  std::size_t n = 0;
  try {
    const auto h = nlohmann::json::parse(line);
    if (h.at("format") != "avasd-dataset") throw DataFormatError(where() + ": not a dataset file");
    if (h.at("version").get<int>() != kGeneratorVersion) {
      throw DataFormatError(where() + ": unsupported version " + h.at("version").dump());
    }
    auto& o = ds.options;
    o.seed = h.at("seed").get<std::uint64_t>();
    o.first_index = h.value("first_index", std::uint64_t{0});
    n = h.at("n").get<std::size_t>();
    o.n_samples = static_cast<int>(n);
    o.audio_dim = h.at("audio_dim").get<int>();
    o.video_dim = h.at("video_dim").get<int>();
    o.case_mix = h.at("case_mix").get<std::array<double, 4>>();
    o.min_frames = h.at("min_frames").get<int>();
    o.max_frames = h.at("max_frames").get<int>();
    o.stay_probability = h.at("stay_probability").get<double>();
    o.start_active_probability = h.at("start_active_probability").get<double>();
    o.signal_amplitude = h.at("signal_amplitude").get<double>();
    o.amplitude_jitter = h.at("amplitude_jitter").get<double>();
    o.audio_scale = h.at("audio_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError(where() + ": bad header: " + e.what());
  }

  ds.samples.reserve(n);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    FloatJson rec;
    try {
      rec = FloatJson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError(where() + ": " + e.what());
    }
    try {
      AVSample s;
      s.tag = case_from_string(rec.at("case").get<std::string>());
      s.seed = rec.at("seed").get<std::uint64_t>();
      const int frames = rec.at("frames").get<int>();
      s.labels = binary_from_json(rec.at("labels"), where() + " labels");
      s.active = binary_from_json(rec.at("active"), where() + " active");
      s.audio = matrix_from_json(rec.at("audio"), ds.options.audio_dim, where() + " audio");
      s.video = matrix_from_json(rec.at("video"), ds.options.video_dim, where() + " video");
      if (static_cast<int>(s.labels.size()) != frames ||
          static_cast<int>(s.active.size()) != frames || s.audio.rows() != frames ||
          s.video.rows() != frames) {
        throw DataFormatError(where() + ": frame counts disagree");
      }
      ds.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError(where() + ": " + e.what());
    }
  }
  if (ds.samples.size() != n) {
    throw DataFormatError(path.string() + ": header announces " + std::to_string(n) +
                          " samples, found " + std::to_string(ds.samples.size()));
  }
  return ds;
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  auto mix_floats = [&mix](const ad::Matrix<float>& m) {
    for (ad::Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, m.data() + i, sizeof bits);
      mix(bits);
    }
  };
  mix(ds.samples.size());
  for (const auto& s : ds.samples) {
    mix(static_cast<std::uint64_t>(s.frames()));
    mix(static_cast<std::uint64_t>(s.tag));
    mix(s.seed);
    for (int y : s.labels) mix(static_cast<std::uint64_t>(y));
    mix_floats(s.audio);
    mix_floats(s.video);
  }
  return h;
}

namespace {
template <typename Get>
ad::Matrix<double> stack(std::span<const AVSample> samples, Get get) {
  ad::Index rows = 0, cols = 0;
  for (const auto& s : samples) {
    rows += get(s).rows();
    cols = get(s).cols();
  }
  ad::Matrix<double> out(rows, cols);
  ad::Index r = 0;
  for (const auto& s : samples) {
    out.middleRows(r, get(s).rows()) = get(s).template cast<double>();
    r += get(s).rows();
  }
  return out;
}
}  // namespace

ad::Matrix<double> stack_audio(std::span<const AVSample> samples) {
  return stack(samples, [](const AVSample& s) -> const ad::Matrix<float>& { return s.audio; });
}

ad::Matrix<double> stack_video(std::span<const AVSample> samples) {
  return stack(samples, [](const AVSample& s) -> const ad::Matrix<float>& { return s.video; });
}

double speech_frame_fraction(const Dataset& ds) {
  std::size_t speech = 0, total = 0;
  for (const auto& s : ds.samples) {
    const bool audible = s.tag == CaseTag::kSpeechWithSpeaker ||
                         s.tag == CaseTag::kSpeechWithoutSpeaker;
    for (int a : s.active) speech += audible && a ? 1 : 0;
    total += s.active.size();
  }
  return total ? static_cast<double>(speech) / static_cast<double>(total) : 0.0;
}

}  // namespace avasd
