#include "avasd/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <functional>
#include <fstream>
#include <map>
#include <sstream>

namespace avasd {
namespace {

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += f(items[i]);
  }
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto t = trim(s);
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& s) {
  std::int64_t v = 0;
  const auto t = trim(s);
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto t = trim(s);
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

int parse_i32(const std::string& s) {
  const auto v = parse_int(s);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw std::invalid_argument("integer out of range: " + s);
  }
  return static_cast<int>(v);
}

bool parse_bool(const std::string& s) {
  const auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::string show_bool(bool b) { return b ? "true" : "false"; }

std::string show_opt_seed(const std::optional<std::uint64_t>& s) {
  return s ? std::to_string(*s) : std::string();
}

std::optional<std::uint64_t> parse_opt_seed(const std::string& s) {
  if (trim(s).empty()) return std::nullopt;
  return parse_u64(s);
}

std::optional<double> parse_opt_double(const std::string& s) {
  if (trim(s).empty()) return std::nullopt;
  return parse_double(s);
}

std::string show_opt_double(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

template <std::size_t N>
std::array<double, N> parse_fixed(const std::string& s, const char* what) {
  const auto items = split_list(s);
  if (items.size() != N) {
    throw std::invalid_argument(std::string(what) + " needs " + std::to_string(N) +
                                " comma-separated numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_double(items[i]);
  return out;
}

template <std::size_t N>
std::string show_fixed(const std::array<double, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ", ";
    out += fmt(a[i]);
  }
  return out;
}

template <typename T, typename Parse>
std::vector<T> parse_vec(const std::string& s, Parse parse) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(parse(item));
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

// The schema. Order here is the order of the resolved file.
const std::vector<Field>& schema() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Field> fields = {
      {"run", "seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, S v) { c.seed = parse_u64(v); }},
      {"run", "jobs", [](const C& c) { return std::to_string(c.jobs); },
       [](C& c, S v) { c.jobs = parse_i32(v); }},
      {"run", "out", [](const C& c) { return c.out; }, [](C& c, S v) { c.out = trim(v); }},

      {"data", "seed", [](const C& c) { return show_opt_seed(c.data.seed); },
       [](C& c, S v) { c.data.seed = parse_opt_seed(v); }},
      {"data", "train_samples", [](const C& c) { return std::to_string(c.data.train_samples); },
       [](C& c, S v) { c.data.train_samples = parse_i32(v); }},
      {"data", "test_samples", [](const C& c) { return std::to_string(c.data.test_samples); },
       [](C& c, S v) { c.data.test_samples = parse_i32(v); }},
      {"data", "case_mix", [](const C& c) { return show_fixed(c.data.generator.case_mix); },
       [](C& c, S v) { c.data.generator.case_mix = parse_fixed<4>(v, "case_mix"); }},
      {"data", "audio_dim", [](const C& c) { return std::to_string(c.data.generator.audio_dim); },
       [](C& c, S v) { c.data.generator.audio_dim = parse_i32(v); }},
      {"data", "video_dim", [](const C& c) { return std::to_string(c.data.generator.video_dim); },
       [](C& c, S v) { c.data.generator.video_dim = parse_i32(v); }},
      {"data", "min_frames", [](const C& c) { return std::to_string(c.data.generator.min_frames); },
       [](C& c, S v) { c.data.generator.min_frames = parse_i32(v); }},
      {"data", "max_frames", [](const C& c) { return std::to_string(c.data.generator.max_frames); },
       [](C& c, S v) { c.data.generator.max_frames = parse_i32(v); }},
      {"data", "stay_probability",
       [](const C& c) { return fmt(c.data.generator.stay_probability); },
       [](C& c, S v) { c.data.generator.stay_probability = parse_double(v); }},
      {"data", "start_active_probability",
       [](const C& c) { return fmt(c.data.generator.start_active_probability); },
       [](C& c, S v) { c.data.generator.start_active_probability = parse_double(v); }},
      {"data", "signal_amplitude",
       [](const C& c) { return fmt(c.data.generator.signal_amplitude); },
       [](C& c, S v) { c.data.generator.signal_amplitude = parse_double(v); }},
      {"data", "amplitude_jitter",
       [](const C& c) { return fmt(c.data.generator.amplitude_jitter); },
       [](C& c, S v) { c.data.generator.amplitude_jitter = parse_double(v); }},
      {"data", "audio_scale", [](const C& c) { return fmt(c.data.generator.audio_scale); },
       [](C& c, S v) { c.data.generator.audio_scale = parse_double(v); }},

      {"model", "name", [](const C& c) { return c.model.name; },
       [](C& c, S v) { c.model.name = trim(v); }},
      {"model", "seed", [](const C& c) { return show_opt_seed(c.model.seed); },
       [](C& c, S v) { c.model.seed = parse_opt_seed(v); }},
      {"model", "embed_dim", [](const C& c) { return std::to_string(c.model.embed_dim); },
       [](C& c, S v) { c.model.embed_dim = parse_i32(v); }},
      {"model", "cross_attention", [](const C& c) { return show_bool(c.model.cross_attention); },
       [](C& c, S v) { c.model.cross_attention = parse_bool(v); }},
      {"model", "loss_mode", [](const C& c) { return std::string(to_string(c.model.train.mode)); },
       [](C& c, S v) { c.model.train.mode = loss_mode_from_string(trim(v)); }},
      {"model", "lambda", [](const C& c) { return show_fixed(c.model.train.avil.lambda); },
       [](C& c, S v) { c.model.train.avil.lambda = parse_fixed<4>(v, "lambda"); }},
      {"model", "avil_source",
       [](const C& c) { return std::string(to_string(c.model.train.avil_source)); },
       [](C& c, S v) { c.model.train.avil_source = avil_source_from_string(trim(v)); }},
      {"model", "epochs", [](const C& c) { return std::to_string(c.model.train.epochs); },
       [](C& c, S v) { c.model.train.epochs = parse_i32(v); }},
      {"model", "batch_size", [](const C& c) { return std::to_string(c.model.train.batch_size); },
       [](C& c, S v) { c.model.train.batch_size = parse_i32(v); }},
      {"model", "learning_rate", [](const C& c) { return fmt(c.model.train.learning_rate); },
       [](C& c, S v) { c.model.train.learning_rate = parse_double(v); }},
      {"model", "momentum", [](const C& c) { return fmt(c.model.train.momentum); },
       [](C& c, S v) { c.model.train.momentum = parse_double(v); }},
      {"model", "max_grad_norm", [](const C& c) { return fmt(c.model.train.max_grad_norm); },
       [](C& c, S v) { c.model.train.max_grad_norm = parse_double(v); }},

      {"adversarial_training", "method",
       [](const C& c) { return std::string(to_string(c.model.train.adversarial.method)); },
       [](C& c, S v) { c.model.train.adversarial.method = attack_method_from_string(trim(v)); }},
      {"adversarial_training", "eps_av",
       [](const C& c) { return fmt(c.model.train.adversarial.eps_av); },
       [](C& c, S v) { c.model.train.adversarial.eps_av = parse_double(v); }},
      {"adversarial_training", "steps",
       [](const C& c) { return std::to_string(c.model.train.adversarial.steps); },
       [](C& c, S v) { c.model.train.adversarial.steps = parse_i32(v); }},
      {"adversarial_training", "modality",
       [](const C& c) { return std::string(to_string(c.model.train.adversarial.modality)); },
       [](C& c, S v) { c.model.train.adversarial.modality = modality_from_string(trim(v)); }},
      {"adversarial_training", "restarts",
       [](const C& c) { return std::to_string(c.model.train.adversarial.restarts); },
       [](C& c, S v) { c.model.train.adversarial.restarts = parse_i32(v); }},
      {"adversarial_training", "momentum",
       [](const C& c) { return fmt(c.model.train.adversarial.momentum); },
       [](C& c, S v) { c.model.train.adversarial.momentum = parse_double(v); }},
      {"adversarial_training", "refresh",
       [](const C& c) { return std::string(to_string(c.model.train.refresh)); },
       [](C& c, S v) { c.model.train.refresh = adversarial_refresh_from_string(trim(v)); }},
      {"adversarial_training", "source", [](const C& c) { return c.model.adversarial_source; },
       [](C& c, S v) { c.model.adversarial_source = trim(v); }},

      {"substitute", "enabled", [](const C& c) { return show_bool(c.substitute.enabled); },
       [](C& c, S v) { c.substitute.enabled = parse_bool(v); }},
      {"substitute", "seed", [](const C& c) { return show_opt_seed(c.substitute.seed); },
       [](C& c, S v) { c.substitute.seed = parse_opt_seed(v); }},
      {"substitute", "cross_attention",
       [](const C& c) { return show_bool(c.substitute.cross_attention); },
       [](C& c, S v) { c.substitute.cross_attention = parse_bool(v); }},

      {"attack", "methods",
       [](const C& c) {
         return join<AttackMethod>(c.attack.methods,
                                   [](const AttackMethod& m) { return std::string(to_string(m)); });
       },
       [](C& c, S v) {
         c.attack.methods = parse_vec<AttackMethod>(
             v, [](const std::string& s) { return attack_method_from_string(s); });
       }},
      {"attack", "eps_av",
       [](const C& c) {
         return join<double>(c.attack.eps_av, [](const double& e) { return fmt(e); });
       },
       [](C& c, S v) { c.attack.eps_av = parse_vec<double>(v, parse_double); }},
      {"attack", "modalities",
       [](const C& c) {
         return join<Modality>(c.attack.modalities,
                               [](const Modality& m) { return std::string(to_string(m)); });
       },
       [](C& c, S v) {
         c.attack.modalities =
             parse_vec<Modality>(v, [](const std::string& s) { return modality_from_string(s); });
       }},
      {"attack", "scenarios",
       [](const C& c) {
         return join<Scenario>(c.attack.scenarios,
                               [](const Scenario& s) { return std::string(to_string(s)); });
       },
       [](C& c, S v) {
         c.attack.scenarios =
             parse_vec<Scenario>(v, [](const std::string& s) { return scenario_from_string(s); });
       }},
      {"attack", "steps", [](const C& c) { return std::to_string(c.attack.base.steps); },
       [](C& c, S v) { c.attack.base.steps = parse_i32(v); }},
      {"attack", "step_a", [](const C& c) { return show_opt_double(c.attack.base.step_a); },
       [](C& c, S v) { c.attack.base.step_a = parse_opt_double(v); }},
      {"attack", "step_v", [](const C& c) { return show_opt_double(c.attack.base.step_v); },
       [](C& c, S v) { c.attack.base.step_v = parse_opt_double(v); }},
      {"attack", "momentum", [](const C& c) { return fmt(c.attack.base.momentum); },
       [](C& c, S v) { c.attack.base.momentum = parse_double(v); }},
      {"attack", "restarts", [](const C& c) { return std::to_string(c.attack.base.restarts); },
       [](C& c, S v) { c.attack.base.restarts = parse_i32(v); }},
      {"attack", "zero_init", [](const C& c) { return show_bool(c.attack.base.zero_init); },
       [](C& c, S v) { c.attack.base.zero_init = parse_bool(v); }},
      {"attack", "clamp_visual", [](const C& c) { return show_bool(c.attack.base.clamp_visual); },
       [](C& c, S v) { c.attack.base.clamp_visual = parse_bool(v); }},
      {"attack", "seed", [](const C& c) { return show_opt_seed(c.attack.seed); },
       [](C& c, S v) { c.attack.seed = parse_opt_seed(v); }},
      {"attack", "seeds", [](const C& c) { return std::to_string(c.attack.seeds); },
       [](C& c, S v) { c.attack.seeds = parse_i32(v); }},
      {"attack", "transfer", [](const C& c) { return show_bool(c.attack.transfer); },
       [](C& c, S v) { c.attack.transfer = parse_bool(v); }},
      {"attack", "archive_samples",
       [](const C& c) { return std::to_string(c.attack.archive_samples); },
       [](C& c, S v) { c.attack.archive_samples = parse_i32(v); }},

      {"eval", "correct_only", [](const C& c) { return show_bool(c.eval.correct_only); },
       [](C& c, S v) { c.eval.correct_only = parse_bool(v); }},
      {"eval", "filter_models",
       [](const C& c) {
         return join<std::string>(c.eval.filter_models, [](const std::string& s) { return s; });
       },
       [](C& c, S v) { c.eval.filter_models = split_list(v); }},
  };
  return fields;
}

}  // namespace

void ExperimentConfig::resolve() {
  if (!data.seed) data.seed = seed;
  if (!model.seed) model.seed = seed;
  if (!substitute.seed) substitute.seed = seed + 1;
  if (!attack.seed) attack.seed = seed;
  model.train.seed = *model.seed;
  validate();
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  try {
    check(jobs >= 0, "run.jobs must be >= 0 (0 means all cores)");
    check(data.train_samples >= 1, "data.train_samples must be >= 1");
    check(data.test_samples >= 1, "data.test_samples must be >= 1");
    train_generator().validate();
    check(!model.name.empty(), "model.name must not be empty");
    check(model.name.find_first_of(", \t\n\"") == std::string::npos,
          "model.name must not contain commas, quotes or whitespace");
    check(model.embed_dim >= 1, "model.embed_dim must be >= 1");
    TrainConfig train = model.train;
    train.refresh = AdversarialRefresh::kOnline;  // the source is a path here, checked below
    train.validate();
    if (uses_adversarial(model.train.mode) &&
        model.train.refresh == AdversarialRefresh::kStatic) {
      check(!model.adversarial_source.empty(),
            "adversarial_training.source is required when refresh = static");
    }
    check(!attack.methods.empty(), "attack.methods must not be empty");
    check(!attack.eps_av.empty(), "attack.eps_av must not be empty");
    check(!attack.modalities.empty(), "attack.modalities must not be empty");
    check(!attack.scenarios.empty(), "attack.scenarios must not be empty");
    check(attack.seeds >= 1, "attack.seeds must be >= 1");
    check(attack.archive_samples >= 0, "attack.archive_samples must be >= 0");
    check(!attack.transfer || substitute.enabled,
          "attack.transfer needs substitute.enabled = true");
    for (const auto& cell : cells()) cell.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::vector<AttackConfig> ExperimentConfig::cells() const {
  std::vector<AttackConfig> out;
  for (AttackMethod m : attack.methods) {
    for (Scenario s : attack.scenarios) {
      for (Modality mod : attack.modalities) {
        for (double eps : attack.eps_av) {
          AttackConfig c = attack.base;
          c.method = m;
          c.scenario = s;
          c.modality = mod;
          c.eps_av = eps;
          c.seed = attack.seed.value_or(seed);
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

GeneratorOptions ExperimentConfig::train_generator() const {
  GeneratorOptions g = data.generator;
  g.seed = data.seed.value_or(seed);
  g.n_samples = data.train_samples;
  g.first_index = 0;
  return g;
}

GeneratorOptions ExperimentConfig::test_generator() const {
  GeneratorOptions g = train_generator();
  g.n_samples = data.test_samples;
  g.first_index = static_cast<std::uint64_t>(data.train_samples);
  return g;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  std::map<std::string, const Field*> by_name;
  for (const auto& f : schema()) by_name[std::string(f.section) + "." + f.key] = &f;

  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(origin + ": key '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw ConfigError(origin + ": unknown key '" + name + "'");
      try {
        it->second->set(config, value.data());
      } catch (const std::exception& e) {
        throw ConfigError(origin + ": " + name + ": " + e.what());
      }
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string dump_config(const ExperimentConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : schema()) {
    if (section != f.section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

std::string cell_name(const AttackConfig& cell) {
  std::string eps = fmt(cell.eps_av);
  std::replace(eps.begin(), eps.end(), '.', 'p');
  return std::string(to_string(cell.method)) + "_" + std::string(to_string(cell.scenario)) + "_" +
         std::string(to_string(cell.modality)) + "_eps" + eps;
}

}  // namespace avasd
