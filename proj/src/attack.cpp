#include "avasd/attack.hpp"

#include <charconv>
#include <sstream>

namespace avasd {
namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<Enum, N>& values, const char* what) {
  for (Enum v : values) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string_view to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::kBim: return "bim";
    case AttackMethod::kMim: return "mim";
    case AttackMethod::kPgd: return "pgd";
  }
  return "?";
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kAudio: return "audio";
    case Modality::kVisual: return "visual";
    case Modality::kBoth: return "both";
  }
  return "?";
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::kTrainingAware: return "training-aware";
    case Scenario::kInferenceAware: return "inference-aware";
  }
  return "?";
}

AttackMethod attack_method_from_string(std::string_view s) {
  return parse_enum(s, std::array{AttackMethod::kBim, AttackMethod::kMim, AttackMethod::kPgd},
                    "attack method");
}

Modality modality_from_string(std::string_view s) {
  return parse_enum(s, std::array{Modality::kAudio, Modality::kVisual, Modality::kBoth},
                    "modality");
}

Scenario scenario_from_string(std::string_view s) {
  return parse_enum(s, std::array{Scenario::kTrainingAware, Scenario::kInferenceAware},
                    "scenario");
}

void AttackConfig::validate() const {
  if (!std::isfinite(eps_av) || eps_av < 0.0) {
    throw std::invalid_argument("eps_av must be finite and non-negative");
  }
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (restarts < 1) throw std::invalid_argument("PGD restarts must be at least 1");
  if (!std::isfinite(momentum) || momentum < 0.0) {
    throw std::invalid_argument("MIM momentum must be finite and non-negative");
  }
  if (step_a && eps_a() > 0.0 && (!(*step_a >= 0.0) || *step_a > eps_a())) {
    throw std::invalid_argument("audio step size must lie in [0, eps_a]");
  }
  if (step_v && eps_v() > 0.0 && (!(*step_v >= 0.0) || *step_v > eps_v())) {
    throw std::invalid_argument("visual step size must lie in [0, eps_v]");
  }
}

std::string AttackConfig::fingerprint() const {
  std::ostringstream os;
  os << "method=" << to_string(method) << ";eps_av=" << fmt(eps_av) << ";steps=" << steps
     << ";alpha_a=" << fmt(alpha_a()) << ";alpha_v=" << fmt(alpha_v())
     << ";momentum=" << fmt(momentum) << ";restarts=" << restarts
     << ";zero_init=" << zero_init << ";modality=" << to_string(modality)
     << ";scenario=" << to_string(scenario) << ";clamp_visual=" << clamp_visual
     << ";seed=" << seed;
  return os.str();
}

}  // namespace avasd
