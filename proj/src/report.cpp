#include "avasd/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

namespace avasd {

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
    throw ReportError(where + ": bad number '" + s + "'");
  }
  return v;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string series_label(const AggregateRow& r) {
  return r.model + " " + r.attack_method + " " + r.scenario + " " + r.modality;
}

}  // namespace

std::string eval_csv(std::span<const EvalRow> rows) {
  std::string out = kEvalCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += r.model + ',' + r.loss_mode + ',' + r.attack_method + ',' + r.scenario + ',' +
           r.modality + ',' + format_number(r.eps_av) + ',' + format_number(r.map) + ',' +
           opt(r.ecr_a) + ',' + opt(r.ecr_v) + ',' + std::to_string(r.seed) + '\n';
  }
  return out;
}

std::vector<EvalRow> parse_eval_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kEvalCsvHeader) {
    throw ReportError(origin + ":1: unexpected header");
  }
  std::vector<EvalRow> rows;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    const auto cells = split_csv_line(line);
    if (cells.size() != 10) {
      throw ReportError(where + ": expected 10 columns, got " + std::to_string(cells.size()));
    }
    EvalRow r;
    r.model = cells[0];
    r.loss_mode = cells[1];
    r.attack_method = cells[2];
    r.scenario = cells[3];
    r.modality = cells[4];
    r.eps_av = parse_number(cells[5], where);
    r.map = parse_number(cells[6], where);
    if (!cells[7].empty()) r.ecr_a = parse_number(cells[7], where);
    if (!cells[8].empty()) r.ecr_v = parse_number(cells[8], where);
    std::uint64_t seed = 0;
    auto [end, ec] = std::from_chars(cells[9].data(), cells[9].data() + cells[9].size(), seed);
    if (ec != std::errc() || end != cells[9].data() + cells[9].size()) {
      throw ReportError(where + ": bad seed '" + cells[9] + "'");
    }
    r.seed = seed;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<AggregateRow> aggregate(std::span<const EvalRow> rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string, double>;
  std::map<Key, std::size_t> slot;
  std::vector<std::vector<const EvalRow*>> groups;
  for (const auto& r : rows) {
    const Key k{r.model, r.loss_mode, r.attack_method, r.scenario, r.modality, r.eps_av};
    auto [it, fresh] = slot.emplace(k, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& g : groups) {
    AggregateRow a;
    const EvalRow& first = *g.front();
    a.model = first.model;
    a.loss_mode = first.loss_mode;
    a.attack_method = first.attack_method;
    a.scenario = first.scenario;
    a.modality = first.modality;
    a.eps_av = first.eps_av;
    a.seeds = static_cast<int>(g.size());
    double sum = 0.0, sum_a = 0.0, sum_v = 0.0;
    bool has_a = true, has_v = true;
    for (const auto* r : g) {
      sum += r->map;
      has_a = has_a && r->ecr_a.has_value();
      has_v = has_v && r->ecr_v.has_value();
      if (r->ecr_a) sum_a += *r->ecr_a;
      if (r->ecr_v) sum_v += *r->ecr_v;
    }
    const double n = static_cast<double>(g.size());
    a.map_mean = sum / n;
    double sq = 0.0;
    for (const auto* r : g) sq += (r->map - a.map_mean) * (r->map - a.map_mean);
    a.map_sd = g.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    if (has_a) a.ecr_a = sum_a / n;
    if (has_v) a.ecr_v = sum_v / n;
    out.push_back(std::move(a));
  }
  return out;
}

std::string markdown_report(std::span<const AggregateRow> rows) {
  std::ostringstream os;
  os << "| model | loss mode | attack | scenario | modality | eps_av | mAP | sd | ECR_a | ECR_v "
        "| seeds |\n";
  os << "|---|---|---|---|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    os << "| " << r.model << " | " << r.loss_mode << " | " << r.attack_method << " | "
       << r.scenario << " | " << r.modality << " | " << format_number(r.eps_av) << " | "
       << fixed(r.map_mean, 4) << " | " << fixed(r.map_sd, 4) << " | "
       << (r.ecr_a ? fixed(*r.ecr_a, 4) : "-") << " | " << (r.ecr_v ? fixed(*r.ecr_v, 4) : "-")
       << " | " << r.seeds << " |\n";
  }
  return os.str();
}

std::string svg_plot(std::span<const AggregateRow> rows) {
  // Plot area inside a fixed canvas; y is mAP in [0, 1].
  constexpr double kWidth = 720, kHeight = 440;
  constexpr double kLeft = 60, kRight = 250, kTop = 20, kBottom = 50;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  std::vector<std::string> labels;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double eps_max = 0.0;
  for (const auto& r : rows) {
    if (r.attack_method == "none") continue;
    const auto label = series_label(r);
    if (!series.count(label)) labels.push_back(label);
    series[label].emplace_back(r.eps_av, r.map_mean);
    eps_max = std::max(eps_max, r.eps_av);
  }
  if (eps_max <= 0.0) eps_max = 1.0;
  auto x_of = [&](double eps) { return kLeft + plot_w * eps / eps_max; };
  auto y_of = [&](double map) { return kTop + plot_h * (1.0 - std::clamp(map, 0.0, 1.0)); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g stroke=\"black\" fill=\"none\">\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
     << "\" y2=\"" << kTop + plot_h << "\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << kTop + plot_h << "\"/>\n";
  os << "</g>\n";

  for (int i = 0; i <= 5; ++i) {
    const double eps = eps_max * i / 5.0;
    const double x = x_of(eps);
    os << "<line x1=\"" << fixed(x, 1) << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << fixed(x, 1)
       << "\" y2=\"" << kTop + plot_h + 4 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed(x, 1) << "\" y=\"" << kTop + plot_h + 16
       << "\" text-anchor=\"middle\">" << format_number(std::round(eps * 100) / 100) << "</text>\n";
    const double map = i / 5.0;
    const double y = y_of(map);
    os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << fixed(y, 1) << "\" x2=\"" << kLeft
       << "\" y2=\"" << fixed(y, 1) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kLeft - 7 << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">"
       << fixed(map, 1) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\">eps_av</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kTop + plot_h / 2 << ")\">mAP</text>\n";

  for (std::size_t s = 0; s < labels.size(); ++s) {
    auto points = series[labels[s]];
    std::stable_sort(points.begin(), points.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const char* color = kColors[s % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (i) os << ' ';
      os << fixed(x_of(points[i].first), 1) << ',' << fixed(y_of(points[i].second), 1);
    }
    os << "\"/>\n";
    for (const auto& [eps, map] : points) {
      os << "<circle cx=\"" << fixed(x_of(eps), 1) << "\" cy=\"" << fixed(y_of(map), 1)
         << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 10 + 16.0 * static_cast<double>(s);
    os << "<line x1=\"" << kLeft + plot_w + 15 << "\" y1=\"" << fixed(ly, 1) << "\" x2=\""
       << kLeft + plot_w + 35 << "\" y2=\"" << fixed(ly, 1) << "\" stroke=\"" << color
       << "\" stroke-width=\"1.5\"/>\n";
    os << "<text x=\"" << kLeft + plot_w + 40 << "\" y=\"" << fixed(ly + 4, 1) << "\">"
       << labels[s] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace avasd
