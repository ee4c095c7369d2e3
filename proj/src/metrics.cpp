#include "cenet/metrics.hpp"

#include "cenet/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace cenet {

namespace {

std::vector<std::string> value_columns(const std::vector<MetricsRow>& rows) {
  std::vector<std::string> cols;
  for (const auto& r : rows)
    for (const auto& [k, _] : r.values)
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
  // stable, readable order: lr first, total last
  std::stable_sort(cols.begin(), cols.end(), [](const std::string& a, const std::string& b) {
    auto rank = [](const std::string& s) { return s == "lr" ? 0 : s == "total" ? 2 : 1; };
    return rank(a) < rank(b);
  });
  return cols;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << content;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::vector<MetricsRow> read_metrics_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics log " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError("metrics record is not valid JSON", number);
    }
    if (!j.is_object() || !j.contains("step") || !j["step"].is_number_integer())
      throw ParseError("metrics record needs an integer 'step'", number);
    MetricsRow r;
    r.step = j["step"].get<long>();
    r.domain = j.value("domain", "");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "step" && it.key() != "domain" && it.value().is_number())
        r.values[it.key()] = it.value().get<double>();
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  const auto cols = value_columns(rows);
  std::ostringstream os;
  os << "step,domain";
  for (const auto& c : cols) os << ',' << c;
  os << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << r.domain;
    for (const auto& c : cols) {
      os << ',';
      if (auto it = r.values.find(c); it != r.values.end()) os << num(it->second);
    }
    os << '\n';
  }
  write_file(path, os.str());
}

void write_metrics_svg(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  const auto cols = value_columns(rows);
  std::set<std::string> domain_set;
  for (const auto& r : rows) domain_set.insert(r.domain);
  const std::vector<std::string> domains(domain_set.begin(), domain_set.end());
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  const double pw = 420, ph = 180, margin = 50;
  const int per_row = 2;
  const int panels = static_cast<int>(cols.size());
  const int grid_rows = std::max(1, (panels + per_row - 1) / per_row);
  const double width = per_row * (pw + margin) + margin, height = grid_rows * (ph + margin) + margin;

  long smin = 0, smax = 1;
  if (!rows.empty()) {
    smin = rows.front().step;
    smax = rows.front().step;
    for (const auto& r : rows) {
      smin = std::min(smin, r.step);
      smax = std::max(smax, r.step);
    }
    if (smax == smin) smax = smin + 1;
  }

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int p = 0; p < panels; ++p) {
    const std::string& col = cols[static_cast<std::size_t>(p)];
    const double x0 = margin + (p % per_row) * (pw + margin), y0 = margin + (p / per_row) * (ph + margin);
    double vmin = INFINITY, vmax = -INFINITY;
    for (const auto& r : rows)
      if (auto it = r.values.find(col); it != r.values.end() && std::isfinite(it->second)) {
        vmin = std::min(vmin, it->second);
        vmax = std::max(vmax, it->second);
      }
    if (!std::isfinite(vmin)) vmin = 0, vmax = 1;
    if (vmax == vmin) vmax = vmin + 1;
    os << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#888\"/>\n";
    os << "<text x=\"" << x0 << "\" y=\"" << y0 - 6 << "\">" << col << "</text>\n";
    os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 10 << "\" text-anchor=\"end\">" << num(vmax) << "</text>\n";
    os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + ph << "\" text-anchor=\"end\">" << num(vmin) << "</text>\n";
    os << "<text x=\"" << x0 + pw << "\" y=\"" << y0 + ph + 14 << "\" text-anchor=\"end\">step " << smax << "</text>\n";
    for (std::size_t d = 0; d < domains.size(); ++d) {
      std::ostringstream pts;
      for (const auto& r : rows) {
        if (r.domain != domains[d]) continue;
        auto it = r.values.find(col);
        if (it == r.values.end() || !std::isfinite(it->second)) continue;
        const double x = x0 + pw * static_cast<double>(r.step - smin) / static_cast<double>(smax - smin);
        const double y = y0 + ph * (1 - (it->second - vmin) / (vmax - vmin));
        pts << num(x) << ',' << num(y) << ' ';
      }
      os << "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" << palette[d % 4] << "\" points=\"" << pts.str()
         << "\"/>\n";
      os << "<text x=\"" << x0 + pw - 4 << "\" y=\"" << y0 + 14 + 12 * static_cast<double>(d)
         << "\" text-anchor=\"end\" fill=\"" << palette[d % 4] << "\">" << (domains[d].empty() ? "-" : domains[d])
         << "</text>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  write_file(path, os.str());
}

}  // namespace cenet
