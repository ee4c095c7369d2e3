#include "cenet/eval.hpp"

#include "cenet/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cenet {

Eigen::MatrixXd pairwise_distance(const Eigen::MatrixXd& query, const Eigen::MatrixXd& gallery) {
  require(query.cols() == gallery.cols(), "pairwise_distance: feature dimensions differ");
  Eigen::MatrixXd d(query.rows(), gallery.rows());
  for (Index i = 0; i < query.rows(); ++i) d.row(i) = (gallery.rowwise() - query.row(i)).rowwise().norm().transpose();
  return d;
}

double EvalReport::rank(std::size_t k) const {
  if (cmc.empty()) return 0;
  return cmc[std::min(std::max<std::size_t>(k, 1), cmc.size()) - 1];
}

EvalReport evaluate(const Eigen::MatrixXd& dist, const std::vector<SampleMeta>& query,
                    const std::vector<SampleMeta>& gallery, const EvalOptions& opts) {
  const std::size_t Q = query.size(), G = gallery.size();
  require(static_cast<std::size_t>(dist.rows()) == Q && static_cast<std::size_t>(dist.cols()) == G,
          "evaluate: distance matrix does not match the metadata");
  require(G > 0, "evaluate: empty gallery");
  EvalReport r;
  r.num_query = Q;
  r.num_gallery = G;
  std::vector<double> hits(G, 0.0);
  std::vector<std::size_t> order(G);
  double ap_sum = 0;
  for (std::size_t q = 0; q < Q; ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist(q, a) < dist(q, b); });
    std::size_t rank = 0, found = 0, first = G;
    double precision_sum = 0;
    std::size_t positives = 0;
    for (std::size_t g = 0; g < G; ++g)
      if (gallery[g].pid == query[q].pid && !(opts.exclude_same_camera && gallery[g].camid == query[q].camid))
        ++positives;
    if (positives == 0) continue;
    for (std::size_t g : order) {
      const bool same_pid = gallery[g].pid == query[q].pid;
      if (opts.exclude_same_camera && same_pid && gallery[g].camid == query[q].camid) continue;
      ++rank;
      if (same_pid) {
        ++found;
        precision_sum += static_cast<double>(found) / static_cast<double>(rank);
        if (first == G) first = rank - 1;
      }
    }
    const double ap = precision_sum / static_cast<double>(positives);
    r.query_ap.emplace_back(q, ap);
    ap_sum += ap;
    for (std::size_t k = first; k < G; ++k) hits[k] += 1;
  }
  if (r.query_ap.empty()) throw ValidationError("evaluate: no query has a valid gallery match");
  const double valid = static_cast<double>(r.query_ap.size());
  r.mAP = ap_sum / valid;
  r.cmc.resize(G);
  for (std::size_t k = 0; k < G; ++k) r.cmc[k] = hits[k] / valid;
  return r;
}

std::string format_summary(const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "mAP %.2f | Rank-1 %.2f | Rank-5 %.2f | Rank-10 %.2f", 100 * r.mAP, 100 * r.rank(1),
                100 * r.rank(5), 100 * r.rank(10));
  return buf;
}

std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& stem,
                                               const std::set<ReportFormat>& formats) {
  std::vector<std::filesystem::path> written;
  if (stem.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(stem.parent_path(), ec);
  }
  auto write = [&](const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write report " + path.string());
    f << content;
    f.flush();
    if (!f) throw IoError("failed writing report " + path.string());
    written.push_back(path);
  };
  if (formats.count(ReportFormat::text)) {
    std::ostringstream os;
    os << format_summary(r) << '\n'
       << "queries " << r.num_query << " (valid " << r.query_ap.size() << ") | gallery " << r.num_gallery << '\n';
    write(std::filesystem::path(stem.string() + ".txt"), os.str());
  }
  if (formats.count(ReportFormat::csv)) {
    std::ostringstream os;
    char buf[64];
    os << "k,cmc\n";
    for (std::size_t k = 0; k < r.cmc.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%zu,%.10f\n", k + 1, r.cmc[k]);
      os << buf;
    }
    os << "query_index,ap\n";
    for (const auto& [q, ap] : r.query_ap) {
      std::snprintf(buf, sizeof(buf), "%zu,%.10f\n", q, ap);
      os << buf;
    }
    write(std::filesystem::path(stem.string() + ".csv"), os.str());
  }
  return written;
}

}  // namespace cenet
