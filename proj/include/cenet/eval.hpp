#pragma once

// Retrieval evaluation: features, Euclidean distances, CMC and mAP.

#include "cenet/datasets.hpp"
#include "cenet/model.hpp"

#include <filesystem>
#include <set>

namespace cenet {

struct SampleMeta {
  int pid = 0;
  int camid = 0;
};

struct FeatureSet {
  Eigen::MatrixXd features;  // one L2-normalised row per sample
  std::vector<SampleMeta> meta;
};

/// Runs the ReID-only path over the split in its order and L2-normalises
/// the rows. Images are decoded `batch_size` at a time; each forward pass
/// sees a single image so a row never depends on its batch neighbours.
template <typename S>
FeatureSet extract_features(const CENet<S>& model, const DatasetSplit& split, const AugmentConfig& aug,
                            int batch_size = 32, ImageCache* cache = nullptr) {
  require(batch_size >= 1, "extract_features: batch_size must be >= 1");
  ImageCache local;
  ImageCache& images = cache ? *cache : local;
  const Index n = static_cast<Index>(split.size()), H = aug.height, W = aug.width;
  FeatureSet out;
  out.features.resize(n, model.config().embed_dim);
  Rng unused(0);
  std::vector<Tensor<S>> chunk;
  for (Index i = 0; i < n; i += batch_size) {
    const Index j = std::min<Index>(n, i + batch_size);
    chunk.clear();
    for (Index k = i; k < j; ++k) {
      auto [img, mask] = augment(images.get(split.samples[static_cast<std::size_t>(k)].image_path), unused,
                                 AugmentMode::eval, aug);
      Tensor<S> one({1, 3, H, W});
      one.data = img.data.template cast<S>();
      chunk.push_back(std::move(one));
    }
    for (Index k = i; k < j; ++k) {
      const auto& s = split.samples[static_cast<std::size_t>(k)];
      Tensor<S> f = model.infer(chunk[static_cast<std::size_t>(k - i)], {s.camid}, s.domain);
      out.features.row(k) = f.matrix().template cast<double>().row(0);
    }
  }
  for (Index r = 0; r < n; ++r) {
    const double norm = out.features.row(r).norm();
    if (norm > 0) out.features.row(r) /= norm;
  }
  for (const auto& s : split.samples) out.meta.push_back({s.pid, s.camid});
  return out;
}

/// Q x G Euclidean distances.
Eigen::MatrixXd pairwise_distance(const Eigen::MatrixXd& query, const Eigen::MatrixXd& gallery);

struct EvalOptions {
  bool exclude_same_camera = true;  // drop gallery items sharing pid and camid with the query
};

struct EvalReport {
  double mAP = 0;
  std::vector<double> cmc;  // cmc[k-1] = rank-k accuracy, k = 1..gallery size
  std::vector<std::pair<std::size_t, double>> query_ap;  // (query index, AP) for valid queries
  std::size_t num_query = 0;
  std::size_t num_gallery = 0;

  double rank(std::size_t k) const;  // clamps k to the curve length
};

EvalReport evaluate(const Eigen::MatrixXd& dist, const std::vector<SampleMeta>& query,
                    const std::vector<SampleMeta>& gallery, const EvalOptions& opts = {});

/// "mAP 13.30 | Rank-1 25.00 | Rank-5 .. | Rank-10 .."
std::string format_summary(const EvalReport& r);

enum class ReportFormat { text, csv };

/// Writes `<stem>.txt` and/or `<stem>.csv`; returns the files written.
std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& stem,
                                               const std::set<ReportFormat>& formats = {ReportFormat::text,
                                                                                        ReportFormat::csv});

}  // namespace cenet
