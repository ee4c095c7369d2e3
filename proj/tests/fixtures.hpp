#pragma once

#include "cenet/config.hpp"
#include "cenet/datasets.hpp"
#include "model_fixtures.hpp"

#include <filesystem>
#include <set>
#include <string>

namespace cenet::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* base = std::getenv("CENET_TEST_TMP");
  std::filesystem::path root = base && *base ? std::filesystem::path(base) : std::filesystem::temp_directory_path();
  std::filesystem::path dir = root / ("cenet_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Copies the split with every sample's role replaced.
inline DatasetSplit with_role(const DatasetSplit& s, Role role) {
  DatasetSplit out = s;
  out.role = role;
  for (auto& p : out.samples) p.role = role;
  out.reindex();
  return out;
}

/// Held-in retrieval split: the first image of every (identity, camera)
/// becomes a query, the rest form the gallery.
inline std::pair<DatasetSplit, DatasetSplit> held_in_split(const DatasetSplit& s) {
  DatasetSplit q, g;
  std::set<std::pair<int, int>> seen;
  for (const auto& p : s.samples) {
    if (seen.insert({p.pid, p.camid}).second)
      q.samples.push_back(p);
    else
      g.samples.push_back(p);
  }
  return {with_role(q, Role::query), with_role(g, Role::gallery)};
}

struct ToyData {
  std::filesystem::path root;
  DatasetSplit day;
  DatasetSplit dark;
  DatasetSplit query;    // dark, held-in
  DatasetSplit gallery;  // dark, held-in
};

/// Coloured-shape daytime corpus darkened with the default ranges.
inline ToyData make_toy_data(const std::string& name, int identities = 8, int per_identity = 12, int cameras = 3,
                             std::uint64_t seed = 7) {
  ToyData t;
  t.root = scratch_dir(name);
  t.day = make_shape_corpus(t.root / "day", identities, per_identity, cameras, 128, 64, seed);
  DegradationConfig cfg;
  cfg.seed = seed;
  SynthesisResult r = synthesize_dark(t.day, cfg, t.root / "dark");
  if (!r.errors.empty()) throw std::runtime_error("toy synthesis failed: " + r.errors.front());
  t.dark = r.split;
  std::tie(t.query, t.gallery) = held_in_split(t.dark);
  return t;
}

/// A handful of small real and synthetic images for fast step-level tests.
struct TinyCorpus {
  std::filesystem::path root;
  DatasetSplit real;
  DatasetSplit synthetic;
};

inline TinyCorpus make_tiny_corpus(const std::string& name, int identities = 4, int per_identity = 4, int cameras = 2,
                                   std::uint64_t seed = 3) {
  TinyCorpus t;
  t.root = scratch_dir(name);
  t.real = make_shape_corpus(t.root / "day", identities, per_identity, cameras, 32, 16, seed);
  DegradationConfig cfg;
  cfg.seed = seed;
  SynthesisResult r = synthesize_dark(t.real, cfg, t.root / "dark");
  if (!r.errors.empty()) throw std::runtime_error("tiny synthesis failed: " + r.errors.front());
  t.synthetic = r.split;
  return t;
}

/// Tiny model, schedule and augmentation sized to a TinyCorpus.
struct StepSetup {
  TinyCorpus data;
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  AugmentConfig augment;
};

inline StepSetup make_step_setup(const std::string& name) {
  StepSetup s;
  s.data = make_tiny_corpus(name);
  s.model = tiny_config();
  s.model.num_classes = {static_cast<Index>(s.data.real.num_identities(Domain::real)),
                         static_cast<Index>(s.data.synthetic.num_identities(Domain::synthetic))};
  s.model.num_cameras = {s.data.real.num_cameras(Domain::real), s.data.synthetic.num_cameras(Domain::synthetic)};
  s.train.P = 2;
  s.train.K = 2;
  s.train.epochs = 1;
  s.train.steps_per_epoch = 6;
  s.train.warmup_steps = 2;
  s.train.base_lr = 0.01;
  s.augment.height = s.model.image_height;
  s.augment.width = s.model.image_width;
  s.augment.pad = 1;
  return s;
}

template <typename S>
Batch<S> draw_batch(const StepSetup& s, Domain d, Rng& rng, ImageCache& cache) {
  const DatasetSplit& split = d == Domain::real ? s.data.real : s.data.synthetic;
  return make_batch<S>(pk_batch(split, s.train.P, s.train.K, rng, d), d, cache, rng, AugmentMode::train, s.augment);
}

}  // namespace cenet::testing
