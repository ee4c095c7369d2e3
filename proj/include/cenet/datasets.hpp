#pragma once

#include "cenet/errors.hpp"
#include "cenet/imageops.hpp"
#include "cenet/losses.hpp"

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cenet {

namespace fs = std::filesystem;

enum class Role { train, query, gallery };

const char* role_name(Role r);
Role parse_role(const std::string& name);

struct PersonSample {
  fs::path image_path;                 // absolute
  int pid = 0;                         // identity label as written in the manifest
  int camid = 0;
  Domain domain = Domain::real;
  Role role = Role::train;
  std::optional<fs::path> pair_path;   // well-lit counterpart (synthetic domain only)
  int label = -1;                      // dense per-domain class index assigned on load
};

struct IdentityKey {
  Domain domain;
  int pid;
  auto operator<=>(const IdentityKey&) const = default;
};

/// Immutable-after-construction list of samples with one role.
struct DatasetSplit {
  std::vector<PersonSample> samples;
  Role role = Role::train;
  std::map<IdentityKey, std::vector<std::size_t>> id_index;

  /// Rebuilds id_index and the dense per-domain labels (ascending pid order).
  void reindex();

  std::size_t size() const { return samples.size(); }
  std::size_t num_identities(Domain d) const;
  std::size_t num_identities() const { return id_index.size(); }
  /// max camid + 1 over samples of the domain (0 if none).
  int num_cameras(Domain d) const;
  DatasetSplit only(Domain d) const;
};

/// Record format, one per line:
///   path:<p>|pid:<n>|camid:<n>|domain:<real|synthetic>|role:<train|query|gallery>[|pair_path:<p>]
/// Paths are relative to the manifest's directory. Blank lines and lines
/// starting with '#' are ignored. With `role`, records of other roles are
/// skipped; without it every record is kept and the split takes the role of
/// the first one.
DatasetSplit load_manifest(const fs::path& path, std::optional<Role> role = std::nullopt);
void write_manifest(const DatasetSplit& split, const fs::path& path);

/// Query and gallery must not share image paths.
void check_disjoint(const DatasetSplit& query, const DatasetSplit& gallery);

// Synthetic darkening ----------------------------------------------------------

struct DegradationConfig {
  std::array<double, 2> brightness{10, 38};
  std::array<double, 2> contrast{7, 30};
  std::array<double, 2> hue{7, 30};
  std::array<double, 2> color{20, 35};
  std::uint64_t seed = 0;

  void validate() const;
};

struct DegradationFactors {
  double brightness = 100;
  double contrast = 100;
  double saturation = 100;
  double hue = 0;  // signed degrees
};

/// brightness -> contrast -> saturation -> hue.
Image degrade(const Image& day, const DegradationFactors& f);

struct DegradationRecord {
  std::string source;
  std::string output;
  int pid = 0;
  int camid = 0;
  DegradationFactors factors;
};

struct SynthesisResult {
  DatasetSplit split;
  std::vector<DegradationRecord> report;
  std::vector<std::string> errors;  // one entry per unreadable source image
};

/// Darkens every image of `source` into `out_dir/images/` and returns the
/// synthetic-domain split paired with the originals. Identity and camera
/// labels are preserved; per-image failures are collected, not thrown.
SynthesisResult synthesize_dark(const DatasetSplit& source, const DegradationConfig& cfg, const fs::path& out_dir);

/// One JSON object per line with the sampled factor values.
void write_degradation_report(const std::vector<DegradationRecord>& report, const fs::path& path);

// Sampling ---------------------------------------------------------------------

/// P distinct identities x K samples each (with replacement for identities
/// holding fewer than K images), grouped by identity.
std::vector<PersonSample> pk_batch(const DatasetSplit& split, std::size_t P, std::size_t K, Rng& rng,
                                   std::optional<Domain> domain = std::nullopt);

// Augmentation -----------------------------------------------------------------

struct AugmentConfig {
  Index height = 256;
  Index width = 128;
  double flip_probability = 0.5;
  Index pad = 10;
  EraseParams erase;
};

enum class AugmentMode { train, eval };

struct Augmented {
  Image image;
  std::optional<Image> pair;  // same geometric transform as image, never erased
  EraseMask mask;
};

/// eval: resize only. train: resize, horizontal flip, pad-then-random-crop,
/// random erasing. The pair (if any) receives the identical flip and crop.
Augmented augment_pair(const Image& image, const Image* pair, Rng& rng, AugmentMode mode, const AugmentConfig& cfg);

std::pair<Image, EraseMask> augment(const Image& image, Rng& rng, AugmentMode mode, const AugmentConfig& cfg);

/// Decoded-image cache keyed by path; not thread-safe.
class ImageCache {
 public:
  const Image& get(const fs::path& path);
  std::size_t size() const { return images_.size(); }

 private:
  std::unordered_map<std::string, Image> images_;
};

// Toy corpus -----------------------------------------------------------------

/// Writes a daytime corpus of coloured-shape "persons" (distinct silhouette,
/// pattern and palette per identity; jittered pose, scale and noise per
/// image; cameras differ by background) and returns it as a real-domain
/// train split. Used by demos and the acceptance suite.
DatasetSplit make_shape_corpus(const fs::path& dir, int identities, int per_identity, int cameras, Index height,
                               Index width, std::uint64_t seed);

}  // namespace cenet
