#pragma once

// The configuration document: one nested JSON object with sections model,
// train, loss, degradation, augment, eval and io plus a top-level seed.
// Every leaf has a dotted key ("train.base_lr") used for flag overrides.

#include "cenet/datasets.hpp"
#include "cenet/model.hpp"
#include "cenet/training.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cenet {

using Json = nlohmann::ordered_json;

struct EvalConfig {
  bool exclude_same_camera = true;
  int batch_size = 32;
};


/// Paths used by the command line; relative ones resolve against the work
/// directory (CENET_WORKDIR, else the current directory).
struct IoConfig {
  std::string src;      // source manifest (synth)
  std::string out;      // output directory or file
  std::string ckpt;     // checkpoint to read
  std::string query;    // query manifest
  std::string gallery;  // gallery manifest
  std::string input;    // image or directory to enhance, metrics log to report
  std::string real;     // real-domain training manifest
  std::string syn;      // synthetic-domain training manifest
  std::string init;     // weight archive to import before training
  std::string resume;   // checkpoint to continue from
  int camid = 0;                                      // camera id assumed for enhanced images
  std::string domain = "real";                        // domain assumed for enhanced images
  std::vector<std::string> formats{"text", "csv"};    // eval report formats
};

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  DegradationConfig degradation;
  AugmentConfig augment;
  EvalConfig eval;
  IoConfig io;
  std::string ablation;  // "", full, no_md, no_md_ps, no_md_fd, no_md_fd_ps
  std::optional<std::uint64_t> seed;

  void validate() const;

  /// Full-scale defaults: 256x128 input, ViT-Base widths.
  static AppConfig full();
  /// CPU-scale defaults: toy model, 64x32 images, short schedule.
  static AppConfig toy();
  static AppConfig preset(const std::string& name);
};

Json to_json(const AppConfig& c);
/// Applies the keys present in `j` on top of `c`; unknown keys and type
/// mismatches raise ConfigError.
void apply_json(AppConfig& c, const Json& j);

Json model_to_json(const ModelConfig& m);
ModelConfig model_from_json(const Json& j);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

AppConfig load_config_file(const std::filesystem::path& path, AppConfig base);

/// Leaf keys of a document in document order, e.g. "train.base_lr".
std::vector<std::string> leaf_keys(const Json& j);
/// Parses a flag value according to the JSON type of `current` and stores it at the dotted key.
void set_dotted(Json& doc, const std::string& key, const std::string& value);
const Json& get_dotted(const Json& doc, const std::string& key);
/// Flag rendering of a leaf value (strings unquoted, arrays comma separated).
std::string leaf_to_flag(const Json& v);

std::filesystem::path work_directory();
std::filesystem::path resolve_path(const std::string& p);

}  // namespace cenet
