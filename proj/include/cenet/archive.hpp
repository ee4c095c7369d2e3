#pragma once

// Named-tensor archive and the checkpoints built on it.
//
// Layout (all integers little-endian):
//   "CENETARC" | u32 version | u64 header bytes | header JSON | u32 crc32(header)
//   u64 tensor count, then per tensor: u32 name bytes | name | u8 group | u32 rank | u64 dims[rank]
//               | f32 payload[numel] | u32 crc32(record without this field)
//   "CENETEND"
//
// Tensor names are the model's parameter and buffer names; optimiser
// momentum is stored as "optimizer.momentum.<parameter>".

#include "cenet/config.hpp"
#include "cenet/errors.hpp"
#include "cenet/training.hpp"

#include <filesystem>
#include <map>
#include <set>

namespace cenet {

inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint8_t kNoGroup = 255;

struct ArchiveTensor {
  std::string name;
  std::uint8_t group = kNoGroup;  // ParamGroup value or kNoGroup
  Tensor<float> value;
};

struct Archive {
  Json header = Json::object();
  std::vector<ArchiveTensor> tensors;

  const ArchiveTensor* find(const std::string& name) const;
  /// Removes every tensor of the group (parameters, buffers and their momentum).
  void strip_group(ParamGroup g);
  std::set<ParamGroup> groups() const;
};

/// Written to a temporary sibling and renamed into place.
void write_archive(const std::filesystem::path& path, const Archive& a);
Archive read_archive(const std::filesystem::path& path);

inline const std::string kMomentumPrefix = "optimizer.momentum.";

template <typename S>
Archive model_archive(const CENet<S>& model) {
  auto& m = const_cast<CENet<S>&>(model);
  Archive a;
  a.header["kind"] = "model";
  a.header["model"] = model_to_json(model.config());
  Json groups = Json::array();
  for (ParamGroup g : {ParamGroup::shared, ParamGroup::reid, ParamGroup::relight})
    if (model.has_group(g)) groups.push_back(group_name(g));
  a.header["groups"] = groups;
  for (const auto& p : m.parameters())
    if (model.has_group(p.group))
      a.tensors.push_back({p.name, static_cast<std::uint8_t>(p.group), p.var.value().template cast<float>()});
  for (const auto& b : m.buffers())
    if (model.has_group(b.group))
      a.tensors.push_back({b.name, static_cast<std::uint8_t>(b.group), b.tensor->template cast<float>()});
  return a;
}

template <typename S>
Archive checkpoint_archive(const TrainState<S>& state, const Json& extra = Json::object()) {
  Archive a = model_archive(*state.model);
  a.header["kind"] = "checkpoint";
  a.header["step"] = state.step;
  a.header["rng"] = state.rng_state();
  a.header["best_metric"] = std::isfinite(state.best_metric) ? Json(state.best_metric) : Json(nullptr);
  a.header["best_step"] = state.best_step;
  a.header["extra"] = extra;
  const auto& params = state.model->parameters();
  const auto& bufs = state.optimizer->momentum_buffers();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (bufs[i] && state.model->has_group(params[i].group))
      a.tensors.push_back({kMomentumPrefix + params[i].name, static_cast<std::uint8_t>(params[i].group),
                           bufs[i]->template cast<float>()});
  return a;
}

template <typename S>
void save_checkpoint(const TrainState<S>& state, const std::filesystem::path& path, const Json& extra = Json::object()) {
  write_archive(path, checkpoint_archive(state, extra));
}

namespace detail {

template <typename S>
void copy_tensor(const ArchiveTensor& src, Tensor<S>& dst) {
  if (src.value.shape != dst.shape)
    throw IncompatibleError("tensor " + src.name + " has shape " + shape_string(src.value.shape) + ", model expects " +
                            shape_string(dst.shape));
  dst.data = src.value.data.template cast<S>();
}

inline std::set<ParamGroup> header_groups(const Archive& a) {
  std::set<ParamGroup> out;
  if (!a.header.contains("groups")) return out;
  for (const auto& g : a.header["groups"]) {
    const std::string n = g.get<std::string>();
    for (ParamGroup pg : {ParamGroup::shared, ParamGroup::reid, ParamGroup::relight})
      if (n == group_name(pg)) out.insert(pg);
  }
  return out;
}

}  // namespace detail

/// Copies parameters and buffers of the listed groups into `model`. Groups
/// the archive does not carry are marked unavailable; a group the archive
/// declares but only partially holds is an integrity error.
template <typename S>
void load_model_state(CENet<S>& model, const Archive& a) {
  const std::set<ParamGroup> present = detail::header_groups(a);
  for (ParamGroup g : {ParamGroup::shared, ParamGroup::reid, ParamGroup::relight})
    model.set_group_available(g, present.count(g) > 0);
  for (auto& p : model.parameters()) {
    if (!present.count(p.group)) continue;
    const ArchiveTensor* t = a.find(p.name);
    if (!t) throw IntegrityError("archive is missing parameter " + p.name);
    detail::copy_tensor(*t, p.var.mutable_value());
  }
  for (auto& b : model.buffers()) {
    if (!present.count(b.group)) continue;
    const ArchiveTensor* t = a.find(b.name);
    if (!t) throw IntegrityError("archive is missing buffer " + b.name);
    detail::copy_tensor(*t, *b.tensor);
  }
}

template <typename S>
std::unique_ptr<CENet<S>> load_model(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  if (!a.header.contains("model")) throw IntegrityError(path.string() + ": archive has no model configuration");
  auto model = std::make_unique<CENet<S>>(model_from_json(a.header["model"]), 0);
  load_model_state(*model, a);
  model->set_training(false);
  return model;
}

/// Full training state restore: parameters, buffers, momentum, step, RNG.
template <typename S>
TrainState<S> load_checkpoint(const std::filesystem::path& path, const TrainConfig& tcfg) {
  Archive a = read_archive(path);
  if (a.header.value("kind", "") != "checkpoint")
    throw IncompatibleError(path.string() + ": not a training checkpoint");
  TrainState<S> state(model_from_json(a.header["model"]), tcfg, 0);
  load_model_state(*state.model, a);
  state.step = a.header.at("step").get<long>();
  state.set_rng_state(a.header.at("rng").get<std::string>());
  const Json& best = a.header["best_metric"];
  if (!best.is_null()) state.best_metric = best.get<double>();
  state.best_step = a.header.value("best_step", -1L);
  auto& params = state.model->parameters();
  auto& bufs = state.optimizer->momentum_buffers();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (const ArchiveTensor* t = a.find(kMomentumPrefix + params[i].name)) {
      Tensor<S> m(params[i].var.shape());
      detail::copy_tensor(*t, m);
      bufs[i] = std::move(m);
    }
  return state;
}

struct ImportReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;  // kept at their random initialisation
  std::vector<std::string> ignored;  // archive entries with no matching parameter
};

/// Name-matched weight import (e.g. pretrained backbones); shapes must agree.
template <typename S>
ImportReport import_weights(CENet<S>& model, const Archive& a) {
  ImportReport r;
  std::set<std::string> used;
  for (auto& p : model.parameters()) {
    if (const ArchiveTensor* t = a.find(p.name)) {
      detail::copy_tensor(*t, p.var.mutable_value());
      r.loaded.push_back(p.name);
      used.insert(p.name);
    } else {
      r.missing.push_back(p.name);
    }
  }
  for (auto& b : model.buffers())
    if (const ArchiveTensor* t = a.find(b.name)) {
      detail::copy_tensor(*t, *b.tensor);
      used.insert(b.name);
    }
  for (const auto& t : a.tensors)
    if (!used.count(t.name) && t.name.rfind(kMomentumPrefix, 0) != 0) r.ignored.push_back(t.name);
  return r;
}

}  // namespace cenet
