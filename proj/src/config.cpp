#include "cenet/config.hpp"

#include "cenet/errors.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cenet {

namespace {

// Encoding of field types ----------------------------------------------------

Json enc(double v) { return v; }
Json enc(long v) { return v; }
Json enc(int v) { return v; }
Json enc(unsigned long v) { return v; }
Json enc(bool v) { return v; }
Json enc(const std::string& v) { return v; }
Json enc(const std::array<double, 2>& v) { return Json::array({v[0], v[1]}); }
Json enc(Alternation a) { return alternation_name(a); }
Json enc(InputNorm n) { return input_norm_name(n); }
Json enc(const std::vector<Domain>& p) {
  Json j = Json::array();
  for (Domain d : p) j.push_back(domain_name(d));
  return j;
}
Json enc(const std::vector<std::string>& v) { return Json(v); }
Json enc(const std::optional<std::uint64_t>& s) { return s ? Json(*s) : Json(nullptr); }

[[noreturn]] void type_error(const std::string& key, const char* expected, const Json& got) {
  throw ConfigError("config key '" + key + "' expects " + expected + ", got " + got.dump());
}

void dec(const std::string& key, const Json& j, double& v) {
  if (!j.is_number()) type_error(key, "a number", j);
  v = j.get<double>();
}
template <typename I>
void dec_int(const std::string& key, const Json& j, I& v) {
  if (j.is_number_float()) {
    const double d = j.get<double>();
    if (d != static_cast<double>(static_cast<long long>(d))) type_error(key, "an integer", j);
    v = static_cast<I>(static_cast<long long>(d));
    return;
  }
  if (!j.is_number_integer()) type_error(key, "an integer", j);
  if constexpr (std::is_unsigned_v<I>) {
    if (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)
      type_error(key, "a non-negative integer", j);
  }
  v = j.get<I>();
}
void dec(const std::string& key, const Json& j, long& v) { dec_int(key, j, v); }
void dec(const std::string& key, const Json& j, int& v) { dec_int(key, j, v); }
void dec(const std::string& key, const Json& j, unsigned long& v) { dec_int(key, j, v); }
void dec(const std::string& key, const Json& j, bool& v) {
  if (!j.is_boolean()) type_error(key, "a boolean", j);
  v = j.get<bool>();
}
void dec(const std::string& key, const Json& j, std::string& v) {
  if (!j.is_string()) type_error(key, "a string", j);
  v = j.get<std::string>();
}
void dec(const std::string& key, const Json& j, std::array<double, 2>& v) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) type_error(key, "[lo, hi]", j);
  v = {j[0].get<double>(), j[1].get<double>()};
}
void dec(const std::string& key, const Json& j, Alternation& a) {
  if (!j.is_string()) type_error(key, "\"iteration\" or \"epoch\"", j);
  try {
    a = parse_alternation(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}
void dec(const std::string& key, const Json& j, InputNorm& n) {
  if (!j.is_string()) type_error(key, "\"fixed\" or \"instance\"", j);
  try {
    n = parse_input_norm(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}
void dec(const std::string& key, const Json& j, std::vector<Domain>& p) {
  if (!j.is_array()) type_error(key, "an array of domains", j);
  std::vector<Domain> out;
  for (const auto& e : j) {
    if (!e.is_string()) type_error(key, "an array of domains", j);
    try {
      out.push_back(parse_domain(e.get<std::string>()));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError("config key '" + key + "': " + ex.what());
    }
  }
  p = std::move(out);
}
void dec(const std::string& key, const Json& j, std::vector<std::string>& v) {
  if (!j.is_array()) type_error(key, "an array of strings", j);
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) type_error(key, "an array of strings", j);
    out.push_back(e.get<std::string>());
  }
  v = std::move(out);
}
void dec(const std::string& key, const Json& j, std::optional<std::uint64_t>& s) {
  if (j.is_null()) {
    s.reset();
    return;
  }
  std::uint64_t v = 0;
  dec_int(key, j, v);
  s = v;
}

/// Calls f(key, field) for every configurable leaf.
template <typename C, typename F>
void visit_fields(C& c, F&& f) {
  auto& m = c.model;
  f("model.image_height", m.image_height);
  f("model.image_width", m.image_width);
  f("model.patch_size", m.patch_size);
  f("model.embed_dim", m.embed_dim);
  f("model.heads", m.heads);
  f("model.shared_depth", m.shared_depth);
  f("model.reid_depth", m.reid_depth);
  f("model.decoder_depth", m.decoder_depth);
  f("model.mlp_ratio", m.mlp_ratio);
  f("model.relight_channels", m.relight_channels);
  f("model.num_classes.real", m.num_classes[0]);
  f("model.num_classes.synthetic", m.num_classes[1]);
  f("model.num_cameras.real", m.num_cameras[0]);
  f("model.num_cameras.synthetic", m.num_cameras[1]);
  f("model.camera_coefficient", m.camera_coefficient);
  f("model.input_norm", m.input_norm);
  f("model.share_encoder", m.share_encoder);

  auto& t = c.train;
  f("train.base_lr", t.base_lr);
  f("train.momentum", t.momentum);
  f("train.weight_decay", t.weight_decay);
  f("train.P", t.P);
  f("train.K", t.K);
  f("train.epochs", t.epochs);
  f("train.steps_per_epoch", t.steps_per_epoch);
  f("train.warmup_steps", t.warmup_steps);
  f("train.min_lr_ratio", t.min_lr_ratio);
  f("train.pattern", t.pattern);
  f("train.alternation", t.alternation);
  f("train.log_every", t.log_every);
  f("train.checkpoint_every", t.checkpoint_every);
  f("train.eval_every", t.eval_every);

  auto& l = c.loss;
  f("loss.lambda_relight", l.lambda_relight);
  f("loss.lambda_distill", l.lambda_distill);
  f("loss.lambda_rec", l.lambda_rec);
  f("loss.lambda_ref", l.lambda_ref);
  f("loss.lambda_col", l.lambda_col);
  f("loss.lambda_sa", l.lambda_sa);
  f("loss.id_scale", l.id_scale);
  f("loss.id_margin", l.id_margin);
  f("loss.triplet_margin", l.triplet_margin);
  f("loss.distill_temperature", l.distill_temperature);
  f("loss.distill_brightness_only", l.distill_brightness_only);

  auto& d = c.degradation;
  f("degradation.brightness", d.brightness);
  f("degradation.contrast", d.contrast);
  f("degradation.hue", d.hue);
  f("degradation.color", d.color);

  auto& a = c.augment;
  f("augment.height", a.height);
  f("augment.width", a.width);
  f("augment.flip_probability", a.flip_probability);
  f("augment.pad", a.pad);
  f("augment.erase.probability", a.erase.probability);
  f("augment.erase.min_area", a.erase.min_area);
  f("augment.erase.max_area", a.erase.max_area);
  f("augment.erase.min_aspect", a.erase.min_aspect);
  f("augment.erase.max_aspect", a.erase.max_aspect);
  f("augment.erase.max_attempts", a.erase.max_attempts);

  f("eval.exclude_same_camera", c.eval.exclude_same_camera);
  f("eval.batch_size", c.eval.batch_size);

  auto& io = c.io;
  f("io.src", io.src);
  f("io.out", io.out);
  f("io.ckpt", io.ckpt);
  f("io.query", io.query);
  f("io.gallery", io.gallery);
  f("io.input", io.input);
  f("io.real", io.real);
  f("io.syn", io.syn);
  f("io.init", io.init);
  f("io.resume", io.resume);
  f("io.camid", io.camid);
  f("io.domain", io.domain);
  f("io.formats", io.formats);

  f("ablation", c.ablation);

  f("seed", c.seed);
}

std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string p;
  while (std::getline(ss, p, '.')) parts.push_back(p);
  return parts;
}

void flatten(const Json& j, const std::string& prefix, std::vector<std::pair<std::string, Json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object())
      flatten(it.value(), key, out);
    else
      out.emplace_back(key, it.value());
  }
}

Json& slot(Json& doc, const std::string& key) {
  Json* node = &doc;
  for (const auto& part : split_key(key)) node = &(*node)[part];
  return *node;
}

Json parse_scalar(const std::string& key, const Json& like, const std::string& text) {
  auto bad = [&](const char* what) -> Json {
    throw ConfigError("flag --" + key + ": expected " + what + ", got '" + text + "'");
  };
  try {
    std::size_t used = 0;
    if (like.is_boolean()) {
      if (text == "true" || text == "1" || text == "on") return true;
      if (text == "false" || text == "0" || text == "off") return false;
      return bad("true or false");
    }
    if (like.is_number_integer() || like.is_null()) {
      const long long v = std::stoll(text, &used);
      if (used != text.size()) return bad("an integer");
      if (like.is_number_unsigned() || like.is_null()) {
        if (v < 0) return bad("a non-negative integer");
        return static_cast<std::uint64_t>(v);
      }
      return v;
    }
    if (like.is_number()) {
      const double v = std::stod(text, &used);
      if (used != text.size()) return bad("a number");
      return v;
    }
  } catch (const std::logic_error&) {
    return bad(like.is_boolean() ? "true or false" : "a number");
  }
  return text;
}

}  // namespace

void AppConfig::validate() const {
  model.validate();
  train.validate();
  loss.validate();
  degradation.validate();
  if (augment.height < 1 || augment.width < 1) throw ValidationError("augment: size must be positive");
  if (augment.height != model.image_height || augment.width != model.image_width)
    throw ValidationError("augment size " + std::to_string(augment.height) + "x" + std::to_string(augment.width) +
                          " must match the model input " + std::to_string(model.image_height) + "x" +
                          std::to_string(model.image_width));
  if (augment.pad < 0) throw ValidationError("augment.pad must be >= 0");
  const auto& e = augment.erase;
  if (!(e.min_area > 0 && e.min_area <= e.max_area && e.max_area < 1 && e.min_aspect > 0 &&
        e.min_aspect <= e.max_aspect))
    throw ValidationError("augment.erase: inconsistent area or aspect range");
  if (eval.batch_size < 1) throw ValidationError("eval.batch_size must be >= 1");
  if (!ablation.empty()) (void)parse_ablation(ablation);
  for (const auto& f : io.formats)
    if (f != "text" && f != "csv") throw ValidationError("io.formats: unknown format '" + f + "' (text|csv)");
}

AppConfig AppConfig::full() {
  AppConfig c;
  c.model = ModelConfig::full();
  return c;
}

AppConfig AppConfig::toy() {
  AppConfig c;
  c.model = ModelConfig::toy();
  c.augment.height = c.model.image_height;
  c.augment.width = c.model.image_width;
  c.augment.pad = 0;
  c.augment.erase.probability = 0;
  c.train.P = 8;
  c.train.K = 4;
  c.train.epochs = 1;
  c.train.steps_per_epoch = 300;
  c.train.warmup_steps = 20;
  c.train.base_lr = 0.05;
  return c;
}

AppConfig AppConfig::preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "toy") return toy();
  throw ConfigError("unknown preset '" + name + "' (toy|full)");
}

Json to_json(const AppConfig& c) {
  Json j = Json::object();
  visit_fields(const_cast<AppConfig&>(c), [&](const std::string& key, const auto& field) { slot(j, key) = enc(field); });
  return j;
}

void apply_json(AppConfig& c, const Json& j) {
  if (!j.is_object()) throw ConfigError("config document must be a JSON object");
  std::vector<std::pair<std::string, Json>> leaves;
  flatten(j, "", leaves);
  for (const auto& [key, value] : leaves) {
    bool found = false;
    visit_fields(c, [&](const std::string& k, auto& field) {
      if (k != key) return;
      dec(key, value, field);
      found = true;
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
}

Json model_to_json(const ModelConfig& m) {
  AppConfig c;
  c.model = m;
  return to_json(c)["model"];
}

ModelConfig model_from_json(const Json& j) {
  AppConfig c;
  apply_json(c, Json{{"model", j}});
  return c.model;
}

AppConfig load_config_file(const std::filesystem::path& path, AppConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  apply_json(base, j);
  return base;
}

std::vector<std::string> leaf_keys(const Json& j) {
  std::vector<std::pair<std::string, Json>> leaves;
  flatten(j, "", leaves);
  std::vector<std::string> keys;
  for (auto& [k, _] : leaves) keys.push_back(k);
  return keys;
}

const Json& get_dotted(const Json& doc, const std::string& key) {
  const Json* node = &doc;
  for (const auto& part : split_key(key)) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  return *node;
}

void set_dotted(Json& doc, const std::string& key, const std::string& value) {
  const Json& current = get_dotted(doc, key);
  Json parsed;
  if (current.is_array()) {
    parsed = Json::array();
    const Json like = current.empty() ? Json("") : current[0];
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) parsed.push_back(parse_scalar(key, like, item));
  } else {
    parsed = parse_scalar(key, current, value);
  }
  slot(doc, key) = parsed;
}

std::string leaf_to_flag(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "";
  if (v.is_array()) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + leaf_to_flag(v[i]);
    return s;
  }
  return v.dump();
}

std::filesystem::path work_directory() {
  if (const char* w = std::getenv("CENET_WORKDIR"); w && *w) return std::filesystem::path(w);
  return std::filesystem::current_path();
}

std::filesystem::path resolve_path(const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  return (work_directory() / path).lexically_normal();
}

}  // namespace cenet
